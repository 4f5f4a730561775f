/// Reserved token placed between concatenated descriptions. The tokenizer
/// never produces it because brackets are split off as punctuation.
pub const SEPARATOR_TOKEN: &str = "[SEP]";

/// Lowercased whitespace tokenization with ASCII punctuation split into
/// single-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_ascii_punctuation() {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(ch.to_string());
            } else {
                word.extend(ch.to_lowercase());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(
            tokenize("Clean and jerk: a two-movement lift."),
            vec!["clean", "and", "jerk", ":", "a", "two", "-", "movement", "lift", "."]
        );
    }

    #[test]
    fn never_emits_separator() {
        assert!(!tokenize("[SEP] x").iter().any(|t| t == SEPARATOR_TOKEN));
    }
}
