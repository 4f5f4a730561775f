use rehearsal_core::data::{build_splits, SplitConfig};
use rehearsal_core::ClassId;

#[test]
fn each_new_class_lands_in_val_at_the_expected_rate() {
    let seen: Vec<ClassId> = (0..400).collect();
    let new: Vec<ClassId> = (400..620).collect();
    let trials = 1000;
    let cfg = SplitConfig {
        n_val: 60,
        n_test: 160,
        seeds: (0..trials).collect(),
    };
    let splits = build_splits(&seen, &new, &cfg).unwrap();
    let mut counts = vec![0usize; new.len()];
    for s in &splits {
        for c in &s.val_classes {
            counts[(c - 400) as usize] += 1;
        }
    }
    let p = 60.0 / 220.0;
    let n = trials as f64;
    let sigma = (n * p * (1.0 - p)).sqrt();
    // 220 simultaneous ±3σ checks expect about 0.6 exceedances under a fair
    // shuffle, so the band is judged jointly: at most 3 outside 3σ (null
    // probability of 4 or more is about 0.3%), none outside 4σ, and a
    // chi-square statistic near its 219 degrees of freedom.
    let z: Vec<f64> = counts.iter().map(|&k| (k as f64 - n * p) / sigma).collect();
    let outside3: Vec<(usize, usize)> = z
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 3.0)
        .map(|(i, _)| (i, counts[i]))
        .collect();
    assert!(
        outside3.len() <= 3,
        "expected {:.1} ± {:.1}, outliers {outside3:?}",
        n * p,
        3.0 * sigma
    );
    assert!(z.iter().all(|v| v.abs() <= 4.0), "a class is beyond 4σ: {counts:?}");
    let chi2: f64 = z.iter().map(|v| v * v).sum();
    let df = (new.len() - 1) as f64;
    assert!(
        (chi2 - df).abs() < 3.3 * (2.0 * df).sqrt(),
        "chi-square {chi2:.1} with {df} df"
    );
    let total: usize = counts.iter().sum();
    assert_eq!(total, 60 * trials as usize);
}
