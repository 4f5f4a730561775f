//! `ed` subcommands: crawl, serve, status, submit, export.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context as _};
use rehearsal_core::ed::{
    crawl_candidates, parse_class_list, AnnotationRequest, AnnotationStatus, CrawlError, DictionarySource, EdStore,
    EncyclopediaSource, FixtureSources, STORE_ENV,
};
use rehearsal_core::text::store as ed_file;
use rehearsal_core::ClassId;

use crate::artifacts::require;
use crate::Context;

/// Environment variable holding the service token.
pub const TOKEN_ENV: &str = "REHEARSAL_ED_TOKEN";

/// Flag, then environment, then config file.
pub fn store_path(ctx: &Context, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(STORE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| ctx.cfg.ed.store.clone())
}

fn sources(ctx: &Context) -> anyhow::Result<(Box<dyn EncyclopediaSource>, Box<dyn DictionarySource>)> {
    if ctx.cfg.ed.online {
        #[cfg(feature = "online")]
        {
            use rehearsal_core::ed::sources::{DictionaryClient, EncyclopediaClient};
            return Ok((
                Box::new(EncyclopediaClient::new("https://en.wikipedia.org")?),
                Box::new(DictionaryClient::new("https://api.dictionaryapi.dev")?),
            ));
        }
        #[cfg(not(feature = "online"))]
        bail!("ed.online is set but this binary was built without the `online` feature");
    }
    let Some(path) = &ctx.cfg.ed.fixtures else {
        bail!("set ed.fixtures to a recorded source file, or ed.online = true");
    };
    require(path, "source fixtures", "a recording step")?;
    let fx = FixtureSources::load(path)?;
    Ok((Box::new(fx.clone()), Box::new(fx)))
}

pub fn crawl(ctx: &mut Context, store: Option<PathBuf>, classes: Option<PathBuf>) -> anyhow::Result<()> {
    let list_path = classes.unwrap_or_else(|| ctx.cfg.ed.classes.clone());
    require(&list_path, "class list", "hand-written id<TAB>name file")?;
    let classes = parse_class_list(&std::fs::read_to_string(&list_path)?)?;
    let (enc, dict) = sources(ctx)?;
    let store_path = store_path(ctx, store);
    let mut store = EdStore::open(&store_path).with_context(|| format!("opening {}", store_path.display()))?;
    let mut failed: Vec<String> = Vec::new();
    let mut warnings = 0usize;
    for (id, name) in &classes {
        let mut attempt = 0;
        let set = loop {
            match crawl_candidates(*id, name, enc.as_ref(), dict.as_ref()) {
                Err(e) if e.is_retryable() && attempt < ctx.cfg.ed.retries => {
                    attempt += 1;
                    let wait = Duration::from_millis(200 << attempt.min(6));
                    log::warn!("{name}: {e}; retry {attempt} in {wait:?}");
                    std::thread::sleep(wait);
                }
                other => break other,
            }
        };
        match set {
            Ok(set) => {
                if let Some(w) = &set.warning {
                    warnings += 1;
                    log::warn!("{name}: {w}");
                }
                let url = ctx
                    .cfg
                    .ed
                    .exemplar_url
                    .as_ref()
                    .map(|t| t.replace("{name}", &name.replace(' ', "%20")));
                store.put_candidates(&set, url.as_deref())?;
                println!("{id}\t{name}\t{} candidates", set.candidates.len());
            }
            Err(e @ CrawlError::Unreachable { .. }) => failed.push(format!("{name}: {e}")),
            Err(e) => return Err(e.into()),
        }
    }
    ctx.metrics = serde_json::json!({"classes": classes.len(), "warnings": warnings, "failed": failed.len()});
    ctx.artifacts.push(store_path);
    if !failed.is_empty() {
        bail!(
            "{} classes could not be crawled (retryable):\n  {}",
            failed.len(),
            failed.join("\n  ")
        );
    }
    Ok(())
}

pub struct ServeArgs {
    pub store: Option<PathBuf>,
    pub addr: Option<String>,
    pub static_dir: Option<PathBuf>,
    pub token: Option<String>,
}

pub fn serve(ctx: &mut Context, args: ServeArgs) -> anyhow::Result<()> {
    let path = store_path(ctx, args.store);
    let addr = args.addr.unwrap_or_else(|| ctx.cfg.ed.addr.clone());
    let cfg = rehearsal_server::ServerConfig {
        static_dir: args.static_dir.or_else(|| ctx.cfg.ed.static_dir.clone()),
        token: args.token.or_else(|| std::env::var(TOKEN_ENV).ok()),
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("serving {} on http://{}", path.display(), listener.local_addr()?);
        rehearsal_server::serve(listener, &path, &cfg, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        anyhow::Ok(())
    })
}

pub fn status(ctx: &mut Context, store: Option<PathBuf>) -> anyhow::Result<()> {
    let path = store_path(ctx, store);
    require(&path, "annotation store", "ed crawl")?;
    let store = EdStore::open(&path)?;
    let classes = store.list_classes(None)?;
    let done = classes.iter().filter(|c| c.status == AnnotationStatus::Done).count();
    for c in &classes {
        println!("{}\t{}\t{}\tv{}", c.class_id, c.status, c.name, c.version);
    }
    println!("{done}/{} done", classes.len());
    ctx.metrics = serde_json::json!({"done": done, "total": classes.len()});
    Ok(())
}

pub struct SubmitArgs {
    pub store: Option<PathBuf>,
    pub server: Option<String>,
    pub class: ClassId,
    pub select: Vec<usize>,
    pub text: Option<String>,
    pub annotator: String,
    pub pending: bool,
}

pub fn submit(ctx: &mut Context, args: SubmitArgs) -> anyhow::Result<()> {
    if args.select.is_empty() == args.text.is_none() {
        bail!("give exactly one of --select or --text");
    }
    let req = AnnotationRequest {
        annotator: args.annotator,
        status: if args.pending {
            AnnotationStatus::Pending
        } else {
            AnnotationStatus::Done
        },
        ..match &args.text {
            Some(t) => AnnotationRequest::free_text(t),
            None => AnnotationRequest::select(&args.select),
        }
    };
    let resp = match args.server {
        Some(url) => {
            let client = rehearsal_client::Client::new(url, std::env::var(TOKEN_ENV).ok());
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
            rt.block_on(client.annotate(args.class, &req))?
        }
        None => {
            let path = store_path(ctx, args.store);
            require(&path, "annotation store", "ed crawl")?;
            EdStore::open(&path)?.submit(args.class, &req)?
        }
    };
    if let Some(w) = &resp.warning {
        eprintln!("warning: {w}");
    }
    println!("class {} version {}: {}", resp.class_id, resp.version, resp.body);
    Ok(())
}

pub fn export(ctx: &mut Context, store: Option<PathBuf>, out: Option<PathBuf>, partial: bool) -> anyhow::Result<()> {
    let path = store_path(ctx, store);
    require(&path, "annotation store", "ed crawl")?;
    let eds = EdStore::open(&path)?.export(partial)?;
    let out = out.unwrap_or_else(|| ctx.cfg.data.class_descriptions.clone());
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    ed_file::write(&out, &eds)?;
    println!("exported {} descriptions to {}", eds.len(), out.display());
    ctx.artifacts.push(out);
    Ok(())
}
