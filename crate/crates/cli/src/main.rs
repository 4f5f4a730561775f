mod artifacts;
mod config;
mod data_cmds;
mod ed_cmds;
mod report;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rehearsal_core::baselines::BaselineKind;
use rehearsal_core::ClassId;

use artifacts::{write_json, Layout, MissingDependency, RunSummary};
use config::{ConfigError, RunConfig};

/// Zero-shot action recognition with elaborative descriptions.
#[derive(Debug, Parser)]
#[command(name = "rehearsal", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config file. Relative paths inside it resolve against its directory.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Seed for training, baselines and few-shot probes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Which split file to use (train, eval, baseline, fewshot).
    #[arg(long, global = true)]
    split: Option<usize>,
    /// Artifact directory; overrides `output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Accept artifacts produced under a different config hash.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic data for smoke runs.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Build or verify seen/validation/test class splits.
    #[command(subcommand)]
    Split(SplitCmd),
    /// Elaborative description workflow.
    #[command(subcommand)]
    Ed(EdCmd),
    /// Train the joint model on the seen classes of one split.
    Train,
    /// Zero-shot evaluation of a checkpoint on the test classes.
    Eval {
        /// Defaults to `<output_dir>/split_<n>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate a comparison method on spatio-temporal features.
    Baseline {
        #[arg(long)]
        method: BaselineKind,
    },
    /// Supervised linear probe on the test classes with n labeled videos each.
    Fewshot,
    /// Aggregate per-split artifacts into mean ± std tables.
    Report {
        /// eval.json, baseline_*.json or fewshot.json files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Defaults to `<output_dir>/report.json` (plus a .txt table).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective config as TOML.
    ShowConfig,
}

#[derive(Debug, Subcommand)]
enum SynthCmd {
    /// Features, descriptions, splits and a config for a toy world.
    World {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "default")]
        preset: data_cmds::Preset,
        #[arg(long, default_value_t = 0)]
        world_seed: u64,
        #[arg(long, default_value_t = 1)]
        n_val: usize,
        #[arg(long, default_value_t = 4)]
        n_test: usize,
    },
    /// A class catalog with renamed and genuinely new classes.
    Catalog {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        old: usize,
        #[arg(long, default_value_t = 30)]
        renamed: usize,
        #[arg(long, default_value_t = 220)]
        new: usize,
    },
}

#[derive(Debug, Subcommand)]
enum SplitCmd {
    Build {
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Defaults to `data.splits_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Verify {
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Also check the splits against this catalog.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum EdCmd {
    /// Collect candidate sentences for every class in the class list.
    Crawl {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        classes: Option<PathBuf>,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        token: Option<String>,
    },
    /// Per-class annotation status.
    Status {
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Record an annotation directly or through a running service.
    Submit {
        #[arg(long)]
        store: Option<PathBuf>,
        /// Base URL of a running service.
        #[arg(long)]
        server: Option<String>,
        #[arg(long)]
        class: ClassId,
        /// Candidate indices, e.g. `0,2`.
        #[arg(long, value_delimiter = ',')]
        select: Vec<usize>,
        #[arg(long)]
        text: Option<String>,
        #[arg(long, default_value = "cli")]
        annotator: String,
        /// Save as a draft instead of marking the class done.
        #[arg(long)]
        pending: bool,
    },
    /// Write the description file.
    Export {
        #[arg(long)]
        store: Option<PathBuf>,
        /// Defaults to `data.class_descriptions`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip pending classes instead of failing.
        #[arg(long)]
        partial: bool,
    },
}

/// State shared by all subcommands of one invocation.
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub layout: Layout,
    pub force: bool,
    pub artifacts: Vec<PathBuf>,
    pub metrics: serde_json::Value,
}

fn command_name(c: &Command) -> String {
    match c {
        Command::Synth(SynthCmd::World { .. }) => "synth world",
        Command::Synth(SynthCmd::Catalog { .. }) => "synth catalog",
        Command::Split(SplitCmd::Build { .. }) => "split build",
        Command::Split(SplitCmd::Verify { .. }) => "split verify",
        Command::Ed(EdCmd::Crawl { .. }) => "ed crawl",
        Command::Ed(EdCmd::Serve { .. }) => "ed serve",
        Command::Ed(EdCmd::Status { .. }) => "ed status",
        Command::Ed(EdCmd::Submit { .. }) => "ed submit",
        Command::Ed(EdCmd::Export { .. }) => "ed export",
        Command::Train => "train",
        Command::Eval { .. } => "eval",
        Command::Baseline { .. } => "baseline",
        Command::Fewshot => "fewshot",
        Command::Report { .. } => "report",
        Command::ShowConfig => "show-config",
    }
    .to_string()
}

fn dispatch(ctx: &mut Context, command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth(SynthCmd::World {
            out,
            preset,
            world_seed,
            n_val,
            n_test,
        }) => data_cmds::synth_world(
            ctx,
            &data_cmds::WorldArgs {
                out,
                preset,
                seed: world_seed,
                n_val,
                n_test,
            },
        ),
        Command::Synth(SynthCmd::Catalog { out, old, renamed, new }) => {
            data_cmds::synth_catalog(ctx, &out, old, renamed, new)
        }
        Command::Split(SplitCmd::Build { catalog, out }) => data_cmds::split_build(ctx, catalog, out),
        Command::Split(SplitCmd::Verify { dir, catalog }) => data_cmds::split_verify(ctx, dir, catalog),
        Command::Ed(EdCmd::Crawl { store, classes }) => ed_cmds::crawl(ctx, store, classes),
        Command::Ed(EdCmd::Serve {
            store,
            addr,
            static_dir,
            token,
        }) => ed_cmds::serve(
            ctx,
            ed_cmds::ServeArgs {
                store,
                addr,
                static_dir,
                token,
            },
        ),
        Command::Ed(EdCmd::Status { store }) => ed_cmds::status(ctx, store),
        Command::Ed(EdCmd::Submit {
            store,
            server,
            class,
            select,
            text,
            annotator,
            pending,
        }) => ed_cmds::submit(
            ctx,
            ed_cmds::SubmitArgs {
                store,
                server,
                class,
                select,
                text,
                annotator,
                pending,
            },
        ),
        Command::Ed(EdCmd::Export { store, out, partial }) => ed_cmds::export(ctx, store, out, partial),
        Command::Train => stages::train(ctx),
        Command::Eval { checkpoint } => stages::eval(ctx, checkpoint),
        Command::Baseline { method } => stages::baseline(ctx, method),
        Command::Fewshot => stages::fewshot(ctx),
        Command::Report { inputs, out } => report::report(ctx, &inputs, out),
        Command::ShowConfig => {
            print!("{}", ctx.cfg.to_toml());
            println!("# config hash {}", ctx.hash);
            Ok(())
        }
    }
}

/// Exit codes: 1 runtime failure, 2 usage or config error, 3 missing input.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<MissingDependency>()) {
        3
    } else if err.chain().any(|e| e.is::<ConfigError>()) {
        2
    } else {
        1
    }
}

fn load_config(g: &GlobalArgs) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::load(g.config.as_deref(), std::env::vars(), &g.sets)?;
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if let Some(split) = g.split {
        cfg.data.split = split;
    }
    if let Some(dir) = &g.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let cfg = match load_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let name = command_name(&cli.command);
    let writes_summary = !matches!(cli.command, Command::ShowConfig);
    let mut ctx = Context {
        hash: cfg.hash(),
        layout: Layout {
            root: cfg.output_dir.clone(),
        },
        cfg,
        force: cli.global.force,
        artifacts: Vec::new(),
        metrics: serde_json::Value::Null,
    };
    let started_at = chrono::Utc::now().to_rfc3339();
    let clock = Instant::now();
    let result = dispatch(&mut ctx, cli.command);
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(e)
        }
    };
    if writes_summary {
        let summary = RunSummary {
            command: name,
            args: std::env::args().skip(1).collect(),
            config_hash: ctx.hash.clone(),
            status: if code == 0 { "ok".into() } else { "error".into() },
            error: result.as_ref().err().map(|e| format!("{e:#}")),
            started_at,
            duration_secs: clock.elapsed().as_secs_f64(),
            artifacts: ctx.artifacts.clone(),
            metrics: ctx.metrics.clone(),
        };
        if let Err(e) = write_json(&ctx.layout.summary(), &summary) {
            eprintln!("warning: could not write run summary: {e:#}");
        }
    }
    ExitCode::from(code)
}
