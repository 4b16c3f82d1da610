//! `sugd`: generate a corpus, memorize it, unlearn the forget split and score the result.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use sugd_core::pipeline::{
    self, gen_from_spec, load_corpus_spec, parse_sweep_values, read_report, render_report,
    run_pipeline, run_sweep, stage_eval, stage_memorize, stage_unlearn, Layout, Manifest,
    PipelineConfig, SweepParam, MANIFEST_FILE, TABLE_FILE,
};
use sugd_core::unlearn::Method;

#[derive(Parser)]
#[command(
    name = "sugd",
    version,
    about = "Sequential unlearning with gradient difference on a toy language model"
)]
struct Cli {
    /// Suppress progress and warning output.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Escalate stale-artifact warnings to errors.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate retain/forget/holdout/general JSONL files.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Standalone corpus spec (TOML); its seed is used unless --seed is given.
        #[arg(long, conflicts_with = "config")]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a fresh model on all subsets until it reproduces them.
    Memorize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unlearn the forget split starting from a memorized checkpoint.
    Unlearn {
        #[command(flatten)]
        common: Common,
        /// sugd, alt_ga_gd, ga_only, grad_diff_no_chunk or gold_retrain.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint and write a JSON report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// knowledge.json written by `memorize`.
        #[arg(long)]
        baseline_knowledge: Option<PathBuf>,
        /// Report file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unlearn once per value from the same memorized checkpoint.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// chunk_size or epochs_per_chunk.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated, e.g. `8,16,32,no-chunk`.
        #[arg(long)]
        values: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a report, a sweep table, or everything under a run directory.
    Report {
        /// report.json, sweep.csv, or a run directory.
        path: PathBuf,
    },
    /// Run gen, memorize, unlearn and eval in sequence.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output root; overrides `out_dir` in the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Ctx {
    quiet: bool,
}

impl Ctx {
    fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn warnings(&self, warnings: &[String]) {
        for w in warnings {
            self.info(format!("warning: {w}"));
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.strict |= common.strict;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx { quiet: cli.quiet };
    match dispatch(&ctx, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(ctx: &Ctx, command: Command) -> Result<()> {
    match command {
        Command::Gen { common, spec, out } => {
            let manifest = match spec {
                Some(path) => {
                    let mut spec = load_corpus_spec(&path)?;
                    if let Some(seed) = common.seed {
                        spec.seed = seed;
                    }
                    let out = out.unwrap_or_else(|| PathBuf::from("data"));
                    gen_from_spec(&spec, &out)?;
                    out
                }
                None => {
                    let cfg = load_config(&common)?;
                    let out = out.unwrap_or_else(|| Layout::new(&cfg.out_dir).data());
                    pipeline::stage_gen(&cfg, &out)?;
                    out
                }
            };
            ctx.info(format!("corpus written to {}", manifest.display()));
        }
        Command::Memorize { common, data, out } => {
            let cfg = load_config(&common)?;
            let l = Layout::new(&cfg.out_dir);
            let data = data.unwrap_or_else(|| l.data());
            let out = out.unwrap_or_else(|| l.memorized());
            ctx.info("memorizing...");
            let r = stage_memorize(&cfg, &data, &out)?;
            ctx.warnings(&r.warnings);
            let em: Vec<String> = r
                .value
                .fit
                .em
                .iter()
                .map(|(s, v)| format!("{} {v:.3}", s.file_stem()))
                .collect();
            ctx.info(format!(
                "memorized in {} epochs ({}); knowledge {:.3}; checkpoint in {}",
                r.value.fit.epochs,
                em.join(", "),
                r.value.knowledge_score,
                out.display()
            ));
        }
        Command::Unlearn {
            common,
            method,
            model,
            data,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = method {
                cfg.unlearn.method = m;
            }
            let l = Layout::new(&cfg.out_dir);
            let model = model.unwrap_or_else(|| l.memorized());
            let data = data.unwrap_or_else(|| l.data());
            let out = out.unwrap_or_else(|| l.unlearned());
            ctx.info(format!("unlearning with {:?}...", cfg.unlearn.method));
            let r = stage_unlearn(&cfg, &model, &data, &out)?;
            ctx.warnings(&r.warnings);
            ctx.info(format!("checkpoint in {}", out.display()));
        }
        Command::Eval {
            common,
            model,
            data,
            baseline_knowledge,
            out,
        } => {
            let cfg = load_config(&common)?;
            let l = Layout::new(&cfg.out_dir);
            let model = model.unwrap_or_else(|| l.unlearned());
            let data = data.unwrap_or_else(|| l.data());
            let baseline = baseline_knowledge.unwrap_or_else(|| l.baseline());
            let out = out.unwrap_or_else(|| l.report());
            let r = stage_eval(&cfg, &model, &data, &baseline, &out)?;
            ctx.warnings(&r.warnings);
            print!("{}", render_report(&r.value));
        }
        Command::Sweep {
            common,
            param,
            values,
            model,
            data,
            out,
        } => {
            let cfg = load_config(&common)?;
            let values = parse_sweep_values(&values)?;
            if values.is_empty() {
                bail!("no sweep values given");
            }
            let l = Layout::new(&cfg.out_dir);
            let model = model.unwrap_or_else(|| l.memorized());
            let data = data.unwrap_or_else(|| l.data());
            let out = out.unwrap_or_else(|| l.sweep());
            // Fail fast on missing upstream artifacts instead of once per point.
            Manifest::require(&model, "memorize")?;
            let rows = run_sweep(&cfg, param, &values, &model, &data, &out)?;
            print!("{}", fs::read_to_string(out.join(TABLE_FILE))?);
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            if failed == rows.len() {
                bail!("every sweep point failed");
            }
            if failed > 0 {
                ctx.info(format!(
                    "warning: {failed} of {} sweep points failed",
                    rows.len()
                ));
            }
        }
        Command::Report { path } => report(&path)?,
        Command::Run { common, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            ctx.info(format!(
                "running the full pipeline into {}",
                cfg.out_dir.display()
            ));
            let r = run_pipeline(&cfg)?;
            ctx.warnings(&r.warnings);
            print!("{}", render_report(&r.value));
        }
    }
    Ok(())
}

fn report(path: &Path) -> Result<()> {
    if path.is_dir() {
        let mut found = false;
        let l = Layout::new(path);
        for candidate in [path.join(pipeline::REPORT_FILE), l.report()] {
            if candidate.exists() {
                println!("{}", candidate.display());
                print!("{}", render_report(&read_report(&candidate)?));
                found = true;
            }
        }
        for candidate in [path.join(TABLE_FILE), l.sweep().join(TABLE_FILE)] {
            if candidate.exists() {
                println!("{}", candidate.display());
                print!("{}", fs::read_to_string(&candidate)?);
                found = true;
            }
        }
        if !found {
            bail!(
                "no {} or {TABLE_FILE} under {}",
                pipeline::REPORT_FILE,
                path.display()
            );
        }
        return Ok(());
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => print!("{}", fs::read_to_string(path)?),
        _ if path.file_name().is_some_and(|n| n == MANIFEST_FILE) => {
            print!("{}", fs::read_to_string(path)?)
        }
        _ => print!("{}", render_report(&read_report(path)?)),
    }
    Ok(())
}
