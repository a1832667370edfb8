use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use causalcf::env::TaskKind;
use causalcf::harness::{self, EvalSetup, RunMeta};
use causalcf::pipeline::{self, AgentPolicy, RunConfig, Trainer, Variant};
use causalcf::scm::ProtocolId;
use causalcf::{Error, Result};

#[derive(Parser)]
#[command(name = "causalcf", version, about = "Counterfactual causal representations for block manipulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant.
    Train {
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long)]
        variant: Option<Variant>,
        /// TOML overrides on top of the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// `desk` or `paper`.
        #[arg(long, default_value = "desk")]
        preset: String,
        /// Continue from a checkpoint directory instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on evaluation protocols.
    Eval {
        /// Checkpoint directory, or a run directory (latest checkpoint).
        #[arg(long)]
        checkpoint: PathBuf,
        /// `all` or a comma-separated list such as `P0,P5`.
        #[arg(long, default_value = "all")]
        protocols: String,
        #[arg(long, default_value_t = harness::DEFAULT_EPISODES_PER_PROTOCOL)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train a fresh agent with a representation from another run.
    Transfer {
        /// Representation file or run directory.
        #[arg(long)]
        rep: PathBuf,
        #[arg(long, default_value = "picking")]
        task: TaskKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot training curves and protocol scores of several runs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(preset: &str, path: Option<&Path>) -> Result<RunConfig> {
    let text = path.map(std::fs::read_to_string).transpose()?.unwrap_or_default();
    let base = match preset {
        "desk" => RunConfig::default(),
        "paper" => RunConfig::paper(TaskKind::Pushing, Variant::Intervene),
        other => return Err(Error::Configuration(format!("unknown preset {other:?}"))),
    };
    RunConfig::from_toml_over(base, &text)
}

fn checkpoint_dir(path: &Path) -> Result<PathBuf> {
    if path.join("manifest.json").exists() {
        return Ok(path.to_path_buf());
    }
    let dir = path.join("checkpoints");
    std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| Some((e.file_name().to_str()?.strip_prefix("step_")?.parse::<u64>().ok()?, e.path())))
        .max_by_key(|(s, _)| *s)
        .map(|(_, p)| p)
        .ok_or_else(|| Error::Configuration(format!("no checkpoint under {}", path.display())))
}

fn print_summary(s: &pipeline::RunSummary) -> Result<()> {
    println!("{}", serde_json::to_string(s)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { task, variant, config, seed, out, preset, resume } => {
            if let Some(ckpt) = resume {
                let mut t = Trainer::resume(&checkpoint_dir(&ckpt)?, &out, None)?;
                return print_summary(&t.run()?);
            }
            let mut cfg = load_config(&preset, config.as_deref())?;
            cfg.task = task.unwrap_or(cfg.task);
            cfg.variant = variant.unwrap_or(cfg.variant);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.validate()?;
            print_summary(&pipeline::run(&cfg, &out)?.1)
        }
        Command::Eval { checkpoint, protocols, episodes, seed, report } => {
            let dir = checkpoint_dir(&checkpoint)?;
            let (cfg, agent, rep, step) = Trainer::load_policy(&dir)?;
            let ids: Vec<ProtocolId> = if protocols == "all" {
                ProtocolId::all().collect()
            } else {
                protocols.split(',').map(|p| p.trim().parse()).collect::<Result<_>>()?
            };
            let meta =
                RunMeta { task: cfg.task, variant: Some(cfg.variant.to_string()), seed, checkpoint_step: Some(step) };
            let mut policy = AgentPolicy { agent: &agent, rep: rep.as_ref() };
            let r = harness::run_protocols(&mut policy, &EvalSetup::new(cfg.task_spec()), &ids, episodes, seed, meta)?;
            harness::emit_report(&r, &report)?;
            for p in &r.protocols {
                println!("{} {:.4} {:.4}", p.id, p.mean, p.std);
            }
            println!("mean {:.4}", r.mean_score());
            Ok(())
        }
        Command::Transfer { rep, task, config, seed, out } => {
            let mut cfg = load_config("desk", config.as_deref())?;
            cfg.task = task;
            cfg.seed = seed.unwrap_or(cfg.seed);
            print_summary(&pipeline::transfer_rep(&rep, &cfg, &out)?.1)
        }
        Command::Report { runs, out } => {
            let mut curves = Vec::new();
            let mut reports = Vec::new();
            for dir in &runs {
                let label = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into());
                let curve = harness::read_train_log(dir)?;
                println!("{label} episodes {} final {:?}", curve.episode_fs.len(), curve.last_smoothed());
                curves.push((label.clone(), curve));
                let report = dir.join("report.json");
                if report.exists() {
                    reports.push((label, harness::EvalReport::load(&report)?));
                }
            }
            harness::emit_plots(&curves, &reports, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error: usage: {line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
