//! Config-driven experiment runner behind the `integrator-rnn` binary.
//!
//! Verbs: `train`, `analyze`, `reproduce` and `list`. Every output file
//! carries the config hash and seed: JSON files as fields, CSV files as a
//! leading `#` comment line.

pub mod analyze;
pub mod catalog;
pub mod checkpoint;
pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::error::Result;
use crate::model::NetworkParams;
use crate::training::{train, TrainRecord};

use analyze::{run_analyses, Subject};
use checkpoint::{Checkpoint, TrainingMeta};
use config::{AnalysisConfig, AnalysisKind, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "integrator-rnn", version, about = "Train and analyse recurrent networks performing multiplexed leaky integration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network from a TOML or JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's `output`, else runs/<hash>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run diagnostics on a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated analyses (default: all).
        #[arg(long, value_delimiter = ',')]
        analyses: Vec<String>,
        /// Config whose `[analysis]` section sets batch, qmax and tolerance.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed of the test sequences.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Regenerate the data of one catalogued experiment.
    Reproduce {
        id: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Paper-scale sizes (n = 1000) instead of desk scale.
        #[arg(long)]
        full: bool,
    },
    /// List catalogued experiments.
    List,
}

/// Config hash and seed attached to every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// CSV text with provenance comment, header row and LF line endings.
pub fn csv(prov: &Provenance, header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = format!("# config_hash={} seed={}\n{header}\n", prov.config_hash, prov.seed);
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

/// Trains the configured network.
pub fn train_config(cfg: &ExperimentConfig) -> Result<(NetworkParams, TrainRecord)> {
    cfg.validate()?;
    let p = cfg.initial_network()?;
    train(p, &cfg.task, &cfg.loss_kind()?, cfg.training.optimizer, &cfg.train_options(), &cfg.constraints()?)
}

pub fn checkpoint_for(cfg: &ExperimentConfig, p: &NetworkParams, rec: &TrainRecord) -> Result<Checkpoint> {
    Ok(Checkpoint::new(
        p,
        &cfg.task,
        Some(TrainingMeta {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            steps: rec.steps(),
            final_loss: rec.final_loss(),
            stop: rec.stop.clone(),
            dale: cfg.dale_mask()?,
        }),
    ))
}

/// `train`: checkpoint, record, loss trace, config snapshot and any
/// configured analyses.
pub fn cmd_train(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<PathBuf> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let hash = cfg.hash();
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&hash[..12]));
    std::fs::create_dir_all(&out)?;
    let prov = Provenance {
        config_hash: hash.clone(),
        seed: cfg.seed,
    };
    let (p, rec) = train_config(&cfg)?;
    let ck = checkpoint_for(&cfg, &p, &rec)?;
    ck.save(&out.join("checkpoint.json"))?;
    write_json(
        &out.join("record.json"),
        &json!({"config_hash": hash, "seed": cfg.seed, "failed": rec.diverged(), "record": rec}),
    )?;
    let rows = rec.losses.iter().zip(&rec.grad_norms).enumerate().map(|(k, (l, g))| format!("{k},{l:.17e},{g:.17e}"));
    write_atomic(&out.join("losses.csv"), csv(&prov, "step,loss,grad_norm", rows).as_bytes())?;
    let snapshot = toml::to_string(&cfg).map_err(|e| crate::error::invalid("config", e.to_string()))?;
    write_atomic(&out.join("config.toml"), format!("# config_hash={hash} seed={}\n{snapshot}", cfg.seed).as_bytes())?;
    if !cfg.analysis.analyses.is_empty() && !rec.diverged() {
        let sub = Subject {
            params: &p,
            task: &cfg.task,
            dale: ck.training.as_ref().and_then(|t| t.dale.as_ref()),
        };
        run_analyses(&sub, &cfg.analysis.analyses, &cfg.analysis, &prov, &out.join("analysis"))?;
    }
    Ok(out)
}

/// `analyze`: one report per analysis in `out`.
pub fn cmd_analyze(checkpoint: &Path, out: &Path, analyses: &[String], config: Option<&Path>, seed: Option<u64>) -> Result<Vec<analyze::AnalysisReport>> {
    let ck = Checkpoint::load(checkpoint)?;
    let p = ck.params()?;
    let acfg = match config {
        Some(c) => ExperimentConfig::load(c)?.analysis,
        None => AnalysisConfig::default(),
    };
    let kinds: Vec<AnalysisKind> = if analyses.is_empty() {
        AnalysisKind::ALL.to_vec()
    } else {
        analyses.iter().map(|a| AnalysisKind::parse(a.trim())).collect::<Result<_>>()?
    };
    let meta = ck.training.as_ref();
    let prov = Provenance {
        config_hash: meta.map_or_else(|| ck.content_hash.clone(), |m| m.config_hash.clone()),
        seed: seed.or(meta.map(|m| m.seed)).unwrap_or(0),
    };
    let sub = Subject {
        params: &p,
        task: &ck.task,
        dale: meta.and_then(|m| m.dale.as_ref()),
    };
    run_analyses(&sub, &kinds, &acfg, &prov, out)
}

/// Entry point of the binary.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, seed } => {
            let dir = cmd_train(&config, out.as_deref(), seed)?;
            println!("wrote {}", dir.display());
        }
        Command::Analyze {
            checkpoint,
            out,
            analyses,
            config,
            seed,
        } => {
            for r in cmd_analyze(&checkpoint, &out, &analyses, config.as_deref(), seed)? {
                match &r.reason {
                    Some(why) => println!("{:<16} {} ({why})", r.analysis, r.status),
                    None => println!("{:<16} {}", r.analysis, r.status),
                }
            }
        }
        Command::Reproduce { id, out, seed, full } => {
            let summary = catalog::reproduce(&id, &out, seed.unwrap_or(catalog::DEFAULT_SEED), full)?;
            for c in &summary.checks {
                println!("{} {} = {:.6e} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.bar);
            }
            println!("wrote {}", out.display());
        }
        Command::List => {
            for (id, what) in catalog::CATALOG {
                println!("{id:<18} {what}");
            }
        }
    }
    Ok(())
}
