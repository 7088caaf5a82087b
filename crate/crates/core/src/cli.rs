//! Command-line front end. The binary only forwards to [`run`].

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checks::run_gradcheck;
use crate::error::{Error, Result};
use crate::model::{analyze, Modality, Network, NetworkConfig};
use crate::nn::Checkpoint;
use crate::sceneio::{
    generate_scene, read_manifest, read_sample, write_manifest, write_sample, GenConfig, Manifest, ManifestEntry,
    SceneSample, Split,
};
use crate::tensor::Tensor;
use crate::train::{evaluate_predictions, predict_samples, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "ddrnet",
    version,
    about = "Semantic scene completion with dimensional decomposition residual networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Network config JSON (a `preset` key plus overrides).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Zero wall-time columns so repeated runs are byte-identical.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    deterministic: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write seeded synthetic scenes and a manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// How many of the scenes (taken from the end) are tagged `test`.
        #[arg(long, default_value_t = 0)]
        test: usize,
        /// Scene generator JSON overriding the defaults derived from the network config.
        #[arg(long)]
        gen_config: Option<PathBuf>,
    },
    /// Exact parameter and FLOP breakdown.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Preset used when no --config is given.
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "all")]
        target: String,
        #[arg(long, default_value_t = 50)]
        probes: usize,
    },
    /// Train on the `train` split of a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        modality: Option<Modality>,
        /// Checkpoint to continue from; its state.json must sit beside it.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint, or saved predictions, on a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Directory written by `predict` (`<sample>/pred.tnsr`).
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
        #[arg(long)]
        json: bool,
    },
    /// Write predicted label grids.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::NonFinite { .. } | Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn network_config(path: Option<&Path>, fallback: &str) -> Result<NetworkConfig> {
    match path {
        Some(p) => NetworkConfig::load(p),
        None => NetworkConfig::preset(fallback),
    }
}

/// Config for a checkpoint: explicit file, else `config.json` beside it.
fn checkpoint_config(explicit: Option<&Path>, checkpoint: &Path) -> Result<NetworkConfig> {
    if explicit.is_some() {
        return network_config(explicit, "desk");
    }
    let beside = checkpoint.parent().unwrap_or(Path::new(".")).join("config.json");
    if beside.exists() {
        NetworkConfig::load(&beside)
    } else {
        Ok(NetworkConfig::desk())
    }
}

fn require_dataset(data: &Path) -> Result<Manifest> {
    if !data.join("manifest.json").is_file() {
        return Err(Error::Config(format!(
            "no dataset at {} (manifest.json missing)",
            data.display()
        )));
    }
    read_manifest(data)
}

fn load_split(data: &Path, split: Option<Split>) -> Result<(Vec<PathBuf>, Vec<SceneSample>)> {
    let manifest = require_dataset(data)?;
    let dirs = manifest.dirs(data, split);
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "dataset {} has no samples in that split",
            data.display()
        )));
    }
    let samples = dirs.iter().map(|d| read_sample(d)).collect::<Result<Vec<_>>>()?;
    Ok((dirs, samples))
}

fn load_network(cfg: &NetworkConfig, checkpoint: &Path) -> Result<Network> {
    let mut net = Network::new(
        cfg,
        &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
    )?;
    net.load_checkpoint(&Checkpoint::load(checkpoint)?)?;
    Ok(net)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    let say = |out: &mut dyn Write, text: &str| {
        let _ = writeln!(out, "{text}");
    };
    match command {
        Command::GenData {
            common,
            count,
            test,
            gen_config,
        } => {
            let dir = common
                .out
                .ok_or_else(|| Error::Config("gen-data needs --out DIR".into()))?;
            if test > count {
                return Err(Error::Config(format!("--test {test} exceeds --count {count}")));
            }
            let net = network_config(common.config.as_deref(), "desk")?;
            net.validate()?;
            let mut gen = GenConfig {
                image: net.image,
                grid: net.label_grid()?,
                ..GenConfig::default()
            };
            if let Some(p) = gen_config {
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                gen = serde_json::from_str(&text).map_err(|e| Error::json(&p, e))?;
            }
            let mut manifest = Manifest::default();
            for i in 0..count {
                let seed = common.seed.wrapping_add(i as u64);
                let name = format!("sample_{i:04}");
                write_sample(&dir.join(&name), &generate_scene(seed, &gen)?)?;
                manifest.samples.push(ManifestEntry {
                    dir: name,
                    split: if i + test >= count { Split::Test } else { Split::Train },
                    seed,
                });
            }
            write_manifest(&dir, &manifest)?;
            say(out, &format!("wrote {count} samples to {}", dir.display()));
            Ok(EXIT_OK)
        }
        Command::Analyze {
            common,
            preset,
            batch,
            json,
        } => {
            let cfg = network_config(common.config.as_deref(), &preset)?;
            let report = analyze(&cfg, batch)?;
            let text = if json { report.to_json() } else { report.to_table() };
            say(out, text.trim_end());
            if let Some(dir) = common.out {
                write_text(&dir.join("cost.json"), &report.to_json())?;
                write_text(&dir.join("cost.txt"), &report.to_table())?;
            }
            Ok(EXIT_OK)
        }
        Command::Gradcheck { common, target, probes } => {
            let outcomes = run_gradcheck(&target, common.seed, probes)?;
            let mut failed = 0;
            for o in &outcomes {
                say(out, &o.line());
                failed += usize::from(!o.passes());
            }
            if failed > 0 {
                say(out, &format!("{failed} of {} gradient checks failed", outcomes.len()));
                return Ok(EXIT_NUMERICAL);
            }
            Ok(EXIT_OK)
        }
        Command::Train {
            common,
            data,
            epochs,
            modality,
            resume,
        } => {
            let mut cfg = network_config(common.config.as_deref(), "desk")?;
            if let Some(m) = modality {
                cfg.modality = m;
            }
            cfg.validate_trainable()?;
            let (_, samples) = load_split(&data, Some(Split::Train))?;
            let run_dir = common.out.unwrap_or_else(|| PathBuf::from("runs/train"));
            let tcfg = TrainConfig {
                epochs,
                seed: common.seed,
                deterministic: common.deterministic,
                ..TrainConfig::default()
            };
            let mut trainer = match resume {
                Some(ckpt) => Trainer::resume(&cfg, tcfg, &run_dir, &ckpt)?,
                None => Trainer::new(&cfg, tcfg, &run_dir)?,
            };
            trainer.train(&samples)?;
            let s = &trainer.state;
            say(
                out,
                &format!(
                    "trained {} epochs; final loss {:.6}; checkpoint {}",
                    s.epoch,
                    s.losses.last().copied().unwrap_or(f64::NAN),
                    run_dir.join(&s.checkpoint).display()
                ),
            );
            Ok(EXIT_OK)
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            predictions,
            split,
            json,
        } => {
            let (dirs, samples) = load_split(&data, split.split())?;
            let preds = match (checkpoint, predictions) {
                (Some(ckpt), _) => {
                    let cfg = checkpoint_config(common.config.as_deref(), &ckpt)?;
                    let mut net = load_network(&cfg, &ckpt)?;
                    predict_samples(&mut net, &samples, 2)?
                }
                (None, Some(pred_dir)) => dirs
                    .iter()
                    .map(|d| Tensor::load(&pred_dir.join(d.file_name().unwrap_or_default()).join("pred.tnsr")))
                    .collect::<Result<Vec<_>>>()?,
                (None, None) => return Err(Error::Config("eval needs --checkpoint or --predictions".into())),
            };
            let report = evaluate_predictions(&preds, &samples)?;
            say(out, if json { report.to_json() } else { report.to_table() }.trim_end());
            if let Some(dir) = common.out {
                write_text(&dir.join("metrics.json"), &report.to_json())?;
            }
            Ok(EXIT_OK)
        }
        Command::Predict {
            common,
            data,
            checkpoint,
            split,
        } => {
            let dir = common
                .out
                .ok_or_else(|| Error::Config("predict needs --out DIR".into()))?;
            let cfg = checkpoint_config(common.config.as_deref(), &checkpoint)?;
            let (dirs, samples) = load_split(&data, split.split())?;
            let mut net = load_network(&cfg, &checkpoint)?;
            let preds = predict_samples(&mut net, &samples, 2)?;
            for (d, p) in dirs.iter().zip(&preds) {
                let name = d
                    .file_name()
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("sample"));
                let target = dir.join(name).join("pred.tnsr");
                fs::create_dir_all(target.parent().expect("has parent")).map_err(|e| Error::io(&dir, e))?;
                p.save(&target)?;
            }
            say(out, &format!("wrote {} predictions to {}", preds.len(), dir.display()));
            Ok(EXIT_OK)
        }
    }
}
