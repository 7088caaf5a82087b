//! Training harness: schedules, the SGD loop, checkpoints, logs, evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, Network, NetworkConfig};
use crate::nn::{softmax_ce_loss, Checkpoint, LossWeights, Sgd};
use crate::projection::ProjectionTable;
use crate::sceneio::{loss_mask, merge_reports, ssc_metrics, MetricsReport, SceneSample};
use crate::tensor::{DType, Tensor};

pub const BASE_LR: f64 = 0.01;
pub const BASE_EMPTY_WEIGHT: f64 = 0.05;

/// `min(1, 0.05 · 2^floor(epoch / 50))`.
pub fn empty_weight(epoch: usize) -> f64 {
    empty_weight_with(epoch, BASE_EMPTY_WEIGHT, 50)
}

pub fn empty_weight_with(epoch: usize, base: f64, period: usize) -> f64 {
    let doublings = (epoch / period).min(64) as i32;
    (base * 2f64.powi(doublings)).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauRule {
    /// Consecutive epoch-to-epoch deltas that must all be small.
    pub window: usize,
    pub tolerance: f64,
    pub factor: f64,
}

impl Default for PlateauRule {
    fn default() -> Self {
        Self {
            window: 5,
            tolerance: 1e-4,
            factor: 10.0,
        }
    }
}

impl PlateauRule {
    /// Number of plateaus detected in `history`. After each one the window
    /// restarts, so the next needs `window` fresh deltas.
    pub fn drops(&self, history: &[f64]) -> usize {
        let mut drops = 0;
        let mut run = 0;
        for pair in history.windows(2) {
            if (pair[1] - pair[0]).abs() < self.tolerance {
                run += 1;
            } else {
                run = 0;
            }
            if run == self.window {
                drops += 1;
                run = 0;
            }
        }
        drops
    }

    pub fn lr(&self, base: f64, history: &[f64]) -> f64 {
        base / self.factor.powi(self.drops(history) as i32)
    }
}

/// Learning rate after `history` under the default plateau rule.
pub fn lr_schedule(history: &[f64]) -> f64 {
    PlateauRule::default().lr(BASE_LR, history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Writes 0 for wall time so logs are byte-reproducible.
    pub deterministic: bool,
    pub plateau: PlateauRule,
    pub empty_weight_base: f64,
    pub empty_weight_period: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 2,
            lr: BASE_LR,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            deterministic: true,
            plateau: PlateauRule::default(),
            empty_weight_base: BASE_EMPTY_WEIGHT,
            empty_weight_period: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub w_empty: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    pub losses: Vec<f64>,
    /// Rate for the next epoch.
    pub lr: f64,
    /// Empty-class weight for the next epoch.
    pub w_empty: f64,
    /// Checkpoint file name, relative to the state file.
    pub checkpoint: PathBuf,
    pub seed: u64,
    pub records: Vec<EpochRecord>,
}

impl TrainState {
    fn fresh(cfg: &TrainConfig, checkpoint: PathBuf) -> Self {
        Self {
            epoch: 0,
            losses: Vec::new(),
            lr: cfg.lr,
            w_empty: empty_weight_with(0, cfg.empty_weight_base, cfg.empty_weight_period),
            checkpoint,
            seed: cfg.seed,
            records: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub const LOG_HEADER: &str = "epoch\tloss\tlr\tw_empty\twall_time_s";

/// Stacks samples into network inputs plus labels and loss masks.
pub fn make_batch(samples: &[&SceneSample]) -> Result<(Batch, Tensor, Tensor)> {
    let first = samples.first().ok_or_else(|| Error::Value("empty batch".into()))?;
    let unsqueeze = |t: &Tensor| -> Result<Tensor> {
        let mut s = vec![1];
        s.extend_from_slice(t.shape());
        t.reshape(&s)
    };
    let stack = |f: &dyn Fn(&SceneSample) -> Result<Tensor>| -> Result<Tensor> {
        let parts = samples.iter().map(|s| f(s)).collect::<Result<Vec<_>>>()?;
        Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0)
    };
    let rgb = stack(&|s| unsqueeze(&s.rgb))?;
    let (h, w) = (first.depth.shape()[0], first.depth.shape()[1]);
    let depth = stack(&|s| s.depth.reshape(&[1, 1, h, w]))?;
    let labels = stack(&|s| unsqueeze(&s.labels))?;
    let mask = stack(&|s| unsqueeze(&loss_mask(&s.labels, &s.masks)?))?;
    let batch = Batch {
        rgb,
        depth,
        intrinsics: samples.iter().map(|s| s.intrinsics.clone()).collect(),
    };
    Ok((batch, labels, mask))
}

fn check_sample(cfg: &NetworkConfig, s: &SceneSample) -> Result<()> {
    let [h, w] = cfg.image;
    let dims = cfg.label_dims();
    if s.depth.shape() != [h, w] || s.labels.shape() != dims {
        return Err(Error::Shape(format!(
            "sample has image {:?} and labels {:?}; the network expects [{h}, {w}] and {dims:?}",
            s.depth.shape(),
            s.labels.shape()
        )));
    }
    if let Some(&l) = s
        .labels
        .data()
        .iter()
        .find(|&&l| l < 0.0 || l >= cfg.num_classes as f64)
    {
        return Err(Error::Value(format!("label {l} outside 0..{}", cfg.num_classes)));
    }
    Ok(())
}

pub struct Trainer {
    pub net: Network,
    pub cfg: TrainConfig,
    pub state: TrainState,
    optim: Sgd,
    out: PathBuf,
}

const VELOCITY_PREFIX: &str = "velocity/";

impl Trainer {
    pub fn new(net_cfg: &NetworkConfig, cfg: TrainConfig, out: &Path) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = Network::new(net_cfg, &mut rng)?;
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Self {
            net,
            optim: Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay),
            state: TrainState::fresh(&cfg, PathBuf::from("model.ckpt")),
            cfg,
            out: out.to_path_buf(),
        })
    }

    /// Continues from a checkpoint written by [`Trainer::save`]; `state.json`
    /// is read from the checkpoint's directory.
    pub fn resume(net_cfg: &NetworkConfig, cfg: TrainConfig, out: &Path, checkpoint: &Path) -> Result<Self> {
        let mut t = Self::new(net_cfg, cfg, out)?;
        let dir = checkpoint.parent().unwrap_or(Path::new("."));
        let state = TrainState::load(&dir.join("state.json"))?;
        let ckpt = Checkpoint::load(checkpoint)?;
        t.net.load_checkpoint(&ckpt)?;
        let velocity = t
            .net
            .params()
            .iter()
            .map(|p| {
                ckpt.get(&format!("{VELOCITY_PREFIX}{}", p.name))
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("checkpoint lacks velocity of {}", p.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        if state.epoch > 0 {
            t.optim.set_velocity(velocity);
        }
        t.state = state;
        Ok(t)
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.net.to_checkpoint();
        let velocity = self.optim.velocity();
        for (i, p) in self.net.params().iter().enumerate() {
            let v = velocity.get(i).cloned().unwrap_or_else(|| p.value.zeros_like());
            ckpt.push(format!("{VELOCITY_PREFIX}{}", p.name), v);
        }
        ckpt
    }

    /// Writes checkpoint, state, config and both log files under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.checkpoint().save(&dir.join("model.ckpt"))?;
        self.state.save(&dir.join("state.json"))?;
        self.net.config().save(&dir.join("config.json"))?;
        let mut tsv = format!("{LOG_HEADER}\n");
        let mut jsonl = String::new();
        for r in &self.state.records {
            tsv.push_str(&format!(
                "{}\t{:.17e}\t{:e}\t{}\t{:.3}\n",
                r.epoch, r.loss, r.lr, r.w_empty, r.wall_time
            ));
            jsonl.push_str(&serde_json::to_string(r).expect("record serializes"));
            jsonl.push('\n');
        }
        let write = |name: &str, text: &str| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        write("train_log.tsv", &tsv)?;
        write("train_log.jsonl", &jsonl)
    }

    /// Runs epochs until `cfg.epochs` are complete, saving after each.
    pub fn train(&mut self, samples: &[SceneSample]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Value("no training samples".into()));
        }
        for s in samples {
            check_sample(self.net.config(), s)?;
        }
        let refs: Vec<&SceneSample> = samples.iter().collect();
        let mut batches = Vec::new();
        for chunk in refs.chunks(self.cfg.batch_size.max(1)) {
            let (batch, labels, mask) = make_batch(chunk)?;
            let tables = self.net.tables(&batch)?;
            batches.push((batch, labels, mask, tables));
        }
        while self.state.epoch < self.cfg.epochs {
            let start = Instant::now();
            let loss = match self.epoch(&batches) {
                Ok(l) => l,
                Err(e) => {
                    self.dump_failure()?;
                    return Err(e);
                }
            };
            let wall = if self.cfg.deterministic {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            };
            self.finish_epoch(loss, wall);
            self.save(&self.out.clone())?;
        }
        Ok(())
    }

    fn epoch(&mut self, batches: &[(Batch, Tensor, Tensor, Vec<ProjectionTable>)]) -> Result<f64> {
        let k = self.net.config().num_classes;
        let mut class_weights = vec![1.0; k];
        class_weights[0] = self.state.w_empty;
        self.optim.lr = self.state.lr;
        let mut total = 0.0;
        for (batch, labels, mask, tables) in batches {
            self.net.set_tables(tables.clone())?;
            let logits = self.net.forward_images(&batch.rgb, &batch.depth)?;
            let out = softmax_ce_loss(
                &logits,
                labels,
                &LossWeights {
                    class_weights: class_weights.clone(),
                    mask: mask.clone(),
                },
            )?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("loss at epoch {}", self.state.epoch),
                });
            }
            self.net.zero_grad();
            self.net.backward(&out.grad)?;
            self.optim.step(&mut self.net.params_mut())?;
            total += out.loss;
        }
        Ok(total / batches.len() as f64)
    }

    fn finish_epoch(&mut self, loss: f64, wall_time: f64) {
        self.state.records.push(EpochRecord {
            epoch: self.state.epoch,
            loss,
            lr: self.state.lr,
            w_empty: self.state.w_empty,
            wall_time,
        });
        self.state.losses.push(loss);
        self.state.epoch += 1;
        self.state.lr = self.cfg.plateau.lr(self.cfg.lr, &self.state.losses);
        self.state.w_empty = empty_weight_with(
            self.state.epoch,
            self.cfg.empty_weight_base,
            self.cfg.empty_weight_period,
        );
    }

    fn dump_failure(&self) -> Result<()> {
        let dir = self.out.join("failed");
        self.save(&dir)
    }
}

/// Predicts every sample in batches of `batch_size`, returning int32 grids.
pub fn predict_samples(net: &mut Network, samples: &[SceneSample], batch_size: usize) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(samples.len());
    let refs: Vec<&SceneSample> = samples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        for s in chunk {
            check_sample(net.config(), s)?;
        }
        let (batch, _, _) = make_batch(chunk)?;
        let pred = net.predict(&batch)?;
        let dims = net.config().label_dims();
        for n in 0..chunk.len() {
            out.push(pred.narrow(0, n, 1)?.reshape(&dims)?.with_dtype(DType::I32)?);
        }
    }
    Ok(out)
}

/// Scores predictions against samples, pooling confusion counts.
pub fn evaluate_predictions(preds: &[Tensor], samples: &[SceneSample]) -> Result<MetricsReport> {
    if preds.len() != samples.len() {
        return Err(Error::Value(format!(
            "{} predictions for {} samples",
            preds.len(),
            samples.len()
        )));
    }
    let reports = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| ssc_metrics(p, &s.labels, &s.masks))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_reports(&reports))
}

pub fn evaluate(net: &mut Network, samples: &[SceneSample]) -> Result<MetricsReport> {
    let preds = predict_samples(net, samples, 2)?;
    evaluate_predictions(&preds, samples)
}
