//! Unsupervised training and fine-tuning.
//!
//! One optimisation step takes one temporal batch (two frames of a prepared
//! sequence), runs the network on both, copies pixel probabilities to the
//! points in each pixel, evaluates the weighted objective, sums the per-point
//! gradients back into their pixels and backpropagates. Parameters are
//! updated with Adam.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{pair_frames, PreparedFrame, PreparedSequence};
use crate::error::{invalid, Result};
use crate::geometry::SpatialIndex;
use crate::losses::{chamfer_from_distances, class_balance_loss, temporal_from_distances, ChangeProbabilities, LossWeights};
use crate::model::{ChangeModel, ForwardState, Gradients, ModelConfig};
use crate::projection::{backproject, Raster, NO_PIXEL, NO_POINT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// Steps much above 1e-4 kill the ReLU activations early in training.
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Which objective terms are switched on; used by the loss ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub chamfer: bool,
    pub class_balance: bool,
    pub temporal: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            chamfer: true,
            class_balance: true,
            temporal: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub terms: LossTerms,
    pub optim: AdamConfig,
    /// Upper bound on optimisation steps.
    pub steps: usize,
    /// Frame offset within a temporal batch.
    pub pair_spacing: usize,
    /// Stop after this many epochs without a lower mean total loss.
    pub patience: Option<usize>,
    /// Seeds initialisation and batch order.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            weights: LossWeights::default(),
            terms: LossTerms::default(),
            optim: AdamConfig::default(),
            steps: 1000,
            pair_spacing: 1,
            patience: Some(10),
            seed: 0,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    /// Sequence index and the two frame positions of the batch.
    pub sequence: usize,
    pub frames: (usize, usize),
    pub chamfer: f64,
    pub class_balance: f64,
    pub temporal: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ChangeModel<f32>,
    pub log: Vec<StepLog>,
    pub stopped_early: bool,
}

pub fn write_log(path: impl AsRef<Path>, log: &[StepLog]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "step,chamfer,class,temporal,total")?;
    for r in log {
        writeln!(w, "{},{},{},{},{}", r.step, r.chamfer, r.class_balance, r.temporal, r.total)?;
    }
    w.flush()?;
    Ok(())
}

/// Adam state over every parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, model: &ChangeModel<f32>) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .params()
            .iter()
            .flat_map(|p| [vec![0.0; p.weight.len()], vec![0.0; p.bias.len()]])
            .collect();
        Self {
            cfg,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut ChangeModel<f32>, grads: &Gradients<f32>) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let params = model
            .params_mut()
            .iter_mut()
            .flat_map(|p| [&mut p.weight, &mut p.bias]);
        for (((p, g), m), v) in params.zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.len() {
                let gk = g[k] as f64;
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let update = c.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + c.eps);
                p[k] = (p[k] as f64 - update) as f32;
            }
        }
    }
}

/// The geometry a batch needs, computed once.
struct BatchData {
    seq: usize,
    frames: (usize, usize),
    temporal0: Vec<f64>,
    temporal1: Vec<f64>,
}

fn batch_table(data: &[PreparedSequence], spacing: usize) -> Result<Vec<BatchData>> {
    let mut out = Vec::new();
    for (si, seq) in data.iter().enumerate() {
        if seq.frames.len() < 2 {
            continue;
        }
        let indices: Vec<SpatialIndex> = seq.frames.iter().map(|f| SpatialIndex::new(&f.live_world)).collect();
        for b in pair_frames(&seq.frames, spacing)? {
            let (i, j) = b.indices;
            let (fi, fj) = (&seq.frames[i], &seq.frames[j]);
            if fi.live.is_empty() || fj.live.is_empty() {
                continue;
            }
            out.push(BatchData {
                seq: si,
                frames: (i, j),
                temporal0: indices[j].nearest_distances(fi.live_world.points())?,
                temporal1: indices[i].nearest_distances(fj.live_world.points())?,
            });
        }
    }
    Ok(out)
}

/// Called after every step with the step count so far and the current
/// model; returning `false` stops training.
pub type Monitor<'a> = dyn FnMut(usize, &ChangeModel<f32>) -> bool + 'a;

pub fn train(data: &[PreparedSequence], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = ChangeModel::new(cfg.model.clone(), cfg.seed)?;
    train_from(model, data, cfg, &mut |_, _| true)
}

/// Continues training `init` on `data` with the learning rate scaled by `lr_scale`.
pub fn finetune(init: ChangeModel<f32>, data: &[PreparedSequence], cfg: &TrainConfig, lr_scale: f64) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.optim.lr *= lr_scale;
    train_from(init, data, &cfg, &mut |_, _| true)
}

/// Default learning-rate factor for fine-tuning.
pub const FINETUNE_LR_SCALE: f64 = 0.1;

pub fn train_from(init: ChangeModel<f32>, data: &[PreparedSequence], cfg: &TrainConfig, monitor: &mut Monitor<'_>) -> Result<TrainOutcome> {
    if init.config() != &cfg.model {
        return invalid("initial model does not match the training configuration");
    }
    let mcfg = init.config().clone();
    for seq in data {
        let p = &seq.config.projection;
        if p.height != mcfg.height || p.width != mcfg.width {
            return invalid(format!(
                "sequence rendered at {}x{}, model expects {}x{}",
                p.height, p.width, mcfg.height, mcfg.width
            ));
        }
    }
    if !(cfg.optim.lr >= 0.0) {
        return invalid("learning rate must be non-negative");
    }
    let batches = batch_table(data, cfg.pair_spacing)?;
    if batches.is_empty() {
        return invalid("training data yields no temporal batches");
    }
    let mut model = init;
    let mut adam = Adam::new(cfg.optim, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut log = Vec::new();
    let mut step = 0;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut epoch = 0;
    let mut stopped_early = false;
    'outer: while step < cfg.steps {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        let mut epoch_steps = 0;
        for &bi in &order {
            if step >= cfg.steps {
                break 'outer;
            }
            let b = &batches[bi];
            let seq = &data[b.seq];
            let (row, grads) = batch_step(&model, &seq.frames[b.frames.0], &seq.frames[b.frames.1], b, cfg)?;
            adam.step(&mut model, &grads);
            step += 1;
            epoch_total += row.total;
            epoch_steps += 1;
            log.push(StepLog {
                step,
                epoch,
                sequence: b.seq,
                frames: b.frames,
                ..row
            });
            if !monitor(step, &model) {
                break 'outer;
            }
        }
        let mean = epoch_total / epoch_steps.max(1) as f64;
        if mean < best {
            best = mean;
            stale = 0;
        } else {
            stale += 1;
        }
        epoch += 1;
        if cfg.patience.is_some_and(|p| stale >= p) {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        stopped_early,
    })
}

/// Per-point Changed probabilities of a frame and the retained forward state.
fn frame_forward(model: &ChangeModel<f32>, f: &PreparedFrame) -> Result<(ChangeProbabilities, ForwardState<f32>)> {
    let mut state = ForwardState::new();
    let logits = model.forward_retained(&f.live_image, &f.map_image, &mut state)?;
    let p = backproject(&logits.p_changed(), &f.live_image, f.live.len(), 0.0)?;
    Ok((ChangeProbabilities::new(p)?, state))
}

/// Sums per-point gradients into the pixels the points were read from.
fn pixel_gradient(f: &PreparedFrame, grad: &[f64]) -> Raster<f64> {
    let img = &f.live_image;
    let mut r = Raster::filled(img.height(), img.width(), 0.0);
    for (&px, &g) in img.point_pixel.iter().zip(grad) {
        if px != NO_PIXEL && img.index.data[px as usize] != NO_POINT {
            r.data[px as usize] += g;
        }
    }
    r
}

fn batch_step(
    model: &ChangeModel<f32>,
    f0: &PreparedFrame,
    f1: &PreparedFrame,
    b: &BatchData,
    cfg: &TrainConfig,
) -> Result<(StepLog, Gradients<f32>)> {
    let (p0, mut s0) = frame_forward(model, f0)?;
    let (p1, mut s1) = frame_forward(model, f1)?;
    let w = &cfg.weights;
    let on = |b: bool| if b { 1.0 } else { 0.0 };
    let (kc, kb, kt) = (on(cfg.terms.chamfer), on(cfg.terms.class_balance) * w.lambda1, on(cfg.terms.temporal) * w.lambda2);
    let c0 = chamfer_from_distances(&f0.map_distances, &p0)?;
    let c1 = chamfer_from_distances(&f1.map_distances, &p1)?;
    let b0 = class_balance_loss(&p0)?;
    let b1 = class_balance_loss(&p1)?;
    let t = temporal_from_distances(&b.temporal0, &p0, &b.temporal1, &p1)?;
    let chamfer = 0.5 * (c0.value + c1.value);
    let class_balance = 0.5 * (b0.value + b1.value);
    let total = kc * chamfer + kb * class_balance + kt * t.value;
    let grad = |c: &[f64], bb: &[f64], tg: &[f64]| -> Vec<f64> {
        c.iter()
            .zip(bb)
            .zip(tg)
            .map(|((c, bb), tg)| kc * 0.5 * c + kb * 0.5 * bb + kt * tg)
            .collect()
    };
    let g0 = grad(&c0.gradient, &b0.gradient, &t.gradient0);
    let g1 = grad(&c1.gradient, &b1.gradient, &t.gradient1);
    let mut grads = model.backward(&mut s0, &pixel_gradient(f0, &g0))?;
    grads.add_assign(&model.backward(&mut s1, &pixel_gradient(f1, &g1))?);
    Ok((
        StepLog {
            step: 0,
            epoch: 0,
            sequence: 0,
            frames: (0, 0),
            chamfer,
            class_balance,
            temporal: t.value,
            total,
        },
        grads,
    ))
}
