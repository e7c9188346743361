use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{sgd_step, SgdState};
use super::{FusionNet, NnError, StreamNet, Tensor};

/// How a sample is being read: during training (random augmentation keyed by
/// `seed` and the running draw counter) or for evaluation (deterministic).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train { seed: u64, draw: u64 },
    Eval,
}

/// Labeled single-modality samples, each loaded as a `[C, H, W]` tensor.
pub trait Samples {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> usize;
    fn load(&self, index: usize, phase: Phase) -> Result<Tensor, NnError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Labeled RGB/depth pairs.
pub trait PairedSamples {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> usize;
    fn load_pair(&self, index: usize, phase: Phase) -> Result<(Tensor, Tensor), NnError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// `(first iteration, rate)` steps; iterations strictly increasing.
    pub lr_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Keep stream parameters fixed and train only the fusion head.
    pub freeze_streams: bool,
}

impl TrainConfig {
    /// Full-scale stream training: 0.01 dropping to 0.001 after 20k of 30k
    /// iterations, momentum 0.9, batches of 128.
    pub fn full_scale_stream(seed: u64) -> Self {
        Self {
            lr_schedule: vec![(0, 0.01), (20_000, 0.001)],
            momentum: 0.9,
            batch_size: 128,
            max_iterations: 30_000,
            seed,
            freeze_streams: false,
        }
    }

    /// Full-scale fusion training with frozen streams and batches of 50.
    pub fn full_scale_fusion(seed: u64) -> Self {
        Self {
            lr_schedule: vec![(0, 0.01), (20_000, 0.001)],
            momentum: 0.9,
            batch_size: 50,
            max_iterations: 30_000,
            seed,
            freeze_streams: true,
        }
    }

    /// Desk-scale run with the rate dropping tenfold after two thirds.
    pub fn scaled(iterations: usize, batch_size: usize, rate: f64, seed: u64) -> Self {
        let drop = (iterations * 2 / 3).max(1);
        Self {
            lr_schedule: vec![(0, rate), (drop, rate / 10.0)],
            momentum: 0.9,
            batch_size,
            max_iterations: iterations,
            seed,
            freeze_streams: false,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.lr_schedule.is_empty() {
            return bad("learning rate schedule is empty");
        }
        if self.lr_schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("learning rate schedule iterations must be strictly increasing");
        }
        if self.lr_schedule.iter().any(|&(_, r)| !r.is_finite() || r < 0.0) {
            return bad("learning rates must be finite and non-negative");
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        Ok(())
    }

    /// Step-function rate for an iteration; before the first step the first rate applies.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        self.lr_schedule
            .iter()
            .take_while(|&&(start, _)| start <= iteration)
            .last()
            .unwrap_or(&self.lr_schedule[0])
            .1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

pub fn write_loss_csv<W: Write>(records: &[LossRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,loss,lr")?;
    for r in records {
        writeln!(out, "{},{},{}", r.iteration, r.loss, r.lr)?;
    }
    out.flush()
}

/// Yields batches of indices, reshuffling at every pass over the data.
struct BatchOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self { rng, order, pos: 0 }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            batch.push(self.order[self.pos]);
            self.pos += 1;
        }
        batch
    }
}

/// Stage-one training of a stream with its softmax head: mini-batch momentum
/// SGD on the mean cross-entropy. Augmentation is the sample source's job,
/// driven by the `Phase::Train` seed and draw counter.
pub fn train_stream<S: Samples + ?Sized>(
    mut net: StreamNet,
    data: &S,
    cfg: &TrainConfig,
) -> Result<(StreamNet, Vec<LossRecord>), NnError> {
    cfg.validate()?;
    if !net.has_head() {
        return Err(NnError::InvalidConfig("stream training needs a classification head".into()));
    }
    if data.is_empty() {
        return Err(NnError::EmptyData);
    }
    let mut order = BatchOrder::new(data.len(), cfg.seed);
    let mut state = SgdState::new();
    let mut curve = Vec::with_capacity(cfg.max_iterations);
    let mut draw = 0u64;
    for it in 0..cfg.max_iterations {
        let idx = order.next_batch(cfg.batch_size);
        let mut xs = Vec::with_capacity(idx.len());
        for &i in &idx {
            xs.push(data.load(i, Phase::Train { seed: cfg.seed, draw })?);
            draw += 1;
        }
        let labels: Vec<usize> = idx.iter().map(|&i| data.label(i)).collect();
        let x = Tensor::stack(&xs)?;
        let (loss, grads) = net.loss_and_grads(&x, &labels)?;
        let lr = cfg.lr_at(it);
        sgd_step(&mut net.params_mut(), &grads, &mut state, lr, cfg.momentum)?;
        curve.push(LossRecord { iteration: it, loss, lr });
    }
    Ok((net, curve))
}

/// Stage-two training of the fusion head over concatenated stream features.
/// With `freeze_streams` the stream parameters are never touched.
pub fn train_fusion<S: PairedSamples + ?Sized>(
    mut fus: FusionNet,
    data: &S,
    cfg: &TrainConfig,
) -> Result<(FusionNet, Vec<LossRecord>), NnError> {
    cfg.validate()?;
    if fus.rgb().has_head() || fus.depth().has_head() {
        return Err(NnError::NotPretrained);
    }
    if data.is_empty() {
        return Err(NnError::EmptyData);
    }
    let skip = if cfg.freeze_streams { fus.stream_param_count() } else { 0 };
    let mut order = BatchOrder::new(data.len(), cfg.seed);
    let mut state = SgdState::new();
    let mut curve = Vec::with_capacity(cfg.max_iterations);
    let mut draw = 0u64;
    for it in 0..cfg.max_iterations {
        let idx = order.next_batch(cfg.batch_size);
        let mut rgb = Vec::with_capacity(idx.len());
        let mut depth = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (r, d) = data.load_pair(i, Phase::Train { seed: cfg.seed, draw })?;
            rgb.push(r);
            depth.push(d);
            draw += 1;
        }
        let labels: Vec<usize> = idx.iter().map(|&i| data.label(i)).collect();
        let (loss, grads) = fus.loss_and_grads(
            &Tensor::stack(&rgb)?,
            &Tensor::stack(&depth)?,
            &labels,
            cfg.freeze_streams,
        )?;
        let lr = cfg.lr_at(it);
        let mut params = fus.params_mut();
        sgd_step(&mut params[skip..], &grads[skip..], &mut state, lr, cfg.momentum)?;
        curve.push(LossRecord { iteration: it, loss, lr });
    }
    Ok((fus, curve))
}
