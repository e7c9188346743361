//! Stage-wise experiment: encode, resize, train each stream with its own
//! head, drop the heads, train the fusion head on frozen features, evaluate
//! on held-out instances.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, Dataset, HarnessError, MetricsReport, SplitSpec};
use crate::encoding::{CameraIntrinsics, DepthEncoding, EncodedImage};
use crate::geometry::{crop_and_flip, CropSpec, ResizeMode, ResizePolicy};
use crate::nn::{
    save_checkpoint, train_fusion, train_stream, write_loss_csv, FusionNet, LossRecord, Network,
    NnError, PairedSamples, Phase, Samples, StreamArch, StreamNet, Tensor, TrainConfig,
};
use crate::noise::{apply_mask, apply_noise, AugmentConfig, MaskLibrary};
use crate::seed::{derive_seed, mix_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Streams {
    Both,
    RgbOnly,
    DepthOnly,
}

impl std::str::FromStr for Streams {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(Self::Both),
            "rgb" | "rgb-only" => Ok(Self::RgbOnly),
            "depth" | "depth-only" => Ok(Self::DepthOnly),
            other => Err(format!("unknown stream selection `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Depth,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rgb => "rgb",
            Self::Depth => "depth",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rgb" => Ok(Self::Rgb),
            "depth" => Ok(Self::Depth),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// Training-time depth dropout.
#[derive(Debug, Clone)]
pub struct NoiseSetting {
    pub library: Arc<MaskLibrary>,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Side of the resized network input before cropping.
    pub side: usize,
    /// Crop side fed to the streams.
    pub crop: usize,
    pub encoding: DepthEncoding,
    pub resize: ResizeMode,
    /// Camera model for normals; defaults to a centred one per frame.
    pub intrinsics: Option<CameraIntrinsics>,
    pub streams: Streams,
    pub fusion_widths: Vec<usize>,
    /// Stream training. The seed field is replaced by one derived from
    /// `master_seed`.
    pub stage1: TrainConfig,
    /// Fusion training, same seed treatment.
    pub stage2: TrainConfig,
    pub train_noise: Option<NoiseSetting>,
    /// Masks applied (always) to test depth frames.
    pub test_noise: Option<Arc<MaskLibrary>>,
    pub master_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            side: 64,
            crop: 57,
            encoding: DepthEncoding::Jet,
            resize: ResizeMode::Tile,
            intrinsics: None,
            streams: Streams::Both,
            fusion_widths: vec![64],
            stage1: TrainConfig::scaled(600, 32, 0.01, 0),
            stage2: TrainConfig { freeze_streams: true, ..TrainConfig::scaled(300, 32, 0.01, 0) },
            train_noise: None,
            test_noise: None,
            master_seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Crop side that keeps the 227/256 ratio for a given input side.
    pub fn crop_for(side: usize) -> usize {
        (side * 227 + 128) / 256
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.side == 0 || self.crop == 0 || self.crop > self.side {
            return bad(format!("crop {} must lie in 1..={}", self.crop, self.side));
        }
        if self.streams == Streams::Both && self.fusion_widths.is_empty() {
            return bad("at least one fusion layer is required".into());
        }
        if let Some(n) = &self.train_noise {
            if n.library.side != self.side {
                return bad(format!("training masks are {} px, inputs are {} px", n.library.side, self.side));
            }
            if !(0.0..=1.0).contains(&n.probability) {
                return bad(format!("noise probability {} outside [0, 1]", n.probability));
            }
        }
        if let Some(lib) = &self.test_noise {
            if lib.side != self.side {
                return bad(format!("test masks are {} px, inputs are {} px", lib.side, self.side));
            }
            if lib.is_empty() {
                return bad("test mask library is empty".into());
            }
        }
        self.stage1.validate()?;
        self.stage2.validate()?;
        Ok(())
    }

    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.master_seed, label)
    }

    fn policy(&self) -> ResizePolicy {
        ResizePolicy { mode: self.resize, target_side: self.side }
    }

    fn train_augment(&self) -> Result<Option<AugmentConfig>, HarnessError> {
        self.train_noise
            .as_ref()
            .map(|n| AugmentConfig::new(n.library.clone(), n.probability, self.seed("depth/noise")))
            .transpose()
            .map_err(Into::into)
    }

    fn test_corruption(&self) -> Option<(Arc<MaskLibrary>, u64)> {
        self.test_noise.clone().map(|lib| (lib, self.seed("test/noise")))
    }
}

/// Encoded and resized samples, ready for cropping.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSet {
    pub rgb: Vec<EncodedImage>,
    pub depth: Vec<EncodedImage>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl PreparedSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Encodes depth, then resizes both modalities to the input side.
pub fn prepare(dataset: &Dataset, indices: &[usize], cfg: &PipelineConfig) -> Result<PreparedSet, HarnessError> {
    let policy = cfg.policy();
    let mut set = PreparedSet {
        rgb: Vec::with_capacity(indices.len()),
        depth: Vec::with_capacity(indices.len()),
        labels: Vec::with_capacity(indices.len()),
        classes: dataset.num_classes(),
    };
    for &i in indices {
        let s = &dataset.samples()[i];
        set.rgb.push(policy.apply(&s.rgb)?);
        set.depth.push(policy.apply(&cfg.encoding.encode(&s.depth, cfg.intrinsics)?)?);
        set.labels.push(s.class);
    }
    Ok(set)
}

/// `[3, h, w]` planar tensor with values `v / 255 - 0.5`.
pub fn to_tensor(img: &EncodedImage) -> Tensor {
    let (w, h) = (img.width(), img.height());
    let mut data = vec![0.0; 3 * w * h];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = f64::from(px[c]) / 255.0 - 0.5;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("sized to the image")
}

fn nn_err(e: impl std::fmt::Display) -> NnError {
    NnError::Data(e.to_string())
}

/// Shared sampling logic for both views.
#[derive(Debug, Clone)]
struct Sampler {
    crop: usize,
    train_noise: Option<AugmentConfig>,
    test_noise: Option<(Arc<MaskLibrary>, u64)>,
}

impl Sampler {
    fn crop_spec(&self, img: &EncodedImage, phase: Phase) -> CropSpec {
        match phase {
            Phase::Train { seed, draw } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, draw));
                CropSpec::random(img.width(), img.height(), self.crop, &mut rng)
            }
            Phase::Eval => CropSpec::center(img.width(), img.height(), self.crop),
        }
    }

    fn corrupt_depth(&self, img: &EncodedImage, index: usize, phase: Phase) -> Result<EncodedImage, NnError> {
        match (phase, &self.train_noise, &self.test_noise) {
            (Phase::Train { draw, .. }, Some(aug), _) => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(aug.seed, draw));
                Ok(apply_noise(img, aug, &mut rng).map_err(nn_err)?.0)
            }
            (Phase::Eval, _, Some((lib, seed))) => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(*seed, index as u64));
                let k = rng.gen_range(0..lib.len());
                apply_mask(img, &lib.masks[k]).map_err(nn_err)
            }
            _ => Ok(img.clone()),
        }
    }
}

/// One modality of a prepared set as training/evaluation samples.
#[derive(Debug, Clone)]
pub struct StreamView<'a> {
    set: &'a PreparedSet,
    modality: Modality,
    sampler: Sampler,
}

impl<'a> StreamView<'a> {
    pub fn new(set: &'a PreparedSet, modality: Modality, crop: usize) -> Self {
        Self { set, modality, sampler: Sampler { crop, train_noise: None, test_noise: None } }
    }

    /// Dropout augmentation of depth samples during training.
    pub fn with_train_noise(mut self, aug: Option<AugmentConfig>) -> Self {
        self.sampler.train_noise = aug;
        self
    }

    /// Masks every depth sample at evaluation, mask choice keyed by `seed` and index.
    pub fn with_test_noise(mut self, noise: Option<(Arc<MaskLibrary>, u64)>) -> Self {
        self.sampler.test_noise = noise;
        self
    }
}

impl Samples for StreamView<'_> {
    fn len(&self) -> usize {
        self.set.len()
    }

    fn label(&self, index: usize) -> usize {
        self.set.labels[index]
    }

    fn load(&self, index: usize, phase: Phase) -> Result<Tensor, NnError> {
        let img = match self.modality {
            Modality::Rgb => self.set.rgb[index].clone(),
            Modality::Depth => self.sampler.corrupt_depth(&self.set.depth[index], index, phase)?,
        };
        let spec = self.sampler.crop_spec(&img, phase);
        Ok(to_tensor(&crop_and_flip(&img, &spec).map_err(nn_err)?))
    }
}

/// Both modalities with a shared crop per sample.
#[derive(Debug, Clone)]
pub struct PairView<'a> {
    set: &'a PreparedSet,
    sampler: Sampler,
}

impl<'a> PairView<'a> {
    pub fn new(set: &'a PreparedSet, crop: usize) -> Self {
        Self { set, sampler: Sampler { crop, train_noise: None, test_noise: None } }
    }

    pub fn with_train_noise(mut self, aug: Option<AugmentConfig>) -> Self {
        self.sampler.train_noise = aug;
        self
    }

    pub fn with_test_noise(mut self, noise: Option<(Arc<MaskLibrary>, u64)>) -> Self {
        self.sampler.test_noise = noise;
        self
    }
}

impl PairedSamples for PairView<'_> {
    fn len(&self) -> usize {
        self.set.len()
    }

    fn label(&self, index: usize) -> usize {
        self.set.labels[index]
    }

    fn load_pair(&self, index: usize, phase: Phase) -> Result<(Tensor, Tensor), NnError> {
        let rgb = &self.set.rgb[index];
        let depth = self.sampler.corrupt_depth(&self.set.depth[index], index, phase)?;
        let spec = self.sampler.crop_spec(rgb, phase);
        Ok((
            to_tensor(&crop_and_flip(rgb, &spec).map_err(nn_err)?),
            to_tensor(&crop_and_flip(&depth, &spec).map_err(nn_err)?),
        ))
    }
}

const EVAL_BATCH: usize = 64;

pub fn evaluate_stream<S: Samples + ?Sized>(
    net: &StreamNet,
    data: &S,
    classes: usize,
) -> Result<MetricsReport, HarnessError> {
    let mut pairs = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let xs = chunk.iter().map(|&i| data.load(i, Phase::Eval)).collect::<Result<Vec<_>, _>>()?;
        let preds = net.predict(&Tensor::stack(&xs)?)?;
        pairs.extend(chunk.iter().zip(preds).map(|(&i, (p, _))| (data.label(i), p)));
    }
    evaluate(pairs, classes)
}

pub fn evaluate_fusion<S: PairedSamples + ?Sized>(
    net: &FusionNet,
    data: &S,
) -> Result<MetricsReport, HarnessError> {
    let mut pairs = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let (rgb, depth): (Vec<_>, Vec<_>) = chunk
            .iter()
            .map(|&i| data.load_pair(i, Phase::Eval))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .unzip();
        let preds = net.predict(&Tensor::stack(&rgb)?, &Tensor::stack(&depth)?)?;
        pairs.extend(chunk.iter().zip(preds).map(|(&i, (p, _))| (data.label(i), p)));
    }
    evaluate(pairs, net.classes())
}

/// Stage one for one modality: a fresh toy stream with a softmax head.
pub fn train_stage_one(
    train: &PreparedSet,
    modality: Modality,
    cfg: &PipelineConfig,
) -> Result<(StreamNet, Vec<LossRecord>), HarnessError> {
    cfg.validate()?;
    let name = modality.name();
    let net = StreamNet::new(StreamArch::toy(cfg.crop, train.classes), cfg.seed(&format!("{name}/init")))?;
    let aug = match modality {
        Modality::Depth => cfg.train_augment()?,
        Modality::Rgb => None,
    };
    let view = StreamView::new(train, modality, cfg.crop).with_train_noise(aug);
    let tc = TrainConfig { seed: cfg.seed(&format!("{name}/train")), ..cfg.stage1.clone() };
    Ok(train_stream(net, &view, &tc)?)
}

/// Stage two: discards both heads and trains the fusion layers.
pub fn train_stage_two(
    train: &PreparedSet,
    rgb: StreamNet,
    depth: StreamNet,
    cfg: &PipelineConfig,
) -> Result<(FusionNet, Vec<LossRecord>), HarnessError> {
    cfg.validate()?;
    let fus = FusionNet::new(
        rgb.discard_head(),
        depth.discard_head(),
        &cfg.fusion_widths,
        train.classes,
        cfg.seed("fusion/init"),
    )?;
    let view = PairView::new(train, cfg.crop).with_train_noise(cfg.train_augment()?);
    let tc = TrainConfig { seed: cfg.seed("fusion/train"), ..cfg.stage2.clone() };
    Ok(train_fusion(fus, &view, &tc)?)
}

/// Depth stream only, trained and evaluated on a split.
pub fn train_depth_stream(
    dataset: &Dataset,
    split: &SplitSpec,
    cfg: &PipelineConfig,
) -> Result<StreamOutcome, HarnessError> {
    let cfg = PipelineConfig { streams: Streams::DepthOnly, ..cfg.clone() };
    let out = run_experiment(dataset, split, &cfg, None)?;
    Ok(out.depth.expect("depth stream requested"))
}

#[derive(Debug, Clone)]
pub struct StreamOutcome {
    /// Stage-one network, head included.
    pub net: StreamNet,
    pub metrics: MetricsReport,
    pub curve: Vec<LossRecord>,
}

#[derive(Debug, Clone)]
pub struct FusionOutcome {
    pub net: FusionNet,
    pub metrics: MetricsReport,
    pub curve: Vec<LossRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub rgb: Option<StreamOutcome>,
    pub depth: Option<StreamOutcome>,
    pub fusion: Option<FusionOutcome>,
}

fn write_artifacts(
    dir: &Path,
    stem: &str,
    net: Network,
    metrics: &MetricsReport,
    curve: &[LossRecord],
    names: &[String],
) -> Result<(), HarnessError> {
    save_checkpoint(&net, &dir.join(format!("{stem}.ckpt")))?;
    let loss = dir.join(format!("{stem}_loss.csv"));
    let file = std::fs::File::create(&loss).map_err(HarnessError::io(&loss))?;
    write_loss_csv(curve, std::io::BufWriter::new(file)).map_err(HarnessError::io(&loss))?;
    metrics.write(dir, &format!("{stem}_metrics"), Some(names))
}

/// Runs the full protocol on one split. With `out_dir`, writes for each
/// trained network `<name>.ckpt`, `<name>_loss.csv` and
/// `<name>_metrics.{csv,json}` plus `<name>_metrics_confusion.csv`, where
/// name is `rgb_stream`, `depth_stream` or `fusion`.
pub fn run_experiment(
    dataset: &Dataset,
    split: &SplitSpec,
    cfg: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutcome, HarnessError> {
    cfg.validate()?;
    if split.held_out.len() != dataset.num_classes() {
        return Err(HarnessError::Config(format!(
            "split holds out {} classes, dataset has {}",
            split.held_out.len(),
            dataset.num_classes()
        )));
    }
    let (train_idx, test_idx) = split.partition(&dataset.labels());
    if test_idx.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    if train_idx.is_empty() {
        return Err(NnError::EmptyData.into());
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    }
    let train = prepare(dataset, &train_idx, cfg)?;
    let test = prepare(dataset, &test_idx, cfg)?;
    let m = dataset.num_classes();
    let names = dataset.classes();
    let mut outcome = ExperimentOutcome::default();

    let wanted = |modality| match cfg.streams {
        Streams::Both => true,
        Streams::RgbOnly => modality == Modality::Rgb,
        Streams::DepthOnly => modality == Modality::Depth,
    };
    for modality in [Modality::Rgb, Modality::Depth] {
        if !wanted(modality) {
            continue;
        }
        let (net, curve) = train_stage_one(&train, modality, cfg)?;
        let view = StreamView::new(&test, modality, cfg.crop).with_test_noise(cfg.test_corruption());
        let metrics = evaluate_stream(&net, &view, m)?;
        if let Some(dir) = out_dir {
            let stem = format!("{}_stream", modality.name());
            write_artifacts(dir, &stem, Network::Stream(net.clone()), &metrics, &curve, names)?;
        }
        let result = StreamOutcome { net, metrics, curve };
        match modality {
            Modality::Rgb => outcome.rgb = Some(result),
            Modality::Depth => outcome.depth = Some(result),
        }
    }

    if cfg.streams == Streams::Both {
        let rgb = outcome.rgb.as_ref().expect("trained above").net.clone();
        let depth = outcome.depth.as_ref().expect("trained above").net.clone();
        let (net, curve) = train_stage_two(&train, rgb, depth, cfg)?;
        let view = PairView::new(&test, cfg.crop).with_test_noise(cfg.test_corruption());
        let metrics = evaluate_fusion(&net, &view)?;
        if let Some(dir) = out_dir {
            write_artifacts(dir, "fusion", Network::Fusion(net.clone()), &metrics, &curve, names)?;
        }
        outcome.fusion = Some(FusionOutcome { net, metrics, curve });
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub encoding: DepthEncoding,
    pub accuracy: f64,
    pub metrics: MetricsReport,
}

/// Depth-only runs, one per encoding, otherwise identical settings.
pub fn sweep_encodings(
    dataset: &Dataset,
    split: &SplitSpec,
    cfg: &PipelineConfig,
    encodings: &[DepthEncoding],
) -> Result<Vec<SweepRow>, HarnessError> {
    encodings
        .iter()
        .map(|&encoding| {
            let c = PipelineConfig { encoding, ..cfg.clone() };
            let out = train_depth_stream(dataset, split, &c)?;
            Ok(SweepRow { encoding, accuracy: out.metrics.accuracy, metrics: out.metrics })
        })
        .collect()
}
