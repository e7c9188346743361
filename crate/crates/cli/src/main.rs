//! Command-line front end: encoding, resizing, mask libraries, synthetic data,
//! splits, training, evaluation and reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rgbdfuse::encoding::{CameraIntrinsics, DepthEncoding};
use rgbdfuse::geometry::{ResizeMode, ResizePolicy};
use rgbdfuse::harness::{
    evaluate_fusion, evaluate_stream, generate_synthetic, make_splits, prepare, render_recall_chart,
    run_experiment, sweep_encodings, train_stage_one, train_stage_two, Dataset, DatasetManifest,
    HarnessError, MetricsReport, Modality, ModalityMode, NoiseSetting, PairView, PipelineConfig,
    ShapeFamily, SplitSpec, StreamView, Streams, SyntheticSceneConfig,
};
use rgbdfuse::imageio::{load_depth_png, load_rgb_png, save_rgb_png};
use rgbdfuse::nn::{load_checkpoint, save_checkpoint, write_loss_csv, LossRecord, Network, TrainConfig};
use rgbdfuse::noise::{
    apply_noise, build_library, extract_patches, read_library, synthesize_patches, write_library,
    AugmentConfig, MaskLibrary, MaskSource,
};
use rgbdfuse::seed::{derive_seed, master_seed};

/// An error with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Self { code: if e.is_config() { 2 } else { 3 }, err: e.into() }
    }
}

macro_rules! via_harness {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                HarnessError::from(e).into()
            }
        }
    )*};
}
via_harness!(
    rgbdfuse::encoding::EncodingError,
    rgbdfuse::geometry::GeometryError,
    rgbdfuse::imageio::ImageIoError,
    rgbdfuse::noise::NoiseError,
    rgbdfuse::nn::NnError
);

fn config(msg: impl std::fmt::Display) -> Failure {
    Failure { code: 2, err: anyhow!("{msg}") }
}

fn data(msg: impl std::fmt::Display) -> Failure {
    Failure { code: 3, err: anyhow!("{msg}") }
}

type Result<T> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(name = "rgbdfuse", version, about = "RGB-D object recognition with late-fused convolutional streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Colorize a 16-bit depth PNG (millimetres, 0 = missing) into an RGB PNG.
    Encode {
        #[arg(long)]
        method: DepthEncoding,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        camera: CameraArgs,
    },
    /// Resize an RGB PNG to a square.
    Resize {
        #[arg(long)]
        mode: ResizeMode,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        side: usize,
    },
    /// Build a dropout mask library.
    GenMasks {
        /// `synthetic`, or `import <dir>` to cut patches from the depth PNGs in a directory.
        #[arg(long, num_args = 1..=2, value_names = ["KIND", "DIR"], required = true)]
        source: Vec<String>,
        /// Number of raw patches.
        #[arg(long, default_value_t = 33_000)]
        count: usize,
        /// Number of composed masks.
        #[arg(long, default_value_t = 50_000)]
        k: usize,
        /// Mask side; must equal the pipeline side the library is used with.
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a random library mask to an encoded depth PNG.
    Augment {
        #[arg(long)]
        lib: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        prob: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a synthetic RGB-D dataset and its manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 3)]
        instances: usize,
        #[arg(long, default_value_t = 12)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        side: usize,
        /// complementary, rgb-only or depth-only
        #[arg(long, default_value = "complementary")]
        mode: ModalityMode,
        /// solids or aspect-ratios
        #[arg(long, default_value = "solids")]
        family: ShapeFamily,
        /// Add sensor-like holes to the depth frames.
        #[arg(long)]
        noisy: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Leave-one-instance-out splits for a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage one: train one stream with its classification head.
    TrainStream {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        modality: Modality,
        /// Directory for `<modality>_stream.ckpt` and `<modality>_stream_loss.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage two: train the fusion layers on two stream checkpoints.
    TrainFusion {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        /// Directory for `fusion.ckpt` and `fusion_loss.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a stream or fusion checkpoint on the held-out instances.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// Input modality of a stream checkpoint.
        #[arg(long)]
        modality: Option<Modality>,
        #[arg(long)]
        out: PathBuf,
        /// File stem of the written metrics.
        #[arg(long, default_value = "metrics")]
        stem: String,
    },
    /// Depth-only runs, one per encoding.
    SweepEncodings {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, value_delimiter = ',', default_value = "jet,gray,normals")]
        encodings: Vec<DepthEncoding>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full stage-wise experiment on one split.
    Run {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, default_value = "both")]
        streams: Streams,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class recall CSV and an optional bar chart from a metrics JSON.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        /// Manifest whose class names label the rows.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        chart: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CameraArgs {
    #[arg(long, requires_all = ["fy", "cx", "cy"])]
    fx: Option<f64>,
    #[arg(long, requires_all = ["fx", "cx", "cy"])]
    fy: Option<f64>,
    #[arg(long, requires_all = ["fx", "fy", "cy"])]
    cx: Option<f64>,
    #[arg(long, requires_all = ["fx", "fy", "cx"])]
    cy: Option<f64>,
}

impl CameraArgs {
    fn intrinsics(&self) -> Result<Option<CameraIntrinsics>> {
        match (self.fx, self.fy, self.cx, self.cy) {
            (Some(fx), Some(fy), Some(cx), Some(cy)) => Ok(Some(CameraIntrinsics::new(fx, fy, cx, cy)?)),
            _ => Ok(None),
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Split file written by `split`.
    #[arg(long)]
    split: PathBuf,
    #[arg(long, default_value_t = 0)]
    split_index: usize,
    /// Keep every n-th frame of each instance.
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, SplitSpec)> {
        let manifest = DatasetManifest::read(&self.manifest)?;
        let dataset = Dataset::load(&manifest, self.stride)?;
        let mut splits = SplitSpec::read_all(&self.split)?;
        if self.split_index >= splits.len() {
            return Err(config(format!(
                "split index {} out of range, file holds {}",
                self.split_index,
                splits.len()
            )));
        }
        Ok((dataset, splits.swap_remove(self.split_index)))
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// Network input side before cropping.
    #[arg(long, default_value_t = 64)]
    side: usize,
    /// Crop side; defaults to the 227/256 share of the side.
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long, default_value = "jet")]
    encoding: DepthEncoding,
    #[arg(long, default_value = "tile")]
    resize: ResizeMode,
    #[command(flatten)]
    camera: CameraArgs,
    /// Stage-one iterations.
    #[arg(long, default_value_t = 600)]
    iterations: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 300)]
    fusion_iterations: usize,
    #[arg(long, default_value_t = 32)]
    fusion_batch: usize,
    #[arg(long, value_delimiter = ',', default_value = "64")]
    fusion_widths: Vec<usize>,
    /// Keep updating the streams during fusion training.
    #[arg(long)]
    joint: bool,
    /// Mask library for training-time depth dropout.
    #[arg(long)]
    noise_lib: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    noise_prob: f64,
    /// Mask library applied to every test depth frame.
    #[arg(long)]
    test_noise: Option<PathBuf>,
    /// Master seed; the RGBDFUSE_SEED environment variable takes precedence.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let library = |p: &Path| -> Result<Arc<MaskLibrary>> { Ok(Arc::new(read_library(p)?)) };
        let cfg = PipelineConfig {
            side: self.side,
            crop: self.crop.unwrap_or_else(|| PipelineConfig::crop_for(self.side)),
            encoding: self.encoding,
            resize: self.resize,
            intrinsics: self.camera.intrinsics()?,
            streams: Streams::Both,
            fusion_widths: self.fusion_widths.clone(),
            stage1: TrainConfig::scaled(self.iterations, self.batch, self.lr, 0),
            stage2: TrainConfig {
                freeze_streams: !self.joint,
                ..TrainConfig::scaled(self.fusion_iterations, self.fusion_batch, self.lr, 0)
            },
            train_noise: match &self.noise_lib {
                Some(p) => Some(NoiseSetting { library: library(p)?, probability: self.noise_prob }),
                None => None,
            },
            test_noise: self.test_noise.as_deref().map(library).transpose()?,
            master_seed: master_seed(self.seed).map_err(config)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn write_curve(path: &Path, curve: &[LossRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    write_loss_csv(curve, std::io::BufWriter::new(file)).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn depth_frames(dir: &Path) -> Result<Vec<rgbdfuse::encoding::DepthImage>> {
    let entries = std::fs::read_dir(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(data(format!("{}: no PNG files", dir.display())));
    }
    paths.iter().map(|p| Ok(load_depth_png(p)?)).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode { method, input, out, camera } => {
            let depth = load_depth_png(&input)?;
            let img = method.encode(&depth, camera.intrinsics()?)?;
            save_rgb_png(&img, &out)?;
        }
        Command::Resize { mode, input, out, side } => {
            let img = load_rgb_png(&input)?;
            save_rgb_png(&ResizePolicy { mode, target_side: side }.apply(&img)?, &out)?;
        }
        Command::GenMasks { source, count, k, side, seed, out } => {
            if side == 0 {
                return Err(config("mask side must be positive"));
            }
            let (patches, kind) = match source.as_slice() {
                [s] if s == "synthetic" => (synthesize_patches(count, side, seed), MaskSource::Synthetic),
                [s, dir] if s == "import" => {
                    let frames = depth_frames(Path::new(dir))?;
                    (extract_patches(&frames, count, side, seed)?, MaskSource::Imported)
                }
                _ => return Err(config("--source expects `synthetic` or `import <dir>`")),
            };
            let lib = build_library(&patches, k, kind, seed)?;
            write_library(&lib, &out)?;
            println!("wrote {} masks of {side}x{side} to {}", lib.len(), out.display());
        }
        Command::Augment { lib, prob, input, out, seed } => {
            let cfg = AugmentConfig::new(Arc::new(read_library(&lib)?), prob, seed)?;
            let img = load_rgb_png(&input)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (noised, index) = apply_noise(&img, &cfg, &mut rng)?;
            save_rgb_png(&noised, &out)?;
            match index {
                Some(k) => println!("applied mask {k}"),
                None => println!("left unchanged"),
            }
        }
        Command::GenData { out, classes, instances, frames, side, mode, family, noisy, seed } => {
            let cfg = SyntheticSceneConfig {
                classes,
                instances,
                frames,
                side,
                mode,
                family,
                noisy,
                seed: master_seed(seed).map_err(config)?,
            };
            let dataset = generate_synthetic(&cfg)?;
            create_dir(&out)?;
            dataset.save(&out)?;
            println!("wrote {} samples to {}", dataset.len(), out.join(DatasetManifest::FILE_NAME).display());
        }
        Command::Split { manifest, n, seed, out } => {
            let manifest = DatasetManifest::read(&manifest)?;
            let splits = make_splits(&manifest.labels(), manifest.classes.len(), n, master_seed(seed).map_err(config)?)?;
            SplitSpec::write_all(&splits, &out)?;
        }
        Command::TrainStream { data: d, pipeline, modality, out } => {
            let cfg = pipeline.config()?;
            let (dataset, split) = d.load()?;
            let (train_idx, _) = split.partition(&dataset.labels());
            let train = prepare(&dataset, &train_idx, &cfg)?;
            let (net, curve) = train_stage_one(&train, modality, &cfg)?;
            create_dir(&out)?;
            let stem = format!("{}_stream", modality.name());
            save_checkpoint(&Network::Stream(net), &out.join(format!("{stem}.ckpt")))?;
            write_curve(&out.join(format!("{stem}_loss.csv")), &curve)?;
            if let Some(last) = curve.last() {
                println!("final loss {:.4}", last.loss);
            }
        }
        Command::TrainFusion { data: d, pipeline, rgb, depth, out } => {
            let cfg = pipeline.config()?;
            let stream = |p: &Path| match load_checkpoint(p)? {
                Network::Stream(net) => Ok(net),
                Network::Fusion(_) => Err(config(format!("{} holds a fusion network", p.display()))),
            };
            let (rgb, depth) = (stream(&rgb)?, stream(&depth)?);
            let (dataset, split) = d.load()?;
            let (train_idx, _) = split.partition(&dataset.labels());
            let train = prepare(&dataset, &train_idx, &cfg)?;
            let (net, curve) = train_stage_two(&train, rgb, depth, &cfg)?;
            create_dir(&out)?;
            save_checkpoint(&Network::Fusion(net), &out.join("fusion.ckpt"))?;
            write_curve(&out.join("fusion_loss.csv"), &curve)?;
            if let Some(last) = curve.last() {
                println!("final loss {:.4}", last.loss);
            }
        }
        Command::Eval { data: d, pipeline, ckpt, modality, out, stem } => {
            let mut cfg = pipeline.config()?;
            let net = load_checkpoint(&ckpt)?;
            let input = match &net {
                Network::Stream(s) => s.input_shape().to_vec(),
                Network::Fusion(f) => f.rgb().input_shape().to_vec(),
            };
            cfg.crop = input[1];
            cfg.validate()?;
            let (dataset, split) = d.load()?;
            let (_, test_idx) = split.partition(&dataset.labels());
            if test_idx.is_empty() {
                return Err(HarnessError::EmptyTestSet.into());
            }
            let test = prepare(&dataset, &test_idx, &cfg)?;
            let noise = cfg.test_noise.clone().map(|lib| (lib, derive_seed(cfg.master_seed, "test/noise")));
            let report = match &net {
                Network::Stream(s) => {
                    let modality = modality.ok_or_else(|| config("--modality is required for a stream checkpoint"))?;
                    let view = StreamView::new(&test, modality, cfg.crop).with_test_noise(noise);
                    evaluate_stream(s, &view, dataset.num_classes())?
                }
                Network::Fusion(f) => evaluate_fusion(f, &PairView::new(&test, cfg.crop).with_test_noise(noise))?,
            };
            create_dir(&out)?;
            report.write(&out, &stem, Some(dataset.classes()))?;
            println!("accuracy {:.4}", report.accuracy);
        }
        Command::SweepEncodings { data: d, pipeline, encodings, out } => {
            let cfg = pipeline.config()?;
            let (dataset, split) = d.load()?;
            let rows = sweep_encodings(&dataset, &split, &cfg, &encodings)?;
            create_dir(&out)?;
            let mut csv = String::from("encoding,accuracy\n");
            for row in &rows {
                csv.push_str(&format!("{},{}\n", row.encoding.name(), row.accuracy));
                row.metrics.write(&out, &format!("{}_metrics", row.encoding.name()), Some(dataset.classes()))?;
                println!("{:<8} {:.4}", row.encoding.name(), row.accuracy);
            }
            write_text(&out.join("sweep.csv"), &csv)?;
        }
        Command::Run { data: d, pipeline, streams, out } => {
            let cfg = PipelineConfig { streams, ..pipeline.config()? };
            let (dataset, split) = d.load()?;
            let outcome = run_experiment(&dataset, &split, &cfg, Some(&out))?;
            for (name, acc) in [
                ("rgb", outcome.rgb.map(|o| o.metrics.accuracy)),
                ("depth", outcome.depth.map(|o| o.metrics.accuracy)),
                ("fusion", outcome.fusion.map(|o| o.metrics.accuracy)),
            ] {
                if let Some(acc) = acc {
                    println!("{name:<7} {acc:.4}");
                }
            }
        }
        Command::Report { metrics, manifest, out, chart } => {
            let report = MetricsReport::read_json(&metrics)?;
            let names = match manifest {
                Some(p) => Some(DatasetManifest::read(&p)?.classes),
                None => None,
            };
            if names.as_ref().is_some_and(|n| n.len() != report.classes()) {
                return Err(config("manifest and metrics disagree on the number of classes"));
            }
            write_text(&out, &report.to_csv(names.as_deref()))?;
            if let Some(path) = chart {
                save_rgb_png(&render_recall_chart(&report), &path)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.err);
            ExitCode::from(f.code)
        }
    }
}
