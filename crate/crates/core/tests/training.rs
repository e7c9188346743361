use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgbdfuse::nn::{
    checkpoint_bytes, train_fusion, train_stream, FusionNet, LayerSpec, Network, NnError,
    PairedSamples, Phase, Samples, StreamArch, StreamNet, Tensor, TrainConfig,
};

/// Two Gaussian blobs in the plane, padded with two noise coordinates.
struct Blobs {
    points: Vec<[f64; 4]>,
    labels: Vec<usize>,
}

impl Blobs {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -1.0 } else { 1.0 };
            points.push([
                centre + rng.gen_range(-0.6..0.6),
                centre + rng.gen_range(-0.6..0.6),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]);
            labels.push(c);
        }
        Self { points, labels }
    }
}

impl Samples for Blobs {
    fn len(&self) -> usize {
        self.points.len()
    }
    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
    fn load(&self, i: usize, _: Phase) -> Result<Tensor, NnError> {
        Ok(Tensor::from_vec(self.points[i].to_vec()))
    }
}

fn mlp(classes: usize) -> StreamArch {
    StreamArch {
        input_shape: vec![4],
        layers: vec![LayerSpec::FullyConnected { out_dim: 8 }, LayerSpec::Relu],
        head_classes: Some(classes),
    }
}

fn accuracy(net: &StreamNet, data: &Blobs) -> f64 {
    let xs: Vec<Tensor> = (0..data.len()).map(|i| data.load(i, Phase::Eval).unwrap()).collect();
    let preds = net.predict(&Tensor::stack(&xs).unwrap()).unwrap();
    let right = preds.iter().zip(&data.labels).filter(|((p, _), &l)| p == &l).count();
    right as f64 / data.len() as f64
}

#[test]
fn separable_task_reaches_full_training_accuracy() {
    let data = Blobs::new(64, 1);
    let net = StreamNet::new(mlp(2), 3).unwrap();
    let cfg = TrainConfig::scaled(500, 16, 0.05, 9);
    let (net, curve) = train_stream(net, &data, &cfg).unwrap();
    assert_eq!(curve.len(), 500);
    assert_eq!(accuracy(&net, &data), 1.0);
}

#[test]
fn moving_average_loss_does_not_increase() {
    let data = Blobs::new(40, 2);
    let net = StreamNet::new(mlp(2), 4).unwrap();
    let cfg = TrainConfig {
        lr_schedule: vec![(0, 0.05)],
        momentum: 0.9,
        batch_size: 40,
        max_iterations: 600,
        seed: 1,
        freeze_streams: false,
    };
    let (_, curve) = train_stream(net, &data, &cfg).unwrap();
    let losses: Vec<f64> = curve.iter().map(|r| r.loss).collect();
    let averages: Vec<f64> = losses.windows(100).map(|w| w.iter().sum::<f64>() / 100.0).collect();
    for (i, w) in averages.windows(2).enumerate() {
        assert!(w[1] <= w[0] + 1e-12, "moving average rose at {i}: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn zero_rate_leaves_parameters_unchanged() {
    let data = Blobs::new(20, 3);
    let net = StreamNet::new(mlp(2), 5).unwrap();
    let cfg = TrainConfig { lr_schedule: vec![(0, 0.0)], ..TrainConfig::scaled(50, 4, 0.1, 0) };
    let (trained, curve) = train_stream(net.clone(), &data, &cfg).unwrap();
    assert_eq!(trained, net);
    assert!(curve.iter().all(|r| r.lr == 0.0));
}

#[test]
fn fixed_seed_is_bit_reproducible() {
    let data = Blobs::new(30, 4);
    let cfg = TrainConfig::scaled(120, 8, 0.05, 77);
    let run = || {
        let (net, curve) = train_stream(StreamNet::new(mlp(2), 6).unwrap(), &data, &cfg).unwrap();
        (checkpoint_bytes(&Network::Stream(net)).unwrap(), curve)
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    let other = TrainConfig { seed: 78, ..cfg.clone() };
    let (net, _) = train_stream(StreamNet::new(mlp(2), 6).unwrap(), &data, &other).unwrap();
    assert_ne!(checkpoint_bytes(&Network::Stream(net)).unwrap(), a);
}

#[test]
fn stream_training_errors() {
    let data = Blobs::new(4, 0);
    let headless = StreamNet::new(mlp(2), 0).unwrap().discard_head();
    let cfg = TrainConfig::scaled(5, 2, 0.1, 0);
    assert!(matches!(train_stream(headless, &data, &cfg), Err(NnError::InvalidConfig(_))));
    let empty = Blobs { points: vec![], labels: vec![] };
    assert_eq!(train_stream(StreamNet::new(mlp(2), 0).unwrap(), &empty, &cfg).unwrap_err(), NnError::EmptyData);
    let bad = TrainConfig { batch_size: 0, ..cfg };
    assert!(train_stream(StreamNet::new(mlp(2), 0).unwrap(), &data, &bad).is_err());
}

/// Class is the XOR of two bits; the RGB view shows only bit a, the depth
/// view only bit b.
struct XorPairs {
    bits: Vec<(usize, usize)>,
    noise: Vec<[f64; 4]>,
}

impl XorPairs {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits = (0..n).map(|i| (i % 2, (i / 2) % 2)).collect();
        let noise = (0..n).map(|_| [(); 4].map(|_| rng.gen_range(-0.1..0.1))).collect();
        Self { bits, noise }
    }

    fn view(bit: usize, noise: &[f64]) -> Tensor {
        let s = if bit == 1 { 1.0 } else { -1.0 };
        Tensor::from_vec(vec![s + noise[0], -s + noise[1]])
    }
}

impl PairedSamples for XorPairs {
    fn len(&self) -> usize {
        self.bits.len()
    }
    fn label(&self, i: usize) -> usize {
        self.bits[i].0 ^ self.bits[i].1
    }
    fn load_pair(&self, i: usize, _: Phase) -> Result<(Tensor, Tensor), NnError> {
        let (a, b) = self.bits[i];
        Ok((Self::view(a, &self.noise[i][..2]), Self::view(b, &self.noise[i][2..])))
    }
}

fn feature_stream(seed: u64) -> StreamNet {
    let arch = StreamArch {
        input_shape: vec![2],
        layers: vec![LayerSpec::FullyConnected { out_dim: 6 }, LayerSpec::Relu],
        head_classes: None,
    };
    StreamNet::new(arch, seed).unwrap()
}

#[test]
fn frozen_fusion_solves_xor_and_keeps_streams_bitwise() {
    let data = XorPairs::new(64, 1);
    let fus = FusionNet::new(feature_stream(1), feature_stream(2), &[16], 2, 3).unwrap();
    let before_rgb = checkpoint_bytes(&Network::Stream(fus.rgb().clone())).unwrap();
    let before_depth = checkpoint_bytes(&Network::Stream(fus.depth().clone())).unwrap();
    let rgb_params: Vec<Vec<f64>> = fus.rgb().params().iter().map(|p| p.data().to_vec()).collect();
    let cfg = TrainConfig { freeze_streams: true, ..TrainConfig::scaled(1500, 16, 0.05, 5) };
    let (fus, _) = train_fusion(fus, &data, &cfg).unwrap();
    assert_eq!(checkpoint_bytes(&Network::Stream(fus.rgb().clone())).unwrap(), before_rgb);
    assert_eq!(checkpoint_bytes(&Network::Stream(fus.depth().clone())).unwrap(), before_depth);
    let after: Vec<Vec<f64>> = fus.rgb().params().iter().map(|p| p.data().to_vec()).collect();
    assert_eq!(after, rgb_params);

    let mut right = 0;
    for i in 0..data.len() {
        let (r, d) = data.load_pair(i, Phase::Eval).unwrap();
        let r = Tensor::stack(&[r]).unwrap();
        let d = Tensor::stack(&[d]).unwrap();
        right += usize::from(fus.predict(&r, &d).unwrap()[0].0 == data.label(i));
    }
    // either view alone carries no information about the label
    assert_eq!(right, data.len());
}

#[test]
fn frozen_streams_get_zero_gradients() {
    let data = XorPairs::new(8, 2);
    let fus = FusionNet::new(feature_stream(1), feature_stream(2), &[4], 2, 3).unwrap();
    let (r, d): (Vec<_>, Vec<_>) = (0..8).map(|i| data.load_pair(i, Phase::Eval).unwrap()).unzip();
    let labels: Vec<usize> = (0..8).map(|i| data.label(i)).collect();
    let (r, d) = (Tensor::stack(&r).unwrap(), Tensor::stack(&d).unwrap());
    let (_, grads) = fus.loss_and_grads(&r, &d, &labels, true).unwrap();
    let k = fus.stream_param_count();
    assert!(grads[..k].iter().all(|g| g.norm() == 0.0));
    assert!(grads[k..].iter().any(|g| g.norm() > 0.0));
    let (_, joint) = fus.loss_and_grads(&r, &d, &labels, false).unwrap();
    assert!(joint[..k].iter().any(|g| g.norm() > 0.0));
}

#[test]
fn joint_fusion_training_moves_streams() {
    let data = XorPairs::new(16, 3);
    let fus = FusionNet::new(feature_stream(1), feature_stream(2), &[4], 2, 3).unwrap();
    let before = fus.rgb().clone();
    let cfg = TrainConfig::scaled(20, 4, 0.05, 1);
    let (fus, _) = train_fusion(fus, &data, &cfg).unwrap();
    assert_ne!(fus.rgb(), &before);
}
