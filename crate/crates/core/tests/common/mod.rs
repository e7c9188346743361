#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgbdfuse::nn::{FusionNet, Layer, LayerSpec, Init, StreamArch, StreamNet, Tensor};

pub const EPS: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl GradReport {
    fn record(&mut self, what: String, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        self.worst = self.worst.max(e);
        if e > TOLERANCE {
            self.failures.push(format!("{what}: analytic {analytic:e} numeric {numeric:e} rel {e:e}"));
        }
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.worst = self.worst.max(other.worst);
        self.failures.extend(other.failures);
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks a single layer under the scalar objective `sum(r * layer(x))`,
/// probing `samples` random parameter entries and `samples` input entries.
pub fn check_layer(spec: LayerSpec, input: &[usize], batch: usize, samples: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Layer::new(spec, input, Init::HeUniform, &mut rng).unwrap();
    // non-zero biases so every parameter matters
    for p in layer.params_mut() {
        for v in p.data_mut() {
            if *v == 0.0 {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(input);
    let x = random_tensor(&shape, &mut rng);
    let (y, cache) = layer.forward_cached(&x).unwrap();
    let r = random_tensor(y.shape(), &mut rng);
    let objective = |layer: &Layer, x: &Tensor| -> f64 {
        let y = layer.forward(x).unwrap();
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let (dx, dp) = layer.backward(&cache, &r, true).unwrap();
    let dx = dx.unwrap();
    let mut report = GradReport::default();

    for _ in 0..samples {
        let i = rng.gen_range(0..x.len());
        let mut xp = x.clone();
        xp.data_mut()[i] += EPS;
        let mut xm = x.clone();
        xm.data_mut()[i] -= EPS;
        let numeric = (objective(&layer, &xp) - objective(&layer, &xm)) / (2.0 * EPS);
        report.record(format!("{spec:?} input[{i}]"), dx.data()[i], numeric);
    }
    let sizes: Vec<usize> = layer.params().iter().map(|p| p.len()).collect();
    if !sizes.is_empty() {
        for _ in 0..samples {
            let t = rng.gen_range(0..sizes.len());
            let i = rng.gen_range(0..sizes[t]);
            let orig = layer.params()[t].data()[i];
            layer.params_mut()[t].data_mut()[i] = orig + EPS;
            let plus = objective(&layer, &x);
            layer.params_mut()[t].data_mut()[i] = orig - EPS;
            let minus = objective(&layer, &x);
            layer.params_mut()[t].data_mut()[i] = orig;
            report.record(format!("{spec:?} param{t}[{i}]"), dp[t].data()[i], (plus - minus) / (2.0 * EPS));
        }
    }
    report
}

fn probe<N>(
    net: &mut N,
    grads: &[Tensor],
    samples: usize,
    rng: &mut ChaCha8Rng,
    label: &str,
    params_mut: impl Fn(&mut N) -> Vec<&mut Tensor>,
    loss: impl Fn(&N) -> f64,
) -> GradReport {
    let mut report = GradReport::default();
    let sizes: Vec<usize> = grads.iter().map(|g| g.len()).collect();
    for s in 0..samples {
        // sweep every tensor first, then pick at random
        let t = if s < sizes.len() { s } else { rng.gen_range(0..sizes.len()) };
        let i = rng.gen_range(0..sizes[t]);
        let orig = params_mut(net)[t].data()[i];
        params_mut(net)[t].data_mut()[i] = orig + EPS;
        let plus = loss(net);
        params_mut(net)[t].data_mut()[i] = orig - EPS;
        let minus = loss(net);
        params_mut(net)[t].data_mut()[i] = orig;
        report.record(format!("{label} param{t}[{i}]"), grads[t].data()[i], (plus - minus) / (2.0 * EPS));
    }
    report
}

/// Small stream with every layer kind in its body.
pub fn small_stream_arch(classes: usize) -> StreamArch {
    StreamArch {
        input_shape: vec![2, 9, 9],
        layers: vec![
            LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 2, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { kernel: 2, stride: 1 },
            LayerSpec::Conv { out_channels: 4, kernel: 2, stride: 1, pad: 0 },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { out_dim: 6 },
            LayerSpec::Relu,
        ],
        head_classes: Some(classes),
    }
}

pub fn check_stream(samples: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = StreamNet::new(small_stream_arch(3), seed).unwrap();
    let x = random_tensor(&[4, 2, 9, 9], &mut rng);
    let labels = [0, 2, 1, 2];
    let (_, grads) = net.loss_and_grads(&x, &labels).unwrap();
    probe(
        &mut net,
        &grads,
        samples,
        &mut rng,
        "stream",
        |n| n.params_mut(),
        |n| n.loss_and_grads(&x, &labels).unwrap().0,
    )
}

pub fn check_fusion(samples: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = |seed| {
        StreamNet::new(StreamArch { head_classes: None, ..small_stream_arch(3) }, seed).unwrap()
    };
    let mut net = FusionNet::new(s(seed), s(seed + 1), &[5, 4], 3, seed + 2).unwrap();
    let r = random_tensor(&[3, 2, 9, 9], &mut rng);
    let d = random_tensor(&[3, 2, 9, 9], &mut rng);
    let labels = [1, 0, 2];
    let (_, grads) = net.loss_and_grads(&r, &d, &labels, false).unwrap();
    probe(
        &mut net,
        &grads,
        samples,
        &mut rng,
        "fusion",
        |n| n.params_mut(),
        |n| n.loss_and_grads(&r, &d, &labels, false).unwrap().0,
    )
}

/// Every layer kind in isolation, then a whole stream and a whole fusion net.
pub fn full_gradient_check(seed: u64) -> GradReport {
    let mut report = GradReport::default();
    let cases: [(LayerSpec, &[usize]); 6] = [
        (LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 1, pad: 1 }, &[2, 5, 5]),
        (LayerSpec::Conv { out_channels: 2, kernel: 2, stride: 2, pad: 0 }, &[3, 6, 6]),
        (LayerSpec::MaxPool { kernel: 2, stride: 2 }, &[2, 4, 4]),
        (LayerSpec::Relu, &[10]),
        (LayerSpec::FullyConnected { out_dim: 4 }, &[2, 3, 3]),
        (LayerSpec::Softmax, &[5]),
    ];
    for (i, (spec, shape)) in cases.into_iter().enumerate() {
        report.merge(check_layer(spec, shape, 2, 12, seed + i as u64));
    }
    report.merge(check_stream(60, seed + 100));
    report.merge(check_fusion(60, seed + 200));
    report
}
