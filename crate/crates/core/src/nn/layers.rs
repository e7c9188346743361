//! Layer kinds with forward and reverse-mode passes.
//!
//! Activations are batched: `[N, C, H, W]` for spatial layers and `[N, D]`
//! (or anything that flattens to it) for fully connected layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, gemm_at, gemm_bt};
use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Cross-correlation with zero padding.
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool { kernel: usize, stride: usize },
    Relu,
    /// Affine map over the flattened input.
    FullyConnected { out_dim: usize },
    Softmax,
}

impl LayerSpec {
    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let spatial = |what: &str| -> Result<(usize, usize, usize), NnError> {
            match input {
                &[c, h, w] => Ok((c, h, w)),
                _ => Err(NnError::InvalidConfig(format!(
                    "{what} needs a [channels, height, width] input, got {input:?}"
                ))),
            }
        };
        let window = |size: usize, k: usize, s: usize| -> Result<usize, NnError> {
            if k == 0 || s == 0 || size < k {
                Err(NnError::InvalidConfig(format!(
                    "window {k} with stride {s} does not fit extent {size}"
                )))
            } else {
                Ok((size - k) / s + 1)
            }
        };
        match *self {
            Self::Conv { out_channels, kernel, stride, pad } => {
                let (_, h, w) = spatial("conv")?;
                if out_channels == 0 {
                    return Err(NnError::InvalidConfig("conv with zero output channels".into()));
                }
                Ok(vec![
                    out_channels,
                    window(h + 2 * pad, kernel, stride)?,
                    window(w + 2 * pad, kernel, stride)?,
                ])
            }
            Self::MaxPool { kernel, stride } => {
                let (c, h, w) = spatial("max pool")?;
                Ok(vec![c, window(h, kernel, stride)?, window(w, kernel, stride)?])
            }
            Self::Relu | Self::Softmax => Ok(input.to_vec()),
            Self::FullyConnected { out_dim } => {
                if out_dim == 0 {
                    return Err(NnError::InvalidConfig("fully connected layer with zero width".into()));
                }
                Ok(vec![out_dim])
            }
        }
    }

    fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Self::Conv { out_channels, kernel, .. } => Some((
                vec![out_channels, input[0], kernel, kernel],
                vec![out_channels],
            )),
            Self::FullyConnected { out_dim } => {
                Some((vec![out_dim, input.iter().product()], vec![out_dim]))
            }
            _ => None,
        }
    }
}

/// Weight initialization range, as a function of fan-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, for layers feeding a ReLU.
    HeUniform,
    /// `U(-sqrt(3 / fan_in), sqrt(3 / fan_in))`, for classifier layers.
    LecunUniform,
}

/// A layer bound to its input shape and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    spec: LayerSpec,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    weight: Option<Tensor>,
    bias: Option<Tensor>,
}

/// Intermediate values kept from the forward pass for the backward pass.
#[derive(Debug)]
pub enum Cache {
    Conv { cols: Vec<f64> },
    MaxPool { argmax: Vec<usize> },
    Relu { output: Tensor },
    FullyConnected { input: Tensor },
    Softmax { output: Tensor },
}

impl Layer {
    pub fn new<R: Rng + ?Sized>(
        spec: LayerSpec,
        input_shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let output_shape = spec.output_shape(input_shape)?;
        let (weight, bias) = match spec.param_shapes(input_shape) {
            Some((ws, bs)) => {
                let fan_in: usize = ws[1..].iter().product();
                let bound = match init {
                    Init::HeUniform => (6.0 / fan_in as f64).sqrt(),
                    Init::LecunUniform => (3.0 / fan_in as f64).sqrt(),
                };
                let n: usize = ws.iter().product();
                let w = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                (Some(Tensor::new(ws, w)?), Some(Tensor::zeros(&bs)))
            }
            None => (None, None),
        };
        Ok(Self { spec, input_shape: input_shape.to_vec(), output_shape, weight, bias })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.weight.iter().chain(self.bias.iter()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weight.iter_mut().chain(self.bias.iter_mut()).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize, NnError> {
        let n = x.batch();
        let per_sample: usize = self.input_shape.iter().product();
        if x.shape().len() < 2 || x.sample_len() != per_sample {
            let mut expected = vec![n];
            expected.extend_from_slice(&self.input_shape);
            return Err(NnError::ShapeMismatch { expected, actual: x.shape().to_vec() });
        }
        Ok(n)
    }

    fn batched(&self, n: usize, data: Vec<f64>) -> Tensor {
        let mut shape = vec![n];
        shape.extend_from_slice(&self.output_shape);
        Tensor::new(shape, data).expect("layer output shape is consistent")
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, Cache), NnError> {
        let n = self.check_input(x)?;
        match self.spec {
            LayerSpec::Conv { out_channels, kernel, stride, pad } => {
                let w = self.weight.as_ref().expect("conv has weights");
                let b = self.bias.as_ref().expect("conv has bias");
                let geo = ConvGeometry::new(&self.input_shape, &self.output_shape, kernel, stride, pad);
                let rows = geo.rows();
                let spatial = geo.out_h * geo.out_w;
                let mut cols = vec![0.0; n * rows * spatial];
                let mut out = vec![0.0; n * out_channels * spatial];
                for s in 0..n {
                    let col = &mut cols[s * rows * spatial..(s + 1) * rows * spatial];
                    geo.im2col(x.sample(s), col);
                    let o = &mut out[s * out_channels * spatial..(s + 1) * out_channels * spatial];
                    for (c, chunk) in o.chunks_exact_mut(spatial).enumerate() {
                        chunk.fill(b.data()[c]);
                    }
                    gemm(w.data(), col, o, out_channels, rows, spatial, true);
                }
                Ok((self.batched(n, out), Cache::Conv { cols }))
            }
            LayerSpec::MaxPool { kernel, stride } => {
                let (c, h, w) = (self.input_shape[0], self.input_shape[1], self.input_shape[2]);
                let (oh, ow) = (self.output_shape[1], self.output_shape[2]);
                let total = n * c * oh * ow;
                let mut out = Vec::with_capacity(total);
                let mut argmax = Vec::with_capacity(total);
                for plane in 0..n * c {
                    let base = plane * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = base + oy * stride * w + ox * stride;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let i = base + (oy * stride + ky) * w + ox * stride + kx;
                                    // strict comparison: the first maximum wins ties
                                    if x.data()[i] > x.data()[best] {
                                        best = i;
                                    }
                                }
                            }
                            out.push(x.data()[best]);
                            argmax.push(best);
                        }
                    }
                }
                Ok((self.batched(n, out), Cache::MaxPool { argmax }))
            }
            LayerSpec::Relu => {
                let out = self.batched(n, x.data().iter().map(|&v| v.max(0.0)).collect());
                Ok((out.clone(), Cache::Relu { output: out }))
            }
            LayerSpec::FullyConnected { out_dim } => {
                let w = self.weight.as_ref().expect("fc has weights");
                let b = self.bias.as_ref().expect("fc has bias");
                let d = x.sample_len();
                let mut out: Vec<f64> = (0..n).flat_map(|_| b.data().iter().copied()).collect();
                gemm_bt(x.data(), w.data(), &mut out, n, d, out_dim, true);
                Ok((self.batched(n, out), Cache::FullyConnected { input: x.clone() }))
            }
            LayerSpec::Softmax => {
                let d = x.sample_len();
                let mut out = Vec::with_capacity(n * d);
                for s in 0..n {
                    out.extend(softmax(x.sample(s)));
                }
                let out = self.batched(n, out);
                Ok((out.clone(), Cache::Softmax { output: out }))
            }
        }
    }

    /// Returns the input gradient (when requested) and parameter gradients in
    /// [`Layer::params`] order.
    pub fn backward(
        &self,
        cache: &Cache,
        grad_out: &Tensor,
        input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>), NnError> {
        let n = grad_out.batch();
        let in_len: usize = self.input_shape.iter().product();
        let mut in_shape = vec![n];
        in_shape.extend_from_slice(&self.input_shape);
        match (&self.spec, cache) {
            (&LayerSpec::Conv { out_channels, kernel, stride, pad }, Cache::Conv { cols }) => {
                let w = self.weight.as_ref().expect("conv has weights");
                let geo = ConvGeometry::new(&self.input_shape, &self.output_shape, kernel, stride, pad);
                let rows = geo.rows();
                let spatial = geo.out_h * geo.out_w;
                let mut dw = vec![0.0; out_channels * rows];
                let mut db = vec![0.0; out_channels];
                let mut dx = if input_grad { vec![0.0; n * in_len] } else { Vec::new() };
                let mut dcol = vec![0.0; rows * spatial];
                for s in 0..n {
                    let g = grad_out.sample(s);
                    let col = &cols[s * rows * spatial..(s + 1) * rows * spatial];
                    gemm_bt(g, col, &mut dw, out_channels, spatial, rows, true);
                    for (c, chunk) in g.chunks_exact(spatial).enumerate() {
                        db[c] += chunk.iter().sum::<f64>();
                    }
                    if input_grad {
                        gemm_at(w.data(), g, &mut dcol, rows, out_channels, spatial, false);
                        geo.col2im(&dcol, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                let dx = input_grad.then(|| Tensor::new(in_shape, dx)).transpose()?;
                Ok((dx, vec![Tensor::new(w.shape().to_vec(), dw)?, Tensor::from_vec(db)]))
            }
            (LayerSpec::MaxPool { .. }, Cache::MaxPool { argmax }) => {
                let dx = if input_grad {
                    let mut dx = vec![0.0; n * in_len];
                    for (&src, &g) in argmax.iter().zip(grad_out.data()) {
                        dx[src] += g;
                    }
                    Some(Tensor::new(in_shape, dx)?)
                } else {
                    None
                };
                Ok((dx, Vec::new()))
            }
            (LayerSpec::Relu, Cache::Relu { output }) => {
                let dx = input_grad
                    .then(|| {
                        let d = output
                            .data()
                            .iter()
                            .zip(grad_out.data())
                            .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
                            .collect();
                        Tensor::new(in_shape, d)
                    })
                    .transpose()?;
                Ok((dx, Vec::new()))
            }
            (&LayerSpec::FullyConnected { out_dim }, Cache::FullyConnected { input }) => {
                let w = self.weight.as_ref().expect("fc has weights");
                let d = in_len;
                let mut dw = vec![0.0; out_dim * d];
                gemm_at(grad_out.data(), input.data(), &mut dw, out_dim, n, d, false);
                let mut db = vec![0.0; out_dim];
                for s in 0..n {
                    for (acc, g) in db.iter_mut().zip(grad_out.sample(s)) {
                        *acc += g;
                    }
                }
                let dx = if input_grad {
                    let mut dx = vec![0.0; n * d];
                    gemm(grad_out.data(), w.data(), &mut dx, n, out_dim, d, false);
                    Some(Tensor::new(input.shape().to_vec(), dx)?)
                } else {
                    None
                };
                Ok((dx, vec![Tensor::new(w.shape().to_vec(), dw)?, Tensor::from_vec(db)]))
            }
            (LayerSpec::Softmax, Cache::Softmax { output }) => {
                let dx = if input_grad {
                    let mut dx = Vec::with_capacity(n * in_len);
                    for s in 0..n {
                        let y = output.sample(s);
                        let g = grad_out.sample(s);
                        let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                        dx.extend(y.iter().zip(g).map(|(&yi, &gi)| yi * (gi - dot)));
                    }
                    Some(Tensor::new(in_shape, dx)?)
                } else {
                    None
                };
                Ok((dx, Vec::new()))
            }
            _ => Err(NnError::InvalidConfig("cache does not belong to this layer".into())),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

struct ConvGeometry {
    channels: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], output: &[usize], kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            channels: input[0],
            in_h: input[1],
            in_w: input[2],
            out_h: output[1],
            out_w: output[2],
            kernel,
            stride,
            pad,
        }
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Source index of `(c, ky, kx)` at output `(oy, ox)`, or `None` in padding.
    #[inline]
    fn source(&self, c: usize, ky: usize, kx: usize, oy: usize, ox: usize) -> Option<usize> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.in_h && x < self.in_w).then(|| (c * self.in_h + y) * self.in_w + x)
    }

    fn im2col(&self, input: &[f64], cols: &mut [f64]) {
        let spatial = self.out_h * self.out_w;
        let mut row = 0;
        for c in 0..self.channels {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let dst = &mut cols[row * spatial..(row + 1) * spatial];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            dst[oy * self.out_w + ox] =
                                self.source(c, ky, kx, oy, ox).map_or(0.0, |i| input[i]);
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], input_grad: &mut [f64]) {
        let spatial = self.out_h * self.out_w;
        let mut row = 0;
        for c in 0..self.channels {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let src = &cols[row * spatial..(row + 1) * spatial];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some(i) = self.source(c, ky, kx, oy, ox) {
                                input_grad[i] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(spec: LayerSpec, input: &[usize]) -> Layer {
        Layer::new(spec, input, Init::HeUniform, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn relu_example() {
        let l = layer(LayerSpec::Relu, &[3]);
        let y = l.forward(&Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_1x1_conv() {
        let spec = LayerSpec::Conv { out_channels: 2, kernel: 1, stride: 1, pad: 0 };
        let mut l = layer(spec, &[2, 3, 3]);
        l.weight = Some(Tensor::new(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let x = Tensor::new(vec![1, 2, 3, 3], (0..18).map(|v| v as f64 - 4.0).collect()).unwrap();
        let y = l.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn all_ones_3x3_conv_sums_to_nine() {
        let spec = LayerSpec::Conv { out_channels: 1, kernel: 3, stride: 1, pad: 0 };
        let mut l = layer(spec, &[1, 3, 3]);
        l.weight = Some(Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap());
        let y = l.forward(&Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn padded_conv_sees_zeros() {
        let spec = LayerSpec::Conv { out_channels: 1, kernel: 3, stride: 1, pad: 1 };
        let mut l = layer(spec, &[1, 2, 2]);
        l.weight = Some(Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap());
        let y = l.forward(&Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[10.0; 4]);
    }

    #[test]
    fn maxpool_first_index_wins() {
        let l = layer(LayerSpec::MaxPool { kernel: 2, stride: 2 }, &[1, 2, 2]);
        let x = Tensor::new(vec![1, 1, 2, 2], vec![5.0, 5.0, 1.0, 5.0]).unwrap();
        let (y, cache) = l.forward_cached(&x).unwrap();
        assert_eq!(y.data(), &[5.0]);
        let (dx, _) = l.backward(&cache, &Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(), true).unwrap();
        assert_eq!(dx.unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        assert!(LayerSpec::MaxPool { kernel: 3, stride: 1 }.output_shape(&[1, 2, 2]).is_err());
        assert!(LayerSpec::Conv { out_channels: 1, kernel: 3, stride: 1, pad: 0 }.output_shape(&[4]).is_err());
        let l = layer(LayerSpec::FullyConnected { out_dim: 2 }, &[3]);
        assert!(matches!(
            l.forward(&Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap()),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let s = softmax(&[1000.0, 0.0]);
        assert!((s[0] - 1.0).abs() < 1e-12 && s[1] < 1e-300 && s.iter().all(|v| v.is_finite()));
        // exp(1), exp(2), exp(3) over their sum
        let s = softmax(&[1.0, 2.0, 3.0]);
        for (a, b) in s.iter().zip([0.09003057, 0.24472847, 0.66524096]) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
