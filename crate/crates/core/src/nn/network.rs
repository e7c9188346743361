use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Cache, Init, Layer, LayerSpec};
use super::loss::softmax_cross_entropy;
use super::{NnError, Tensor};

/// A chain of layers with composed shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Sequential {
    /// Builds the chain, initializing every parametrized layer with `init`.
    pub fn new(
        input_shape: &[usize],
        specs: &[LayerSpec],
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NnError::InvalidConfig(format!("invalid input shape {input_shape:?}")));
        }
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = Layer::new(*spec, &shape, init, rng)?;
            shape = layer.output_shape().to_vec();
            layers.push(layer);
        }
        Ok(Self { input_shape: input_shape.to_vec(), layers })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map_or(&self.input_shape, |l| l.output_shape())
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, Vec<Cache>), NnError> {
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward_cached(&cur)?;
            caches.push(c);
            cur = y;
        }
        Ok((cur, caches))
    }

    /// Parameter gradients in [`Sequential::params`] order, and the input
    /// gradient when requested.
    pub fn backward(
        &self,
        caches: &[Cache],
        grad_out: &Tensor,
        input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>), NnError> {
        let mut grad = grad_out.clone();
        let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let need_input = input_grad || i > 0;
            let (dx, dp) = layer.backward(cache, &grad, need_input)?;
            per_layer.push(dp);
            if let Some(dx) = dx {
                grad = dx;
            }
        }
        per_layer.reverse();
        let dx = input_grad.then_some(grad);
        Ok((dx, per_layer.into_iter().flatten().collect()))
    }
}

/// Serializable description of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamArch {
    /// Per-sample input shape `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    /// Body layers; the last one yields the feature vector.
    pub layers: Vec<LayerSpec>,
    /// Classes of the softmax head, if the stream still has one.
    pub head_classes: Option<usize>,
}

impl StreamArch {
    /// The default small stream: two conv/pool stages and a 64-wide feature layer.
    pub fn toy(input_side: usize, classes: usize) -> Self {
        Self {
            input_shape: vec![3, input_side, input_side],
            layers: vec![
                LayerSpec::Conv { out_channels: 8, kernel: 5, stride: 2, pad: 0 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { kernel: 2, stride: 2 },
                LayerSpec::Conv { out_channels: 16, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { kernel: 2, stride: 2 },
                LayerSpec::FullyConnected { out_dim: 64 },
                LayerSpec::Relu,
            ],
            head_classes: Some(classes),
        }
    }
}

/// One recognition stream: feature body plus an optional classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamNet {
    arch: StreamArch,
    body: Sequential,
    head: Option<Layer>,
}

impl StreamNet {
    pub fn new(arch: StreamArch, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let body = Sequential::new(&arch.input_shape, &arch.layers, Init::HeUniform, &mut rng)?;
        let head = match arch.head_classes {
            Some(0) => return Err(NnError::InvalidConfig("head with zero classes".into())),
            Some(m) => Some(Layer::new(
                LayerSpec::FullyConnected { out_dim: m },
                &[body.output_len()],
                Init::LecunUniform,
                &mut rng,
            )?),
            None => None,
        };
        Ok(Self { arch, body, head })
    }

    pub fn arch(&self) -> &StreamArch {
        &self.arch
    }

    pub fn body(&self) -> &Sequential {
        &self.body
    }

    pub fn has_head(&self) -> bool {
        self.head.is_some()
    }

    pub fn feature_len(&self) -> usize {
        self.body.output_len()
    }

    pub fn input_shape(&self) -> &[usize] {
        self.body.input_shape()
    }

    /// Drops the classification head, leaving a feature extractor.
    pub fn discard_head(mut self) -> Self {
        self.head = None;
        self.arch.head_classes = None;
        self
    }

    /// Body parameters followed by head parameters.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.body.params();
        if let Some(h) = &self.head {
            p.extend(h.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.body.params_mut();
        if let Some(h) = &mut self.head {
            p.extend(h.params_mut());
        }
        p
    }

    /// Feature-layer activations, `[N, feature_len]`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let f = self.body.forward(x)?;
        let n = f.batch();
        f.reshape(vec![n, self.feature_len()])
    }

    /// Class scores (logits) when a head is present, features otherwise.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let f = self.features(x)?;
        match &self.head {
            Some(h) => h.forward(&f),
            None => Ok(f),
        }
    }

    pub(crate) fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, StreamCache), NnError> {
        let (f, body) = self.body.forward_cached(x)?;
        let n = f.batch();
        let f = f.reshape(vec![n, self.feature_len()])?;
        match &self.head {
            Some(h) => {
                let (y, hc) = h.forward_cached(&f)?;
                Ok((y, StreamCache { body, head: Some(hc) }))
            }
            None => Ok((f, StreamCache { body, head: None })),
        }
    }

    pub(crate) fn backward(
        &self,
        cache: &StreamCache,
        grad_out: &Tensor,
    ) -> Result<Vec<Tensor>, NnError> {
        let (grad, head_grads) = match (&self.head, &cache.head) {
            (Some(h), Some(hc)) => {
                let (dx, dp) = h.backward(hc, grad_out, true)?;
                (dx.expect("input gradient requested"), dp)
            }
            _ => (grad_out.clone(), Vec::new()),
        };
        let mut out_shape = vec![grad.batch()];
        out_shape.extend_from_slice(self.body.output_shape());
        let grad = grad.reshape(out_shape)?;
        let (_, mut grads) = self.body.backward(&cache.body, &grad, false)?;
        grads.extend(head_grads);
        Ok(grads)
    }

    /// Mean cross-entropy of a labeled batch and its gradients in
    /// [`StreamNet::params`] order. Requires a head.
    pub fn loss_and_grads(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>), NnError> {
        if self.head.is_none() {
            return Err(NnError::InvalidConfig("loss needs a classification head".into()));
        }
        let (logits, cache) = self.forward_cached(x)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
        Ok((loss, self.backward(&cache, &dlogits)?))
    }

    /// Class index and probabilities per sample. Requires a head.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<(usize, Vec<f64>)>, NnError> {
        if self.head.is_none() {
            return Err(NnError::InvalidConfig("prediction needs a classification head".into()));
        }
        let logits = self.forward(x)?;
        Ok((0..logits.batch()).map(|i| super::predict(logits.sample(i))).collect())
    }
}

pub(crate) struct StreamCache {
    body: Vec<Cache>,
    head: Option<Cache>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionArch {
    pub rgb: StreamArch,
    pub depth: StreamArch,
    /// Widths of the fully connected fusion layers, each followed by a ReLU.
    pub fusion_widths: Vec<usize>,
    pub classes: usize,
}

/// Two headless streams whose features are concatenated (RGB first) and fed
/// through fusion layers into a softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionNet {
    rgb: StreamNet,
    depth: StreamNet,
    fusion_widths: Vec<usize>,
    fusion: Sequential,
    classifier: Layer,
}

pub(crate) struct FusionCache {
    rgb: Option<StreamCache>,
    depth: Option<StreamCache>,
    fusion: Vec<Cache>,
    classifier: Cache,
}

impl FusionNet {
    /// Joins two stage-one streams. Both must already have had their heads
    /// discarded.
    pub fn new(
        rgb: StreamNet,
        depth: StreamNet,
        fusion_widths: &[usize],
        classes: usize,
        seed: u64,
    ) -> Result<Self, NnError> {
        if rgb.has_head() || depth.has_head() {
            return Err(NnError::NotPretrained);
        }
        if fusion_widths.is_empty() {
            return Err(NnError::InvalidConfig("at least one fusion layer is required".into()));
        }
        if classes == 0 {
            return Err(NnError::InvalidConfig("classifier with zero classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs: Vec<LayerSpec> = fusion_widths
            .iter()
            .flat_map(|&w| [LayerSpec::FullyConnected { out_dim: w }, LayerSpec::Relu])
            .collect();
        let concat = rgb.feature_len() + depth.feature_len();
        let fusion = Sequential::new(&[concat], &specs, Init::HeUniform, &mut rng)?;
        let classifier = Layer::new(
            LayerSpec::FullyConnected { out_dim: classes },
            fusion.output_shape(),
            Init::LecunUniform,
            &mut rng,
        )?;
        Ok(Self { rgb, depth, fusion_widths: fusion_widths.to_vec(), fusion, classifier })
    }

    pub fn arch(&self) -> FusionArch {
        FusionArch {
            rgb: self.rgb.arch().clone(),
            depth: self.depth.arch().clone(),
            fusion_widths: self.fusion_widths.clone(),
            classes: self.classes(),
        }
    }

    /// Rebuilds an untrained network of the given shape.
    pub fn from_arch(arch: &FusionArch, seed: u64) -> Result<Self, NnError> {
        if arch.rgb.head_classes.is_some() || arch.depth.head_classes.is_some() {
            return Err(NnError::NotPretrained);
        }
        let rgb = StreamNet::new(arch.rgb.clone(), seed)?;
        let depth = StreamNet::new(arch.depth.clone(), seed.wrapping_add(1))?;
        Self::new(rgb, depth, &arch.fusion_widths, arch.classes, seed.wrapping_add(2))
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_shape()[0]
    }

    pub fn rgb(&self) -> &StreamNet {
        &self.rgb
    }

    pub fn depth(&self) -> &StreamNet {
        &self.depth
    }

    /// Number of leading tensors in [`FusionNet::params`] that belong to the streams.
    pub fn stream_param_count(&self) -> usize {
        self.rgb.params().len() + self.depth.params().len()
    }

    /// RGB stream, depth stream, fusion layers, classifier.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.rgb.params();
        p.extend(self.depth.params());
        p.extend(self.fusion.params());
        p.extend(self.classifier.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.rgb.params_mut();
        p.extend(self.depth.params_mut());
        p.extend(self.fusion.params_mut());
        p.extend(self.classifier.params_mut());
        p
    }

    fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
        let n = a.batch();
        if b.batch() != n {
            return Err(NnError::ShapeMismatch { expected: vec![n], actual: vec![b.batch()] });
        }
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            data.extend_from_slice(a.sample(i));
            data.extend_from_slice(b.sample(i));
        }
        Tensor::new(vec![n, a.sample_len() + b.sample_len()], data)
    }

    /// Class scores (logits), `[N, classes]`.
    pub fn forward(&self, rgb: &Tensor, depth: &Tensor) -> Result<Tensor, NnError> {
        let joint = Self::concat(&self.rgb.features(rgb)?, &self.depth.features(depth)?)?;
        self.classifier.forward(&self.fusion.forward(&joint)?)
    }

    pub(crate) fn forward_cached(
        &self,
        rgb: &Tensor,
        depth: &Tensor,
        frozen: bool,
    ) -> Result<(Tensor, FusionCache), NnError> {
        let (fr, cr, fd, cd) = if frozen {
            (self.rgb.features(rgb)?, None, self.depth.features(depth)?, None)
        } else {
            let (fr, cr) = self.rgb.forward_cached(rgb)?;
            let (fd, cd) = self.depth.forward_cached(depth)?;
            (fr, Some(cr), fd, Some(cd))
        };
        let joint = Self::concat(&fr, &fd)?;
        let (h, fusion) = self.fusion.forward_cached(&joint)?;
        let (y, classifier) = self.classifier.forward_cached(&h)?;
        Ok((y, FusionCache { rgb: cr, depth: cd, fusion, classifier }))
    }

    /// Gradients in [`FusionNet::params`] order. Streams forwarded as frozen
    /// get all-zero gradients.
    pub(crate) fn backward(&self, cache: &FusionCache, grad_out: &Tensor) -> Result<Vec<Tensor>, NnError> {
        let (dh, dcls) = self.classifier.backward(&cache.classifier, grad_out, true)?;
        let (djoint, dfus) = self.fusion.backward(&cache.fusion, &dh.expect("requested"), true)?;
        let djoint = djoint.expect("requested");
        let n = djoint.batch();
        let (lr, ld) = (self.rgb.feature_len(), self.depth.feature_len());
        let stream_grads = |net: &StreamNet, cache: &Option<StreamCache>, offset: usize, len: usize| {
            match cache {
                Some(c) => {
                    let mut g = Vec::with_capacity(n * len);
                    for i in 0..n {
                        g.extend_from_slice(&djoint.sample(i)[offset..offset + len]);
                    }
                    net.backward(c, &Tensor::new(vec![n, len], g)?)
                }
                None => Ok(net.params().iter().map(|p| Tensor::zeros(p.shape())).collect()),
            }
        };
        let mut grads = stream_grads(&self.rgb, &cache.rgb, 0, lr)?;
        grads.extend(stream_grads(&self.depth, &cache.depth, lr, ld)?);
        grads.extend(dfus);
        grads.extend(dcls);
        Ok(grads)
    }

    /// Mean cross-entropy of a labeled batch and its gradients in
    /// [`FusionNet::params`] order; `frozen` zeroes the stream gradients.
    pub fn loss_and_grads(
        &self,
        rgb: &Tensor,
        depth: &Tensor,
        labels: &[usize],
        frozen: bool,
    ) -> Result<(f64, Vec<Tensor>), NnError> {
        let (logits, cache) = self.forward_cached(rgb, depth, frozen)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
        Ok((loss, self.backward(&cache, &dlogits)?))
    }

    pub fn predict(&self, rgb: &Tensor, depth: &Tensor) -> Result<Vec<(usize, Vec<f64>)>, NnError> {
        let logits = self.forward(rgb, depth)?;
        Ok((0..logits.batch()).map(|i| super::predict(logits.sample(i))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_stream_shapes() {
        let net = StreamNet::new(StreamArch::toy(57, 5), 1).unwrap();
        assert_eq!(net.feature_len(), 64);
        let x = Tensor::zeros(&[2, 3, 57, 57]);
        assert_eq!(net.forward(&x).unwrap().shape(), &[2, 5]);
        let headless = net.discard_head();
        assert_eq!(headless.forward(&x).unwrap().shape(), &[2, 64]);
        assert!(headless.forward(&Tensor::zeros(&[1, 3, 50, 57])).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = StreamNet::new(StreamArch::toy(28, 3), 7).unwrap();
        let b = StreamNet::new(StreamArch::toy(28, 3), 7).unwrap();
        let c = StreamNet::new(StreamArch::toy(28, 3), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fusion_requires_headless_streams_and_layers() {
        let s = |h| StreamNet::new(StreamArch { head_classes: h, ..StreamArch::toy(28, 2) }, 0).unwrap();
        assert_eq!(
            FusionNet::new(s(Some(2)), s(None), &[8], 2, 0).unwrap_err(),
            NnError::NotPretrained
        );
        assert!(matches!(
            FusionNet::new(s(None), s(None), &[], 2, 0),
            Err(NnError::InvalidConfig(_))
        ));
        let f = FusionNet::new(s(None), s(None), &[8], 3, 0).unwrap();
        let x = Tensor::zeros(&[4, 3, 28, 28]);
        assert_eq!(f.forward(&x, &x).unwrap().shape(), &[4, 3]);
        for (_, p) in f.predict(&x, &x).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
