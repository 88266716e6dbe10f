use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::Mode;
use super::layers::{ClassifierHead, DenseBlock3d, Layer, NamedTensor, NamedTensorMut, Stem, TransitionLayer3d};
use super::loss::softmax_rows;
use super::tensor::{Param, Scalar, Tensor5};
use super::NetError;

/// Architecture hyper-parameters. [`StDenseNetConfig::default`] is the full-size network
/// on `3 × 16 × 100 × 100` clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StDenseNetConfig {
    pub growth_rate: usize,
    pub num_blocks: usize,
    pub layers_per_block: usize,
    pub input_channels: usize,
    pub input_depth: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub num_classes: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_pool_kernel: usize,
    /// Transition compression `theta`.
    pub compression: f64,
    /// Width of each block's leading 1×1×1 bottleneck; `None` keeps the input width.
    pub bottleneck_channels: Option<usize>,
    /// Adds a 1×1×1 reduction inside every dense unit as well.
    pub unit_bottleneck: bool,
}

impl Default for StDenseNetConfig {
    fn default() -> Self {
        Self {
            growth_rate: 24,
            num_blocks: 3,
            layers_per_block: 4,
            input_channels: 3,
            input_depth: 16,
            input_height: 100,
            input_width: 100,
            num_classes: 2,
            stem_channels: 48,
            stem_kernel: 7,
            stem_pool_kernel: 3,
            compression: 0.5,
            bottleneck_channels: None,
            unit_bottleneck: false,
        }
    }
}

impl StDenseNetConfig {
    /// Small network on `3 × 16 × 32 × 32` clips for CPU-scale training runs.
    pub fn reduced() -> Self {
        Self {
            growth_rate: 4,
            num_blocks: 2,
            layers_per_block: 2,
            input_height: 32,
            input_width: 32,
            stem_channels: 8,
            stem_kernel: 3,
            ..Self::default()
        }
    }

    /// Single-block network on `3 × 4 × 8 × 8` clips used by the gradient checker.
    pub fn gradcheck() -> Self {
        Self {
            growth_rate: 4,
            num_blocks: 1,
            layers_per_block: 2,
            input_depth: 4,
            input_height: 8,
            input_width: 8,
            stem_channels: 8,
            stem_kernel: 3,
            ..Self::default()
        }
    }

    /// `(C, D, H, W)` of one input clip.
    pub fn input_dims(&self) -> [usize; 4] {
        [self.input_channels, self.input_depth, self.input_height, self.input_width]
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let positive = [
            ("growth_rate", self.growth_rate),
            ("num_blocks", self.num_blocks),
            ("input_channels", self.input_channels),
            ("input_depth", self.input_depth),
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("stem_channels", self.stem_channels),
            ("stem_kernel", self.stem_kernel),
            ("stem_pool_kernel", self.stem_pool_kernel),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(NetError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.num_classes < 2 {
            return Err(NetError::Config("num_classes must be >= 2".into()));
        }
        if self.bottleneck_channels == Some(0) {
            return Err(NetError::Config("bottleneck_channels must be >= 1".into()));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(NetError::Config(format!(
                "compression must lie in (0, 1], got {}",
                self.compression
            )));
        }
        Ok(())
    }
}

/// Pixel preprocessing: `((p * scale) - mean[c]) / std[c]` per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub scale: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            scale: 1.0 / 255.0,
            mean: vec![0.5; 3],
            std: vec![0.25; 3],
        }
    }
}

impl Normalization {
    pub fn apply(&self, channel: usize, pixel: u8) -> f64 {
        (f64::from(pixel) * self.scale - self.mean[channel]) / self.std[channel]
    }
}

/// One entry of the forward shape trace: stage name and output `(N, C, D, H, W)`.
pub type ShapeTrace = Vec<(String, [usize; 5])>;

/// Spatio-temporal DenseNet: stem, `num_blocks` dense blocks separated by transition
/// layers, and a global-pool classifier.
#[derive(Debug, Clone)]
pub struct StDenseNet<T> {
    config: StDenseNetConfig,
    normalization: Normalization,
    stem: Stem<T>,
    blocks: Vec<DenseBlock3d<T>>,
    transitions: Vec<TransitionLayer3d<T>>,
    head: ClassifierHead<T>,
    recorded_batch: Option<usize>,
}

impl<T: Scalar> StDenseNet<T> {
    /// Builds and initializes the network (He-normal convolutions, unit BN, zero biases).
    pub fn new(config: StDenseNetConfig, seed: u64) -> Result<Self, NetError> {
        let mut model = Self::build(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.stem.conv.init_he(&mut rng);
        for (i, block) in model.blocks.iter_mut().enumerate() {
            block.init(&mut rng);
            if let Some(t) = model.transitions.get_mut(i) {
                t.conv.init(&mut rng);
            }
        }
        model.head.fc.init(&mut rng);
        Ok(model)
    }

    /// Builds the topology with all-zero weights.
    pub fn build(config: StDenseNetConfig) -> Result<Self, NetError> {
        config.validate()?;
        let stem = Stem::new(
            config.input_channels,
            config.stem_channels,
            config.stem_kernel,
            config.stem_pool_kernel,
        )?;
        let mut channels = config.stem_channels;
        let mut blocks = Vec::with_capacity(config.num_blocks);
        let mut transitions = Vec::with_capacity(config.num_blocks.saturating_sub(1));
        for b in 0..config.num_blocks {
            let width = config.bottleneck_channels.unwrap_or(channels);
            let block = DenseBlock3d::new(
                channels,
                width,
                config.layers_per_block,
                config.growth_rate,
                config.unit_bottleneck,
            )?;
            channels = block.out_channels();
            blocks.push(block);
            if b + 1 < config.num_blocks {
                let t = TransitionLayer3d::new(channels, config.compression)?;
                channels = t.out_channels();
                transitions.push(t);
            }
        }
        let head = ClassifierHead::new(channels, config.num_classes);
        Ok(Self {
            config,
            normalization: Normalization::default(),
            stem,
            blocks,
            transitions,
            head,
            recorded_batch: None,
        })
    }

    pub fn config(&self) -> &StDenseNetConfig {
        &self.config
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn set_normalization(&mut self, normalization: Normalization) {
        self.normalization = normalization;
    }

    pub fn blocks(&self) -> &[DenseBlock3d<T>] {
        &self.blocks
    }

    pub fn transitions(&self) -> &[TransitionLayer3d<T>] {
        &self.transitions
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn check_input(&self, x: &Tensor5<T>) -> Result<(), NetError> {
        let d = x.dims();
        if d[1..] != self.config.input_dims()[..] {
            return Err(NetError::Shape(format!(
                "model expects input (N, {:?}), got {:?}",
                self.config.input_dims(),
                d
            )));
        }
        Ok(())
    }

    /// Eval-mode logits, `N × classes` row-major. Pure in `(weights, input)`.
    pub fn logits(&self, x: &Tensor5<T>) -> Result<Vec<T>, NetError> {
        Ok(self.logits_traced(x)?.0)
    }

    /// Eval-mode logits plus the output dims of every named stage.
    pub fn logits_traced(&self, x: &Tensor5<T>) -> Result<(Vec<T>, ShapeTrace), NetError> {
        self.check_input(x)?;
        let mut trace = Vec::new();
        trace.push(("stem.conv".to_string(), self.stem.conv_dims(x.dims())?));
        let mut h = self.stem.infer(x)?;
        trace.push(("stem.pool".to_string(), h.dims()));
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.infer(&h)?;
            trace.push((format!("block{}", i + 1), h.dims()));
            if let Some(t) = self.transitions.get(i) {
                let c = t.conv.infer(&h)?;
                trace.push((format!("transition{}.conv", i + 1), c.dims()));
                h = t.pool.infer(&c)?;
                trace.push((format!("transition{}.pool", i + 1), h.dims()));
            }
        }
        trace.push(("global_pool".to_string(), [x.batch(), h.channels(), 1, 1, 1]));
        let logits = self.head.infer(&h)?;
        trace.push(("fc".to_string(), [x.batch(), self.config.num_classes, 1, 1, 1]));
        Ok((logits, trace))
    }

    /// Eval-mode class probabilities, one row per sample.
    pub fn forward(&self, x: &Tensor5<T>) -> Result<Vec<Vec<T>>, NetError> {
        let logits = self.logits(x)?;
        Ok(softmax_rows(&logits, self.config.num_classes))
    }

    /// Forward pass that records intermediates; batch norm follows the current mode.
    pub fn forward_train(&mut self, x: &Tensor5<T>) -> Result<Vec<T>, NetError> {
        self.check_input(x)?;
        self.clear_cache();
        let mut h = self.stem.forward(x)?;
        for (i, block) in self.blocks.iter_mut().enumerate() {
            h = block.forward(&h)?;
            if let Some(t) = self.transitions.get_mut(i) {
                h = t.forward(&h)?;
            }
        }
        let logits = self.head.forward(&h)?;
        self.recorded_batch = Some(x.batch());
        Ok(logits)
    }

    /// Backpropagates `dL/dlogits` through the recorded pass, accumulating parameter
    /// gradients, and returns `dL/dinput`.
    pub fn backward(&mut self, dlogits: &[T]) -> Result<Tensor5<T>, NetError> {
        let batch = self.recorded_batch.take().ok_or(NetError::MissingForward("st_densenet"))?;
        if dlogits.len() != batch * self.config.num_classes {
            return Err(NetError::Shape(format!(
                "logit gradient has {} values, expected {}",
                dlogits.len(),
                batch * self.config.num_classes
            )));
        }
        let mut g = self.head.backward(dlogits)?;
        for i in (0..self.blocks.len()).rev() {
            if let Some(t) = self.transitions.get_mut(i) {
                g = t.backward(&g)?;
            }
            g = self.blocks[i].backward(&g)?;
        }
        self.stem.backward(&g)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.stem.set_mode(mode);
        for b in &mut self.blocks {
            b.set_mode(mode);
        }
        for t in &mut self.transitions {
            t.set_mode(mode);
        }
        self.head.set_mode(mode);
    }

    pub fn clear_cache(&mut self) {
        self.recorded_batch = None;
        self.stem.clear_cache();
        for b in &mut self.blocks {
            b.clear_cache();
        }
        for t in &mut self.transitions {
            t.clear_cache();
        }
        self.head.clear_cache();
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        let Self { stem, blocks, transitions, head, .. } = self;
        stem.params_mut(&mut out);
        let mut trans = transitions.iter_mut();
        for block in blocks.iter_mut() {
            block.params_mut(&mut out);
            if let Some(t) = trans.next() {
                t.params_mut(&mut out);
            }
        }
        head.params_mut(&mut out);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    /// Every persistent tensor (parameters and running statistics) in serialization order.
    pub fn named_tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = Vec::new();
        self.stem.tensors("stem", &mut out);
        for (i, block) in self.blocks.iter().enumerate() {
            block.tensors(&format!("block{}", i + 1), &mut out);
            if let Some(t) = self.transitions.get(i) {
                t.tensors(&format!("transition{}", i + 1), &mut out);
            }
        }
        self.head.tensors("head", &mut out);
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<NamedTensorMut<'_, T>> {
        let mut out = Vec::new();
        let Self { stem, blocks, transitions, head, .. } = self;
        stem.tensors_mut("stem", &mut out);
        let mut trans = transitions.iter_mut();
        for (i, block) in blocks.iter_mut().enumerate() {
            block.tensors_mut(&format!("block{}", i + 1), &mut out);
            if let Some(t) = trans.next() {
                t.tensors_mut(&format!("transition{}", i + 1), &mut out);
            }
        }
        head.tensors_mut("head", &mut out);
        out
    }

    /// Copies every persistent tensor into a model of another element type.
    pub fn cast<U: Scalar>(&self) -> Result<StDenseNet<U>, NetError> {
        let mut other = StDenseNet::<U>::build(self.config.clone())?;
        other.normalization = self.normalization.clone();
        let src = self.named_tensors();
        for (dst, s) in other.named_tensors_mut().into_iter().zip(src) {
            debug_assert_eq!(dst.name, s.name);
            for (d, v) in dst.data.iter_mut().zip(s.data) {
                *d = U::of(v.as_f64());
            }
        }
        Ok(other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_channel_schedule() {
        let model = StDenseNet::<f32>::build(StDenseNetConfig::default()).unwrap();
        let outs: Vec<usize> = model.blocks().iter().map(|b| b.out_channels()).collect();
        assert_eq!(outs, vec![144, 168, 180]);
        let trans: Vec<usize> = model.transitions().iter().map(|t| t.out_channels()).collect();
        assert_eq!(trans, vec![72, 84]);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let model = StDenseNet::<f64>::new(StDenseNetConfig::gradcheck(), 1).unwrap();
        let x = Tensor5::zeros([1, 3, 4, 8, 9]).unwrap();
        assert!(matches!(model.forward(&x), Err(NetError::Shape(_))));
    }

    #[test]
    fn rows_are_distributions_and_batch_independent() {
        let model = StDenseNet::<f64>::new(StDenseNetConfig::gradcheck(), 2).unwrap();
        let one: Vec<f64> = (0..3 * 4 * 8 * 8).map(|i| ((i * 37) % 11) as f64 / 5.0 - 1.0).collect();
        let single = Tensor5::from_vec([1, 3, 4, 8, 8], one.clone()).unwrap();
        let twice = Tensor5::from_vec([2, 3, 4, 8, 8], [one.clone(), one].concat()).unwrap();
        let p1 = model.forward(&single).unwrap();
        let p2 = model.forward(&twice).unwrap();
        assert_eq!(p2[0], p2[1]);
        assert_eq!(p1[0], p2[0]);
        assert!((p1[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(model.forward(&single).unwrap(), p1);
    }

    #[test]
    fn backward_requires_forward() {
        let mut model = StDenseNet::<f64>::new(StDenseNetConfig::gradcheck(), 3).unwrap();
        assert!(matches!(model.backward(&[0.0, 0.0]), Err(NetError::MissingForward(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut model = StDenseNet::<f64>::new(StDenseNetConfig::gradcheck(), 4).unwrap();
        let x = Tensor5::full([2, 3, 4, 8, 8], 0.3).unwrap();
        model.forward_train(&x).unwrap();
        model.backward(&[0.0; 4]).unwrap();
        for p in model.params_mut() {
            assert!(p.grad.iter().all(|g| *g == 0.0));
        }
    }
}
