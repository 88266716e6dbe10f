use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::batchnorm::{BatchNormLayer, Mode};
use super::conv::Conv3dLayer;
use super::pool::AvgPool3d;
use super::tensor::{Param, Scalar, Tensor5};
use super::NetError;

/// Borrowed view of a named tensor, in serialization order.
pub struct NamedTensor<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

/// Mutable counterpart of [`NamedTensor`].
pub struct NamedTensorMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut Vec<T>,
}

/// Shared surface of every network stage.
pub trait Layer<T: Scalar> {
    /// Pure forward pass in inference mode.
    fn infer(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError>;
    /// Forward pass that records intermediates for [`Layer::backward`].
    fn forward(&mut self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError>;
    fn backward(&mut self, dy: &Tensor5<T>) -> Result<Tensor5<T>, NetError>;
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>);
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>);
    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>);
    fn set_mode(&mut self, mode: Mode);
    fn clear_cache(&mut self);
}

fn relu_in_place<T: Scalar>(x: &mut Tensor5<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

fn relu_mask<T: Scalar>(x: &Tensor5<T>) -> Vec<bool> {
    x.data().iter().map(|v| *v > T::zero()).collect()
}

fn apply_mask<T: Scalar>(dy: &Tensor5<T>, mask: &[bool]) -> Tensor5<T> {
    let mut g = dy.clone();
    for (v, keep) in g.data_mut().iter_mut().zip(mask) {
        if !keep {
            *v = T::zero();
        }
    }
    g
}

fn push_conv<'a, T: Scalar>(conv: &'a Conv3dLayer<T>, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
    out.push(NamedTensor {
        name: format!("{prefix}.weight"),
        shape: conv.weight.shape.clone(),
        data: &conv.weight.value,
    });
    if let Some(b) = &conv.bias {
        out.push(NamedTensor {
            name: format!("{prefix}.bias"),
            shape: b.shape.clone(),
            data: &b.value,
        });
    }
}

fn push_conv_mut<'a, T: Scalar>(conv: &'a mut Conv3dLayer<T>, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
    let shape = conv.weight.shape.clone();
    out.push(NamedTensorMut {
        name: format!("{prefix}.weight"),
        shape,
        data: &mut conv.weight.value,
    });
    if let Some(b) = &mut conv.bias {
        let shape = b.shape.clone();
        out.push(NamedTensorMut {
            name: format!("{prefix}.bias"),
            shape,
            data: &mut b.value,
        });
    }
}

fn push_bn<'a, T: Scalar>(bn: &'a BatchNormLayer<T>, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
    let c = vec![bn.channels()];
    out.push(NamedTensor { name: format!("{prefix}.gamma"), shape: c.clone(), data: &bn.gamma.value });
    out.push(NamedTensor { name: format!("{prefix}.beta"), shape: c.clone(), data: &bn.beta.value });
    out.push(NamedTensor { name: format!("{prefix}.running_mean"), shape: c.clone(), data: &bn.running_mean });
    out.push(NamedTensor { name: format!("{prefix}.running_var"), shape: c, data: &bn.running_var });
}

fn push_bn_mut<'a, T: Scalar>(bn: &'a mut BatchNormLayer<T>, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
    let c = vec![bn.channels()];
    out.push(NamedTensorMut { name: format!("{prefix}.gamma"), shape: c.clone(), data: &mut bn.gamma.value });
    out.push(NamedTensorMut { name: format!("{prefix}.beta"), shape: c.clone(), data: &mut bn.beta.value });
    out.push(NamedTensorMut { name: format!("{prefix}.running_mean"), shape: c.clone(), data: &mut bn.running_mean });
    out.push(NamedTensorMut { name: format!("{prefix}.running_var"), shape: c, data: &mut bn.running_var });
}

/// BN -> ReLU -> Conv3d, the composite unit used throughout the network.
#[derive(Debug, Clone)]
pub struct BnReluConv<T> {
    pub bn: BatchNormLayer<T>,
    pub conv: Conv3dLayer<T>,
    mask: Option<Vec<bool>>,
}

impl<T: Scalar> BnReluConv<T> {
    /// Same-padded `kernel³` convolution with stride 1 and no bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self, NetError> {
        let pad = kernel / 2;
        Ok(Self {
            bn: BatchNormLayer::new(in_channels),
            conv: Conv3dLayer::new(in_channels, out_channels, [kernel; 3], [1; 3], [pad; 3], false)?,
            mask: None,
        })
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.conv.init_he(rng);
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }
}

impl<T: Scalar> Layer<T> for BnReluConv<T> {
    fn infer(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let mut h = self.bn.infer(x)?;
        relu_in_place(&mut h);
        self.conv.infer(&h)
    }

    fn forward(&mut self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let mut h = self.bn.forward(x)?;
        relu_in_place(&mut h);
        self.mask = Some(relu_mask(&h));
        self.conv.forward(&h)
    }

    fn backward(&mut self, dy: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let mask = self.mask.take().ok_or(NetError::MissingForward("bn_relu_conv"))?;
        let g = self.conv.backward(dy)?;
        self.bn.backward(&apply_mask(&g, &mask))
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.bn.params_mut(out);
        self.conv.params_mut(out);
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        push_bn(&self.bn, &format!("{prefix}.bn"), out);
        push_conv(&self.conv, &format!("{prefix}.conv"), out);
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
        push_bn_mut(&mut self.bn, &format!("{prefix}.bn"), out);
        push_conv_mut(&mut self.conv, &format!("{prefix}.conv"), out);
    }

    fn set_mode(&mut self, mode: Mode) {
        self.bn.mode = mode;
    }

    fn clear_cache(&mut self) {
        self.mask = None;
        self.bn.clear_cache();
        self.conv.clear_cache();
    }
}

/// One dense unit: optional per-unit 1×1×1 bottleneck followed by the 3×3×3 composite.
#[derive(Debug, Clone)]
pub struct DenseUnit<T> {
    pub stages: Vec<BnReluConv<T>>,
}

impl<T: Scalar> DenseUnit<T> {
    fn infer(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let mut h = x.clone();
        for s in &self.stages {
            h = s.infer(&h)?;
        }
        Ok(h)
    }

    fn forward(&mut self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let mut h = x.clone();
        for s in &mut self.stages {
            h = s.forward(&h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, dy: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let mut g = dy.clone();
        for s in self.stages.iter_mut().rev() {
            g = s.backward(&g)?;
        }
        Ok(g)
    }
}

/// Dense block: a 1×1×1 bottleneck composite, then `L` units where unit `l` consumes the
/// channel concatenation `[f_0, f_1, ..., f_{l-1}]` and emits `growth_rate` channels.
/// The block output is `[f_0, f_1, ..., f_L]`.
#[derive(Debug, Clone)]
pub struct DenseBlock3d<T> {
    pub bottleneck: BnReluConv<T>,
    pub units: Vec<DenseUnit<T>>,
    growth_rate: usize,
    recorded: bool,
}

impl<T: Scalar> DenseBlock3d<T> {
    /// `bottleneck_channels` is the width of `f_0`; `unit_bottleneck` adds a per-unit
    /// 1×1×1 reduction to `4 * growth_rate` channels before each 3×3×3 convolution.
    pub fn new(
        in_channels: usize,
        bottleneck_channels: usize,
        layers: usize,
        growth_rate: usize,
        unit_bottleneck: bool,
    ) -> Result<Self, NetError> {
        if growth_rate == 0 && layers > 0 {
            return Err(NetError::Config("growth rate must be >= 1".into()));
        }
        let bottleneck = BnReluConv::new(in_channels, bottleneck_channels, 1)?;
        let mut units = Vec::with_capacity(layers);
        for l in 0..layers {
            let unit_in = bottleneck_channels + l * growth_rate;
            let stages = if unit_bottleneck {
                vec![
                    BnReluConv::new(unit_in, 4 * growth_rate, 1)?,
                    BnReluConv::new(4 * growth_rate, growth_rate, 3)?,
                ]
            } else {
                vec![BnReluConv::new(unit_in, growth_rate, 3)?]
            };
            units.push(DenseUnit { stages });
        }
        Ok(Self {
            bottleneck,
            units,
            growth_rate,
            recorded: false,
        })
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.bottleneck.init(rng);
        for u in &mut self.units {
            for s in &mut u.stages {
                s.init(rng);
            }
        }
    }

    pub fn in_channels(&self) -> usize {
        self.bottleneck.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.bottleneck.out_channels() + self.units.len() * self.growth_rate
    }

    /// Input width of each unit: `c_bottleneck + l * k`.
    pub fn unit_input_channels(&self) -> Vec<usize> {
        (0..self.units.len())
            .map(|l| self.bottleneck.out_channels() + l * self.growth_rate)
            .collect()
    }

    fn group_sizes(&self) -> Vec<usize> {
        std::iter::once(self.bottleneck.out_channels())
            .chain(std::iter::repeat_n(self.growth_rate, self.units.len()))
            .collect()
    }

    fn check_unit_input(&self, l: usize, x: &Tensor5<T>) -> Result<(), NetError> {
        let expected = self.bottleneck.out_channels() + l * self.growth_rate;
        if x.channels() != expected {
            return Err(NetError::Shape(format!(
                "dense unit {l} expected {expected} input channels, got {}",
                x.channels()
            )));
        }
        Ok(())
    }

    fn forward_features(&mut self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let mut features = vec![self.bottleneck.forward(x)?];
        for l in 0..self.units.len() {
            let refs: Vec<&Tensor5<T>> = features.iter().collect();
            let input = Tensor5::concat_channels(&refs)?;
            self.check_unit_input(l, &input)?;
            let f = self.units[l].forward(&input)?;
            features.push(f);
        }
        let refs: Vec<&Tensor5<T>> = features.iter().collect();
        Tensor5::concat_channels(&refs)
    }
}

impl<T: Scalar> Layer<T> for DenseBlock3d<T> {
    fn infer(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let f0 = self.bottleneck.infer(x)?;
        let mut features = vec![f0];
        for (l, unit) in self.units.iter().enumerate() {
            let refs: Vec<&Tensor5<T>> = features.iter().collect();
            let input = Tensor5::concat_channels(&refs)?;
            self.check_unit_input(l, &input)?;
            features.push(unit.infer(&input)?);
        }
        let refs: Vec<&Tensor5<T>> = features.iter().collect();
        Tensor5::concat_channels(&refs)
    }

    fn forward(&mut self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let out = self.forward_features(x)?;
        self.recorded = true;
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        if !self.recorded {
            return Err(NetError::MissingForward("dense_block"));
        }
        self.recorded = false;
        let sizes = self.group_sizes();
        let mut grads = dy.split_channels(&sizes)?;
        for l in (0..self.units.len()).rev() {
            let g_in = self.units[l].backward(&grads[l + 1])?;
            let parts = g_in.split_channels(&sizes[..=l])?;
            for (j, p) in parts.iter().enumerate() {
                grads[j].add_assign(p)?;
            }
        }
        self.bottleneck.backward(&grads[0])
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.bottleneck.params_mut(out);
        for u in &mut self.units {
            for s in &mut u.stages {
                s.params_mut(out);
            }
        }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        self.bottleneck.tensors(&format!("{prefix}.bottleneck"), out);
        for (l, u) in self.units.iter().enumerate() {
            for (i, s) in u.stages.iter().enumerate() {
                s.tensors(&format!("{prefix}.unit{l}.{i}"), out);
            }
        }
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
        self.bottleneck.tensors_mut(&format!("{prefix}.bottleneck"), out);
        for (l, u) in self.units.iter_mut().enumerate() {
            for (i, s) in u.stages.iter_mut().enumerate() {
                s.tensors_mut(&format!("{prefix}.unit{l}.{i}"), out);
            }
        }
    }

    fn set_mode(&mut self, mode: Mode) {
        self.bottleneck.set_mode(mode);
        for u in &mut self.units {
            for s in &mut u.stages {
                s.set_mode(mode);
            }
        }
    }

    fn clear_cache(&mut self) {
        self.recorded = false;
        self.bottleneck.clear_cache();
        for u in &mut self.units {
            for s in &mut u.stages {
                s.clear_cache();
            }
        }
    }
}

/// 1×1×1 composite compressing to `floor(theta * C)` channels, then 2×2×2 average pooling
/// with stride 2 in ceil mode.
#[derive(Debug, Clone)]
pub struct TransitionLayer3d<T> {
    pub conv: BnReluConv<T>,
    pub pool: AvgPool3d,
}

impl<T: Scalar> TransitionLayer3d<T> {
    pub fn new(in_channels: usize, compression: f64) -> Result<Self, NetError> {
        let out = compressed_channels(in_channels, compression)?;
        Ok(Self {
            conv: BnReluConv::new(in_channels, out, 1)?,
            pool: AvgPool3d::new([2; 3], [2; 3], [0; 3], true)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }
}

/// `floor(theta * C)`, rejecting results below one channel.
pub fn compressed_channels(channels: usize, compression: f64) -> Result<usize, NetError> {
    if !(compression > 0.0 && compression <= 1.0) {
        return Err(NetError::Config(format!(
            "compression must lie in (0, 1], got {compression}"
        )));
    }
    let out = (compression * channels as f64 + 1e-9).floor() as usize;
    if out == 0 {
        return Err(NetError::Config(format!(
            "compression {compression} leaves no channels out of {channels}"
        )));
    }
    Ok(out)
}

impl<T: Scalar> Layer<T> for TransitionLayer3d<T> {
    fn infer(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        self.pool.infer(&self.conv.infer(x)?)
    }

    fn forward(&mut self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let h = self.conv.forward(x)?;
        self.pool.forward(&h)
    }

    fn backward(&mut self, dy: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let g = self.pool.backward(dy)?;
        self.conv.backward(&g)
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.conv.params_mut(out);
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        self.conv.tensors(prefix, out);
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
        self.conv.tensors_mut(prefix, out);
    }

    fn set_mode(&mut self, mode: Mode) {
        self.conv.set_mode(mode);
    }

    fn clear_cache(&mut self) {
        self.conv.clear_cache();
        self.pool.clear_cache();
    }
}

/// Conv3d -> BN -> ReLU -> AvgPool3d entry stage.
#[derive(Debug, Clone)]
pub struct Stem<T> {
    pub conv: Conv3dLayer<T>,
    pub bn: BatchNormLayer<T>,
    pub pool: AvgPool3d,
    mask: Option<Vec<bool>>,
}

impl<T: Scalar> Stem<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pool_kernel: usize,
    ) -> Result<Self, NetError> {
        Ok(Self {
            conv: Conv3dLayer::new(in_channels, out_channels, [kernel; 3], [1, 2, 2], [kernel / 2; 3], false)?,
            bn: BatchNormLayer::new(out_channels),
            pool: AvgPool3d::new([pool_kernel; 3], [1, 2, 2], [pool_kernel / 2; 3], false)?,
            mask: None,
        })
    }

    /// Dims after the convolution (before pooling).
    pub fn conv_dims(&self, input: [usize; 5]) -> Result<[usize; 5], NetError> {
        self.conv.output_dims(input)
    }
}

impl<T: Scalar> Layer<T> for Stem<T> {
    fn infer(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let mut h = self.bn.infer(&self.conv.infer(x)?)?;
        relu_in_place(&mut h);
        self.pool.infer(&h)
    }

    fn forward(&mut self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let c = self.conv.forward(x)?;
        let mut h = self.bn.forward(&c)?;
        relu_in_place(&mut h);
        self.mask = Some(relu_mask(&h));
        self.pool.forward(&h)
    }

    fn backward(&mut self, dy: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let mask = self.mask.take().ok_or(NetError::MissingForward("stem"))?;
        let g = self.pool.backward(dy)?;
        let g = self.bn.backward(&apply_mask(&g, &mask))?;
        self.conv.backward(&g)
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.conv.params_mut(out);
        self.bn.params_mut(out);
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        push_conv(&self.conv, &format!("{prefix}.conv"), out);
        push_bn(&self.bn, &format!("{prefix}.bn"), out);
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
        push_conv_mut(&mut self.conv, &format!("{prefix}.conv"), out);
        push_bn_mut(&mut self.bn, &format!("{prefix}.bn"), out);
    }

    fn set_mode(&mut self, mode: Mode) {
        self.bn.mode = mode;
    }

    fn clear_cache(&mut self) {
        self.mask = None;
        self.conv.clear_cache();
        self.bn.clear_cache();
        self.pool.clear_cache();
    }
}

/// Fully-connected layer on `(N, C)` rows.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Vec<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Param::zeros(vec![out_features, in_features]),
            bias: Param::zeros(vec![out_features]),
            input: None,
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let fan_in = self.in_features() as f64;
        let normal = Normal::new(0.0, (1.0 / fan_in).sqrt()).expect("valid std");
        for w in &mut self.weight.value {
            *w = T::of(normal.sample(rng));
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn infer(&self, x: &[T], rows: usize) -> Vec<T> {
        let (fi, fo) = (self.in_features(), self.out_features());
        let mut out = vec![T::zero(); rows * fo];
        for n in 0..rows {
            let row = &x[n * fi..(n + 1) * fi];
            for o in 0..fo {
                let w = &self.weight.value[o * fi..(o + 1) * fi];
                let mut acc = self.bias.value[o];
                for (a, b) in w.iter().zip(row) {
                    acc += *a * *b;
                }
                out[n * fo + o] = acc;
            }
        }
        out
    }

    pub fn forward(&mut self, x: &[T], rows: usize) -> Vec<T> {
        let out = self.infer(x, rows);
        self.input = Some(x.to_vec());
        out
    }

    pub fn backward(&mut self, dy: &[T], rows: usize) -> Result<Vec<T>, NetError> {
        let x = self.input.take().ok_or(NetError::MissingForward("linear"))?;
        let (fi, fo) = (self.in_features(), self.out_features());
        if dy.len() != rows * fo {
            return Err(NetError::Shape(format!(
                "linear gradient has {} values, expected {}",
                dy.len(),
                rows * fo
            )));
        }
        let mut dx = vec![T::zero(); rows * fi];
        for n in 0..rows {
            for o in 0..fo {
                let g = dy[n * fo + o];
                self.bias.grad[o] += g;
                for i in 0..fi {
                    self.weight.grad[o * fi + i] += g * x[n * fi + i];
                    dx[n * fi + i] += g * self.weight.value[o * fi + i];
                }
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

/// BN -> ReLU -> global average pool -> fully connected. Outputs pre-softmax logits.
#[derive(Debug, Clone)]
pub struct ClassifierHead<T> {
    pub bn: BatchNormLayer<T>,
    pub fc: Linear<T>,
    mask: Option<Vec<bool>>,
    pooled_from: Option<[usize; 5]>,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn new(channels: usize, classes: usize) -> Self {
        Self {
            bn: BatchNormLayer::new(channels),
            fc: Linear::new(channels, classes),
            mask: None,
            pooled_from: None,
        }
    }

    fn global_pool(h: &Tensor5<T>) -> Vec<T> {
        let vol = T::of(h.volume() as f64);
        (0..h.batch())
            .flat_map(|n| (0..h.channels()).map(move |c| (n, c)))
            .map(|(n, c)| h.channel(n, c).iter().copied().sum::<T>() / vol)
            .collect()
    }

    /// Globally pooled features `(N, C)`, as seen by the fully-connected layer.
    pub fn features(&self, x: &Tensor5<T>) -> Result<Vec<T>, NetError> {
        let mut h = self.bn.infer(x)?;
        relu_in_place(&mut h);
        Ok(Self::global_pool(&h))
    }

    pub fn infer(&self, x: &Tensor5<T>) -> Result<Vec<T>, NetError> {
        Ok(self.fc.infer(&self.features(x)?, x.batch()))
    }

    pub fn forward(&mut self, x: &Tensor5<T>) -> Result<Vec<T>, NetError> {
        let mut h = self.bn.forward(x)?;
        relu_in_place(&mut h);
        self.mask = Some(relu_mask(&h));
        self.pooled_from = Some(h.dims());
        let pooled = Self::global_pool(&h);
        Ok(self.fc.forward(&pooled, x.batch()))
    }

    pub fn backward(&mut self, dlogits: &[T]) -> Result<Tensor5<T>, NetError> {
        let mask = self.mask.take().ok_or(NetError::MissingForward("classifier_head"))?;
        let dims = self.pooled_from.take().ok_or(NetError::MissingForward("classifier_head"))?;
        let dpooled = self.fc.backward(dlogits, dims[0])?;
        let vol = dims[2] * dims[3] * dims[4];
        let scale = T::one() / T::of(vol as f64);
        let mut data = Vec::with_capacity(dims.iter().product());
        for g in &dpooled {
            let share = *g * scale;
            data.extend(std::iter::repeat_n(share, vol));
        }
        let g = Tensor5::from_parts(dims, data);
        self.bn.backward(&apply_mask(&g, &mask))
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.bn.params_mut(out);
        out.push(&mut self.fc.weight);
        out.push(&mut self.fc.bias);
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        push_bn(&self.bn, &format!("{prefix}.bn"), out);
        out.push(NamedTensor { name: format!("{prefix}.fc.weight"), shape: self.fc.weight.shape.clone(), data: &self.fc.weight.value });
        out.push(NamedTensor { name: format!("{prefix}.fc.bias"), shape: self.fc.bias.shape.clone(), data: &self.fc.bias.value });
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
        push_bn_mut(&mut self.bn, &format!("{prefix}.bn"), out);
        let ws = self.fc.weight.shape.clone();
        let bs = self.fc.bias.shape.clone();
        out.push(NamedTensorMut { name: format!("{prefix}.fc.weight"), shape: ws, data: &mut self.fc.weight.value });
        out.push(NamedTensorMut { name: format!("{prefix}.fc.bias"), shape: bs, data: &mut self.fc.bias.value });
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.bn.mode = mode;
    }

    pub fn clear_cache(&mut self) {
        self.mask = None;
        self.pooled_from = None;
        self.bn.clear_cache();
        self.fc.clear_cache();
    }
}
