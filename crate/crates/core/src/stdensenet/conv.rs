use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::tensor::{Param, Scalar, Tensor5};
use super::NetError;

/// 3D cross-correlation layer. Weights are `(C_out, C_in, k_d, k_h, k_w)`.
#[derive(Debug, Clone)]
pub struct Conv3dLayer<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    input: Option<Tensor5<T>>,
}

/// `floor((input + 2 pad - kernel) / stride) + 1`, or `None` when that is below one.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = input + 2 * pad;
    if span < kernel || stride == 0 {
        return None;
    }
    Some((span - kernel) / stride + 1)
}

/// Output positions `x` whose tap `x * stride + k - pad` falls inside `[0, input)`.
fn valid_range(out: usize, input: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi = if input + pad > k {
        (input + pad - k).div_ceil(stride)
    } else {
        0
    };
    (lo.min(out), hi.min(out))
}

impl<T: Scalar> Conv3dLayer<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        bias: bool,
    ) -> Result<Self, NetError> {
        if in_channels == 0 || out_channels == 0 {
            return Err(NetError::Config("conv channel counts must be >= 1".into()));
        }
        if kernel.contains(&0) || stride.contains(&0) {
            return Err(NetError::Config(format!(
                "conv kernel {kernel:?} and stride {stride:?} must be >= 1"
            )));
        }
        let shape = vec![out_channels, in_channels, kernel[0], kernel[1], kernel[2]];
        Ok(Self {
            weight: Param::zeros(shape),
            bias: bias.then(|| Param::zeros(vec![out_channels])),
            stride,
            padding,
            input: None,
        })
    }

    /// He-normal initialization scaled by the fan-in.
    pub fn init_he<R: Rng>(&mut self, rng: &mut R) {
        let fan_in = self.in_channels() * self.kernel().iter().product::<usize>();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
        for w in &mut self.weight.value {
            *w = T::of(normal.sample(rng));
        }
        if let Some(b) = &mut self.bias {
            b.value.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn kernel(&self) -> [usize; 3] {
        [self.weight.shape[2], self.weight.shape[3], self.weight.shape[4]]
    }

    pub fn output_dims(&self, input: [usize; 5]) -> Result<[usize; 5], NetError> {
        if input[1] != self.in_channels() {
            return Err(NetError::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                input[1]
            )));
        }
        let k = self.kernel();
        let mut out = [input[0], self.out_channels(), 0, 0, 0];
        for a in 0..3 {
            out[a + 2] = conv_output_dim(input[a + 2], k[a], self.stride[a], self.padding[a])
                .ok_or_else(|| {
                    NetError::Shape(format!(
                        "conv output along axis {a} is empty for input {:?}, kernel {k:?}, stride {:?}, padding {:?}",
                        input, self.stride, self.padding
                    ))
                })?;
        }
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        conv3d_forward(x, self)
    }

    pub fn forward(&mut self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let y = conv3d_forward(x, self)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Accumulates weight/bias gradients and returns the gradient w.r.t. the input.
    pub fn backward(&mut self, dy: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let x = self.input.take().ok_or(NetError::MissingForward("conv3d"))?;
        let out_dims = self.output_dims(x.dims())?;
        if dy.dims() != out_dims {
            return Err(NetError::Shape(format!(
                "conv gradient has dims {:?}, expected {:?}",
                dy.dims(),
                out_dims
            )));
        }
        accumulate_weight_grad(&x, dy, self);
        if let Some(bias) = &mut self.bias {
            let vol = dy.volume();
            for n in 0..dy.batch() {
                for (o, g) in bias.grad.iter_mut().enumerate() {
                    let s: T = dy.channel(n, o).iter().copied().sum();
                    *g += s;
                }
            }
            debug_assert!(vol > 0);
        }
        Ok(input_grad(&x, dy, self))
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.weight);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
    }
}

struct Geometry {
    in_vol: [usize; 3],
    out_vol: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    fn of<T: Scalar>(layer: &Conv3dLayer<T>, x: [usize; 5], y: [usize; 5]) -> Self {
        Self {
            in_vol: [x[2], x[3], x[4]],
            out_vol: [y[2], y[3], y[4]],
            kernel: layer.kernel(),
            stride: layer.stride,
            pad: layer.padding,
        }
    }

    /// Visits every (output row, input row, x-range) triple touched by tap `(kd, kh, kw)`.
    #[inline]
    fn for_each_row(
        &self,
        kd: usize,
        kh: usize,
        kw: usize,
        mut f: impl FnMut(usize, usize, usize, usize, usize),
    ) {
        let [id, ih, iw] = self.in_vol;
        let [od, oh, ow] = self.out_vol;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.pad;
        let (z_lo, z_hi) = valid_range(od, id, kd, sd, pd);
        let (y_lo, y_hi) = valid_range(oh, ih, kh, sh, ph);
        let (x_lo, x_hi) = valid_range(ow, iw, kw, sw, pw);
        if x_lo >= x_hi {
            return;
        }
        for z in z_lo..z_hi {
            let iz = z * sd + kd - pd;
            for y in y_lo..y_hi {
                let iy = y * sh + kh - ph;
                let out_row = (z * oh + y) * ow;
                let in_row = (iz * ih + iy) * iw;
                // Input column for output x is x * sw + kw - pw; pass its value at x_lo.
                f(out_row, in_row, x_lo, x_hi, x_lo * sw + kw - pw);
            }
        }
    }
}

/// Direct cross-correlation. Each `(sample, output channel)` plane is computed
/// independently, so parallel execution is bitwise identical to sequential.
pub fn conv3d_forward<T: Scalar>(x: &Tensor5<T>, layer: &Conv3dLayer<T>) -> Result<Tensor5<T>, NetError> {
    let out_dims = layer.output_dims(x.dims())?;
    let geo = Geometry::of(layer, x.dims(), out_dims);
    let c_out = out_dims[1];
    let c_in = layer.in_channels();
    let [kd_n, kh_n, kw_n] = geo.kernel;
    let taps = kd_n * kh_n * kw_n;
    let sw = geo.stride[2];
    let out_vol: usize = geo.out_vol.iter().product();
    let mut out = vec![T::zero(); out_dims.iter().product()];

    out.par_chunks_mut(out_vol).enumerate().for_each(|(idx, plane)| {
        let n = idx / c_out;
        let o = idx % c_out;
        if let Some(b) = &layer.bias {
            plane.iter_mut().for_each(|v| *v = b.value[o]);
        }
        for ci in 0..c_in {
            let input = x.channel(n, ci);
            let wbase = (o * c_in + ci) * taps;
            for kd in 0..kd_n {
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let w = layer.weight.value[wbase + (kd * kh_n + kh) * kw_n + kw];
                        geo.for_each_row(kd, kh, kw, |out_row, in_row, x_lo, x_hi, ix0| {
                            let dst = &mut plane[out_row + x_lo..out_row + x_hi];
                            if sw == 1 {
                                let src = &input[in_row + ix0..in_row + ix0 + dst.len()];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += w * *s;
                                }
                            } else {
                                for (j, d) in dst.iter_mut().enumerate() {
                                    *d += w * input[in_row + ix0 + j * sw];
                                }
                            }
                        });
                    }
                }
            }
        }
    });
    Ok(Tensor5::from_parts(out_dims, out))
}

fn accumulate_weight_grad<T: Scalar>(x: &Tensor5<T>, dy: &Tensor5<T>, layer: &mut Conv3dLayer<T>) {
    let geo = Geometry::of(layer, x.dims(), dy.dims());
    let c_in = layer.in_channels();
    let [kd_n, kh_n, kw_n] = geo.kernel;
    let taps = kd_n * kh_n * kw_n;
    let sw = geo.stride[2];
    let batch = x.batch();
    // One chunk per (output channel, input channel) kernel; the batch is summed in order.
    layer
        .weight
        .grad
        .par_chunks_mut(taps)
        .enumerate()
        .for_each(|(idx, kernel_grad)| {
            let o = idx / c_in;
            let ci = idx % c_in;
            for kd in 0..kd_n {
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let mut acc = T::zero();
                        for n in 0..batch {
                            let input = x.channel(n, ci);
                            let grad = dy.channel(n, o);
                            geo.for_each_row(kd, kh, kw, |out_row, in_row, x_lo, x_hi, ix0| {
                                let g = &grad[out_row + x_lo..out_row + x_hi];
                                if sw == 1 {
                                    let src = &input[in_row + ix0..in_row + ix0 + g.len()];
                                    for (a, b) in g.iter().zip(src) {
                                        acc += *a * *b;
                                    }
                                } else {
                                    for (j, a) in g.iter().enumerate() {
                                        acc += *a * input[in_row + ix0 + j * sw];
                                    }
                                }
                            });
                        }
                        kernel_grad[(kd * kh_n + kh) * kw_n + kw] += acc;
                    }
                }
            }
        });
}

fn input_grad<T: Scalar>(x: &Tensor5<T>, dy: &Tensor5<T>, layer: &Conv3dLayer<T>) -> Tensor5<T> {
    let geo = Geometry::of(layer, x.dims(), dy.dims());
    let c_in = layer.in_channels();
    let c_out = layer.out_channels();
    let [kd_n, kh_n, kw_n] = geo.kernel;
    let taps = kd_n * kh_n * kw_n;
    let sw = geo.stride[2];
    let in_vol = x.volume();
    let mut dx = vec![T::zero(); x.data().len()];
    dx.par_chunks_mut(in_vol).enumerate().for_each(|(idx, plane)| {
        let n = idx / c_in;
        let ci = idx % c_in;
        for o in 0..c_out {
            let grad = dy.channel(n, o);
            let wbase = (o * c_in + ci) * taps;
            for kd in 0..kd_n {
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let w = layer.weight.value[wbase + (kd * kh_n + kh) * kw_n + kw];
                        geo.for_each_row(kd, kh, kw, |out_row, in_row, x_lo, x_hi, ix0| {
                            let g = &grad[out_row + x_lo..out_row + x_hi];
                            if sw == 1 {
                                let dst = &mut plane[in_row + ix0..in_row + ix0 + g.len()];
                                for (d, a) in dst.iter_mut().zip(g) {
                                    *d += w * *a;
                                }
                            } else {
                                for (j, a) in g.iter().enumerate() {
                                    plane[in_row + ix0 + j * sw] += w * *a;
                                }
                            }
                        });
                    }
                }
            }
        }
    });
    Tensor5::from_parts(x.dims(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(dims: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor5<f64> {
        let n = dims.iter().product();
        Tensor5::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Textbook nested loops over output position and kernel window.
    fn naive_conv(x: &Tensor5<f64>, layer: &Conv3dLayer<f64>) -> Tensor5<f64> {
        let dims = layer.output_dims(x.dims()).unwrap();
        let [kd, kh, kw] = layer.kernel();
        let mut out = Tensor5::zeros(dims).unwrap();
        for n in 0..dims[0] {
            for o in 0..dims[1] {
                for z in 0..dims[2] {
                    for y in 0..dims[3] {
                        for xx in 0..dims[4] {
                            let mut acc = layer.bias.as_ref().map_or(0.0, |b| b.value[o]);
                            for c in 0..x.channels() {
                                for a in 0..kd {
                                    for b in 0..kh {
                                        for e in 0..kw {
                                            let iz = (z * layer.stride[0] + a) as isize - layer.padding[0] as isize;
                                            let iy = (y * layer.stride[1] + b) as isize - layer.padding[1] as isize;
                                            let ix = (xx * layer.stride[2] + e) as isize - layer.padding[2] as isize;
                                            let [_, _, d_in, h_in, w_in] = x.dims();
                                            if iz < 0 || iy < 0 || ix < 0 || iz >= d_in as isize || iy >= h_in as isize || ix >= w_in as isize {
                                                continue;
                                            }
                                            let wi = (((o * x.channels() + c) * kd + a) * kh + b) * kw + e;
                                            acc += layer.weight.value[wi]
                                                * x.get(n, c, iz as usize, iy as usize, ix as usize);
                                        }
                                    }
                                }
                            }
                            let off = out.offset(n, o, z, y, xx);
                            out.data_mut()[off] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let mut layer = Conv3dLayer::<f64>::new(1, 1, [1, 1, 1], [1, 1, 1], [0, 0, 0], false).unwrap();
        layer.weight.value[0] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor([2, 1, 3, 4, 5], &mut rng);
        assert_eq!(layer.infer(&x).unwrap(), x);
    }

    #[test]
    fn stem_output_shape() {
        let layer = Conv3dLayer::<f32>::new(3, 48, [7, 7, 7], [1, 2, 2], [3, 3, 3], false).unwrap();
        assert_eq!(layer.output_dims([1, 3, 16, 100, 100]).unwrap(), [1, 48, 16, 50, 50]);
    }

    #[test]
    fn shape_errors() {
        let layer = Conv3dLayer::<f32>::new(3, 2, [3, 3, 3], [1, 1, 1], [0, 0, 0], false).unwrap();
        assert!(layer.output_dims([1, 2, 5, 5, 5]).is_err());
        assert!(layer.output_dims([1, 3, 2, 5, 5]).is_err());
        assert!(Conv3dLayer::<f32>::new(3, 2, [0, 3, 3], [1, 1, 1], [0, 0, 0], false).is_err());
        assert!(Conv3dLayer::<f32>::new(3, 2, [3, 3, 3], [1, 0, 1], [0, 0, 0], false).is_err());
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cases = [
            ([2, 3, 4, 5, 6], 2, [3, 3, 3], [1, 1, 1], [1, 1, 1], true),
            ([2, 3, 4, 5, 6], 4, [2, 3, 2], [1, 2, 2], [0, 1, 1], false),
            ([3, 4, 6, 8, 8], 3, [3, 3, 3], [2, 2, 2], [1, 1, 1], true),
            ([1, 2, 6, 8, 8], 2, [7, 7, 7], [1, 2, 2], [3, 3, 3], false),
            ([1, 2, 3, 8, 8], 2, [1, 1, 1], [1, 3, 3], [0, 0, 0], true),
        ];
        for (dims, c_out, k, s, p, bias) in cases {
            let mut layer = Conv3dLayer::<f64>::new(dims[1], c_out, k, s, p, bias).unwrap();
            layer.init_he(&mut rng);
            if let Some(b) = &mut layer.bias {
                b.value.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
            let x = random_tensor(dims, &mut rng);
            let fast = layer.infer(&x).unwrap();
            let slow = naive_conv(&x, &layer);
            let diff = fast
                .data()
                .iter()
                .zip(slow.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-10, "{dims:?} {k:?}: {diff}");
        }
    }

    #[test]
    fn sum_of_output_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = Conv3dLayer::<f64>::new(2, 3, [3, 3, 3], [1, 2, 2], [1, 1, 1], true).unwrap();
        layer.init_he(&mut rng);
        let x = random_tensor([2, 2, 3, 5, 5], &mut rng);
        let y = layer.forward(&x).unwrap();
        let ones = Tensor5::full(y.dims(), 1.0).unwrap();
        let dx = layer.backward(&ones).unwrap();
        let eps = 1e-5;
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fp: f64 = layer.infer(&xp).unwrap().data().iter().sum();
            let fm: f64 = layer.infer(&xm).unwrap().data().iter().sum();
            let numeric = (fp - fm) / (2.0 * eps);
            let analytic = dx.data()[i];
            assert!((numeric - analytic).abs() <= 1e-6 * analytic.abs().max(1.0));
        }
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut layer = Conv3dLayer::<f64>::new(2, 2, [2, 3, 3], [2, 1, 2], [0, 1, 1], true).unwrap();
        layer.init_he(&mut rng);
        let x = random_tensor([2, 2, 4, 5, 5], &mut rng);
        let y = layer.forward(&x).unwrap();
        let upstream = random_tensor(y.dims(), &mut rng);
        layer.backward(&upstream).unwrap();
        let loss = |l: &Conv3dLayer<f64>| -> f64 {
            l.infer(&x)
                .unwrap()
                .data()
                .iter()
                .zip(upstream.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let eps = 1e-5;
        for i in 0..layer.weight.len() {
            let mut p = layer.clone();
            p.weight.value[i] += eps;
            let mut m = layer.clone();
            m.weight.value[i] -= eps;
            let numeric = (loss(&p) - loss(&m)) / (2.0 * eps);
            let analytic = layer.weight.grad[i];
            assert!((numeric - analytic).abs() <= 1e-6 * analytic.abs().max(1.0), "{i}");
        }
        let bias = layer.bias.as_ref().unwrap();
        for o in 0..2 {
            let expected: f64 = (0..2).map(|n| upstream.channel(n, o).iter().sum::<f64>()).sum();
            assert!((bias.grad[o] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut layer = Conv3dLayer::<f64>::new(1, 1, [1, 1, 1], [1, 1, 1], [0, 0, 0], false).unwrap();
        let dy = Tensor5::zeros([1, 1, 1, 1, 1]).unwrap();
        assert!(matches!(layer.backward(&dy), Err(NetError::MissingForward(_))));
    }
}
