use rayon::prelude::*;

use super::tensor::{Scalar, Tensor5};
use super::NetError;

/// Average pooling over `(D, H, W)` windows. Each window averages only the input
/// elements it actually covers, so padded and ceil-mode edge windows are not diluted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvgPool3d {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub ceil_mode: bool,
    input_dims: Option<[usize; 5]>,
}

pub fn pool_output_dim(input: usize, kernel: usize, stride: usize, pad: usize, ceil_mode: bool) -> Option<usize> {
    let span = input + 2 * pad;
    if span < kernel || stride == 0 {
        return None;
    }
    let steps = if ceil_mode {
        (span - kernel).div_ceil(stride)
    } else {
        (span - kernel) / stride
    };
    let mut out = steps + 1;
    // The last window has to start inside the input or the left padding.
    if ceil_mode && (out - 1) * stride >= input + pad {
        out -= 1;
    }
    Some(out)
}

/// Half-open range of valid input indices covered by output position `o`.
#[inline]
fn window(o: usize, input: usize, kernel: usize, stride: usize, pad: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let end = start + kernel as isize;
    (start.max(0) as usize, (end.min(input as isize)).max(0) as usize)
}

impl AvgPool3d {
    pub fn new(kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3], ceil_mode: bool) -> Result<Self, NetError> {
        if kernel.contains(&0) || stride.contains(&0) {
            return Err(NetError::Config(format!(
                "pool kernel {kernel:?} and stride {stride:?} must be >= 1"
            )));
        }
        if (0..3).any(|a| padding[a] >= kernel[a]) {
            return Err(NetError::Config(format!(
                "pool padding {padding:?} must be smaller than kernel {kernel:?}"
            )));
        }
        Ok(Self {
            kernel,
            stride,
            padding,
            ceil_mode,
            input_dims: None,
        })
    }

    pub fn output_dims(&self, input: [usize; 5]) -> Result<[usize; 5], NetError> {
        let mut out = input;
        for a in 0..3 {
            out[a + 2] = pool_output_dim(input[a + 2], self.kernel[a], self.stride[a], self.padding[a], self.ceil_mode)
                .ok_or_else(|| {
                    NetError::Shape(format!(
                        "pool output along axis {a} is empty for input {input:?}, kernel {:?}",
                        self.kernel
                    ))
                })?;
        }
        Ok(out)
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        avg_pool3d_forward(x, self)
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let y = avg_pool3d_forward(x, self)?;
        self.input_dims = Some(x.dims());
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let in_dims = self.input_dims.take().ok_or(NetError::MissingForward("avg_pool3d"))?;
        let out_dims = self.output_dims(in_dims)?;
        if dy.dims() != out_dims {
            return Err(NetError::Shape(format!(
                "pool gradient has dims {:?}, expected {:?}",
                dy.dims(),
                out_dims
            )));
        }
        let [_, _, id, ih, iw] = in_dims;
        let [_, _, od, oh, ow] = out_dims;
        let in_vol = id * ih * iw;
        let mut dx = vec![T::zero(); in_dims.iter().product()];
        dx.par_chunks_mut(in_vol).enumerate().for_each(|(idx, plane)| {
            let n = idx / in_dims[1];
            let c = idx % in_dims[1];
            let grad = dy.channel(n, c);
            for z in 0..od {
                let (z0, z1) = window(z, id, self.kernel[0], self.stride[0], self.padding[0]);
                for y in 0..oh {
                    let (y0, y1) = window(y, ih, self.kernel[1], self.stride[1], self.padding[1]);
                    for xx in 0..ow {
                        let (x0, x1) = window(xx, iw, self.kernel[2], self.stride[2], self.padding[2]);
                        let count = (z1 - z0) * (y1 - y0) * (x1 - x0);
                        let share = grad[(z * oh + y) * ow + xx] / T::of(count as f64);
                        for iz in z0..z1 {
                            for iy in y0..y1 {
                                let row = (iz * ih + iy) * iw;
                                for v in &mut plane[row + x0..row + x1] {
                                    *v += share;
                                }
                            }
                        }
                    }
                }
            }
        });
        Ok(Tensor5::from_parts(in_dims, dx))
    }

    pub fn clear_cache(&mut self) {
        self.input_dims = None;
    }
}

pub fn avg_pool3d_forward<T: Scalar>(x: &Tensor5<T>, pool: &AvgPool3d) -> Result<Tensor5<T>, NetError> {
    let out_dims = pool.output_dims(x.dims())?;
    let [_, _, id, ih, iw] = x.dims();
    let [_, c, od, oh, ow] = out_dims;
    let out_vol = od * oh * ow;
    let mut out = vec![T::zero(); out_dims.iter().product()];
    out.par_chunks_mut(out_vol).enumerate().for_each(|(idx, plane)| {
        let input = x.channel(idx / c, idx % c);
        for z in 0..od {
            let (z0, z1) = window(z, id, pool.kernel[0], pool.stride[0], pool.padding[0]);
            for y in 0..oh {
                let (y0, y1) = window(y, ih, pool.kernel[1], pool.stride[1], pool.padding[1]);
                for xx in 0..ow {
                    let (x0, x1) = window(xx, iw, pool.kernel[2], pool.stride[2], pool.padding[2]);
                    let mut acc = T::zero();
                    for iz in z0..z1 {
                        for iy in y0..y1 {
                            let row = (iz * ih + iy) * iw;
                            for v in &input[row + x0..row + x1] {
                                acc += *v;
                            }
                        }
                    }
                    let count = (z1 - z0) * (y1 - y0) * (x1 - x0);
                    plane[(z * oh + y) * ow + xx] = acc / T::of(count as f64);
                }
            }
        }
    });
    Ok(Tensor5::from_parts(out_dims, out))
}
