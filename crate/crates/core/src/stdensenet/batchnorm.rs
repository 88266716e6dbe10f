use serde::{Deserialize, Serialize};

use super::tensor::{Param, Scalar, Tensor5};
use super::NetError;

/// Whether normalization uses batch statistics (and updates the running ones) or the
/// stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    normalized: Tensor5<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Per-channel batch normalization over `(N, D, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNormLayer<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
    pub mode: Mode,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(vec![channels], vec![T::one(); channels]),
            beta: Param::zeros(vec![channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: 1e-5,
            momentum: 0.1,
            mode: Mode::Train,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor5<T>) -> Result<(), NetError> {
        if x.channels() != self.channels() {
            return Err(NetError::Shape(format!(
                "batch norm expects {} channels, got {}",
                self.channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    fn batch_stats(x: &Tensor5<T>, c: usize) -> (T, T) {
        let count = T::of((x.batch() * x.volume()) as f64);
        let mut sum = T::zero();
        for n in 0..x.batch() {
            for v in x.channel(n, c) {
                sum += *v;
            }
        }
        let mean = sum / count;
        let mut sq = T::zero();
        for n in 0..x.batch() {
            for v in x.channel(n, c) {
                let d = *v - mean;
                sq += d * d;
            }
        }
        (mean, sq / count)
    }

    fn normalize(
        &self,
        x: &Tensor5<T>,
        stats: &[(T, T)],
    ) -> (Tensor5<T>, Tensor5<T>, Vec<T>) {
        let eps = T::of(self.eps);
        let inv_std: Vec<T> = stats.iter().map(|&(_, var)| T::one() / (var + eps).sqrt()).collect();
        let mut normalized = x.clone();
        let mut out = x.clone();
        let vol = x.volume();
        let channels = x.channels();
        for n in 0..x.batch() {
            for c in 0..channels {
                let start = (n * channels + c) * vol;
                let (mean, _) = stats[c];
                let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                for i in start..start + vol {
                    let xh = (x.data()[i] - mean) * inv_std[c];
                    normalized.data_mut()[i] = xh;
                    out.data_mut()[i] = g * xh + b;
                }
            }
        }
        (out, normalized, inv_std)
    }

    fn running_stats(&self) -> Vec<(T, T)> {
        self.running_mean
            .iter()
            .copied()
            .zip(self.running_var.iter().copied())
            .collect()
    }

    /// Forward with the running statistics. Never mutates the layer.
    pub fn infer(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        self.check(x)?;
        Ok(self.normalize(x, &self.running_stats()).0)
    }

    /// Forward in the layer's current mode, recording what backward needs.
    pub fn forward(&mut self, x: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        self.check(x)?;
        let stats = match self.mode {
            Mode::Eval => self.running_stats(),
            Mode::Train => {
                let stats: Vec<(T, T)> = (0..self.channels()).map(|c| Self::batch_stats(x, c)).collect();
                let count = (x.batch() * x.volume()) as f64;
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let m = T::of(self.momentum);
                for (c, &(mean, var)) in stats.iter().enumerate() {
                    self.running_mean[c] = (T::one() - m) * self.running_mean[c] + m * mean;
                    self.running_var[c] = (T::one() - m) * self.running_var[c] + m * var * T::of(unbias);
                }
                stats
            }
        };
        let (out, normalized, inv_std) = self.normalize(x, &stats);
        self.cache = Some(BnCache {
            normalized,
            inv_std,
            mode: self.mode,
        });
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor5<T>) -> Result<Tensor5<T>, NetError> {
        let cache = self.cache.take().ok_or(NetError::MissingForward("batch_norm"))?;
        if dy.dims() != cache.normalized.dims() {
            return Err(NetError::Shape(format!(
                "batch norm gradient has dims {:?}, expected {:?}",
                dy.dims(),
                cache.normalized.dims()
            )));
        }
        let channels = self.channels();
        let vol = dy.volume();
        let batch = dy.batch();
        let count = T::of((batch * vol) as f64);
        let mut dx = dy.clone();
        for c in 0..channels {
            let mut sum_dy = T::zero();
            let mut sum_dy_xh = T::zero();
            for n in 0..batch {
                let start = (n * channels + c) * vol;
                for i in start..start + vol {
                    let g = dy.data()[i];
                    sum_dy += g;
                    sum_dy_xh += g * cache.normalized.data()[i];
                }
            }
            self.gamma.grad[c] += sum_dy_xh;
            self.beta.grad[c] += sum_dy;
            let scale = self.gamma.value[c] * cache.inv_std[c];
            for n in 0..batch {
                let start = (n * channels + c) * vol;
                for i in start..start + vol {
                    let g = dy.data()[i];
                    dx.data_mut()[i] = match cache.mode {
                        Mode::Eval => scale * g,
                        Mode::Train => {
                            scale / count
                                * (count * g - sum_dy - cache.normalized.data()[i] * sum_dy_xh)
                        }
                    };
                }
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(dims: [usize; 5], rng: &mut ChaCha8Rng, offset: f64) -> Tensor5<f64> {
        let n = dims.iter().product();
        Tensor5::from_vec(dims, (0..n).map(|_| offset + rng.random_range(-3.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn train_mode_standardizes_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor([3, 2, 2, 3, 4], &mut rng, 5.0);
        let mut bn = BatchNormLayer::<f64>::new(2);
        let y = bn.forward(&x).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| y.channel(n, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
    }

    #[test]
    fn eval_identity_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor([2, 3, 2, 2, 2], &mut rng, 0.0);
        let bn = BatchNormLayer::<f64>::new(3);
        let y = bn.infer(&x).unwrap();
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_matches_flat_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = [2, 3, 2, 3, 3];
        let x = random_tensor(dims, &mut rng, 1.0);
        let mut bn = BatchNormLayer::<f64>::new(3);
        bn.gamma.value = vec![0.5, 2.0, -1.0];
        bn.beta.value = vec![0.1, -0.2, 0.3];
        let y = bn.forward(&x).unwrap();
        for c in 0..3 {
            let mut flat = Vec::new();
            for n in 0..2 {
                flat.extend_from_slice(x.channel(n, c));
            }
            let mean = flat.iter().sum::<f64>() / flat.len() as f64;
            let var = flat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / flat.len() as f64;
            for n in 0..2 {
                for (i, v) in x.channel(n, c).iter().enumerate() {
                    let expect = bn.gamma.value[c] * (v - mean) / (var + 1e-5).sqrt() + bn.beta.value[c];
                    assert!((y.channel(n, c)[i] - expect).abs() < 1e-10);
                }
            }
            let unbiased = var * flat.len() as f64 / (flat.len() as f64 - 1.0);
            assert!((bn.running_mean[c] - 0.1 * mean).abs() < 1e-12);
            assert!((bn.running_var[c] - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = [2, 2, 2, 2, 3];
        let x = random_tensor(dims, &mut rng, 0.5);
        let upstream = random_tensor(dims, &mut rng, 0.0);
        let mut bn = BatchNormLayer::<f64>::new(2);
        bn.gamma.value = vec![1.3, -0.7];
        bn.beta.value = vec![0.2, 0.4];
        let base = bn.clone();
        bn.forward(&x).unwrap();
        let dx = bn.backward(&upstream).unwrap();
        let loss = |layer: &BatchNormLayer<f64>, input: &Tensor5<f64>| -> f64 {
            let mut l = layer.clone();
            let y = l.forward(input).unwrap();
            y.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-5;
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let numeric = (loss(&base, &xp) - loss(&base, &xm)) / (2.0 * eps);
            assert!((numeric - dx.data()[i]).abs() < 1e-7 * dx.data()[i].abs().max(1.0));
        }
        for c in 0..2 {
            let mut p = base.clone();
            p.gamma.value[c] += eps;
            let mut m = base.clone();
            m.gamma.value[c] -= eps;
            let numeric = (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps);
            assert!((numeric - bn.gamma.grad[c]).abs() < 1e-7 * numeric.abs().max(1.0));
            let mut p = base.clone();
            p.beta.value[c] += eps;
            let mut m = base.clone();
            m.beta.value[c] -= eps;
            let numeric = (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps);
            assert!((numeric - bn.beta.grad[c]).abs() < 1e-7 * numeric.abs().max(1.0));
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let bn = BatchNormLayer::<f32>::new(4);
        let x = Tensor5::zeros([1, 3, 1, 1, 1]).unwrap();
        assert!(bn.infer(&x).is_err());
    }
}
