use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::Mode;
use super::loss::cross_entropy;
use super::model::{StDenseNet, StDenseNetConfig};
use super::tensor::Tensor5;
use super::NetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckConfig {
    pub model: StDenseNetConfig,
    pub batch: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so two vanishing gradients compare as equal.
    pub floor: f64,
    /// Scales one analytic gradient entry before comparison (harness self-test).
    pub corrupt_gradient: bool,
    /// Zero input and zero weights.
    pub zero_model: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            model: StDenseNetConfig::gradcheck(),
            batch: 2,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            corrupt_gradient: false,
            zero_model: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorError {
    pub name: String,
    pub entries: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub tolerance: f64,
    pub passed: bool,
    pub per_tensor: Vec<TensorError>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backpropagated gradients of the mean cross-entropy against central
/// differences for every parameter entry, in `f64` with batch norm in eval mode.
pub fn gradient_check(config: &GradCheckConfig) -> Result<GradCheckReport, NetError> {
    if config.batch == 0 {
        return Err(NetError::Config("batch must be >= 1".into()));
    }
    if !(config.step > 0.0 && config.tolerance > 0.0 && config.floor > 0.0) {
        return Err(NetError::Config("step, tolerance and floor must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = if config.zero_model {
        StDenseNet::<f64>::build(config.model.clone())?
    } else {
        let mut m = StDenseNet::<f64>::new(config.model.clone(), rng.random())?;
        randomize_batch_norm(&mut m, &mut rng);
        m
    };
    model.set_mode(Mode::Eval);
    let [c, d, h, w] = config.model.input_dims();
    let dims = [config.batch, c, d, h, w];
    let n: usize = dims.iter().product();
    let x = if config.zero_model {
        Tensor5::zeros(dims)?
    } else {
        Tensor5::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?
    };
    let classes = config.model.num_classes;
    let labels: Vec<usize> = (0..config.batch).map(|i| i % classes).collect();

    model.zero_grad();
    let logits = model.forward_train(&x)?;
    let (_, dlogits) = cross_entropy(&logits, &labels, classes)?;
    model.backward(&dlogits)?;
    let mut analytic: Vec<Vec<f64>> = model.params_mut().iter().map(|p| p.grad.clone()).collect();
    if config.corrupt_gradient {
        corrupt(&mut analytic);
    }

    let names = parameter_names(&model);
    let loss_at = |m: &StDenseNet<f64>| -> Result<f64, NetError> {
        Ok(cross_entropy(&m.logits(&x)?, &labels, classes)?.0)
    };
    let mut per_tensor = Vec::with_capacity(analytic.len());
    for (pi, grads) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for (j, &a) in grads.iter().enumerate() {
            let original = model.params_mut()[pi].value[j];
            model.params_mut()[pi].value[j] = original + config.step;
            let plus = loss_at(&model)?;
            model.params_mut()[pi].value[j] = original - config.step;
            let minus = loss_at(&model)?;
            model.params_mut()[pi].value[j] = original;
            let numeric = (plus - minus) / (2.0 * config.step);
            worst = worst.max(relative_error(a, numeric, config.floor));
        }
        per_tensor.push(TensorError {
            name: names[pi].clone(),
            entries: grads.len(),
            max_relative_error: worst,
        });
    }
    let (worst_tensor, max_relative_error) = per_tensor
        .iter()
        .fold((String::new(), 0.0f64), |(name, e), t| {
            if t.max_relative_error > e {
                (t.name.clone(), t.max_relative_error)
            } else {
                (name, e)
            }
        });
    Ok(GradCheckReport {
        checked: analytic.iter().map(Vec::len).sum(),
        max_relative_error,
        worst_tensor,
        tolerance: config.tolerance,
        passed: max_relative_error < config.tolerance,
        per_tensor,
    })
}

/// Names of the trainable tensors, in `params_mut` order.
fn parameter_names(model: &StDenseNet<f64>) -> Vec<String> {
    model
        .named_tensors()
        .into_iter()
        .map(|t| t.name)
        .filter(|n| !n.ends_with("running_mean") && !n.ends_with("running_var"))
        .collect()
}

fn randomize_batch_norm(model: &mut StDenseNet<f64>, rng: &mut ChaCha8Rng) {
    for t in model.named_tensors_mut() {
        let range = if t.name.ends_with(".gamma") {
            0.5..1.5
        } else if t.name.ends_with(".beta") || t.name.ends_with("running_mean") {
            -0.5..0.5
        } else if t.name.ends_with("running_var") {
            0.5..2.0
        } else {
            continue;
        };
        for v in t.data.iter_mut() {
            *v = rng.random_range(range.clone());
        }
    }
}

/// Perturbs the largest-magnitude analytic gradient so a correct harness must fail.
fn corrupt(grads: &mut [Vec<f64>]) {
    let mut best = (0, 0, 0.0f64);
    for (i, g) in grads.iter().enumerate() {
        for (j, v) in g.iter().enumerate() {
            if v.abs() > best.2 {
                best = (i, j, v.abs());
            }
        }
    }
    let (i, j, mag) = best;
    if let Some(v) = grads.get_mut(i).and_then(|g| g.get_mut(j)) {
        *v += mag.max(1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_handles_zeros() {
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-6) - 0.1 / 1.1).abs() < 1e-12);
        assert!((relative_error(0.0, 1e-9, 1e-6) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn zero_model_has_zero_error() {
        let report = gradient_check(&GradCheckConfig { zero_model: true, ..GradCheckConfig::default() }).unwrap();
        assert_eq!(report.max_relative_error, 0.0);
        assert!(report.passed);
    }

    #[test]
    fn names_align_with_parameters() {
        let mut model = StDenseNet::<f64>::new(StDenseNetConfig::gradcheck(), 1).unwrap();
        let names = parameter_names(&model);
        let lens: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
        assert_eq!(names.len(), lens.len());
        let by_name: Vec<usize> = model
            .named_tensors()
            .into_iter()
            .filter(|t| names.contains(&t.name))
            .map(|t| t.data.len())
            .collect();
        assert_eq!(by_name, lens);
    }
}
