use nalgebra::{SMatrix, SVector};

use super::TrackingError;
use crate::geometry::Observation;

pub const STATE_DIM: usize = 7;
const OBS_DIM: usize = 4;

/// `[u, v, s, r, du, dv, ds]`.
pub type State = SVector<f64, STATE_DIM>;
pub type Covariance = SMatrix<f64, STATE_DIM, STATE_DIM>;
type ObsVector = SVector<f64, OBS_DIM>;
type ObsCovariance = SMatrix<f64, OBS_DIM, OBS_DIM>;

/// Lower bound applied to a predicted area that falls to or below zero.
const MIN_AREA: f64 = 1e-4;

const JITTER_START: f64 = 1e-9;
const JITTER_MAX: f64 = 1e-3;

/// Mean and covariance of a Gaussian over an `N`-dimensional state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief<const N: usize = 7> {
    mean: SVector<f64, N>,
    covariance: SMatrix<f64, N, N>,
}

impl<const N: usize> GaussianBelief<N> {
    /// Validates that the mean is finite and the covariance symmetric PSD (both within 1e-9).
    pub fn new(
        mean: SVector<f64, N>,
        covariance: SMatrix<f64, N, N>,
    ) -> Result<Self, TrackingError> {
        let belief = Self { mean, covariance };
        belief.validate()?;
        Ok(belief)
    }

    pub(crate) fn from_parts(mean: SVector<f64, N>, covariance: SMatrix<f64, N, N>) -> Self {
        Self { mean, covariance }
    }

    pub fn mean(&self) -> &SVector<f64, N> {
        &self.mean
    }

    pub fn covariance(&self) -> &SMatrix<f64, N, N> {
        &self.covariance
    }

    pub fn validate(&self) -> Result<(), TrackingError> {
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(TrackingError::InvalidBelief("mean is not finite".into()));
        }
        check_symmetric_psd(&self.covariance).map_err(TrackingError::InvalidBelief)
    }
}

pub(crate) fn check_symmetric_psd<const N: usize>(m: &SMatrix<f64, N, N>) -> Result<(), String> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err("matrix has non-finite entries".into());
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-9 {
        return Err(format!("matrix is not symmetric (max deviation {asym:e})"));
    }
    let dynamic = nalgebra::DMatrix::from_column_slice(N, N, m.as_slice());
    let min_eig = dynamic.symmetric_eigenvalues().min();
    if min_eig < -1e-9 {
        return Err(format!("matrix is not PSD (smallest eigenvalue {min_eig:e})"));
    }
    Ok(())
}

/// Spread and weighting parameters of the unscented transform.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SigmaPointParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for SigmaPointParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl SigmaPointParams {
    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }

    pub fn validate(&self, n: usize) -> Result<(), TrackingError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(TrackingError::InvalidSigmaParams(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || !self.kappa.is_finite() {
            return Err(TrackingError::InvalidSigmaParams(
                "beta and kappa must be finite".into(),
            ));
        }
        let spread = n as f64 + self.lambda(n);
        if spread <= 0.0 {
            return Err(TrackingError::InvalidSigmaParams(format!(
                "n + lambda must be positive, got {spread}"
            )));
        }
        Ok(())
    }

    /// Mean and covariance weights for the `2n + 1` points.
    pub fn weights(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let lambda = self.lambda(n);
        let spread = n as f64 + lambda;
        let w = 0.5 / spread;
        let mut wm = vec![w; 2 * n + 1];
        let mut wc = vec![w; 2 * n + 1];
        wm[0] = lambda / spread;
        wc[0] = wm[0] + (1.0 - self.alpha * self.alpha + self.beta);
        (wm, wc)
    }
}

/// Process and measurement noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub process: Covariance,
    pub measurement: ObsCovariance,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            process: Covariance::from_diagonal(&State::from_column_slice(&[
                1.0, 1.0, 1.0, 1e-4, 0.01, 0.01, 1e-4,
            ])),
            measurement: ObsCovariance::from_diagonal(&ObsVector::new(1.0, 1.0, 10.0, 1e-2)),
        }
    }
}

impl NoiseConfig {
    pub fn from_diagonals(process: [f64; 7], measurement: [f64; 4]) -> Result<Self, TrackingError> {
        let cfg = Self {
            process: Covariance::from_diagonal(&State::from_column_slice(&process)),
            measurement: ObsCovariance::from_diagonal(&ObsVector::from_column_slice(&measurement)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrackingError> {
        check_symmetric_psd(&self.process)
            .map_err(|e| TrackingError::InvalidNoise(format!("process noise: {e}")))?;
        check_symmetric_psd(&self.measurement)
            .map_err(|e| TrackingError::InvalidNoise(format!("measurement noise: {e}")))
    }
}

/// Deterministic state transition used during prediction.
pub trait MotionModel {
    fn propagate(&self, state: &State, dt: f64) -> State;
}

/// Constant-velocity motion: position and area advance by their rates, `r` and the rates stay put.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantVelocity;

impl MotionModel for ConstantVelocity {
    fn propagate(&self, x: &State, dt: f64) -> State {
        let mut out = *x;
        out[0] += x[4] * dt;
        out[1] += x[5] * dt;
        out[2] += x[6] * dt;
        out
    }
}

#[derive(Debug, Clone)]
pub struct SigmaPoints<const N: usize> {
    pub points: Vec<SVector<f64, N>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

/// Cholesky factor that tolerates exactly-singular PSD input by emitting zero columns.
fn semidefinite_cholesky<const N: usize>(a: &SMatrix<f64, N, N>) -> Option<SMatrix<f64, N, N>> {
    let scale = (0..N).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let pivot_tol = 1e-13 * scale;
    let residual_tol = 1e-7 * scale.max(f64::MIN_POSITIVE);
    let mut l = SMatrix::<f64, N, N>::zeros();
    for j in 0..N {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > pivot_tol {
            let root = d.sqrt();
            l[(j, j)] = root;
            for i in (j + 1)..N {
                let mut r = a[(i, j)];
                for k in 0..j {
                    r -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = r / root;
            }
        } else if d >= -pivot_tol {
            for i in (j + 1)..N {
                let mut r = a[(i, j)];
                for k in 0..j {
                    r -= l[(i, k)] * l[(j, k)];
                }
                if r.abs() > residual_tol {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

/// Lower-triangular `L` with `L Lᵀ ≈ m`, escalating a diagonal jitter from 1e-9 to 1e-3
/// (×10 per attempt) when the plain factorization fails.
pub fn psd_sqrt<const N: usize>(m: &SMatrix<f64, N, N>) -> Result<SMatrix<f64, N, N>, TrackingError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(TrackingError::MatrixSqrt { jitter: 0.0 });
    }
    if let Some(l) = semidefinite_cholesky(m) {
        return Ok(l);
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let shifted = m + SMatrix::<f64, N, N>::identity() * jitter;
        if let Some(l) = semidefinite_cholesky(&shifted) {
            return Ok(l);
        }
        jitter *= 10.0;
    }
    Err(TrackingError::MatrixSqrt { jitter: JITTER_MAX })
}

/// `2N + 1` sigma points: the mean followed by `mean + col_i` and then `mean - col_i`
/// for the columns of `sqrt((N + lambda) P)`.
pub fn generate_sigma_points<const N: usize>(
    belief: &GaussianBelief<N>,
    params: &SigmaPointParams,
) -> Result<SigmaPoints<N>, TrackingError> {
    params.validate(N)?;
    let spread = N as f64 + params.lambda(N);
    let root = psd_sqrt(&(belief.covariance * spread))?;
    let mut points = Vec::with_capacity(2 * N + 1);
    points.push(belief.mean);
    for i in 0..N {
        points.push(belief.mean + root.column(i));
    }
    for i in 0..N {
        points.push(belief.mean - root.column(i));
    }
    let (mean_weights, cov_weights) = params.weights(N);
    Ok(SigmaPoints {
        points,
        mean_weights,
        cov_weights,
    })
}

/// Weighted mean of transformed points, accumulated as offsets from the central point.
/// The weights sum to one, so this equals the plain weighted sum, while avoiding the
/// cancellation between the large negative central weight and the outer weights.
fn weighted_mean<const M: usize>(points: &[SVector<f64, M>], wm: &[f64]) -> SVector<f64, M> {
    let center = points[0];
    let mut offset = SVector::<f64, M>::zeros();
    for (p, w) in points.iter().zip(wm).skip(1) {
        offset += (p - center) * *w;
    }
    center + offset
}

fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

pub fn ukf_predict(
    belief: &GaussianBelief,
    dt: f64,
    noise: &NoiseConfig,
    params: &SigmaPointParams,
) -> Result<GaussianBelief, TrackingError> {
    ukf_predict_with(&ConstantVelocity, belief, dt, noise, params)
}

pub fn ukf_predict_with<M: MotionModel + ?Sized>(
    model: &M,
    belief: &GaussianBelief,
    dt: f64,
    noise: &NoiseConfig,
    params: &SigmaPointParams,
) -> Result<GaussianBelief, TrackingError> {
    let sigma = generate_sigma_points(belief, params)?;
    let propagated: Vec<State> = sigma.points.iter().map(|x| model.propagate(x, dt)).collect();
    let mut mean = weighted_mean(&propagated, &sigma.mean_weights);
    let mut cov = noise.process;
    for (p, w) in propagated.iter().zip(&sigma.cov_weights) {
        let d = p - mean;
        cov += d * d.transpose() * *w;
    }
    if mean[2] <= 0.0 {
        mean[2] = MIN_AREA;
    }
    Ok(GaussianBelief::from_parts(mean, symmetrize(&cov)))
}

fn observe(x: &State) -> ObsVector {
    ObsVector::new(x[0], x[1], x[2], x[3])
}

/// Measurement update with `h(x) = (u, v, s, r)`.
pub fn ukf_update(
    belief: &GaussianBelief,
    obs: &Observation,
    noise: &NoiseConfig,
    params: &SigmaPointParams,
) -> Result<GaussianBelief, TrackingError> {
    let sigma = generate_sigma_points(belief, params)?;
    let projected: Vec<ObsVector> = sigma.points.iter().map(observe).collect();
    let z_mean = weighted_mean(&projected, &sigma.mean_weights);
    let x_mean = weighted_mean(&sigma.points, &sigma.mean_weights);

    let mut innovation_cov = noise.measurement;
    let mut cross = SMatrix::<f64, STATE_DIM, OBS_DIM>::zeros();
    for ((x, z), w) in sigma.points.iter().zip(&projected).zip(&sigma.cov_weights) {
        let dz = z - z_mean;
        innovation_cov += dz * dz.transpose() * *w;
        cross += (x - x_mean) * dz.transpose() * *w;
    }
    let innovation_cov = symmetrize(&innovation_cov);
    let chol = innovation_cov
        .cholesky()
        .ok_or(TrackingError::SingularInnovation)?;
    // K = Pxz S^-1, solved as S Kᵀ = Pxzᵀ.
    let gain = chol.solve(&cross.transpose()).transpose();
    let z = ObsVector::from_column_slice(&obs.to_array());
    let mean = belief.mean + gain * (z - z_mean);
    let cov = belief.covariance - gain * innovation_cov * gain.transpose();
    let posterior = GaussianBelief::from_parts(mean, symmetrize(&cov));
    if posterior.mean.iter().any(|v| !v.is_finite()) {
        return Err(TrackingError::SingularInnovation);
    }
    Ok(posterior)
}
