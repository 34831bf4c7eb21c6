//! Matrix Geometric Resampling: a truncated Neumann-series estimate of the
//! regularized inverse covariance `Σ_γ⁻¹ = (γI + E[φφᵀ])⁻¹`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Cholesky, LinalgError, Matrix};
use crate::rng::{keyed, sample_categorical, Purpose};
use crate::scalar::Scalar;

/// Step constant of the geometric series.
pub const MGR_STEP: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MgrError {
    #[error("parameter regime violated: {0}")]
    Regime(String),
    #[error("MGR needs {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("sample {index} has length {got}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid feature distribution: {0}")]
    Distribution(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgrParams {
    /// Number of independent estimators averaged.
    pub m: usize,
    /// Depth of each geometric series.
    pub n: usize,
    pub gamma: f64,
    /// `false` lifts the `γ < 1/2` requirement; the norm and bias lemmas
    /// then no longer apply.
    pub guarantee: bool,
}

impl MgrParams {
    pub fn new(m: usize, n: usize, gamma: f64) -> Result<Self, MgrError> {
        let p = Self {
            m,
            n,
            gamma,
            guarantee: true,
        };
        p.check()?;
        Ok(p)
    }

    pub fn without_guarantee(m: usize, n: usize, gamma: f64) -> Result<Self, MgrError> {
        let p = Self {
            m,
            n,
            gamma,
            guarantee: false,
        };
        p.check()?;
        Ok(p)
    }

    pub fn step(&self) -> f64 {
        MGR_STEP
    }

    pub fn samples_needed(&self) -> usize {
        self.m * self.n
    }

    pub fn check(&self) -> Result<(), MgrError> {
        if self.m == 0 || self.n == 0 {
            return Err(MgrError::Regime("M ≥ 1 and N ≥ 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(MgrError::Regime(format!("γ > 0 (got {})", self.gamma)));
        }
        if self.guarantee && self.gamma >= 0.5 {
            return Err(MgrError::Regime(format!("γ < 1/2 (got {})", self.gamma)));
        }
        if self.gamma >= 1.0 / MGR_STEP {
            return Err(MgrError::Regime(format!("γ < 2 (got {})", self.gamma)));
        }
        Ok(())
    }
}

/// `M = ⌈(48d/(γσ))·ln(72d/(γ²σ))⌉` and `N = ⌈(2/γ)·ln(1/(γε))⌉`.
pub fn mgr_theory_params(d: usize, gamma: f64, sigma: f64, epsilon: f64) -> Result<MgrParams, MgrError> {
    if d == 0 {
        return Err(MgrError::Regime("d ≥ 1".into()));
    }
    if !(sigma > 0.0 && sigma <= 0.25) {
        return Err(MgrError::Regime(format!("0 < σ ≤ 1/4 (got σ = {sigma})")));
    }
    if !(epsilon > 0.0 && epsilon <= sigma / 6.0) {
        return Err(MgrError::Regime(format!(
            "0 < ε ≤ σ/6 (got ε = {epsilon}, σ/6 = {})",
            sigma / 6.0
        )));
    }
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(MgrError::Regime(format!("0 < γ < 1/2 (got γ = {gamma})")));
    }
    let d = d as f64;
    let m = (48.0 * d / (gamma * sigma)) * (72.0 * d / (gamma * gamma * sigma)).ln();
    let n = (2.0 / gamma) * (1.0 / (gamma * epsilon)).ln();
    MgrParams::new(m.ceil() as usize, n.ceil().max(1.0) as usize, gamma)
}

/// Output of [`mgr`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegInvCovEstimate<T> {
    pub matrix: Matrix<T>,
    pub params: MgrParams,
    pub samples_used: usize,
}

impl<T: Scalar> RegInvCovEstimate<T> {
    pub fn op_norm(&self) -> T {
        self.matrix.sym_op_norm()
    }

    pub fn min_eigenvalue(&self) -> T {
        self.matrix.min_eigenvalue()
    }

    /// `‖Σ̂⁺‖ ≤ 1/γ`, up to a relative rounding allowance.
    pub fn within_norm_bound(&self) -> bool {
        let bound = 1.0 / self.params.gamma;
        self.op_norm().as_f64() <= bound * (1.0 + 1e-10)
    }

    /// `‖φ‖_{Σ̂⁺} = sqrt(φᵀ Σ̂⁺ φ)`, clamped at zero against rounding.
    pub fn weighted_norm(&self, phi: &[T]) -> T {
        self.matrix.quad_form(phi).max(T::zero()).sqrt()
    }
}

/// One geometric-series estimator over `N` consecutive samples.
fn single_estimator<T: Scalar, S: AsRef<[T]>>(samples: &[S], d: usize, gamma: T) -> Matrix<T> {
    let c = T::lit(MGR_STEP);
    let decay = T::one() - c * gamma;
    let mut product = Matrix::identity(d);
    let mut acc = Matrix::zeros(d, d);
    let mut pv = vec![T::zero(); d];
    for phi in samples {
        let phi = phi.as_ref();
        // P ← P(I − c(γI + φφᵀ)) = (1 − cγ)P − c(Pφ)φᵀ
        for (i, out) in pv.iter_mut().enumerate() {
            *out = crate::linalg::dot(product.row(i), phi);
        }
        product.scale(decay);
        product.rank_one_update(-c, &pv, phi);
        acc.add_scaled(T::one(), &product);
    }
    acc.scale(c);
    acc.add_diagonal(c);
    acc
}

/// Averages `M` independent series, consuming the first `M·N` samples in
/// order (`φ_{m,n}` is sample `m·N + n`). Products accumulate left to right.
pub fn mgr<T: Scalar, S: AsRef<[T]>>(samples: &[S], params: &MgrParams) -> Result<RegInvCovEstimate<T>, MgrError> {
    params.check()?;
    let needed = params.samples_needed();
    if samples.len() < needed {
        return Err(MgrError::InsufficientSamples {
            needed,
            got: samples.len(),
        });
    }
    let d = samples[0].as_ref().len();
    for (index, s) in samples[..needed].iter().enumerate() {
        let s = s.as_ref();
        if s.len() != d {
            return Err(MgrError::Dimension {
                index,
                expected: d,
                got: s.len(),
            });
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(MgrError::NonFinite { index });
        }
    }
    let gamma = T::lit(params.gamma);
    let mut total = Matrix::zeros(d, d);
    for chunk in samples[..needed].chunks(params.n) {
        total.add_scaled(T::one(), &single_estimator(chunk, d, gamma));
    }
    total.scale(T::one() / T::count(params.m));
    total.symmetrize();
    Ok(RegInvCovEstimate {
        matrix: total,
        params: *params,
        samples_used: needed,
    })
}

/// A distribution over finitely many feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistribution<T> {
    support: Vec<Vec<T>>,
    weights: Vec<T>,
}

impl<T: Scalar> FeatureDistribution<T> {
    pub fn new(support: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self, MgrError> {
        let bad = |m: String| Err(MgrError::Distribution(m));
        if support.is_empty() || support.len() != weights.len() {
            return bad("support and weights must be nonempty and equally long".into());
        }
        let d = support[0].len();
        if support.iter().any(|v| v.len() != d) {
            return bad("support vectors differ in length".into());
        }
        if weights.iter().any(|w| !(w.as_f64() >= 0.0)) {
            return bad("weights must be nonnegative".into());
        }
        let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {total}"));
        }
        if support
            .iter()
            .any(|v| crate::linalg::norm2(v).as_f64() > 1.0 + 1e-12)
        {
            return bad("support vectors must satisfy ‖φ‖ ≤ 1".into());
        }
        Ok(Self { support, weights })
    }

    pub fn point_mass(phi: Vec<T>) -> Self {
        Self {
            support: vec![phi],
            weights: vec![T::one()],
        }
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn support(&self) -> &[Vec<T>] {
        &self.support
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[T] {
        if self.support.len() == 1 {
            return &self.support[0];
        }
        &self.support[sample_categorical(&self.weights, rng)]
    }

    /// `E[φφᵀ]`
    pub fn second_moment(&self) -> Matrix<T> {
        let d = self.dim();
        let mut out = Matrix::zeros(d, d);
        for (v, &w) in self.support.iter().zip(&self.weights) {
            out.rank_one_update(w, v, v);
        }
        out
    }

    /// `Σ_γ = γI + E[φφᵀ]`
    pub fn regularized_covariance(&self, gamma: T) -> Matrix<T> {
        let mut m = self.second_moment();
        m.add_diagonal(gamma);
        m
    }
}

/// Monte-Carlo summary of a matrix-valued statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixCheck {
    /// The reported scalar (an operator-norm deviation or a maximum eigenvalue).
    pub observed: f64,
    /// `sqrt(Σ_ij Var(X_ij) / R)`, which dominates the operator-norm standard
    /// error of the replicate mean.
    pub standard_error: f64,
    pub replicates: usize,
}

fn replicate_estimates<T: Scalar>(
    dist: &FeatureDistribution<T>,
    params: &MgrParams,
    replicates: usize,
    seed: u64,
) -> Result<Vec<Matrix<T>>, MgrError> {
    params.check()?;
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = keyed(seed, &[Purpose::Replicate as u64, r as u64]);
            let samples: Vec<&[T]> = (0..params.samples_needed()).map(|_| dist.sample(&mut rng)).collect();
            mgr(&samples, params).map(|e| e.matrix)
        })
        .collect()
}

fn mean_and_se<T: Scalar>(draws: &[Matrix<T>]) -> (Matrix<T>, f64) {
    let (rows, cols) = (draws[0].rows(), draws[0].cols());
    let r = draws.len();
    let mut mean = Matrix::zeros(rows, cols);
    for x in draws {
        mean.add_scaled(T::one(), x);
    }
    mean.scale(T::one() / T::count(r));
    if r < 2 {
        return (mean, 0.0);
    }
    let mut var_sum = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let mu = mean[(i, j)].as_f64();
            let ss: f64 = draws.iter().map(|x| (x[(i, j)].as_f64() - mu).powi(2)).sum();
            var_sum += ss / (r - 1) as f64;
        }
    }
    (mean, (var_sum / r as f64).sqrt())
}

/// `‖mean_r Σ̂⁺_r − Σ_γ⁻¹‖_op` over `replicates` single-series (`M = 1`) draws.
pub fn mgr_bias_check<T: Scalar>(
    dist: &FeatureDistribution<T>,
    gamma: f64,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<MatrixCheck, MgrError> {
    let params = MgrParams::without_guarantee(1, n, gamma)?;
    let draws = replicate_estimates(dist, &params, replicates.max(1), seed)?;
    let (mean, se) = mean_and_se(&draws);
    let exact = Cholesky::factor(&dist.regularized_covariance(T::lit(gamma)))?.inverse();
    let mut diff = mean;
    diff.add_scaled(-T::one(), &exact);
    Ok(MatrixCheck {
        observed: diff.sym_op_norm().as_f64(),
        standard_error: se,
        replicates: draws.len(),
    })
}

/// `λ_max(mean_r[Σ̂⁺_r Σ_γ Σ̂⁺_r] − 2·mean_r[Σ̂⁺_r] − σI)`
pub fn mgr_second_moment_check<T: Scalar>(
    dist: &FeatureDistribution<T>,
    params: &MgrParams,
    sigma: f64,
    replicates: usize,
    seed: u64,
) -> Result<MatrixCheck, MgrError> {
    let cov = dist.regularized_covariance(T::lit(params.gamma));
    let draws: Vec<Matrix<T>> = replicate_estimates(dist, params, replicates.max(1), seed)?
        .into_iter()
        .map(|x| {
            let mut y = x.matmul(&cov).matmul(&x);
            y.add_scaled(T::lit(-2.0), &x);
            y.add_diagonal(T::lit(-sigma));
            y
        })
        .collect();
    let (mean, se) = mean_and_se(&draws);
    Ok(MatrixCheck {
        observed: mean.max_eigenvalue().as_f64(),
        standard_error: se,
        replicates: draws.len(),
    })
}
