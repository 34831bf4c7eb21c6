//! Finite-state linear MDP with adversarial linear costs.
//!
//! A model is given by a feature map `φ(s, a) ∈ R^d`, per-step transition
//! factors `ψ_h(s') ∈ R^d` for the first `H − 1` steps, and an initial state.
//! Transitions factor as `P_h(s' | s, a) = φ(s, a)ᵀ ψ_h(s')`, and episode
//! costs are linear in the same features: `ℓ_h(s, a) = φ(s, a)ᵀ c_h`.
//!
//! Construction only checks shapes. The distributional constraints are
//! reported by [`LinearMdpModel::validate`], so that malformed models can be
//! inspected rather than rejected outright.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm2};
use crate::rng;
use crate::scalar::Scalar;
use crate::tables::SaTable;

/// Tolerance for model invariants (stochasticity, norm bounds).
pub const MODEL_TOLERANCE: f64 = 1e-9;
/// Tolerance for exact dynamic-programming identities.
pub const DP_TOLERANCE: f64 = 1e-10;

/// Above this many states the factor-norm bound is checked on random sign
/// vectors instead of all `2^S` of them.
const EXHAUSTIVE_SIGN_LIMIT: usize = 12;
const SAMPLED_SIGN_VECTORS: usize = 256;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model shape error: {0}")]
    Shape(String),
    #[error("step {step} out of range (transitions exist for steps 0..{limit})")]
    StepOutOfRange { step: usize, limit: usize },
    #[error("index out of range: {0}")]
    Index(String),
    #[error("model violates linear-MDP invariants:\n{0}")]
    Invalid(ValidationReport),
    #[error("environment JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One violated model invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonFinite { location: String },
    FeatureNorm { state: usize, action: usize, norm: f64 },
    NegativeTransition { step: usize, state: usize, action: usize, next: usize, prob: f64 },
    RowSum { step: usize, state: usize, action: usize, sum: f64 },
    FactorNorm { step: usize, signs: String, norm: f64, bound: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { location } => write!(f, "non-finite value at {location}"),
            Violation::FeatureNorm { state, action, norm } => {
                write!(f, "‖φ({state},{action})‖ = {norm} > 1")
            }
            Violation::NegativeTransition { step, state, action, next, prob } => write!(
                f,
                "P_{step}({next}|{state},{action}) = {prob} < 0"
            ),
            Violation::RowSum { step, state, action, sum } => write!(
                f,
                "Σ_s' P_{step}(s'|{state},{action}) = {sum} ≠ 1"
            ),
            Violation::FactorNorm { step, signs, norm, bound } => write!(
                f,
                "‖Σ ψ_{step}(s') f(s')‖ = {norm} > {bound} for f = {signs}"
            ),
        }
    }
}

/// Outcome of [`LinearMdpModel::validate`]; empty iff every invariant holds.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMdpModel<T> {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    feature_dim: usize,
    initial_state: usize,
    /// `φ(s, a)` at index `s * A + a`.
    features: Vec<Vec<T>>,
    /// `ψ_h(s')` at `[h][s']`, for `h` in `0..H-1`.
    transition_factors: Vec<Vec<Vec<T>>>,
    /// Cached `φ(s,a)ᵀψ_h(s')` flattened as `[h][s][a][s']`.
    transitions: Vec<T>,
}

impl<T: Scalar> LinearMdpModel<T> {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        initial_state: usize,
        features: Vec<Vec<T>>,
        transition_factors: Vec<Vec<Vec<T>>>,
    ) -> Result<Self, ModelError> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(ModelError::Shape(
                "S, A and H must all be at least 1".into(),
            ));
        }
        if initial_state >= num_states {
            return Err(ModelError::Shape(format!(
                "initial state {initial_state} out of range for S = {num_states}"
            )));
        }
        if features.len() != num_states * num_actions {
            return Err(ModelError::Shape(format!(
                "expected {} feature vectors (S·A), got {}",
                num_states * num_actions,
                features.len()
            )));
        }
        let feature_dim = features[0].len();
        if feature_dim == 0 {
            return Err(ModelError::Shape("feature dimension must be ≥ 1".into()));
        }
        if let Some(i) = features.iter().position(|f| f.len() != feature_dim) {
            return Err(ModelError::Shape(format!(
                "feature vector {i} has length {} (d = {feature_dim})",
                features[i].len()
            )));
        }
        if transition_factors.len() != horizon - 1 {
            return Err(ModelError::Shape(format!(
                "expected {} transition-factor steps (H − 1), got {}",
                horizon - 1,
                transition_factors.len()
            )));
        }
        for (h, step) in transition_factors.iter().enumerate() {
            if step.len() != num_states {
                return Err(ModelError::Shape(format!(
                    "ψ_{h} has {} rows, expected S = {num_states}",
                    step.len()
                )));
            }
            if let Some(s) = step.iter().position(|v| v.len() != feature_dim) {
                return Err(ModelError::Shape(format!(
                    "ψ_{h}({s}) has length {} (d = {feature_dim})",
                    step[s].len()
                )));
            }
        }
        let mut transitions =
            Vec::with_capacity((horizon - 1) * num_states * num_actions * num_states);
        for step in &transition_factors {
            for phi in &features {
                for psi in step {
                    transitions.push(dot(phi, psi));
                }
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            feature_dim,
            initial_state,
            features,
            transition_factors,
            transitions,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    #[inline]
    pub fn feature(&self, s: usize, a: usize) -> &[T] {
        &self.features[s * self.num_actions + a]
    }

    pub fn features(&self) -> &[Vec<T>] {
        &self.features
    }

    pub fn transition_factor(&self, h: usize, next: usize) -> &[T] {
        &self.transition_factors[h][next]
    }

    pub fn transition_factors(&self) -> &[Vec<Vec<T>>] {
        &self.transition_factors
    }

    /// `P_h(· | s, a)` without range checks on `h`.
    #[inline]
    pub(crate) fn transition(&self, h: usize, s: usize, a: usize) -> &[T] {
        let n = self.num_states;
        let i = ((h * n + s) * self.num_actions + a) * n;
        &self.transitions[i..i + n]
    }

    /// Next-state distribution `P_h(· | s, a)` with entries `φ(s,a)ᵀψ_h(s')`.
    pub fn transition_distribution(&self, h: usize, s: usize, a: usize) -> Result<&[T], ModelError> {
        if h + 1 >= self.horizon {
            return Err(ModelError::StepOutOfRange {
                step: h,
                limit: self.horizon.saturating_sub(1),
            });
        }
        if s >= self.num_states || a >= self.num_actions {
            return Err(ModelError::Index(format!("(s, a) = ({s}, {a})")));
        }
        Ok(self.transition(h, s, a))
    }

    /// `P_h W (s, a) = Σ_{s'} P_h(s'|s,a) W(s')`.
    #[inline]
    pub fn expect_next(&self, h: usize, s: usize, a: usize, w: &[T]) -> T {
        dot(self.transition(h, s, a), w)
    }

    /// Loss table `ℓ_h(s, a) = φ(s, a)ᵀ c_h` for one episode's cost vectors.
    pub fn loss_table(&self, costs: &EpisodeCosts<T>) -> SaTable<T> {
        assert_eq!(costs.vectors.len(), self.horizon, "one cost vector per step");
        SaTable::from_fn(self.horizon, self.num_states, self.num_actions, |h, s, a| {
            dot(self.feature(s, a), &costs.vectors[h])
        })
    }

    /// Checks every linear-MDP invariant, reporting each violation.
    pub fn validate(&self) -> ValidationReport {
        let tol = T::tolerance(MODEL_TOLERANCE);
        let mut violations = Vec::new();
        let (n, na, d) = (self.num_states, self.num_actions, self.feature_dim);

        for s in 0..n {
            for a in 0..na {
                let phi = self.feature(s, a);
                if phi.iter().any(|x| !x.is_finite()) {
                    violations.push(Violation::NonFinite {
                        location: format!("φ({s},{a})"),
                    });
                    continue;
                }
                let norm = norm2(phi).as_f64();
                if norm > 1.0 + tol {
                    violations.push(Violation::FeatureNorm { state: s, action: a, norm });
                }
            }
        }
        for (h, step) in self.transition_factors.iter().enumerate() {
            for (sp, psi) in step.iter().enumerate() {
                if psi.iter().any(|x| !x.is_finite()) {
                    violations.push(Violation::NonFinite {
                        location: format!("ψ_{h}({sp})"),
                    });
                }
            }
        }
        if !violations.is_empty() {
            return ValidationReport { violations };
        }

        for h in 0..self.horizon - 1 {
            for s in 0..n {
                for a in 0..na {
                    let row = self.transition(h, s, a);
                    for (next, p) in row.iter().enumerate() {
                        let prob = p.as_f64();
                        if prob < -tol {
                            violations.push(Violation::NegativeTransition {
                                step: h,
                                state: s,
                                action: a,
                                next,
                                prob,
                            });
                        }
                    }
                    let sum: f64 = row.iter().map(|p| p.as_f64()).sum();
                    if (sum - 1.0).abs() > tol {
                        violations.push(Violation::RowSum { step: h, state: s, action: a, sum });
                    }
                }
            }
        }

        let bound = (d as f64).sqrt();
        for (h, step) in self.transition_factors.iter().enumerate() {
            for signs in sign_vectors(n, h as u64) {
                let mut acc = vec![0.0f64; d];
                for (sp, psi) in step.iter().enumerate() {
                    let f = if signs[sp] { 1.0 } else { -1.0 };
                    for (x, p) in acc.iter_mut().zip(psi) {
                        *x += f * p.as_f64();
                    }
                }
                let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > bound + tol {
                    violations.push(Violation::FactorNorm {
                        step: h,
                        signs: signs.iter().map(|&b| if b { '+' } else { '-' }).collect(),
                        norm,
                        bound,
                    });
                    break;
                }
            }
        }
        ValidationReport { violations }
    }

    /// Cost-vector invariants `|φᵀc| ≤ 1` and `‖c‖ ≤ √d` for one step.
    pub fn cost_vector_violation(&self, c: &[T]) -> Option<String> {
        let tol = T::tolerance(MODEL_TOLERANCE);
        let norm = norm2(c).as_f64();
        if norm > (self.feature_dim as f64).sqrt() + tol {
            return Some(format!("‖c‖ = {norm} > √d"));
        }
        let worst = self
            .features
            .iter()
            .map(|phi| dot(phi, c).abs().as_f64())
            .fold(0.0, f64::max);
        (worst > 1.0 + tol).then(|| format!("max |φᵀc| = {worst} > 1"))
    }

    pub fn to_file(&self) -> EnvironmentFile {
        let conv = |v: &Vec<T>| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        EnvironmentFile {
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
            feature_dim: self.feature_dim,
            initial_state: self.initial_state,
            phi: self.features.iter().map(conv).collect(),
            psi: self
                .transition_factors
                .iter()
                .map(|step| step.iter().map(conv).collect())
                .collect(),
        }
    }

    /// Builds a model from its serialized form and re-runs validation.
    pub fn from_file(file: &EnvironmentFile) -> Result<Self, ModelError> {
        let conv = |v: &Vec<f64>| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let model = Self::new(
            file.num_states,
            file.num_actions,
            file.horizon,
            file.initial_state,
            file.phi.iter().map(conv).collect(),
            file.psi
                .iter()
                .map(|step| step.iter().map(conv).collect())
                .collect(),
        )?;
        if model.feature_dim != file.feature_dim {
            return Err(ModelError::Shape(format!(
                "declared d = {} but features have length {}",
                file.feature_dim, model.feature_dim
            )));
        }
        let report = model.validate();
        if !report.is_valid() {
            return Err(ModelError::Invalid(report));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("environment serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: EnvironmentFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }
}

/// Sign patterns used for the `‖Σ ψ_h(s') f(s')‖ ≤ √d` check: `f ≡ 1` first,
/// then all patterns for small `S`, otherwise a fixed-seed random sample.
fn sign_vectors(n: usize, salt: u64) -> Vec<Vec<bool>> {
    let mut out = vec![vec![true; n]];
    if n <= EXHAUSTIVE_SIGN_LIMIT {
        for mask in 0..(1u64 << n) {
            out.push((0..n).map(|i| mask >> i & 1 == 1).collect());
        }
    } else {
        let mut r = rng::keyed(0x5167_5ec7, &[salt]);
        for _ in 0..SAMPLED_SIGN_VECTORS {
            out.push((0..n).map(|_| r.gen::<bool>()).collect());
        }
    }
    out
}

/// Serialized environment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentFile {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "d")]
    pub feature_dim: usize,
    #[serde(rename = "s1")]
    pub initial_state: usize,
    /// `S·A` feature vectors, index `s * A + a`.
    pub phi: Vec<Vec<f64>>,
    /// `H − 1` steps of `S` factor vectors.
    pub psi: Vec<Vec<Vec<f64>>>,
}

/// Cost vectors `c_h` for every step of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeCosts<T> {
    pub vectors: Vec<Vec<T>>,
}

impl<T: Scalar> EpisodeCosts<T> {
    pub fn zeros(horizon: usize, dim: usize) -> Self {
        Self {
            vectors: vec![vec![T::zero(); dim]; horizon],
        }
    }
}

/// Realized cost vectors for all `K` episodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostSchedule<T> {
    pub episodes: Vec<EpisodeCosts<T>>,
}

impl<T: Scalar> CostSchedule<T> {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Every `(k, h)` whose vector breaks `|φᵀc| ≤ 1` or `‖c‖ ≤ √d`.
    pub fn violations(&self, model: &LinearMdpModel<T>) -> Vec<(usize, usize, String)> {
        let mut out = Vec::new();
        for (k, ep) in self.episodes.iter().enumerate() {
            for (h, c) in ep.vectors.iter().enumerate() {
                if let Some(msg) = model.cost_vector_violation(c) {
                    out.push((k, h, msg));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep<T> {
    pub state: usize,
    pub action: usize,
    pub loss: T,
}

/// One episode's realized `(s_h, a_h, ℓ_h)` for `h = 1..H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub steps: Vec<TrajectoryStep<T>>,
}

impl<T: Scalar> Trajectory<T> {
    /// `Σ_{t ≥ h} ℓ_t`
    pub fn suffix_loss(&self, h: usize) -> T {
        self.steps[h..].iter().map(|st| st.loss).sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen::tabular_embed;

    fn chain() -> LinearMdpModel<f64> {
        // two states, one action; P(s₂|s₁)=0.7
        let p = vec![vec![vec![vec![0.3, 0.7]], vec![vec![0.0, 1.0]]]];
        tabular_embed(2, 1, &p, 0).unwrap()
    }

    #[test]
    fn tabular_embedding_is_valid() {
        assert!(chain().validate().is_valid());
    }

    #[test]
    fn transition_distribution_reproduces_table() {
        let m = chain();
        assert_eq!(m.transition_distribution(0, 0, 0).unwrap(), &[0.3, 0.7]);
    }

    #[test]
    fn transition_distribution_step_out_of_range() {
        let m = chain();
        assert!(matches!(
            m.transition_distribution(1, 0, 0),
            Err(ModelError::StepOutOfRange { step: 1, .. })
        ));
    }

    #[test]
    fn mixture_model_gives_convex_combination() {
        let m = LinearMdpModel::new(
            2,
            1,
            2,
            0,
            vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
        )
        .unwrap();
        assert_eq!(m.transition_distribution(0, 0, 0).unwrap(), &[0.5, 0.5]);
        assert!(m.validate().is_valid());
    }

    #[test]
    fn scaled_factor_flags_row_sum() {
        let m = chain();
        let mut psi = m.transition_factors().to_vec();
        psi[0][1][0] *= 1.1;
        let bad = LinearMdpModel::new(2, 1, 2, 0, m.features().to_vec(), psi).unwrap();
        let report = bad.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::RowSum { step: 0, state: 0, action: 0, .. })));
    }

    #[test]
    fn long_feature_flags_norm() {
        let bad = LinearMdpModel::new(
            1,
            1,
            1,
            0,
            vec![vec![1.2, 0.0]],
            vec![],
        )
        .unwrap();
        let report = bad.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::FeatureNorm { norm, .. } if (norm - 1.2).abs() < 1e-12
        ));
    }

    #[test]
    fn shape_errors_are_reported() {
        assert!(matches!(
            LinearMdpModel::<f64>::new(2, 1, 2, 0, vec![vec![1.0]], vec![]),
            Err(ModelError::Shape(_))
        ));
        assert!(matches!(
            LinearMdpModel::<f64>::new(1, 1, 1, 3, vec![vec![1.0]], vec![]),
            Err(ModelError::Shape(_))
        ));
    }

    #[test]
    fn json_round_trip_and_loader_validates() {
        let m = chain();
        let text = m.to_json();
        assert!(text.contains("\"S\""));
        let back = LinearMdpModel::<f64>::from_json(&text).unwrap();
        assert_eq!(back, m);

        let mut file = m.to_file();
        file.phi[0] = vec![1.5, 0.0];
        let text = serde_json::to_string(&file).unwrap();
        assert!(matches!(
            LinearMdpModel::<f64>::from_json(&text),
            Err(ModelError::Invalid(_))
        ));
    }

    #[test]
    fn suffix_loss_sums_tail() {
        let t = Trajectory {
            steps: vec![
                TrajectoryStep { state: 0, action: 0, loss: 1.0 },
                TrajectoryStep { state: 0, action: 0, loss: 2.0 },
                TrajectoryStep { state: 0, action: 0, loss: 4.0 },
            ],
        };
        assert_eq!(t.suffix_loss(0), 7.0);
        assert_eq!(t.suffix_loss(2), 4.0);
    }
}
