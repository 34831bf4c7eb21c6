//! Optimistic least-squares policy evaluation of the bonus MDP.
//!
//! Given transitions from earlier rollouts and an immediate bonus table
//! `b`, a backward least-squares pass produces the clipped bonus-to-go
//! `B̃_h(s,a)` and its policy average `W̃_h(s)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{axpy, Cholesky, LinalgError, Matrix};
use crate::model::LinearMdpModel;
use crate::policy::PolicyTable;
use crate::scalar::Scalar;
use crate::tables::{SaTable, StateTable};

/// Ridge regularizer of every Gram matrix.
pub const LAMBDA: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OlspeError {
    #[error("bonus table is not finite and nonnegative at (h={h}, s={s}, a={a})")]
    Bonus { h: usize, s: usize, a: usize },
    #[error("dataset shape: {0}")]
    Dataset(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `(s_h, a_h, s_{h+1})`; `next` is `None` at the final step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next: Option<usize>,
}

/// Per-step transition lists `{D_h}` together with the id of the rollout
/// each path came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionDataset {
    steps: Vec<Vec<Transition>>,
    sources: Vec<u64>,
}

impl TransitionDataset {
    pub fn new(horizon: usize) -> Self {
        Self {
            steps: vec![Vec::new(); horizon],
            sources: Vec::new(),
        }
    }

    /// Adds one full `(s, a)` path of length `H`.
    pub fn push_path(&mut self, source: u64, path: &[(usize, usize)]) {
        assert_eq!(path.len(), self.steps.len(), "path length must equal the horizon");
        for (h, &(state, action)) in path.iter().enumerate() {
            self.steps[h].push(Transition {
                state,
                action,
                next: path.get(h + 1).map(|&(s, _)| s),
            });
        }
        self.sources.push(source);
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, h: usize) -> &[Transition] {
        &self.steps[h]
    }

    pub fn num_paths(&self) -> usize {
        self.sources.len()
    }

    pub fn sources(&self) -> &[u64] {
        &self.sources
    }

    pub fn contains_source(&self, source: u64) -> bool {
        self.sources.contains(&source)
    }

    /// Checks indices against `model` and that only the last step lacks
    /// successors.
    pub fn validate<T: Scalar>(&self, model: &LinearMdpModel<T>) -> Result<(), OlspeError> {
        if self.horizon() != model.horizon() {
            return Err(OlspeError::Dataset(format!(
                "{} steps for horizon {}",
                self.horizon(),
                model.horizon()
            )));
        }
        let last = model.horizon() - 1;
        for (h, list) in self.steps.iter().enumerate() {
            for t in list {
                let next_ok = match t.next {
                    Some(sp) => h < last && sp < model.num_states(),
                    None => h == last,
                };
                if t.state >= model.num_states() || t.action >= model.num_actions() || !next_ok {
                    return Err(OlspeError::Dataset(format!("bad tuple {t:?} at step {h}")));
                }
            }
        }
        Ok(())
    }
}

/// `Λ = λI + Σ φφᵀ`
pub fn build_gram<'a, T: Scalar>(features: impl IntoIterator<Item = &'a [T]>, d: usize, lambda: T) -> Matrix<T> {
    let mut gram = Matrix::scaled_identity(d, lambda);
    for phi in features {
        gram.rank_one_update(T::one(), phi, phi);
    }
    gram
}

/// `β^P · ‖φ‖_{Λ⁻¹}`
pub fn dynamics_bonus<T: Scalar>(gram: &Cholesky<T>, beta_p: T, phi: &[T]) -> T {
    beta_p * gram.inv_quad_form(phi).max(T::zero()).sqrt()
}

/// How `b + P̃W̃` is mapped into the bonus-to-go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipRule {
    /// Clip to `[0, B_h^max]`.
    #[default]
    Standard,
    /// No clipping. Only used to mutation-test the invariant checks.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlspeParams {
    pub beta: f64,
    pub beta_p: f64,
    pub gamma: f64,
    pub clip: ClipRule,
}

impl OlspeParams {
    pub fn new(beta: f64, beta_p: f64, gamma: f64) -> Self {
        Self {
            beta,
            beta_p,
            gamma,
            clip: ClipRule::Standard,
        }
    }

    /// `B_h^max = 2β(H − h)/√γ` for zero-based `h`.
    pub fn cap(&self, horizon: usize, h: usize) -> f64 {
        2.0 * self.beta * (horizon - h) as f64 / self.gamma.sqrt()
    }
}

/// Tabulated `B̃_h(s,a)` and `W̃_h(s)` (terminal row zero).
#[derive(Debug, Clone, PartialEq)]
pub struct BonusValueFn<T> {
    pub b_tilde: SaTable<T>,
    pub w_tilde: StateTable<T>,
    pub caps: Vec<T>,
}

/// Per-step regression state of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BackupArtifacts<T> {
    pub gram: Vec<Matrix<T>>,
    pub weights: Vec<Vec<T>>,
    /// `b^P_h(s,a)`
    pub dynamics_bonus: SaTable<T>,
    pub beta_p: T,
    pub lambda: T,
}

/// Gram factorizations and dynamics bonuses of a dataset; independent of
/// the bonus table and policy, so several backward passes can share it.
#[derive(Debug, Clone)]
pub struct PreparedDataset<'a, T> {
    model: &'a LinearMdpModel<T>,
    dataset: &'a TransitionDataset,
    grams: Vec<Matrix<T>>,
    factors: Vec<Cholesky<T>>,
    /// `‖φ(s,a)‖_{Λ_h⁻¹}`
    elliptic: SaTable<T>,
}

impl<'a, T: Scalar> PreparedDataset<'a, T> {
    pub fn new(model: &'a LinearMdpModel<T>, dataset: &'a TransitionDataset) -> Result<Self, OlspeError> {
        dataset.validate(model)?;
        let (horizon, n, na, d) = (
            model.horizon(),
            model.num_states(),
            model.num_actions(),
            model.feature_dim(),
        );
        let mut grams = Vec::with_capacity(horizon);
        let mut factors = Vec::with_capacity(horizon);
        let mut elliptic = SaTable::zeros(horizon, n, na);
        for h in 0..horizon {
            let gram = build_gram(
                dataset.step(h).iter().map(|t| model.feature(t.state, t.action)),
                d,
                T::lit(LAMBDA),
            );
            let chol = Cholesky::factor(&gram)?;
            for s in 0..n {
                for a in 0..na {
                    elliptic.set(h, s, a, dynamics_bonus(&chol, T::one(), model.feature(s, a)));
                }
            }
            grams.push(gram);
            factors.push(chol);
        }
        Ok(Self {
            model,
            dataset,
            grams,
            factors,
            elliptic,
        })
    }

    pub fn gram(&self, h: usize) -> &Matrix<T> {
        &self.grams[h]
    }

    /// `‖φ(s,a)‖_{Λ_h⁻¹}` for every `(h, s, a)`.
    pub fn elliptic_norms(&self) -> &SaTable<T> {
        &self.elliptic
    }

    /// Backward pass for `h = H..1`. Returns the tables and, when
    /// `keep_artifacts`, the per-step regression state.
    pub fn backup(
        &self,
        bonus: &SaTable<T>,
        params: &OlspeParams,
        policy: &PolicyTable<T>,
        keep_artifacts: bool,
    ) -> Result<(BonusValueFn<T>, Option<BackupArtifacts<T>>), OlspeError> {
        let model = self.model;
        let (horizon, n, na, d) = (
            model.horizon(),
            model.num_states(),
            model.num_actions(),
            model.feature_dim(),
        );
        for h in 0..horizon {
            for s in 0..n {
                for a in 0..na {
                    let b = bonus.get(h, s, a);
                    if !(b.is_finite() && b >= T::zero()) {
                        return Err(OlspeError::Bonus { h, s, a });
                    }
                }
            }
        }
        let beta_p = T::lit(params.beta_p);
        let caps: Vec<T> = (0..horizon).map(|h| T::lit(params.cap(horizon, h))).collect();
        let mut b_tilde = SaTable::zeros(horizon, n, na);
        let mut w_tilde = StateTable::zeros(horizon, n);
        let mut weights = vec![vec![T::zero(); d]; horizon];
        for h in (0..horizon).rev() {
            let mut rhs = vec![T::zero(); d];
            for t in self.dataset.step(h) {
                if let Some(sp) = t.next {
                    let target = w_tilde.get(h + 1, sp);
                    if target != T::zero() {
                        axpy(target, model.feature(t.state, t.action), &mut rhs);
                    }
                }
            }
            let w = if rhs.iter().all(|&x| x == T::zero()) {
                rhs
            } else {
                self.factors[h].solve(&rhs)
            };
            for s in 0..n {
                for a in 0..na {
                    let raw = bonus.get(h, s, a)
                        + crate::linalg::dot(model.feature(s, a), &w)
                        + beta_p * self.elliptic.get(h, s, a);
                    let value = match params.clip {
                        ClipRule::Standard => raw.max(T::zero()).min(caps[h]),
                        ClipRule::Disabled => raw,
                    };
                    b_tilde.set(h, s, a, value);
                }
                let avg = policy.average(&b_tilde, h, s);
                w_tilde.set(h, s, avg);
            }
            weights[h] = w;
        }
        let artifacts = keep_artifacts.then(|| BackupArtifacts {
            gram: self.grams.clone(),
            weights,
            dynamics_bonus: self.elliptic.map(|x| beta_p * x),
            beta_p,
            lambda: T::lit(LAMBDA),
        });
        Ok((BonusValueFn { b_tilde, w_tilde, caps }, artifacts))
    }
}

/// One full OLSPE call: factorizes the dataset and runs the backward pass.
pub fn olspe<T: Scalar>(
    model: &LinearMdpModel<T>,
    dataset: &TransitionDataset,
    bonus: &SaTable<T>,
    params: &OlspeParams,
    policy: &PolicyTable<T>,
) -> Result<(BonusValueFn<T>, BackupArtifacts<T>), OlspeError> {
    let prepared = PreparedDataset::new(model, dataset)?;
    let (values, artifacts) = prepared.backup(bonus, params, policy, true)?;
    Ok((values, artifacts.expect("artifacts requested")))
}
