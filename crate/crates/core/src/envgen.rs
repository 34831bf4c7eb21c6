//! Constructors for valid linear MDPs and adversarial cost sequences.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dp::occupancy;
use crate::linalg::{axpy, dot, norm2};
use crate::model::{EpisodeCosts, LinearMdpModel, ModelError, MODEL_TOLERANCE};
use crate::policy::PolicyTable;
use crate::rng::{keyed, uniform_simplex, Purpose};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("transition table P_{step}(·|{state},{action}) is not a distribution: {reason}")]
    NotStochastic {
        step: usize,
        state: usize,
        action: usize,
        reason: String,
    },
    #[error("invalid generator spec: {0}")]
    Generator(String),
    #[error("invalid adversary spec: {0}")]
    Adversary(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One-hot realization of a tabular MDP.
///
/// `tables[h][s][a][s'] = P_h(s' | s, a)` for the `H − 1` transition steps;
/// the horizon is `tables.len() + 1`. Features are the standard basis of
/// `R^{S·A}` and `ψ_h(s')_{(s,a)} = P_h(s' | s, a)`.
pub fn tabular_embed<T: Scalar>(
    num_states: usize,
    num_actions: usize,
    tables: &[Vec<Vec<Vec<T>>>],
    initial_state: usize,
) -> Result<LinearMdpModel<T>, EnvError> {
    let d = num_states * num_actions;
    for (h, table) in tables.iter().enumerate() {
        if table.len() != num_states {
            return Err(EnvError::Generator(format!(
                "step {h} has {} state rows, expected {num_states}",
                table.len()
            )));
        }
        for (s, rows) in table.iter().enumerate() {
            if rows.len() != num_actions {
                return Err(EnvError::Generator(format!(
                    "step {h} state {s} has {} action rows, expected {num_actions}",
                    rows.len()
                )));
            }
            for (a, row) in rows.iter().enumerate() {
                let bad = |reason: String| EnvError::NotStochastic {
                    step: h,
                    state: s,
                    action: a,
                    reason,
                };
                if row.len() != num_states {
                    return Err(bad(format!("length {} ≠ S", row.len())));
                }
                if let Some(p) = row.iter().find(|p| !(p.as_f64() >= -T::tolerance(MODEL_TOLERANCE))) {
                    return Err(bad(format!("entry {p} is negative or NaN")));
                }
                let sum: f64 = row.iter().map(|p| p.as_f64()).sum();
                if (sum - 1.0).abs() > T::tolerance(MODEL_TOLERANCE) {
                    return Err(bad(format!("sums to {sum}")));
                }
            }
        }
    }
    let features = (0..d)
        .map(|i| {
            let mut e = vec![T::zero(); d];
            e[i] = T::one();
            e
        })
        .collect();
    let factors = tables
        .iter()
        .map(|table| {
            (0..num_states)
                .map(|sp| {
                    (0..d)
                        .map(|i| table[i / num_actions][i % num_actions][sp])
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(LinearMdpModel::new(
        num_states,
        num_actions,
        tables.len() + 1,
        initial_state,
        features,
        factors,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Random tabular MDP with one-hot features (`d = S·A`).
    TabularOnehot,
    /// Features on the simplex, next-state distributions as mixtures.
    SimplexMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "d")]
    pub feature_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Draws a random valid linear MDP with `s_1 = 0`.
///
/// For the simplex-mixture kind, `φ(s, a)` is uniform on `Δ_d` and each
/// coordinate `i` of `ψ_h` carries a uniform next-state distribution
/// `μ_{h,i} ∈ Δ_S`, so `P_h(·|s,a) = Σ_i φ_i(s,a) μ_{h,i}` is a mixture.
/// Simplex draws are normalized standard exponentials from the
/// `(seed, Generator)` stream, features first, then `μ` in `(h, i)` order.
pub fn random_linmdp<T: Scalar>(spec: &GeneratorSpec) -> Result<LinearMdpModel<T>, EnvError> {
    let (n, na, horizon, d) = (
        spec.num_states,
        spec.num_actions,
        spec.horizon,
        spec.feature_dim,
    );
    if n == 0 || na == 0 || horizon == 0 || d == 0 {
        return Err(EnvError::Generator("S, A, H and d must be ≥ 1".into()));
    }
    let mut rng = keyed(spec.seed, &[Purpose::Generator as u64]);
    match spec.kind {
        GeneratorKind::TabularOnehot => {
            if d != n * na {
                return Err(EnvError::Generator(format!(
                    "tabular_onehot requires d = S·A = {}, got {d}",
                    n * na
                )));
            }
            let tables: Vec<Vec<Vec<Vec<T>>>> = (0..horizon - 1)
                .map(|_| {
                    (0..n)
                        .map(|_| (0..na).map(|_| uniform_simplex(n, &mut rng)).collect())
                        .collect()
                })
                .collect();
            tabular_embed(n, na, &tables, 0)
        }
        GeneratorKind::SimplexMixture => {
            let features: Vec<Vec<T>> = (0..n * na).map(|_| uniform_simplex(d, &mut rng)).collect();
            let factors = (0..horizon - 1)
                .map(|_| {
                    let mu: Vec<Vec<T>> = (0..d).map(|_| uniform_simplex(n, &mut rng)).collect();
                    (0..n)
                        .map(|sp| (0..d).map(|i| mu[i][sp]).collect())
                        .collect()
                })
                .collect();
            Ok(LinearMdpModel::new(n, na, horizon, 0, features, factors)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    /// The same cost vectors every episode.
    FixedSchedule,
    /// `base + amplitude · sin(2πk / period + phase) · direction` per step.
    Sinusoid,
    /// Piecewise-constant vectors, redrawn at each switch episode.
    Switching,
    /// Mixes a fixed base with the feature mean of the submitted policy's
    /// occupancy.
    AdaptiveOccupancy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Rescale by `max |φᵀc|` only when it exceeds 1.
    #[default]
    Cap,
    /// Always rescale so that `max |φᵀc| = 1`.
    Unit,
}

fn default_scale() -> f64 {
    1.0
}

/// Adversary configuration. Parameters irrelevant to `kind` must be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    pub kind: AdversaryKind,
    #[serde(default)]
    pub seed: u64,
    /// Multiplies the raw vectors before normalization; 0 gives the zero adversary.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub normalization: Normalization,
    /// Fixed schedule: explicit `H × d` vectors (random base when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// Zero-based episodes at which a switching adversary redraws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_episodes: Option<Vec<usize>>,
    /// Weight in `[0, 1]` of the occupancy-following component.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
}

impl AdversarySpec {
    fn bare(kind: AdversaryKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            scale: 1.0,
            normalization: Normalization::Cap,
            vectors: None,
            period: None,
            amplitude: None,
            switch_episodes: None,
            strength: None,
        }
    }

    /// Zero costs on every episode.
    pub fn zero() -> Self {
        Self {
            scale: 0.0,
            ..Self::bare(AdversaryKind::FixedSchedule, 0)
        }
    }

    pub fn fixed(seed: u64) -> Self {
        Self::bare(AdversaryKind::FixedSchedule, seed)
    }

    pub fn fixed_vectors(vectors: Vec<Vec<f64>>) -> Self {
        Self {
            vectors: Some(vectors),
            ..Self::bare(AdversaryKind::FixedSchedule, 0)
        }
    }

    pub fn sinusoid(seed: u64, period: f64, amplitude: f64) -> Self {
        Self {
            period: Some(period),
            amplitude: Some(amplitude),
            ..Self::bare(AdversaryKind::Sinusoid, seed)
        }
    }

    pub fn switching(seed: u64, switch_episodes: Vec<usize>) -> Self {
        Self {
            switch_episodes: Some(switch_episodes),
            ..Self::bare(AdversaryKind::Switching, seed)
        }
    }

    pub fn adaptive(seed: u64, strength: f64) -> Self {
        Self {
            strength: Some(strength),
            normalization: Normalization::Unit,
            ..Self::bare(AdversaryKind::AdaptiveOccupancy, seed)
        }
    }

    pub fn is_oblivious(&self) -> bool {
        self.kind != AdversaryKind::AdaptiveOccupancy
    }

    fn check(&self) -> Result<(), EnvError> {
        let err = |m: &str| Err(EnvError::Adversary(m.to_string()));
        if !self.scale.is_finite() {
            return err("scale must be finite");
        }
        let kind = self.kind;
        let unexpected = |present: bool, name: &str| {
            if present {
                Err(EnvError::Adversary(format!("`{name}` is not a parameter of {kind:?}")))
            } else {
                Ok(())
            }
        };
        use AdversaryKind::*;
        unexpected(self.vectors.is_some() && kind != FixedSchedule, "vectors")?;
        unexpected(self.period.is_some() && kind != Sinusoid, "period")?;
        unexpected(self.amplitude.is_some() && kind != Sinusoid, "amplitude")?;
        unexpected(self.switch_episodes.is_some() && kind != Switching, "switch_episodes")?;
        unexpected(self.strength.is_some() && kind != AdaptiveOccupancy, "strength")?;
        match kind {
            Sinusoid => match (self.period, self.amplitude) {
                (Some(p), Some(a)) if p > 0.0 && a.is_finite() => Ok(()),
                _ => err("sinusoid requires period > 0 and finite amplitude"),
            },
            Switching => match &self.switch_episodes {
                Some(_) => Ok(()),
                None => err("switching requires switch_episodes"),
            },
            AdaptiveOccupancy => match self.strength {
                Some(s) if (0.0..=1.0).contains(&s) => Ok(()),
                _ => err("adaptive_occupancy requires strength in [0, 1]"),
            },
            FixedSchedule => Ok(()),
        }
    }
}

/// Cost-vector generator. The output for episode `k` depends only on the
/// spec, `k`, and the submitted policies `π^1..π^k`; trajectories are not
/// part of the interface.
#[derive(Debug, Clone)]
pub struct Adversary<T> {
    spec: AdversarySpec,
    model: LinearMdpModel<T>,
    /// `[segment][h]` base vectors.
    bases: Vec<Vec<Vec<T>>>,
    directions: Vec<Vec<T>>,
    phases: Vec<f64>,
    switches: Vec<usize>,
}

fn random_vector<T: Scalar>(seed: u64, tags: &[u64], d: usize) -> Vec<T> {
    let mut rng = keyed(seed, tags);
    (0..d).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect()
}

pub fn make_adversary<T: Scalar>(
    spec: &AdversarySpec,
    model: &LinearMdpModel<T>,
) -> Result<Adversary<T>, EnvError> {
    spec.check()?;
    let (horizon, d) = (model.horizon(), model.feature_dim());
    let tag = Purpose::Adversary as u64;
    let mut switches = spec.switch_episodes.clone().unwrap_or_default();
    switches.sort_unstable();
    switches.dedup();
    let segments = switches.len() + 1;
    let bases = match &spec.vectors {
        Some(v) => {
            if v.len() != horizon || v.iter().any(|c| c.len() != d) {
                return Err(EnvError::Adversary(format!(
                    "vectors must be {horizon} × {d}"
                )));
            }
            vec![v.iter().map(|c| c.iter().map(|&x| T::lit(x)).collect()).collect()]
        }
        None => (0..segments)
            .map(|seg| {
                (0..horizon)
                    .map(|h| random_vector(spec.seed, &[tag, 0, seg as u64, h as u64], d))
                    .collect()
            })
            .collect(),
    };
    let directions = (0..horizon)
        .map(|h| random_vector(spec.seed, &[tag, 1, h as u64], d))
        .collect();
    let phases = (0..horizon)
        .map(|h| keyed(spec.seed, &[tag, 2, h as u64]).gen_range(0.0..2.0 * PI))
        .collect();
    Ok(Adversary {
        spec: spec.clone(),
        model: model.clone(),
        bases,
        directions,
        phases,
        switches,
    })
}

impl<T: Scalar> Adversary<T> {
    pub fn spec(&self) -> &AdversarySpec {
        &self.spec
    }

    pub fn is_oblivious(&self) -> bool {
        self.spec.is_oblivious()
    }

    /// Normalizes one raw vector so that `max_{s,a} |φᵀc| ≤ 1` (exact grid
    /// maximum) and `‖c‖ ≤ √d`.
    pub fn normalize(&self, mut c: Vec<T>) -> Vec<T> {
        let worst = self
            .model
            .features()
            .iter()
            .fold(T::zero(), |m, phi| m.max(dot(phi, &c).abs()));
        let rescale = match self.spec.normalization {
            Normalization::Cap => worst > T::one(),
            Normalization::Unit => worst > T::zero(),
        };
        if rescale {
            c.iter_mut().for_each(|x| *x /= worst);
        }
        let cap = T::count(self.model.feature_dim()).sqrt();
        let norm = norm2(&c);
        if norm > cap {
            c.iter_mut().for_each(|x| *x *= cap / norm);
        }
        c
    }

    /// Cost vectors `{c_h^k}` for zero-based episode `k`, given the policies
    /// `π^1..π^k` submitted so far.
    pub fn next_costs(&self, k: usize, policy_history: &[PolicyTable<T>]) -> EpisodeCosts<T> {
        let horizon = self.model.horizon();
        let d = self.model.feature_dim();
        let scale = T::lit(self.spec.scale);
        let raw: Vec<Vec<T>> = match self.spec.kind {
            AdversaryKind::FixedSchedule => self.bases[0].clone(),
            AdversaryKind::Sinusoid => {
                let period = self.spec.period.unwrap_or(1.0);
                let amplitude = self.spec.amplitude.unwrap_or(0.0);
                (0..horizon)
                    .map(|h| {
                        let w = amplitude * (2.0 * PI * k as f64 / period + self.phases[h]).sin();
                        let mut c = self.bases[0][h].clone();
                        axpy(T::lit(w), &self.directions[h], &mut c);
                        c
                    })
                    .collect()
            }
            AdversaryKind::Switching => {
                let segment = self.switches.iter().filter(|&&sw| sw <= k).count();
                self.bases[segment].clone()
            }
            AdversaryKind::AdaptiveOccupancy => {
                let strength = T::lit(self.spec.strength.unwrap_or(1.0));
                let occ = match policy_history.last() {
                    Some(pi) => occupancy(&self.model, pi),
                    None => occupancy(
                        &self.model,
                        &PolicyTable::uniform(
                            horizon,
                            self.model.num_states(),
                            self.model.num_actions(),
                        ),
                    ),
                };
                (0..horizon)
                    .map(|h| {
                        let mut mean = vec![T::zero(); d];
                        for s in 0..self.model.num_states() {
                            for a in 0..self.model.num_actions() {
                                axpy(occ.d.get(h, s, a), self.model.feature(s, a), &mut mean);
                            }
                        }
                        let mut c: Vec<T> = self.bases[0][h]
                            .iter()
                            .map(|&b| (T::one() - strength) * b)
                            .collect();
                        axpy(strength, &mean, &mut c);
                        c
                    })
                    .collect()
            }
        };
        EpisodeCosts {
            vectors: raw
                .into_iter()
                .map(|c| self.normalize(c.into_iter().map(|x| x * scale).collect()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{occupancy, value_dp};
    use crate::model::CostSchedule;

    fn mixture(seed: u64) -> LinearMdpModel<f64> {
        random_linmdp(&GeneratorSpec {
            kind: GeneratorKind::SimplexMixture,
            num_states: 4,
            num_actions: 3,
            horizon: 3,
            feature_dim: 3,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn identity_dynamics_embed_exactly() {
        let eye = |n: usize| -> Vec<Vec<Vec<f64>>> {
            (0..n)
                .map(|s| vec![(0..n).map(|sp| if s == sp { 1.0 } else { 0.0 }).collect()])
                .collect()
        };
        let m = tabular_embed(3, 1, &[eye(3)], 0).unwrap();
        assert_eq!(m.feature_dim(), 3);
        for s in 0..3 {
            let mut e = vec![0.0; 3];
            e[s] = 1.0;
            assert_eq!(m.transition_factor(0, s), e.as_slice());
            assert_eq!(m.transition_distribution(0, s, 0).unwrap(), e.as_slice());
        }
    }

    #[test]
    fn non_stochastic_table_rejected() {
        let bad = vec![vec![vec![vec![0.5, 0.6]], vec![vec![0.0, 1.0]]]];
        assert!(matches!(
            tabular_embed(2, 1, &bad, 0),
            Err(EnvError::NotStochastic { step: 0, state: 0, .. })
        ));
        let neg = vec![vec![vec![vec![-0.5, 1.5]], vec![vec![0.0, 1.0]]]];
        assert!(tabular_embed(2, 1, &neg, 0).is_err());
    }

    #[test]
    fn random_models_validate() {
        for seed in 0..100 {
            assert!(mixture(seed).validate().is_valid(), "seed {seed}");
            let tab: LinearMdpModel<f64> = random_linmdp(&GeneratorSpec {
                kind: GeneratorKind::TabularOnehot,
                num_states: 3,
                num_actions: 2,
                horizon: 3,
                feature_dim: 6,
                seed,
            })
            .unwrap();
            assert!(tab.validate().is_valid(), "seed {seed}");
        }
    }

    #[test]
    fn one_dimensional_mixture_shares_next_state_distribution() {
        let m: LinearMdpModel<f64> = random_linmdp(&GeneratorSpec {
            kind: GeneratorKind::SimplexMixture,
            num_states: 3,
            num_actions: 2,
            horizon: 3,
            feature_dim: 1,
            seed: 5,
        })
        .unwrap();
        for h in 0..2 {
            let reference = m.transition_distribution(h, 0, 0).unwrap().to_vec();
            for s in 0..3 {
                for a in 0..2 {
                    assert_eq!(m.transition_distribution(h, s, a).unwrap(), reference.as_slice());
                }
            }
        }
    }

    #[test]
    fn uniform_mixture_components_give_uniform_transitions() {
        let base = mixture(3);
        let psi = vec![vec![vec![0.25; 3]; 4]; 2];
        let m = LinearMdpModel::new(4, 3, 3, 0, base.features().to_vec(), psi).unwrap();
        for s in 0..4 {
            for a in 0..3 {
                for p in m.transition_distribution(1, s, a).unwrap() {
                    assert!((p - 0.25).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn zero_adversary_gives_zero_losses() {
        let m = mixture(1);
        let adv = make_adversary(&AdversarySpec::zero(), &m).unwrap();
        for k in 0..10 {
            let c = adv.next_costs(k, &[]);
            assert!(c.vectors.iter().flatten().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn switching_is_piecewise_constant() {
        let m = mixture(2);
        let k_total = 20;
        let adv = make_adversary(&AdversarySpec::switching(4, vec![k_total / 2]), &m).unwrap();
        let costs: Vec<_> = (0..k_total).map(|k| adv.next_costs(k, &[])).collect();
        for k in 1..k_total {
            if k == k_total / 2 {
                assert_ne!(costs[k], costs[k - 1]);
            } else {
                assert_eq!(costs[k], costs[k - 1]);
            }
        }
    }

    #[test]
    fn emitted_vectors_satisfy_normalization() {
        let m = mixture(7);
        let specs = [
            AdversarySpec::fixed(1),
            AdversarySpec::sinusoid(2, 17.0, 3.0),
            AdversarySpec::switching(3, vec![5, 9]),
            AdversarySpec::adaptive(4, 0.7),
            AdversarySpec {
                scale: 25.0,
                normalization: Normalization::Unit,
                ..AdversarySpec::fixed(5)
            },
        ];
        let pi = PolicyTable::uniform(3, 4, 3);
        for spec in &specs {
            let adv = make_adversary(spec, &m).unwrap();
            let schedule = CostSchedule {
                episodes: (0..40).map(|k| adv.next_costs(k, std::slice::from_ref(&pi))).collect(),
            };
            assert!(schedule.violations(&m).is_empty(), "{spec:?}");
        }
    }

    #[test]
    fn adversaries_are_reproducible() {
        let m = mixture(8);
        let spec = AdversarySpec::sinusoid(9, 11.0, 0.8);
        let a = make_adversary(&spec, &m).unwrap();
        let b = make_adversary(&spec, &m).unwrap();
        for k in 0..30 {
            let (x, y) = (a.next_costs(k, &[]), b.next_costs(k, &[]));
            for (u, v) in x.vectors.iter().flatten().zip(y.vectors.iter().flatten()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    /// With full strength and unit normalization the cost vector is the
    /// occupancy feature mean `v_h` scaled to `max|φᵀc| = 1`. The expected
    /// step loss is then `‖v_h‖² / max|φᵀv_h|`, and any larger multiple of
    /// `v_h` would leave the feasible set.
    #[test]
    fn adaptive_adversary_maximizes_expected_loss() {
        let m = mixture(10);
        let mut r = keyed(10, &[]);
        let mut t = crate::tables::SaTable::zeros(3, 4, 3);
        for h in 0..3 {
            for s in 0..4 {
                let p: Vec<f64> = uniform_simplex(3, &mut r);
                t.row_mut(h, s).copy_from_slice(&p);
            }
        }
        let pi = PolicyTable::from_table(t);
        let adv = make_adversary(&AdversarySpec::adaptive(0, 1.0), &m).unwrap();
        let costs = adv.next_costs(0, std::slice::from_ref(&pi));
        let occ = occupancy(&m, &pi);
        let losses = m.loss_table(&costs);
        for h in 0..3 {
            let mut v = vec![0.0; 3];
            for s in 0..4 {
                for a in 0..3 {
                    axpy(occ.d.get(h, s, a), m.feature(s, a), &mut v);
                }
            }
            let worst = m.features().iter().map(|phi| dot(phi, &v).abs()).fold(0.0, f64::max);
            let expected = dot(&v, &v) / worst;
            assert!((occ.expect_step(&losses, h) - expected).abs() < 1e-12);
            let grid_max = m.features().iter().map(|phi| dot(phi, &costs.vectors[h]).abs()).fold(0.0, f64::max);
            assert!((grid_max - 1.0).abs() < 1e-12);
        }
        let total = value_dp(&m, &pi, &losses).initial_value(&m);
        assert!(total > 0.0);
    }

    #[test]
    fn spec_rejects_foreign_parameters() {
        let mut s = AdversarySpec::fixed(0);
        s.period = Some(3.0);
        assert!(make_adversary(&s, &mixture(0)).is_err());
        let bad: Result<AdversarySpec, _> =
            serde_json::from_str(r#"{"kind":"sinusoid","period":3,"amplitude":1,"bogus":1}"#);
        assert!(bad.is_err());
    }
}
