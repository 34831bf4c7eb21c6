//! Exact dynamic programming on a finite linear MDP: rollouts, policy
//! evaluation, occupancy measures, low-dimensional Q-vectors and the
//! best-in-hindsight benchmark.

use rand::Rng;

use crate::linalg::{axpy, dot};
use crate::model::{CostSchedule, EpisodeCosts, LinearMdpModel, Trajectory, TrajectoryStep};
use crate::policy::PolicyTable;
use crate::rng::sample_categorical;
use crate::scalar::Scalar;
use crate::tables::{SaTable, StateTable};

/// `V_h(s)` (with terminal row `V_{H+1} ≡ 0`) and `Q_h(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables<T> {
    pub v: StateTable<T>,
    pub q: SaTable<T>,
}

impl<T: Scalar> ValueTables<T> {
    /// `V_1(s_1)`
    pub fn initial_value(&self, model: &LinearMdpModel<T>) -> T {
        self.v.get(0, model.initial_state())
    }
}

/// State-action occupancy `d_h(s, a) = Pr(s_h = s, a_h = a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTable<T> {
    pub d: SaTable<T>,
}

impl<T: Scalar> OccupancyTable<T> {
    pub fn state(&self, h: usize, s: usize) -> T {
        self.d.row(h, s).iter().copied().sum()
    }

    /// `Σ_{s,a} d_h(s,a) f_h(s,a)`
    pub fn expect_step(&self, f: &SaTable<T>, h: usize) -> T {
        dot(self.d.step(h), f.step(h))
    }

    /// `Σ_h Σ_{s,a} d_h(s,a) f_h(s,a)`
    pub fn expect(&self, f: &SaTable<T>) -> T {
        dot(self.d.as_slice(), f.as_slice())
    }

    /// `Σ_s d_h(s) g(s)` for a per-state function.
    pub fn expect_state(&self, h: usize, g: &[T]) -> T {
        (0..g.len()).map(|s| self.state(h, s) * g[s]).sum()
    }
}

fn sample_path<T: Scalar, R: Rng + ?Sized>(
    model: &LinearMdpModel<T>,
    policy: &PolicyTable<T>,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let horizon = model.horizon();
    let mut path = Vec::with_capacity(horizon);
    let mut s = model.initial_state();
    for h in 0..horizon {
        let a = sample_categorical(policy.probs(h, s), rng);
        path.push((s, a));
        if h + 1 < horizon {
            s = sample_categorical(model.transition(h, s, a), rng);
        }
    }
    path
}

/// Plays `policy` for one episode from `s_1`, recording the realized losses
/// `ℓ_h = φ(s_h, a_h)ᵀ c_h`.
pub fn rollout<T: Scalar, R: Rng + ?Sized>(
    model: &LinearMdpModel<T>,
    policy: &PolicyTable<T>,
    costs: &EpisodeCosts<T>,
    rng: &mut R,
) -> Trajectory<T> {
    let steps = sample_path(model, policy, rng)
        .into_iter()
        .enumerate()
        .map(|(h, (state, action))| TrajectoryStep {
            state,
            action,
            loss: dot(model.feature(state, action), &costs.vectors[h]),
        })
        .collect();
    Trajectory { steps }
}

/// Simulator access: a state-action path of `policy` from `s_1`, no losses.
pub fn simulate<T: Scalar, R: Rng + ?Sized>(
    model: &LinearMdpModel<T>,
    policy: &PolicyTable<T>,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    sample_path(model, policy, rng)
}

/// Backward induction for `policy` under an arbitrary loss table.
pub fn value_dp<T: Scalar>(
    model: &LinearMdpModel<T>,
    policy: &PolicyTable<T>,
    losses: &SaTable<T>,
) -> ValueTables<T> {
    let (horizon, n, na) = (model.horizon(), model.num_states(), model.num_actions());
    let mut v = StateTable::zeros(horizon, n);
    let mut q = SaTable::zeros(horizon, n, na);
    for h in (0..horizon).rev() {
        for s in 0..n {
            for a in 0..na {
                let mut value = losses.get(h, s, a);
                if h + 1 < horizon {
                    value += model.expect_next(h, s, a, v.step(h + 1));
                }
                q.set(h, s, a, value);
            }
            let vs = policy.average(&q, h, s);
            v.set(h, s, vs);
        }
    }
    ValueTables { v, q }
}

/// Forward recursion of the occupancy measure from `δ_{s_1}`.
pub fn occupancy<T: Scalar>(model: &LinearMdpModel<T>, policy: &PolicyTable<T>) -> OccupancyTable<T> {
    let (horizon, n, na) = (model.horizon(), model.num_states(), model.num_actions());
    let mut d = SaTable::zeros(horizon, n, na);
    let mut state_mass = vec![T::zero(); n];
    state_mass[model.initial_state()] = T::one();
    for h in 0..horizon {
        for (s, &mass) in state_mass.iter().enumerate() {
            if mass == T::zero() {
                continue;
            }
            for (a, &p) in policy.probs(h, s).iter().enumerate() {
                d.set(h, s, a, mass * p);
            }
        }
        if h + 1 < horizon {
            let mut next = vec![T::zero(); n];
            for s in 0..n {
                for a in 0..na {
                    let w = d.get(h, s, a);
                    if w != T::zero() {
                        axpy(w, model.transition(h, s, a), &mut next);
                    }
                }
            }
            state_mass = next;
        }
    }
    OccupancyTable { d }
}

/// `q_h = c_h + Σ_{s'} ψ_h(s') V_{h+1}(s')` given the value tables of the
/// policy under the same costs.
pub fn q_vector_from_values<T: Scalar>(
    model: &LinearMdpModel<T>,
    costs: &EpisodeCosts<T>,
    values: &ValueTables<T>,
    h: usize,
) -> Vec<T> {
    let mut q = costs.vectors[h].clone();
    if h + 1 < model.horizon() {
        let next = values.v.step(h + 1);
        for (sp, &w) in next.iter().enumerate() {
            axpy(w, model.transition_factor(h, sp), &mut q);
        }
    }
    q
}

/// Low-dimensional Q-vector with `φ(s,a)ᵀ q_h = Q_h^π(s, a)`.
pub fn q_vector<T: Scalar>(
    model: &LinearMdpModel<T>,
    policy: &PolicyTable<T>,
    costs: &EpisodeCosts<T>,
    h: usize,
) -> Vec<T> {
    let values = value_dp(model, policy, &model.loss_table(costs));
    q_vector_from_values(model, costs, &values, h)
}

/// Optimal deterministic policy for a single loss table, ties broken toward
/// the lowest action index.
pub fn optimal_policy<T: Scalar>(
    model: &LinearMdpModel<T>,
    losses: &SaTable<T>,
) -> (PolicyTable<T>, ValueTables<T>) {
    let (horizon, n, na) = (model.horizon(), model.num_states(), model.num_actions());
    let mut v = StateTable::zeros(horizon, n);
    let mut q = SaTable::zeros(horizon, n, na);
    let mut choice = vec![vec![0usize; n]; horizon];
    for h in (0..horizon).rev() {
        for s in 0..n {
            let mut best = T::infinity();
            for a in 0..na {
                let mut value = losses.get(h, s, a);
                if h + 1 < horizon {
                    value += model.expect_next(h, s, a, v.step(h + 1));
                }
                q.set(h, s, a, value);
                if value < best {
                    best = value;
                    choice[h][s] = a;
                }
            }
            v.set(h, s, best);
        }
    }
    (PolicyTable::deterministic(&choice, na), ValueTables { v, q })
}

/// Best fixed policy in hindsight `argmin_π Σ_k V_1^{k,π}(s_1)` and its total
/// value. Dynamics are shared across episodes and losses are linear in the
/// costs, so this is backward induction on the summed cost vectors.
pub fn best_in_hindsight<T: Scalar>(
    model: &LinearMdpModel<T>,
    schedule: &CostSchedule<T>,
) -> (PolicyTable<T>, T) {
    let mut total = EpisodeCosts::zeros(model.horizon(), model.feature_dim());
    for ep in &schedule.episodes {
        for (acc, c) in total.vectors.iter_mut().zip(&ep.vectors) {
            axpy(T::one(), c, acc);
        }
    }
    let (policy, values) = optimal_policy(model, &model.loss_table(&total));
    let value = values.initial_value(model);
    (policy, value)
}
