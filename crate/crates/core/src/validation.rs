//! Executable checks of the identities and inequalities the algorithm's
//! analysis relies on. Exact checks compare against a fixed tolerance;
//! statistical checks carry a Monte-Carlo confidence half-width.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    q_hat, run_polsbe, AgentConfig, AgentError, EpisodeArtifacts, EstimationStatus, Mode, RunOptions, RunOutput,
    Variant,
};
use crate::dp::{occupancy, rollout, value_dp, OccupancyTable};
use crate::envgen::{make_adversary, random_linmdp, tabular_embed, AdversarySpec, EnvError, GeneratorKind, GeneratorSpec};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::mgr::{
    mgr, mgr_bias_check, mgr_second_moment_check, mgr_theory_params, FeatureDistribution, MgrError, MgrParams,
};
use crate::model::{EpisodeCosts, LinearMdpModel};
use crate::olspe::{build_gram, dynamics_bonus, ClipRule, TransitionDataset, LAMBDA};
use crate::policy::PolicyTable;
use crate::rng::{keyed, uniform_simplex, Purpose, StreamRng};
use crate::tables::SaTable;

/// Tolerance of the exact identity checks.
pub const IDENTITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Mgr(#[from] MgrError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Exact,
    Statistical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    pub observed: f64,
    pub bound: f64,
    pub pass: bool,
    /// Monte-Carlo half-width added to the bound (statistical checks only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci: Option<f64>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl CheckResult {
    pub fn exact(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            kind: CheckKind::Exact,
            observed,
            bound,
            pass: observed <= bound,
            ci: None,
            detail: String::new(),
        }
    }

    pub fn statistical(name: impl Into<String>, observed: f64, bound: f64, ci: f64) -> Self {
        Self {
            name: name.into(),
            kind: CheckKind::Statistical,
            observed,
            bound,
            pass: observed <= bound + ci,
            ci: Some(ci),
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    /// Folds many results of the same check into the worst margin.
    pub fn worst(name: impl Into<String>, results: &[CheckResult]) -> Self {
        let failures = results.iter().filter(|r| !r.pass).count();
        let worst = results
            .iter()
            .max_by(|a, b| {
                let m = |r: &CheckResult| r.observed - r.bound - r.ci.unwrap_or(0.0);
                m(a).partial_cmp(&m(b)).unwrap_or(std::cmp::Ordering::Equal)
            })
            .cloned();
        match worst {
            Some(w) => Self {
                name: name.into(),
                pass: failures == 0,
                detail: format!("{} instances, {failures} failures", results.len()),
                ..w
            },
            None => Self::exact(name, 0.0, 0.0).with_detail("no instances"),
        }
    }
}

/// A random policy with rows drawn uniformly from the simplex.
pub fn random_policy(horizon: usize, states: usize, actions: usize, rng: &mut StreamRng) -> PolicyTable<f64> {
    let mut t = SaTable::zeros(horizon, states, actions);
    for h in 0..horizon {
        for s in 0..states {
            let p: Vec<f64> = uniform_simplex(actions, rng);
            t.row_mut(h, s).copy_from_slice(&p);
        }
    }
    PolicyTable::from_table(t)
}

pub fn random_table(horizon: usize, states: usize, actions: usize, scale: f64, rng: &mut StreamRng) -> SaTable<f64> {
    SaTable::from_fn(horizon, states, actions, |_, _, _| rng.gen_range(-scale..scale))
}

/// A random model with 2–5 states, 2–3 actions, horizon 1–4 and
/// dimension 1–4, alternating between the two generator kinds.
pub fn random_instance(seed: u64) -> LinearMdpModel<f64> {
    let mut rng = keyed(seed, &[Purpose::Validation as u64, 0]);
    let num_states = rng.gen_range(2..=5);
    let num_actions = rng.gen_range(2..=3);
    let horizon = rng.gen_range(1..=4);
    let (kind, feature_dim) = if seed.is_multiple_of(2) {
        (GeneratorKind::SimplexMixture, rng.gen_range(1..=4))
    } else {
        (GeneratorKind::TabularOnehot, num_states * num_actions)
    };
    random_linmdp(&GeneratorSpec {
        kind,
        num_states,
        num_actions,
        horizon,
        feature_dim,
        seed,
    })
    .expect("generator sizes are valid")
}

/// `max |Q_h − ℓ_h − P_h V_{h+1}|` and `max |V_h − ⟨π, Q_h⟩|`.
pub fn check_bellman(model: &LinearMdpModel<f64>, policy: &PolicyTable<f64>, losses: &SaTable<f64>) -> CheckResult {
    let vt = value_dp(model, policy, losses);
    let (horizon, n, na) = (model.horizon(), model.num_states(), model.num_actions());
    let mut worst = 0.0f64;
    for h in 0..horizon {
        for s in 0..n {
            for a in 0..na {
                let next = if h + 1 < horizon {
                    model
                        .transition_distribution(h, s, a)
                        .expect("h < H − 1")
                        .iter()
                        .zip(vt.v.step(h + 1))
                        .map(|(p, v)| p * v)
                        .sum()
                } else {
                    0.0
                };
                worst = worst.max((vt.q.get(h, s, a) - losses.get(h, s, a) - next).abs());
            }
            let avg: f64 = policy.probs(h, s).iter().zip(vt.q.row(h, s)).map(|(p, q)| p * q).sum();
            worst = worst.max((vt.v.get(h, s) - avg).abs());
        }
    }
    CheckResult::exact("bellman_consistency", worst, 1e-10)
}

/// `|Σ_h ⟨d_h, ℓ_h⟩ − V_1(s_1)|`
pub fn check_duality(model: &LinearMdpModel<f64>, policy: &PolicyTable<f64>, losses: &SaTable<f64>) -> CheckResult {
    let v1 = value_dp(model, policy, losses).initial_value(model);
    let occ = occupancy(model, policy);
    let mut worst = (occ.expect(losses) - v1).abs();
    for h in 0..model.horizon() {
        let mass: f64 = occ.d.step(h).iter().sum();
        worst = worst.max((mass - 1.0).abs());
    }
    CheckResult::exact("occupancy_value_duality", worst, 1e-10)
}

/// `|‖q_h‖ ≤ H√d|` and `max |φᵀq_h − Q_h|` for every step.
pub fn check_q_vectors(model: &LinearMdpModel<f64>, policy: &PolicyTable<f64>, costs: &EpisodeCosts<f64>) -> CheckResult {
    let vt = value_dp(model, policy, &model.loss_table(costs));
    let bound = model.horizon() as f64 * (model.feature_dim() as f64).sqrt();
    let mut worst = 0.0f64;
    let mut norm_excess = f64::NEG_INFINITY;
    for h in 0..model.horizon() {
        let q = crate::dp::q_vector_from_values(model, costs, &vt, h);
        norm_excess = norm_excess.max(crate::linalg::norm2(&q) - bound);
        for s in 0..model.num_states() {
            for a in 0..model.num_actions() {
                worst = worst.max((dot(model.feature(s, a), &q) - vt.q.get(h, s, a)).abs());
            }
        }
    }
    let mut r = CheckResult::exact("q_vector", worst, 1e-9);
    if norm_excess > 1e-9 {
        r.pass = false;
        r.detail = format!("‖q_h‖ exceeds H√d by {norm_excess}");
    }
    r
}

/// Residual of the extended value difference identity for arbitrary `Q̂`
/// with `V̂_h(s) = ⟨π_h(·|s), Q̂_h(s,·)⟩`.
pub fn check_extended_value_difference(
    model: &LinearMdpModel<f64>,
    pi: &PolicyTable<f64>,
    pi_prime: &PolicyTable<f64>,
    q_hat: &SaTable<f64>,
    losses: &SaTable<f64>,
) -> CheckResult {
    let (horizon, n, na) = (model.horizon(), model.num_states(), model.num_actions());
    let v_hat: Vec<Vec<f64>> = (0..horizon)
        .map(|h| (0..n).map(|s| pi.average(q_hat, h, s)).collect())
        .collect();
    let s1 = model.initial_state();
    let lhs = v_hat[0][s1] - value_dp(model, pi_prime, losses).initial_value(model);
    let occ = occupancy(model, pi_prime);
    let mut rhs = 0.0;
    for h in 0..horizon {
        for s in 0..n {
            let mass = occ.state(h, s);
            rhs += mass * (pi.average(q_hat, h, s) - pi_prime.average(q_hat, h, s));
            for a in 0..na {
                let next = if h + 1 < horizon {
                    model.expect_next(h, s, a, &v_hat[h + 1])
                } else {
                    0.0
                };
                rhs += occ.d.get(h, s, a) * (q_hat.get(h, s, a) - losses.get(h, s, a) - next);
            }
        }
    }
    CheckResult::exact("extended_value_difference", (lhs - rhs).abs(), IDENTITY_TOLERANCE)
}

/// `Σ_i ‖φ_i‖²_{Λ_i⁻¹} ≤ 2d·ln(1 + N/(dλ))` with `Λ_i = λI + Σ_{t<i} φ_tφ_tᵀ`.
pub fn check_elliptical_potential(samples: &[Vec<f64>], d: usize, lambda: f64) -> Result<CheckResult, ValidationError> {
    if lambda < 1.0 {
        return Err(ValidationError::Precondition(format!("λ ≥ 1 (got {lambda})")));
    }
    if samples.iter().any(|v| v.len() != d || crate::linalg::norm2(v) > 1.0 + 1e-12) {
        return Err(ValidationError::Precondition("samples must be length d with ‖φ‖ ≤ 1".into()));
    }
    let mut gram = Matrix::scaled_identity(d, lambda);
    let mut total = 0.0;
    for phi in samples {
        let chol = Cholesky::factor(&gram).map_err(|e| ValidationError::Precondition(e.to_string()))?;
        total += chol.inv_quad_form(phi);
        gram.rank_one_update(1.0, phi, phi);
    }
    let n = samples.len() as f64;
    let bound = 2.0 * d as f64 * (1.0 + n / (d as f64 * lambda)).ln();
    Ok(CheckResult::exact("elliptical_potential", total, bound * (1.0 + 1e-12)))
}

fn exp_weights(cumulative: &[f64], eta: f64) -> Vec<f64> {
    let min = cumulative.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = cumulative.iter().map(|&l| (-eta * (l - min)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn omd_regret(losses: &[Vec<f64>], iterates: &[Vec<f64>]) -> (f64, f64) {
    let n = losses[0].len();
    let learner: f64 = losses.iter().zip(iterates).map(|(g, x)| dot(g, x)).sum();
    let best = (0..n)
        .map(|i| losses.iter().map(|g| g[i]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let second: f64 = losses
        .iter()
        .zip(iterates)
        .map(|(g, x)| g.iter().zip(x).map(|(gi, xi)| xi * gi * gi).sum::<f64>())
        .sum();
    (learner - best, second)
}

fn check_losses(losses: &[Vec<f64>], eta: f64) -> Result<usize, ValidationError> {
    let n = losses.first().map_or(0, Vec::len);
    if n == 0 || losses.iter().any(|g| g.len() != n) {
        return Err(ValidationError::Precondition("nonempty, equal-length loss vectors".into()));
    }
    if !(eta > 0.0) {
        return Err(ValidationError::Precondition("η > 0".into()));
    }
    if losses.iter().flatten().any(|&g| eta * g < -1.0) {
        return Err(ValidationError::Precondition("η·g ≥ −1".into()));
    }
    Ok(n)
}

/// Exponential weights from the uniform start; linear regret against the
/// best single action versus `ln n/η + η Σ_k Σ_i x_k(i) g_k(i)²`.
pub fn check_omd(losses: &[Vec<f64>], eta: f64) -> Result<CheckResult, ValidationError> {
    let n = check_losses(losses, eta)?;
    let mut cumulative = vec![0.0; n];
    let mut iterates = Vec::with_capacity(losses.len());
    for g in losses {
        iterates.push(exp_weights(&cumulative, eta));
        crate::linalg::axpy(1.0, g, &mut cumulative);
    }
    let (regret, second) = omd_regret(losses, &iterates);
    let bound = (n as f64).ln() / eta + eta * second;
    Ok(CheckResult::exact("omd", regret, bound + 1e-9))
}

/// Blocked exponential weights: the iterate is frozen on blocks of `τ`
/// rounds and updated with the block average `(1/|T_j|) Σ_{k∈T_j} g_k`.
/// Bound `τ ln n/η + τ max_k ‖g_k‖_∞ + η Σ_k Σ_i x_k(i) g_k(i)²`.
pub fn check_blocking_omd(losses: &[Vec<f64>], eta: f64, tau: usize) -> Result<CheckResult, ValidationError> {
    let n = check_losses(losses, eta)?;
    if tau == 0 {
        return Err(ValidationError::Precondition("τ ≥ 1".into()));
    }
    let mut cumulative = vec![0.0; n];
    let mut iterates = Vec::with_capacity(losses.len());
    for block in losses.chunks(tau) {
        let x = exp_weights(&cumulative, eta);
        for g in block {
            iterates.push(x.clone());
            crate::linalg::axpy(1.0 / block.len() as f64, g, &mut cumulative);
        }
    }
    let (regret, second) = omd_regret(losses, &iterates);
    let max_g = losses.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let bound = tau as f64 * (n as f64).ln() / eta + tau as f64 * max_g + eta * second;
    Ok(CheckResult::exact("blocking_omd", regret, bound + 1e-9))
}

/// Per-episode `|Bias₁ + Bias₂ + OMD + Exploration − regret|`.
pub fn check_decomposition_sum(output: &RunOutput<f64>) -> Result<CheckResult, ValidationError> {
    let dec = output
        .report
        .decomposition
        .as_ref()
        .ok_or_else(|| ValidationError::Precondition("run without diagnostics".into()))?;
    let r = &output.report;
    let worst = (0..r.episodes())
        .map(|k| {
            let sum = dec.bias1[k] + dec.bias2[k] + dec.omd[k] + dec.exploration[k];
            (sum - (r.value_pik[k] - r.value_pistar[k])).abs()
        })
        .fold(0.0, f64::max);
    Ok(CheckResult::exact("regret_decomposition_sum", worst, IDENTITY_TOLERANCE))
}

/// `0 ≤ B̃_h ≤ B_h^max` and `W̃_h = ⟨π, B̃_h⟩` on every stored episode.
pub fn check_clipping(artifacts: &[EpisodeArtifacts<f64>], beta: f64, gamma: f64) -> CheckResult {
    let mut worst = 0.0f64;
    for art in artifacts {
        let (horizon, n, _) = art.b_tilde.shape();
        for h in 0..horizon {
            let cap = 2.0 * beta * (horizon - h) as f64 / gamma.sqrt();
            for s in 0..n {
                for &x in art.b_tilde.row(h, s) {
                    worst = worst.max(-x).max(x - cap);
                }
                worst = worst.max((art.w_tilde.get(h, s) - art.policy.average(&art.b_tilde, h, s)).abs());
            }
        }
    }
    CheckResult::exact("bonus_clipping", worst, 1e-12)
}

/// Largest violation of `b + P W̃_{h+1} ≤ B̃ ≤ b + P W̃_{h+1} + 2b^P` in one
/// episode, with `P W̃` computed from the true transitions.
pub fn confidence_violation(model: &LinearMdpModel<f64>, art: &EpisodeArtifacts<f64>) -> f64 {
    let (horizon, n, na) = (model.horizon(), model.num_states(), model.num_actions());
    let mut worst = f64::NEG_INFINITY;
    for h in 0..horizon {
        for s in 0..n {
            for a in 0..na {
                let next = if h + 1 < horizon {
                    model.expect_next(h, s, a, art.w_tilde.step(h + 1))
                } else {
                    0.0
                };
                let lower = art.bonus.get(h, s, a) + next;
                let upper = lower + 2.0 * art.dynamics_bonus.get(h, s, a);
                let x = art.b_tilde.get(h, s, a);
                worst = worst.max(lower - x).max(x - upper);
            }
        }
    }
    worst
}

/// `β^P = C₁ H² d^{3/2} ln(dβKH/δ)`
pub fn confidence_beta_p(c1: f64, d: usize, horizon: usize, beta: f64, k: usize, delta: f64) -> f64 {
    let (d, h) = (d as f64, horizon as f64);
    c1 * h * h * d.powf(1.5) * (d * beta * k as f64 * h / delta).ln()
}

/// Setup of the coverage experiment on a tabular-embedded model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub episodes: usize,
    pub gamma: f64,
    pub m: usize,
    pub n: usize,
    pub tau: usize,
    pub c1: f64,
    pub delta: f64,
    /// Overrides the formula for `β^P` (e.g. 0 for the negative control).
    pub beta_p: Option<f64>,
}

impl CoverageSpec {
    pub fn standard() -> Self {
        Self {
            num_states: 4,
            num_actions: 2,
            horizon: 3,
            episodes: 256,
            gamma: 0.25,
            m: 8,
            n: 16,
            tau: 32,
            c1: 1.0,
            delta: 0.05,
            beta_p: None,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn beta(&self) -> f64 {
        2.0 * self.horizon as f64 * (self.gamma * self.feature_dim() as f64).sqrt()
    }

    pub fn agent_config(&self) -> AgentConfig {
        let beta = self.beta();
        let d = self.feature_dim();
        AgentConfig {
            eta: self.gamma / (2.0 * self.horizon as f64),
            gamma: self.gamma,
            beta,
            beta_p: self
                .beta_p
                .unwrap_or_else(|| confidence_beta_p(self.c1, d, self.horizon, beta, self.episodes, self.delta)),
            epsilon: 1.0 / self.episodes as f64,
            sigma: 0.25,
            mode: Mode::Practical,
            variant: Variant::Blocking,
            c1: self.c1,
            m: Some(self.m),
            n: Some(self.n),
            tau: Some(self.tau),
        }
    }

    /// Random stochastic tables for trial `t`, embedded one-hot.
    pub fn model(&self, trial: u64) -> Result<LinearMdpModel<f64>, EnvError> {
        let mut rng = keyed(trial, &[Purpose::Validation as u64, 1]);
        let tables: Vec<Vec<Vec<Vec<f64>>>> = (0..self.horizon - 1)
            .map(|_| {
                (0..self.num_states)
                    .map(|_| (0..self.num_actions).map(|_| uniform_simplex(self.num_states, &mut rng)).collect())
                    .collect()
            })
            .collect();
        tabular_embed(self.num_states, self.num_actions, &tables, 0)
    }
}

/// Outcome of one coverage trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageTrial {
    pub violated: bool,
    pub violating_tuples: usize,
    pub tuples: usize,
    pub worst: f64,
}

/// Runs the agent with diagnostics on trial `t` and checks the two-sided
/// backup bound at every `(k, h, s, a)` of every estimated episode.
pub fn coverage_trial(spec: &CoverageSpec, trial: u64) -> Result<(CoverageTrial, RunOutput<f64>), ValidationError> {
    let model = spec.model(trial)?;
    let adversary = make_adversary(&AdversarySpec::sinusoid(trial, 64.0, 0.5), &model)?;
    let out = run_polsbe(
        &model,
        &adversary,
        spec.episodes,
        &spec.agent_config(),
        trial,
        RunOptions {
            diagnostics: true,
            clip: ClipRule::Standard,
        },
    )?;
    let per_tuple = model.horizon() * model.num_states() * model.num_actions();
    let mut result = CoverageTrial {
        violated: false,
        violating_tuples: 0,
        tuples: 0,
        worst: f64::NEG_INFINITY,
    };
    for art in out.artifacts.as_deref().unwrap_or_default() {
        if art.status == EstimationStatus::Skipped {
            continue;
        }
        let w = confidence_violation(&model, art);
        result.worst = result.worst.max(w);
        result.tuples += per_tuple;
        if w > 1e-9 {
            result.violated = true;
            result.violating_tuples += count_violations(&model, art);
        }
    }
    Ok((result, out))
}

fn count_violations(model: &LinearMdpModel<f64>, art: &EpisodeArtifacts<f64>) -> usize {
    let (horizon, n, na) = (model.horizon(), model.num_states(), model.num_actions());
    let mut count = 0;
    for h in 0..horizon {
        for s in 0..n {
            for a in 0..na {
                let next = if h + 1 < horizon {
                    model.expect_next(h, s, a, art.w_tilde.step(h + 1))
                } else {
                    0.0
                };
                let lower = art.bonus.get(h, s, a) + next;
                let x = art.b_tilde.get(h, s, a);
                if lower - x > 1e-9 || x - lower - 2.0 * art.dynamics_bonus.get(h, s, a) > 1e-9 {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Fraction of trials with any violation, against `δ` plus a binomial
/// half-width `1.96·sqrt(δ(1−δ)/trials)`.
pub fn check_backup_confidence(spec: &CoverageSpec, trials: usize) -> Result<(CheckResult, Vec<CoverageTrial>), ValidationError> {
    let results: Vec<CoverageTrial> = (0..trials as u64)
        .into_par_iter()
        .map(|t| coverage_trial(spec, t).map(|(r, _)| r))
        .collect::<Result<_, _>>()?;
    let rate = results.iter().filter(|r| r.violated).count() as f64 / trials.max(1) as f64;
    let ci = 1.96 * (spec.delta * (1.0 - spec.delta) / trials.max(1) as f64).sqrt();
    let tuples: usize = results.iter().map(|r| r.tuples).sum();
    let bad: usize = results.iter().map(|r| r.violating_tuples).sum();
    let check = CheckResult::statistical("backup_confidence", rate, spec.delta, ci).with_detail(format!(
        "β^P = {:.4}, C₁ = {}, tuple violation rate {:.3e}",
        spec.agent_config().beta_p,
        spec.c1,
        bad as f64 / tuples.max(1) as f64
    ));
    Ok((check, results))
}

/// Exploration term versus `2ΣΣ E_{d^k}[b^P + b] − ΣΣ E_{d*}[b]`, evaluated
/// exactly. Only meaningful when the backup bound held on every tuple; the
/// result says so in `detail` otherwise.
pub fn check_exploration_bound(model: &LinearMdpModel<f64>, output: &RunOutput<f64>) -> Result<CheckResult, ValidationError> {
    let arts = output
        .artifacts
        .as_deref()
        .ok_or_else(|| ValidationError::Precondition("run without diagnostics".into()))?;
    let d_star = occupancy(model, &output.best_policy);
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut covered = true;
    for art in arts {
        covered &= confidence_violation(model, art) <= 1e-9;
        let d_k: OccupancyTable<f64> = occupancy(model, &art.policy);
        let mut both = art.bonus.clone();
        both.add_scaled(1.0, &art.dynamics_bonus);
        rhs += 2.0 * d_k.expect(&both) - d_star.expect(&art.bonus);
        for h in 0..model.horizon() {
            for s in 0..model.num_states() {
                let mass = d_star.state(h, s);
                lhs += mass * (art.policy.average(&art.b_tilde, h, s) - output.best_policy.average(&art.b_tilde, h, s));
            }
        }
    }
    let tol = IDENTITY_TOLERANCE * (1.0 + rhs.abs());
    let mut r = CheckResult::exact("exploration_bound", lhs - rhs, tol);
    if !covered {
        r.pass = true;
        r.detail = "confidence event failed; bound not applicable".into();
    }
    Ok(r)
}

/// Monte-Carlo check of both bonus expectation bounds under `policy`:
/// `E_{d_h}[b] ≤ 2β(√d + √ε)` with `N` chosen so the MGR bias is at most
/// `ε`, and `E[E_{d_h}[b^P]] ≤ 10β^P√d·ln(2|D|)/√|D|` for `|D|` i.i.d.
/// rollouts.
pub fn check_bonus_expectations(
    model: &LinearMdpModel<f64>,
    policy: &PolicyTable<f64>,
    beta: f64,
    beta_p: f64,
    gamma: f64,
    epsilon: f64,
    dataset_size: usize,
    replicates: usize,
    seed: u64,
) -> Result<(CheckResult, CheckResult), ValidationError> {
    let d = model.feature_dim();
    let occ = occupancy(model, policy);
    let n_depth = mgr_theory_params(d, gamma.min(0.49), 0.25, epsilon.min(0.25 / 6.0))?.n;
    let params = MgrParams::without_guarantee(4, n_depth, gamma)?;
    let dists: Vec<FeatureDistribution<f64>> = (0..model.horizon())
        .map(|h| {
            let mut support = Vec::new();
            let mut weights = Vec::new();
            for s in 0..model.num_states() {
                for a in 0..model.num_actions() {
                    support.push(model.feature(s, a).to_vec());
                    weights.push(occ.d.get(h, s, a));
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            FeatureDistribution::new(support, weights)
        })
        .collect::<Result<_, _>>()?;
    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = keyed(seed, &[Purpose::Replicate as u64, r as u64]);
            let mut q_means = Vec::with_capacity(model.horizon());
            for (h, dist) in dists.iter().enumerate() {
                let samples: Vec<&[f64]> = (0..params.samples_needed()).map(|_| dist.sample(&mut rng)).collect();
                let est = mgr(&samples, &params)?;
                let b = crate::agent::q_bonus(model, &est.matrix, policy, h, beta);
                q_means.push(dot(occ.d.step(h), &b));
            }
            let mut ds = TransitionDataset::new(model.horizon());
            let zero = EpisodeCosts::zeros(model.horizon(), d);
            for i in 0..dataset_size {
                let t = rollout(model, policy, &zero, &mut rng);
                ds.push_path(i as u64, &t.steps.iter().map(|st| (st.state, st.action)).collect::<Vec<_>>());
            }
            let mut p_means = Vec::with_capacity(model.horizon());
            for h in 0..model.horizon() {
                let gram = build_gram(ds.step(h).iter().map(|t| model.feature(t.state, t.action)), d, LAMBDA);
                let chol = Cholesky::factor(&gram).map_err(MgrError::from)?;
                let mean: f64 = (0..model.num_states())
                    .flat_map(|s| (0..model.num_actions()).map(move |a| (s, a)))
                    .map(|(s, a)| occ.d.get(h, s, a) * dynamics_bonus(&chol, beta_p, model.feature(s, a)))
                    .sum();
                p_means.push(mean);
            }
            Ok((q_means, p_means))
        })
        .collect::<Result<_, MgrError>>()?;
    let summarize = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> (f64, f64) {
        let mut worst = (f64::NEG_INFINITY, 0.0);
        for h in 0..model.horizon() {
            let xs: Vec<f64> = draws.iter().map(|x| pick(x)[h]).collect();
            let (mean, se) = mean_se(&xs);
            if mean > worst.0 {
                worst = (mean, se);
            }
        }
        worst
    };
    let (q_mean, q_se) = summarize(&|x| &x.0);
    let (p_mean, p_se) = summarize(&|x| &x.1);
    let q_bound = 2.0 * beta * ((d as f64).sqrt() + epsilon.sqrt());
    let size = dataset_size.max(1) as f64;
    let p_bound = 10.0 * beta_p * (d as f64).sqrt() * (2.0 * size).ln() / size.sqrt();
    Ok((
        CheckResult::statistical("q_bonus_expectation", q_mean, q_bound, 3.0 * q_se),
        CheckResult::statistical("dynamics_bonus_expectation", p_mean, p_bound, 3.0 * p_se),
    ))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo unbiasedness of `Q̂`: the replicate mean of `Q̂_h` matches
/// `φᵀ E[Σ̂⁺] Σ_h q_h`, with `E[Σ̂⁺] = c Σ_{n=0}^{N} (I − cΣ_γ)^n` and
/// `Σ_h = E_{d_h}[φφᵀ]`. Reports the largest z-score over `(h, s, a)`.
pub fn check_q_hat_unbiased(
    model: &LinearMdpModel<f64>,
    policy: &PolicyTable<f64>,
    costs: &EpisodeCosts<f64>,
    params: &MgrParams,
    replicates: usize,
    seed: u64,
) -> Result<CheckResult, ValidationError> {
    let (horizon, n, na, d) = (model.horizon(), model.num_states(), model.num_actions(), model.feature_dim());
    let occ = occupancy(model, policy);
    let values = value_dp(model, policy, &model.loss_table(costs));
    let dists: Vec<FeatureDistribution<f64>> = (0..horizon)
        .map(|h| {
            let support = model.features().to_vec();
            FeatureDistribution::new(support, occ.d.step(h).to_vec())
        })
        .collect::<Result<_, _>>()?;
    let mut expected = Vec::with_capacity(horizon);
    for (h, dist) in dists.iter().enumerate() {
        let cov = dist.second_moment();
        let mut reg = cov.clone();
        reg.add_diagonal(params.gamma);
        let c = params.step();
        let mut step = Matrix::identity(d);
        step.add_scaled(-c, &reg);
        let mut power = Matrix::identity(d);
        let mut mean_sigma = Matrix::identity(d);
        for _ in 0..params.n {
            power = power.matmul(&step);
            mean_sigma.add_scaled(1.0, &power);
        }
        mean_sigma.scale(c);
        let q = crate::dp::q_vector_from_values(model, costs, &values, h);
        let target = mean_sigma.matvec(&cov.matvec(&q));
        expected.push(model.features().iter().map(|phi| dot(phi, &target)).collect::<Vec<f64>>());
    }
    let draws: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = keyed(seed, &[Purpose::Replicate as u64, r as u64]);
            let traj = rollout(model, policy, costs, &mut rng);
            let mut out = Vec::with_capacity(horizon * n * na);
            for (h, dist) in dists.iter().enumerate() {
                let samples: Vec<&[f64]> = (0..params.samples_needed()).map(|_| dist.sample(&mut rng)).collect();
                let est = mgr(&samples, params)?;
                out.extend(q_hat(model, &est.matrix, &traj, h).1);
            }
            Ok(out)
        })
        .collect::<Result<_, MgrError>>()?;
    let mut worst_z = 0.0f64;
    for h in 0..horizon {
        for i in 0..n * na {
            let xs: Vec<f64> = draws.iter().map(|x| x[h * n * na + i]).collect();
            let (mean, se) = mean_se(&xs);
            let gap = (mean - expected[h][i]).abs();
            let z = if se > 0.0 { gap / se } else if gap < 1e-12 { 0.0 } else { f64::INFINITY };
            worst_z = worst_z.max(z);
        }
    }
    // max over H·S·A correlated z-scores; 4.5 keeps the family-wise false alarm rate small
    Ok(CheckResult::statistical("q_hat_unbiased", worst_z, 4.5, 0.0).with_detail(format!("{replicates} replicates")))
}

/// Norm, bias and second-moment checks of MGR at small dimension.
pub fn check_mgr_suite(norm_draws: usize, bias_replicates: usize, moment_replicates: usize, seed: u64) -> Result<Vec<CheckResult>, ValidationError> {
    let mut out = Vec::new();
    let norm_results: Vec<CheckResult> = (0..norm_draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = keyed(seed, &[Purpose::Validation as u64, 10, i]);
            let d = rng.gen_range(1..=4);
            let gamma = rng.gen_range(0.01..0.5);
            let params = MgrParams::new(rng.gen_range(1..=4), rng.gen_range(1..=32), gamma)?;
            let samples: Vec<Vec<f64>> = (0..params.samples_needed())
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let norm = crate::linalg::norm2(&v).max(1.0);
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect();
            let est = mgr(&samples, &params)?;
            Ok(CheckResult::exact("mgr_norm", est.op_norm(), (1.0 / gamma) * (1.0 + 1e-10)))
        })
        .collect::<Result<_, MgrError>>()?;
    out.push(CheckResult::worst("mgr_norm_bound", &norm_results));

    let two_point = FeatureDistribution::new(vec![vec![0.9, 0.0], vec![0.6, 0.8]], vec![0.5, 0.5])?;
    let n48 = mgr_theory_params(2, 0.25, 0.25, 0.01)?.n;
    let bias = mgr_bias_check(&two_point, 0.25, n48, bias_replicates, seed)?;
    out.push(
        CheckResult::statistical("mgr_bias", bias.observed, 0.01, 3.0 * bias.standard_error)
            .with_detail(format!("d=2 γ=0.25 N={n48}")),
    );

    let line = FeatureDistribution::new(vec![vec![0.3], vec![1.0]], vec![0.5, 0.5])?;
    let theory = mgr_theory_params(1, 0.3, 0.25, 0.25 / 6.0)?;
    for (label, params) in [("formula", theory), ("listed", MgrParams::new(5164, 22, 0.3)?)] {
        let m = mgr_second_moment_check(&line, &params, 0.25, moment_replicates, seed)?;
        out.push(
            CheckResult::statistical(format!("mgr_second_moment_{label}"), m.observed, 0.0, 3.0 * m.standard_error)
                .with_detail(format!("d=1 γ=0.3 σ=0.25 M={} N={}", params.m, params.n)),
        );
    }
    Ok(out)
}

/// Sizes for [`run_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub instances: usize,
    pub coverage_trials: usize,
    pub seed: u64,
    /// Runs the clipping check on an agent whose clipping is disabled.
    pub disable_clipping: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            instances: 100,
            coverage_trials: 20,
            seed: 0,
            disable_clipping: false,
        }
    }
}

fn per_instance(
    name: &str,
    count: usize,
    f: impl Fn(u64) -> Result<CheckResult, ValidationError> + Sync + Send,
) -> Result<CheckResult, ValidationError> {
    let results: Vec<CheckResult> = (0..count as u64).into_par_iter().map(f).collect::<Result<_, _>>()?;
    Ok(CheckResult::worst(name, &results))
}

/// Random `(model, π, π′, ℓ, Q̂)` for instance `i`.
pub fn identity_instance(seed: u64, i: u64) -> (LinearMdpModel<f64>, PolicyTable<f64>, PolicyTable<f64>, SaTable<f64>, SaTable<f64>) {
    let model = random_instance(seed.wrapping_mul(1_000_003).wrapping_add(i));
    let mut rng = keyed(seed, &[Purpose::Validation as u64, 2, i]);
    let (h, s, a) = (model.horizon(), model.num_states(), model.num_actions());
    let pi = random_policy(h, s, a, &mut rng);
    let pi_prime = random_policy(h, s, a, &mut rng);
    let losses = random_table(h, s, a, 1.0, &mut rng);
    let q_hat = random_table(h, s, a, 5.0, &mut rng);
    (model, pi, pi_prime, losses, q_hat)
}

/// A small practical-mode agent run with diagnostics, for identity checks.
pub fn diagnostic_run(seed: u64, i: u64, clip: ClipRule, beta_p: f64) -> Result<(LinearMdpModel<f64>, RunOutput<f64>), ValidationError> {
    let model = random_instance(seed.wrapping_mul(7_919).wrapping_add(i));
    let mut rng = keyed(seed, &[Purpose::Validation as u64, 3, i]);
    let tau = rng.gen_range(1..=3);
    let k = rng.gen_range(4..=16);
    let adversary = match i % 3 {
        0 => AdversarySpec::sinusoid(i, 5.0, 0.8),
        1 => AdversarySpec::switching(i, vec![k / 2]),
        _ => AdversarySpec::adaptive(i, 0.6),
    };
    let adversary = make_adversary(&adversary, &model)?;
    let config = AgentConfig {
        eta: 0.1,
        gamma: 0.25,
        beta: 0.2,
        beta_p,
        epsilon: 0.01,
        sigma: 0.25,
        mode: Mode::Practical,
        variant: Variant::Blocking,
        c1: 1.0,
        m: Some(2),
        n: Some(4),
        tau: Some(tau),
    };
    let out = run_polsbe(&model, &adversary, k, &config, i, RunOptions { diagnostics: true, clip })?;
    Ok((model, out))
}

/// Exact identities and deterministic inequalities on `count` random
/// instances each.
pub fn identity_checks(count: usize, seed: u64) -> Result<Vec<CheckResult>, ValidationError> {
    Ok(vec![
        per_instance("bellman_consistency", count, |i| {
            let (m, pi, _, l, _) = identity_instance(seed, i);
            Ok(check_bellman(&m, &pi, &l))
        })?,
        per_instance("occupancy_value_duality", count, |i| {
            let (m, pi, _, l, _) = identity_instance(seed, i);
            Ok(check_duality(&m, &pi, &l))
        })?,
        per_instance("extended_value_difference", count, |i| {
            let (m, pi, pp, l, q) = identity_instance(seed, i);
            Ok(check_extended_value_difference(&m, &pi, &pp, &q, &l))
        })?,
        per_instance("q_vector", count, |i| {
            let (m, pi, _, _, _) = identity_instance(seed, i);
            let adv = make_adversary(&AdversarySpec::fixed(i), &m)?;
            Ok(check_q_vectors(&m, &pi, &adv.next_costs(0, &[])))
        })?,
        per_instance("regret_decomposition_sum", count, |i| {
            let (_, run) = diagnostic_run(seed, i, ClipRule::Standard, 0.5)?;
            check_decomposition_sum(&run)
        })?,
        per_instance("elliptical_potential", count, |i| {
            let mut rng = keyed(seed, &[Purpose::Validation as u64, 4, i]);
            let d = rng.gen_range(1..=5);
            let len = rng.gen_range(0..=1000);
            let samples: Vec<Vec<f64>> = (0..len)
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let norm = crate::linalg::norm2(&v).max(1.0);
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect();
            check_elliptical_potential(&samples, d, rng.gen_range(1.0..3.0))
        })?,
        per_instance("omd", count, |i| {
            let (losses, eta, _) = omd_instance(seed, i);
            check_omd(&losses, eta)
        })?,
        per_instance("blocking_omd", count, |i| {
            let (losses, eta, tau) = omd_instance(seed, i);
            check_blocking_omd(&losses, eta, tau)
        })?,
    ])
}

/// The full lemma and identity suite.
pub fn run_suite(options: &SuiteOptions) -> Result<Vec<CheckResult>, ValidationError> {
    let seed = options.seed;
    let count = options.instances;
    let mut out = identity_checks(count, seed)?;
    let clip = if options.disable_clipping {
        ClipRule::Disabled
    } else {
        ClipRule::Standard
    };
    out.push(per_instance("bonus_clipping", count.min(50), |i| {
        let (_, run) = diagnostic_run(seed, i, clip, 50.0)?;
        Ok(check_clipping(run.artifacts.as_deref().unwrap_or_default(), 0.2, 0.25))
    })?);
    out.push(per_instance("exploration_bound", count.min(50), |i| {
        let (m, run) = diagnostic_run(seed, i, ClipRule::Standard, 50.0)?;
        check_exploration_bound(&m, &run)
    })?);
    out.extend(check_mgr_suite(count * 10, 2000, 200, seed)?);

    let bonus_model = CoverageSpec::standard().model(seed)?;
    let uniform = PolicyTable::uniform(bonus_model.horizon(), bonus_model.num_states(), bonus_model.num_actions());
    let (qb, pb) = check_bonus_expectations(&bonus_model, &uniform, 1.0, 1.0, 0.25, 0.01, 32, 200, seed)?;
    out.push(qb);
    out.push(pb);

    let unbiased_model = random_instance(seed.wrapping_add(2));
    let mut rng = keyed(seed, &[Purpose::Validation as u64, 5]);
    let pi = random_policy(unbiased_model.horizon(), unbiased_model.num_states(), unbiased_model.num_actions(), &mut rng);
    let costs = make_adversary(&AdversarySpec::fixed(seed), &unbiased_model)?.next_costs(0, &[]);
    out.push(check_q_hat_unbiased(&unbiased_model, &pi, &costs, &MgrParams::new(1, 8, 0.25)?, 20_000, seed)?);

    let spec = CoverageSpec::standard();
    out.push(check_backup_confidence(&spec, options.coverage_trials)?.0);
    Ok(out)
}

/// Random loss sequence with `η·g ≥ −1`, a learning rate and a block size.
pub fn omd_instance(seed: u64, i: u64) -> (Vec<Vec<f64>>, f64, usize) {
    let mut rng = keyed(seed, &[Purpose::Validation as u64, 6, i]);
    let n = rng.gen_range(2..=6);
    let rounds = rng.gen_range(1..=300);
    let eta = rng.gen_range(0.01..1.0);
    let scale = rng.gen_range(0.1..3.0f64).min(1.0 / eta);
    let pattern = i % 3;
    let losses = (0..rounds)
        .map(|k| {
            (0..n)
                .map(|a| match pattern {
                    0 => rng.gen_range(-scale..scale),
                    1 => scale * if (k + a) % 2 == 0 { 1.0 } else { -1.0 },
                    _ => scale * (a as f64 / n as f64),
                })
                .collect()
        })
        .collect();
    (losses, eta, rng.gen_range(1..=10))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evd_reduces_when_policies_match() {
        let (m, pi, _, l, q) = identity_instance(1, 0);
        assert!(check_extended_value_difference(&m, &pi, &pi, &q, &l).pass);
        let truth = value_dp(&m, &pi, &l).q;
        assert!(check_extended_value_difference(&m, &pi, &pi, &truth, &l).observed < 1e-12);
    }

    #[test]
    fn elliptical_boundaries_and_repeats() {
        assert!(check_elliptical_potential(&[], 3, 1.0).unwrap().pass);
        let same = vec![vec![1.0]; 50];
        let r = check_elliptical_potential(&same, 1, 1.0).unwrap();
        let closed: f64 = (0..50).map(|i| 1.0 / (1.0 + i as f64)).sum();
        assert!((r.observed - closed).abs() < 1e-12);
        assert!(r.pass);
        assert!(check_elliptical_potential(&same, 1, 0.5).is_err());
    }

    #[test]
    fn omd_simple_sequences() {
        let zero = vec![vec![0.0; 3]; 10];
        let r = check_omd(&zero, 0.5).unwrap();
        assert_eq!(r.observed, 0.0);
        assert!(r.pass);
        let constant = vec![vec![0.0, 1.0]; 100];
        assert!(check_omd(&constant, 0.3).unwrap().pass);
        assert!(check_omd(&[vec![-3.0, 0.0]], 0.5).is_err());
        let single_block = check_blocking_omd(&constant, 0.3, 100).unwrap();
        assert!((single_block.observed - 50.0).abs() < 1e-12);
        assert!(single_block.pass);
    }

    #[test]
    fn tau_one_matches_plain_omd() {
        for i in 0..30 {
            let (losses, eta, _) = omd_instance(3, i);
            let a = check_omd(&losses, eta).unwrap();
            let b = check_blocking_omd(&losses, eta, 1).unwrap();
            assert!((a.observed - b.observed).abs() < 1e-9);
            let max_g = losses.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
            assert!((b.bound - a.bound - max_g).abs() < 1e-9);
        }
    }

    #[test]
    fn trivial_exploration_cases() {
        let (m, run) = diagnostic_run(0, 1, ClipRule::Standard, 0.0).unwrap();
        let mut zeroed = run.clone();
        for art in zeroed.artifacts.as_mut().unwrap() {
            art.bonus = SaTable::zeros(m.horizon(), m.num_states(), m.num_actions());
            art.dynamics_bonus = art.bonus.clone();
            art.b_tilde = art.bonus.clone();
            art.w_tilde = crate::tables::StateTable::zeros(m.horizon(), m.num_states());
        }
        let r = check_exploration_bound(&m, &zeroed).unwrap();
        assert_eq!(r.observed, 0.0);
        assert!(r.pass && r.detail.is_empty());
        let mut at_best = zeroed;
        for art in at_best.artifacts.as_mut().unwrap() {
            art.policy = at_best.best_policy.clone();
        }
        assert!(check_exploration_bound(&m, &at_best).unwrap().observed <= 0.0);
    }

    #[test]
    fn clipping_mutation_is_caught() {
        let (_, good) = diagnostic_run(0, 2, ClipRule::Standard, 50.0).unwrap();
        assert!(check_clipping(good.artifacts.as_deref().unwrap(), 0.2, 0.25).pass);
        let (_, bad) = diagnostic_run(0, 2, ClipRule::Disabled, 50.0).unwrap();
        assert!(!check_clipping(bad.artifacts.as_deref().unwrap(), 0.2, 0.25).pass);
    }

    #[test]
    fn zero_beta_gives_zero_bonus() {
        let m = CoverageSpec::standard().model(0).unwrap();
        let pi = PolicyTable::uniform(3, 4, 2);
        let (q, p) = check_bonus_expectations(&m, &pi, 0.0, 0.0, 0.25, 0.01, 8, 5, 0).unwrap();
        assert_eq!((q.observed, q.bound, p.observed, p.bound), (0.0, 0.0, 0.0, 0.0));
        assert!(q.pass && p.pass);
    }

    #[test]
    fn empty_dataset_dynamics_bonus_is_beta_p_norm() {
        let gram = build_gram(std::iter::empty::<&[f64]>(), 2, LAMBDA);
        let chol = Cholesky::factor(&gram).unwrap();
        assert!((dynamics_bonus(&chol, 2.5, &[0.6, 0.0]) - 1.5).abs() < 1e-15);
    }
}
