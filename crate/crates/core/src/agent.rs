//! The PO-LSBE agent: bandit-feedback Q estimates from MGR inverse
//! covariances, optimistic bonuses from OLSPE, and exponential-weights
//! policy updates. Two variants: online blocking, and simulator access.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dp::{best_in_hindsight, occupancy, rollout, simulate, value_dp};
use crate::envgen::Adversary;
use crate::linalg::{dot, Matrix};
use crate::mgr::{mgr, MgrError, MgrParams, mgr_theory_params};
use crate::model::{CostSchedule, LinearMdpModel, Trajectory};
use crate::olspe::{ClipRule, OlspeError, OlspeParams, PreparedDataset, TransitionDataset};
use crate::policy::{PolicyTable, SoftmaxPolicy};
use crate::rng::{substream, Purpose};
use crate::scalar::Scalar;
use crate::tables::{SaTable, StateTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Mgr(#[from] MgrError),
    #[error(transparent)]
    Olspe(#[from] OlspeError),
    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `M`, `N`, `τ` from the analysis; all regime conditions enforced.
    Theory,
    /// Explicit `M`, `N`, `τ`.
    Practical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Blocking,
    Simulator,
}

fn default_c1() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub beta_p: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub mode: Mode,
    pub variant: Variant,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<usize>,
}

/// Validated settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub config: AgentConfig,
    pub mgr: MgrParams,
    pub tau: usize,
    /// Guarantees that no longer apply, and other notes for the manifest.
    pub flags: Vec<String>,
}

impl AgentConfig {
    /// `β^P = 10·C₁·H²·d^{3/2}·ln(28·C₁·d·β·K·H)`
    pub fn theory_beta_p(c1: f64, d: usize, horizon: usize, beta: f64, k: usize) -> f64 {
        let (d, h) = (d as f64, horizon as f64);
        10.0 * c1 * h * h * d.powf(1.5) * (28.0 * c1 * d * beta * k as f64 * h).ln()
    }

    /// Checks the config for a model with feature dimension `d` and horizon
    /// `horizon`, and fixes `M`, `N`, `τ`.
    pub fn resolve(&self, d: usize, horizon: usize) -> Result<ResolvedConfig, AgentError> {
        let err = |m: String| Err(AgentError::Config(m));
        for (name, v) in [
            ("eta", self.eta),
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("beta_p", self.beta_p),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return err(format!("{name} must be finite and ≥ 0 (got {v})"));
            }
        }
        if !(self.eta > 0.0 && self.gamma > 0.0) {
            return err("eta and gamma must be > 0".into());
        }
        let mut flags = Vec::new();
        match self.mode {
            Mode::Theory => {
                let eta_max = self.gamma / (2.0 * horizon as f64);
                if self.eta > eta_max * (1.0 + 1e-12) {
                    return err(format!("theory mode requires η ≤ γ/(2H) = {eta_max} (got {})", self.eta));
                }
                if self.m.is_some() || self.n.is_some() || self.tau.is_some() {
                    return err("theory mode derives m, n and tau; remove the overrides".into());
                }
                let mgr = mgr_theory_params(d, self.gamma, self.sigma, self.epsilon)?;
                let tau = match self.variant {
                    Variant::Blocking => mgr.m * mgr.n,
                    Variant::Simulator => d * d * mgr.m * mgr.n,
                };
                Ok(ResolvedConfig {
                    config: self.clone(),
                    mgr,
                    tau,
                    flags,
                })
            }
            Mode::Practical => {
                let (Some(m), Some(n), Some(tau)) = (self.m, self.n, self.tau) else {
                    return err("practical mode requires m, n and tau".into());
                };
                if tau == 0 {
                    return err("tau must be ≥ 1".into());
                }
                let mgr = MgrParams::without_guarantee(m, n, self.gamma)?;
                flags.push("practical_mode: regret guarantees voided".into());
                if self.gamma >= 0.5 {
                    flags.push(format!("gamma = {} ≥ 1/2: MGR lemma does not apply", self.gamma));
                }
                if tau < m * n {
                    flags.push(format!(
                        "tau = {tau} < M·N = {}: MGR inputs resampled with replacement",
                        m * n
                    ));
                }
                Ok(ResolvedConfig {
                    config: self.clone(),
                    mgr,
                    tau,
                    flags,
                })
            }
        }
    }
}

fn check_theory_k(k: usize, gamma: f64) -> Result<(), AgentError> {
    if k == 0 {
        return Err(AgentError::Config("K ≥ 1".into()));
    }
    if gamma >= 0.5 {
        return Err(AgentError::Config(format!(
            "K = {k} gives γ = {gamma} ≥ 1/2; theory mode needs larger K"
        )));
    }
    Ok(())
}

/// Settings of the blocking-variant regret theorem:
/// `γ = K^{−2/7}`, `σ = 1/4`, `ε = 1/K`, `η = γ/(2H)`, `β = 2H√(dγ)`.
pub fn theorem1_config(k: usize, d: usize, horizon: usize, c1: f64) -> Result<AgentConfig, AgentError> {
    let gamma = (k.max(1) as f64).powf(-2.0 / 7.0);
    check_theory_k(k, gamma)?;
    Ok(theorem_config(k, d, horizon, c1, gamma, Variant::Blocking))
}

/// Settings of the simulator-variant theorem: `γ = 2/(dK)^{2/3}` and
/// otherwise the same forms.
pub fn theorem2_config(k: usize, d: usize, horizon: usize, c1: f64) -> Result<AgentConfig, AgentError> {
    let gamma = 2.0 / ((d * k.max(1)) as f64).powf(2.0 / 3.0);
    check_theory_k(k, gamma)?;
    Ok(theorem_config(k, d, horizon, c1, gamma, Variant::Simulator))
}

fn theorem_config(k: usize, d: usize, horizon: usize, c1: f64, gamma: f64, variant: Variant) -> AgentConfig {
    let h = horizon as f64;
    let beta = 2.0 * h * (d as f64 * gamma).sqrt();
    AgentConfig {
        eta: gamma / (2.0 * h),
        gamma,
        beta,
        beta_p: AgentConfig::theory_beta_p(c1, d, horizon, beta, k),
        epsilon: 1.0 / k as f64,
        sigma: 0.25,
        mode: Mode::Theory,
        variant,
        c1,
        m: None,
        n: None,
        tau: None,
    }
}

/// Heuristic size below which the `K = Ω((d log d)²)` requirement is
/// considered unmet: `K < (d · max(ln d, 1))²`.
pub fn small_k_warning(k: usize, d: usize) -> Option<String> {
    let d = d as f64;
    let threshold = (d * d.ln().max(1.0)).powi(2);
    ((k as f64) < threshold).then(|| format!("K = {k} is below the (d ln d)² ≈ {threshold:.0} heuristic"))
}

/// One block of `2τ` episodes split into halves (zero-based episode ranges).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub first: Range<usize>,
    pub second: Range<usize>,
    /// Shorter than `2τ`.
    pub partial: bool,
}

impl Block {
    pub fn episodes(&self) -> Range<usize> {
        self.first.start..self.second.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSchedule {
    pub tau: usize,
    pub blocks: Vec<Block>,
}

impl BlockSchedule {
    pub fn has_partial_block(&self) -> bool {
        self.blocks.last().is_some_and(|b| b.partial)
    }
}

/// Consecutive disjoint blocks `{2jτ, …, 2(j+1)τ − 1}`; a trailing block
/// shorter than `2τ` is split `⌈r/2⌉ / ⌊r/2⌋`.
pub fn make_blocks(k: usize, tau: usize) -> BlockSchedule {
    assert!(tau >= 1, "tau must be ≥ 1");
    let mut blocks = Vec::new();
    let mut start = 0;
    while start < k {
        let len = (2 * tau).min(k - start);
        let half = len.div_ceil(2);
        blocks.push(Block {
            first: start..start + half,
            second: start + half..start + len,
            partial: len < 2 * tau,
        });
        start += len;
    }
    BlockSchedule { tau, blocks }
}

/// `q̂_h = Σ̂⁺ φ(s_h, a_h) Σ_{t≥h} ℓ_t` and the table `Q̂_h(s,a) = φ(s,a)ᵀq̂_h`
/// (state-major over `(s, a)`).
pub fn q_hat<T: Scalar>(
    model: &LinearMdpModel<T>,
    sigma_plus: &Matrix<T>,
    trajectory: &Trajectory<T>,
    h: usize,
) -> (Vec<T>, Vec<T>) {
    let step = trajectory.steps[h];
    let mut q = sigma_plus.matvec(model.feature(step.state, step.action));
    let suffix = trajectory.suffix_loss(h);
    q.iter_mut().for_each(|x| *x *= suffix);
    let table = model.features().iter().map(|phi| dot(phi, &q)).collect();
    (q, table)
}

/// `b_h(s,a) = β(‖φ(s,a)‖_{Σ̂⁺} + Σ_{a'} π_h(a'|s)‖φ(s,a')‖_{Σ̂⁺})`, state-major.
pub fn q_bonus<T: Scalar>(
    model: &LinearMdpModel<T>,
    sigma_plus: &Matrix<T>,
    policy: &PolicyTable<T>,
    h: usize,
    beta: T,
) -> Vec<T> {
    let (n, na) = (model.num_states(), model.num_actions());
    let norms: Vec<T> = model
        .features()
        .iter()
        .map(|phi| sigma_plus.quad_form(phi).max(T::zero()).sqrt())
        .collect();
    let mut out = Vec::with_capacity(n * na);
    for s in 0..n {
        let row = &norms[s * na..(s + 1) * na];
        let avg: T = policy.probs(h, s).iter().zip(row).map(|(&p, &x)| p * x).sum();
        out.extend(row.iter().map(|&x| beta * (x + avg)));
    }
    out
}

/// `logits += (1/τ) Σ_i L̂^{(i)}` over the losses of one block; returns the
/// new policy.
pub fn policy_update_blocking<T: Scalar>(
    logits: &mut SoftmaxPolicy<T>,
    block_losses: &[SaTable<T>],
    tau: usize,
) -> PolicyTable<T> {
    let scale = T::one() / T::count(tau);
    for l in block_losses {
        logits.accumulate(l, scale);
    }
    logits.probabilities()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationStatus {
    /// Dataset from the opposite half (blocking) or fresh rollouts (simulator).
    Independent,
    /// Opposite half empty; the same half's other episodes were used.
    BiasUnsafe,
    /// No data at all; `Q̂ = B̃ = 0`.
    Skipped,
}

/// Everything the agent computed for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeArtifacts<T> {
    pub policy: PolicyTable<T>,
    pub q_hat: SaTable<T>,
    pub bonus: SaTable<T>,
    pub b_tilde: SaTable<T>,
    pub w_tilde: StateTable<T>,
    pub dynamics_bonus: SaTable<T>,
    /// `max_h ‖Σ̂⁺_{kh}‖_op`
    pub max_sigma_norm: T,
    pub dataset_size: usize,
    pub status: EstimationStatus,
}

/// Four per-episode series whose sum is the per-episode regret.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Decomposition {
    pub bias1: Vec<f64>,
    pub bias2: Vec<f64>,
    pub omd: Vec<f64>,
    pub exploration: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleCounts {
    pub rollouts: usize,
    pub simulator_rollouts: usize,
    pub mgr_samples: usize,
    pub bias_unsafe_episodes: usize,
    pub skipped_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegretReport {
    pub value_pik: Vec<f64>,
    pub value_pistar: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
    pub decomposition: Option<Decomposition>,
    pub samples: SampleCounts,
    pub flags: Vec<String>,
}

impl RegretReport {
    pub fn from_values(value_pik: Vec<f64>, value_pistar: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let cumulative_regret = value_pik
            .iter()
            .zip(&value_pistar)
            .map(|(a, b)| {
                acc += a - b;
                acc
            })
            .collect();
        Self {
            value_pik,
            value_pistar,
            cumulative_regret,
            ..Self::default()
        }
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    pub fn episodes(&self) -> usize {
        self.value_pik.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunOptions {
    /// Keep per-episode artifacts and compute the regret decomposition.
    pub diagnostics: bool,
    pub clip: ClipRule,
}

/// A finished run: report, realized costs, comparator and (optionally) the
/// per-episode artifacts.
#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub report: RegretReport,
    pub schedule: CostSchedule<T>,
    pub best_policy: PolicyTable<T>,
    pub policies: Vec<PolicyTable<T>>,
    pub artifacts: Option<Vec<EpisodeArtifacts<T>>>,
    /// Rollout ids in each episode's dataset.
    pub dataset_sources: Vec<Vec<u64>>,
}

/// Exact per-episode values of `policies` and of the best fixed policy in
/// hindsight for the realized schedule.
pub fn evaluate_policies<T: Scalar>(
    model: &LinearMdpModel<T>,
    schedule: &CostSchedule<T>,
    policies: &[PolicyTable<T>],
) -> (RegretReport, PolicyTable<T>) {
    let (best, _) = best_in_hindsight(model, schedule);
    let (value_pik, value_pistar): (Vec<f64>, Vec<f64>) = schedule
        .episodes
        .par_iter()
        .zip(policies.par_iter())
        .map(|(costs, pi)| {
            let losses = model.loss_table(costs);
            (
                value_dp(model, pi, &losses).initial_value(model).as_f64(),
                value_dp(model, &best, &losses).initial_value(model).as_f64(),
            )
        })
        .unzip();
    (RegretReport::from_values(value_pik, value_pistar), best)
}

/// Per-episode Bias₁, Bias₂, OMD and Exploration terms, all expectations
/// taken exactly under the occupancy of `best`.
pub fn regret_decomposition_diagnostic<T: Scalar>(
    model: &LinearMdpModel<T>,
    schedule: &CostSchedule<T>,
    best: &PolicyTable<T>,
    artifacts: &[EpisodeArtifacts<T>],
) -> Result<Decomposition, AgentError> {
    if artifacts.len() != schedule.len() {
        return Err(AgentError::MissingArtifacts(format!(
            "{} artifacts for {} episodes",
            artifacts.len(),
            schedule.len()
        )));
    }
    let d_star = occupancy(model, best);
    let (horizon, n) = (model.horizon(), model.num_states());
    let terms: Vec<[f64; 4]> = schedule
        .episodes
        .par_iter()
        .zip(artifacts.par_iter())
        .map(|(costs, art)| {
            let pi = &art.policy;
            let q_true = value_dp(model, pi, &model.loss_table(costs)).q;
            let mut out = [T::zero(); 4];
            for h in 0..horizon {
                for s in 0..n {
                    let mass = d_star.state(h, s);
                    if mass == T::zero() {
                        continue;
                    }
                    let row = |t: &SaTable<T>, p: &PolicyTable<T>| p.average(t, h, s);
                    let diff_q = row(&q_true, pi) - row(&art.q_hat, pi);
                    let diff_q_star = row(&art.q_hat, best) - row(&q_true, best);
                    let omd = (row(&art.q_hat, pi) - row(&art.b_tilde, pi))
                        - (row(&art.q_hat, best) - row(&art.b_tilde, best));
                    let expl = row(&art.b_tilde, pi) - row(&art.b_tilde, best);
                    for (o, t) in out.iter_mut().zip([diff_q, diff_q_star, omd, expl]) {
                        *o += mass * t;
                    }
                }
            }
            out.map(|x| x.as_f64())
        })
        .collect();
    Ok(Decomposition {
        bias1: terms.iter().map(|t| t[0]).collect(),
        bias2: terms.iter().map(|t| t[1]).collect(),
        omd: terms.iter().map(|t| t[2]).collect(),
        exploration: terms.iter().map(|t| t[3]).collect(),
    })
}

/// Estimation machinery shared by both variants.
struct Estimator<'a, T> {
    model: &'a LinearMdpModel<T>,
    resolved: &'a ResolvedConfig,
    olspe: OlspeParams,
    seed: u64,
    keep: bool,
}

struct Estimate<T> {
    loss: SaTable<T>,
    artifacts: Option<EpisodeArtifacts<T>>,
    mgr_samples: usize,
    status: EstimationStatus,
}

impl<'a, T: Scalar> Estimator<'a, T> {
    /// Features of `D_h` fed to MGR: the first `M·N` in order, or `M·N`
    /// draws with replacement when the dataset is smaller.
    fn mgr_inputs(&self, dataset: &TransitionDataset, k: usize, h: usize) -> Vec<&'a [T]> {
        use rand::Rng;
        let needed = self.resolved.mgr.samples_needed();
        let step = dataset.step(h);
        let feature = |i: usize| self.model.feature(step[i].state, step[i].action);
        if step.len() >= needed {
            (0..needed).map(feature).collect()
        } else {
            let mut rng = substream(self.seed, k, h, Purpose::MgrResample);
            (0..needed).map(|_| feature(rng.gen_range(0..step.len()))).collect()
        }
    }

    fn estimate(
        &self,
        k: usize,
        trajectory: &Trajectory<T>,
        policy: &PolicyTable<T>,
        dataset: &TransitionDataset,
        prepared: &PreparedDataset<'_, T>,
        status: EstimationStatus,
    ) -> Result<Estimate<T>, AgentError> {
        let model = self.model;
        let (horizon, n, na) = (model.horizon(), model.num_states(), model.num_actions());
        if dataset.num_paths() == 0 {
            let zeros = SaTable::zeros(horizon, n, na);
            return Ok(Estimate {
                loss: zeros.clone(),
                artifacts: self.keep.then(|| EpisodeArtifacts {
                    policy: policy.clone(),
                    q_hat: zeros.clone(),
                    bonus: zeros.clone(),
                    b_tilde: zeros.clone(),
                    w_tilde: StateTable::zeros(horizon, n),
                    dynamics_bonus: zeros,
                    max_sigma_norm: T::zero(),
                    dataset_size: 0,
                    status: EstimationStatus::Skipped,
                }),
                mgr_samples: 0,
                status: EstimationStatus::Skipped,
            });
        }
        let beta = T::lit(self.resolved.config.beta);
        let mut q_table = SaTable::zeros(horizon, n, na);
        let mut bonus = SaTable::zeros(horizon, n, na);
        let mut max_norm = T::zero();
        let mut used = 0;
        for h in 0..horizon {
            let inputs = self.mgr_inputs(dataset, k, h);
            used += inputs.len();
            let est = mgr(&inputs, &self.resolved.mgr)?;
            if self.keep {
                max_norm = max_norm.max(est.op_norm());
            }
            let (_, q_row) = q_hat(model, &est.matrix, trajectory, h);
            q_table.step_mut(h).copy_from_slice(&q_row);
            bonus
                .step_mut(h)
                .copy_from_slice(&q_bonus(model, &est.matrix, policy, h, beta));
        }
        let (values, backup) = prepared.backup(&bonus, &self.olspe, policy, self.keep)?;
        let mut loss = q_table.clone();
        loss.add_scaled(-T::one(), &values.b_tilde);
        let artifacts = self.keep.then(|| EpisodeArtifacts {
            policy: policy.clone(),
            q_hat: q_table,
            bonus,
            b_tilde: values.b_tilde,
            w_tilde: values.w_tilde,
            dynamics_bonus: backup.map(|b| b.dynamics_bonus).unwrap_or_else(|| SaTable::zeros(horizon, n, na)),
            max_sigma_norm: max_norm,
            dataset_size: dataset.num_paths(),
            status,
        });
        Ok(Estimate {
            loss,
            artifacts,
            mgr_samples: used,
            status,
        })
    }
}

fn half_dataset<T: Scalar>(
    horizon: usize,
    episodes: impl Iterator<Item = usize>,
    trajectories: &[Trajectory<T>],
) -> TransitionDataset {
    let mut ds = TransitionDataset::new(horizon);
    for k in episodes {
        let path: Vec<(usize, usize)> = trajectories[k].steps.iter().map(|st| (st.state, st.action)).collect();
        ds.push_path(k as u64, &path);
    }
    ds
}

fn finish<T: Scalar>(
    model: &LinearMdpModel<T>,
    schedule: CostSchedule<T>,
    policies: Vec<PolicyTable<T>>,
    artifacts: Option<Vec<EpisodeArtifacts<T>>>,
    dataset_sources: Vec<Vec<u64>>,
    samples: SampleCounts,
    flags: Vec<String>,
) -> Result<RunOutput<T>, AgentError> {
    let (mut report, best_policy) = evaluate_policies(model, &schedule, &policies);
    if let Some(arts) = &artifacts {
        report.decomposition = Some(regret_decomposition_diagnostic(model, &schedule, &best_policy, arts)?);
    }
    report.samples = samples;
    report.flags = flags;
    Ok(RunOutput {
        report,
        schedule,
        best_policy,
        policies,
        artifacts,
        dataset_sources,
    })
}

/// Online blocking variant. Each block plays one policy for `2τ` episodes;
/// every episode's estimates use only the opposite half's rollouts, and the
/// policy is updated once per block.
pub fn run_polsbe<T: Scalar>(
    model: &LinearMdpModel<T>,
    adversary: &Adversary<T>,
    k_total: usize,
    config: &AgentConfig,
    seed: u64,
    options: RunOptions,
) -> Result<RunOutput<T>, AgentError> {
    if config.variant != Variant::Blocking {
        return Err(AgentError::Config("run_polsbe needs variant = blocking".into()));
    }
    let resolved = config.resolve(model.feature_dim(), model.horizon())?;
    let (horizon, n, na) = (model.horizon(), model.num_states(), model.num_actions());
    let tau = resolved.tau;
    let schedule_blocks = make_blocks(k_total, tau);
    let estimator = Estimator {
        model,
        resolved: &resolved,
        olspe: OlspeParams {
            clip: options.clip,
            ..OlspeParams::new(config.beta, config.beta_p, config.gamma)
        },
        seed,
        keep: options.diagnostics,
    };
    let mut logits = SoftmaxPolicy::uniform(horizon, n, na, T::lit(config.eta));
    let mut policies: Vec<PolicyTable<T>> = Vec::with_capacity(k_total);
    let mut schedule = CostSchedule::default();
    let mut trajectories = Vec::with_capacity(k_total);
    let mut artifacts = options.diagnostics.then(Vec::new);
    let mut dataset_sources = vec![Vec::new(); k_total];
    let mut samples = SampleCounts::default();
    let mut flags = resolved.flags.clone();
    if schedule_blocks.has_partial_block() {
        flags.push("final block shorter than 2·tau".into());
    }

    for block in &schedule_blocks.blocks {
        let pi = logits.probabilities();
        for k in block.episodes() {
            policies.push(pi.clone());
            let costs = adversary.next_costs(k, &policies);
            let mut rng = substream(seed, k, 0, Purpose::Rollout);
            trajectories.push(rollout(model, &pi, &costs, &mut rng));
            schedule.episodes.push(costs);
            samples.rollouts += 1;
        }
        let first = half_dataset(horizon, block.first.clone(), &trajectories);
        let second = half_dataset(horizon, block.second.clone(), &trajectories);
        let prep_first = PreparedDataset::new(model, &first)?;
        let prep_second = PreparedDataset::new(model, &second)?;

        let estimates: Vec<Estimate<T>> = block
            .episodes()
            .into_par_iter()
            .map(|k| {
                let in_first = block.first.contains(&k);
                let (opposite, prep) = if in_first {
                    (&second, &prep_second)
                } else {
                    (&first, &prep_first)
                };
                if opposite.num_paths() > 0 {
                    return estimator.estimate(k, &trajectories[k], &pi, opposite, prep, EstimationStatus::Independent);
                }
                let own = if in_first { block.first.clone() } else { block.second.clone() };
                let fallback = half_dataset(horizon, own.filter(|&i| i != k), &trajectories);
                let prep = PreparedDataset::new(model, &fallback)?;
                estimator.estimate(k, &trajectories[k], &pi, &fallback, &prep, EstimationStatus::BiasUnsafe)
            })
            .collect::<Result<_, _>>()?;

        for (k, est) in block.episodes().zip(&estimates) {
            let sources = match est.status {
                EstimationStatus::Skipped => Vec::new(),
                EstimationStatus::Independent if block.first.contains(&k) => second.sources().to_vec(),
                EstimationStatus::Independent => first.sources().to_vec(),
                EstimationStatus::BiasUnsafe => {
                    let own = if block.first.contains(&k) { &block.first } else { &block.second };
                    own.clone().filter(|&i| i != k).map(|i| i as u64).collect()
                }
            };
            dataset_sources[k] = sources;
        }
        let mut losses = Vec::with_capacity(estimates.len());
        for est in estimates {
            samples.mgr_samples += est.mgr_samples;
            match est.status {
                EstimationStatus::BiasUnsafe => samples.bias_unsafe_episodes += 1,
                EstimationStatus::Skipped => samples.skipped_episodes += 1,
                EstimationStatus::Independent => {}
            }
            if let (Some(all), Some(a)) = (artifacts.as_mut(), est.artifacts) {
                all.push(a);
            }
            losses.push(est.loss);
        }
        policy_update_blocking(&mut logits, &losses, tau);
    }
    if samples.bias_unsafe_episodes > 0 {
        flags.push(format!("{} bias-unsafe episodes", samples.bias_unsafe_episodes));
    }
    finish(model, schedule, policies, artifacts, dataset_sources, samples, flags)
}

/// Simulator variant. Every episode draws `τ` fresh simulator rollouts of
/// the current policy for its dataset and updates the policy immediately.
pub fn run_polsbe_simulator<T: Scalar>(
    model: &LinearMdpModel<T>,
    adversary: &Adversary<T>,
    k_total: usize,
    config: &AgentConfig,
    seed: u64,
    options: RunOptions,
) -> Result<RunOutput<T>, AgentError> {
    if config.variant != Variant::Simulator {
        return Err(AgentError::Config("run_polsbe_simulator needs variant = simulator".into()));
    }
    let resolved = config.resolve(model.feature_dim(), model.horizon())?;
    let (horizon, n, na) = (model.horizon(), model.num_states(), model.num_actions());
    let tau = resolved.tau;
    let estimator = Estimator {
        model,
        resolved: &resolved,
        olspe: OlspeParams {
            clip: options.clip,
            ..OlspeParams::new(config.beta, config.beta_p, config.gamma)
        },
        seed,
        keep: options.diagnostics,
    };
    let mut logits = SoftmaxPolicy::uniform(horizon, n, na, T::lit(config.eta));
    let mut policies: Vec<PolicyTable<T>> = Vec::with_capacity(k_total);
    let mut schedule = CostSchedule::default();
    let mut artifacts = options.diagnostics.then(Vec::new);
    let mut dataset_sources = Vec::with_capacity(k_total);
    let mut samples = SampleCounts::default();

    for k in 0..k_total {
        let pi = logits.probabilities();
        policies.push(pi.clone());
        let costs = adversary.next_costs(k, &policies);
        let mut rng = substream(seed, k, 0, Purpose::Rollout);
        let trajectory = rollout(model, &pi, &costs, &mut rng);
        schedule.episodes.push(costs);
        samples.rollouts += 1;

        let paths: Vec<Vec<(usize, usize)>> = (0..tau)
            .into_par_iter()
            .map(|i| simulate(model, &pi, &mut substream(seed, k, i, Purpose::SimulatorRollout)))
            .collect();
        let mut dataset = TransitionDataset::new(horizon);
        for (i, path) in paths.iter().enumerate() {
            // simulator rollout ids live above the episode ids
            dataset.push_path((k_total + k * tau + i) as u64, path);
        }
        samples.simulator_rollouts += tau;
        let prepared = PreparedDataset::new(model, &dataset)?;
        let est = estimator.estimate(k, &trajectory, &pi, &dataset, &prepared, EstimationStatus::Independent)?;
        samples.mgr_samples += est.mgr_samples;
        logits.accumulate(&est.loss, T::one());
        if let (Some(all), Some(a)) = (artifacts.as_mut(), est.artifacts) {
            all.push(a);
        }
        dataset_sources.push(dataset.sources().to_vec());
    }
    finish(model, schedule, policies, artifacts, dataset_sources, samples, resolved.flags.clone())
}

/// Runs whichever variant `config` names.
pub fn run_agent<T: Scalar>(
    model: &LinearMdpModel<T>,
    adversary: &Adversary<T>,
    k_total: usize,
    config: &AgentConfig,
    seed: u64,
    options: RunOptions,
) -> Result<RunOutput<T>, AgentError> {
    match config.variant {
        Variant::Blocking => run_polsbe(model, adversary, k_total, config, seed, options),
        Variant::Simulator => run_polsbe_simulator(model, adversary, k_total, config, seed, options),
    }
}

/// Structural independence check: no episode's dataset contains its own
/// rollout, and (for fresh datasets) no rollout id is used by two episodes.
pub fn dataset_independence(sources: &[Vec<u64>], require_fresh: bool) -> Result<(), String> {
    let mut seen = std::collections::HashSet::new();
    for (k, ids) in sources.iter().enumerate() {
        if ids.contains(&(k as u64)) {
            return Err(format!("episode {k} estimates from its own rollout"));
        }
        if require_fresh {
            for id in ids {
                if !seen.insert(*id) {
                    return Err(format!("rollout {id} reused by episode {k}"));
                }
            }
        }
    }
    Ok(())
}
