//! Comparators run on the same adversary as the agent.

use crate::agent::{evaluate_policies, RunOutput, SampleCounts};
use crate::dp::{best_in_hindsight, value_dp};
use crate::envgen::Adversary;
use crate::model::{CostSchedule, LinearMdpModel};
use crate::policy::{PolicyTable, SoftmaxPolicy};
use crate::scalar::Scalar;

fn run_sequence<T: Scalar>(
    model: &LinearMdpModel<T>,
    adversary: &Adversary<T>,
    k_total: usize,
    mut next_policy: impl FnMut(&[PolicyTable<T>], &CostSchedule<T>) -> PolicyTable<T>,
) -> RunOutput<T> {
    let mut policies = Vec::with_capacity(k_total);
    let mut schedule = CostSchedule::default();
    for k in 0..k_total {
        let pi = next_policy(&policies, &schedule);
        policies.push(pi);
        schedule.episodes.push(adversary.next_costs(k, &policies));
    }
    let (report, best_policy) = evaluate_policies(model, &schedule, &policies);
    RunOutput {
        report,
        schedule,
        best_policy,
        policies,
        artifacts: None,
        dataset_sources: Vec::new(),
    }
}

/// Plays the uniform policy every episode.
pub fn uniform_baseline<T: Scalar>(model: &LinearMdpModel<T>, adversary: &Adversary<T>, k_total: usize) -> RunOutput<T> {
    let uniform = PolicyTable::uniform(model.horizon(), model.num_states(), model.num_actions());
    run_sequence(model, adversary, k_total, |_, _| uniform.clone())
}

/// Full-information exponential weights with known dynamics: after each
/// episode the exact `Q^{k,π^k}` is added to the logits.
pub fn known_dynamics_omd_baseline<T: Scalar>(
    model: &LinearMdpModel<T>,
    adversary: &Adversary<T>,
    k_total: usize,
    eta: f64,
) -> RunOutput<T> {
    let mut logits = SoftmaxPolicy::uniform(model.horizon(), model.num_states(), model.num_actions(), T::lit(eta));
    let mut out = run_sequence(model, adversary, k_total, |policies, schedule| {
        if let (Some(pi), Some(costs)) = (policies.last(), schedule.episodes.last()) {
            let q = value_dp(model, pi, &model.loss_table(costs)).q;
            logits.accumulate(&q, T::one());
        }
        logits.probabilities()
    });
    out.report.samples = SampleCounts::default();
    out
}

/// Plays the best fixed policy in hindsight every episode, so its regret is
/// zero by construction. `None` for adaptive adversaries, whose schedule
/// would depend on the play.
pub fn best_in_hindsight_baseline<T: Scalar>(
    model: &LinearMdpModel<T>,
    adversary: &Adversary<T>,
    k_total: usize,
) -> Option<RunOutput<T>> {
    if !adversary.is_oblivious() {
        return None;
    }
    let schedule = CostSchedule {
        episodes: (0..k_total).map(|k| adversary.next_costs(k, &[])).collect(),
    };
    let (best, _) = best_in_hindsight(model, &schedule);
    Some(run_sequence(model, adversary, k_total, |_, _| best.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen::{make_adversary, random_linmdp, AdversarySpec, GeneratorKind, GeneratorSpec};

    fn model() -> LinearMdpModel<f64> {
        random_linmdp(&GeneratorSpec {
            kind: GeneratorKind::TabularOnehot,
            num_states: 3,
            num_actions: 2,
            horizon: 3,
            feature_dim: 6,
            seed: 4,
        })
        .unwrap()
    }

    #[test]
    fn zero_adversary_zero_regret() {
        let m = model();
        let adv = make_adversary(&AdversarySpec::zero(), &m).unwrap();
        assert_eq!(uniform_baseline(&m, &adv, 10).report.final_regret(), 0.0);
        assert_eq!(known_dynamics_omd_baseline(&m, &adv, 10, 0.1).report.final_regret(), 0.0);
    }

    #[test]
    fn oracle_has_zero_regret_and_rejects_adaptive() {
        let m = model();
        let adv = make_adversary(&AdversarySpec::switching(1, vec![7]), &m).unwrap();
        let out = best_in_hindsight_baseline(&m, &adv, 20).unwrap();
        assert!(out.report.final_regret().abs() < 1e-12);
        let adaptive = make_adversary(&AdversarySpec::adaptive(1, 0.5), &m).unwrap();
        assert!(best_in_hindsight_baseline(&m, &adaptive, 5).is_none());
    }

    #[test]
    fn uniform_regret_matches_direct_dp() {
        let m = model();
        let adv = make_adversary(&AdversarySpec::sinusoid(2, 5.0, 0.4), &m).unwrap();
        let out = uniform_baseline(&m, &adv, 20);
        let (best, _) = crate::dp::best_in_hindsight(&m, &out.schedule);
        let uniform = PolicyTable::uniform(3, 3, 2);
        let direct: f64 = out
            .schedule
            .episodes
            .iter()
            .map(|c| {
                let l = m.loss_table(c);
                value_dp(&m, &uniform, &l).initial_value(&m) - value_dp(&m, &best, &l).initial_value(&m)
            })
            .sum();
        assert!((out.report.final_regret() - direct).abs() < 1e-10);
    }

    #[test]
    fn fixed_adversary_regret_decreases() {
        let m = model();
        let adv = make_adversary(&AdversarySpec::fixed(6), &m).unwrap();
        let out = known_dynamics_omd_baseline(&m, &adv, 400, 0.2);
        let r = &out.report;
        let per = |k: usize| r.value_pik[k] - r.value_pistar[k];
        assert!(per(399) < 0.1 * per(0));
        for k in 1..400 {
            assert!(per(k) <= per(k - 1) + 1e-12, "episode {k}");
        }
    }
}
