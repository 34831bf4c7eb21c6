use polsbe_core::agent::{
    dataset_independence, make_blocks, policy_update_blocking, q_bonus, run_agent, run_polsbe, AgentConfig,
    EstimationStatus, Mode, RunOptions, Variant,
};
use polsbe_core::baselines::uniform_baseline;
use polsbe_core::envgen::{make_adversary, random_linmdp, AdversarySpec, GeneratorKind, GeneratorSpec};
use polsbe_core::linalg::Matrix;
use polsbe_core::olspe::ClipRule;
use polsbe_core::policy::SoftmaxPolicy;
use polsbe_core::tables::SaTable;
use polsbe_core::validation::{
    check_clipping, check_decomposition_sum, check_duality, check_extended_value_difference, identity_instance,
    random_instance,
};
use proptest::prelude::*;

fn config(variant: Variant, tau: usize) -> AgentConfig {
    AgentConfig {
        eta: 0.1,
        gamma: 0.2,
        beta: 0.3,
        beta_p: 0.5,
        epsilon: 0.01,
        sigma: 0.25,
        mode: Mode::Practical,
        variant,
        c1: 1.0,
        m: Some(2),
        n: Some(3),
        tau: Some(tau),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blocks_partition_episodes(k in 1usize..200, tau in 1usize..20) {
        let sched = make_blocks(k, tau);
        let mut next = 0;
        for (j, b) in sched.blocks.iter().enumerate() {
            prop_assert_eq!(b.first.start, next);
            prop_assert_eq!(b.first.end, b.second.start);
            let len = b.second.end - b.first.start;
            prop_assert!(b.first.len() >= b.second.len());
            prop_assert!(b.first.len() - b.second.len() <= 1);
            if j + 1 < sched.blocks.len() {
                prop_assert_eq!(len, 2 * tau);
                prop_assert!(!b.partial);
            }
            prop_assert_eq!(b.partial, len < 2 * tau);
            next = b.second.end;
        }
        prop_assert_eq!(next, k);
    }

    #[test]
    fn runs_satisfy_structural_invariants(seed in 0u64..1000, tau in 1usize..4, k in 1usize..14, sim in any::<bool>()) {
        let model = random_instance(seed);
        let adv = make_adversary(&AdversarySpec::sinusoid(seed, 4.0, 0.7), &model).unwrap();
        let variant = if sim { Variant::Simulator } else { Variant::Blocking };
        let cfg = config(variant, tau);
        let out = run_agent(&model, &adv, k, &cfg, seed, RunOptions { diagnostics: true, clip: ClipRule::Standard }).unwrap();
        prop_assert_eq!(out.report.episodes(), k);
        prop_assert!(dataset_independence(&out.dataset_sources, sim).is_ok());
        let arts = out.artifacts.as_deref().unwrap();
        prop_assert!(check_clipping(arts, cfg.beta, cfg.gamma).pass);
        prop_assert!(check_decomposition_sum(&out).unwrap().pass);
        let cap = 2.0 * cfg.beta / cfg.gamma.sqrt();
        for art in arts {
            prop_assert!(art.policy.normalization_error() < 1e-12);
            prop_assert!(art.bonus.as_slice().iter().all(|&b| (0.0..=cap + 1e-12).contains(&b)));
            prop_assert!(art.max_sigma_norm <= 1.0 / cfg.gamma + 1e-10);
            if art.status == EstimationStatus::Skipped {
                prop_assert_eq!(art.q_hat.max_abs(), 0.0);
            }
        }
        for (k, pair) in out.report.cumulative_regret.windows(2).enumerate() {
            let step = out.report.value_pik[k + 1] - out.report.value_pistar[k + 1];
            prop_assert!((pair[1] - pair[0] - step).abs() < 1e-12);
        }
    }

    #[test]
    fn value_identities_hold(seed in 0u64..10_000) {
        let (m, pi, pp, l, q) = identity_instance(seed, 0);
        prop_assert!(check_duality(&m, &pi, &l).pass);
        prop_assert!(check_extended_value_difference(&m, &pi, &pp, &q, &l).pass);
    }

    #[test]
    fn softmax_is_shift_invariant(shift in -50.0f64..50.0, seed in 0u64..100) {
        let (m, _, _, l, _) = identity_instance(seed, 1);
        let (h, s, a) = (m.horizon(), m.num_states(), m.num_actions());
        let mut base = SoftmaxPolicy::uniform(h, s, a, 0.3);
        let mut shifted = base.clone();
        policy_update_blocking(&mut base, std::slice::from_ref(&l), 1);
        let moved = l.map(|x| x + shift);
        policy_update_blocking(&mut shifted, &[moved], 1);
        let (p, q) = (base.probabilities(), shifted.probabilities());
        for (x, y) in p.table().as_slice().iter().zip(q.table().as_slice()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn two_action_softmax_closed_form() {
    let eta = 0.7;
    let mut pi = SoftmaxPolicy::uniform(1, 1, 2, eta);
    let losses = SaTable::from_fn(1, 1, 2, |_, _, a| a as f64);
    policy_update_blocking(&mut pi, &[losses.clone(), losses], 2);
    let p = pi.probabilities();
    assert!((p.prob(0, 0, 0) - 1.0 / (1.0 + (-eta).exp())).abs() < 1e-15);
}

#[test]
fn identity_sigma_uniform_policy_bonus_is_two_beta() {
    let m = random_linmdp::<f64>(&GeneratorSpec {
        kind: GeneratorKind::TabularOnehot,
        num_states: 3,
        num_actions: 2,
        horizon: 2,
        feature_dim: 6,
        seed: 0,
    })
    .unwrap();
    let pi = polsbe_core::policy::PolicyTable::uniform(2, 3, 2);
    let b = q_bonus(&m, &Matrix::identity(6), &pi, 0, 0.4);
    assert!(b.iter().all(|&x| (x - 0.8).abs() < 1e-15));
}

#[test]
fn single_block_plays_uniform_and_matches_baseline() {
    let model = random_instance(8);
    let adv = make_adversary(&AdversarySpec::sinusoid(8, 3.0, 0.9), &model).unwrap();
    let agent = run_polsbe(&model, &adv, 10, &config(Variant::Blocking, 5), 8, RunOptions::default()).unwrap();
    let uniform = uniform_baseline(&model, &adv, 10);
    for (a, b) in agent.report.cumulative_regret.iter().zip(&uniform.report.cumulative_regret) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_adversary_has_zero_regret_for_both_variants() {
    let model = random_instance(5);
    let adv = make_adversary(&AdversarySpec::zero(), &model).unwrap();
    for variant in [Variant::Blocking, Variant::Simulator] {
        let out = run_agent(&model, &adv, 12, &config(variant, 2), 1, RunOptions::default()).unwrap();
        assert_eq!(out.report.final_regret(), 0.0);
    }
}

#[test]
fn seeded_runs_repeat_exactly() {
    let model = random_instance(6);
    let adv = make_adversary(&AdversarySpec::adaptive(6, 0.5), &model).unwrap();
    let a = run_polsbe(&model, &adv, 20, &config(Variant::Blocking, 3), 4, RunOptions::default()).unwrap();
    let b = run_polsbe(&model, &adv, 20, &config(Variant::Blocking, 3), 4, RunOptions::default()).unwrap();
    assert_eq!(a.report, b.report);
}

#[test]
fn f32_run_tracks_f64() {
    let spec = GeneratorSpec {
        kind: GeneratorKind::TabularOnehot,
        num_states: 3,
        num_actions: 2,
        horizon: 3,
        feature_dim: 6,
        seed: 2,
    };
    let m32 = random_linmdp::<f32>(&spec).unwrap();
    let m64 = random_linmdp::<f64>(&spec).unwrap();
    let adv_spec = AdversarySpec::sinusoid(2, 8.0, 0.5);
    let cfg = config(Variant::Blocking, 2);
    let r32 = run_polsbe(&m32, &make_adversary(&adv_spec, &m32).unwrap(), 16, &cfg, 2, RunOptions::default()).unwrap();
    let r64 = run_polsbe(&m64, &make_adversary(&adv_spec, &m64).unwrap(), 16, &cfg, 2, RunOptions::default()).unwrap();
    assert!(r32.report.final_regret().is_finite());
    assert!((r32.report.final_regret() - r64.report.final_regret()).abs() < 1e-2 * (1.0 + r64.report.final_regret().abs()));
}

#[test]
fn theorem_settings() {
    use polsbe_core::agent::{theorem1_config, theorem2_config};
    let d = 4;
    let c = theorem1_config(128, d, 3, 1.0).unwrap();
    assert!((c.gamma - 0.25).abs() < 1e-12);
    assert!((c.eta - 0.125 / 3.0).abs() < 1e-12);
    assert!((c.beta - 3.0 * 2.0).abs() < 1e-12);
    assert_eq!((c.sigma, c.epsilon), (0.25, 1.0 / 128.0));
    let expect_bp = 10.0 * 9.0 * 8.0 * (28.0 * d as f64 * c.beta * 128.0 * 3.0).ln();
    assert!((c.beta_p - expect_bp).abs() < 1e-9);
    assert!(theorem1_config(1, d, 3, 1.0).is_err());

    let c2 = theorem2_config(1000, 2, 3, 1.0).unwrap();
    assert!((c2.gamma - 2.0 / 2000f64.powf(2.0 / 3.0)).abs() < 1e-15);
    assert!((c2.gamma - 0.0126).abs() < 1e-4);
    assert!((c2.eta - c2.gamma / 6.0).abs() < 1e-15);
    assert_eq!((c2.sigma, c2.epsilon), (0.25, 1e-3));
    assert_eq!(c2.variant, Variant::Simulator);
    let resolved = c2.resolve(2, 3).unwrap();
    assert_eq!(resolved.tau, 4 * resolved.mgr.m * resolved.mgr.n);
}
