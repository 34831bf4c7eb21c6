//! Dynamic programming against brute-force path enumeration.

use polsbe_core::dp::{best_in_hindsight, occupancy, optimal_policy, q_vector, value_dp};
use polsbe_core::envgen::{make_adversary, random_linmdp, AdversarySpec, GeneratorKind, GeneratorSpec};
use polsbe_core::model::{CostSchedule, LinearMdpModel};
use polsbe_core::policy::PolicyTable;
use polsbe_core::rng::keyed;
use polsbe_core::tables::SaTable;
use polsbe_core::validation::{random_policy, random_table};

fn model(kind: GeneratorKind, s: usize, a: usize, h: usize, d: usize, seed: u64) -> LinearMdpModel<f64> {
    random_linmdp(&GeneratorSpec {
        kind,
        num_states: s,
        num_actions: a,
        horizon: h,
        feature_dim: d,
        seed,
    })
    .unwrap()
}

/// Calls `visit(path, probability)` for every state-action path.
fn enumerate(m: &LinearMdpModel<f64>, pi: &PolicyTable<f64>, visit: &mut dyn FnMut(&[(usize, usize)], f64)) {
    fn go(
        m: &LinearMdpModel<f64>,
        pi: &PolicyTable<f64>,
        h: usize,
        s: usize,
        prob: f64,
        path: &mut Vec<(usize, usize)>,
        visit: &mut dyn FnMut(&[(usize, usize)], f64),
    ) {
        for a in 0..m.num_actions() {
            let p = prob * pi.prob(h, s, a);
            if p == 0.0 {
                continue;
            }
            path.push((s, a));
            if h + 1 == m.horizon() {
                visit(path, p);
            } else {
                let next = m.transition_distribution(h, s, a).unwrap().to_vec();
                for (sp, q) in next.into_iter().enumerate() {
                    if q > 0.0 {
                        go(m, pi, h + 1, sp, p * q, path, visit);
                    }
                }
            }
            path.pop();
        }
    }
    go(m, pi, 0, m.initial_state(), 1.0, &mut Vec::new(), visit);
}

fn brute_value(m: &LinearMdpModel<f64>, pi: &PolicyTable<f64>, losses: &SaTable<f64>) -> f64 {
    let mut total = 0.0;
    enumerate(m, pi, &mut |path, p| {
        total += p * path.iter().enumerate().map(|(h, &(s, a))| losses.get(h, s, a)).sum::<f64>();
    });
    total
}

fn all_deterministic(m: &LinearMdpModel<f64>) -> Vec<PolicyTable<f64>> {
    let (h, n, na) = (m.horizon(), m.num_states(), m.num_actions());
    let cells = h * n;
    (0..na.pow(cells as u32))
        .map(|mut code| {
            let choice: Vec<Vec<usize>> = (0..h)
                .map(|_| {
                    (0..n)
                        .map(|_| {
                            let a = code % na;
                            code /= na;
                            a
                        })
                        .collect()
                })
                .collect();
            PolicyTable::deterministic(&choice, na)
        })
        .collect()
}

#[test]
fn value_matches_path_enumeration() {
    for seed in 0..20 {
        let kind = if seed % 2 == 0 {
            GeneratorKind::SimplexMixture
        } else {
            GeneratorKind::TabularOnehot
        };
        let m = model(kind, 3, 2, 4, if seed % 2 == 0 { 3 } else { 6 }, seed);
        let mut rng = keyed(seed, &[500]);
        let pi = random_policy(4, 3, 2, &mut rng);
        let losses = random_table(4, 3, 2, 1.0, &mut rng);
        let dp = value_dp(&m, &pi, &losses).initial_value(&m);
        assert!((dp - brute_value(&m, &pi, &losses)).abs() < 1e-12, "seed {seed}");
    }
}

#[test]
fn occupancy_matches_path_enumeration() {
    let m = model(GeneratorKind::SimplexMixture, 4, 3, 3, 2, 9);
    let pi = random_policy(3, 4, 3, &mut keyed(9, &[501]));
    let mut brute = SaTable::zeros(3, 4, 3);
    enumerate(&m, &pi, &mut |path, p| {
        for (h, &(s, a)) in path.iter().enumerate() {
            brute.set(h, s, a, brute.get(h, s, a) + p);
        }
    });
    let occ = occupancy(&m, &pi);
    for (x, y) in occ.d.as_slice().iter().zip(brute.as_slice()) {
        assert!((x - y).abs() < 1e-13);
    }
}

#[test]
fn best_in_hindsight_matches_exhaustive_search() {
    for seed in 0..5 {
        let m = model(GeneratorKind::TabularOnehot, 2, 2, 3, 4, seed);
        let adv = make_adversary(&AdversarySpec::sinusoid(seed, 3.0, 0.9), &m).unwrap();
        let schedule = CostSchedule {
            episodes: (0..7).map(|k| adv.next_costs(k, &[])).collect(),
        };
        let tables: Vec<SaTable<f64>> = schedule.episodes.iter().map(|c| m.loss_table(c)).collect();
        let exhaustive = all_deterministic(&m)
            .iter()
            .map(|pi| tables.iter().map(|l| brute_value(&m, pi, l)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let (best, total) = best_in_hindsight(&m, &schedule);
        assert!((total - exhaustive).abs() < 1e-11, "seed {seed}");
        let realized: f64 = tables.iter().map(|l| brute_value(&m, &best, l)).sum();
        assert!((realized - total).abs() < 1e-11);
    }
}

#[test]
fn no_stochastic_policy_beats_the_optimum() {
    let m = model(GeneratorKind::SimplexMixture, 3, 3, 3, 2, 4);
    let mut rng = keyed(4, &[502]);
    let losses = random_table(3, 3, 3, 1.0, &mut rng);
    let (_, vt) = optimal_policy(&m, &losses);
    let opt = vt.initial_value(&m);
    for _ in 0..200 {
        let pi = random_policy(3, 3, 3, &mut rng);
        assert!(brute_value(&m, &pi, &losses) >= opt - 1e-12);
    }
}

#[test]
fn q_vector_reproduces_enumerated_q() {
    let m = model(GeneratorKind::SimplexMixture, 3, 2, 3, 3, 12);
    let pi = random_policy(3, 3, 2, &mut keyed(12, &[503]));
    let costs = make_adversary(&AdversarySpec::fixed(12), &m).unwrap().next_costs(0, &[]);
    let losses = m.loss_table(&costs);
    let q = q_vector(&m, &pi, &costs, 0);
    // Q_1(s1, a) by enumerating with the first action forced
    for a in 0..2 {
        let mut forced = pi.table().clone();
        forced.row_mut(0, m.initial_state()).iter_mut().enumerate().for_each(|(b, p)| *p = f64::from(u8::from(a == b)));
        let forced = PolicyTable::from_table(forced);
        let brute = brute_value(&m, &forced, &losses);
        let linear: f64 = m.feature(m.initial_state(), a).iter().zip(&q).map(|(x, y)| x * y).sum();
        assert!((brute - linear).abs() < 1e-12);
    }
}
