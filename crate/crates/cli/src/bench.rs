//! Wall-clock timing of the MGR and OLSPE kernels.

use std::time::Instant;

use polsbe_core::envgen::{random_linmdp, GeneratorKind, GeneratorSpec};
use polsbe_core::mgr::{mgr, MgrParams};
use polsbe_core::olspe::{olspe, OlspeParams, TransitionDataset};
use polsbe_core::policy::PolicyTable;
use polsbe_core::rng::{keyed, sample_categorical, Purpose};
use polsbe_core::tables::SaTable;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub m: usize,
    pub n: usize,
    pub gamma: f64,
    pub dataset_size: usize,
    pub repeats: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            num_states: 4,
            num_actions: 3,
            horizon: 3,
            m: 8,
            n: 16,
            gamma: 0.15,
            dataset_size: 32,
            repeats: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub kernel: &'static str,
    pub repeats: usize,
    pub mean_micros: f64,
}

pub fn run_bench(spec: &BenchSpec, seed: u64) -> Result<Vec<BenchResult>, CliError> {
    if spec.repeats == 0 || spec.dataset_size == 0 {
        return Err(CliError::Config("repeats and dataset_size must be ≥ 1".into()));
    }
    let d = spec.num_states * spec.num_actions;
    let model = random_linmdp::<f64>(&GeneratorSpec {
        kind: GeneratorKind::TabularOnehot,
        num_states: spec.num_states,
        num_actions: spec.num_actions,
        horizon: spec.horizon,
        feature_dim: d,
        seed,
    })
    .map_err(|e| CliError::Config(e.to_string()))?;
    let params = MgrParams::without_guarantee(spec.m, spec.n, spec.gamma).map_err(|e| CliError::Config(e.to_string()))?;
    let mut rng = keyed(seed, &[Purpose::Validation as u64, 99]);
    let samples: Vec<&[f64]> = (0..params.samples_needed())
        .map(|_| model.feature(rng.gen_range(0..spec.num_states), rng.gen_range(0..spec.num_actions)))
        .collect();

    let start = Instant::now();
    for _ in 0..spec.repeats {
        std::hint::black_box(mgr(&samples, &params).map_err(|e| CliError::Config(e.to_string()))?);
    }
    let mgr_time = start.elapsed();

    let policy = PolicyTable::uniform(spec.horizon, spec.num_states, spec.num_actions);
    let mut dataset = TransitionDataset::new(spec.horizon);
    for i in 0..spec.dataset_size {
        let mut s = model.initial_state();
        let mut path = Vec::with_capacity(spec.horizon);
        for h in 0..spec.horizon {
            let a = rng.gen_range(0..spec.num_actions);
            path.push((s, a));
            if h + 1 < spec.horizon {
                let p = model.transition_distribution(h, s, a).expect("h < H − 1");
                s = sample_categorical(p, &mut rng);
            }
        }
        dataset.push_path(i as u64, &path);
    }
    let bonus = SaTable::from_fn(spec.horizon, spec.num_states, spec.num_actions, |_, _, _| rng.gen_range(0.0..1.0));
    let olspe_params = OlspeParams::new(0.1, 0.1, spec.gamma);
    let start = Instant::now();
    for _ in 0..spec.repeats {
        std::hint::black_box(
            olspe(&model, &dataset, &bonus, &olspe_params, &policy).map_err(|e| CliError::Config(e.to_string()))?,
        );
    }
    let olspe_time = start.elapsed();

    let per = |t: std::time::Duration| t.as_secs_f64() * 1e6 / spec.repeats as f64;
    Ok(vec![
        BenchResult {
            kernel: "mgr",
            repeats: spec.repeats,
            mean_micros: per(mgr_time),
        },
        BenchResult {
            kernel: "olspe",
            repeats: spec.repeats,
            mean_micros: per(olspe_time),
        },
    ])
}
