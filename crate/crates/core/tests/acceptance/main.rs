//! Acceptance suite: one pass/fail line per criterion.
//!
//! `cargo test --test acceptance` runs everything; trailing numbers select
//! criteria, e.g. `cargo test --test acceptance -- 1 7 13`.

mod oracles;
mod pipeline;
mod structure;
mod training;

use std::time::Instant;

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }
}

type Criterion = (u32, &'static str, fn(&mut training::Shared) -> Outcome);

const CRITERIA: [Criterion; 14] = [
    (1, "geometry round trip", oracles::geometry_round_trip),
    (2, "crop normalization round trip", oracles::crop_round_trip),
    (3, "disparity sampling oracle", oracles::disparity_sampling),
    (4, "normalized heatmap targets", oracles::normalized_targets),
    (5, "gradient suite", oracles::gradient_suite),
    (6, "loss identities", oracles::loss_identities),
    (7, "oracle chain is exactly zero", pipeline::oracle_chain),
    (8, "toy training beats untrained and median pose", training::toy_training),
    (9, "stereo tracks better than mono", training::stereo_vs_mono_track),
    (10, "augmentation policy", structure::augmentation_policy),
    (11, "two-stage vs joint training", training::two_stage_vs_joint),
    (12, "bench structure", structure::bench_structure),
    (13, "serialization round trips", structure::serialization),
    (14, "cli determinism", pipeline::cli_determinism),
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = training::Shared::default();
    let mut failed = Vec::new();
    let total = Instant::now();
    for (n, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&mut shared)))
            .unwrap_or_else(|_| Outcome::new(false, "panicked"));
        let verdict = if out.passed { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {verdict} {name}: {} [{:.1}s]", out.detail, t.elapsed().as_secs_f64());
        if !out.passed {
            failed.push(n);
        }
    }
    println!("acceptance: {} failed {:?} in {:.1}s", failed.len(), failed, total.elapsed().as_secs_f64());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
