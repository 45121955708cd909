//! Fast numerical checks run by `stereopose selfcheck`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffnet::gradcheck::{check_params, GradCheckConfig};
use crate::diffnet::{build_network, huber, Breakpoint, DisparityStride, NetConfig, Tensor};
use crate::estimator::{loss_d, make_heatmap_target, sample_disparity, DisparityMap};
use crate::geometry::{uvd_to_xyz_point, xyz_to_uvd_point, StereoRig, Uvd};
use crate::protocol::{record_loss, Objective, TrainConfig};
use crate::roi::{denormalize, normalize_labels, CropInit, NormalizedLabels};
use crate::geometry::JointSetUvd;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelfCheckReport {
    pub checks: Vec<Check>,
}

impl SelfCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(s, "{} checks, {failed} failed", self.checks.len());
        s
    }

    fn push(&mut self, name: &'static str, outcome: crate::Result<(bool, String)>) {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        self.checks.push(Check { name, passed, detail });
    }
}

fn geometry_round_trip(rng: &mut ChaCha8Rng) -> crate::Result<(bool, String)> {
    let rig = StereoRig::default();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let p = Uvd::new(rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0), rng.gen_range(1.0..200.0));
        let q = xyz_to_uvd_point(&rig, uvd_to_xyz_point(&rig, p));
        worst = worst.max((p.u - q.u).abs()).max((p.v - q.v).abs()).max((p.d - q.d).abs());
    }
    Ok((worst < 1e-9, format!("max abs error {worst:e}")))
}

fn crop_round_trip(rng: &mut ChaCha8Rng) -> crate::Result<(bool, String)> {
    let mut mismatches = 0;
    for _ in 0..1_000 {
        let init = CropInit::new(
            rng.gen_range(-50.0..300.0),
            rng.gen_range(-50.0..200.0),
            rng.gen_range(5.0..400.0),
            rng.gen_range(5.0..400.0),
            rng.gen_range(1.0..200.0),
        );
        let joints: Vec<Uvd> = (0..21)
            .map(|_| Uvd::new(rng.gen_range(-100.0..500.0), rng.gen_range(-100.0..400.0), rng.gen_range(1.0..200.0)))
            .collect();
        let gt = JointSetUvd(joints);
        let back = denormalize(&normalize_labels(&gt, &init, 64, 64), &init, 64, 64);
        mismatches += gt
            .iter()
            .zip(back.iter())
            .filter(|(a, b)| a.u.to_bits() != b.u.to_bits() || a.v.to_bits() != b.v.to_bits() || a.d.to_bits() != b.d.to_bits())
            .count();
    }
    Ok((mismatches == 0, format!("{mismatches} joints not bit-identical")))
}

fn bilinear_oracle(rng: &mut ChaCha8Rng) -> crate::Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (h, w) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let stride = [1.0, 2.0, 4.0, 8.0][rng.gen_range(0..4)];
        let data: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let map = DisparityMap::new(h, w, stride, data)?;
        let (u, v) = (rng.gen_range(-20.0..80.0), rng.gen_range(-20.0..80.0));
        let got = sample_disparity(&map, &[(u, v)])[0];
        let x = (u / stride).clamp(0.0, (w - 1) as f64);
        let y = (v / stride).clamp(0.0, (h - 1) as f64);
        let mut want = 0.0;
        for m in 0..h {
            for n in 0..w {
                let k = (1.0 - (n as f64 - x).abs()).max(0.0) * (1.0 - (m as f64 - y).abs()).max(0.0);
                want += k * map.at(m, n);
            }
        }
        worst = worst.max((got - want).abs());
    }
    Ok((worst < 1e-12, format!("max abs error {worst:e}")))
}

fn loss_oracles(rng: &mut ChaCha8Rng) -> crate::Result<(bool, String)> {
    let branches = huber(0.5, 1.0) == 0.125 && huber(2.0, 1.0) == 1.5;
    let labels = NormalizedLabels::new(
        (0..21)
            .map(|_| Uvd::new(rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0), rng.gen_range(-3.0..3.0)))
            .collect(),
    );
    let targets = make_heatmap_target(&labels, 16, 16, 4.0, 1.0, true)?;
    let sums_ok = (0..21).all(|j| (targets.joint(j).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let c = 0.75;
    let got = loss_d(&DisparityMap::constant(16, 16, 4.0, c), &labels, &targets, 1.0)?;
    let want = labels.joints().iter().map(|p| huber(p.d - c, 1.0)).sum::<f64>() / 21.0;
    let err = (got - want).abs();
    Ok((
        branches && sums_ok && err < 1e-12,
        format!("huber branches {branches}, target sums {sums_ok}, constant-map error {err:e}"),
    ))
}

fn gradient_check(seed: u64) -> crate::Result<(bool, String)> {
    let net_cfg = NetConfig {
        breakpoint: Breakpoint::D4,
        disparity_stride: DisparityStride::S4,
        num_stacks: 1,
        base_channels: 4,
        net_w: 32,
        net_h: 32,
        hourglass_depth: 1,
        ..NetConfig::default()
    };
    let (mut store, net) = build_network::<f64>(&net_cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut crop = || {
        let data = (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(&[3, 32, 32], data)
    };
    let crops = (crop()?, crop()?);
    let labels = NormalizedLabels::new((0..21).map(|j| Uvd::new(4.0 + j as f64, 28.0 - j as f64, 0.1 * j as f64)).collect());
    let train = TrainConfig::default();
    let gc = GradCheckConfig {
        coords: 40,
        seed,
        ..GradCheckConfig::default()
    };
    let report = check_params(&mut store, &gc, |g, s| {
        record_loss(g, &net, s, crops.clone(), &labels, Objective::Joint, &train)
    })?;
    Ok((
        report.passes(1e-4),
        format!(
            "{} coordinates, {} kinks skipped, max relative error {:e}",
            report.checked, report.skipped_kinks, report.max_rel_error
        ),
    ))
}

/// Runs every check with randomness drawn from `seed`.
pub fn run(seed: u64) -> SelfCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = SelfCheckReport::default();
    r.push("geometry_round_trip", geometry_round_trip(&mut rng));
    r.push("crop_round_trip", crop_round_trip(&mut rng));
    r.push("bilinear_oracle", bilinear_oracle(&mut rng));
    r.push("loss_oracles", loss_oracles(&mut rng));
    r.push("gradient_check", gradient_check(seed));
    r
}
