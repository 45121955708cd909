//! Criteria 1-6: closed-form identities checked against independent oracles.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereopose::diffnet::gradcheck::{check_inputs, check_params, GradCheckConfig, GradCheckReport};
use stereopose::diffnet::{build_network, huber, Breakpoint, DisparityStride, Graph, NetConfig, Tensor, Var};
use stereopose::estimator::{loss_d, loss_d_node, make_heatmap_target, sample_disparity, DisparityMap, ViewMode};
use stereopose::geometry::{uvd_to_xyz, xyz_to_uvd, JointSetUvd, StereoRig, Uvd};
use stereopose::protocol::{record_loss, Objective, TrainConfig};
use stereopose::roi::{denormalize, normalize_labels, CropInit, NormalizedLabels};

use super::training::Shared;
use super::Outcome;

pub fn geometry_round_trip(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rig = StereoRig::default();
    let points = JointSetUvd(
        (0..10_000)
            .map(|_| Uvd::new(rng.gen_range(-500.0..800.0), rng.gen_range(-500.0..800.0), rng.gen_range(1.0..200.0)))
            .collect(),
    );
    let t = Instant::now();
    let back = uvd_to_xyz(&rig, &points).and_then(|xyz| xyz_to_uvd(&rig, &xyz));
    let secs = t.elapsed().as_secs_f64();
    let back = match back {
        Ok(b) => b,
        Err(e) => return Outcome::new(false, format!("error {e}")),
    };
    let worst = points
        .iter()
        .zip(back.iter())
        .map(|(a, b)| (a.u - b.u).abs().max((a.v - b.v).abs()).max((a.d - b.d).abs()))
        .fold(0.0, f64::max);
    Outcome::new(worst < 1e-9 && secs < 1.0, format!("max abs error {worst:.3e} (< 1e-9), {secs:.4}s (< 1s)"))
}

/// Boxes from 16 px (a distant hand) to well past the frame size. Below
/// roughly Wn/4 px the image-side grid is too coarse to pin normalized
/// coordinates to 1e-12.
fn random_init(rng: &mut ChaCha8Rng) -> CropInit {
    CropInit::new(
        rng.gen_range(-100.0..400.0),
        rng.gen_range(-100.0..300.0),
        rng.gen_range(16.0..500.0),
        rng.gen_range(16.0..500.0),
        rng.gen_range(1.0..200.0),
    )
}

pub fn crop_round_trip(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (nw, nh) = (64, 64);
    let mut norm_worst = 0.0f64;
    let mut global_worst = 0.0f64;
    for _ in 0..10_000 {
        let init = random_init(&mut rng);
        // normalized -> global -> normalized
        let net = NormalizedLabels::new(
            (0..21)
                .map(|_| Uvd::new(rng.gen_range(-32.0..96.0), rng.gen_range(-32.0..96.0), rng.gen_range(-20.0..20.0)))
                .collect(),
        );
        let again = normalize_labels(&denormalize(&net, &init, nw, nh), &init, nw, nh);
        for (a, b) in net.joints().iter().zip(again.joints()) {
            norm_worst = norm_worst.max((a.u - b.u).abs()).max((a.v - b.v).abs()).max((a.d - b.d).abs());
        }
        // global -> normalized -> global
        let gt = JointSetUvd(
            (0..21)
                .map(|_| Uvd::new(rng.gen_range(-200.0..600.0), rng.gen_range(-200.0..500.0), rng.gen_range(1.0..200.0)))
                .collect(),
        );
        let back = denormalize(&normalize_labels(&gt, &init, nw, nh), &init, nw, nh);
        for (a, b) in gt.iter().zip(back.iter()) {
            global_worst = global_worst.max((a.u - b.u).abs()).max((a.v - b.v).abs()).max((a.d - b.d).abs());
        }
    }
    Outcome::new(
        norm_worst < 1e-12 && global_worst < 1e-12,
        format!("normalized side {norm_worst:.3e}, image side {global_worst:.3e} (both < 1e-12)"),
    )
}

/// Clamped bilinear read written as the full double sum with tent weights.
fn tent_sum(map: &DisparityMap, u: f64, v: f64) -> f64 {
    let x = (u / map.stride).clamp(0.0, (map.width - 1) as f64);
    let y = (v / map.stride).clamp(0.0, (map.height - 1) as f64);
    let mut s = 0.0;
    for m in 0..map.height {
        for n in 0..map.width {
            let k = (1.0 - (n as f64 - x).abs()).max(0.0) * (1.0 - (m as f64 - y).abs()).max(0.0);
            s += k * map.at(m, n);
        }
    }
    s
}

pub fn disparity_sampling(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut clamped = 0;
    for _ in 0..1_000 {
        let (h, w) = (rng.gen_range(1..17), rng.gen_range(1..17));
        let stride = [1.0, 2.0, 4.0, 8.0][rng.gen_range(0..4)];
        let data = (0..h * w).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let map = DisparityMap::new(h, w, stride, data).expect("map");
        let span_u = w as f64 * stride;
        let span_v = h as f64 * stride;
        let (u, v) = (rng.gen_range(-0.3 * span_u..1.3 * span_u), rng.gen_range(-0.3 * span_v..1.3 * span_v));
        if u < 0.0 || v < 0.0 || u / stride > (w - 1) as f64 || v / stride > (h - 1) as f64 {
            clamped += 1;
        }
        let got = sample_disparity(&map, &[(u, v)])[0];
        worst = worst.max((got - tent_sum(&map, u, v)).abs());
    }
    Outcome::new(
        worst < 1e-12 && clamped > 100,
        format!("max abs error {worst:.3e} (< 1e-12), {clamped} of 1000 queries border-clamped"),
    )
}

pub fn normalized_targets(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (gh, gw, stride) = (16, 16, 4.0);
    let mut worst_sum = 0.0f64;
    let mut argmax_misses = 0;
    for _ in 0..200 {
        let sigma = rng.gen_range(0.5..3.0);
        let labels = NormalizedLabels::new(
            (0..21)
                .map(|_| Uvd::new(rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0), 0.0))
                .collect(),
        );
        let t = make_heatmap_target(&labels, gh, gw, stride, sigma, true).expect("target");
        for (j, p) in labels.joints().iter().enumerate() {
            let map = t.joint(j);
            worst_sum = worst_sum.max((map.iter().sum::<f64>() - 1.0).abs());
            let best = (0..map.len()).max_by(|&a, &b| map[a].total_cmp(&map[b])).expect("cells");
            let n = ((p.u / stride).round() as usize).min(gw - 1);
            let m = ((p.v / stride).round() as usize).min(gh - 1);
            if best != m * gw + n {
                argmax_misses += 1;
            }
        }
    }
    // A joint on a cell centre: cells at equal distance carry equal weight.
    let centre = NormalizedLabels::new(vec![Uvd::new(8.0 * stride, 7.0 * stride, 0.0)]);
    let t = make_heatmap_target(&centre, gh, gw, stride, 1.3, true).expect("target");
    let at = |m: i64, n: i64| t.joint(0)[(7 + m) as usize * gw + (8 + n) as usize];
    let mut asym = 0.0f64;
    for (a, b) in [(1, 0), (1, 1), (2, 1), (3, 2), (0, 4)] {
        let ring = [at(a, b), at(-a, b), at(a, -b), at(-a, -b), at(b, a), at(-b, a), at(b, -a), at(-b, -a)];
        for r in ring {
            asym = asym.max((r - ring[0]).abs());
        }
    }
    Outcome::new(
        worst_sum <= 1e-9 && argmax_misses == 0 && asym == 0.0,
        format!("max |sum - 1| {worst_sum:.3e} (<= 1e-9), {argmax_misses} argmax misses, symmetric-pair spread {asym:e}"),
    )
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("tensor")
}

/// Scalar loss over an op output: MSE against a fixed random target.
fn reduce(g: &mut Graph<f64>, y: Var, seed: u64) -> stereopose::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = random_tensor(&mut rng, g.value(y).shape(), -1.0, 1.0);
    g.mse_const(y, t)
}

fn gradcheck_ops() -> Vec<(&'static str, stereopose::Result<GradCheckReport>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = GradCheckConfig {
        coords: 200,
        ..GradCheckConfig::default()
    };
    let mut out = Vec::new();
    for (name, stride, pad) in [("conv2d s1p1", 1, 1), ("conv2d s2p1", 2, 1), ("conv2d s1p0", 1, 0)] {
        let mut ins = vec![
            random_tensor(&mut rng, &[3, 7, 6], -1.0, 1.0),
            random_tensor(&mut rng, &[4, 3, 3, 3], -0.5, 0.5),
            random_tensor(&mut rng, &[4], -0.5, 0.5),
        ];
        let r = check_inputs(&mut ins, &cfg, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
            reduce(g, y, 1)
        });
        out.push((name, r));
    }
    let mut ins = vec![random_tensor(&mut rng, &[5, 1, 1], -0.5, 0.5), random_tensor(&mut rng, &[4, 5, 1, 1], -0.5, 0.5), random_tensor(&mut rng, &[4], -0.5, 0.5)];
    out.push(("conv2d 1x1", check_inputs(&mut ins, &cfg, |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], 1, 0)?;
        reduce(g, y, 2)
    })));
    let mut ins = vec![random_tensor(&mut rng, &[2, 5, 5], -1.0, 1.0)];
    out.push(("relu", check_inputs(&mut ins, &cfg, |g, v| {
        let y = g.relu(v[0]);
        reduce(g, y, 3)
    })));
    let mut ins = vec![random_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0), random_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0)];
    out.push(("add", check_inputs(&mut ins, &cfg, |g, v| {
        let y = g.add(v[0], v[1])?;
        reduce(g, y, 4)
    })));
    let mut ins = vec![random_tensor(&mut rng, &[2, 6, 4], -1.0, 1.0)];
    out.push(("maxpool2", check_inputs(&mut ins, &cfg, |g, v| {
        let y = g.maxpool2(v[0])?;
        reduce(g, y, 5)
    })));
    let mut ins = vec![random_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0)];
    out.push(("upsample2", check_inputs(&mut ins, &cfg, |g, v| {
        let y = g.upsample2(v[0]);
        reduce(g, y, 6)
    })));
    let mut ins = vec![random_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0), random_tensor(&mut rng, &[3, 3, 4], -1.0, 1.0)];
    out.push(("concat", check_inputs(&mut ins, &cfg, |g, v| {
        let y = g.concat(v[0], v[1])?;
        reduce(g, y, 7)
    })));
    let weights = {
        let mut w = random_tensor(&mut rng, &[5, 4, 6], 0.0, 1.0);
        for row in w.data_mut().chunks_exact_mut(24) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        w
    };
    // Labels on both sides of the Huber threshold.
    let gt = [0.2, -1.7, 2.5, 0.9, -0.1];
    let mut ins = vec![random_tensor(&mut rng, &[1, 4, 6], -1.0, 1.0)];
    out.push(("expectation_huber", check_inputs(&mut ins, &cfg, |g, v| g.expectation_huber(v[0], weights.clone(), &gt, 1.0))));
    let mut ins = vec![
        random_tensor(&mut rng, &[1, 5, 6], -1.0, 1.0),
        Tensor::from_vec(&[4, 2], vec![3.3, 5.1, 10.7, 2.2, 1.3, 17.9, 21.5, 9.4]).expect("queries"),
    ];
    out.push(("bilinear_sample", check_inputs(&mut ins, &cfg, |g, v| {
        let y = g.bilinear_sample(v[0], v[1], 0.25)?;
        reduce(g, y, 8)
    })));
    let mut ins = vec![random_tensor(&mut rng, &[2, 2], -1.0, 1.0), random_tensor(&mut rng, &[3], -1.0, 1.0)];
    out.push(("weighted_sum", check_inputs(&mut ins, &cfg, |g, v| {
        let a = reduce(g, v[0], 9)?;
        let b = reduce(g, v[1], 10)?;
        g.weighted_sum(&[(a, 0.7), (b, -1.3)])
    })));
    out
}

fn gradcheck_composed(views: ViewMode) -> stereopose::Result<GradCheckReport> {
    let net_cfg = NetConfig {
        breakpoint: Breakpoint::D4,
        disparity_stride: DisparityStride::S4,
        base_channels: 4,
        net_w: 64,
        net_h: 64,
        ..NetConfig::default()
    };
    let (mut store, net) = build_network::<f64>(&net_cfg, 7)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let crops = (random_tensor(&mut rng, &[3, 64, 64], 0.0, 1.0), random_tensor(&mut rng, &[3, 64, 64], 0.0, 1.0));
    let labels = NormalizedLabels::new(
        (0..21)
            .map(|_| Uvd::new(rng.gen_range(8.0..56.0), rng.gen_range(8.0..56.0), rng.gen_range(-3.0..3.0)))
            .collect(),
    );
    let train = TrainConfig {
        views,
        ..TrainConfig::default()
    };
    let cfg = GradCheckConfig {
        coords: 300,
        seed: 7,
        ..GradCheckConfig::default()
    };
    check_params(&mut store, &cfg, |g, s| record_loss(g, &net, s, crops.clone(), &labels, Objective::Joint, &train))
}

pub fn gradient_suite(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let mut results = gradcheck_ops();
    results.push(("composed stereo L_uv + L_d", gradcheck_composed(ViewMode::Stereo)));
    results.push(("composed mono L_uv + L_d", gradcheck_composed(ViewMode::Mono)));
    let secs = t.elapsed().as_secs_f64();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (name, r) in &results {
        match r {
            Ok(r) if r.passes(1e-4) => {
                worst = worst.max(r.max_rel_error);
                checked += r.checked;
            }
            Ok(r) => failures.push(format!("{name}: {:?}", r.worst)),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    Outcome::new(
        failures.is_empty() && secs < 300.0,
        format!(
            "{} checks, {checked} coordinates, max relative error {worst:.3e} (< 1e-4), {secs:.1}s (< 300s){}",
            results.len(),
            if failures.is_empty() { String::new() } else { format!(", failures: {}", failures.join("; ")) }
        ),
    )
}

pub fn loss_identities(_: &mut Shared) -> Outcome {
    let branches = (huber(0.5, 1.0), huber(2.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c = rng.gen_range(-5.0..5.0);
        let labels = NormalizedLabels::new(
            (0..21)
                .map(|_| Uvd::new(rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0), rng.gen_range(-6.0..6.0)))
                .collect(),
        );
        let targets = make_heatmap_target(&labels, 16, 16, 4.0, rng.gen_range(0.5..3.0), true).expect("target");
        let want = labels.joints().iter().map(|p| huber(p.d - c, 1.0)).sum::<f64>() / 21.0;
        let direct = loss_d(&DisparityMap::constant(16, 16, 4.0, c), &labels, &targets, 1.0).expect("loss");
        let mut g = Graph::<f64>::inference();
        let map = g.input(Tensor::full(&[1, 16, 16], c), false);
        let node = loss_d_node(&mut g, map, &labels, &targets, 1.0).expect("node");
        worst = worst.max((direct - want).abs()).max((g.value(node).item() - want).abs());
    }
    Outcome::new(
        branches == (0.125, 1.5) && worst < 1e-12,
        format!(
            "huber(0.5) = {}, huber(2) = {}, constant-map deviation {worst:.3e} (< 1e-12)",
            branches.0, branches.1
        ),
    )
}
