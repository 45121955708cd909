//! Criteria 10, 12 and 13: augmentation table, benchmark table shape,
//! serialization round trips.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stereopose::diffnet::{build_network, rmsprop_step, Breakpoint, DisparityStride, NetConfig, ParamStore, RmsProp, Tensor, Variant};
use stereopose::estimator::ViewMode;
use stereopose::protocol::{augment, bench_fps, AugPolicy, Augmentation, Protocol, Stage};
use stereopose::roi::CropInit;
use stereopose::synthdata::{read_dataset, write_dataset, StereoSample, SynthConfig};
use stereopose::Error;

use super::training::Shared;
use super::Outcome;

/// Rows: rotate, shift (u0, v0), shift d0, scale. Columns: 2D/Frame,
/// 2D/Track, 3D/Frame, 3D/Track.
const TABLE: [[bool; 4]; 4] = [
    [true, true, false, false],
    [false, true, false, false],
    [false, false, false, true],
    [true, true, true, true],
];

const CONDITIONS: [(Stage, Protocol); 4] = [
    (Stage::Stage2D, Protocol::Frame),
    (Stage::Stage2D, Protocol::Track),
    (Stage::Stage3D, Protocol::Frame),
    (Stage::Stage3D, Protocol::Track),
];

pub fn augmentation_policy(_: &mut Shared) -> Outcome {
    let mut cell_errors = Vec::new();
    for (c, &(stage, protocol)) in CONDITIONS.iter().enumerate() {
        let p = AugPolicy::new(stage, protocol);
        for (r, a) in Augmentation::ALL.iter().enumerate() {
            if p.allows(*a) != TABLE[r][c] {
                cell_errors.push(format!("{a:?} {stage:?}/{protocol}"));
            }
        }
    }
    let illegal = [Protocol::Frame, Protocol::Track].iter().all(|&pr| {
        matches!(
            AugPolicy::new(Stage::Stage3D, pr).with(Augmentation::Rotate, true),
            Err(Error::IllegalAugmentation(_))
        )
    });

    let init = CropInit::new(100.0, 80.0, 60.0, 60.0, 40.0);
    let mut out_of_range = 0;
    let mut forbidden = 0;
    let mut seen = [[false; 4]; 4];
    for (c, &(stage, protocol)) in CONDITIONS.iter().enumerate() {
        let policy = AugPolicy::new(stage, protocol);
        let mut rng = ChaCha8Rng::seed_from_u64(c as u64);
        for _ in 0..10_000 {
            let d = augment(&init, &policy, &mut rng).expect("draw");
            let rot = d.rotation_deg.unwrap_or(0.0);
            let du = (d.init.u0 - init.u0) / init.w0;
            let dv = (d.init.v0 - init.v0) / init.h0;
            let dd = d.init.d0 / init.d0 - 1.0;
            let ds = d.init.w0 / init.w0 - 1.0;
            let dsh = d.init.h0 / init.h0 - 1.0;
            let eps = 1e-12;
            if rot.abs() > 20.0 || du.abs() > 0.2 + eps || dv.abs() > 0.2 + eps || dd.abs() > 0.1 + eps {
                out_of_range += 1;
            }
            if ds.abs() > 0.2 + eps || (ds - dsh).abs() > eps {
                out_of_range += 1;
            }
            let moved = [rot != 0.0 || d.rotation_deg.is_some(), du != 0.0 || dv != 0.0, dd != 0.0, ds != 0.0];
            for r in 0..4 {
                if moved[r] && !TABLE[r][c] {
                    forbidden += 1;
                }
                seen[r][c] |= moved[r];
            }
        }
    }
    let never_drawn = (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).filter(|&(r, c)| TABLE[r][c] && !seen[r][c]).count();
    Outcome::new(
        cell_errors.is_empty() && illegal && out_of_range == 0 && forbidden == 0 && never_drawn == 0,
        format!(
            "16 cells, mismatches {cell_errors:?}; 3D rotation rejected: {illegal}; 4x10^4 draws: {out_of_range} out of range, {forbidden} forbidden, {never_drawn} allowed jitters never drawn"
        ),
    )
}

pub fn bench_structure(_: &mut Shared) -> Outcome {
    let base = NetConfig::default();
    let table = match bench_fps(&base, &Variant::ALL, &[ViewMode::Mono, ViewMode::Stereo], 20, 5, 0) {
        Ok(t) => t,
        Err(e) => return Outcome::new(false, format!("bench failed: {e}")),
    };
    let mut ratios = Vec::new();
    let mut ok = true;
    for v in Variant::ALL {
        let (m, s) = (table.row(v, ViewMode::Mono).unwrap(), table.row(v, ViewMode::Stereo).unwrap());
        let ratio = s.macs.total as f64 / m.macs.total as f64;
        ok &= ratio < 2.0;
        ratios.push(format!("{v} {ratio:.3}"));
    }
    for bp in [Breakpoint::D2, Breakpoint::D4] {
        for views in [ViewMode::Mono, ViewMode::Stereo] {
            let s4 = Variant::new(bp, DisparityStride::S4);
            let s8 = Variant::new(bp, DisparityStride::S8);
            ok &= table.row(s8, views).unwrap().macs.total < table.row(s4, views).unwrap().macs.total;
        }
    }
    let timing = table.timing_text();
    let header = timing.contains("mean ± std over 20 runs after 5 burn-in");
    let timed = table.rows.iter().all(|r| r.runs == 20 && r.fps_mean > 0.0);
    print!("{}", table.to_text());
    Outcome::new(
        ok && header && timed,
        format!("stereo/mono MAC ratio [{}] (< 2), S8 < S4 at both breakpoints, timing table over 20 runs after 5 burn-in: {header}", ratios.join(", ")),
    )
}

fn bits_equal(a: &StereoSample, b: &StereoSample) -> bool {
    let img = |x: &[f32], y: &[f32]| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
    a.id == b.id
        && a.rig == b.rig
        && img(a.left.data(), b.left.data())
        && img(a.right.data(), b.right.data())
        && a.gt.len() == b.gt.len()
        && a.gt.iter().zip(b.gt.iter()).all(|(p, q)| {
            p.u.to_bits() == q.u.to_bits() && p.v.to_bits() == q.v.to_bits() && p.d.to_bits() == q.d.to_bits()
        })
}

fn store_bits(s: &ParamStore<f32>) -> Vec<(String, Vec<u32>, Vec<u32>, bool)> {
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect();
    (0..s.len())
        .map(|i| (s.name(i).to_string(), bits(s.value(i)), bits(s.accumulator(i)), s.is_frozen(i)))
        .collect()
}

pub fn serialization(_: &mut Shared) -> Outcome {
    let data = SynthConfig {
        count: 12,
        seed: 13,
        ..SynthConfig::default()
    }
    .generate()
    .expect("synth");
    let dir = tempfile::tempdir().expect("tmp");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_dataset(&data, &a).expect("write");
    let back = read_dataset(&a).expect("read");
    write_dataset(&back, &b).expect("rewrite");
    let dataset_ok = back.len() == data.len() && data.iter().zip(&back).all(|(x, y)| bits_equal(x, y));
    let files_ok = std::fs::read_dir(&a).expect("dir").all(|e| {
        let name = e.expect("entry").file_name();
        std::fs::read(a.join(&name)).ok() == std::fs::read(b.join(&name)).ok()
    });

    // A trained-looking store: non-trivial values, accumulators and a frozen set.
    let cfg = NetConfig {
        base_channels: 4,
        num_stacks: 1,
        hourglass_depth: 1,
        net_w: 32,
        net_h: 32,
        ..NetConfig::default()
    };
    let (mut store, _) = build_network::<f32>(&cfg, 13).expect("net");
    let grads: Vec<_> = (0..store.len()).map(|i| Some(store.value(i).clone())).collect();
    rmsprop_step(&mut store, &grads, &RmsProp { lr: 1e-3, rho: 0.9, epsilon: 1e-8 });
    store.freeze_prefixes(&["hf."]);
    let bytes = store.save_checkpoint();
    let ckpt_ok = match ParamStore::<f32>::load_checkpoint(&bytes) {
        Ok(s) => store_bits(&s) == store_bits(&store) && s.save_checkpoint() == bytes,
        Err(_) => false,
    };
    let accepted: Vec<usize> = (0..bytes.len())
        .filter(|&n| !matches!(ParamStore::<f32>::load_checkpoint(&bytes[..n]), Err(Error::CorruptCheckpoint(_))))
        .collect();
    Outcome::new(
        dataset_ok && files_ok && ckpt_ok && accepted.is_empty(),
        format!(
            "dataset of {} samples bit-identical: {dataset_ok}, rewritten files identical: {files_ok}; checkpoint ({} bytes) bit-identical: {ckpt_ok}; {} of {} truncations not rejected",
            data.len(),
            bytes.len(),
            accepted.len(),
            bytes.len()
        ),
    )
}
