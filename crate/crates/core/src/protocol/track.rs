//! Tracking protocol: only the first frame's crop comes from ground truth,
//! later crops are built from the previous frame's prediction. Synthetic
//! sequences come from a bounded random walk over scene parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::augment::{Protocol, Jitter, SCALE_FRACTION, SHIFT_D0_FRACTION, SHIFT_UV_FRACTION};
use super::eval::{run_frame, EvalConfig, EvalReport, Predictor};
use crate::error::{Error, Result};
use crate::geometry::JointSetUvd;
use crate::roi::{init_from_joints, CropInit};
use crate::synthdata::{frustum_check, mix_seed, SceneParams, StereoSample, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SequenceConfig {
    pub sequences: usize,
    pub length: usize,
    /// Largest per-axis wrist step, millimetres per frame.
    pub step_translation_mm: f64,
    /// Largest per-angle hand rotation step, radians per frame.
    pub step_rotation_rad: f64,
    /// Largest per-joint flexion step, radians per frame.
    pub step_flexion_rad: f64,
    pub seed: u64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            sequences: 8,
            length: 12,
            step_translation_mm: 8.0,
            step_rotation_rad: 0.04,
            step_flexion_rad: 0.08,
            seed: 0,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        let steps = [self.step_translation_mm, self.step_rotation_rad, self.step_flexion_rad];
        if self.sequences == 0 || self.length == 0 || steps.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "sequences need a positive count and length and non-negative finite steps".into(),
            ));
        }
        Ok(())
    }
}

/// One random-walk step; rejected if the hand would leave either view or
/// the depth range, in which case the scene stays put.
fn walk(scene: &SceneParams, synth: &SynthConfig, cfg: &SequenceConfig, rng: &mut ChaCha8Rng) -> SceneParams {
    let mut step = |half: f64| if half > 0.0 { rng.gen_range(-half..=half) } else { 0.0 };
    let mut next = scene.clone();
    for t in &mut next.translation {
        *t += step(cfg.step_translation_mm);
    }
    for r in &mut next.rotation {
        *r += step(cfg.step_rotation_rad);
    }
    for finger in &mut next.flexion {
        for (k, a) in finger.iter_mut().enumerate() {
            let (lo, hi) = synth.limits.flexion[k];
            *a = (*a + step(cfg.step_flexion_rad)).clamp(lo, hi);
        }
    }
    let (zmin, zmax) = synth.limits.depth_mm;
    let z_ok = (zmin..=zmax).contains(&next.translation[2]);
    if z_ok && frustum_check(&next, &synth.skeleton, &synth.rig).is_ok() {
        next
    } else {
        scene.clone()
    }
}

/// Renders `cfg.sequences` sequences of `cfg.length` frames. Sequence `k`
/// starts from scene `synth.first_id + k` of the generator; frame ids are
/// `first_id + k * length + t`.
pub fn make_sequences(synth: &SynthConfig, cfg: &SequenceConfig) -> Result<Vec<Vec<StereoSample>>> {
    synth.validate()?;
    cfg.validate()?;
    (0..cfg.sequences)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, k as u64));
            let mut scene = synth.scene_for(synth.first_id + k as u64)?;
            let mut frames = Vec::with_capacity(cfg.length);
            for t in 0..cfg.length {
                if t > 0 {
                    scene = walk(&scene, synth, cfg, &mut rng);
                }
                let id = synth.first_id + (k * cfg.length + t) as u64;
                frames.push(synth.render_scene(&scene, id)?);
            }
            Ok(frames)
        })
        .collect()
}

/// Perturbs a first-frame crop within the augmentation ranges: box shift,
/// box scale and global-disparity shift.
pub fn perturb_init<R: Rng>(init: &CropInit, rng: &mut R) -> CropInit {
    let mut draw = |half: f64| rng.gen_range(-half..=half);
    Jitter {
        rotate_deg: 0.0,
        shift_u: draw(SHIFT_UV_FRACTION),
        shift_v: draw(SHIFT_UV_FRACTION),
        shift_d0: draw(SHIFT_D0_FRACTION),
        scale: draw(SCALE_FRACTION),
    }
    .apply(init)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub eval: EvalConfig,
    /// Perturb each sequence's first crop with a draw seeded from `seed`.
    pub perturb_first: bool,
    pub seed: u64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            eval: EvalConfig::default(),
            perturb_first: true,
            seed: 0,
        }
    }
}

/// Runs the tracking protocol over every sequence; sequences run in
/// parallel, frames within a sequence in order.
pub fn eval_track<P: Predictor + ?Sized>(
    sequences: &[Vec<StereoSample>],
    predictor: &P,
    cfg: &TrackConfig,
) -> Result<EvalReport> {
    let per_seq: Vec<Vec<_>> = sequences
        .par_iter()
        .enumerate()
        .map(|(k, seq)| {
            let mut records = Vec::with_capacity(seq.len());
            let mut init: Option<CropInit> = None;
            for frame in seq {
                let current = match init {
                    Some(i) => i,
                    None => {
                        let gt_box = init_from_joints(&frame.gt, cfg.eval.margin)?;
                        if cfg.perturb_first {
                            perturb_init(&gt_box, &mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, k as u64)))
                        } else {
                            gt_box
                        }
                    }
                };
                let rec = run_frame(predictor, frame, current, &cfg.eval)?;
                init = Some(next_init(&rec.prediction, current, cfg.eval.margin));
                records.push(rec);
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport::from_frames(
        Protocol::Track,
        per_seq.into_iter().flatten().collect(),
        &cfg.eval,
    ))
}

/// Box for the next frame from this frame's global prediction. A prediction
/// that cannot form a box (non-finite or collapsed) keeps the current box.
fn next_init(prediction: &[crate::geometry::Uvd], current: CropInit, margin: f64) -> CropInit {
    let finite = prediction.iter().all(|p| p.u.is_finite() && p.v.is_finite() && p.d.is_finite());
    if !finite {
        return current;
    }
    match init_from_joints(&JointSetUvd(prediction.to_vec()), margin) {
        Ok(mut i) if i.w0 > 0.0 && i.h0 > 0.0 => {
            // Keep the right box meaningful when the predicted disparity collapses.
            if !(i.d0 > 0.0) {
                i.d0 = current.d0;
            }
            i
        }
        _ => current,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::eval::OraclePredictor;

    fn small() -> (SynthConfig, SequenceConfig) {
        (
            SynthConfig::default(),
            SequenceConfig {
                sequences: 2,
                length: 4,
                ..SequenceConfig::default()
            },
        )
    }

    #[test]
    fn oracle_tracks_perfectly_and_boxes_follow_gt() {
        let (synth, cfg) = small();
        let seqs = make_sequences(&synth, &cfg).unwrap();
        let oracle = OraclePredictor { net_w: 64, net_h: 64 };
        let r = eval_track(&seqs, &oracle, &TrackConfig::default()).unwrap();
        assert_eq!(r.frames.len(), 8);
        assert!(r.mean_error_mm < 1e-9, "{}", r.mean_error_mm);
        for (k, seq) in seqs.iter().enumerate() {
            for t in 1..seq.len() {
                let rec = &r.frames[k * seq.len() + t];
                let want = init_from_joints(&seq[t - 1].gt, 0.25).unwrap();
                for (a, b) in [(rec.init.u0, want.u0), (rec.init.v0, want.v0), (rec.init.w0, want.w0), (rec.init.d0, want.d0)] {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn walk_moves_the_hand_a_bounded_amount() {
        let (synth, cfg) = small();
        let seqs = make_sequences(&synth, &cfg).unwrap();
        for seq in &seqs {
            let moved = seq.windows(2).any(|w| w[0].gt != w[1].gt);
            assert!(moved);
        }
    }

    #[test]
    fn same_seed_same_report() {
        let (synth, cfg) = small();
        let seqs = make_sequences(&synth, &cfg).unwrap();
        let oracle = OraclePredictor { net_w: 64, net_h: 64 };
        let a = eval_track(&seqs, &oracle, &TrackConfig::default()).unwrap();
        let b = eval_track(&make_sequences(&synth, &cfg).unwrap(), &oracle, &TrackConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
