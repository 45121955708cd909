//! Frame-protocol evaluation and the report shared with tracking.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::augment::Protocol;
use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::geometry::{uvd_to_xyz, uvd_to_xyz_point, Uvd};
use crate::roi::{denormalize, init_from_joints, normalize_labels, preprocess_pair, CropInit, ImageBuffer, NormalizedLabels};
use crate::synthdata::StereoSample;

/// What a predictor sees for one frame.
pub struct FrameInput<'a> {
    pub sample: &'a StereoSample,
    pub init: CropInit,
    pub left: ImageBuffer,
    pub right: ImageBuffer,
}

/// Anything that maps a cropped stereo pair to normalized labels.
pub trait Predictor: Sync {
    /// Crop size `(width, height)` the predictor consumes.
    fn input_size(&self) -> (usize, usize);

    fn predict(&self, input: &FrameInput<'_>) -> Result<NormalizedLabels>;
}

impl Predictor for Estimator {
    fn input_size(&self) -> (usize, usize) {
        (self.config().net_w, self.config().net_h)
    }

    fn predict(&self, input: &FrameInput<'_>) -> Result<NormalizedLabels> {
        Ok(self.forward(&input.left, &input.right)?.prediction.labels)
    }
}

/// Echoes the ground truth in crop coordinates.
#[derive(Debug, Clone, Copy)]
pub struct OraclePredictor {
    pub net_w: usize,
    pub net_h: usize,
}

impl Predictor for OraclePredictor {
    fn input_size(&self) -> (usize, usize) {
        (self.net_w, self.net_h)
    }

    fn predict(&self, input: &FrameInput<'_>) -> Result<NormalizedLabels> {
        Ok(normalize_labels(&input.sample.gt, &input.init, self.net_w, self.net_h))
    }
}

/// Predicts the same crop-relative pose for every frame: the per-coordinate
/// median of the training labels.
#[derive(Debug, Clone)]
pub struct MedianPosePredictor {
    pub labels: NormalizedLabels,
    pub net_w: usize,
    pub net_h: usize,
}

impl MedianPosePredictor {
    pub fn fit(train: &[StereoSample], net_w: usize, net_h: usize, margin: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidConfig("median pose needs at least one training sample".into()));
        }
        let all: Vec<NormalizedLabels> = train
            .iter()
            .map(|s| Ok(normalize_labels(&s.gt, &init_from_joints(&s.gt, margin)?, net_w, net_h)))
            .collect::<Result<_>>()?;
        let joints = all[0].len();
        let median = |f: &dyn Fn(&Uvd) -> f64, j: usize| {
            let mut xs: Vec<f64> = all.iter().map(|l| f(&l.joints()[j])).collect();
            xs.sort_by(f64::total_cmp);
            let n = xs.len();
            if n % 2 == 1 {
                xs[n / 2]
            } else {
                0.5 * (xs[n / 2 - 1] + xs[n / 2])
            }
        };
        let labels = (0..joints)
            .map(|j| Uvd::new(median(&|p| p.u, j), median(&|p| p.v, j), median(&|p| p.d, j)))
            .collect();
        Ok(MedianPosePredictor {
            labels: NormalizedLabels::new(labels),
            net_w,
            net_h,
        })
    }
}

impl Predictor for MedianPosePredictor {
    fn input_size(&self) -> (usize, usize) {
        (self.net_w, self.net_h)
    }

    fn predict(&self, _input: &FrameInput<'_>) -> Result<NormalizedLabels> {
        Ok(self.labels.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Crop padding for boxes built from joints.
    pub margin: f64,
    /// Frames with a larger mean error count as diverged.
    pub divergence_mm: f64,
    /// Error charged to a joint whose predicted global disparity is not positive.
    pub penalty_mm: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            margin: 0.25,
            divergence_mm: 100.0,
            penalty_mm: 1000.0,
        }
    }
}

/// Result of one evaluated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub init: CropInit,
    /// Global-space prediction.
    pub prediction: Vec<Uvd>,
    pub joint_err_mm: Vec<f64>,
    pub mean_err_mm: f64,
    /// Joints whose predicted disparity was not positive.
    pub invalid_joints: usize,
}

/// Outcome of an evaluated frame, before aggregation.
pub(crate) fn score_frame(
    sample: &StereoSample,
    init: CropInit,
    pred: &NormalizedLabels,
    net_w: usize,
    net_h: usize,
    cfg: &EvalConfig,
) -> Result<FrameRecord> {
    if pred.len() != sample.gt.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} predicted joints, {} labelled", pred.len(), sample.gt.len()),
        ));
    }
    let global = denormalize(pred, &init, net_w, net_h);
    let gt_xyz = uvd_to_xyz(&sample.rig, &sample.gt)?;
    let mut invalid = 0;
    let joint_err_mm: Vec<f64> = global
        .iter()
        .zip(gt_xyz.iter())
        .map(|(p, g)| {
            if p.d > 0.0 && p.d.is_finite() && p.u.is_finite() && p.v.is_finite() {
                uvd_to_xyz_point(&sample.rig, *p).distance(g)
            } else {
                invalid += 1;
                cfg.penalty_mm
            }
        })
        .collect();
    let mean_err_mm = joint_err_mm.iter().sum::<f64>() / joint_err_mm.len() as f64;
    Ok(FrameRecord {
        frame_id: sample.id,
        init,
        prediction: global.0,
        joint_err_mm,
        mean_err_mm,
        invalid_joints: invalid,
    })
}

pub(crate) fn run_frame<P: Predictor + ?Sized>(
    predictor: &P,
    sample: &StereoSample,
    init: CropInit,
    cfg: &EvalConfig,
) -> Result<FrameRecord> {
    let (w, h) = predictor.input_size();
    let (left, right) = preprocess_pair(&sample.left, &sample.right, &init, w, h);
    let input = FrameInput {
        sample,
        init,
        left,
        right,
    };
    let pred = predictor.predict(&input)?;
    score_frame(sample, init, &pred, w, h, cfg)
}

/// Per-frame errors plus their aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub frames: Vec<FrameRecord>,
    pub mean_error_mm: f64,
    pub per_joint_mean_mm: Vec<f64>,
    pub divergence_mm: f64,
    /// Frames whose mean error exceeds `divergence_mm`.
    pub diverged_frames: usize,
    /// Frames with at least one non-positive predicted disparity.
    pub invalid_frames: usize,
}

impl EvalReport {
    pub fn from_frames(protocol: Protocol, frames: Vec<FrameRecord>, cfg: &EvalConfig) -> Self {
        let n = frames.len();
        let joints = frames.first().map_or(0, |f| f.joint_err_mm.len());
        let mut per_joint = vec![0.0; joints];
        for f in &frames {
            for (acc, e) in per_joint.iter_mut().zip(&f.joint_err_mm) {
                *acc += e;
            }
        }
        let denom = n.max(1) as f64;
        per_joint.iter_mut().for_each(|v| *v /= denom);
        let mean_error_mm = if n == 0 {
            f64::NAN
        } else {
            frames.iter().map(|f| f.mean_err_mm).sum::<f64>() / n as f64
        };
        EvalReport {
            protocol,
            diverged_frames: frames.iter().filter(|f| f.mean_err_mm > cfg.divergence_mm).count(),
            invalid_frames: frames.iter().filter(|f| f.invalid_joints > 0).count(),
            frames,
            mean_error_mm,
            per_joint_mean_mm: per_joint,
            divergence_mm: cfg.divergence_mm,
        }
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "protocol: {}", self.protocol);
        let _ = writeln!(s, "frames: {}", self.frames.len());
        let _ = writeln!(s, "mean_error_mm: {:.6}", self.mean_error_mm);
        let _ = writeln!(
            s,
            "diverged_frames: {} (threshold {} mm)",
            self.diverged_frames, self.divergence_mm
        );
        let _ = writeln!(s, "invalid_disparity_frames: {}", self.invalid_frames);
        for (j, e) in self.per_joint_mean_mm.iter().enumerate() {
            let _ = writeln!(s, "joint {j:2}: {e:.6} mm");
        }
        s
    }

    /// One record per frame: `frame_id,mean_err_mm,j0_err,...`, after a header.
    pub fn to_records(&self) -> String {
        let joints = self.per_joint_mean_mm.len();
        let mut s = String::from("frame_id,mean_err_mm");
        for j in 0..joints {
            let _ = write!(s, ",j{j}_err");
        }
        s.push('\n');
        for f in &self.frames {
            let _ = write!(s, "{},{}", f.frame_id, f.mean_err_mm);
            for e in &f.joint_err_mm {
                let _ = write!(s, ",{e}");
            }
            s.push('\n');
        }
        s
    }

    /// Parses [`EvalReport::to_records`] output into `(frame_id, mean, joint errors)`.
    pub fn parse_records(text: &str) -> Result<Vec<(u64, f64, Vec<f64>)>> {
        let bad = |line: usize| Error::InvalidConfig(format!("malformed report record on line {}", line + 1));
        text.lines()
            .enumerate()
            .skip(1)
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                let mut fields = line.split(',');
                let id = fields.next().and_then(|f| f.trim().parse().ok()).ok_or_else(|| bad(i))?;
                let mean = fields.next().and_then(|f| f.trim().parse().ok()).ok_or_else(|| bad(i))?;
                let joints = fields.map(|f| f.trim().parse().map_err(|_| bad(i))).collect::<Result<_>>()?;
                Ok((id, mean, joints))
            })
            .collect()
    }
}

/// Every frame cropped from its own ground truth; frames run in parallel.
pub fn eval_frame<P: Predictor + ?Sized>(data: &[StereoSample], predictor: &P, cfg: &EvalConfig) -> Result<EvalReport> {
    let frames = data
        .par_iter()
        .map(|s| run_frame(predictor, s, init_from_joints(&s.gt, cfg.margin)?, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_frames(Protocol::Frame, frames, cfg))
}
