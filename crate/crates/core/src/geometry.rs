//! Rectified pinhole stereo geometry.
//!
//! Image-space joints are `(u, v, d)`: column, row and horizontal disparity in
//! pixels, with pixel centres at integer coordinates. World-space joints are
//! `(x, y, z)` in millimetres in the left camera frame. The mapping between
//! the two is
//!
//! ```text
//! z = fx * B / d
//! x = (u - tx) / fx * z
//! y = (v - ty) / fy * z
//! ```
//!
//! All arithmetic is `f64`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Default joint count (wrist plus four joints on each of five fingers).
pub const NUM_JOINTS: usize = 21;

/// Rectified stereo intrinsics and baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub fx: f64,
    pub fy: f64,
    pub tx: f64,
    pub ty: f64,
    /// Baseline in millimetres.
    pub baseline_mm: f64,
    pub width: usize,
    pub height: usize,
}

impl StereoRig {
    pub fn new(
        fx: f64,
        fy: f64,
        tx: f64,
        ty: f64,
        baseline_mm: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let rig = StereoRig {
            fx,
            fy,
            tx,
            ty,
            baseline_mm,
            width,
            height,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.tx, self.ty, self.baseline_mm]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidRig("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidRig("focal lengths must be positive".into()));
        }
        if self.baseline_mm <= 0.0 {
            return Err(Error::InvalidRig("baseline must be positive".into()));
        }
        if self.width < 1 || self.height < 1 {
            return Err(Error::InvalidRig("image size must be at least 1x1".into()));
        }
        if !(0.0..self.width as f64).contains(&self.tx) || !(0.0..self.height as f64).contains(&self.ty) {
            return Err(Error::InvalidRig(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    /// `fx * B`, the constant relating depth and disparity.
    pub fn disparity_depth_product(&self) -> f64 {
        self.fx * self.baseline_mm
    }

    /// Parses the `key = value` rig format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut fx = None;
        let mut fy = None;
        let mut tx = None;
        let mut ty = None;
        let mut baseline = None;
        let mut width = None;
        let mut height = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidRig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let float = || {
                value
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidRig(format!("line {}: bad number `{value}`", lineno + 1)))
            };
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidRig(format!("line {}: bad integer `{value}`", lineno + 1)))
            };
            let slot_f = match key {
                "fx" => Some(&mut fx),
                "fy" => Some(&mut fy),
                "tx" => Some(&mut tx),
                "ty" => Some(&mut ty),
                "baseline_mm" => Some(&mut baseline),
                _ => None,
            };
            if let Some(slot) = slot_f {
                if slot.replace(float()?).is_some() {
                    return Err(Error::InvalidRig(format!("duplicate key `{key}`")));
                }
                continue;
            }
            let slot_i = match key {
                "width" => &mut width,
                "height" => &mut height,
                other => return Err(Error::InvalidRig(format!("unknown key `{other}`"))),
            };
            if slot_i.replace(int()?).is_some() {
                return Err(Error::InvalidRig(format!("duplicate key `{key}`")));
            }
        }
        let missing = |name: &str| Error::InvalidRig(format!("missing key `{name}`"));
        StereoRig::new(
            fx.ok_or_else(|| missing("fx"))?,
            fy.ok_or_else(|| missing("fy"))?,
            tx.ok_or_else(|| missing("tx"))?,
            ty.ok_or_else(|| missing("ty"))?,
            baseline.ok_or_else(|| missing("baseline_mm"))?,
            width.ok_or_else(|| missing("width"))?,
            height.ok_or_else(|| missing("height"))?,
        )
    }

    /// Serializes to the `key = value` format. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "fx = {}", self.fx);
        let _ = writeln!(out, "fy = {}", self.fy);
        let _ = writeln!(out, "tx = {}", self.tx);
        let _ = writeln!(out, "ty = {}", self.ty);
        let _ = writeln!(out, "baseline_mm = {}", self.baseline_mm);
        let _ = writeln!(out, "width = {}", self.width);
        let _ = writeln!(out, "height = {}", self.height);
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

impl Default for StereoRig {
    /// Desk-scale rig: 320x240 sensor, 500 px focal length, 60 mm baseline.
    fn default() -> Self {
        StereoRig {
            fx: 500.0,
            fy: 500.0,
            tx: 160.0,
            ty: 120.0,
            baseline_mm: 60.0,
            width: 320,
            height: 240,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Uvd {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

impl Uvd {
    pub const fn new(u: f64, v: f64, d: f64) -> Self {
        Uvd { u, v, d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Xyz {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Xyz {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Xyz { x, y, z }
    }

    pub fn distance(&self, other: &Xyz) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

/// Joints in image-disparity space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointSetUvd(pub Vec<Uvd>);

/// Joints in left-camera world space, millimetres.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointSetXyz(pub Vec<Xyz>);

impl JointSetUvd {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Uvd> {
        self.0.iter()
    }
}

impl JointSetXyz {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Xyz> {
        self.0.iter()
    }
}

pub fn uvd_to_xyz_point(rig: &StereoRig, p: Uvd) -> Xyz {
    let z = rig.fx * rig.baseline_mm / p.d;
    Xyz {
        x: (p.u - rig.tx) / rig.fx * z,
        y: (p.v - rig.ty) / rig.fy * z,
        z,
    }
}

pub fn xyz_to_uvd_point(rig: &StereoRig, p: Xyz) -> Uvd {
    Uvd {
        u: p.x * rig.fx / p.z + rig.tx,
        v: p.y * rig.fy / p.z + rig.ty,
        d: rig.fx * rig.baseline_mm / p.z,
    }
}

/// Back-projects image-disparity joints into the left camera frame.
pub fn uvd_to_xyz(rig: &StereoRig, joints: &JointSetUvd) -> Result<JointSetXyz> {
    joints
        .iter()
        .enumerate()
        .map(|(joint, p)| {
            if p.d > 0.0 {
                Ok(uvd_to_xyz_point(rig, *p))
            } else {
                Err(Error::NonPositiveDisparity { joint })
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(JointSetXyz)
}

/// Projects left-camera world joints into image-disparity space.
pub fn xyz_to_uvd(rig: &StereoRig, joints: &JointSetXyz) -> Result<JointSetUvd> {
    joints
        .iter()
        .enumerate()
        .map(|(joint, p)| {
            if p.z > 0.0 {
                Ok(xyz_to_uvd_point(rig, *p))
            } else {
                Err(Error::NonPositiveDepth { joint })
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(JointSetUvd)
}

/// Right-view pixel position of each joint: same row, shifted left by `d`.
pub fn project_right(joints: &JointSetUvd) -> Vec<(f64, f64)> {
    joints.iter().map(|p| (p.u - p.d, p.v)).collect()
}
