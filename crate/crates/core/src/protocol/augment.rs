//! Crop-initialization jitter per training stage and evaluation protocol.
//!
//! | augmentation            | 2D/Frame | 2D/Track | 3D/Frame | 3D/Track |
//! |-------------------------|----------|----------|----------|----------|
//! | rotate ±20° (clockwise) | yes      | yes      | no       | no       |
//! | shift (u0, v0) ±20%     | no       | yes      | no       | no       |
//! | shift d0 ±10%           | no       | no       | no       | yes      |
//! | scale (w0, h0) ±20%     | yes      | yes      | yes      | yes      |

use rand::Rng;

use crate::error::{Error, Result};
use crate::roi::CropInit;

pub const ROTATE_DEG: f64 = 20.0;
pub const SHIFT_UV_FRACTION: f64 = 0.2;
pub const SHIFT_D0_FRACTION: f64 = 0.1;
pub const SCALE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Stage {
    /// Heatmap loss over the trunk and the 2D head.
    #[serde(rename = "2d")]
    Stage2D,
    /// Disparity loss over the disparity head, trunk frozen.
    #[serde(rename = "3d")]
    Stage3D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Every frame's crop comes from ground truth.
    Frame,
    /// Only the first frame's crop comes from ground truth.
    Track,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "2d" => Ok(Stage::Stage2D),
            "3d" => Ok(Stage::Stage3D),
            _ => Err(Error::InvalidConfig(format!("unknown stage `{s}` (expected 2d or 3d)"))),
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "frame" => Ok(Protocol::Frame),
            "track" => Ok(Protocol::Track),
            _ => Err(Error::InvalidConfig(format!("unknown protocol `{s}` (expected frame or track)"))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Frame => "frame",
            Protocol::Track => "track",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Augmentation {
    Rotate,
    ShiftUv,
    ShiftD0,
    Scale,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] = [
        Augmentation::Rotate,
        Augmentation::ShiftUv,
        Augmentation::ShiftD0,
        Augmentation::Scale,
    ];
}

/// Which jitters may be drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugPolicy {
    pub stage: Stage,
    pub protocol: Protocol,
    pub rotate: bool,
    pub shift_uv: bool,
    pub shift_d0: bool,
    pub scale: bool,
}

impl AugPolicy {
    /// The table in the module docs.
    pub fn new(stage: Stage, protocol: Protocol) -> Self {
        let two_d = stage == Stage::Stage2D;
        let track = protocol == Protocol::Track;
        AugPolicy {
            stage,
            protocol,
            rotate: two_d,
            shift_uv: two_d && track,
            shift_d0: !two_d && track,
            scale: true,
        }
    }

    /// No jitter at all.
    pub fn disabled(stage: Stage, protocol: Protocol) -> Self {
        AugPolicy {
            stage,
            protocol,
            rotate: false,
            shift_uv: false,
            shift_d0: false,
            scale: false,
        }
    }

    pub fn allows(&self, a: Augmentation) -> bool {
        match a {
            Augmentation::Rotate => self.rotate,
            Augmentation::ShiftUv => self.shift_uv,
            Augmentation::ShiftD0 => self.shift_d0,
            Augmentation::Scale => self.scale,
        }
    }

    /// Overrides one switch. Rotation breaks the rectified-pair geometry the
    /// disparity head relies on, so it cannot be enabled in the 3D stage.
    pub fn with(mut self, a: Augmentation, on: bool) -> Result<Self> {
        match a {
            Augmentation::Rotate => self.rotate = on,
            Augmentation::ShiftUv => self.shift_uv = on,
            Augmentation::ShiftD0 => self.shift_d0 = on,
            Augmentation::Scale => self.scale = on,
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotate && self.stage == Stage::Stage3D {
            return Err(Error::IllegalAugmentation(
                "rotation is not allowed in the 3D stage: it breaks the stereo row alignment".into(),
            ));
        }
        Ok(())
    }
}

/// Drawn jitters; fractions are relative to `w0`, `h0` and `d0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jitter {
    pub rotate_deg: f64,
    pub shift_u: f64,
    pub shift_v: f64,
    pub shift_d0: f64,
    pub scale: f64,
}

impl Jitter {
    /// Crop init after shifting and scaling; the top-left corner stays put
    /// under scaling.
    pub fn apply(&self, init: &CropInit) -> CropInit {
        CropInit {
            u0: init.u0 + self.shift_u * init.w0,
            v0: init.v0 + self.shift_v * init.h0,
            w0: init.w0 * (1.0 + self.scale),
            h0: init.h0 * (1.0 + self.scale),
            d0: init.d0 * (1.0 + self.shift_d0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugDraw {
    pub init: CropInit,
    /// Clockwise rotation of the left crop and its 2D labels about the crop centre.
    pub rotation_deg: Option<f64>,
    pub jitter: Jitter,
}

/// Draws the jitters the policy allows, in a fixed order so the random stream
/// is the same for every policy.
pub fn augment<R: Rng>(init: &CropInit, policy: &AugPolicy, rng: &mut R) -> Result<AugDraw> {
    policy.validate()?;
    let mut draw = |on: bool, half: f64| {
        let x: f64 = rng.gen_range(-half..=half);
        if on {
            x
        } else {
            0.0
        }
    };
    let jitter = Jitter {
        rotate_deg: draw(policy.rotate, ROTATE_DEG),
        shift_u: draw(policy.shift_uv, SHIFT_UV_FRACTION),
        shift_v: draw(policy.shift_uv, SHIFT_UV_FRACTION),
        shift_d0: draw(policy.shift_d0, SHIFT_D0_FRACTION),
        scale: draw(policy.scale, SCALE_FRACTION),
    };
    Ok(AugDraw {
        init: jitter.apply(init),
        rotation_deg: policy.rotate.then_some(jitter.rotate_deg),
        jitter,
    })
}
