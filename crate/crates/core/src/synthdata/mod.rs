//! Procedural hands rendered into a rectified stereo rig.
//!
//! A hand is a 21-joint skeleton posed by per-finger flexion, placed in the
//! left camera frame, and drawn as capsules by per-pixel ray casting in both
//! views over a procedural (or supplied) background pair.

mod io;
mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use io::{read_dataset, read_ppm, write_dataset, write_ppm, ANNOTATIONS_FILE, RIG_FILE};
pub use render::{intersect_capsule, procedural_background, render_view, Capsule, Shading, View};

use crate::error::{Error, Result};
use crate::geometry::{xyz_to_uvd, JointSetUvd, JointSetXyz, StereoRig, Xyz, NUM_JOINTS};
use crate::roi::ImageBuffer;

/// Wrist plus MCP/PIP/DIP/TIP of thumb, index, middle, ring and pinky.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "wrist", "thumb_mcp", "thumb_pip", "thumb_dip", "thumb_tip", "index_mcp", "index_pip", "index_dip", "index_tip",
    "middle_mcp", "middle_pip", "middle_dip", "middle_tip", "ring_mcp", "ring_pip", "ring_dip", "ring_tip",
    "pinky_mcp", "pinky_pip", "pinky_dip", "pinky_tip",
];

/// Parent of each joint; the wrist is the root.
pub const PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0), Some(1), Some(2), Some(3),
    Some(0), Some(5), Some(6), Some(7),
    Some(0), Some(9), Some(10), Some(11),
    Some(0), Some(13), Some(14), Some(15),
    Some(0), Some(17), Some(18), Some(19),
];

/// Extra palm capsules between joints that are not parent and child.
const PALM_LINKS: [(usize, usize, f64); 4] = [(5, 9, 11.0), (9, 13, 11.0), (13, 17, 10.0), (1, 5, 11.0)];

/// Rest-pose hand in its own frame: `x` across the palm, `y` from the wrist
/// towards the fingers, `z` out of the back of the hand. Millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct HandSkeleton {
    /// Base joint of each finger (thumb first) relative to the wrist.
    pub finger_base: [[f64; 2]; 5],
    /// In-plane pointing angle of each finger, radians from `+y` towards `+x`.
    pub finger_angle: [f64; 5],
    /// Three phalanx lengths per finger.
    pub phalanx: [[f64; 3]; 5],
    /// Capsule radius of the bone ending at each joint (index 0 unused).
    pub radius: [f64; NUM_JOINTS],
}

impl Default for HandSkeleton {
    fn default() -> Self {
        HandSkeleton {
            finger_base: [[-30.0, 25.0], [-25.0, 85.0], [-5.0, 90.0], [15.0, 85.0], [33.0, 75.0]],
            finger_angle: [-0.9, -0.12, 0.0, 0.12, 0.25],
            phalanx: [
                [35.0, 30.0, 25.0],
                [40.0, 25.0, 20.0],
                [45.0, 28.0, 22.0],
                [42.0, 27.0, 21.0],
                [33.0, 20.0, 18.0],
            ],
            radius: [
                0.0, 13.0, 11.0, 9.0, 8.0, 12.0, 9.0, 8.0, 7.0, 12.0, 9.0, 8.0, 7.0, 12.0, 9.0, 8.0, 7.0, 11.0, 8.0, 7.0,
                6.5,
            ],
        }
    }
}

impl HandSkeleton {
    pub fn validate(&self) -> Result<()> {
        let ok = self.phalanx.iter().flatten().all(|&l| l > 0.0)
            && self.radius[1..].iter().all(|&r| r > 0.0)
            && self.finger_base.iter().all(|b| b[0].hypot(b[1]) > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("hand skeleton needs positive bone lengths and radii".into()))
        }
    }

    /// Joint positions in the hand frame for the given flexion and spread.
    pub fn local_joints(&self, flexion: &[[f64; 3]; 5], spread: &[f64; 5]) -> [[f64; 3]; NUM_JOINTS] {
        let mut out = [[0.0; 3]; NUM_JOINTS];
        for f in 0..5 {
            let base = 1 + 4 * f;
            let [bx, by] = self.finger_base[f];
            out[base] = [bx, by, 0.0];
            let phi = self.finger_angle[f] + spread[f];
            let dir = [phi.sin(), phi.cos()];
            let mut theta = 0.0;
            for k in 0..3 {
                theta += flexion[f][k];
                let len = self.phalanx[f][k];
                let prev = out[base + k];
                // curl the segment out of the palm plane towards the palm side
                out[base + k + 1] = [
                    prev[0] + len * theta.cos() * dir[0],
                    prev[1] + len * theta.cos() * dir[1],
                    prev[2] - len * theta.sin(),
                ];
            }
        }
        out
    }
}

/// Sampling ranges for [`sample_scene`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SceneLimits {
    /// Wrist depth range, millimetres.
    pub depth_mm: (f64, f64),
    /// Flexion range of the three joints of each finger, radians.
    pub flexion: [(f64, f64); 3],
    /// Per-finger spread jitter, radians (symmetric).
    pub spread: f64,
    /// Roll about the optical axis, radians (symmetric).
    pub roll: f64,
    /// Pitch and yaw out of the image plane, radians (symmetric).
    pub tilt: f64,
    pub hand_scale: (f64, f64),
    /// Wrist placement as a fraction of the image, `(u_min, u_max, v_min, v_max)`.
    pub wrist_region: (f64, f64, f64, f64),
    /// Background disparity range in pixels.
    pub background_disparity: (f64, f64),
}

impl Default for SceneLimits {
    fn default() -> Self {
        SceneLimits {
            depth_mm: (300.0, 900.0),
            flexion: [(-0.2, 1.3), (0.0, 1.5), (0.0, 1.1)],
            spread: 0.12,
            roll: 0.6,
            tilt: 0.45,
            hand_scale: (0.55, 0.8),
            wrist_region: (0.2, 0.8, 0.45, 0.9),
            background_disparity: (4.0, 20.0),
        }
    }
}

impl SceneLimits {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        let ok = ordered(self.depth_mm)
            && self.depth_mm.0 > 0.0
            && self.flexion.iter().all(|&r| ordered(r))
            && ordered(self.hand_scale)
            && self.hand_scale.0 > 0.0
            && ordered((self.wrist_region.0, self.wrist_region.1))
            && ordered((self.wrist_region.2, self.wrist_region.3))
            && ordered(self.background_disparity)
            && self.background_disparity.0 >= 0.0
            && [self.spread, self.roll, self.tilt].iter().all(|v| v.is_finite() && *v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("scene limits must be finite, ordered and non-negative".into()))
        }
    }

    /// Limits with every finger joint fixed straight.
    pub fn flat_hand(mut self) -> Self {
        self.flexion = [(0.0, 0.0); 3];
        self.spread = 0.0;
        self
    }
}

/// One drawn scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    /// Wrist position in the left camera frame, millimetres.
    pub translation: [f64; 3],
    /// Roll (optical axis), pitch (x), yaw (y), radians.
    pub rotation: [f64; 3],
    pub hand_scale: f64,
    pub flexion: [[f64; 3]; 5],
    pub spread: [f64; 5],
    pub albedo: [f64; 3],
    /// Unit vector from the surface towards the light.
    pub light: [f64; 3],
    pub background: u64,
    pub background_disparity: f64,
    pub seed: u64,
}

fn sym(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.gen_range(-half..=half)
    } else {
        0.0
    }
}

fn range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Deterministic scene draw; the wrist lands in the configured depth range
/// and image region of the left camera.
pub fn sample_scene(seed: u64, limits: &SceneLimits, rig: &StereoRig) -> SceneParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = range(&mut rng, limits.depth_mm);
    let (u0, u1, v0, v1) = limits.wrist_region;
    let u = range(&mut rng, (u0, u1)) * rig.width as f64;
    let v = range(&mut rng, (v0, v1)) * rig.height as f64;
    let translation = [(u - rig.tx) / rig.fx * z, (v - rig.ty) / rig.fy * z, z];
    let rotation = [sym(&mut rng, limits.roll), sym(&mut rng, limits.tilt), sym(&mut rng, limits.tilt)];
    let hand_scale = range(&mut rng, limits.hand_scale);
    let mut flexion = [[0.0; 3]; 5];
    for finger in &mut flexion {
        for (k, a) in finger.iter_mut().enumerate() {
            *a = range(&mut rng, limits.flexion[k]);
        }
    }
    let mut spread = [0.0; 5];
    for s in &mut spread {
        *s = sym(&mut rng, limits.spread);
    }
    let r = rng.gen_range(0.45..0.95);
    let g = r * rng.gen_range(0.6..0.85);
    let b = g * rng.gen_range(0.65..0.95);
    let light = normalize3([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.6..-0.6)]);
    let background = rng.gen();
    let background_disparity = range(&mut rng, limits.background_disparity).round();
    SceneParams {
        translation,
        rotation,
        hand_scale,
        flexion,
        spread,
        albedo: [r, g, b],
        light,
        background,
        background_disparity,
        seed,
    }
}

type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn rotation_matrix(rot: [f64; 3]) -> Mat3 {
    let (sr, cr) = rot[0].sin_cos();
    let (sp, cp) = rot[1].sin_cos();
    let (sy, cy) = rot[2].sin_cos();
    let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    // hand frame to camera: fingers point up the image, back of hand faces the camera
    let base = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
    mat_mul(&mat_mul(&rz, &mat_mul(&rx, &ry)), &base)
}

/// A hand posed in the left camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedHand {
    pub joints: JointSetXyz,
    pub capsules: Vec<Capsule>,
}

pub fn pose_hand(scene: &SceneParams, skeleton: &HandSkeleton) -> PosedHand {
    let local = skeleton.local_joints(&scene.flexion, &scene.spread);
    let r = rotation_matrix(scene.rotation);
    let t = scene.translation;
    let s = scene.hand_scale;
    let world: Vec<[f64; 3]> = local
        .iter()
        .map(|p| {
            let mut q = t;
            for (i, qi) in q.iter_mut().enumerate() {
                *qi += s * (r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]);
            }
            q
        })
        .collect();
    let mut capsules = Vec::with_capacity(NUM_JOINTS - 1 + PALM_LINKS.len());
    for (j, parent) in PARENTS.iter().enumerate() {
        if let Some(p) = parent {
            capsules.push(Capsule::new(world[*p], world[j], s * skeleton.radius[j]));
        }
    }
    for (a, b, radius) in PALM_LINKS {
        capsules.push(Capsule::new(world[a], world[b], s * radius));
    }
    PosedHand {
        joints: JointSetXyz(world.iter().map(|p| Xyz::new(p[0], p[1], p[2])).collect()),
        capsules,
    }
}

/// A rendered stereo pair with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSample {
    pub id: u64,
    pub left: ImageBuffer,
    pub right: ImageBuffer,
    pub gt: JointSetUvd,
    pub rig: StereoRig,
}

/// Renders both views of `scene` over `background` (left, right).
pub fn render_pair(
    scene: &SceneParams,
    skeleton: &HandSkeleton,
    rig: &StereoRig,
    background: (&ImageBuffer, &ImageBuffer),
    id: u64,
) -> Result<StereoSample> {
    for bg in [background.0, background.1] {
        if bg.width() != rig.width || bg.height() != rig.height {
            return Err(Error::InvalidConfig(format!(
                "background {}x{} does not match the {}x{} rig",
                bg.width(),
                bg.height(),
                rig.width,
                rig.height
            )));
        }
    }
    let hand = pose_hand(scene, skeleton);
    let gt = xyz_to_uvd(rig, &hand.joints)?;
    labels_in_frustum(&gt, rig)?;
    let shading = Shading {
        albedo: scene.albedo,
        light: scene.light,
        ambient: 0.3,
    };
    let left = render_view(&hand.capsules, rig, View::Left, background.0, &shading).0;
    let right = render_view(&hand.capsules, rig, View::Right, background.1, &shading).0;
    Ok(StereoSample {
        id,
        left,
        right,
        gt,
        rig: *rig,
    })
}

/// Background source for the generator.
#[derive(Debug, Clone, Default)]
pub enum Backgrounds {
    /// Value noise on a fronto-parallel plane.
    #[default]
    Procedural,
    /// User-supplied `(left, right)` pairs, chosen by the scene's selector.
    Pairs(Vec<(ImageBuffer, ImageBuffer)>),
}

/// Dataset generator settings.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    pub first_id: u64,
    pub rig: StereoRig,
    pub limits: SceneLimits,
    pub skeleton: HandSkeleton,
    pub backgrounds: Backgrounds,
    /// Scene redraws per sample before giving up on a hand that leaves the frustum.
    pub max_attempts: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 100,
            seed: 0,
            first_id: 0,
            rig: StereoRig::default(),
            limits: SceneLimits::default(),
            skeleton: HandSkeleton::default(),
            backgrounds: Backgrounds::Procedural,
            max_attempts: 200,
        }
    }
}

/// SplitMix64 finalizer, used to derive independent per-sample seeds.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        self.limits.validate()?;
        self.skeleton.validate()?;
        if let Backgrounds::Pairs(pairs) = &self.backgrounds {
            if pairs.is_empty() {
                return Err(Error::InvalidConfig("background pair list is empty".into()));
            }
        }
        Ok(())
    }

    /// Background pair for `scene`.
    pub fn background(&self, scene: &SceneParams) -> (ImageBuffer, ImageBuffer) {
        match &self.backgrounds {
            Backgrounds::Procedural => {
                procedural_background(scene.background, self.rig.width, self.rig.height, scene.background_disparity as usize)
            }
            Backgrounds::Pairs(pairs) => pairs[(scene.background % pairs.len() as u64) as usize].clone(),
        }
    }

    /// Renders an explicit scene with this generator's rig, skeleton and backgrounds.
    pub fn render_scene(&self, scene: &SceneParams, id: u64) -> Result<StereoSample> {
        let (bl, br) = self.background(scene);
        render_pair(scene, &self.skeleton, &self.rig, (&bl, &br), id)
    }

    /// First in-frustum scene for `id`, redrawing on frustum failures.
    pub fn scene_for(&self, id: u64) -> Result<SceneParams> {
        let mut last = None;
        for attempt in 0..self.max_attempts.max(1) {
            let seed = mix_seed(mix_seed(self.seed, id), attempt as u64);
            let scene = sample_scene(seed, &self.limits, &self.rig);
            match frustum_check(&scene, &self.skeleton, &self.rig) {
                Ok(()) => return Ok(scene),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    pub fn sample(&self, id: u64) -> Result<StereoSample> {
        let scene = self.scene_for(id)?;
        self.render_scene(&scene, id)
    }

    /// Renders `count` samples in parallel on the current rayon pool; the
    /// result depends only on the configuration.
    pub fn generate(&self) -> Result<Vec<StereoSample>> {
        self.validate()?;
        (0..self.count as u64)
            .into_par_iter()
            .map(|i| self.sample(self.first_id + i))
            .collect()
    }
}

/// Checks that every joint projects into both images.
pub fn frustum_check(scene: &SceneParams, skeleton: &HandSkeleton, rig: &StereoRig) -> Result<()> {
    let gt = xyz_to_uvd(rig, &pose_hand(scene, skeleton).joints)?;
    labels_in_frustum(&gt, rig)
}

fn labels_in_frustum(gt: &JointSetUvd, rig: &StereoRig) -> Result<()> {
    let (w, h) = (rig.width as f64, rig.height as f64);
    let inside = |u: f64, v: f64| (0.0..=w - 1.0).contains(&u) && (0.0..=h - 1.0).contains(&v);
    for (joint, p) in gt.iter().enumerate() {
        if !inside(p.u, p.v) {
            return Err(Error::HandOutOfFrustum { joint, view: "left" });
        }
        if !inside(p.u - p.d, p.v) {
            return Err(Error::HandOutOfFrustum { joint, view: "right" });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_right;

    #[test]
    fn same_seed_same_scene() {
        let rig = StereoRig::default();
        let l = SceneLimits::default();
        assert_eq!(sample_scene(42, &l, &rig), sample_scene(42, &l, &rig));
        assert_ne!(sample_scene(42, &l, &rig), sample_scene(43, &l, &rig));
    }

    #[test]
    fn draws_respect_limits() {
        let rig = StereoRig::default();
        let l = SceneLimits::default();
        for seed in 0..1000 {
            let s = sample_scene(seed, &l, &rig);
            assert!(s.translation[2] >= l.depth_mm.0 && s.translation[2] <= l.depth_mm.1);
            for finger in &s.flexion {
                for (k, a) in finger.iter().enumerate() {
                    assert!(*a >= l.flexion[k].0 && *a <= l.flexion[k].1);
                }
            }
            let n: f64 = s.light.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
            assert!(s.albedo.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn flat_hand_is_planar() {
        let rig = StereoRig::default();
        let limits = SceneLimits::default().flat_hand();
        for seed in 0..20 {
            let scene = sample_scene(seed, &limits, &rig);
            let hand = pose_hand(&scene, &HandSkeleton::default());
            let p: Vec<[f64; 3]> = hand.joints.iter().map(|q| [q.x, q.y, q.z]).collect();
            let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            let (e1, e2) = (sub(p[5], p[0]), sub(p[17], p[0]));
            let n = normalize3([
                e1[1] * e2[2] - e1[2] * e2[1],
                e1[2] * e2[0] - e1[0] * e2[2],
                e1[0] * e2[1] - e1[1] * e2[0],
            ]);
            for q in &p {
                let d = sub(*q, p[0]);
                assert!((d[0] * n[0] + d[1] * n[1] + d[2] * n[2]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rendered_labels_satisfy_epipolar_and_depth() {
        let cfg = SynthConfig {
            count: 4,
            seed: 5,
            ..SynthConfig::default()
        };
        for s in cfg.generate().unwrap() {
            let scene = cfg.scene_for(s.id).unwrap();
            let hand = pose_hand(&scene, &cfg.skeleton);
            for ((p, r), x) in s.gt.iter().zip(project_right(&s.gt)).zip(hand.joints.iter()) {
                assert!((r.0 - (p.u - p.d)).abs() < 1e-9 && r.1 == p.v);
                assert_eq!(p.d, s.rig.fx * s.rig.baseline_mm / x.z);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_thread_independent() {
        let cfg = SynthConfig {
            count: 3,
            seed: 11,
            ..SynthConfig::default()
        };
        let a = cfg.generate().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| cfg.generate()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_frustum_is_reported() {
        let rig = StereoRig::default();
        let mut scene = sample_scene(1, &SceneLimits::default(), &rig);
        scene.translation[0] += 2000.0;
        let bg = ImageBuffer::new(rig.width, rig.height);
        let err = render_pair(&scene, &HandSkeleton::default(), &rig, (&bg, &bg), 0).unwrap_err();
        assert!(matches!(err, Error::HandOutOfFrustum { .. }));
    }

    #[test]
    fn disparity_coverage() {
        let cfg = SynthConfig::default();
        let (lo, hi) = (
            cfg.rig.disparity_depth_product() / cfg.limits.depth_mm.1,
            cfg.rig.disparity_depth_product() / cfg.limits.depth_mm.0,
        );
        let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for id in 0..1000 {
            let scene = cfg.scene_for(id).unwrap();
            let gt = xyz_to_uvd(&cfg.rig, &pose_hand(&scene, &cfg.skeleton).joints).unwrap();
            for p in gt.iter() {
                dmin = dmin.min(p.d);
                dmax = dmax.max(p.d);
            }
        }
        let margin = 0.1 * (hi - lo);
        assert!(dmin <= lo + margin && dmax >= hi - margin, "[{dmin}, {dmax}] vs [{lo}, {hi}]");
    }
}
