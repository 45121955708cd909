//! Stereo crop preprocessing, label normalization and crop initialization.
//!
//! The left image is cropped with the box `(u0, v0, w0, h0)` and the right
//! image with the same box shifted left by the global disparity `d0`, so the
//! hand lands in both crops. Network-space labels are then
//!
//! ```text
//! u' = (u - u0) / w0 * Wn
//! v' = (v - v0) / h0 * Hn
//! d' = (d - d0) / w0 * Wn
//! ```
//!
//! and `d'` is frequently negative.

use crate::error::{Error, Result};
use crate::geometry::{JointSetUvd, Uvd};

/// Crop box plus global disparity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropInit {
    pub u0: f64,
    pub v0: f64,
    pub w0: f64,
    pub h0: f64,
    pub d0: f64,
}

impl CropInit {
    pub const fn new(u0: f64, v0: f64, w0: f64, h0: f64, d0: f64) -> Self {
        CropInit { u0, v0, w0, h0, d0 }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u > self.u0 && u < self.u0 + self.w0 && v > self.v0 && v < self.v0 + self.h0
    }
}

/// Three-channel image, row-major with interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        ImageBuffer {
            width,
            height,
            data: vec![0.0; width * height * Self::CHANNELS],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * Self::CHANNELS {
            return Err(Error::shape(
                "ImageBuffer::from_raw",
                format!("{}x{}x3 needs {} values, got {}", width, height, width * height * 3, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite pixel value".into()));
        }
        Ok(ImageBuffer { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    fn texel(&self, x: i64, y: i64, c: usize) -> f32 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.data[(y as usize * self.width + x as usize) * 3 + c]
        }
    }

    /// Bilinear sample at a real-valued position; texels outside the image read as 0.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let mut out = [0.0f32; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.texel(xi, yi, c) * (1.0 - fx) + self.texel(xi + 1, yi, c) * fx;
            let bottom = self.texel(xi, yi + 1, c) * (1.0 - fx) + self.texel(xi + 1, yi + 1, c) * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
        out
    }

    /// Resamples the box `(x0, y0, w, h)` to `out_w x out_h`. Output pixel
    /// `(j, i)` reads the source at `(x0 + j * w / out_w, y0 + i * h / out_h)`.
    pub fn crop_resample(&self, x0: f64, y0: f64, w: f64, h: f64, out_w: usize, out_h: usize) -> ImageBuffer {
        let mut out = ImageBuffer::new(out_w, out_h);
        let sx = w / out_w as f64;
        let sy = h / out_h as f64;
        for i in 0..out_h {
            let y = y0 + i as f64 * sy;
            for j in 0..out_w {
                let x = x0 + j as f64 * sx;
                out.set_pixel(j, i, self.sample_bilinear(x, y));
            }
        }
        out
    }

    /// Rotates clockwise (as displayed, rows growing downward) about the image
    /// centre. Uncovered pixels become 0.
    pub fn rotated(&self, degrees: f64) -> ImageBuffer {
        let (cx, cy) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
        let (s, c) = degrees.to_radians().sin_cos();
        let mut out = ImageBuffer::new(self.width, self.height);
        for i in 0..self.height {
            for j in 0..self.width {
                // Inverse map: rotate the destination back by -angle.
                let dx = j as f64 - cx;
                let dy = i as f64 - cy;
                let sx = c * dx + s * dy + cx;
                let sy = -s * dx + c * dy + cy;
                out.set_pixel(j, i, self.sample_bilinear(sx, sy));
            }
        }
        out
    }
}

/// Rotates a point clockwise (as displayed) about `(cx, cy)`; matches [`ImageBuffer::rotated`].
pub fn rotate_point(u: f64, v: f64, cx: f64, cy: f64, degrees: f64) -> (f64, f64) {
    let (s, c) = degrees.to_radians().sin_cos();
    let dx = u - cx;
    let dy = v - cy;
    (c * dx - s * dy + cx, s * dx + c * dy + cy)
}

/// Per-joint labels in network pixel units.
///
/// Labels built by [`normalize_labels`] also keep, per coordinate, the
/// sub-ulp remainder that a crop larger than the network input cannot
/// represent in `f64`, so that [`denormalize`] returns the original labels
/// bit for bit. Labels from [`NormalizedLabels::new`] carry no remainder.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalizedLabels {
    joints: Vec<Uvd>,
    residual: Vec<Uvd>,
}

impl NormalizedLabels {
    pub fn new(joints: Vec<Uvd>) -> Self {
        NormalizedLabels {
            joints,
            residual: Vec::new(),
        }
    }

    pub fn joints(&self) -> &[Uvd] {
        &self.joints
    }

    /// Mutable access; drops the remainder, which no longer applies.
    pub fn joints_mut(&mut self) -> &mut Vec<Uvd> {
        self.residual.clear();
        &mut self.joints
    }

    pub fn into_joints(self) -> Vec<Uvd> {
        self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

/// Crops the left image with the box and the right image with the box shifted by `-d0`.
pub fn preprocess_pair(
    left: &ImageBuffer,
    right: &ImageBuffer,
    init: &CropInit,
    net_w: usize,
    net_h: usize,
) -> (ImageBuffer, ImageBuffer) {
    debug_assert!(net_w >= 8 && net_h >= 8);
    let l = left.crop_resample(init.u0, init.v0, init.w0, init.h0, net_w, net_h);
    let r = right.crop_resample(init.u0 - init.d0, init.v0, init.w0, init.h0, net_w, net_h);
    (l, r)
}

/// Inverse of [`denormalize`]: the closed form, nudged by a few ulps towards
/// an exact preimage, plus the remainder when none exists.
pub fn normalize_labels(gt: &JointSetUvd, init: &CropInit, net_w: usize, net_h: usize) -> NormalizedLabels {
    let (wn, hn) = (net_w as f64, net_h as f64);
    let axis = |target: f64, net: f64, size: f64, origin: f64| {
        let forward = |x: f64| to_global(x, net, size, origin);
        let x = exact_preimage(target, (target - origin) / size * net, forward);
        (x, remainder(target, forward(x)))
    };
    let mut joints = Vec::with_capacity(gt.len());
    let mut residual = Vec::with_capacity(gt.len());
    for p in gt.iter() {
        let (u, ru) = axis(p.u, wn, init.w0, init.u0);
        let (v, rv) = axis(p.v, hn, init.h0, init.v0);
        let (d, rd) = axis(p.d, wn, init.w0, init.d0);
        joints.push(Uvd { u, v, d });
        residual.push(Uvd { u: ru, v: rv, d: rd });
    }
    if residual.iter().all(|r| r.u == 0.0 && r.v == 0.0 && r.d == 0.0) {
        residual.clear();
    }
    NormalizedLabels { joints, residual }
}

fn to_global(x: f64, net: f64, size: f64, origin: f64) -> f64 {
    (x / net).mul_add(size, origin)
}

/// `target - approx` when adding it back restores `target` exactly, else 0.
fn remainder(target: f64, approx: f64) -> f64 {
    let r = target - approx;
    if r.is_finite() && approx + r == target {
        r
    } else {
        0.0
    }
}

/// Searches outward from `guess`, one ulp at a time in both directions, for
/// an `x` with `forward(x) == target`. Falls back to `guess`.
fn exact_preimage(target: f64, guess: f64, forward: impl Fn(f64) -> f64) -> f64 {
    if !guess.is_finite() {
        return guess;
    }
    let (mut up, mut down) = (guess, guess);
    for _ in 0..16 {
        if forward(up) == target {
            return up;
        }
        if forward(down) == target {
            return down;
        }
        up = up.next_up();
        down = down.next_down();
    }
    guess
}

pub fn denormalize(pred: &NormalizedLabels, init: &CropInit, net_w: usize, net_h: usize) -> JointSetUvd {
    let (wn, hn) = (net_w as f64, net_h as f64);
    let zero = Uvd::new(0.0, 0.0, 0.0);
    JointSetUvd(
        pred.joints
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let r = pred.residual.get(j).copied().unwrap_or(zero);
                Uvd {
                    u: to_global(p.u, wn, init.w0, init.u0) + r.u,
                    v: to_global(p.v, hn, init.h0, init.v0) + r.v,
                    d: to_global(p.d, wn, init.w0, init.d0) + r.d,
                }
            })
            .collect(),
    )
}

/// Square box around the joints' 2D positions, padded by `margin` of its side
/// on every edge; `d0` is the mean joint disparity.
pub fn init_from_joints(joints: &JointSetUvd, margin: f64) -> Result<CropInit> {
    assert!(!joints.is_empty(), "init_from_joints needs at least one joint");
    assert!(margin >= 0.0, "margin must be non-negative");
    let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut dsum = 0.0;
    for p in joints.iter() {
        umin = umin.min(p.u);
        umax = umax.max(p.u);
        vmin = vmin.min(p.v);
        vmax = vmax.max(p.v);
        dsum += p.d;
    }
    let side = (umax - umin).max(vmax - vmin);
    if !(side > 0.0) {
        return Err(Error::DegenerateBox);
    }
    let cu = 0.5 * (umin + umax);
    let cv = 0.5 * (vmin + vmax);
    let grown = side * (1.0 + 2.0 * margin);
    Ok(CropInit {
        u0: cu - 0.5 * grown,
        v0: cv - 0.5 * grown,
        w0: grown,
        h0: grown,
        d0: dsum / joints.len() as f64,
    })
}
