use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::StereoRig;
use crate::roi::ImageBuffer;

/// Segment `a`-`b` swept by a sphere of `radius`; `a == b` gives a sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: [f64; 3], b: [f64; 3], radius: f64) -> Self {
        Capsule { a, b, radius }
    }

    /// Outward unit normal at surface point `p`.
    fn normal(&self, p: [f64; 3]) -> [f64; 3] {
        let ba = sub(self.b, self.a);
        let pa = sub(p, self.a);
        let baba = dot(ba, ba);
        let h = if baba > 0.0 { (dot(pa, ba) / baba).clamp(0.0, 1.0) } else { 0.0 };
        let n = sub(pa, scale(ba, h));
        scale(n, 1.0 / dot(n, n).sqrt())
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn scale(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn sphere_hit(ro: [f64; 3], rd: [f64; 3], c: [f64; 3], r: f64) -> Option<f64> {
    let oc = sub(ro, c);
    let b = dot(rd, oc);
    let h = b * b - (dot(oc, oc) - r * r);
    (h >= 0.0).then(|| -b - h.sqrt()).filter(|t| *t > 0.0)
}

/// Nearest positive ray parameter where the ray `ro + t * rd` (`rd` unit
/// length) enters the capsule.
pub fn intersect_capsule(ro: [f64; 3], rd: [f64; 3], cap: &Capsule) -> Option<f64> {
    let ba = sub(cap.b, cap.a);
    let baba = dot(ba, ba);
    if baba < 1e-18 {
        return sphere_hit(ro, rd, cap.a, cap.radius);
    }
    let oa = sub(ro, cap.a);
    let bard = dot(ba, rd);
    let baoa = dot(ba, oa);
    let rdoa = dot(rd, oa);
    let oaoa = dot(oa, oa);
    let a = baba - bard * bard;
    let b = baba * rdoa - baoa * bard;
    let c = baba * oaoa - baoa * baoa - cap.radius * cap.radius * baba;
    let h = b * b - a * c;
    // the capsule is the union of a finite cylinder and two end spheres, so
    // its entry point is the earliest entry into any of the three
    let body = (a > 1e-12 && h >= 0.0)
        .then(|| (-b - h.sqrt()) / a)
        .filter(|&t| t > 0.0 && (0.0..=baba).contains(&(baoa + t * bard)));
    [body, sphere_hit(ro, rd, cap.a, cap.radius), sphere_hit(ro, rd, cap.b, cap.radius)]
        .into_iter()
        .flatten()
        .min_by(f64::total_cmp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum View {
    Left,
    /// Camera centre at `+baseline` along `x`, same intrinsics.
    Right,
}

/// Lambertian material and light.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shading {
    pub albedo: [f64; 3],
    /// Unit vector from the surface towards the light.
    pub light: [f64; 3],
    pub ambient: f64,
}

/// Value quantized to the 8-bit grid used on disk.
pub(crate) fn quantize(v: f64) -> f32 {
    let q = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    q as f32 / 255.0
}

/// Ray casts `capsules` in one view over `background`. Returns the image and
/// a per-pixel hand mask (row-major).
pub fn render_view(
    capsules: &[Capsule],
    rig: &StereoRig,
    view: View,
    background: &ImageBuffer,
    shading: &Shading,
) -> (ImageBuffer, Vec<bool>) {
    let (w, h) = (rig.width, rig.height);
    let origin = match view {
        View::Left => [0.0; 3],
        View::Right => [rig.baseline_mm, 0.0, 0.0],
    };
    let mut out = background.clone();
    let mut mask = vec![false; w * h];
    let Some((x0, x1, y0, y1)) = screen_bounds(capsules, rig, origin) else {
        return (out, mask);
    };
    for py in y0..=y1 {
        for px in x0..=x1 {
            let d = [(px as f64 - rig.tx) / rig.fx, (py as f64 - rig.ty) / rig.fy, 1.0];
            let rd = scale(d, 1.0 / dot(d, d).sqrt());
            let mut best: Option<(f64, usize)> = None;
            for (i, c) in capsules.iter().enumerate() {
                if let Some(t) = intersect_capsule(origin, rd, c) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, i));
                    }
                }
            }
            if let Some((t, i)) = best {
                let p = [origin[0] + t * rd[0], origin[1] + t * rd[1], origin[2] + t * rd[2]];
                let n = capsules[i].normal(p);
                let lambert = dot(n, shading.light).max(0.0);
                let k = shading.ambient + (1.0 - shading.ambient) * lambert;
                let rgb = [
                    quantize(shading.albedo[0] * k),
                    quantize(shading.albedo[1] * k),
                    quantize(shading.albedo[2] * k),
                ];
                out.set_pixel(px, py, rgb);
                mask[py * w + px] = true;
            }
        }
    }
    (out, mask)
}

/// Pixel rectangle covering every capsule's projection, clipped to the image.
fn screen_bounds(capsules: &[Capsule], rig: &StereoRig, origin: [f64; 3]) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (rig.width as f64, rig.height as f64);
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for c in capsules {
        for p in [c.a, c.b] {
            let q = sub(p, origin);
            if q[2] <= c.radius * 1.01 {
                return Some((0, rig.width - 1, 0, rig.height - 1));
            }
            let u = q[0] * rig.fx / q[2] + rig.tx;
            let v = q[1] * rig.fy / q[2] + rig.ty;
            // silhouette radius of a sphere at depth z, with slack for perspective
            let ru = c.radius * rig.fx / (q[2] - c.radius) + 2.0;
            let rv = c.radius * rig.fy / (q[2] - c.radius) + 2.0;
            b = [b[0].min(u - ru), b[1].max(u + ru), b[2].min(v - rv), b[3].max(v + rv)];
        }
    }
    if b[1] < 0.0 || b[3] < 0.0 || b[0] > w - 1.0 || b[2] > h - 1.0 || capsules.is_empty() {
        return None;
    }
    let x0 = b[0].floor().max(0.0) as usize;
    let x1 = (b[1].ceil().min(w - 1.0)) as usize;
    let y0 = b[2].floor().max(0.0) as usize;
    let y1 = (b[3].ceil().min(h - 1.0)) as usize;
    Some((x0, x1, y0, y1))
}

/// Value-noise texture on a fronto-parallel plane seen by both cameras: the
/// right view is the left view's texture shifted by `disparity` pixels.
pub fn procedural_background(seed: u64, width: usize, height: usize, disparity: usize) -> (ImageBuffer, ImageBuffer) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tex_w = width + disparity;
    let octaves: Vec<(f64, f64, usize, Vec<[f64; 3]>)> = [(48.0, 0.5), (16.0, 0.3), (5.0, 0.2)]
        .iter()
        .map(|&(cell, weight)| {
            let gw = (tex_w as f64 / cell).ceil() as usize + 2;
            let gh = (height as f64 / cell).ceil() as usize + 2;
            let lattice = (0..gw * gh).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            (cell, weight, gw, lattice)
        })
        .collect();
    let tint: [f64; 3] = [rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0)];
    let mut tex = vec![[0.0f32; 3]; tex_w * height];
    for y in 0..height {
        for x in 0..tex_w {
            let mut c = [0.0; 3];
            for (cell, weight, gw, lattice) in &octaves {
                let (fx, fy) = (x as f64 / cell, y as f64 / cell);
                let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
                let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
                let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
                let at = |i: usize, j: usize| lattice[j * gw + i];
                for k in 0..3 {
                    let top = at(ix, iy)[k] * (1.0 - tx) + at(ix + 1, iy)[k] * tx;
                    let bot = at(ix, iy + 1)[k] * (1.0 - tx) + at(ix + 1, iy + 1)[k] * tx;
                    c[k] += weight * (top * (1.0 - ty) + bot * ty);
                }
            }
            tex[y * tex_w + x] = [quantize(c[0] * tint[0]), quantize(c[1] * tint[1]), quantize(c[2] * tint[2])];
        }
    }
    let mut left = ImageBuffer::new(width, height);
    let mut right = ImageBuffer::new(width, height);
    for y in 0..height {
        for x in 0..width {
            left.set_pixel(x, y, tex[y * tex_w + x]);
            right.set_pixel(x, y, tex[y * tex_w + x + disparity]);
        }
    }
    (left, right)
}
