//! Heatmap targets, 2D decoding, sparse disparity sampling, the two losses and
//! the full network forward pass on a pair of crops.

use crate::diffnet::{bilinear_clamped, huber, Graph, NetConfig, Network, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::Uvd;
use crate::roi::{ImageBuffer, NormalizedLabels};

/// Per-joint Gaussian maps on a `(grid_h, grid_w)` grid of the given stride.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapTarget {
    pub grid_h: usize,
    pub grid_w: usize,
    pub stride: f64,
    pub sigma: f64,
    pub normalized: bool,
    /// `J x grid_h x grid_w`, row-major.
    pub data: Vec<f64>,
    /// Per-joint scale applied to the raw Gaussian.
    pub scales: Vec<f64>,
}

impl HeatmapTarget {
    pub fn num_joints(&self) -> usize {
        self.scales.len()
    }

    pub fn joint(&self, j: usize) -> &[f64] {
        let n = self.grid_h * self.grid_w;
        &self.data[j * n..(j + 1) * n]
    }

    pub fn to_tensor<T: crate::diffnet::Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f64(v)).collect();
        Tensor::from_vec(&[self.num_joints(), self.grid_h, self.grid_w], data).expect("target shape")
    }
}

/// Distance (in cells) from `p` to the interval `[0, n - 1]`.
fn outside(p: f64, n: usize) -> f64 {
    if p < 0.0 {
        -p
    } else {
        (p - (n - 1) as f64).max(0.0)
    }
}

/// Builds `H_j[m, n] = A_j exp(-((n - u_j/s)^2 + (m - v_j/s)^2) / 2 sigma^2)`.
///
/// Normalized maps sum to one. Unnormalized maps have value 1 at the grid
/// cell nearest the joint when the joint lies on the grid; joints off the grid
/// keep `A_j = 1`, leaving only the Gaussian tail.
pub fn make_heatmap_target(
    gt: &NormalizedLabels,
    grid_h: usize,
    grid_w: usize,
    stride: f64,
    sigma: f64,
    normalized: bool,
) -> Result<HeatmapTarget> {
    if !(sigma > 0.0) || grid_h == 0 || grid_w == 0 || !(stride > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "heatmap target needs sigma > 0 and a non-empty grid (sigma={sigma}, grid {grid_h}x{grid_w})"
        )));
    }
    let cells = grid_h * grid_w;
    let mut data = vec![0.0; gt.len() * cells];
    let mut scales = Vec::with_capacity(gt.len());
    let two_s2 = 2.0 * sigma * sigma;
    for (j, p) in gt.joints().iter().enumerate() {
        let (cu, cv) = (p.u / stride, p.v / stride);
        let map = &mut data[j * cells..(j + 1) * cells];
        for m in 0..grid_h {
            let dv = m as f64 - cv;
            for n in 0..grid_w {
                let du = n as f64 - cu;
                map[m * grid_w + n] = (-(du * du + dv * dv) / two_s2).exp();
            }
        }
        let divisor = if normalized {
            let far = outside(cu, grid_w).hypot(outside(cv, grid_h));
            let sum: f64 = map.iter().sum();
            if far > 6.0 * sigma || !(sum > 0.0) {
                return Err(Error::EmptyHeatmap { joint: j });
            }
            sum
        } else {
            let on_grid = (-0.5..grid_w as f64 - 0.5).contains(&cu) && (-0.5..grid_h as f64 - 0.5).contains(&cv);
            if on_grid {
                let n = (cu.round() as usize).min(grid_w - 1);
                let m = (cv.round() as usize).min(grid_h - 1);
                map[m * grid_w + n]
            } else {
                1.0
            }
        };
        for v in map.iter_mut() {
            *v /= divisor;
        }
        scales.push(1.0 / divisor);
    }
    Ok(HeatmapTarget {
        grid_h,
        grid_w,
        stride,
        sigma,
        normalized,
        data,
        scales,
    })
}

/// How `(u', v')` is read off the last-stack heatmaps.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub enum Decoder {
    /// Argmax cell plus a per-axis parabola through the two neighbours.
    #[default]
    ArgmaxQuadratic,
    /// Softmax-weighted mean of cell positions with the given inverse temperature.
    SoftArgmax { beta: f64 },
}

/// Decoded `(u', v', confidence)` per joint from a `(J, H, W)` heatmap tensor.
pub fn decode_2d(heatmaps: &[f32], num_joints: usize, grid_h: usize, grid_w: usize, stride: f64, decoder: Decoder) -> Vec<(f64, f64, f64)> {
    let cells = grid_h * grid_w;
    assert_eq!(heatmaps.len(), num_joints * cells, "heatmap size");
    heatmaps
        .chunks_exact(cells)
        .map(|map| match decoder {
            Decoder::ArgmaxQuadratic => decode_argmax(map, grid_h, grid_w, stride),
            Decoder::SoftArgmax { beta } => decode_soft(map, grid_w, stride, beta),
        })
        .collect()
}

fn decode_argmax(map: &[f32], grid_h: usize, grid_w: usize, stride: f64) -> (f64, f64, f64) {
    let mut best = 0;
    for (i, &v) in map.iter().enumerate() {
        // strict comparison keeps the smallest (m, n) on ties; NaN never wins
        if v > map[best] || (map[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    let (m, n) = (best / grid_w, best % grid_w);
    let at = |m: usize, n: usize| map[m * grid_w + n] as f64;
    let peak = at(m, n);
    let refine = |lo: Option<f64>, hi: Option<f64>| match (lo, hi) {
        (Some(l), Some(r)) => {
            let curvature = l - 2.0 * peak + r;
            if curvature < 0.0 {
                (0.5 * (l - r) / curvature).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        }
        _ => 0.0,
    };
    let dn = refine((n > 0).then(|| at(m, n - 1)), (n + 1 < grid_w).then(|| at(m, n + 1)));
    let dm = refine((m > 0).then(|| at(m - 1, n)), (m + 1 < grid_h).then(|| at(m + 1, n)));
    (stride * (n as f64 + dn), stride * (m as f64 + dm), peak)
}

fn decode_soft(map: &[f32], grid_w: usize, stride: f64, beta: f64) -> (f64, f64, f64) {
    let peak = map.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let (mut z, mut su, mut sv) = (0.0, 0.0, 0.0);
    for (i, &v) in map.iter().enumerate() {
        let w = (beta * (v as f64 - peak)).exp();
        z += w;
        su += w * (i % grid_w) as f64;
        sv += w * (i / grid_w) as f64;
    }
    (stride * su / z, stride * sv / z, peak)
}

/// Single-channel disparity grid at `stride` network pixels per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub height: usize,
    pub width: usize,
    pub stride: f64,
    pub data: Vec<f64>,
}

impl DisparityMap {
    pub fn new(height: usize, width: usize, stride: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::shape(
                "DisparityMap",
                format!("{height}x{width} grid with {} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("disparity map contains non-finite values".into()));
        }
        Ok(DisparityMap {
            height,
            width,
            stride,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, stride: f64, value: f64) -> Self {
        DisparityMap {
            height,
            width,
            stride,
            data: vec![value; height * width],
        }
    }

    pub fn at(&self, m: usize, n: usize) -> f64 {
        self.data[m * self.width + n]
    }

    /// Bilinear read at network-pixel position `(u', v')`, clamped to the border.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        bilinear_clamped(&self.data, self.height, self.width, u / self.stride, v / self.stride)
    }
}

/// `d'_j` at each `(u'_j, v'_j)` query.
pub fn sample_disparity(map: &DisparityMap, queries: &[(f64, f64)]) -> Vec<f64> {
    queries.iter().map(|&(u, v)| map.sample(u, v)).collect()
}

/// Heatmap MSE summed over stacks; each stack term is averaged over joints and cells.
pub fn loss_uv(stacks: &[Vec<f64>], target: &HeatmapTarget) -> Result<f64> {
    let mut total = 0.0;
    for s in stacks {
        if s.len() != target.data.len() {
            return Err(Error::shape(
                "loss_uv",
                format!("prediction has {} values, target {}", s.len(), target.data.len()),
            ));
        }
        total += s.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s.len() as f64;
    }
    Ok(total)
}

fn check_normalized(target: &HeatmapTarget) -> Result<()> {
    for j in 0..target.num_joints() {
        let sum: f64 = target.joint(j).iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::UnnormalizedTarget { joint: j, sum });
        }
    }
    Ok(())
}

/// `(1/J) sum_j huber(d_j - sum_{m,n} H_j[m,n] D[m,n])`.
pub fn loss_d(map: &DisparityMap, gt: &NormalizedLabels, targets: &HeatmapTarget, delta: f64) -> Result<f64> {
    if targets.grid_h != map.height || targets.grid_w != map.width || targets.num_joints() != gt.len() {
        return Err(Error::shape(
            "loss_d",
            format!(
                "map {}x{}, targets {}x{}x{}, {} labels",
                map.height,
                map.width,
                targets.num_joints(),
                targets.grid_h,
                targets.grid_w,
                gt.len()
            ),
        ));
    }
    check_normalized(targets)?;
    let total: f64 = gt
        .joints()
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let expect: f64 = targets.joint(j).iter().zip(&map.data).map(|(h, d)| h * d).sum();
            huber(p.d - expect, delta)
        })
        .sum();
    Ok(total / gt.len() as f64)
}

/// Records `L_d` on a training graph. `targets` must be normalized on the
/// disparity grid.
pub fn loss_d_node<T: crate::diffnet::Scalar>(
    g: &mut Graph<T>,
    map: Var,
    gt: &NormalizedLabels,
    targets: &HeatmapTarget,
    delta: f64,
) -> Result<Var> {
    check_normalized(targets)?;
    let labels: Vec<T> = gt.joints().iter().map(|p| T::from_f64(p.d)).collect();
    g.expectation_huber(map, targets.to_tensor(), &labels, T::from_f64(delta))
}

/// Records `L_uv` on a training graph, one MSE term per stack.
pub fn loss_uv_node<T: crate::diffnet::Scalar>(g: &mut Graph<T>, stacks: &[Var], target: &HeatmapTarget) -> Result<Var> {
    let t = target.to_tensor::<T>();
    let mut terms = Vec::with_capacity(stacks.len());
    for &s in stacks {
        terms.push((g.mse_const(s, t.clone())?, T::one()));
    }
    g.weighted_sum(&terms)
}

/// `(3, H, W)` network input from a crop, centred on zero.
pub fn image_tensor<T: crate::diffnet::Scalar>(img: &ImageBuffer) -> Tensor<T> {
    let (w, h) = (img.width(), img.height());
    let mut data = vec![T::zero(); 3 * w * h];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = T::from_f64(px[c] as f64 - 0.5);
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("image tensor")
}

/// Which views feed the disparity head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewMode {
    #[default]
    Stereo,
    /// Left view only; the right features are replaced by zeros.
    Mono,
}

impl std::str::FromStr for ViewMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stereo" => Ok(ViewMode::Stereo),
            "mono" => Ok(ViewMode::Mono),
            _ => Err(Error::InvalidConfig(format!("unknown view mode `{s}` (expected mono or stereo)"))),
        }
    }
}

impl std::fmt::Display for ViewMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ViewMode::Stereo => "stereo",
            ViewMode::Mono => "mono",
        })
    }
}

/// Network output in normalized crop coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: NormalizedLabels,
    pub confidence: Vec<f64>,
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub stacks: Vec<Var>,
    pub disparity: Option<Var>,
}

/// Records the network on `g`: when requested, heatmaps from the left crop
/// and the disparity map from left/right features.
pub fn record_forward<T: crate::diffnet::Scalar>(
    g: &mut Graph<T>,
    net: &Network,
    store: &ParamStore<T>,
    left: Tensor<T>,
    right: Option<Tensor<T>>,
    mode: ViewMode,
    with_heatmaps: bool,
    with_disparity: bool,
) -> Result<ForwardNodes> {
    let cfg = net.config();
    for t in std::iter::once(&left).chain(right.as_ref()) {
        if t.shape() != [3, cfg.net_h, cfg.net_w] {
            return Err(Error::shape(
                "forward",
                format!("crop {:?}, network expects [3, {}, {}]", t.shape(), cfg.net_h, cfg.net_w),
            ));
        }
    }
    let l = g.input(left, false);
    let fl = net.features(g, store, l)?;
    let stacks = if with_heatmaps { net.heatmaps(g, store, fl)? } else { Vec::new() };
    let disparity = if with_disparity {
        let fr = match mode {
            ViewMode::Stereo => {
                let right = right.ok_or_else(|| Error::shape("forward", "stereo mode needs a right crop".to_string()))?;
                let r = g.input(right, false);
                net.features(g, store, r)?
            }
            ViewMode::Mono => {
                let zeros = Tensor::zeros(g.value(fl).shape());
                g.input(zeros, false)
            }
        };
        let flr = g.concat(fl, fr)?;
        Some(net.disparity_map(g, store, flr)?)
    } else {
        None
    };
    Ok(ForwardNodes { stacks, disparity })
}

/// Everything an inference pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub prediction: Prediction,
    /// Last-stack heatmaps, `J x H x W`.
    pub heatmaps: Vec<f32>,
    pub disparity: DisparityMap,
    /// Times the shared trunk ran.
    pub trunk_invocations: usize,
    pub macs: u64,
}

/// Trained network plus its inference settings.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub net: Network,
    pub store: ParamStore<f32>,
    pub mode: ViewMode,
    pub decoder: Decoder,
}

impl Estimator {
    pub fn new(net: Network, store: ParamStore<f32>, mode: ViewMode) -> Self {
        Estimator {
            net,
            store,
            mode,
            decoder: Decoder::default(),
        }
    }

    pub fn config(&self) -> &NetConfig {
        self.net.config()
    }

    /// `(u', v')` from the left crop's heatmaps, `d'` sampled from the
    /// disparity map at the decoded positions.
    pub fn forward(&self, left_crop: &ImageBuffer, right_crop: &ImageBuffer) -> Result<ForwardOutput> {
        let cfg = *self.config();
        let mut g = Graph::<f32>::inference();
        let right = match self.mode {
            ViewMode::Stereo => Some(image_tensor(right_crop)),
            ViewMode::Mono => None,
        };
        let nodes = record_forward(&mut g, &self.net, &self.store, image_tensor(left_crop), right, self.mode, true, true)?;
        let last = *nodes.stacks.last().expect("at least one stack");
        let (gh, gw) = cfg.heatmap_dims();
        let heat = g.value(last).data().to_vec();
        let decoded = decode_2d(&heat, cfg.num_joints, gh, gw, cfg.heatmap_stride as f64, self.decoder);
        let dnode = nodes.disparity.expect("disparity requested");
        let (dh, dw) = cfg.disparity_dims();
        let dvals = g.value(dnode).data().iter().map(|&v| v as f64).collect();
        let disparity = DisparityMap::new(dh, dw, cfg.disparity_map_stride() as f64, dvals)?;
        let labels = decoded.iter().map(|&(u, v, _)| Uvd::new(u, v, disparity.sample(u, v))).collect();
        let trunk_invocations = g.count_ops(Some("hf"), "conv2d") / self.net.features_conv_count();
        Ok(ForwardOutput {
            prediction: Prediction {
                labels: NormalizedLabels::new(labels),
                confidence: decoded.iter().map(|t| t.2).collect(),
            },
            heatmaps: heat,
            disparity,
            trunk_invocations,
            macs: g.macs(None),
        })
    }
}
