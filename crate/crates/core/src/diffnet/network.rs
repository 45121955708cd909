//! Mini stacked-hourglass with a shared trunk and a disparity head.
//!
//! ```text
//! stem    conv5x5/2 + relu                    -> stride 2   (breakpoint D2)
//! pre     residual + maxpool                  -> stride 4   (breakpoint D4)
//! stacks  hourglass, residual, 1x1 heads      -> J heatmaps at stride 4
//! h_D     maxpool to the disparity stride, 1x1 reduce, hourglass,
//!         residual, 1x1 -> single-channel disparity map
//! ```
//!
//! Parameters are named `hf.*` (shared trunk), `huv.*` (2D head) and `hd.*`
//! (disparity head); which trunk layers count as `hf` depends on the breakpoint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::geometry::NUM_JOINTS;

/// Where the shared feature trunk is split off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Breakpoint {
    /// Output of the first convolution (stride 2).
    D2,
    /// Output of the first max pool (stride 4).
    D4,
}

impl Breakpoint {
    pub fn stride(self) -> usize {
        match self {
            Breakpoint::D2 => 2,
            Breakpoint::D4 => 4,
        }
    }
}

/// Disparity map stride relative to the network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum DisparityStride {
    S4,
    S8,
}

impl DisparityStride {
    pub fn stride(self) -> usize {
        match self {
            DisparityStride::S4 => 4,
            DisparityStride::S8 => 8,
        }
    }
}

/// One of the four architecture variants `D2S4`, `D4S4`, `D2S8`, `D4S8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub breakpoint: Breakpoint,
    pub disparity_stride: DisparityStride,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::new(Breakpoint::D2, DisparityStride::S4),
        Variant::new(Breakpoint::D4, DisparityStride::S4),
        Variant::new(Breakpoint::D2, DisparityStride::S8),
        Variant::new(Breakpoint::D4, DisparityStride::S8),
    ];

    pub const fn new(breakpoint: Breakpoint, disparity_stride: DisparityStride) -> Self {
        Variant {
            breakpoint,
            disparity_stride,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "D{}S{}", self.breakpoint.stride(), self.disparity_stride.stride())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}` (expected D2S4, D4S4, D2S8 or D4S8)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub breakpoint: Breakpoint,
    pub disparity_stride: DisparityStride,
    pub num_stacks: usize,
    pub base_channels: usize,
    /// Heatmap stride `s`; fixed at 4 by the trunk.
    pub heatmap_stride: usize,
    pub net_w: usize,
    pub net_h: usize,
    pub num_joints: usize,
    /// Depth of each 2D hourglass.
    pub hourglass_depth: usize,
    /// Depth of the disparity-head hourglass.
    pub disparity_hourglass_depth: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            breakpoint: Breakpoint::D4,
            disparity_stride: DisparityStride::S4,
            num_stacks: 2,
            base_channels: 16,
            heatmap_stride: 4,
            net_w: 64,
            net_h: 64,
            num_joints: NUM_JOINTS,
            hourglass_depth: 2,
            disparity_hourglass_depth: 1,
        }
    }
}

impl NetConfig {
    pub fn with_variant(mut self, v: Variant) -> Self {
        self.breakpoint = v.breakpoint;
        self.disparity_stride = v.disparity_stride;
        self
    }

    pub fn variant(&self) -> Variant {
        Variant::new(self.breakpoint, self.disparity_stride)
    }

    pub fn disparity_map_stride(&self) -> usize {
        self.disparity_stride.stride()
    }

    /// Heatmap grid `(H, W)`.
    pub fn heatmap_dims(&self) -> (usize, usize) {
        (self.net_h / self.heatmap_stride, self.net_w / self.heatmap_stride)
    }

    /// Disparity grid `(Hd, Wd)`.
    pub fn disparity_dims(&self) -> (usize, usize) {
        let s = self.disparity_map_stride();
        (self.net_h / s, self.net_w / s)
    }

    /// Stride-2 poolings between the breakpoint and the disparity map.
    pub fn extra_downsampling(&self) -> usize {
        (self.disparity_map_stride() / self.breakpoint.stride()).trailing_zeros() as usize
    }

    /// Coarsest stride reached anywhere inside the disparity head.
    pub fn disparity_alignment(&self) -> usize {
        self.disparity_map_stride() << self.disparity_hourglass_depth
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.heatmap_stride != 4 {
            return bad(format!("heatmap stride must be 4, got {}", self.heatmap_stride));
        }
        if self.num_stacks == 0 || self.base_channels == 0 || self.num_joints == 0 {
            return bad("stacks, channels and joints must be positive".into());
        }
        if self.hourglass_depth == 0 || self.disparity_hourglass_depth == 0 {
            return bad("hourglass depths must be at least 1".into());
        }
        let trunk = self.heatmap_stride << self.hourglass_depth;
        let disp = self.disparity_alignment();
        for (name, n) in [("net_w", self.net_w), ("net_h", self.net_h)] {
            if n < 8 || n % trunk != 0 || n % disp != 0 {
                return bad(format!("{name}={n} must be >= 8 and divisible by {trunk} and {disp}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
struct Residual {
    c1: Conv,
    c2: Conv,
}

#[derive(Debug, Clone)]
enum Inner {
    Hourglass(Box<Hourglass>),
    Residual(Residual),
}

#[derive(Debug, Clone)]
struct Hourglass {
    up1: Residual,
    low1: Residual,
    inner: Inner,
    low3: Residual,
}

#[derive(Debug, Clone)]
struct Stack {
    hourglass: Hourglass,
    res: Residual,
    feat: Conv,
    heat: Conv,
    merge: Option<(Conv, Conv)>,
}

struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, gain: f64) -> Result<Conv> {
        let fan_in = (cin * k * k) as f64;
        let bound = gain * (3.0 / fan_in).sqrt();
        let n = cout * cin * k * k;
        let w: Vec<T> = (0..n).map(|_| T::from_f64(self.rng.gen_range(-bound..bound))).collect();
        let w = self.store.insert(format!("{name}.w"), Tensor::from_vec(&[cout, cin, k, k], w)?)?;
        let b = self.store.insert(format!("{name}.b"), Tensor::zeros(&[cout]))?;
        Ok(Conv {
            w,
            b,
            stride,
            pad: k / 2,
        })
    }

    fn residual(&mut self, name: &str, c: usize) -> Result<Residual> {
        Ok(Residual {
            c1: self.conv(&format!("{name}.c1"), c, c, 3, 1, 1.0)?,
            c2: self.conv(&format!("{name}.c2"), c, c, 3, 1, 0.5)?,
        })
    }

    fn hourglass(&mut self, name: &str, depth: usize, c: usize) -> Result<Hourglass> {
        let up1 = self.residual(&format!("{name}.up1"), c)?;
        let low1 = self.residual(&format!("{name}.low1"), c)?;
        let inner = if depth > 1 {
            Inner::Hourglass(Box::new(self.hourglass(&format!("{name}.inner"), depth - 1, c)?))
        } else {
            Inner::Residual(self.residual(&format!("{name}.low2"), c)?)
        };
        let low3 = self.residual(&format!("{name}.low3"), c)?;
        Ok(Hourglass { up1, low1, inner, low3 })
    }
}

/// Layer handles of the built network; values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetConfig,
    stem: Conv,
    pre: Residual,
    stacks: Vec<Stack>,
    hd_in: Conv,
    hd_hourglass: Hourglass,
    hd_res: Residual,
    hd_out: Conv,
}

/// Builds the network and initializes its parameters deterministically from `seed`.
pub fn build_network<T: Scalar>(cfg: &NetConfig, seed: u64) -> Result<(ParamStore<T>, Network)> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut b = Builder {
        store: &mut store,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let c = cfg.base_channels;
    let j = cfg.num_joints;
    let pre_group = match cfg.breakpoint {
        Breakpoint::D2 => "huv",
        Breakpoint::D4 => "hf",
    };
    let stem = b.conv("hf.stem", 3, c, 5, 2, 1.0)?;
    let pre = b.residual(&format!("{pre_group}.pre"), c)?;
    let mut stacks = Vec::with_capacity(cfg.num_stacks);
    for i in 0..cfg.num_stacks {
        let name = format!("huv.stack{i}");
        let hourglass = b.hourglass(&format!("{name}.hg"), cfg.hourglass_depth, c)?;
        let res = b.residual(&format!("{name}.res"), c)?;
        let feat = b.conv(&format!("{name}.feat"), c, c, 1, 1, 1.0)?;
        let heat = b.conv(&format!("{name}.heat"), c, j, 1, 1, 0.5)?;
        let merge = if i + 1 < cfg.num_stacks {
            Some((
                b.conv(&format!("{name}.merge_feat"), c, c, 1, 1, 0.5)?,
                b.conv(&format!("{name}.merge_heat"), j, c, 1, 1, 0.5)?,
            ))
        } else {
            None
        };
        stacks.push(Stack {
            hourglass,
            res,
            feat,
            heat,
            merge,
        });
    }
    let hd_in = b.conv("hd.in", 2 * c, c, 1, 1, 1.0)?;
    let hd_hourglass = b.hourglass("hd.hg", cfg.disparity_hourglass_depth, c)?;
    let hd_res = b.residual("hd.res", c)?;
    let hd_out = b.conv("hd.out", c, 1, 1, 1, 0.5)?;
    let net = Network {
        cfg: *cfg,
        stem,
        pre,
        stacks,
        hd_in,
        hd_hourglass,
        hd_res,
        hd_out,
    };
    Ok((store, net))
}

impl Network {
    /// Rebuilds the layer handles for `cfg` and checks that `store` holds
    /// exactly the expected parameter names and shapes.
    pub fn bind<T: Scalar>(cfg: &NetConfig, store: &ParamStore<T>) -> Result<Network> {
        let (fresh, net) = build_network::<T>(cfg, 0)?;
        if fresh.len() != store.len() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint has {} parameters, variant {} expects {}",
                store.len(),
                cfg.variant(),
                fresh.len()
            )));
        }
        for i in 0..fresh.len() {
            if fresh.name(i) != store.name(i) || fresh.value(i).shape() != store.value(i).shape() {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint parameter `{}` {:?} does not match expected `{}` {:?}",
                    store.name(i),
                    store.value(i).shape(),
                    fresh.name(i),
                    fresh.value(i).shape()
                )));
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Convolutions recorded by one call of [`Network::features`].
    pub fn features_conv_count(&self) -> usize {
        match self.cfg.breakpoint {
            Breakpoint::D2 => 1,
            Breakpoint::D4 => 3,
        }
    }

    fn conv<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, c: &Conv, x: Var) -> Result<Var> {
        let w = g.param(s, c.w);
        let b = g.param(s, c.b);
        g.conv2d(x, w, b, c.stride, c.pad)
    }

    fn residual<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, r: &Residual, x: Var) -> Result<Var> {
        let h = self.conv(g, s, &r.c1, x)?;
        let h = g.relu(h);
        let h = self.conv(g, s, &r.c2, h)?;
        g.add(x, h)
    }

    fn hourglass<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, hg: &Hourglass, x: Var) -> Result<Var> {
        let up1 = self.residual(g, s, &hg.up1, x)?;
        let low = g.maxpool2(x)?;
        let low1 = self.residual(g, s, &hg.low1, low)?;
        let low2 = match &hg.inner {
            Inner::Hourglass(inner) => self.hourglass(g, s, inner, low1)?,
            Inner::Residual(r) => self.residual(g, s, r, low1)?,
        };
        let low3 = self.residual(g, s, &hg.low3, low2)?;
        let up2 = g.upsample2(low3);
        g.add(up1, up2)
    }

    /// `h_f`: image `(3, Hn, Wn)` to shared features.
    pub fn features<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, image: Var) -> Result<Var> {
        g.set_section("hf");
        let x = self.conv(g, s, &self.stem, image)?;
        let mut x = g.relu(x);
        if self.cfg.breakpoint == Breakpoint::D4 {
            x = self.residual(g, s, &self.pre, x)?;
            x = g.maxpool2(x)?;
        }
        Ok(x)
    }

    /// `h_uv`: shared features to one `(J, Hn/4, Wn/4)` heatmap per stack.
    pub fn heatmaps<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, features: Var) -> Result<Vec<Var>> {
        g.set_section("huv");
        let mut x = features;
        if self.cfg.breakpoint == Breakpoint::D2 {
            x = self.residual(g, s, &self.pre, x)?;
            x = g.maxpool2(x)?;
        }
        let mut outputs = Vec::with_capacity(self.stacks.len());
        for stack in &self.stacks {
            let h = self.hourglass(g, s, &stack.hourglass, x)?;
            let h = self.residual(g, s, &stack.res, h)?;
            let h = self.conv(g, s, &stack.feat, h)?;
            let h = g.relu(h);
            let heat = self.conv(g, s, &stack.heat, h)?;
            outputs.push(heat);
            if let Some((mf, mh)) = &stack.merge {
                let a = self.conv(g, s, mf, h)?;
                let b = self.conv(g, s, mh, heat)?;
                let ab = g.add(a, b)?;
                x = g.add(x, ab)?;
            }
        }
        Ok(outputs)
    }

    /// `h_D`: concatenated features `(2C, .., ..)` to a `(1, Hd, Wd)` disparity map.
    pub fn disparity_map<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, features_lr: Var) -> Result<Var> {
        g.set_section("hd");
        let mut x = features_lr;
        for _ in 0..self.cfg.extra_downsampling() {
            x = g.maxpool2(x)?;
        }
        let x = self.conv(g, s, &self.hd_in, x)?;
        let x = g.relu(x);
        let x = self.hourglass(g, s, &self.hd_hourglass, x)?;
        let x = self.residual(g, s, &self.hd_res, x)?;
        self.conv(g, s, &self.hd_out, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(v: Variant, size: usize) -> NetConfig {
        NetConfig {
            net_w: size,
            net_h: size,
            ..NetConfig::default()
        }
        .with_variant(v)
    }

    fn shapes(cfg: &NetConfig) -> (Vec<Vec<usize>>, Vec<usize>, usize) {
        let (store, net) = build_network::<f32>(cfg, 7).unwrap();
        let mut g = Graph::inference();
        let x = g.input(Tensor::zeros(&[3, cfg.net_h, cfg.net_w]), false);
        let f = net.features(&mut g, &store, x).unwrap();
        let heat = net.heatmaps(&mut g, &store, f).unwrap();
        let flr = g.concat(f, f).unwrap();
        let d = net.disparity_map(&mut g, &store, flr).unwrap();
        let pools = g.count_ops(Some("hd"), "maxpool2");
        let hg_pools = (1 << cfg.disparity_hourglass_depth) - 1;
        (
            heat.iter().map(|h| g.value(*h).shape().to_vec()).collect(),
            g.value(d).shape().to_vec(),
            pools - hg_pools,
        )
    }

    #[test]
    fn d4s4_shapes() {
        let (heat, d, _) = shapes(&cfg(Variant::new(Breakpoint::D4, DisparityStride::S4), 64));
        assert_eq!(heat, vec![vec![21, 16, 16]; 2]);
        assert_eq!(d, vec![1, 16, 16]);
    }

    #[test]
    fn shape_algebra_all_variants() {
        for size in [64, 128] {
            for v in Variant::ALL {
                let c = cfg(v, size);
                let (heat, d, extra) = shapes(&c);
                assert_eq!(heat, vec![vec![21, size / 4, size / 4]; 2], "{v}");
                let s = v.disparity_stride.stride();
                assert_eq!(d, vec![1, size / s, size / s], "{v}");
                assert_eq!(extra, c.extra_downsampling(), "{v}");
            }
        }
    }

    #[test]
    fn downsampling_counts() {
        let count = |v: Variant| shapes(&cfg(v, 64)).2;
        assert_eq!(count(Variant::new(Breakpoint::D4, DisparityStride::S4)), 0);
        assert_eq!(count(Variant::new(Breakpoint::D4, DisparityStride::S8)), 1);
        assert_eq!(count(Variant::new(Breakpoint::D2, DisparityStride::S4)), 1);
        assert_eq!(count(Variant::new(Breakpoint::D2, DisparityStride::S8)), 2);
    }

    #[test]
    fn same_seed_same_parameters() {
        let c = NetConfig::default();
        let (a, _) = build_network::<f32>(&c, 11).unwrap();
        let (b, _) = build_network::<f32>(&c, 11).unwrap();
        assert_eq!(a.save_checkpoint(), b.save_checkpoint());
        let (other, _) = build_network::<f32>(&c, 12).unwrap();
        assert_ne!(a.save_checkpoint(), other.save_checkpoint());
    }

    #[test]
    fn parameter_groups_follow_breakpoint() {
        let d2 = cfg(Variant::new(Breakpoint::D2, DisparityStride::S4), 64);
        let (s, _) = build_network::<f32>(&d2, 0).unwrap();
        assert!(s.lookup("huv.pre.c1.w").is_some());
        let d4 = cfg(Variant::new(Breakpoint::D4, DisparityStride::S4), 64);
        let (s, _) = build_network::<f32>(&d4, 0).unwrap();
        assert!(s.lookup("hf.pre.c1.w").is_some());
        assert_eq!(s.value(s.lookup("hd.in.w").unwrap()).shape(), &[16, 32, 1, 1]);
    }

    #[test]
    fn invalid_configs() {
        let c = NetConfig {
            net_w: 60,
            ..NetConfig::default()
        };
        assert!(matches!(build_network::<f32>(&c, 0), Err(Error::InvalidConfig(_))));
        let c = NetConfig {
            heatmap_stride: 8,
            ..NetConfig::default()
        };
        assert!(c.validate().is_err());
        let c = NetConfig {
            num_stacks: 0,
            ..NetConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn bind_rejects_mismatched_store() {
        let (store, _) = build_network::<f32>(&NetConfig::default(), 0).unwrap();
        let other = NetConfig::default().with_variant(Variant::new(Breakpoint::D2, DisparityStride::S8));
        assert!(Network::bind(&other, &store).is_err());
        assert!(Network::bind(&NetConfig::default(), &store).is_ok());
    }

    #[test]
    fn variant_parse_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("D3S4".parse::<Variant>().is_err());
    }
}
