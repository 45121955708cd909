//! Two-stage training: heatmap loss over the trunk and 2D head, then the
//! disparity loss over the disparity head with the trunk frozen. A joint mode
//! optimizes both losses together for comparison.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::augment::{augment, AugPolicy, Protocol, Stage};
use crate::diffnet::{rmsprop_step, Graph, NetConfig, Network, ParamStore, RmsProp, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::estimator::{image_tensor, loss_d_node, loss_uv_node, make_heatmap_target, record_forward, ViewMode};
use crate::roi::{init_from_joints, normalize_labels, preprocess_pair, rotate_point, CropInit, ImageBuffer, NormalizedLabels};
use crate::synthdata::{mix_seed, StereoSample};

/// Parameter prefixes held fixed while the disparity head trains.
pub const FROZEN_IN_STAGE_3D: [&str; 2] = ["hf.", "huv."];

/// Training hyper-parameters. `Default` is a desk-scale preset sized for
/// 64x64 crops and a few hundred samples; [`TrainConfig::paper`] holds the
/// full-scale schedule.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Learning-rate multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub rms_rho: f64,
    pub rms_epsilon: f64,
    /// Heatmap standard deviation in heatmap cells.
    pub sigma: f64,
    /// Standard deviation of the disparity-loss weights, in heatmap cells;
    /// `sigma` when unset.
    pub disparity_sigma: Option<f64>,
    /// Huber threshold of the disparity loss, in network pixels.
    pub delta: f64,
    pub seed: u64,
    /// Protocol the model is trained for; selects the augmentation column.
    pub protocol: Protocol,
    pub augment: bool,
    /// Crop padding around the ground-truth joints.
    pub margin: f64,
    /// Views the disparity head sees.
    pub views: ViewMode,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            epochs: 30,
            lr: 5e-4,
            lr_decay: 0.3,
            lr_decay_every: 10,
            rms_rho: 0.9,
            rms_epsilon: 1e-8,
            sigma: 1.5,
            disparity_sigma: Some(0.35),
            delta: 1.0,
            seed: 0,
            protocol: Protocol::Frame,
            augment: true,
            margin: 0.25,
            views: ViewMode::Stereo,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Batch 32, 100 epochs, lr 0.05 cut to 30% every 30 epochs, sigma 3, delta 1.
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 100,
            lr: 0.05,
            lr_decay: 0.3,
            lr_decay_every: 30,
            sigma: 3.0,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("sigma", self.sigma),
            ("disparity_sigma", self.disparity_sigma()),
            ("delta", self.delta),
            ("rms_epsilon", self.rms_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 || self.lr_decay_every == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, epochs and lr_decay_every must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.rms_rho) {
            return Err(Error::InvalidConfig(format!("rms_rho must lie in [0, 1), got {}", self.rms_rho)));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::InvalidConfig(format!("margin must be non-negative, got {}", self.margin)));
        }
        Ok(())
    }

    pub fn disparity_sigma(&self) -> f64 {
        self.disparity_sigma.unwrap_or(self.sigma)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }

    fn optimizer(&self, epoch: usize) -> RmsProp {
        RmsProp {
            lr: self.lr_at(epoch),
            rho: self.rms_rho,
            epsilon: self.rms_epsilon,
        }
    }
}

/// Which loss a run minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Heatmap loss over trunk and 2D head.
    Uv,
    /// Disparity loss over the disparity head only.
    Disparity,
    /// Both losses over every parameter.
    Joint,
}

impl Objective {
    fn uses_uv(self) -> bool {
        self != Objective::Disparity
    }

    fn uses_d(self) -> bool {
        self != Objective::Uv
    }

    /// Augmentation stage; the joint objective trains the disparity head, so
    /// it must stay stereo-safe.
    fn stage(self) -> Stage {
        match self {
            Objective::Uv => Stage::Stage2D,
            _ => Stage::Stage3D,
        }
    }
}

/// Network-ready crops with their normalized labels.
#[derive(Debug, Clone)]
pub struct Example {
    pub left: ImageBuffer,
    pub right: ImageBuffer,
    pub labels: NormalizedLabels,
    pub init: CropInit,
}

/// Crops `sample` around its ground truth, jittered by `policy` when `rng` is
/// given. A draw that pushes a joint too far off the crop is redrawn a few
/// times before falling back to the plain ground-truth box.
pub fn make_example<R: Rng>(
    sample: &StereoSample,
    net: &NetConfig,
    policy: &AugPolicy,
    margin: f64,
    (sigma, sigma_d): (f64, f64),
    rng: Option<&mut R>,
) -> Result<Example> {
    let init = init_from_joints(&sample.gt, margin)?;
    let plain = || {
        let (left, right) = preprocess_pair(&sample.left, &sample.right, &init, net.net_w, net.net_h);
        Example {
            left,
            right,
            labels: normalize_labels(&sample.gt, &init, net.net_w, net.net_h),
            init,
        }
    };
    let Some(rng) = rng else { return Ok(plain()) };
    for _ in 0..8 {
        let draw = augment(&init, policy, rng)?;
        let (mut left, right) = preprocess_pair(&sample.left, &sample.right, &draw.init, net.net_w, net.net_h);
        let mut labels = normalize_labels(&sample.gt, &draw.init, net.net_w, net.net_h);
        if let Some(deg) = draw.rotation_deg {
            let (cx, cy) = (net.net_w as f64 / 2.0, net.net_h as f64 / 2.0);
            left = left.rotated(deg);
            for p in labels.joints_mut() {
                (p.u, p.v) = rotate_point(p.u, p.v, cx, cy, deg);
            }
        }
        let ex = Example {
            left,
            right,
            labels,
            init: draw.init,
        };
        if Targets::build(&ex.labels, net, sigma, sigma_d).is_ok() {
            return Ok(ex);
        }
    }
    Ok(plain())
}

/// Supervision grids for one example.
struct Targets {
    uv: crate::estimator::HeatmapTarget,
    d: crate::estimator::HeatmapTarget,
}

impl Targets {
    fn build(labels: &NormalizedLabels, net: &NetConfig, sigma: f64, sigma_d: f64) -> Result<Self> {
        let (gh, gw) = net.heatmap_dims();
        let (dh, dw) = net.disparity_dims();
        let s = net.heatmap_stride as f64;
        let sd = net.disparity_map_stride() as f64;
        Ok(Targets {
            uv: make_heatmap_target(labels, gh, gw, s, sigma, false)?,
            // Same spatial spread in network pixels on the coarser grid.
            d: make_heatmap_target(labels, dh, dw, sd, sigma_d * s / sd, true)?,
        })
    }
}

/// Records `L_uv`, `L_d` or their sum for one crop pair on `g`. The right
/// crop is only consulted when the disparity loss is on in stereo mode.
pub fn record_loss<T: Scalar>(
    g: &mut Graph<T>,
    net: &Network,
    store: &ParamStore<T>,
    (left, right): (Tensor<T>, Tensor<T>),
    labels: &NormalizedLabels,
    objective: Objective,
    cfg: &TrainConfig,
) -> Result<Var> {
    let targets = Targets::build(labels, net.config(), cfg.sigma, cfg.disparity_sigma())?;
    let right = match cfg.views {
        ViewMode::Stereo if objective.uses_d() => Some(right),
        _ => None,
    };
    let nodes = record_forward(g, net, store, left, right, cfg.views, objective.uses_uv(), objective.uses_d())?;
    let mut terms = Vec::new();
    if objective.uses_uv() {
        terms.push((loss_uv_node(g, &nodes.stacks, &targets.uv)?, T::one()));
    }
    if let Some(d) = nodes.disparity {
        terms.push((loss_d_node(g, d, labels, &targets.d, cfg.delta)?, T::one()));
    }
    g.weighted_sum(&terms)
}

/// Loss of one example and, on a training graph, its parameter gradients.
fn example_loss(
    net: &Network,
    store: &ParamStore<f32>,
    ex: &Example,
    objective: Objective,
    cfg: &TrainConfig,
    with_grad: bool,
) -> Result<(f64, Vec<Option<Tensor<f32>>>)> {
    let mut g = if with_grad { Graph::<f32>::new() } else { Graph::inference() };
    let crops = (image_tensor(&ex.left), image_tensor(&ex.right));
    let loss = record_loss(&mut g, net, store, crops, &ex.labels, objective, cfg)?;
    let value = g.value(loss).item() as f64;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss {value}")));
    }
    let grads = if with_grad { g.backward(loss, store.len()).into_params() } else { Vec::new() };
    Ok((value, grads))
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 0 is the untrained state.
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches (`NaN` at epoch 0).
    pub train_loss: f64,
    pub val_loss: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub objective: Objective,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn initial_val_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.val_loss)
    }

    pub fn final_val_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.val_loss)
    }

    pub fn total_steps(&self) -> usize {
        self.epochs.last().map_or(0, |e| e.steps)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# objective {:?}\n# epoch lr train_loss val_loss steps\n", self.objective);
        for e in &self.epochs {
            s += &format!("{} {:e} {:.9e} {:.9e} {}\n", e.epoch, e.lr, e.train_loss, e.val_loss, e.steps);
        }
        s
    }
}

/// Mean loss over `val` with ground-truth crops and no augmentation.
pub fn validation_loss(
    net: &Network,
    store: &ParamStore<f32>,
    val: &[StereoSample],
    objective: Objective,
    cfg: &TrainConfig,
) -> Result<f64> {
    if val.is_empty() {
        return Ok(f64::NAN);
    }
    let policy = AugPolicy::disabled(objective.stage(), cfg.protocol);
    let losses: Vec<f64> = val
        .par_iter()
        .map(|s| {
            let ex = make_example::<ChaCha8Rng>(s, net.config(), &policy, cfg.margin, (cfg.sigma, cfg.disparity_sigma()), None)?;
            Ok(example_loss(net, store, &ex, objective, cfg, false)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Optimizes `objective` on `train`, logging validation loss on `val` before
/// the first epoch and after each one.
///
/// Per-sample gradients are computed in parallel and summed in sample order,
/// so the result does not depend on the number of worker threads.
pub fn train(
    net: &Network,
    store: &mut ParamStore<f32>,
    train: &[StereoSample],
    val: &[StereoSample],
    objective: Objective,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let policy = if cfg.augment {
        AugPolicy::new(objective.stage(), cfg.protocol)
    } else {
        AugPolicy::disabled(objective.stage(), cfg.protocol)
    };
    let mut log = TrainLog {
        objective,
        epochs: vec![EpochLog {
            epoch: 0,
            lr: cfg.lr,
            train_loss: f64::NAN,
            val_loss: validation_loss(net, store, val, objective, cfg)?,
            steps: 0,
        }],
    };
    let salt = match objective {
        Objective::Uv => 1,
        Objective::Disparity => 2,
        Objective::Joint => 3,
    };
    let run_seed = mix_seed(cfg.seed, salt);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let epoch_seed = mix_seed(run_seed, epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let opt = cfg.optimizer(epoch);
        let (mut loss_sum, mut batches) = (0.0, 0);
        let mut capped = false;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                capped = true;
                break;
            }
            let results: Vec<(f64, Vec<Option<Tensor<f32>>>)> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(epoch_seed, (b * cfg.batch_size + k) as u64 + 1));
                    let ex = make_example(&train[i], net.config(), &policy, cfg.margin, (cfg.sigma, cfg.disparity_sigma()), Some(&mut rng))?;
                    example_loss(net, store, &ex, objective, cfg, true)
                })
                .collect::<Result<_>>()?;
            let (loss, grads) = reduce(results);
            rmsprop_step(store, &grads, &opt);
            loss_sum += loss;
            batches += 1;
            steps += 1;
        }
        if batches > 0 {
            log.epochs.push(EpochLog {
                epoch: epoch + 1,
                lr: opt.lr,
                train_loss: loss_sum / batches as f64,
                val_loss: validation_loss(net, store, val, objective, cfg)?,
                steps,
            });
        }
        if capped {
            break;
        }
    }
    Ok(log)
}

/// Batch mean of losses and gradients, accumulated in batch order.
fn reduce(results: Vec<(f64, Vec<Option<Tensor<f32>>>)>) -> (f64, Vec<Option<Tensor<f32>>>) {
    let n = results.len();
    let mut iter = results.into_iter();
    let (mut loss, mut acc) = iter.next().expect("non-empty batch");
    for (l, grads) in iter {
        loss += l;
        for (a, g) in acc.iter_mut().zip(grads) {
            match (a.as_mut(), g) {
                (Some(a), Some(g)) => a.add_assign(&g),
                (None, Some(g)) => *a = Some(g),
                _ => {}
            }
        }
    }
    let k = 1.0 / n as f32;
    for t in acc.iter_mut().flatten() {
        t.scale(k);
    }
    (loss / n as f64, acc)
}

/// Stage one: heatmap loss over trunk and 2D head, everything trainable.
pub fn train_stage_2d(
    net: &Network,
    store: &mut ParamStore<f32>,
    train_set: &[StereoSample],
    val: &[StereoSample],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    store.freeze_prefixes(&[]);
    train(net, store, train_set, val, Objective::Uv, cfg)
}

/// Stage two: disparity loss over the disparity head with the trunk and 2D
/// head frozen. Fails with `FrozenViolation` if any frozen value moved.
pub fn train_stage_3d(
    net: &Network,
    store: &mut ParamStore<f32>,
    train_set: &[StereoSample],
    val: &[StereoSample],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    store.freeze_prefixes(&FROZEN_IN_STAGE_3D);
    let before: Vec<(usize, Vec<u32>)> = (0..store.len())
        .filter(|&i| store.is_frozen(i))
        .map(|i| (i, bits(store.value(i))))
        .collect();
    let log = train(net, store, train_set, val, Objective::Disparity, cfg)?;
    for (i, b) in before {
        if bits(store.value(i)) != b {
            return Err(Error::FrozenViolation(store.name(i).to_string()));
        }
    }
    Ok(log)
}

/// Both losses at once over every parameter.
pub fn train_joint(
    net: &Network,
    store: &mut ParamStore<f32>,
    train_set: &[StereoSample],
    val: &[StereoSample],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    store.freeze_prefixes(&[]);
    train(net, store, train_set, val, Objective::Joint, cfg)
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}
