//! Inference speed per architecture variant and view mode, with a
//! deterministic multiply-accumulate count alongside the wall-clock numbers.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffnet::{build_network, Graph, NetConfig, Network, ParamStore, Variant};
use crate::error::{Error, Result};
use crate::estimator::{image_tensor, record_forward, Estimator, ViewMode};
use crate::roi::ImageBuffer;

/// Multiply-accumulates of one inference pass, split by sub-network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacCount {
    pub hf: u64,
    pub huv: u64,
    pub hd: u64,
    pub total: u64,
}

pub fn mac_count(net: &Network, store: &ParamStore<f32>, mode: ViewMode) -> Result<MacCount> {
    let cfg = net.config();
    let blank = image_tensor::<f32>(&ImageBuffer::new(cfg.net_w, cfg.net_h));
    let right = (mode == ViewMode::Stereo).then(|| blank.clone());
    let mut g = Graph::<f32>::inference();
    record_forward(&mut g, net, store, blank, right, mode, true, true)?;
    Ok(MacCount {
        hf: g.macs(Some("hf")),
        huv: g.macs(Some("huv")),
        hd: g.macs(Some("hd")),
        total: g.macs(None),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: Variant,
    pub views: ViewMode,
    pub macs: MacCount,
    pub runs: usize,
    pub fps_mean: f64,
    pub fps_std: f64,
    pub ms_mean: f64,
    pub ms_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub net_w: usize,
    pub net_h: usize,
    pub burn_in: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn row(&self, variant: Variant, views: ViewMode) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.variant == variant && r.views == views)
    }

    /// Deterministic part of the table.
    pub fn mac_text(&self) -> String {
        let mut s = format!("# multiply-accumulates per inference, input {}x{}\n", self.net_w, self.net_h);
        s += "variant views hf huv hd total\n";
        for r in &self.rows {
            let _ = writeln!(s, "{} {} {} {} {} {}", r.variant, r.views, r.macs.hf, r.macs.huv, r.macs.hd, r.macs.total);
        }
        s
    }

    /// Wall-clock part of the table.
    pub fn timing_text(&self) -> String {
        let mut s = String::new();
        if let Some(r) = self.rows.first() {
            let _ = writeln!(s, "# wall clock: mean ± std over {} runs after {} burn-in", r.runs, self.burn_in);
        }
        s += "variant views fps ms\n";
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{} {} {:.2} ± {:.2} {:.3} ± {:.3}",
                r.variant, r.views, r.fps_mean, r.fps_std, r.ms_mean, r.ms_std
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        format!("{}\n{}", self.mac_text(), self.timing_text())
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn random_crop(w: usize, h: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let data = (0..w * h * 3).map(|_| rng.gen::<f32>()).collect();
    ImageBuffer::from_raw(w, h, data).expect("crop buffer")
}

/// Times single-pair inference for every `(variant, views)` combination on
/// freshly initialized networks built from `base`.
pub fn bench_fps(
    base: &NetConfig,
    variants: &[Variant],
    views: &[ViewMode],
    repetitions: usize,
    burn_in: usize,
    seed: u64,
) -> Result<BenchTable> {
    if repetitions == 0 {
        return Err(Error::InvalidConfig("bench needs at least one timed repetition".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let left = random_crop(base.net_w, base.net_h, &mut rng);
    let right = random_crop(base.net_w, base.net_h, &mut rng);
    let mut rows = Vec::new();
    for &variant in variants {
        let cfg = base.with_variant(variant);
        let (store, net) = build_network::<f32>(&cfg, seed)?;
        for &mode in views {
            let est = Estimator::new(net.clone(), store.clone(), mode);
            for _ in 0..burn_in {
                est.forward(&left, &right)?;
            }
            let mut secs = Vec::with_capacity(repetitions);
            for _ in 0..repetitions {
                let t = Instant::now();
                std::hint::black_box(est.forward(&left, &right)?);
                secs.push(t.elapsed().as_secs_f64().max(1e-9));
            }
            let fps: Vec<f64> = secs.iter().map(|s| 1.0 / s).collect();
            let ms: Vec<f64> = secs.iter().map(|s| s * 1e3).collect();
            let (fps_mean, fps_std) = mean_std(&fps);
            let (ms_mean, ms_std) = mean_std(&ms);
            rows.push(BenchRow {
                variant,
                views: mode,
                macs: mac_count(&net, &store, mode)?,
                runs: repetitions,
                fps_mean,
                fps_std,
                ms_mean,
                ms_std,
            });
        }
    }
    Ok(BenchTable {
        net_w: base.net_w,
        net_h: base.net_h,
        burn_in,
        rows,
    })
}
