//! Central finite-difference checks of analytic gradients in 64-bit mode.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates probed per check; every coordinate when there are fewer.
    pub coords: usize,
    pub seed: u64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            coords: 50,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose one-sided differences disagree, i.e. a ReLU, max-pool,
    /// clamp or Huber kink lies within one step.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance && self.skipped_kinks * 5 <= self.checked
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, probe: Probe, floor: f64) {
        if probe.is_kink() {
            self.skipped_kinks += 1;
            return;
        }
        let numeric = probe.central();
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = Some(format!("{} analytic={analytic:e} numeric={numeric:e}", label()));
        }
    }
}

struct Probe {
    plus: f64,
    zero: f64,
    minus: f64,
    step: f64,
}

impl Probe {
    fn central(&self) -> f64 {
        (self.plus - self.minus) / (2.0 * self.step)
    }

    fn is_kink(&self) -> bool {
        let fwd = (self.plus - self.zero) / self.step;
        let bwd = (self.zero - self.minus) / self.step;
        (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()) + 1e-7
    }
}

fn scalar_loss(g: &Graph<f64>, loss: Var) -> Result<f64> {
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::shape("gradcheck", format!("loss must be scalar, got {:?}", v.shape())));
    }
    Ok(v.item())
}

fn pick(total: usize, cfg: &GradCheckConfig) -> Vec<usize> {
    if total <= cfg.coords {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx = sample(&mut rng, total, cfg.coords).into_vec();
    idx.sort_unstable();
    idx
}

/// Checks `d loss / d params` for every non-frozen parameter of `store`.
pub fn check_params<F>(store: &mut ParamStore<f64>, cfg: &GradCheckConfig, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::inference();
        let l = loss(&mut g, store)?;
        scalar_loss(&g, l)
    };
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    let zero = scalar_loss(&g, l)?;
    let grads = g.backward(l, store.len()).into_params();

    let mut coords = Vec::new();
    for i in 0..store.len() {
        if !store.is_frozen(i) {
            coords.extend((0..store.value(i).len()).map(|k| (i, k)));
        }
    }
    let mut report = GradCheckReport::default();
    for c in pick(coords.len(), cfg) {
        let (i, k) = coords[c];
        let orig = store.value(i).data()[k];
        store.value_mut(i).data_mut()[k] = orig + cfg.step;
        let plus = eval(store)?;
        store.value_mut(i).data_mut()[k] = orig - cfg.step;
        let minus = eval(store)?;
        store.value_mut(i).data_mut()[k] = orig;
        let analytic = grads[i].as_ref().map_or(0.0, |t| t.data()[k]);
        let probe = Probe {
            plus,
            zero,
            minus,
            step: cfg.step,
        };
        report.record(|| format!("{}[{k}]", store.name(i)), analytic, probe, cfg.floor);
    }
    Ok(report)
}

/// Checks `d loss / d inputs` where `loss` receives one graph input per tensor.
pub fn check_inputs<F>(inputs: &mut [Tensor<f64>], cfg: &GradCheckConfig, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>], training: bool| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = if training { Graph::new() } else { Graph::inference() };
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
        let l = loss(&mut g, &vars)?;
        Ok((g, vars, l))
    };
    let (g, vars, l) = eval(inputs, true)?;
    let zero = scalar_loss(&g, l)?;
    let grads = g.backward(l, 0);
    let analytic: Vec<Option<Tensor<f64>>> = vars.iter().map(|v| grads.of(*v).cloned()).collect();

    let mut coords = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        coords.extend((0..t.len()).map(|k| (i, k)));
    }
    let mut report = GradCheckReport::default();
    for c in pick(coords.len(), cfg) {
        let (i, k) = coords[c];
        let orig = inputs[i].data()[k];
        inputs[i].data_mut()[k] = orig + cfg.step;
        let (g, _, l) = eval(inputs, false)?;
        let plus = scalar_loss(&g, l)?;
        inputs[i].data_mut()[k] = orig - cfg.step;
        let (g, _, l) = eval(inputs, false)?;
        let minus = scalar_loss(&g, l)?;
        inputs[i].data_mut()[k] = orig;
        let a = analytic[i].as_ref().map_or(0.0, |t| t.data()[k]);
        let probe = Probe {
            plus,
            zero,
            minus,
            step: cfg.step,
        };
        report.record(|| format!("input{i}[{k}]"), a, probe, cfg.floor);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        // relu(x) has slope 1 for x > 0; compare against a loss whose analytic
        // gradient is correct, then corrupt the reference.
        let mut x = vec![Tensor::from_vec(&[1, 1, 3], vec![0.5, 1.0, 2.0]).unwrap()];
        let cfg = GradCheckConfig::default();
        let target = Tensor::from_vec(&[1, 1, 3], vec![0.0, 0.0, 0.0]).unwrap();
        let r = check_inputs(&mut x, &cfg, |g, v| {
            let y = g.relu(v[0]);
            g.mse_const(y, target.clone())
        })
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.passes(1e-6), "{r:?}");
    }

    #[test]
    fn kink_is_skipped() {
        let mut x = vec![Tensor::from_vec(&[1, 1, 1], vec![0.0]).unwrap()];
        let target = Tensor::from_vec(&[1, 1, 1], vec![-1.0]).unwrap();
        let r = check_inputs(&mut x, &GradCheckConfig::default(), |g, v| {
            let y = g.relu(v[0]);
            g.mse_const(y, target.clone())
        })
        .unwrap();
        assert_eq!(r.skipped_kinks, 1);
        assert_eq!(r.checked, 0);
    }
}
