//! Reverse-mode gradients of the training loss on a small network, checked
//! against central finite differences in 64-bit mode.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereopose::diffnet::gradcheck::{check_params, GradCheckConfig};
use stereopose::diffnet::{build_network, Graph, NetConfig, Tensor};
use stereopose::estimator::ViewMode;
use stereopose::geometry::Uvd;
use stereopose::protocol::{record_loss, Objective, TrainConfig};
use stereopose::roi::NormalizedLabels;

fn main() -> stereopose::Result<()> {
    let cfg = NetConfig {
        base_channels: 4,
        net_w: 32,
        net_h: 32,
        ..NetConfig::default()
    };
    let (mut store, net) = build_network::<f64>(&cfg, 0)?;
    println!("{} parameter tensors, {} values", store.len(), store.num_values());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut crop = || Tensor::from_vec(&[3, 32, 32], (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect());
    let crops = (crop()?, crop()?);
    let labels = NormalizedLabels::new((0..21).map(|j| Uvd::new(6.0 + j as f64, 26.0 - j as f64, 0.2 * j as f64 - 2.0)).collect());

    for objective in [Objective::Uv, Objective::Disparity, Objective::Joint] {
        for views in [ViewMode::Stereo, ViewMode::Mono] {
            let train = TrainConfig {
                views,
                ..TrainConfig::default()
            };
            let mut g = Graph::new();
            let loss = record_loss(&mut g, &net, &store, crops.clone(), &labels, objective, &train)?;
            let value = g.value(loss).item();
            let report = check_params(&mut store, &GradCheckConfig::default(), |g, s| {
                record_loss(g, &net, s, crops.clone(), &labels, objective, &train)
            })?;
            println!(
                "{objective:?}/{views}: loss {value:.6}, {} coordinates, {} kinks skipped, max relative error {:.2e}",
                report.checked, report.skipped_kinks, report.max_rel_error
            );
        }
    }
    Ok(())
}
