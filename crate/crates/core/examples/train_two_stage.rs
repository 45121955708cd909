//! Two-stage training on a small synthetic set: heatmaps first, then the
//! disparity head on the frozen trunk. Saves both checkpoints.
//!
//! ```text
//! cargo run --release --example train_two_stage -- /tmp/model 120 4 3
//! ```
//!
//! Arguments: output directory, training samples, stage-2D epochs,
//! stage-3D epochs.

use std::path::PathBuf;

use stereopose::diffnet::{build_network, NetConfig};
use stereopose::estimator::{Estimator, ViewMode};
use stereopose::protocol::{eval_frame, train_stage_2d, train_stage_3d, EvalConfig, TrainConfig};
use stereopose::synthdata::SynthConfig;
use stereopose::Error;

fn main() -> stereopose::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "model".into()));
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(120);
    let epochs_2d = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let epochs_3d = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    std::fs::create_dir_all(&out).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let train = SynthConfig { count, seed: 1, ..SynthConfig::default() }.generate()?;
    let val = SynthConfig { count: 30, seed: 2, first_id: 100_000, ..SynthConfig::default() }.generate()?;

    let net_cfg = NetConfig::default();
    let (mut store, net) = build_network::<f32>(&net_cfg, 0)?;
    let before = eval_frame(&val, &Estimator::new(net.clone(), store.clone(), ViewMode::Stereo), &EvalConfig::default())?;

    let cfg = TrainConfig { epochs: epochs_2d, ..TrainConfig::default() };
    let log = train_stage_2d(&net, &mut store, &train, &val, &cfg)?;
    print!("{}", log.to_text());
    std::fs::write(out.join("stage2d.bin"), store.save_checkpoint()).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let cfg = TrainConfig { epochs: epochs_3d, ..cfg };
    let log = train_stage_3d(&net, &mut store, &train, &val, &cfg)?;
    print!("{}", log.to_text());
    std::fs::write(out.join("stage3d.bin"), store.save_checkpoint()).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let after = eval_frame(&val, &Estimator::new(net, store, ViewMode::Stereo), &EvalConfig::default())?;
    println!("mean 3D error: {:.2} mm untrained, {:.2} mm trained", before.mean_error_mm, after.mean_error_mm);
    Ok(())
}
