//! Frame-protocol evaluation: crops from ground truth, mean 3D error in mm.
//! Compares the ground-truth oracle, a constant median pose and, when a
//! checkpoint path is given, a trained model.
//!
//! ```text
//! cargo run --release --example eval_frame -- [/tmp/model/stage3d.bin]
//! ```

use stereopose::diffnet::{NetConfig, Network, ParamStore};
use stereopose::estimator::{Estimator, ViewMode};
use stereopose::protocol::{eval_frame, EvalConfig, MedianPosePredictor, OraclePredictor};
use stereopose::synthdata::SynthConfig;
use stereopose::Error;

fn main() -> stereopose::Result<()> {
    let train = SynthConfig { count: 60, seed: 1, ..SynthConfig::default() }.generate()?;
    let val = SynthConfig { count: 30, seed: 2, first_id: 100_000, ..SynthConfig::default() }.generate()?;
    let cfg = EvalConfig::default();

    let oracle = eval_frame(&val, &OraclePredictor { net_w: 64, net_h: 64 }, &cfg)?;
    println!("oracle:      {:.6} mm", oracle.mean_error_mm);
    let median = eval_frame(&val, &MedianPosePredictor::fit(&train, 64, 64, cfg.margin)?, &cfg)?;
    println!("median pose: {:.2} mm", median.mean_error_mm);

    if let Some(path) = std::env::args().nth(1) {
        let bytes = std::fs::read(&path).map_err(|e| Error::InvalidConfig(format!("{path}: {e}")))?;
        let store = ParamStore::load_checkpoint(&bytes)?;
        let net = Network::bind(&NetConfig::default(), &store)?;
        let report = eval_frame(&val, &Estimator::new(net, store, ViewMode::Stereo), &cfg)?;
        print!("{}", report.to_text());
    }
    Ok(())
}
