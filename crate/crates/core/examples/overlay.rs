//! Ground truth (red) and a prediction (green) drawn over both views.
//! Without a checkpoint the "prediction" is the ground truth shifted by a few
//! pixels, which is enough to see the drawing.
//!
//! ```text
//! cargo run --release --example overlay -- /tmp/overlay [/tmp/model/stage3d.bin]
//! ```

use std::path::PathBuf;

use stereopose::cli::overlay_pair;
use stereopose::diffnet::{NetConfig, Network, ParamStore};
use stereopose::estimator::{Estimator, ViewMode};
use stereopose::geometry::Uvd;
use stereopose::roi::{denormalize, init_from_joints, preprocess_pair};
use stereopose::synthdata::{write_ppm, SynthConfig};
use stereopose::Error;

fn main() -> stereopose::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "overlay".into()));
    std::fs::create_dir_all(&out).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let sample = SynthConfig { seed: 9, ..SynthConfig::default() }.sample(0)?;

    let prediction: Vec<Uvd> = match args.next() {
        Some(path) => {
            let bytes = std::fs::read(&path).map_err(|e| Error::InvalidConfig(format!("{path}: {e}")))?;
            let store = ParamStore::load_checkpoint(&bytes)?;
            let cfg = NetConfig::default();
            let est = Estimator::new(Network::bind(&cfg, &store)?, store, ViewMode::Stereo);
            let init = init_from_joints(&sample.gt, 0.25)?;
            let (l, r) = preprocess_pair(&sample.left, &sample.right, &init, cfg.net_w, cfg.net_h);
            denormalize(&est.forward(&l, &r)?.prediction.labels, &init, cfg.net_w, cfg.net_h).0
        }
        None => sample.gt.iter().map(|p| Uvd::new(p.u + 4.0, p.v - 3.0, p.d + 1.0)).collect(),
    };

    let (l, r) = overlay_pair(&sample, &prediction);
    write_ppm(&out.join("000000_l_overlay.ppm"), &l)?;
    write_ppm(&out.join("000000_r_overlay.ppm"), &r)?;
    println!("wrote {}/000000_{{l,r}}_overlay.ppm", out.display());
    Ok(())
}
