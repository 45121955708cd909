//! Full chain on one stereo pair: crop, network, denormalize, triangulate.
//! Uses a checkpoint when given, otherwise an untrained network.
//!
//! ```text
//! cargo run --release --example infer -- [/tmp/model/stage3d.bin]
//! ```

use stereopose::diffnet::{build_network, NetConfig, Network, ParamStore};
use stereopose::estimator::{Estimator, ViewMode};
use stereopose::geometry::uvd_to_xyz;
use stereopose::roi::{denormalize, init_from_joints, preprocess_pair};
use stereopose::synthdata::SynthConfig;
use stereopose::Error;

fn main() -> stereopose::Result<()> {
    let cfg = NetConfig::default();
    let (store, net) = match std::env::args().nth(1) {
        Some(path) => {
            let bytes = std::fs::read(&path).map_err(|e| Error::InvalidConfig(format!("{path}: {e}")))?;
            let store = ParamStore::load_checkpoint(&bytes)?;
            let net = Network::bind(&cfg, &store)?;
            (store, net)
        }
        None => build_network::<f32>(&cfg, 0)?,
    };
    let est = Estimator::new(net, store, ViewMode::Stereo);

    let sample = SynthConfig { seed: 9, ..SynthConfig::default() }.sample(0)?;
    let init = init_from_joints(&sample.gt, 0.25)?;
    let (left, right) = preprocess_pair(&sample.left, &sample.right, &init, cfg.net_w, cfg.net_h);
    let out = est.forward(&left, &right)?;
    println!("trunk ran {} times, {} multiply-accumulates", out.trunk_invocations, out.macs);

    let pred = denormalize(&out.prediction.labels, &init, cfg.net_w, cfg.net_h);
    let gt = uvd_to_xyz(&sample.rig, &sample.gt)?;
    println!("j       u       v       d        x        y        z   err(mm)");
    for (j, (p, g)) in pred.iter().zip(gt.iter()).enumerate() {
        match uvd_to_xyz(&sample.rig, &stereopose::geometry::JointSetUvd(vec![*p])) {
            Ok(x) => {
                let x = x.0[0];
                println!(
                    "{j:>2} {:7.2} {:7.2} {:7.2} {:8.2} {:8.2} {:8.2} {:8.2}",
                    p.u, p.v, p.d, x.x, x.y, x.z, x.distance(g)
                );
            }
            Err(e) => println!("{j:>2} {:7.2} {:7.2} {:7.2} ({e})", p.u, p.v, p.d),
        }
    }
    Ok(())
}
