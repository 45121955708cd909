//! Track protocol on random-walk sequences: only frame 0 gets a (perturbed)
//! ground-truth box, later boxes come from the previous prediction.
//!
//! ```text
//! cargo run --release --example track -- [/tmp/model/stage3d.bin]
//! ```

use stereopose::diffnet::{NetConfig, Network, ParamStore};
use stereopose::estimator::{Estimator, ViewMode};
use stereopose::protocol::{eval_track, make_sequences, EvalConfig, OraclePredictor, SequenceConfig, TrackConfig};
use stereopose::synthdata::SynthConfig;
use stereopose::Error;

fn main() -> stereopose::Result<()> {
    let seq_cfg = SequenceConfig { sequences: 3, length: 8, seed: 5, ..SequenceConfig::default() };
    let sequences = make_sequences(&SynthConfig { seed: 5, ..SynthConfig::default() }, &seq_cfg)?;
    for (k, s) in sequences.iter().enumerate() {
        let first = &s[0].gt.0[0];
        let last = &s[s.len() - 1].gt.0[0];
        println!("sequence {k}: wrist ({:.1}, {:.1}) -> ({:.1}, {:.1}) px", first.u, first.v, last.u, last.v);
    }
    let cfg = TrackConfig { eval: EvalConfig::default(), perturb_first: true, seed: 5 };

    let oracle = eval_track(&sequences, &OraclePredictor { net_w: 64, net_h: 64 }, &cfg)?;
    println!("oracle: {:.6} mm over {} frames", oracle.mean_error_mm, oracle.frames.len());

    if let Some(path) = std::env::args().nth(1) {
        let bytes = std::fs::read(&path).map_err(|e| Error::InvalidConfig(format!("{path}: {e}")))?;
        let store = ParamStore::load_checkpoint(&bytes)?;
        let net = Network::bind(&NetConfig::default(), &store)?;
        for views in [ViewMode::Stereo, ViewMode::Mono] {
            let est = Estimator::new(net.clone(), store.clone(), views);
            let r = eval_track(&sequences, &est, &cfg)?;
            println!("{views}: {:.2} mm, {} diverged frames", r.mean_error_mm, r.diverged_frames);
        }
    }
    Ok(())
}
