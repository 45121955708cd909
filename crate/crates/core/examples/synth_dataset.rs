//! Renders a small synthetic stereo dataset, writes it to disk and reads it
//! back.
//!
//! ```text
//! cargo run --release --example synth_dataset -- /tmp/synth 20
//! ```

use std::path::PathBuf;

use stereopose::geometry::uvd_to_xyz;
use stereopose::synthdata::{read_dataset, write_dataset, SynthConfig};

fn main() -> stereopose::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synth".into()));
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);

    let cfg = SynthConfig {
        count,
        seed: 7,
        ..SynthConfig::default()
    };
    let samples = cfg.generate()?;
    write_dataset(&samples, &dir)?;
    let back = read_dataset(&dir)?;
    assert_eq!(back, samples);

    for s in back.iter().take(5) {
        let xyz = uvd_to_xyz(&s.rig, &s.gt)?;
        let wrist = xyz.iter().next().expect("joints");
        println!("sample {:06}: wrist at ({:.1}, {:.1}, {:.1}) mm, disparity {:.2} px", s.id, wrist.x, wrist.y, wrist.z, s.gt.0[0].d);
    }
    println!("{} samples in {}", back.len(), dir.display());
    Ok(())
}
