//! Crop initialization, crop extraction for both views and the label
//! normalization round trip. Writes the crops as PPM files.
//!
//! ```text
//! cargo run --release --example crop -- /tmp/crops
//! ```

use std::path::PathBuf;

use stereopose::roi::{denormalize, init_from_joints, normalize_labels, preprocess_pair};
use stereopose::synthdata::{write_ppm, SynthConfig};

fn main() -> stereopose::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crops".into()));
    std::fs::create_dir_all(&out).map_err(|e| stereopose::Error::InvalidConfig(e.to_string()))?;

    let sample = SynthConfig::default().sample(0)?;
    let init = init_from_joints(&sample.gt, 0.25)?;
    println!(
        "box u0={:.1} v0={:.1} w0={:.1} h0={:.1}, mean disparity d0={:.2}",
        init.u0, init.v0, init.w0, init.h0, init.d0
    );

    let (left, right) = preprocess_pair(&sample.left, &sample.right, &init, 64, 64);
    write_ppm(&out.join("left_crop.ppm"), &left)?;
    write_ppm(&out.join("right_crop.ppm"), &right)?;

    let labels = normalize_labels(&sample.gt, &init, 64, 64);
    println!("joint  u'      v'      d'  (network pixels)");
    for (j, p) in labels.joints().iter().enumerate().take(5) {
        println!("{j:>5} {:6.2} {:6.2} {:6.2}", p.u, p.v, p.d);
    }
    let back = denormalize(&labels, &init, 64, 64);
    let exact = back.iter().zip(sample.gt.iter()).all(|(a, b)| a == b);
    println!("round trip exact: {exact}");
    println!("crops written to {}", out.display());
    Ok(())
}
