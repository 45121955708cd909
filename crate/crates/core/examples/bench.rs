//! Multiply-accumulate counts and inference speed for the four architecture
//! variants with one or two views.
//!
//! ```text
//! cargo run --release --example bench -- 20 5
//! ```

use stereopose::diffnet::{NetConfig, Variant};
use stereopose::estimator::ViewMode;
use stereopose::protocol::bench_fps;

fn main() -> stereopose::Result<()> {
    let mut args = std::env::args().skip(1);
    let repetitions = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let burn_in = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let table = bench_fps(&NetConfig::default(), &Variant::ALL, &[ViewMode::Mono, ViewMode::Stereo], repetitions, burn_in, 0)?;
    print!("{}", table.to_text());
    for v in Variant::ALL {
        let mono = table.row(v, ViewMode::Mono).expect("row").macs.total as f64;
        let stereo = table.row(v, ViewMode::Stereo).expect("row").macs.total as f64;
        println!("{v}: stereo costs {:.2}x mono", stereo / mono);
    }
    Ok(())
}
