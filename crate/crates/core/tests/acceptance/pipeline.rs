//! Criteria 7 and 14: the full chain with an oracle, and byte-identical CLI reruns.

use std::path::Path;
use std::process::Command;

use stereopose::protocol::{eval_frame, EvalConfig, OraclePredictor};
use stereopose::synthdata::SynthConfig;

use super::training::Shared;
use super::Outcome;

pub fn oracle_chain(_: &mut Shared) -> Outcome {
    let data = SynthConfig {
        count: 60,
        seed: 7,
        ..SynthConfig::default()
    }
    .generate()
    .expect("synth");
    let mut worst = 0.0f64;
    let mut frames = 0;
    for (w, h) in [(64, 64), (96, 80), (256, 256)] {
        let report = eval_frame(&data, &OraclePredictor { net_w: w, net_h: h }, &EvalConfig::default()).expect("eval");
        frames += report.frames.len();
        worst = report
            .frames
            .iter()
            .flat_map(|f| f.joint_err_mm.iter().copied())
            .fold(worst, f64::max);
    }
    Outcome::new(worst == 0.0, format!("max joint error {worst:e} mm over {frames} frames at three input sizes (== 0)"))
}

fn run(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_stereopose"))
        .current_dir(dir)
        .args(["--threads", "1", "--seed", "11"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(out.stdout)
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .expect("dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).expect("file")))
        .collect()
}

/// Dataset files, checkpoint, report and records of one full CLI run.
fn cli_run(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    run(dir, &["synth", "--out", "train", "--count", "24"])?;
    run(dir, &["synth", "--out", "val", "--count", "6", "--first-id", "500"])?;
    run(dir, &["synth", "--out", "seq", "--sequences", "2", "--length", "4"])?;
    let log2 = run(dir, &["train", "--stage", "2d", "--data", "train", "--val", "val", "--out", "c2.bin", "--epochs", "2"])?;
    let log3 = run(
        dir,
        &["train", "--stage", "3d", "--init", "c2.bin", "--data", "train", "--out", "c3.bin", "--epochs", "2", "--protocol", "track"],
    )?;
    let frame = run(dir, &["eval", "--protocol", "frame", "--data", "val", "--checkpoint", "c3.bin", "--records", "rec.csv"])?;
    let track = run(dir, &["eval", "--protocol", "track", "--data", "seq", "--length", "4", "--checkpoint", "c3.bin"])?;
    let mut all = Vec::new();
    for d in ["train", "val", "seq"] {
        all.extend(tree_bytes(&dir.join(d)).into_iter().map(|(n, b)| (format!("{d}/{n}"), b)));
    }
    all.extend(tree_bytes(dir));
    all.extend([
        ("train 2d log".to_string(), log2),
        ("train 3d log".to_string(), log3),
        ("frame report".to_string(), frame),
        ("track report".to_string(), track),
    ]);
    Ok(all)
}

pub fn cli_determinism(_: &mut Shared) -> Outcome {
    let (a, b) = (tempfile::tempdir().expect("tmp"), tempfile::tempdir().expect("tmp"));
    let (ra, rb) = match (cli_run(a.path()), cli_run(b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("command failed: {e}")),
    };
    let names: Vec<&str> = ra.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = ra
        .iter()
        .zip(&rb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let bytes: usize = ra.iter().map(|(_, b)| b.len()).sum();
    Outcome::new(
        ra.len() == rb.len() && differing.is_empty(),
        format!(
            "{} artifacts ({bytes} bytes: datasets, checkpoints, logs, reports, records) from two runs at --threads 1; differing: {:?}",
            names.len(),
            differing
        ),
    )
}
