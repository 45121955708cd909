//! Criteria 8, 9 and 11: desk-scale training runs. They share one dataset
//! and one stage-2D trunk, built on first use.

use std::time::Instant;

use stereopose::diffnet::{build_network, NetConfig, Network, ParamStore};
use stereopose::estimator::{Estimator, ViewMode};
use stereopose::protocol::{
    eval_frame, eval_track, make_sequences, train_joint, train_stage_2d, train_stage_3d, EvalConfig, MedianPosePredictor,
    Protocol, SequenceConfig, TrackConfig, TrainConfig,
};
use stereopose::synthdata::{StereoSample, SynthConfig};

use super::Outcome;

pub const TRAIN_COUNT: usize = 500;
pub const VAL_COUNT: usize = 100;
pub const EPOCHS_2D: usize = 30;
pub const EPOCHS_3D: usize = 15;
pub const SEED: u64 = 1;

pub struct Toy {
    pub train: Vec<StereoSample>,
    pub val: Vec<StereoSample>,
    pub net: Network,
    pub init: ParamStore<f32>,
    pub trunk: ParamStore<f32>,
    pub steps_2d: usize,
    pub setup_secs: f64,
}

#[derive(Default)]
pub struct Shared {
    toy: Option<Toy>,
    /// Final frame error and step count of the two-stage stereo model.
    two_stage: Option<(f64, usize)>,
}

fn train_cfg(epochs: usize, protocol: Protocol, views: ViewMode) -> TrainConfig {
    TrainConfig {
        epochs,
        protocol,
        views,
        seed: SEED,
        ..TrainConfig::default()
    }
}

impl Shared {
    fn toy(&mut self) -> &Toy {
        self.toy.get_or_insert_with(|| {
            let t = Instant::now();
            let train = SynthConfig {
                count: TRAIN_COUNT,
                seed: SEED,
                ..SynthConfig::default()
            }
            .generate()
            .expect("train set");
            let val = SynthConfig {
                count: VAL_COUNT,
                seed: SEED + 1,
                first_id: 100_000,
                ..SynthConfig::default()
            }
            .generate()
            .expect("val set");
            let (init, net) = build_network::<f32>(&NetConfig::default(), SEED).expect("network");
            let mut trunk = init.clone();
            let log = train_stage_2d(&net, &mut trunk, &train, &val, &train_cfg(EPOCHS_2D, Protocol::Frame, ViewMode::Stereo))
                .expect("stage 2d");
            print!("{}", log.to_text());
            Toy {
                train,
                val,
                net,
                init,
                trunk,
                steps_2d: log.total_steps(),
                setup_secs: t.elapsed().as_secs_f64(),
            }
        })
    }

    fn two_stage(&mut self) -> (f64, usize) {
        if self.two_stage.is_none() {
            let toy = self.toy();
            let mut store = toy.trunk.clone();
            let log = train_stage_3d(
                &toy.net,
                &mut store,
                &toy.train,
                &toy.val,
                &train_cfg(EPOCHS_3D, Protocol::Frame, ViewMode::Stereo),
            )
            .expect("stage 3d");
            print!("{}", log.to_text());
            let est = Estimator::new(toy.net.clone(), store, ViewMode::Stereo);
            let err = eval_frame(&toy.val, &est, &EvalConfig::default()).expect("eval").mean_error_mm;
            self.two_stage = Some((err, toy.steps_2d + log.total_steps()));
        }
        self.two_stage.expect("set above")
    }
}

pub fn toy_training(shared: &mut Shared) -> Outcome {
    let t = Instant::now();
    let setup = shared.toy.as_ref().map_or(0.0, |toy| toy.setup_secs);
    let (trained, steps) = shared.two_stage();
    let toy = shared.toy();
    let cfg = EvalConfig::default();
    let untrained = Estimator::new(toy.net.clone(), toy.init.clone(), ViewMode::Stereo);
    let untrained = eval_frame(&toy.val, &untrained, &cfg).expect("eval").mean_error_mm;
    let median = MedianPosePredictor::fit(&toy.train, 64, 64, cfg.margin).expect("median");
    let median = eval_frame(&toy.val, &median, &cfg).expect("eval").mean_error_mm;
    let secs = t.elapsed().as_secs_f64() + setup;
    Outcome::new(
        trained * 3.0 <= untrained && trained < median && secs < 1800.0,
        format!(
            "{TRAIN_COUNT} train / {VAL_COUNT} val, 64x64 crops, {steps} steps: trained {trained:.2} mm, untrained {untrained:.2} mm (ratio {:.2}, >= 3), median pose {median:.2} mm; {secs:.0}s (< 1800s)",
            untrained / trained
        ),
    )
}

pub fn stereo_vs_mono_track(shared: &mut Shared) -> Outcome {
    let toy = shared.toy();
    let sequences = make_sequences(
        &SynthConfig {
            seed: SEED + 2,
            first_id: 200_000,
            ..SynthConfig::default()
        },
        &SequenceConfig {
            seed: SEED + 2,
            ..SequenceConfig::default()
        },
    )
    .expect("sequences");
    let track = TrackConfig {
        eval: EvalConfig::default(),
        perturb_first: true,
        seed: SEED + 2,
    };
    let mut results = Vec::new();
    for views in [ViewMode::Stereo, ViewMode::Mono] {
        let mut store = toy.trunk.clone();
        train_stage_3d(&toy.net, &mut store, &toy.train, &[], &train_cfg(EPOCHS_3D, Protocol::Track, views)).expect("stage 3d");
        let est = Estimator::new(toy.net.clone(), store, views);
        let r = eval_track(&sequences, &est, &track).expect("track");
        results.push((r.mean_error_mm, r.diverged_frames));
    }
    let ((stereo, sdiv), (mono, mdiv)) = (results[0], results[1]);
    let frames: usize = sequences.iter().map(Vec::len).sum();
    Outcome::new(
        stereo < mono && mdiv >= sdiv,
        format!(
            "{} sequences, {frames} frames, perturbed frame-0 box: stereo {stereo:.2} mm ({sdiv} diverged), mono {mono:.2} mm ({mdiv} diverged)",
            sequences.len()
        ),
    )
}

pub fn two_stage_vs_joint(shared: &mut Shared) -> Outcome {
    let (two_stage, steps) = shared.two_stage();
    let toy = shared.toy();
    let mut store = toy.init.clone();
    let cfg = TrainConfig {
        max_steps: Some(steps),
        ..train_cfg(EPOCHS_2D + EPOCHS_3D, Protocol::Frame, ViewMode::Stereo)
    };
    let log = train_joint(&toy.net, &mut store, &toy.train, &toy.val, &cfg).expect("joint");
    let est = Estimator::new(toy.net.clone(), store, ViewMode::Stereo);
    let joint = eval_frame(&toy.val, &est, &EvalConfig::default()).expect("eval").mean_error_mm;
    Outcome::new(
        two_stage <= joint && log.total_steps() == steps,
        format!("{steps} steps each: two-stage {two_stage:.2} mm, joint {joint:.2} mm ({} joint steps)", log.total_steps()),
    )
}
