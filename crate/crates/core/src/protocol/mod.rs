//! Training stages, evaluation protocols and the speed benchmark.

pub mod augment;
pub mod bench;
pub mod eval;
pub mod track;
pub mod train;

pub use augment::{augment, AugDraw, AugPolicy, Augmentation, Jitter, Protocol, Stage};
pub use bench::{bench_fps, mac_count, BenchRow, BenchTable, MacCount};
pub use eval::{eval_frame, EvalConfig, EvalReport, FrameInput, FrameRecord, MedianPosePredictor, OraclePredictor, Predictor};
pub use track::{eval_track, make_sequences, perturb_init, SequenceConfig, TrackConfig};
pub use train::{
    make_example, record_loss, train, train_joint, train_stage_2d, train_stage_3d, validation_loss, EpochLog, Example, Objective,
    TrainConfig, TrainLog,
};
