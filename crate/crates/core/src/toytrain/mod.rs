//! Synthetic detection scenes and a linear decoupled head trained with the
//! assigners, loss schedule and optimizers of the sibling modules.

mod eval;
mod head;
mod model_io;
mod scene;
mod train;

pub use eval::{
    evaluate, evaluate_detections, EvalMetrics, ImageDetections, MATCH_IOU, SCORE_THRESHOLD, SMALL_AREA_RATIO,
};
pub use head::{
    assignment_candidates, decode_boxes, detections, forward, scene_loss, HeadOutput, SceneLoss, ToyHead, PRIOR_SIZE,
};
pub use model_io::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use scene::{generate_scene, generate_scenes, Difficulty, SceneLayout, SyntheticScene};
pub use train::{
    assign_scene, train, write_metrics_csv, AssignerKind, EpochMetrics, TrainConfig, TrainOutcome, Trainer,
    METRICS_HEADER,
};
