//! Training stages, baseline evaluation and the meta-test protocol.

mod episodic;
mod eval;
mod model;
mod train;

pub use episodic::{pseudo_split, MetaHead};
pub use eval::{
    dccdi_episode, evaluate_baseline, meta_test_dccdi, run_episodes, BaselineHead, DccdiParams, EvalParams,
    EvalReport, FuseMode, DEFAULT_ADAPT_LR, DEFAULT_ADAPT_STEPS, DEFAULT_OUTPUT_DIM, DEFAULT_TEXT_SCALE,
};
pub use model::{Model, ModelShape, DEFAULT_RELATION_HIDDEN};
pub use train::{
    stage1_train, stage2_train, Stage1Params, Stage2Params, TraceRecord, DEFAULT_INNER_LR, DEFAULT_INNER_STEPS,
    DEFAULT_OUTER_LR,
};
