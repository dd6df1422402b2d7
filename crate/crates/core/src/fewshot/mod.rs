//! Episodic task construction, the synthetic two-view generator and dataset
//! files.

mod dataset;
mod episode;
mod synth;

pub use dataset::{Dataset, MultimodalSample};
pub use episode::{episode_seed, mix_seed, sample_task, Episode, DEFAULT_QUERIES_PER_CLASS};
pub use synth::{correlated_pair, gen_synth, GroundTruth, SynthConfig};
