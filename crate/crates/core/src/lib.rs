//! Desk-scale robot utility model pipeline: demonstration logs, relative
//! actions, a residual-VQ behavior policy, and a self-critique retry loop
//! evaluated in parameterized 2D task environments.

mod binfmt;
pub mod datalog;
pub mod demos;
pub mod experiment;
pub mod geom;
pub mod orchestrator;
pub mod policy;
pub mod replay;
pub mod rvq;
pub mod sim2d;
pub mod teleop;

pub use datalog::{EpisodeLog, EpisodeMeta, ResampledStep, Source, TrainingPair};
pub use experiment::{ExperimentConfig, TrainedModel};
pub use geom::{Delta2, Delta3, Pose2, Pose3, Quat, RelAction2, RelAction3};
pub use orchestrator::critic::{Critic, Verdict};
pub use orchestrator::{EpisodeResult, RetryPolicy, RunConfig};
pub use policy::{PolicyArch, PolicyParams, Variant};
pub use rvq::Codebook;
pub use sim2d::{EnvSpec, Mode, SimState, Task};
