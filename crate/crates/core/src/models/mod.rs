//! The frozen tabular target and the trainable neural drafter.

mod checkpoint;
mod drafter;
mod optim;
mod target;

pub use checkpoint::{checkpoint_load, checkpoint_save, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use drafter::{logprob_upstream, sft_step, DrafterOutput, DrafterParameters, DrafterShape};
pub use optim::WarmupSchedule;
pub use target::{fit_tabular_target, DraftPolicy, FeatureVector, TabularTarget, TargetAdapter};
