//! Teacher-student adaptation of the pose heads to a new domain, with optional
//! confidence filtering of the unlabelled data.

mod config;
mod consistency;
mod filter;
mod run;
mod teacher;

pub use config::{AdaptConfig, Method, ThresholdPolicy};
pub use consistency::consistency_loss;
pub use filter::{confidence_filter, median_uncertainty, score_pool, PseudoLabel, UnlabelledPool};
pub use run::{
    compare_methods, curve_file_name, finetune_locnet, run_adaptation, subsample, write_curve,
    AdaptOutcome, AdaptRow,
};
pub use teacher::{ema_update, TeacherStudent};
