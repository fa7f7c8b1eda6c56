//! Noise-robust training strategies and their shared primitives.

mod cdr;
mod config;
mod drivers;
mod gmm;
mod primitives;
mod state;
mod transition;

pub use cdr::{cdr_partition, mask_gradients};
pub use config::{Hyperparams, MedSslToggles, MethodConfig, MethodKind};
pub use drivers::run_epoch;
pub use gmm::{gmm2_fit, GmmFit};
pub use primitives::{
    class_thresholds, entropy_reg, keep_schedule, mixup, mixup_with_lambda, rce_loss, rce_loss_with_floor, sce_loss,
    sharpen, small_loss_select, smooth_labels, sym_kl,
};
pub use state::{EpochReport, SelectionRecord, Standardizer, TrainData, TrainSettings, TrainState};
pub use transition::{
    project_row_stochastic, trevision_estimate, volmin_loss, volmin_transition_grad, TransitionParam,
};
