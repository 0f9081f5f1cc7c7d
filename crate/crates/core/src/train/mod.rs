//! Two-stage avatar fitting: losses, image metrics, the Adam optimizer,
//! trace recording, and the stage drivers.
//!
//! Stage I ([`fit_stage1`]) fits the signed-distance lattice and its color
//! field against posed images plus mesh regularizers; stage II
//! ([`fit_stage2`]) fits the Gaussian set and its residual fields against
//! the same kind of image evidence, with periodic density splitting.

mod losses;
mod metrics;
mod optimizer;
mod stage1;
mod stage2;
mod trace;

pub use losses::{offset_loss, rgb_loss, LossWeights};
pub use metrics::{psnr, ssim, ssim_with_gradient, PSNR_CAP};
pub use optimizer::{adam_step, AdamState, OptimConfig};
pub use stage1::{
    fit_stage1, render_sdf_view, stage1_loss, Stage1Gradients, Stage1Problem, Stage1View,
};
pub use stage2::{
    fit_stage2, stage2_loss, SsimPatchProxy, Stage2Gradients, Stage2Problem, Stage2View,
};
pub use trace::{FitTrace, FitTraceRow, LossBreakdown, SplitEvent};
