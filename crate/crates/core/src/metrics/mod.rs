//! Image quality and classifier agreement metrics.

mod agreement;
mod psnr;
mod ssim;

pub use agreement::{
    auroc, cohens_kappa, converted_ratio, macro_auroc, ConfusionMatrix, QualityLabel, ScoredLabels,
};
pub use psnr::{mse, psnr};
pub use ssim::{ms_ssim, ssim, MsSsimParams, SsimParams, MS_SSIM_WEIGHTS};

#[cfg(test)]
mod tests;
