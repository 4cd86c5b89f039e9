//! Speaker normalization: diagonal GMM universal background models and
//! per-speaker VTLN warp estimation.

mod gmm;
mod vtln;

pub use gmm::{
    gmm_loglike, train_ubm, train_ubm_with_trace, DiagGmm, EmTrace, UbmOptions,
    VARIANCE_FLOOR_FRACTION,
};
pub use vtln::{
    estimate_warps, format_warps, load_warps, parse_warps, save_warps, select_warp, NormType,
    VtlnOptions, WarpEstimate,
};
