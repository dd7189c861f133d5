//! Isotropic merging of fine-tuned models.
//!
//! Task matrices (`θ_t − θ_0`) are combined per layer by averaging, plain
//! summation, or by flattening the spectrum of the summed update (Iso-C),
//! optionally after reserving orthogonal room for task-specific directions
//! (Iso-CTS). Alignment and spectrum metrics, the ISOT tensor container and a
//! synthetic benchmark harness live alongside the merge operators.

pub mod bundle;
pub mod isot;
pub mod merge;
pub mod metrics;
pub mod report;
pub mod spectral;
pub mod synth;

pub use bundle::{apply_delta, bundle_as_delta, bundle_delta, BundleError, Tensor, TensorBundle};
pub use isot::{load_bundle, save_bundle};
pub use merge::{
    default_alpha_grid, merge, merge_average, merge_iso_c, merge_iso_cts, merge_task_arithmetic,
    subspace_split, sweep_alpha, AlphaScore, AlphaSweep, LayerMeta, MergeError, MergeMethod,
    MergeOutcome, SweepError, TaskMatrixSet, DEFAULT_COMMON_FRACTION,
};
pub use metrics::{
    alignment_report, interpolate_spectrum, nai, pearson, sar, sar_avg, spectrum_report,
    truncate_isotropic, vec_cosine, AlignmentBasis, AlignmentReport, MetricError, SpectrumReport,
};
pub use spectral::{
    effective_rank, project_onto_topk, residual_against, thin_svd, whiten_columns, Matrix,
    SpectralError, SvdFactors, DEFAULT_EPSILON,
};
