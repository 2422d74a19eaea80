//! Reconstruction of corporate yield surfaces (rating × tenor matrices) from
//! sparse observations.
//!
//! Three engines are provided: total variation inpainting ([`tv`]), thin
//! plate spline smoothing ([`tps`]) and denoising autoencoders ([`dae`],
//! built on the small network engine in [`neural`]). [`harness`] runs them
//! side by side under uniform and block masking and scores them with
//! [`metrics`].

pub mod dae;
pub mod harness;
pub mod masking;
pub mod metrics;
pub mod neural;
pub mod surface;
pub mod synthetic;
pub mod tps;
pub mod tv;

pub use masking::{CorruptionKind, CorruptionSpec, MaskError};
pub use metrics::MetricsReport;
pub use surface::{
    MaskedSurface, Matrix, RatingGrid, SurfaceDataset, SurfaceError, TenorGrid, YieldSurface,
};
pub use synthetic::SyntheticConfig;
pub use tps::{TpsError, TpsModel};
pub use tv::{TvConfig, TvResult};

/// Independent seed for sub-stream `stream` of `base` (SplitMix64 finaliser).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
