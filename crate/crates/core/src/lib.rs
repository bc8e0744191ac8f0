//! Boundary-aware 3D multi-organ segmentation toolkit.
//!
//! The crate trains encoder-decoder networks (UNet, UNet++, Attention-UNet)
//! to segment dense 3D label volumes, optionally with an auxiliary
//! organ-boundary prediction task attached in one of two hard-parameter-sharing
//! topologies:
//!
//! * **TSOL** — a single shared encoder-decoder with two task-specific
//!   1x1x1 output heads (region softmax, boundary sigmoid);
//! * **TSD** — one shared encoder with two task-specific decoders.
//!
//! Everything runs on the CPU. Hot inner loops (convolutions, morphology,
//! distance transforms, resampling) are data-parallel via rayon when the
//! default `parallel` feature is enabled and fall back to sequential loops
//! without it. Results are bit-identical either way: work is split into
//! fixed chunks and reductions keep a fixed summation order.
//!
//! Modules, bottom-up:
//!
//! * [`volume`] — dense volume containers, one-hot encoding, cropping,
//!   resampling, argmax decoding.
//! * [`io`] — the portable volume format (JSON sidecar + raw little-endian
//!   blob, x fastest).
//! * [`morphology`] — binary erosion, boundary extraction, exact Euclidean
//!   distance transform, trimap bands.
//! * [`graph`] — declarative layer graphs for the model zoo, shape
//!   inference, and backend-free parameter counting.
//! * [`nn`] — the tensor backend that executes a layer graph (forward,
//!   backward, parameter store).
//! * [`losses`] — multi-class dice loss, boundary binary cross-entropy,
//!   the lambda-weighted combined objective, and finite-difference checks.
//! * [`phantom`] — synthetic ellipsoid phantoms for desk-scale experiments.
//! * [`data`] — manifests, preprocessing (crop -> resample -> boundary),
//!   split management.
//! * [`training`] — Adam training loop, learning-rate decay, checkpointing,
//!   lambda grid search, multi-run aggregation.
//! * [`evaluation`] — dice / recall / precision / average Hausdorff
//!   distance, trimap-band dice curves, report aggregation.

pub mod data;
pub mod evaluation;
pub mod graph;
pub mod io;
pub mod losses;
pub mod morphology;
pub mod nn;
pub mod parallel;
pub mod phantom;
pub mod training;
pub mod volume;

mod error;
mod rand_util;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Derives independent sub-seeds from a base seed (splitmix64 step).
///
/// Used everywhere a reproducible stream family is needed: per-run seeds in
/// multi-run aggregation, per-parameter init streams, per-epoch shuffles.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
