//! Adaptive-bandwidth joint source-channel coding (JSCC) for images over
//! complex AWGN channels.
//!
//! A single Swin-transformer encoder/decoder pair serves every point on a
//! bandwidth-ratio grid `rho_l = l * rho_1` and an SNR interval: the encoder
//! always emits a full-rate codeword, a masking step keeps the first
//! `rho_l * N` complex symbols worth of coordinates, and the receiver
//! zero-pads before decoding. Both networks are conditioned on the pair
//! `(snr_db, rho_l)` through a learned side-info embedding, so one set of
//! weights covers the whole operating region. Training balances the grid
//! points with dynamic weight assignment: each level's loss weight grows with
//! its PSNR gap to a non-adaptive upper-bound model trained for that level
//! alone.
//!
//! Module map:
//! - [`config`]: experiment file format, validation, derived dimensions
//! - [`nn`]: deterministic parameter store, dense/layer-norm/MLP primitives, Adam
//! - [`swin`]: windowed-attention backbone (block pairs, merge, divide)
//! - [`codec`]: encoder/decoder, codeword masking and zero-padding
//! - [`channel`]: power normalization and the complex AWGN channel
//! - [`metrics`]: MSE/PSNR on the 0-255 pixel scale
//! - [`dwa`]: dynamic weight assignment policy and upper-bound registry
//! - [`data`]: CIFAR-10 binary loader and a seeded synthetic corpus
//! - [`trainer`]: training loops (adaptive + per-level bounds), logging
//! - [`checkpoint`]: safetensors snapshots keyed by config hash
//! - [`eval`]: grid sweeps, result tables, reports
//! - [`baseline`]: capacity-based bit budgets and the separation baseline
//! - [`plot`]: small self-contained SVG plots

pub mod baseline;
pub mod channel;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod data;
pub mod dwa;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod swin;
pub mod trainer;

pub use error::{Error, Result};
