//! Wavelet encoder-decoder CNN reconstruction of undersampled MRI.
//!
//! The crate is `no_std` with `alloc`. The default `std` feature adds rayon
//! parallelism across batch samples and runtime SIMD detection for the GEMM
//! kernels; results are identical either way.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod kspace;
pub mod metrics;
pub mod model;
pub mod optim;
mod parallel;
pub mod real;
pub mod stats;
pub mod tensor;
pub mod wavelet;

pub use autodiff::{Graph, NodeId, NormStats};
pub use error::{Error, Result};
pub use fft::{fft2c, ifft2c, ComplexGrid};
pub use kspace::{FidelityConfig, Lambda, SamplingMask};
pub use metrics::{ImageMetrics, MetricSummary};
pub use model::{Cascade, CascadeConfig, Checkpoint, Network, TrainConfig, Wcnn, WcnnConfig};
pub use optim::{Adam, Param};
pub use real::Real;
pub use tensor::Tensor;
pub use wavelet::SubbandSet;
