//! Normalization layers, Proxy Normalization and power-decomposition
//! diagnostics for seeded random convolutional nets.
//!
//! The pipeline of one layer is `conv_periodic → normalize → act` (or
//! `pn_act` in place of `act`). [`diagnostics`] measures how the power of
//! the activations splits between dataset, instance and pixel scales, and
//! [`verify`] turns those measurements into reproducible pass/fail
//! reports.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod ingest;
pub mod layers;
pub mod output;
pub mod proxy;
pub mod randomnet;
pub mod stats;
pub mod tensor;
pub mod verify;

pub use diagnostics::{linear_best_fit, power_decomposition, rho_ratio, LinearFitReport, PowerDecomposition, PowerTerms};
pub use error::{Error, Result};
pub use layers::{act, conv_periodic, normalize, weight_standardize, Activation, Norm, NormKind};
pub use proxy::{inv_norm_cdf, pn_act, proxy_moments, ProxyParams};
pub use randomnet::{build, forward, forward_streaming, LayerTrace, RandomNet, RandomNetConfig};
pub use tensor::{fan_in_scaled_kernel, sample, ActivationTensor, ChannelParams, Distribution, Kernel, Rng, Shape};
