//! Power decomposition of activations and channel-wise linearity.
//!
//! For channel `c`, with `μ_{x,c}` and `σ_{x,c}` the spatial mean and
//! population std of sample `x`:
//!
//! ```text
//! P_c = E_x[μ_{x,c}]² + Var_x[μ_{x,c}] + E_x[σ_{x,c}]² + Var_x[σ_{x,c}]
//!     =      p1      +       p2       +      p3      +       p4
//! ```
//!
//! All expectations are over the uniform empirical distribution of the
//! batch (population convention).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Activation;
use crate::stats::{mean_square, pairwise_sum, Moments};
use crate::tensor::ActivationTensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerTerms {
    pub p_total: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
}

impl PowerTerms {
    pub fn sum_of_terms(&self) -> f64 {
        self.p1 + self.p2 + self.p3 + self.p4
    }

    /// `(P − P1) / P`, zero when `P = 0`.
    pub fn rho(&self) -> f64 {
        if self.p_total == 0.0 {
            0.0
        } else {
            (self.p_total - self.p1) / self.p_total
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDecomposition {
    pub per_channel: Vec<PowerTerms>,
    /// Channel averages of the per-channel terms.
    pub layer: PowerTerms,
    pub rho_ratio: f64,
}

/// Four-term power decomposition of `y`, per channel and averaged over
/// channels.
pub fn power_decomposition(y: &ActivationTensor) -> Result<PowerDecomposition> {
    let sh = y.shape();
    if sh.n < 2 {
        return Err(Error::InsufficientData(format!(
            "power decomposition needs at least 2 samples, got {}",
            sh.n
        )));
    }
    if sh.spatial() == 0 || sh.c == 0 {
        return Err(Error::Shape(format!("empty tensor {sh:?}")));
    }

    let mut per_channel = Vec::with_capacity(sh.c);
    let mut means = vec![0.0; sh.n];
    let mut stds = vec![0.0; sh.n];
    for c in 0..sh.c {
        for n in 0..sh.n {
            let m = Moments::of_slice(&y.instance(n, c));
            means[n] = m.mean;
            stds[n] = m.std();
        }
        let mu = Moments::of_slice(&means);
        let sigma = Moments::of_slice(&stds);
        per_channel.push(PowerTerms {
            p_total: mean_square(&y.channel(c)),
            p1: mu.mean * mu.mean,
            p2: mu.variance(),
            p3: sigma.mean * sigma.mean,
            p4: sigma.variance(),
        });
    }

    let avg = |f: fn(&PowerTerms) -> f64| {
        let v: Vec<f64> = per_channel.iter().map(f).collect();
        pairwise_sum(&v) / v.len() as f64
    };
    let layer = PowerTerms {
        p_total: avg(|t| t.p_total),
        p1: avg(|t| t.p1),
        p2: avg(|t| t.p2),
        p3: avg(|t| t.p3),
        p4: avg(|t| t.p4),
    };
    Ok(PowerDecomposition {
        rho_ratio: layer.rho(),
        per_channel,
        layer,
    })
}

/// Collapse ratio `(P − P1) / P` at layer level; zero when `P = 0`.
pub fn rho_ratio(d: &PowerDecomposition) -> f64 {
    d.layer.rho()
}

/// Per-channel least-squares fit of `phi(ỹ)` by `λ_c ỹ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFitReport {
    pub lambda: Vec<f64>,
    /// Per-channel `P_c(phi(ỹ) − λ_c ỹ) / P_c(phi(ỹ))`.
    pub channel_residual: Vec<f64>,
    /// `P(phi(ỹ) − λ ỹ) / P(phi(ỹ))` at layer level.
    pub residual_ratio: f64,
}

/// Channel-wise linear best fit of `phi(y_tilde)` using `y_tilde`.
pub fn linear_best_fit(y_tilde: &ActivationTensor, phi: Activation) -> LinearFitReport {
    let c = y_tilde.shape().c;
    let mut lambda = Vec::with_capacity(c);
    let mut channel_residual = Vec::with_capacity(c);
    let mut residual_power = Vec::with_capacity(c);
    let mut phi_power = Vec::with_capacity(c);
    for ch in 0..c {
        let u = y_tilde.channel(ch);
        let f: Vec<f64> = u.iter().map(|&v| phi.apply(v)).collect();
        let cross: Vec<f64> = u.iter().zip(&f).map(|(a, b)| a * b).collect();
        let uu = mean_square(&u);
        // On a single-signed channel a homogeneous phi is exactly linear.
        let one_sided = match phi.slopes() {
            Some((a_pos, _)) if u.iter().all(|&v| v >= 0.0) => Some(a_pos),
            Some((_, a_neg)) if u.iter().all(|&v| v <= 0.0) => Some(a_neg),
            _ => None,
        };
        let lam = if uu == 0.0 {
            0.0
        } else if let Some(slope) = one_sided {
            slope
        } else {
            pairwise_sum(&cross) / u.len() as f64 / uu
        };
        let resid: Vec<f64> = u.iter().zip(&f).map(|(a, b)| b - lam * a).collect();
        let rp = mean_square(&resid);
        let fp = mean_square(&f);
        lambda.push(lam);
        channel_residual.push(if fp == 0.0 { 0.0 } else { rp / fp });
        residual_power.push(rp);
        phi_power.push(fp);
    }
    let total_phi = pairwise_sum(&phi_power);
    let residual_ratio = if total_phi == 0.0 {
        0.0
    } else {
        pairwise_sum(&residual_power) / total_phi
    };
    LinearFitReport {
        lambda,
        channel_residual,
        residual_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn constant_tensor_is_fully_collapsed() {
        let y = ActivationTensor::filled(Shape::new(3, 2, 2, 2), -1.5);
        let d = power_decomposition(&y).unwrap();
        for t in &d.per_channel {
            assert!((t.p1 - 2.25).abs() < 1e-12);
            assert_eq!((t.p2, t.p3, t.p4), (0.0, 0.0, 0.0));
        }
        assert_eq!(rho_ratio(&d), 0.0);
    }

    #[test]
    fn split_instance_means() {
        let y = ActivationTensor::from_fn(Shape::new(4, 2, 2, 1), |n, _, _, _| if n % 2 == 0 { 1.0 } else { -1.0 })
            .unwrap();
        let t = power_decomposition(&y).unwrap().per_channel[0];
        assert!(t.p1.abs() < 1e-15);
        assert!((t.p2 - 1.0).abs() < 1e-15);
        assert_eq!((t.p3, t.p4), (0.0, 0.0));
    }

    #[test]
    fn rho_arithmetic() {
        let t = PowerTerms { p_total: 1.0, p1: 0.75, p2: 0.05, p3: 0.15, p4: 0.05 };
        assert!((t.rho() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn single_sample_is_insufficient() {
        let y = ActivationTensor::filled(Shape::new(1, 2, 2, 1), 1.0);
        assert!(matches!(power_decomposition(&y), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn positive_channel_is_linear_under_relu() {
        let y = ActivationTensor::from_fn(Shape::new(3, 2, 2, 1), |n, i, j, _| 0.1 + (n + i * 2 + j) as f64).unwrap();
        let r = linear_best_fit(&y, Activation::Relu);
        assert_eq!(r.lambda[0], 1.0);
        assert_eq!(r.channel_residual[0], 0.0);
    }

    #[test]
    fn symmetric_two_point_channel_under_relu() {
        let y = ActivationTensor::new(Shape::new(2, 1, 2, 1), vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        let r = linear_best_fit(&y, Activation::Relu);
        assert!((r.lambda[0] - 0.5).abs() < 1e-15);
        assert!((r.residual_ratio - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_channel_conventions() {
        let y = ActivationTensor::zeros(Shape::new(2, 1, 2, 1));
        let r = linear_best_fit(&y, Activation::Relu);
        assert_eq!((r.lambda[0], r.residual_ratio), (0.0, 0.0));
    }
}
