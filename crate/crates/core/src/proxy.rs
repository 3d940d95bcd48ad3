//! Gaussian proxy machinery behind Proxy Normalization.
//!
//! The proxy for channel `c` is `Y_c ~ N(beta_tilde_c, (1 + gamma_tilde_c)^2)`.
//! Its moments after the affine map and nonlinearity are estimated on a
//! deterministic grid of midpoint quantiles `(i + 0.5) / n`, so the
//! normalizing constants never depend on the batch.

use crate::error::{Error, Result};
use crate::layers::Activation;
use crate::stats::mean_var;
use crate::tensor::{ActivationTensor, ChannelParams};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, accurate in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Φ⁻¹(p) for 0 < p < 1.
///
/// Wichura's AS241 (PPND16) rational approximation followed by one Newton
/// step against `erfc`. The upper half is mapped onto the lower half, so
/// `inv_norm_cdf(1 - p) == -inv_norm_cdf(p)` whenever `1 - p` is exact.
pub fn inv_norm_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("inv_norm_cdf needs 0 < p < 1, got {p}")));
    }
    if p > 0.5 {
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

fn lower_quantile(p: f64) -> f64 {
    let x = as241(p);
    // Newton on Φ(x) - p; in the lower half Φ(x) carries full relative
    // precision, so the step is well conditioned.
    let density = norm_pdf(x);
    if density > 0.0 {
        x - (norm_cdf(x) - p) / density
    } else {
        x
    }
}

#[rustfmt::skip]
fn as241(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * (((((((2.509_080_928_730_122_6e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4) * r + 4.592_195_393_154_987e4) * r
            + 1.373_169_376_550_946e4) * r + 1.971_590_950_306_551_4e3) * r
            + 1.331_416_678_917_843_8e2) * r + 3.387_132_872_796_366_5)
            / (((((((5.226_495_278_852_854e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4) * r + 2.121_379_430_158_659_7e4) * r
            + 5.394_196_021_424_751e3) * r + 6.871_870_074_920_579e2) * r
            + 4.231_333_070_160_091e1) * r + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1) * r + 1.270_458_252_452_368_4) * r
            + 3.647_848_324_763_204_5) * r + 5.769_497_221_460_691) * r
            + 4.630_337_846_156_545) * r + 1.423_437_110_749_683_6)
            / (((((((1.050_750_071_644_416_8e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2) * r + 1.481_039_764_274_800_7e-1) * r
            + 6.897_673_349_851e-1) * r + 1.676_384_830_183_803_8) * r
            + 2.053_191_626_637_759) * r + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3) * r + 2.653_218_952_657_612_3e-2) * r
            + 2.965_605_718_285_048_7e-1) * r + 1.784_826_539_917_291_3) * r
            + 5.463_784_911_164_114) * r + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5) * r + 7.868_691_311_456_133e-4) * r
            + 1.487_536_129_085_061_5e-2) * r + 1.369_298_809_227_358e-1) * r
            + 5.998_322_065_558_88e-1) * r + 1.0)
    };
    if q < 0.0 { -val } else { val }
}

/// Standard-normal midpoint quantiles `Φ⁻¹((i + 0.5) / n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    points: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Parameter(format!("quantile grid needs n >= 2, got {n}")));
        }
        let points = (0..n)
            .map(|i| inv_norm_cdf((i as f64 + 0.5) / n as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantileGrid { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Mean and population variance of `phi(gamma * y + beta)` with
    /// `y = mean + std * q` over the grid points `q`.
    pub fn moments(&self, phi: Activation, gamma: f64, beta: f64, mean: f64, std: f64) -> (f64, f64) {
        let values: Vec<f64> = self
            .points
            .iter()
            .map(|&q| phi.apply(gamma * (mean + std * q) + beta))
            .collect();
        mean_var(&values)
    }
}

/// Mean and population variance of `phi(gamma * Y + beta)` for
/// `Y ~ N(mean, std²)`, estimated on an `n`-point midpoint quantile grid.
pub fn proxy_moments(
    phi: Activation,
    gamma: f64,
    beta: f64,
    mean: f64,
    std: f64,
    n: usize,
) -> Result<(f64, f64)> {
    if !(std >= 0.0) {
        return Err(Error::Parameter(format!("proxy std must be >= 0, got {std}")));
    }
    Ok(QuantileGrid::new(n)?.moments(phi, gamma, beta, mean, std))
}

/// Parameters of the proxy-normalized activation step.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyParams {
    pub beta_tilde: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
    pub eps: f64,
    pub n_quantiles: usize,
}

impl ProxyParams {
    pub const DEFAULT_EPS: f64 = 0.03;
    pub const DEFAULT_QUANTILES: usize = 200;

    /// Additional parameters fixed at zero, so each proxy is N(0, 1).
    pub fn omitted(channels: usize) -> Self {
        ProxyParams::zeroed(channels, Self::DEFAULT_EPS, Self::DEFAULT_QUANTILES)
    }

    pub fn zeroed(channels: usize, eps: f64, n_quantiles: usize) -> Self {
        ProxyParams {
            beta_tilde: vec![0.0; channels],
            gamma_tilde: vec![0.0; channels],
            eps,
            n_quantiles,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.beta_tilde.len() != channels || self.gamma_tilde.len() != channels {
            return Err(Error::Shape(format!(
                "proxy parameters have lengths ({}, {}), tensor has {channels} channels",
                self.beta_tilde.len(),
                self.gamma_tilde.len()
            )));
        }
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::Parameter(format!("proxy eps must be finite and >= 0, got {}", self.eps)));
        }
        if self.n_quantiles < 2 {
            return Err(Error::Parameter(format!(
                "n_quantiles must be >= 2, got {}",
                self.n_quantiles
            )));
        }
        Ok(())
    }
}

/// Per-channel normalizing constants `(mean, 1 / sqrt(var + eps))`.
pub fn proxy_constants(
    params: &ChannelParams,
    phi: Activation,
    proxy: &ProxyParams,
) -> Result<Vec<(f64, f64)>> {
    proxy.validate(params.len())?;
    let grid = QuantileGrid::new(proxy.n_quantiles)?;
    (0..params.len())
        .map(|c| {
            let std = 1.0 + proxy.gamma_tilde[c];
            let (m, v) = grid.moments(phi, params.gamma[c], params.beta[c], proxy.beta_tilde[c], std.abs());
            let denom = v + proxy.eps;
            if !(denom > 0.0) {
                return Err(Error::DegenerateProxy { channel: c });
            }
            Ok((m, 1.0 / denom.sqrt()))
        })
        .collect()
}

/// Proxy-normalized activation:
/// `(phi(gamma_c y + beta_c) - E[phi(gamma_c Y_c + beta_c)]) / sqrt(Var[...] + eps)`.
pub fn pn_act(
    y: &ActivationTensor,
    params: &ChannelParams,
    phi: Activation,
    proxy: &ProxyParams,
) -> Result<ActivationTensor> {
    let shape = y.shape();
    if params.len() != shape.c {
        return Err(Error::Shape(format!(
            "channel params have {} channels, tensor has {}",
            params.len(),
            shape.c
        )));
    }
    let consts = proxy_constants(params, phi, proxy)?;
    let c = shape.c;
    let data = y
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i % c;
            let (m, inv) = consts[ch];
            (phi.apply(params.gamma[ch] * v + params.beta[ch]) - m) * inv
        })
        .collect();
    Ok(ActivationTensor::from_parts(shape, data))
}

/// Closed-form moments of `relu(Z)` for standard normal Z.
pub fn relu_gaussian_moments() -> (f64, f64) {
    (FRAC_1_SQRT_2PI, 0.5 - 0.5 / std::f64::consts::PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn median_is_zero() {
        assert_eq!(inv_norm_cdf(0.5).unwrap(), 0.0);
    }

    #[test]
    fn domain_errors() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(inv_norm_cdf(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn symmetry() {
        // Dyadic p keeps 1 - p exact.
        for p in (1..2048).map(|i| i as f64 / 4096.0).chain([2f64.powi(-40), 2f64.powi(-20)]) {
            let s = inv_norm_cdf(p).unwrap() + inv_norm_cdf(1.0 - p).unwrap();
            assert!(s.abs() < 1e-12, "p={p}: {s}");
        }
    }

    #[test]
    fn round_trips_through_cdf() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let x = inv_norm_cdf(p).unwrap();
            assert!((norm_cdf(x) - p).abs() < 1e-15, "p={p}");
        }
    }

    #[test]
    fn identity_grid_moments() {
        let (m, v) = proxy_moments(Activation::Identity, 1.0, 0.0, 0.0, 1.0, 200).unwrap();
        assert!(m.abs() < 1e-12);
        // Frozen from an independent evaluation of the 200-point midpoint grid.
        assert!((v - 0.993_596_223_574_696_2).abs() < 1e-9, "{v}");
    }

    #[test]
    fn affine_identity_grid() {
        let (m1, v1) = proxy_moments(Activation::Identity, 1.0, 0.0, 0.0, 1.0, 200).unwrap();
        let (m2, v2) = proxy_moments(Activation::Identity, 2.0, 3.0, 0.0, 1.0, 200).unwrap();
        assert!((m2 - 3.0 - 2.0 * m1).abs() < 1e-12);
        assert!((v2 - 4.0 * v1).abs() < 1e-12);
    }

    #[test]
    fn relu_grid_converges() {
        let (m, v) = proxy_moments(Activation::Relu, 1.0, 0.0, 0.0, 1.0, 20_000).unwrap();
        let (em, ev) = relu_gaussian_moments();
        assert!((m - em).abs() < 1e-3);
        assert!((v - ev).abs() < 1e-3);
    }

    #[test]
    fn grid_too_small() {
        assert!(proxy_moments(Activation::Relu, 1.0, 0.0, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn constant_channel_is_finite_with_eps() {
        let y = ActivationTensor::zeros(Shape::new(2, 2, 2, 1));
        let params = ChannelParams::uniform(1, 1.0, 1.0);
        let proxy = ProxyParams::zeroed(1, 0.03, 200);
        let z = pn_act(&y, &params, Activation::Relu, &proxy).unwrap();
        let (m, v) = proxy_moments(Activation::Relu, 1.0, 1.0, 0.0, 1.0, 200).unwrap();
        let expected = (1.0 - m) / (v + 0.03).sqrt();
        assert!(z.data().iter().all(|&x| (x - expected).abs() < 1e-15));
    }

    #[test]
    fn degenerate_proxy_is_an_error() {
        let y = ActivationTensor::zeros(Shape::new(2, 2, 2, 1));
        // gamma = 0 makes phi(gamma Y + beta) constant.
        let params = ChannelParams::uniform(1, 0.0, 1.0);
        let proxy = ProxyParams::zeroed(1, 0.0, 200);
        assert!(matches!(
            pn_act(&y, &params, Activation::Relu, &proxy),
            Err(Error::DegenerateProxy { channel: 0 })
        ));
    }
}
