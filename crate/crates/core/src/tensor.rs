//! Dense rank-4 storage, the seeded generator and the parameter
//! distributions random nets draw from.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proxy::{norm_cdf, norm_pdf};

/// Shape of an activation tensor in (sample, height, width, channel) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Shape { n, h, w, c }
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial positions per sample.
    pub fn spatial(&self) -> usize {
        self.h * self.w
    }

    /// Entries per sample.
    pub fn per_sample(&self) -> usize {
        self.h * self.w * self.c
    }
}

/// Activations laid out row-major as (sample, height, width, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl ActivationTensor {
    /// Rejects data whose length disagrees with `shape` or that holds
    /// non-finite entries.
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} ({} entries)",
                data.len(),
                shape,
                shape.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Parameter(format!("entry {i} is not finite")));
        }
        Ok(ActivationTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        ActivationTensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        ActivationTensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Builds a tensor by evaluating `f(sample, row, col, channel)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for i in 0..shape.h {
                for j in 0..shape.w {
                    for c in 0..shape.c {
                        data.push(f(n, i, j, c));
                    }
                }
            }
        }
        ActivationTensor::new(shape, data)
    }

    /// Internal constructor for library operations whose output is finite
    /// by construction.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        debug_assert!(data.iter().all(|x| x.is_finite()));
        ActivationTensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, i: usize, j: usize, c: usize) -> usize {
        ((n * self.shape.h + i) * self.shape.w + j) * self.shape.c + c
    }

    #[inline]
    pub fn get(&self, n: usize, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.index(n, i, j, c)]
    }

    /// Entries of one sample, (height, width, channel) order.
    pub fn sample(&self, n: usize) -> &[f64] {
        let s = self.shape.per_sample();
        &self.data[n * s..(n + 1) * s]
    }

    /// Values of channel `c` in sample `n`, one per spatial position.
    pub fn instance(&self, n: usize, c: usize) -> Vec<f64> {
        self.sample(n).iter().skip(c).step_by(self.shape.c).copied().collect()
    }

    /// All values of channel `c` across samples and positions.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.shape.c).copied().collect()
    }

    /// Multiplies every entry by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        ActivationTensor::new(self.shape, self.data.iter().map(|x| x * k).collect())
    }
}

/// Convolution weights laid out row-major as (kh, kw, c_in, c_out).
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    kh: usize,
    kw: usize,
    c_in: usize,
    c_out: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn new(kh: usize, kw: usize, c_in: usize, c_out: usize, data: Vec<f64>) -> Result<Self> {
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "kernel spatial size must be odd, got {kh}x{kw}"
            )));
        }
        if c_in == 0 || c_out == 0 {
            return Err(Error::Shape("kernel channel counts must be positive".into()));
        }
        if data.len() != kh * kw * c_in * c_out {
            return Err(Error::Shape(format!(
                "kernel data length {} does not match ({kh},{kw},{c_in},{c_out})",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("kernel holds non-finite entries".into()));
        }
        Ok(Kernel {
            kh,
            kw,
            c_in,
            c_out,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.kh, self.kw, self.c_in, self.c_out)
    }

    pub fn fan_in(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, dy: usize, dx: usize, ci: usize, co: usize) -> f64 {
        self.data[((dy * self.kw + dx) * self.c_in + ci) * self.c_out + co]
    }

    /// The fan-in entries feeding output channel `co`.
    pub fn fan_in_slice(&self, co: usize) -> Vec<f64> {
        self.data.iter().skip(co).step_by(self.c_out).copied().collect()
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Kernel::new(
            self.kh,
            self.kw,
            self.c_in,
            self.c_out,
            self.data.iter().map(|x| x * k).collect(),
        )
    }
}

/// Per-channel affine parameters of the activation step.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ChannelParams {
    pub fn new(gamma: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(Error::Shape(format!(
                "gamma has {} channels, beta has {}",
                gamma.len(),
                beta.len()
            )));
        }
        Ok(ChannelParams { gamma, beta })
    }

    /// gamma = 1, beta = 0.
    pub fn identity(channels: usize) -> Self {
        ChannelParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
        }
    }

    pub fn uniform(channels: usize, gamma: f64, beta: f64) -> Self {
        ChannelParams {
            gamma: vec![gamma; channels],
            beta: vec![beta; channels],
        }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// Seeded generator: ChaCha with 8 rounds, seeded through
/// `ChaCha8Rng::seed_from_u64`, with independent 64-bit stream ids.
/// Gaussian draws use the ziggurat sampler of `rand_distr`.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng::with_stream(seed, 0)
    }

    /// A generator on stream `stream` of `seed`; distinct streams never
    /// overlap.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

/// Sampling distribution for random-net parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Normal { mean: f64, std: f64 },
    /// Normal(mean, std) conditioned on [lo, hi] by rejection. The bounds
    /// are absolute and the std is not renormalized after truncation.
    TruncatedNormal { mean: f64, std: f64, lo: f64, hi: f64 },
    Constant { value: f64 },
}

impl Distribution {
    pub fn normal(mean: f64, std: f64) -> Self {
        Distribution::Normal { mean, std }
    }

    /// Truncated at two standard deviations either side of the mean.
    pub fn truncated_two_sigma(mean: f64, std: f64) -> Self {
        Distribution::TruncatedNormal {
            mean,
            std,
            lo: mean - 2.0 * std,
            hi: mean + 2.0 * std,
        }
    }

    pub fn constant(value: f64) -> Self {
        Distribution::Constant { value }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match *self {
            Distribution::Normal { mean, std } => {
                if !finite(&[mean, std]) || std < 0.0 {
                    return Err(Error::Parameter(format!(
                        "normal needs finite mean and std >= 0, got ({mean}, {std})"
                    )));
                }
            }
            Distribution::TruncatedNormal { mean, std, lo, hi } => {
                if !finite(&[mean, std, lo, hi]) || std < 0.0 {
                    return Err(Error::Parameter(format!(
                        "truncated normal needs finite parameters and std >= 0, got ({mean}, {std}, {lo}, {hi})"
                    )));
                }
                if lo >= hi {
                    return Err(Error::Parameter(format!(
                        "truncated normal needs lo < hi, got [{lo}, {hi}]"
                    )));
                }
                let mass = if std == 0.0 {
                    if (lo..=hi).contains(&mean) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    norm_cdf((hi - mean) / std) - norm_cdf((lo - mean) / std)
                };
                if mass < 1e-6 {
                    return Err(Error::Parameter(format!(
                        "truncation interval [{lo}, {hi}] holds too little mass ({mass:e}) for rejection sampling"
                    )));
                }
            }
            Distribution::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::Parameter(format!("constant {value} is not finite")));
                }
            }
        }
        Ok(())
    }

    /// E[X²] of the distribution, in closed form.
    pub fn second_moment(&self) -> f64 {
        match *self {
            Distribution::Normal { mean, std } => mean * mean + std * std,
            Distribution::Constant { value } => value * value,
            Distribution::TruncatedNormal { mean, std, lo, hi } => {
                if std == 0.0 {
                    return mean * mean;
                }
                let a = (lo - mean) / std;
                let b = (hi - mean) / std;
                let z = norm_cdf(b) - norm_cdf(a);
                let (pa, pb) = (norm_pdf(a), norm_pdf(b));
                let shift = (pa - pb) / z;
                let m = mean + std * shift;
                let var = std * std * (1.0 + (a * pa - b * pb) / z - shift * shift);
                var + m * m
            }
        }
    }

    fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            Distribution::Normal { mean, std } => mean + std * rng.standard_normal(),
            Distribution::Constant { value } => value,
            Distribution::TruncatedNormal { mean, std, lo, hi } => loop {
                let x = mean + std * rng.standard_normal();
                if (lo..=hi).contains(&x) {
                    break x;
                }
            },
        }
    }
}

/// `n` i.i.d. draws from `dist`.
pub fn sample(dist: &Distribution, rng: &mut Rng, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Parameter("sample count must be at least 1".into()));
    }
    dist.validate()?;
    Ok((0..n).map(|_| dist.draw(rng)).collect())
}

/// A kernel of i.i.d. draws from `dist`, each divided by the square root
/// of the fan-in `kh·kw·c_in`.
pub fn fan_in_scaled_kernel(
    dist: &Distribution,
    rng: &mut Rng,
    shape: (usize, usize, usize, usize),
) -> Result<Kernel> {
    let (kh, kw, c_in, c_out) = shape;
    let count = kh * kw * c_in * c_out;
    if count == 0 {
        return Err(Error::Shape(format!("kernel shape {shape:?} is empty")));
    }
    let scale = 1.0 / ((kh * kw * c_in) as f64).sqrt();
    let mut data = sample(dist, rng, count)?;
    for x in &mut data {
        *x *= scale;
    }
    Kernel::new(kh, kw, c_in, c_out, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples() {
        let mut rng = Rng::new(1);
        assert_eq!(sample(&Distribution::constant(1.0), &mut rng, 3).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn zero_count_rejected() {
        let mut rng = Rng::new(1);
        assert!(sample(&Distribution::constant(1.0), &mut rng, 0).is_err());
    }

    #[test]
    fn non_finite_parameters_rejected() {
        let mut rng = Rng::new(1);
        for d in [
            Distribution::normal(f64::NAN, 1.0),
            Distribution::normal(0.0, -1.0),
            Distribution::TruncatedNormal { mean: 0.0, std: 1.0, lo: 1.0, hi: -1.0 },
            Distribution::TruncatedNormal { mean: 0.0, std: 1.0, lo: 40.0, hi: 41.0 },
            Distribution::constant(f64::INFINITY),
        ] {
            assert!(matches!(sample(&d, &mut rng, 4), Err(Error::Parameter(_))), "{d:?}");
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = Rng::new(7);
        let xs = sample(&Distribution::normal(0.0, 0.2), &mut rng, 1_000_000).unwrap();
        let (m, v) = crate::stats::mean_var(&xs);
        assert!(m.abs() < 1e-3, "mean {m}");
        assert!((v.sqrt() - 0.2).abs() < 1e-2);
    }

    #[test]
    fn truncated_normal_support_and_std() {
        let mut rng = Rng::new(11);
        let d = Distribution::TruncatedNormal { mean: 0.0, std: 1.0, lo: -2.0, hi: 2.0 };
        let xs = sample(&d, &mut rng, 1_000_000).unwrap();
        assert!(xs.iter().all(|x| (-2.0..=2.0).contains(x)));
        let (_, v) = crate::stats::mean_var(&xs);
        // Quadrature oracle for the truncated std: see tests/oracles.rs.
        assert!((v.sqrt() - 0.8796).abs() < 2e-2, "std {}", v.sqrt());
        assert!((d.second_moment() - 0.8796f64.powi(2)).abs() < 1e-3);
    }

    #[test]
    fn same_seed_same_stream() {
        let d = Distribution::normal(0.0, 1.0);
        let a = sample(&d, &mut Rng::new(42), 1000).unwrap();
        let b = sample(&d, &mut Rng::new(42), 1000).unwrap();
        assert_eq!(a, b);
        let c = sample(&d, &mut Rng::with_stream(42, 1), 1000).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn constant_kernel_is_fan_in_scaled() {
        let k = fan_in_scaled_kernel(&Distribution::constant(1.0), &mut Rng::new(0), (3, 3, 4, 2)).unwrap();
        assert!(k.data().iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn wide_kernel_entry_std() {
        let k = fan_in_scaled_kernel(&Distribution::normal(0.0, 1.0), &mut Rng::new(3), (3, 3, 1024, 1024)).unwrap();
        let (_, v) = crate::stats::mean_var(k.data());
        let target = 1.0 / (9.0f64 * 1024.0).sqrt();
        assert!((v.sqrt() / target - 1.0).abs() < 0.05);
    }

    #[test]
    fn unit_fan_in_kernel_std_over_seeds() {
        let xs: Vec<f64> = (0..20_000)
            .map(|s| fan_in_scaled_kernel(&Distribution::normal(0.0, 1.0), &mut Rng::new(s), (1, 1, 1, 1)).unwrap().data()[0])
            .collect();
        let (_, v) = crate::stats::mean_var(&xs);
        assert!((v.sqrt() - 1.0).abs() < 0.03);
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        assert!(ActivationTensor::new(Shape::new(1, 2, 2, 1), vec![0.0; 3]).is_err());
        assert!(ActivationTensor::new(Shape::new(1, 1, 1, 1), vec![f64::NAN]).is_err());
        assert!(Kernel::new(2, 3, 1, 1, vec![0.0; 6]).is_err());
        assert!(ChannelParams::new(vec![1.0], vec![]).is_err());
    }
}
