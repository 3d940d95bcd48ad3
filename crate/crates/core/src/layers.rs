//! Convolution, normalization and activation steps of one layer, plus
//! kernel standardization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::mean_var;
use crate::tensor::{ActivationTensor, ChannelParams, Kernel, Shape};

/// Conditioning set of the normalization step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Per channel, over samples and positions.
    BatchNorm,
    /// Per sample, over positions and channels.
    LayerNorm,
    /// Per sample and channel, over positions.
    InstanceNorm,
    /// Per sample and group `c mod groups`, over positions and the
    /// group's channels.
    GroupNorm { groups: usize },
}

impl NormKind {
    pub fn label(&self) -> String {
        match self {
            NormKind::BatchNorm => "bn".into(),
            NormKind::LayerNorm => "ln".into(),
            NormKind::InstanceNorm => "in".into(),
            NormKind::GroupNorm { groups } => format!("gn{groups}"),
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    /// Accepts `bn`, `ln`, `in`, `gn<G>` and `gn:<G>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "bn" | "batch" | "batchnorm" => Ok(NormKind::BatchNorm),
            "ln" | "layer" | "layernorm" => Ok(NormKind::LayerNorm),
            "in" | "instance" | "instancenorm" => Ok(NormKind::InstanceNorm),
            _ => {
                let digits = s
                    .strip_prefix("gn:")
                    .or_else(|| s.strip_prefix("gn"))
                    .ok_or_else(|| Error::Config(format!("unknown norm {s:?}")))?;
                let groups = digits
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad group count in {s:?}")))?;
                if groups == 0 {
                    return Err(Error::Config("group count must be positive".into()));
                }
                Ok(NormKind::GroupNorm { groups })
            }
        }
    }
}

/// A normalizer: conditioning set plus the stability constant added to
/// the variance under the square root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub kind: NormKind,
    pub eps: f64,
}

impl Norm {
    pub const DEFAULT_EPS: f64 = 1e-6;

    pub fn new(kind: NormKind, eps: f64) -> Self {
        Norm { kind, eps }
    }

    pub fn exact(kind: NormKind) -> Self {
        Norm { kind, eps: 0.0 }
    }
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// `a_pos * max(u, 0) + a_neg * min(u, 0)`.
    TwoSlope { a_pos: f64, a_neg: f64 },
    /// `u * sigmoid(u)`.
    Swish,
}

impl Activation {
    #[inline]
    pub fn apply(&self, u: f64) -> f64 {
        match *self {
            Activation::Identity => u,
            Activation::Relu => u.max(0.0),
            Activation::TwoSlope { a_pos, a_neg } => {
                if u >= 0.0 {
                    a_pos * u
                } else {
                    a_neg * u
                }
            }
            Activation::Swish => u / (1.0 + (-u).exp()),
        }
    }

    /// Slopes `(phi(1), -phi(-1))` when the activation is positive
    /// homogeneous.
    pub fn slopes(&self) -> Option<(f64, f64)> {
        match *self {
            Activation::Identity => Some((1.0, 1.0)),
            Activation::Relu => Some((1.0, 0.0)),
            Activation::TwoSlope { a_pos, a_neg } => Some((a_pos, a_neg)),
            Activation::Swish => None,
        }
    }

    pub fn is_positive_homogeneous(&self) -> bool {
        self.slopes().is_some()
    }

    pub fn label(&self) -> String {
        match *self {
            Activation::Identity => "identity".into(),
            Activation::Relu => "relu".into(),
            Activation::TwoSlope { a_pos, a_neg } => format!("twoslope:{a_pos},{a_neg}"),
            Activation::Swish => "swish".into(),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// Accepts `identity`, `relu`, `swish` and `twoslope:<a_pos>,<a_neg>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "identity" | "id" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "swish" | "silu" => Ok(Activation::Swish),
            _ => {
                let rest = lower
                    .strip_prefix("twoslope:")
                    .ok_or_else(|| Error::Config(format!("unknown activation {s:?}")))?;
                let (a, b) = rest
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("twoslope needs two slopes, got {s:?}")))?;
                let parse = |t: &str| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad slope {t:?}")))
                };
                Ok(Activation::TwoSlope {
                    a_pos: parse(a)?,
                    a_neg: parse(b)?,
                })
            }
        }
    }
}

/// Output positions of one axis grouped by distinct wrapped tap offset.
/// On a periodic axis shorter than the kernel, several taps land on the
/// same input offset and their weights can be summed up front.
fn folded_taps(k: usize, len: usize) -> Vec<(usize, Vec<usize>)> {
    let half = (k / 2) as isize;
    let mut taps: Vec<(usize, Vec<usize>)> = Vec::new();
    for d in 0..k {
        let off = (d as isize - half).rem_euclid(len as isize) as usize;
        match taps.iter_mut().find(|(o, _)| *o == off) {
            Some((_, ds)) => ds.push(d),
            None => taps.push((off, vec![d])),
        }
    }
    taps
}

/// Cap on the im2col buffer, in f64 entries (~128 MiB).
const IM2COL_BUDGET: usize = 1 << 24;

/// Periodic (circular) convolution:
/// `x[n, i, j, co] = Σ w[dy, dx, ci, co] · z[n, (i·s + dy − kh/2) mod H, (j·s + dx − kw/2) mod W, ci]`.
pub fn conv_periodic(z: &ActivationTensor, w: &Kernel, stride: usize) -> Result<ActivationTensor> {
    let sh = z.shape();
    let (kh, kw, c_in, c_out) = w.shape();
    if sh.c != c_in {
        return Err(Error::Shape(format!(
            "input has {} channels, kernel expects {c_in}",
            sh.c
        )));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::Shape(format!("stride must be 1 or 2, got {stride}")));
    }
    if !sh.h.is_multiple_of(stride) || !sh.w.is_multiple_of(stride) || sh.h == 0 || sh.w == 0 {
        return Err(Error::Shape(format!(
            "spatial size {}x{} not divisible by stride {stride}",
            sh.h, sh.w
        )));
    }
    let (ho, wo) = (sh.h / stride, sh.w / stride);
    let out_shape = Shape::new(sh.n, ho, wo, c_out);
    if sh.n == 0 {
        return Ok(ActivationTensor::zeros(out_shape));
    }

    let rows = folded_taps(kh, sh.h);
    let cols = folded_taps(kw, sh.w);
    let taps = rows.len() * cols.len();
    let k_eff = taps * c_in;

    // Folded kernel, laid out (tap, c_in) x c_out.
    let mut folded = vec![0.0; k_eff * c_out];
    for (ty, (_, dys)) in rows.iter().enumerate() {
        for (tx, (_, dxs)) in cols.iter().enumerate() {
            let t = ty * cols.len() + tx;
            for &dy in dys {
                for &dx in dxs {
                    let src = &w.data()[(dy * kw + dx) * c_in * c_out..][..c_in * c_out];
                    let dst = &mut folded[t * c_in * c_out..][..c_in * c_out];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }

    let per_sample_rows = ho * wo;
    let chunk = (IM2COL_BUDGET / (per_sample_rows * k_eff).max(1)).clamp(1, sh.n);
    let mut out = vec![0.0; out_shape.len()];
    let mut cols_buf = vec![0.0; chunk * per_sample_rows * k_eff];
    let input = z.data();

    for start in (0..sh.n).step_by(chunk) {
        let count = chunk.min(sh.n - start);
        let m = count * per_sample_rows;
        for local in 0..count {
            let n = start + local;
            for i in 0..ho {
                for j in 0..wo {
                    let row = (local * ho + i) * wo + j;
                    let dst_row = &mut cols_buf[row * k_eff..(row + 1) * k_eff];
                    for (ty, (oy, _)) in rows.iter().enumerate() {
                        let yi = (i * stride + oy) % sh.h;
                        for (tx, (ox, _)) in cols.iter().enumerate() {
                            let xj = (j * stride + ox) % sh.w;
                            let src = ((n * sh.h + yi) * sh.w + xj) * c_in;
                            let t = ty * cols.len() + tx;
                            dst_row[t * c_in..(t + 1) * c_in].copy_from_slice(&input[src..src + c_in]);
                        }
                    }
                }
            }
        }
        let dst = &mut out[start * per_sample_rows * c_out..(start * per_sample_rows + m) * c_out];
        // SAFETY: all three buffers are dense row-major with the stated
        // dimensions: cols_buf is at least m x k_eff, folded is
        // k_eff x c_out and dst is exactly m x c_out.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k_eff,
                c_out,
                1.0,
                cols_buf.as_ptr(),
                k_eff as isize,
                1,
                folded.as_ptr(),
                c_out as isize,
                1,
                0.0,
                dst.as_mut_ptr(),
                c_out as isize,
                1,
            );
        }
    }
    ActivationTensor::new(out_shape, out)
}

/// Result of a normalization together with the number of conditioning
/// sets that had zero variance and were mapped to zero.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub tensor: ActivationTensor,
    pub degenerate_sets: usize,
}

/// Standardizes `values` in place; returns false when the set was
/// constant and `eps == 0`, in which case it is zeroed.
fn standardize(values: &mut [f64], eps: f64) -> bool {
    let first = values[0];
    let constant = values.iter().all(|&v| v == first);
    if constant && eps == 0.0 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return false;
    }
    let (mean, var) = mean_var(values);
    let inv = 1.0 / (var + eps).sqrt();
    values.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    true
}

/// `(x − μ_I) / sqrt(σ_I² + eps)` over the conditioning sets of `norm`.
/// A zero-variance set with `eps = 0` maps to zeros.
pub fn normalize(x: &ActivationTensor, norm: Norm) -> Result<ActivationTensor> {
    normalize_counted(x, norm).map(|n| n.tensor)
}

/// Like [`normalize`], also reporting how many sets hit the zero-variance
/// convention.
pub fn normalize_counted(x: &ActivationTensor, norm: Norm) -> Result<Normalized> {
    let sh = x.shape();
    if !(norm.eps >= 0.0) || !norm.eps.is_finite() {
        return Err(Error::Config(format!("norm eps must be finite and >= 0, got {}", norm.eps)));
    }
    if sh.is_empty() {
        return Err(Error::Shape(format!("cannot normalize empty tensor {sh:?}")));
    }
    let c = sh.c;
    let mut data = x.data().to_vec();
    let mut degenerate = 0;
    let mut scratch = Vec::new();

    // Gather the entries selected by `idx`, standardize, scatter back.
    let mut run = |data: &mut Vec<f64>, idx: &mut dyn Iterator<Item = usize>, scratch: &mut Vec<f64>| {
        let positions: Vec<usize> = idx.collect();
        scratch.clear();
        scratch.extend(positions.iter().map(|&p| data[p]));
        if !standardize(scratch, norm.eps) {
            degenerate += 1;
        }
        for (&p, &v) in positions.iter().zip(scratch.iter()) {
            data[p] = v;
        }
    };

    match norm.kind {
        NormKind::BatchNorm => {
            if sh.n * sh.spatial() < 2 {
                return Err(Error::InsufficientData(
                    "batch norm needs at least two entries per channel".into(),
                ));
            }
            for ch in 0..c {
                run(&mut data, &mut (ch..sh.len()).step_by(c), &mut scratch);
            }
        }
        NormKind::LayerNorm => {
            let per = sh.per_sample();
            for n in 0..sh.n {
                let slice = &mut data[n * per..(n + 1) * per];
                if !standardize(slice, norm.eps) {
                    degenerate += 1;
                }
            }
        }
        NormKind::InstanceNorm => {
            let per = sh.per_sample();
            for n in 0..sh.n {
                for ch in 0..c {
                    run(&mut data, &mut (n * per + ch..(n + 1) * per).step_by(c), &mut scratch);
                }
            }
        }
        NormKind::GroupNorm { groups } => {
            if groups == 0 || !c.is_multiple_of(groups) {
                return Err(Error::Config(format!(
                    "group count {groups} does not divide channel count {c}"
                )));
            }
            let per = sh.per_sample();
            for n in 0..sh.n {
                for g in 0..groups {
                    run(&mut data, &mut (n * per + g..(n + 1) * per).step_by(groups), &mut scratch);
                }
            }
        }
    }
    Ok(Normalized {
        tensor: ActivationTensor::from_parts(sh, data),
        degenerate_sets: degenerate,
    })
}

/// Affine transform `gamma_c · y + beta_c` per channel.
pub fn affine(y: &ActivationTensor, params: &ChannelParams) -> Result<ActivationTensor> {
    map_channels(y, params, |g, b, v| g * v + b)
}

/// Activation step `phi(gamma_c · y + beta_c)`.
pub fn act(y: &ActivationTensor, params: &ChannelParams, phi: Activation) -> Result<ActivationTensor> {
    map_channels(y, params, |g, b, v| phi.apply(g * v + b))
}

fn map_channels(
    y: &ActivationTensor,
    params: &ChannelParams,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<ActivationTensor> {
    let c = y.shape().c;
    if params.len() != c {
        return Err(Error::Shape(format!(
            "channel params have {} channels, tensor has {c}",
            params.len()
        )));
    }
    let data = y
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| f(params.gamma[i % c], params.beta[i % c], v))
        .collect();
    ActivationTensor::new(y.shape(), data)
}

/// Standardizes every output channel's fan-in slice to mean 0 and
/// population std 1, with no stability constant.
pub fn weight_standardize(w: &Kernel) -> Result<Kernel> {
    let (kh, kw, c_in, c_out) = w.shape();
    if w.fan_in() < 2 {
        return Err(Error::Shape(format!(
            "weight standardization needs fan-in >= 2, got {}",
            w.fan_in()
        )));
    }
    let mut data = w.data().to_vec();
    let mut slice = Vec::with_capacity(w.fan_in());
    for co in 0..c_out {
        slice.clear();
        slice.extend(data.iter().skip(co).step_by(c_out));
        let first = slice[0];
        if slice.iter().all(|&v| v == first) {
            return Err(Error::DegenerateKernel { channel: co });
        }
        let (mean, var) = mean_var(&slice);
        let inv = 1.0 / var.sqrt();
        for (k, v) in data.iter_mut().skip(co).step_by(c_out).enumerate() {
            *v = (slice[k] - mean) * inv;
        }
    }
    Kernel::new(kh, kw, c_in, c_out, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_channel(values: &[f64]) -> ActivationTensor {
        ActivationTensor::new(Shape::new(1, 1, values.len(), 1), values.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let z = ActivationTensor::from_fn(Shape::new(2, 3, 4, 3), |n, i, j, c| {
            (n * 31 + i * 7 + j * 3 + c) as f64 * 0.1 - 1.0
        })
        .unwrap();
        let mut data = vec![0.0; 9];
        for c in 0..3 {
            data[c * 3 + c] = 1.0;
        }
        let w = Kernel::new(1, 1, 3, 3, data).unwrap();
        assert_eq!(conv_periodic(&z, &w, 1).unwrap(), z);
    }

    #[test]
    fn constant_input_gives_kernel_sums() {
        let z = ActivationTensor::filled(Shape::new(1, 5, 5, 2), 1.5);
        let data: Vec<f64> = (0..9 * 2 * 3).map(|i| (i as f64 * 0.13).sin()).collect();
        let w = Kernel::new(3, 3, 2, 3, data).unwrap();
        let x = conv_periodic(&z, &w, 1).unwrap();
        for co in 0..3 {
            let s: f64 = w.fan_in_slice(co).iter().sum();
            for v in x.channel(co) {
                assert!((v - 1.5 * s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_hot_wraps_around() {
        let mut data = vec![0.0; 16];
        data[0] = 1.0;
        let z = ActivationTensor::new(Shape::new(1, 4, 4, 1), data).unwrap();
        let w = Kernel::new(3, 3, 1, 1, vec![1.0; 9]).unwrap();
        let x = conv_periodic(&z, &w, 1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let hit = [3, 0, 1].contains(&i) && [3, 0, 1].contains(&j);
                assert_eq!(x.get(0, i, j, 0), if hit { 1.0 } else { 0.0 }, "({i},{j})");
            }
        }
    }

    #[test]
    fn stride_two_halves_spatial_dims() {
        let z = ActivationTensor::filled(Shape::new(2, 8, 6, 1), 1.0);
        let w = Kernel::new(3, 3, 1, 2, vec![1.0; 18]).unwrap();
        assert_eq!(conv_periodic(&z, &w, 2).unwrap().shape(), Shape::new(2, 4, 3, 2));
        assert!(conv_periodic(&ActivationTensor::filled(Shape::new(1, 3, 3, 1), 1.0), &w, 2).is_err());
        assert!(conv_periodic(&z, &w, 3).is_err());
        let bad = Kernel::new(3, 3, 2, 2, vec![1.0; 36]).unwrap();
        assert!(matches!(conv_periodic(&z, &bad, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn relu_and_affine() {
        let y = one_channel(&[-1.0, 1.0]);
        let id = ChannelParams::identity(1);
        assert_eq!(act(&y, &id, Activation::Identity).unwrap(), y);
        assert_eq!(act(&y, &id, Activation::Relu).unwrap().data(), &[0.0, 1.0]);
        let p = ChannelParams::uniform(1, 2.0, 1.0);
        assert_eq!(act(&y, &p, Activation::Relu).unwrap().data(), &[0.0, 3.0]);
        assert!(act(&y, &ChannelParams::identity(2), Activation::Relu).is_err());
    }

    #[test]
    fn two_slope_special_cases() {
        for u in [-2.5, -0.1, 0.0, 0.3, 4.0] {
            assert_eq!(Activation::Relu.apply(u), Activation::TwoSlope { a_pos: 1.0, a_neg: 0.0 }.apply(u));
            assert_eq!(Activation::Identity.apply(u), Activation::TwoSlope { a_pos: 1.0, a_neg: 1.0 }.apply(u));
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("gn32".parse::<NormKind>().unwrap(), NormKind::GroupNorm { groups: 32 });
        assert_eq!("GN:4".parse::<NormKind>().unwrap(), NormKind::GroupNorm { groups: 4 });
        assert_eq!("ln".parse::<NormKind>().unwrap(), NormKind::LayerNorm);
        assert!("gn0".parse::<NormKind>().is_err());
        assert!("xx".parse::<NormKind>().is_err());
        assert_eq!(
            "twoslope:1,0.2".parse::<Activation>().unwrap(),
            Activation::TwoSlope { a_pos: 1.0, a_neg: 0.2 }
        );
        assert!("tanh".parse::<Activation>().is_err());
    }

    #[test]
    fn weight_standardization_examples() {
        let w = Kernel::new(1, 1, 2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(weight_standardize(&w).unwrap().data(), &[-1.0, 1.0]);

        let w = Kernel::new(1, 1, 4, 1, vec![0.0, 0.0, 0.0, 4.0]).unwrap();
        let s = weight_standardize(&w).unwrap();
        let a = -1.0 / 3f64.sqrt();
        let expected = [a, a, a, 3f64.sqrt()];
        for (x, e) in s.data().iter().zip(expected) {
            assert!((x - e).abs() < 1e-12);
        }

        let w = Kernel::new(1, 1, 3, 2, vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0]).unwrap();
        assert!(matches!(weight_standardize(&w), Err(Error::DegenerateKernel { channel: 1 })));
        let w = Kernel::new(1, 1, 1, 1, vec![1.0]).unwrap();
        assert!(weight_standardize(&w).is_err());
    }

    #[test]
    fn group_count_must_divide() {
        let x = ActivationTensor::filled(Shape::new(2, 2, 2, 6), 1.0);
        let r = normalize(&x, Norm::exact(NormKind::GroupNorm { groups: 4 }));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn constant_set_maps_to_zero() {
        let x = ActivationTensor::filled(Shape::new(2, 2, 2, 3), 0.7);
        let out = normalize_counted(&x, Norm::exact(NormKind::LayerNorm)).unwrap();
        assert!(out.tensor.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.degenerate_sets, 2);
        // With eps > 0 the set is centered instead.
        let out = normalize_counted(&x, Norm::new(NormKind::LayerNorm, 1e-6)).unwrap();
        assert_eq!(out.degenerate_sets, 0);
        assert!(out.tensor.data().iter().all(|&v| v.abs() < 1e-9));
    }
}
