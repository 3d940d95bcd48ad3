//! C ABI over `proxynorm`.
//!
//! Tensors and random nets are opaque heap handles created by `*_new` /
//! `*_build` and released by the matching `*_free`. Every fallible call
//! returns a [`PnStatus`]; on failure the message is available from
//! [`pn_last_error_message`] on the same thread. Panics never cross the
//! boundary and are reported as `PN_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use proxynorm::diagnostics::PowerTerms;
use proxynorm::layers::{Activation, Norm, NormKind};
use proxynorm::proxy::ProxyParams;
use proxynorm::{ActivationTensor, ChannelParams, Error, RandomNet, RandomNetConfig, Shape};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnStatus {
    Ok = 0,
    NullPointer = 1,
    Shape = 2,
    Config = 3,
    Parameter = 4,
    Domain = 5,
    Degenerate = 6,
    InsufficientData = 7,
    Propagation = 8,
    Hypothesis = 9,
    Io = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnNormKind {
    BatchNorm = 0,
    LayerNorm = 1,
    InstanceNorm = 2,
    GroupNorm = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnActivationKind {
    Identity = 0,
    Relu = 1,
    TwoSlope = 2,
    Swish = 3,
}

/// Activation descriptor; the slopes are read only for `TWO_SLOPE`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PnActivation {
    pub kind: PnActivationKind,
    pub a_pos: f64,
    pub a_neg: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PnPowerTerms {
    pub p_total: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
}

/// Layer-level diagnostics of one random-net layer.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PnLayerSummary {
    pub layer: usize,
    pub terms: PnPowerTerms,
    pub rho: f64,
    pub linearity_residual: f64,
}

/// Opaque activation tensor of shape (n, h, w, c), channel-last.
pub struct PnTensor(ActivationTensor);

/// Opaque random net with sampled parameters.
pub struct PnRandomNet(RandomNet);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PnStatus {
    match e {
        Error::Shape(_) => PnStatus::Shape,
        Error::Config(_) | Error::Format { .. } => PnStatus::Config,
        Error::Parameter(_) => PnStatus::Parameter,
        Error::Domain(_) => PnStatus::Domain,
        Error::DegenerateKernel { .. } | Error::DegenerateProxy { .. } | Error::DegenerateInput { .. } => {
            PnStatus::Degenerate
        }
        Error::InsufficientData(_) => PnStatus::InsufficientData,
        Error::Propagation { .. } => PnStatus::Propagation,
        Error::Hypothesis(_) => PnStatus::Hypothesis,
        Error::Io { .. } => PnStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), PnStatus>) -> PnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PnStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            PnStatus::Panic
        }
    }
}

fn lift<T>(r: proxynorm::Result<T>) -> Result<T, PnStatus> {
    r.map_err(|e| {
        let s = status_of(&e);
        set_error(e.to_string());
        s
    })
}

fn null(what: &str) -> PnStatus {
    set_error(format!("{what} is null"));
    PnStatus::NullPointer
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], PnStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn tensor<'a>(t: *const PnTensor) -> Result<&'a ActivationTensor, PnStatus> {
    t.as_ref().map(|t| &t.0).ok_or_else(|| null("tensor"))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, PnStatus> {
    p.as_mut().ok_or_else(|| null(what))
}

fn activation(a: PnActivation) -> Activation {
    match a.kind {
        PnActivationKind::Identity => Activation::Identity,
        PnActivationKind::Relu => Activation::Relu,
        PnActivationKind::TwoSlope => Activation::TwoSlope {
            a_pos: a.a_pos,
            a_neg: a.a_neg,
        },
        PnActivationKind::Swish => Activation::Swish,
    }
}

fn terms(t: &PowerTerms) -> PnPowerTerms {
    PnPowerTerms {
        p_total: t.p_total,
        p1: t.p1,
        p2: t.p2,
        p3: t.p3,
        p4: t.p4,
    }
}

fn boxed(t: ActivationTensor) -> *mut PnTensor {
    Box::into_raw(Box::new(PnTensor(t)))
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
#[no_mangle]
pub unsafe extern "C" fn pn_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates a tensor from `len = n*h*w*c` channel-last values.
#[no_mangle]
pub unsafe extern "C" fn pn_tensor_new(
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut PnTensor,
) -> PnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let values = slice(data, len, "data")?.to_vec();
        let t = lift(ActivationTensor::new(Shape::new(n, h, w, c), values))?;
        *out = boxed(t);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pn_tensor_free(t: *mut PnTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Writes (n, h, w, c) into `out[0..4]`.
#[no_mangle]
pub unsafe extern "C" fn pn_tensor_shape(t: *const PnTensor, out: *mut usize) -> PnStatus {
    guard(|| {
        let s = tensor(t)?.shape();
        if out.is_null() {
            return Err(null("out"));
        }
        for (i, v) in [s.n, s.h, s.w, s.c].into_iter().enumerate() {
            *out.add(i) = v;
        }
        Ok(())
    })
}

/// Copies the tensor's values into `out`, which must hold `len` values
/// with `len` equal to the tensor length.
#[no_mangle]
pub unsafe extern "C" fn pn_tensor_copy_data(t: *const PnTensor, out: *mut f64, len: usize) -> PnStatus {
    guard(|| {
        let data = tensor(t)?.data();
        if len != data.len() {
            set_error(format!("buffer holds {len} values, tensor has {}", data.len()));
            return Err(PnStatus::Shape);
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), out, len);
        Ok(())
    })
}

/// Normalizes `x`; `groups` is read only for `GROUP_NORM`.
#[no_mangle]
pub unsafe extern "C" fn pn_normalize(
    x: *const PnTensor,
    kind: PnNormKind,
    groups: usize,
    eps: f64,
    out: *mut *mut PnTensor,
) -> PnStatus {
    guard(|| {
        let x = tensor(x)?;
        let out = out_ptr(out, "out")?;
        let kind = match kind {
            PnNormKind::BatchNorm => NormKind::BatchNorm,
            PnNormKind::LayerNorm => NormKind::LayerNorm,
            PnNormKind::InstanceNorm => NormKind::InstanceNorm,
            PnNormKind::GroupNorm => NormKind::GroupNorm { groups },
        };
        *out = boxed(lift(proxynorm::normalize(x, Norm::new(kind, eps)))?);
        Ok(())
    })
}

/// Power decomposition of `y`. `per_channel` may be null; otherwise it
/// must hold `channels` entries equal to the tensor's channel count.
#[no_mangle]
pub unsafe extern "C" fn pn_power_decomposition(
    y: *const PnTensor,
    per_channel: *mut PnPowerTerms,
    channels: usize,
    layer: *mut PnPowerTerms,
    rho: *mut f64,
) -> PnStatus {
    guard(|| {
        let y = tensor(y)?;
        let d = lift(proxynorm::power_decomposition(y))?;
        if !per_channel.is_null() {
            if channels != d.per_channel.len() {
                set_error(format!("buffer holds {channels} channels, tensor has {}", d.per_channel.len()));
                return Err(PnStatus::Shape);
            }
            for (i, t) in d.per_channel.iter().enumerate() {
                *per_channel.add(i) = terms(t);
            }
        }
        if let Some(l) = layer.as_mut() {
            *l = terms(&d.layer);
        }
        if let Some(r) = rho.as_mut() {
            *r = d.rho_ratio;
        }
        Ok(())
    })
}

/// Mean and variance of `phi(gamma * Y + beta)`, `Y ~ N(mean, std²)`, on
/// an `n`-point quantile grid.
#[no_mangle]
pub unsafe extern "C" fn pn_proxy_moments(
    phi: PnActivation,
    gamma: f64,
    beta: f64,
    mean: f64,
    std: f64,
    n: usize,
    out_mean: *mut f64,
    out_var: *mut f64,
) -> PnStatus {
    guard(|| {
        let m = out_ptr(out_mean, "out_mean")?;
        let v = out_ptr(out_var, "out_var")?;
        (*m, *v) = lift(proxynorm::proxy_moments(activation(phi), gamma, beta, mean, std, n))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pn_inv_norm_cdf(p: f64, out: *mut f64) -> PnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = lift(proxynorm::inv_norm_cdf(p))?;
        Ok(())
    })
}

/// Proxy-normalized activation of `y` with zero additional parameters.
/// `gamma` and `beta` hold one value per channel.
#[no_mangle]
pub unsafe extern "C" fn pn_pn_act(
    y: *const PnTensor,
    gamma: *const f64,
    beta: *const f64,
    channels: usize,
    phi: PnActivation,
    eps: f64,
    n_quantiles: usize,
    out: *mut *mut PnTensor,
) -> PnStatus {
    guard(|| {
        let y = tensor(y)?;
        let out = out_ptr(out, "out")?;
        let params = lift(ChannelParams::new(
            slice(gamma, channels, "gamma")?.to_vec(),
            slice(beta, channels, "beta")?.to_vec(),
        ))?;
        let proxy = ProxyParams::zeroed(channels, eps, n_quantiles);
        *out = boxed(lift(proxynorm::pn_act(y, &params, activation(phi), &proxy))?);
        Ok(())
    })
}

/// Builds a random net from a NUL-terminated JSON random-net config.
#[no_mangle]
pub unsafe extern "C" fn pn_randomnet_build_json(config_json: *const c_char, out: *mut *mut PnRandomNet) -> PnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        let text = CStr::from_ptr(config_json).to_str().map_err(|_| {
            set_error("config is not UTF-8".into());
            PnStatus::Config
        })?;
        let cfg: RandomNetConfig = serde_json::from_str(text).map_err(|e| {
            set_error(format!("config JSON: {e}"));
            PnStatus::Config
        })?;
        let net = lift(proxynorm::build(&cfg))?;
        *out = Box::into_raw(Box::new(PnRandomNet(net)));
        Ok(())
    })
}

/// Builds a uniform-width net with the standard parameter distributions
/// and an exact (eps = 0) norm.
#[no_mangle]
pub unsafe extern "C" fn pn_randomnet_build_uniform(
    depth: usize,
    width: usize,
    input_channels: usize,
    norm: PnNormKind,
    groups: usize,
    phi: PnActivation,
    use_pn: bool,
    use_ws: bool,
    seed: u64,
    out: *mut *mut PnRandomNet,
) -> PnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let mut cfg = RandomNetConfig::uniform(depth, width, input_channels);
        cfg.norm = Norm::exact(match norm {
            PnNormKind::BatchNorm => NormKind::BatchNorm,
            PnNormKind::LayerNorm => NormKind::LayerNorm,
            PnNormKind::InstanceNorm => NormKind::InstanceNorm,
            PnNormKind::GroupNorm => NormKind::GroupNorm { groups },
        });
        cfg.phi = activation(phi);
        cfg.use_pn = use_pn;
        cfg.use_ws = use_ws;
        cfg.seed = seed;
        let net = lift(proxynorm::build(&cfg))?;
        *out = Box::into_raw(Box::new(PnRandomNet(net)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pn_randomnet_free(net: *mut PnRandomNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

#[no_mangle]
pub unsafe extern "C" fn pn_randomnet_depth(net: *const PnRandomNet) -> usize {
    net.as_ref().map_or(0, |n| n.0.config().depth)
}

/// Runs `batch` through the net and writes one summary per layer into
/// `out`, which must hold `depth` entries.
#[no_mangle]
pub unsafe extern "C" fn pn_randomnet_forward(
    net: *const PnRandomNet,
    batch: *const PnTensor,
    out: *mut PnLayerSummary,
    depth: usize,
) -> PnStatus {
    guard(|| {
        let net = net.as_ref().map(|n| &n.0).ok_or_else(|| null("net"))?;
        let batch = tensor(batch)?;
        if depth != net.config().depth {
            set_error(format!("buffer holds {depth} layers, net has {}", net.config().depth));
            return Err(PnStatus::Shape);
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let traces = lift(proxynorm::forward(net, batch))?;
        for (i, t) in traces.iter().enumerate() {
            *out.add(i) = PnLayerSummary {
                layer: t.layer_index,
                terms: terms(&t.decomp_y.layer),
                rho: t.decomp_y.rho_ratio,
                linearity_residual: t.linearity.residual_ratio,
            };
        }
        Ok(())
    })
}
