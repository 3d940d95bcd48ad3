//! Random nets: stacks of (periodic conv → norm → act or PN-act) layers
//! whose kernels and affine parameters are drawn i.i.d. from fixed
//! distributions, kernels scaled by the inverse square root of the fan-in.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{linear_best_fit, power_decomposition, LinearFitReport, PowerDecomposition};
use crate::error::{Error, Result};
use crate::layers::{act, affine, conv_periodic, normalize_counted, weight_standardize, Activation, Norm, NormKind};
use crate::proxy::{pn_act, ProxyParams};
use crate::tensor::{fan_in_scaled_kernel, sample, ActivationTensor, ChannelParams, Distribution, Kernel, Rng};

/// PN settings shared by every layer; the additional parameters are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxySettings {
    pub eps: f64,
    pub n_quantiles: usize,
}

impl Default for ProxySettings {
    fn default() -> Self {
        ProxySettings {
            eps: ProxyParams::DEFAULT_EPS,
            n_quantiles: ProxyParams::DEFAULT_QUANTILES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomNetConfig {
    pub depth: usize,
    /// Output channels of each layer, length `depth`.
    pub widths: Vec<usize>,
    /// Odd kernel size of each layer, length `depth`.
    pub kernel_sizes: Vec<usize>,
    /// Channels of the input batch.
    pub input_channels: usize,
    pub nu_omega: Distribution,
    pub nu_gamma: Distribution,
    pub nu_beta: Distribution,
    pub norm: Norm,
    pub use_pn: bool,
    pub use_ws: bool,
    pub phi: Activation,
    pub proxy: ProxySettings,
    pub first_layer_stride: usize,
    pub seed: u64,
}

impl RandomNetConfig {
    /// Uniform-width net with the standard parameter distributions:
    /// kernels truncated N(0, 1) at ±2, `γ ~ N(1, 0.2²)`, `β ~ N(0, 0.2²)`,
    /// ReLU, layer norm with eps 1e-6.
    pub fn uniform(depth: usize, width: usize, input_channels: usize) -> Self {
        RandomNetConfig {
            depth,
            widths: vec![width; depth],
            kernel_sizes: vec![3; depth],
            input_channels,
            nu_omega: Distribution::truncated_two_sigma(0.0, 1.0),
            nu_gamma: Distribution::normal(1.0, 0.2),
            nu_beta: Distribution::normal(0.0, 0.2),
            norm: Norm::new(NormKind::LayerNorm, Norm::DEFAULT_EPS),
            use_pn: false,
            use_ws: false,
            phi: Activation::Relu,
            proxy: ProxySettings::default(),
            first_layer_stride: 2,
            seed: 0,
        }
    }

    /// Per-layer collapse factor `γ² / (γ² + β²)` from the configured
    /// second moments of the affine-parameter distributions.
    pub fn rho(&self) -> f64 {
        let g2 = self.nu_gamma.second_moment();
        let b2 = self.nu_beta.second_moment();
        if g2 + b2 == 0.0 {
            0.0
        } else {
            g2 / (g2 + b2)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.widths.len() != self.depth || self.kernel_sizes.len() != self.depth {
            return Err(Error::Config(format!(
                "depth {} but {} widths and {} kernel sizes",
                self.depth,
                self.widths.len(),
                self.kernel_sizes.len()
            )));
        }
        if self.input_channels == 0 || self.widths.contains(&0) {
            return Err(Error::Config("all widths must be at least 1".into()));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::Config(format!("kernel size {k} is not odd")));
        }
        if let NormKind::GroupNorm { groups } = self.norm.kind {
            if let Some(w) = self.widths.iter().find(|&&w| groups == 0 || w % groups != 0) {
                return Err(Error::Config(format!("{groups} groups do not divide width {w}")));
            }
        }
        if self.first_layer_stride != 1 && self.first_layer_stride != 2 {
            return Err(Error::Config(format!(
                "first-layer stride must be 1 or 2, got {}",
                self.first_layer_stride
            )));
        }
        if !(self.norm.eps >= 0.0) || !self.norm.eps.is_finite() {
            return Err(Error::Config(format!("norm eps must be >= 0, got {}", self.norm.eps)));
        }
        if self.use_pn && (self.proxy.n_quantiles < 2 || !(self.proxy.eps >= 0.0)) {
            return Err(Error::Config(format!("invalid proxy settings {:?}", self.proxy)));
        }
        for d in [&self.nu_omega, &self.nu_gamma, &self.nu_beta] {
            d.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn layer_input_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_channels
        } else {
            self.widths[layer - 1]
        }
    }
}

/// Sampled parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kernel: Kernel,
    pub affine: ChannelParams,
}

/// Streams used for layer `l` (0-based): kernel, gamma and beta each get
/// their own ChaCha stream, so any layer can be regenerated alone.
fn layer_stream(layer: usize, which: u64) -> u64 {
    layer as u64 * 3 + which
}

/// Samples the parameters of layer `layer` (0-based) of `config`.
pub fn layer_params(config: &RandomNetConfig, layer: usize) -> Result<LayerParams> {
    let k = config.kernel_sizes[layer];
    let c_in = config.layer_input_channels(layer);
    let c_out = config.widths[layer];
    let mut kernel = fan_in_scaled_kernel(
        &config.nu_omega,
        &mut Rng::with_stream(config.seed, layer_stream(layer, 0)),
        (k, k, c_in, c_out),
    )?;
    if config.use_ws {
        kernel = weight_standardize(&kernel)?;
    }
    let gamma = sample(&config.nu_gamma, &mut Rng::with_stream(config.seed, layer_stream(layer, 1)), c_out)?;
    let beta = sample(&config.nu_beta, &mut Rng::with_stream(config.seed, layer_stream(layer, 2)), c_out)?;
    Ok(LayerParams {
        kernel,
        affine: ChannelParams::new(gamma, beta)?,
    })
}

/// A fully materialized random net.
#[derive(Debug, Clone)]
pub struct RandomNet {
    config: RandomNetConfig,
    layers: Vec<LayerParams>,
}

impl RandomNet {
    pub fn config(&self) -> &RandomNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    fn layer_mut(&mut self, layer: usize) -> Result<&mut LayerParams> {
        let depth = self.layers.len();
        self.layers
            .get_mut(layer)
            .ok_or_else(|| Error::Parameter(format!("layer {layer} out of range for depth {depth}")))
    }

    /// Multiplies the kernel of layer `layer` (0-based) by `k`.
    pub fn scale_kernel(&mut self, layer: usize, k: f64) -> Result<()> {
        let params = self.layer_mut(layer)?;
        params.kernel = params.kernel.scaled(k)?;
        Ok(())
    }

    /// Replaces the kernel of layer `layer` (0-based) by one of the same shape.
    pub fn set_kernel(&mut self, layer: usize, kernel: Kernel) -> Result<()> {
        let params = self.layer_mut(layer)?;
        if kernel.shape() != params.kernel.shape() {
            return Err(Error::Shape(format!(
                "kernel shape {:?} does not match layer shape {:?}",
                kernel.shape(),
                params.kernel.shape()
            )));
        }
        params.kernel = kernel;
        Ok(())
    }
}

/// Samples every layer of `config`.
pub fn build(config: &RandomNetConfig) -> Result<RandomNet> {
    config.validate()?;
    let layers = (0..config.depth)
        .map(|l| layer_params(config, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomNet {
        config: config.clone(),
        layers,
    })
}

/// Diagnostics recorded at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    /// 1-based layer index.
    pub layer_index: usize,
    /// Decomposition of the post-norm activations.
    pub decomp_y: PowerDecomposition,
    /// Decomposition of the layer output (post-activation or PN-act).
    pub decomp_z: PowerDecomposition,
    /// Linearity of the nonlinearity on the affine image `γ y + β`.
    pub linearity: LinearFitReport,
}

/// Tensors produced inside one layer.
pub struct LayerTensors<'a> {
    pub x: &'a ActivationTensor,
    pub y: &'a ActivationTensor,
    pub z: &'a ActivationTensor,
}

fn check_batch(config: &RandomNetConfig, batch: &ActivationTensor) -> Result<()> {
    let sh = batch.shape();
    if sh.c != config.input_channels {
        return Err(Error::Shape(format!(
            "batch has {} channels, net expects {}",
            sh.c, config.input_channels
        )));
    }
    if sh.n < 2 {
        return Err(Error::InsufficientData(format!(
            "forward needs at least 2 samples, got {}",
            sh.n
        )));
    }
    Ok(())
}

fn run_layer(
    config: &RandomNetConfig,
    layer: usize,
    params: &LayerParams,
    input: &ActivationTensor,
    visit: &mut dyn FnMut(usize, LayerTensors<'_>),
) -> Result<(ActivationTensor, LayerTrace)> {
    let stride = if layer == 0 { config.first_layer_stride } else { 1 };
    let x = conv_periodic(input, &params.kernel, stride)?;
    let normalized = normalize_counted(&x, config.norm)?;
    if config.norm.eps == 0.0 && normalized.degenerate_sets > 0 {
        return Err(Error::Propagation {
            layer: layer + 1,
            reason: format!(
                "{} zero-variance {} conditioning set(s) with eps = 0",
                normalized.degenerate_sets, config.norm.kind
            ),
        });
    }
    let y = normalized.tensor;
    let y_tilde = affine(&y, &params.affine)?;
    let z = if config.use_pn {
        let proxy = ProxyParams::zeroed(y.shape().c, config.proxy.eps, config.proxy.n_quantiles);
        pn_act(&y, &params.affine, config.phi, &proxy).map_err(|e| match e {
            Error::DegenerateProxy { channel } => Error::Propagation {
                layer: layer + 1,
                reason: format!("proxy variance is zero in channel {channel}"),
            },
            other => other,
        })?
    } else {
        act(&y, &params.affine, config.phi)?
    };
    let trace = LayerTrace {
        layer_index: layer + 1,
        decomp_y: power_decomposition(&y)?,
        decomp_z: power_decomposition(&z)?,
        linearity: linear_best_fit(&y_tilde, config.phi),
    };
    visit(layer + 1, LayerTensors { x: &x, y: &y, z: &z });
    Ok((z, trace))
}

/// Runs `batch` through `net`, returning one trace per layer.
pub fn forward(net: &RandomNet, batch: &ActivationTensor) -> Result<Vec<LayerTrace>> {
    forward_visit(net, batch, &mut |_, _| {})
}

/// Like [`forward`], also handing every layer's intermediate tensors to
/// `visit`.
pub fn forward_visit(
    net: &RandomNet,
    batch: &ActivationTensor,
    visit: &mut dyn FnMut(usize, LayerTensors<'_>),
) -> Result<Vec<LayerTrace>> {
    check_batch(&net.config, batch)?;
    let mut traces = Vec::with_capacity(net.layers.len());
    let mut current = batch.clone();
    for (l, params) in net.layers.iter().enumerate() {
        let (z, trace) = run_layer(&net.config, l, params, &current, visit)?;
        traces.push(trace);
        current = z;
    }
    Ok(traces)
}

/// Samples and runs one layer at a time without keeping earlier layers,
/// which bounds memory for wide nets. Produces exactly the traces of
/// `forward(&build(config)?, batch)`.
pub fn forward_streaming(config: &RandomNetConfig, batch: &ActivationTensor) -> Result<Vec<LayerTrace>> {
    config.validate()?;
    check_batch(config, batch)?;
    let mut traces = Vec::with_capacity(config.depth);
    let mut current = batch.clone();
    for l in 0..config.depth {
        let params = layer_params(config, l)?;
        let (z, trace) = run_layer(config, l, &params, &current, &mut |_, _| {})?;
        traces.push(trace);
        current = z;
    }
    Ok(traces)
}
