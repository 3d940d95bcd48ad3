//! Run configuration: shipped defaults, an optional TOML file and
//! `section.key=value` overrides, merged in that order of increasing
//! precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::{Error, Result};
use crate::ingest::InputSource;
use crate::layers::{Activation, Norm, NormKind};
use crate::randomnet::{ProxySettings, RandomNetConfig};
use crate::tensor::Distribution;
use crate::verify::{LinearityConfig, NetSuite, PnRemedyConfig, Thm1Config, Thm2Config, Thm3Config};

/// The shipped defaults file.
pub const DEFAULTS_TOML: &str = include_str!("../config/defaults.toml");

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "PROXYNORM_OUT";

const FALLBACK_OUT: &str = "proxynorm-out";

/// A seed count `n` (seeds `0..n`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(u64),
    List(Vec<u64>),
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::Count(n) => (0..*n).collect(),
            SeedSpec::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSection {
    pub depth: usize,
    pub width: usize,
    pub kernel_size: usize,
    pub first_layer_stride: usize,
    pub norm: String,
    pub norm_eps: f64,
    pub phi: String,
    pub pn: bool,
    pub ws: bool,
    pub pn_eps: f64,
    pub n_quantiles: usize,
    pub omega_std: f64,
    pub gamma_mean: f64,
    pub gamma_std: f64,
    pub beta_mean: f64,
    pub beta_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSection {
    pub source: String,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub correlation_length: f64,
    pub cifar_dir: String,
    pub subsample_stride: usize,
    pub batch: usize,
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub seeds: SeedSpec,
    pub output_dir: String,
    pub emit: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerplotSection {
    pub variants: Vec<String>,
}

/// Net size and seeds of a suite; the rest comes from `[net]`/`[input]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSize {
    pub width: usize,
    pub depth: usize,
    pub input_hw: usize,
    pub batch: usize,
    pub seeds: SeedSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm1Section {
    #[serde(flatten)]
    pub size: SuiteSize,
    pub eta: f64,
    pub power_tol: f64,
    pub min_pass_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm2Section {
    #[serde(flatten)]
    pub size: SuiteSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm3Section {
    pub channels: usize,
    pub entries: usize,
    pub n_quantiles: usize,
    pub seed: u64,
    pub phis: Vec<String>,
    pub tol_mean: f64,
    pub tol_power: f64,
    pub tol_power_swish: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearitySection {
    #[serde(flatten)]
    pub size: SuiteSize,
    pub slack: f64,
    pub min_pass_fraction: f64,
    pub final_residual_max: f64,
    pub reference_norm: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnRemedySection {
    #[serde(flatten)]
    pub size: SuiteSize,
    pub min_fraction_vs_ln: f64,
    pub min_fraction_vs_ws: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub net: NetSection,
    pub input: InputSection,
    pub run: RunSection,
    pub powerplot: PowerplotSection,
    pub thm1: Thm1Section,
    pub thm1_identity: Thm1Section,
    pub thm2: Thm2Section,
    pub thm3: Thm3Section,
    pub linearity: LinearitySection,
    pub pn_remedy: PnRemedySection,
}

/// One power-plot variant: a norm plus optional PN / WS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub norm: NormKind,
    pub pn: bool,
    pub ws: bool,
}

impl Variant {
    /// Parses `ln`, `gn`, `gn16`, `ln+pn`, `ln+ws`, ...; a bare `gn`
    /// uses `width / 8` groups.
    pub fn parse(s: &str, width: usize) -> Result<Variant> {
        let mut parts = s.split('+');
        let norm = parse_norm(parts.next().unwrap_or(""), width)?;
        let mut v = Variant { norm, pn: false, ws: false };
        for p in parts {
            match p.trim().to_ascii_lowercase().as_str() {
                "pn" => v.pn = true,
                "ws" => v.ws = true,
                other => return Err(Error::Config(format!("unknown variant modifier {other:?} in {s:?}"))),
            }
        }
        Ok(v)
    }

    pub fn label(&self) -> String {
        let mut s = self.norm.label();
        if self.pn {
            s.push_str("+pn");
        }
        if self.ws {
            s.push_str("+ws");
        }
        s
    }

    /// Label with `+` replaced for use in file names.
    pub fn file_stem(&self) -> String {
        self.label().replace('+', "-")
    }
}

/// Parses a norm name; a bare `gn` means `width / 8` groups (at least 1).
pub fn parse_norm(s: &str, width: usize) -> Result<NormKind> {
    if s.trim().eq_ignore_ascii_case("gn") {
        return Ok(NormKind::GroupNorm { groups: (width / 8).max(1) });
    }
    s.parse()
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_scalar(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn check_known_keys(v: &Value, reference: &Value, prefix: &str) -> Result<()> {
    if let (Value::Table(t), Value::Table(r)) = (v, reference) {
        for (k, sub) in t {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match r.get(k) {
                Some(rsub) => check_known_keys(sub, rsub, &path)?,
                None => return Err(Error::Config(format!("unknown config key {path:?}"))),
            }
        }
    }
    Ok(())
}

/// Layered configuration source: defaults, then file, then overrides.
#[derive(Debug, Clone)]
pub struct ConfigBuilder {
    value: Value,
}

impl Default for ConfigBuilder {
    fn default() -> Self {
        ConfigBuilder {
            value: toml::from_str(DEFAULTS_TOML).expect("shipped defaults parse"),
        }
    }
}

impl ConfigBuilder {
    pub fn with_file(mut self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self = self.with_toml(&text).map_err(|e| match e {
            Error::Config(reason) => Error::Format {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })?;
        Ok(self)
    }

    pub fn with_toml(mut self, text: &str) -> Result<Self> {
        let v: Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut self.value, v);
        Ok(self)
    }

    /// Whether `section.key` exists in the merged configuration.
    pub fn has_key(&self, key: &str) -> bool {
        let mut cur = &self.value;
        for part in key.split('.') {
            match cur.get(part) {
                Some(v) => cur = v,
                None => return false,
            }
        }
        true
    }

    /// Sets `section.key` to a TOML literal (falls back to a string).
    pub fn set(mut self, key: &str, raw: &str) -> Result<Self> {
        self.set_value(key, parse_scalar(raw))?;
        Ok(self)
    }

    /// Sets `section.key` to a string value.
    pub fn set_str(mut self, key: &str, value: &str) -> Result<Self> {
        self.set_value(key, Value::String(value.to_string()))?;
        Ok(self)
    }

    pub fn set_value(&mut self, key: &str, value: Value) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("bad config key {key:?}")));
        }
        let mut cur = &mut self.value;
        for p in &parts[..parts.len() - 1] {
            cur = cur
                .as_table_mut()
                .and_then(|t| t.get_mut(*p))
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        let last = parts[parts.len() - 1];
        if !table.contains_key(last) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        table.insert(last.to_string(), value);
        Ok(())
    }

    pub fn build(self) -> Result<RunConfig> {
        let defaults: Value = toml::from_str(DEFAULTS_TOML).expect("shipped defaults parse");
        check_known_keys(&self.value, &defaults, "")?;
        let cfg: RunConfig = self.value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn defaults() -> RunConfig {
        ConfigBuilder::default().build().expect("shipped defaults are valid")
    }

    fn validate(&self) -> Result<()> {
        if self.run.emit.is_empty() {
            return Err(Error::Config("at least one emit format is required".into()));
        }
        for e in &self.run.emit {
            if !matches!(e.as_str(), "csv" | "json" | "svg") {
                return Err(Error::Config(format!("unknown emit format {e:?}")));
            }
        }
        if self.run.seeds.seeds().is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.net_config(self.net.width, self.net.depth)?.validate()?;
        self.input_source(None)?.validate()?;
        for v in &self.powerplot.variants {
            Variant::parse(v, self.net.width)?;
        }
        for p in &self.thm3.phis {
            p.parse::<Activation>()?;
        }
        if self.input.batch < 2 {
            return Err(Error::Config(format!("input.batch must be >= 2, got {}", self.input.batch)));
        }
        let suites = [
            ("thm1", &self.thm1.size),
            ("thm1_identity", &self.thm1_identity.size),
            ("thm2", &self.thm2.size),
            ("linearity", &self.linearity.size),
            ("pn_remedy", &self.pn_remedy.size),
        ];
        for (name, s) in suites {
            if s.width == 0 || s.depth == 0 || s.batch < 2 || s.input_hw < 2 || s.seeds.seeds().is_empty() {
                return Err(Error::Config(format!(
                    "[{name}] needs width, depth and seeds >= 1, batch and input_hw >= 2"
                )));
            }
        }
        Ok(())
    }

    /// Output directory: the configured one, else `$PROXYNORM_OUT`, else
    /// `./proxynorm-out`.
    pub fn output_dir(&self) -> PathBuf {
        if !self.run.output_dir.is_empty() {
            return PathBuf::from(&self.run.output_dir);
        }
        match std::env::var(OUT_ENV) {
            Ok(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(FALLBACK_OUT),
        }
    }

    pub fn emits(&self, format: &str) -> bool {
        self.run.emit.iter().any(|e| e == format)
    }

    /// The `[net]` section as a net of the given width and depth.
    pub fn net_config(&self, width: usize, depth: usize) -> Result<RandomNetConfig> {
        let n = &self.net;
        let mut cfg = RandomNetConfig::uniform(depth, width, self.input.c);
        cfg.kernel_sizes = vec![n.kernel_size; depth];
        cfg.first_layer_stride = n.first_layer_stride;
        cfg.norm = Norm::new(parse_norm(&n.norm, width)?, n.norm_eps);
        cfg.phi = n.phi.parse()?;
        cfg.use_pn = n.pn;
        cfg.use_ws = n.ws;
        cfg.proxy = ProxySettings {
            eps: n.pn_eps,
            n_quantiles: n.n_quantiles,
        };
        cfg.nu_omega = Distribution::truncated_two_sigma(0.0, n.omega_std);
        cfg.nu_gamma = Distribution::normal(n.gamma_mean, n.gamma_std);
        cfg.nu_beta = Distribution::normal(n.beta_mean, n.beta_std);
        Ok(cfg)
    }

    /// The `[input]` source, with synthetic spatial dims replaced by
    /// `hw` when given.
    pub fn input_source(&self, hw: Option<usize>) -> Result<InputSource> {
        let i = &self.input;
        let (h, w) = hw.map_or((i.h, i.w), |s| (s, s));
        match i.source.as_str() {
            "gaussian" => Ok(InputSource::SyntheticGaussian { h, w, c: i.c }),
            "structured" => Ok(InputSource::SyntheticStructured {
                h,
                w,
                c: i.c,
                correlation_length: i.correlation_length,
            }),
            "cifar" => {
                if i.c != 3 {
                    return Err(Error::Config("CIFAR input has 3 channels; set input.c = 3".into()));
                }
                Ok(InputSource::Cifar10Dir {
                    path: PathBuf::from(&i.cifar_dir),
                    subsample_stride: i.subsample_stride,
                })
            }
            other => Err(Error::Config(format!("unknown input source {other:?}"))),
        }
    }

    fn suite(&self, size: &SuiteSize) -> Result<NetSuite> {
        Ok(NetSuite {
            net: self.net_config(size.width, size.depth)?,
            input: self.input_source(Some(size.input_hw))?,
            batch: size.batch,
            standardize: self.input.standardize,
            seeds: size.seeds.seeds(),
        })
    }

    /// The net of `[powerplot]` for one variant.
    pub fn powerplot_suite(&self, v: Variant) -> Result<NetSuite> {
        let mut net = self.net_config(self.net.width, self.net.depth)?;
        net.norm.kind = v.norm;
        net.use_pn = v.pn;
        net.use_ws = v.ws;
        Ok(NetSuite {
            net,
            input: self.input_source(None)?,
            batch: self.input.batch,
            standardize: self.input.standardize,
            seeds: self.run.seeds.seeds(),
        })
    }

    pub fn powerplot_variants(&self) -> Result<Vec<Variant>> {
        self.powerplot
            .variants
            .iter()
            .map(|v| Variant::parse(v, self.net.width))
            .collect()
    }

    pub fn thm1(&self) -> Result<Thm1Config> {
        let mut suite = self.suite(&self.thm1.size)?;
        suite.net.norm.kind = NormKind::LayerNorm;
        suite.net.use_pn = false;
        suite.net.use_ws = false;
        Ok(Thm1Config {
            suite,
            eta: self.thm1.eta,
            power_tol: self.thm1.power_tol,
            min_pass_fraction: self.thm1.min_pass_fraction,
            two_sided: false,
        })
    }

    pub fn thm1_identity(&self) -> Result<Thm1Config> {
        let s = &self.thm1_identity;
        let mut suite = self.suite(&s.size)?;
        suite.net.norm.kind = NormKind::LayerNorm;
        suite.net.phi = Activation::Identity;
        suite.net.use_pn = false;
        suite.net.use_ws = false;
        Ok(Thm1Config {
            suite,
            eta: s.eta,
            power_tol: s.power_tol,
            min_pass_fraction: s.min_pass_fraction,
            two_sided: true,
        })
    }

    pub fn thm2(&self) -> Result<Thm2Config> {
        let mut suite = self.suite(&self.thm2.size)?;
        suite.net.norm = Norm::exact(NormKind::InstanceNorm);
        suite.net.use_pn = false;
        suite.net.use_ws = false;
        Ok(Thm2Config { suite })
    }

    /// One configuration per activation in `[thm3].phis`. Channel 0 uses
    /// `γ = 1, β = 0`; the others draw `γ, β` from the `[net]`
    /// distributions.
    pub fn thm3(&self) -> Result<Vec<Thm3Config>> {
        let t = &self.thm3;
        t.phis
            .iter()
            .map(|p| {
                let phi: Activation = p.parse()?;
                let tol_power = if phi == Activation::Swish { t.tol_power_swish } else { t.tol_power };
                let mut cfg = Thm3Config::random_affine(
                    t.channels,
                    t.entries,
                    phi,
                    t.n_quantiles,
                    t.seed,
                    t.tol_mean,
                    tol_power,
                    &Distribution::normal(self.net.gamma_mean, self.net.gamma_std),
                    &Distribution::normal(self.net.beta_mean, self.net.beta_std),
                )?;
                if let (Some(g), Some(b)) = (cfg.gamma.first_mut(), cfg.beta.first_mut()) {
                    *g = 1.0;
                    *b = 0.0;
                }
                Ok(cfg)
            })
            .collect()
    }

    pub fn linearity(&self) -> Result<LinearityConfig> {
        let s = &self.linearity;
        let mut suite = self.suite(&s.size)?;
        suite.net.norm.kind = NormKind::LayerNorm;
        suite.net.use_pn = false;
        suite.net.use_ws = false;
        let reference_norm = match s.reference_norm.trim() {
            "" | "none" => None,
            name => Some(parse_norm(name, s.size.width)?),
        };
        Ok(LinearityConfig {
            suite,
            slack: s.slack,
            min_pass_fraction: s.min_pass_fraction,
            final_residual_max: Some(s.final_residual_max),
            reference_norm,
        })
    }

    pub fn pn_remedy(&self) -> Result<PnRemedyConfig> {
        let s = &self.pn_remedy;
        let mut suite = self.suite(&s.size)?;
        suite.net.norm.kind = NormKind::LayerNorm;
        suite.net.use_pn = false;
        suite.net.use_ws = false;
        Ok(PnRemedyConfig {
            suite,
            min_fraction_vs_ln: s.min_fraction_vs_ln,
            min_fraction_vs_ws: s.min_fraction_vs_ws,
        })
    }
}
