//! Executable checks of the collapse, instance-statistics and
//! proxy-normalization results, each producing a [`VerificationReport`].
//!
//! Every check is a deterministic function of its configuration: the
//! report's `config_digest` is the SHA-256 of the configuration's JSON
//! form and re-running with the recorded seeds reproduces `measured`
//! bit for bit. Only `meta` (wall-clock data) varies between runs.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{load_batch, InputSource};
use crate::layers::{Activation, NormKind};
use crate::proxy::{pn_act, ProxyParams, QuantileGrid};
use crate::randomnet::{forward_streaming, LayerTrace, RandomNetConfig};
use crate::stats::{mean_square, mean_var, pairwise_sum};
use crate::tensor::{sample, ActivationTensor, ChannelParams, Distribution, Rng, Shape};

/// Version of the JSON report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Stream used for input batches; parameter streams use small ids.
pub const INPUT_STREAM: u64 = u64::MAX;

/// Tolerance of the exact instance-statistics check.
pub const THM2_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub passed: bool,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub runtime_seconds: f64,
    pub generated_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: u32,
    pub check_id: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub measured: BTreeMap<String, f64>,
    pub bound_or_target: BTreeMap<String, f64>,
    pub tolerance: BTreeMap<String, f64>,
    pub passed: bool,
    pub notes: Vec<String>,
    pub per_seed: Vec<SeedOutcome>,
    pub meta: ReportMeta,
}

impl VerificationReport {
    fn new(check_id: &str, digest: String, seeds: Vec<u64>, started: Instant) -> Self {
        VerificationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            check_id: check_id.to_string(),
            config_digest: digest,
            seeds,
            measured: BTreeMap::new(),
            bound_or_target: BTreeMap::new(),
            tolerance: BTreeMap::new(),
            passed: false,
            notes: Vec::new(),
            per_seed: Vec::new(),
            meta: ReportMeta {
                runtime_seconds: started.elapsed().as_secs_f64(),
                generated_unix: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            },
        }
    }

    fn finish(mut self, started: Instant) -> Self {
        self.meta.runtime_seconds = started.elapsed().as_secs_f64();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// SHA-256 (hex) of the JSON form of `cfg`.
pub fn config_digest<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

/// A random-net experiment repeated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSuite {
    pub net: RandomNetConfig,
    pub input: InputSource,
    pub batch: usize,
    /// Standardize each input sample to mean 0, power 1.
    pub standardize: bool,
    pub seeds: Vec<u64>,
}

impl NetSuite {
    fn config_for(&self, seed: u64) -> RandomNetConfig {
        let mut net = self.net.clone();
        net.seed = seed;
        net
    }

    /// Input batch for `seed`.
    pub fn batch_for(&self, seed: u64) -> Result<ActivationTensor> {
        load_batch(&self.input, self.batch, &mut Rng::with_stream(seed, INPUT_STREAM), self.standardize)
    }

    /// Forward traces of the net for `seed`.
    pub fn traces(&self, seed: u64) -> Result<Vec<LayerTrace>> {
        let batch = self.batch_for(seed)?;
        forward_streaming(&self.config_for(seed), &batch)
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.input.channels() != self.net.input_channels {
            return Err(Error::Config(format!(
                "input source has {} channels, net expects {}",
                self.input.channels(),
                self.net.input_channels
            )));
        }
        self.net.validate()?;
        self.input.validate()
    }
}

/// Runs `f` for every seed, in parallel when more than one core is
/// available (`PROXYNORM_THREADS` caps the thread count). Results come
/// back in seed order.
pub fn map_seeds<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let threads = std::env::var("PROXYNORM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .clamp(1, seeds.len().max(1));
    if threads == 1 {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let r = f(seeds[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

fn fraction(passed: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        passed as f64 / total as f64
    }
}

fn max_of(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

fn mean_of(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        pairwise_sum(xs) / xs.len() as f64
    }
}

// ---------------------------------------------------------------------------
// Layer-normalized collapse

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm1Config {
    pub suite: NetSuite,
    /// Additive slack on the `ρ^(l−1)` bound.
    pub eta: f64,
    /// Allowed deviation of the layer power from one.
    pub power_tol: f64,
    pub min_pass_fraction: f64,
    /// Also require `ϱ ≥ ρ^(l−1) − η` (the identity-activation equality).
    pub two_sided: bool,
}

/// Checks `ϱ(y^l) ≤ ρ^(l−1) + η` and `|P(y^l) − 1| ≤ power_tol` at every
/// layer of layer-normalized random nets.
pub fn verify_thm1(cfg: &Thm1Config) -> Result<VerificationReport> {
    let started = Instant::now();
    cfg.suite.validate()?;
    let net = &cfg.suite.net;
    if net.norm.kind != NormKind::LayerNorm {
        return Err(Error::Hypothesis(format!("collapse check needs layer norm, got {}", net.norm.kind)));
    }
    if !net.phi.is_positive_homogeneous() {
        return Err(Error::Hypothesis(format!("collapse check needs a positive homogeneous activation, got {}", net.phi)));
    }
    if net.use_pn || net.use_ws {
        return Err(Error::Hypothesis("collapse check runs on plain layer-normalized nets".into()));
    }
    if cfg.two_sided && net.phi != Activation::Identity {
        return Err(Error::Hypothesis("the two-sided check needs the identity activation".into()));
    }
    let rho = net.rho();
    let outcomes = map_seeds(&cfg.suite.seeds, |seed| {
        let traces = cfg.suite.traces(seed)?;
        let mut excess = f64::NEG_INFINITY;
        let mut abs_dev: f64 = 0.0;
        let mut power_dev: f64 = 0.0;
        for t in &traces {
            let bound = rho.powi(t.layer_index as i32 - 1);
            let r = t.decomp_y.rho_ratio;
            excess = excess.max(r - bound);
            abs_dev = abs_dev.max((r - bound).abs());
            power_dev = power_dev.max((t.decomp_y.layer.p_total - 1.0).abs());
        }
        let upper_ok = excess <= cfg.eta;
        let lower_ok = !cfg.two_sided || abs_dev <= cfg.eta;
        let power_ok = power_dev <= cfg.power_tol;
        let mut values = BTreeMap::new();
        values.insert("max_excess_over_bound".into(), excess);
        values.insert("max_abs_deviation_from_bound".into(), abs_dev);
        values.insert("max_power_deviation".into(), power_dev);
        values.insert("final_rho_ratio".into(), traces.last().map_or(0.0, |t| t.decomp_y.rho_ratio));
        Ok(SeedOutcome {
            seed,
            passed: upper_ok && lower_ok && power_ok,
            values,
        })
    })?;

    let id = if cfg.two_sided { "thm1-identity" } else { "thm1" };
    let mut report = VerificationReport::new(id, config_digest(cfg), cfg.suite.seeds.clone(), started);
    let n_pass = outcomes.iter().filter(|o| o.passed).count();
    let frac = fraction(n_pass, outcomes.len());
    let get = |k: &str| outcomes.iter().map(|o| o.values[k]).collect::<Vec<_>>();
    report.measured.insert("pass_fraction".into(), frac);
    report.measured.insert("max_excess_over_bound".into(), max_of(get("max_excess_over_bound")));
    report.measured.insert("max_abs_deviation_from_bound".into(), max_of(get("max_abs_deviation_from_bound")));
    report.measured.insert("max_power_deviation".into(), max_of(get("max_power_deviation")));
    report.measured.insert("mean_final_rho_ratio".into(), mean_of(&get("final_rho_ratio")));
    report.bound_or_target.insert("rho".into(), rho);
    report.bound_or_target.insert("final_layer_bound".into(), rho.powi(net.depth as i32 - 1));
    report.bound_or_target.insert("min_pass_fraction".into(), cfg.min_pass_fraction);
    report.bound_or_target.insert("layer_power".into(), 1.0);
    report.tolerance.insert("eta".into(), cfg.eta);
    report.tolerance.insert("power".into(), cfg.power_tol);
    report.passed = frac >= cfg.min_pass_fraction;
    report.notes.push(format!(
        "width {:?}, depth {}, batch {}, float64; eta is an empirical finite-width slack",
        net.widths.first(),
        net.depth,
        cfg.suite.batch
    ));
    report.per_seed = outcomes;
    Ok(report.finish(started))
}

// ---------------------------------------------------------------------------
// Instance-normalized nets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm2Config {
    pub suite: NetSuite,
}

/// Checks that every channel of every instance-normalized layer has power
/// terms exactly (0, 0, 1, 0).
pub fn verify_thm2(cfg: &Thm2Config) -> Result<VerificationReport> {
    let started = Instant::now();
    let net = &cfg.suite.net;
    if net.norm.kind != NormKind::InstanceNorm {
        return Err(Error::Hypothesis(format!("instance check needs instance norm, got {}", net.norm.kind)));
    }
    if net.norm.eps != 0.0 {
        return Err(Error::Hypothesis(format!("instance check needs eps = 0, got {}", net.norm.eps)));
    }
    if cfg.suite.batch < 2 {
        return Err(Error::InsufficientData(format!(
            "power decomposition needs at least 2 samples, got {}",
            cfg.suite.batch
        )));
    }
    cfg.suite.validate()?;
    let outcomes = map_seeds(&cfg.suite.seeds, |seed| {
        let traces = cfg.suite.traces(seed)?;
        let mut worst = [0.0f64; 4];
        for t in &traces {
            for p in &t.decomp_y.per_channel {
                worst[0] = worst[0].max(p.p1.abs());
                worst[1] = worst[1].max(p.p2.abs());
                worst[2] = worst[2].max((p.p3 - 1.0).abs());
                worst[3] = worst[3].max(p.p4.abs());
            }
        }
        let names = ["max_abs_p1", "max_abs_p2", "max_abs_p3_minus_1", "max_abs_p4"];
        let values: BTreeMap<String, f64> = names.iter().map(|s| s.to_string()).zip(worst).collect();
        Ok(SeedOutcome {
            seed,
            passed: worst.iter().all(|&w| w <= THM2_TOL),
            values,
        })
    })?;
    let mut report = VerificationReport::new("thm2", config_digest(cfg), cfg.suite.seeds.clone(), started);
    for k in ["max_abs_p1", "max_abs_p2", "max_abs_p3_minus_1", "max_abs_p4"] {
        report
            .measured
            .insert(k.into(), max_of(outcomes.iter().map(|o| o.values[k])));
        report.tolerance.insert(k.into(), THM2_TOL);
    }
    report.bound_or_target.insert("p1".into(), 0.0);
    report.bound_or_target.insert("p2".into(), 0.0);
    report.bound_or_target.insert("p3".into(), 1.0);
    report.bound_or_target.insert("p4".into(), 0.0);
    report.passed = outcomes.iter().all(|o| o.passed);
    report.notes.push("exact check, not statistical".into());
    report.per_seed = outcomes;
    Ok(report.finish(started))
}

// ---------------------------------------------------------------------------
// Proxy-normalized activations on Gaussian channels

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm3Config {
    pub entries_per_channel: usize,
    pub phi: Activation,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub n_quantiles: usize,
    pub seed: u64,
    pub tol_mean: f64,
    pub tol_power: f64,
}

impl Thm3Config {
    /// `channels` channels with `γ`, `β` drawn from the given
    /// distributions under `seed`.
    #[allow(clippy::too_many_arguments)]
    pub fn random_affine(
        channels: usize,
        entries_per_channel: usize,
        phi: Activation,
        n_quantiles: usize,
        seed: u64,
        tol_mean: f64,
        tol_power: f64,
        nu_gamma: &Distribution,
        nu_beta: &Distribution,
    ) -> Result<Self> {
        let gamma = sample(nu_gamma, &mut Rng::with_stream(seed, 1), channels)?;
        let beta = sample(nu_beta, &mut Rng::with_stream(seed, 2), channels)?;
        Ok(Thm3Config {
            entries_per_channel,
            phi,
            gamma,
            beta,
            n_quantiles,
            seed,
            tol_mean,
            tol_power,
        })
    }
}

/// Checks that PN-act with zero additional parameters and eps = 0 maps
/// exactly Gaussian channels to channels of mean 0 and power 1.
pub fn verify_thm3(cfg: &Thm3Config) -> Result<VerificationReport> {
    let started = Instant::now();
    let params = ChannelParams::new(cfg.gamma.clone(), cfg.beta.clone())?;
    let c = params.len();
    if c == 0 || cfg.entries_per_channel < 2 {
        return Err(Error::Config("need at least one channel and two entries".into()));
    }
    let shape = Shape::new(cfg.entries_per_channel, 1, 1, c);
    let mut rng = Rng::new(cfg.seed);
    let y = ActivationTensor::new(shape, (0..shape.len()).map(|_| rng.standard_normal()).collect())?;
    let proxy = ProxyParams::zeroed(c, 0.0, cfg.n_quantiles);
    let z = pn_act(&y, &params, cfg.phi, &proxy)?;

    let fine = QuantileGrid::new(cfg.n_quantiles * 8)?;
    let coarse = QuantileGrid::new(cfg.n_quantiles)?;
    let mut per_channel = Vec::with_capacity(c);
    for ch in 0..c {
        let values = z.channel(ch);
        let (m, v) = mean_var(&values);
        let power = mean_square(&values);
        let sampling_se = (v / values.len() as f64).sqrt();
        let (_, vc) = coarse.moments(cfg.phi, params.gamma[ch], params.beta[ch], 0.0, 1.0);
        let (_, vf) = fine.moments(cfg.phi, params.gamma[ch], params.beta[ch], 0.0, 1.0);
        let quad_err = if vf > 0.0 { (vf / vc - 1.0).abs() } else { 0.0 };
        per_channel.push((m, power, sampling_se, quad_err));
    }
    let max_mean = max_of(per_channel.iter().map(|p| p.0.abs()));
    let max_power = max_of(per_channel.iter().map(|p| (p.1 - 1.0).abs()));
    let id = format!("thm3-{}", cfg.phi.label().replace([':', ','], "-"));
    let mut report = VerificationReport::new(&id, config_digest(cfg), vec![cfg.seed], started);
    report.measured.insert("max_abs_mean".into(), max_mean);
    report.measured.insert("max_abs_power_minus_1".into(), max_power);
    report.measured.insert("sampling_std_error_mean".into(), max_of(per_channel.iter().map(|p| p.2)));
    report.measured.insert("quadrature_rel_error_var".into(), max_of(per_channel.iter().map(|p| p.3)));
    report.bound_or_target.insert("mean".into(), 0.0);
    report.bound_or_target.insert("power".into(), 1.0);
    report.tolerance.insert("mean".into(), cfg.tol_mean);
    report.tolerance.insert("power".into(), cfg.tol_power);
    report.passed = max_mean <= cfg.tol_mean && max_power <= cfg.tol_power;
    report.notes.push(format!(
        "{} channels of {} standard-normal entries, {} with {} quantiles; quadrature error estimated against an 8x finer grid",
        c, cfg.entries_per_channel, cfg.phi, cfg.n_quantiles
    ));
    Ok(report.finish(started))
}

// ---------------------------------------------------------------------------
// Collapse and channel-wise linearity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityConfig {
    pub suite: NetSuite,
    /// Allowed increase between consecutive layers after the peak.
    pub slack: f64,
    pub min_pass_fraction: f64,
    /// Optional ceiling on the final-layer residual of every passing seed.
    pub final_residual_max: Option<f64>,
    /// Optional norm whose mean final residual must exceed the main one's.
    pub reference_norm: Option<NormKind>,
}

fn residual_sequence(traces: &[LayerTrace]) -> Vec<f64> {
    traces.iter().map(|t| t.linearity.residual_ratio).collect()
}

/// Checks that the linearity residual of layer-normalized nets is
/// eventually decreasing with depth and ends below where it started.
pub fn verify_linearity_link(cfg: &LinearityConfig) -> Result<VerificationReport> {
    let started = Instant::now();
    cfg.suite.validate()?;
    let net = &cfg.suite.net;
    if net.norm.kind != NormKind::LayerNorm {
        return Err(Error::Hypothesis(format!("linearity check needs layer norm, got {}", net.norm.kind)));
    }
    if !net.phi.is_positive_homogeneous() {
        return Err(Error::Hypothesis(format!("linearity check needs a two-slope activation, got {}", net.phi)));
    }
    let outcomes = map_seeds(&cfg.suite.seeds, |seed| {
        let r = residual_sequence(&cfg.suite.traces(seed)?);
        let peak = r
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > r[best] { i } else { best });
        let monotone = r[peak..].windows(2).all(|w| w[1] <= w[0] + cfg.slack);
        let first = r[0];
        let last = *r.last().unwrap();
        let below_cap = cfg.final_residual_max.is_none_or(|m| last <= m);
        let mut values = BTreeMap::new();
        values.insert("l0".into(), (peak + 1) as f64);
        values.insert("first_residual".into(), first);
        values.insert("final_residual".into(), last);
        values.insert("monotone_after_l0".into(), if monotone { 1.0 } else { 0.0 });
        Ok(SeedOutcome {
            seed,
            passed: monotone && last < first && below_cap,
            values,
        })
    })?;
    let n_pass = outcomes.iter().filter(|o| o.passed).count();
    let frac = fraction(n_pass, outcomes.len());
    let finals: Vec<f64> = outcomes.iter().map(|o| o.values["final_residual"]).collect();
    let mut report = VerificationReport::new("linearity", config_digest(cfg), cfg.suite.seeds.clone(), started);
    report.measured.insert("pass_fraction".into(), frac);
    report.measured.insert("mean_final_residual".into(), mean_of(&finals));
    report.measured.insert("max_final_residual".into(), max_of(finals.iter().copied()));
    report
        .measured
        .insert("max_l0".into(), max_of(outcomes.iter().map(|o| o.values["l0"])));
    report.bound_or_target.insert("min_pass_fraction".into(), cfg.min_pass_fraction);
    if let Some(m) = cfg.final_residual_max {
        report.bound_or_target.insert("final_residual_max".into(), m);
    }
    report.tolerance.insert("slack".into(), cfg.slack);
    let mut passed = frac >= cfg.min_pass_fraction;

    if let Some(kind) = cfg.reference_norm {
        let mut reference = cfg.suite.clone();
        reference.net.norm.kind = kind;
        reference.validate()?;
        let ref_finals = map_seeds(&reference.seeds, |seed| {
            Ok(*residual_sequence(&reference.traces(seed)?).last().unwrap())
        })?;
        let ref_mean = mean_of(&ref_finals);
        report.measured.insert("reference_mean_final_residual".into(), ref_mean);
        report.notes.push(format!("reference norm {kind}"));
        passed &= mean_of(&finals) < ref_mean;
    }
    report.passed = passed;
    report.notes.push(format!("width {:?}, depth {}", net.widths.first(), net.depth));
    report.per_seed = outcomes;
    Ok(report.finish(started))
}

// ---------------------------------------------------------------------------
// Proxy Normalization against plain and weight-standardized LN

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnRemedyConfig {
    /// Base layer-normalized net; PN and WS variants are derived from it.
    pub suite: NetSuite,
    pub min_fraction_vs_ln: f64,
    pub min_fraction_vs_ws: f64,
}

/// Paired-seed comparison of the final-layer collapse ratio under LN+PN
/// against plain LN and LN+WS.
pub fn verify_pn_remedy(cfg: &PnRemedyConfig) -> Result<VerificationReport> {
    let started = Instant::now();
    cfg.suite.validate()?;
    if cfg.suite.net.norm.kind != NormKind::LayerNorm || cfg.suite.net.use_pn || cfg.suite.net.use_ws {
        return Err(Error::Hypothesis("PN comparison starts from a plain layer-normalized net".into()));
    }
    let variant = |pn: bool, ws: bool| {
        let mut s = cfg.suite.clone();
        s.net.use_pn = pn;
        s.net.use_ws = ws;
        s
    };
    let (ln, pn, ws) = (variant(false, false), variant(true, false), variant(false, true));
    let final_rho = |s: &NetSuite, seed: u64| -> Result<f64> {
        Ok(s.traces(seed)?.last().map_or(0.0, |t| t.decomp_y.rho_ratio))
    };
    let outcomes = map_seeds(&cfg.suite.seeds, |seed| {
        let (a, b, c) = (final_rho(&ln, seed)?, final_rho(&pn, seed)?, final_rho(&ws, seed)?);
        let mut values = BTreeMap::new();
        values.insert("rho_ln".into(), a);
        values.insert("rho_ln_pn".into(), b);
        values.insert("rho_ln_ws".into(), c);
        Ok(SeedOutcome {
            seed,
            passed: b > a && b > c,
            values,
        })
    })?;
    let n = outcomes.len();
    let vs_ln = fraction(outcomes.iter().filter(|o| o.values["rho_ln_pn"] > o.values["rho_ln"]).count(), n);
    let vs_ws = fraction(outcomes.iter().filter(|o| o.values["rho_ln_pn"] > o.values["rho_ln_ws"]).count(), n);
    let mean = |k: &str| mean_of(&outcomes.iter().map(|o| o.values[k]).collect::<Vec<_>>());
    let mut report = VerificationReport::new("pn-remedy", config_digest(cfg), cfg.suite.seeds.clone(), started);
    report.measured.insert("fraction_pn_above_ln".into(), vs_ln);
    report.measured.insert("fraction_pn_above_ws".into(), vs_ws);
    report.measured.insert("mean_final_rho_ln".into(), mean("rho_ln"));
    report.measured.insert("mean_final_rho_ln_pn".into(), mean("rho_ln_pn"));
    report.measured.insert("mean_final_rho_ln_ws".into(), mean("rho_ln_ws"));
    report.bound_or_target.insert("min_fraction_vs_ln".into(), cfg.min_fraction_vs_ln);
    report.bound_or_target.insert("min_fraction_vs_ws".into(), cfg.min_fraction_vs_ws);
    report.passed = vs_ln >= cfg.min_fraction_vs_ln && vs_ws >= cfg.min_fraction_vs_ws;
    report.per_seed = outcomes;
    Ok(report.finish(started))
}
