use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use proxynorm::config::{ConfigBuilder, RunConfig, Variant};
use proxynorm::layers::Activation;
use proxynorm::output::{write_file, Powerplot};
use proxynorm::proxy::{norm_cdf, norm_pdf, proxy_moments};
use proxynorm::verify::{
    map_seeds, verify_linearity_link, verify_pn_remedy, verify_thm1, verify_thm2, verify_thm3, VerificationReport,
};
use proxynorm::Error;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Random-net power diagnostics, normalization checks and Proxy
/// Normalization tables.
#[derive(Parser, Debug)]
#[command(name = "proxynorm", version)]
struct Cli {
    /// TOML config file layered over the shipped defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set net.width=64`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Output directory (default: run.output_dir, then $PROXYNORM_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-layer power decomposition of random nets, one CSV/SVG/JSON per variant.
    Powerplot(PowerplotArgs),
    /// Run verification suites and write JSON reports.
    Verify(VerifyArgs),
    /// Proxy moments on the quantile grid beside closed forms.
    ProxyTable(ProxyTableArgs),
}

#[derive(Args, Debug)]
struct PowerplotArgs {
    /// Norm of a variant (bn, ln, in, gn, gn<G>); repeatable.
    #[arg(long = "norm")]
    norms: Vec<String>,
    /// Add Proxy Normalization to every variant.
    #[arg(long)]
    pn: bool,
    /// Add weight standardization to every variant.
    #[arg(long)]
    ws: bool,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Seed count or TOML list, e.g. `5` or `[1,2]`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    phi: Option<String>,
    /// Comma-separated subset of csv, json, svg.
    #[arg(long)]
    emit: Option<String>,
    /// Width 1024 on 4x4 inputs; combine with `--depth` up to 200.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    Thm1,
    Thm1Identity,
    Thm2,
    Thm3,
    Linearity,
    PnRemedy,
    All,
}

impl Suite {
    fn section(self) -> &'static str {
        match self {
            Suite::Thm1 => "thm1",
            Suite::Thm1Identity => "thm1_identity",
            Suite::Thm2 => "thm2",
            Suite::Thm3 => "thm3",
            Suite::Linearity => "linearity",
            Suite::PnRemedy => "pn_remedy",
            Suite::All => "",
        }
    }

    fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![
                Suite::Thm1,
                Suite::Thm1Identity,
                Suite::Thm2,
                Suite::Thm3,
                Suite::Linearity,
                Suite::PnRemedy,
            ],
            s => vec![s],
        }
    }
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(value_enum)]
    suite: Suite,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// Seed count or TOML list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    min_pass_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct ProxyTableArgs {
    /// identity, relu, swish or twoslope:<a_pos>,<a_neg>
    phi: String,
    #[arg(allow_negative_numbers = true)]
    gamma: f64,
    #[arg(allow_negative_numbers = true)]
    beta: f64,
    n: usize,
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Hypothesis(_) | Error::Parameter(_) | Error::Format { .. } | Error::Io { .. } => {
            EXIT_USAGE
        }
        _ => EXIT_FAIL,
    }
}

fn base_builder(cli: &Cli) -> Result<ConfigBuilder, Error> {
    let mut b = ConfigBuilder::default();
    if let Some(path) = &cli.config {
        b = b.with_file(path)?;
    }
    for kv in &cli.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        b = b.set(k.trim(), v.trim())?;
    }
    if let Some(out) = &cli.out {
        b = b.set_str("run.output_dir", &out.to_string_lossy())?;
    }
    Ok(b)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Powerplot(a) => cmd_powerplot(&cli, a),
        Command::Verify(a) => cmd_verify(&cli, a),
        Command::ProxyTable(a) => cmd_proxy_table(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}

fn cmd_powerplot(cli: &Cli, a: &PowerplotArgs) -> Result<u8, Error> {
    let mut b = base_builder(cli)?;
    if a.full_scale {
        b = b.set("net.width", "1024")?.set("input.h", "4")?.set("input.w", "4")?;
    }
    if let Some(v) = a.depth {
        b = b.set("net.depth", &v.to_string())?;
    }
    if let Some(v) = a.width {
        b = b.set("net.width", &v.to_string())?;
    }
    if let Some(v) = &a.seeds {
        b = b.set("run.seeds", v)?;
    }
    if let Some(v) = a.batch {
        b = b.set("input.batch", &v.to_string())?;
    }
    if let Some(v) = &a.phi {
        b = b.set_str("net.phi", v)?;
    }
    if let Some(v) = &a.emit {
        let list: Vec<String> = v.split(',').map(|s| format!("{:?}", s.trim())).collect();
        b = b.set("run.emit", &format!("[{}]", list.join(",")))?;
    }
    let cfg = b.build()?;
    let mut variants = if a.norms.is_empty() {
        cfg.powerplot_variants()?
    } else {
        a.norms
            .iter()
            .map(|n| Variant::parse(n, cfg.net.width))
            .collect::<Result<Vec<_>, _>>()?
    };
    for v in &mut variants {
        v.pn |= a.pn;
        v.ws |= a.ws;
    }

    let mut plots = Vec::with_capacity(variants.len());
    for v in &variants {
        let suite = cfg.powerplot_suite(*v)?;
        eprintln!(
            "powerplot {}: width {}, depth {}, {} seeds",
            v.label(),
            cfg.net.width,
            cfg.net.depth,
            suite.seeds.len()
        );
        let traces = map_seeds(&suite.seeds, |seed| suite.traces(seed))?;
        plots.push((*v, Powerplot::aggregate(&v.label(), &suite.seeds, &traces)?));
    }

    let dir = cfg.output_dir();
    for (v, plot) in &plots {
        let stem = format!("powerplot_{}", v.file_stem());
        if cfg.emits("csv") {
            write_file(&dir.join(format!("{stem}.csv")), &plot.to_csv())?;
        }
        if cfg.emits("json") {
            write_file(&dir.join(format!("{stem}.json")), &plot.to_json())?;
        }
        if cfg.emits("svg") {
            write_file(&dir.join(format!("{stem}.svg")), &plot.to_svg())?;
        }
        let last = plot.rows.last().expect("depth >= 1");
        println!(
            "{}: layer {} p1 {:.4} p2 {:.4} p3 {:.4} p4 {:.4} rho {:.4} linearity {:.4}",
            v.label(),
            last.layer,
            last.p1.mean,
            last.p2.mean,
            last.p3.mean,
            last.p4.mean,
            last.rho.mean,
            last.linearity_residual.mean
        );
    }
    eprintln!("wrote {}", dir.display());
    Ok(0)
}

fn apply_suite_flags(mut b: ConfigBuilder, a: &VerifyArgs, suites: &[Suite]) -> Result<ConfigBuilder, Error> {
    let flags: [(&str, Option<String>); 6] = [
        ("width", a.width.map(|v| v.to_string())),
        ("depth", a.depth.map(|v| v.to_string())),
        ("seeds", a.seeds.clone()),
        ("batch", a.batch.map(|v| v.to_string())),
        ("eta", a.eta.map(|v| format!("{v:?}"))),
        ("min_pass_fraction", a.min_pass_fraction.map(|v| format!("{v:?}"))),
    ];
    for (key, value) in flags {
        let Some(value) = value else { continue };
        let mut applied = false;
        for s in suites {
            let path = format!("{}.{key}", s.section());
            if b.has_key(&path) {
                b = b.set(&path, &value)?;
                applied = true;
            }
        }
        if !applied {
            return Err(Error::Config(format!("--{} does not apply to the selected suite", key.replace('_', "-"))));
        }
    }
    Ok(b)
}

fn run_suite(cfg: &RunConfig, suite: Suite) -> Result<Vec<VerificationReport>, Error> {
    Ok(match suite {
        Suite::Thm1 => vec![verify_thm1(&cfg.thm1()?)?],
        Suite::Thm1Identity => vec![verify_thm1(&cfg.thm1_identity()?)?],
        Suite::Thm2 => vec![verify_thm2(&cfg.thm2()?)?],
        Suite::Thm3 => cfg.thm3()?.iter().map(verify_thm3).collect::<Result<_, _>>()?,
        Suite::Linearity => vec![verify_linearity_link(&cfg.linearity()?)?],
        Suite::PnRemedy => vec![verify_pn_remedy(&cfg.pn_remedy()?)?],
        Suite::All => unreachable!("expanded before running"),
    })
}

fn cmd_verify(cli: &Cli, a: &VerifyArgs) -> Result<u8, Error> {
    let suites = a.suite.expand();
    let cfg = apply_suite_flags(base_builder(cli)?, a, &suites)?.build()?;
    let mut reports = Vec::new();
    for s in &suites {
        eprintln!("verify {}", s.section());
        reports.extend(run_suite(&cfg, *s)?);
    }
    let dir = cfg.output_dir();
    for r in &reports {
        write_file(&dir.join(format!("report_{}.json", r.check_id)), &r.to_json())?;
        let measured: Vec<String> = r.measured.iter().map(|(k, v)| format!("{k}={v:.4e}")).collect();
        println!(
            "{} {} ({:.1}s) {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.check_id,
            r.meta.runtime_seconds,
            measured.join(" ")
        );
    }
    eprintln!("wrote {}", dir.display());
    Ok(if reports.iter().all(|r| r.passed) { 0 } else { EXIT_FAIL })
}

/// Mean and variance of `max(X, 0)` for `X ~ N(m, s²)`.
fn relu_gaussian(m: f64, s: f64) -> (f64, f64) {
    if s == 0.0 {
        return (m.max(0.0), 0.0);
    }
    let a = m / s;
    let (cdf, pdf) = (norm_cdf(a), norm_pdf(a));
    let mean = m * cdf + s * pdf;
    let second = (m * m + s * s) * cdf + m * s * pdf;
    (mean, (second - mean * mean).max(0.0))
}

fn cmd_proxy_table(a: &ProxyTableArgs) -> Result<u8, Error> {
    let phi: Activation = match a.phi.parse() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_USAGE);
        }
    };
    let (gm, gv) = proxy_moments(phi, a.gamma, a.beta, 0.0, 1.0, a.n)?;
    let analytic = match phi {
        Activation::Identity => Some((a.beta, a.gamma * a.gamma)),
        Activation::Relu => Some(relu_gaussian(a.beta, a.gamma.abs())),
        _ => None,
    };
    println!("phi {} gamma {} beta {} n {}", phi, a.gamma, a.beta, a.n);
    match analytic {
        Some((am, av)) => {
            println!("{:<6}{:>18}{:>18}{:>14}", "", "grid", "analytic", "abs_error");
            println!("{:<6}{:>18.6}{:>18.6}{:>14.3e}", "mean", gm, am, (gm - am).abs());
            println!("{:<6}{:>18.6}{:>18.6}{:>14.3e}", "var", gv, av, (gv - av).abs());
        }
        None => {
            println!("{:<6}{:>18}", "", "grid");
            println!("{:<6}{:>18.6}", "mean", gm);
            println!("{:<6}{:>18.6}", "var", gv);
        }
    }
    Ok(0)
}
