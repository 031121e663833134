//! Command-line frontend.
//!
//! Every subcommand computes all of its outputs in memory, then writes them
//! into one output directory together with a `manifest.json` that records the
//! resolved parameters, input digests and output digests. `replay` re-runs a
//! manifest and checks that every output comes out byte-identical.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtest::{run, BacktestConfig, CostConvention};
use crate::metrics::{report, report_underlying, write_reports_csv, TrackingWindow};
use crate::policy::{ControllerConfig, TargetSpec};
use crate::search::{default_gains, default_thetas, run_grid, GridSpec};
use crate::series::{generate, load_csv, ReturnSeries, SynthSpec, ValueKind, PERIODS_PER_YEAR};
use crate::uncertainty::{ewma_distribution, histogram, mc_band, mc_estimates, write_band_csv, write_histogram_csv, McBandSpec};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "voltarget", version, about = "Volatility-targeted index construction and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Backtest one policy and write its trajectory and metrics.
    Backtest(BacktestArgs),
    /// Monte Carlo percentile bands and the chi approximation for an EWMA vol estimate.
    Bands(BandsArgs),
    /// Sweep controller gain and smoothing and write the metric surfaces.
    Grid(GridArgs),
    /// Re-run a manifest into a new directory and verify the outputs match.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    OpenLoop,
    Control,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Risky asset CSV.
    #[arg(long, conflicts_with = "synth")]
    pub risky: Option<PathBuf>,
    #[arg(long, default_value = "date")]
    pub risky_date_col: String,
    #[arg(long, default_value = "close")]
    pub risky_col: String,
    #[arg(long, value_enum, default_value = "price")]
    pub risky_kind: ValueKind,
    /// Risk-free CSV; rows are matched to the risky series by date.
    #[arg(long, conflicts_with = "rate")]
    pub riskfree: Option<PathBuf>,
    #[arg(long, default_value = "date")]
    pub riskfree_date_col: String,
    #[arg(long, default_value = "rate")]
    pub riskfree_col: String,
    #[arg(long, value_enum, default_value = "annual-rate")]
    pub riskfree_kind: ValueKind,
    /// Constant risk-free rate in annual percent.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Inline synthetic risky series, e.g. `iid:vol=0.30,len=5000,seed=1` or
    /// `regime:vols=0.10;0.30,switch=2500,len=5000`. Vols and mean are annualized.
    #[arg(long)]
    pub synth: Option<String>,
    /// Seed for synthetic data when the spec does not name one.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PolicyArgs {
    /// Annualized target volatility.
    #[arg(long, default_value_t = 0.15)]
    pub target_vol: f64,
    #[arg(long, default_value_t = 1.5)]
    pub leverage: f64,
    #[arg(long, default_value_t = 126.0)]
    pub halflife: f64,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[arg(long, default_value_t = 5.0)]
    pub spread_bps: f64,
    #[arg(long, value_enum, default_value = "half-spread")]
    pub cost_convention: CostConvention,
    #[arg(long, default_value_t = 55.0)]
    pub gain: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub kappa_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa_max: f64,
    #[arg(long, default_value_t = 0.6)]
    pub theta: f64,
    /// Rows over which the vol tracking error is averaged.
    #[arg(long, value_enum, default_value = "post-warmup")]
    pub te_window: TrackingWindow,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BandsArgs {
    /// Annualized true volatility of the simulated returns.
    #[arg(long, default_value_t = 0.15)]
    pub target_vol: f64,
    #[arg(long, default_value_t = 126.0)]
    pub halflife: f64,
    #[arg(long, default_value_t = 10_000)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 252)]
    pub burn_in: usize,
    #[arg(long, value_delimiter = ',', default_value = "10,90")]
    pub percentiles: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub hist_bins: usize,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Comma-separated gains; defaults to {0, e^0, e^0.5, ..., e^5}.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub gains: Option<Vec<f64>>,
    /// Comma-separated smoothing factors; defaults to {0, 0.1, ..., 0.9}.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub thetas: Option<Vec<f64>>,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by a previous run.
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// The parsed command, minus the output directory.
    pub command: Command,
    /// Fully resolved configuration the run used.
    pub resolved: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        name: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Everything a subcommand produced, ready to be written.
struct RunOutput {
    subcommand: &'static str,
    resolved: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    files: Vec<(String, Vec<u8>)>,
}

/// Parses the inline synthetic-series grammar into a per-period spec.
pub fn parse_synth(text: &str, default_seed: u64) -> Result<SynthSpec> {
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| anyhow!("synthetic spec '{text}' must look like kind:key=value,..."))?;
    let per = PERIODS_PER_YEAR.sqrt();
    let mut vols: Option<Vec<f64>> = None;
    let mut switches: Vec<usize> = Vec::new();
    let mut len: Option<usize> = None;
    let mut seed = default_seed;
    let mut mean = 0.0;
    let list = |v: &str| -> Result<Vec<f64>> {
        v.split(';')
            .map(|x| x.trim().parse::<f64>().with_context(|| format!("bad number '{x}'")))
            .collect()
    };
    for pair in rest.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got '{pair}'"))?;
        match key.trim() {
            "vol" | "vols" => vols = Some(list(value)?.into_iter().map(|v| v / per).collect()),
            "switch" => {
                switches = value
                    .split(';')
                    .map(|x| x.trim().parse::<usize>().with_context(|| format!("bad index '{x}'")))
                    .collect::<Result<_>>()?
            }
            "len" => len = Some(value.trim().parse().with_context(|| format!("bad length '{value}'"))?),
            "seed" => seed = value.trim().parse().with_context(|| format!("bad seed '{value}'"))?,
            "mean" => mean = value.trim().parse::<f64>().with_context(|| format!("bad mean '{value}'"))? / PERIODS_PER_YEAR,
            other => bail!("unknown synthetic key '{other}'"),
        }
    }
    let vols = vols.ok_or_else(|| anyhow!("synthetic spec needs vol= or vols="))?;
    let length = len.ok_or_else(|| anyhow!("synthetic spec needs len="))?;
    let spec = match kind.trim() {
        "iid" => {
            ensure!(vols.len() == 1 && switches.is_empty(), "iid takes one vol and no switch");
            SynthSpec::iid_normal(mean, vols[0], length, seed)
        }
        "regime" => SynthSpec::regime_switch(mean, vols, switches, length, seed),
        other => bail!("unknown synthetic kind '{other}' (expected iid or regime)"),
    };
    spec.validate()?;
    Ok(spec)
}

/// Loads or generates the risky and risk-free series, aligned by date.
fn load_inputs(data: &DataArgs) -> Result<(ReturnSeries, ReturnSeries, Vec<FileDigest>, Option<u64>)> {
    let mut inputs = Vec::new();
    let (risky, seed) = match (&data.risky, &data.synth) {
        (Some(path), None) => {
            inputs.push(digest_file(path)?);
            let s = load_csv(path, &data.risky_date_col, &data.risky_col, data.risky_kind)
                .with_context(|| format!("loading risky series {}", path.display()))?;
            (s, None)
        }
        (None, Some(text)) => {
            let spec = parse_synth(text, data.seed)?;
            (generate(&spec)?, Some(spec.seed))
        }
        _ => bail!("exactly one of --risky or --synth is required"),
    };
    let (risky, riskfree) = match (&data.riskfree, data.rate) {
        (Some(path), None) => {
            inputs.push(digest_file(path)?);
            let rf = load_csv(path, &data.riskfree_date_col, &data.riskfree_col, data.riskfree_kind)
                .with_context(|| format!("loading risk-free series {}", path.display()))?;
            let (a, b) = ReturnSeries::align(&risky, &rf);
            ensure!(!a.is_empty(), "risky and risk-free series share no dates");
            (a, b)
        }
        (None, Some(rate)) => {
            let rf = ReturnSeries::constant("rate", risky.timestamps().to_vec(), crate::series::annual_rate_to_period(rate))?;
            (risky, rf)
        }
        (None, None) if data.synth.is_some() => {
            let rf = ReturnSeries::constant("rate", risky.timestamps().to_vec(), 0.0)?;
            (risky, rf)
        }
        _ => bail!("real data needs --riskfree <csv> or --rate <annual %>"),
    };
    Ok((risky, riskfree, inputs, seed))
}

fn backtest_config(policy: &PolicyArgs, controlled: bool) -> Result<BacktestConfig> {
    let per = PERIODS_PER_YEAR.sqrt();
    let target = TargetSpec::new(policy.target_vol / per, policy.leverage)?;
    let controller = if controlled {
        Some(ControllerConfig::new(policy.gain, policy.kappa_min, policy.kappa_max, policy.theta)?)
    } else {
        None
    };
    let cfg = BacktestConfig {
        target,
        estimator_halflife: policy.halflife,
        controller,
        warmup_steps: policy.warmup,
        spread_bps: policy.spread_bps,
        cost_convention: policy.cost_convention,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn cmd_backtest(args: &BacktestArgs) -> Result<RunOutput> {
    let (risky, riskfree, inputs, seed) = load_inputs(&args.data)?;
    let cfg = backtest_config(&args.policy, args.mode == Mode::Control)?;
    let result = run(&risky, &riskfree, &cfg)?;
    let index = report(&result, args.policy.te_window)?;
    let underlying = report_underlying(&result, args.policy.te_window)?;
    let per = PERIODS_PER_YEAR.sqrt();
    let metrics = serde_json::json!({
        "target_vol_per_period": cfg.target.sigma_tar,
        "target_vol_annualized": cfg.target.sigma_tar * per,
        "index": index,
        "underlying": underlying,
    });
    let files = vec![
        ("trajectory.csv".to_string(), csv_bytes(|b| result.write_csv(b))?),
        ("trajectory.json".to_string(), json_bytes(&result)?),
        ("metrics.json".to_string(), json_bytes(&metrics)?),
        (
            "metrics.csv".to_string(),
            csv_bytes(|b| write_reports_csv(&[index.clone(), underlying.clone()], b))?,
        ),
    ];
    Ok(RunOutput {
        subcommand: "backtest",
        resolved: serde_json::to_value(&cfg)?,
        seed,
        inputs,
        files,
    })
}

fn cmd_bands(args: &BandsArgs) -> Result<RunOutput> {
    let per = PERIODS_PER_YEAR.sqrt();
    let spec = McBandSpec {
        sigma_true: args.target_vol / per,
        n_samples: args.n_samples,
        burn_in: args.burn_in,
        halflife: args.halflife,
        percentiles: args.percentiles.clone(),
        seed: args.seed,
    };
    spec.validate()?;
    let levels = mc_band(&spec)?;
    let estimates = mc_estimates(&spec)?;
    let mut files = vec![(
        "band.csv".to_string(),
        csv_bytes(|b| write_band_csv(&levels, PERIODS_PER_YEAR, b))?,
    )];
    files.push((
        "band.json".to_string(),
        json_bytes(&serde_json::json!({
            "spec": spec,
            "levels": levels.iter().map(|l| serde_json::json!({
                "percentile": l.percentile,
                "level": l.level,
                "level_annualized": l.level * per,
            })).collect::<Vec<_>>(),
        }))?,
    ));
    // A zero true vol has no chi approximation; only the band is written.
    if spec.sigma_true > 0.0 {
        let approx = ewma_distribution(spec.sigma_true, spec.halflife)?;
        let quantiles: Vec<_> = spec
            .percentiles
            .iter()
            .map(|&p| {
                let q = approx.quantile(p / 100.0);
                serde_json::json!({"percentile": p, "level": q, "level_annualized": q * per})
            })
            .collect();
        files.push((
            "chi_approx.json".to_string(),
            json_bytes(&serde_json::json!({
                "dof": approx.dof,
                "scale": approx.scale,
                "mean": approx.mean(),
                "std": approx.std(),
                "median": approx.median(),
                "mean_annualized": approx.mean() * per,
                "std_annualized": approx.std() * per,
                "quantiles": quantiles,
            }))?,
        ));
        let bins = histogram(&estimates, args.hist_bins, &approx);
        files.push(("histogram.csv".to_string(), csv_bytes(|b| write_histogram_csv(&bins, b))?));
    }
    Ok(RunOutput {
        subcommand: "bands",
        resolved: serde_json::to_value(&spec)?,
        seed: Some(args.seed),
        inputs: Vec::new(),
        files,
    })
}

fn cmd_grid(args: &GridArgs) -> Result<RunOutput> {
    let gains = args.gains.clone().unwrap_or_else(default_gains);
    let thetas = args.thetas.clone().unwrap_or_else(default_thetas);
    ensure!(!gains.is_empty(), "--gains must not be empty");
    ensure!(!thetas.is_empty(), "--thetas must not be empty");
    let (risky, riskfree, inputs, seed) = load_inputs(&args.data)?;
    let mut base = backtest_config(&args.policy, false)?;
    base.controller = Some(ControllerConfig::degenerate(
        args.policy.gain,
        args.policy.kappa_min,
        args.policy.kappa_max,
        args.policy.theta,
    )?);
    let spec = GridSpec {
        gains,
        thetas,
        base,
        window: args.policy.te_window,
    };
    let grid = run_grid(&risky, &riskfree, &spec)?;
    let files = vec![
        ("grid.csv".to_string(), csv_bytes(|b| grid.write_long_csv(b))?),
        ("grid.json".to_string(), json_bytes(&grid.to_matrix_json())?),
    ];
    Ok(RunOutput {
        subcommand: "grid",
        resolved: serde_json::to_value(&spec)?,
        seed,
        inputs,
        files,
    })
}

fn write_outputs(out: &Path, command: &Command, output: RunOutput) -> Result<RunManifest> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: output.subcommand.to_string(),
        command: command.clone(),
        resolved: output.resolved,
        seed: output.seed,
        inputs: output.inputs,
        outputs: output
            .files
            .iter()
            .map(|(name, bytes)| FileDigest {
                name: name.clone(),
                sha256: sha256_hex(bytes),
            })
            .collect(),
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, bytes) in &output.files {
        let path = out.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, json_bytes(&manifest)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(manifest)
}

fn compute(command: &Command) -> Result<RunOutput> {
    match command {
        Command::Backtest(a) => cmd_backtest(a),
        Command::Bands(a) => cmd_bands(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Replay(_) => bail!("replay cannot be nested"),
    }
}

fn with_out(command: &Command, out: PathBuf) -> Command {
    let mut command = command.clone();
    match &mut command {
        Command::Backtest(a) => a.out = out,
        Command::Bands(a) => a.out = out,
        Command::Grid(a) => a.out = out,
        Command::Replay(a) => a.out = out,
    }
    command
}

fn out_dir(command: &Command) -> &Path {
    match command {
        Command::Backtest(a) => &a.out,
        Command::Bands(a) => &a.out,
        Command::Grid(a) => &a.out,
        Command::Replay(a) => &a.out,
    }
}

fn replay(args: &ReplayArgs) -> Result<RunManifest> {
    let text = std::fs::read_to_string(&args.manifest)
        .with_context(|| format!("reading {}", args.manifest.display()))?;
    let recorded: RunManifest = serde_json::from_str(&text).context("parsing manifest")?;
    for input in &recorded.inputs {
        let now = digest_file(Path::new(&input.name))?;
        ensure!(
            now.sha256 == input.sha256,
            "input {} changed since the manifest was written",
            input.name
        );
    }
    let command = with_out(&recorded.command, args.out.clone());
    let output = compute(&command)?;
    let manifest = write_outputs(&args.out, &command, output)?;
    for want in &recorded.outputs {
        let got = manifest.outputs.iter().find(|o| o.name == want.name);
        ensure!(
            got.map(|g| &g.sha256) == Some(&want.sha256),
            "output {} does not reproduce",
            want.name
        );
    }
    Ok(manifest)
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Result<RunManifest> {
    match &cli.command {
        Command::Replay(args) => replay(args),
        command => {
            let output = compute(command)?;
            write_outputs(out_dir(command), command, output)
        }
    }
}

/// Entry point for the binary: parse, run, map errors to a nonzero exit.
pub fn main_with_args<I, T>(args: I) -> std::process::ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                std::process::ExitCode::from(2)
            } else {
                std::process::ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(manifest) => {
            for file in &manifest.outputs {
                println!("{}  {}", file.sha256, file.name);
            }
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_grammar() {
        let s = parse_synth("iid:vol=0.30,len=5000,seed=1", 0).unwrap();
        assert_eq!(s.length, 5000);
        assert_eq!(s.seed, 1);
        assert!((s.vols[0] - 0.30 / PERIODS_PER_YEAR.sqrt()).abs() < 1e-15);
        let s = parse_synth("regime:vols=0.10;0.30,switch=2500,len=5000", 9).unwrap();
        assert_eq!(s.switch_points, vec![2500]);
        assert_eq!(s.vols.len(), 2);
        assert_eq!(s.seed, 9);
        assert!(parse_synth("iid:vol=0.3", 0).is_err());
        assert!(parse_synth("garch:vol=0.3,len=10", 0).is_err());
        assert!(parse_synth("iid:vol=0.3,len=10,foo=1", 0).is_err());
        assert!(parse_synth("regime:vols=0.1;0.2,switch=20,len=10", 0).is_err());
    }

    #[test]
    fn defaults_mirror_reference_protocol() {
        let cli = Cli::try_parse_from(["voltarget", "backtest", "--mode", "control", "--synth", "iid:vol=0.2,len=100"]).unwrap();
        let Command::Backtest(args) = cli.command else { panic!() };
        let cfg = backtest_config(&args.policy, true).unwrap();
        let c = cfg.controller.unwrap();
        assert_eq!((c.gain, c.kappa_min, c.kappa_max, c.smoothing), (55.0, -1.0, 1.0, 0.6));
        assert_eq!(cfg.target.leverage_limit, 1.5);
        assert!((cfg.target.sigma_tar - 0.15 / PERIODS_PER_YEAR.sqrt()).abs() < 1e-18);
        assert_eq!(cfg.estimator_halflife, 126.0);
        assert_eq!(cfg.warmup_steps, 10);
        assert_eq!(cfg.spread_bps, 5.0);
    }

    #[test]
    fn negative_kappa_min_parses() {
        let cli = Cli::try_parse_from([
            "voltarget", "backtest", "--mode", "control", "--synth", "iid:vol=0.2,len=100", "--kappa-min", "-0.5",
        ])
        .unwrap();
        let Command::Backtest(args) = cli.command else { panic!() };
        assert_eq!(args.policy.kappa_min, -0.5);
    }
}
