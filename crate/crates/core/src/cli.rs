//! Command-line pipeline: `simulate`, `fit`, `report`.
//!
//! Every command reads and writes plain files (JSON, JSONL, CSV) and writes
//! a manifest listing its inputs, outputs and their SHA-256 digests.
//!
//! Exit codes: 0 success, 2 config error, 3 I/O error, 4 data error.
//!
//! Flags can be supplied through `MPSTS_*` environment variables. Precedence
//! is flag, then environment, then the config file (for `--seed`) or the
//! dataset's `summary.json` (for `--eta` and `--mu0`).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::genfunc::{subtracted_thermal_params, CompoundPoissonParams};
use crate::quadrature::{moments_from_params, write_pdf_csv, QuadraturePdf};
use crate::reconstruct::{fit_conditional, FitError, FitResult, MIN_FIT_SAMPLES};
use crate::simulator::{
    extract_conditional_bins, simulate_cw, write_event_log_jsonl, Calibration, ConditionalDataset,
    CwExperimentConfig, SimError,
};

pub const SUMMARY_SCHEMA: &str = "mpsts.summary/1";
pub const FITS_SCHEMA: &str = "mpsts.fits/1";
pub const MANIFEST_SCHEMA: &str = "mpsts.manifest/1";

/// Schema tag for each output file name.
fn schema_of(name: &str) -> &'static str {
    match name {
        "events.jsonl" => "mpsts.events/1 (jsonl: start,q,clicks,click_times)",
        "dataset.csv" => "mpsts.dataset/1 (csv: k,q)",
        "summary.json" => SUMMARY_SCHEMA,
        "fits.json" => FITS_SCHEMA,
        "report.csv" => "mpsts.report/1 (csv: k,n,mu_hat,a_hat,sigma_mu,sigma_a,p_value,fidelity)",
        "moments_vs_k.csv" => "mpsts.moments/1",
        "params_vs_k.csv" => "mpsts.params/1",
        n if n.starts_with("pdf_overlay_k") => "mpsts.pdf_overlay/1 (csv: q,value)",
        n if n.starts_with("hist_k") => "mpsts.histogram/1",
        n if n.starts_with("wigner_radial_k") => "mpsts.wigner_radial/1",
        _ => "unversioned",
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Data(_) => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mpsts",
    version,
    about = "Photon-subtracted thermal states: simulate, fit, report"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the cw time-domain simulation and write the conditional dataset.
    Simulate(SimulateArgs),
    /// Fit (μ, a) to every heralded subset of a dataset.
    Fit(FitArgs),
    /// Turn fit results into plot-ready CSV grids.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON experiment config.
    #[arg(long, env = "MPSTS_CONFIG")]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = "MPSTS_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "MPSTS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Conditional dataset CSV (`k,q`).
    #[arg(long, env = "MPSTS_DATA")]
    pub data: PathBuf,
    /// Homodyne efficiency; defaults to the simulation summary next to the data.
    #[arg(long, env = "MPSTS_ETA")]
    pub eta: Option<f64>,
    /// Fit only this click count.
    #[arg(long, env = "MPSTS_K")]
    pub k: Option<u32>,
    /// Initial thermal mean for fidelity scoring; defaults to the summary.
    #[arg(long, env = "MPSTS_MU0")]
    pub mu0: Option<f64>,
    /// Seed echoed into the results; defaults to the summary.
    #[arg(long, env = "MPSTS_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "MPSTS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `fits.json` from `mpsts fit`.
    #[arg(long, env = "MPSTS_FITS")]
    pub fits: PathBuf,
    /// Dataset for sample moments and histograms.
    #[arg(long, env = "MPSTS_DATA")]
    pub data: Option<PathBuf>,
    #[arg(long, env = "MPSTS_OUT")]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Report(a) => cmd_report(a),
    }
    .map(|_| ())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub schema: String,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub toolkit_version: String,
    pub inputs: Vec<OutputEntry>,
    pub seed: Option<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<OutputEntry>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects output files and writes them with their digests.
struct OutDir {
    dir: PathBuf,
    written: Vec<OutputEntry>,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.written.push(OutputEntry {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            schema: schema_of(name).to_string(),
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Data(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn finish(
        self,
        command: &str,
        inputs: Vec<OutputEntry>,
        seed: Option<u64>,
        started: f64,
    ) -> Result<Vec<OutputEntry>, CliError> {
        let manifest = RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            command: command.into(),
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            inputs,
            seed,
            started_unix: started,
            finished_unix: unix_now(),
            outputs: self.written.clone(),
        };
        let path = self.dir.join(format!("manifest-{command}.json"));
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        Ok(self.written)
    }
}

fn read_input(path: &Path) -> Result<(Vec<u8>, OutputEntry), CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let entry = OutputEntry {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
        schema: path
            .file_name()
            .map_or("unversioned", |n| schema_of(&n.to_string_lossy()))
            .to_string(),
    };
    Ok((bytes, entry))
}

/// Counts and provenance for one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub schema: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: CwExperimentConfig,
    pub calibration: Calibration,
    pub expected_clicks_per_window: f64,
    pub windows: usize,
    pub spacing: f64,
    pub selected: usize,
    pub counts: BTreeMap<u32, usize>,
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Config { .. } => CliError::Config(e.to_string()),
        SimError::Io(source) => CliError::Io {
            path: PathBuf::from("<stream>"),
            source,
        },
        other => CliError::Data(other.to_string()),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Vec<OutputEntry>, CliError> {
    let started = unix_now();
    let (bytes, input) = read_input(&args.config)?;
    let mut config: CwExperimentConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let log = simulate_cw(&config).map_err(sim_error)?;
    let dataset = extract_conditional_bins(&log.windows, 2.0 * config.tau_coh, config.tau_coh)
        .map_err(sim_error)?;

    let mut out = OutDir::create(&args.out)?;
    let mut events = Vec::new();
    write_event_log_jsonl(&mut events, &log.windows).expect("writing to memory");
    out.write("events.jsonl", &events)?;
    let mut csv = Vec::new();
    dataset
        .write_csv(&mut csv)
        .map_err(|e| CliError::Data(e.to_string()))?;
    out.write("dataset.csv", &csv)?;
    let summary = DatasetSummary {
        schema: SUMMARY_SCHEMA.into(),
        seed: config.seed,
        config_sha256: input.sha256.clone(),
        expected_clicks_per_window: config.expected_clicks_per_window(),
        config,
        calibration: log.calibration,
        windows: log.windows.len(),
        spacing: dataset.spacing,
        selected: dataset.total(),
        counts: dataset.counts(),
    };
    out.write_json("summary.json", &summary)?;
    let seed = Some(summary.seed);
    out.finish("simulate", vec![input], seed, started)
}

fn read_summary_beside(data: &Path) -> Option<DatasetSummary> {
    let path = data.parent()?.join("summary.json");
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn read_dataset(bytes: &[u8]) -> Result<BTreeMap<u32, Vec<f64>>, CliError> {
    ConditionalDataset::read_csv(bytes).map_err(|e| CliError::Data(e.to_string()))
}

/// Contents of `fits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema: String,
    pub eta: f64,
    pub mu0: Option<f64>,
    pub seed: Option<u64>,
    pub data_sha256: String,
    pub fits: Vec<FitResult>,
    /// Click counts left out for having fewer than the minimum samples.
    pub skipped: BTreeMap<u32, usize>,
}

pub fn cmd_fit(args: &FitArgs) -> Result<Vec<OutputEntry>, CliError> {
    let started = unix_now();
    let summary = read_summary_beside(&args.data);
    let eta = args
        .eta
        .or(summary.as_ref().map(|s| s.config.eta))
        .ok_or_else(|| {
            CliError::Config("--eta is required (no summary.json next to the data)".into())
        })?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(CliError::Config(format!(
            "--eta must lie in (0, 1], got {eta}"
        )));
    }
    let mu0 = args.mu0.or(summary.as_ref().map(|s| s.config.mu0));
    if let Some(mu0) = mu0 {
        if !(mu0 > 0.0 && mu0.is_finite()) {
            return Err(CliError::Config(format!(
                "--mu0 must be positive, got {mu0}"
            )));
        }
    }
    let seed = args.seed.or(summary.as_ref().map(|s| s.seed));

    let (bytes, input) = read_input(&args.data)?;
    let mut by_k = read_dataset(&bytes)?;
    if let Some(k) = args.k {
        let Some(samples) = by_k.remove(&k) else {
            return Err(CliError::Data(format!(
                "k = {k} not present in {}",
                args.data.display()
            )));
        };
        by_k = BTreeMap::from([(k, samples)]);
    }
    let (results, skipped) = fit_conditional(&by_k, eta, mu0, MIN_FIT_SAMPLES);
    if !skipped.is_empty() {
        let list: Vec<String> = skipped
            .iter()
            .map(|(k, n)| format!("{k} (n={n})"))
            .collect();
        eprintln!(
            "warning: skipping k with fewer than {MIN_FIT_SAMPLES} samples: {}",
            list.join(", ")
        );
    }
    let mut fits = Vec::new();
    for (k, result) in results {
        let mut fit = match result {
            Ok(fit) => fit,
            Err(FitError::NotConverged { best, .. }) => {
                eprintln!("warning: fit for k = {k} did not converge; reporting best point");
                let mut best = *best;
                best.k = Some(k);
                best
            }
            Err(e) => return Err(CliError::Data(format!("fit for k = {k}: {e}"))),
        };
        fit.seed = seed;
        fits.push(fit);
    }
    if fits.is_empty() {
        return Err(CliError::Data(
            "no click count has enough samples to fit".into(),
        ));
    }

    let mut out = OutDir::create(&args.out)?;
    let report = FitReport {
        schema: FITS_SCHEMA.into(),
        eta,
        mu0,
        seed,
        data_sha256: input.sha256.clone(),
        fits,
        skipped,
    };
    out.write_json("fits.json", &report)?;
    out.write("report.csv", &report_csv(&report.fits)?)?;
    out.finish("fit", vec![input], seed, started)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finite(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "inf".into()
    }
}

fn csv_bytes(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let data_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(header).map_err(data_err)?;
    for row in rows {
        w.write_record(&row).map_err(data_err)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

/// One row per fit: `k,n,mu_hat,a_hat,sigma_mu,sigma_a,p_value,fidelity`.
pub fn report_csv(fits: &[FitResult]) -> Result<Vec<u8>, CliError> {
    csv_bytes(
        &[
            "k", "n", "mu_hat", "a_hat", "sigma_mu", "sigma_a", "p_value", "fidelity",
        ],
        fits.iter().map(|f| {
            vec![
                f.k.map(|k| k.to_string()).unwrap_or_default(),
                f.n_samples.to_string(),
                f.mu.to_string(),
                f.a.to_string(),
                finite(f.errors.sigma_mu),
                finite(f.errors.sigma_a),
                opt(f.chi2.map(|c| c.p_value)),
                opt(f.fidelity),
            ]
        }),
    )
}

fn sample_moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (m2, m4) = samples.iter().fold((0.0, 0.0), |(a, b), x| {
        let d2 = (x - mean).powi(2);
        (a + d2, b + d2 * d2)
    });
    let var = m2 / n;
    (var, m4 / n / (var * var))
}

pub fn cmd_report(args: &ReportArgs) -> Result<Vec<OutputEntry>, CliError> {
    let started = unix_now();
    let (bytes, fits_input) = read_input(&args.fits)?;
    let report: FitReport = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.fits.display())))?;
    if report.fits.is_empty() {
        return Err(CliError::Data("fits file has no rows".into()));
    }
    let mut inputs = vec![fits_input];
    let data = match &args.data {
        Some(path) => {
            let (bytes, entry) = read_input(path)?;
            inputs.push(entry);
            Some(read_dataset(&bytes)?)
        }
        None => None,
    };
    let eta = report.eta;
    let theory = |k: Option<u32>| -> Option<CompoundPoissonParams> {
        subtracted_thermal_params(report.mu0?, k? as usize).ok()
    };
    let samples_of = |k: Option<u32>| -> Option<&Vec<f64>> { data.as_ref()?.get(&k?) };

    let mut out = OutDir::create(&args.out)?;

    let moment_rows = report.fits.iter().map(|f| {
        let fit = moments_from_params(f.params().attenuated(eta));
        let th = theory(f.k).map(|p| moments_from_params(p.attenuated(eta)));
        let sample = samples_of(f.k).map(|s| sample_moments(s));
        vec![
            f.k.map(|k| k.to_string()).unwrap_or_default(),
            fit.variance.to_string(),
            fit.kurtosis.to_string(),
            opt(th.map(|m| m.variance)),
            opt(th.map(|m| m.kurtosis)),
            opt(sample.map(|m| m.0)),
            opt(sample.map(|m| m.1)),
        ]
    });
    let moments = csv_bytes(
        &[
            "k",
            "variance_fit",
            "kurtosis_fit",
            "variance_theory",
            "kurtosis_theory",
            "variance_sample",
            "kurtosis_sample",
        ],
        moment_rows.collect::<Vec<_>>(),
    )?;
    out.write("moments_vs_k.csv", &moments)?;

    let param_rows = report.fits.iter().map(|f| {
        let th = theory(f.k);
        vec![
            f.k.map(|k| k.to_string()).unwrap_or_default(),
            f.n_samples.to_string(),
            f.mu.to_string(),
            finite(f.errors.sigma_mu),
            f.a.to_string(),
            finite(f.errors.sigma_a),
            opt(th.map(|p| p.mu)),
            opt(th.map(|p| p.a)),
            opt(f.fidelity),
            opt(f.chi2.map(|c| c.p_value)),
        ]
    });
    let params = csv_bytes(
        &[
            "k",
            "n",
            "mu_hat",
            "sigma_mu",
            "a_hat",
            "sigma_a",
            "mu_theory",
            "a_theory",
            "fidelity",
            "p_value",
        ],
        param_rows.collect::<Vec<_>>(),
    )?;
    out.write("params_vs_k.csv", &params)?;

    for f in &report.fits {
        let tag = f.k.map_or_else(|| "all".to_string(), |k| k.to_string());
        let pdf = QuadraturePdf::with_model(f.params(), eta, f.model)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let half = pdf.support_half_width().min(12.0);
        let grid: Vec<f64> = (0..=480)
            .map(|i| -half + 2.0 * half * i as f64 / 480.0)
            .collect();
        let rows: Vec<(f64, f64)> = grid.iter().map(|&q| (q, pdf.density(q))).collect();
        let mut buf = Vec::new();
        write_pdf_csv(&mut buf, &rows).map_err(|e| CliError::Data(e.to_string()))?;
        out.write(&format!("pdf_overlay_k{tag}.csv"), &buf)?;

        if let Some(samples) = samples_of(f.k) {
            out.write(
                &format!("hist_k{tag}.csv"),
                &histogram_csv(samples, &pdf, half)?,
            )?;
        }

        let th_state = theory(f.k);
        let radii: Vec<f64> = (0..=200).map(|i| 6.0 * i as f64 / 200.0).collect();
        let w_fit = crate::quadrature::wigner_radial_profile(f.params(), &radii)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let w_th = match th_state {
            Some(p) => Some(
                crate::quadrature::wigner_radial_profile(p, &radii)
                    .map_err(|e| CliError::Data(e.to_string()))?,
            ),
            None => None,
        };
        let rows = radii.iter().enumerate().map(|(i, r)| {
            vec![
                r.to_string(),
                w_fit[i].to_string(),
                opt(w_th.as_ref().map(|w| w[i])),
            ]
        });
        let bytes = csv_bytes(&["r", "w_fit", "w_theory"], rows.collect::<Vec<_>>())?;
        out.write(&format!("wigner_radial_k{tag}.csv"), &bytes)?;
    }
    out.finish("report", inputs, report.seed, started)
}

/// Histogram of `samples` on a uniform grid over `[-half, half]`, with the
/// model probability of each bin alongside the observed count.
fn histogram_csv(samples: &[f64], pdf: &QuadraturePdf, half: f64) -> Result<Vec<u8>, CliError> {
    const BINS: usize = 60;
    let width = 2.0 * half / BINS as f64;
    let mut counts = vec![0usize; BINS];
    for &q in samples {
        let i = ((q + half) / width).floor();
        if i >= 0.0 && (i as usize) < BINS {
            counts[i as usize] += 1;
        }
    }
    let cdf = pdf.cdf();
    let n = samples.len() as f64;
    let rows = (0..BINS).map(|i| {
        let lo = -half + i as f64 * width;
        let hi = lo + width;
        let prob = cdf.eval(hi) - cdf.eval(lo);
        vec![
            lo.to_string(),
            hi.to_string(),
            counts[i].to_string(),
            (prob * n).to_string(),
            (counts[i] as f64 / (n * width)).to_string(),
            (prob / width).to_string(),
        ]
    });
    csv_bytes(
        &[
            "lo",
            "hi",
            "count",
            "expected_count",
            "density_sample",
            "density_model",
        ],
        rows.collect::<Vec<_>>(),
    )
}

/// Reads `fits.json` written by `mpsts fit`.
pub fn read_fit_report(path: &Path) -> Result<FitReport, CliError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::Data(e.to_string()))
}

/// Writes a config file for [`cmd_simulate`].
pub fn write_config(path: &Path, config: &CwExperimentConfig) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, config).map_err(|e| CliError::Data(e.to_string()))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}
