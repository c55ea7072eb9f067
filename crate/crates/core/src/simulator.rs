//! Synthetic homodyne data.
//!
//! Two routes produce quadrature samples:
//!
//! - [`sample_quadratures_direct`] draws from the compound-Poisson model
//!   through its coherent-state mixture: intensity `I ~ Gamma(a, μ/a)`,
//!   uniform phase, then vacuum noise of variance 1/2.
//! - [`simulate_cw`] runs a semiclassical time-domain model of a cw
//!   experiment. A complex Ornstein–Uhlenbeck field stands in for the
//!   pseudo-thermal source; a weak tap feeds an APD with dark counts and dead
//!   time; the transmitted field is integrated over an acquisition window to
//!   give one homodyne quadrature per window. Heralding on the number of
//!   clicks inside a window performs the photon subtraction.
//!
//! Every state involved is a classical mixture of coherent states, so the
//! stochastic-field picture plus vacuum noise reproduces the quantum
//! statistics exactly.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genfunc::CompoundPoissonParams;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: `{field}` {message}")]
    Config {
        field: &'static str,
        message: String,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error(
        "bin spacing {spacing:e} s is below 2·tau_coh = {minimum:e} s; \
         selected bins would be correlated"
    )]
    CorrelatedBins { spacing: f64, minimum: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed record: {0}")]
    Format(String),
}

fn config_error(field: &'static str, message: impl Into<String>) -> SimError {
    SimError::Config {
        field,
        message: message.into(),
    }
}

/// Deterministic RNG used by every simulation entry point.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// I.i.d. quadratures from the compound-Poisson model seen with efficiency
/// `eta`.
pub fn sample_quadratures_direct(
    params: CompoundPoissonParams,
    eta: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, SimError> {
    if n == 0 {
        return Err(SimError::Domain("need at least one sample".into()));
    }
    let params = CompoundPoissonParams::new(params.mu, params.a)
        .map_err(|e| SimError::Domain(e.to_string()))?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(SimError::Domain(format!("eta = {eta} outside (0, 1]")));
    }
    let mut rng = seeded_rng(seed);
    let gamma = if params.mu > 0.0 {
        Some(
            Gamma::new(params.a, params.mu / params.a)
                .map_err(|e| SimError::Domain(e.to_string()))?,
        )
    } else {
        None
    };
    let vacuum_sd = std::f64::consts::FRAC_1_SQRT_2;
    Ok((0..n)
        .map(|_| {
            let intensity = gamma.as_ref().map_or(0.0, |g| g.sample(&mut rng));
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let noise: f64 = rng.sample(StandardNormal);
            (2.0 * eta * intensity).sqrt() * theta.cos() + vacuum_sd * noise
        })
        .collect())
}

fn one() -> f64 {
    1.0
}

/// Parameters of the time-domain simulation. Times in seconds, rates in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwExperimentConfig {
    /// Field coherence time.
    pub tau_coh: f64,
    /// Acquisition window.
    pub tau_a: f64,
    /// Tap reflectivity towards the APD.
    pub reflectivity: f64,
    pub dead_time: f64,
    pub dark_rate: f64,
    /// Homodyne efficiency.
    pub eta: f64,
    /// Mean photon number of the windowed mode when no click is registered
    /// (the `k = 0` state).
    pub mu0: f64,
    pub duration: f64,
    /// Integration step upper bound; the window is split into equal steps.
    pub dt: f64,
    pub seed: u64,
    /// Photon-flux ratio between the light the APD collects and the homodyne
    /// mode. Tunes the click statistics; 1 means the APD sees exactly the
    /// tapped homodyne mode.
    #[serde(default = "one")]
    pub apd_gain: f64,
    /// Start-to-start period of recorded windows; defaults to `2 tau_coh`.
    #[serde(default)]
    pub window_period: Option<f64>,
    #[serde(default)]
    pub herald: HeraldModel,
}

/// What the APD responds to inside an acquisition window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeraldModel {
    /// Click rate follows the instantaneous intensity `|α(t)|²`. Energy in
    /// temporal modes orthogonal to the flat homodyne mode also heralds.
    Instantaneous,
    /// Click rate follows the intensity of the flat window mode, so every
    /// click heralds a subtraction from the measured mode.
    #[default]
    WindowMode,
}

impl CwExperimentConfig {
    /// Bench parameters: 40 µs coherence, 12 µs windows, 1 % tap, 50 ns
    /// dead time, 100 Hz dark counts, 78 % homodyne efficiency, μ0 = 1.63.
    pub fn bench() -> Self {
        Self {
            tau_coh: 40e-6,
            tau_a: 12e-6,
            reflectivity: 0.01,
            dead_time: 50e-9,
            dark_rate: 100.0,
            eta: 0.78,
            mu0: 1.63,
            duration: 1.0,
            dt: 0.5e-6,
            seed: 0,
            apd_gain: 1.0,
            window_period: None,
            herald: HeraldModel::WindowMode,
        }
    }

    pub fn window_period(&self) -> f64 {
        self.window_period.unwrap_or(2.0 * self.tau_coh)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("tau_coh", self.tau_coh),
            ("tau_a", self.tau_a),
            ("dead_time", self.dead_time),
            ("duration", self.duration),
            ("dt", self.dt),
            ("eta", self.eta),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_error(field, format!("must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("dark_rate", self.dark_rate),
            ("mu0", self.mu0),
            ("apd_gain", self.apd_gain),
            ("reflectivity", self.reflectivity),
        ];
        for (field, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_error(field, format!("must be >= 0, got {v}")));
            }
        }
        if self.eta > 1.0 {
            return Err(config_error(
                "eta",
                format!("must be <= 1, got {}", self.eta),
            ));
        }
        if self.reflectivity > 0.1 {
            return Err(config_error(
                "reflectivity",
                format!("tap must be weak (<= 0.1), got {}", self.reflectivity),
            ));
        }
        if self.tau_a >= self.tau_coh {
            return Err(config_error(
                "tau_a",
                format!(
                    "acquisition window must be shorter than tau_coh ({} >= {})",
                    self.tau_a, self.tau_coh
                ),
            ));
        }
        if self.dt >= self.tau_a / 20.0 {
            return Err(config_error(
                "dt",
                format!("must be below tau_a/20 = {}", self.tau_a / 20.0),
            ));
        }
        if self.dead_time >= self.tau_a {
            return Err(config_error(
                "dead_time",
                format!("must be shorter than tau_a ({})", self.tau_a),
            ));
        }
        let period = self.window_period();
        if !(period.is_finite() && period >= self.tau_a + self.dead_time) {
            return Err(config_error(
                "window_period",
                format!("must cover tau_a + dead_time, got {period}"),
            ));
        }
        if self.duration < period {
            return Err(config_error(
                "duration",
                format!("shorter than one window period ({period})"),
            ));
        }
        let cal = Calibration::derive(self);
        if cal.kappa * self.mu0 >= 1.0 {
            return Err(config_error(
                "apd_gain",
                format!(
                    "heralding too strong: kappa·mu0 = {} must stay below 1",
                    cal.kappa * self.mu0
                ),
            ));
        }
        Ok(())
    }

    /// Expected clicks per window, light plus dark.
    pub fn expected_clicks_per_window(&self) -> f64 {
        let cal = Calibration::derive(self);
        self.reflectivity * self.apd_gain * cal.photon_flux * self.tau_a
            + self.dark_rate * self.tau_a
    }
}

/// Quantities derived from a config that fix the source brightness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub steps_per_window: usize,
    pub step: f64,
    /// Fraction of the in-window field energy that lands in the flat
    /// (measured) temporal mode.
    pub mode_overlap: f64,
    /// Heralding strength: mean light clicks per photon in the measured mode.
    pub kappa: f64,
    /// Unconditioned mean photon number of the measured mode.
    pub unconditioned_mean: f64,
    /// Stationary source flux `⟨|α|²⟩` in photons per second.
    pub photon_flux: f64,
}

impl Calibration {
    /// Fixes the source flux so the no-click (`k = 0`) heralded mode has mean
    /// `mu0`: thermal light conditioned on zero Poisson(κ n) clicks has mean
    /// `m / (1 + κ m)`.
    pub fn derive(config: &CwExperimentConfig) -> Self {
        let steps = (config.tau_a / config.dt).ceil().max(1.0) as usize;
        let step = config.tau_a / steps as f64;
        let rho = (-step / config.tau_coh).exp();
        // Σ_{i,j} ρ^{|i-j|} / M²
        let m = steps as f64;
        let mut off = 0.0;
        let mut rp = 1.0;
        for d in 1..steps {
            rp *= rho;
            off += (m - d as f64) * rp;
        }
        let mode_overlap = (m + 2.0 * off) / (m * m);
        let r = config.reflectivity;
        let kappa = r * config.apd_gain / ((1.0 - r) * mode_overlap);
        let unconditioned_mean = if kappa * config.mu0 < 1.0 {
            config.mu0 / (1.0 - kappa * config.mu0)
        } else {
            f64::INFINITY
        };
        let photon_flux = unconditioned_mean / ((1.0 - r) * config.tau_a * mode_overlap);
        Self {
            steps_per_window: steps,
            step,
            mode_overlap,
            kappa,
            unconditioned_mean,
            photon_flux,
        }
    }
}

/// Complex Ornstein–Uhlenbeck field with stationary `⟨|α|²⟩ = flux` and field
/// correlation `exp(-|t|/tau)`, advanced with the exact Gaussian transition.
#[derive(Debug, Clone)]
pub struct ThermalField {
    re: f64,
    im: f64,
    flux: f64,
    tau: f64,
}

impl ThermalField {
    pub fn stationary<R: Rng + ?Sized>(flux: f64, tau: f64, rng: &mut R) -> Self {
        let sd = (0.5 * flux).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Self {
            re: sd * re,
            im: sd * im,
            flux,
            tau,
        }
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        let decay = (-dt / self.tau).exp();
        let sd = (0.5 * self.flux * (1.0 - decay * decay)).sqrt();
        let nr: f64 = rng.sample(StandardNormal);
        let ni: f64 = rng.sample(StandardNormal);
        self.re = decay * self.re + sd * nr;
        self.im = decay * self.im + sd * ni;
    }

    pub fn amplitude(&self) -> (f64, f64) {
        (self.re, self.im)
    }

    pub fn intensity(&self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// One acquisition window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub start: f64,
    pub q: f64,
    pub clicks: u32,
    pub click_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub config: CwExperimentConfig,
    pub calibration: Calibration,
    pub windows: Vec<WindowRecord>,
}

/// Runs the time-domain simulation.
///
/// The field evolves continuously; between recorded windows it jumps with
/// the exact OU transition, which leaves the statistics unchanged. A guard
/// interval one dead time long precedes each window so clicks just before
/// the window can blind its start.
pub fn simulate_cw(config: &CwExperimentConfig) -> Result<EventLog, SimError> {
    config.validate()?;
    let cal = Calibration::derive(config);
    let mut rng = seeded_rng(config.seed);
    let period = config.window_period();
    let n_windows = (config.duration / period + 1e-9).floor() as usize;
    let h = cal.step;
    let guard_steps = (config.dead_time / h).ceil() as usize;
    let guard = guard_steps as f64 * h;
    let light_rate = config.reflectivity * config.apd_gain;
    let amp_scale =
        (2.0 * (1.0 - config.reflectivity) * config.eta).sqrt() * h / config.tau_a.sqrt();
    let vacuum_sd = std::f64::consts::FRAC_1_SQRT_2;

    let mut field = ThermalField::stationary(cal.photon_flux, config.tau_coh, &mut rng);
    let mut clock = 0.0;
    let mut windows = Vec::with_capacity(n_windows);
    let mut arrivals: Vec<f64> = Vec::new();
    let mut amplitudes: Vec<(f64, f64)> = Vec::with_capacity(cal.steps_per_window);
    let mut intensities: Vec<f64> = Vec::with_capacity(cal.steps_per_window);

    for j in 0..n_windows {
        let start = j as f64 * period;
        let guard_start = (start - guard).max(0.0);
        if guard_start > clock {
            field.advance(guard_start - clock, &mut rng);
        }
        let lead = ((start - guard_start) / h).round() as usize;
        let mut last_click = f64::NEG_INFINITY;
        for i in 0..lead {
            let t0 = guard_start + i as f64 * h;
            let lambda = (light_rate * field.intensity() + config.dark_rate) * h;
            poisson_clicks(lambda, t0, h, &mut rng, &mut arrivals)?;
            for &t in &arrivals {
                if t - last_click >= config.dead_time {
                    last_click = t;
                }
            }
            field.advance(h, &mut rng);
        }
        amplitudes.clear();
        for _ in 0..cal.steps_per_window {
            amplitudes.push(field.amplitude());
            field.advance(h, &mut rng);
        }
        let m = amplitudes.len() as f64;
        let (sx, sy) = amplitudes
            .iter()
            .fold((0.0, 0.0), |(x, y), (re, im)| (x + re, y + im));
        intensities.clear();
        match config.herald {
            HeraldModel::Instantaneous => {
                intensities.extend(amplitudes.iter().map(|(re, im)| re * re + im * im));
            }
            HeraldModel::WindowMode => {
                let mode = ((sx / m).powi(2) + (sy / m).powi(2)) / cal.mode_overlap;
                intensities.resize(amplitudes.len(), mode);
            }
        }
        let mut click_times = Vec::new();
        for (i, intensity) in intensities.iter().enumerate() {
            let t0 = start + i as f64 * h;
            let lambda = (light_rate * intensity + config.dark_rate) * h;
            poisson_clicks(lambda, t0, h, &mut rng, &mut arrivals)?;
            for &t in &arrivals {
                if t - last_click >= config.dead_time {
                    last_click = t;
                    click_times.push(t);
                }
            }
        }
        clock = start + cal.steps_per_window as f64 * h;
        let noise: f64 = rng.sample(StandardNormal);
        windows.push(WindowRecord {
            start,
            q: amp_scale * sx + vacuum_sd * noise,
            clicks: click_times.len() as u32,
            click_times,
        });
    }
    Ok(EventLog {
        config: config.clone(),
        calibration: cal,
        windows,
    })
}

/// Poisson arrivals in `[t0, t0 + h)` with mean `lambda`, sorted.
fn poisson_clicks<R: Rng + ?Sized>(
    lambda: f64,
    t0: f64,
    h: f64,
    rng: &mut R,
    out: &mut Vec<f64>,
) -> Result<(), SimError> {
    out.clear();
    if lambda > 0.0 {
        let count = Poisson::new(lambda)
            .map_err(|e| SimError::Domain(e.to_string()))?
            .sample(rng) as usize;
        out.extend((0..count).map(|_| t0 + rng.random::<f64>() * h));
        out.sort_by(f64::total_cmp);
    }
    Ok(())
}

/// Quadratures grouped by the number of clicks in their window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDataset {
    pub spacing: f64,
    pub by_k: BTreeMap<u32, Vec<f64>>,
}

impl ConditionalDataset {
    pub fn counts(&self) -> BTreeMap<u32, usize> {
        self.by_k.iter().map(|(k, v)| (*k, v.len())).collect()
    }

    pub fn samples(&self, k: u32) -> &[f64] {
        self.by_k.get(&k).map_or(&[], Vec::as_slice)
    }

    pub fn total(&self) -> usize {
        self.by_k.values().map(Vec::len).sum()
    }

    /// CSV with header `k,q`, grouped by ascending `k`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "q"])?;
        for (k, qs) in &self.by_k {
            for q in qs {
                w.write_record([k.to_string(), q.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<BTreeMap<u32, Vec<f64>>, SimError> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(|e| SimError::Format(e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["k", "q"] {
            return Err(SimError::Format(format!(
                "expected header k,q, got {headers:?}"
            )));
        }
        let mut by_k: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for (line, record) in r.deserialize::<(u32, f64)>().enumerate() {
            let (k, q) = record.map_err(|e| SimError::Format(format!("row {}: {e}", line + 2)))?;
            by_k.entry(k).or_default().push(q);
        }
        Ok(by_k)
    }
}

/// Picks windows on a periodic grid no denser than `spacing` and groups
/// their quadratures by exact click count.
pub fn extract_conditional_bins(
    windows: &[WindowRecord],
    spacing: f64,
    tau_coh: f64,
) -> Result<ConditionalDataset, SimError> {
    let minimum = 2.0 * tau_coh;
    if spacing < minimum * (1.0 - 1e-9) {
        return Err(SimError::CorrelatedBins { spacing, minimum });
    }
    let tolerance = 1e-9 * spacing;
    let mut by_k: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut next_allowed = f64::NEG_INFINITY;
    for w in windows {
        if w.start + tolerance >= next_allowed {
            by_k.entry(w.clicks).or_default().push(w.q);
            next_allowed = w.start + spacing;
        }
    }
    Ok(ConditionalDataset { spacing, by_k })
}

/// One JSON object per window.
pub fn write_event_log_jsonl<W: Write>(mut writer: W, windows: &[WindowRecord]) -> io::Result<()> {
    for w in windows {
        serde_json::to_writer(&mut writer, w)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn read_event_log_jsonl<R: BufRead>(reader: R) -> Result<Vec<WindowRecord>, SimError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: WindowRecord = serde_json::from_str(&line)
            .map_err(|e| SimError::Format(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> CwExperimentConfig {
        CwExperimentConfig {
            duration: 0.05,
            ..CwExperimentConfig::bench()
        }
    }

    #[test]
    fn direct_sampler_is_deterministic() {
        let p = CompoundPoissonParams::new(2.0, 3.0).unwrap();
        let a = sample_quadratures_direct(p, 0.8, 500, 7).unwrap();
        let b = sample_quadratures_direct(p, 0.8, 500, 7).unwrap();
        let c = sample_quadratures_direct(p, 0.8, 500, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(sample_quadratures_direct(p, 0.8, 0, 7).is_err());
        assert!(sample_quadratures_direct(p, 1.5, 10, 7).is_err());
    }

    #[test]
    fn direct_sampler_mean_is_zero() {
        let p = CompoundPoissonParams::new(5.0, 2.0).unwrap();
        let n = 20_000;
        let xs = sample_quadratures_direct(p, 1.0, n, 3).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (5.5f64).sqrt();
        assert!(mean.abs() < 4.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn vacuum_samples_have_half_variance() {
        let p = CompoundPoissonParams::new(0.0, 1.0).unwrap();
        let xs = sample_quadratures_direct(p, 1.0, 50_000, 1).unwrap();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!((var - 0.5).abs() < 0.02);
    }

    #[test]
    fn config_invariants() {
        assert!(CwExperimentConfig::bench().validate().is_ok());
        let bad = CwExperimentConfig {
            tau_a: 50e-6,
            ..CwExperimentConfig::bench()
        };
        assert!(matches!(
            bad.validate(),
            Err(SimError::Config { field: "tau_a", .. })
        ));
        let bad = CwExperimentConfig {
            dt: 1e-6,
            ..CwExperimentConfig::bench()
        };
        assert!(matches!(
            bad.validate(),
            Err(SimError::Config { field: "dt", .. })
        ));
        let bad = CwExperimentConfig {
            dead_time: 20e-6,
            ..CwExperimentConfig::bench()
        };
        assert!(matches!(
            bad.validate(),
            Err(SimError::Config {
                field: "dead_time",
                ..
            })
        ));
        let bad = CwExperimentConfig {
            apd_gain: 1e4,
            ..CwExperimentConfig::bench()
        };
        assert!(matches!(
            bad.validate(),
            Err(SimError::Config {
                field: "apd_gain",
                ..
            })
        ));
        let bad = CwExperimentConfig {
            eta: 0.0,
            ..CwExperimentConfig::bench()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bench_calibration() {
        let cal = Calibration::derive(&CwExperimentConfig::bench());
        assert_eq!(cal.steps_per_window, 24);
        // Continuous-time flat-window overlap at τ_a/τ_coh = 0.3 is 0.9071.
        assert!((cal.mode_overlap - 0.9071).abs() < 1e-3);
        assert!(cal.unconditioned_mean > 1.63);
    }

    #[test]
    fn no_tap_no_dark_no_clicks() {
        let cfg = CwExperimentConfig {
            reflectivity: 0.0,
            dark_rate: 0.0,
            ..quick()
        };
        let log = simulate_cw(&cfg).unwrap();
        assert_eq!(log.windows.len(), 625);
        assert!(log.windows.iter().all(|w| w.clicks == 0));
        let ds = extract_conditional_bins(&log.windows, 80e-6, cfg.tau_coh).unwrap();
        assert_eq!(ds.counts().into_iter().collect::<Vec<_>>(), vec![(0, 625)]);
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = CwExperimentConfig {
            apd_gain: 20.0,
            ..quick()
        };
        let a = simulate_cw(&cfg).unwrap();
        let b = simulate_cw(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.windows.iter().any(|w| w.clicks > 0));
    }

    #[test]
    fn clicks_respect_dead_time_and_window() {
        let cfg = CwExperimentConfig {
            apd_gain: 30.0,
            ..quick()
        };
        let log = simulate_cw(&cfg).unwrap();
        for w in &log.windows {
            assert_eq!(w.clicks as usize, w.click_times.len());
            for pair in w.click_times.windows(2) {
                assert!(pair[1] - pair[0] >= cfg.dead_time);
            }
            for &t in &w.click_times {
                assert!(t >= w.start && t < w.start + cfg.tau_a + 1e-12);
            }
        }
    }

    #[test]
    fn dead_time_saturates_counts() {
        let cfg = CwExperimentConfig {
            dead_time: 11e-6,
            apd_gain: 50.0,
            mu0: 0.5,
            ..quick()
        };
        let log = simulate_cw(&cfg).unwrap();
        assert!(log.windows.iter().all(|w| w.clicks <= 2));
        assert!(log.windows.iter().any(|w| w.clicks >= 1));
    }

    #[test]
    fn bin_extraction_grid() {
        let windows: Vec<WindowRecord> = (0..12_500)
            .map(|j| WindowRecord {
                start: j as f64 * 80e-6,
                q: j as f64,
                clicks: 0,
                click_times: vec![],
            })
            .collect();
        let ds = extract_conditional_bins(&windows, 80e-6, 40e-6).unwrap();
        assert_eq!(ds.total(), 12_500);
        let sparse = extract_conditional_bins(&windows, 160e-6, 40e-6).unwrap();
        assert_eq!(sparse.total(), 6_250);
        assert!(matches!(
            extract_conditional_bins(&windows, 50e-6, 40e-6),
            Err(SimError::CorrelatedBins { .. })
        ));
    }

    #[test]
    fn jsonl_and_csv_io() {
        let cfg = CwExperimentConfig {
            apd_gain: 20.0,
            duration: 0.01,
            ..CwExperimentConfig::bench()
        };
        let log = simulate_cw(&cfg).unwrap();
        let mut buf = Vec::new();
        write_event_log_jsonl(&mut buf, &log.windows).unwrap();
        assert_eq!(
            buf.iter().filter(|&&b| b == b'\n').count(),
            log.windows.len()
        );
        let back = read_event_log_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, log.windows);

        let ds = extract_conditional_bins(&log.windows, 80e-6, cfg.tau_coh).unwrap();
        let mut csv_buf = Vec::new();
        ds.write_csv(&mut csv_buf).unwrap();
        let parsed = ConditionalDataset::read_csv(csv_buf.as_slice()).unwrap();
        assert_eq!(parsed, ds.by_k);
        assert!(ConditionalDataset::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
