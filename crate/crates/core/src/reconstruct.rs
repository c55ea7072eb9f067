//! Two-parameter state estimation from homodyne quadratures.
//!
//! The pipeline is: moment-based start ([`moment_estimate`]), maximum
//! likelihood over `(ln μ, ln a)` with a Nelder–Mead simplex and one Newton
//! polish ([`mle_fit`]), error bars from the observed information
//! ([`fisher_errors`]), a χ² check on equiprobable bins ([`chi2_gof`]) and
//! a fidelity score against a reference state ([`fidelity_diag`]).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::genfunc::{CompoundPoissonParams, NORMALIZATION_TOLERANCE, TAIL_MASS};
use crate::quadrature::{params_from_moments, EfficiencyModel, QuadratureError, QuadraturePdf};

pub const MIN_MOMENT_SAMPLES: usize = 30;
pub const MIN_FIT_SAMPLES: usize = 100;
pub const MIN_CHI2_SAMPLES: usize = 200;

/// Clamp range for `a` when sample kurtosis falls outside the model band.
pub const MOMENT_A_RANGE: (f64, f64) = (1.0, 64.0);

/// Fits with `μ̂` below this are flagged as collapsed onto the vacuum.
pub const NEAR_VACUUM_MU: f64 = 1e-6;

const LN_MU_MIN: f64 = -30.0;
const LN_A_RANGE: (f64, f64) = (-9.0, 9.0);

#[derive(Debug, Error)]
pub enum FitError {
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("samples show no variation")]
    NoVariation,
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("fit did not converge after {iterations} iterations: {diagnostics}")]
    NotConverged {
        best: Box<FitResult>,
        iterations: usize,
        diagnostics: String,
    },
}

/// Moment-based parameters plus the raw sample moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub params: CompoundPoissonParams,
    pub variance: f64,
    pub kurtosis: f64,
    /// Set when the kurtosis (or variance) fell outside the model band and
    /// the estimate was clamped.
    pub clamped: bool,
}

/// Quick estimate from sample variance and kurtosis.
///
/// The result describes the detected state; divide `mu` by `η` for the
/// state before losses.
pub fn moment_estimate(samples: &[f64]) -> Result<MomentEstimate, FitError> {
    if samples.len() < MIN_MOMENT_SAMPLES {
        return Err(FitError::InsufficientData {
            needed: MIN_MOMENT_SAMPLES,
            got: samples.len(),
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (m2, m4) = samples.iter().fold((0.0, 0.0), |(s2, s4), &x| {
        let d2 = (x - mean) * (x - mean);
        (s2 + d2, s4 + d2 * d2)
    });
    let variance = m2 / n;
    let scale = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if variance.is_nan() || variance <= (16.0 * f64::EPSILON * scale).powi(2) {
        return Err(FitError::NoVariation);
    }
    let kurtosis = (m4 / n) / (variance * variance);
    Ok(estimate_from_moments(variance, kurtosis))
}

/// [`params_from_moments`] with clamping instead of failure.
pub fn estimate_from_moments(variance: f64, kurtosis: f64) -> MomentEstimate {
    let (a_lo, a_hi) = MOMENT_A_RANGE;
    let (params, clamped) = match params_from_moments(variance, kurtosis) {
        Ok(p) if p.a <= a_hi => (p, false),
        Ok(p) => (CompoundPoissonParams { mu: p.mu, a: a_hi }, true),
        Err(_) => {
            let mu = (variance - 0.5).max(NEAR_VACUUM_MU);
            let a = if kurtosis >= 3.0 { a_lo } else { a_hi };
            (CompoundPoissonParams { mu, a }, true)
        }
    };
    MomentEstimate {
        params,
        variance,
        kurtosis,
        clamped,
    }
}

/// Σ ln P(qᵢ) under the model.
pub fn log_likelihood(
    samples: &[f64],
    params: CompoundPoissonParams,
    eta: f64,
    model: EfficiencyModel,
) -> Result<f64, FitError> {
    let pdf = QuadraturePdf::with_model(params, eta, model)?;
    Ok(samples.iter().map(|&q| pdf.density(q).ln()).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Starting point; defaults to the moment estimate.
    pub init: Option<CompoundPoissonParams>,
    /// Pins `a` and fits `μ` alone.
    pub fixed_a: Option<f64>,
    pub model: EfficiencyModel,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            init: None,
            fixed_a: None,
            model: EfficiencyModel::BernoulliLoss,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2Result {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
}

/// Covariance and standard errors from the observed information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherErrors {
    /// Rows and columns ordered `(μ, a)`.
    #[serde(with = "nonfinite")]
    pub covariance: [[f64; 2]; 2],
    #[serde(with = "nonfinite_scalar")]
    pub sigma_mu: f64,
    #[serde(with = "nonfinite_scalar")]
    pub sigma_a: f64,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub mu: f64,
    pub a: f64,
    pub a_fixed: bool,
    pub errors: FisherErrors,
    pub log_likelihood: f64,
    pub chi2: Option<Chi2Result>,
    pub fidelity: Option<f64>,
    pub n_samples: usize,
    pub eta: f64,
    pub model: EfficiencyModel,
    pub start: CompoundPoissonParams,
    pub iterations: usize,
    pub converged: bool,
    pub near_vacuum: bool,
    /// Heralded click count the samples belong to, if any.
    #[serde(default)]
    pub k: Option<u32>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl FitResult {
    pub fn params(&self) -> CompoundPoissonParams {
        CompoundPoissonParams {
            mu: self.mu,
            a: self.a,
        }
    }

    /// Fills `fidelity` against `reference`.
    pub fn score_against(&mut self, reference: CompoundPoissonParams) -> Result<f64, FitError> {
        let f = fidelity_params(self.params(), reference)?;
        self.fidelity = Some(f);
        Ok(f)
    }

    /// Whether `truth` lies within `n_sigma` Fisher errors on both axes.
    pub fn covers(&self, truth: CompoundPoissonParams, n_sigma: f64) -> bool {
        let mu_ok = (self.mu - truth.mu).abs() <= n_sigma * self.errors.sigma_mu;
        let a_ok = self.a_fixed || (self.a - truth.a).abs() <= n_sigma * self.errors.sigma_a;
        mu_ok && a_ok
    }
}

/// Largest φₙ(q)² table kept in memory (entries).
const TABLE_LIMIT: usize = 40_000_000;

/// `φₙ(s qᵢ)²` for every sample, row per sample. With `η` fixed during a
/// fit the Hermite functions never change; only the pmf weights do.
struct HermiteTable {
    scale: f64,
    cols: usize,
    values: Vec<f64>,
}

impl HermiteTable {
    fn build(samples: &[f64], scale: f64, cols: usize) -> Self {
        let mut values = vec![0.0; samples.len() * cols];
        for (row, &q) in values.chunks_exact_mut(cols).zip(samples) {
            crate::quadrature::for_each_hermite(cols - 1, q * scale, |n, phi| row[n] = phi * phi);
        }
        Self {
            scale,
            cols,
            values,
        }
    }

    fn log_likelihood(&self, pmf: &[f64]) -> f64 {
        let ln_scale = self.scale.ln();
        self.values
            .chunks_exact(self.cols)
            .map(|row| {
                let d: f64 = row.iter().zip(pmf).map(|(v, p)| v * p).sum();
                d.ln() + ln_scale
            })
            .sum()
    }
}

/// Objective in log-parameter space.
struct Objective<'a> {
    samples: &'a [f64],
    eta: f64,
    model: EfficiencyModel,
    fixed_a: Option<f64>,
    table: std::cell::RefCell<Option<HermiteTable>>,
}

impl Objective<'_> {
    fn dim(&self) -> usize {
        if self.fixed_a.is_some() {
            1
        } else {
            2
        }
    }

    fn params(&self, theta: &[f64]) -> CompoundPoissonParams {
        CompoundPoissonParams {
            mu: theta[0].exp(),
            a: self.fixed_a.unwrap_or_else(|| theta[1].exp()),
        }
    }

    fn in_bounds(&self, theta: &[f64]) -> bool {
        theta[0] >= LN_MU_MIN
            && theta[0] <= 20.0
            && (self.fixed_a.is_some() || (theta[1] >= LN_A_RANGE.0 && theta[1] <= LN_A_RANGE.1))
    }

    /// Log-likelihood; `-inf` outside the search box.
    fn ll(&self, theta: &[f64]) -> f64 {
        if !self.in_bounds(theta) {
            return f64::NEG_INFINITY;
        }
        let Ok(pdf) = QuadraturePdf::with_model(self.params(theta), self.eta, self.model) else {
            return f64::NEG_INFINITY;
        };
        let pmf = pdf.detected_pmf();
        if self.samples.len() * pmf.len() > TABLE_LIMIT {
            return self.samples.iter().map(|&q| pdf.density(q).ln()).sum();
        }
        let mut table = self.table.borrow_mut();
        if table.as_ref().is_none_or(|t| t.cols < pmf.len()) {
            let cols = pmf.len().max(table.as_ref().map_or(0, |t| t.cols * 3 / 2));
            *table = Some(HermiteTable::build(self.samples, pdf.axis_scale(), cols));
        }
        table.as_ref().expect("table built").log_likelihood(pmf)
    }

    fn gradient(&self, theta: &[f64], h: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let mut up = theta.to_vec();
                let mut dn = theta.to_vec();
                up[i] += h;
                dn[i] -= h;
                (self.ll(&up) - self.ll(&dn)) / (2.0 * h)
            })
            .collect()
    }
}

struct Simplex {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl Simplex {
    fn sort(&mut self) {
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        // Descending log-likelihood: best first.
        idx.sort_by(|&i, &j| self.values[j].total_cmp(&self.values[i]));
        self.points = idx.iter().map(|&i| self.points[i].clone()).collect();
        self.values = idx.iter().map(|&i| self.values[i]).collect();
    }

    fn diameter(&self) -> f64 {
        let best = &self.points[0];
        self.points[1..]
            .iter()
            .map(|p| {
                p.iter()
                    .zip(best)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Nelder–Mead maximization. Returns the best point, its value and the
/// iteration count, or `None` in the third slot if the cap was hit.
fn nelder_mead(obj: &Objective, start: &[f64], max_iter: usize) -> (Vec<f64>, f64, Option<usize>) {
    const DIAMETER_TOL: f64 = 1e-9;
    const GRADIENT_TOL: f64 = 1e-7;
    let dim = start.len();
    let mut points = vec![start.to_vec()];
    for i in 0..dim {
        let mut p = start.to_vec();
        p[i] += 0.1;
        points.push(p);
    }
    let values = points.iter().map(|p| obj.ll(p)).collect();
    let mut s = Simplex { points, values };
    for iter in 0..max_iter {
        s.sort();
        if s.diameter() < DIAMETER_TOL {
            return (s.points[0].clone(), s.values[0], Some(iter));
        }
        let spread = s.values[0] - s.values[dim];
        if iter % 10 == 0 && spread.abs() <= 1e-12 * (1.0 + s.values[0].abs()) {
            let g = obj.gradient(&s.points[0], 1e-6);
            if g.iter().map(|v| v * v).sum::<f64>().sqrt() < GRADIENT_TOL {
                return (s.points[0].clone(), s.values[0], Some(iter));
            }
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| s.points[..dim].iter().map(|p| p[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst = s.points[dim].clone();
        let reflected = lerp(&centroid, &worst, -1.0);
        let fr = obj.ll(&reflected);
        if fr > s.values[0] {
            let expanded = lerp(&centroid, &worst, -2.0);
            let fe = obj.ll(&expanded);
            if fe > fr {
                s.points[dim] = expanded;
                s.values[dim] = fe;
            } else {
                s.points[dim] = reflected;
                s.values[dim] = fr;
            }
            continue;
        }
        if fr > s.values[dim - 1] {
            s.points[dim] = reflected;
            s.values[dim] = fr;
            continue;
        }
        let (contracted, fc) = if fr > s.values[dim] {
            let c = lerp(&centroid, &worst, -0.5);
            let f = obj.ll(&c);
            (c, f)
        } else {
            let c = lerp(&centroid, &worst, 0.5);
            let f = obj.ll(&c);
            (c, f)
        };
        if fc > s.values[dim].max(fr) {
            s.points[dim] = contracted;
            s.values[dim] = fc;
            continue;
        }
        let best = s.points[0].clone();
        for i in 1..=dim {
            s.points[i] = lerp(&best, &s.points[i], 0.5);
            s.values[i] = obj.ll(&s.points[i]);
        }
    }
    s.sort();
    (s.points[0].clone(), s.values[0], None)
}

/// Second derivative of `f` along `e_i, e_j` by central differences, halving
/// the step until two successive estimates agree.
fn adaptive_second_derivative(f: &dyn Fn(&[f64]) -> f64, theta: &[f64], i: usize, j: usize) -> f64 {
    let eval = |h: f64| {
        let shifted = |si: f64, sj: f64| {
            let mut p = theta.to_vec();
            p[i] += si * h;
            p[j] += sj * h;
            f(&p)
        };
        if i == j {
            (shifted(1.0, 0.0) - 2.0 * f(theta) + shifted(-1.0, 0.0)) / (h * h)
        } else {
            (shifted(1.0, 1.0) - shifted(1.0, -1.0) - shifted(-1.0, 1.0) + shifted(-1.0, -1.0))
                / (4.0 * h * h)
        }
    };
    let mut h = 1e-2;
    let mut prev = eval(h);
    while h > 1e-5 {
        h *= 0.5;
        let cur = eval(h);
        if (cur - prev).abs() <= 1e-4 * cur.abs().max(1e-300) {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// Observed-information covariance at `params`.
///
/// The Hessian is taken in `(ln μ, ln a)` and mapped back to `(μ, a)`
/// including the first-derivative term of the chain rule.
pub fn fisher_errors(
    samples: &[f64],
    params: CompoundPoissonParams,
    eta: f64,
    model: EfficiencyModel,
    fixed_a: Option<f64>,
) -> Result<FisherErrors, FitError> {
    let params = CompoundPoissonParams::new(params.mu, params.a)
        .map_err(|e| FitError::Domain(e.to_string()))?;
    if params.mu <= 0.0 {
        return Ok(FisherErrors::singular());
    }
    let obj = Objective {
        samples,
        eta,
        model,
        fixed_a,
        table: Default::default(),
    };
    let theta: Vec<f64> = match fixed_a {
        Some(_) => vec![params.mu.ln()],
        None => vec![params.mu.ln(), params.a.ln()],
    };
    let f = |t: &[f64]| obj.ll(t);
    let grad = obj.gradient(&theta, 1e-4);
    let scale = [params.mu, params.a];
    let dim = theta.len();
    let mut info = [[0.0; 2]; 2];
    for i in 0..dim {
        for j in i..dim {
            let mut h = adaptive_second_derivative(&f, &theta, i, j);
            if i == j {
                h -= grad[i];
            }
            info[i][j] = -h / (scale[i] * scale[j]);
            info[j][i] = info[i][j];
        }
    }
    Ok(FisherErrors::from_information(info, dim))
}

impl FisherErrors {
    fn singular() -> Self {
        Self {
            covariance: [[f64::INFINITY; 2]; 2],
            sigma_mu: f64::INFINITY,
            sigma_a: f64::INFINITY,
            singular: true,
        }
    }

    fn from_information(info: [[f64; 2]; 2], dim: usize) -> Self {
        if dim == 1 {
            if !info[0][0].is_finite() || info[0][0] <= 0.0 {
                return Self::singular();
            }
            let var = 1.0 / info[0][0];
            return Self {
                covariance: [[var, 0.0], [0.0, 0.0]],
                sigma_mu: var.sqrt(),
                sigma_a: 0.0,
                singular: false,
            };
        }
        let [[p, q], [_, r]] = info;
        let tr = p + r;
        let det = p * r - q * q;
        let disc = ((p - r) * (p - r) / 4.0 + q * q).sqrt();
        let (lmax, lmin) = (tr / 2.0 + disc, tr / 2.0 - disc);
        if !det.is_finite() || lmin.is_nan() || lmin <= 0.0 || lmin <= 1e-12 * lmax {
            return Self::singular();
        }
        let covariance = [[r / det, -q / det], [-q / det, p / det]];
        Self {
            covariance,
            sigma_mu: covariance[0][0].sqrt(),
            sigma_a: covariance[1][1].sqrt(),
            singular: false,
        }
    }
}

/// Maximum-likelihood fit of `(μ, a)` to quadrature samples taken with
/// efficiency `eta`.
pub fn mle_fit(samples: &[f64], eta: f64, options: &FitOptions) -> Result<FitResult, FitError> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(FitError::InsufficientData {
            needed: MIN_FIT_SAMPLES,
            got: samples.len(),
        });
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(FitError::Quadrature(QuadratureError::Efficiency(eta)));
    }
    if let Some(a) = options.fixed_a {
        CompoundPoissonParams::new(0.0, a).map_err(|e| FitError::Domain(e.to_string()))?;
    }
    let start = match options.init {
        Some(p) => {
            CompoundPoissonParams::new(p.mu, p.a).map_err(|e| FitError::Domain(e.to_string()))?
        }
        None => {
            let m = moment_estimate(samples)?;
            CompoundPoissonParams {
                mu: (m.params.mu / eta).max(NEAR_VACUUM_MU),
                a: m.params.a,
            }
        }
    };
    let start = CompoundPoissonParams {
        mu: start.mu.max(LN_MU_MIN.exp() * 10.0),
        a: options.fixed_a.unwrap_or(start.a),
    };
    let obj = Objective {
        samples,
        eta,
        model: options.model,
        fixed_a: options.fixed_a,
        table: Default::default(),
    };
    let theta0: Vec<f64> = match options.fixed_a {
        Some(_) => vec![start.mu.ln()],
        None => vec![start.mu.ln(), start.a.ln()],
    };
    let (mut theta, mut best, iterations) = nelder_mead(&obj, &theta0, options.max_iterations);
    let converged = iterations.is_some();
    let iterations = iterations.unwrap_or(options.max_iterations);

    // Newton polish in log space.
    if converged && theta[0] > LN_MU_MIN + 1.0 {
        if let Some(step) = newton_step(&obj, &theta) {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t - s).collect();
            let v = obj.ll(&cand);
            if v > best {
                theta = cand;
                best = v;
            }
        }
    }

    let params = obj.params(&theta);
    let near_vacuum = params.mu < NEAR_VACUUM_MU;
    let errors = if near_vacuum {
        FisherErrors::singular()
    } else {
        fisher_errors(samples, params, eta, options.model, options.fixed_a)?
    };
    let fitted = obj.dim();
    let chi2 = if samples.len() >= MIN_CHI2_SAMPLES {
        Some(chi2_gof(samples, params, eta, options.model, fitted)?)
    } else {
        None
    };
    let result = FitResult {
        mu: params.mu,
        a: params.a,
        a_fixed: options.fixed_a.is_some(),
        errors,
        log_likelihood: best,
        chi2,
        fidelity: None,
        n_samples: samples.len(),
        eta,
        model: options.model,
        start,
        iterations,
        converged,
        near_vacuum,
        k: None,
        seed: None,
    };
    if converged {
        Ok(result)
    } else {
        Err(FitError::NotConverged {
            best: Box::new(result),
            iterations,
            diagnostics: "simplex diameter and gradient above tolerance".into(),
        })
    }
}

fn newton_step(obj: &Objective, theta: &[f64]) -> Option<Vec<f64>> {
    let g = obj.gradient(theta, 1e-5);
    let f = |t: &[f64]| obj.ll(t);
    match theta.len() {
        1 => {
            let h = adaptive_second_derivative(&f, theta, 0, 0);
            (h < 0.0).then(|| vec![g[0] / h])
        }
        _ => {
            let (p, q, r) = (
                adaptive_second_derivative(&f, theta, 0, 0),
                adaptive_second_derivative(&f, theta, 0, 1),
                adaptive_second_derivative(&f, theta, 1, 1),
            );
            let det = p * r - q * q;
            // Only a concave Hessian gives an ascent step.
            (p < 0.0 && det > 0.0)
                .then(|| vec![(r * g[0] - q * g[1]) / det, (p * g[1] - q * g[0]) / det])
        }
    }
}

/// χ² test on `B = clamp(⌊n/20⌋, 10, 100)` bins equiprobable under the
/// model; `fitted` parameters are subtracted from the degrees of freedom.
pub fn chi2_gof(
    samples: &[f64],
    params: CompoundPoissonParams,
    eta: f64,
    model: EfficiencyModel,
    fitted: usize,
) -> Result<Chi2Result, FitError> {
    let n = samples.len();
    if n < MIN_CHI2_SAMPLES {
        return Err(FitError::InsufficientData {
            needed: MIN_CHI2_SAMPLES,
            got: n,
        });
    }
    let bins = (n / 20).clamp(10, 100);
    let expected = n as f64 / bins as f64;
    if expected < 5.0 {
        return Err(FitError::InsufficientData {
            needed: 5 * bins,
            got: n,
        });
    }
    let cdf = QuadraturePdf::with_model(params, eta, model)?.cdf();
    let edges: Vec<f64> = (1..bins)
        .map(|i| cdf.quantile(i as f64 / bins as f64))
        .collect();
    let mut observed = vec![0usize; bins];
    for &q in samples {
        observed[edges.partition_point(|&e| e <= q)] += 1;
    }
    let statistic = observed
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum::<f64>();
    let dof = bins - 1 - fitted;
    let p_value = ChiSquared::new(dof as f64)
        .map_err(|e| FitError::Domain(e.to_string()))?
        .sf(statistic)
        .clamp(0.0, 1.0);
    Ok(Chi2Result {
        statistic,
        dof,
        p_value,
        bins,
    })
}

/// Fidelity of two diagonal states, `(Σ √(pₙ qₙ))²`.
pub fn fidelity_diag(p: &[f64], q: &[f64]) -> Result<f64, FitError> {
    if p.len() != q.len() {
        return Err(FitError::Domain(format!(
            "pmf lengths differ ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let total: f64 = v.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE || v.iter().any(|x| x.is_nan() || *x < 0.0)
        {
            return Err(FitError::Domain(format!(
                "{name} is not a pmf (sum {total})"
            )));
        }
    }
    let overlap: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    Ok((overlap * overlap).clamp(0.0, 1.0))
}

/// Fidelity of two compound-Poisson states on a common truncation where both
/// tails are below the default tail mass.
pub fn fidelity_params(
    x: CompoundPoissonParams,
    y: CompoundPoissonParams,
) -> Result<f64, FitError> {
    let (sx, sy) = (x.state(), y.state());
    let n = sx
        .pmf_with_tail(TAIL_MASS)
        .len()
        .max(sy.pmf_with_tail(TAIL_MASS).len());
    let renorm = |mut v: Vec<f64>| {
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|p| *p /= total);
        v
    };
    fidelity_diag(&renorm(sx.pmf(n)), &renorm(sy.pmf(n)))
}

/// Fits every heralded subset with at least `min_samples` quadratures, one
/// thread per subset. Sparse subsets are returned in the second map with
/// their size.
pub fn fit_conditional(
    by_k: &BTreeMap<u32, Vec<f64>>,
    eta: f64,
    mu0: Option<f64>,
    min_samples: usize,
) -> (
    BTreeMap<u32, Result<FitResult, FitError>>,
    BTreeMap<u32, usize>,
) {
    let (dense, sparse): (Vec<_>, Vec<_>) = by_k
        .iter()
        .partition(|(_, v)| v.len() >= min_samples.max(MIN_FIT_SAMPLES));
    let fits = std::thread::scope(|scope| {
        let handles: Vec<_> = dense
            .iter()
            .map(|(k, samples)| {
                let k = **k;
                scope.spawn(move || {
                    let mut fit = mle_fit(samples, eta, &FitOptions::default())?;
                    fit.k = Some(k);
                    if let Some(mu0) = mu0 {
                        let reference = crate::genfunc::subtracted_thermal_params(mu0, k as usize)
                            .map_err(|e| FitError::Domain(e.to_string()))?;
                        fit.score_against(reference)?;
                    }
                    Ok(fit)
                })
            })
            .collect();
        dense
            .iter()
            .zip(handles)
            .map(|((k, _), h)| (**k, h.join().expect("fit thread panicked")))
            .collect()
    });
    let skipped = sparse.into_iter().map(|(k, v)| (*k, v.len())).collect();
    (fits, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// (small-sample corrected effective size).
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult, FitError> {
    if x.is_empty() || y.is_empty() {
        return Err(FitError::InsufficientData {
            needed: 1,
            got: x.len().min(y.len()),
        });
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
    })
}

/// Sup distance between the empirical CDF of `u` and Uniform(0, 1).
pub fn ks_uniform_distance(u: &[f64]) -> f64 {
    let mut us = u.to_vec();
    us.sort_by(f64::total_cmp);
    let n = us.len() as f64;
    us.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).max((i + 1) as f64 / n - v))
        .fold(0.0, f64::max)
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Non-finite floats serialize as `null` and read back as `+inf`.
mod nonfinite_scalar {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &[[f64; 2]; 2], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Option<f64>>> = m
            .iter()
            .map(|r| r.iter().map(|v| v.is_finite().then_some(*v)).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[[f64; 2]; 2], D::Error> {
        let rows = <[[Option<f64>; 2]; 2]>::deserialize(d)?;
        Ok(rows.map(|r| r.map(|v| v.unwrap_or(f64::INFINITY))))
    }
}
