//! Quadrature and phase-space pictures of diagonal states.
//!
//! The homodyne quadrature of a phase-averaged diagonal state has density
//! `Σ P(n) φ_n(q)²`, with `φ_n` the harmonic-oscillator eigenfunctions in the
//! convention where the vacuum variance is 1/2.

use std::f64::consts::PI;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genfunc::{CompoundPoissonParams, StateError};

/// Tail mass dropped when truncating the series behind a pdf.
pub const PDF_TAIL_MASS: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error("efficiency eta = {0} outside (0, 1]")]
    Efficiency(f64),
    #[error("moments incompatible with the compound-Poisson family: {0}")]
    Moments(String),
}

/// How detection efficiency enters the model pdf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfficiencyModel {
    /// Bernoulli loss, `(μ, a) ↦ (ημ, a)`; exact for this family.
    #[default]
    BernoulliLoss,
    /// Convolution of the lossless pdf with `exp(-q² η / (1 - η))`, i.e. with
    /// no `1/√η` rescaling of the quadrature axis.
    GaussianKernel,
}

/// Quadrature variance and kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub variance: f64,
    pub kurtosis: f64,
}

/// Evaluates the normalized eigenfunctions `φ_0(q) … φ_{n_max}(q)` by the
/// three-term recurrence, calling `visit(n, φ_n(q))` for each.
///
/// The recurrence runs on a rescaled copy so neither the Gaussian envelope
/// nor the polynomial growth leaves the f64 range.
pub fn for_each_hermite(n_max: usize, q: f64, mut visit: impl FnMut(usize, f64)) {
    const BIG: f64 = 1e150;
    let mut log_scale = -0.5 * q * q;
    let mut factor = log_scale.exp();
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    for n in 0..=n_max {
        let value = if factor > 0.0 {
            cur * factor
        } else if cur == 0.0 {
            0.0
        } else {
            cur.signum() * (cur.abs().ln() + log_scale).exp()
        };
        visit(n, value);
        if n == n_max {
            break;
        }
        let nf = n as f64;
        let next = q * (2.0 / (nf + 1.0)).sqrt() * cur - (nf / (nf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > BIG {
            cur /= BIG;
            prev /= BIG;
            log_scale += BIG.ln();
            factor = log_scale.exp();
        }
    }
}

/// `φ_n(q)`.
pub fn hermite_phi(n: usize, q: f64) -> f64 {
    let mut out = 0.0;
    for_each_hermite(n, q, |k, v| {
        if k == n {
            out = v;
        }
    });
    out
}

/// The model quadrature density for a compound-Poisson state seen with
/// efficiency `eta`.
#[derive(Debug, Clone)]
pub struct QuadraturePdf {
    params: CompoundPoissonParams,
    eta: f64,
    model: EfficiencyModel,
    /// Pmf of the state reaching the detector.
    pmf: Vec<f64>,
    /// Axis rescaling: 1 for Bernoulli loss, √η for the literal kernel.
    axis_scale: f64,
    c_up: Vec<f64>,
    c_down: Vec<f64>,
}

impl QuadraturePdf {
    pub fn new(params: CompoundPoissonParams, eta: f64) -> Result<Self, QuadratureError> {
        Self::with_model(params, eta, EfficiencyModel::BernoulliLoss)
    }

    pub fn with_model(
        params: CompoundPoissonParams,
        eta: f64,
        model: EfficiencyModel,
    ) -> Result<Self, QuadratureError> {
        let params = CompoundPoissonParams::new(params.mu, params.a)?;
        check_eta(eta)?;
        let detected = params.attenuated(eta);
        let pmf = detected.state().pmf_with_tail(PDF_TAIL_MASS);
        let n = pmf.len();
        let c_up = (0..n).map(|k| (2.0 / (k as f64 + 1.0)).sqrt()).collect();
        let c_down = (0..n)
            .map(|k| (k as f64 / (k as f64 + 1.0)).sqrt())
            .collect();
        // Convolving with a Gaussian of variance (1-η)/(2η) is the loss channel
        // read on an axis stretched by 1/√η.
        let axis_scale = match model {
            EfficiencyModel::BernoulliLoss => 1.0,
            EfficiencyModel::GaussianKernel => eta.sqrt(),
        };
        Ok(Self {
            params,
            eta,
            model,
            pmf,
            axis_scale,
            c_up,
            c_down,
        })
    }

    pub fn params(&self) -> CompoundPoissonParams {
        self.params
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn model(&self) -> EfficiencyModel {
        self.model
    }

    /// Photon-number distribution of the state reaching the detector.
    pub fn detected_pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// Factor `s` in `P(q) = s · Σ P(n) φₙ(s q)²`.
    pub fn axis_scale(&self) -> f64 {
        self.axis_scale
    }

    /// Highest Fock index kept in the series.
    pub fn n_max(&self) -> usize {
        self.pmf.len() - 1
    }

    /// Half-width beyond which the density is negligible: the classical
    /// turning point of the highest kept Fock state plus a margin.
    pub fn support_half_width(&self) -> f64 {
        ((2 * self.n_max() + 1) as f64).sqrt() / self.axis_scale + 8.0
    }

    pub fn density(&self, q: f64) -> f64 {
        let x = q * self.axis_scale;
        self.series(x) * self.axis_scale
    }

    fn series(&self, q: f64) -> f64 {
        // Inline copy of `for_each_hermite`; this is the likelihood hot loop.
        const BIG: f64 = 1e150;
        let mut log_scale = -0.5 * q * q;
        let mut factor = log_scale.exp();
        let mut prev = 0.0;
        let mut cur = PI.powf(-0.25);
        let mut acc = 0.0;
        let last = self.pmf.len() - 1;
        for (n, &p) in self.pmf.iter().enumerate() {
            if factor > 0.0 {
                let v = cur * factor;
                acc += p * v * v;
            } else if cur != 0.0 {
                acc += p * (2.0 * (cur.abs().ln() + log_scale)).exp();
            }
            if n == last {
                break;
            }
            let next = q * self.c_up[n] * cur - self.c_down[n] * prev;
            prev = cur;
            cur = next;
            if cur.abs() > BIG {
                cur /= BIG;
                prev /= BIG;
                log_scale += BIG.ln();
                factor = log_scale.exp();
            }
        }
        acc
    }

    /// Variance and kurtosis by composite Simpson integration of the series.
    pub fn numerical_moments(&self, step: f64) -> MomentSummary {
        let [m0, _, m2, _, m4] = self.integrate_powers(step);
        let variance = m2 / m0;
        MomentSummary {
            variance,
            kurtosis: m4 / m0 / (variance * variance),
        }
    }

    /// `∫ qʲ P(q) dq` for `j = 0..=4`.
    pub fn integrate_powers(&self, step: f64) -> [f64; 5] {
        let half = self.support_half_width();
        let intervals = (2.0 * half / step).ceil() as usize;
        let intervals = intervals + intervals % 2;
        let h = 2.0 * half / intervals as f64;
        let mut acc = [0.0; 5];
        for i in 0..=intervals {
            let q = -half + i as f64 * h;
            let w = if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let f = self.density(q);
            let mut qp = 1.0;
            for slot in acc.iter_mut() {
                *slot += w * f * qp;
                qp *= q;
            }
        }
        acc.map(|v| v * h / 3.0)
    }

    /// Tabulated distribution function for quantile lookups.
    pub fn cdf(&self) -> QuadratureCdf {
        QuadratureCdf::tabulate(self, 2e-3)
    }
}

fn check_eta(eta: f64) -> Result<(), QuadratureError> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(QuadratureError::Efficiency(eta))
    }
}

/// Density of the homodyne quadrature at `q`.
pub fn quadrature_pdf(
    params: CompoundPoissonParams,
    eta: f64,
    q: f64,
) -> Result<f64, QuadratureError> {
    Ok(QuadraturePdf::new(params, eta)?.density(q))
}

/// Distribution function tabulated on a uniform grid, trapezoid-integrated
/// and renormalized to end at exactly 1.
#[derive(Debug, Clone)]
pub struct QuadratureCdf {
    start: f64,
    step: f64,
    values: Vec<f64>,
}

impl QuadratureCdf {
    pub fn tabulate(pdf: &QuadraturePdf, step: f64) -> Self {
        let half = pdf.support_half_width();
        let n = (2.0 * half / step).ceil() as usize;
        let step = 2.0 * half / n as f64;
        let mut values = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        let mut last = pdf.density(-half);
        values.push(0.0);
        for i in 1..=n {
            let f = pdf.density(-half + i as f64 * step);
            acc += 0.5 * (last + f) * step;
            last = f;
            values.push(acc);
        }
        for v in &mut values {
            *v /= acc;
        }
        Self {
            start: -half,
            step,
            values,
        }
    }

    pub fn eval(&self, q: f64) -> f64 {
        let x = (q - self.start) / self.step;
        if x <= 0.0 {
            return 0.0;
        }
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            return 1.0;
        }
        let t = x - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    /// Inverse by bisection on the table and linear interpolation.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let i = self.values.partition_point(|&v| v < p);
        if i == 0 {
            return self.start;
        }
        if i >= self.values.len() {
            return self.start + (self.values.len() - 1) as f64 * self.step;
        }
        let (lo, hi) = (self.values[i - 1], self.values[i]);
        let t = if hi > lo { (p - lo) / (hi - lo) } else { 0.0 };
        self.start + (i as f64 - 1.0 + t) * self.step
    }
}

/// Closed-form variance and kurtosis:
/// `σ² = μ + 1/2`, `K = 3 - 6 (μ / (2μ + 1))² (a - 1) / a`.
pub fn moments_from_params(params: CompoundPoissonParams) -> MomentSummary {
    let CompoundPoissonParams { mu, a } = params;
    let ratio = mu / (2.0 * mu + 1.0);
    MomentSummary {
        variance: mu + 0.5,
        kurtosis: 3.0 - 6.0 * ratio * ratio * (a - 1.0) / a,
    }
}

/// Inverts [`moments_from_params`]. Accepts kurtosis in the band reachable
/// with `a >= 1`.
pub fn params_from_moments(
    variance: f64,
    kurtosis: f64,
) -> Result<CompoundPoissonParams, QuadratureError> {
    const SLACK: f64 = 1e-12;
    if !(variance.is_finite() && variance > 0.5) {
        return Err(QuadratureError::Moments(format!(
            "variance {variance} must exceed the vacuum value 1/2"
        )));
    }
    let mu = variance - 0.5;
    let ratio = mu / (2.0 * mu + 1.0);
    let floor = 3.0 - 6.0 * ratio * ratio;
    if !(kurtosis.is_finite() && kurtosis > floor && kurtosis <= 3.0 + SLACK) {
        return Err(QuadratureError::Moments(format!(
            "kurtosis {kurtosis} outside ({floor}, 3] for variance {variance}"
        )));
    }
    let deficit = (3.0 - kurtosis).max(0.0);
    let a = 1.0 / (1.0 - deficit / (6.0 * ratio * ratio));
    Ok(CompoundPoissonParams::new(mu, a)?)
}

/// Wigner function of the compound-Poisson state, `W(q, p)`, in the
/// convention where the vacuum is `exp(-q² - p²) / π`.
pub fn wigner(params: CompoundPoissonParams, q: f64, p: f64) -> Result<f64, QuadratureError> {
    let params = CompoundPoissonParams::new(params.mu, params.a)?;
    let pmf = params.state().pmf_with_tail(PDF_TAIL_MASS);
    Ok(wigner_diagonal(&pmf, (q * q + p * p).sqrt()))
}

/// `W(r) = Σ P(n) (-1)ⁿ L_n(2r²) e^{-r²} / π` for a diagonal pmf.
pub fn wigner_diagonal(pmf: &[f64], r: f64) -> f64 {
    let x = 2.0 * r * r;
    // ℓ_n = L_n(x) e^{-x/2} obeys the Laguerre recurrence and stays in [-1, 1].
    let mut prev = 0.0;
    let mut cur = (-0.5 * x).exp();
    let mut acc = 0.0;
    for (n, &pn) in pmf.iter().enumerate() {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * pn * cur;
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0 - x) * cur - nf * prev) / (nf + 1.0);
        prev = cur;
        cur = next;
    }
    acc / PI
}

/// Radial profile `W(r)` on `radii`.
pub fn wigner_radial_profile(
    params: CompoundPoissonParams,
    radii: &[f64],
) -> Result<Vec<f64>, QuadratureError> {
    let params = CompoundPoissonParams::new(params.mu, params.a)?;
    let pmf = params.state().pmf_with_tail(PDF_TAIL_MASS);
    Ok(radii.iter().map(|&r| wigner_diagonal(&pmf, r)).collect())
}

/// Radius of the radial maximum of `W`, searched on a uniform grid.
pub fn wigner_ring_radius(params: CompoundPoissonParams) -> Result<f64, QuadratureError> {
    let reach = (2.0 * params.mu + 1.0).sqrt() * 3.0 + 2.0;
    let radii: Vec<f64> = (0..=4000).map(|i| reach * i as f64 / 4000.0).collect();
    let profile = wigner_radial_profile(params, &radii)?;
    let best = profile
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &w)| {
                if w > acc.1 {
                    (i, w)
                } else {
                    acc
                }
            },
        );
    Ok(radii[best.0])
}

/// Writes `q,value` rows.
pub fn write_pdf_csv<W: io::Write>(writer: W, rows: &[(f64, f64)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["q", "value"])?;
    for (q, v) in rows {
        w.write_record([q.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `q,p,value` rows.
pub fn write_wigner_csv<W: io::Write>(writer: W, rows: &[(f64, f64, f64)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["q", "p", "value"])?;
    for (q, p, v) in rows {
        w.write_record([q.to_string(), p.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cp(mu: f64, a: f64) -> CompoundPoissonParams {
        CompoundPoissonParams::new(mu, a).unwrap()
    }

    /// Direct formula `H_n(q) e^{-q²/2} / sqrt(2ⁿ n! √π)` with the physicists'
    /// polynomial from its own recurrence; fine for small n.
    fn phi_direct(n: usize, q: f64) -> f64 {
        let (mut h0, mut h1) = (1.0, 2.0 * q);
        let h = match n {
            0 => h0,
            1 => h1,
            _ => {
                for k in 1..n {
                    let h2 = 2.0 * q * h1 - 2.0 * k as f64 * h0;
                    h0 = h1;
                    h1 = h2;
                }
                h1
            }
        };
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        h * (-0.5 * q * q).exp() / (2f64.powi(n as i32) * fact * PI.sqrt()).sqrt()
    }

    #[test]
    fn hermite_examples() {
        assert_abs_diff_eq!(hermite_phi(0, 0.0), 0.751_125_5, epsilon = 1e-7);
        assert_eq!(hermite_phi(1, 0.0), 0.0);
        assert_abs_diff_eq!(hermite_phi(2, 0.0), -0.531_125_9, epsilon = 1e-7);
        for n in 0..12 {
            for q in [-3.1, -0.4, 0.0, 0.9, 2.5] {
                assert_abs_diff_eq!(hermite_phi(n, q), phi_direct(n, q), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn hermite_norm_high_order() {
        for n in [0usize, 7, 150, 1000] {
            let half = ((2 * n + 1) as f64).sqrt() + 8.0;
            let steps = 40_000;
            let h = 2.0 * half / steps as f64;
            let norm: f64 = (0..=steps)
                .map(|i| hermite_phi(n, -half + i as f64 * h).powi(2))
                .sum::<f64>()
                * h;
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-8);
        }
        // Deep in the tail of a very high state: still finite.
        let v = hermite_phi(4096, 60.0);
        assert!(v.is_finite() && v != 0.0);
    }

    #[test]
    fn pdf_examples() {
        assert_abs_diff_eq!(
            quadrature_pdf(cp(0.0, 3.0), 1.0, 0.0).unwrap(),
            1.0 / PI.sqrt(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            quadrature_pdf(cp(1.63, 1.0), 1.0, 0.0).unwrap(),
            1.0 / (2.0 * PI * 2.13f64).sqrt(),
            epsilon = 1e-12
        );
        let pdf = QuadraturePdf::new(cp(3.26, 2.0), 0.78).unwrap();
        let m = pdf.numerical_moments(0.01);
        assert_abs_diff_eq!(m.variance, 0.78 * 3.26 + 0.5, epsilon = 1e-9);
        assert!(quadrature_pdf(cp(1.0, 1.0), 0.0, 0.0).is_err());
        assert!(quadrature_pdf(cp(1.0, 1.0), 1.2, 0.0).is_err());
    }

    #[test]
    fn literal_kernel_matches_brute_force_convolution() {
        let params = cp(2.0, 3.0);
        let eta = 0.78;
        let lossless = QuadraturePdf::new(params, 1.0).unwrap();
        let literal =
            QuadraturePdf::with_model(params, eta, EfficiencyModel::GaussianKernel).unwrap();
        let s2 = (1.0 - eta) / (2.0 * eta);
        for q in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            let h = 1e-3;
            let conv: f64 = (-12_000..=12_000)
                .map(|i| {
                    let u = i as f64 * h;
                    lossless.density(q - u) * (-u * u / (2.0 * s2)).exp()
                })
                .sum::<f64>()
                * h
                / (2.0 * PI * s2).sqrt();
            assert_abs_diff_eq!(literal.density(q), conv, epsilon = 1e-9);
        }
    }

    #[test]
    fn moment_examples() {
        let m = moments_from_params(cp(1.63, 1.0));
        assert_abs_diff_eq!(m.variance, 2.13, epsilon = 1e-15);
        assert_eq!(m.kurtosis, 3.0);
        let m = moments_from_params(cp(3.26, 2.0));
        assert_abs_diff_eq!(m.variance, 3.76, epsilon = 1e-15);
        assert_abs_diff_eq!(m.kurtosis, 2.436_21, epsilon = 1e-5);
        let m = moments_from_params(cp(0.0, 7.0));
        assert_eq!((m.variance, m.kurtosis), (0.5, 3.0));
    }

    #[test]
    fn inverse_moment_examples() {
        let p = params_from_moments(2.13, 3.0).unwrap();
        assert_abs_diff_eq!(p.mu, 1.63, epsilon = 1e-12);
        assert_abs_diff_eq!(p.a, 1.0, epsilon = 1e-12);
        let exact = moments_from_params(cp(3.26, 2.0));
        let p = params_from_moments(exact.variance, exact.kurtosis).unwrap();
        assert_abs_diff_eq!(p.mu, 3.26, epsilon = 1e-12);
        assert_abs_diff_eq!(p.a, 2.0, epsilon = 1e-10);
        let p = params_from_moments(0.5 + 1e-6, 3.0).unwrap();
        assert_abs_diff_eq!(p.mu, 1e-6, epsilon = 1e-15);
        assert_eq!(p.a, 1.0);
        assert!(params_from_moments(0.5, 3.0).is_err());
        assert!(params_from_moments(2.13, 3.1).is_err());
        assert!(params_from_moments(2.13, 1.0).is_err());
    }

    #[test]
    fn wigner_examples() {
        assert_abs_diff_eq!(
            wigner(cp(0.0, 1.0), 0.0, 0.0).unwrap(),
            1.0 / PI,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            wigner(cp(1.63, 1.0), 0.0, 0.0).unwrap(),
            1.0 / (PI * 4.26),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            wigner(cp(3.26, 2.0), 0.0, 0.0).unwrap(),
            1.0 / (PI * 4.26 * 4.26),
            epsilon = 1e-14
        );
        // Thermal Wigner is Gaussian with variance μ + 1/2 per quadrature.
        let v: f64 = 1.63 + 0.5;
        let (q, p) = (0.7, -1.1);
        assert_abs_diff_eq!(
            wigner(cp(1.63, 1.0), q, p).unwrap(),
            (-(q * q + p * p) / (2.0 * v)).exp() / (2.0 * PI * v),
            epsilon = 1e-13
        );
    }

    #[test]
    fn ring_radius_grows() {
        assert_eq!(wigner_ring_radius(cp(1.63, 1.0)).unwrap(), 0.0);
        let radii: Vec<f64> = [1usize, 5, 10]
            .iter()
            .map(|&k| wigner_ring_radius(cp(1.63 * (k + 1) as f64, (k + 1) as f64)).unwrap())
            .collect();
        assert!(radii[0] > 0.0 && radii[1] > radii[0] && radii[2] > radii[1]);
    }

    #[test]
    fn cdf_quantile_inverse() {
        let pdf = QuadraturePdf::new(cp(4.0, 3.0), 0.9).unwrap();
        let cdf = pdf.cdf();
        assert_abs_diff_eq!(cdf.eval(0.0), 0.5, epsilon = 1e-9);
        for p in [0.01, 0.2, 0.5, 0.77, 0.99] {
            assert_abs_diff_eq!(cdf.eval(cdf.quantile(p)), p, epsilon = 1e-9);
        }
    }
}
