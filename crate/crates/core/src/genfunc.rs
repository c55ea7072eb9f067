//! Generating-function calculus over photon-number distributions.
//!
//! Every state handled here is diagonal in the Fock basis, so it is fully
//! described by its photon-number distribution `P(n)` or, equivalently, by
//! the generating function `G(z) = Σ P(n) zⁿ`. Photon subtraction acts on
//! `G` as normalized differentiation, `G₁(z) = G'(z) / μ`, which keeps the
//! compound-Poisson family closed:
//!
//! ```text
//! G(z) = [1 + (1 - z) μ / a]^(-a)   ──subtract──▶   (μ (a + 1) / a, a + 1)
//! ```
//!
//! Closed-form families carry their parameters; anything else is a
//! [`Family::NumericPmf`] vector and is handled through factorial-moment sums.

use std::io;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use thiserror::Error;

/// Tail mass left out by adaptive truncation.
pub const TAIL_MASS: f64 = 1e-12;

/// Hard cap on adaptive truncation order.
pub const MAX_TRUNCATION: usize = 4096;

/// Tolerance on `Σ P(n) = 1` for user-supplied pmf vectors.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("parameter `{field}` out of domain: {value} ({reason})")]
    Domain {
        field: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("arithmetic domain error: {0}")]
    Arithmetic(String),
    #[error("invalid pmf: {0}")]
    InvalidPmf(String),
    #[error("state document: {0}")]
    Format(String),
}

fn domain(field: &'static str, value: f64, reason: &'static str) -> StateError {
    StateError::Domain {
        field,
        value,
        reason,
    }
}

/// Mean photon number `μ` and coherence parameter `a` of the
/// compound-Poisson (negative binomial) family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundPoissonParams {
    pub mu: f64,
    pub a: f64,
}

impl CompoundPoissonParams {
    pub fn new(mu: f64, a: f64) -> Result<Self, StateError> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(domain("mu", mu, "must be finite and >= 0"));
        }
        if !(a.is_finite() && a > 0.0) {
            return Err(domain("a", a, "must be finite and > 0"));
        }
        Ok(Self { mu, a })
    }

    /// Parameters after Bernoulli loss with transmission `eta`.
    ///
    /// Loss thins a Gamma-mixed Poisson variable into another one with the
    /// same shape, so only the mean changes.
    pub fn attenuated(self, eta: f64) -> Self {
        Self {
            mu: self.mu * eta,
            a: self.a,
        }
    }

    pub fn state(self) -> PhotonState {
        PhotonState {
            family: Family::CompoundPoisson {
                mu: self.mu,
                a: self.a,
            },
        }
    }
}

/// The state families with closed-form generating functions, plus a
/// catch-all numeric pmf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Family {
    Fock { m: u32 },
    Coherent { mu: f64 },
    SqueezedVacuum { xi: f64 },
    Thermal { mu: f64 },
    CompoundPoisson { mu: f64, a: f64 },
    NumericPmf { p: Vec<f64> },
}

/// A validated diagonal photon state.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonState {
    family: Family,
}

/// Per-step bookkeeping of a k-fold photon subtraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtractionRecord {
    pub k: usize,
    /// Mean photon number before each subtraction step: `μ, μ₁, …, μ_{k-1}`.
    pub means: Vec<f64>,
    /// Mean photon number of the resulting state, `μ_k`.
    pub final_mean: f64,
}

/// Validates `family` and wraps it into a state.
pub fn make_state(family: Family) -> Result<PhotonState, StateError> {
    fn nonneg(field: &'static str, v: f64) -> Result<(), StateError> {
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(domain(field, v, "must be finite and >= 0"))
        }
    }
    match &family {
        Family::Fock { .. } => {}
        Family::Coherent { mu } | Family::Thermal { mu } => nonneg("mu", *mu)?,
        Family::SqueezedVacuum { xi } => nonneg("xi", *xi)?,
        Family::CompoundPoisson { mu, a } => {
            CompoundPoissonParams::new(*mu, *a)?;
        }
        Family::NumericPmf { p } => validate_pmf(p)?,
    }
    Ok(PhotonState { family })
}

pub(crate) fn validate_pmf(p: &[f64]) -> Result<(), StateError> {
    if p.is_empty() {
        return Err(StateError::InvalidPmf("empty vector".into()));
    }
    if let Some((n, v)) = p
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(StateError::InvalidPmf(format!("P({n}) = {v}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(StateError::InvalidPmf(format!("sums to {total}")));
    }
    Ok(())
}

impl PhotonState {
    pub fn fock(m: u32) -> Self {
        Self {
            family: Family::Fock { m },
        }
    }

    pub fn vacuum() -> Self {
        Self::fock(0)
    }

    pub fn coherent(mu: f64) -> Result<Self, StateError> {
        make_state(Family::Coherent { mu })
    }

    pub fn squeezed_vacuum(xi: f64) -> Result<Self, StateError> {
        make_state(Family::SqueezedVacuum { xi })
    }

    pub fn thermal(mu: f64) -> Result<Self, StateError> {
        make_state(Family::Thermal { mu })
    }

    pub fn compound_poisson(mu: f64, a: f64) -> Result<Self, StateError> {
        make_state(Family::CompoundPoisson { mu, a })
    }

    pub fn numeric(p: Vec<f64>) -> Result<Self, StateError> {
        make_state(Family::NumericPmf { p })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Compound-Poisson parameters, if the state belongs to that family
    /// (thermal states are the `a = 1` member).
    pub fn compound_poisson_params(&self) -> Option<CompoundPoissonParams> {
        match self.family {
            Family::Thermal { mu } => Some(CompoundPoissonParams { mu, a: 1.0 }),
            Family::CompoundPoisson { mu, a } => Some(CompoundPoissonParams { mu, a }),
            _ => None,
        }
    }

    /// `P(0), …, P(n_max)`.
    pub fn pmf(&self, n_max: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n_max + 1);
        let mut terms = PmfTerms::new(self);
        for _ in 0..=n_max {
            out.push(terms.next_term());
        }
        out
    }

    /// Pmf truncated where the remaining tail mass drops below `tail`
    /// (capped at [`MAX_TRUNCATION`]).
    pub fn pmf_with_tail(&self, tail: f64) -> Vec<f64> {
        if let Family::NumericPmf { p } = &self.family {
            return p.clone();
        }
        if let Family::Fock { m } = self.family {
            return self.pmf(m as usize);
        }
        let mut out = Vec::new();
        let mut terms = PmfTerms::new(self);
        let mut cumulative = 0.0;
        while out.len() <= MAX_TRUNCATION {
            let p = terms.next_term();
            out.push(p);
            cumulative += p;
            if 1.0 - cumulative < tail {
                break;
            }
        }
        out
    }

    /// Pmf at the default adaptive truncation ([`TAIL_MASS`]).
    pub fn truncated_pmf(&self) -> Vec<f64> {
        self.pmf_with_tail(TAIL_MASS)
    }

    /// Evaluates `G(z)`; the closed forms hold for `|z| <= 1`.
    pub fn generating_function(&self, z: f64) -> f64 {
        match &self.family {
            Family::Fock { m } => z.powi(*m as i32),
            Family::Coherent { mu } => (mu * (z - 1.0)).exp(),
            Family::SqueezedVacuum { xi } => {
                let t = xi.tanh();
                1.0 / (xi.cosh() * (1.0 - z * z * t * t).sqrt())
            }
            Family::Thermal { mu } => cp_generating_function(*mu, 1.0, z),
            Family::CompoundPoisson { mu, a } => cp_generating_function(*mu, *a, z),
            Family::NumericPmf { p } => p.iter().rev().fold(0.0, |acc, &pn| acc * z + pn),
        }
    }

    /// `μ = G'(1)`.
    pub fn mean_photon(&self) -> f64 {
        match &self.family {
            Family::Fock { m } => f64::from(*m),
            Family::Coherent { mu } | Family::Thermal { mu } => *mu,
            Family::CompoundPoisson { mu, .. } => *mu,
            Family::SqueezedVacuum { xi } => xi.sinh().powi(2),
            Family::NumericPmf { p } => p.iter().enumerate().map(|(n, pn)| n as f64 * pn).sum(),
        }
    }

    /// Factorial moment `G⁽ᵐ⁾(1) = Σ n(n-1)…(n-m+1) P(n)`.
    pub fn factorial_moment(&self, m: u32) -> f64 {
        match &self.family {
            Family::Fock { m: n } => falling(f64::from(*n), m),
            Family::Coherent { mu } => mu.powi(m as i32),
            Family::Thermal { mu } => mu.powi(m as i32) * rising_ratio(1.0, m),
            Family::CompoundPoisson { mu, a } => mu.powi(m as i32) * rising_ratio(*a, m),
            Family::SqueezedVacuum { xi } => {
                if *xi == 0.0 {
                    return if m == 0 { 1.0 } else { 0.0 };
                }
                let mean = xi.sinh().powi(2);
                if m < 2 {
                    return mean.powi(m as i32);
                }
                // xi > 0, m >= 2: always in domain.
                squeezed_gn(*xi, m).unwrap_or(f64::NAN) * mean.powi(m as i32)
            }
            Family::NumericPmf { p } => factorial_moment_sum(p, m),
        }
    }

    fn subtract_once(&self) -> Result<PhotonState, StateError> {
        let mean = self.mean_photon();
        let family = match &self.family {
            Family::Fock { m: 0 } => {
                return Err(StateError::Arithmetic(
                    "cannot subtract a photon from the vacuum".into(),
                ))
            }
            _ if mean <= 0.0 => {
                return Err(StateError::Arithmetic(
                    "cannot subtract a photon from a zero-mean state".into(),
                ))
            }
            Family::Fock { m } => Family::Fock { m: m - 1 },
            Family::Coherent { mu } => Family::Coherent { mu: *mu },
            Family::Thermal { mu } => Family::CompoundPoisson {
                mu: 2.0 * mu,
                a: 2.0,
            },
            Family::CompoundPoisson { mu, a } => Family::CompoundPoisson {
                mu: mu * (a + 1.0) / a,
                a: a + 1.0,
            },
            // The shift divides by the mean, so the tail must shrink with it.
            Family::SqueezedVacuum { .. } => Family::NumericPmf {
                p: shifted_pmf(&self.pmf_with_tail(TAIL_MASS * mean.min(1.0)), mean),
            },
            Family::NumericPmf { p } => Family::NumericPmf {
                p: shifted_pmf(p, mean),
            },
        };
        Ok(PhotonState { family })
    }
}

/// Normalized derivative on the pmf: `q(n) = (n+1) P(n+1) / μ`.
pub fn shifted_pmf(p: &[f64], mean: f64) -> Vec<f64> {
    if p.len() <= 1 {
        return vec![1.0];
    }
    p.iter()
        .enumerate()
        .skip(1)
        .map(|(n, pn)| n as f64 * pn / mean)
        .collect()
}

fn cp_generating_function(mu: f64, a: f64, z: f64) -> f64 {
    (1.0 + (1.0 - z) * mu / a).powf(-a)
}

/// `n (n-1) … (n-m+1)`.
fn falling(n: f64, m: u32) -> f64 {
    (0..m).map(|j| n - f64::from(j)).product()
}

/// `Γ(a+m) / (Γ(a) aᵐ)`.
fn rising_ratio(a: f64, m: u32) -> f64 {
    (0..m).map(|j| (a + f64::from(j)) / a).product()
}

fn factorial_moment_sum(p: &[f64], m: u32) -> f64 {
    p.iter()
        .enumerate()
        .map(|(n, pn)| falling(n as f64, m) * pn)
        .sum()
}

/// Streams `P(0), P(1), …` for a state, iterating closed-form ratios in log
/// space so large means and large `a` neither overflow nor underflow.
struct PmfTerms<'a> {
    state: &'a PhotonState,
    n: usize,
    log_p: f64,
}

impl<'a> PmfTerms<'a> {
    fn new(state: &'a PhotonState) -> Self {
        let log_p = match state.family {
            Family::Coherent { mu } => -mu,
            Family::Thermal { mu } => -(1.0 + mu).ln(),
            Family::CompoundPoisson { mu, a } => -a * (mu / a).ln_1p(),
            Family::SqueezedVacuum { xi } => -xi.cosh().ln(),
            _ => 0.0,
        };
        Self { state, n: 0, log_p }
    }

    fn next_term(&mut self) -> f64 {
        let n = self.n;
        self.n += 1;
        let nf = n as f64;
        match &self.state.family {
            Family::Fock { m } => f64::from(u8::from(*m as usize == n)),
            Family::NumericPmf { p } => p.get(n).copied().unwrap_or(0.0),
            Family::Coherent { mu } => {
                if *mu == 0.0 {
                    return f64::from(u8::from(n == 0));
                }
                let p = self.log_p.exp();
                self.log_p += mu.ln() - (nf + 1.0).ln();
                p
            }
            Family::Thermal { mu } => {
                if *mu == 0.0 {
                    return f64::from(u8::from(n == 0));
                }
                let p = self.log_p.exp();
                self.log_p += (mu / (1.0 + mu)).ln();
                p
            }
            Family::CompoundPoisson { mu, a } => {
                if *mu == 0.0 {
                    return f64::from(u8::from(n == 0));
                }
                let p = self.log_p.exp();
                self.log_p += ((a + nf) / (nf + 1.0)).ln() + (mu / (a + mu)).ln();
                p
            }
            Family::SqueezedVacuum { xi } => {
                if n % 2 == 1 {
                    return 0.0;
                }
                if *xi == 0.0 {
                    return f64::from(u8::from(n == 0));
                }
                let p = self.log_p.exp();
                // P(2j+2) / P(2j) = (2j+1) / (2j+2) · tanh²ξ
                self.log_p += ((nf + 1.0) / (nf + 2.0)).ln() + 2.0 * xi.tanh().ln();
                p
            }
        }
    }
}

/// Pmf vector of `state` up to `n_max`.
pub fn pmf(state: &PhotonState, n_max: usize) -> Vec<f64> {
    state.pmf(n_max)
}

pub fn mean_photon(state: &PhotonState) -> f64 {
    state.mean_photon()
}

/// Applies the subtraction map `k` times.
pub fn subtract_photons(
    state: &PhotonState,
    k: usize,
) -> Result<(PhotonState, SubtractionRecord), StateError> {
    let mut current = state.clone();
    let mut means = Vec::with_capacity(k);
    for _ in 0..k {
        means.push(current.mean_photon());
        current = current.subtract_once()?;
    }
    let final_mean = current.mean_photon();
    Ok((
        current,
        SubtractionRecord {
            k,
            means,
            final_mean,
        },
    ))
}

/// Normalized factorial-moment correlation `g⁽ᵐ⁾ = G⁽ᵐ⁾(1) / μᵐ`.
pub fn correlation_g(state: &PhotonState, m: u32) -> Result<f64, StateError> {
    if m < 2 {
        return Err(domain("m", f64::from(m), "correlation order must be >= 2"));
    }
    let mu = state.mean_photon();
    if mu <= 0.0 {
        return Err(StateError::Arithmetic(
            "g(m) is undefined for a zero-mean state".into(),
        ));
    }
    Ok(match state.family() {
        Family::Thermal { .. } => rising_ratio(1.0, m),
        Family::CompoundPoisson { a, .. } => rising_ratio(*a, m),
        Family::Coherent { .. } => 1.0,
        Family::Fock { m: n } => falling(f64::from(*n), m) / mu.powi(m as i32),
        Family::SqueezedVacuum { xi } => squeezed_gn(*xi, m)?,
        Family::NumericPmf { p } => factorial_moment_sum(p, m) / mu.powi(m as i32),
    })
}

/// Closed-form `g⁽ⁿ⁾` of squeezed vacuum with squeezing modulus `xi`:
///
/// ```text
/// g(n) = n!/2ⁿ Σ_{k=0}^{⌊n/2⌋} (2n-2k)! / (k! (n-k)! (n-2k)!) · sinh⁻²ᵏ(ξ)
/// ```
pub fn squeezed_gn(xi: f64, n: u32) -> Result<f64, StateError> {
    if n < 2 {
        return Err(domain("n", f64::from(n), "correlation order must be >= 2"));
    }
    if !(xi.is_finite() && xi > 0.0) {
        return Err(StateError::Arithmetic(
            "squeezed g(n) needs xi > 0 (vacuum has no defined correlation)".into(),
        ));
    }
    let ln_inv_s = -2.0 * xi.sinh().ln();
    let n64 = u64::from(n);
    let prefactor = ln_factorial(n64) - f64::from(n) * std::f64::consts::LN_2;
    let total = (0..=n64 / 2)
        .map(|k| {
            let ln_term = ln_factorial(2 * n64 - 2 * k)
                - ln_factorial(k)
                - ln_factorial(n64 - k)
                - ln_factorial(n64 - 2 * k)
                + k as f64 * ln_inv_s;
            (prefactor + ln_term).exp()
        })
        .sum();
    Ok(total)
}

/// `(μ0, k) ↦ (μ0 (k+1), k+1)`: a thermal state after `k` subtractions.
pub fn subtracted_thermal_params(mu0: f64, k: usize) -> Result<CompoundPoissonParams, StateError> {
    let a = (k + 1) as f64;
    CompoundPoissonParams::new(mu0 * a, a)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateDocument {
    #[serde(flatten)]
    family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_max: Option<usize>,
}

impl PhotonState {
    /// `{"family": …, "params": {…}, "n_max": …}`.
    pub fn to_json(&self, n_max: Option<usize>) -> String {
        let doc = StateDocument {
            family: self.family.clone(),
            n_max,
        };
        serde_json::to_string(&doc).expect("state documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<(Self, Option<usize>), StateError> {
        let doc: StateDocument =
            serde_json::from_str(text).map_err(|e| StateError::Format(e.to_string()))?;
        Ok((make_state(doc.family)?, doc.n_max))
    }
}

/// Writes a pmf as CSV with header `n,P`.
pub fn write_pmf_csv<W: io::Write>(writer: W, p: &[f64]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n", "P"])?;
    for (n, pn) in p.iter().enumerate() {
        w.write_record([n.to_string(), pn.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
