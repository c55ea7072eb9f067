// Sample quadratures from a known state and reconstruct it.

use mpsts::genfunc::subtracted_thermal_params;
use mpsts::reconstruct::{mle_fit, moment_estimate, FitOptions};
use mpsts::simulator::sample_quadratures_direct;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let eta = 0.78;
    let truth = subtracted_thermal_params(1.63, 2)?;
    let samples = sample_quadratures_direct(truth, eta, 20_000, 42)?;

    let start = moment_estimate(&samples)?;
    println!(
        "moments: var = {:.4}, K = {:.4} -> mu/eta = {:.3}, a = {:.3}",
        start.variance,
        start.kurtosis,
        start.params.mu / eta,
        start.params.a
    );

    let mut fit = mle_fit(&samples, eta, &FitOptions::default())?;
    let fidelity = fit.score_against(truth)?;
    let chi2 = fit.chi2.ok_or("chi2 needs at least 200 samples")?;
    println!("truth:  mu = {:.3}, a = {:.3}", truth.mu, truth.a);
    println!(
        "fit:    mu = {:.3} ± {:.3}, a = {:.3} ± {:.3}",
        fit.mu, fit.errors.sigma_mu, fit.a, fit.errors.sigma_a
    );
    println!(
        "chi2 = {:.1} on {} dof (p = {:.3}), fidelity = {:.5}",
        chi2.statistic, chi2.dof, chi2.p_value, fidelity
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
