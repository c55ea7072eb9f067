// Time-domain cw experiment: heralded subtraction from a pseudo-thermal
// beam, then one fit per click count.

use mpsts::genfunc::subtracted_thermal_params;
use mpsts::reconstruct::fit_conditional;
use mpsts::simulator::{extract_conditional_bins, simulate_cw, CwExperimentConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let config = CwExperimentConfig {
        duration: 2.0,
        apd_gain: 40.0,
        seed: 1,
        ..CwExperimentConfig::bench()
    };
    println!(
        "expected clicks per window: {:.2}",
        config.expected_clicks_per_window()
    );
    let log = simulate_cw(&config)?;
    let data = extract_conditional_bins(&log.windows, 2.0 * config.tau_coh, config.tau_coh)?;
    println!(
        "{} windows, counts per k: {:?}",
        log.windows.len(),
        data.counts()
    );

    let (fits, skipped) = fit_conditional(&data.by_k, config.eta, Some(config.mu0), 1000);
    println!(" k      n   mu_hat  mu_th   a_hat  a_th  fidelity");
    for (k, fit) in fits {
        let fit = fit?;
        let th = subtracted_thermal_params(config.mu0, k as usize)?;
        println!(
            "{k:2} {:6} {:7.3} {:6.2} {:7.3} {:5.1} {:9.5}",
            fit.n_samples,
            fit.mu,
            th.mu,
            fit.a,
            th.a,
            fit.fidelity.unwrap_or(f64::NAN)
        );
    }
    println!("too few samples: {skipped:?}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
