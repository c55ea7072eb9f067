// Quadrature densities of subtracted thermal states and their moments.

use mpsts::genfunc::subtracted_thermal_params;
use mpsts::quadrature::{moments_from_params, params_from_moments, QuadraturePdf};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let eta = 0.78;
    println!(" k  var(closed) var(numeric)  K(closed)  K(numeric)  P(q=0)");
    for k in 0..=5 {
        let params = subtracted_thermal_params(1.63, k)?;
        let pdf = QuadraturePdf::new(params, eta)?;
        let closed = moments_from_params(params.attenuated(eta));
        let numeric = pdf.numerical_moments(1e-3);
        println!(
            "{k:2} {:11.6} {:12.6} {:10.6} {:11.6} {:7.4}",
            closed.variance,
            numeric.variance,
            closed.kurtosis,
            numeric.kurtosis,
            pdf.density(0.0)
        );
    }

    let m = moments_from_params(subtracted_thermal_params(1.63, 1)?);
    let back = params_from_moments(m.variance, m.kurtosis)?;
    println!("moments -> params: mu = {:.6}, a = {:.6}", back.mu, back.a);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
