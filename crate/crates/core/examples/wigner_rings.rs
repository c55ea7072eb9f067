// Wigner functions: negative-free rings that grow with each subtraction.

use mpsts::genfunc::subtracted_thermal_params;
use mpsts::quadrature::{wigner, wigner_radial_profile, wigner_ring_radius};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    println!(" k  W(0,0)     G(-1)/pi   ring radius");
    for k in [0, 1, 2, 5, 10] {
        let p = subtracted_thermal_params(1.63, k)?;
        let g_minus = p.state().generating_function(-1.0);
        println!(
            "{k:2} {:.7} {:.7} {:8.4}",
            wigner(p, 0.0, 0.0)?,
            g_minus / std::f64::consts::PI,
            wigner_ring_radius(p)?
        );
    }

    let p = subtracted_thermal_params(1.63, 5)?;
    let radii: Vec<f64> = (0..=8).map(|i| i as f64 * 0.75).collect();
    for (r, w) in radii.iter().zip(wigner_radial_profile(p, &radii)?) {
        println!("k=5  r = {r:4.2}  W = {w:.6}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
