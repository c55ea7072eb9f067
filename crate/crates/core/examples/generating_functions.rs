// Photon-number distributions and photon subtraction.

use mpsts::genfunc::{correlation_g, squeezed_gn, subtract_photons, PhotonState};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let thermal = PhotonState::thermal(1.63)?;
    println!(
        "thermal mu0 = 1.63: G(-1) = {:.6}",
        thermal.generating_function(-1.0)
    );
    println!(" k   mean     a      g2");
    for k in 0..=5 {
        let (state, _) = subtract_photons(&thermal, k)?;
        let p = state
            .compound_poisson_params()
            .ok_or("family left compound Poisson")?;
        println!(
            "{k:2} {:7.3} {:6.2} {:7.4}",
            state.mean_photon(),
            p.a,
            correlation_g(&state, 2)?
        );
    }

    let (fock, record) = subtract_photons(&PhotonState::fock(3), 2)?;
    println!(
        "Fock(3) minus two photons -> {:?}, means {:?}",
        fock.family(),
        record.means
    );

    let coherent = PhotonState::coherent(2.0)?;
    let (shifted, _) = subtract_photons(&coherent, 5)?;
    println!(
        "coherent mean after 5 subtractions: {}",
        shifted.mean_photon()
    );

    for xi in [0.5, 1.0, 2.0] {
        println!(
            "squeezed xi = {xi}: g2 = {:.6}, g3 = {:.6}",
            squeezed_gn(xi, 2)?,
            squeezed_gn(xi, 3)?
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
