//! Diagonalize one fluxonium at half flux and print its qubit reduction.
//!
//! cargo run --example single_fluxonium -- [E_C E_L E_J]

use fluxchain::circuit::{project_to_qubit, solve_fluxonium, FluxoniumParams};

fn main() -> fluxchain::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let params = match args.as_slice() {
        [] => FluxoniumParams::reference(),
        [e_c, e_l, e_j] => FluxoniumParams::new(*e_c, *e_l, *e_j, std::f64::consts::PI),
        _ => panic!("expected zero or three arguments"),
    };
    let spec = solve_fluxonium(&params, 4, 1e-9)?;
    let site = project_to_qubit(&spec, &params)?;

    println!("E_C={} E_L={} E_J={} GHz, basis {}", params.e_c, params.e_l, params.e_j, spec.basis_size);
    for (k, e) in spec.energies.iter().enumerate() {
        println!("  E_{k} = {e:.6} GHz");
    }
    println!("eps01 = {:.5} GHz", spec.gap(0, 1));
    println!("eps12 = {:.5} GHz", spec.gap(1, 2));
    println!("|<0|theta|1>| = {:.5}", site.theta_ge());
    println!("eta = {:.5}", spec.eta());
    Ok(())
}
