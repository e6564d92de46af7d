//! Qubit splitting and phase matrix elements away from half flux, with the
//! perturbative fields for comparison.

use fluxchain::circuit::{flux_sweep, perturbative_fields, solve_site, FluxoniumParams};

fn main() -> fluxchain::Result<()> {
    let params = FluxoniumParams::reference();
    let eps0 = solve_site(&params)?.epsilon;
    let grid: Vec<f64> = (-6..=6).map(|k| 0.05 * k as f64).collect();

    println!("{:>7} {:>9} {:>9} {:>9} {:>9} {:>9}", "dphi", "eps", "pert", "th_gg", "th_ge", "th_ee");
    for row in flux_sweep(&params, &grid) {
        let p = row.outcome?;
        let (dez, dex) = perturbative_fields(&params, row.delta_phi)?;
        let pert = ((eps0 + dez).powi(2) + dex * dex).sqrt();
        println!(
            "{:>7.3} {:>9.5} {:>9.5} {:>9.4} {:>9.4} {:>9.4}",
            row.delta_phi, p.epsilon, pert, p.theta_gg, p.theta_ge, p.theta_ee
        );
    }
    Ok(())
}
