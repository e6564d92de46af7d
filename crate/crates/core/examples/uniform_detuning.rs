//! Detuning every site by the same flux offset: peak probability against
//! arrival time at a few sites.

use std::sync::Arc;

use fluxchain::analysis::peak_vs_arrival;
use fluxchain::chain::{assemble_hamiltonian_in, basis_state_in, build_chain, HilbertSpace, Truncation};
use fluxchain::circuit::FluxoniumParams;
use fluxchain::evolution::{evolve, peak_stats, uniform_grid, EvolveOptions};

fn main() -> fluxchain::Result<()> {
    let (l, j, t_max) = (13, 0.010, 60.0);
    let space = Arc::new(HilbertSpace::new(l, Truncation::MaxExcitations(5), 20)?);
    let grid = uniform_grid(0.05, t_max)?;
    let opts = EvolveOptions { energy_stride: 20, ..EvolveOptions::default() };

    let mut records = Vec::new();
    for k in 0..=6 {
        let d = 0.05 * k as f64;
        let chain = build_chain(&vec![FluxoniumParams::reference().detuned(d); l], &vec![j; l - 1])?;
        let h = assemble_hamiltonian_in(&chain, space.clone())?;
        let mut rec = evolve(&h, &basis_state_in(&space, &[0])?, &grid, &opts)?;
        rec.peak = peak_stats(&rec, t_max)?;
        println!("dphi={d:.2}: eps={:.4} GHz", chain.sites[0].epsilon);
        records.push(rec);
    }
    for curve in peak_vs_arrival(&records, &[4, 8, 12])? {
        println!("site {} (monotone: {})", curve.site, curve.is_monotone_decreasing());
        for (t, p) in &curve.points {
            println!("  t={t:6.2} ns P={p:.4}");
        }
    }
    Ok(())
}
