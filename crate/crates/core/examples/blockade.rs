//! One site tuned to zero flux decouples from its half-flux neighbours and
//! blocks transport to the far end.

use std::sync::Arc;

use fluxchain::chain::{assemble_hamiltonian_in, basis_state_in, build_chain, HilbertSpace, Truncation};
use fluxchain::circuit::FluxoniumParams;
use fluxchain::evolution::{evolve, peak_stats, uniform_grid, EvolveOptions};

fn main() -> fluxchain::Result<()> {
    let l = 11;
    let blocked = l - 2;
    let mut params = vec![FluxoniumParams::reference(); l];
    params[blocked] = params[blocked].with_phi(0.0);
    let chain = build_chain(&params, &vec![0.020; l - 1])?;
    println!("site {blocked}: eps={:.3} GHz, neighbours {:.3} GHz", chain.sites[blocked].epsilon, chain.sites[0].epsilon);

    let space = Arc::new(HilbertSpace::new(l, Truncation::Full, 20)?);
    let h = assemble_hamiltonian_in(&chain, space.clone())?;
    let rec = evolve(&h, &basis_state_in(&space, &[0])?, &uniform_grid(0.05, 30.0)?, &EvolveOptions::default())?;
    for (k, p) in peak_stats(&rec, 30.0)?.iter().enumerate() {
        println!("site {k:>2}: P_max={:.3e}", p.p_max);
    }
    Ok(())
}
