//! Excitation transfer along a uniform chain, starting from site 0.
//!
//! cargo run --release --example clean_chain -- [L] [max_excitations]
//! Without a cap the full 2^L space is used; L=17 takes under a minute.

use std::sync::Arc;

use fluxchain::chain::{assemble_hamiltonian_in, basis_state_in, ChainSpec, HilbertSpace, Truncation};
use fluxchain::circuit::{solve_site, FluxoniumParams};
use fluxchain::evolution::{evolve, peak_stats, uniform_grid, EvolveOptions};

fn main() -> fluxchain::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let l = args.next().unwrap_or(11);
    let trunc = args.next().map_or(Truncation::Full, Truncation::MaxExcitations);
    let t_star = 30.0;

    let site = solve_site(&FluxoniumParams::reference())?;
    let chain = ChainSpec::uniform(site, 0.020, l)?;
    let space = Arc::new(HilbertSpace::new(l, trunc, 20)?);
    let h = assemble_hamiltonian_in(&chain, space.clone())?;
    println!("L={l} dim={} nnz={}", h.dim(), h.nnz());

    let rec = evolve(&h, &basis_state_in(&space, &[0])?, &uniform_grid(0.05, t_star)?, &EvolveOptions::default())?;
    for (l, p) in peak_stats(&rec, t_star)?.iter().enumerate() {
        println!("site {l:>2}: P_max={:.4} at {:6.2} ns", p.p_max, p.t_peak);
    }
    println!("norm error {:.1e}", rec.max_norm_error());
    Ok(())
}
