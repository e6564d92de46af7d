//! Single-excitation band of the clean chain and its group velocity.

use std::f64::consts::PI;

use fluxchain::analysis::{dispersion, group_velocity};
use fluxchain::circuit::{solve_site, FluxoniumParams};

fn main() -> fluxchain::Result<()> {
    let site = solve_site(&FluxoniumParams::reference())?;
    let eps0 = site.epsilon;
    for j in [0.010, 0.020] {
        let ja2 = j * site.theta_ge().powi(2);
        println!("J={j} GHz, Ja^2={ja2:.4} GHz, eps0/Ja^2={:.1}", eps0 / ja2);
        for k in 0..=8 {
            let q = PI * k as f64 / 8.0;
            println!(
                "  q={q:.3} omega={:.5} rad/ns u={:.5} sites/ns",
                dispersion(q, eps0, ja2),
                group_velocity(q, eps0, ja2)
            );
        }
        let u = group_velocity(PI / 2.0, eps0, ja2);
        println!("  16 sites at u(pi/2): {:.1} ns", 16.0 / u);
    }
    Ok(())
}
