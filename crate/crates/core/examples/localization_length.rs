//! Localization length against disorder strength for E_J and flux disorder,
//! both placed on the dimensionless axis delta_eps / (J a^2).

use fluxchain::analysis::{default_fit_max, dimensionless_disorder, fit_localization_length, mean_log_peak};
use fluxchain::circuit::{solve_site, FluxoniumParams};
use fluxchain::ensemble::{empirical_delta_epsilon, run_ensemble, ChainTemplate, DisorderSpec, EnsembleJob, EnsembleOptions};

fn main() -> fluxchain::Result<()> {
    let (l, j, n) = (13, 0.020, 60);
    let params = FluxoniumParams::reference();
    let a = solve_site(&params)?.theta_ge();
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get());

    let mut specs: Vec<(&str, f64, DisorderSpec)> = Vec::new();
    for s in [0.1, 0.2, 0.3, 0.5] {
        specs.push(("E_J", s, DisorderSpec::ej_gaussian(params.e_j, s, n, 1)));
    }
    for s in [0.04, 0.08, 0.12] {
        specs.push(("flux", s, DisorderSpec::flux_gaussian(params.phi, s, n, 1)));
    }

    println!("{:>5} {:>6} {:>7} {:>8} {:>7}", "kind", "sigma", "x", "xi", "+-");
    for (kind, s, disorder) in specs {
        let job = EnsembleJob {
            template: ChainTemplate::new(params, j, l),
            disorder,
            options: EnsembleOptions::default(),
        };
        let res = run_ensemble(&job, workers)?;
        let x = dimensionless_disorder(empirical_delta_epsilon(&res)?, j, a);
        let fit = fit_localization_length(&mean_log_peak(&res)?.mean_ln_p, default_fit_max(l))?;
        println!("{kind:>5} {s:>6.2} {x:>7.3} {:>8.2} {:>7.2}", fit.xi, fit.xi_std_err);
    }
    Ok(())
}
