//! Gaussian E_J disorder: per-site peak distributions over many realizations,
//! with a resumable checkpoint.
//!
//! cargo run --release --example disorder_ensemble -- [sigma_ghz] [n]

use fluxchain::analysis::{default_edges, log_histogram};
use fluxchain::circuit::FluxoniumParams;
use fluxchain::ensemble::{run_ensemble_with, ChainTemplate, DisorderSpec, EnsembleJob, EnsembleOptions};

fn main() -> fluxchain::Result<()> {
    let mut args = std::env::args().skip(1);
    let sigma: f64 = args.next().map_or(0.3, |a| a.parse().expect("sigma"));
    let n: usize = args.next().map_or(100, |a| a.parse().expect("n"));

    let job = EnsembleJob {
        template: ChainTemplate::new(FluxoniumParams::reference(), 0.020, 13),
        disorder: DisorderSpec::ej_gaussian(9.0, sigma, n, 7),
        options: EnsembleOptions::default(),
    };
    let ckpt = std::env::temp_dir().join(format!("fluxchain_example_{}.jsonl", job.fingerprint()));
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get());
    let res = run_ensemble_with(&job, workers, Some(&ckpt))?;
    println!("{} realizations ({} failed), checkpoint {}", res.records.len(), res.n_failed(), ckpt.display());

    for site in [4, 8, 12] {
        let hist = log_histogram(&res.peaks_at(site), &default_edges())?;
        println!("site {site}: P<0.1 fraction {:.3}, {} below 1e-4", res.fraction_below(site, 0.1), hist.underflow);
        for (k, &c) in hist.counts.iter().enumerate().filter(|(_, c)| **c > 0) {
            let (lo, hi) = (10f64.powf(hist.edges[k]), 10f64.powf(hist.edges[k + 1]));
            println!("  [{lo:.2e}, {hi:.2e}) {}", "#".repeat(c));
        }
    }
    Ok(())
}
