//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Failing criteria are reported
//! but only turn the exit status non-zero when `FLUXCHAIN_ACCEPTANCE_STRICT=1`.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use fluxchain::analysis::{
    default_fit_max, dimensionless_disorder, fit_localization_length, group_velocity, interpolate, mean_log_peak,
    peak_vs_arrival,
};
use fluxchain::chain::{
    assemble_hamiltonian, assemble_hamiltonian_in, basis_state, basis_state_in, build_chain, ChainSpec, HilbertSpace,
    Truncation,
};
use fluxchain::circuit::{
    perturbative_fields, project_to_qubit, solve_fluxonium, solve_site, FluxoniumParams, QubitSite,
};
use fluxchain::ensemble::{
    empirical_delta_epsilon, run_ensemble, ChainTemplate, DisorderSpec, EnsembleJob, EnsembleOptions, EnsembleResult,
};
use fluxchain::evolution::{
    evolve, peak_stats, site_probabilities, uniform_grid, DenseEvolver, EvolutionRecord,
    EvolveOptions,
};
use fluxchain::io::{cmd_ensemble, Overrides, Run, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const L: usize = 17;
const J: f64 = 0.020;
const T_STAR: f64 = 30.0;
const N_ENSEMBLE: usize = 200;
const SEED: u64 = 1;
const EJ_SIGMAS: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5];
const FLUX_SIGMAS: [f64; 4] = [0.04, 0.06, 0.08, 0.10];

/// Norm and energy bookkeeping across every run in the suite.
#[derive(Default)]
struct Invariants {
    runs: usize,
    failed_runs: usize,
    max_norm_error: f64,
    max_energy_drift: f64,
}

impl Invariants {
    fn record(&mut self, rec: &EvolutionRecord) {
        self.runs += 1;
        self.max_norm_error = self.max_norm_error.max(rec.max_norm_error());
        self.max_energy_drift = self.max_energy_drift.max(rec.max_relative_energy_drift());
    }

    fn ensemble(&mut self, res: &EnsembleResult) {
        for r in &res.records {
            self.runs += 1;
            match (r.norm_error, r.energy_drift) {
                (Some(n), Some(e)) => {
                    self.max_norm_error = self.max_norm_error.max(n);
                    self.max_energy_drift = self.max_energy_drift.max(e);
                }
                _ => self.failed_runs += 1,
            }
        }
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Suite {
    lines: Vec<(u32, bool)>,
}

impl Suite {
    fn run(&mut self, id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Result<Outcome, String>) {
        let t0 = Instant::now();
        let out = f();
        let dt = t0.elapsed();
        let (mut pass, mut detail) = match out {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if let Some(lim) = limit {
            if dt > lim {
                pass = false;
                detail.push_str(&format!("; runtime over {:.0} s", lim.as_secs_f64()));
            }
        }
        println!(
            "[{}] {id:>2} {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            dt.as_secs_f64()
        );
        self.lines.push((id, pass));
    }
}

fn chk(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISS"
    }
}

/// Wilson score interval at 95%.
fn wilson(successes: usize, n: usize) -> (f64, f64) {
    let z = 1.959963984540054;
    let n = n as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    (center - half, center + half)
}

fn count_below(res: &EnsembleResult, site: usize, threshold: f64) -> (usize, usize) {
    let p = res.peaks_at(site);
    (p.iter().filter(|&&x| x < threshold).count(), p.len())
}

fn ensemble(disorder: DisorderSpec) -> Result<EnsembleResult, String> {
    let job = EnsembleJob {
        template: ChainTemplate::new(FluxoniumParams::reference(), J, L),
        disorder,
        options: EnsembleOptions {
            t_star: T_STAR,
            ..EnsembleOptions::default()
        },
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    run_ensemble(&job, workers).map_err(|e| e.to_string())
}

fn xi_of(res: &EnsembleResult) -> Result<f64, String> {
    let m = mean_log_peak(res).map_err(|e| e.to_string())?;
    let fit = fit_localization_length(&m.mean_ln_p, default_fit_max(L)).map_err(|e| e.to_string())?;
    Ok(fit.xi)
}

fn clean_site() -> QubitSite {
    solve_site(&FluxoniumParams::reference()).expect("reference circuit solves")
}

fn main() {
    let mut suite = Suite { lines: Vec::new() };
    let mut inv = Invariants::default();
    println!("acceptance: L = {L}, J = {J} GHz, t* = {T_STAR} ns, n = {N_ENSEMBLE}, seed = {SEED}");

    suite.run(1, "single-circuit spectrum", Some(Duration::from_secs(1)), || {
        let p = FluxoniumParams::reference();
        let spec = solve_fluxonium(&p, 3, 1e-9).map_err(|e| e.to_string())?;
        let a = project_to_qubit(&spec, &p).map_err(|e| e.to_string())?.theta_ge();
        let (e01, e12, eta) = (spec.gap(0, 1), spec.gap(1, 2), spec.eta());
        let ok = [
            (e01 - 2.0).abs() <= 0.05,
            (e12 - 10.2).abs() <= 0.15,
            (a - 2.36).abs() <= 0.02,
            (eta - 0.31).abs() <= 0.01,
        ];
        let literal = FluxoniumParams::new(1.45, 4.0, 9.0, PI);
        let ls = solve_fluxonium(&literal, 3, 1e-9).map_err(|e| e.to_string())?;
        let la = project_to_qubit(&ls, &literal).map_err(|e| e.to_string())?.theta_ge();
        Ok(outcome(
            ok.iter().all(|&b| b),
            format!(
                "E_C=4.0 E_L=1.45 E_J=9.0: eps01={e01:.4} [{}] eps12={e12:.3} [{}] theta_ge={a:.4} [{}] eta={eta:.4} [{}]; \
                 info, labels as printed (E_C=1.45 E_L=4.0): eps01={:.3} eps12={:.3} theta_ge={:.3} eta={:.3}",
                chk(ok[0]),
                chk(ok[1]),
                chk(ok[2]),
                chk(ok[3]),
                ls.gap(0, 1),
                ls.gap(1, 2),
                la,
                ls.eta()
            ),
        ))
    });

    suite.run(2, "harmonic-limit oracle", Some(Duration::from_secs(1)), || {
        let p = FluxoniumParams::new(1.45, 4.0, 0.0, PI);
        let spec = solve_fluxonium(&p, 3, 1e-9).map_err(|e| e.to_string())?;
        let w = (8.0 * p.e_c * p.e_l).sqrt();
        let zpf = (2.0 * p.e_c / p.e_l).powf(0.25);
        let r1 = (spec.gap(0, 1) / w - 1.0).abs();
        let r2 = (spec.gap(1, 2) / w - 1.0).abs();
        let r3 = (spec.theta_elems[(0, 1)].abs() / zpf - 1.0).abs();
        Ok(outcome(
            r1 < 1e-8 && r2 < 1e-8 && r3 < 1e-8,
            format!("spacing rel err {r1:.1e}, {r2:.1e}; theta_ge rel err {r3:.1e} (bound 1e-8)"),
        ))
    });

    suite.run(3, "clean-chain transport", Some(Duration::from_secs(300)), || {
        let chain = ChainSpec::uniform(clean_site(), J, L).map_err(|e| e.to_string())?;
        let h = assemble_hamiltonian(&chain).map_err(|e| e.to_string())?;
        let grid = uniform_grid(0.05, T_STAR).map_err(|e| e.to_string())?;
        let rec = evolve(&h, &basis_state(L, &[0]).unwrap(), &grid, &EvolveOptions::default())
            .map_err(|e| e.to_string())?;
        inv.record(&rec);
        let peaks = peak_stats(&rec, T_STAR).map_err(|e| e.to_string())?;
        let edge = peaks[L - 1];
        // incoming-front maxima: before the front reaches the far edge
        let front = peak_stats(&rec, edge.t_peak).map_err(|e| e.to_string())?;
        let interior = [4, 8, 12].map(|l| front[l].p_max);
        let decreasing = interior.windows(2).all(|w| w[1] < w[0]);
        let edge_ok = (edge.p_max - 0.67).abs() <= 0.03;
        let edge_top = (1..L - 1).all(|l| peaks[l].p_max < edge.p_max);
        Ok(outcome(
            edge_ok && decreasing && edge_top,
            format!(
                "P_16={:.4} at {:.2} ns [{}]; front maxima P_4,P_8,P_12={:.4},{:.4},{:.4} decreasing [{}]; \
                 P_16 above every interior P_l [{}] (window maxima P_4,P_8,P_12={:.4},{:.4},{:.4})",
                edge.p_max,
                edge.t_peak,
                chk(edge_ok),
                interior[0],
                interior[1],
                interior[2],
                chk(decreasing),
                chk(edge_top),
                peaks[4].p_max,
                peaks[8].p_max,
                peaks[12].p_max
            ),
        ))
    });

    suite.run(4, "oracle equivalence", Some(Duration::from_secs(60)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let grid = uniform_grid(0.05, 20.0).unwrap();
        let mut worst: f64 = 0.0;
        for case in 0..20 {
            let len = 1 + case % 6;
            let sites = (0..len)
                .map(|_| {
                    let t_ge = rng.random_range(1.5..2.5);
                    QubitSite {
                        epsilon: rng.random_range(1.5..2.5),
                        theta: [[rng.random_range(-0.5..0.5), t_ge], [t_ge, rng.random_range(-0.5..0.5)]],
                        eta: 0.3,
                        phi: PI,
                    }
                })
                .collect();
            let couplings = (1..len).map(|_| rng.random_range(0.01..0.05)).collect();
            let h = assemble_hamiltonian(&ChainSpec::new(sites, couplings).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let psi0 = basis_state(len, &[0]).unwrap();
            let rec = evolve(&h, &psi0, &grid, &EvolveOptions::default()).map_err(|e| e.to_string())?;
            inv.record(&rec);
            let dense = DenseEvolver::new(&h).map_err(|e| e.to_string())?;
            let mut p = vec![0.0; len];
            for (k, &t) in grid.iter().enumerate() {
                site_probabilities(&h, &dense.evolve(&psi0, t).amplitudes, &mut p);
                for l in 0..len {
                    worst = worst.max((p[l] - rec.probs[l][k]).abs());
                }
            }
        }
        Ok(outcome(worst < 1e-8, format!("20 chains, L = 1..6: max |dp| = {worst:.1e} (bound 1e-8)")))
    });

    // shared ensembles for criteria 6 and 7
    let t0 = Instant::now();
    let ej: Vec<Result<EnsembleResult, String>> = EJ_SIGMAS
        .iter()
        .map(|&s| ensemble(DisorderSpec::ej_gaussian(9.0, s, N_ENSEMBLE, SEED)))
        .collect();
    let flux: Vec<Result<EnsembleResult, String>> = FLUX_SIGMAS
        .iter()
        .map(|&s| ensemble(DisorderSpec::flux_gaussian(PI, s, N_ENSEMBLE, SEED)))
        .collect();
    for r in ej.iter().chain(&flux).flatten() {
        inv.ensemble(r);
    }
    println!(
        "        ensembles: {} E_J and {} flux strengths x {N_ENSEMBLE} realizations ({:.1} s)",
        EJ_SIGMAS.len(),
        FLUX_SIGMAS.len(),
        t0.elapsed().as_secs_f64()
    );
    let ej_at = |s: f64| -> Result<&EnsembleResult, String> {
        let k = EJ_SIGMAS.iter().position(|&v| v == s).expect("sigma on grid");
        ej[k].as_ref().map_err(|e| e.clone())
    };

    suite.run(6, "disorder distributions", None, || {
        let r3 = ej_at(0.3)?;
        let r1 = ej_at(0.1)?;
        let mut parts = Vec::new();
        let mut pass = true;
        for site in [8, 10] {
            let (k, n) = count_below(r3, site, 0.1);
            let (lo, hi) = wilson(k, n);
            // claim: more than half below 0.1
            let ok = hi > 0.5;
            pass &= ok;
            parts.push(format!(
                "dE_J=0.3: P_{site}<0.1 in {k}/{n} = {:.3}, 95% CI [{lo:.3}, {hi:.3}] vs >0.5 [{}]",
                k as f64 / n as f64,
                chk(ok)
            ));
        }
        let (k, n) = count_below(r1, L - 1, 0.1);
        let (lo, hi) = wilson(k, n);
        let ok = lo < 0.1;
        pass &= ok;
        parts.push(format!(
            "dE_J=0.1: P_16<0.1 in {k}/{n} = {:.3}, 95% CI [{lo:.3}, {hi:.3}] vs <0.1 [{}]",
            k as f64 / n as f64,
            chk(ok)
        ));
        Ok(outcome(pass, parts.join("; ")))
    });

    suite.run(7, "localization transition", None, || {
        let a = clean_site().theta_ge();
        let mut ej_x = Vec::new();
        let mut ej_xi = Vec::new();
        for r in &ej {
            let r = r.as_ref().map_err(|e| e.clone())?;
            ej_x.push(dimensionless_disorder(empirical_delta_epsilon(r).map_err(|e| e.to_string())?, J, a));
            ej_xi.push(xi_of(r)?);
        }
        let xi = |s: f64| ej_xi[EJ_SIGMAS.iter().position(|&v| v == s).unwrap()];
        let order = xi(0.1) > xi(0.2) && xi(0.2) > xi(0.3) && xi(0.3) > xi(0.5);
        let mid = (xi(0.3) / 8.5 - 1.0).abs() <= 0.30;
        let strong = xi(0.5) < 2.0;

        let ln_xi: Vec<f64> = ej_xi.iter().map(|v| v.ln()).collect();
        let mut collapse = Vec::new();
        let mut collapse_ok = true;
        for (k, &s) in FLUX_SIGMAS.iter().enumerate() {
            let r = flux[k].as_ref().map_err(|e| e.clone())?;
            let x = dimensionless_disorder(empirical_delta_epsilon(r).map_err(|e| e.to_string())?, J, a);
            let fx = xi_of(r)?;
            match interpolate(&ej_x, &ln_xi, x) {
                Some(l) => {
                    let dev = fx / l.exp() - 1.0;
                    collapse_ok &= dev.abs() <= 0.25;
                    collapse.push(format!("dphi={s}: x={x:.3} xi={fx:.2} vs {:.2} ({:+.0}%)", l.exp(), 100.0 * dev));
                }
                None => collapse.push(format!("dphi={s}: x={x:.3} outside E_J range")),
            }
        }
        let curve: Vec<String> = EJ_SIGMAS
            .iter()
            .zip(ej_x.iter().zip(&ej_xi))
            .map(|(s, (x, v))| format!("{s}:{v:.2}@x={x:.2}"))
            .collect();
        Ok(outcome(
            order && mid && strong && collapse_ok,
            format!(
                "xi(dE_J) {}; ordering 0.1>0.2>0.3>0.5 [{}]; xi(0.3)={:.2} vs 8.5+-30% [{}]; xi(0.5)={:.2} < 2 [{}]; \
                 collapse within 25% [{}]: {}",
                curve.join(" "),
                chk(order),
                xi(0.3),
                chk(mid),
                xi(0.5),
                chk(strong),
                chk(collapse_ok),
                collapse.join(", ")
            ),
        ))
    });

    suite.run(8, "appendix physics", None, || {
        let p = FluxoniumParams::reference();
        let eps0 = clean_site().epsilon;
        let mut worst_field: f64 = 0.0;
        for dphi in [0.05, -0.05] {
            let exact = solve_site(&p.detuned(dphi)).map_err(|e| e.to_string())?.epsilon;
            let (dez, dex) = perturbative_fields(&p, dphi).map_err(|e| e.to_string())?;
            let approx = ((eps0 + dez).powi(2) + dex * dex).sqrt();
            worst_field = worst_field.max((approx / exact - 1.0).abs());
        }
        let fields_ok = worst_field <= 0.01;

        let ja2 = J * clean_site().theta_ge().powi(2);
        let ratio = eps0 / ja2;
        let u = group_velocity(PI / 2.0, eps0, ja2) / (2.0 * PI * ja2);
        let velocity_ok = ratio > 10.0 && (u - 1.0).abs() <= 0.01;

        let detunings = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3];
        let space = Arc::new(HilbertSpace::new(L, Truncation::MaxExcitations(5), 20).map_err(|e| e.to_string())?);
        let grid = uniform_grid(0.05, 60.0).unwrap();
        let opts = EvolveOptions {
            energy_stride: 20,
            ..EvolveOptions::default()
        };
        let mut records = Vec::new();
        for &d in &detunings {
            let chain = build_chain(&vec![p.detuned(d); L], &vec![0.010; L - 1]).map_err(|e| e.to_string())?;
            let h = assemble_hamiltonian_in(&chain, space.clone()).map_err(|e| e.to_string())?;
            let mut rec = evolve(&h, &basis_state_in(&space, &[0]).unwrap(), &grid, &opts).map_err(|e| e.to_string())?;
            inv.record(&rec);
            rec.peak = peak_stats(&rec, 60.0).map_err(|e| e.to_string())?;
            records.push(rec);
        }
        let curves = peak_vs_arrival(&records, &[4, 8, 16]).map_err(|e| e.to_string())?;
        let sweep_ok = curves.iter().all(|c| c.is_monotone_decreasing());
        let describe: Vec<String> = curves
            .iter()
            .map(|c| {
                let (first, last) = (c.points[0], c.points[c.points.len() - 1]);
                format!(
                    "l={} ({:.2} ns, {:.3}) -> ({:.2} ns, {:.3}) [{}]",
                    c.site,
                    first.0,
                    first.1,
                    last.0,
                    last.1,
                    chk(c.is_monotone_decreasing())
                )
            })
            .collect();
        Ok(outcome(
            fields_ok && velocity_ok && sweep_ok,
            format!(
                "perturbative eps at |dphi|=0.05 rel err {worst_field:.1e} [{}]; u(pi/2)/(2 pi Ja^2)={u:.5} at eps0/Ja^2={ratio:.1} [{}]; \
                 uniform detuning 0..0.3 at J=10 MHz monotone: {}",
                chk(fields_ok),
                chk(velocity_ok),
                describe.join(", ")
            ),
        ))
    });

    suite.run(9, "blockade", None, || {
        let mut params = vec![FluxoniumParams::reference(); L];
        params[15] = params[15].with_phi(0.0);
        let chain = build_chain(&params, &vec![J; L - 1]).map_err(|e| e.to_string())?;
        let h = assemble_hamiltonian(&chain).map_err(|e| e.to_string())?;
        let rec = evolve(&h, &basis_state(L, &[0]).unwrap(), &uniform_grid(0.05, T_STAR).unwrap(), &EvolveOptions::default())
            .map_err(|e| e.to_string())?;
        inv.record(&rec);
        let peaks = peak_stats(&rec, T_STAR).map_err(|e| e.to_string())?;
        Ok(outcome(
            peaks[16].p_max < 0.02,
            format!(
                "site 15 at phi=0: P_16={:.2e} (bound 0.02), P_14={:.3}, P_15={:.2e}",
                peaks[16].p_max, peaks[14].p_max, peaks[15].p_max
            ),
        ))
    });

    suite.run(10, "determinism", None, || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let text = format!(
            "schema_version = 1\nseed = {SEED}\n[chain]\nlength = 9\ncoupling_ghz = {J}\n[time]\nt_max_ns = 15.0\n\
             [disorder]\nkind = \"ej_gaussian\"\nsigma_ghz = [0.1, 0.3]\nn_realizations = 40\nhistogram_sites = [4, 8]\n"
        );
        let cfg = RunConfig::from_toml(&text).map_err(|e| e.to_string())?;
        let mut outputs = Vec::new();
        for workers in [1, 8] {
            let run = Run::new(
                cfg.clone(),
                &Overrides {
                    workers: Some(workers),
                    out_dir: Some(dir.path().join(format!("w{workers}"))),
                    ..Overrides::default()
                },
            )
            .map_err(|e| e.to_string())?;
            let files = cmd_ensemble(&run).map_err(|e| e.to_string())?;
            let aggregates: Vec<(String, Vec<u8>)> = files
                .iter()
                .filter(|f| !f.to_string_lossy().ends_with(".jsonl"))
                .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(f).unwrap()))
                .collect();
            outputs.push(aggregates);
        }
        let same = outputs[0] == outputs[1];
        Ok(outcome(
            same && !outputs[0].is_empty(),
            format!("{} aggregate files, workers 1 vs 8 byte-identical [{}]", outputs[0].len(), chk(same)),
        ))
    });

    suite.run(5, "unitarity and energy invariants", None, || {
        let ok = inv.failed_runs == 0 && inv.max_norm_error <= 1e-8 && inv.max_energy_drift <= 1e-7;
        Ok(outcome(
            ok,
            format!(
                "{} runs, {} failed; max | ||psi|| - 1 | = {:.1e} (bound 1e-8); max relative <H> drift = {:.1e} (bound 1e-7)",
                inv.runs, inv.failed_runs, inv.max_norm_error, inv.max_energy_drift
            ),
        ))
    });

    suite.lines.sort_by_key(|l| l.0);
    let failed: Vec<u32> = suite.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    println!(
        "acceptance: {} of {} criteria pass{}",
        suite.lines.len() - failed.len(),
        suite.lines.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {failed:?}")
        }
    );
    if !failed.is_empty() && std::env::var("FLUXCHAIN_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
