//! Run configuration, provenance and output files for the `fluxchain` binary.
//!
//! A run is one TOML file. Physical quantities carry their unit in the key
//! name (`_ghz`, `_ns`, `_rad`) and unknown keys are rejected. Every output
//! file carries the SHA-256 of the effective configuration and the base seed:
//! CSV files as a leading `#` comment line, JSON files as a `provenance`
//! object.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    default_edges, default_fit_max, dimensionless_disorder, fit_localization_length, log_histogram,
    mean_log_peak, peak_vs_arrival, ArrivalCurve, LocalizationFit, LogHistogram, MeanLogPeak,
};
use crate::chain::{assemble_hamiltonian_in, basis_state_in, build_chain, HilbertSpace, Truncation, DEFAULT_MAX_SITES};
use crate::circuit::{flux_sweep, project_to_qubit, solve_with, FluxoniumParams, SolverOptions};
use crate::ensemble::{
    empirical_delta_epsilon, load_checkpoint, run_ensemble_with, ChainTemplate, DisorderKind, DisorderSpec,
    EnsembleJob, EnsembleOptions, EnsembleResult,
};
use crate::error::{Error, Result};
use crate::evolution::{evolve, peak_stats, uniform_grid, EvolutionRecord, EvolveOptions};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_REALIZATIONS: usize = 1000;
pub const QUICK_REALIZATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub circuit: CircuitBlock,
    pub solver: Option<SolverBlock>,
    pub chain: Option<ChainBlock>,
    pub time: Option<TimeBlock>,
    pub integrator: Option<IntegratorBlock>,
    pub disorder: Option<DisorderBlock>,
    pub sweep: Option<SweepBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitBlock {
    pub e_c_ghz: f64,
    pub e_l_ghz: f64,
    pub e_j_ghz: f64,
    #[serde(default = "pi")]
    pub phi_rad: f64,
}

fn pi() -> f64 {
    PI
}

impl Default for CircuitBlock {
    fn default() -> Self {
        let p = FluxoniumParams::reference();
        Self {
            e_c_ghz: p.e_c,
            e_l_ghz: p.e_l,
            e_j_ghz: p.e_j,
            phi_rad: p.phi,
        }
    }
}

impl CircuitBlock {
    pub fn params(&self) -> FluxoniumParams {
        FluxoniumParams::new(self.e_c_ghz, self.e_l_ghz, self.e_j_ghz, self.phi_rad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub levels: Option<usize>,
    pub tol_ghz: Option<f64>,
    pub max_basis: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainBlock {
    pub length: usize,
    pub coupling_ghz: f64,
    #[serde(default)]
    pub source_site: usize,
    pub truncation: Option<Truncation>,
    /// Per-site departures from the circuit block.
    #[serde(default)]
    pub site: Vec<SiteOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteOverride {
    pub index: usize,
    pub e_j_ghz: Option<f64>,
    pub phi_rad: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    pub dt_ns: Option<f64>,
    pub t_max_ns: Option<f64>,
    pub t_star_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorBlock {
    pub tol: Option<f64>,
    pub krylov_dim: Option<usize>,
    pub norm_tol: Option<f64>,
    pub energy_rel_tol: Option<f64>,
    pub energy_stride: Option<usize>,
    pub full_reorth: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderBlock {
    pub kind: DisorderKind,
    /// E_J standard deviations for `ej_gaussian`.
    pub sigma_ghz: Option<Vec<f64>>,
    /// Flux standard deviations for `flux_gaussian`.
    pub sigma_rad: Option<Vec<f64>>,
    pub n_realizations: Option<usize>,
    #[serde(default)]
    pub histogram_sites: Vec<usize>,
    pub fit_max_site: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Single-circuit flux sweep points, relative to the circuit's `phi_rad`.
    #[serde(default)]
    pub delta_phi_rad: Vec<f64>,
    /// Uniform detunings applied to every chain site.
    #[serde(default)]
    pub uniform_detuning_rad: Vec<f64>,
    #[serde(default)]
    pub sites: Vec<usize>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.circuit.params().validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn chain(&self) -> Result<&ChainBlock> {
        let c = self.chain.as_ref().ok_or_else(|| config_err("missing [chain] block"))?;
        if c.length == 0 || c.length > DEFAULT_MAX_SITES {
            return Err(config_err(format!("chain.length must be in 1..={DEFAULT_MAX_SITES}")));
        }
        if c.source_site >= c.length {
            return Err(config_err("chain.source_site outside the chain"));
        }
        if let Some(s) = c.site.iter().find(|s| s.index >= c.length) {
            return Err(config_err(format!("chain.site index {} outside the chain", s.index)));
        }
        Ok(c)
    }

    fn solver_options(&self) -> SolverOptions {
        let mut o = SolverOptions::default();
        if let Some(s) = &self.solver {
            o.k_levels = s.levels.unwrap_or(o.k_levels);
            o.tol = s.tol_ghz.unwrap_or(o.tol);
            o.max_basis = s.max_basis.unwrap_or(o.max_basis);
        }
        o
    }

    fn evolve_options(&self, base: EvolveOptions) -> EvolveOptions {
        let mut o = base;
        if let Some(i) = &self.integrator {
            o.tol = i.tol.unwrap_or(o.tol);
            o.krylov_dim = i.krylov_dim.unwrap_or(o.krylov_dim);
            o.norm_tol = i.norm_tol.unwrap_or(o.norm_tol);
            o.energy_rel_tol = i.energy_rel_tol.unwrap_or(o.energy_rel_tol);
            o.energy_stride = i.energy_stride.unwrap_or(o.energy_stride);
            o.full_reorth = i.full_reorth.unwrap_or(o.full_reorth);
        }
        o
    }

    /// `(dt, t_max, t_star)` in ns. `t_star` defaults to `t_max`.
    fn time(&self) -> Result<(f64, f64, f64)> {
        let t = self.time.as_ref();
        let dt = t.and_then(|t| t.dt_ns).unwrap_or(0.05);
        let t_max = t.and_then(|t| t.t_max_ns).unwrap_or(30.0);
        let t_star = t.and_then(|t| t.t_star_ns).unwrap_or(t_max);
        if !(dt > 0.0 && t_max > 0.0 && t_star > 0.0 && t_star <= t_max) {
            return Err(config_err("time: need dt_ns > 0 and 0 < t_star_ns <= t_max_ns"));
        }
        Ok((dt, t_max, t_star))
    }

    fn site_params(&self) -> Result<Vec<FluxoniumParams>> {
        let c = self.chain()?;
        let mut p = vec![self.circuit.params(); c.length];
        for o in &c.site {
            if let Some(e) = o.e_j_ghz {
                p[o.index] = p[o.index].with_e_j(e);
            }
            if let Some(f) = o.phi_rad {
                p[o.index] = p[o.index].with_phi(f);
            }
        }
        Ok(p)
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub quick: bool,
}

/// A configuration with overrides folded in; the hash covers everything that
/// can change an output byte.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub config_hash: String,
}

impl Run {
    pub fn new(mut config: RunConfig, ov: &Overrides) -> Result<Self> {
        let seed = ov.seed.or(config.seed).unwrap_or(0);
        config.seed = Some(seed);
        if let Some(d) = config.disorder.as_mut() {
            let n = d.n_realizations.unwrap_or(DEFAULT_REALIZATIONS);
            d.n_realizations = Some(if ov.quick { n.min(QUICK_REALIZATIONS) } else { n });
        }
        let out_dir = ov
            .out_dir
            .clone()
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        config.out_dir = None;
        let canonical = serde_json::to_vec(&config)?;
        let config_hash = hex::encode(Sha256::digest(&canonical));
        let workers = ov
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if workers == 0 {
            return Err(config_err("--workers must be at least 1"));
        }
        Ok(Self {
            config,
            seed,
            workers,
            out_dir,
            config_hash,
        })
    }

    pub fn provenance(&self, command: &str) -> Provenance {
        Provenance {
            program: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub program: String,
    pub version: String,
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn comment(&self) -> String {
        format!(
            "# {} {} command={} config_hash={} seed={}\n",
            self.program, self.version, self.command, self.config_hash, self.seed
        )
    }
}

/// Decimal rendering with 9 significant digits. Non-finite values are refused.
pub fn fmt_sig(x: f64) -> Result<String> {
    if !x.is_finite() {
        return Err(Error::param(format!("refusing to write non-finite value {x}")));
    }
    if x == 0.0 {
        return Ok("0".into());
    }
    // exponent after rounding to 9 digits, so 0.9999999999 prints as 1.00000000
    let sci = format!("{x:.8e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    let decimals = (8 - exp).max(0) as usize;
    Ok(format!("{x:.decimals$}"))
}

/// Files are written under a `.partial` name and renamed when complete, so a
/// failed command leaves nothing that looks like a result.
struct Staged {
    files: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn create(&mut self, path: PathBuf) -> Result<BufWriter<File>> {
        let mut tmp = path.clone().into_os_string();
        tmp.push(".partial");
        let tmp = PathBuf::from(tmp);
        let f = File::create(&tmp)?;
        self.files.push((tmp, path));
        Ok(BufWriter::new(f))
    }

    fn csv(&mut self, path: PathBuf, prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = self.create(path)?;
        w.write_all(prov.comment().as_bytes())?;
        let mut c = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        c.write_record(header)?;
        for r in rows {
            c.write_record(r)?;
        }
        c.flush()?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        let mut w = self.create(path)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn commit(mut self) -> Result<Vec<PathBuf>> {
        let files = std::mem::take(&mut self.files);
        let mut out = Vec::with_capacity(files.len());
        for (tmp, path) in files {
            fs::rename(&tmp, &path)?;
            out.push(path);
        }
        Ok(out)
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        for (tmp, _) in &self.files {
            let _ = fs::remove_file(tmp);
        }
    }
}

fn row(values: &[f64]) -> Result<Vec<String>> {
    values.iter().map(|&v| fmt_sig(v)).collect()
}

#[derive(Debug, Serialize)]
struct SolveReport {
    provenance: Provenance,
    params: FluxoniumParams,
    energies_ghz: Vec<f64>,
    epsilon_01_ghz: f64,
    epsilon_12_ghz: f64,
    theta: Vec<Vec<f64>>,
    cos_theta: Vec<Vec<f64>>,
    sin_theta: Vec<Vec<f64>>,
    theta_ge: f64,
    eta: f64,
    basis_size: usize,
    converged: bool,
    residual_ghz: f64,
}

fn rows_of(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Solve the configured circuit and write `solve.json`.
pub fn cmd_solve(run: &Run) -> Result<Vec<PathBuf>> {
    let params = run.config.circuit.params();
    let opts = run.config.solver_options();
    if opts.k_levels < 3 {
        return Err(config_err("solver.levels must be at least 3"));
    }
    let spec = solve_with(&params, &opts)?;
    let site = project_to_qubit(&spec, &params)?;
    let report = SolveReport {
        provenance: run.provenance("solve"),
        params,
        energies_ghz: spec.energies.clone(),
        epsilon_01_ghz: spec.gap(0, 1),
        epsilon_12_ghz: spec.gap(1, 2),
        theta: rows_of(&spec.theta_elems),
        cos_theta: rows_of(&spec.cos_elems),
        sin_theta: rows_of(&spec.sin_elems),
        theta_ge: site.theta_ge(),
        eta: spec.eta(),
        basis_size: spec.basis_size,
        converged: spec.converged,
        residual_ghz: spec.residual,
    };
    fs::create_dir_all(&run.out_dir)?;
    let mut st = Staged::new();
    st.json(run.out_dir.join("solve.json"), &report)?;
    st.commit()
}

#[derive(Debug, Serialize)]
struct PeakRow {
    site: usize,
    p_max: f64,
    t_peak_ns: f64,
}

#[derive(Debug, Serialize)]
struct EvolveReport {
    provenance: Provenance,
    sites: usize,
    dimension: usize,
    truncation: Truncation,
    t_star_ns: f64,
    epsilon_ghz: Vec<f64>,
    peaks: Vec<PeakRow>,
    max_norm_error: f64,
    max_relative_energy_drift: f64,
    matvecs: usize,
}

/// Evolve the configured chain; writes `trajectory.csv` and `trajectory.json`.
pub fn cmd_evolve(run: &Run) -> Result<Vec<PathBuf>> {
    let cfg = &run.config;
    let c = cfg.chain()?;
    let (dt, t_max, t_star) = cfg.time()?;
    let trunc = c.truncation.unwrap_or(Truncation::Full);
    let params = cfg.site_params()?;
    let chain = build_chain(&params, &vec![c.coupling_ghz; c.length - 1])?;
    let space = Arc::new(HilbertSpace::new(c.length, trunc, DEFAULT_MAX_SITES)?);
    let h = assemble_hamiltonian_in(&chain, space.clone())?;
    let psi0 = basis_state_in(&space, &[c.source_site])?;
    let grid = uniform_grid(dt, t_max).map_err(|e| config_err(e.to_string()))?;
    let rec = evolve(&h, &psi0, &grid, &cfg.evolve_options(EvolveOptions::default()))?;
    let peaks = peak_stats(&rec, t_star)?;

    let mut header = vec!["t_ns".to_string()];
    header.extend((0..c.length).map(|l| format!("p_{l}")));
    header.push("norm".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..rec.times.len())
        .map(|k| {
            let mut v = vec![rec.times[k]];
            v.extend(rec.probs.iter().map(|p| p[k]));
            v.push(rec.norms[k]);
            row(&v)
        })
        .collect::<Result<Vec<_>>>()?;

    let report = EvolveReport {
        provenance: run.provenance("evolve"),
        sites: c.length,
        dimension: h.dim(),
        truncation: trunc,
        t_star_ns: t_star,
        epsilon_ghz: chain.sites.iter().map(|s| s.epsilon).collect(),
        peaks: peaks
            .iter()
            .enumerate()
            .map(|(site, p)| PeakRow {
                site,
                p_max: p.p_max,
                t_peak_ns: p.t_peak,
            })
            .collect(),
        max_norm_error: rec.max_norm_error(),
        max_relative_energy_drift: rec.max_relative_energy_drift(),
        matvecs: rec.matvecs,
    };
    fs::create_dir_all(&run.out_dir)?;
    let prov = run.provenance("evolve");
    let mut st = Staged::new();
    st.csv(run.out_dir.join("trajectory.csv"), &prov, &header, &rows)?;
    st.json(run.out_dir.join("trajectory.json"), &report)?;
    st.commit()
}

/// The ensemble jobs described by a configuration, one per sigma.
pub fn ensemble_jobs(run: &Run) -> Result<Vec<EnsembleJob>> {
    let cfg = &run.config;
    let c = cfg.chain()?;
    if !c.site.is_empty() {
        return Err(config_err("chain.site overrides are not supported for ensembles"));
    }
    let d = cfg.disorder.as_ref().ok_or_else(|| config_err("missing [disorder] block"))?;
    let (dt, _, t_star) = cfg.time()?;
    let base = cfg.circuit.params();
    let (sigmas, mean) = match d.kind {
        DisorderKind::EjGaussian => {
            if d.sigma_rad.is_some() {
                return Err(config_err("ej_gaussian disorder takes sigma_ghz, not sigma_rad"));
            }
            (d.sigma_ghz.clone(), base.e_j)
        }
        DisorderKind::FluxGaussian => {
            if d.sigma_ghz.is_some() {
                return Err(config_err("flux_gaussian disorder takes sigma_rad, not sigma_ghz"));
            }
            (d.sigma_rad.clone(), base.phi)
        }
    };
    let sigmas = sigmas.filter(|s| !s.is_empty()).ok_or_else(|| config_err("disorder needs a sigma list"))?;
    let n = d.n_realizations.unwrap_or(DEFAULT_REALIZATIONS);
    let defaults = EnsembleOptions::default();
    let options = EnsembleOptions {
        evolve: cfg.evolve_options(defaults.evolve),
        truncation: c.truncation.unwrap_or(defaults.truncation),
        dt,
        t_star,
        source_site: c.source_site,
    };
    if let Some(&s) = d.histogram_sites.iter().find(|&&s| s >= c.length) {
        return Err(config_err(format!("histogram site {s} outside the chain")));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            let job = EnsembleJob {
                template: ChainTemplate::new(base, c.coupling_ghz, c.length),
                disorder: DisorderSpec {
                    kind: d.kind,
                    mean,
                    sigma,
                    n_realizations: n,
                    base_seed: run.seed,
                },
                options,
            };
            job.validate().map_err(|e| config_err(e.to_string()))?;
            Ok(job)
        })
        .collect()
}

fn checkpoint_path(run: &Run, index: usize) -> PathBuf {
    run.out_dir.join(format!("checkpoint_{index}.jsonl"))
}

#[derive(Debug, Serialize)]
struct SigmaSummary {
    sigma: f64,
    completed: usize,
    failed: usize,
    missing: usize,
    resampled_draws: u64,
    delta_epsilon_ghz: f64,
    dimensionless_disorder: f64,
    mean_log_peak: MeanLogPeak,
    fit: Option<LocalizationFit>,
    fit_error: Option<String>,
    histograms: Vec<(usize, LogHistogram)>,
}

#[derive(Debug, Serialize)]
struct EnsembleReport {
    provenance: Provenance,
    kind: DisorderKind,
    sites: usize,
    coupling_ghz: f64,
    theta_ge: f64,
    n_realizations: usize,
    truncation: Truncation,
    t_star_ns: f64,
    sigmas: Vec<SigmaSummary>,
}

/// Aggregate files for a set of ensembles, one per sigma. `analyze` reuses the
/// `ensemble` command label so re-aggregation reproduces the same bytes.
fn write_aggregates(run: &Run, command: &str, jobs: &[EnsembleJob], results: &[EnsembleResult]) -> Result<Vec<PathBuf>> {
    let cfg = &run.config;
    let c = cfg.chain()?;
    let d = cfg.disorder.as_ref().expect("jobs came from a disorder block");
    let a = project_to_qubit(&solve_with(&cfg.circuit.params(), &SolverOptions::default())?, &cfg.circuit.params())?
        .theta_ge();
    let fit_max = d.fit_max_site.unwrap_or(default_fit_max(c.length));
    let edges = default_edges();
    let prov = run.provenance(command);

    let mut sigmas = Vec::new();
    let mut mean_rows = Vec::new();
    let mut loc_rows = Vec::new();
    let mut hist_rows: Vec<Vec<Vec<String>>> = vec![Vec::new(); d.histogram_sites.len()];
    for (job, res) in jobs.iter().zip(results) {
        let sigma = job.disorder.sigma;
        let de = empirical_delta_epsilon(res)?;
        let x = dimensionless_disorder(de, c.coupling_ghz, a);
        let m = mean_log_peak(res)?;
        for l in 0..c.length {
            if m.counts[l] > 0 {
                let mut r = row(&[sigma, de, x])?;
                r.insert(0, l.to_string());
                r.extend(row(&[m.mean_ln_p[l], m.std_err[l]])?);
                r.push(m.counts[l].to_string());
                r.push(m.excluded[l].to_string());
                mean_rows.push(r);
            }
        }
        let (fit, fit_error) = match fit_localization_length(&m.mean_ln_p, fit_max) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(f) = &fit {
            let mut r = row(&[sigma, de, x])?;
            let xi_cell = |v: f64| if v.is_infinite() { Ok("inf".to_string()) } else { fmt_sig(v) };
            r.push(xi_cell(f.xi)?);
            r.push(xi_cell(f.xi_std_err)?);
            r.extend(row(&[f.c0, f.residual])?);
            r.push(f.delocalized.to_string());
            loc_rows.push(r);
        }
        let mut histograms = Vec::new();
        for (k, &site) in d.histogram_sites.iter().enumerate() {
            let h = log_histogram(&res.peaks_at(site), &edges)?;
            for b in 0..h.counts.len() {
                let mut r = row(&[sigma, h.edges[b], h.edges[b + 1], h.density[b]])?;
                r.push(h.counts[b].to_string());
                hist_rows[k].push(r);
            }
            histograms.push((site, h));
        }
        sigmas.push(SigmaSummary {
            sigma,
            completed: res.completed().count(),
            failed: res.n_failed(),
            missing: job.disorder.n_realizations - res.records.len(),
            resampled_draws: res.records.iter().map(|r| r.resampled as u64).sum(),
            delta_epsilon_ghz: de,
            dimensionless_disorder: x,
            mean_log_peak: m,
            fit,
            fit_error,
            histograms,
        });
    }

    let report = EnsembleReport {
        provenance: prov.clone(),
        kind: jobs[0].disorder.kind,
        sites: c.length,
        coupling_ghz: c.coupling_ghz,
        theta_ge: a,
        n_realizations: jobs[0].disorder.n_realizations,
        truncation: jobs[0].options.truncation,
        t_star_ns: jobs[0].options.t_star,
        sigmas,
    };
    let mut st = Staged::new();
    st.csv(
        run.out_dir.join("mean_ln_p.csv"),
        &prov,
        &["site", "sigma", "delta_epsilon_ghz", "dimensionless_disorder", "mean_ln_p", "std_err", "count", "excluded"],
        &mean_rows,
    )?;
    st.csv(
        run.out_dir.join("localization.csv"),
        &prov,
        &["sigma", "delta_epsilon_ghz", "dimensionless_disorder", "xi", "xi_std_err", "c0", "residual", "delocalized"],
        &loc_rows,
    )?;
    for (k, &site) in d.histogram_sites.iter().enumerate() {
        st.csv(
            run.out_dir.join(format!("histogram_site{site}.csv")),
            &prov,
            &["sigma", "log10_p_lo", "log10_p_hi", "density", "count"],
            &hist_rows[k],
        )?;
    }
    st.json(run.out_dir.join("ensemble.json"), &report)?;
    st.commit()
}

/// Run (or resume) every configured ensemble and write the aggregates.
pub fn cmd_ensemble(run: &Run) -> Result<Vec<PathBuf>> {
    let jobs = ensemble_jobs(run)?;
    fs::create_dir_all(&run.out_dir)?;
    let mut results = Vec::with_capacity(jobs.len());
    for (i, job) in jobs.iter().enumerate() {
        results.push(run_ensemble_with(job, run.workers, Some(&checkpoint_path(run, i)))?);
    }
    let mut files: Vec<PathBuf> = (0..jobs.len()).map(|i| checkpoint_path(run, i)).collect();
    files.extend(write_aggregates(run, "ensemble", &jobs, &results)?);
    Ok(files)
}

/// Re-aggregate existing checkpoints without running anything.
pub fn cmd_analyze(run: &Run) -> Result<Vec<PathBuf>> {
    let jobs = ensemble_jobs(run)?;
    let mut results = Vec::with_capacity(jobs.len());
    for (i, job) in jobs.iter().enumerate() {
        let path = checkpoint_path(run, i);
        if !path.exists() {
            return Err(Error::Checkpoint(format!("{} not found", path.display())));
        }
        let (fingerprint, records) = load_checkpoint(&path)?;
        if fingerprint != job.fingerprint() {
            return Err(Error::Checkpoint(format!(
                "{} was written by a different configuration",
                path.display()
            )));
        }
        if records.iter().all(|r| !r.is_ok()) {
            return Err(Error::Checkpoint(format!("{} has no completed realizations", path.display())));
        }
        results.push(EnsembleResult { job: *job, records });
    }
    write_aggregates(run, "ensemble", &jobs, &results)
}

#[derive(Debug, Serialize)]
struct SweepReport {
    provenance: Provenance,
    flux_points: usize,
    uniform_detuning_rad: Vec<f64>,
    sites: usize,
    coupling_ghz: Option<f64>,
    t_star_ns: Option<f64>,
    arrival: Vec<ArrivalCurve>,
    monotone: Vec<(usize, bool)>,
}

/// Single-circuit flux sweep and/or uniform-detuning chain sweep.
pub fn cmd_sweep(run: &Run) -> Result<Vec<PathBuf>> {
    let cfg = &run.config;
    let s = cfg.sweep.as_ref().ok_or_else(|| config_err("missing [sweep] block"))?;
    if s.delta_phi_rad.is_empty() && s.uniform_detuning_rad.is_empty() {
        return Err(config_err("sweep: both delta_phi_rad and uniform_detuning_rad are empty"));
    }
    if s.delta_phi_rad.iter().chain(&s.uniform_detuning_rad).any(|v| !v.is_finite()) {
        return Err(config_err("sweep values must be finite"));
    }
    let prov = run.provenance("sweep");
    let mut st = Staged::new();
    fs::create_dir_all(&run.out_dir)?;

    if !s.delta_phi_rad.is_empty() {
        let mut rows = Vec::new();
        for r in flux_sweep(&cfg.circuit.params(), &s.delta_phi_rad) {
            let p = r.outcome.map_err(|e| Error::Parameter(format!("flux sweep at {}: {e}", r.delta_phi)))?;
            rows.push(row(&[r.delta_phi, p.epsilon, p.theta_gg, p.theta_ge, p.theta_ee])?);
        }
        st.csv(
            run.out_dir.join("flux_sweep.csv"),
            &prov,
            &["delta_phi_rad", "epsilon_ghz", "theta_gg", "theta_ge", "theta_ee"],
            &rows,
        )?;
    }

    let mut report = SweepReport {
        provenance: prov.clone(),
        flux_points: s.delta_phi_rad.len(),
        uniform_detuning_rad: s.uniform_detuning_rad.clone(),
        sites: 0,
        coupling_ghz: None,
        t_star_ns: None,
        arrival: Vec::new(),
        monotone: Vec::new(),
    };
    if !s.uniform_detuning_rad.is_empty() {
        let c = cfg.chain()?;
        if s.sites.is_empty() {
            return Err(config_err("sweep.sites is empty"));
        }
        if let Some(&l) = s.sites.iter().find(|&&l| l >= c.length) {
            return Err(config_err(format!("sweep site {l} outside the chain")));
        }
        let (dt, t_max, t_star) = cfg.time()?;
        let trunc = c.truncation.unwrap_or(Truncation::MaxExcitations(5));
        let space = Arc::new(HilbertSpace::new(c.length, trunc, DEFAULT_MAX_SITES)?);
        let grid = uniform_grid(dt, t_max).map_err(|e| config_err(e.to_string()))?;
        let psi0 = basis_state_in(&space, &[c.source_site])?;
        let opts = cfg.evolve_options(EvolveOptions {
            energy_stride: 20,
            ..EvolveOptions::default()
        });
        let records = s
            .uniform_detuning_rad
            .iter()
            .map(|&d| -> Result<EvolutionRecord> {
                let p = vec![cfg.circuit.params().detuned(d); c.length];
                let chain = build_chain(&p, &vec![c.coupling_ghz; c.length - 1])?;
                let h = assemble_hamiltonian_in(&chain, space.clone())?;
                let mut rec = evolve(&h, &psi0, &grid, &opts)?;
                rec.peak = peak_stats(&rec, t_star)?;
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()?;
        let curves = peak_vs_arrival(&records, &s.sites)?;
        let mut rows = Vec::new();
        for (k, &d) in s.uniform_detuning_rad.iter().enumerate() {
            for cv in &curves {
                let (t, p) = cv.points[k];
                let mut r = row(&[d])?;
                r.push(cv.site.to_string());
                r.extend(row(&[t, p])?);
                rows.push(r);
            }
        }
        st.csv(
            run.out_dir.join("arrival.csv"),
            &prov,
            &["uniform_detuning_rad", "site", "t_peak_ns", "p_max"],
            &rows,
        )?;
        report.sites = c.length;
        report.coupling_ghz = Some(c.coupling_ghz);
        report.t_star_ns = Some(t_star);
        report.monotone = curves.iter().map(|c| (c.site, c.is_monotone_decreasing())).collect();
        report.arrival = curves;
    }
    st.json(run.out_dir.join("sweep.json"), &report)?;
    st.commit()
}
