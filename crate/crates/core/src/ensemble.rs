//! Disorder ensembles: Gaussian Josephson-energy or flux disorder, one chain
//! evolution per realization, results keyed by realization index.
//!
//! Every site draw is seeded from `(base_seed, index, site)` alone, so a
//! realization is reproducible in isolation and the outcome does not depend on
//! the worker count or on the order in which jobs finish.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{
    assemble_hamiltonian_in, basis_state_in, build_chain, ChainSpec, HilbertSpace, Truncation,
    DEFAULT_MAX_SITES,
};
use crate::circuit::FluxoniumParams;
use crate::error::{Error, Result};
use crate::evolution::{evolve, peak_stats, uniform_grid, EvolveOptions};

/// Give up on a site after this many non-positive `E_J` draws.
const MAX_RESAMPLES: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisorderKind {
    /// `E_J,l ~ N(mean, sigma)` in GHz, flux fixed at the template value.
    EjGaussian,
    /// `phi_l ~ N(mean, sigma)` in radians, `E_J` fixed at the template value.
    FluxGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSpec {
    pub kind: DisorderKind,
    pub mean: f64,
    pub sigma: f64,
    pub n_realizations: usize,
    pub base_seed: u64,
}

impl DisorderSpec {
    pub fn ej_gaussian(mean_ghz: f64, sigma_ghz: f64, n: usize, base_seed: u64) -> Self {
        Self {
            kind: DisorderKind::EjGaussian,
            mean: mean_ghz,
            sigma: sigma_ghz,
            n_realizations: n,
            base_seed,
        }
    }

    pub fn flux_gaussian(mean_rad: f64, sigma_rad: f64, n: usize, base_seed: u64) -> Self {
        Self {
            kind: DisorderKind::FluxGaussian,
            mean: mean_rad,
            sigma: sigma_rad,
            n_realizations: n,
            base_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() || !self.mean.is_finite() {
            return Err(Error::param(format!(
                "disorder needs finite mean and sigma >= 0, got mean {} sigma {}",
                self.mean, self.sigma
            )));
        }
        if self.n_realizations == 0 {
            return Err(Error::param("n_realizations must be at least 1"));
        }
        if self.kind == DisorderKind::EjGaussian && self.mean <= 0.0 {
            return Err(Error::param("E_J disorder mean must be positive"));
        }
        Ok(())
    }
}

/// A clean chain: identical sites with uniform coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainTemplate {
    pub params: FluxoniumParams,
    /// Coupling `J` in GHz.
    pub coupling: f64,
    pub length: usize,
}

impl ChainTemplate {
    pub fn new(params: FluxoniumParams, coupling: f64, length: usize) -> Self {
        Self {
            params,
            coupling,
            length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.length == 0 || self.length > DEFAULT_MAX_SITES {
            return Err(Error::param(format!(
                "chain length must be in 1..={DEFAULT_MAX_SITES}, got {}",
                self.length
            )));
        }
        if !self.coupling.is_finite() {
            return Err(Error::param("coupling must be finite"));
        }
        Ok(())
    }
}

/// Evolution settings shared by every realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleOptions {
    pub evolve: EvolveOptions,
    pub truncation: Truncation,
    /// Recording step in ns.
    pub dt: f64,
    /// Peak window `t < t_star` in ns; the grid runs to `t_star`.
    pub t_star: f64,
    /// Site that starts excited.
    pub source_site: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            evolve: EvolveOptions {
                energy_stride: 20,
                ..EvolveOptions::default()
            },
            truncation: Truncation::MaxExcitations(3),
            dt: 0.05,
            t_star: 30.0,
            source_site: 0,
        }
    }
}

/// Everything that determines an ensemble's numbers. Worker count is not part
/// of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleJob {
    pub template: ChainTemplate,
    pub disorder: DisorderSpec,
    pub options: EnsembleOptions,
}

impl EnsembleJob {
    pub fn validate(&self) -> Result<()> {
        self.template.validate()?;
        self.disorder.validate()?;
        if self.options.source_site >= self.template.length {
            return Err(Error::param("source site outside the chain"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding; used to match checkpoints.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("job serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of realization `index`.
pub fn realization_seed(base_seed: u64, index: usize) -> u64 {
    mix(mix(base_seed) ^ index as u64)
}

fn site_rng(realization_seed: u64, site: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(realization_seed ^ mix(site as u64 + 1)))
}

/// One sampled chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub index: usize,
    pub seed: u64,
    pub params: Vec<FluxoniumParams>,
    /// Number of discarded `E_J <= 0` draws.
    pub resampled: u32,
    pub chain: ChainSpec,
}

/// Draw the circuit parameters of realization `index` without solving them.
pub fn sample_params(
    template: &ChainTemplate,
    disorder: &DisorderSpec,
    index: usize,
) -> Result<(u64, Vec<FluxoniumParams>, u32)> {
    disorder.validate()?;
    if index >= disorder.n_realizations {
        return Err(Error::param(format!(
            "realization {index} out of range (n = {})",
            disorder.n_realizations
        )));
    }
    let seed = realization_seed(disorder.base_seed, index);
    let mut resampled = 0;
    let mut params = Vec::with_capacity(template.length);
    for site in 0..template.length {
        let mut rng = site_rng(seed, site);
        let mut draw = || -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            disorder.mean + disorder.sigma * z
        };
        let p = match disorder.kind {
            DisorderKind::EjGaussian => {
                let mut e_j = draw();
                let mut tries = 0;
                while e_j <= 0.0 {
                    tries += 1;
                    if tries > MAX_RESAMPLES {
                        return Err(Error::param(format!("site {site}: could not draw a positive E_J")));
                    }
                    e_j = draw();
                }
                resampled += tries;
                template.params.with_e_j(e_j)
            }
            DisorderKind::FluxGaussian => template.params.with_phi(draw()),
        };
        params.push(p);
    }
    Ok((seed, params, resampled))
}

/// Sample realization `index` and solve every site.
pub fn sample_realization(template: &ChainTemplate, disorder: &DisorderSpec, index: usize) -> Result<Realization> {
    template.validate()?;
    let (seed, params, resampled) = sample_params(template, disorder, index)?;
    let couplings = vec![template.coupling; template.length.saturating_sub(1)];
    let chain = build_chain(&params, &couplings)?.with_seed(seed);
    Ok(Realization {
        index,
        seed,
        params,
        resampled,
        chain,
    })
}

/// Per-realization outcome, one checkpoint line each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealizationRecord {
    pub index: usize,
    pub seed: u64,
    /// Sampled `E_J,l` in GHz.
    pub e_j: Vec<f64>,
    /// Sampled `phi_l` in radians.
    pub phi: Vec<f64>,
    /// Qubit splittings in GHz; empty if the circuit solve failed.
    pub epsilon: Vec<f64>,
    pub resampled: u32,
    /// `P_l`; empty on failure.
    pub p_max: Vec<f64>,
    /// Arrival time of `P_l` in ns; empty on failure.
    pub t_peak: Vec<f64>,
    /// Largest `| ||psi|| - 1 |` of the run.
    pub norm_error: Option<f64>,
    /// Largest relative drift of `<H>` of the run.
    pub energy_drift: Option<f64>,
    pub error: Option<String>,
}

impl RealizationRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Run one realization. Failures after sampling are captured in the record.
pub fn run_realization(job: &EnsembleJob, space: &Arc<HilbertSpace>, index: usize) -> Result<RealizationRecord> {
    let (seed, params, resampled) = sample_params(&job.template, &job.disorder, index)?;
    let mut record = RealizationRecord {
        index,
        seed,
        e_j: params.iter().map(|p| p.e_j).collect(),
        phi: params.iter().map(|p| p.phi).collect(),
        epsilon: Vec::new(),
        resampled,
        p_max: Vec::new(),
        t_peak: Vec::new(),
        norm_error: None,
        energy_drift: None,
        error: None,
    };
    let couplings = vec![job.template.coupling; job.template.length.saturating_sub(1)];
    let outcome = build_chain(&params, &couplings).and_then(|chain| {
        record.epsilon = chain.sites.iter().map(|s| s.epsilon).collect();
        let h = assemble_hamiltonian_in(&chain, space.clone())?;
        let psi0 = basis_state_in(space, &[job.options.source_site])?;
        let grid = uniform_grid(job.options.dt, job.options.t_star)?;
        let rec = evolve(&h, &psi0, &grid, &job.options.evolve)?;
        Ok((peak_stats(&rec, job.options.t_star)?, rec.max_norm_error(), rec.max_relative_energy_drift()))
    });
    match outcome {
        Ok((peaks, norm_error, energy_drift)) => {
            record.norm_error = Some(norm_error);
            record.energy_drift = Some(energy_drift);
            record.p_max = peaks.iter().map(|p| p.p_max).collect();
            record.t_peak = peaks.iter().map(|p| p.t_peak).collect();
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    Ok(record)
}

/// All realizations of one ensemble, ordered by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub job: EnsembleJob,
    pub records: Vec<RealizationRecord>,
}

impl EnsembleResult {
    pub fn completed(&self) -> impl Iterator<Item = &RealizationRecord> {
        self.records.iter().filter(|r| r.is_ok())
    }

    pub fn n_failed(&self) -> usize {
        self.records.iter().filter(|r| !r.is_ok()).count()
    }

    pub fn sites(&self) -> usize {
        self.job.template.length
    }

    /// `P_l` of site `site` across completed realizations, in index order.
    pub fn peaks_at(&self, site: usize) -> Vec<f64> {
        self.completed().filter_map(|r| r.p_max.get(site).copied()).collect()
    }

    /// Fraction of completed realizations with `P_site < threshold`.
    pub fn fraction_below(&self, site: usize, threshold: f64) -> f64 {
        let p = self.peaks_at(site);
        if p.is_empty() {
            return f64::NAN;
        }
        p.iter().filter(|&&x| x < threshold).count() as f64 / p.len() as f64
    }
}

/// Pooled standard deviation of `epsilon_l` over all sites and realizations.
pub fn empirical_delta_epsilon(result: &EnsembleResult) -> Result<f64> {
    let eps: Vec<f64> = result.records.iter().flat_map(|r| r.epsilon.iter().copied()).collect();
    if eps.len() < 2 {
        return Err(Error::param("need at least two splitting samples"));
    }
    // shifted by the first sample so identical values give exactly zero
    let n = eps.len() as f64;
    let shift = eps[0];
    let mean = eps.iter().map(|e| e - shift).sum::<f64>() / n;
    let var = eps.iter().map(|e| (e - shift - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    checkpoint_version: u32,
    fingerprint: String,
    n_realizations: usize,
}

/// Append-only JSON-lines checkpoint: a header line, then one record per
/// finished realization in completion order.
pub struct Checkpoint {
    file: File,
}

impl Checkpoint {
    /// Open or create `path` for `job`, returning the records already present.
    /// A torn last line from an interrupted write is cut off.
    pub fn open(path: &Path, job: &EnsembleJob) -> Result<(Self, Vec<RealizationRecord>)> {
        let header = CheckpointHeader {
            checkpoint_version: 1,
            fingerprint: job.fingerprint(),
            n_realizations: job.disorder.n_realizations,
        };
        if !path.exists() || std::fs::metadata(path)?.len() == 0 {
            let mut file = File::create(path)?;
            writeln!(file, "{}", serde_json::to_string(&header)?)?;
            file.sync_data()?;
            return Ok((Self { file }, Vec::new()));
        }
        let (records, good_len) = read_checkpoint(path, Some(&header))?;
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(good_len)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok((Self { file }, records))
    }

    pub fn append(&mut self, record: &RealizationRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

/// Parse a checkpoint; with `expect` set, refuse one written for another job.
/// Returns the records and the byte length of the intact prefix.
fn read_checkpoint(path: &Path, expect: Option<&CheckpointHeader>) -> Result<(Vec<RealizationRecord>, u64)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();
    let mut offset = reader.read_line(&mut line)? as u64;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if let Some(want) = expect {
        if header != *want {
            return Err(Error::Checkpoint(format!(
                "{} was written by a different configuration (fingerprint {}, expected {})",
                path.display(),
                header.fingerprint,
                want.fingerprint
            )));
        }
    }
    let mut seen = BTreeMap::new();
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        if !line.ends_with('\n') {
            // torn write at the tail
            break;
        }
        let rec: RealizationRecord = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Checkpoint(format!("{}: corrupt record at byte {offset}: {e}", path.display())))?;
        if rec.index >= header.n_realizations || seen.contains_key(&rec.index) {
            return Err(Error::Checkpoint(format!(
                "{}: unexpected or duplicate realization {}",
                path.display(),
                rec.index
            )));
        }
        seen.insert(rec.index, rec);
        offset += read as u64;
    }
    Ok((seen.into_values().collect(), offset))
}

/// Load the fingerprint and records of an existing checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(String, Vec<RealizationRecord>)> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    let header: CheckpointHeader = serde_json::from_str(first.trim_end())
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    let (records, _) = read_checkpoint(path, Some(&header))?;
    Ok((header.fingerprint, records))
}

/// Run every realization on `workers` threads.
pub fn run_ensemble(job: &EnsembleJob, workers: usize) -> Result<EnsembleResult> {
    run_ensemble_with(job, workers, None)
}

/// Like [`run_ensemble`], resuming from and appending to `checkpoint` if given.
pub fn run_ensemble_with(job: &EnsembleJob, workers: usize, checkpoint: Option<&Path>) -> Result<EnsembleResult> {
    job.validate()?;
    let n = job.disorder.n_realizations;
    let space = Arc::new(HilbertSpace::new(job.template.length, job.options.truncation, DEFAULT_MAX_SITES)?);
    let (writer, mut done) = match checkpoint {
        Some(path) => {
            let (cp, recs) = Checkpoint::open(path, job)?;
            (Some(Mutex::new(cp)), recs)
        }
        None => (None, Vec::new()),
    };
    let have: std::collections::HashSet<usize> = done.iter().map(|r| r.index).collect();
    let pending: Vec<usize> = (0..n).filter(|i| !have.contains(i)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::param(format!("worker pool: {e}")))?;
    let fresh: Vec<RealizationRecord> = pool.install(|| {
        pending
            .par_iter()
            .map(|&i| {
                let rec = run_realization(job, &space, i)?;
                if let Some(w) = &writer {
                    w.lock().expect("checkpoint lock").append(&rec)?;
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    done.extend(fresh);
    done.sort_by_key(|r| r.index);

    let failed = done.iter().filter(|r| !r.is_ok()).count();
    if failed * 100 > n {
        return Err(Error::Ensemble { failed, total: n });
    }
    Ok(EnsembleResult {
        job: *job,
        records: done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::solve_site;

    fn small_job(sigma: f64, n: usize) -> EnsembleJob {
        EnsembleJob {
            template: ChainTemplate::new(FluxoniumParams::reference(), 0.02, 5),
            disorder: DisorderSpec::ej_gaussian(9.0, sigma, n, 7),
            options: EnsembleOptions {
                t_star: 8.0,
                ..EnsembleOptions::default()
            },
        }
    }

    #[test]
    fn zero_sigma_reproduces_template() {
        let job = small_job(0.0, 2);
        let r = sample_realization(&job.template, &job.disorder, 1).unwrap();
        let clean = solve_site(&FluxoniumParams::reference()).unwrap();
        assert!(r.chain.sites.iter().all(|s| *s == clean));
        assert_eq!(r.chain.couplings, vec![0.02; 4]);
        assert_eq!(r.resampled, 0);
    }

    #[test]
    fn same_index_same_draws() {
        let job = small_job(0.3, 4);
        let a = sample_params(&job.template, &job.disorder, 3).unwrap();
        let b = sample_params(&job.template, &job.disorder, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_params(&job.template, &job.disorder, 2).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn index_out_of_range() {
        let job = small_job(0.3, 4);
        assert!(sample_params(&job.template, &job.disorder, 4).is_err());
    }

    #[test]
    fn negative_draws_are_resampled() {
        let t = ChainTemplate::new(FluxoniumParams::reference(), 0.02, 16);
        let d = DisorderSpec::ej_gaussian(0.5, 1.0, 10, 3);
        let mut total = 0;
        for i in 0..10 {
            let (_, p, k) = sample_params(&t, &d, i).unwrap();
            assert!(p.iter().all(|p| p.e_j > 0.0));
            total += k;
        }
        assert!(total > 0);
    }

    #[test]
    fn flux_disorder_keeps_e_j() {
        let t = ChainTemplate::new(FluxoniumParams::reference(), 0.02, 6);
        let d = DisorderSpec::flux_gaussian(std::f64::consts::PI, 0.05, 2, 1);
        let (_, p, _) = sample_params(&t, &d, 0).unwrap();
        assert!(p.iter().all(|p| p.e_j == 9.0));
        assert!(p.iter().any(|p| (p.phi - std::f64::consts::PI).abs() > 1e-6));
    }

    #[test]
    fn clean_ensemble_is_identical_and_ordered() {
        let res = run_ensemble(&small_job(0.0, 3), 2).unwrap();
        assert_eq!(res.records.len(), 3);
        assert!(res.records.iter().enumerate().all(|(i, r)| r.index == i));
        assert_eq!(res.records[0].p_max, res.records[2].p_max);
        assert_eq!(empirical_delta_epsilon(&res).unwrap(), 0.0);
    }

    #[test]
    fn fingerprint_tracks_physics() {
        let a = small_job(0.1, 3);
        let mut b = a;
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.options.t_star = 9.0;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
