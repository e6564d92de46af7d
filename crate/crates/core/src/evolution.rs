//! Schrodinger evolution `psi(t) = exp(-2 pi i H t) psi(0)` with `H` in GHz and
//! `t` in ns.
//!
//! The propagator is a Lanczos (Krylov) approximation. One Krylov basis is
//! built per step and reused to evaluate every recording time inside that
//! step, so the recording grid does not limit the step size. The step length is the largest one whose
//! a-posteriori error estimate `beta_m |e_m^T exp(-2 pi i tau T_m) e_1|` stays
//! below the per-step tolerance.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chain::{HilbertSpace, ManyBodyOperator, StateVector};
use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveOptions {
    /// Per-step error tolerance on the state vector.
    pub tol: f64,
    /// Largest Krylov subspace per step.
    pub krylov_dim: usize,
    /// Maximum allowed `| ||psi|| - 1 |` before the run is declared failed.
    pub norm_tol: f64,
    /// Maximum allowed relative drift of `<H>`.
    pub energy_rel_tol: f64,
    /// Evaluate `<H>` at every n-th recorded sample (0 disables).
    pub energy_stride: usize,
    /// Reorthogonalize every Lanczos vector against the whole basis instead of
    /// only its two predecessors.
    pub full_reorth: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            krylov_dim: 40,
            norm_tol: 1e-8,
            energy_rel_tol: 1e-7,
            energy_stride: 1,
            full_reorth: false,
        }
    }
}

/// Highest excitation probability of one site and the first time it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub p_max: f64,
    pub t_peak: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionRecord {
    pub times: Vec<f64>,
    /// `probs[l][k]` is the excitation probability of site `l` at `times[k]`.
    pub probs: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    /// `(time, <H>)` pairs, sampled every `energy_stride` records.
    pub energies: Vec<(f64, f64)>,
    /// Peaks over the whole record.
    pub peak: Vec<Peak>,
    pub final_state: StateVector,
    pub matvecs: usize,
}

impl EvolutionRecord {
    pub fn sites(&self) -> usize {
        self.probs.len()
    }

    pub fn max_norm_error(&self) -> f64 {
        self.norms.iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_energy_drift(&self) -> f64 {
        match self.energies.first() {
            None => 0.0,
            Some(&(_, e0)) => self
                .energies
                .iter()
                .map(|&(_, e)| (e - e0).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Largest `|<H>(t) - <H>(0)| / |<H>(0)|`.
    pub fn max_relative_energy_drift(&self) -> f64 {
        match self.energies.first() {
            None => 0.0,
            Some(&(_, e0)) => self.max_energy_drift() / e0.abs(),
        }
    }
}

/// `[0, dt, 2 dt, ..., t_max]`.
pub fn uniform_grid(dt: f64, t_max: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(Error::param("grid needs dt > 0 and finite t_max >= 0"));
    }
    let n = (t_max / dt).round() as usize;
    Ok((0..=n).map(|k| k as f64 * dt).collect())
}

/// Per-site excitation probabilities of `psi` added into `out`.
pub fn site_probabilities(h: &ManyBodyOperator, psi: &[Complex64], out: &mut [f64]) {
    out.iter_mut().for_each(|p| *p = 0.0);
    let space = h.space();
    for (i, a) in psi.iter().enumerate() {
        let w = a.norm_sqr();
        if w == 0.0 {
            continue;
        }
        let mut s = space.state(i);
        while s != 0 {
            out[s.trailing_zeros() as usize] += w;
            s &= s - 1;
        }
    }
}

fn norm(v: &[Complex64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = v.chunks_exact(4);
    let rest = chunks.remainder();
    for c in chunks {
        for k in 0..4 {
            acc[k] += c[k].re * c[k].re + c[k].im * c[k].im;
        }
    }
    let tail: f64 = rest.iter().map(|a| a.norm_sqr()).sum();
    (acc.iter().sum::<f64>() + tail).sqrt()
}

/// `<a|b>`, with independent partial sums so the loop vectorizes.
fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut re = [0.0f64; 4];
    let mut im = [0.0f64; 4];
    let n = a.len() / 4 * 4;
    for (x, y) in a[..n].chunks_exact(4).zip(b[..n].chunks_exact(4)) {
        for k in 0..4 {
            re[k] += x[k].re * y[k].re + x[k].im * y[k].im;
            im[k] += x[k].re * y[k].im - x[k].im * y[k].re;
        }
    }
    let mut out = Complex64::new(re.iter().sum(), im.iter().sum());
    for (x, y) in a[n..].iter().zip(&b[n..]) {
        out += x.conj() * y;
    }
    out
}

/// `y += c x`.
fn axpy(c: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        yi.re += c.re * xi.re - c.im * xi.im;
        yi.im += c.re * xi.im + c.im * xi.re;
    }
}

/// Remove the components of `w` along an orthonormal `basis`; a second pass is
/// made when the first one cancels most of `w`.
fn orthogonalize(basis: &[Vec<Complex64>], w: &mut [Complex64]) -> f64 {
    let mut before = norm(w);
    for _ in 0..2 {
        for v in basis {
            let c = dot(v, w);
            axpy(-c, v, w);
        }
        let after = norm(w);
        if after > 0.5 * before {
            return after;
        }
        before = after;
    }
    before
}

/// Krylov basis and the spectral decomposition of its tridiagonal projection.
struct KrylovStep {
    basis: Vec<Vec<Complex64>>,
    ritz_values: Vec<f64>,
    /// `first[j] = Q[0, j]` for the eigenvector matrix `Q` stored in `rows`.
    first: Vec<f64>,
    rows: DMatrix<f64>,
    /// Coupling to the first discarded Lanczos vector; zero on breakdown.
    beta_next: f64,
}

impl KrylovStep {
    fn build(h: &ManyBodyOperator, psi: &[Complex64], m_max: usize, full_reorth: bool, matvecs: &mut usize) -> Self {
        let dim = psi.len();
        let m_max = m_max.min(dim).max(1);
        let beta0 = norm(psi);
        let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m_max);
        basis.push(psi.iter().map(|a| a / beta0).collect());
        let mut alpha = Vec::with_capacity(m_max);
        let mut beta = Vec::with_capacity(m_max);
        let mut w = vec![ZERO; dim];
        let mut scale: f64 = 0.0;

        let beta_next = loop {
            let j = basis.len() - 1;
            h.apply(&basis[j], &mut w);
            *matvecs += 1;
            let a = dot(&basis[j], &w).re;
            alpha.push(a);
            let b = if full_reorth {
                orthogonalize(&basis, &mut w)
            } else {
                let lo = j.saturating_sub(1);
                orthogonalize(&basis[lo..], &mut w)
            };
            scale = scale.max(a.abs()).max(b);
            if b <= 1e-13 * scale.max(1e-300) {
                break 0.0;
            }
            if basis.len() == m_max {
                break b;
            }
            beta.push(b);
            let inv = 1.0 / b;
            basis.push(w.iter().map(|x| x * inv).collect());
        };

        let m = alpha.len();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let first = (0..m).map(|j| eig.eigenvectors[(0, j)]).collect();
        KrylovStep {
            basis,
            ritz_values: eig.eigenvalues.iter().copied().collect(),
            first,
            rows: eig.eigenvectors,
            beta_next,
        }
    }

    fn dim(&self) -> usize {
        self.ritz_values.len()
    }

    /// Coefficients of `exp(-2 pi i tau T) e_1` in the Krylov basis.
    fn coefficients(&self, tau: f64) -> Vec<Complex64> {
        let m = self.dim();
        let phases: Vec<Complex64> = (0..m)
            .map(|j| Complex64::from_polar(self.first[j], -TWO_PI * self.ritz_values[j] * tau))
            .collect();
        (0..m)
            .map(|i| (0..m).fold(ZERO, |acc, j| acc + phases[j] * self.rows[(i, j)]))
            .collect()
    }

    fn error_estimate(&self, tau: f64) -> f64 {
        if self.beta_next == 0.0 {
            return 0.0;
        }
        let m = self.dim();
        let last = (0..m).fold(ZERO, |acc, j| {
            acc + Complex64::from_polar(self.first[j] * self.rows[(m - 1, j)], -TWO_PI * self.ritz_values[j] * tau)
        });
        self.beta_next * last.norm()
    }

    /// Largest `tau <= tau_max` with estimate below `tol`.
    fn step_size(&self, tol: f64, tau_max: f64, guess: f64) -> f64 {
        if self.error_estimate(tau_max) <= tol {
            return tau_max;
        }
        let mut hi = tau_max;
        let mut tau = guess.min(tau_max);
        while self.error_estimate(tau) > tol {
            hi = tau;
            tau *= 0.5;
            if tau < 1e-300 {
                return 0.0;
            }
        }
        let mut lo = tau;
        while hi - lo > 1e-3 * hi {
            let mid = 0.5 * (lo + hi);
            if self.error_estimate(mid) <= tol {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Evaluate `sum_j coeffs[q][j] basis[j]` for every output `q` in row
    /// blocks, so each basis vector is read once per step. Returns per-output
    /// site probabilities and squared norms; outputs listed in `keep` are also
    /// written in full to the matching entry of `kept`.
    fn evaluate(
        &self,
        space: &HilbertSpace,
        coeffs: &[Vec<Complex64>],
        keep: &[usize],
        kept: &mut [Vec<Complex64>],
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let dim = self.basis[0].len();
        let mut probs = vec![vec![0.0; space.sites()]; coeffs.len()];
        let mut norm2 = vec![0.0; coeffs.len()];
        let mut buf = [ZERO; CHUNK];
        for r0 in (0..dim).step_by(CHUNK) {
            let r1 = (r0 + CHUNK).min(dim);
            let block = &mut buf[..r1 - r0];
            for (q, cq) in coeffs.iter().enumerate() {
                block.fill(ZERO);
                for (v, &c) in self.basis.iter().zip(cq) {
                    axpy(c, &v[r0..r1], block);
                }
                let p = &mut probs[q];
                let mut acc = 0.0;
                for (i, a) in block.iter().enumerate() {
                    let w = a.norm_sqr();
                    acc += w;
                    let mut s = space.state(r0 + i);
                    while s != 0 {
                        p[s.trailing_zeros() as usize] += w;
                        s &= s - 1;
                    }
                }
                norm2[q] += acc;
                if let Some(pos) = keep.iter().position(|&x| x == q) {
                    kept[pos][r0..r1].copy_from_slice(block);
                }
            }
        }
        (probs, norm2)
    }
}

const CHUNK: usize = 256;

/// Integrate from `psi0` over `t_grid` (ascending, starting at 0) and record
/// site probabilities, norms and energies at every grid time.
pub fn evolve(h: &ManyBodyOperator, psi0: &StateVector, t_grid: &[f64], opts: &EvolveOptions) -> Result<EvolutionRecord> {
    if psi0.len() != h.dim() {
        return Err(Error::param("state and operator dimensions differ"));
    }
    if t_grid.is_empty() || t_grid[0] != 0.0 {
        return Err(Error::param("time grid must start at 0"));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::param("time grid must be strictly ascending"));
    }
    if !(opts.tol > 0.0) || opts.krylov_dim < 2 {
        return Err(Error::param("need tol > 0 and krylov_dim >= 2"));
    }
    let n0 = psi0.norm();
    if (n0 - 1.0).abs() > 1e-10 {
        return Err(Error::param(format!("initial state not normalized (norm {n0})")));
    }

    let sites = h.sites();
    let steps = t_grid.len();
    let space = h.space();
    let mut probs = vec![Vec::with_capacity(steps); sites];
    let mut norms = Vec::with_capacity(steps);
    let mut energies = Vec::new();
    let mut matvecs = 0usize;
    let h_scale = (0..h.dim()).map(|r| h.get(r, r).abs()).fold(0.0, f64::max).max(1e-300);
    let wants_energy = |k: usize| opts.energy_stride > 0 && (k % opts.energy_stride == 0 || k + 1 == steps);

    let mut e0 = None;
    let mut check_energy = |t: f64, v: &[Complex64], matvecs: &mut usize| -> Result<()> {
        let e = h.expectation(v);
        *matvecs += 1;
        let reference = *e0.get_or_insert(e);
        if (e - reference).abs() > opts.energy_rel_tol * reference.abs().max(h_scale) {
            return Err(Error::Integration {
                time_ns: t,
                reason: format!("energy drifted from {reference} to {e} GHz"),
            });
        }
        energies.push((t, e));
        Ok(())
    };
    let mut push_sample = |t: f64, p: &[f64], n2: f64| -> Result<()> {
        for (l, v) in p.iter().enumerate() {
            probs[l].push(*v);
        }
        let nrm = n2.sqrt();
        norms.push(nrm);
        if (nrm - 1.0).abs() > opts.norm_tol {
            return Err(Error::Integration {
                time_ns: t,
                reason: format!("norm drifted to {nrm:.12}"),
            });
        }
        Ok(())
    };

    let mut psi = psi0.amplitudes.clone();
    let mut p0 = vec![0.0; sites];
    site_probabilities(h, &psi, &mut p0);
    push_sample(0.0, &p0, norm(&psi).powi(2))?;
    if wants_energy(0) {
        check_energy(0.0, &psi, &mut matvecs)?;
    }

    let mut t = 0.0;
    let mut next = 1;
    let mut guess = t_grid.get(1).copied().unwrap_or(1.0);
    while next < steps {
        let krylov = KrylovStep::build(h, &psi, opts.krylov_dim, opts.full_reorth, &mut matvecs);
        let remaining = t_grid[steps - 1] - t;
        let mut tau = krylov.step_size(opts.tol, remaining, guess);
        if tau <= 1e-12 * remaining.max(1.0) {
            return Err(Error::Integration {
                time_ns: t,
                reason: "step size underflow".into(),
            });
        }
        let first = next;
        while next < steps && t_grid[next] - t <= tau * (1.0 + 1e-9) {
            next += 1;
        }
        let mut offsets: Vec<f64> = t_grid[first..next].iter().map(|&g| g - t).collect();
        let recorded = offsets.len();
        // the state carried into the next step: the last recorded sample when
        // the step ends on it, otherwise an extra unrecorded evaluation at tau
        let advance = if next == steps {
            recorded - 1
        } else if recorded > 0 && t + tau - t_grid[next - 1] < 1e-9 * tau {
            tau = t_grid[next - 1] - t;
            recorded - 1
        } else {
            offsets.push(tau);
            offsets.len() - 1
        };
        let mut keep = vec![advance];
        keep.extend((0..recorded).filter(|&q| q != advance && wants_energy(first + q)));
        let beta0 = norm(&psi);
        let coeffs: Vec<Vec<Complex64>> = offsets
            .iter()
            .map(|&s| krylov.coefficients(s).into_iter().map(|c| c * beta0).collect())
            .collect();
        let mut kept = vec![vec![ZERO; psi.len()]; keep.len()];
        let (p, n2) = krylov.evaluate(space, &coeffs, &keep, &mut kept);
        for q in 0..recorded {
            let tq = t_grid[first + q];
            push_sample(tq, &p[q], n2[q])?;
            if wants_energy(first + q) {
                let pos = keep.iter().position(|&x| x == q).expect("energy samples are kept");
                check_energy(tq, &kept[pos], &mut matvecs)?;
            }
        }
        psi = kept.swap_remove(0);
        t += tau;
        guess = tau * 1.5;
    }

    let peak = peaks_in_window(t_grid, &probs, f64::INFINITY).expect("grid is non-empty");
    Ok(EvolutionRecord {
        times: t_grid.to_vec(),
        probs,
        norms,
        energies,
        peak,
        final_state: StateVector { amplitudes: psi },
        matvecs,
    })
}

fn peaks_in_window(times: &[f64], probs: &[Vec<f64>], t_star: f64) -> Option<Vec<Peak>> {
    let window = times.iter().take_while(|&&t| t < t_star).count();
    if window == 0 {
        return None;
    }
    Some(
        probs
            .iter()
            .map(|p| {
                let mut best = Peak {
                    p_max: p[0],
                    t_peak: times[0],
                };
                for k in 1..window {
                    if p[k] > best.p_max {
                        best = Peak {
                            p_max: p[k],
                            t_peak: times[k],
                        };
                    }
                }
                best
            })
            .collect(),
    )
}

/// `P_l = max_{t < t_star} p_l(t)` and the earliest time it is reached.
pub fn peak_stats(record: &EvolutionRecord, t_star: f64) -> Result<Vec<Peak>> {
    if let Some(&last) = record.times.last() {
        if t_star > last + 1e-9 * last.abs().max(1.0) {
            return Err(Error::param(format!("t* = {t_star} ns beyond the recorded {last} ns")));
        }
    }
    peaks_in_window(&record.times, &record.probs, t_star)
        .ok_or_else(|| Error::param("no samples before t*"))
}

/// Largest chain accepted by the dense oracle.
pub const DENSE_MAX_SITES: usize = 8;

/// Exact propagator from a full eigendecomposition of `H`.
pub struct DenseEvolver {
    energies: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl DenseEvolver {
    pub fn new(h: &ManyBodyOperator) -> Result<Self> {
        if h.sites() > DENSE_MAX_SITES {
            return Err(Error::Capacity(format!(
                "dense oracle limited to {DENSE_MAX_SITES} sites, got {}",
                h.sites()
            )));
        }
        let eig = SymmetricEigen::new(h.to_dense());
        Ok(Self {
            energies: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.energies
    }

    pub fn evolve(&self, psi0: &StateVector, t: f64) -> StateVector {
        let n = self.energies.len();
        let v = &self.vectors;
        let proj: Vec<Complex64> = (0..n)
            .map(|j| {
                let c = (0..n).fold(ZERO, |acc, i| acc + psi0.amplitudes[i] * v[(i, j)]);
                c * Complex64::from_polar(1.0, -TWO_PI * self.energies[j] * t)
            })
            .collect();
        let amplitudes = (0..n)
            .map(|i| (0..n).fold(ZERO, |acc, j| acc + proj[j] * v[(i, j)]))
            .collect();
        StateVector { amplitudes }
    }
}

/// `psi(t)` by dense diagonalization; chains up to [`DENSE_MAX_SITES`].
pub fn dense_oracle_evolve(h: &ManyBodyOperator, psi0: &StateVector, t: f64) -> Result<StateVector> {
    if psi0.len() != h.dim() {
        return Err(Error::param("state and operator dimensions differ"));
    }
    Ok(DenseEvolver::new(h)?.evolve(psi0, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{assemble_hamiltonian, basis_state, ChainSpec};
    use crate::circuit::QubitSite;

    fn two_site() -> ManyBodyOperator {
        let chain = ChainSpec::uniform(QubitSite::sweet_spot(2.0, 2.36), 0.02, 2).unwrap();
        assemble_hamiltonian(&chain).unwrap()
    }

    #[test]
    fn excited_single_site_stays_excited() {
        let chain = ChainSpec::uniform(QubitSite::sweet_spot(2.0, 2.36), 0.02, 1).unwrap();
        let h = assemble_hamiltonian(&chain).unwrap();
        let grid = uniform_grid(0.05, 5.0).unwrap();
        let rec = evolve(&h, &basis_state(1, &[0]).unwrap(), &grid, &EvolveOptions::default()).unwrap();
        assert!(rec.probs[0].iter().all(|&p| (p - 1.0).abs() < 1e-12));
        assert!(rec.max_norm_error() < 1e-12);
    }

    #[test]
    fn matches_dense_on_two_sites() {
        let h = two_site();
        let psi0 = basis_state(2, &[0]).unwrap();
        let grid = uniform_grid(0.05, 10.0).unwrap();
        let rec = evolve(&h, &psi0, &grid, &EvolveOptions::default()).unwrap();
        let dense = DenseEvolver::new(&h).unwrap();
        let mut p = [0.0; 2];
        for (k, &t) in grid.iter().enumerate() {
            let psi = dense.evolve(&psi0, t);
            site_probabilities(&h, &psi.amplitudes, &mut p);
            assert!((p[0] - rec.probs[0][k]).abs() < 1e-10);
            assert!((p[1] - rec.probs[1][k]).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_oracle_basics() {
        let h = two_site();
        let psi0 = basis_state(2, &[1]).unwrap();
        let same = dense_oracle_evolve(&h, &psi0, 0.0).unwrap();
        for (a, b) in same.amplitudes.iter().zip(&psi0.amplitudes) {
            assert!((a - b).norm() < 1e-14);
        }
        let later = dense_oracle_evolve(&h, &psi0, 3.7).unwrap();
        assert!((later.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dense_oracle_capacity() {
        let chain = ChainSpec::uniform(QubitSite::sweet_spot(2.0, 2.36), 0.02, 9).unwrap();
        let h = assemble_hamiltonian(&chain).unwrap();
        assert!(matches!(DenseEvolver::new(&h), Err(Error::Capacity(_))));
    }

    #[test]
    fn peak_stats_window_and_ties() {
        let rec = EvolutionRecord {
            times: vec![0.0, 1.0, 2.0, 3.0],
            probs: vec![vec![0.5; 4], vec![0.1, 0.4, 0.2, 0.9]],
            norms: vec![1.0; 4],
            energies: vec![],
            peak: vec![],
            final_state: StateVector { amplitudes: vec![] },
            matvecs: 0,
        };
        let p = peak_stats(&rec, 3.0).unwrap();
        assert_eq!(p[0], Peak { p_max: 0.5, t_peak: 0.0 });
        assert_eq!(p[1], Peak { p_max: 0.4, t_peak: 1.0 });
        assert!(peak_stats(&rec, 0.0).is_err());
        assert!(peak_stats(&rec, 5.0).is_err());
    }

    #[test]
    fn rejects_bad_grids() {
        let h = two_site();
        let psi0 = basis_state(2, &[0]).unwrap();
        let o = EvolveOptions::default();
        assert!(evolve(&h, &psi0, &[0.1, 0.2], &o).is_err());
        assert!(evolve(&h, &psi0, &[0.0, 0.2, 0.2], &o).is_err());
        assert!(evolve(&h, &psi0, &[], &o).is_err());
        assert!(evolve(&h, &basis_state(1, &[0]).unwrap(), &[0.0], &o).is_err());
    }

    #[test]
    fn grid_construction() {
        let g = uniform_grid(0.05, 30.0).unwrap();
        assert_eq!(g.len(), 601);
        assert_eq!(g[600], 30.0);
        assert!(uniform_grid(0.0, 1.0).is_err());
    }
}
