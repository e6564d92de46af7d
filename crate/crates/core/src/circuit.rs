//! Single-fluxonium eigenproblem.
//!
//! The circuit Hamiltonian
//!
//! ```text
//! H = 4 E_C n^2 + (E_L / 2) theta^2 - E_J cos(theta - phi)
//! ```
//!
//! is represented in the eigenbasis of the harmonic part `4 E_C n^2 + (E_L/2) theta^2`,
//! where `theta = theta_zpf (a + a^dagger)` with `theta_zpf = (2 E_C / E_L)^(1/4)`.
//! `cos(theta)` and `sin(theta)` are evaluated exactly in the truncated basis by
//! diagonalizing the tridiagonal `theta` matrix, so every operator is real symmetric.
//!
//! All energies are linear frequencies `E/h` in GHz.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Circuit energies (GHz) and external flux offset (radians) of one fluxonium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxoniumParams {
    pub e_c: f64,
    pub e_l: f64,
    pub e_j: f64,
    pub phi: f64,
}

impl FluxoniumParams {
    pub const fn new(e_c: f64, e_l: f64, e_j: f64, phi: f64) -> Self {
        Self { e_c, e_l, e_j, phi }
    }

    /// The high-frequency fluxonium used throughout the chain studies, biased at
    /// the half-flux sweet spot: `E_C = 4.0`, `E_L = 1.45`, `E_J = 9.0` GHz.
    ///
    /// This assignment gives a 0-1 splitting of 2.00 GHz, a 1-2 splitting of
    /// 10.17 GHz, `theta_ge = 2.365` and `eta = 0.310`.
    pub const fn reference() -> Self {
        Self::new(4.0, 1.45, 9.0, PI)
    }

    pub fn with_e_j(self, e_j: f64) -> Self {
        Self { e_j, ..self }
    }

    pub fn with_phi(self, phi: f64) -> Self {
        Self { phi, ..self }
    }

    /// Same circuit biased at `pi + delta_phi`.
    pub fn detuned(self, delta_phi: f64) -> Self {
        self.with_phi(PI + delta_phi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e_c > 0.0 && self.e_c.is_finite()) {
            return Err(Error::param(format!("E_C must be positive, got {}", self.e_c)));
        }
        if !(self.e_l > 0.0 && self.e_l.is_finite()) {
            return Err(Error::param(format!("E_L must be positive, got {}", self.e_l)));
        }
        if !(self.e_j >= 0.0 && self.e_j.is_finite()) {
            return Err(Error::param(format!("E_J must be non-negative, got {}", self.e_j)));
        }
        if !self.phi.is_finite() {
            return Err(Error::param("external flux must be finite"));
        }
        Ok(())
    }

    /// Zero-point phase fluctuation `(2 E_C / E_L)^(1/4)`.
    pub fn theta_zpf(&self) -> f64 {
        (2.0 * self.e_c / self.e_l).powf(0.25)
    }

    /// Level spacing of the harmonic part, `sqrt(8 E_C E_L)`.
    pub fn plasma_frequency(&self) -> f64 {
        (8.0 * self.e_c * self.e_l).sqrt()
    }
}

/// Phase-operator matrices in a truncated oscillator basis.
struct OscillatorOps {
    theta: DMatrix<f64>,
    cos: DMatrix<f64>,
    sin: DMatrix<f64>,
}

impl OscillatorOps {
    fn new(theta_zpf: f64, n: usize) -> Self {
        let mut theta = DMatrix::zeros(n, n);
        for k in 1..n {
            let v = theta_zpf * (k as f64).sqrt();
            theta[(k - 1, k)] = v;
            theta[(k, k - 1)] = v;
        }
        let eig = SymmetricEigen::new(theta.clone());
        let u = &eig.eigenvectors;
        let apply = |f: fn(f64) -> f64| {
            let mut scaled = u.clone();
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                col *= f(eig.eigenvalues[j]);
            }
            let m = &scaled * u.transpose();
            // symmetrize away rounding
            (&m + m.transpose()) * 0.5
        };
        let cos = apply(f64::cos);
        let sin = apply(f64::sin);
        Self { theta, cos, sin }
    }
}

thread_local! {
    static OPS_CACHE: RefCell<HashMap<(u64, usize), Rc<OscillatorOps>>> = RefCell::new(HashMap::new());
}

// The operators depend only on theta_zpf and the basis size, so disorder in E_J
// or flux reuses them.
fn oscillator_ops(theta_zpf: f64, n: usize) -> Rc<OscillatorOps> {
    OPS_CACHE.with(|cache| {
        cache
            .borrow_mut()
            .entry((theta_zpf.to_bits(), n))
            .or_insert_with(|| Rc::new(OscillatorOps::new(theta_zpf, n)))
            .clone()
    })
}

fn assemble(params: &FluxoniumParams, ops: &OscillatorOps) -> DMatrix<f64> {
    let n = ops.theta.nrows();
    let omega = params.plasma_frequency();
    let (s, c) = params.phi.sin_cos();
    // cos(theta - phi) = cos(phi) cos(theta) + sin(phi) sin(theta)
    let mut h = &ops.cos * (-params.e_j * c) + &ops.sin * (-params.e_j * s);
    for k in 0..n {
        h[(k, k)] += omega * (k as f64 + 0.5);
    }
    h
}

/// Circuit Hamiltonian in the oscillator basis of size `basis_size` (GHz).
pub fn build_flux_hamiltonian(params: &FluxoniumParams, basis_size: usize) -> Result<DMatrix<f64>> {
    params.validate()?;
    if basis_size < 10 {
        return Err(Error::param(format!("basis size must be at least 10, got {basis_size}")));
    }
    let ops = oscillator_ops(params.theta_zpf(), basis_size);
    Ok(assemble(params, &ops))
}

/// Lowest levels of one circuit together with phase-operator matrix elements
/// between them. Matrix elements use real eigenvectors with the gauge
/// `theta_elems[(0, 1)] >= 0`.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub energies: Vec<f64>,
    pub theta_elems: DMatrix<f64>,
    pub cos_elems: DMatrix<f64>,
    pub sin_elems: DMatrix<f64>,
    pub basis_size: usize,
    pub converged: bool,
    /// Largest change of the retained energies at the last doubling (GHz).
    pub residual: f64,
}

impl SpectralData {
    pub fn k_levels(&self) -> usize {
        self.energies.len()
    }

    /// `E_{j} - E_{i}`.
    pub fn gap(&self, i: usize, j: usize) -> f64 {
        self.energies[j] - self.energies[i]
    }

    /// `|<e|cos theta|e> - <g|cos theta|g>|`, the first-order sensitivity of the
    /// qubit splitting to `E_J` at the sweet spot.
    pub fn eta(&self) -> f64 {
        (self.cos_elems[(1, 1)] - self.cos_elems[(0, 0)]).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub k_levels: usize,
    /// Convergence threshold on the retained energies between successive basis sizes (GHz).
    pub tol: f64,
    pub start_basis: usize,
    pub max_basis: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            k_levels: 3,
            tol: 1e-9,
            start_basis: 60,
            max_basis: 480,
        }
    }
}

struct Eigenpairs {
    energies: Vec<f64>,
    vectors: DMatrix<f64>,
}

fn lowest_eigenpairs(h: DMatrix<f64>, k: usize) -> Eigenpairs {
    let n = h.nrows();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, k, |r, c| eig.eigenvectors[(r, order[c])]);
    Eigenpairs { energies, vectors }
}

fn fix_sign_by_largest(v: &mut nalgebra::DVectorViewMut<'_, f64>) {
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v.neg_mut();
    }
}

fn gauge_fix(vectors: &mut DMatrix<f64>, theta: &DMatrix<f64>) {
    let k = vectors.ncols();
    {
        let mut v0 = vectors.column_mut(0);
        fix_sign_by_largest(&mut v0);
    }
    let theta_v0 = theta * vectors.column(0);
    for j in 1..k {
        let overlap = theta_v0.dot(&vectors.column(j));
        let mut vj = vectors.column_mut(j);
        if overlap.abs() > 1e-12 {
            if overlap < 0.0 {
                vj.neg_mut();
            }
        } else {
            fix_sign_by_largest(&mut vj);
        }
    }
}

fn project(op: &DMatrix<f64>, vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let m = vectors.transpose() * op * vectors;
    (&m + m.transpose()) * 0.5
}

fn solve_at(params: &FluxoniumParams, n: usize, k: usize) -> (Vec<f64>, DMatrix<f64>, Rc<OscillatorOps>) {
    let ops = oscillator_ops(params.theta_zpf(), n);
    let pairs = lowest_eigenpairs(assemble(params, &ops), k);
    (pairs.energies, pairs.vectors, ops)
}

/// Solve with the default basis schedule (60 doubling to 480).
pub fn solve_fluxonium(params: &FluxoniumParams, k_levels: usize, tol: f64) -> Result<SpectralData> {
    solve_with(
        params,
        &SolverOptions {
            k_levels,
            tol,
            ..SolverOptions::default()
        },
    )
}

/// Diagonalize at doubling basis sizes until the lowest `k_levels` energies move
/// by less than `tol`, then return data from the larger of the two bases.
pub fn solve_with(params: &FluxoniumParams, opts: &SolverOptions) -> Result<SpectralData> {
    params.validate()?;
    if opts.k_levels < 2 {
        return Err(Error::param("need at least two levels"));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::param("tolerance must be positive"));
    }
    if opts.start_basis < 10 || opts.start_basis < opts.k_levels || opts.max_basis < opts.start_basis {
        return Err(Error::param("inconsistent basis schedule"));
    }

    let k = opts.k_levels;
    let mut n = opts.start_basis;
    let (mut prev, _, _) = solve_at(params, n, k);
    let mut residual = f64::INFINITY;
    while n * 2 <= opts.max_basis {
        n *= 2;
        let (energies, mut vectors, ops) = solve_at(params, n, k);
        residual = energies
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual < opts.tol {
            gauge_fix(&mut vectors, &ops.theta);
            return Ok(SpectralData {
                energies,
                theta_elems: project(&ops.theta, &vectors),
                cos_elems: project(&ops.cos, &vectors),
                sin_elems: project(&ops.sin, &vectors),
                basis_size: n,
                converged: true,
                residual,
            });
        }
        prev = energies;
    }
    Err(Error::Convergence {
        basis_size: n,
        residual,
    })
}

/// Two-level data of one site: splitting and the 2x2 phase matrix in the
/// `{|g>, |e>}` basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitSite {
    pub epsilon: f64,
    pub theta: [[f64; 2]; 2],
    pub eta: f64,
    pub phi: f64,
}

impl QubitSite {
    /// A site with splitting `epsilon` and phase matrix `a sigma_x`.
    pub fn sweet_spot(epsilon: f64, a: f64) -> Self {
        Self {
            epsilon,
            theta: [[0.0, a], [a, 0.0]],
            eta: 0.0,
            phi: PI,
        }
    }

    pub fn theta_ge(&self) -> f64 {
        self.theta[0][1]
    }
}

pub fn project_to_qubit(spec: &SpectralData, params: &FluxoniumParams) -> Result<QubitSite> {
    if !spec.converged {
        return Err(Error::Convergence {
            basis_size: spec.basis_size,
            residual: spec.residual,
        });
    }
    if spec.k_levels() < 2 {
        return Err(Error::param("need at least two levels to project"));
    }
    let t = &spec.theta_elems;
    let off = 0.5 * (t[(0, 1)] + t[(1, 0)]);
    Ok(QubitSite {
        epsilon: spec.gap(0, 1),
        theta: [[t[(0, 0)], off], [off, t[(1, 1)]]],
        eta: spec.eta(),
        phi: params.phi,
    })
}

/// Solve one circuit with default options and project it onto its lowest two levels.
pub fn solve_site(params: &FluxoniumParams) -> Result<QubitSite> {
    let opts = SolverOptions::default();
    let spec = solve_with(params, &opts)?;
    project_to_qubit(&spec, params)
}

pub fn susceptibility_eta(params: &FluxoniumParams) -> Result<f64> {
    let opts = SolverOptions::default();
    Ok(solve_with(params, &opts)?.eta())
}

/// Longitudinal and transverse field corrections `(dez, dex)` in GHz for a
/// small flux detuning, from sweet-spot matrix elements.
///
/// `dez = -(E_J dphi^2 / 2)(<e|cos|e> - <g|cos|g>)`, `dex = 2 E_J dphi <g|sin|e>`.
pub fn perturbative_fields(params_sweet: &FluxoniumParams, delta_phi: f64) -> Result<(f64, f64)> {
    let spec = solve_with(params_sweet, &SolverOptions::default())?;
    Ok(fields_from_spectrum(&spec, params_sweet.e_j, delta_phi))
}

pub(crate) fn fields_from_spectrum(spec: &SpectralData, e_j: f64, delta_phi: f64) -> (f64, f64) {
    let c = &spec.cos_elems;
    let dez = -0.5 * e_j * delta_phi * delta_phi * (c[(1, 1)] - c[(0, 0)]);
    let dex = 2.0 * e_j * delta_phi * spec.sin_elems[(0, 1)];
    (dez, dex)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub theta_gg: f64,
    pub theta_ge: f64,
    pub theta_ee: f64,
}

#[derive(Debug)]
pub struct SweepRow {
    pub delta_phi: f64,
    pub outcome: Result<SweepPoint>,
}

/// Splitting and phase-matrix elements at `phi = pi + delta_phi` for each grid point.
pub fn flux_sweep(params: &FluxoniumParams, delta_phi_grid: &[f64]) -> Vec<SweepRow> {
    delta_phi_grid
        .iter()
        .map(|&delta_phi| {
            let outcome = if delta_phi.is_finite() {
                solve_site(&params.detuned(delta_phi)).map(|q| SweepPoint {
                    epsilon: q.epsilon,
                    theta_gg: q.theta[0][0],
                    theta_ge: q.theta[0][1],
                    theta_ee: q.theta[1][1],
                })
            } else {
                Err(Error::param("non-finite flux detuning"))
            };
            SweepRow { delta_phi, outcome }
        })
        .collect()
}

const PLANCK: f64 = 6.626_070_15e-34;
const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// `(Phi_0 / 2 pi)^2` in J*H.
fn reduced_flux_quantum_sq() -> f64 {
    let phi0 = PLANCK / (2.0 * ELEMENTARY_CHARGE);
    (phi0 / (2.0 * PI)).powi(2)
}

/// Inductive energy `E_L / h` in GHz of an inductance in henries.
pub fn inductive_energy(inductance: f64) -> f64 {
    reduced_flux_quantum_sq() / inductance / PLANCK * 1e-9
}

/// Inductance (henries) whose inductive energy is `e_l` GHz.
pub fn inductance_for_energy(e_l: f64) -> f64 {
    reduced_flux_quantum_sq() / (e_l * 1e9 * PLANCK)
}

/// Bond coupling `J = (hbar/2e)^2 M / (L_a L_b)` in GHz; inductances in henries.
pub fn coupling_from_inductances(m: f64, l_a: f64, l_b: f64) -> Result<f64> {
    if !(l_a > 0.0 && l_b > 0.0) {
        return Err(Error::param("self inductances must be positive"));
    }
    if !m.is_finite() || m.abs() > (l_a * l_b).sqrt() {
        return Err(Error::param(format!(
            "mutual inductance {m:e} H exceeds sqrt(L_a L_b)"
        )));
    }
    Ok(reduced_flux_quantum_sq() * m / (l_a * l_b) / PLANCK * 1e-9)
}
