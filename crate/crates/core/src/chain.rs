//! Many-body Hamiltonian of an open chain of two-level fluxonium sites.
//!
//! Basis convention: bit `l` of a basis index is 1 when site `l` is excited;
//! site 0 is the least-significant bit. Each site uses the ordering `{|g>, |e>}`
//! with `sigma_z = diag(1, -1)`, so the single-site term `-(eps/2) sigma_z` puts
//! the ground state at `-eps/2`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuit::{solve_site, FluxoniumParams, QubitSite};
use crate::error::{Error, Result};

/// Largest chain the assembler accepts by default.
pub const DEFAULT_MAX_SITES: usize = 20;

/// Entries smaller than this (GHz) are not stored. Parity makes diagonal phase
/// elements vanish at the sweet spot only up to rounding.
const DROP_TOL: f64 = 1e-13;

type Mat2 = [[f64; 2]; 2];

const SIGMA_X: Mat2 = [[0.0, 1.0], [1.0, 0.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub sites: Vec<QubitSite>,
    /// Bond couplings `J_l` between sites `l` and `l + 1` (GHz).
    pub couplings: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChainSpec {
    pub fn new(sites: Vec<QubitSite>, couplings: Vec<f64>) -> Result<Self> {
        let chain = Self {
            sites,
            couplings,
            label: None,
            seed: None,
        };
        chain.validate()?;
        Ok(chain)
    }

    /// `length` copies of `site` with uniform coupling `j`.
    pub fn uniform(site: QubitSite, j: f64, length: usize) -> Result<Self> {
        Self::new(vec![site; length], vec![j; length.saturating_sub(1)])
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites.is_empty() {
            return Err(Error::param("chain needs at least one site"));
        }
        if self.couplings.len() + 1 != self.sites.len() {
            return Err(Error::param(format!(
                "{} sites need {} couplings, got {}",
                self.sites.len(),
                self.sites.len() - 1,
                self.couplings.len()
            )));
        }
        for (l, s) in self.sites.iter().enumerate() {
            if !(s.epsilon > 0.0) {
                return Err(Error::param(format!("site {l}: splitting must be positive")));
            }
            if s.theta[0][1] != s.theta[1][0] {
                return Err(Error::param(format!("site {l}: phase matrix not symmetric")));
            }
        }
        if self.couplings.iter().any(|j| !j.is_finite()) {
            return Err(Error::param("non-finite coupling"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Solve every site and collect the two-level chain description. Identical
/// circuits are solved once.
pub fn build_chain(params_list: &[FluxoniumParams], couplings: &[f64]) -> Result<ChainSpec> {
    if params_list.is_empty() {
        return Err(Error::param("chain needs at least one site"));
    }
    if couplings.len() + 1 != params_list.len() {
        return Err(Error::param(format!(
            "{} sites need {} couplings, got {}",
            params_list.len(),
            params_list.len() - 1,
            couplings.len()
        )));
    }
    let mut memo: HashMap<[u64; 4], QubitSite> = HashMap::new();
    let mut sites = Vec::with_capacity(params_list.len());
    for (l, p) in params_list.iter().enumerate() {
        let key = [p.e_c.to_bits(), p.e_l.to_bits(), p.e_j.to_bits(), p.phi.to_bits()];
        let site = match memo.get(&key) {
            Some(s) => *s,
            None => {
                let s = solve_site(p).map_err(|e| e.at_site(l))?;
                memo.insert(key, s);
                s
            }
        };
        sites.push(site);
    }
    ChainSpec::new(sites, couplings.to_vec())
}

/// Which computational basis states the many-body operator acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// All `2^L` states.
    Full,
    /// States with at most this many excited sites. The operator is the
    /// projection of the full Hamiltonian onto that subspace.
    MaxExcitations(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertSpace {
    sites: usize,
    truncation: Truncation,
    /// Sorted basis states; `None` for the full space where index == state.
    states: Option<Vec<u32>>,
}

impl HilbertSpace {
    pub fn full(sites: usize) -> Result<Self> {
        Self::new(sites, Truncation::Full, DEFAULT_MAX_SITES)
    }

    pub fn new(sites: usize, truncation: Truncation, max_sites: usize) -> Result<Self> {
        if sites == 0 {
            return Err(Error::param("chain needs at least one site"));
        }
        if sites > max_sites || sites > 31 {
            return Err(Error::Capacity(format!(
                "{sites} sites exceeds the configured maximum of {max_sites}"
            )));
        }
        let states = match truncation {
            Truncation::Full => None,
            Truncation::MaxExcitations(k) if k >= sites => None,
            Truncation::MaxExcitations(k) => Some(
                (0u32..(1u32 << sites))
                    .filter(|s| s.count_ones() as usize <= k)
                    .collect(),
            ),
        };
        Ok(Self {
            sites,
            truncation,
            states,
        })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn is_full(&self) -> bool {
        self.states.is_none()
    }

    pub fn dim(&self) -> usize {
        match &self.states {
            None => 1usize << self.sites,
            Some(s) => s.len(),
        }
    }

    /// Occupation bit pattern of basis vector `index`.
    #[inline]
    pub fn state(&self, index: usize) -> u32 {
        match &self.states {
            None => index as u32,
            Some(s) => s[index],
        }
    }

    /// Basis index of a bit pattern, if it lies in the space.
    #[inline]
    pub fn index_of(&self, state: u32) -> Option<usize> {
        match &self.states {
            None => ((state as usize) < (1usize << self.sites)).then_some(state as usize),
            Some(s) => s.binary_search(&state).ok(),
        }
    }
}

/// Real symmetric sparse operator in compressed-row form.
#[derive(Debug, Clone)]
pub struct ManyBodyOperator {
    space: Arc<HilbertSpace>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl ManyBodyOperator {
    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn sites(&self) -> usize {
        self.space.sites()
    }

    /// Stored entries of one row as `(column, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.vals[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&(c as u32)) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// `y = H x`.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(y.len(), self.dim());
        for (r, out) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut re = 0.0;
            let mut im = 0.0;
            for k in lo..hi {
                let v = self.vals[k];
                let xc = x[self.cols[k] as usize];
                re += v * xc.re;
                im += v * xc.im;
            }
            *out = Complex64::new(re, im);
        }
    }

    /// `<psi|H|psi>` (real because H is symmetric).
    pub fn expectation(&self, psi: &[Complex64]) -> f64 {
        let mut acc = 0.0;
        for (r, a) in psi.iter().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            for (c, v) in self.row(r) {
                re += v * psi[c].re;
                im += v * psi[c].im;
            }
            acc += a.re * re + a.im * im;
        }
        acc
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for r in 0..n {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    /// Largest `|H_rc - H_cr|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim() {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }
}

/// On-site 2x2 terms plus nearest-neighbour products `J_l A_l (x) B_{l+1}`.
struct LocalModel<'a> {
    onsite: Vec<Mat2>,
    bonds: Vec<(f64, &'a Mat2, &'a Mat2)>,
}

fn assemble_local(model: &LocalModel<'_>, space: Arc<HilbertSpace>) -> ManyBodyOperator {
    let dim = space.dim();
    let mut row_ptr = Vec::with_capacity(dim + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut buf: Vec<(u32, f64)> = Vec::with_capacity(8 * model.bonds.len() + 4);
    row_ptr.push(0);

    for r in 0..dim {
        let s = space.state(r);
        buf.clear();
        let mut diag = 0.0;
        for (l, h) in model.onsite.iter().enumerate() {
            let b = ((s >> l) & 1) as usize;
            diag += h[b][b];
            let off = h[b][1 - b];
            if off != 0.0 {
                if let Some(c) = space.index_of(s ^ (1 << l)) {
                    buf.push((c as u32, off));
                }
            }
        }
        for (l, &(j, a, bmat)) in model.bonds.iter().enumerate() {
            let bl = ((s >> l) & 1) as usize;
            let br = ((s >> (l + 1)) & 1) as usize;
            for cl in 0..2 {
                for cr in 0..2 {
                    let v = j * a[bl][cl] * bmat[br][cr];
                    if v == 0.0 {
                        continue;
                    }
                    let t = (s & !(0b11 << l)) | ((cl as u32) << l) | ((cr as u32) << (l + 1));
                    if t == s {
                        diag += v;
                    } else if let Some(c) = space.index_of(t) {
                        buf.push((c as u32, v));
                    }
                }
            }
        }
        buf.push((r as u32, diag));
        buf.sort_unstable_by_key(|e| e.0);
        let mut k = 0;
        while k < buf.len() {
            let c = buf[k].0;
            let mut v = 0.0;
            while k < buf.len() && buf[k].0 == c {
                v += buf[k].1;
                k += 1;
            }
            if c as usize == r || v.abs() >= DROP_TOL {
                cols.push(c);
                vals.push(v);
            }
        }
        row_ptr.push(cols.len());
    }
    ManyBodyOperator {
        space,
        row_ptr,
        cols,
        vals,
    }
}

/// Chain Hamiltonian `-(1/2) sum eps_l sigma^z_l + sum_l J_l theta_l theta_{l+1}`
/// over all `L - 1` bonds of the open chain, on the full `2^L` space.
pub fn assemble_hamiltonian(chain: &ChainSpec) -> Result<ManyBodyOperator> {
    let space = HilbertSpace::full(chain.len())?;
    assemble_hamiltonian_in(chain, Arc::new(space))
}

pub fn assemble_hamiltonian_in(chain: &ChainSpec, space: Arc<HilbertSpace>) -> Result<ManyBodyOperator> {
    chain.validate()?;
    if space.sites() != chain.len() {
        return Err(Error::param("Hilbert space and chain lengths differ"));
    }
    let onsite = chain
        .sites
        .iter()
        .map(|s| [[-0.5 * s.epsilon, 0.0], [0.0, 0.5 * s.epsilon]])
        .collect();
    let bonds = chain
        .couplings
        .iter()
        .enumerate()
        .map(|(l, &j)| (j, &chain.sites[l].theta, &chain.sites[l + 1].theta))
        .collect();
    Ok(assemble_local(&LocalModel { onsite, bonds }, space))
}

/// Transverse-field Ising form in the fixed sweet-spot basis:
/// `ja2 sum sigma^x_l sigma^x_{l+1} + sum_l [-(eps0 + dez_l)/2 sigma^z_l - dex_l/2 sigma^x_l]`.
pub fn assemble_sweet_spot_tfim(epsilon0: f64, ja2: f64, fields: &[(f64, f64)]) -> Result<ManyBodyOperator> {
    let space = HilbertSpace::full(fields.len())?;
    assemble_sweet_spot_tfim_in(epsilon0, ja2, fields, Arc::new(space))
}

pub fn assemble_sweet_spot_tfim_in(
    epsilon0: f64,
    ja2: f64,
    fields: &[(f64, f64)],
    space: Arc<HilbertSpace>,
) -> Result<ManyBodyOperator> {
    if fields.is_empty() {
        return Err(Error::param("chain needs at least one site"));
    }
    if space.sites() != fields.len() {
        return Err(Error::param("Hilbert space and field list lengths differ"));
    }
    let onsite = fields
        .iter()
        .map(|&(dez, dex)| {
            let z = 0.5 * (epsilon0 + dez);
            [[-z, -0.5 * dex], [-0.5 * dex, z]]
        })
        .collect();
    let bonds = (0..fields.len() - 1).map(|_| (ja2, &SIGMA_X, &SIGMA_X)).collect();
    Ok(assemble_local(&LocalModel { onsite, bonds }, space))
}

/// Normalized complex amplitudes over the basis of a [`HilbertSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }
}

/// Product state with the listed sites excited, on the full space.
pub fn basis_state(length: usize, excited_sites: &[usize]) -> Result<StateVector> {
    basis_state_in(&HilbertSpace::full(length)?, excited_sites)
}

pub fn basis_state_in(space: &HilbertSpace, excited_sites: &[usize]) -> Result<StateVector> {
    let mut bits = 0u32;
    for &l in excited_sites {
        if l >= space.sites() {
            return Err(Error::param(format!(
                "site {l} out of range for a chain of {}",
                space.sites()
            )));
        }
        bits |= 1 << l;
    }
    let index = space
        .index_of(bits)
        .ok_or_else(|| Error::param("state lies outside the truncated space"))?;
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); space.dim()];
    amplitudes[index] = Complex64::new(1.0, 0.0);
    Ok(StateVector { amplitudes })
}
