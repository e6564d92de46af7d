//! Statistics over peak probabilities: log-binned histograms, mean `ln P_l`,
//! localization-length fits, the dimensionless disorder axis and the
//! sweet-spot group velocity.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleResult;
use crate::error::{Error, Result};
use crate::evolution::EvolutionRecord;

/// Histogram of `log10 P` with an underflow bucket for `P` below the first
/// edge (including zero and negative values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHistogram {
    /// Bin edges in `log10 P`, ascending.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Density per unit `log10 P`; sums with bin widths to `1 - underflow/total`.
    pub density: Vec<f64>,
    pub underflow: usize,
    pub total: usize,
}

impl LogHistogram {
    pub fn mass(&self) -> f64 {
        self.density
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, w)| d * (w[1] - w[0]))
            .sum()
    }
}

/// `n` equal bins in `log10 P` over `[lo, hi]`.
pub fn log_edges(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && n >= 1) {
        return Err(Error::param(format!("bad histogram range [{lo}, {hi}] with {n} bins")));
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect())
}

/// Default binning: 40 bins over `[1e-4, 1]`.
pub fn default_edges() -> Vec<f64> {
    log_edges(1e-4, 1.0, 40).expect("static range")
}

pub fn log_histogram(samples: &[f64], edges: &[f64]) -> Result<LogHistogram> {
    if samples.is_empty() {
        return Err(Error::param("histogram needs at least one sample"));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("histogram edges must be strictly ascending"));
    }
    let nb = edges.len() - 1;
    let top = edges[nb];
    let mut counts = vec![0usize; nb];
    let mut underflow = 0;
    for &p in samples {
        if p.is_nan() {
            return Err(Error::param("NaN sample"));
        }
        if p <= 0.0 {
            underflow += 1;
            continue;
        }
        let x = p.log10();
        if x < edges[0] {
            underflow += 1;
        } else if x > top + 1e-9 {
            return Err(Error::param(format!("sample {p} above the last bin edge")));
        } else {
            // last bin is closed on the right
            let k = edges.partition_point(|&e| e <= x).clamp(1, nb) - 1;
            counts[k] += 1;
        }
    }
    let total = samples.len();
    let density = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c as f64 / (total as f64 * (w[1] - w[0])))
        .collect();
    Ok(LogHistogram {
        edges: edges.to_vec(),
        counts,
        density,
        underflow,
        total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanLogPeak {
    /// Mean of `ln P_l` per site.
    pub mean_ln_p: Vec<f64>,
    /// Standard error of each mean.
    pub std_err: Vec<f64>,
    /// Samples that entered each mean.
    pub counts: Vec<usize>,
    /// Samples with `P_l = 0`, left out of the mean.
    pub excluded: Vec<usize>,
}

pub fn mean_log_peak(result: &EnsembleResult) -> Result<MeanLogPeak> {
    let rows: Vec<&[f64]> = result.completed().map(|r| r.p_max.as_slice()).collect();
    mean_log_of(&rows, result.sites())
}

/// Same as [`mean_log_peak`] for raw per-realization `P_l` rows.
pub fn mean_log_of(rows: &[&[f64]], sites: usize) -> Result<MeanLogPeak> {
    if rows.is_empty() {
        return Err(Error::param("no completed realizations"));
    }
    let mut out = MeanLogPeak {
        mean_ln_p: vec![0.0; sites],
        std_err: vec![0.0; sites],
        counts: vec![0; sites],
        excluded: vec![0; sites],
    };
    for l in 0..sites {
        let mut vals = Vec::with_capacity(rows.len());
        for row in rows {
            let p = *row
                .get(l)
                .ok_or_else(|| Error::param(format!("row has no site {l}")))?;
            if p > 0.0 {
                vals.push(p.ln());
            } else {
                out.excluded[l] += 1;
            }
        }
        let n = vals.len();
        if n == 0 {
            out.mean_ln_p[l] = f64::NEG_INFINITY;
            continue;
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        out.mean_ln_p[l] = mean;
        out.counts[l] = n;
        if n > 1 {
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            out.std_err[l] = (var / n as f64).sqrt();
        }
    }
    Ok(out)
}

/// Straight-line fit `mean ln P_l = c0 - 2 l / xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationFit {
    pub c0: f64,
    pub slope: f64,
    pub slope_std_err: f64,
    /// Localization length in sites; infinite when `delocalized`.
    pub xi: f64,
    pub xi_std_err: f64,
    /// Inclusive site range used.
    pub fit_range: (usize, usize),
    /// RMS residual of the fit.
    pub residual: f64,
    /// Slope was not negative: decay is slower than the fit range resolves.
    pub delocalized: bool,
}

/// Unweighted least squares over `l = 1..=l_max`.
pub fn fit_localization_length(mean_ln_p: &[f64], l_max: usize) -> Result<LocalizationFit> {
    if l_max >= mean_ln_p.len() || l_max < 3 {
        return Err(Error::param(format!(
            "fit range 1..={l_max} needs at least 3 sites inside a chain of {}",
            mean_ln_p.len()
        )));
    }
    let pts: Vec<(f64, f64)> = (1..=l_max).map(|l| (l as f64, mean_ln_p[l])).collect();
    if pts.iter().any(|p| !p.1.is_finite()) {
        return Err(Error::param("non-finite mean ln P inside fit range"));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let c0 = my - slope * mx;
    let ss: f64 = pts.iter().map(|p| (p.1 - c0 - slope * p.0).powi(2)).sum();
    let residual = (ss / n).sqrt();
    let slope_std_err = if pts.len() > 2 { (ss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    let delocalized = slope >= 0.0;
    let (xi, xi_std_err) = if delocalized {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (-2.0 / slope, 2.0 * slope_std_err / (slope * slope))
    };
    Ok(LocalizationFit {
        c0,
        slope,
        slope_std_err,
        xi,
        xi_std_err,
        fit_range: (1, l_max),
        residual,
        delocalized,
    })
}

/// Default upper fit index `floor(L/2)`.
pub fn default_fit_max(sites: usize) -> usize {
    sites / 2
}

/// `delta_eps / (J a^2)`.
pub fn dimensionless_disorder(delta_eps: f64, j: f64, a: f64) -> f64 {
    delta_eps / (j * a * a)
}

/// Sweet-spot chain dispersion `omega_q` in rad/ns.
pub fn dispersion(q: f64, epsilon0: f64, ja2: f64) -> f64 {
    2.0 * PI * (epsilon0 * epsilon0 + 2.0 * ja2 * epsilon0 * q.cos() + ja2 * ja2).sqrt()
}

/// `|d omega_q / dq|` in sites/ns.
pub fn group_velocity(q: f64, epsilon0: f64, ja2: f64) -> f64 {
    let root = (epsilon0 * epsilon0 + 2.0 * ja2 * epsilon0 * q.cos() + ja2 * ja2).sqrt();
    (2.0 * PI * ja2 * epsilon0 * q.sin() / root).abs()
}

/// One `(t_peak, P)` point per record for each requested site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalCurve {
    pub site: usize,
    /// `(t_peak in ns, P)` in record order.
    pub points: Vec<(f64, f64)>,
}

impl ArrivalCurve {
    /// True if `P` strictly falls as `t_peak` strictly grows along the curve.
    pub fn is_monotone_decreasing(&self) -> bool {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 < w[0].1)
    }
}

pub fn peak_vs_arrival(records: &[EvolutionRecord], sites: &[usize]) -> Result<Vec<ArrivalCurve>> {
    sites
        .iter()
        .map(|&site| {
            let points = records
                .iter()
                .map(|r| {
                    r.peak
                        .get(site)
                        .map(|p| (p.t_peak, p.p_max))
                        .ok_or_else(|| Error::param(format!("record has no site {site}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ArrivalCurve { site, points })
        })
        .collect()
}

/// Linear interpolation of `ys` at `x` over ascending `xs`; `None` outside.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    if xs.len() != ys.len() || xs.is_empty() {
        return None;
    }
    let k = xs.partition_point(|&v| v < x);
    if k == 0 {
        return (xs[0] == x).then_some(ys[0]);
    }
    if k == xs.len() {
        return None;
    }
    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    Some(ys[k - 1] + t * (ys[k] - ys[k - 1]))
}
