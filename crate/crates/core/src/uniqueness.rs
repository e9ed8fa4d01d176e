//! Hypothesis extraction from a flow, the telescoping cutoff inequality,
//! and the resulting ground-state uniqueness certificate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fock_space::CutoffPair;
use crate::linalg::{op_norm, singular_values};
use crate::rg_flow::{geometric_ratio, FlowState};

/// Fitted tail ratios at or above this make the certificate inconclusive.
pub const MAX_TAIL_RATIO: f64 = 0.95;

/// Number of trailing terms used for the tail fit.
pub const TAIL_FIT_TERMS: usize = 4;

pub fn log_grid(points: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut xs = vec![0.0];
    let (a, b) = (lo.ln(), hi.ln());
    let steps = points.max(2) - 1;
    xs.extend((0..points).map(|i| (a + (b - a) * i as f64 / steps as f64).exp()));
    xs
}

#[derive(Debug, Clone, Serialize)]
pub struct TelescopingReport {
    pub rho: f64,
    pub a: f64,
    pub n: usize,
    pub terms: usize,
    pub points: usize,
    pub violations: usize,
    pub min_margin: f64,
    pub worst_x: f64,
    /// True when every omitted tail term vanishes on the grid, so the
    /// truncated left side is exact rather than a lower bound.
    pub exact: bool,
}

/// Left side of the cutoff inequality at `x`, truncated after `terms` terms.
pub fn telescoping_lhs(pair: &CutoffPair, rho: f64, a: f64, n: usize, terms: usize, x: f64) -> f64 {
    let mut sum = if x == 0.0 { 1.0 } else { 0.0 };
    for j in n..n + terms {
        let scale = rho.powi(j as i32);
        if x >= scale {
            continue;
        }
        if x >= a * scale * rho {
            sum += pair.chi_t(x, scale).powi(2);
        }
    }
    sum
}

/// Scan
/// `1_{0}(x) + sum_{j>=n} (1_[a rho^{j+1}, inf)(x) chi_{rho^j}(x))^2 >= chi_{rho^n}(x)^2`
/// on `{0}` and `grid` log-spaced points of `[1e-8, 1]`.
pub fn telescoping_check(
    pair: &CutoffPair,
    rho: f64,
    a: f64,
    n: usize,
    terms: usize,
    grid: usize,
) -> Result<TelescopingReport> {
    if !(rho > 0.0 && rho < a && a <= 1.0) {
        return Err(invalid(
            "a",
            format!("need 0 < rho < a <= 1, got rho={rho}, a={a}"),
        ));
    }
    let xs = log_grid(grid, 1e-8, 1.0);
    let scale_n = rho.powi(n as i32);
    let mut report = TelescopingReport {
        rho,
        a,
        n,
        terms,
        points: xs.len(),
        violations: 0,
        min_margin: f64::INFINITY,
        worst_x: f64::NAN,
        exact: rho.powi((n + terms) as i32) <= 1e-8,
    };
    for &x in &xs {
        let margin = telescoping_lhs(pair, rho, a, n, terms, x) - pair.chi_t(x, scale_n).powi(2);
        if margin < 0.0 {
            report.violations += 1;
        }
        if margin < report.min_margin {
            report.min_margin = margin;
            report.worst_x = x;
        }
    }
    Ok(report)
}

/// Number of terms after which every tail term vanishes for `x >= x_min`.
pub fn telescoping_terms(rho: f64, n: usize, x_min: f64) -> usize {
    let needed = (x_min.ln() / rho.ln()).ceil() as i64 - n as i64;
    needed.max(1) as usize
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub pairs: usize,
    pub violations: usize,
    pub max_excess: f64,
}

/// `chi_{rho^j}(x) <= chi_{rho^n}(x)` for all `n <= j <= n_max` on the grid.
pub fn cutoff_monotonicity(
    pair: &CutoffPair,
    rho: f64,
    n_max: usize,
    grid: usize,
) -> MonotonicityReport {
    let xs = log_grid(grid, 1e-8, 1.0);
    let mut report = MonotonicityReport {
        pairs: 0,
        violations: 0,
        max_excess: f64::NEG_INFINITY,
    };
    for n in 0..=n_max {
        for j in n..=n_max {
            report.pairs += 1;
            let (sn, sj) = (rho.powi(n as i32), rho.powi(j as i32));
            for &x in &xs {
                let excess = pair.chi_t(x, sj) - pair.chi_t(x, sn);
                if excess > 0.0 {
                    report.violations += 1;
                }
                report.max_excess = report.max_excess.max(excess);
            }
        }
    }
    report
}

#[derive(Debug, Clone, Serialize)]
pub struct TBounds {
    pub delta0: f64,
    /// `sup |T_n' - 1|` per level.
    pub eps: Vec<f64>,
    /// `|T_n(0) + zeta_n|` per level.
    pub beta: Vec<f64>,
    /// Smallest `a` making `|T_n(E)| >= delta0 E - a` hold on every eigenvalue.
    pub a_min: Vec<f64>,
    /// `max(2 beta_n, a_min_n)`
    pub a_t: Vec<f64>,
    /// Worst margin of the scalar inequality with `a_t`.
    pub min_margin: f64,
}

/// Slope and lower-bound constants of `T_n` at each level.
pub fn measure_t_bounds(states: &[FlowState]) -> TBounds {
    let eps: Vec<f64> = states.iter().map(|s| s.t.slope_deviation()).collect();
    let beta: Vec<f64> = states
        .iter()
        .map(|s| (s.t.at_zero() + s.zeta).abs())
        .collect();
    let delta0 = 1.0 - eps.iter().copied().fold(0.0, f64::max);
    let mut a_min = Vec::with_capacity(states.len());
    let mut a_t = Vec::with_capacity(states.len());
    let mut min_margin = f64::INFINITY;
    for (s, &b) in states.iter().zip(&beta) {
        let needed =
            s.t.energies()
                .iter()
                .zip(s.t.values())
                .map(|(&e, &v)| delta0 * e - v.abs())
                .fold(0.0f64, f64::max);
        let a = (2.0 * b).max(needed);
        for (&e, &v) in s.t.energies().iter().zip(s.t.values()) {
            min_margin = min_margin.min(v.abs() - (delta0 * e - a));
        }
        a_min.push(needed);
        a_t.push(a);
    }
    TBounds {
        delta0,
        eps,
        beta,
        a_min,
        a_t,
        min_margin,
    }
}

/// `a_n = max(||W_n||, a_n^T)` per level.
pub fn bound_sequence(states: &[FlowState], hyp: &TBounds) -> Vec<f64> {
    states
        .iter()
        .zip(&hyp.a_t)
        .map(|(s, &at)| s.obs.w_norm.max(at))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Certified,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessCertificate {
    pub delta0: f64,
    /// `a_n` for `n = 1..`
    pub a_seq: Vec<f64>,
    /// `d_n` for `n = 1..`
    pub d_seq: Vec<f64>,
    pub threshold: f64,
    pub n_star: Option<usize>,
    pub verdict: Verdict,
    /// Geometric ratio fitted to the last terms of `a_seq`, used for the tail.
    pub fit_ratio: Option<f64>,
    /// Extrapolated `sum_{j > len} a_j^2`.
    pub tail: f64,
    /// Geometric ratio fitted to `a_2, a_3, ...`.
    pub decay_ratio: Option<f64>,
    /// Multiplicity of the eigenvalue 0 of the free field on the basis.
    pub m: usize,
    pub statement: String,
    pub reason: Option<String>,
    pub provenance: String,
}

fn tail_ratio(a_seq: &[f64]) -> Option<f64> {
    let start = a_seq.len().saturating_sub(TAIL_FIT_TERMS);
    let last = &a_seq[start..];
    match last.last() {
        None => None,
        Some(&0.0) => Some(0.0),
        Some(_) => {
            let positive: Vec<f64> = last.iter().copied().filter(|&v| v > 0.0).collect();
            geometric_ratio(&positive)
        }
    }
}

/// `d_n = (2 / delta0)^2 sum_{j >= n} a_{j+1}^2` with a geometric tail,
/// compared against `(a rho)^2`.
pub fn build_certificate(
    delta0: f64,
    a_seq: &[f64],
    rho: f64,
    a: f64,
    m: usize,
    provenance: &str,
) -> UniquenessCertificate {
    let threshold = (a * rho).powi(2);
    let fit_ratio = tail_ratio(a_seq);
    let decay_ratio = if a_seq.len() > 2 {
        geometric_ratio(&a_seq[1..])
    } else {
        None
    };
    let mut reason = None;
    let tail = match (fit_ratio, a_seq.last()) {
        (Some(q), Some(&last)) if q < MAX_TAIL_RATIO => last * last * q * q / (1.0 - q * q),
        (Some(q), _) => {
            reason = Some(format!("tail ratio {q} is not below {MAX_TAIL_RATIO}"));
            f64::INFINITY
        }
        (None, _) => {
            reason = Some("tail ratio could not be fitted".into());
            f64::INFINITY
        }
    };
    if !(delta0 > 0.0) {
        reason = Some(format!("delta0 = {delta0} is not positive"));
    }
    let prefactor = if delta0 > 0.0 {
        (2.0 / delta0).powi(2)
    } else {
        f64::INFINITY
    };
    // d_n for n = 1..=len, a_seq[i] = a_{i+1}
    let len = a_seq.len();
    let mut d_seq = vec![0.0; len];
    let mut running = tail;
    for n in (1..=len).rev() {
        if n < len {
            running += a_seq[n].powi(2);
        }
        d_seq[n - 1] = prefactor * running;
    }
    let n_star = if reason.is_none() {
        d_seq.iter().position(|&d| d < threshold).map(|i| i + 1)
    } else {
        None
    };
    if reason.is_none() && n_star.is_none() {
        reason = Some("no d_n below the threshold".into());
    }
    let verdict = if n_star.is_some() {
        Verdict::Certified
    } else {
        Verdict::Inconclusive
    };
    UniquenessCertificate {
        delta0,
        a_seq: a_seq.to_vec(),
        d_seq,
        threshold,
        n_star,
        verdict,
        fit_ratio,
        tail,
        decay_ratio,
        m,
        statement: format!(
            "for the measured constants on this truncated space, dim ker H_1 <= {m}"
        ),
        reason,
        provenance: provenance.to_string(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DegeneracyProbe {
    pub kernel_dim: usize,
    /// Smallest singular value outside the kernel.
    pub gap: Option<f64>,
    pub smallest: Vec<f64>,
}

/// Singular values below `tol * ||H||` count as kernel.
pub fn degeneracy_probe(h: &DMatrix<f64>, tol: f64) -> DegeneracyProbe {
    let mut sv = singular_values(h);
    sv.reverse();
    let threshold = tol * op_norm(h);
    let kernel_dim = sv.iter().take_while(|&&s| s < threshold).count();
    DegeneracyProbe {
        kernel_dim,
        gap: sv.get(kernel_dim).copied(),
        smallest: sv.iter().take(kernel_dim + 2).copied().collect(),
    }
}
