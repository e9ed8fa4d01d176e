//! Seeded property suites over the Feshbach map, the cutoff inequality,
//! kernel norms and the dilation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::feshbach::{kernel_correspondence, smooth_feshbach};
use crate::fock_space::{
    build_basis, cutoff_op, free_field, CutoffPair, Dilation, FockBasis, FrequencyLadder,
};
use crate::kernels::{assemble, random_family};
use crate::linalg::{op_norm, sorted_symmetric_eigen};
use crate::uniqueness::{telescoping_check, telescoping_terms};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Feshbach,
    Telescoping,
    Norms,
    Dilation,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Feshbach,
        Suite::Telescoping,
        Suite::Norms,
        Suite::Dilation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Feshbach => "feshbach",
            Suite::Telescoping => "telescoping",
            Suite::Norms => "norms",
            Suite::Dilation => "dilation",
        }
    }

    pub fn parse(s: &str) -> Option<Vec<Suite>> {
        match s {
            "all" => Some(Self::ALL.to_vec()),
            _ => Self::ALL.iter().find(|v| v.name() == s).map(|v| vec![*v]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub feshbach_instances: usize,
    pub feshbach_max_dim: usize,
    pub kernel_tol: f64,
    pub telescoping_points: usize,
    pub telescoping_rhos: Vec<f64>,
    pub telescoping_a: f64,
    pub telescoping_n_max: usize,
    pub norm_families: usize,
    pub norm_slack: f64,
    pub dilation_modes: usize,
    pub dilation_tol: f64,
    pub power_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            feshbach_instances: 50,
            feshbach_max_dim: 64,
            kernel_tol: 1e-10,
            telescoping_points: 100_000,
            telescoping_rhos: vec![0.4, 0.5],
            telescoping_a: 0.75,
            telescoping_n_max: 6,
            norm_families: 100,
            norm_slack: 1e-12,
            dilation_modes: 8,
            dilation_tol: 1e-14,
            power_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: usize,
    pub failed: usize,
    /// Smallest margin over all cases; negative means a violation.
    pub worst_margin: f64,
    pub notes: Vec<String>,
}

impl SuiteReport {
    fn new(suite: Suite) -> Self {
        Self {
            suite,
            passed: 0,
            failed: 0,
            worst_margin: f64::INFINITY,
            notes: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, margin: f64) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        self.worst_margin = self.worst_margin.min(margin);
    }

    pub fn ok(&self) -> bool {
        self.failed == 0 && self.passed > 0
    }
}

pub fn run_suite(suite: Suite, cfg: &VerifyConfig, seed: u64) -> Result<SuiteReport> {
    match suite {
        Suite::Feshbach => feshbach_suite(cfg, seed),
        Suite::Telescoping => telescoping_suite(cfg),
        Suite::Norms => norms_suite(cfg, seed),
        Suite::Dilation => dilation_suite(cfg),
    }
}

/// Reduced bases of dimension at most `max_dim`, largest first.
fn small_bases(max_dim: usize) -> Result<Vec<FockBasis>> {
    let mut out = Vec::new();
    for (modes, total, per) in [
        (6, 3, 2),
        (5, 3, 3),
        (4, 3, 2),
        (6, 2, 2),
        (3, 2, 2),
        (2, 1, 1),
    ] {
        let ladder = FrequencyLadder::new(0.5, 1.0, modes)?;
        let basis = build_basis(ladder, total, per)?.reduced(1e-12).0;
        if basis.dim() <= max_dim && basis.dim() >= 2 {
            out.push(basis);
        }
    }
    Ok(out)
}

/// Closed-form 2x2 case: `T = diag(t0, t1)`, off-diagonal `w`, shifted so
/// that the lower eigenvalue sits at zero.
pub fn two_by_two_case(t1: f64, w: f64, tol: f64) -> Result<(f64, usize, usize, Option<f64>)> {
    let ladder = FrequencyLadder::new(0.5, 1.0, 1)?;
    let basis = build_basis(ladder, 1, 1)?;
    let lambda = 0.5 * (t1 - (t1 * t1 + 4.0 * w * w).sqrt());
    let t = vec![-lambda, t1 - lambda];
    let wm = DMatrix::from_row_slice(2, 2, &[0.0, w, w, 0.0]);
    let pair = CutoffPair::default();
    let r = smooth_feshbach(&t, &wm, &pair, 0.5, &basis)?;
    let h = DMatrix::from_diagonal(&DVector::from_vec(t)) + &wm;
    let (chi, _) = cutoff_op(&basis, &pair, 0.5)?;
    let rep = kernel_correspondence(&h, &r.f.entries, &chi.entries, tol);
    Ok((
        r.f.entries[(0, 0)],
        rep.dim_ker_h,
        rep.dim_ker_f,
        rep.injectivity_margin,
    ))
}

fn feshbach_suite(cfg: &VerifyConfig, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Feshbach);
    let bases = small_bases(cfg.feshbach_max_dim)?;
    let pair = CutoffPair::default();
    let rho = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernel_sizes = [0usize; 2];
    for i in 0..cfg.feshbach_instances {
        let basis = &bases[i % bases.len()];
        let n = basis.dim();
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let sym = &raw + raw.transpose();
        let w_scale = rng.gen_range(0.005..0.05);
        let w = &sym * (w_scale / op_norm(&sym));
        let c = rng.gen_range(-0.1..0.1);
        let base: Vec<f64> = basis.hf_eigs().iter().map(|e| e + c).collect();
        let h0 = DMatrix::from_diagonal(&DVector::from_column_slice(&base)) + &w;
        let (eigs, _) = sorted_symmetric_eigen(&h0);
        // Even instances sit on an eigenvalue, odd ones just below the spectrum.
        let shift = if i % 2 == 0 { eigs[0] } else { eigs[0] - 0.01 };
        let t: Vec<f64> = base.iter().map(|v| v - shift).collect();
        let h = DMatrix::from_diagonal(&DVector::from_column_slice(&t)) + &w;
        let (chi, _) = cutoff_op(basis, &pair, rho)?;
        let f = smooth_feshbach(&t, &w, &pair, rho, basis)?;
        let rep = kernel_correspondence(&h, &f.f.entries, &chi.entries, cfg.kernel_tol);
        let margin = rep.injectivity_margin.unwrap_or(1.0);
        let ok = rep.dims_match() && margin > 0.0 && f.reliable;
        kernel_sizes[(rep.dim_ker_h > 0) as usize] += 1;
        report.record(ok, margin);
    }
    let (f00, dh, df, margin) = two_by_two_case(1.0, 0.2, cfg.kernel_tol)?;
    let margin = margin.unwrap_or(0.0);
    report.record(
        dh == 1 && df == 1 && f00.abs() <= 1e-12 && margin > 0.0,
        margin,
    );
    report.notes.push(format!(
        "{} instances with trivial kernel, {} with nontrivial kernel, plus the 2x2 case",
        kernel_sizes[0], kernel_sizes[1]
    ));
    Ok(report)
}

fn telescoping_suite(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Telescoping);
    let pair = CutoffPair::default();
    for &rho in &cfg.telescoping_rhos {
        for n in 0..=cfg.telescoping_n_max {
            let terms = telescoping_terms(rho, n, 1e-8);
            let r = telescoping_check(
                &pair,
                rho,
                cfg.telescoping_a,
                n,
                terms,
                cfg.telescoping_points,
            )?;
            report.record(r.violations == 0 && r.min_margin >= 0.0, r.min_margin);
            if r.violations > 0 {
                report.notes.push(format!(
                    "rho={rho} n={n}: {} violations, worst at x={}",
                    r.violations, r.worst_x
                ));
            }
        }
    }
    Ok(report)
}

fn norms_suite(cfg: &VerifyConfig, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Norms);
    let ladder = FrequencyLadder::new(0.5, 1.0, 4)?;
    let basis = build_basis(ladder, 3, 2)?.reduced(1e-12).0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cfg.norm_families {
        let f = random_family(&mut rng, ladder, 0.5, 0.5, 2, 1.0, i % 2 == 1)?;
        let h = assemble(&f, &basis)?.entries;
        let bound = (f.family_norm() + f.w00.sup_abs()) * (1.0 + cfg.norm_slack);
        let norm = op_norm(&h);
        report.record(norm <= bound, (bound - norm) / bound);
    }
    Ok(report)
}

fn dilation_suite(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Dilation);
    let pair = CutoffPair::default();
    for rho in [0.4, 0.5] {
        let ladder = FrequencyLadder::new(rho, 1.0, cfg.dilation_modes)?;
        let basis = build_basis(ladder, 3, 2)?.reduced(1e-12).0;
        let d = Dilation::new(&basis, rho)?;
        let dim = basis.dim();
        let keep = DMatrix::<f64>::identity(dim, dim) - d.leak_projector().entries;
        let hf = free_field(&basis).entries;
        let g = d.gamma();
        let scaled = (&g * &hf * g.transpose() - &hf * rho) * &keep;
        let err = scaled.abs().max();
        let limit = cfg.dilation_tol * hf.abs().max();
        report.record(err <= limit, limit - err);

        let (chi, _) = cutoff_op(&basis, &pair, rho)?;
        let step = &g * &chi.entries;
        let mut lhs = DMatrix::<f64>::identity(dim, dim);
        for n in 1..=cfg.dilation_modes - 2 {
            lhs = &step * &lhs;
            let (chi_n, _) = cutoff_op(&basis, &pair, rho.powi(n as i32))?;
            let rhs = d.gamma_power(n) * &chi_n.entries;
            let err = ((&lhs - rhs) * &keep).abs().max();
            report.record(err <= cfg.power_tol, cfg.power_tol - err);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names() {
        assert_eq!(Suite::parse("all").unwrap().len(), 4);
        assert_eq!(Suite::parse("norms").unwrap(), vec![Suite::Norms]);
        assert!(Suite::parse("bogus").is_none());
    }

    #[test]
    fn small_suites_pass() {
        let cfg = VerifyConfig {
            feshbach_instances: 6,
            telescoping_points: 2000,
            norm_families: 4,
            ..VerifyConfig::default()
        };
        for suite in Suite::ALL {
            let r = run_suite(suite, &cfg, 3).unwrap();
            assert!(r.ok(), "{:?}", r);
        }
    }

    #[test]
    fn two_by_two_closed_form() {
        let (f00, dh, df, margin) = two_by_two_case(1.0, 0.2, 1e-10).unwrap();
        assert!(f00.abs() <= 1e-12);
        assert_eq!((dh, df), (1, 1));
        assert!(margin.unwrap() > 0.0);
    }
}
