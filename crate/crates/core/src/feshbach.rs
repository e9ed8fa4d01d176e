//! Sharp and smooth Feshbach-Schur maps on finite matrices.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fock_space::{CutoffPair, DomainTag, FockBasis, OperatorMatrix};
use crate::linalg::{condition_number, null_space, op_norm, orthonormal_columns, submatrix};

/// Complement blocks with a larger condition number are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Default relative singular-value threshold for numerical kernels.
pub const DEFAULT_KERNEL_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FeshbachResult {
    pub f: OperatorMatrix,
    /// Condition number of the complement block.
    pub hbar_condition: f64,
    /// Max-entry residual of the complement linear solve.
    pub solve_residual: f64,
    /// False when the residual exceeds `1e-10 * ||W||`.
    pub reliable: bool,
}

/// Solve `A X = B` by LU with two steps of iterative refinement.
fn refined_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64, f64)> {
    let condition = condition_number(a);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::NotInvertible { condition });
    }
    let lu = a.clone().lu();
    let mut x = lu.solve(b).ok_or(Error::NotInvertible { condition })?;
    for _ in 0..2 {
        let r = b - a * &x;
        if r.abs().max() == 0.0 {
            break;
        }
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
    }
    let residual = if b.is_empty() {
        0.0
    } else {
        (a * &x - b).abs().max()
    };
    Ok((x, condition, residual))
}

/// Smooth Feshbach map
/// `F = T + chi W chi - chi W chibar (T + chibar W chibar)^{-1} chibar W chi`
/// with `chi = chi_rho(H_f)`, computed on `basis` (normally `H_red`).
///
/// `t_diag` holds the values of `T(H_f)` on the basis states.
pub fn smooth_feshbach(
    t_diag: &[f64],
    w: &DMatrix<f64>,
    pair: &CutoffPair,
    rho: f64,
    basis: &FockBasis,
) -> Result<FeshbachResult> {
    let dim = basis.dim();
    if t_diag.len() != dim || w.nrows() != dim || w.ncols() != dim {
        return Err(invalid("W", "dimension does not match the basis"));
    }
    let energies = basis.hf_eigs();
    let chi: Vec<f64> = energies.iter().map(|&e| pair.chi_t(e, rho)).collect();
    let chibar: Vec<f64> = energies.iter().map(|&e| pair.chibar_t(e, rho)).collect();
    let low: Vec<usize> = (0..dim).filter(|&i| chi[i] > 0.0).collect();
    let comp: Vec<usize> = (0..dim).filter(|&i| chibar[i] > 0.0).collect();

    // Hbar on Ran chibar
    let hbar = DMatrix::from_fn(comp.len(), comp.len(), |a, b| {
        let (i, j) = (comp[a], comp[b]);
        let diag = if a == b { t_diag[i] } else { 0.0 };
        diag + chibar[i] * w[(i, j)] * chibar[j]
    });
    // chibar W chi, restricted to (comp, low)
    let rhs = DMatrix::from_fn(comp.len(), low.len(), |a, b| {
        let (i, j) = (comp[a], low[b]);
        chibar[i] * w[(i, j)] * chi[j]
    });
    let (x, hbar_condition, solve_residual) = refined_solve(&hbar, &rhs)?;
    // chi W chibar, restricted to (low, comp)
    let left = DMatrix::from_fn(low.len(), comp.len(), |a, b| {
        let (i, j) = (low[a], comp[b]);
        chi[i] * w[(i, j)] * chibar[j]
    });
    let correction = left * x;

    let mut f = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(t_diag));
    for (a, &i) in low.iter().enumerate() {
        for (b, &j) in low.iter().enumerate() {
            f[(i, j)] += chi[i] * w[(i, j)] * chi[j] - correction[(a, b)];
        }
    }
    let w_norm = op_norm(w);
    Ok(FeshbachResult {
        f: OperatorMatrix::new(f, DomainTag::Red),
        hbar_condition,
        solve_residual,
        reliable: solve_residual <= 1e-10 * w_norm.max(f64::MIN_POSITIVE),
    })
}

/// Indices selected by a diagonal 0/1 projection matrix.
pub fn projection_indices(p: &DMatrix<f64>) -> Vec<usize> {
    (0..p.nrows()).filter(|&i| p[(i, i)] > 0.5).collect()
}

/// Sharp Feshbach map `F_P(H - z) = P(H-z)P - P H Pbar (Pbar (H-z) Pbar)^{-1} Pbar H P`,
/// returned as a matrix on `Ran P` in the order of the selected indices.
pub fn sharp_feshbach(h: &DMatrix<f64>, p: &DMatrix<f64>, z: f64) -> Result<FeshbachResult> {
    let keep = projection_indices(p);
    sharp_feshbach_on(h, &keep, z)
}

/// [`sharp_feshbach`] with the projection given by its index set.
pub fn sharp_feshbach_on(h: &DMatrix<f64>, keep: &[usize], z: f64) -> Result<FeshbachResult> {
    let n = h.nrows();
    let mut in_p = vec![false; n];
    for &i in keep {
        in_p[i] = true;
    }
    let comp: Vec<usize> = (0..n).filter(|&i| !in_p[i]).collect();
    let mut block = submatrix(h, &comp, &comp);
    for k in 0..comp.len() {
        block[(k, k)] -= z;
    }
    let off = submatrix(h, &comp, keep);
    let (x, hbar_condition, solve_residual) = refined_solve(&block, &off)?;
    let mut f = submatrix(h, keep, keep);
    for k in 0..keep.len() {
        f[(k, k)] -= z;
    }
    let coupling = submatrix(h, keep, &comp);
    f -= &coupling * x;
    let scale = op_norm(&off).max(f64::MIN_POSITIVE);
    Ok(FeshbachResult {
        f: OperatorMatrix::new(f, DomainTag::Red),
        hbar_condition,
        solve_residual,
        reliable: solve_residual <= 1e-10 * scale,
    })
}

/// Numerical comparison of `ker H` and `ker F` under `chi_rho`.
#[derive(Debug, Clone, Serialize)]
pub struct CorrespondenceReport {
    pub dim_ker_h: usize,
    pub dim_ker_f: usize,
    /// Smallest singular value of `chi_rho` restricted to `ker H`.
    pub injectivity_margin: Option<f64>,
    /// Largest principal angle between `chi_rho(ker H)` and `ker F`, radians.
    pub max_principal_angle: Option<f64>,
    /// Singular values falling inside `[tol/100, 100 tol]`, which make the
    /// kernel dimension sensitive to the threshold.
    pub borderline: usize,
}

impl CorrespondenceReport {
    pub fn dims_match(&self) -> bool {
        self.dim_ker_h == self.dim_ker_f
    }
}

fn borderline_count(m: &DMatrix<f64>, threshold: f64) -> usize {
    crate::linalg::singular_values(m)
        .iter()
        .filter(|&&s| s > threshold / 100.0 && s < threshold * 100.0)
        .count()
}

/// Compare kernels of `H` and its Feshbach image `F`. `tol` is relative to
/// each operator's norm.
pub fn kernel_correspondence(
    h: &DMatrix<f64>,
    f: &DMatrix<f64>,
    chi_rho: &DMatrix<f64>,
    tol: f64,
) -> CorrespondenceReport {
    let th = tol * op_norm(h).max(f64::MIN_POSITIVE);
    let tf = tol * op_norm(f).max(f64::MIN_POSITIVE);
    let ker_h = null_space(h, th);
    let ker_f = null_space(f, tf);
    let (mut margin, mut angle) = (None, None);
    if ker_h.ncols() > 0 {
        let image = chi_rho * &ker_h;
        let sv = crate::linalg::singular_values(&image);
        margin = sv.last().copied();
        if ker_f.ncols() > 0 {
            let q = orthonormal_columns(&image, 1e-12);
            if q.ncols() > 0 {
                let overlap = q.transpose() * &ker_f;
                let cosines = crate::linalg::singular_values(&overlap);
                let k = q.ncols().min(ker_f.ncols());
                let smallest = cosines.get(k - 1).copied().unwrap_or(0.0).clamp(-1.0, 1.0);
                angle = Some(smallest.acos());
            }
        }
    }
    CorrespondenceReport {
        dim_ker_h: ker_h.ncols(),
        dim_ker_f: ker_f.ncols(),
        injectivity_margin: margin,
        max_principal_angle: angle,
        borderline: borderline_count(h, th) + borderline_count(f, tf),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock_space::{build_basis, cutoff_op, FrequencyLadder};
    use crate::linalg::sorted_symmetric_eigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_level() -> FockBasis {
        let ladder = FrequencyLadder::new(0.5, 1.0, 1).unwrap();
        build_basis(ladder, 1, 1).unwrap()
    }

    #[test]
    fn zero_interaction_returns_t() {
        let ladder = FrequencyLadder::new(0.5, 1.0, 4).unwrap();
        let basis = build_basis(ladder, 3, 2).unwrap().reduced(1e-12).0;
        let t: Vec<f64> = basis.hf_eigs().iter().map(|e| e + 0.2).collect();
        let w = DMatrix::zeros(basis.dim(), basis.dim());
        let r = smooth_feshbach(&t, &w, &CutoffPair::default(), 0.5, &basis).unwrap();
        let expect = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(t));
        assert_eq!(r.f.entries, expect);
        assert!(r.reliable);
    }

    #[test]
    fn two_by_two_schur_complement() {
        let basis = two_level();
        assert_eq!(basis.hf_eigs(), &[0.0, 1.0]);
        let (w, t2) = (0.3, 0.8);
        let t1 = w * w / t2;
        let wm = DMatrix::from_row_slice(2, 2, &[0.0, w, w, 0.0]);
        let r = smooth_feshbach(&[t1, t2], &wm, &CutoffPair::default(), 0.5, &basis).unwrap();
        let f = &r.f.entries;
        assert!(f[(0, 0)].abs() < 1e-15);
        assert!((f[(1, 1)] - t2).abs() < 1e-15);
        assert_eq!(f[(0, 1)], 0.0);
        let h = DMatrix::from_row_slice(2, 2, &[t1, w, w, t2]);
        let (chi, _) = cutoff_op(&basis, &CutoffPair::default(), 0.5).unwrap();
        let rep = kernel_correspondence(&h, f, &chi.entries, DEFAULT_KERNEL_TOL);
        assert_eq!((rep.dim_ker_h, rep.dim_ker_f), (1, 1));
        let expected_margin = 1.0 / (1.0 + (t1 / w).powi(2)).sqrt();
        assert!((rep.injectivity_margin.unwrap() - expected_margin).abs() < 1e-12);
        assert!(rep.max_principal_angle.unwrap() < 1e-7);
    }

    #[test]
    fn singular_complement_is_an_error() {
        let basis = two_level();
        let wm = DMatrix::zeros(2, 2);
        let err = smooth_feshbach(&[0.5, 0.0], &wm, &CutoffPair::default(), 0.5, &basis);
        assert!(matches!(err, Err(Error::NotInvertible { .. })));
    }

    #[test]
    fn random_small_interaction_keeps_invertibility() {
        let ladder = FrequencyLadder::new(0.5, 1.0, 4).unwrap();
        let basis = build_basis(ladder, 3, 2).unwrap().reduced(1e-12).0;
        let n = basis.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let sym = &raw + raw.transpose();
        let w = &sym * (0.01 / op_norm(&sym));
        let t: Vec<f64> = basis.hf_eigs().iter().map(|e| e + 0.3).collect();
        let r = smooth_feshbach(&t, &w, &CutoffPair::default(), 0.5, &basis).unwrap();
        assert!(crate::linalg::asymmetry(&r.f.entries) <= 1e-12);
        let h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(t)) + &w;
        let (chi, _) = cutoff_op(&basis, &CutoffPair::default(), 0.5).unwrap();
        let rep = kernel_correspondence(&h, &r.f.entries, &chi.entries, DEFAULT_KERNEL_TOL);
        assert_eq!((rep.dim_ker_h, rep.dim_ker_f), (0, 0));
        assert!(r.solve_residual <= 1e-10 * op_norm(&w));
    }

    #[test]
    fn sharp_map_on_decoupled_blocks() {
        let h = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let p = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 0.0]));
        let r = sharp_feshbach(&h, &p, 0.25).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.75, 0.5, 0.5, 1.75]);
        assert!((&r.f.entries - expect).abs().max() < 1e-15);
    }

    #[test]
    fn sharp_map_kernel_at_ground_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 8;
            let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.2..0.2));
            let mut h = &raw + raw.transpose();
            for k in 0..n {
                h[(k, k)] += if k < 3 { 0.0 } else { 2.0 };
            }
            let (vals, _) = sorted_symmetric_eigen(&h);
            let keep = [0usize, 1, 2];
            let below = sharp_feshbach_on(&h, &keep, vals[0] - 0.05).unwrap();
            assert_eq!(null_space(&below.f.entries, 1e-10).ncols(), 0);
            let at = sharp_feshbach_on(&h, &keep, vals[0]).unwrap();
            let th = 1e-10 * op_norm(&at.f.entries).max(1.0);
            assert_eq!(null_space(&at.f.entries, th).ncols(), 1);
        }
    }
}
