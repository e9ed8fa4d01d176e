//! Truncated bosonic Fock space over a geometric frequency ladder.
//!
//! Mode `j` carries frequency `omega0 * rho^j` and stands for the momentum
//! shell `rho^{j+1} omega0 < |k| <= rho^j omega0`. Because the ladder is
//! geometric, the dilation is an exact shift of mode indices.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default refusal threshold for [`build_basis`].
pub const DEFAULT_DIMENSION_CAP: usize = 20_000;

/// Energies closer than this to a projection boundary are reported as ties.
pub const DEFAULT_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyLadder {
    rho: f64,
    omega0: f64,
    modes: usize,
}

impl FrequencyLadder {
    pub fn new(rho: f64, omega0: f64, modes: usize) -> Result<Self> {
        if !(rho > 0.0 && rho < 0.75) {
            return Err(invalid("rho", format!("{rho} not in (0, 3/4)")));
        }
        if !(omega0 > 0.0 && omega0 <= 1.0) {
            return Err(invalid("omega0", format!("{omega0} not in (0, 1]")));
        }
        if modes == 0 {
            return Err(invalid("modes", "at least one mode is required"));
        }
        Ok(Self { rho, omega0, modes })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Frequency of mode `j`.
    pub fn frequency(&self, j: usize) -> f64 {
        self.omega0 * self.rho.powi(j as i32)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.modes).map(|j| self.frequency(j)).collect()
    }

    /// Inner and outer radius of the momentum shell represented by mode `j`.
    pub fn shell(&self, j: usize) -> (f64, f64) {
        let outer = self.frequency(j);
        (outer * self.rho, outer)
    }
}

/// Occupation vector of a Fock basis state.
pub type Occupation = Vec<u8>;

/// Enumerated occupation-number basis.
///
/// States are ordered by total boson number and, within one total, in
/// descending lexicographic order of the occupation vector, so the vacuum is
/// always index 0.
#[derive(Debug, Clone)]
pub struct FockBasis {
    ladder: FrequencyLadder,
    max_total: usize,
    max_per_mode: usize,
    states: Vec<Occupation>,
    hf_eigs: Vec<f64>,
    index: HashMap<Occupation, usize>,
    reduced: bool,
}

/// Enumerate the truncated basis, refusing dimensions above
/// [`DEFAULT_DIMENSION_CAP`].
pub fn build_basis(
    ladder: FrequencyLadder,
    max_total: usize,
    max_per_mode: usize,
) -> Result<FockBasis> {
    build_basis_with_cap(ladder, max_total, max_per_mode, DEFAULT_DIMENSION_CAP)
}

pub fn build_basis_with_cap(
    ladder: FrequencyLadder,
    max_total: usize,
    max_per_mode: usize,
    cap: usize,
) -> Result<FockBasis> {
    if max_total == 0 {
        return Err(invalid("max_total", "must be at least 1"));
    }
    if max_per_mode == 0 || max_per_mode > u8::MAX as usize {
        return Err(invalid("max_per_mode", "must be in 1..=255"));
    }
    let dim = count_states(ladder.modes(), max_total, max_per_mode);
    if dim > cap {
        return Err(Error::DimensionOverflow { dim, cap });
    }

    let mut states = Vec::with_capacity(dim);
    for total in 0..=max_total {
        let mut current = vec![0u8; ladder.modes()];
        enumerate_fixed_total(&mut current, 0, total, max_per_mode, &mut states);
    }
    Ok(FockBasis::from_states(
        ladder,
        max_total,
        max_per_mode,
        states,
        false,
    ))
}

fn count_states(modes: usize, max_total: usize, max_per_mode: usize) -> usize {
    // ways[t] = number of occupation vectors over the modes seen so far with total t
    let mut ways = vec![0usize; max_total + 1];
    ways[0] = 1;
    for _ in 0..modes {
        let mut next = vec![0usize; max_total + 1];
        for (t, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for k in 0..=max_per_mode.min(max_total - t) {
                next[t + k] = next[t + k].saturating_add(w);
            }
        }
        ways = next;
    }
    ways.iter().fold(0usize, |acc, &w| acc.saturating_add(w))
}

fn enumerate_fixed_total(
    current: &mut Occupation,
    mode: usize,
    remaining: usize,
    cap: usize,
    out: &mut Vec<Occupation>,
) {
    let modes = current.len();
    if mode == modes {
        if remaining == 0 {
            out.push(current.clone());
        }
        return;
    }
    // descending occupation of the current mode gives descending lex order
    let max_here = remaining.min(cap);
    for k in (0..=max_here).rev() {
        let rest = remaining - k;
        if rest > cap * (modes - mode - 1) {
            continue;
        }
        current[mode] = k as u8;
        enumerate_fixed_total(current, mode + 1, rest, cap, out);
    }
    current[mode] = 0;
}

impl FockBasis {
    fn from_states(
        ladder: FrequencyLadder,
        max_total: usize,
        max_per_mode: usize,
        states: Vec<Occupation>,
        reduced: bool,
    ) -> Self {
        let freqs = ladder.frequencies();
        let hf_eigs = states
            .iter()
            .map(|s| s.iter().zip(&freqs).map(|(&n, w)| n as f64 * w).sum())
            .collect();
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Self {
            ladder,
            max_total,
            max_per_mode,
            states,
            hf_eigs,
            index,
            reduced,
        }
    }

    pub fn ladder(&self) -> &FrequencyLadder {
        &self.ladder
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn modes(&self) -> usize {
        self.ladder.modes()
    }

    pub fn max_total(&self) -> usize {
        self.max_total
    }

    pub fn max_per_mode(&self) -> usize {
        self.max_per_mode
    }

    pub fn states(&self) -> &[Occupation] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    /// Free-field energy of every basis state.
    pub fn hf_eigs(&self) -> &[f64] {
        &self.hf_eigs
    }

    pub fn index_of(&self, occupation: &[u8]) -> Option<usize> {
        self.index.get(occupation).copied()
    }

    /// True when this basis was restricted to `H_red`.
    pub fn is_reduced(&self) -> bool {
        self.reduced
    }

    /// Number of vacuum states, i.e. the multiplicity of the eigenvalue 0 of `H_f`.
    pub fn vacuum_multiplicity(&self) -> usize {
        self.hf_eigs.iter().filter(|&&e| e == 0.0).count()
    }

    /// Restrict to `H_red = 1_[0,1](H_f)`. Boundary ties are kept and reported.
    pub fn reduced(&self, tie_tol: f64) -> (FockBasis, TieReport) {
        let mut kept = Vec::new();
        let mut ties = Vec::new();
        for (s, &e) in self.states.iter().zip(&self.hf_eigs) {
            if (e - 1.0).abs() <= tie_tol {
                ties.push(s.clone());
                kept.push(s.clone());
            } else if e <= 1.0 {
                kept.push(s.clone());
            }
        }
        let basis =
            FockBasis::from_states(self.ladder, self.max_total, self.max_per_mode, kept, true);
        (
            basis,
            TieReport {
                boundary: 1.0,
                tol: tie_tol,
                states: ties,
            },
        )
    }

    /// Index of `a_j^dagger |s>` together with the matrix element, if inside the truncation.
    pub fn raise(&self, s: usize, j: usize) -> Option<(usize, f64)> {
        let occ = &self.states[s];
        let n = occ[j] as usize;
        if n >= self.max_per_mode {
            return None;
        }
        let mut target = occ.clone();
        target[j] += 1;
        self.index_of(&target).map(|t| (t, ((n + 1) as f64).sqrt()))
    }

    /// Index of `a_j |s>` together with the matrix element, or `None` if empty.
    pub fn lower(&self, s: usize, j: usize) -> Option<(usize, f64)> {
        let occ = &self.states[s];
        let n = occ[j] as usize;
        if n == 0 {
            return None;
        }
        let mut target = occ.clone();
        target[j] -= 1;
        self.index_of(&target).map(|t| (t, (n as f64).sqrt()))
    }
}

/// States whose free energy sits within tolerance of a projection boundary.
#[derive(Debug, Clone, Serialize)]
pub struct TieReport {
    pub boundary: f64,
    pub tol: f64,
    pub states: Vec<Occupation>,
}

/// Which subspace an operator matrix acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainTag {
    Full,
    Red,
    RanChiBar,
}

/// A square real matrix tagged with its domain.
///
/// All operators in scope are real: the ladder couplings and kernels are real,
/// so Hermitian means symmetric here.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub entries: DMatrix<f64>,
    pub domain: DomainTag,
}

impl OperatorMatrix {
    pub fn new(entries: DMatrix<f64>, domain: DomainTag) -> Self {
        assert!(entries.is_square(), "operator matrices are square");
        Self { entries, domain }
    }

    pub fn diagonal(values: &[f64], domain: DomainTag) -> Self {
        Self::new(
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values)),
            domain,
        )
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

fn domain_of(basis: &FockBasis) -> DomainTag {
    if basis.is_reduced() {
        DomainTag::Red
    } else {
        DomainTag::Full
    }
}

fn check_mode(basis: &FockBasis, j: usize) -> Result<()> {
    if j >= basis.modes() {
        return Err(Error::InvalidMode {
            index: j,
            modes: basis.modes(),
        });
    }
    Ok(())
}

/// Matrix of `a_j^dagger`; transitions leaving the truncation are dropped.
pub fn creation_op(basis: &FockBasis, j: usize) -> Result<OperatorMatrix> {
    check_mode(basis, j)?;
    let mut m = DMatrix::zeros(basis.dim(), basis.dim());
    for s in 0..basis.dim() {
        if let Some((t, amp)) = basis.raise(s, j) {
            m[(t, s)] = amp;
        }
    }
    Ok(OperatorMatrix::new(m, domain_of(basis)))
}

pub fn annihilation_op(basis: &FockBasis, j: usize) -> Result<OperatorMatrix> {
    check_mode(basis, j)?;
    let mut m = DMatrix::zeros(basis.dim(), basis.dim());
    for s in 0..basis.dim() {
        if let Some((t, amp)) = basis.lower(s, j) {
            m[(t, s)] = amp;
        }
    }
    Ok(OperatorMatrix::new(m, domain_of(basis)))
}

/// `H_f = sum_j omega_j a_j^dagger a_j`, diagonal in the occupation basis.
pub fn free_field(basis: &FockBasis) -> OperatorMatrix {
    OperatorMatrix::diagonal(basis.hf_eigs(), domain_of(basis))
}

/// How energies within the tie tolerance of a boundary are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TiePolicy {
    Reject,
    Include,
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub matrix: OperatorMatrix,
    pub selected: Vec<usize>,
    pub ties: Vec<usize>,
}

/// Diagonal 0/1 projection onto states with `lo <= H_f <= hi`.
pub fn spectral_projection(
    basis: &FockBasis,
    lo: f64,
    hi: f64,
    tie_tol: f64,
    policy: TiePolicy,
) -> Result<Projection> {
    if lo > hi {
        return Err(invalid("interval", format!("[{lo}, {hi}] is empty")));
    }
    let mut diag = vec![0.0; basis.dim()];
    let mut selected = Vec::new();
    let mut ties = Vec::new();
    for (i, &e) in basis.hf_eigs().iter().enumerate() {
        let near = (e - lo).abs() <= tie_tol || (e - hi).abs() <= tie_tol;
        if near {
            ties.push(i);
        }
        if near || (e >= lo && e <= hi) {
            diag[i] = 1.0;
            selected.push(i);
        }
    }
    if policy == TiePolicy::Reject && !ties.is_empty() {
        return Err(Error::BoundaryTie {
            count: ties.len(),
            tol: tie_tol,
        });
    }
    Ok(Projection {
        matrix: OperatorMatrix::diagonal(&diag, domain_of(basis)),
        selected,
        ties,
    })
}

/// Smooth partition of unity `chi^2 + chibar^2 = 1` with `chi = 1` on
/// `[0, plateau]` and `chi = 0` on `[1, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffPair {
    plateau: f64,
}

impl Default for CutoffPair {
    fn default() -> Self {
        Self { plateau: 0.75 }
    }
}

fn bump(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// C-infinity step from 0 at `t <= 0` to 1 at `t >= 1`.
fn smooth_step(t: f64) -> f64 {
    let a = bump(t);
    let b = bump(1.0 - t);
    a / (a + b)
}

impl CutoffPair {
    pub fn new(plateau: f64) -> Result<Self> {
        if !(plateau > 0.0 && plateau < 1.0) {
            return Err(invalid("plateau", format!("{plateau} not in (0, 1)")));
        }
        Ok(Self { plateau })
    }

    /// The plateau edge `a`.
    pub fn plateau(&self) -> f64 {
        self.plateau
    }

    fn phase(&self, x: f64) -> f64 {
        FRAC_PI_2 * smooth_step((x - self.plateau) / (1.0 - self.plateau))
    }

    pub fn chi(&self, x: f64) -> f64 {
        if x <= self.plateau {
            1.0
        } else if x >= 1.0 {
            0.0
        } else {
            self.phase(x).cos()
        }
    }

    pub fn chibar(&self, x: f64) -> f64 {
        if x <= self.plateau {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            self.phase(x).sin()
        }
    }

    /// `chi_t(x) = chi(x / t)`.
    pub fn chi_t(&self, x: f64, t: f64) -> f64 {
        self.chi(x / t)
    }

    pub fn chibar_t(&self, x: f64, t: f64) -> f64 {
        self.chibar(x / t)
    }
}

/// Diagonal matrices `chi_t(H_f)` and `chibar_t(H_f)`.
pub fn cutoff_op(
    basis: &FockBasis,
    pair: &CutoffPair,
    t: f64,
) -> Result<(OperatorMatrix, OperatorMatrix)> {
    if t <= 0.0 {
        return Err(invalid("t", format!("scale {t} must be positive")));
    }
    let chi: Vec<f64> = basis.hf_eigs().iter().map(|&e| pair.chi_t(e, t)).collect();
    let chibar: Vec<f64> = basis
        .hf_eigs()
        .iter()
        .map(|&e| pair.chibar_t(e, t))
        .collect();
    let tag = domain_of(basis);
    Ok((
        OperatorMatrix::diagonal(&chi, tag),
        OperatorMatrix::diagonal(&chibar, tag),
    ))
}

/// The unitary scale transformation `Gamma_rho` realized as a mode shift.
///
/// `Gamma_rho` raises free energies by `1/rho` (occupation of mode `j + 1`
/// moves to mode `j`), so `Gamma H_f Gamma^{-1} = rho H_f`. Its inverse moves
/// mode `j` to `j + 1`; states occupying the deepest mode have no image and
/// form the leak subspace.
#[derive(Debug, Clone)]
pub struct Dilation {
    rho: f64,
    /// `Gamma |s>` for each basis state, `None` when mode 0 is occupied.
    up: Vec<Option<usize>>,
    /// `Gamma^{-1} |s>`, `None` when the deepest mode is occupied.
    down: Vec<Option<usize>>,
}

impl Dilation {
    pub fn new(basis: &FockBasis, rho: f64) -> Result<Self> {
        let ladder_rho = basis.ladder().rho();
        if (rho - ladder_rho).abs() > 1e-15 * ladder_rho {
            return Err(Error::ScaleMismatch {
                requested: rho,
                ladder: ladder_rho,
            });
        }
        let modes = basis.modes();
        let mut up = Vec::with_capacity(basis.dim());
        let mut down = Vec::with_capacity(basis.dim());
        for occ in basis.states() {
            up.push(if occ[0] == 0 {
                let mut shifted = occ[1..].to_vec();
                shifted.push(0);
                basis.index_of(&shifted)
            } else {
                None
            });
            down.push(if occ[modes - 1] == 0 {
                let mut shifted = Vec::with_capacity(modes);
                shifted.push(0);
                shifted.extend_from_slice(&occ[..modes - 1]);
                basis.index_of(&shifted)
            } else {
                None
            });
        }
        Ok(Self { rho, up, down })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Index of `Gamma_rho^{-1} |s>`, or `None` for leak states.
    pub fn lower_index(&self, s: usize) -> Option<usize> {
        self.down[s]
    }

    pub fn raise_index(&self, s: usize) -> Option<usize> {
        self.up[s]
    }

    /// True when the deepest mode of state `s` is occupied.
    pub fn is_leak(&self, s: usize) -> bool {
        self.down[s].is_none()
    }

    /// Matrix of `Gamma_rho`.
    pub fn gamma(&self) -> DMatrix<f64> {
        let n = self.up.len();
        let mut m = DMatrix::zeros(n, n);
        for (s, t) in self.up.iter().enumerate() {
            if let Some(t) = *t {
                m[(t, s)] = 1.0;
            }
        }
        m
    }

    /// Matrix of `Gamma_rho^{-1}`; annihilates the leak subspace.
    pub fn gamma_inv(&self) -> DMatrix<f64> {
        let n = self.down.len();
        let mut m = DMatrix::zeros(n, n);
        for (s, t) in self.down.iter().enumerate() {
            if let Some(t) = *t {
                m[(t, s)] = 1.0;
            }
        }
        m
    }

    /// Matrix of `Gamma_{rho^n} = Gamma_rho^n`.
    pub fn gamma_power(&self, n: usize) -> DMatrix<f64> {
        let dim = self.up.len();
        let mut m = DMatrix::zeros(dim, dim);
        for s in 0..dim {
            let mut cur = Some(s);
            for _ in 0..n {
                cur = cur.and_then(|c| self.up[c]);
            }
            if let Some(t) = cur {
                m[(t, s)] = 1.0;
            }
        }
        m
    }

    /// Projector onto states with the deepest mode occupied.
    pub fn leak_projector(&self) -> OperatorMatrix {
        let diag: Vec<f64> = self
            .down
            .iter()
            .map(|t| if t.is_none() { 1.0 } else { 0.0 })
            .collect();
        OperatorMatrix::diagonal(&diag, DomainTag::Full)
    }
}

/// Convenience wrapper matching the operation table: the dilation matrix and
/// its leak projector.
pub fn dilation(basis: &FockBasis, rho: f64) -> Result<(OperatorMatrix, OperatorMatrix)> {
    let d = Dilation::new(basis, rho)?;
    let tag = domain_of(basis);
    Ok((OperatorMatrix::new(d.gamma(), tag), d.leak_projector()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ladder(rho: f64, modes: usize) -> FrequencyLadder {
        FrequencyLadder::new(rho, 1.0, modes).unwrap()
    }

    fn brute_force_count(modes: usize, max_total: usize, cap: usize) -> usize {
        let mut count = 0;
        let total_states = (cap + 1).pow(modes as u32);
        for code in 0..total_states {
            let mut c = code;
            let mut total = 0;
            for _ in 0..modes {
                total += c % (cap + 1);
                c /= cap + 1;
            }
            if total <= max_total {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn basis_dimensions() {
        assert_eq!(build_basis(ladder(0.5, 1), 2, 2).unwrap().dim(), 3);
        assert_eq!(build_basis(ladder(0.5, 2), 1, 2).unwrap().dim(), 3);
        let b = build_basis(ladder(0.5, 3), 2, 2).unwrap();
        assert_eq!(b.dim(), brute_force_count(3, 2, 2));
        assert_eq!(b.dim(), 10);
        for (modes, total, cap) in [(4, 3, 2), (5, 3, 1), (6, 4, 3)] {
            let b = build_basis(ladder(0.5, modes), total, cap).unwrap();
            assert_eq!(b.dim(), brute_force_count(modes, total, cap));
        }
    }

    #[test]
    fn vacuum_first_and_deterministic() {
        let a = build_basis(ladder(0.5, 4), 3, 2).unwrap();
        let b = build_basis(ladder(0.5, 4), 3, 2).unwrap();
        assert_eq!(a.states(), b.states());
        assert!(a.state(0).iter().all(|&n| n == 0));
        assert_eq!(a.hf_eigs()[0], 0.0);
        assert_eq!(a.state(1), &[1, 0, 0, 0]);
    }

    #[test]
    fn dimension_cap() {
        let err = build_basis_with_cap(ladder(0.5, 10), 3, 2, 100).unwrap_err();
        assert!(matches!(err, Error::DimensionOverflow { cap: 100, .. }));
    }

    #[test]
    fn rejects_bad_ladder() {
        assert!(FrequencyLadder::new(0.75, 1.0, 4).is_err());
        assert!(FrequencyLadder::new(0.5, 1.5, 4).is_err());
    }

    #[test]
    fn single_mode_ladder_algebra() {
        let b = build_basis(ladder(0.5, 1), 2, 2).unwrap();
        let ad = creation_op(&b, 0).unwrap().entries;
        let a = annihilation_op(&b, 0).unwrap().entries;
        assert_eq!(ad[(1, 0)], 1.0);
        assert!((ad[(2, 1)] - 2f64.sqrt()).abs() < 1e-15);
        assert!(a.column(0).iter().all(|&x| x == 0.0));
        assert!(creation_op(&b, 1).is_err());
    }

    #[test]
    fn canonical_commutator_below_caps() {
        let b = build_basis(ladder(0.5, 3), 3, 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let a = annihilation_op(&b, i).unwrap().entries;
                let ad = creation_op(&b, j).unwrap().entries;
                let comm = &a * &ad - &ad * &a;
                for s in 0..b.dim() {
                    let occ = b.state(s);
                    let total: usize = occ.iter().map(|&n| n as usize).sum();
                    if occ[j] as usize >= b.max_per_mode() || total >= b.max_total() {
                        continue;
                    }
                    for t in 0..b.dim() {
                        let expect = if i == j && s == t { 1.0 } else { 0.0 };
                        assert!((comm[(t, s)] - expect).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn free_field_eigenvalues() {
        let b = build_basis(ladder(0.5, 3), 2, 2).unwrap();
        let e = |occ: &[u8]| b.hf_eigs()[b.index_of(occ).unwrap()];
        assert_eq!(e(&[0, 0, 0]), 0.0);
        assert_eq!(e(&[0, 1, 0]), 0.5);
        assert_eq!(e(&[2, 0, 0]), 2.0);
        let hf = free_field(&b);
        assert_eq!(hf.entries[(3, 3)], b.hf_eigs()[3]);
    }

    #[test]
    fn projection_onto_red() {
        let b = build_basis(ladder(0.5, 3), 2, 2).unwrap();
        let p = spectral_projection(&b, 0.0, 1.0, DEFAULT_TIE_TOL, TiePolicy::Include).unwrap();
        let i = b.index_of(&[1, 1, 0]).unwrap();
        assert_eq!(p.matrix.entries[(i, i)], 0.0);
        assert_eq!(p.matrix.entries[(0, 0)], 1.0);
        let m = &p.matrix.entries;
        assert_eq!(&(m * m), m);
        assert_eq!(&m.transpose(), m);
        // (1,0,0) and (0,2,0) sit exactly on the boundary
        assert!(!p.ties.is_empty());
        assert!(matches!(
            spectral_projection(&b, 0.0, 1.0, DEFAULT_TIE_TOL, TiePolicy::Reject),
            Err(Error::BoundaryTie { .. })
        ));
    }

    #[test]
    fn cutoff_partition_of_unity() {
        let pair = CutoffPair::default();
        for k in 0..=2000 {
            let x = -0.5 + 2.0 * k as f64 / 2000.0;
            let (c, cb) = (pair.chi(x), pair.chibar(x));
            assert!((c * c + cb * cb - 1.0).abs() <= 1e-14);
            if x <= 0.75 {
                assert_eq!(c, 1.0);
            }
            if x >= 1.0 {
                assert_eq!(c, 0.0);
            }
            assert!(pair.chi(x + 1e-3) <= c);
        }
    }

    #[test]
    fn cutoff_operators() {
        let rho = 0.5;
        let b = build_basis(ladder(rho, 5), 3, 2).unwrap();
        let pair = CutoffPair::default();
        let (chi_rho, _) = cutoff_op(&b, &pair, rho).unwrap();
        let (chi, _) = cutoff_op(&b, &pair, 1.0).unwrap();
        assert_eq!(chi_rho.entries[(0, 0)], 1.0);
        for (i, &e) in b.hf_eigs().iter().enumerate() {
            if e >= rho {
                assert_eq!(chi_rho.entries[(i, i)], 0.0);
            }
        }
        assert_eq!(&chi_rho.entries * &chi.entries, chi_rho.entries);
        for t in [1.0, rho, rho * rho, rho.powi(3)] {
            let (c, cb) = cutoff_op(&b, &pair, t).unwrap();
            let sum = &c.entries * &c.entries + &cb.entries * &cb.entries;
            let id = DMatrix::<f64>::identity(b.dim(), b.dim());
            assert!((sum - id).abs().max() <= 1e-14);
        }
        assert!(cutoff_op(&b, &pair, 0.0).is_err());
    }

    #[test]
    fn dilation_shifts_modes() {
        let b = build_basis(ladder(0.5, 3), 2, 2).unwrap();
        let d = Dilation::new(&b, 0.5).unwrap();
        assert_eq!(d.raise_index(0), Some(0));
        assert_eq!(d.lower_index(0), Some(0));
        let one_in_1 = b.index_of(&[0, 1, 0]).unwrap();
        let one_in_2 = b.index_of(&[0, 0, 1]).unwrap();
        assert_eq!(d.lower_index(one_in_1), Some(one_in_2));
        assert_eq!(b.hf_eigs()[one_in_2], 0.25);
        assert!(d.is_leak(one_in_2));
        let leak = d.leak_projector();
        assert_eq!(leak.entries[(one_in_2, one_in_2)], 1.0);
        let g_inv = d.gamma_inv();
        assert_eq!(g_inv.column(one_in_2).norm(), 0.0);
        assert!(matches!(
            Dilation::new(&b, 0.4),
            Err(Error::ScaleMismatch { .. })
        ));
    }

    #[test]
    fn dilation_scaling_on_non_leaking_subspace() {
        let rho = 0.5;
        let b = build_basis(ladder(rho, 6), 3, 2).unwrap();
        let d = Dilation::new(&b, rho).unwrap();
        let g = d.gamma();
        let hf = free_field(&b).entries;
        let keep = DMatrix::<f64>::identity(b.dim(), b.dim()) - d.leak_projector().entries;
        let id_part = &g * g.transpose() - &keep;
        assert!((&id_part * &keep).abs().max() <= 1e-14);
        let scaled = (&g * &hf * g.transpose() - &hf * rho) * &keep;
        assert!(scaled.abs().max() <= 1e-14 * hf.abs().max());
    }
}
