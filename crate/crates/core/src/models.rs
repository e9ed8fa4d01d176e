//! Spin-boson Hamiltonian on a truncated Fock space, its reduction to
//! `H_red`, and a dense diagonalization oracle.
//!
//! The two-level system is ordered spin-down first, so indices
//! `0..dim_down` are `|down> (x) |s>` and the spin-up block follows.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::feshbach::{sharp_feshbach_on, FeshbachResult};
use crate::fock_space::{build_basis, FockBasis, FrequencyLadder, DEFAULT_TIE_TOL};
use crate::linalg::{op_norm, sorted_symmetric_eigen, submatrix};

/// Largest dimension accepted by [`exact_diag_oracle`] by default.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Default bound on `|g|` for flow runs.
pub const DEFAULT_G_MAX: f64 = 0.2;

/// Radial form factor `f(|k|)` on the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FormFactor {
    Constant { value: f64 },
    Gaussian { width: f64 },
}

impl Default for FormFactor {
    fn default() -> Self {
        FormFactor::Constant { value: 1.0 }
    }
}

impl FormFactor {
    pub fn eval(&self, k: f64) -> f64 {
        match *self {
            FormFactor::Constant { value } => value,
            FormFactor::Gaussian { width } => (-k * k / (2.0 * width * width)).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinBosonParams {
    pub g: f64,
    pub form_factor: FormFactor,
    pub ladder: FrequencyLadder,
    pub max_total: usize,
    pub max_per_mode: usize,
    /// Extra bosons allowed in the spin-up sector.
    pub up_extra: usize,
    pub g_max: f64,
}

impl SpinBosonParams {
    pub fn new(g: f64, ladder: FrequencyLadder, max_total: usize, max_per_mode: usize) -> Self {
        Self {
            g,
            form_factor: FormFactor::default(),
            ladder,
            max_total,
            max_per_mode,
            up_extra: 0,
            g_max: DEFAULT_G_MAX,
        }
    }

    /// Reject couplings above `g_max`; only flow runs call this.
    pub fn check_flow_coupling(&self) -> Result<()> {
        if self.g.abs() > self.g_max {
            return Err(invalid(
                "g",
                format!("|g| = {} exceeds g_max = {}", self.g.abs(), self.g_max),
            ));
        }
        Ok(())
    }
}

/// `g_j = (int_{shell_j} |f(k)|^2 / |k| d^3k)^{1/2}`.
pub fn mode_coupling_weights(params: &SpinBosonParams) -> Vec<f64> {
    let ladder = &params.ladder;
    (0..ladder.modes())
        .map(|j| {
            let (inner, outer) = ladder.shell(j);
            let sq = match params.form_factor {
                FormFactor::Constant { value } => {
                    2.0 * PI * value * value * (outer * outer - inner * inner)
                }
                form => {
                    // 4 pi int k |f(k)|^2 dk, Simpson with 512 panels
                    let panels = 512;
                    let h = (outer - inner) / panels as f64;
                    let integrand = |k: f64| 4.0 * PI * k * form.eval(k).powi(2);
                    let mut sum = integrand(inner) + integrand(outer);
                    for i in 1..panels {
                        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                        sum += w * integrand(inner + i as f64 * h);
                    }
                    sum * h / 3.0
                }
            };
            sq.sqrt()
        })
        .collect()
}

/// The spin-resolved truncated space.
#[derive(Debug, Clone)]
pub struct SpinBosonSpace {
    pub down: FockBasis,
    pub up: FockBasis,
}

impl SpinBosonSpace {
    pub fn new(params: &SpinBosonParams) -> Result<Self> {
        let down = build_basis(params.ladder, params.max_total, params.max_per_mode)?;
        let up = build_basis(
            params.ladder,
            params.max_total + params.up_extra,
            params.max_per_mode + params.up_extra,
        )?;
        Ok(Self { down, up })
    }

    pub fn dim(&self) -> usize {
        self.down.dim() + self.up.dim()
    }

    /// The reduced space `H_red` carried by the spin-down sector.
    pub fn red(&self) -> FockBasis {
        self.down.reduced(DEFAULT_TIE_TOL).0
    }

    /// Indices of `P = P_down (x) 1_[0,1](H_f)`, in the order of [`Self::red`].
    pub fn reduction_indices(&self) -> Vec<usize> {
        self.down
            .hf_eigs()
            .iter()
            .enumerate()
            .filter(|(_, &e)| e <= 1.0 + DEFAULT_TIE_TOL)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `H = (sigma_z + 1) (x) 1 + 1 (x) H_f + g sigma_x (x) sum_j g_j (a_j + a_j^dagger)`.
pub fn build_spin_boson(params: &SpinBosonParams, space: &SpinBosonSpace) -> Result<DMatrix<f64>> {
    if space.down.ladder() != &params.ladder {
        return Err(invalid("basis", "not built on the model ladder"));
    }
    let (nd, nu) = (space.down.dim(), space.up.dim());
    let mut h = DMatrix::zeros(nd + nu, nd + nu);
    for (i, &e) in space.down.hf_eigs().iter().enumerate() {
        h[(i, i)] = e;
    }
    for (i, &e) in space.up.hf_eigs().iter().enumerate() {
        h[(nd + i, nd + i)] = 2.0 + e;
    }
    let weights = mode_coupling_weights(params);
    for (s, occ) in space.down.states().iter().enumerate() {
        for (j, &gj) in weights.iter().enumerate() {
            let c = params.g * gj;
            if c == 0.0 {
                continue;
            }
            let n = occ[j] as usize;
            let mut target = occ.clone();
            target[j] = (n + 1) as u8;
            if n < space.up.max_per_mode() {
                if let Some(u) = space.up.index_of(&target) {
                    let v = c * ((n + 1) as f64).sqrt();
                    h[(nd + u, s)] += v;
                    h[(s, nd + u)] += v;
                }
            }
            if n > 0 {
                target[j] = (n - 1) as u8;
                if let Some(u) = space.up.index_of(&target) {
                    let v = c * (n as f64).sqrt();
                    h[(nd + u, s)] += v;
                    h[(s, nd + u)] += v;
                }
            }
        }
    }
    Ok(h)
}

/// Level-one operator `H_1(z) = F_P(H - z)` on `H_red`.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub h1: DMatrix<f64>,
    pub feshbach: FeshbachResult,
}

/// Sharp Feshbach reduction onto spin-down `H_red`.
pub fn initial_reduction(h: &DMatrix<f64>, z: f64, space: &SpinBosonSpace) -> Result<Reduction> {
    if h.nrows() != space.dim() {
        return Err(invalid(
            "H",
            "dimension does not match the spin-boson space",
        ));
    }
    let keep = space.reduction_indices();
    let feshbach = sharp_feshbach_on(h, &keep, z)?;
    Ok(Reduction {
        h1: feshbach.f.entries.clone(),
        feshbach,
    })
}

/// `H_1(z)` through a cached eigen-decomposition of the complement block,
/// `F = PHP - z - C^T (Lambda - z)^{-1} C` with `C = V^T Pbar H P`.
#[derive(Debug, Clone)]
pub struct CachedReduction {
    php: DMatrix<f64>,
    lambda: Vec<f64>,
    c: DMatrix<f64>,
}

impl CachedReduction {
    pub fn new(h: &DMatrix<f64>, space: &SpinBosonSpace) -> Result<Self> {
        if h.nrows() != space.dim() {
            return Err(invalid(
                "H",
                "dimension does not match the spin-boson space",
            ));
        }
        let keep = space.reduction_indices();
        let mut in_p = vec![false; h.nrows()];
        keep.iter().for_each(|&i| in_p[i] = true);
        let comp: Vec<usize> = (0..h.nrows()).filter(|&i| !in_p[i]).collect();
        let (lambda, v) = sorted_symmetric_eigen(&submatrix(h, &comp, &comp));
        let c = v.transpose() * submatrix(h, &comp, &keep);
        Ok(Self {
            php: submatrix(h, &keep, &keep),
            lambda,
            c,
        })
    }

    pub fn h1(&self, z: f64) -> Result<DMatrix<f64>> {
        let shifted: Vec<f64> = self.lambda.iter().map(|l| l - z).collect();
        let lo = shifted
            .iter()
            .map(|x| x.abs())
            .fold(f64::INFINITY, f64::min);
        let hi = shifted.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if !shifted.is_empty() && !(hi / lo <= crate::feshbach::CONDITION_LIMIT) {
            return Err(Error::NotInvertible { condition: hi / lo });
        }
        let mut scaled = self.c.clone();
        for (k, x) in shifted.iter().enumerate() {
            scaled.row_mut(k).scale_mut(1.0 / x);
        }
        let mut f = &self.php - self.c.transpose() * scaled;
        for k in 0..f.nrows() {
            f[(k, k)] -= z;
        }
        // symmetrize away rounding
        let ft = f.transpose();
        Ok((f + ft) * 0.5)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub lowest: Vec<f64>,
    pub ground_energy: f64,
    pub ground_multiplicity: usize,
    /// Distance from the ground cluster to the next eigenvalue.
    pub gap: Option<f64>,
}

pub fn exact_diag_oracle(h: &DMatrix<f64>, k: usize) -> Result<OracleResult> {
    exact_diag_oracle_with_cap(h, k, DEFAULT_DENSE_CAP)
}

pub fn exact_diag_oracle_with_cap(h: &DMatrix<f64>, k: usize, cap: usize) -> Result<OracleResult> {
    let dim = h.nrows();
    if dim > cap {
        return Err(Error::DenseCapExceeded { dim, cap });
    }
    if dim == 0 {
        return Err(invalid("H", "empty matrix"));
    }
    let (eigs, _) = sorted_symmetric_eigen(h);
    let threshold = 1e-10 * op_norm(h).max(f64::MIN_POSITIVE);
    let ground = eigs[0];
    let multiplicity = eigs
        .iter()
        .take_while(|&&e| e - ground <= threshold)
        .count();
    Ok(OracleResult {
        lowest: eigs.iter().take(k).copied().collect(),
        ground_energy: ground,
        ground_multiplicity: multiplicity,
        gap: eigs.get(multiplicity).map(|e| e - ground),
    })
}

/// Bundle of a spin-boson instance ready for the flow.
#[derive(Debug, Clone)]
pub struct SpinBosonModel {
    pub params: SpinBosonParams,
    pub space: SpinBosonSpace,
    pub hamiltonian: DMatrix<f64>,
    reduction: CachedReduction,
}

impl SpinBosonModel {
    pub fn new(params: SpinBosonParams) -> Result<Self> {
        let space = SpinBosonSpace::new(&params)?;
        let hamiltonian = build_spin_boson(&params, &space)?;
        let reduction = CachedReduction::new(&hamiltonian, &space)?;
        Ok(Self {
            params,
            space,
            hamiltonian,
            reduction,
        })
    }

    /// `H_1(z)` via the cached complement spectrum.
    pub fn reduce(&self, z: f64) -> Result<DMatrix<f64>> {
        self.reduction.h1(z)
    }

    /// `H_1(z)` via the generic sharp Feshbach map.
    pub fn reduce_direct(&self, z: f64) -> Result<DMatrix<f64>> {
        Ok(initial_reduction(&self.hamiltonian, z, &self.space)?.h1)
    }

    pub fn oracle(&self, k: usize) -> Result<OracleResult> {
        exact_diag_oracle(&self.hamiltonian, k)
    }
}
