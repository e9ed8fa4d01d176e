//! Renormalization iteration `H_{n+1} = rho^{-1} Gamma F_n Gamma^{-1}` on
//! `H_red`, the splitting `H_n = T_n(H_f) + W_n`, and the spectral tower.
//!
//! Spectral parameters are tracked in the chart `zeta_1 = z` (physical
//! energy) and `zeta_{n+1} = -rho^{-1} T_n[z](0)`. The level-`n` domain is
//! `|T_n(0)| <= rho/2`, i.e. `|zeta_{n+1}| <= 1/2`.
//!
//! States of level `n + 1` whose deepest mode is occupied have no preimage
//! under the dilation. They are kept decoupled, with the diagonal filled by
//! the interpolated `T` of the remaining block.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::feshbach::smooth_feshbach;
use crate::fock_space::{CutoffPair, Dilation, FockBasis};
use crate::interp::Pchip;
use crate::linalg::{op_norm, submatrix};

/// Energies closer than this belong to the same `H_f` eigenspace.
pub const ENERGY_CLUSTER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `zeta_{n+1} = -rho^{-1} T_n(0)`
    Minus,
    /// `zeta_{n+1} = +rho^{-1} T_n(0)`
    Plus,
}

impl SignConvention {
    fn factor(self) -> f64 {
        match self {
            SignConvention::Minus => -1.0,
            SignConvention::Plus => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub rho: f64,
    /// Number of renormalization steps; levels run from 1 to `n_max + 1`.
    pub n_max: usize,
    pub root_tol: f64,
    pub z_interval: (f64, f64),
    pub leak_budget: f64,
    pub sign: SignConvention,
    pub cutoff: CutoffPair,
    /// Evaluation budget of one root solve.
    pub max_evaluations: usize,
    /// Sample points of the monotonicity check.
    pub monotone_samples: usize,
    /// Enforce `rho < 1/2`.
    pub appendix_mode: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            n_max: 6,
            root_tol: 1e-9,
            z_interval: (-0.5, 0.5),
            leak_budget: 1e-2,
            sign: SignConvention::Minus,
            cutoff: CutoffPair::default(),
            max_evaluations: 60,
            monotone_samples: 9,
            appendix_mode: false,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self, modes: usize) -> Result<()> {
        let limit = if self.appendix_mode { 0.5 } else { 0.75 };
        if !(self.rho > 0.0 && self.rho < limit) {
            return Err(invalid("rho", format!("{} not in (0, {limit})", self.rho)));
        }
        if self.n_max + 2 > modes {
            return Err(invalid(
                "n_max",
                format!("{} exceeds modes - 2 = {}", self.n_max, modes as i64 - 2),
            ));
        }
        if !(self.root_tol > 0.0) {
            return Err(invalid("root_tol", "must be positive"));
        }
        if !(self.leak_budget > 0.0) {
            return Err(invalid("leak_budget", "must be positive"));
        }
        let (lo, hi) = self.z_interval;
        if !(lo < hi) {
            return Err(invalid("z_interval", format!("[{lo}, {hi}] is empty")));
        }
        if self.monotone_samples < 2 || self.max_evaluations < 2 {
            return Err(invalid("monotone_samples", "need at least two samples"));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.n_max + 1
    }
}

/// `T` as values on the distinct `H_f` eigenvalues plus a monotone cubic
/// interpolant on `[0, 1]`.
#[derive(Debug, Clone, Serialize)]
pub struct TFunction {
    energies: Vec<f64>,
    values: Vec<f64>,
    interp: Pchip,
    /// Eigenspace index of every basis state.
    cluster_of: Vec<usize>,
}

impl TFunction {
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.interp.eval(r)
    }

    pub fn derivative(&self, r: f64) -> f64 {
        self.interp.derivative(r)
    }

    pub fn at_zero(&self) -> f64 {
        self.interp.eval(0.0)
    }

    /// `sup_{r in [0,1]} |T'(r) - 1|`.
    pub fn slope_deviation(&self) -> f64 {
        self.interp.sup_derivative_deviation(1.0, 0.0, 1.0)
    }

    /// `T(H_f)` on the basis states.
    pub fn diag(&self) -> Vec<f64> {
        self.cluster_of.iter().map(|&c| self.values[c]).collect()
    }
}

/// Group equal energies; returns the sorted distinct values and the group of each entry.
fn energy_clusters(energies: &[f64], subset: &[usize]) -> (Vec<f64>, Vec<Option<usize>>) {
    let mut order: Vec<usize> = subset.to_vec();
    order.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]));
    let mut distinct: Vec<f64> = Vec::new();
    let mut cluster_of = vec![None; energies.len()];
    for &i in &order {
        let e = energies[i];
        match distinct.last() {
            Some(&last) if e - last <= ENERGY_CLUSTER_TOL => {}
            _ => distinct.push(e),
        }
        cluster_of[i] = Some(distinct.len() - 1);
    }
    (distinct, cluster_of)
}

/// Eigenspace averages of the diagonal over `subset`, interpolated on `[0, 1]`.
fn t_from_subset(h: &DMatrix<f64>, energies: &[f64], subset: &[usize]) -> TFunction {
    let (distinct, cluster_of) = energy_clusters(energies, subset);
    let mut sums = vec![0.0; distinct.len()];
    let mut counts = vec![0usize; distinct.len()];
    for &i in subset {
        let c = cluster_of[i].expect("subset entries are clustered");
        sums[c] += h[(i, i)];
        counts[c] += 1;
    }
    let values: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let interp = Pchip::new(distinct.clone(), values.clone());
    // states outside the subset take the nearest cluster on the same energy, if any
    let cluster_of = energies
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            cluster_of[i].unwrap_or_else(|| {
                distinct
                    .iter()
                    .position(|&d| (d - e).abs() <= ENERGY_CLUSTER_TOL)
                    .unwrap_or(usize::MAX)
            })
        })
        .collect();
    TFunction {
        energies: distinct,
        values,
        interp,
        cluster_of,
    }
}

/// Conditional-expectation splitting `H = T(H_f) + W`.
pub fn split_t_w(h: &DMatrix<f64>, basis: &FockBasis) -> (TFunction, DMatrix<f64>) {
    let all: Vec<usize> = (0..basis.dim()).collect();
    let t = t_from_subset(h, basis.hf_eigs(), &all);
    let mut w = h.clone();
    for (i, v) in t.diag().into_iter().enumerate() {
        w[(i, i)] -= v;
    }
    (t, w)
}

#[derive(Debug, Clone, Serialize)]
pub struct Observables {
    pub w_norm: f64,
    /// `|T_n(0) + zeta_n|`
    pub t0_plus_zeta: f64,
    pub slope_dev: f64,
    /// `||P_leak (F_n - T_n)||`; absent on a level that was not stepped.
    pub leak: Option<f64>,
    pub hbar_condition: Option<f64>,
    pub reconstruction_residual: f64,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub n: usize,
    /// Spectral parameter of this level in the tower chart.
    pub zeta: f64,
    pub h: DMatrix<f64>,
    pub t: TFunction,
    pub w: DMatrix<f64>,
    pub obs: Observables,
}

impl FlowState {
    fn from_matrix(n: usize, zeta: f64, h: DMatrix<f64>, basis: &FockBasis) -> Self {
        let (t, w) = split_t_w(&h, basis);
        let mut recon = w.clone();
        for (i, v) in t.diag().into_iter().enumerate() {
            recon[(i, i)] += v;
        }
        let scale = h.abs().max().max(f64::MIN_POSITIVE);
        let obs = Observables {
            w_norm: op_norm(&w),
            t0_plus_zeta: (t.at_zero() + zeta).abs(),
            slope_dev: t.slope_deviation(),
            leak: None,
            hbar_condition: None,
            reconstruction_residual: (&recon - &h).abs().max() / scale,
        };
        Self {
            n,
            zeta,
            h,
            t,
            w,
            obs,
        }
    }
}

/// Drives the flow on a fixed reduced basis.
#[derive(Debug, Clone)]
pub struct FlowEngine {
    basis: FockBasis,
    dilation: Dilation,
    cfg: FlowConfig,
    leak: Vec<usize>,
    kept: Vec<usize>,
}

impl FlowEngine {
    pub fn new(basis: FockBasis, cfg: FlowConfig) -> Result<Self> {
        cfg.validate(basis.modes())?;
        let dilation = Dilation::new(&basis, cfg.rho)?;
        let (leak, kept): (Vec<usize>, Vec<usize>) =
            (0..basis.dim()).partition(|&s| dilation.is_leak(s));
        Ok(Self {
            basis,
            dilation,
            cfg,
            leak,
            kept,
        })
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn initial_state(&self, h1: DMatrix<f64>, z: f64) -> Result<FlowState> {
        if h1.nrows() != self.basis.dim() || h1.ncols() != self.basis.dim() {
            return Err(invalid("H_1", "dimension does not match the reduced basis"));
        }
        Ok(FlowState::from_matrix(1, z, h1, &self.basis))
    }

    /// Next chart value `zeta_{n+1}` from `T_n(0)`.
    pub fn next_zeta(&self, t0: f64) -> f64 {
        self.cfg.sign.factor() * t0 / self.cfg.rho
    }

    /// One renormalization step. Records leak and condition on `state`.
    pub fn step(&self, state: &mut FlowState) -> Result<FlowState> {
        let rho = self.cfg.rho;
        let t_diag = state.t.diag();
        let fes = smooth_feshbach(&t_diag, &state.w, &self.cfg.cutoff, rho, &self.basis)?;
        let f = fes.f.entries;
        let mut dev = f.clone();
        for (i, v) in t_diag.iter().enumerate() {
            dev[(i, i)] -= v;
        }
        let all: Vec<usize> = (0..self.basis.dim()).collect();
        let leak = if self.leak.is_empty() {
            0.0
        } else {
            op_norm(&submatrix(&dev, &self.leak, &all))
        };
        state.obs.leak = Some(leak);
        state.obs.hbar_condition = Some(fes.hbar_condition);
        if leak > self.cfg.leak_budget {
            return Err(Error::FlowTruncated {
                level: state.n,
                leak,
                budget: self.cfg.leak_budget,
            });
        }

        let dim = self.basis.dim();
        let mut next = DMatrix::zeros(dim, dim);
        for &s in &self.kept {
            let ds = self
                .dilation
                .lower_index(s)
                .expect("kept states have a preimage");
            for &t in &self.kept {
                let dt = self
                    .dilation
                    .lower_index(t)
                    .expect("kept states have a preimage");
                next[(s, t)] = f[(ds, dt)] / rho;
            }
        }
        if !self.leak.is_empty() {
            let t_q = t_from_subset(&next, self.basis.hf_eigs(), &self.kept);
            for &s in &self.leak {
                next[(s, s)] = t_q.eval(self.basis.hf_eigs()[s]);
            }
        }
        let zeta = self.next_zeta(state.t.at_zero());
        Ok(FlowState::from_matrix(state.n + 1, zeta, next, &self.basis))
    }

    /// States `1..=levels`, stepping each of them (including the last).
    pub fn run(&self, h1: DMatrix<f64>, z: f64, levels: usize) -> Result<Vec<FlowState>> {
        let mut states = vec![self.initial_state(h1, z)?];
        for _ in 1..levels {
            let last = states.last_mut().expect("non-empty");
            let next = self.step(last)?;
            states.push(next);
        }
        let last = states.last_mut().expect("non-empty");
        self.step(last)?;
        Ok(states)
    }
}

/// Per-`z` cache of a partially evaluated flow.
struct CachedRun {
    /// `T_k(0)` for `k = 1..=t0.len()`.
    t0: Vec<f64>,
    last: Option<FlowState>,
    failure: Option<Error>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RootSolve {
    pub z: f64,
    pub residual: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub m: usize,
    /// `e_{(n,m)}` for `n = 1..=m`.
    pub e: Vec<f64>,
    /// `|e_{(1,m)} - e_{(1,m-1)}|`
    pub step: Option<f64>,
    pub evaluations: usize,
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct TowerResult {
    /// Physical limit `e_{(1,inf)}`.
    pub z0: f64,
    /// Chart values `z_n = zeta_n(z0)` for `n = 1..=levels`.
    pub tower: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub convention: SignConvention,
    pub flow_evaluations: usize,
}

/// Nested, memoized evaluation of the spectral tower.
pub struct Tower<'a, B>
where
    B: Fn(f64) -> Result<DMatrix<f64>>,
{
    engine: &'a FlowEngine,
    build: B,
    memo: RefCell<HashMap<u64, CachedRun>>,
    evaluations: RefCell<usize>,
}

impl<'a, B> Tower<'a, B>
where
    B: Fn(f64) -> Result<DMatrix<f64>>,
{
    /// `build(z)` returns `H_1(z)` on the reduced basis of `engine`.
    pub fn new(engine: &'a FlowEngine, build: B) -> Self {
        Self {
            engine,
            build,
            memo: RefCell::new(HashMap::new()),
            evaluations: RefCell::new(0),
        }
    }

    pub fn flow_evaluations(&self) -> usize {
        *self.evaluations.borrow()
    }

    /// `T_k[z](0)`, extending the cached flow at `z` as needed.
    pub fn t_at_zero(&self, k: usize, z: f64) -> Result<f64> {
        let mut memo = self.memo.borrow_mut();
        let entry = match memo.entry(z.to_bits()) {
            std::collections::hash_map::Entry::Occupied(o) => o.into_mut(),
            std::collections::hash_map::Entry::Vacant(v) => {
                *self.evaluations.borrow_mut() += 1;
                let run = (self.build)(z).and_then(|h1| self.engine.initial_state(h1, z));
                match run {
                    Ok(s) => v.insert(CachedRun {
                        t0: vec![s.t.at_zero()],
                        last: Some(s),
                        failure: None,
                    }),
                    Err(e) => v.insert(CachedRun {
                        t0: Vec::new(),
                        last: None,
                        failure: Some(e),
                    }),
                }
            }
        };
        while entry.t0.len() < k {
            if let Some(e) = &entry.failure {
                return Err(e.clone());
            }
            let mut last = entry.last.take().expect("present without failure");
            match self.engine.step(&mut last) {
                Ok(next) => {
                    entry.t0.push(next.t.at_zero());
                    entry.last = Some(next);
                }
                Err(e) => entry.failure = Some(e),
            }
        }
        Ok(entry.t0[k - 1])
    }

    /// Chart value `zeta_k(z)`.
    pub fn zeta(&self, k: usize, z: f64) -> Result<f64> {
        assert!(k >= 1, "levels start at 1");
        if k == 1 {
            return Ok(z);
        }
        Ok(self.engine.next_zeta(self.t_at_zero(k - 1, z)?))
    }

    /// Level-`k` map `z -> zeta_{k+1}(z)` with the domain check `|T_k(0)| <= rho/2`.
    pub fn e_map(&self, k: usize, z: f64) -> Result<f64> {
        let t0 = self.t_at_zero(k, z)?;
        let bound = self.engine.cfg.rho / 2.0;
        if t0.abs() > bound {
            return Err(Error::OutOfPolydisc {
                value: t0.abs(),
                bound,
            });
        }
        Ok(self.engine.next_zeta(t0))
    }

    /// Solve `zeta_{k+1}(z) = target` for `z` in `[lo, hi]`.
    pub fn j_inverse(&self, k: usize, target: f64, lo: f64, hi: f64) -> Result<RootSolve> {
        let cfg = &self.engine.cfg;
        let f = |z: f64| -> Result<f64> { Ok(self.zeta(k + 1, z)? - target) };
        let samples = cfg.monotone_samples;
        let mut values = Vec::with_capacity(samples);
        for i in 0..samples {
            let z = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
            values.push(f(z)?);
        }
        let increasing = values.windows(2).all(|w| w[1] > w[0]);
        let decreasing = values.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            return Err(Error::NonMonotone { level: k });
        }
        let mut evaluations = samples;
        let (mut a, mut b) = (lo, hi);
        let (mut fa, mut fb) = (values[0], values[samples - 1]);
        // narrow to the sampled sub-bracket first
        for i in 1..samples {
            if values[i - 1] * values[i] <= 0.0 {
                a = lo + (hi - lo) * (i - 1) as f64 / (samples - 1) as f64;
                b = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
                fa = values[i - 1];
                fb = values[i];
                break;
            }
        }
        if fa * fb > 0.0 {
            return Err(Error::NoBracket { level: k, lo, hi });
        }
        for (z, v) in [(a, fa), (b, fb)] {
            if v.abs() <= cfg.root_tol {
                return Ok(RootSolve {
                    z,
                    residual: v,
                    evaluations,
                });
            }
        }
        // Illinois variant of regula falsi
        while evaluations < cfg.max_evaluations {
            let c = (a * fb - b * fa) / (fb - fa);
            let fc = f(c)?;
            evaluations += 1;
            if fc.abs() <= cfg.root_tol || (b - a).abs() <= 4.0 * f64::EPSILON * c.abs().max(1.0) {
                return Ok(RootSolve {
                    z: c,
                    residual: fc,
                    evaluations,
                });
            }
            if fc * fb < 0.0 {
                a = b;
                fa = fb;
            } else {
                fa /= 2.0;
            }
            b = c;
            fb = fc;
        }
        Err(Error::RootNotConverged { evaluations })
    }

    /// Sub-interval of `[lo, hi]` on which `|zeta_{k+1}| <= 1/2`.
    fn domain(&self, k: usize, lo: f64, hi: f64) -> Result<(f64, f64)> {
        let mut ends = [lo, hi];
        let (zl, zh) = (self.zeta(k + 1, lo)?, self.zeta(k + 1, hi)?);
        let increasing = zh > zl;
        for (slot, target) in [(0usize, -0.5), (1, 0.5)] {
            let target = if increasing { target } else { -target };
            let end_value = if slot == 0 { zl } else { zh };
            let outside = if slot == 0 {
                if increasing {
                    end_value < target
                } else {
                    end_value > target
                }
            } else if increasing {
                end_value > target
            } else {
                end_value < target
            };
            if outside {
                ends[slot] = self.j_inverse(k, target, lo, hi)?.z;
            }
        }
        Ok((ends[0], ends[1]))
    }

    /// `e_{(1,m)}` for increasing `m` until successive values agree to `root_tol`.
    pub fn e_limit(&self) -> Result<TowerResult> {
        let cfg = &self.engine.cfg;
        let levels = cfg.levels();
        let (mut lo, mut hi) = cfg.z_interval;
        let mut trace: Vec<TraceRow> = Vec::new();
        let mut converged = false;
        let mut z0 = f64::NAN;
        for m in 1..=levels {
            let solve = self.j_inverse(m, 0.0, lo, hi)?;
            z0 = solve.z;
            let mut e = Vec::with_capacity(m);
            for n in 1..=m {
                e.push(self.zeta(n, z0)?);
            }
            let step = trace.last().map(|prev| (prev.e[0] - z0).abs());
            trace.push(TraceRow {
                m,
                e,
                step,
                evaluations: solve.evaluations,
                bracket: (lo, hi),
            });
            if step.is_some_and(|s| s < cfg.root_tol) {
                converged = true;
                break;
            }
            if m < levels {
                (lo, hi) = self.domain(m, lo, hi)?;
            }
        }
        let mut tower = Vec::with_capacity(levels);
        for n in 1..=levels {
            tower.push(self.zeta(n, z0)?);
        }
        Ok(TowerResult {
            z0,
            tower,
            trace,
            converged,
            convention: cfg.sign,
            flow_evaluations: self.flow_evaluations(),
        })
    }
}

/// Least-squares geometric ratio of a positive sequence (`None` if too short
/// or if an entry vanishes).
pub fn geometric_ratio(values: &[f64]) -> Option<f64> {
    if values.len() < 2 || values.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let n = values.len() as f64;
    let xs: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some((sxy / sxx).exp())
}

/// Flow observables as CSV, one row per level.
pub fn flow_csv(states: &[FlowState]) -> String {
    let mut out = String::from("n,W_norm,T0_plus_z,slope_dev,leak,cond\n");
    for s in states {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{},{}\n",
            s.n,
            s.obs.w_norm,
            s.obs.t0_plus_zeta,
            s.obs.slope_dev,
            opt(s.obs.leak),
            opt(s.obs.hbar_condition)
        ));
    }
    out
}
