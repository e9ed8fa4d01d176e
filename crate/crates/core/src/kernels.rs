//! Graded symmetric kernels, their weighted norms and Wick quantization.
//!
//! A kernel `w_{m,n}[r; k_1..k_m, k~_1..k~_n]` is sampled on a uniform grid
//! of `r in [0, 1]` and on one radial node per ladder shell for every
//! momentum argument. Between grid nodes the `r`-dependence is linear, so
//! suprema over `r` are attained on the grid.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock_space::{DomainTag, FockBasis, FrequencyLadder, OperatorMatrix};

/// Number of `r` nodes used when none is specified.
pub const DEFAULT_R_NODES: usize = 33;

/// Step for central differences when no analytic derivative is given.
pub const FD_STEP: f64 = 1.0 / 64.0;

/// Tolerance used when deciding whether a state lies in `H_red`.
const RED_TOL: f64 = 1e-12;

pub fn uniform_r_grid(nodes: usize) -> Vec<f64> {
    assert!(nodes >= 2, "an r grid needs both endpoints");
    (0..nodes).map(|k| k as f64 / (nodes - 1) as f64).collect()
}

fn check_r_grid(r: &[f64]) -> Result<()> {
    if r.len() < 2 || r[0] != 0.0 || (r[r.len() - 1] - 1.0).abs() > 1e-15 {
        return Err(Error::MalformedKernel(
            "r grid must run from 0 to 1 with at least two nodes".into(),
        ));
    }
    if !r.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::MalformedKernel("r grid must increase".into()));
    }
    Ok(())
}

/// Piecewise-linear evaluation on a grid, clamped to its ends.
fn lerp(r_grid: &[f64], values: impl Fn(usize) -> f64, r: f64) -> f64 {
    let n = r_grid.len();
    if r <= r_grid[0] {
        return values(0);
    }
    if r >= r_grid[n - 1] {
        return values(n - 1);
    }
    let k = r_grid.partition_point(|&x| x <= r) - 1;
    let s = (r - r_grid[k]) / (r_grid[k + 1] - r_grid[k]);
    values(k) * (1.0 - s) + values(k + 1) * s
}

/// `int_shell d^3k / |k|^{3 + 2 mu}` in closed form.
pub fn shell_weight(ladder: &FrequencyLadder, j: usize, mu: f64) -> f64 {
    let (inner, outer) = ladder.shell(j);
    (4.0 * PI / (2.0 * mu)) * (inner.powf(-2.0 * mu) - outer.powf(-2.0 * mu))
}

/// `Phi_j = (int_shell d^3k / |k|)^{1/2}`, the quadrature factor of one field leg.
pub fn leg_factor(ladder: &FrequencyLadder, j: usize) -> f64 {
    let (inner, outer) = ladder.shell(j);
    (2.0 * PI * (outer * outer - inner * inner)).sqrt()
}

/// Root-mean-square of `f` over shell `j` in the measure `d^3k / |k|^{3+2mu}`.
pub fn shell_rms(ladder: &FrequencyLadder, j: usize, mu: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (inner, outer) = ladder.shell(j);
    // Simpson's rule in u = ln k, where the measure becomes 4 pi k^{-2 mu} du
    let panels = 64;
    let (a, b) = (inner.ln(), outer.ln());
    let h = (b - a) / panels as f64;
    let integrand = |u: f64| {
        let k = u.exp();
        4.0 * PI * f(k).powi(2) * k.powf(-2.0 * mu)
    };
    let mut sum = integrand(a) + integrand(b);
    for i in 1..panels {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += weight * integrand(a + i as f64 * h);
    }
    let integral = sum * h / 3.0;
    (integral / shell_weight(ladder, j, mu)).sqrt()
}

/// One graded kernel `w_{m,n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    m: usize,
    n: usize,
    ladder: FrequencyLadder,
    mu: f64,
    r: Vec<f64>,
    /// `values[ri * tuples + tuple]`, creation arguments first.
    values: Vec<f64>,
    dvalues: Vec<f64>,
}

impl Kernel {
    pub fn zeros(
        m: usize,
        n: usize,
        ladder: FrequencyLadder,
        r: Vec<f64>,
        mu: f64,
    ) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(invalid("mu", format!("{mu} must be positive")));
        }
        check_r_grid(&r)?;
        let len = r.len() * ladder.modes().pow((m + n) as u32);
        Ok(Self {
            m,
            n,
            ladder,
            mu,
            r,
            values: vec![0.0; len],
            dvalues: vec![0.0; len],
        })
    }

    /// Sample `f(r, shells)`; `df` gives `d/dr`, otherwise central differences
    /// with step [`FD_STEP`] are used.
    pub fn from_fn<F, D>(
        m: usize,
        n: usize,
        ladder: FrequencyLadder,
        r: Vec<f64>,
        mu: f64,
        f: F,
        df: Option<D>,
    ) -> Result<Self>
    where
        F: Fn(f64, &[usize]) -> f64,
        D: Fn(f64, &[usize]) -> f64,
    {
        let mut k = Self::zeros(m, n, ladder, r, mu)?;
        let tuples = k.tuples();
        let mut args = vec![0usize; m + n];
        for t in 0..tuples {
            k.decode(t, &mut args);
            for ri in 0..k.r.len() {
                let r = k.r[ri];
                k.values[ri * tuples + t] = f(r, &args);
                k.dvalues[ri * tuples + t] = match &df {
                    Some(d) => d(r, &args),
                    None => (f(r + FD_STEP, &args) - f(r - FD_STEP, &args)) / (2.0 * FD_STEP),
                };
            }
        }
        Ok(k)
    }

    /// Separable kernel `profile(r) * prod_i radial(|k_i|)`, with the radial
    /// factor replaced by its shell RMS in the norm measure. `profile`
    /// returns the value and its `r`-derivative.
    pub fn separable(
        m: usize,
        n: usize,
        ladder: FrequencyLadder,
        r: Vec<f64>,
        mu: f64,
        profile: impl Fn(f64) -> (f64, f64),
        radial: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let rms: Vec<f64> = (0..ladder.modes())
            .map(|j| shell_rms(&ladder, j, mu, &radial))
            .collect();
        let weight = |args: &[usize]| args.iter().map(|&j| rms[j]).product::<f64>();
        Self::from_fn(
            m,
            n,
            ladder,
            r,
            mu,
            |r, a| profile(r).0 * weight(a),
            Some(|r: f64, a: &[usize]| profile(r).1 * weight(a)),
        )
    }

    pub fn degrees(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn ladder(&self) -> &FrequencyLadder {
        &self.ladder
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn r_grid(&self) -> &[f64] {
        &self.r
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dvalues(&self) -> &[f64] {
        &self.dvalues
    }

    /// Number of shell tuples.
    pub fn tuples(&self) -> usize {
        self.ladder.modes().pow((self.m + self.n) as u32)
    }

    fn decode(&self, mut t: usize, args: &mut [usize]) {
        let j = self.ladder.modes();
        for slot in args.iter_mut().rev() {
            *slot = t % j;
            t /= j;
        }
    }

    fn encode(&self, args: &[usize]) -> usize {
        let j = self.ladder.modes();
        args.iter().fold(0, |acc, &a| acc * j + a)
    }

    pub fn value(&self, ri: usize, args: &[usize]) -> f64 {
        self.values[ri * self.tuples() + self.encode(args)]
    }

    pub fn set(&mut self, ri: usize, args: &[usize], value: f64, dvalue: f64) {
        let idx = ri * self.tuples() + self.encode(args);
        self.values[idx] = value;
        self.dvalues[idx] = dvalue;
    }

    /// Value at an arbitrary `r`, linear between grid nodes.
    pub fn eval(&self, r: f64, args: &[usize]) -> f64 {
        let t = self.encode(args);
        let tuples = self.tuples();
        lerp(&self.r, |ri| self.values[ri * tuples + t], r)
    }

    fn weighted_norm(&self, data: &[f64]) -> f64 {
        let tuples = self.tuples();
        let weights: Vec<f64> = (0..self.ladder.modes())
            .map(|j| shell_weight(&self.ladder, j, self.mu))
            .collect();
        let mut args = vec![0usize; self.m + self.n];
        let mut total = 0.0;
        for t in 0..tuples {
            self.decode(t, &mut args);
            let sup = (0..self.r.len())
                .map(|ri| data[ri * tuples + t].abs())
                .fold(0.0f64, f64::max);
            let measure: f64 = args.iter().map(|&j| weights[j]).product();
            total += sup * sup * measure;
        }
        total.sqrt()
    }

    /// `||w||_mu`: weighted L2 over shells of `sup_r |w|`.
    pub fn norm_mu(&self) -> f64 {
        self.weighted_norm(&self.values)
    }

    /// `||w||_mu^# = ||w||_mu + ||d_r w||_mu`.
    pub fn sharp_norm(&self) -> f64 {
        self.norm_mu() + self.weighted_norm(&self.dvalues)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut k = self.clone();
        k.values.iter_mut().for_each(|v| *v *= factor);
        k.dvalues.iter_mut().for_each(|v| *v *= factor);
        k
    }

    /// Entrywise sum; both kernels must share degrees, ladder and grid.
    pub fn add(&self, other: &Kernel) -> Result<Self> {
        if self.m != other.m
            || self.n != other.n
            || self.ladder != other.ladder
            || self.r != other.r
        {
            return Err(Error::MalformedKernel("incompatible kernels".into()));
        }
        let mut k = self.clone();
        k.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += b);
        k.dvalues
            .iter_mut()
            .zip(&other.dvalues)
            .for_each(|(a, b)| *a += b);
        Ok(k)
    }

    /// Entrywise absolute value.
    pub fn abs(&self) -> Self {
        let mut k = self.clone();
        k.values.iter_mut().for_each(|v| *v = v.abs());
        k.dvalues.iter_mut().for_each(|v| *v = v.abs());
        k
    }

    /// Average over permutations of the creation and annihilation arguments.
    pub fn symmetrized(&self) -> Self {
        let perms_m = permutations(self.m);
        let perms_n = permutations(self.n);
        let count = (perms_m.len() * perms_n.len()) as f64;
        let tuples = self.tuples();
        let mut out = self.clone();
        let mut args = vec![0usize; self.m + self.n];
        let mut permuted = vec![0usize; self.m + self.n];
        for t in 0..tuples {
            self.decode(t, &mut args);
            for ri in 0..self.r.len() {
                let (mut v, mut dv) = (0.0, 0.0);
                for pm in &perms_m {
                    for pn in &perms_n {
                        for (i, &p) in pm.iter().enumerate() {
                            permuted[i] = args[p];
                        }
                        for (i, &p) in pn.iter().enumerate() {
                            permuted[self.m + i] = args[self.m + p];
                        }
                        let idx = ri * tuples + self.encode(&permuted);
                        v += self.values[idx];
                        dv += self.dvalues[idx];
                    }
                }
                out.values[ri * tuples + t] = v / count;
                out.dvalues[ri * tuples + t] = dv / count;
            }
        }
        out
    }

    /// Largest change under symmetrization.
    pub fn asymmetry(&self) -> f64 {
        let s = self.symmetrized();
        self.values
            .iter()
            .zip(&s.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Kernel of the adjoint, `w~_{n,m}[r; L; K] = w_{m,n}[r; K; L]`.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.n, self.m, self.ladder, self.r.clone(), self.mu)
            .expect("parameters already validated");
        let tuples = self.tuples();
        let mut args = vec![0usize; self.m + self.n];
        let mut swapped = vec![0usize; self.m + self.n];
        for t in 0..tuples {
            self.decode(t, &mut args);
            swapped[..self.n].copy_from_slice(&args[self.m..]);
            swapped[self.n..].copy_from_slice(&args[..self.m]);
            let u = out.encode(&swapped);
            for ri in 0..self.r.len() {
                out.values[ri * tuples + u] = self.values[ri * tuples + t];
                out.dvalues[ri * tuples + u] = self.dvalues[ri * tuples + t];
            }
        }
        out
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// The scalar kernel `w_{0,0}[r]` with its derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarKernel {
    pub r: Vec<f64>,
    pub val: Vec<f64>,
    pub dval: Vec<f64>,
}

impl ScalarKernel {
    /// The free kernel `w_{0,0}[z; r] = r - z`.
    pub fn free(r: Vec<f64>, z: f64) -> Self {
        let val = r.iter().map(|&x| x - z).collect();
        let dval = vec![1.0; r.len()];
        Self { r, val, dval }
    }

    pub fn eval(&self, r: f64) -> f64 {
        lerp(&self.r, |i| self.val[i], r)
    }

    pub fn sup_abs(&self) -> f64 {
        self.val.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn at_zero(&self) -> f64 {
        self.val[0]
    }

    pub fn sup_slope_deviation(&self) -> f64 {
        self.dval
            .iter()
            .map(|d| (d - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// A truncated graded kernel family evaluated at one spectral parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFamily {
    pub mu: f64,
    pub xi: f64,
    pub w00: ScalarKernel,
    pub entries: BTreeMap<(usize, usize), Kernel>,
}

impl KernelFamily {
    pub fn new(mu: f64, xi: f64, w00: ScalarKernel) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(invalid("mu", format!("{mu} must be positive")));
        }
        if !(xi > 0.0 && xi < 1.0) {
            return Err(invalid("xi", format!("{xi} not in (0, 1)")));
        }
        check_r_grid(&w00.r)?;
        Ok(Self {
            mu,
            xi,
            w00,
            entries: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, kernel: Kernel) -> Result<()> {
        let (m, n) = kernel.degrees();
        if m + n == 0 {
            return Err(Error::MalformedKernel(
                "the (0,0) entry lives in w00".into(),
            ));
        }
        if kernel.r_grid() != self.w00.r.as_slice() || kernel.mu() != self.mu {
            return Err(Error::MalformedKernel(
                "entry grid or mu differs from the family".into(),
            ));
        }
        self.entries.insert((m, n), kernel);
        Ok(())
    }

    /// `||w||_{mu,xi}^# = sum_{m+n>=1} xi^{-(m+n)} ||w_{m,n}||_mu^#`.
    pub fn family_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|(&(m, n), k)| self.xi.powi(-((m + n) as i32)) * k.sharp_norm())
            .sum()
    }

    pub fn abs(&self) -> Self {
        let mut f = self.clone();
        for k in f.entries.values_mut() {
            *k = k.abs();
        }
        f
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolydiscVerdict {
    /// `sup_z sup_r |d_r w00 - 1|`
    pub slope_deviation: f64,
    /// `sup_z |w00[z; 0] + z|`
    pub offset: f64,
    /// `sup_z ||w||_{mu,xi}^#`
    pub coupling: f64,
    pub eps: f64,
    pub delta: f64,
    pub inside: bool,
}

impl PolydiscVerdict {
    pub fn margins(&self) -> (f64, f64, f64) {
        (
            self.eps - self.slope_deviation,
            self.delta - self.offset,
            self.delta - self.coupling,
        )
    }
}

/// Membership in `D(eps, delta)`, checked on a real sample of spectral parameters.
pub fn polydisc_check(samples: &[(f64, KernelFamily)], eps: f64, delta: f64) -> PolydiscVerdict {
    let mut slope = 0.0f64;
    let mut offset = 0.0f64;
    let mut coupling = 0.0f64;
    for (z, f) in samples {
        slope = slope.max(f.w00.sup_slope_deviation());
        offset = offset.max((f.w00.at_zero() + z).abs());
        coupling = coupling.max(f.family_norm());
    }
    PolydiscVerdict {
        slope_deviation: slope,
        offset,
        coupling,
        eps,
        delta,
        inside: slope <= eps && offset <= delta && coupling <= delta,
    }
}

fn check_alignment(ladder: &FrequencyLadder, basis: &FockBasis) -> Result<()> {
    let b = basis.ladder();
    if ladder.modes() != b.modes()
        || (ladder.rho() - b.rho()).abs() > 1e-14
        || (ladder.omega0() - b.omega0()).abs() > 1e-14
    {
        return Err(Error::MisalignedShells(format!(
            "kernel ladder (rho={}, omega0={}, J={}) vs basis ladder (rho={}, omega0={}, J={})",
            ladder.rho(),
            ladder.omega0(),
            ladder.modes(),
            b.rho(),
            b.omega0(),
            b.modes()
        )));
    }
    Ok(())
}

/// Apply `a_{j_1} ... a_{j_k}` (or creators) to one basis state.
fn apply_chain(
    basis: &FockBasis,
    start: usize,
    modes: &[usize],
    create: bool,
) -> Option<(usize, f64)> {
    let mut state = start;
    let mut amp = 1.0;
    for &j in modes {
        let step = if create {
            basis.raise(state, j)
        } else {
            basis.lower(state, j)
        };
        let (next, a) = step?;
        state = next;
        amp *= a;
    }
    Some((state, amp))
}

/// Wick quantization
/// `1_I(H_f) sum a^dagger_K w[H_f; K, L] a_L prod Phi 1_I(H_f)` on `basis`,
/// with `H_f` evaluated on the intermediate state between creators and
/// annihilators.
pub fn wick_quantize(kernel: &Kernel, basis: &FockBasis) -> Result<OperatorMatrix> {
    check_alignment(kernel.ladder(), basis)?;
    let (m, n) = kernel.degrees();
    let dim = basis.dim();
    let energies = basis.hf_eigs();
    let in_red: Vec<bool> = energies.iter().map(|&e| e <= 1.0 + RED_TOL).collect();
    let phi: Vec<f64> = (0..basis.modes())
        .map(|j| leg_factor(basis.ladder(), j))
        .collect();
    let modes = basis.modes();
    let create_tuples = modes.pow(m as u32);
    let annih_tuples = modes.pow(n as u32);
    let mut out = DMatrix::zeros(dim, dim);
    let mut k_args = vec![0usize; m];
    let mut l_args = vec![0usize; n];
    let mut args = vec![0usize; m + n];
    let decode = |mut t: usize, slots: &mut [usize]| {
        for s in slots.iter_mut().rev() {
            *s = t % modes;
            t /= modes;
        }
    };
    for t in 0..dim {
        if !in_red[t] {
            continue;
        }
        for lt in 0..annih_tuples {
            decode(lt, &mut l_args);
            let Some((u, amp_l)) = apply_chain(basis, t, &l_args, false) else {
                continue;
            };
            let e_mid = energies[u];
            let phi_l: f64 = l_args.iter().map(|&j| phi[j]).product();
            for kt in 0..create_tuples {
                decode(kt, &mut k_args);
                let Some((s, amp_k)) = apply_chain(basis, u, &k_args, true) else {
                    continue;
                };
                if !in_red[s] {
                    continue;
                }
                args[..m].copy_from_slice(&k_args);
                args[m..].copy_from_slice(&l_args);
                let w = kernel.eval(e_mid, &args);
                let phi_k: f64 = k_args.iter().map(|&j| phi[j]).product();
                out[(s, t)] += amp_k * amp_l * w * phi_k * phi_l;
            }
        }
    }
    let tag = if basis.is_reduced() {
        DomainTag::Red
    } else {
        DomainTag::Full
    };
    Ok(OperatorMatrix::new(out, tag))
}

/// `H(w) = W_{0,0}[w00] + sum_{m+n>=1} W_{m,n}[w_{m,n}]` on `basis`.
pub fn assemble(family: &KernelFamily, basis: &FockBasis) -> Result<OperatorMatrix> {
    let mut total = DMatrix::zeros(basis.dim(), basis.dim());
    for (i, &e) in basis.hf_eigs().iter().enumerate() {
        if e <= 1.0 + RED_TOL {
            total[(i, i)] = family.w00.eval(e);
        }
    }
    for kernel in family.entries.values() {
        total += wick_quantize(kernel, basis)?.entries;
    }
    Ok(OperatorMatrix::new(total, DomainTag::Red))
}

/// Seeded random family with entries up to total degree `max_degree`.
///
/// Kernel values are `(alpha + beta r) * prod_i omega_{j_i}^{mu + 1/2}`
/// with uniform `alpha, beta in [-scale, scale]`, then symmetrized. With
/// `hermitian`, the `(n, m)` entry is the adjoint kernel of `(m, n)` and
/// `w00` is real, so the assembled operator is symmetric.
pub fn random_family<R: Rng + ?Sized>(
    rng: &mut R,
    ladder: FrequencyLadder,
    mu: f64,
    xi: f64,
    max_degree: usize,
    scale: f64,
    hermitian: bool,
) -> Result<KernelFamily> {
    let r = uniform_r_grid(DEFAULT_R_NODES);
    let (a0, b0) = (
        rng.gen_range(-scale..=scale),
        rng.gen_range(-0.5..=0.5) * scale,
    );
    let w00 = ScalarKernel {
        val: r.iter().map(|&x| x + a0 + b0 * x).collect(),
        dval: vec![1.0 + b0; r.len()],
        r: r.clone(),
    };
    let mut family = KernelFamily::new(mu, xi, w00)?;
    let freqs = ladder.frequencies();
    let decay = |args: &[usize]| -> f64 { args.iter().map(|&j| freqs[j].powf(mu + 0.5)).product() };
    for degree in 1..=max_degree {
        for m in (0..=degree).rev() {
            let n = degree - m;
            if hermitian && m < n {
                let partner = family.entries[&(n, m)].adjoint();
                family.insert(partner)?;
                continue;
            }
            let mut k = Kernel::zeros(m, n, ladder, r.clone(), mu)?;
            let tuples = k.tuples();
            let mut args = vec![0usize; m + n];
            for t in 0..tuples {
                k.decode(t, &mut args);
                let (alpha, beta) = (rng.gen_range(-scale..=scale), rng.gen_range(-scale..=scale));
                let d = decay(&args);
                for (ri, &rv) in r.iter().enumerate() {
                    k.set(ri, &args, (alpha + beta * rv) * d, beta * d);
                }
            }
            let mut k = k.symmetrized();
            if hermitian && m == n {
                let adj = k.adjoint();
                k = k.add(&adj)?.scaled(0.5);
            }
            family.insert(k)?;
        }
    }
    Ok(family)
}

// JSON interchange

#[derive(Debug, Serialize, Deserialize)]
struct LadderJson {
    rho: f64,
    omega0: f64,
    modes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryJson {
    m: usize,
    n: usize,
    /// radial node of every shell, i.e. the ladder frequencies
    shells: Vec<f64>,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dvalues: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FamilyJson {
    mu: f64,
    xi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ladder: Option<LadderJson>,
    w00: ScalarKernel,
    entries: Vec<EntryJson>,
}

fn ladder_from_shells(shells: &[f64], hint: &Option<LadderJson>) -> Result<FrequencyLadder> {
    if let Some(l) = hint {
        return FrequencyLadder::new(l.rho, l.omega0, l.modes);
    }
    if shells.len() < 2 {
        return Err(Error::MalformedKernel(
            "a single shell needs an explicit ladder".into(),
        ));
    }
    FrequencyLadder::new(shells[1] / shells[0], shells[0], shells.len())
}

impl KernelFamily {
    pub fn to_json(&self) -> serde_json::Value {
        let mut ladder = None;
        let entries = self
            .entries
            .values()
            .map(|k| {
                let l = k.ladder();
                ladder = Some(LadderJson {
                    rho: l.rho(),
                    omega0: l.omega0(),
                    modes: l.modes(),
                });
                let (m, n) = k.degrees();
                EntryJson {
                    m,
                    n,
                    shells: l.frequencies(),
                    values: k.values.clone(),
                    dvalues: Some(k.dvalues.clone()),
                }
            })
            .collect();
        serde_json::to_value(FamilyJson {
            mu: self.mu,
            xi: self.xi,
            ladder,
            w00: self.w00.clone(),
            entries,
        })
        .expect("kernel families serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let raw: FamilyJson = serde_json::from_value(value.clone())
            .map_err(|e| Error::MalformedKernel(e.to_string()))?;
        if raw.w00.val.len() != raw.w00.r.len() || raw.w00.dval.len() != raw.w00.r.len() {
            return Err(Error::MalformedKernel("w00 arrays differ in length".into()));
        }
        let mut family = KernelFamily::new(raw.mu, raw.xi, raw.w00)?;
        for e in raw.entries {
            let ladder = ladder_from_shells(&e.shells, &raw.ladder)?;
            let expected = ladder.frequencies();
            if expected.len() != e.shells.len()
                || expected
                    .iter()
                    .zip(&e.shells)
                    .any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1e-300))
            {
                return Err(Error::MisalignedShells(
                    "shell nodes are not a geometric ladder".into(),
                ));
            }
            let mut k = Kernel::zeros(e.m, e.n, ladder, family.w00.r.clone(), family.mu)?;
            if e.values.len() != k.values.len() {
                return Err(Error::MalformedKernel(format!(
                    "entry ({},{}) has {} values, expected {}",
                    e.m,
                    e.n,
                    e.values.len(),
                    k.values.len()
                )));
            }
            k.values = e.values;
            k.dvalues = match e.dvalues {
                Some(d) if d.len() == k.values.len() => d,
                Some(_) => return Err(Error::MalformedKernel("dvalues length mismatch".into())),
                None => finite_difference_r(&k),
            };
            family.insert(k)?;
        }
        Ok(family)
    }
}

/// Derivative samples of a kernel from its own grid by central differences.
fn finite_difference_r(k: &Kernel) -> Vec<f64> {
    let tuples = k.tuples();
    let r = &k.r;
    let nr = r.len();
    let mut d = vec![0.0; k.values.len()];
    for t in 0..tuples {
        for ri in 0..nr {
            let (lo, hi) = (ri.saturating_sub(1), (ri + 1).min(nr - 1));
            d[ri * tuples + t] =
                (k.values[hi * tuples + t] - k.values[lo * tuples + t]) / (r[hi] - r[lo]);
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock_space::build_basis;
    use crate::linalg::{asymmetry, op_norm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ladder(modes: usize) -> FrequencyLadder {
        FrequencyLadder::new(0.5, 1.0, modes).unwrap()
    }

    #[test]
    fn norm_of_power_law_kernel() {
        let (mu, c) = (0.5, 0.7);
        let k = Kernel::separable(
            1,
            0,
            ladder(64),
            uniform_r_grid(DEFAULT_R_NODES),
            mu,
            |_| (c, 0.0),
            |q| q.powf(0.5 + mu),
        )
        .unwrap();
        let exact = 2.0 * PI.sqrt() * c;
        assert!((k.norm_mu() - exact).abs() / exact < 0.01);
        assert!((k.sharp_norm() - k.norm_mu()).abs() < 1e-15);
        assert!((k.scaled(-3.0).norm_mu() - 3.0 * k.norm_mu()).abs() < 1e-12);
    }

    #[test]
    fn sharp_norm_of_linear_profile() {
        let mu = 0.5;
        let h = |q: f64| q.powf(0.5 + mu);
        let r = uniform_r_grid(DEFAULT_R_NODES);
        let k = Kernel::separable(1, 0, ladder(64), r.clone(), mu, |r| (r, 1.0), h).unwrap();
        let base = Kernel::separable(1, 0, ladder(64), r, mu, |_| (1.0, 0.0), h).unwrap();
        assert!((k.sharp_norm() - 2.0 * base.norm_mu()).abs() < 1e-12);
        assert!((k.sharp_norm() - 4.0 * PI.sqrt()).abs() / (4.0 * PI.sqrt()) < 0.01);
    }

    #[test]
    fn zero_kernel() {
        let k = Kernel::zeros(1, 1, ladder(4), uniform_r_grid(5), 0.5).unwrap();
        assert_eq!(k.norm_mu(), 0.0);
        assert!(Kernel::zeros(1, 1, ladder(4), uniform_r_grid(5), 0.0).is_err());
        let basis = build_basis(ladder(4), 2, 2).unwrap();
        let w = wick_quantize(&k, &basis).unwrap();
        assert_eq!(w.entries.abs().max(), 0.0);
    }

    #[test]
    fn finite_difference_fallback_for_derivatives() {
        let k = Kernel::from_fn(
            1,
            0,
            ladder(3),
            uniform_r_grid(DEFAULT_R_NODES),
            0.5,
            |r, _| r * r,
            None::<fn(f64, &[usize]) -> f64>,
        )
        .unwrap();
        // central differences are exact for quadratics
        for (ri, &r) in k.r_grid().iter().enumerate() {
            assert!((k.dvalues()[ri * 3] - 2.0 * r).abs() < 1e-12);
        }
    }

    #[test]
    fn triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_family(&mut rng, ladder(4), 0.5, 0.5, 2, 1.0, false).unwrap();
            let b = random_family(&mut rng, ladder(4), 0.5, 0.5, 2, 1.0, false).unwrap();
            for key in a.entries.keys() {
                let (u, v) = (&a.entries[key], &b.entries[key]);
                let sum = u.add(v).unwrap();
                assert!(sum.sharp_norm() <= u.sharp_norm() + v.sharp_norm() + 1e-12);
            }
        }
    }

    #[test]
    fn family_norm_arithmetic() {
        let r = uniform_r_grid(DEFAULT_R_NODES);
        let mut f = KernelFamily::new(0.5, 0.5, ScalarKernel::free(r.clone(), 0.0)).unwrap();
        assert_eq!(f.family_norm(), 0.0);
        let unit10 =
            Kernel::separable(1, 0, ladder(4), r.clone(), 0.5, |_| (1.0, 0.0), |_| 1.0).unwrap();
        let unit11 = Kernel::separable(1, 1, ladder(4), r, 0.5, |_| (1.0, 0.0), |_| 1.0).unwrap();
        f.insert(unit10.scaled(0.1 / unit10.sharp_norm())).unwrap();
        assert!((f.family_norm() - 0.2).abs() < 1e-12);
        f.insert(unit11.scaled(0.04 / unit11.sharp_norm())).unwrap();
        assert!((f.family_norm() - 0.36).abs() < 1e-12);
    }

    #[test]
    fn monotone_under_domination() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_family(&mut rng, ladder(4), 0.5, 0.5, 2, 1.0, false).unwrap();
        assert!(f.family_norm() <= f.abs().family_norm() + 1e-12);
        let mut bigger = f.abs();
        for k in bigger.entries.values_mut() {
            *k = k.scaled(1.5);
        }
        assert!(f.abs().family_norm() <= bigger.family_norm());
    }

    #[test]
    fn symmetrization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_family(&mut rng, ladder(4), 0.5, 0.5, 2, 1.0, false).unwrap();
        for k in f.entries.values() {
            assert!(k.asymmetry() < 1e-15);
            assert_eq!(k.symmetrized().values(), k.values());
        }
    }

    #[test]
    fn polydisc_membership() {
        let r = uniform_r_grid(DEFAULT_R_NODES);
        let free: Vec<(f64, KernelFamily)> = [-0.5, 0.0, 0.3]
            .iter()
            .map(|&z| {
                (
                    z,
                    KernelFamily::new(0.5, 0.5, ScalarKernel::free(r.clone(), z)).unwrap(),
                )
            })
            .collect();
        let v = polydisc_check(&free, 0.0, 0.0);
        assert!(v.inside);
        let z = 0.2;
        let mut shifted = ScalarKernel::free(r.clone(), z);
        shifted.val.iter_mut().for_each(|v| *v += 0.3);
        let f = KernelFamily::new(0.5, 0.5, shifted).unwrap();
        let v = polydisc_check(&[(z, f)], 0.1, 0.1);
        assert!(!v.inside);
        assert!((v.margins().1 + 0.2).abs() < 1e-12);
    }

    #[test]
    fn wick_single_leg_matrix_element() {
        let basis = build_basis(ladder(3), 2, 2).unwrap();
        let c = 1.3;
        let k = Kernel::from_fn(
            1,
            0,
            ladder(3),
            uniform_r_grid(DEFAULT_R_NODES),
            0.5,
            |_, a| if a[0] == 0 { c } else { 0.0 },
            Some(|_: f64, _: &[usize]| 0.0),
        )
        .unwrap();
        let w = wick_quantize(&k, &basis).unwrap();
        let one0 = basis.index_of(&[1, 0, 0]).unwrap();
        let expected = c * (2.0 * PI * 0.75).sqrt();
        assert!((w.entries[(one0, 0)] - expected).abs() < 1e-12);
        assert!((expected / c - 2.1708).abs() < 1e-4);
    }

    #[test]
    fn free_family_assembles_to_hf() {
        let basis = build_basis(ladder(4), 3, 2).unwrap().reduced(1e-12).0;
        let f = KernelFamily::new(0.5, 0.5, ScalarKernel::free(uniform_r_grid(33), 0.0)).unwrap();
        let h = assemble(&f, &basis).unwrap();
        let hf = crate::fock_space::free_field(&basis).entries;
        assert!((h.entries - hf).abs().max() < 1e-15);
    }

    #[test]
    fn hermitian_family_assembles_symmetric() {
        let basis = build_basis(ladder(4), 3, 2).unwrap().reduced(1e-12).0;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let f = random_family(&mut rng, ladder(4), 0.5, 0.5, 2, 1.0, true).unwrap();
            let h = assemble(&f, &basis).unwrap().entries;
            assert!(asymmetry(&h) <= 1e-13);
        }
    }

    #[test]
    fn operator_norm_bound() {
        let basis = build_basis(ladder(4), 3, 2).unwrap().reduced(1e-12).0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let f = random_family(&mut rng, ladder(4), 0.5, 0.5, 2, 1.0, false).unwrap();
            let h = assemble(&f, &basis).unwrap().entries;
            assert!(op_norm(&h) <= (f.family_norm() + f.w00.sup_abs()) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_family(&mut rng, ladder(3), 0.5, 0.5, 2, 1.0, true).unwrap();
        let json = f.to_json();
        let back = KernelFamily::from_json(&json).unwrap();
        assert_eq!(back, f);
        let mut bad = json.clone();
        bad["entries"][0]["shells"][1] = serde_json::json!(0.3);
        bad["ladder"] = serde_json::Value::Null;
        assert!(KernelFamily::from_json(&bad).is_err());
        let basis = build_basis(FrequencyLadder::new(0.4, 1.0, 3).unwrap(), 2, 2).unwrap();
        let k = f.entries.values().next().unwrap();
        assert!(matches!(
            wick_quantize(k, &basis),
            Err(Error::MisalignedShells(_))
        ));
    }
}
