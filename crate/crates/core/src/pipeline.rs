//! End-to-end spin-boson run: reduction, flow, tower, measured bounds,
//! certificate and oracle comparison.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::models::{OracleResult, SpinBosonModel, SpinBosonParams};
use crate::rg_flow::{flow_csv, FlowConfig, FlowEngine, Observables, Tower, TowerResult};
use crate::uniqueness::{
    bound_sequence, build_certificate, degeneracy_probe, measure_t_bounds, DegeneracyProbe,
    TBounds, UniquenessCertificate,
};

/// The constant `a` of the cutoff inequality.
pub const CUTOFF_CONSTANT: f64 = 0.75;

/// Relative singular-value threshold of the kernel probes.
pub const DEFAULT_PROBE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct LevelRow {
    pub n: usize,
    pub zeta: f64,
    pub t0: f64,
    #[serde(flatten)]
    pub obs: Observables,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub z0: f64,
    pub tower: TowerResult,
    pub levels: Vec<LevelRow>,
    pub t_bounds: TBounds,
    pub certificate: UniquenessCertificate,
    /// Probe of `H_1(z0)`.
    pub probe_reduced: DegeneracyProbe,
    /// Oracle on the full truncated model, when within the dense cap.
    pub oracle: Option<OracleResult>,
    pub oracle_delta: Option<f64>,
    /// Probe of `H - E_gs` at the oracle ground energy.
    pub probe_model: Option<DegeneracyProbe>,
    pub red_dim: usize,
    pub model_dim: usize,
    #[serde(skip)]
    pub csv: String,
}

pub fn run_spin_boson(
    params: &SpinBosonParams,
    flow: &FlowConfig,
    probe_tol: f64,
    provenance: &str,
) -> Result<RunReport> {
    params.check_flow_coupling()?;
    if (params.ladder.rho() - flow.rho).abs() > 1e-15 {
        return Err(invalid("rho", "flow and model ladder ratios differ"));
    }
    let model = SpinBosonModel::new(params.clone())?;
    let red = model.space.red();
    let engine = FlowEngine::new(red.clone(), flow.clone())?;
    let tower = Tower::new(&engine, |z| model.reduce(z));
    let result = tower.e_limit()?;
    let z0 = result.z0;

    let h1 = model.reduce(z0)?;
    let probe_reduced = degeneracy_probe(&h1, probe_tol);
    let states = engine.run(h1, z0, flow.levels())?;
    let t_bounds = measure_t_bounds(&states);
    let a_seq = bound_sequence(&states, &t_bounds);
    let certificate = build_certificate(
        t_bounds.delta0,
        &a_seq,
        flow.rho,
        CUTOFF_CONSTANT,
        red.vacuum_multiplicity(),
        provenance,
    );
    let levels = states
        .iter()
        .map(|s| LevelRow {
            n: s.n,
            zeta: s.zeta,
            t0: s.t.at_zero(),
            obs: s.obs.clone(),
        })
        .collect();

    let oracle = model.oracle(4).ok();
    let (oracle_delta, probe_model) = match &oracle {
        Some(o) => {
            let mut shifted = model.hamiltonian.clone();
            for i in 0..shifted.nrows() {
                shifted[(i, i)] -= o.ground_energy;
            }
            (
                Some(z0 - o.ground_energy),
                Some(degeneracy_probe(&shifted, probe_tol)),
            )
        }
        None => (None, None),
    };
    Ok(RunReport {
        z0,
        tower: result,
        levels,
        t_bounds,
        certificate,
        probe_reduced,
        oracle,
        oracle_delta,
        probe_model,
        red_dim: red.dim(),
        model_dim: model.space.dim(),
        csv: flow_csv(&states),
    })
}

/// Relative size of the reconstruction residual `H_n - T_n - W_n` over all levels.
pub fn max_reconstruction_residual(report: &RunReport) -> f64 {
    report
        .levels
        .iter()
        .map(|l| l.obs.reconstruction_residual)
        .fold(0.0, f64::max)
}
