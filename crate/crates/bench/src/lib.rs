//! Fixtures shared by the benchmarks.

use fockrg_core::fock_space::FrequencyLadder;
use fockrg_core::models::{SpinBosonModel, SpinBosonParams};
use fockrg_core::rg_flow::{FlowConfig, FlowEngine};

pub fn params(g: f64, modes: usize) -> SpinBosonParams {
    let ladder = FrequencyLadder::new(0.5, 1.0, modes).expect("valid ladder");
    let mut p = SpinBosonParams::new(g, ladder, 3, 3);
    p.up_extra = 1;
    p
}

pub fn model(g: f64, modes: usize) -> SpinBosonModel {
    SpinBosonModel::new(params(g, modes)).expect("model builds")
}

pub fn engine(model: &SpinBosonModel) -> FlowEngine {
    let cfg = FlowConfig {
        n_max: model.params.ladder.modes() - 2,
        ..FlowConfig::default()
    };
    FlowEngine::new(model.space.red(), cfg).expect("engine builds")
}
