use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use fockrg_core::fock_space::FrequencyLadder;
use fockrg_core::models::{FormFactor, SpinBosonParams, DEFAULT_G_MAX};
use fockrg_core::pipeline::DEFAULT_PROBE_TOL;
use fockrg_core::rg_flow::{FlowConfig, SignConvention};
use fockrg_core::verify::VerifyConfig;
use fockrg_core::CutoffPair;

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub g: f64,
    pub rho: f64,
    pub omega0: f64,
    /// Number of ladder modes `J`.
    pub modes: usize,
    pub max_total: usize,
    pub max_per_mode: usize,
    /// Extra bosons allowed in the spin-up sector.
    pub up_extra: usize,
    pub form_factor: FormFactor,
    pub g_max: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            g: 0.05,
            rho: 0.5,
            omega0: 1.0,
            modes: 8,
            max_total: 3,
            max_per_mode: 3,
            up_extra: 1,
            form_factor: FormFactor::default(),
            g_max: DEFAULT_G_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    /// Defaults to `modes - 2` when absent.
    pub n_max: Option<usize>,
    pub root_tol: f64,
    pub leak_budget: f64,
    pub sign: SignConvention,
    pub z_interval: (f64, f64),
    pub max_evaluations: usize,
    pub monotone_samples: usize,
    pub plateau: f64,
    pub probe_tol: f64,
    pub appendix_mode: bool,
}

impl Default for FlowSection {
    fn default() -> Self {
        let f = FlowConfig::default();
        Self {
            n_max: None,
            root_tol: f.root_tol,
            leak_budget: f.leak_budget,
            sign: f.sign,
            z_interval: f.z_interval,
            max_evaluations: f.max_evaluations,
            monotone_samples: f.monotone_samples,
            plateau: f.cutoff.plateau(),
            probe_tol: DEFAULT_PROBE_TOL,
            appendix_mode: f.appendix_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    /// Subset of `csv`, `json`.
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            formats: vec!["csv".into(), "json".into()],
        }
    }
}

impl OutputSection {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub flow: FlowSection,
    pub verify: VerifyConfig,
    pub output: OutputSection,
    pub seed: u64,
}

fn config_error(field: impl Into<String>, message: impl Into<String>) -> Failure {
    Failure::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// Field path of a serde error message such as "unknown field `x`".
fn field_hint(section: &str, message: &str) -> String {
    match message.split('`').nth(1) {
        Some(name)
            if message.starts_with("unknown field") || message.starts_with("missing field") =>
        {
            if section.is_empty() {
                name.to_string()
            } else {
                format!("{section}.{name}")
            }
        }
        _ => section.to_string(),
    }
}

impl RunConfig {
    pub fn from_value(value: Value) -> Result<Self, Failure> {
        let sections = ["model", "flow", "verify", "output"];
        if let Value::Object(map) = &value {
            // Deserialize per section so errors name the offending field.
            for s in sections {
                if let Some(v) = map.get(s) {
                    let check = match s {
                        "model" => serde_json::from_value::<ModelSection>(v.clone()).err(),
                        "flow" => serde_json::from_value::<FlowSection>(v.clone()).err(),
                        "verify" => serde_json::from_value::<VerifyConfig>(v.clone()).err(),
                        _ => serde_json::from_value::<OutputSection>(v.clone()).err(),
                    };
                    if let Some(e) = check {
                        let msg = e.to_string();
                        return Err(config_error(field_hint(s, &msg), msg));
                    }
                }
            }
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            config_error(field_hint("", &msg), msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| config_error("", format!("malformed JSON: {e}")))?;
        Self::from_value(value)
    }

    /// Apply `section.key=value` overrides. Values parse as JSON when
    /// possible and fall back to strings.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self, Failure> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        for item in sets {
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| config_error(item.clone(), "expected section.key=value"))?;
            let parsed: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut value;
            for part in path.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| config_error(path, "no such configuration field"))?;
            }
            *slot = parsed;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let positive = [
            ("flow.root_tol", self.flow.root_tol),
            ("flow.leak_budget", self.flow.leak_budget),
            ("flow.probe_tol", self.flow.probe_tol),
            ("verify.kernel_tol", self.verify.kernel_tol),
            ("verify.norm_slack", self.verify.norm_slack),
            ("verify.dilation_tol", self.verify.dilation_tol),
            ("verify.power_tol", self.verify.power_tol),
            ("model.omega0", self.model.omega0),
            ("model.g_max", self.model.g_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(config_error(name, format!("must be positive, got {v}")));
            }
        }
        if self.model.modes == 0 {
            return Err(config_error("model.modes", "need at least one mode"));
        }
        if !(self.model.rho > 0.0 && self.model.rho < 1.0) {
            return Err(config_error(
                "model.rho",
                format!("{} not in (0, 1)", self.model.rho),
            ));
        }
        if !(self.flow.plateau > 0.0 && self.flow.plateau < 1.0) {
            return Err(config_error("flow.plateau", "must lie in (0, 1)"));
        }
        if self.verify.dilation_modes < 3 {
            return Err(config_error(
                "verify.dilation_modes",
                "need at least 3 modes",
            ));
        }
        if self.verify.feshbach_instances == 0 || self.verify.norm_families == 0 {
            return Err(config_error("verify", "suite sizes must be positive"));
        }
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return Err(config_error(
                    "output.formats",
                    format!("unknown format `{f}`"),
                ));
            }
        }
        Ok(())
    }

    pub fn model_params(&self) -> Result<SpinBosonParams, Failure> {
        let m = &self.model;
        let ladder = FrequencyLadder::new(m.rho, m.omega0, m.modes)
            .map_err(|e| config_error("model", e.to_string()))?;
        let mut p = SpinBosonParams::new(m.g, ladder, m.max_total, m.max_per_mode);
        p.form_factor = m.form_factor;
        p.up_extra = m.up_extra;
        p.g_max = m.g_max;
        Ok(p)
    }

    pub fn flow_config(&self) -> Result<FlowConfig, Failure> {
        let f = &self.flow;
        let cutoff =
            CutoffPair::new(f.plateau).map_err(|e| config_error("flow.plateau", e.to_string()))?;
        let cfg = FlowConfig {
            rho: self.model.rho,
            n_max: f.n_max.unwrap_or(self.model.modes.saturating_sub(2)),
            root_tol: f.root_tol,
            z_interval: f.z_interval,
            leak_budget: f.leak_budget,
            sign: f.sign,
            cutoff,
            max_evaluations: f.max_evaluations,
            monotone_samples: f.monotone_samples,
            appendix_mode: f.appendix_mode,
        };
        cfg.validate(self.model.modes)
            .map_err(|e| config_error("flow", e.to_string()))?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON of everything except the output section.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut value {
            map.remove("output");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
