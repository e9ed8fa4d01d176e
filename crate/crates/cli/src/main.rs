#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod failure;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use fockrg_core::models::SpinBosonModel;
use fockrg_core::pipeline::{run_spin_boson, RunReport};
use fockrg_core::verify::{run_suite, Suite};
use fockrg_core::Verdict;

use config::RunConfig;
use failure::Failure;

const VERSION: &str = env!("CARGO_PKG_VERSION");
const OUT_ENV: &str = "FOCKRG_OUT";

#[derive(Parser)]
#[command(
    name = "fockrg",
    version,
    about = "Operator renormalization flows on truncated Fock spaces"
)]
struct Cli {
    /// JSON run configuration; defaults apply to absent fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set model.g=0.02`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow, tower and certificate on the configured model.
    Flow,
    /// Run property suites: feshbach, telescoping, norms, dilation or all.
    Verify {
        #[arg(default_value = "all")]
        which: String,
    },
    /// Independent flow runs over one model parameter.
    Sweep {
        /// One of g, rho, J, max_total.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Dense diagonalization of the truncated model.
    Oracle {
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Print the resolved configuration.
    Config,
}

struct Context {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
}

impl Context {
    fn provenance(&self) -> String {
        format!("fockrg {VERSION} config {}", self.hash)
    }

    fn csv_preamble(&self) -> String {
        format!("# fockrg {VERSION} config {}\n", self.hash)
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), Failure> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join(name), contents)?;
        Ok(())
    }

    fn write_json(&self, name: &str, mut value: Value) -> Result<(), Failure> {
        if !self.cfg.output.wants("json") {
            return Ok(());
        }
        if let Value::Object(map) = &mut value {
            map.insert("version".into(), json!(VERSION));
            map.insert("config_hash".into(), json!(self.hash));
        }
        let text = serde_json::to_string_pretty(&value).expect("report serializes");
        self.write(name, &(text + "\n"))
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<(), Failure> {
        if !self.cfg.output.wants("csv") {
            return Ok(());
        }
        self.write(name, &(self.csv_preamble() + body))
    }
}

fn load(cli: &Cli) -> Result<Context, Failure> {
    let base = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    let cfg = base.with_overrides(&cli.sets)?;
    let out = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    Ok(Context {
        hash: cfg.hash(),
        cfg,
        out,
    })
}

fn flow_run(cfg: &RunConfig, provenance: &str) -> Result<RunReport, Failure> {
    let params = cfg.model_params()?;
    let flow = cfg.flow_config()?;
    Ok(run_spin_boson(
        &params,
        &flow,
        cfg.flow.probe_tol,
        provenance,
    )?)
}

fn summary(report: &RunReport) -> Value {
    json!({
        "z0": report.z0,
        "converged": report.tower.converged,
        "verdict": report.certificate.verdict,
        "oracle": report.oracle,
        "oracle_delta": report.oracle_delta,
        "probe_reduced": report.probe_reduced,
        "probe_model": report.probe_model,
        "red_dim": report.red_dim,
        "model_dim": report.model_dim,
        "tower": report.tower,
        "levels": report.levels,
        "t_bounds": report.t_bounds,
    })
}

fn cmd_flow(ctx: &Context) -> Result<(), Failure> {
    let report = flow_run(&ctx.cfg, &ctx.provenance())?;
    ctx.write_csv("flow.csv", &report.csv)?;
    let mut s = summary(&report);
    s["config"] = serde_json::to_value(&ctx.cfg).expect("config serializes");
    ctx.write_json("summary.json", s)?;
    ctx.write_json(
        "certificate.json",
        json!({"certificate": report.certificate}),
    )?;
    let line = json!({
        "z0": report.z0,
        "oracle_delta": report.oracle_delta,
        "verdict": report.certificate.verdict,
        "converged": report.tower.converged,
        "out": ctx.out.display().to_string(),
    });
    println!("{line}");
    if report.certificate.verdict != Verdict::Certified {
        return Err(Failure::Property(format!(
            "certificate inconclusive: {}",
            report.certificate.reason.clone().unwrap_or_default()
        )));
    }
    if !report.tower.converged {
        return Err(Failure::Property(
            "spectral tower did not reach root_tol".into(),
        ));
    }
    Ok(())
}

fn cmd_verify(ctx: &Context, which: &str) -> Result<(), Failure> {
    let suites = Suite::parse(which).ok_or_else(|| {
        Failure::Usage(format!(
            "unknown suite `{which}`; expected feshbach, telescoping, norms, dilation or all"
        ))
    })?;
    let mut reports = Vec::new();
    for suite in suites {
        let r = run_suite(suite, &ctx.cfg.verify, ctx.cfg.seed)?;
        println!(
            "{} {}: {} passed, {} failed, worst margin {:e}",
            if r.ok() { "PASS" } else { "FAIL" },
            suite.name(),
            r.passed,
            r.failed,
            r.worst_margin
        );
        reports.push(r);
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.ok())
        .map(|r| r.suite.name())
        .collect();
    ctx.write_json(
        "verify.json",
        json!({"seed": ctx.cfg.seed, "suites": reports}),
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Property(format!(
            "failed suites: {}",
            failed.join(", ")
        )))
    }
}

fn sweep_key(axis: &str) -> Result<&'static str, Failure> {
    match axis {
        "g" => Ok("g"),
        "rho" => Ok("rho"),
        "J" => Ok("modes"),
        "max_total" => Ok("max_total"),
        _ => Err(Failure::Usage(format!(
            "unknown sweep axis `{axis}`; expected g, rho, J or max_total"
        ))),
    }
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn cmd_sweep(ctx: &Context, axis: &str, values: &[String]) -> Result<(), Failure> {
    let key = sweep_key(axis)?;
    let configs = values
        .iter()
        .map(|v| ctx.cfg.with_overrides(&[format!("model.{key}={v}")]))
        .collect::<Result<Vec<_>, _>>()?;
    let provenance = ctx.provenance();
    let results: Vec<Result<RunReport, Failure>> = configs
        .par_iter()
        .map(|cfg| flow_run(cfg, &provenance))
        .collect();
    let mut body = String::from(
        "axis,value,status,verdict,z0,oracle_e_gs,oracle_delta,decay_ratio,delta0,converged,message\n",
    );
    let mut rows = Vec::new();
    for (value, result) in values.iter().zip(&results) {
        match result {
            Ok(r) => {
                let verdict = match r.certificate.verdict {
                    Verdict::Certified => "CERTIFIED",
                    Verdict::Inconclusive => "INCONCLUSIVE",
                };
                body += &format!(
                    "{axis},{value},ok,{verdict},{:e},{},{},{},{:e},{},{}\n",
                    r.z0,
                    opt(r.oracle.as_ref().map(|o| o.ground_energy)),
                    opt(r.oracle_delta),
                    opt(r.certificate.decay_ratio),
                    r.certificate.delta0,
                    r.tower.converged,
                    quote(r.certificate.reason.as_deref().unwrap_or(""))
                );
                rows.push(json!({"value": value, "status": "ok", "z0": r.z0, "verdict": verdict}));
            }
            Err(e) => {
                let err = e.to_json();
                body += &format!(
                    "{axis},{value},error,,,,,,,,{}\n",
                    quote(err["message"].as_str().unwrap_or(""))
                );
                rows.push(json!({"value": value, "status": "error", "error": err}));
            }
        }
    }
    ctx.write_csv("sweep.csv", &body)?;
    ctx.write_json("sweep.json", json!({"axis": axis, "rows": rows}))?;
    print!("{body}");
    Ok(())
}

fn cmd_oracle(ctx: &Context, k: usize) -> Result<(), Failure> {
    let model = SpinBosonModel::new(ctx.cfg.model_params()?)?;
    let o = model.oracle(k)?;
    let value = json!({"oracle": o, "model_dim": model.space.dim()});
    println!("{value}");
    ctx.write_json("oracle.json", value)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let ctx = load(cli)?;
    match &cli.command {
        Command::Flow => cmd_flow(&ctx),
        Command::Verify { which } => cmd_verify(&ctx, which),
        Command::Sweep { axis, values } => cmd_sweep(&ctx, axis, values),
        Command::Oracle { k } => cmd_oracle(&ctx, *k),
        Command::Config => {
            let text = serde_json::to_string_pretty(&ctx.cfg).expect("config serializes");
            println!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
