//! `loopvir`: verification suites, hierarchy tables, simulations and
//! convergence studies with machine-readable outputs.
//!
//! Exit codes: 0 when every check passes, 1 on a failed check or numerical
//! failure, 2 on a usage or configuration error.

mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use loopvir::report::{self, HierarchyConfig, VerifyConfig};
use loopvir::solver::{
    self, ConvergenceRow, Equation, Manufactured, Quantity, RunOutput, SimConfig,
};
use output::{timestamp, Outputs, RunManifest};

#[derive(Parser)]
#[command(name = "loopvir", version, about = "Bi-Hamiltonian hierarchy checks and dispersionless PDE runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the algebraic and Hamiltonian identity checks.
    Verify(Common),
    /// Tabulate H_0..H_k at a seeded point.
    Hierarchy(Common),
    /// Integrate one equation and log its first integrals.
    Simulate(Common),
    /// Manufactured-solution convergence study.
    Converge(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Verify(_) => "verify",
            Command::Hierarchy(_) => "hierarchy",
            Command::Simulate(_) => "simulate",
            Command::Converge(_) => "converge",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Verify(c) | Command::Hierarchy(c) | Command::Simulate(c) | Command::Converge(c) => c,
        }
    }
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Points per axis.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    c: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Restrict `verify` to the named checks (repeatable).
    #[arg(long)]
    only: Vec<String>,
}

enum Failure {
    /// Exit 2.
    Usage(String),
    /// Exit 1.
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numeric(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Numeric(m) => m,
        }
    }
}

fn is_usage(e: &loopvir::Error) -> bool {
    use loopvir::Error as E;
    matches!(e, E::InvalidConfig(_) | E::InvalidGrid { .. } | E::Parse { .. } | E::Json(_))
}

impl From<loopvir::Error> for Failure {
    fn from(e: loopvir::Error) -> Self {
        if is_usage(&e) {
            Failure::Usage(e.to_string())
        } else {
            Failure::Numeric(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numeric(format!("i/o error: {e}"))
    }
}

/// What a command reports back for the manifest.
struct Outcome {
    seed: Option<u64>,
    pass: bool,
}

fn load<T: DeserializeOwned + Default>(common: &Common) -> Result<T, Failure> {
    match &common.config {
        None => Ok(T::default()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("malformed config {}: {e}", path.display())))
        }
    }
}

fn verify(common: &Common, out: &mut Outputs) -> Result<Outcome, Failure> {
    let mut config: VerifyConfig = load(common)?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(n) = common.grid {
        config.grid = n;
    }
    if let Some(c) = common.c {
        config.c = c;
    }
    let records = report::run_checks(&config, &common.only)?;
    let pass = report::all_pass(&records);
    for r in &records {
        let defect = r.defect.map(|d| format!("{d:.3e}")).unwrap_or_else(|| "n/a".into());
        let case = r.case.as_deref().map(|c| format!(" [{c}]")).unwrap_or_default();
        let status = if r.pass { "pass" } else { "FAIL" };
        eprintln!("{status} {}{case}: defect {defect} (tolerance {:e})", r.check, r.tolerance);
        if let Some(e) = &r.error {
            eprintln!("     {e}");
        }
    }
    #[derive(Serialize)]
    struct Report<'a> {
        config: &'a VerifyConfig,
        checks: &'a [report::CheckRecord],
        pass: bool,
    }
    out.write_json(
        "report.json",
        &Report {
            config: &config,
            checks: &records,
            pass,
        },
    )?;
    Ok(Outcome {
        seed: Some(config.seed),
        pass,
    })
}

fn hierarchy(common: &Common, out: &mut Outputs) -> Result<Outcome, Failure> {
    let mut config: HierarchyConfig = load(common)?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(n) = common.grid {
        config.grid = n;
    }
    if let Some(c) = common.c {
        config.c = c;
    }
    let rows = report::hierarchy_rows(&config)?;
    out.write("hierarchy.csv", report::hierarchy_csv(&rows).as_bytes())?;
    Ok(Outcome {
        seed: Some(config.seed),
        pass: true,
    })
}

/// Bounds a simulation must respect to exit 0.
const H0_DRIFT_BOUND: f64 = 1e-8;
const H1_DRIFT_BOUND: f64 = 1e-6;

#[derive(Serialize)]
struct SimSummary<'a> {
    config: &'a SimConfig,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    last_good_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_t: Option<f64>,
    final_l2_norms: Vec<f64>,
    drift_h0: Option<f64>,
    drift_h1: Option<f64>,
    drift_h2: Option<f64>,
    max_xmean_defect: Option<f64>,
    bound_h0: f64,
    bound_h1: f64,
    pass_h0: bool,
    pass_h1: bool,
    pass: bool,
}

fn default_simulation() -> SimConfig {
    SimConfig::new(Equation::TheoremSystem, 64)
}

fn simulate(common: &Common, out: &mut Outputs) -> Result<Outcome, Failure> {
    let mut config: SimConfig = match &common.config {
        None => default_simulation(),
        Some(_) => load::<SimConfigFile>(common)?.0,
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(n) = common.grid {
        config.nx = n;
        config.ny = n;
    }
    if let Some(c) = common.c {
        config.c = c;
    }
    config.validate()?;
    let names = ["u", "v"];
    let summary = match solver::run(&config) {
        Ok(RunOutput { state, log, snapshots }) => {
            out.write("conservation.csv", log.to_csv_string().as_bytes())?;
            for (step, snaps) in &snapshots {
                for (name, snap) in names.iter().zip(snaps) {
                    out.write(&format!("snapshots/{name}_{step:06}.csv"), snap.to_csv_string().as_bytes())?;
                }
            }
            let (d0, d1) = (log.relative_drift(Quantity::H0), log.relative_drift(Quantity::H1));
            let (pass_h0, pass_h1) = (d0 < H0_DRIFT_BOUND, d1 < H1_DRIFT_BOUND);
            SimSummary {
                config: &config,
                status: "ok",
                error: None,
                last_good_t: None,
                final_t: Some(state.t),
                final_l2_norms: state.fields.iter().map(|f| f.l2_norm()).collect(),
                drift_h0: Some(d0),
                drift_h1: Some(d1),
                drift_h2: config.monitor_h2.then(|| log.relative_drift(Quantity::H2)),
                max_xmean_defect: Some(log.max_xmean_defect()),
                bound_h0: H0_DRIFT_BOUND,
                bound_h1: H1_DRIFT_BOUND,
                pass_h0,
                pass_h1,
                pass: pass_h0 && pass_h1,
            }
        }
        Err(e) => {
            if is_usage(&e) {
                return Err(e.into());
            }
            SimSummary {
                config: &config,
                status: if matches!(e, loopvir::Error::BlowUp { .. }) { "blow_up" } else { "error" },
                error: Some(e.to_string()),
                last_good_t: match e {
                    loopvir::Error::BlowUp { last_good_t } => Some(last_good_t),
                    _ => None,
                },
                final_t: None,
                final_l2_norms: Vec::new(),
                drift_h0: None,
                drift_h1: None,
                drift_h2: None,
                max_xmean_defect: None,
                bound_h0: H0_DRIFT_BOUND,
                bound_h1: H1_DRIFT_BOUND,
                pass_h0: false,
                pass_h1: false,
                pass: false,
            }
        }
    };
    out.write_json("summary.json", &summary)?;
    if let Some(err) = &summary.error {
        eprintln!("simulation failed: {err}");
    } else {
        eprintln!(
            "t = {}: H0 drift {:.3e} (bound {H0_DRIFT_BOUND:e}), H1 drift {:.3e} (bound {H1_DRIFT_BOUND:e})",
            summary.final_t.unwrap_or_default(),
            summary.drift_h0.unwrap_or_default(),
            summary.drift_h1.unwrap_or_default()
        );
    }
    Ok(Outcome {
        seed: Some(config.seed),
        pass: summary.pass,
    })
}

/// A simulation config file; it has no defaults for the required fields.
#[derive(Deserialize)]
#[serde(transparent)]
struct SimConfigFile(SimConfig);

impl Default for SimConfigFile {
    fn default() -> Self {
        Self(default_simulation())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Solution {
    /// `sin x sin y cos t`
    Separable,
    /// `exp(sin(x − t) + cos(y)/2)`
    Analytic,
}

impl Solution {
    fn build(self) -> Manufactured {
        match self {
            Solution::Separable => Manufactured::separable(),
            Solution::Analytic => Manufactured::analytic(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConvergeConfig {
    equation: Equation,
    c: f64,
    temporal_solution: Solution,
    temporal_grid: usize,
    temporal_t_final: f64,
    dts: Vec<f64>,
    spatial_solution: Solution,
    spatial_grids: Vec<usize>,
    spatial_dt: f64,
    spatial_t_final: f64,
    expected_order: f64,
    order_tolerance: f64,
    min_spatial_ratio: f64,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            equation: Equation::Eq1,
            c: 0.0,
            temporal_solution: Solution::Separable,
            temporal_grid: 16,
            temporal_t_final: 1.0,
            dts: vec![0.1, 0.05, 0.025],
            spatial_solution: Solution::Analytic,
            spatial_grids: vec![16, 32],
            spatial_dt: 1e-3,
            spatial_t_final: 0.1,
            expected_order: 4.0,
            order_tolerance: 0.2,
            min_spatial_ratio: 1e3,
        }
    }
}

fn converge(common: &Common, out: &mut Outputs) -> Result<Outcome, Failure> {
    let mut config: ConvergeConfig = load(common)?;
    if let Some(n) = common.grid {
        config.temporal_grid = n;
    }
    if let Some(c) = common.c {
        config.c = c;
    }
    if config.equation.is_coupled() {
        return Err(Failure::Usage("convergence studies cover the single equations".into()));
    }
    if config.dts.len() < 2 || config.spatial_grids.len() < 2 {
        return Err(Failure::Usage("need at least two step sizes and two grids".into()));
    }
    let base = |n: usize, dt: f64, t_final: f64| SimConfig {
        c: config.c,
        dt,
        t_final,
        ..SimConfig::new(config.equation, n)
    };
    let temporal = solver::temporal_convergence(
        &base(config.temporal_grid, config.dts[0], config.temporal_t_final),
        &config.temporal_solution.build(),
        &config.dts,
    )?;
    let spatial = solver::spatial_convergence(
        &base(config.spatial_grids[0], config.spatial_dt, config.spatial_t_final),
        &config.spatial_solution.build(),
        &config.spatial_grids,
    )?;
    let order_ok = |r: &ConvergenceRow| {
        r.order
            .is_none_or(|o| (o - config.expected_order).abs() <= config.order_tolerance)
    };
    let pass_temporal = temporal.iter().all(order_ok);
    let pass_spatial = spatial
        .iter()
        .all(|r| r.ratio.is_none_or(|q| q >= config.min_spatial_ratio));

    let mut csv = String::from("study,parameter,error,ratio,order\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for (study, rows) in [("temporal", &temporal), ("spatial", &spatial)] {
        for r in rows.iter() {
            csv += &format!("{study},{:?},{:?},{},{}\n", r.parameter, r.error, opt(r.ratio), opt(r.order));
            eprintln!("{study} {}: error {:.3e} order {}", r.parameter, r.error, opt(r.order));
        }
    }
    out.write("convergence.csv", csv.as_bytes())?;
    #[derive(Serialize)]
    struct Report<'a> {
        config: &'a ConvergeConfig,
        temporal: &'a [ConvergenceRow],
        spatial: &'a [ConvergenceRow],
        pass_temporal: bool,
        pass_spatial: bool,
        pass: bool,
    }
    let pass = pass_temporal && pass_spatial;
    out.write_json(
        "report.json",
        &Report {
            config: &config,
            temporal: &temporal,
            spatial: &spatial,
            pass_temporal,
            pass_spatial,
            pass,
        },
    )?;
    Ok(Outcome { seed: common.seed, pass })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.command.common().clone();
    let started = timestamp();
    let mut out = match Outputs::new(&common.out) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot create {}: {e}", common.out.display());
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Verify(c) => verify(c, &mut out),
        Command::Hierarchy(c) => hierarchy(c, &mut out),
        Command::Simulate(c) => simulate(c, &mut out),
        Command::Converge(c) => converge(c, &mut out),
    };
    let (code, seed) = match &result {
        Ok(o) => (if o.pass { 0 } else { 1 }, o.seed),
        Err(f) => {
            eprintln!("error: {}", f.message());
            (f.code(), common.seed)
        }
    };
    if code == 2 {
        return ExitCode::from(2);
    }
    let manifest = RunManifest {
        command: cli.command.name().into(),
        config_path: common.config.as_ref().map(|p| p.display().to_string()),
        seed,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        started,
        finished: timestamp(),
        exit_code: code as i32,
        outputs: Vec::new(),
    };
    if let Err(e) = out.finish(manifest) {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}
