//! `mmbm`: file-in, file-out front end for the solvers, oracles and simulator.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use mmbm_core::acceptance::{run_criterion, CRITERIA};
use mmbm_core::closed_forms::{
    cf_common_two_state, cf_dividend_two_state, cf_nodiff_state1, cf_nodiff_state2, cf_regeneration, cf_single_state,
    DividendTwoStateParams, NoDiffParams, TwoStateCommonParams,
};
use mmbm_core::dividend::dividend_residual;
use mmbm_core::report::{self, linspace};
use mmbm_core::simulator::{
    empirical_dividend, empirical_regeneration, empirical_stationary, simulate_path, BarrierScheme, SimConfig,
};
use mmbm_core::stationary::{balance_residual, min_increment};
use mmbm_core::{
    compute_partition, solve_stationary, solve_value_function, validate_model, validate_structure, verify_boundary,
    Atom, DividendModel, Error, MmbmModel, RawModel, StationaryCdf,
};

#[derive(Parser)]
#[command(name = "mmbm", version, about = "Reflected Markov-modulated Brownian motion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file and print its stationary vector and state classes.
    Validate {
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the interval partition and active sets.
    Decompose {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve for the joint stationary distribution.
    Stationary {
        model: PathBuf,
        #[arg(long, default_value_t = 400)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a closed-form special case from a parameter file.
    Oracle {
        kind: OracleKind,
        params: PathBuf,
        #[arg(long, default_value_t = 400)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regeneration rate and overshoot law of a two-state common-parameter model.
    Regen {
        model: PathBuf,
        #[arg(long, default_value_t = 400)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo estimates.
    Simulate(SimulateArgs),
    /// Expected discounted dividends under the model's barriers.
    Dividend {
        model: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 400)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the acceptance suite; exits 0 only if every criterion passes.
    Selftest {
        /// Run only these criteria (comma separated ids).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum OracleKind {
    Single,
    Common,
    NodiffState1,
    NodiffState2,
    Regeneration,
    Dividend,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SimMode {
    Stationary,
    Regen,
    Dividend,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Scheme {
    Bridge,
    Projected,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    model: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1e3)]
    horizon: f64,
    #[arg(long = "burn-in", default_value_t = 10.0)]
    burn_in: f64,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    z0: f64,
    /// Initial state, 1-based.
    #[arg(long, default_value_t = 1)]
    j0: usize,
    #[arg(long, value_enum, default_value_t = SimMode::Stationary)]
    mode: SimMode,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum, default_value_t = Scheme::Bridge)]
    scheme: Scheme,
    #[arg(long, default_value_t = 400)]
    grid: usize,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    #[serde(skip)]
    threads: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

enum CliError {
    Core(Error),
    Input(&'static str, String),
    Io(String),
    Failed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_input_error() => 3,
            CliError::Failed(_) => 3,
            _ => 2,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            CliError::Core(Error::Validation(v)) => json!({
                "error": "Validation",
                "message": v.to_string(),
                "violations": v.violations.iter().map(|x| {
                    let mut obj = serde_json::to_value(x).unwrap_or(Value::Null);
                    if let Value::Object(m) = &mut obj {
                        one_based_indices(m);
                        m.insert("message".into(), Value::String(x.to_string()));
                    }
                    obj
                }).collect::<Vec<_>>(),
            }),
            CliError::Core(e) => json!({"error": e.kind(), "message": e.to_string()}),
            CliError::Input(kind, msg) => json!({"error": kind, "message": msg}),
            CliError::Io(msg) => json!({"error": "Io", "message": msg}),
            CliError::Failed(msg) => json!({"error": "SelftestFailed", "message": msg}),
        }
    }
}

/// Index fields of violations are 0-based in the library; users see 1-based states and rows.
fn one_based_indices(m: &mut serde_json::Map<String, Value>) {
    for key in ["row", "col", "state", "index"] {
        if let Some(Value::Number(n)) = m.get(key) {
            if let Some(i) = n.as_u64() {
                m.insert(key.into(), json!(i + 1));
            }
        }
    }
    if let Some(Value::Array(list)) = m.get_mut("unreachable_from_first") {
        for v in list.iter_mut() {
            if let Some(i) = v.as_u64() {
                *v = json!(i + 1);
            }
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Everything needed to reproduce a run.
#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    config: Value,
    version: &'a str,
    input_sha256: Option<String>,
    seeds: Vec<u64>,
    wall_clock_seconds: f64,
}

struct Run {
    subcommand: &'static str,
    config: Value,
    input: Option<Vec<u8>>,
    seeds: Vec<u64>,
    start: Instant,
}

impl Run {
    fn new(subcommand: &'static str, config: Value) -> Self {
        Run {
            subcommand,
            config,
            input: None,
            seeds: Vec::new(),
            start: Instant::now(),
        }
    }

    fn finish(self, out: &Path) -> CliResult<()> {
        let manifest = Manifest {
            subcommand: self.subcommand,
            config: self.config,
            version: env!("CARGO_PKG_VERSION"),
            input_sha256: self.input.map(|b| format!("{:x}", Sha256::digest(&b))),
            seeds: self.seeds,
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
        };
        write_json(out, "manifest.json", &manifest)
    }
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn parse_json<T: for<'de> Deserialize<'de>>(bytes: &[u8], path: &Path) -> CliResult<T> {
    serde_json::from_slice(bytes).map_err(|e| CliError::Input("Parse", format!("{}: {e}", path.display())))
}

fn load_model(path: &Path, run: &mut Run, strict: bool) -> CliResult<MmbmModel> {
    let bytes = read_input(path)?;
    let raw: RawModel = parse_json(&bytes, path)?;
    run.input = Some(bytes);
    let model = if strict { validate_model(&raw) } else { validate_structure(&raw) };
    Ok(model.map_err(Error::from)?)
}

fn ensure_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))
}

fn write_text(out: &Path, name: &str, text: &str) -> CliResult<()> {
    ensure_dir(out)?;
    let path = out.join(name);
    fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_text(out, name, &text)
}

fn atoms_json(atoms: &[Atom]) -> Value {
    Value::Array(
        atoms
            .iter()
            .map(|a| json!({"state": a.state + 1, "location": a.location, "mass": a.mass}))
            .collect(),
    )
}

fn one_based(states: &[usize]) -> Vec<usize> {
    states.iter().map(|s| s + 1).collect()
}

fn content_grid(model: &MmbmModel, n: usize) -> Vec<f64> {
    let (lo, hi) = model.content_range();
    linspace(lo, hi, n)
}

fn validate(model_path: &Path, out: Option<&Path>) -> CliResult<()> {
    let mut run = Run::new("validate", json!({"model": model_path}));
    let m = load_model(model_path, &mut run, true)?;
    let class = m.classification();
    let summary = json!({
        "valid": true,
        "n_states": m.n_states(),
        "pi": m.pi().iter().collect::<Vec<_>>(),
        "kappa": m.kappa(),
        "e_plus": one_based(&class.e_plus()),
        "e_minus": one_based(&class.e_minus()),
    });
    println!("{}", serde_json::to_string(&summary).unwrap_or_default());
    if let Some(out) = out {
        write_json(out, "validation.json", &summary)?;
        run.finish(out)?;
    }
    Ok(())
}

fn decompose(model_path: &Path, out: &Path) -> CliResult<()> {
    let mut run = Run::new("decompose", json!({"model": model_path}));
    let m = load_model(model_path, &mut run, false)?;
    let part = compute_partition(&m)?;
    let class = m.classification();
    let intervals: Vec<Value> = (0..part.n_intervals())
        .map(|k| {
            let (lo, hi) = part.bounds(k);
            json!({"index": k + 1, "lo": lo, "hi": hi, "active": one_based(&part.active_sets[k])})
        })
        .collect();
    let doc = json!({
        "breakpoints": part.breakpoints,
        "intervals": intervals,
        "e_plus": one_based(&class.e_plus()),
        "e_minus": one_based(&class.e_minus()),
    });
    println!("{}", serde_json::to_string(&doc).unwrap_or_default());
    write_json(out, "partition.json", &doc)?;
    run.finish(out)
}

fn stationary(model_path: &Path, grid: usize, out: &Path) -> CliResult<()> {
    let mut run = Run::new("stationary", json!({"model": model_path, "grid": grid}));
    let m = load_model(model_path, &mut run, true)?;
    let dist = solve_stationary(&m)?;
    write_text(out, "cdf.csv", &report::cdf_csv(&dist, &content_grid(&m, grid)))?;
    write_json(out, "atoms.json", &atoms_json(&dist.atoms()))?;
    let (per_state, total) = dist.boundary_errors();
    let diag = dist.diagnostics();
    write_json(
        out,
        "diagnostics.json",
        &json!({
            "balance_residual": balance_residual(&m, &dist, 1000),
            "condition": diag.condition,
            "relative_residual": diag.relative_residual,
            "boundary_error_per_state": per_state,
            "boundary_error_total": total,
            "min_increment": min_increment(&m, &dist, 1000),
            "max_imaginary": dist.max_imaginary(),
        }),
    )?;
    run.finish(out)
}

#[derive(Deserialize, Serialize)]
struct SingleParams {
    mu: f64,
    sigma: f64,
    a: f64,
    b: f64,
}

fn oracle(kind: OracleKind, params: &Path, grid: usize, out: &Path) -> CliResult<()> {
    let mut run = Run::new("oracle", json!({"kind": kind, "params": params, "grid": grid}));
    let bytes = read_input(params)?;
    let cdf_outputs = |cdf: &dyn StationaryCdf, lo: f64, hi: f64| -> CliResult<()> {
        write_text(out, "cdf.csv", &report::cdf_csv(cdf, &linspace(lo, hi, grid)))?;
        write_json(out, "atoms.json", &atoms_json(&cdf.atoms()))
    };
    match kind {
        OracleKind::Single => {
            let p: SingleParams = parse_json(&bytes, params)?;
            cdf_outputs(&cf_single_state(p.mu, p.sigma, p.a, p.b)?, p.a, p.b)?;
        }
        OracleKind::Common => {
            let p: TwoStateCommonParams = parse_json(&bytes, params)?;
            let s = cf_common_two_state(p)?;
            cdf_outputs(&s.cdf, 0.0, p.b2)?;
            write_json(out, "diagnostics.json", &json!({"pi2_at_b1": s.pi2_at_b1, "k": s.k}))?;
        }
        OracleKind::NodiffState1 | OracleKind::NodiffState2 => {
            let p: NoDiffParams = parse_json(&bytes, params)?;
            let cdf = if matches!(kind, OracleKind::NodiffState1) {
                cf_nodiff_state1(p)?
            } else {
                cf_nodiff_state2(p)?
            };
            cdf_outputs(&cdf, 0.0, p.b2)?;
        }
        OracleKind::Regeneration => {
            let p: TwoStateCommonParams = parse_json(&bytes, params)?;
            let r = cf_regeneration(p)?;
            write_text(out, "regen.csv", &report::regen_csv(|z| r.h(z), &linspace(p.b1, p.b2, grid)))?;
            write_json(out, "diagnostics.json", &json!({"eta": r.eta}))?;
        }
        OracleKind::Dividend => {
            let p: DividendTwoStateParams = parse_json(&bytes, params)?;
            let v = cf_dividend_two_state(p)?;
            write_text(out, "value.csv", &report::value_csv(&v, &linspace(0.0, p.b[1], grid)))?;
            write_json(
                out,
                "diagnostics.json",
                &json!({"roots": v.roots, "k": v.k, "value_at_barriers": v.constants}),
            )?;
        }
    }
    run.input = Some(bytes);
    run.finish(out)
}

fn regen(model_path: &Path, grid: usize, out: &Path) -> CliResult<()> {
    let mut run = Run::new("regen", json!({"model": model_path, "grid": grid}));
    let m = load_model(model_path, &mut run, true)?;
    let p = TwoStateCommonParams::from_model(&m)?;
    let r = cf_regeneration(p)?;
    write_text(out, "regen.csv", &report::regen_csv(|z| r.h(z), &linspace(p.b1, p.b2, grid)))?;
    write_json(out, "diagnostics.json", &json!({"eta": r.eta}))?;
    run.finish(out)
}

fn dividend(model_path: &Path, delta: f64, grid: usize, out: &Path) -> CliResult<()> {
    let mut run = Run::new("dividend", json!({"model": model_path, "delta": delta, "grid": grid}));
    let m = load_model(model_path, &mut run, false)?;
    let dm = DividendModel::new(m, delta)?;
    let vf = solve_value_function(&dm)?;
    let (_, hi) = dm.base().content_range();
    write_text(out, "value.csv", &report::value_csv(&vf, &linspace(0.0, hi, grid)))?;
    let diag = vf.diagnostics();
    write_json(
        out,
        "diagnostics.json",
        &json!({
            "boundary": verify_boundary(&vf),
            "equation_residual": dividend_residual(&dm, &vf, 1000),
            "value_at_barriers": vf.constants(),
            "condition": diag.condition,
            "relative_residual": diag.relative_residual,
        }),
    )?;
    run.finish(out)
}

fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let config = serde_json::to_value(args).unwrap_or(Value::Null);
    let mut run = Run::new("simulate", config);
    run.seeds = vec![args.seed];
    let m = load_model(&args.model, &mut run, false)?;
    if args.j0 == 0 || args.j0 > m.n_states() {
        return Err(Error::ConfigInvalid(format!("j0 must be between 1 and {}", m.n_states())).into());
    }
    let cfg = SimConfig {
        dt: args.dt,
        horizon: args.horizon,
        burn_in: args.burn_in,
        replications: args.reps,
        seed: args.seed,
        z0: args.z0,
        j0: args.j0 - 1,
        scheme: match args.scheme {
            Scheme::Bridge => BarrierScheme::Bridge,
            Scheme::Projected => BarrierScheme::Projected,
        },
        ..Default::default()
    };
    let out = &args.out;
    let work = || -> CliResult<()> {
        match args.mode {
            SimMode::Stationary => {
                let est = simulate_path(&m, &cfg)?;
                let e = empirical_stationary(&m, &est, &content_grid(&m, args.grid));
                write_text(out, "cdf.csv", &report::empirical_cdf_csv(&e))?;
                let atoms: Vec<Atom> = (0..m.n_states())
                    .flat_map(|i| {
                        [(m.a(i), est.atom_lower[i]), (m.b(i), est.atom_upper[i])]
                            .into_iter()
                            .filter(|(_, t)| *t > 0.0)
                            .map(move |(z, t)| Atom {
                                state: i,
                                location: z,
                                mass: t / est.observed_time,
                            })
                    })
                    .collect();
                write_json(out, "atoms.json", &atoms_json(&atoms))?;
                write_json(
                    out,
                    "diagnostics.json",
                    &json!({
                        "observed_time": est.observed_time,
                        "steps": est.steps,
                        "regulator_lower": est.regulator_lower,
                        "regulator_upper": est.regulator_upper,
                    }),
                )
            }
            SimMode::Regen => {
                let est = simulate_path(&m, &cfg)?;
                let r = empirical_regeneration(&est)?;
                let (b1, b2) = (m.b(0), m.content_range().1);
                write_text(out, "regen.csv", &report::empirical_regen_csv(&r, &linspace(b1, b2, args.grid)))?;
                write_json(
                    out,
                    "diagnostics.json",
                    &json!({"eta": r.eta, "eta_half_width": r.eta_half_width, "cycles": r.cycles}),
                )
            }
            SimMode::Dividend => {
                let delta = args
                    .delta
                    .ok_or_else(|| CliError::Input("InvalidArgument", "--mode dividend needs --delta".into()))?;
                let e = empirical_dividend(&m, delta, &cfg)?;
                let text = format!(
                    "state,z,value,std_error,ruin_fraction\n{},{},{},{},{}\n",
                    args.j0,
                    report::num(args.z0),
                    report::num(e.mean),
                    report::num(e.std_error),
                    report::num(e.ruin_fraction)
                );
                write_text(out, "value.csv", &text)?;
                write_json(out, "diagnostics.json", &e)
            }
        }
    };
    match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Input("InvalidArgument", e.to_string()))?
            .install(work)?,
        None => work()?,
    }
    run.finish(out)
}

fn selftest(only: &[u8], out: Option<&Path>) -> CliResult<()> {
    let run = Run::new("selftest", json!({"only": only}));
    let ids: Vec<u8> = if only.is_empty() {
        CRITERIA.iter().map(|c| c.0).collect()
    } else {
        only.to_vec()
    };
    let mut outcomes = Vec::new();
    for id in ids {
        let o = run_criterion(id);
        println!("{o}");
        outcomes.push(o);
    }
    if let Some(out) = out {
        write_json(out, "selftest.json", &outcomes)?;
        run.finish(out)?;
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("criteria failed: {failed:?}")))
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Validate { model, out } => validate(&model, out.as_deref()),
        Command::Decompose { model, out } => decompose(&model, &out),
        Command::Stationary { model, grid, out } => stationary(&model, grid, &out),
        Command::Oracle { kind, params, grid, out } => oracle(kind, &params, grid, &out),
        Command::Regen { model, grid, out } => regen(&model, grid, &out),
        Command::Simulate(args) => simulate(&args),
        Command::Dividend { model, delta, grid, out } => dividend(&model, delta, grid, &out),
        Command::Selftest { only, out } => selftest(&only, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Core(Error::NumericallySingular { condition: 1e15 }).exit_code(), 3);
        assert_eq!(CliError::Core(Error::ComplexRoots).exit_code(), 3);
        assert_eq!(CliError::Core(Error::ConfigInvalid("dt".into())).exit_code(), 2);
        assert_eq!(CliError::Input("Parse", String::new()).exit_code(), 2);
        assert_eq!(CliError::Failed(String::new()).exit_code(), 3);
    }

    #[test]
    fn violation_indices_become_one_based() {
        let v = mmbm_core::ValidationError {
            violations: vec![mmbm_core::Violation::NegativeRate { row: 0, col: 2, value: -1.0 }],
        };
        let j = CliError::Core(Error::Validation(v)).to_json();
        assert_eq!(j["violations"][0]["row"], 1);
        assert_eq!(j["violations"][0]["col"], 3);
    }
}
