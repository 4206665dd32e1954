//! `pillow`: command-line access to the carpet graphs, resistances, traces,
//! kernels and the verification suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use pillow_carpet::carpet::coarse_embed;
use pillow_carpet::energy::{
    border_resistance_on, corner_resistance_on, natural_energy, BorderPair, ComputeConfig, EnergyConvention,
    SolverMethod, SolverOptions,
};
use pillow_carpet::extension::{check_kernels, extend, pre_extension_kernels};
use pillow_carpet::io;
use pillow_carpet::pattern::{validate_pattern_with, Connectivity, PilingPattern};
use pillow_carpet::scaling::{estimate_rho, inequality_report, resistance_table};
use pillow_carpet::trace::trace_form;
use pillow_carpet::verify::{exit_code_for, run_verify, PatternSource, RunConfig, EXIT_INVALID_PATTERN};
use pillow_carpet::walk::{commute_time_resistance, WalkOptions, DEFAULT_STEP_CAP};
use pillow_carpet::CarpetError;

#[derive(Parser, Debug)]
#[command(name = "pillow", version, about = "Approximating graphs and resistance estimates for pillow-type carpets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check admissibility of a pattern.
    Check {
        #[command(flatten)]
        common: Common,
        /// Cell adjacency used for the connectedness condition.
        #[arg(long, value_enum, default_value_t = ConnArg::Corner)]
        connectivity: ConnArg,
    },
    /// Export the level-n graph.
    Graph {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        level: usize,
    },
    /// Corner and border resistances at one level.
    Resistance {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        level: usize,
    },
    /// Resistance table, scaling estimate and inequality report.
    Scaling {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        max_level: usize,
    },
    /// Trace of the level-fine energy on the level-coarse vertices.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        coarse: usize,
        #[arg(long, default_value_t = 2)]
        fine: usize,
    },
    /// Pre-extension kernels on one level.
    Kernels {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        level: usize,
    },
    /// Extend a coarse function to a finer level.
    Extend {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        coarse: usize,
        #[arg(long, default_value_t = 3)]
        fine: usize,
        /// Coarse input: lattice x coordinate, or uniform random values.
        #[arg(long, value_enum, default_value_t = InputArg::X)]
        input: InputArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Resistance minimizer as a vertex function.
    Harmonic {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[arg(long, value_enum, default_value_t = TerminalArg::Corner)]
        terminals: TerminalArg,
    },
    /// Monte Carlo corner resistance from commute times.
    Walk {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
        step_cap: u64,
    },
    /// Run the full verification suite.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        max_level: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
        step_cap: u64,
        /// Regression fixtures file (the bundled copy when absent).
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Write this run's values into the fixtures file.
        #[arg(long, requires = "fixtures")]
        bless: bool,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Builtin pattern name or path to a pattern file.
    #[arg(long, default_value = "sierpinski3")]
    pattern: String,
    #[arg(long, value_enum, default_value_t = SolverArg::Iterative)]
    solver: SolverArg,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = EnergyArg::Pair)]
    energy: EnergyArg,
    /// Largest number of cells at the deepest level.
    #[arg(long)]
    budget: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SolverArg {
    Iterative,
    Dense,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EnergyArg {
    Pair,
    Mult,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ConnArg {
    Corner,
    Edge,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum InputArg {
    X,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TerminalArg {
    Corner,
    Border,
}

impl Common {
    fn compute(&self) -> Result<ComputeConfig, CarpetError> {
        if !(self.tol > 0.0 && self.tol <= 1e-4) {
            return Err(CarpetError::Precondition(format!("tolerance {:e} is outside (0, 1e-4]", self.tol)));
        }
        if self.budget == Some(0) {
            return Err(CarpetError::Precondition("cell budget must be positive".into()));
        }
        Ok(ComputeConfig {
            convention: match self.energy {
                EnergyArg::Pair => EnergyConvention::UnitPair,
                EnergyArg::Mult => EnergyConvention::Multiplicity,
            },
            solver: SolverOptions {
                method: match self.solver {
                    SolverArg::Iterative => SolverMethod::Iterative,
                    SolverArg::Dense => SolverMethod::Dense,
                },
                tol: self.tol,
                max_iter: None,
            },
            cell_budget: self.budget,
        })
    }

    fn source(&self) -> PatternSource {
        PatternSource::from_arg(&self.pattern)
    }

    fn load(&self) -> Result<PilingPattern, CarpetError> {
        self.source().load()
    }

    /// Loads the pattern and refuses inadmissible ones.
    fn admissible(&self) -> Result<PilingPattern, CarpetError> {
        let p = self.load()?;
        let report = pillow_carpet::pattern::validate_pattern(&p);
        if !report.admissible {
            return Err(CarpetError::Inadmissible(report.failure_summary()));
        }
        Ok(p)
    }
}

enum Output {
    Json(Value),
    Text(String),
}

struct Run {
    output: Output,
    pattern: Option<PilingPattern>,
    params: Value,
    exit: i32,
}

impl Run {
    fn ok(output: Output, p: &PilingPattern, params: Value) -> Self {
        Run { output, pattern: Some(p.clone()), params, exit: 0 }
    }
}

fn execute(cmd: &Command) -> Result<Run, CarpetError> {
    match cmd {
        Command::Check { common, connectivity } => {
            let p = common.load()?;
            let conn = match connectivity {
                ConnArg::Corner => Connectivity::Corner,
                ConnArg::Edge => Connectivity::Edge,
            };
            let r = validate_pattern_with(&p, conn);
            let cond = |c: &pillow_carpet::pattern::ConditionResult| json!({"ok": c.ok, "detail": c.detail});
            let v = json!({
                "L": p.side(),
                "norm": r.norm,
                "pc1": cond(&r.pc1),
                "pc2": cond(&r.pc2),
                "pc3": cond(&r.pc3),
                "pc4": cond(&r.pc4),
                "admissible": r.admissible,
            });
            let exit = if r.admissible { 0 } else { EXIT_INVALID_PATTERN };
            Ok(Run { output: Output::Json(v), pattern: Some(p), params: json!({"connectivity": format!("{connectivity:?}").to_lowercase()}), exit })
        }
        Command::Graph { common, level } => {
            let p = common.admissible()?;
            let g = common.compute()?.graph(&p, *level)?;
            let out = match common.format {
                FormatArg::Json => Output::Json(io::graph_json(&g)),
                FormatArg::Csv => {
                    let mut s = String::from("u,v,mult\n");
                    for e in g.edges() {
                        s.push_str(&format!("{},{},{}\n", e.u, e.v, e.mult));
                    }
                    Output::Text(s)
                }
            };
            Ok(Run::ok(out, &p, json!({"level": level})))
        }
        Command::Resistance { common, level } => {
            let p = common.admissible()?;
            let cfg = common.compute()?;
            let g = cfg.graph(&p, *level)?;
            let q = natural_energy(&g, cfg.convention);
            let c = corner_resistance_on(&g, &q, 0, &cfg.solver)?;
            let b = border_resistance_on(&g, &q, BorderPair::LeftRight, &cfg.solver)?;
            let out = match common.format {
                FormatArg::Json => Output::Json(json!({
                    "corner": io::resistance_json(*level, &c),
                    "border": io::resistance_json(*level, &b),
                })),
                FormatArg::Csv => Output::Text(format!(
                    "n,R_n,Rbar_n,residual\n{},{:?},{:?},{:?}\n",
                    level,
                    c.value,
                    b.value,
                    c.residual.max(b.residual)
                )),
            };
            Ok(Run::ok(out, &p, json!({"level": level})))
        }
        Command::Scaling { common, max_level } => {
            let p = common.admissible()?;
            let cfg = common.compute()?;
            let t = resistance_table(&p, *max_level, &cfg)?;
            let out = match common.format {
                FormatArg::Csv => Output::Text(io::scaling_csv(&t)),
                FormatArg::Json => {
                    let report = inequality_report(&t);
                    let estimate = estimate_rho(&t).ok();
                    Output::Json(json!({"table": t, "estimate": estimate, "inequalities": io::inequality_json(&report)}))
                }
            };
            Ok(Run::ok(out, &p, json!({"max_level": max_level})))
        }
        Command::Trace { common, coarse, fine } => {
            let p = common.admissible()?;
            let cfg = common.compute()?;
            if coarse > fine {
                return Err(CarpetError::Precondition("coarse level exceeds fine level".into()));
            }
            let gm = cfg.graph(&p, *fine)?;
            let gn = cfg.graph(&p, *coarse)?;
            let t = trace_form(&gm, &gn, &cfg)?;
            Ok(Run::ok(Output::Json(io::trace_json(&t)), &p, json!({"coarse": coarse, "fine": fine})))
        }
        Command::Kernels { common, level } => {
            let p = common.admissible()?;
            let cfg = common.compute()?;
            let g = cfg.graph(&p, *level)?;
            let ks = pre_extension_kernels(&g, &cfg)?;
            let checks = check_kernels(&g, &ks)?;
            let exit = if checks.all_ok() { 0 } else { 1 };
            let out = match common.format {
                FormatArg::Csv => Output::Text(io::kernel_csv(&g, &ks)),
                FormatArg::Json => Output::Json(json!({
                    "level": level,
                    "border_resistance": ks.border_resistance,
                    "energies": ks.energies,
                    "checks": checks,
                })),
            };
            Ok(Run { output: out, pattern: Some(p), params: json!({"level": level}), exit })
        }
        Command::Extend { common, coarse, fine, input, seed } => {
            let p = common.admissible()?;
            let cfg = common.compute()?;
            if coarse > fine {
                return Err(CarpetError::Precondition("coarse level exceeds fine level".into()));
            }
            let gn = cfg.graph(&p, *coarse)?;
            let gm = cfg.graph(&p, *fine)?;
            let gk = cfg.graph(&p, fine - coarse)?;
            let ks = pre_extension_kernels(&gk, &cfg)?;
            let emb = coarse_embed(&gn, &gm)?;
            let f: Vec<f64> = match input {
                InputArg::X => (0..gn.num_vertices()).map(|v| gn.point(v).0 as f64).collect(),
                InputArg::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    (0..gn.num_vertices()).map(|_| rng.gen::<f64>()).collect()
                }
            };
            let r = extend(&gn, &gm, &gk, &ks, &emb, &f, &cfg)?;
            let out = match common.format {
                FormatArg::Csv => Output::Text(io::function_csv(&gm, &r.values)),
                FormatArg::Json => Output::Json(json!({
                    "coarse_level": coarse,
                    "fine_level": fine,
                    "fine_energy": r.fine_energy,
                    "coarse_energy": r.coarse_energy,
                    "energy_ratio": r.energy_ratio,
                    "max_overlap_gap": r.max_overlap_gap,
                    "restriction_exact": r.restriction_exact,
                    "cell_extrema_ok": r.cell_extrema_ok,
                })),
            };
            let params = json!({"coarse": coarse, "fine": fine, "input": format!("{input:?}").to_lowercase(), "seed": seed});
            Ok(Run::ok(out, &p, params))
        }
        Command::Harmonic { common, level, terminals } => {
            let p = common.admissible()?;
            let cfg = common.compute()?;
            let g = cfg.graph(&p, *level)?;
            let q = natural_energy(&g, cfg.convention);
            let r = match terminals {
                TerminalArg::Corner => corner_resistance_on(&g, &q, 0, &cfg.solver)?,
                TerminalArg::Border => border_resistance_on(&g, &q, BorderPair::LeftRight, &cfg.solver)?,
            };
            let out = match common.format {
                FormatArg::Csv => Output::Text(io::function_csv(&g, &r.potential)),
                FormatArg::Json => {
                    let values: Vec<Value> = (0..g.num_vertices())
                        .map(|v| {
                            let (x, y) = g.point(v);
                            json!({"id": v, "x": x, "y": y, "value": r.potential[v]})
                        })
                        .collect();
                    Output::Json(json!({"resistance": io::resistance_json(*level, &r), "values": values}))
                }
            };
            let params = json!({"level": level, "terminals": format!("{terminals:?}").to_lowercase()});
            Ok(Run::ok(out, &p, params))
        }
        Command::Walk { common, level, samples, seed, step_cap } => {
            let p = common.admissible()?;
            let cfg = common.compute()?;
            let g = cfg.graph(&p, *level)?;
            let c = g.corner_ids();
            let opts = WalkOptions { samples: *samples, seed: *seed, step_cap: *step_cap };
            let w = commute_time_resistance(&g, c[0], c[1], cfg.convention, &opts)?;
            let params = json!({"level": level, "samples": samples, "seed": seed, "step_cap": step_cap});
            Ok(Run::ok(Output::Json(io::walk_json(&w)), &p, params))
        }
        Command::Verify { common, max_level, samples, seed, step_cap, fixtures, bless } => {
            let cfg = RunConfig {
                pattern: common.source(),
                max_level: *max_level,
                compute: common.compute()?,
                seed: *seed,
                samples: *samples,
                step_cap: *step_cap,
                fixtures: fixtures.clone(),
                bless: *bless,
                ..RunConfig::default()
            };
            let report = run_verify(&cfg);
            let params = json!({"max_level": max_level, "samples": samples, "seed": seed, "step_cap": step_cap});
            Ok(Run { output: Output::Json(report.to_json()), pattern: common.load().ok(), params, exit: report.exit })
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Check { common, .. }
        | Command::Graph { common, .. }
        | Command::Resistance { common, .. }
        | Command::Scaling { common, .. }
        | Command::Trace { common, .. }
        | Command::Kernels { common, .. }
        | Command::Extend { common, .. }
        | Command::Harmonic { common, .. }
        | Command::Walk { common, .. }
        | Command::Verify { common, .. } => common,
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Check { .. } => "check",
        Command::Graph { .. } => "graph",
        Command::Resistance { .. } => "resistance",
        Command::Scaling { .. } => "scaling",
        Command::Trace { .. } => "trace",
        Command::Kernels { .. } => "kernels",
        Command::Extend { .. } => "extend",
        Command::Harmonic { .. } => "harmonic",
        Command::Walk { .. } => "walk",
        Command::Verify { .. } => "verify",
    }
}

fn metadata(cmd: &Command, run: Option<&Run>, exit: i32) -> Value {
    let c = common(cmd);
    json!({
        "tool": "pillow",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": pillow_carpet::VERSION,
        "command": name(cmd),
        "pattern": c.pattern,
        "pattern_hash": run.and_then(|r| r.pattern.as_ref()).map(io::pattern_hash),
        "config": {
            "solver": format!("{:?}", c.solver).to_lowercase(),
            "tol": c.tol,
            "energy": format!("{:?}", c.energy).to_lowercase(),
            "budget": c.budget,
            "format": format!("{:?}", c.format).to_lowercase(),
        },
        "parameters": run.map(|r| r.params.clone()),
        "exit": exit,
    })
}

fn write(path: Option<&PathBuf>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cmd = &cli.command;
    let c = common(cmd);
    let (run, exit) = match execute(cmd) {
        Ok(run) => {
            let exit = run.exit;
            (Some(run), exit)
        }
        Err(e) => {
            eprintln!("error: {e}");
            (None, exit_code_for(&e))
        }
    };
    if let Some(run) = &run {
        let text = match &run.output {
            Output::Json(v) => io::to_json_string(v),
            Output::Text(s) => s.clone(),
        };
        if let Err(e) = write(c.out.as_ref(), &text) {
            eprintln!("error: cannot write output: {e}");
            return ExitCode::from(1);
        }
    }
    let meta = io::to_json_string(&metadata(cmd, run.as_ref(), exit));
    match &c.out {
        Some(out) => {
            let mut path = out.clone().into_os_string();
            path.push(".meta.json");
            if let Err(e) = std::fs::write(&path, meta) {
                eprintln!("error: cannot write metadata: {e}");
                return ExitCode::from(1);
            }
        }
        None => eprint!("{meta}"),
    }
    ExitCode::from(exit as u8)
}
