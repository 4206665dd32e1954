//! The full verification suite behind `pillow verify`.
//!
//! Checks run in a fixed order and each produces one report entry. Pinned
//! values from a previous blessed run live in a versioned fixtures file; the
//! suite compares against them and only rewrites them when asked to.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::carpet::{
    coarse_embed, is_automorphism, planar_vertex_count, symmetry_permutation, ulf_stats, CarpetGraph,
};
use crate::energy::{
    cell_energy_sum, corner_resistance_on, effective_resistance, left_half_minimum, natural_energy, ComputeConfig,
    EnergyConvention,
};
use crate::error::{CarpetError, Result};
use crate::extension::{check_kernels, extend, pre_extension_kernels, restriction_ratio};
use crate::io::{parse_pattern_file, pattern_hash};
use crate::pattern::{builtin_pattern, validate_pattern, PilingPattern, SquareIsometry};
use crate::scaling::{holder_profile, inequality_report, resistance_table, CheckStatus};
use crate::trace::{comparability, trace_form_on};
use crate::walk::{commute_time_resistance, WalkOptions, DEFAULT_STEP_CAP};

/// Fixtures shipped with the crate.
pub const BUNDLED_FIXTURES: &str = include_str!("../fixtures/regression.json");

/// Relative tolerance for pinned regression values.
pub const REGRESSION_TOL: f64 = 1e-6;

/// Tolerance for trace fidelity checks.
pub const TRACE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PatternSource {
    Builtin(String),
    File(PathBuf),
}

impl PatternSource {
    /// A builtin name, or a path when the argument names an existing file or ends in `.json`.
    pub fn from_arg(arg: &str) -> Self {
        if Path::new(arg).is_file() || arg.ends_with(".json") {
            PatternSource::File(arg.into())
        } else {
            PatternSource::Builtin(arg.into())
        }
    }

    pub fn label(&self) -> String {
        match self {
            PatternSource::Builtin(name) => name.clone(),
            PatternSource::File(path) => path.display().to_string(),
        }
    }

    pub fn load(&self) -> Result<PilingPattern> {
        match self {
            PatternSource::Builtin(name) => builtin_pattern(name),
            PatternSource::File(path) => parse_pattern_file(&std::fs::read_to_string(path)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub pattern: PatternSource,
    pub max_level: usize,
    pub compute: ComputeConfig,
    pub seed: u64,
    /// Monte Carlo round trips.
    pub samples: u64,
    pub step_cap: u64,
    /// Random functions per sampled check.
    pub random_functions: usize,
    /// Fixtures file; the bundled copy is used when absent.
    pub fixtures: Option<PathBuf>,
    pub bless: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pattern: PatternSource::Builtin("sierpinski3".into()),
            max_level: 3,
            compute: ComputeConfig::default(),
            seed: 0,
            samples: 10_000,
            step_cap: DEFAULT_STEP_CAP,
            random_functions: 20,
            fixtures: None,
            bless: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let tol = self.compute.solver.tol;
        if !(tol > 0.0 && tol <= 1e-4) {
            return Err(CarpetError::Precondition(format!("tolerance {tol:e} is outside (0, 1e-4]")));
        }
        if self.compute.cell_budget == Some(0) {
            return Err(CarpetError::Precondition("cell budget must be positive".into()));
        }
        if self.samples == 0 || self.step_cap == 0 {
            return Err(CarpetError::Precondition("sample count and step cap must be positive".into()));
        }
        if self.bless && self.fixtures.is_none() {
            return Err(CarpetError::Precondition("--bless needs an explicit fixtures path".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub status: CheckStatus,
    pub observed: Value,
    pub expected: Value,
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub pattern: String,
    pub pattern_hash: Option<String>,
    pub max_level: usize,
    pub checks: Vec<CheckEntry>,
    /// Values pinned by this run, in fixtures form.
    pub regression: BTreeMap<String, f64>,
    pub exit: i32,
}

impl VerifyReport {
    pub fn check(&self, name: &str) -> Option<&CheckEntry> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Value {
        json!({"pattern": self.pattern, "pattern_hash": self.pattern_hash, "max_level": self.max_level, "checks": self.checks, "exit": self.exit})
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_INVALID_PATTERN: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Exit status for an error that stopped a command.
pub fn exit_code_for(e: &CarpetError) -> i32 {
    match e {
        CarpetError::Structural(_) | CarpetError::Inadmissible(_) | CarpetError::Parse { .. } | CarpetError::UnknownPattern { .. } => {
            EXIT_INVALID_PATTERN
        }
        e if e.is_solver_error() => EXIT_SOLVER,
        _ => EXIT_VIOLATION,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Fixtures {
    pub version: u32,
    pub entries: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Fixtures {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CarpetError::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fixtures serialize");
        s.push('\n');
        s
    }
}

/// Key of a fixtures entry: pattern hash, level and energy convention.
pub fn fixture_key(hash: &str, max_level: usize, convention: EnergyConvention) -> String {
    let conv = match convention {
        EnergyConvention::UnitPair => "pair",
        EnergyConvention::Multiplicity => "mult",
    };
    format!("{}/N{max_level}/{conv}", &hash[..16])
}

struct Suite {
    checks: Vec<CheckEntry>,
    regression: BTreeMap<String, f64>,
}

impl Suite {
    fn push(&mut self, name: &str, ok: bool, observed: Value, expected: Value, tolerance: Option<f64>) {
        let status = if ok { CheckStatus::Pass } else { CheckStatus::Fail };
        self.push_status(name, status, observed, expected, tolerance);
    }

    fn push_status(&mut self, name: &str, status: CheckStatus, observed: Value, expected: Value, tolerance: Option<f64>) {
        if status == CheckStatus::Fail {
            log::warn!("check {name} failed: observed {observed}, expected {expected}");
        }
        self.checks.push(CheckEntry { name: name.into(), status, observed, expected, tolerance });
    }

    fn pin(&mut self, key: &str, value: f64) {
        self.regression.insert(key.into(), value);
    }
}

fn random_function(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Runs the suite. Errors that stop it early (invalid pattern, solver
/// failure) still produce a report, with the matching exit status.
pub fn run_verify(cfg: &RunConfig) -> VerifyReport {
    let mut suite = Suite { checks: Vec::new(), regression: BTreeMap::new() };
    let mut hash = None;
    let outcome = run_checks(cfg, &mut suite, &mut hash);
    let exit = match outcome {
        Ok(()) => {
            if suite.checks.iter().any(|c| c.status == CheckStatus::Fail) {
                EXIT_VIOLATION
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            let code = exit_code_for(&e);
            suite.push_status("aborted", CheckStatus::Fail, json!(e.to_string()), Value::Null, None);
            code
        }
    };
    VerifyReport {
        pattern: cfg.pattern.label(),
        pattern_hash: hash,
        max_level: cfg.max_level,
        checks: suite.checks,
        regression: suite.regression,
        exit,
    }
}

fn run_checks(cfg: &RunConfig, s: &mut Suite, hash_out: &mut Option<String>) -> Result<()> {
    cfg.validate()?;
    let p = cfg.pattern.load()?;
    let hash = pattern_hash(&p);
    *hash_out = Some(hash.clone());
    let big_n = cfg.max_level;
    let cc = &cfg.compute;
    let opts = &cc.solver;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // admissibility
    let adm = validate_pattern(&p);
    s.push(
        "admissibility",
        adm.admissible,
        json!({"pc1": adm.pc1.ok, "pc2": adm.pc2.ok, "pc3": adm.pc3.ok, "pc4": adm.pc4.ok, "norm": adm.norm}),
        json!("PC1-PC4 hold"),
        None,
    );
    if !adm.admissible {
        return Err(CarpetError::Inadmissible(adm.failure_summary()));
    }

    // graph construction
    let graphs: Vec<CarpetGraph> = (0..=big_n).map(|n| cc.graph(&p, n)).collect::<Result<_>>()?;
    let mut ulf_ok = true;
    let mut incidence = Vec::new();
    for g in &graphs {
        let u = ulf_stats(g);
        ulf_ok &= u.incidence_ok && u.degree_ok;
        incidence.push(u.max_cell_incidence);
    }
    s.push("ulf", ulf_ok, json!(incidence), json!(format!("at most {}", 2 * p.norm())), None);
    let mut sym_ok = true;
    for g in &graphs {
        for iso in SquareIsometry::all() {
            sym_ok &= is_automorphism(g, &symmetry_permutation(g, &iso)?);
        }
    }
    s.push("symmetry_automorphisms", sym_ok, json!(sym_ok), json!(true), None);
    if p.max_multiplicity() <= 1 {
        let observed: Vec<usize> = graphs.iter().map(|g| g.num_vertices()).collect();
        let expected: Vec<u64> = (0..=big_n).map(|n| planar_vertex_count(&p, n)).collect::<Result<_>>()?;
        let ok = observed.iter().zip(&expected).all(|(&a, &b)| a as u64 == b);
        s.push("planar_vertex_count", ok, json!(observed), json!(expected), None);
    } else {
        s.push_status("planar_vertex_count", CheckStatus::Warn, Value::Null, json!("pattern is piled"), None);
    }
    let closure: Vec<usize> = graphs.iter().map(|g| g.closure_pairs()).collect();
    s.push_status("glue_closure_pairs", CheckStatus::Pass, json!(closure), Value::Null, None);

    let g_top = &graphs[big_n];
    let q_top = natural_energy(g_top, cc.convention);

    // energy-reduction sandwich
    let mut violations = 0usize;
    let mut sharing: f64 = 1.0;
    for n in 1..=big_n {
        let c_ulf = ulf_stats(&graphs[n]).max_cell_incidence as f64;
        for _ in 0..cfg.random_functions {
            let f = random_function(&mut rng, g_top.num_vertices());
            let d = q_top.value(&f);
            let sum = cell_energy_sum(g_top, &graphs[big_n - n], &f, cc.convention)?;
            if d > sum * (1.0 + 1e-12) || d < sum / c_ulf * (1.0 - 1e-12) {
                violations += 1;
            }
            sharing = sharing.max(sum / d);
        }
    }
    s.push("energy_reduction_sandwich", violations == 0, json!({"violations": violations, "sharing_factor": sharing}), json!(0), Some(1e-12));

    // traces
    let corner_top = corner_resistance_on(g_top, &q_top, 0, opts)?;
    let r_top = corner_top.value;
    let emb0 = coarse_embed(&graphs[0], g_top)?;
    let t0 = trace_form_on(&q_top, emb0.clone(), big_n, 0, opts)?;
    let c0 = graphs[0].corner_ids();
    let r_trace = effective_resistance(&t0.form()?, &[c0[0]], &[c0[1]], opts)?.value;
    s.push("trace_resistance", rel(r_trace, r_top) <= TRACE_TOL, json!(r_trace), json!(r_top), Some(TRACE_TOL));
    if big_n >= 2 {
        let emb1 = coarse_embed(&graphs[1], g_top)?;
        let t1 = trace_form_on(&q_top, emb1.clone(), big_n, 1, opts)?;
        let via = t1.reduce(&emb0, 0, opts)?;
        let scale = t0.matrix.amax();
        let gap = (&via.matrix - &t0.matrix).amax() / scale;
        s.push("trace_transitivity", gap <= TRACE_TOL, json!(gap), json!(0.0), Some(TRACE_TOL));

        let q1 = natural_energy(&graphs[1], cc.convention);
        let r1 = corner_resistance_on(&graphs[1], &q1, 0, opts)?.value;
        let (lo, hi) = comparability(&(r_top * &t1.matrix), &(r1 * q1.to_dense()))?;
        s.push("trace_comparability", lo > 0.0 && hi.is_finite(), json!([lo, hi]), Value::Null, None);
        s.pin("c_t_lo", lo);
        s.pin("c_t_hi", hi);

        // restriction ratio on V_1 ⊂ V_N, for the corner minimizer and random f
        let r_k = corner_resistance_on(&graphs[big_n - 1], &natural_energy(&graphs[big_n - 1], cc.convention), 0, opts)?.value;
        let mut c_r = restriction_ratio(&q1, &q_top, &emb1, &corner_top.potential, r_k).unwrap_or(0.0);
        for _ in 0..cfg.random_functions {
            let f = random_function(&mut rng, g_top.num_vertices());
            c_r = c_r.max(restriction_ratio(&q1, &q_top, &emb1, &f, r_k).unwrap_or(0.0));
        }
        s.push("restriction_ratio", c_r.is_finite() && c_r > 0.0, json!(c_r), Value::Null, None);
        s.pin("c_r", c_r);
    }

    // kernels and half-plane bound
    let mut kernel_ok = true;
    let mut pek4: f64 = 0.0;
    let mut pek1: f64 = 0.0;
    let mut half_min = f64::INFINITY;
    let mut kernels = Vec::new();
    for g in &graphs {
        let ks = pre_extension_kernels(g, cc)?;
        let c = check_kernels(g, &ks)?;
        kernel_ok &= c.all_ok();
        pek4 = pek4.max(c.pek4_observed);
        pek1 = pek1.max(c.pek1_max_violation);
        half_min = half_min.min(left_half_minimum(g, &ks.h));
        kernels.push(ks);
    }
    s.push("kernels", kernel_ok, json!({"pek1": pek1, "pek4": pek4}), json!({"pek1": 1e-9, "pek4": 272.0}), Some(1e-9));
    s.push("half_plane_bound", half_min >= 0.5 - 1e-9, json!(half_min), json!(0.5), Some(1e-9));

    // extension
    if big_n >= 2 {
        let g1 = &graphs[1];
        let emb = coarse_embed(g1, g_top)?;
        let ks = &kernels[big_n - 1];
        let mut inputs = vec![(0..g1.num_vertices()).map(|v| g1.point(v).0 as f64).collect::<Vec<f64>>()];
        for _ in 0..cfg.random_functions {
            inputs.push(random_function(&mut rng, g1.num_vertices()));
        }
        let mut ok = true;
        let mut c_e: f64 = 0.0;
        for f in &inputs {
            let r = extend(g1, g_top, &graphs[big_n - 1], ks, &emb, f, cc)?;
            ok &= r.restriction_exact && r.cell_extrema_ok;
            c_e = c_e.max(r.energy_ratio.unwrap_or(0.0));
        }
        s.push("extension", ok && c_e.is_finite(), json!({"c_e": c_e}), json!("restriction exact, cell extrema kept"), Some(1e-9));
        s.pin("c_e", c_e);
    }

    // scaling inequalities
    let table = resistance_table(&p, big_n, cc)?;
    let report = inequality_report(&table);
    for c in &report.checks {
        let name = format!("inequality_{}", c.name);
        s.push_status(&name, c.status, json!(c.observed), json!(c.reference), c.relative_change.map(|_| crate::scaling::STABILITY_TOL));
    }
    for (n, row) in table.rows.iter().enumerate() {
        s.pin(&format!("R_{n}"), row.corner);
        s.pin(&format!("Rbar_{n}"), row.border);
    }
    let k = &report.constants;
    for (key, v) in [("c_dagger", k.c_dagger), ("c_d", k.c_d), ("c_c", k.c_c), ("c_rd", k.c_rd), ("a_priori_margin", k.a_priori_margin)] {
        s.pin(key, v);
    }
    if let Some(e) = &report.estimate {
        s.pin("r_hat", e.r_hat);
        s.pin("r_hat_spread", e.spread_last_two);
        s.pin("regression_rate", e.regression_rate);
    }
    let fit = holder_profile(g_top, &corner_top.potential, r_top * corner_top.energy, 64)?;
    let holder_ok = fit.theta_hat.is_some_and(|t| t >= fit.theta_h) && fit.c_bound.is_finite();
    s.push("holder", holder_ok, json!({"theta_hat": fit.theta_hat, "c_hat": fit.c_hat}), json!({"theta_min": fit.theta_h}), None);

    // Monte Carlo
    let walk = commute_time_resistance(
        g_top,
        g_top.corner_ids()[0],
        g_top.corner_ids()[1],
        cc.convention,
        &WalkOptions { samples: cfg.samples, seed: cfg.seed, step_cap: cfg.step_cap },
    )?;
    let z = (walk.estimate - r_top).abs() / walk.stderr.max(f64::MIN_POSITIVE);
    let status = if z > 3.0 {
        CheckStatus::Fail
    } else if walk.aborted {
        CheckStatus::Warn
    } else {
        CheckStatus::Pass
    };
    s.push_status(
        "monte_carlo",
        status,
        json!({"estimate": walk.estimate, "stderr": walk.stderr, "samples": walk.samples, "aborted": walk.aborted}),
        json!(r_top),
        Some(3.0),
    );

    regression_check(cfg, s, &hash)
}

fn regression_check(cfg: &RunConfig, s: &mut Suite, hash: &str) -> Result<()> {
    let key = fixture_key(hash, cfg.max_level, cfg.compute.convention);
    let text = match &cfg.fixtures {
        Some(path) if path.exists() => std::fs::read_to_string(path)?,
        Some(_) => String::new(),
        None => BUNDLED_FIXTURES.to_string(),
    };
    let mut fixtures = if text.is_empty() { Fixtures { version: 1, ..Default::default() } } else { Fixtures::parse(&text)? };
    match fixtures.entries.get(&key) {
        Some(pinned) => {
            let mut worst: f64 = 0.0;
            let mut mismatched = Vec::new();
            for (name, &expected) in pinned {
                match s.regression.get(name) {
                    Some(&got) => {
                        let d = rel(got, expected);
                        worst = worst.max(d);
                        if d > REGRESSION_TOL {
                            mismatched.push(name.clone());
                        }
                    }
                    None => mismatched.push(name.clone()),
                }
            }
            let ok = mismatched.is_empty();
            s.push("regression", ok, json!({"key": key, "worst_relative": worst, "mismatched": mismatched}), json!(pinned), Some(REGRESSION_TOL));
        }
        None => s.push_status("regression", CheckStatus::Warn, json!({"key": key}), json!("no pinned values"), Some(REGRESSION_TOL)),
    }
    if cfg.bless {
        let failed = s.checks.iter().any(|c| c.status == CheckStatus::Fail && c.name != "regression");
        if failed {
            return Err(CarpetError::Precondition("refusing to bless a run with failing checks".into()));
        }
        fixtures.version = 1;
        fixtures.entries.insert(key, s.regression.clone());
        let path = cfg.fixtures.as_ref().expect("validated");
        std::fs::write(path, fixtures.to_text())?;
        log::info!("pinned {} values into {}", s.regression.len(), path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::SolverOptions;

    #[test]
    fn tolerance_bounds() {
        let mut cfg = RunConfig::default();
        cfg.compute.solver = SolverOptions::with_tol(1e-3);
        assert!(cfg.validate().is_err());
        cfg.compute.solver = SolverOptions::with_tol(0.0);
        assert!(cfg.validate().is_err());
        cfg.compute.solver = SolverOptions::with_tol(1e-30);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unreachable_tolerance_is_solver_exit() {
        let mut cfg = RunConfig { max_level: 2, ..Default::default() };
        cfg.compute.solver = SolverOptions::with_tol(1e-30);
        let r = run_verify(&cfg);
        assert_eq!(r.exit, EXIT_SOLVER, "{:?}", r.checks.last());
    }

    #[test]
    fn level_two_passes() {
        let r = run_verify(&RunConfig { max_level: 2, samples: 2000, ..Default::default() });
        let failed: Vec<_> = r.checks.iter().filter(|c| c.status == CheckStatus::Fail).collect();
        assert!(failed.is_empty(), "{failed:#?}");
        assert_eq!(r.exit, EXIT_OK);
    }
}
