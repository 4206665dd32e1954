//! Acceptance criteria. Prints one line per criterion and exits non-zero if any fails.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pillow_carpet::carpet::{build_graph, coarse_embed, is_automorphism, symmetry_permutation, ulf_stats, CarpetGraph};
use pillow_carpet::energy::{
    border_resistance_on, cell_energy_sum, corner_resistance_on, effective_resistance, left_half_minimum,
    natural_energy, BorderPair, ComputeConfig, EnergyConvention, SolverOptions,
};
use pillow_carpet::extension::{check_kernels, pre_extension_kernels, C_PEK};
use pillow_carpet::io::pattern_hash;
use pillow_carpet::pattern::{a_priori_rate, builtin_pattern, validate_pattern, PilingPattern, SquareIsometry};
use pillow_carpet::scaling::{inequality_report, observed_constants, resistance_table, ScalingTable};
use pillow_carpet::trace::trace_form;
use pillow_carpet::verify::{fixture_key, Fixtures, BUNDLED_FIXTURES, REGRESSION_TOL};
use pillow_carpet::walk::{commute_time_resistance, WalkOptions};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn builtins() -> Vec<(&'static str, PilingPattern)> {
    ["sierpinski3", "pillow5"].into_iter().map(|n| (n, builtin_pattern(n).unwrap())).collect()
}

/// Every admissible 0/1 pattern with the given side (border cells are 1).
fn flat_patterns(l: usize) -> Vec<PilingPattern> {
    let inner = (l - 2) * (l - 2);
    (0u32..1 << inner)
        .filter_map(|bits| {
            let p = PilingPattern::from_fn(l, |c, r| {
                if c == 0 || r == 0 || c == l - 1 || r == l - 1 {
                    1
                } else {
                    (bits >> ((c - 1) * (l - 2) + r - 1)) & 1
                }
            })
            .unwrap();
            validate_pattern(&p).admissible.then_some(p)
        })
        .collect()
}

/// Distinct corner points of the level-`n` squares of a flat pattern.
fn planar_points(p: &PilingPattern, n: usize) -> usize {
    let l = p.side() as u64;
    let mut cells = vec![(0u64, 0u64)];
    for _ in 0..n {
        cells = cells
            .iter()
            .flat_map(|&(a, b)| p.nonvanish().into_iter().map(move |(c, r)| (l * a + c as u64, l * b + r as u64)))
            .collect();
    }
    let pts: BTreeSet<(u64, u64)> = cells
        .iter()
        .flat_map(|&(a, b)| [(a, b), (a + 1, b), (a, b + 1), (a + 1, b + 1)])
        .collect();
    pts.len()
}

fn c1_exact_values() -> Outcome {
    let start = Instant::now();
    let cfg = ComputeConfig::default();
    let mut patterns: Vec<PilingPattern> = builtins().into_iter().map(|b| b.1).collect();
    for l in [3, 4, 5] {
        patterns.extend(flat_patterns(l));
    }
    let mut worst: f64 = 0.0;
    for p in &patterns {
        let g = build_graph(p, 0).unwrap();
        let q = natural_energy(&g, cfg.convention);
        let r = corner_resistance_on(&g, &q, 0, &cfg.solver).unwrap().value;
        let rb = border_resistance_on(&g, &q, BorderPair::LeftRight, &cfg.solver).unwrap().value;
        worst = worst.max((r - 0.75).abs()).max((rb - 0.5).abs());
    }
    let p = builtin_pattern("sierpinski3").unwrap();
    let g = build_graph(&p, 1).unwrap();
    let rb1 = border_resistance_on(&g, &natural_energy(&g, cfg.convention), BorderPair::LeftRight, &cfg.solver)
        .unwrap()
        .value;
    worst = worst.max((rb1 - 0.75).abs());
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && secs < 1.0,
        format!("{} patterns, max deviation {worst:.2e} (tol 1e-10), {secs:.3}s (limit 1s)", patterns.len()),
    )
}

fn c2_vertex_counts() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, want) in [("sierpinski3", (16, 24)), ("pillow5", (36, 60))] {
        let g = build_graph(&builtin_pattern(name).unwrap(), 1).unwrap();
        let got = (g.num_vertices(), g.edges().len());
        ok &= got == want;
        notes.push(format!("{name} V1 = {got:?}"));
    }
    let mut checked = 0;
    for l in [3, 4, 5] {
        for p in flat_patterns(l) {
            for n in 0..=3 {
                let g = build_graph(&p, n).unwrap();
                let want = planar_points(&p, n);
                if g.num_vertices() != want {
                    ok = false;
                    notes.push(format!("L={l} norm {} level {n}: {} vs planar {want}", p.norm(), g.num_vertices()));
                }
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 10.0;
    notes.push(format!("{checked} flat (pattern, level) pairs match the planar enumeration, {secs:.2}s (limit 10s)"));
    outcome(ok, notes.join("; "))
}

fn c3_schur_fidelity() -> Outcome {
    let p = builtin_pattern("sierpinski3").unwrap();
    let cfg = ComputeConfig { solver: SolverOptions::with_tol(1e-12), ..Default::default() };
    let graphs: Vec<CarpetGraph> = (0..=4).map(|n| build_graph(&p, n).unwrap()).collect();
    let c0 = graphs[0].corner_ids();
    let mut worst_r: f64 = 0.0;
    for m in 0..=4 {
        let g = &graphs[m];
        let q = natural_energy(g, cfg.convention);
        let direct = corner_resistance_on(g, &q, 0, &cfg.solver).unwrap().value;
        let t = trace_form(g, &graphs[0], &cfg).unwrap();
        let via = effective_resistance(&t.form().unwrap(), &[c0[0]], &[c0[1]], &cfg.solver).unwrap().value;
        worst_r = worst_r.max((via - direct).abs() / direct);
    }
    let t41 = trace_form(&graphs[4], &graphs[1], &cfg).unwrap();
    let t42 = trace_form(&graphs[4], &graphs[2], &cfg).unwrap();
    let keep = coarse_embed(&graphs[1], &graphs[4]).unwrap();
    let t421 = t42.reduce(&keep, 1, &cfg.solver).unwrap();
    let gap = (&t421.matrix - &t41.matrix).amax();
    outcome(
        worst_r <= 1e-8 && gap <= 1e-8,
        format!("corner resistance via trace: max rel. error {worst_r:.2e}; V4->V2->V1 vs V4->V1: max entry gap {gap:.2e} (tol 1e-8)"),
    )
}

fn c4_kernels() -> Outcome {
    let start = Instant::now();
    let cfg = ComputeConfig::default();
    let mut ok = true;
    let mut pek1: f64 = 0.0;
    let mut pek4: f64 = 0.0;
    let mut failures = Vec::new();
    for (name, p) in builtins() {
        for k in 0..=4 {
            let g = build_graph(&p, k).unwrap();
            let ks = pre_extension_kernels(&g, &cfg).unwrap();
            let c = check_kernels(&g, &ks).unwrap();
            pek1 = pek1.max(c.pek1_max_violation);
            pek4 = pek4.max(c.pek4_observed);
            if !(c.pek1_ok && c.pek2_ok && c.pek3_ok && c.pek4_ok && c.psi_tilde_sum_ok) {
                ok = false;
                failures.push(format!("{name} k={k}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    outcome(
        ok,
        format!(
            "PEK1 max {pek1:.2e} (tol 1e-9), PEK2/PEK3 exact, max D(psi)*Rbar = {pek4:.4} (bound {C_PEK}), failures {failures:?}, {secs:.1}s (limit 120s)"
        ),
    )
}

fn regression_gap(t: &ScalingTable, p: &PilingPattern, fixtures: &Fixtures) -> Option<f64> {
    let pinned = fixtures.entries.get(&fixture_key(&pattern_hash(p), t.max_level(), EnergyConvention::UnitPair))?;
    let report = inequality_report(t);
    let c = &report.constants;
    let mut observed: Vec<(String, f64)> = vec![
        ("c_dagger".into(), c.c_dagger),
        ("c_d".into(), c.c_d),
        ("c_c".into(), c.c_c),
        ("c_rd".into(), c.c_rd),
        ("a_priori_margin".into(), c.a_priori_margin),
    ];
    for row in &t.rows {
        observed.push((format!("R_{}", row.n), row.corner));
        observed.push((format!("Rbar_{}", row.n), row.border));
    }
    if let Some(e) = &report.estimate {
        observed.push(("r_hat".into(), e.r_hat));
        observed.push(("r_hat_spread".into(), e.spread_last_two));
    }
    let mut worst: f64 = 0.0;
    for (k, v) in observed {
        let want = *pinned.get(&k)?;
        worst = worst.max((v - want).abs() / want.abs());
    }
    Some(worst)
}

fn c5_inequality_stability() -> Outcome {
    let start = Instant::now();
    let cfg = ComputeConfig::default();
    let fixtures = Fixtures::parse(BUNDLED_FIXTURES).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, big_n) in [("sierpinski3", 5), ("pillow5", 3)] {
        let p = builtin_pattern(name).unwrap();
        let t = resistance_table(&p, big_n, &cfg).unwrap();
        let now = observed_constants(&t);
        let before = observed_constants(&t.truncated(big_n - 1));
        let pairs = [
            ("c_dagger", now.c_dagger, before.c_dagger),
            ("c_c", now.c_c, before.c_c),
            ("c_d", now.c_d, before.c_d),
            ("margin", now.a_priori_margin, before.a_priori_margin),
        ];
        let mut changes = Vec::new();
        for (k, a, b) in pairs {
            let ch = (a - b).abs() / b;
            ok &= a.is_finite() && a > 0.0 && ch < 0.25;
            changes.push(format!("{k}={a:.4} ({:+.1}%)", 100.0 * (a - b) / b));
        }
        let report = inequality_report(&t);
        let e = report.estimate.as_ref().unwrap();
        ok &= e.r_hat > 1.0;
        if name == "sierpinski3" {
            ok &= e.spread_last_two < 0.05;
        }
        let reg = regression_gap(&t, &p, &fixtures);
        ok &= reg.is_some_and(|g| g <= REGRESSION_TOL);
        notes.push(format!(
            "{name} N={big_n} rho_a={}: {}, r_hat={:.6} spread {:.2}%, pinned values rel. gap {}",
            a_priori_rate(p.side()),
            changes.join(" "),
            e.r_hat,
            100.0 * e.spread_last_two,
            reg.map_or("missing".into(), |g| format!("{g:.1e}"))
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    notes.push(format!("{secs:.1}s"));
    outcome(ok, notes.join("; "))
}

fn c6_sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    let mut trials = 0;
    let mut sharing: f64 = 1.0;
    for (_, p) in builtins() {
        let graphs: Vec<CarpetGraph> = (0..=4).map(|n| build_graph(&p, n).unwrap()).collect();
        for m in 1..=4 {
            let g = &graphs[m];
            let q = natural_energy(g, EnergyConvention::UnitPair);
            for _ in 0..100 {
                let f: Vec<f64> = (0..g.num_vertices()).map(|_| rng.gen::<f64>()).collect();
                let d = q.value(&f);
                for n in 1..=m {
                    let c_ulf = ulf_stats(&graphs[n]).max_cell_incidence as f64;
                    let sum = cell_energy_sum(g, &graphs[m - n], &f, EnergyConvention::UnitPair).unwrap();
                    trials += 1;
                    if d > sum * (1.0 + 1e-12) || d < sum / c_ulf * (1.0 - 1e-12) {
                        violations += 1;
                    }
                    sharing = sharing.max(sum / d);
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("{trials} (f, m, n) triples on both patterns, m <= 4: {violations} violations, largest sum/D_m = {sharing:.4}"),
    )
}

fn c7_monte_carlo() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let cfg = ComputeConfig { solver: SolverOptions::with_tol(1e-12), ..Default::default() };
    for (name, p) in builtins() {
        for n in 1..=3 {
            let g = build_graph(&p, n).unwrap();
            let q = natural_energy(&g, cfg.convention);
            let exact = corner_resistance_on(&g, &q, 0, &cfg.solver).unwrap().value;
            let c = g.corner_ids();
            // the default cap of 1e9 steps is below the cost of 1e5 round trips at level 3
            let opts = WalkOptions { samples: 100_000, seed: 17 + n as u64, step_cap: 100_000_000_000 };
            let w = commute_time_resistance(&g, c[0], c[1], cfg.convention, &opts).unwrap();
            let z = (w.estimate - exact) / w.stderr;
            ok &= z.abs() <= 3.0 && !w.aborted && w.samples == 100_000;
            notes.push(format!("{name} n={n}: {:.4}+-{:.4} vs {exact:.4} (z={z:+.2}, {:.1e} steps)", w.estimate, w.stderr, w.steps as f64));
        }
    }
    let g = build_graph(&builtin_pattern("sierpinski3").unwrap(), 2).unwrap();
    let c = g.corner_ids();
    let opts = WalkOptions { samples: 10_000, seed: 99, ..Default::default() };
    let a = commute_time_resistance(&g, c[0], c[1], EnergyConvention::UnitPair, &opts).unwrap();
    let b = commute_time_resistance(&g, c[0], c[1], EnergyConvention::UnitPair, &opts).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let d = pool.install(|| commute_time_resistance(&g, c[0], c[1], EnergyConvention::UnitPair, &opts).unwrap());
    let same = a.estimate.to_bits() == b.estimate.to_bits() && a.estimate.to_bits() == d.estimate.to_bits() && a.steps == d.steps;
    ok &= same;
    notes.push(format!("fixed-seed reruns identical: {same}"));
    outcome(ok, notes.join("; "))
}

fn c8_symmetry() -> Outcome {
    let cfg = ComputeConfig { solver: SolverOptions::with_tol(1e-13), ..Default::default() };
    let mut ok = true;
    let mut spread: f64 = 0.0;
    for (_, p) in builtins() {
        for n in 0..=3 {
            let g = build_graph(&p, n).unwrap();
            for iso in SquareIsometry::all() {
                ok &= is_automorphism(&g, &symmetry_permutation(&g, &iso).unwrap());
            }
            let q = natural_energy(&g, cfg.convention);
            let r: Vec<f64> = (0..4).map(|i| corner_resistance_on(&g, &q, i, &cfg.solver).unwrap().value).collect();
            let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
            spread = spread.max(hi - lo);
        }
    }
    ok &= spread <= 1e-10;
    outcome(ok, format!("8 isometries are automorphisms at levels <= 3: {ok}; adjacent-corner resistance spread {spread:.2e} (tol 1e-10)"))
}

fn c9_half_plane() -> Outcome {
    let cfg = ComputeConfig::default();
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, p) in builtins() {
        let mut mins = Vec::new();
        for n in 0..=4 {
            let g = build_graph(&p, n).unwrap();
            let q = natural_energy(&g, cfg.convention);
            let h = border_resistance_on(&g, &q, BorderPair::LeftRight, &cfg.solver).unwrap().potential;
            let m = left_half_minimum(&g, &h);
            ok &= m >= 0.5 - 1e-9;
            mins.push(format!("{m:.9}"));
        }
        notes.push(format!("{name} (L={}) min h on left half by level: [{}]", p.side(), mins.join(", ")));
    }
    outcome(ok, notes.join("; "))
}

fn main() {
    // `cargo test -- --list` and filters from the harness are ignored
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("exact small-case values", c1_exact_values),
        ("quotient-construction oracles", c2_vertex_counts),
        ("Schur fidelity", c3_schur_fidelity),
        ("kernel suite", c4_kernels),
        ("inequality stability", c5_inequality_stability),
        ("energy-reduction sandwich", c6_sandwich),
        ("Monte Carlo cross-check", c7_monte_carlo),
        ("symmetry", c8_symmetry),
        ("half-plane bound", c9_half_plane),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        println!(
            "criterion {} [{}] {name}: {} ({:.1}s)",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
