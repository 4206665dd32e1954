//! Corner/border resistance sequences, the scaling factor and the
//! multiplicative resistance estimates.

use serde::{Deserialize, Serialize};

use crate::carpet::{bfs_hops, check_budget, ulf_stats, CarpetGraph};
use crate::energy::{border_resistance_on, corner_resistance_on, natural_energy, BorderPair, ComputeConfig};
use crate::error::{CarpetError, Result};
use crate::pattern::{a_priori_rate, PilingPattern};

/// Relative change allowed for an observed constant between the `N−1` and `N` runs.
pub const STABILITY_TOL: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    /// `𝓡_n`
    pub corner: f64,
    /// `𝓡̄_n`
    pub border: f64,
    /// `𝓡_n/𝓡_{n−1}`, absent at `n = 0`.
    pub ratio_corner: Option<f64>,
    pub ratio_border: Option<f64>,
    pub corner_residual: f64,
    pub border_residual: f64,
    pub vertices: usize,
    /// Largest number of level-`n` cells sharing a vertex.
    pub max_cell_incidence: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub side: usize,
    pub norm: u64,
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    pub fn max_level(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    /// The table restricted to levels `0..=n`.
    pub fn truncated(&self, n: usize) -> ScalingTable {
        ScalingTable {
            side: self.side,
            norm: self.norm,
            rows: self.rows[..=n.min(self.max_level())].to_vec(),
        }
    }

    pub fn corners(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.corner).collect()
    }

    pub fn borders(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.border).collect()
    }

    /// A table from given sequences, for analysis of external data.
    pub fn from_sequences(side: usize, norm: u64, corner: &[f64], border: &[f64]) -> Result<ScalingTable> {
        if corner.len() != border.len() || corner.is_empty() {
            return Err(CarpetError::Precondition("sequences must be nonempty and of equal length".into()));
        }
        let rows = (0..corner.len())
            .map(|n| ScalingRow {
                n,
                corner: corner[n],
                border: border[n],
                ratio_corner: (n > 0).then(|| corner[n] / corner[n - 1]),
                ratio_border: (n > 0).then(|| border[n] / border[n - 1]),
                corner_residual: 0.0,
                border_residual: 0.0,
                vertices: 0,
                max_cell_incidence: 0,
            })
            .collect();
        Ok(ScalingTable { side, norm, rows })
    }
}

/// `𝓡_n` and `𝓡̄_n` for `n = 0..=max_level`.
pub fn resistance_table(p: &PilingPattern, max_level: usize, cfg: &ComputeConfig) -> Result<ScalingTable> {
    check_budget(p, max_level, cfg.build_options().cell_budget)?;
    let mut rows: Vec<ScalingRow> = Vec::with_capacity(max_level + 1);
    for n in 0..=max_level {
        let g = cfg.graph(p, n)?;
        let q = natural_energy(&g, cfg.convention);
        let c = corner_resistance_on(&g, &q, 0, &cfg.solver)?;
        let b = border_resistance_on(&g, &q, BorderPair::LeftRight, &cfg.solver)?;
        let prev = rows.last();
        log::info!("level {n}: R = {:.12}, Rbar = {:.12}, {} vertices", c.value, b.value, g.num_vertices());
        rows.push(ScalingRow {
            n,
            corner: c.value,
            border: b.value,
            ratio_corner: prev.map(|r| c.value / r.corner),
            ratio_border: prev.map(|r| b.value / r.border),
            corner_residual: c.residual,
            border_residual: b.residual,
            vertices: g.num_vertices(),
            max_cell_incidence: ulf_stats(&g).max_cell_incidence,
        });
    }
    Ok(ScalingTable { side: p.side(), norm: p.norm(), rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingEstimate {
    /// `r̂ = 𝓡_N/𝓡_{N−1}`.
    pub r_hat: f64,
    pub ratios: Vec<f64>,
    /// Least-squares slope of `log 𝓡_n` against `n` over the last four levels.
    pub log_slope: f64,
    /// First level entering the fit.
    pub fit_from: usize,
    /// `exp(log_slope)`.
    pub regression_rate: f64,
    /// Root-mean-square residual of the log-linear fit.
    pub regression_residual: f64,
    /// `|r_N − r_{N−1}| / r_N`.
    pub spread_last_two: f64,
    /// `(max − min)/r_N` over the last three ratios.
    pub spread_last_three: f64,
    /// `log 𝓡_n − n·log r̂`; bounded for a genuine rate.
    pub fekete_profile: Vec<f64>,
    /// The regression rate lies within the last-three spread of `r̂`.
    pub consistent: bool,
}

pub fn estimate_rho(t: &ScalingTable) -> Result<ScalingEstimate> {
    let big_n = t.max_level();
    if big_n < 3 {
        return Err(CarpetError::InsufficientLevels { needed: 3, have: big_n });
    }
    let r = t.corners();
    if r.iter().any(|&x| !(x > 0.0)) {
        return Err(CarpetError::Domain("resistances must be positive".into()));
    }
    let ratios: Vec<f64> = r.windows(2).map(|w| w[1] / w[0]).collect();
    let r_hat = *ratios.last().unwrap();
    let k = ratios.len();
    let spread_last_two = (ratios[k - 1] - ratios[k - 2]).abs() / r_hat;
    let last3 = &ratios[k - 3..];
    let hi = last3.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = last3.iter().copied().fold(f64::INFINITY, f64::min);
    let spread_last_three = (hi - lo) / r_hat;

    let logs: Vec<f64> = r.iter().map(|x| x.ln()).collect();
    // the early levels are a transient; fit the tail the ratios describe
    let fit_from = big_n - 3;
    let xs: Vec<f64> = (fit_from..=big_n).map(|n| n as f64).collect();
    let tail = &logs[fit_from..];
    let (slope, intercept) = least_squares(&xs, tail);
    let regression_residual = (xs
        .iter()
        .zip(tail)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    let regression_rate = slope.exp();
    let fekete_profile = logs.iter().enumerate().map(|(n, y)| y - n as f64 * r_hat.ln()).collect();
    let consistent = (regression_rate - r_hat).abs() <= spread_last_three.max(spread_last_two) * r_hat + 1e-12;
    Ok(ScalingEstimate {
        r_hat,
        ratios,
        log_slope: slope,
        fit_from,
        regression_rate,
        regression_residual,
        spread_last_two,
        spread_last_three,
        fekete_profile,
        consistent,
    })
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Observed constants of the resistance estimates on one table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedConstants {
    /// `max_{n≤m} max(𝓡_m/(𝓡_n𝓡_{m−n}), 𝓡_n𝓡_{m−n}/𝓡_m)`
    pub c_dagger: f64,
    /// `max_n max(𝓡_{n+1}/𝓡_n, 𝓡_n/𝓡_{n+1})`
    pub c_d: f64,
    /// `min_n 𝓡̄_n ρ_a⁻ⁿ`
    pub a_priori_margin: f64,
    /// `max_n 𝓡_n/𝓡̄_n`
    pub c_c: f64,
    /// `max_{n≤m} ρ_a^{m−n} 𝓡_n/𝓡_m`
    pub c_rd: f64,
    /// `4·max cell incidence`
    pub c_a: f64,
    pub border_below_corner: bool,
}

pub fn observed_constants(t: &ScalingTable) -> ObservedConstants {
    let r = t.corners();
    let rb = t.borders();
    let rho = a_priori_rate(t.side);
    let mut c_dagger: f64 = 1.0;
    let mut c_rd: f64 = 1.0;
    for m in 0..r.len() {
        for n in 0..=m {
            let q = r[m] / (r[n] * r[m - n]);
            c_dagger = c_dagger.max(q).max(1.0 / q);
            c_rd = c_rd.max(rho.powi((m - n) as i32) * r[n] / r[m]);
        }
    }
    let c_d = r.windows(2).map(|w| (w[1] / w[0]).max(w[0] / w[1])).fold(1.0, f64::max);
    let a_priori_margin = rb
        .iter()
        .enumerate()
        .map(|(n, b)| b / rho.powi(n as i32))
        .fold(f64::INFINITY, f64::min);
    let c_c = r.iter().zip(&rb).map(|(a, b)| a / b).fold(0.0, f64::max);
    let ulf = t.rows.iter().map(|row| row.max_cell_incidence).max().unwrap_or(0);
    ObservedConstants {
        c_dagger,
        c_d,
        a_priori_margin,
        c_c,
        c_rd,
        c_a: 4.0 * ulf as f64,
        border_below_corner: r.iter().zip(&rb).all(|(a, b)| b <= a),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub observed: f64,
    /// Value from the `N−1` run, when compared.
    pub previous: Option<f64>,
    pub relative_change: Option<f64>,
    /// The bound the constant belongs to.
    pub reference: String,
    pub status: CheckStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub max_level: usize,
    pub rho_a: f64,
    pub constants: ObservedConstants,
    pub previous: Option<ObservedConstants>,
    pub estimate: Option<ScalingEstimate>,
    pub checks: Vec<InequalityCheck>,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&InequalityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Evaluates the resistance estimates on `t` and compares each observed
/// constant with the run one level shorter.
///
/// A change of 25% or more fails once the shorter run reaches level 2; below
/// that it is only a warning.
pub fn inequality_report(t: &ScalingTable) -> InequalityReport {
    let big_n = t.max_level();
    let now = observed_constants(t);
    let previous = (big_n >= 1).then(|| observed_constants(&t.truncated(big_n - 1)));
    let strict = big_n >= 3;
    let mut checks = Vec::new();
    let mut stable = |name: &str, reference: &str, get: fn(&ObservedConstants) -> f64| {
        let observed = get(&now);
        let prev = previous.as_ref().map(get);
        let change = prev.map(|p| (observed - p).abs() / p.abs());
        let status = if !observed.is_finite() || observed <= 0.0 {
            CheckStatus::Fail
        } else {
            match change {
                Some(c) if !(c < STABILITY_TOL) => {
                    if strict {
                        CheckStatus::Fail
                    } else {
                        CheckStatus::Warn
                    }
                }
                _ => CheckStatus::Pass,
            }
        };
        checks.push(InequalityCheck {
            name: name.into(),
            observed,
            previous: prev,
            relative_change: change,
            reference: reference.into(),
            status,
        });
    };
    stable("c_dagger", "R_n R_{m-n} / c <= R_m <= c R_n R_{m-n}", |c| c.c_dagger);
    stable("c_d", "R_n / c <= R_{n+1} <= c R_n", |c| c.c_d);
    stable("a_priori_margin", "Rbar_n >= margin * rho_a^n", |c| c.a_priori_margin);
    stable("c_c", "R_n <= c Rbar_n", |c| c.c_c);
    stable("c_rd", "R_m >= rho_a^{m-n} R_n / c", |c| c.c_rd);

    let pass = |ok: bool| if ok { CheckStatus::Pass } else { CheckStatus::Fail };
    checks.push(InequalityCheck {
        name: "a_priori_ordering".into(),
        observed: t.rows.iter().map(|r| r.border / r.corner).fold(0.0, f64::max),
        previous: None,
        relative_change: None,
        reference: "Rbar_n / R_n <= 1".into(),
        status: pass(now.border_below_corner),
    });
    checks.push(InequalityCheck {
        name: "a_priori_bound".into(),
        observed: now.a_priori_margin * now.c_a,
        previous: None,
        relative_change: None,
        reference: "Rbar_n >= rho_a^n / c_a with c_a = 4 c_ulf".into(),
        status: pass(now.a_priori_margin * now.c_a >= 1.0),
    });
    let estimate = estimate_rho(t).ok();
    if let Some(e) = &estimate {
        checks.push(InequalityCheck {
            name: "r_hat".into(),
            observed: e.r_hat,
            previous: None,
            relative_change: Some(e.spread_last_two),
            reference: "r > 1".into(),
            status: pass(e.r_hat > 1.0),
        });
    }
    InequalityReport {
        max_level: big_n,
        rho_a: a_priori_rate(t.side),
        constants: now,
        previous,
        estimate,
        checks,
    }
}

pub fn verify_inequalities(p: &PilingPattern, max_level: usize, cfg: &ComputeConfig) -> Result<InequalityReport> {
    Ok(inequality_report(&resistance_table(p, max_level, cfg)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    /// Fitted exponent of `|Δf|²` against `d⁺`; `None` when degenerate.
    pub theta_hat: Option<f64>,
    /// `exp(intercept)/base` of the fit.
    pub c_hat: Option<f64>,
    /// `θ_H = log ρ_a / log L`.
    pub theta_h: f64,
    /// `max |Δf|² / (d⁺^{θ_H}·base)` over the sampled pairs.
    pub c_bound: f64,
    /// Largest `|Δf|²` over pairs at most `d` hops apart, for `d ≥ 1`.
    pub envelope: Vec<(usize, f64)>,
    pub degenerate: bool,
}

/// Exponent fit for samples `(hops, |f(x) − f(y)|²)` on a level-`level` graph.
///
/// The fit regresses the largest `|Δf|²` among pairs within each distance,
/// so the slope describes the worst pair at each scale.
pub fn holder_fit(side: usize, level: usize, samples: &[(usize, f64)], base_energy: f64) -> Result<HolderFit> {
    if !(base_energy > 0.0) {
        return Err(CarpetError::Precondition(format!(
            "base energy {base_energy} must be positive"
        )));
    }
    let theta_h = a_priori_rate(side).ln() / (side as f64).ln();
    let unit = (side as f64).powi(level as i32);
    let max_hops = samples.iter().map(|s| s.0).max().unwrap_or(0);
    let mut env = vec![0.0f64; max_hops + 1];
    for &(d, v) in samples {
        env[d] = env[d].max(v);
    }
    // modulus of continuity: the worst pair within each distance
    for d in 1..env.len() {
        env[d] = env[d].max(env[d - 1]);
    }
    let envelope: Vec<(usize, f64)> = (1..=max_hops).map(|d| (d, env[d])).filter(|e| e.1 > 0.0).collect();
    let c_bound = envelope
        .iter()
        .map(|&(d, v)| v / ((d as f64 / unit).powf(theta_h) * base_energy))
        .fold(0.0, f64::max);
    if envelope.len() < 2 {
        return Ok(HolderFit { theta_hat: None, c_hat: None, theta_h, c_bound, envelope, degenerate: true });
    }
    let xs: Vec<f64> = envelope.iter().map(|&(d, _)| (d as f64 / unit).ln()).collect();
    let ys: Vec<f64> = envelope.iter().map(|&(_, v)| v.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    Ok(HolderFit {
        theta_hat: Some(slope),
        c_hat: Some(intercept.exp() / base_energy),
        theta_h,
        c_bound,
        envelope,
        degenerate: false,
    })
}

/// Hölder profile of `f` on `g`, using pairs from up to `sources` evenly spaced
/// source vertices to every other vertex, at hop distance `d⁺ = L⁻ᵐ·hops`.
pub fn holder_profile(g: &CarpetGraph, f: &[f64], base_energy: f64, sources: usize) -> Result<HolderFit> {
    let n = g.num_vertices();
    if f.len() != n {
        return Err(CarpetError::Precondition(format!("function has {} values for {n} vertices", f.len())));
    }
    let adj = g.adjacency();
    let step = n.div_ceil(sources.max(1)).max(1);
    let mut samples = Vec::new();
    for s in (0..n).step_by(step) {
        for (v, hops) in bfs_hops(&adj, s).into_iter().enumerate() {
            if let Some(d) = hops.filter(|&d| d > 0) {
                samples.push((d, (f[s] - f[v]).powi(2)));
            }
        }
    }
    holder_fit(g.side(), g.level(), &samples, base_energy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::builtin_pattern;

    #[test]
    fn geometric_sequence() {
        let r: Vec<f64> = (0..6).map(|n| 2f64.powi(n)).collect();
        let b: Vec<f64> = r.iter().map(|x| x / 2.0).collect();
        let t = ScalingTable::from_sequences(3, 8, &r, &b).unwrap();
        let e = estimate_rho(&t).unwrap();
        assert_eq!(e.r_hat, 2.0);
        assert!((e.regression_rate - 2.0).abs() < 1e-12);
        assert!(e.regression_residual < 1e-12);
        assert!(e.consistent);
        let c = observed_constants(&t);
        assert!((c.c_dagger - 1.0).abs() < 1e-12);
        assert_eq!(c.c_d, 2.0);
        assert_eq!(c.c_c, 2.0);
    }

    #[test]
    fn too_few_levels() {
        let t = ScalingTable::from_sequences(3, 8, &[1.0, 2.0, 3.0], &[0.5, 1.0, 1.5]).unwrap();
        assert!(matches!(estimate_rho(&t), Err(CarpetError::InsufficientLevels { needed: 3, have: 2 })));
    }

    #[test]
    fn small_table() {
        let p = builtin_pattern("sierpinski3").unwrap();
        let t = resistance_table(&p, 1, &ComputeConfig::default()).unwrap();
        assert!((t.rows[0].corner - 0.75).abs() < 1e-12);
        assert!((t.rows[0].border - 0.5).abs() < 1e-12);
        assert!((t.rows[1].corner - 181.0 / 112.0).abs() < 1e-10);
        assert!((t.rows[1].border - 0.75).abs() < 1e-10);
        let report = inequality_report(&t);
        // every pair (n, m) ∈ {(0,0), (0,1), (1,1)} contains a factor R_0 = 3/4
        assert!((report.constants.c_dagger - 4.0 / 3.0).abs() < 1e-10);
        assert_eq!(report.rho_a, 1.125);
        assert_eq!(report.check("a_priori_bound").unwrap().status, CheckStatus::Pass);
    }

    #[test]
    fn holder_linear_profile() {
        // aligned pairs on a row of the 4×4 grid: |Δf|² = (d/3)²
        let samples: Vec<(usize, f64)> = (1..=3).map(|d| (d, (d as f64 / 3.0).powi(2))).collect();
        let fit = holder_fit(3, 1, &samples, 4.0 / 3.0).unwrap();
        assert!((fit.theta_hat.unwrap() - 2.0).abs() < 1e-12);
        assert!((fit.c_hat.unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn holder_constant_is_degenerate() {
        let p = builtin_pattern("sierpinski3").unwrap();
        let g = crate::carpet::build_graph(&p, 1).unwrap();
        let fit = holder_profile(&g, &vec![1.0; g.num_vertices()], 1.0, 8).unwrap();
        assert!(fit.degenerate && fit.theta_hat.is_none());
    }
}
