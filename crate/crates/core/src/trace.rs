//! Traces of energies on coarse vertex sets (Schur complements / Kron reduction).

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::carpet::{coarse_embed, CarpetGraph};
use crate::energy::{natural_energy, solve_dirichlet, ComputeConfig, QuadraticForm, SolverOptions};
use crate::error::{CarpetError, Result};

/// Largest coarse set for which a dense trace is produced.
pub const TRACE_LIMIT: usize = 2000;

/// Conductances more negative than this abort a trace computation.
pub const NEGATIVE_CONDUCTANCE_TOL: f64 = 1e-9;

/// The trace of a form on a subset of its vertices, as a dense operator.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceForm {
    /// Coarse vertices, as ids of the fine network.
    pub coarse: Vec<usize>,
    /// Symmetric operator with zero row sums, indexed by position in `coarse`.
    pub matrix: DMatrix<f64>,
    pub fine_level: usize,
    pub coarse_level: usize,
}

impl TraceForm {
    pub fn len(&self) -> usize {
        self.coarse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coarse.is_empty()
    }

    /// `fᵀ S f` for `f` indexed by position in `coarse`.
    pub fn value(&self, f: &[f64]) -> f64 {
        let n = self.len();
        let mut s = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.matrix[(i, j)] * f[j];
            }
            s += f[i] * row;
        }
        s
    }

    /// The trace as a conductance network on `0..len`.
    pub fn form(&self) -> Result<QuadraticForm> {
        QuadraticForm::from_operator(&self.matrix, NEGATIVE_CONDUCTANCE_TOL)
    }

    /// Trace of this trace onto `keep` (fine ids, a subset of `coarse`).
    pub fn reduce(&self, keep: &[usize], coarse_level: usize, opts: &SolverOptions) -> Result<TraceForm> {
        let positions: Vec<usize> = keep
            .iter()
            .map(|v| {
                self.coarse.iter().position(|c| c == v).ok_or_else(|| {
                    CarpetError::Precondition(format!("vertex {v} is not in the coarse set"))
                })
            })
            .collect::<Result<_>>()?;
        let matrix = schur_complement(&self.form()?, &positions, opts)?;
        Ok(TraceForm {
            coarse: keep.to_vec(),
            matrix,
            fine_level: self.fine_level,
            coarse_level,
        })
    }
}

/// Schur complement of the operator of `q` onto the vertices `keep`.
///
/// Column `j` is the operator applied to the harmonic extension of the
/// indicator of `keep[j]`. The result is symmetrized, tiny negative
/// conductances are clamped and row sums are forced to zero.
pub fn schur_complement(q: &QuadraticForm, keep: &[usize], opts: &SolverOptions) -> Result<DMatrix<f64>> {
    let k = keep.len();
    if k > TRACE_LIMIT {
        return Err(CarpetError::Precondition(format!(
            "coarse set of {k} vertices exceeds the dense trace limit {TRACE_LIMIT}"
        )));
    }
    let mut sorted = keep.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != k {
        return Err(CarpetError::Precondition("coarse set has repeated vertices".into()));
    }
    let columns: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let fixed: Vec<(usize, f64)> = keep
                .iter()
                .enumerate()
                .map(|(i, &v)| (v, if i == j { 1.0 } else { 0.0 }))
                .collect();
            let sol = solve_dirichlet(q, &fixed, opts)?;
            Ok(keep
                .iter()
                .map(|&v| {
                    let s: f64 = q.neighbors(v).map(|(y, c)| c * sol.values[y]).sum();
                    q.weighted_degree(v) * sol.values[v] - s
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            m[(i, j)] = 0.5 * (columns[j][i] + columns[i][j]);
        }
    }
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            if m[(i, j)] > NEGATIVE_CONDUCTANCE_TOL {
                return Err(CarpetError::Domain(format!(
                    "trace has negative conductance {:e} between coarse vertices {} and {}",
                    -m[(i, j)],
                    keep[i],
                    keep[j]
                )));
            }
            if m[(i, j)] > 0.0 {
                m[(i, j)] = 0.0;
            }
        }
        let off: f64 = (0..k).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
        m[(i, i)] = -off;
    }
    Ok(m)
}

/// `[D_m]_{V_n}`: the trace of the natural energy of `g_m` on the copy of `V_n`.
pub fn trace_form(g_m: &CarpetGraph, g_n: &CarpetGraph, cfg: &ComputeConfig) -> Result<TraceForm> {
    let coarse = coarse_embed(g_n, g_m)?;
    let q = natural_energy(g_m, cfg.convention);
    trace_form_on(&q, coarse, g_m.level(), g_n.level(), &cfg.solver)
}

pub fn trace_form_on(q: &QuadraticForm, coarse: Vec<usize>, fine_level: usize, coarse_level: usize, opts: &SolverOptions) -> Result<TraceForm> {
    let matrix = schur_complement(q, &coarse, opts)?;
    Ok(TraceForm { coarse, matrix, fine_level, coarse_level })
}

/// Energy of the harmonic extension of `f` (indexed like `coarse`) into the fine network.
pub fn trace_energy(q: &QuadraticForm, coarse: &[usize], f: &[f64], opts: &SolverOptions) -> Result<f64> {
    if f.len() != coarse.len() {
        return Err(CarpetError::Precondition(format!(
            "function has {} values for {} coarse vertices",
            f.len(),
            coarse.len()
        )));
    }
    let fixed: Vec<(usize, f64)> = coarse.iter().copied().zip(f.iter().copied()).collect();
    Ok(solve_dirichlet(q, &fixed, opts)?.energy)
}

/// Extreme generalized Rayleigh quotients `qa(f)/qb(f)` over non-constant `f`.
pub fn comparability(qa: &DMatrix<f64>, qb: &DMatrix<f64>) -> Result<(f64, f64)> {
    let n = qa.nrows();
    if qa.shape() != qb.shape() || qa.ncols() != n {
        return Err(CarpetError::Precondition("forms live on different vertex sets".into()));
    }
    if n < 2 {
        return Err(CarpetError::DegeneratePencil("need at least two vertices".into()));
    }
    for (name, m) in [("first", qa), ("second", qb)] {
        let scale = m.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            let row: f64 = m.row(i).sum();
            if row.abs() > 1e-8 * scale {
                return Err(CarpetError::DegeneratePencil(format!(
                    "{name} form does not vanish on constants (row {i} sums to {row:e})"
                )));
            }
        }
    }
    // basis e_i − e_{n−1} of the mean-zero complement; quotients are basis independent
    let mut basis = DMatrix::zeros(n, n - 1);
    for i in 0..n - 1 {
        basis[(i, i)] = 1.0;
        basis[(n - 1, i)] = -1.0;
    }
    let a = basis.transpose() * qa * &basis;
    let b = basis.transpose() * qb * &basis;
    let a = 0.5 * (&a + a.transpose());
    let b = 0.5 * (&b + b.transpose());
    let chol = b
        .cholesky()
        .ok_or_else(|| CarpetError::DegeneratePencil("second form has a kernel beyond constants".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| CarpetError::DegeneratePencil("singular Cholesky factor".into()))?;
    let c = &l_inv * a * l_inv.transpose();
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if !(lo > 1e-12 * hi.abs().max(1.0)) {
        return Err(CarpetError::DegeneratePencil(format!(
            "first form has a kernel beyond constants (smallest quotient {lo:e})"
        )));
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carpet::build_graph;
    use crate::energy::{corner_resistance_on, effective_resistance, EnergyConvention};
    use crate::pattern::builtin_pattern;

    #[test]
    fn series_law() {
        let q = QuadraticForm::from_conductances(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let s = schur_complement(&q, &[0, 2], &SolverOptions::default()).unwrap();
        assert!((s[(0, 1)] + 0.5).abs() < 1e-12);
        assert!((s[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_trace_is_form() {
        let p = builtin_pattern("sierpinski3").unwrap();
        let g = build_graph(&p, 1).unwrap();
        let t = trace_form(&g, &g, &ComputeConfig::default()).unwrap();
        let q = natural_energy(&g, EnergyConvention::UnitPair);
        assert_eq!(t.matrix, q.to_dense());
    }

    #[test]
    fn trace_to_corners_keeps_resistance() {
        let p = builtin_pattern("sierpinski3").unwrap();
        let g0 = build_graph(&p, 0).unwrap();
        let g2 = build_graph(&p, 2).unwrap();
        let cfg = ComputeConfig { solver: SolverOptions::with_tol(1e-12), ..Default::default() };
        let t = trace_form(&g2, &g0, &cfg).unwrap();
        let form = t.form().unwrap();
        let corners = g0.corner_ids();
        let r_trace = effective_resistance(&form, &[corners[0]], &[corners[1]], &cfg.solver).unwrap().value;
        let q2 = natural_energy(&g2, EnergyConvention::UnitPair);
        let r_full = corner_resistance_on(&g2, &q2, 0, &cfg.solver).unwrap().value;
        assert!((r_trace - r_full).abs() <= 1e-8 * r_full);
    }

    #[test]
    fn trace_energy_matches_matrix() {
        let p = builtin_pattern("pillow5").unwrap();
        let g1 = build_graph(&p, 1).unwrap();
        let g2 = build_graph(&p, 2).unwrap();
        let cfg = ComputeConfig { solver: SolverOptions::with_tol(1e-12), ..Default::default() };
        let t = trace_form(&g2, &g1, &cfg).unwrap();
        let q = natural_energy(&g2, cfg.convention);
        let f: Vec<f64> = (0..t.len()).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let e1 = trace_energy(&q, &t.coarse, &f, &cfg.solver).unwrap();
        let e2 = t.value(&f);
        assert!((e1 - e2).abs() <= 1e-8 * e2);
        assert!(trace_energy(&q, &t.coarse, &vec![2.0; t.len()], &cfg.solver).unwrap().abs() < 1e-20);
    }

    #[test]
    fn comparability_scaling() {
        let q = QuadraticForm::from_conductances(4, [(0, 1, 1.0), (1, 2, 2.0), (2, 3, 1.0), (3, 0, 0.5)]).unwrap();
        let m = q.to_dense();
        let (lo, hi) = comparability(&m, &m).unwrap();
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        let (lo, hi) = comparability(&(2.0 * &m), &m).unwrap();
        assert!((lo - 2.0).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
        let split = QuadraticForm::from_conductances(4, [(0, 1, 1.0), (2, 3, 1.0)]).unwrap().to_dense();
        assert!(matches!(comparability(&m, &split), Err(CarpetError::DegeneratePencil(_))));
    }
}
