//! Graph energies, Dirichlet problems and effective resistances.
//!
//! A [`QuadraticForm`] is a conductance network `D(f) = Σ c(x,y)(f(x) − f(y))²`
//! over unordered pairs. Constrained minimizers are found on the reduced
//! system of free vertices, either with Jacobi-preconditioned conjugate
//! gradients or (for small systems) a dense Cholesky factorization.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::carpet::{self, build_graph_with, BuildOptions, CarpetGraph, Side};
use crate::error::{CarpetError, Result};
use crate::pattern::PilingPattern;

/// Largest free-vertex count accepted by the dense solver.
pub const DENSE_LIMIT: usize = 2000;

/// How edge multiplicities enter the natural energy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnergyConvention {
    /// Unit conductance per distinct adjacent pair.
    #[default]
    UnitPair,
    /// Conductance equal to the number of cells inducing the pair.
    Multiplicity,
}

/// Symmetric nonnegative conductances on `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    n: usize,
    /// `(u, v, c)` with `u < v`, sorted, one entry per pair.
    edges: Vec<(usize, usize, f64)>,
    offsets: Vec<usize>,
    nbrs: Vec<usize>,
    conds: Vec<f64>,
    diag: Vec<f64>,
}

impl QuadraticForm {
    /// Duplicate pairs are merged by adding their conductances; zero
    /// conductances are dropped.
    pub fn from_conductances(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut raw = Vec::new();
        for (u, v, c) in entries {
            if u >= n || v >= n {
                return Err(CarpetError::Domain(format!("pair ({u}, {v}) outside 0..{n}")));
            }
            if u == v {
                return Err(CarpetError::Domain(format!("self-loop at {u}")));
            }
            if !(c >= 0.0) || !c.is_finite() {
                return Err(CarpetError::Domain(format!("conductance {c} on ({u}, {v}) is not a nonnegative number")));
            }
            raw.push((u.min(v), u.max(v), c));
        }
        raw.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(raw.len());
        for (u, v, c) in raw {
            match edges.last_mut() {
                Some(e) if e.0 == u && e.1 == v => e.2 += c,
                _ => edges.push((u, v, c)),
            }
        }
        edges.retain(|e| e.2 > 0.0);

        let mut count = vec![0usize; n + 1];
        for &(u, v, _) in &edges {
            count[u + 1] += 1;
            count[v + 1] += 1;
        }
        for i in 0..n {
            count[i + 1] += count[i];
        }
        let offsets = count.clone();
        let mut fill = count;
        let mut nbrs = vec![0; 2 * edges.len()];
        let mut conds = vec![0.0; 2 * edges.len()];
        let mut diag = vec![0.0; n];
        // edges are sorted, so each neighbor list comes out sorted as well
        for &(u, v, c) in &edges {
            nbrs[fill[u]] = v;
            conds[fill[u]] = c;
            fill[u] += 1;
            diag[u] += c;
        }
        for &(u, v, c) in &edges {
            nbrs[fill[v]] = u;
            conds[fill[v]] = c;
            fill[v] += 1;
            diag[v] += c;
        }
        for v in 0..n {
            let range = offsets[v]..offsets[v + 1];
            let mut pairs: Vec<(usize, f64)> = nbrs[range.clone()].iter().copied().zip(conds[range.clone()].iter().copied()).collect();
            pairs.sort_by_key(|p| p.0);
            for (k, (nb, c)) in range.zip(pairs) {
                nbrs[k] = nb;
                conds[k] = c;
            }
        }
        Ok(Self { n, edges, offsets, nbrs, conds, diag })
    }

    /// Form whose operator is the given dense symmetric matrix with zero row sums.
    ///
    /// Conductances are the negated off-diagonal entries. Entries that would
    /// give conductances in `[-clamp, 0)` are treated as zero; anything more
    /// negative is an error.
    pub fn from_operator(m: &DMatrix<f64>, clamp: f64) -> Result<Self> {
        let n = m.nrows();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let c = -0.5 * (m[(i, j)] + m[(j, i)]);
                if c < -clamp {
                    return Err(CarpetError::Domain(format!(
                        "negative conductance {c:e} between {i} and {j}"
                    )));
                }
                if c > 0.0 {
                    entries.push((i, j, c));
                }
            }
        }
        Self::from_conductances(n, entries)
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Sorted `(neighbor, conductance)` pairs of `v`.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[v]..self.offsets[v + 1];
        self.nbrs[range.clone()].iter().copied().zip(self.conds[range].iter().copied())
    }

    /// Total conductance at `v` (diagonal of the operator).
    pub fn weighted_degree(&self, v: usize) -> f64 {
        self.diag[v]
    }

    pub fn total_conductance(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    pub fn value(&self, f: &[f64]) -> f64 {
        self.bilinear(f, f)
    }

    pub fn bilinear(&self, f: &[f64], g: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|&(u, v, c)| c * (f[u] - f[v]) * (g[u] - g[v]))
            .sum()
    }

    /// The operator `(Lf)(x) = Σ_y c(x,y)(f(x) − f(y))`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|x| {
                let s: f64 = self.neighbors(x).map(|(y, c)| c * f[y]).sum();
                self.diag[x] * f[x] - s
            })
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.edges {
            e.2 *= s;
        }
        for c in &mut out.conds {
            *c *= s;
        }
        for d in &mut out.diag {
            *d *= s;
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(u, v, c) in &self.edges {
            m[(u, v)] -= c;
            m[(v, u)] -= c;
            m[(u, u)] += c;
            m[(v, v)] += c;
        }
        m
    }

    /// Restriction to an induced sub-network on `keep` (ids become positions in `keep`).
    pub fn induced(&self, keep: &[usize]) -> Result<Self> {
        let mut pos = vec![usize::MAX; self.n];
        for (i, &v) in keep.iter().enumerate() {
            pos[v] = i;
        }
        let entries: Vec<_> = self
            .edges
            .iter()
            .filter(|e| pos[e.0] != usize::MAX && pos[e.1] != usize::MAX)
            .map(|&(u, v, c)| (pos[u], pos[v], c))
            .collect();
        Self::from_conductances(keep.len(), entries)
    }
}

/// The natural graph energy `D_n` of a carpet graph.
pub fn natural_energy(g: &CarpetGraph, convention: EnergyConvention) -> QuadraticForm {
    let entries = g.edges().iter().map(|e| {
        let c = match convention {
            EnergyConvention::UnitPair => 1.0,
            EnergyConvention::Multiplicity => e.mult as f64,
        };
        (e.u, e.v, c)
    });
    QuadraticForm::from_conductances(g.num_vertices(), entries).expect("graph edges are valid pairs")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverMethod {
    #[default]
    Iterative,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub method: SolverMethod,
    /// Relative residual target on the free vertices.
    pub tol: f64,
    /// Defaults to `50·√(vertex count)` when absent.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { method: SolverMethod::Iterative, tol: 1e-10, max_iter: None }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    pub fn dense() -> Self {
        Self { method: SolverMethod::Dense, ..Self::default() }
    }
}

/// Settings shared by every pattern-level computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComputeConfig {
    pub convention: EnergyConvention,
    pub solver: SolverOptions,
    pub cell_budget: Option<u64>,
}

impl ComputeConfig {
    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            cell_budget: self.cell_budget.unwrap_or(carpet::DEFAULT_CELL_BUDGET),
        }
    }

    pub fn graph(&self, p: &PilingPattern, n: usize) -> Result<CarpetGraph> {
        build_graph_with(p, n, &self.build_options())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletSolution {
    pub values: Vec<f64>,
    pub energy: f64,
    /// Relative residual `‖b − Ax‖ / ‖b‖` of the reduced system.
    pub residual: f64,
    pub iterations: usize,
}

/// Energy minimizer among functions agreeing with `fixed`.
pub fn solve_dirichlet(q: &QuadraticForm, fixed: &[(usize, f64)], opts: &SolverOptions) -> Result<DirichletSolution> {
    let n = q.num_vertices();
    if fixed.is_empty() {
        return Err(CarpetError::Precondition("no prescribed values".into()));
    }
    let mut prescribed: Vec<Option<f64>> = vec![None; n];
    for &(v, val) in fixed {
        if v >= n {
            return Err(CarpetError::Domain(format!("vertex {v} outside 0..{n}")));
        }
        if !val.is_finite() {
            return Err(CarpetError::Domain(format!("prescribed value {val} at {v}")));
        }
        match prescribed[v] {
            Some(old) if old != val => {
                return Err(CarpetError::Precondition(format!(
                    "vertex {v} prescribed both {old} and {val}"
                )))
            }
            _ => prescribed[v] = Some(val),
        }
    }

    // every free vertex must see a prescribed one, or the reduced system is singular
    let mut reached: Vec<bool> = prescribed.iter().map(Option::is_some).collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| reached[v]).collect();
    while let Some(x) = queue.pop_front() {
        for (y, _) in q.neighbors(x) {
            if !reached[y] {
                reached[y] = true;
                queue.push_back(y);
            }
        }
    }
    if let Some(v) = reached.iter().position(|r| !r) {
        return Err(CarpetError::SingularSystem(format!(
            "vertex {v} lies in a component without prescribed values"
        )));
    }

    let free: Vec<usize> = (0..n).filter(|&v| prescribed[v].is_none()).collect();
    let mut pos = vec![usize::MAX; n];
    for (i, &v) in free.iter().enumerate() {
        pos[v] = i;
    }
    let mut rhs = vec![0.0; free.len()];
    for (i, &v) in free.iter().enumerate() {
        for (y, c) in q.neighbors(v) {
            if let Some(val) = prescribed[y] {
                rhs[i] += c * val;
            }
        }
    }
    let system = ReducedSystem { q, free: &free, pos: &pos };

    let (x, iterations) = if free.is_empty() {
        (Vec::new(), 0)
    } else {
        match opts.method {
            SolverMethod::Iterative => {
                let cap = opts
                    .max_iter
                    .unwrap_or_else(|| (50.0 * (n as f64).sqrt()).ceil() as usize);
                pcg(&system, &rhs, opts.tol, cap)?
            }
            SolverMethod::Dense => (dense_solve(&system, &rhs)?, 1),
        }
    };

    let residual = system.relative_residual(&x, &rhs);
    if residual > opts.tol {
        return Err(CarpetError::SolverFailure { iterations, residual, tol: opts.tol });
    }

    let values: Vec<f64> = (0..n)
        .map(|v| prescribed[v].unwrap_or_else(|| x[pos[v]]))
        .collect();
    let energy = q.value(&values);
    Ok(DirichletSolution { values, energy, residual, iterations })
}

struct ReducedSystem<'a> {
    q: &'a QuadraticForm,
    free: &'a [usize],
    pos: &'a [usize],
}

impl ReducedSystem<'_> {
    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (i, &v) in self.free.iter().enumerate() {
            let mut s = self.q.diag[v] * x[i];
            for (y, c) in self.q.neighbors(v) {
                let j = self.pos[y];
                if j != usize::MAX {
                    s -= c * x[j];
                }
            }
            out[i] = s;
        }
    }

    fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let bnorm = norm(b);
        if self.free.is_empty() {
            return 0.0;
        }
        let mut ax = vec![0.0; b.len()];
        self.matvec(x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let rn = norm(&r);
        if bnorm == 0.0 {
            rn
        } else {
            rn / bnorm
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn pcg(sys: &ReducedSystem<'_>, b: &[f64], tol: f64, cap: usize) -> Result<(Vec<f64>, usize)> {
    let m = b.len();
    let mut x = vec![0.0; m];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let inv_diag: Vec<f64> = sys.free.iter().map(|&v| 1.0 / sys.q.diag[v]).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; m];
    let target = tol * bnorm;
    for it in 1..=cap {
        sys.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(CarpetError::SingularSystem(format!(
                "search direction with nonpositive curvature {pap:e} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= target {
            // confirm with the true residual; restart from it if the recurrence drifted
            sys.matvec(&x, &mut ap);
            for i in 0..m {
                r[i] = b[i] - ap[i];
            }
            if norm(&r) <= target {
                return Ok((x, it));
            }
            for i in 0..m {
                z[i] = r[i] * inv_diag[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        for i in 0..m {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok((x, cap))
}

fn dense_solve(sys: &ReducedSystem<'_>, b: &[f64]) -> Result<Vec<f64>> {
    let m = b.len();
    if m > DENSE_LIMIT {
        return Err(CarpetError::Precondition(format!(
            "dense solver limited to {DENSE_LIMIT} free vertices, got {m}"
        )));
    }
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (i, &v) in sys.free.iter().enumerate() {
        a[(i, i)] = sys.q.diag[v];
        for (y, c) in sys.q.neighbors(v) {
            let j = sys.pos[y];
            if j != usize::MAX {
                a[(i, j)] -= c;
            }
        }
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| CarpetError::SingularSystem("reduced operator is not positive definite".into()))?;
    Ok(chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec())
}

/// Effective resistance between two vertex sets, with the minimizing potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResistanceValue {
    pub value: f64,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
    /// The minimizer `h` with `h|_A = 1`, `h|_B = 0`.
    #[serde(skip)]
    pub potential: Vec<f64>,
}

pub fn effective_resistance(q: &QuadraticForm, a: &[usize], b: &[usize], opts: &SolverOptions) -> Result<ResistanceValue> {
    if a.is_empty() || b.is_empty() {
        return Err(CarpetError::Precondition("terminal sets must be nonempty".into()));
    }
    if let Some(v) = a.iter().find(|v| b.contains(v)) {
        return Err(CarpetError::Precondition(format!("vertex {v} is in both terminal sets")));
    }
    let fixed: Vec<(usize, f64)> = a
        .iter()
        .map(|&v| (v, 1.0))
        .chain(b.iter().map(|&v| (v, 0.0)))
        .collect();
    let sol = solve_dirichlet(q, &fixed, opts)?;
    if !(sol.energy > 0.0) {
        return Err(CarpetError::SingularSystem("terminal sets are not connected".into()));
    }
    Ok(ResistanceValue {
        value: 1.0 / sol.energy,
        a: a.to_vec(),
        b: b.to_vec(),
        energy: sol.energy,
        residual: sol.residual,
        iterations: sol.iterations,
        potential: sol.values,
    })
}

/// `R_n(p_i, p_{i+1})` on a built graph; `pair = 0` gives `𝓡_n = R_n(p0, p1)`.
pub fn corner_resistance_on(g: &CarpetGraph, q: &QuadraticForm, pair: usize, opts: &SolverOptions) -> Result<ResistanceValue> {
    let c = g.corner_ids();
    effective_resistance(q, &[c[pair % 4]], &[c[(pair + 1) % 4]], opts)
}

/// Which pair of opposite borders carries the terminals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BorderPair {
    /// Left border at potential 1, right border at 0.
    LeftRight,
    /// Bottom border at potential 1, top border at 0.
    BottomTop,
}

pub fn border_resistance_on(g: &CarpetGraph, q: &QuadraticForm, pair: BorderPair, opts: &SolverOptions) -> Result<ResistanceValue> {
    let (a, b) = match pair {
        BorderPair::LeftRight => (Side::Left, Side::Right),
        BorderPair::BottomTop => (Side::Bottom, Side::Top),
    };
    effective_resistance(q, &carpet::boundary_vertices(g, a), &carpet::boundary_vertices(g, b), opts)
}

/// `𝓡_n = R_n(p0, p1)` for a pattern.
pub fn corner_resistance(p: &PilingPattern, n: usize, cfg: &ComputeConfig) -> Result<ResistanceValue> {
    let g = cfg.graph(p, n)?;
    corner_resistance_on(&g, &natural_energy(&g, cfg.convention), 0, &cfg.solver)
}

/// `𝓡̄_n`, the resistance between the left and right borders.
pub fn border_resistance(p: &PilingPattern, n: usize, cfg: &ComputeConfig) -> Result<ResistanceValue> {
    let g = cfg.graph(p, n)?;
    border_resistance_on(&g, &natural_energy(&g, cfg.convention), BorderPair::LeftRight, &cfg.solver)
}

/// `Σ_{w ∈ W_n} D_{m−n}(f∘Ψ_w)` for `f` on `g_m`, with `g_sub = V_{m−n}`.
pub fn cell_energy_sum(g_m: &CarpetGraph, g_sub: &CarpetGraph, f: &[f64], convention: EnergyConvention) -> Result<f64> {
    if g_sub.level() > g_m.level() {
        return Err(CarpetError::Precondition(format!(
            "sub-level {} exceeds fine level {}",
            g_sub.level(),
            g_m.level()
        )));
    }
    let n = g_m.level() - g_sub.level();
    let q_sub = natural_energy(g_sub, convention);
    let words = g_m.pattern().norm().pow(n as u32);
    let mut total = 0.0;
    let mut pulled = vec![0.0; g_sub.num_vertices()];
    for w in 0..words {
        for (v, &t) in carpet::subcell_embed_id(g_m, w, g_sub).iter().enumerate() {
            pulled[v] = f[t];
        }
        total += q_sub.value(&pulled);
    }
    Ok(total)
}

/// Smallest value of `h` over the vertices with lattice `x ≤ Lⁿ/2`.
pub fn left_half_minimum(g: &CarpetGraph, h: &[f64]) -> f64 {
    let s = g.scale();
    (0..g.num_vertices())
        .filter(|&v| 2 * g.point(v).0 <= s)
        .map(|v| h[v])
        .fold(f64::INFINITY, f64::min)
}
