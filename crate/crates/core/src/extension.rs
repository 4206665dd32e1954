//! Pre-extension kernels `ψ₀..ψ₃` and the coarse-to-fine extension operator.
//!
//! The kernels are built once on `V_k` from the border-resistance minimizer
//! `h`. Only `ψ̃₀` is computed from `h`; the other three are vertex
//! permutations of it under exact graph automorphisms, so the planar symmetry
//! between kernels holds bit for bit.

use serde::{Deserialize, Serialize};

use crate::carpet::{boundary_vertices, subcell_embed_id, symmetry_permutation, CarpetGraph, Side};
use crate::energy::{border_resistance_on, natural_energy, BorderPair, ComputeConfig, QuadraticForm};
use crate::error::{CarpetError, Result};
use crate::pattern::SquareIsometry;

/// The energy constant `c_pek` of the kernels.
pub const C_PEK: f64 = 272.0;

/// Tolerance for the partition-of-unity checks.
pub const PEK1_TOL: f64 = 1e-9;

/// Tolerance for agreement of overlapping cell assignments.
pub const OVERLAP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelSet {
    pub level: usize,
    /// Border-resistance minimizer (left = 1, right = 0), mirror-symmetrized.
    pub h: Vec<f64>,
    /// `h` turned onto the bottom/top borders (bottom = 1, top = 0).
    pub h_prime: Vec<f64>,
    pub psi_tilde: [Vec<f64>; 4],
    /// `ψ̃ = Σ ψ̃ᵢ`.
    pub psi_tilde_sum: Vec<f64>,
    pub psi: [Vec<f64>; 4],
    /// `𝓡̄_k`.
    pub border_resistance: f64,
    /// `D_k(ψᵢ)`.
    pub energies: [f64; 4],
    /// `D_k(ψ̃₀)`.
    pub pre_energy: f64,
}

/// Outcome of the kernel conditions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelChecks {
    /// Largest violation of `0 ≤ ψᵢ ≤ 1` or `Σψᵢ = 1`.
    pub pek1_max_violation: f64,
    pub pek1_ok: bool,
    pub pek2_ok: bool,
    pub pek3_ok: bool,
    /// `max_i D_k(ψᵢ)·𝓡̄_k`.
    pub pek4_observed: f64,
    pub pek4_ok: bool,
    /// Range of `ψ̃`, expected inside `[1, 4]`.
    pub psi_tilde_sum_range: (f64, f64),
    pub psi_tilde_sum_ok: bool,
    /// `D_k(ψ̃₀)·𝓡̄_k`, at most 8.
    pub pre_energy_observed: f64,
}

impl KernelChecks {
    pub fn all_ok(&self) -> bool {
        self.pek1_ok && self.pek2_ok && self.pek3_ok && self.pek4_ok && self.psi_tilde_sum_ok
    }
}

fn permute(values: &[f64], perm: &[usize]) -> Vec<f64> {
    // out(perm[v]) = values(v)
    let mut out = vec![0.0; values.len()];
    for (v, &t) in perm.iter().enumerate() {
        out[t] = values[v];
    }
    out
}

/// Sum that does not depend on the order of its four terms.
fn symmetric_sum(mut vals: [f64; 4]) -> f64 {
    vals.sort_by(f64::total_cmp);
    vals.iter().sum()
}

/// Builds `ψ₀..ψ₃` on `g` (the graph `V_k`).
pub fn pre_extension_kernels(g: &CarpetGraph, cfg: &ComputeConfig) -> Result<KernelSet> {
    let q = natural_energy(g, cfg.convention);
    let border = border_resistance_on(g, &q, BorderPair::LeftRight, &cfg.solver)?;
    let mirror = symmetry_permutation(g, &SquareIsometry::REFLECT_Y)?;
    let diagonal = symmetry_permutation(g, &SquareIsometry::DIAGONAL)?;
    let rotation = symmetry_permutation(g, &SquareIsometry::ROT90)?;

    let raw = &border.potential;
    let h: Vec<f64> = (0..raw.len()).map(|v| 0.5 * (raw[v] + raw[mirror[v]])).collect();
    // the diagonal is an involution, so h'(v) = h(diag v)
    let h_prime: Vec<f64> = (0..h.len()).map(|v| h[diagonal[v]]).collect();
    let psi0: Vec<f64> = h
        .iter()
        .zip(&h_prime)
        .map(|(&a, &b)| (2.0 * a).min(2.0 * b).min(1.0))
        .collect();
    let psi1 = permute(&psi0, &rotation);
    let psi2 = permute(&psi1, &rotation);
    let psi3 = permute(&psi2, &rotation);
    let psi_tilde = [psi0, psi1, psi2, psi3];
    let psi_tilde_sum: Vec<f64> = (0..h.len())
        .map(|v| symmetric_sum([0, 1, 2, 3].map(|i| psi_tilde[i][v])))
        .collect();
    let psi: [Vec<f64>; 4] = std::array::from_fn(|i| {
        psi_tilde[i]
            .iter()
            .zip(&psi_tilde_sum)
            .map(|(a, s)| a / s)
            .collect()
    });
    let energies = std::array::from_fn(|i| q.value(&psi[i]));
    let pre_energy = q.value(&psi_tilde[0]);
    Ok(KernelSet {
        level: g.level(),
        h,
        h_prime,
        psi_tilde,
        psi_tilde_sum,
        psi,
        border_resistance: border.value,
        energies,
        pre_energy,
    })
}

const CORNER_SIDES: [(Side, Side); 4] = [
    // sides not containing p_i
    (Side::Right, Side::Top),
    (Side::Top, Side::Left),
    (Side::Left, Side::Bottom),
    (Side::Bottom, Side::Right),
];

/// Evaluates the kernel conditions on `g`, the graph the kernels were built on.
pub fn check_kernels(g: &CarpetGraph, ks: &KernelSet) -> Result<KernelChecks> {
    let n = g.num_vertices();
    let mut pek1 = 0.0f64;
    for v in 0..n {
        let mut total = 0.0;
        for psi in &ks.psi {
            let x = psi[v];
            pek1 = pek1.max(-x).max(x - 1.0);
            total += x;
        }
        pek1 = pek1.max((total - 1.0).abs());
    }

    let corners = g.corner_ids();
    let mut pek2 = true;
    for (i, psi) in ks.psi.iter().enumerate() {
        pek2 &= psi[corners[i]] == 1.0;
        let (s1, s2) = CORNER_SIDES[i];
        for v in boundary_vertices(g, s1).into_iter().chain(boundary_vertices(g, s2)) {
            pek2 &= psi[v] == 0.0;
        }
    }

    let mut pek3 = true;
    for iso in SquareIsometry::all() {
        let perm = symmetry_permutation(g, &iso)?;
        let cp = iso.corner_permutation();
        for i in 0..4 {
            let moved = &ks.psi[cp[i]];
            pek3 &= (0..n).all(|v| moved[perm[v]] == ks.psi[i][v]);
        }
    }

    let pek4_observed = ks
        .energies
        .iter()
        .map(|e| e * ks.border_resistance)
        .fold(0.0, f64::max);
    let lo = ks.psi_tilde_sum.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ks.psi_tilde_sum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(KernelChecks {
        pek1_max_violation: pek1,
        pek1_ok: pek1 <= PEK1_TOL,
        pek2_ok: pek2,
        pek3_ok: pek3,
        pek4_observed,
        pek4_ok: pek4_observed <= C_PEK,
        psi_tilde_sum_range: (lo, hi),
        psi_tilde_sum_ok: lo >= 1.0 - PEK1_TOL && hi <= 4.0 + PEK1_TOL,
        pre_energy_observed: ks.pre_energy * ks.border_resistance,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtensionResult {
    /// `𝔈_{n,m} f` on `V_m`.
    pub values: Vec<f64>,
    /// The input on `V_n`.
    pub coarse: Vec<f64>,
    /// `D_m(𝔈f)`.
    pub fine_energy: f64,
    /// `D_n(f)`.
    pub coarse_energy: f64,
    /// `𝓡̄_{m−n}·D_m(𝔈f)/D_n(f)`; absent when `f` is constant.
    pub energy_ratio: Option<f64>,
    /// Largest disagreement between cells assigning the same fine vertex.
    pub max_overlap_gap: f64,
    /// Restriction to `V_n` reproduces `f` exactly.
    pub restriction_exact: bool,
    /// Per-cell min and max of the extension equal those of the cell corners.
    pub cell_extrema_ok: bool,
}

/// `𝔈_{n,m} f`: on each level-`n` cell `w`, the fine values are `Σᵢ f(Ψ_w(pᵢ)) ψᵢ`.
///
/// `g_k` is `V_{m−n}` and `kernels` were built on it; `coarse_ids` is the
/// embedding of `V_n` in `V_m`.
pub fn extend(
    g_n: &CarpetGraph,
    g_m: &CarpetGraph,
    g_k: &CarpetGraph,
    kernels: &KernelSet,
    coarse_ids: &[usize],
    f: &[f64],
    cfg: &ComputeConfig,
) -> Result<ExtensionResult> {
    if g_n.level() + g_k.level() != g_m.level() || kernels.level != g_k.level() {
        return Err(CarpetError::Precondition(format!(
            "levels do not fit: coarse {}, kernel {}, fine {}",
            g_n.level(),
            kernels.level,
            g_m.level()
        )));
    }
    if f.len() != g_n.num_vertices() || coarse_ids.len() != g_n.num_vertices() {
        return Err(CarpetError::Precondition(format!(
            "coarse function has {} values, V_n has {} vertices",
            f.len(),
            g_n.num_vertices()
        )));
    }
    let mut values = vec![f64::NAN; g_m.num_vertices()];
    let mut max_gap = 0.0f64;
    let mut extrema_ok = true;
    for w in 0..g_n.num_words() {
        let corners = g_n.cell_vertices(w);
        let u = corners.map(|c| f[c]);
        let lo = u.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let map = subcell_embed_id(g_m, w, g_k);
        let (mut cell_lo, mut cell_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (v, &target) in map.iter().enumerate() {
            let mut val = 0.0;
            for i in 0..4 {
                val += u[i] * kernels.psi[i][v];
            }
            cell_lo = cell_lo.min(val);
            cell_hi = cell_hi.max(val);
            let slot = &mut values[target];
            if slot.is_nan() {
                *slot = val;
            } else {
                max_gap = max_gap.max((*slot - val).abs());
            }
        }
        let scale = 1.0f64.max(lo.abs()).max(hi.abs());
        extrema_ok &= (cell_lo - lo).abs() <= OVERLAP_TOL * scale && (cell_hi - hi).abs() <= OVERLAP_TOL * scale;
    }
    if max_gap > OVERLAP_TOL {
        return Err(CarpetError::Symmetry(format!(
            "overlapping cells disagree by {max_gap:e} on the extension"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(CarpetError::Precondition("some fine vertex is not covered by any cell".into()));
    }
    let restriction_exact = coarse_ids.iter().zip(f).all(|(&c, &x)| values[c] == x);
    let q_m = natural_energy(g_m, cfg.convention);
    let q_n = natural_energy(g_n, cfg.convention);
    let fine_energy = q_m.value(&values);
    let coarse_energy = q_n.value(f);
    let energy_ratio = (coarse_energy > 0.0).then(|| kernels.border_resistance * fine_energy / coarse_energy);
    Ok(ExtensionResult {
        values,
        coarse: f.to_vec(),
        fine_energy,
        coarse_energy,
        energy_ratio,
        max_overlap_gap: max_gap,
        restriction_exact,
        cell_extrema_ok: extrema_ok,
    })
}

/// `D_n(f|_{V_n}) / (𝓡_{m−n} D_m(f))` for `f` on `V_m`.
pub fn restriction_ratio(q_n: &QuadraticForm, q_m: &QuadraticForm, coarse_ids: &[usize], f: &[f64], corner_resistance_k: f64) -> Option<f64> {
    let restricted: Vec<f64> = coarse_ids.iter().map(|&c| f[c]).collect();
    let fine = q_m.value(f);
    (fine > 0.0).then(|| q_n.value(&restricted) / (corner_resistance_k * fine))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carpet::{build_graph, coarse_embed};
    use crate::pattern::builtin_pattern;

    #[test]
    fn level_zero_kernels_are_corner_indicators() {
        let g = build_graph(&builtin_pattern("sierpinski3").unwrap(), 0).unwrap();
        let ks = pre_extension_kernels(&g, &ComputeConfig::default()).unwrap();
        let c = g.corner_ids();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(ks.psi[i][c[j]], if i == j { 1.0 } else { 0.0 });
            }
        }
        let checks = check_kernels(&g, &ks).unwrap();
        assert!(checks.all_ok(), "{checks:?}");
    }

    #[test]
    fn kernels_level_two_both_patterns() {
        for name in ["sierpinski3", "pillow5"] {
            let g = build_graph(&builtin_pattern(name).unwrap(), 2).unwrap();
            let ks = pre_extension_kernels(&g, &ComputeConfig::default()).unwrap();
            let checks = check_kernels(&g, &ks).unwrap();
            assert!(checks.all_ok(), "{name}: {checks:?}");
            assert!(checks.pre_energy_observed <= 8.0 + 1e-9);
        }
    }

    #[test]
    fn extension_basics() {
        let p = builtin_pattern("sierpinski3").unwrap();
        let cfg = ComputeConfig::default();
        let g1 = build_graph(&p, 1).unwrap();
        let g3 = build_graph(&p, 3).unwrap();
        let g2 = build_graph(&p, 2).unwrap();
        let ks = pre_extension_kernels(&g2, &cfg).unwrap();
        let emb = coarse_embed(&g1, &g3).unwrap();

        let constant = vec![0.3; g1.num_vertices()];
        let r = extend(&g1, &g3, &g2, &ks, &emb, &constant, &cfg).unwrap();
        assert!(r.values.iter().all(|&v| (v - 0.3).abs() < 1e-12));
        assert!(r.energy_ratio.is_none());

        let x: Vec<f64> = (0..g1.num_vertices()).map(|v| g1.point(v).0 as f64).collect();
        let r = extend(&g1, &g3, &g2, &ks, &emb, &x, &cfg).unwrap();
        assert!(r.restriction_exact && r.cell_extrema_ok);
        assert!(r.energy_ratio.unwrap().is_finite());
    }

    #[test]
    fn extension_identity_when_levels_match() {
        let p = builtin_pattern("pillow5").unwrap();
        let cfg = ComputeConfig::default();
        let g0 = build_graph(&p, 0).unwrap();
        let g1 = build_graph(&p, 1).unwrap();
        let ks = pre_extension_kernels(&g0, &cfg).unwrap();
        let emb = coarse_embed(&g1, &g1).unwrap();
        let f: Vec<f64> = (0..g1.num_vertices()).map(|v| (v % 7) as f64).collect();
        let r = extend(&g1, &g1, &g0, &ks, &emb, &f, &cfg).unwrap();
        assert_eq!(r.values, f);
    }
}
