//! Piling multiplicities on the `L x L` level-1 tiling and their admissibility.
//!
//! Grid cells are addressed as `(column, row)` with row 0 at the bottom, so the
//! lower-left corner of the unit square is the lattice point `(0, 0)`.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CarpetError, Result};

/// Names accepted by [`builtin_pattern`].
pub const BUILTIN_NAMES: [&str; 2] = ["sierpinski3", "pillow5"];

/// One of the eight isometries of the square, acting about its center.
///
/// Stored as a signed permutation matrix applied to centered coordinates.
/// Working in doubled coordinates (`2x - S`) keeps every action on integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SquareIsometry {
    m: [[i8; 2]; 2],
}

impl SquareIsometry {
    pub const IDENTITY: Self = Self { m: [[1, 0], [0, 1]] };
    /// Counter-clockwise quarter turn: `(x, y) -> (S - y, x)`.
    pub const ROT90: Self = Self { m: [[0, -1], [1, 0]] };
    pub const ROT180: Self = Self { m: [[-1, 0], [0, -1]] };
    pub const ROT270: Self = Self { m: [[0, 1], [-1, 0]] };
    /// Mirror through the vertical middle line: `x -> S - x`.
    pub const REFLECT_X: Self = Self { m: [[-1, 0], [0, 1]] };
    /// Mirror through the horizontal middle line: `y -> S - y`.
    pub const REFLECT_Y: Self = Self { m: [[1, 0], [0, -1]] };
    /// Mirror through the main diagonal: `(x, y) -> (y, x)`.
    pub const DIAGONAL: Self = Self { m: [[0, 1], [1, 0]] };
    /// Mirror through the anti-diagonal: `(x, y) -> (S - y, S - x)`.
    pub const ANTI_DIAGONAL: Self = Self { m: [[0, -1], [-1, 0]] };

    /// All eight group elements, identity first.
    pub fn all() -> [Self; 8] {
        [
            Self::IDENTITY,
            Self::ROT90,
            Self::ROT180,
            Self::ROT270,
            Self::REFLECT_X,
            Self::REFLECT_Y,
            Self::DIAGONAL,
            Self::ANTI_DIAGONAL,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self.m {
            [[1, 0], [0, 1]] => "identity",
            [[0, -1], [1, 0]] => "rot90",
            [[-1, 0], [0, -1]] => "rot180",
            [[0, 1], [-1, 0]] => "rot270",
            [[-1, 0], [0, 1]] => "reflect_x",
            [[1, 0], [0, -1]] => "reflect_y",
            [[0, 1], [1, 0]] => "diagonal",
            _ => "anti_diagonal",
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let a = self.m;
        let b = other.m;
        let mut m = [[0i8; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Self { m }
    }

    /// Inverse element (the transpose of an orthogonal matrix).
    pub fn inverse(&self) -> Self {
        let m = self.m;
        Self {
            m: [[m[0][0], m[1][0]], [m[0][1], m[1][1]]],
        }
    }

    pub fn order(&self) -> usize {
        let mut g = *self;
        let mut k = 1;
        while g != Self::IDENTITY {
            g = g.compose(self);
            k += 1;
        }
        k
    }

    fn act_doubled(&self, x: i64, y: i64) -> (i64, i64) {
        let m = self.m;
        (
            m[0][0] as i64 * x + m[0][1] as i64 * y,
            m[1][0] as i64 * x + m[1][1] as i64 * y,
        )
    }

    /// Image of the lattice point `(x, y)` with `0 <= x, y <= side`.
    pub fn apply_point(&self, point: (u64, u64), side: u64) -> (u64, u64) {
        let s = side as i64;
        let (x, y) = self.act_doubled(2 * point.0 as i64 - s, 2 * point.1 as i64 - s);
        (((x + s) / 2) as u64, ((y + s) / 2) as u64)
    }

    /// Image of the unit grid cell `(c, r)` in a `side x side` grid. Unchecked.
    pub fn apply_cell_unchecked(&self, cell: (u64, u64), side: u64) -> (u64, u64) {
        let s = side as i64;
        let (x, y) = self.act_doubled(2 * cell.0 as i64 + 1 - s, 2 * cell.1 as i64 + 1 - s);
        (((x + s - 1) / 2) as u64, ((y + s - 1) / 2) as u64)
    }

    /// Permutation of the four corner indices `p0..p3` induced by this isometry.
    pub fn corner_permutation(&self) -> [usize; 4] {
        let corners = [(0, 0), (1, 0), (1, 1), (0, 1)];
        let mut out = [0; 4];
        for (i, &c) in corners.iter().enumerate() {
            let img = self.apply_point(c, 1);
            out[i] = corners.iter().position(|&q| q == img).expect("corner maps to corner");
        }
        out
    }
}

impl fmt::Display for SquareIsometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Image of the grid cell `cell` under `g` in an `l x l` grid.
pub fn apply_isometry(g: &SquareIsometry, cell: (usize, usize), l: usize) -> Result<(usize, usize)> {
    if cell.0 >= l || cell.1 >= l {
        return Err(CarpetError::Domain(format!(
            "cell ({}, {}) outside the {l}x{l} grid",
            cell.0, cell.1
        )));
    }
    let (c, r) = g.apply_cell_unchecked((cell.0 as u64, cell.1 as u64), l as u64);
    Ok((c as usize, r as usize))
}

/// A piling multiplicity `ν` on the `L x L` tiling of the unit square.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PilingPattern {
    side: usize,
    /// Column-major: `mult[c * side + r]`.
    mult: Vec<u32>,
}

impl PilingPattern {
    /// Builds a pattern from rows listed bottom-up (`rows[r][c]`), the file layout.
    pub fn from_rows(side: usize, rows: &[Vec<u32>]) -> Result<Self> {
        if side < 3 {
            return Err(CarpetError::Structural(format!(
                "side count L must be at least 3, got {side}"
            )));
        }
        if rows.len() != side {
            return Err(CarpetError::Structural(format!(
                "expected {side} rows, found {}",
                rows.len()
            )));
        }
        let mut mult = vec![0; side * side];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != side {
                return Err(CarpetError::Structural(format!(
                    "row {r} has {} entries, expected {side}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                mult[c * side + r] = v;
            }
        }
        Ok(Self { side, mult })
    }

    /// Builds a pattern from a cell function `f(c, r)`.
    pub fn from_fn(side: usize, f: impl Fn(usize, usize) -> u32) -> Result<Self> {
        let rows: Vec<Vec<u32>> = (0..side)
            .map(|r| (0..side).map(|c| f(c, r)).collect())
            .collect();
        Self::from_rows(side, &rows)
    }

    /// Side count `L`.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, c: usize, r: usize) -> u32 {
        self.mult[c * self.side + r]
    }

    /// Rows bottom-up, as stored in pattern files.
    pub fn rows(&self) -> Vec<Vec<u32>> {
        (0..self.side)
            .map(|r| (0..self.side).map(|c| self.get(c, r)).collect())
            .collect()
    }

    /// The 1-norm `‖ν‖`, which is also the alphabet size.
    pub fn norm(&self) -> u64 {
        self.mult.iter().map(|&v| v as u64).sum()
    }

    /// Cells with nonzero multiplicity, in `(c, r)` lexicographic order.
    pub fn nonvanish(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for c in 0..self.side {
            for r in 0..self.side {
                if self.get(c, r) >= 1 {
                    out.push((c, r));
                }
            }
        }
        out
    }

    pub fn max_multiplicity(&self) -> u32 {
        self.mult.iter().copied().max().unwrap_or(0)
    }

    /// The pattern `ν ∘ g⁻¹`, i.e. the cell `g(Q)` carries the value of `Q`.
    pub fn transformed(&self, g: &SquareIsometry) -> Self {
        let l = self.side;
        let mut mult = vec![0; l * l];
        for c in 0..l {
            for r in 0..l {
                let (c2, r2) = g.apply_cell_unchecked((c as u64, r as u64), l as u64);
                mult[c2 as usize * l + r2 as usize] = self.get(c, r);
            }
        }
        Self { side: l, mult }
    }
}

/// Adjacency used for the connectedness condition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Cells sharing an edge or a corner are connected (closed squares touching).
    #[default]
    Corner,
    /// Only cells sharing an edge are connected.
    Edge,
}

/// Result of a single admissibility condition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub ok: bool,
    pub detail: String,
}

impl ConditionResult {
    fn pass(detail: impl Into<String>) -> Self {
        Self { ok: true, detail: detail.into() }
    }
    fn fail(detail: impl Into<String>) -> Self {
        Self { ok: false, detail: detail.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub pc1: ConditionResult,
    pub pc2: ConditionResult,
    pub pc3: ConditionResult,
    pub pc4: ConditionResult,
    pub admissible: bool,
    pub norm: u64,
}

impl AdmissibilityReport {
    /// Details of the failing conditions, joined for display.
    pub fn failure_summary(&self) -> String {
        [("PC1", &self.pc1), ("PC2", &self.pc2), ("PC3", &self.pc3), ("PC4", &self.pc4)]
            .iter()
            .filter(|(_, c)| !c.ok)
            .map(|(n, c)| format!("{n}: {}", c.detail))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

pub fn validate_pattern(p: &PilingPattern) -> AdmissibilityReport {
    validate_pattern_with(p, Connectivity::Corner)
}

pub fn validate_pattern_with(p: &PilingPattern, connectivity: Connectivity) -> AdmissibilityReport {
    let l = p.side();
    let norm = p.norm();

    let pc1 = match SquareIsometry::all()
        .iter()
        .find(|g| p.transformed(g) != *p)
    {
        None => ConditionResult::pass("invariant under all 8 square isometries"),
        Some(g) => ConditionResult::fail(format!("not invariant under {g}")),
    };

    let pc2 = {
        let cells = p.nonvanish();
        let reached = connected_count(p, &cells, connectivity);
        if cells.is_empty() {
            ConditionResult::fail("no cell has positive multiplicity")
        } else if reached == cells.len() {
            ConditionResult::pass(format!("{} non-vanishing cells form one component", cells.len()))
        } else {
            ConditionResult::fail(format!(
                "non-vanishing cells are disconnected ({reached} of {} reachable from the first)",
                cells.len()
            ))
        }
    };

    let pc3 = {
        let bad: Vec<String> = (0..l)
            .flat_map(|c| (0..l).map(move |r| (c, r)))
            .filter(|&(c, r)| c == 0 || r == 0 || c == l - 1 || r == l - 1)
            .filter(|&(c, r)| p.get(c, r) != 1)
            .map(|(c, r)| format!("({c},{r})={}", p.get(c, r)))
            .collect();
        if bad.is_empty() {
            ConditionResult::pass("all border cells have multiplicity 1")
        } else {
            ConditionResult::fail(format!("border cells without multiplicity 1: {}", bad.join(", ")))
        }
    };

    let cap = (l * l - 1) as u64;
    let pc4 = if norm <= cap {
        ConditionResult::pass(format!("norm {norm} <= {cap}"))
    } else {
        ConditionResult::fail(format!("norm {norm} exceeds L^2 - 1 = {cap}"))
    };

    let admissible = pc1.ok && pc2.ok && pc3.ok && pc4.ok;
    AdmissibilityReport { pc1, pc2, pc3, pc4, admissible, norm }
}

fn connected_count(p: &PilingPattern, cells: &[(usize, usize)], connectivity: Connectivity) -> usize {
    let Some(&start) = cells.first() else { return 0 };
    let l = p.side() as isize;
    let mut seen = vec![false; (l * l) as usize];
    let mut queue = VecDeque::from([start]);
    seen[start.0 * l as usize + start.1] = true;
    let mut count = 0;
    while let Some((c, r)) = queue.pop_front() {
        count += 1;
        for dc in -1isize..=1 {
            for dr in -1isize..=1 {
                if (dc, dr) == (0, 0) {
                    continue;
                }
                if connectivity == Connectivity::Edge && dc != 0 && dr != 0 {
                    continue;
                }
                let (nc, nr) = (c as isize + dc, r as isize + dr);
                if nc < 0 || nr < 0 || nc >= l || nr >= l {
                    continue;
                }
                let (nc, nr) = (nc as usize, nr as usize);
                let k = nc * l as usize + nr;
                if !seen[k] && p.get(nc, nr) >= 1 {
                    seen[k] = true;
                    queue.push_back((nc, nr));
                }
            }
        }
    }
    count
}

/// Returns one of the named example patterns.
pub fn builtin_pattern(name: &str) -> Result<PilingPattern> {
    match name {
        "sierpinski3" => PilingPattern::from_fn(3, |c, r| u32::from((c, r) != (1, 1))),
        "pillow5" => PilingPattern::from_fn(5, |c, r| {
            let border = c == 0 || r == 0 || c == 4 || r == 4;
            match (border, c, r) {
                (true, _, _) => 1,
                (false, 2, 2) => 2,
                (false, 2, _) | (false, _, 2) => 1,
                _ => 0,
            }
        }),
        _ => Err(CarpetError::UnknownPattern {
            name: name.to_string(),
            available: BUILTIN_NAMES.join(", "),
        }),
    }
}

/// `ρ_a = L² / (L² − 1)`, the a priori growth rate of the border resistances.
pub fn a_priori_rate(side: usize) -> f64 {
    let l2 = (side * side) as f64;
    l2 / (l2 - 1.0)
}
