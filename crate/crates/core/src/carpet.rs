//! The level-`n` approaching graph `V_n` as an explicit quotient.
//!
//! Every word `w ∈ W_n` contributes four corner instances `(w, i)`. Instances at
//! the same lattice point are merged when the identification relation says so,
//! and each cell contributes its four sides as edges.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{CarpetError, Result};
use crate::pattern::{validate_pattern, PilingPattern, SquareIsometry};
use crate::words::{self, planar_square, Alphabet, Symbol, Word};

/// Default cap on the number of level-`n` cells `‖ν‖ⁿ`.
pub const DEFAULT_CELL_BUDGET: u64 = 300_000;

/// A corner `p_i` of the cell addressed by `word`, before the quotient.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CornerInstance {
    pub word: Word,
    pub corner: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    /// Number of cells whose side induces this vertex pair.
    pub mult: u32,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Links the larger root under the smaller, so roots are component minima.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// The quotient graph `V_n` of a fixed admissible pattern.
#[derive(Clone, Debug)]
pub struct CarpetGraph {
    pattern: PilingPattern,
    alphabet: Alphabet,
    level: usize,
    scale: u64,
    points: Vec<(u64, u64)>,
    /// Canonical representative per vertex, encoded as `word_id * 4 + corner`.
    reps: Vec<u64>,
    instance_map: Vec<u32>,
    edges: Vec<Edge>,
    corner_ids: [usize; 4],
    closure_pairs: usize,
}

impl CarpetGraph {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn pattern(&self) -> &PilingPattern {
        &self.pattern
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// `L`.
    pub fn side(&self) -> usize {
        self.pattern.side()
    }

    /// `Lⁿ`, the integer scale of lattice coordinates.
    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn num_vertices(&self) -> usize {
        self.points.len()
    }

    pub fn num_words(&self) -> u64 {
        (self.alphabet.len() as u64).pow(self.level as u32)
    }

    pub fn points(&self) -> &[(u64, u64)] {
        &self.points
    }

    pub fn point(&self, v: usize) -> (u64, u64) {
        self.points[v]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Vertex ids of the global corners `p0..p3`.
    pub fn corner_ids(&self) -> [usize; 4] {
        self.corner_ids
    }

    /// Number of instance pairs that were merged only through transitive closure.
    pub fn closure_pairs(&self) -> usize {
        self.closure_pairs
    }

    pub fn rep(&self, v: usize) -> CornerInstance {
        let code = self.reps[v];
        CornerInstance {
            word: self.alphabet.decode(code / 4, self.level),
            corner: (code % 4) as usize,
        }
    }

    /// Canonical representative as `(word_id, corner)`.
    pub fn rep_code(&self, v: usize) -> (u64, usize) {
        let code = self.reps[v];
        (code / 4, (code % 4) as usize)
    }

    /// Vertex of the instance `(word_id, corner)`.
    pub fn instance_vertex(&self, word_id: u64, corner: usize) -> usize {
        self.instance_map[(word_id * 4) as usize + corner] as usize
    }

    /// The four vertices of the cell `word_id`, in corner order.
    pub fn cell_vertices(&self, word_id: u64) -> [usize; 4] {
        let base = (word_id * 4) as usize;
        [0, 1, 2, 3].map(|i| self.instance_map[base + i] as usize)
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_vertices()];
        for e in &self.edges {
            adj[e.u].push(e.v);
            adj[e.v].push(e.u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let n = self.num_vertices();
        if n == 0 {
            return true;
        }
        bfs_hops(&self.adjacency(), 0).iter().all(|d| d.is_some())
    }
}

/// Hop distances from `source`; `None` for unreachable vertices.
pub fn bfs_hops(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(x) = queue.pop_front() {
        let d = dist[x].unwrap() + 1;
        for &y in &adj[x] {
            if dist[y].is_none() {
                dist[y] = Some(d);
                queue.push_back(y);
            }
        }
    }
    dist
}

fn rect_contains(rect: &words::CellRect, scale_up: u64, p: (u64, u64)) -> bool {
    let (x0, y0) = (rect.a * scale_up, rect.b * scale_up);
    p.0 >= x0 && p.0 <= x0 + scale_up && p.1 >= y0 && p.1 <= y0 + scale_up
}

fn rect_boundary(rect: &words::CellRect, scale_up: u64, p: (u64, u64)) -> bool {
    let (x0, y0) = (rect.a * scale_up, rect.b * scale_up);
    p.0 == x0 || p.0 == x0 + scale_up || p.1 == y0 || p.1 == y0 + scale_up
}

/// Whether the corner-level point `point` of the cells `w` and `v` is identified.
///
/// `point` is given at scale `Lⁿ` with `n = |w| = |v|` and must lie in both
/// closed cells. Identical words glue everywhere; words with a common parent
/// glue along the boundary of the cell; otherwise the question is passed to
/// the parents.
pub fn glue(p: &PilingPattern, w: &Word, v: &Word, point: (u64, u64)) -> Result<bool> {
    if w.len() != v.len() {
        return Err(CarpetError::Precondition(format!(
            "words of different lengths {} and {}",
            w.len(),
            v.len()
        )));
    }
    w.validate(p)?;
    v.validate(p)?;
    let n = w.len();
    let side = p.side();
    if !rect_contains(&planar_square(w, side), 1, point) || !rect_contains(&planar_square(v, side), 1, point) {
        return Err(CarpetError::Precondition(format!(
            "point ({}, {}) not in both cells",
            point.0, point.1
        )));
    }
    let mut w = w.clone();
    let mut v = v.clone();
    let mut k = n;
    loop {
        if k == 0 || w == v {
            return Ok(true);
        }
        let wp = w.parent().expect("nonempty");
        let vp = v.parent().expect("nonempty");
        if wp == vp {
            let up = words::scale(side, n - k)?;
            return Ok(rect_boundary(&planar_square(&w, side), up, point));
        }
        w = wp;
        v = vp;
        k -= 1;
    }
}

/// Options for [`build_graph`].
#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    pub cell_budget: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { cell_budget: DEFAULT_CELL_BUDGET }
    }
}

/// Checks `‖ν‖ⁿ` against the cell budget.
pub fn check_budget(p: &PilingPattern, n: usize, budget: u64) -> Result<u64> {
    let cells = (p.norm() as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if cells > budget as u128 {
        return Err(CarpetError::Budget { cells, budget });
    }
    Ok(cells as u64)
}

/// The corner letter `(c_i, 0)` whose repeated word addresses the cell at global corner `p_i`.
pub fn corner_symbol(side: usize, i: usize) -> Symbol {
    let m = side - 1;
    match i {
        0 => Symbol::new(0, 0, 0),
        1 => Symbol::new(m, 0, 0),
        2 => Symbol::new(m, m, 0),
        _ => Symbol::new(0, m, 0),
    }
}

struct GlueContext<'a> {
    side: u64,
    base: u64,
    letters: &'a [Symbol],
    level: usize,
}

impl GlueContext<'_> {
    fn lower_left(&self, mut id: u64, k: usize) -> (u64, u64) {
        let (mut a, mut b, mut weight) = (0u64, 0u64, 1u64);
        for _ in 0..k {
            let s = self.letters[(id % self.base) as usize];
            a += s.cell.0 as u64 * weight;
            b += s.cell.1 as u64 * weight;
            weight *= self.side;
            id /= self.base;
        }
        (a, b)
    }

    /// Same recursion as [`glue`], on word ids.
    fn glue(&self, mut w: u64, mut v: u64, point: (u64, u64)) -> bool {
        let mut k = self.level;
        loop {
            if k == 0 || w == v {
                return true;
            }
            let (wp, vp) = (w / self.base, v / self.base);
            if wp == vp {
                let up = self.side.pow((self.level - k) as u32);
                let (a, b) = self.lower_left(w, k);
                let rect = words::CellRect { level: k, a, b };
                return rect_boundary(&rect, up, point);
            }
            w = wp;
            v = vp;
            k -= 1;
        }
    }
}

/// Builds `V_n` for an admissible pattern.
pub fn build_graph(p: &PilingPattern, n: usize) -> Result<CarpetGraph> {
    build_graph_with(p, n, &BuildOptions::default())
}

pub fn build_graph_with(p: &PilingPattern, n: usize, opts: &BuildOptions) -> Result<CarpetGraph> {
    let report = validate_pattern(p);
    if !report.admissible {
        return Err(CarpetError::Inadmissible(report.failure_summary()));
    }
    let num_words = check_budget(p, n, opts.cell_budget)?;
    let alphabet = Alphabet::new(p);
    let side = p.side() as u64;
    let scale = words::scale(p.side(), n)?;
    let base = alphabet.len() as u64;

    // lower-left corners of all cells, built level by level
    let mut pos: Vec<(u64, u64)> = vec![(0, 0)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(pos.len() * base as usize);
        for &(a, b) in &pos {
            for s in alphabet.symbols() {
                next.push((a * side + s.cell.0 as u64, b * side + s.cell.1 as u64));
            }
        }
        pos = next;
    }
    debug_assert_eq!(pos.len() as u64, num_words);

    let offsets = [(0, 0), (1, 0), (1, 1), (0, 1)];
    let stride = scale + 1;
    let mut keyed: Vec<(u64, u32)> = Vec::with_capacity(pos.len() * 4);
    for (w, &(a, b)) in pos.iter().enumerate() {
        for (i, &(dx, dy)) in offsets.iter().enumerate() {
            keyed.push(((a + dx) * stride + (b + dy), (w * 4 + i) as u32));
        }
    }
    keyed.sort_unstable();

    let ctx = GlueContext { side, base, letters: alphabet.symbols(), level: n };
    let mut instance_map = vec![u32::MAX; keyed.len()];
    let mut points = Vec::new();
    let mut reps = Vec::new();
    let mut closure_pairs = 0usize;

    let mut start = 0;
    while start < keyed.len() {
        let key = keyed[start].0;
        let mut end = start + 1;
        while end < keyed.len() && keyed[end].0 == key {
            end += 1;
        }
        let bucket: Vec<u64> = keyed[start..end].iter().map(|&(_, id)| id as u64).collect();
        let point = (key / stride, key % stride);
        let k = bucket.len();
        let mut uf = UnionFind::new(k);
        let mut related = vec![false; k * k];
        for i in 0..k {
            related[i * k + i] = true;
            for j in (i + 1)..k {
                if ctx.glue(bucket[i] / 4, bucket[j] / 4, point) {
                    related[i * k + j] = true;
                    related[j * k + i] = true;
                    uf.union(i, j);
                }
            }
        }
        // classes in order of their least member; bucket is sorted by instance id
        let mut class_vertex = vec![usize::MAX; k];
        for i in 0..k {
            let root = uf.find(i);
            if class_vertex[root] == usize::MAX {
                class_vertex[root] = points.len();
                points.push(point);
                reps.push(bucket[root]);
            }
            instance_map[bucket[i] as usize] = class_vertex[root] as u32;
            for j in 0..i {
                if uf.find(j) == root && !related[i * k + j] {
                    closure_pairs += 1;
                }
            }
        }
        start = end;
    }
    if closure_pairs > 0 {
        log::warn!("identification needed transitive closure for {closure_pairs} instance pairs");
    }

    let mut raw: Vec<(usize, usize)> = Vec::with_capacity(pos.len() * 4);
    for w in 0..pos.len() {
        let c = [0, 1, 2, 3].map(|i| instance_map[w * 4 + i] as usize);
        for (x, y) in [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])] {
            raw.push((x.min(y), x.max(y)));
        }
    }
    raw.sort_unstable();
    let mut edges: Vec<Edge> = Vec::new();
    for (u, v) in raw {
        match edges.last_mut() {
            Some(e) if e.u == u && e.v == v => e.mult += 1,
            _ => edges.push(Edge { u, v, mult: 1 }),
        }
    }

    let mut corner_ids = [0usize; 4];
    for (i, slot) in corner_ids.iter_mut().enumerate() {
        let word = Word::repeat(corner_symbol(p.side(), i), n);
        let id = alphabet.encode(&word)?;
        *slot = instance_map[(id * 4) as usize + i] as usize;
    }

    Ok(CarpetGraph {
        pattern: p.clone(),
        alphabet,
        level: n,
        scale,
        points,
        reps,
        instance_map,
        edges,
        corner_ids,
        closure_pairs,
    })
}

/// Quotient class of a corner instance.
pub fn vertex_of(g: &CarpetGraph, ci: &CornerInstance) -> Result<usize> {
    if ci.word.len() != g.level() {
        return Err(CarpetError::Lookup(format!(
            "instance word has length {}, graph level is {}",
            ci.word.len(),
            g.level()
        )));
    }
    if ci.corner > 3 {
        return Err(CarpetError::Lookup(format!("corner index {} not in 0..=3", ci.corner)));
    }
    let id = g.alphabet().encode(&ci.word)?;
    Ok(g.instance_vertex(id, ci.corner))
}

/// Vertices on one side of the unit square, sorted by id.
pub fn boundary_vertices(g: &CarpetGraph, side: Side) -> Vec<usize> {
    let s = g.scale();
    (0..g.num_vertices())
        .filter(|&v| {
            let (x, y) = g.point(v);
            match side {
                Side::Left => x == 0,
                Side::Right => x == s,
                Side::Bottom => y == 0,
                Side::Top => y == s,
            }
        })
        .collect()
}

/// Maps each vertex of `g_sub` into `g_m` through the cell `w`, i.e. `Ψ_w`.
pub fn subcell_embed(g_m: &CarpetGraph, w: &Word, g_sub: &CarpetGraph) -> Result<Vec<usize>> {
    if w.len() + g_sub.level() != g_m.level() {
        return Err(CarpetError::Precondition(format!(
            "level mismatch: |w| = {} plus sub level {} is not {}",
            w.len(),
            g_sub.level(),
            g_m.level()
        )));
    }
    if g_m.pattern() != g_sub.pattern() {
        return Err(CarpetError::Precondition("graphs built from different patterns".into()));
    }
    let id = g_m.alphabet().encode(w)?;
    Ok(subcell_embed_id(g_m, id, g_sub))
}

/// [`subcell_embed`] for a word given by id; levels are assumed consistent.
pub fn subcell_embed_id(g_m: &CarpetGraph, word_id: u64, g_sub: &CarpetGraph) -> Vec<usize> {
    let offset = word_id * g_sub.num_words();
    (0..g_sub.num_vertices())
        .map(|v| {
            let (u, corner) = g_sub.rep_code(v);
            g_m.instance_vertex(offset + u, corner)
        })
        .collect()
}

/// Position of each vertex of `V_n` inside `V_m` (`n <= m`).
pub fn coarse_embed(g_n: &CarpetGraph, g_m: &CarpetGraph) -> Result<Vec<usize>> {
    if g_n.level() > g_m.level() {
        return Err(CarpetError::Precondition(format!(
            "coarse level {} above fine level {}",
            g_n.level(),
            g_m.level()
        )));
    }
    if g_n.pattern() != g_m.pattern() {
        return Err(CarpetError::Precondition("graphs built from different patterns".into()));
    }
    let k = g_m.level() - g_n.level();
    let alpha = g_m.alphabet();
    let tails: Vec<u64> = (0..4)
        .map(|i| alpha.encode(&Word::repeat(corner_symbol(g_m.side(), i), k)))
        .collect::<Result<_>>()?;
    let shift = (alpha.len() as u64).pow(k as u32);
    Ok((0..g_n.num_vertices())
        .map(|v| {
            let (w, corner) = g_n.rep_code(v);
            g_m.instance_vertex(w * shift + tails[corner], corner)
        })
        .collect())
}

/// Local-finiteness diagnostics for one graph.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UlfStats {
    /// Largest number of cells having a vertex as a corner.
    pub max_cell_incidence: usize,
    pub max_degree: usize,
    /// `2‖ν‖`.
    pub incidence_bound: usize,
    pub incidence_ok: bool,
    /// Every vertex has degree at most four times its cell incidence.
    pub degree_ok: bool,
}

/// Number of cells having each vertex as a corner.
pub fn cell_incidence(g: &CarpetGraph) -> Vec<usize> {
    let mut inc = vec![0usize; g.num_vertices()];
    for &v in &g.instance_map {
        inc[v as usize] += 1;
    }
    inc
}

pub fn degrees(g: &CarpetGraph) -> Vec<usize> {
    let mut deg = vec![0usize; g.num_vertices()];
    for e in g.edges() {
        deg[e.u] += 1;
        deg[e.v] += 1;
    }
    deg
}

pub fn ulf_stats(g: &CarpetGraph) -> UlfStats {
    let inc = cell_incidence(g);
    let deg = degrees(g);
    let bound = 2 * g.pattern().norm() as usize;
    let max_cell_incidence = inc.iter().copied().max().unwrap_or(0);
    UlfStats {
        max_cell_incidence,
        max_degree: deg.iter().copied().max().unwrap_or(0),
        incidence_bound: bound,
        incidence_ok: max_cell_incidence <= bound,
        degree_ok: inc.iter().zip(&deg).all(|(&i, &d)| d <= 4 * i),
    }
}

/// Vertex permutation induced by a square isometry (`perm[v]` is the image of `v`).
///
/// Every corner instance of a vertex is mapped and the images must agree; a
/// disagreement or a non-bijective result is reported as a symmetry error.
pub fn symmetry_permutation(g: &CarpetGraph, iso: &SquareIsometry) -> Result<Vec<usize>> {
    let p = g.pattern();
    let alpha = g.alphabet();
    let base = alpha.len() as u64;
    let letter_map: Vec<u64> = alpha
        .symbols()
        .iter()
        .map(|s| {
            let img = words::apply_isometry_word(iso, &Word::new(vec![*s]), p)?;
            Ok(alpha.index_of(&img.letters[0]).expect("valid image letter") as u64)
        })
        .collect::<Result<_>>()?;
    let corner_perm = iso.corner_permutation();
    let mut perm = vec![usize::MAX; g.num_vertices()];
    for w in 0..g.num_words() {
        let mut img = 0u64;
        let mut weight = 1u64;
        let mut rest = w;
        for _ in 0..g.level() {
            img += letter_map[(rest % base) as usize] * weight;
            weight *= base;
            rest /= base;
        }
        for i in 0..4 {
            let src = g.instance_vertex(w, i);
            let dst = g.instance_vertex(img, corner_perm[i]);
            if perm[src] == usize::MAX {
                perm[src] = dst;
            } else if perm[src] != dst {
                return Err(CarpetError::Symmetry(format!(
                    "{iso} sends vertex {src} to both {} and {dst}",
                    perm[src]
                )));
            }
        }
    }
    let mut hit = vec![false; perm.len()];
    for &t in &perm {
        if t == usize::MAX || std::mem::replace(&mut hit[t], true) {
            return Err(CarpetError::Symmetry(format!("{iso} does not induce a bijection")));
        }
    }
    Ok(perm)
}

/// True when `perm` maps the edge multiset onto itself, multiplicities included.
pub fn is_automorphism(g: &CarpetGraph, perm: &[usize]) -> bool {
    if perm.len() != g.num_vertices() {
        return false;
    }
    let mut mapped: Vec<Edge> = g
        .edges()
        .iter()
        .map(|e| {
            let (a, b) = (perm[e.u], perm[e.v]);
            Edge { u: a.min(b), v: a.max(b), mult: e.mult }
        })
        .collect();
    mapped.sort_unstable();
    mapped == g.edges()
}

/// Vertex count of `V_n` for a pattern with all multiplicities at most one,
/// computed from planar geometry alone.
///
/// A lattice point is a vertex iff one of the (up to four) level-`n` squares
/// around it is kept, and a square is kept iff every base-`L` digit pair of its
/// position is a non-vanishing cell.
pub fn planar_vertex_count(p: &PilingPattern, n: usize) -> Result<u64> {
    if p.max_multiplicity() > 1 {
        return Err(CarpetError::Precondition(
            "planar count only applies to multiplicities at most one".into(),
        ));
    }
    let l = p.side() as u64;
    let s = words::scale(p.side(), n)?;
    let kept = |a: u64, b: u64| -> bool {
        let (mut a, mut b) = (a, b);
        for _ in 0..n {
            if p.get((a % l) as usize, (b % l) as usize) == 0 {
                return false;
            }
            a /= l;
            b /= l;
        }
        true
    };
    let mut count = 0;
    for x in 0..=s {
        for y in 0..=s {
            let around = [(x.wrapping_sub(1), y.wrapping_sub(1)), (x, y.wrapping_sub(1)), (x.wrapping_sub(1), y), (x, y)];
            if around.iter().any(|&(a, b)| a < s && b < s && kept(a, b)) {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Edge multiplicity histogram, for diagnostics.
pub fn multiplicity_histogram(g: &CarpetGraph) -> BTreeMap<u32, usize> {
    let mut out = BTreeMap::new();
    for e in g.edges() {
        *out.entry(e.mult).or_insert(0) += 1;
    }
    out
}
