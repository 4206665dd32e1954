//! Exact small-case values from an independent rational elimination, and
//! agreement between the two solver paths.

use pillow_carpet::carpet::build_graph;
use pillow_carpet::energy::{
    border_resistance, corner_resistance, corner_resistance_on, natural_energy, solve_dirichlet, ComputeConfig,
    EnergyConvention, SolverOptions,
};
use pillow_carpet::pattern::builtin_pattern;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Q(i128, i128);

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

impl Q {
    fn new(n: i128, d: i128) -> Q {
        let g = gcd(n, d).max(1) * d.signum();
        Q(n / g, d / g)
    }
    fn add(self, o: Q) -> Q {
        Q::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    fn sub(self, o: Q) -> Q {
        self.add(Q(-o.0, o.1))
    }
    fn mul(self, o: Q) -> Q {
        Q::new(self.0 * o.0, self.1 * o.1)
    }
    fn div(self, o: Q) -> Q {
        Q::new(self.0 * o.1, self.1 * o.0)
    }
    fn zero(self) -> bool {
        self.0 == 0
    }
}

/// Unit-conductance grid with `k x k` vertices; vertex `(x, y)` is `y*k + x`.
fn grid_edges(k: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for y in 0..k {
        for x in 0..k {
            if x + 1 < k {
                e.push((y * k + x, y * k + x + 1));
            }
            if y + 1 < k {
                e.push((y * k + x, (y + 1) * k + x));
            }
        }
    }
    e
}

/// Energy of the minimizer with `fixed` values, by Gauss-Jordan on the free vertices.
fn exact_energy(n: usize, edges: &[(usize, usize)], fixed: &[(usize, i128)]) -> Q {
    let mut value: Vec<Option<Q>> = vec![None; n];
    for &(v, x) in fixed {
        value[v] = Some(Q(x, 1));
    }
    let free: Vec<usize> = (0..n).filter(|v| value[*v].is_none()).collect();
    let pos = |v: usize| free.iter().position(|&f| f == v);
    let m = free.len();
    let mut a = vec![vec![Q(0, 1); m + 1]; m];
    for &(u, v) in edges {
        for (s, t) in [(u, v), (v, u)] {
            if let Some(i) = pos(s) {
                a[i][i] = a[i][i].add(Q(1, 1));
                match pos(t) {
                    Some(j) => a[i][j] = a[i][j].sub(Q(1, 1)),
                    None => a[i][m] = a[i][m].add(value[t].unwrap()),
                }
            }
        }
    }
    for c in 0..m {
        let p = (c..m).find(|&r| !a[r][c].zero()).expect("nonsingular");
        a.swap(c, p);
        let piv = a[c][c];
        for k in c..=m {
            a[c][k] = a[c][k].div(piv);
        }
        for r in 0..m {
            if r != c && !a[r][c].zero() {
                let f = a[r][c];
                for k in c..=m {
                    a[r][k] = a[r][k].sub(f.mul(a[c][k]));
                }
            }
        }
    }
    for (i, &v) in free.iter().enumerate() {
        value[v] = Some(a[i][m]);
    }
    let mut e = Q(0, 1);
    for &(u, v) in edges {
        let d = value[u].unwrap().sub(value[v].unwrap());
        e = e.add(d.mul(d));
    }
    e
}

fn to_f64(q: Q) -> f64 {
    q.0 as f64 / q.1 as f64
}

#[test]
fn four_cycle_exact() {
    let edges = [(0, 1), (1, 2), (2, 3), (3, 0)];
    let e = exact_energy(4, &edges, &[(0, 1), (1, 0)]);
    assert_eq!(e, Q(4, 3));
}

#[test]
fn sierpinski_level_one_against_rational_oracle() {
    let k = 4;
    let edges = grid_edges(k);
    // corners p0 = (0,0), p1 = (3,0)
    let e_corner = exact_energy(k * k, &edges, &[(0, 1), (3, 0)]);
    let r1 = Q(e_corner.1, e_corner.0);
    assert_eq!(r1, Q(181, 112));
    let left: Vec<(usize, i128)> = (0..k).map(|y| (y * k, 1)).collect();
    let right: Vec<(usize, i128)> = (0..k).map(|y| (y * k + k - 1, 0)).collect();
    let e_border = exact_energy(k * k, &edges, &[left, right].concat());
    assert_eq!(e_border, Q(4, 3));

    let p = builtin_pattern("sierpinski3").unwrap();
    let cfg = ComputeConfig::default();
    assert!((corner_resistance(&p, 1, &cfg).unwrap().value - to_f64(r1)).abs() < 1e-12);
    assert!((border_resistance(&p, 1, &cfg).unwrap().value - 0.75).abs() < 1e-12);

    // the library graph is the same grid
    let g = build_graph(&p, 1).unwrap();
    let mut lib: Vec<((u64, u64), (u64, u64))> = g
        .edges()
        .iter()
        .map(|e| {
            let (a, b) = (g.point(e.u), g.point(e.v));
            (a.min(b), a.max(b))
        })
        .collect();
    lib.sort();
    let mut want: Vec<((u64, u64), (u64, u64))> = edges
        .iter()
        .map(|&(u, v)| {
            let a = ((u % k) as u64, (u / k) as u64);
            let b = ((v % k) as u64, (v / k) as u64);
            (a.min(b), a.max(b))
        })
        .collect();
    want.sort();
    assert_eq!(lib, want);
}

#[test]
fn dense_and_iterative_paths_agree() {
    for (name, n) in [("sierpinski3", 3), ("pillow5", 2)] {
        let g = build_graph(&builtin_pattern(name).unwrap(), n).unwrap();
        let q = natural_energy(&g, EnergyConvention::UnitPair);
        let it = corner_resistance_on(&g, &q, 0, &SolverOptions::with_tol(1e-12)).unwrap();
        let de = corner_resistance_on(&g, &q, 0, &SolverOptions::dense()).unwrap();
        assert!((it.value - de.value).abs() <= 1e-9 * de.value, "{name}: {} vs {}", it.value, de.value);
        let c = g.corner_ids();
        let fixed = [(c[0], 1.0), (c[2], -0.5), (c[3], 0.25)];
        let a = solve_dirichlet(&q, &fixed, &SolverOptions::with_tol(1e-12)).unwrap();
        let b = solve_dirichlet(&q, &fixed, &SolverOptions::dense()).unwrap();
        let gap = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-9, "{name}: {gap}");
    }
}
