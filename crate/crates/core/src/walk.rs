//! Monte Carlo effective resistance through the commute-time identity
//! `C(x, y) = 2·R(x, y)·Σ c(e)`.

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carpet::CarpetGraph;
use crate::energy::{natural_energy, EnergyConvention, QuadraticForm};
use crate::error::{CarpetError, Result};

/// Default cap on the total number of walk steps.
pub const DEFAULT_STEP_CAP: u64 = 1_000_000_000;

/// Round trips simulated per generator stream.
pub const BATCH_SIZE: u64 = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// Completed round trips.
    pub samples: u64,
    pub requested: u64,
    pub seed: u64,
    pub steps: u64,
    /// The step cap stopped the run before all samples completed.
    pub aborted: bool,
    #[serde(skip)]
    pub elapsed_secs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkOptions {
    pub samples: u64,
    pub seed: u64,
    pub step_cap: u64,
}

impl Default for WalkOptions {
    fn default() -> Self {
        Self { samples: 100_000, seed: 0, step_cap: DEFAULT_STEP_CAP }
    }
}

/// Uniform draw from `0..range` by Lemire's multiply-and-reject method.
#[inline]
fn below(rng: &mut ChaCha8Rng, range: u32) -> u32 {
    let mut m = rng.next_u32() as u64 * range as u64;
    if (m as u32) < range {
        let threshold = range.wrapping_neg() % range;
        while (m as u32) < threshold {
            m = rng.next_u32() as u64 * range as u64;
        }
    }
    (m >> 32) as u32
}

/// Transition structure: uniform when all conductances agree, otherwise
/// cumulative weights per vertex.
struct Chain {
    offsets: Vec<u32>,
    nbrs: Vec<u32>,
    cumulative: Option<Vec<f64>>,
}

impl Chain {
    fn new(q: &QuadraticForm) -> Result<Self> {
        let n = q.num_vertices();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut nbrs = Vec::new();
        let mut cum = Vec::new();
        let first = q.edges().first().map(|e| e.2);
        let uniform = q.edges().iter().all(|e| Some(e.2) == first);
        offsets.push(0u32);
        for v in 0..n {
            let mut acc = 0.0;
            for (u, c) in q.neighbors(v) {
                nbrs.push(u as u32);
                acc += c;
                cum.push(acc);
            }
            if nbrs.len() == *offsets.last().unwrap() as usize {
                return Err(CarpetError::Precondition(format!("vertex {v} has no edges")));
            }
            offsets.push(nbrs.len() as u32);
        }
        Ok(Self { offsets, nbrs, cumulative: (!uniform).then_some(cum) })
    }

    #[inline]
    fn step(&self, v: usize, rng: &mut ChaCha8Rng) -> usize {
        let lo = self.offsets[v] as usize;
        let hi = self.offsets[v + 1] as usize;
        let k = match &self.cumulative {
            None => below(rng, (hi - lo) as u32) as usize,
            Some(cum) => {
                let w = &cum[lo..hi];
                let r = rng.gen::<f64>() * w[w.len() - 1];
                w.partition_point(|&c| c <= r).min(w.len() - 1)
            }
        };
        self.nbrs[lo + k] as usize
    }

    /// Steps of one walk from `x` until it hits `y`, or `None` past `budget`.
    fn hit(&self, x: usize, y: usize, budget: u64, rng: &mut ChaCha8Rng) -> Option<u64> {
        let mut v = x;
        let mut t = 0u64;
        while v != y {
            if t >= budget {
                return None;
            }
            v = self.step(v, rng);
            t += 1;
        }
        Some(t)
    }
}

#[derive(Default)]
struct BatchTotals {
    done: u64,
    sum: f64,
    sum_sq: f64,
    steps: u64,
    aborted: bool,
}

/// Commute-time estimate of `R(x, y)` on the network `q`.
///
/// Batch `b` draws from stream `b` of a ChaCha8 generator seeded with
/// `seed`, and batch totals are merged in batch order, so the result does
/// not depend on the number of worker threads. The step cap is split evenly
/// over the batches.
pub fn commute_time_resistance_on(q: &QuadraticForm, x: usize, y: usize, opts: &WalkOptions) -> Result<WalkEstimate> {
    let start = Instant::now();
    let n = q.num_vertices();
    if x >= n || y >= n {
        return Err(CarpetError::Domain(format!("terminal outside 0..{n}")));
    }
    if x == y {
        return Err(CarpetError::Precondition("terminals must differ".into()));
    }
    if opts.samples == 0 {
        return Err(CarpetError::Precondition("at least one sample is required".into()));
    }
    let chain = Chain::new(q)?;
    let batches = opts.samples.div_ceil(BATCH_SIZE);
    let per_batch_cap = (opts.step_cap / batches).max(1);
    let totals: Vec<BatchTotals> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b);
            let count = BATCH_SIZE.min(opts.samples - b * BATCH_SIZE);
            let mut t = BatchTotals::default();
            for _ in 0..count {
                let left = per_batch_cap.saturating_sub(t.steps);
                let Some(a) = chain.hit(x, y, left, &mut rng) else {
                    t.aborted = true;
                    break;
                };
                let Some(c) = chain.hit(y, x, left - a, &mut rng) else {
                    t.aborted = true;
                    break;
                };
                let round = (a + c) as f64;
                t.done += 1;
                t.sum += round;
                t.sum_sq += round * round;
                t.steps += a + c;
            }
            t
        })
        .collect();

    let mut all = BatchTotals::default();
    for t in &totals {
        all.done += t.done;
        all.sum += t.sum;
        all.sum_sq += t.sum_sq;
        all.steps += t.steps;
        all.aborted |= t.aborted;
    }
    if all.done == 0 {
        return Err(CarpetError::SolverFailure {
            iterations: all.steps as usize,
            residual: f64::INFINITY,
            tol: 0.0,
        });
    }
    let k = all.done as f64;
    let mean = all.sum / k;
    let var = if all.done > 1 { ((all.sum_sq - k * mean * mean) / (k - 1.0)).max(0.0) } else { 0.0 };
    let scale = 2.0 * q.total_conductance();
    if all.aborted {
        log::warn!("walk stopped by the step cap after {} of {} samples", all.done, opts.samples);
    }
    Ok(WalkEstimate {
        estimate: mean / scale,
        stderr: (var / k).sqrt() / scale,
        samples: all.done,
        requested: opts.samples,
        seed: opts.seed,
        steps: all.steps,
        aborted: all.aborted,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// [`commute_time_resistance_on`] for the natural energy of `g`.
pub fn commute_time_resistance(g: &CarpetGraph, x: usize, y: usize, convention: EnergyConvention, opts: &WalkOptions) -> Result<WalkEstimate> {
    commute_time_resistance_on(&natural_energy(g, convention), x, y, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_is_exact() {
        let q = QuadraticForm::from_conductances(2, [(0, 1, 1.0)]).unwrap();
        let e = commute_time_resistance_on(&q, 0, 1, &WalkOptions { samples: 50, ..Default::default() }).unwrap();
        assert_eq!(e.estimate, 1.0);
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.steps, 100);
    }

    #[test]
    fn four_cycle() {
        let q = QuadraticForm::from_conductances(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)]).unwrap();
        let e = commute_time_resistance_on(&q, 0, 1, &WalkOptions { samples: 20_000, seed: 7, ..Default::default() }).unwrap();
        assert!((e.estimate - 0.75).abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn weighted_edges() {
        // conductances 1 and 3 in parallel paths of length one and two
        let q = QuadraticForm::from_conductances(3, [(0, 1, 1.0), (1, 2, 3.0), (2, 0, 3.0)]).unwrap();
        // R = 1 ∥ (1/3 + 1/3) = 0.4
        let e = commute_time_resistance_on(&q, 0, 1, &WalkOptions { samples: 20_000, seed: 3, ..Default::default() }).unwrap();
        assert!((e.estimate - 0.4).abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn seeded_runs_repeat() {
        let q = QuadraticForm::from_conductances(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)]).unwrap();
        let o = WalkOptions { samples: 3500, seed: 11, ..Default::default() };
        let a = commute_time_resistance_on(&q, 0, 2, &o).unwrap();
        let b = commute_time_resistance_on(&q, 0, 2, &o).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.steps, b.steps);
        let c = commute_time_resistance_on(&q, 0, 2, &WalkOptions { seed: 12, ..o }).unwrap();
        assert_ne!(a.steps, c.steps);
    }

    #[test]
    fn cap_aborts_with_partial_result() {
        let q = QuadraticForm::from_conductances(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)]).unwrap();
        let e = commute_time_resistance_on(&q, 0, 2, &WalkOptions { samples: 1000, seed: 1, step_cap: 200 }).unwrap();
        assert!(e.aborted && e.samples < 1000 && e.steps <= 200);
    }

    #[test]
    fn bad_terminals() {
        let q = QuadraticForm::from_conductances(2, [(0, 1, 1.0)]).unwrap();
        assert!(commute_time_resistance_on(&q, 0, 0, &WalkOptions::default()).is_err());
        assert!(commute_time_resistance_on(&q, 0, 1, &WalkOptions { samples: 0, ..Default::default() }).is_err());
    }
}
