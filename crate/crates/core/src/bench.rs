//! Wall-clock scaling of the counting layers.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gsc::GscWorkspace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub edges: usize,
    pub nodes: usize,
    /// Median seconds per forward call.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub num_layers: usize,
    pub rows: Vec<BenchRow>,
    /// Least-squares fit of `ln(seconds)` on `ln(edges)` over sizes ≥ 1.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("edges,nodes,seconds\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.9e}\n", r.edges, r.nodes, r.seconds));
        }
        s
    }
}

/// Returns `(slope, intercept, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if sxx > 0.0 && syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// Log-spaced edge counts from `lo` to `hi` inclusive.
pub fn log_spaced(lo: usize, hi: usize, points: usize) -> Vec<usize> {
    if points <= 1 || hi <= lo {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut v: Vec<usize> = (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp().round() as usize)
        .collect();
    v.dedup();
    v
}

/// Random graph with `edges` edges over `max(edges / 4, 1)` nodes. Each
/// edge reads from a node within `BANDWIDTH` ids of its destination
/// (wrapping), and edges are stored in `(dst, src)` order.
pub fn random_topology(edges: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>, usize, Vec<f64>) {
    let nodes = (edges / 4).max(1);
    let w = BANDWIDTH.min(nodes / 2);
    let mut pairs: Vec<(usize, usize)> = (0..edges)
        .map(|_| {
            let d = rng.random_range(0..nodes);
            let off = rng.random_range(0..=2 * w);
            (d, (d + nodes + off - w) % nodes)
        })
        .collect();
    pairs.sort_unstable();
    let (dst, src) = pairs.into_iter().unzip();
    let vals = (0..edges).map(|_| rng.random::<f64>()).collect();
    (src, dst, nodes, vals)
}

pub const BANDWIDTH: usize = 32;

/// Times the counting layers on random graphs of each size. Each measurement
/// repeats the call until about `min_work` edge-visits have run, and the
/// median over `repetitions` measurements is reported.
pub fn bench_scaling(edge_counts: &[usize], repetitions: usize, num_layers: usize, seed: u64) -> Result<BenchReport> {
    if edge_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("edge counts must be strictly increasing".into()));
    }
    let repetitions = repetitions.max(1);
    let min_work = 4_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(edge_counts.len());
    let mut sink = 0.0;
    for &e in edge_counts {
        let (src, dst, nodes, vals) = random_topology(e, &mut rng);
        let inner = (min_work / e.max(1)).max(1);
        let mut ws = GscWorkspace::default();
        sink += ws.forward(&src, &dst, nodes, &vals, num_layers);
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t = Instant::now();
            for _ in 0..inner {
                sink += ws.forward(&src, &dst, nodes, &vals, num_layers);
            }
            times.push(t.elapsed().as_secs_f64() / inner as f64);
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            edges: e,
            nodes,
            seconds: times[times.len() / 2],
        });
    }
    std::hint::black_box(sink);
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.edges > 0 && r.seconds > 0.0)
        .map(|r| ((r.edges as f64).ln(), r.seconds.ln()))
        .unzip();
    let (slope, intercept, r2) = if x.len() >= 2 { linear_fit(&x, &y) } else { (f64::NAN, f64::NAN, f64::NAN) };
    Ok(BenchReport {
        num_layers,
        rows,
        slope,
        intercept,
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let (s, i, r2) = linear_fit(&x, &y);
        assert!((s - 2.0).abs() < 1e-12 && (i - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_graph_does_not_crash() {
        let r = bench_scaling(&[0], 3, 2, 0).unwrap();
        assert_eq!(r.rows[0].edges, 0);
        assert!(r.rows[0].seconds < 1e-3);
    }

    #[test]
    fn spacing_and_order() {
        assert_eq!(log_spaced(1000, 1_000_000, 4), vec![1000, 10_000, 100_000, 1_000_000]);
        assert!(bench_scaling(&[10, 10], 1, 2, 0).is_err());
    }
}
