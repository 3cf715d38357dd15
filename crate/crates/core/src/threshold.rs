//! Label-free dynamic thresholding over anomaly scores.
//!
//! A Gaussian kernel density estimate is evaluated on a uniform grid
//! spanning `[min - 3*sigma, max + 3*sigma]` of the retained scores. The
//! threshold is the grid value at the first point right of the density
//! peak where the density drops below the precision `delta`; scores
//! above the threshold are flagged. A bounded FIFO memory keeps the
//! estimate cheap as scores stream in.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid size, precision, and memory bound for threshold computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    /// Number of query points on the density grid.
    pub query_points: usize,
    /// Density cutoff defining the low-density point.
    pub delta: f64,
    /// Score memory capacity.
    pub memory: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            query_points: 1000,
            delta: 0.05,
            memory: 10_000,
        }
    }
}

/// Bounded FIFO buffer of anomaly scores feeding the density estimate.
#[derive(Debug, Clone)]
pub struct ScoreMemory {
    capacity: usize,
    buf: VecDeque<f64>,
}

impl ScoreMemory {
    pub fn new(capacity: usize) -> Self {
        ScoreMemory {
            capacity: capacity.max(1),
            buf: VecDeque::new(),
        }
    }

    /// Append scores in order, evicting oldest entries beyond capacity.
    pub fn push_scores(&mut self, scores: &[f64]) {
        for &s in scores {
            if self.buf.len() == self.capacity {
                self.buf.pop_front();
            }
            self.buf.push_back(s);
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Retained scores, oldest first.
    pub fn scores(&self) -> Vec<f64> {
        self.buf.iter().copied().collect()
    }
}

/// Density estimate artifacts: grid, densities, and the derived threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KdeResult {
    pub grid: Vec<f64>,
    pub densities: Vec<f64>,
    pub bandwidth: f64,
    pub peak_index: usize,
    pub threshold: f64,
    pub delta: f64,
}

impl KdeResult {
    /// Flag decision for one score.
    pub fn classify(&self, score: f64) -> bool {
        score > self.threshold
    }

    /// Render the density curve as `grid,density` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid,density\n");
        for (g, d) in self.grid.iter().zip(self.densities.iter()) {
            out.push_str(&crate::timeseries::format_f64(*g));
            out.push(',');
            out.push_str(&crate::timeseries::format_f64(*d));
            out.push('\n');
        }
        out
    }
}

/// Population standard deviation (divides by `n`).
pub fn population_std(scores: &[f64]) -> f64 {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt()
}

/// Uniform evaluation grid over `[min - 3*sigma, max + 3*sigma]`,
/// endpoints included.
pub fn query_grid(scores: &[f64], z: usize) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores for the query grid".into()));
    }
    if z < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least 2 query points, got {z}"
        )));
    }
    let sigma = population_std(scores);
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = min - 3.0 * sigma;
    let hi = max + 3.0 * sigma;
    let step = (hi - lo) / (z - 1) as f64;
    Ok((0..z).map(|i| lo + i as f64 * step).collect())
}

const BANDWIDTH_FLOOR: f64 = 1e-6;

/// Rule-of-thumb kernel bandwidth `(4 / (3n))^(1/5) * sigma`, floored.
pub fn bandwidth(scores: &[f64]) -> f64 {
    let n = scores.len() as f64;
    let h = (4.0 / (3.0 * n)).powf(0.2) * population_std(scores);
    h.max(BANDWIDTH_FLOOR)
}

/// Gaussian kernel density of the score set at each grid point.
pub fn kde_pdf(scores: &[f64], grid: &[f64], h: f64) -> Vec<f64> {
    debug_assert!(h > 0.0);
    let n = scores.len() as f64;
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h);
    let inv_two_h2 = 1.0 / (2.0 * h * h);
    grid.iter()
        .map(|&x| {
            let sum: f64 = scores
                .iter()
                .map(|&s| {
                    let d = x - s;
                    (-d * d * inv_two_h2).exp()
                })
                .sum();
            norm * sum / n
        })
        .collect()
}

/// Index of the leftmost maximum density.
pub fn find_peak(densities: &[f64]) -> usize {
    let mut best = 0;
    for (i, &d) in densities.iter().enumerate() {
        if d > densities[best] {
            best = i;
        }
    }
    best
}

/// First grid value right of the peak whose density falls below `delta`;
/// the grid maximum when no point qualifies (nothing beyond it is flagged).
pub fn ldp_threshold(grid: &[f64], densities: &[f64], peak_index: usize, delta: f64) -> f64 {
    debug_assert_eq!(grid.len(), densities.len());
    for i in (peak_index + 1)..grid.len() {
        if densities[i] < delta {
            return grid[i];
        }
    }
    *grid.last().unwrap()
}

/// Full threshold computation over a score set.
///
/// Degenerate all-equal scores give no density contrast; the threshold
/// is then placed just above the common value so that identical scores
/// are never flagged.
pub fn compute_threshold(scores: &[f64], cfg: &ThresholdConfig) -> Result<KdeResult> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores for threshold computation".into()));
    }
    if cfg.delta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive, got {}",
            cfg.delta
        )));
    }
    let h = bandwidth(scores);
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        let value = scores[0];
        let z = cfg.query_points.max(2);
        let grid = vec![value; z];
        let densities = kde_pdf(scores, &grid, h);
        return Ok(KdeResult {
            grid,
            densities,
            bandwidth: h,
            peak_index: 0,
            threshold: value + 3.0 * BANDWIDTH_FLOOR,
            delta: cfg.delta,
        });
    }
    let grid = query_grid(scores, cfg.query_points)?;
    let densities = kde_pdf(scores, &grid, h);
    let peak_index = find_peak(&densities);
    let threshold = ldp_threshold(&grid, &densities, peak_index, cfg.delta);
    Ok(KdeResult {
        grid,
        densities,
        bandwidth: h,
        peak_index,
        threshold,
        delta: cfg.delta,
    })
}
