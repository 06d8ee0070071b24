//! Numeric summaries of generated samples and inferred latents.

use serde::{Deserialize, Serialize};

use crate::data::LabeledPoints;

/// Minimum share of the generated mass for a cluster to count as covered.
pub const COVERAGE_MASS: f64 = 0.05;
/// Samples farther than this many cluster stds from every centroid spill.
pub const SPILL_STDS: f64 = 3.0;
/// Nearest-to-second-nearest centroid distance ratio above which a sample
/// sits between two modes.
pub const BRIDGE_RATIO: f64 = 0.8;

/// Reference clusters: centroids and RMS radii of labeled data.
#[derive(Debug, Clone, PartialEq)]
pub struct Clusters {
    pub centroids: Vec<[f64; 2]>,
    pub stds: Vec<f64>,
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Clusters {
    pub fn from_data(data: &LabeledPoints) -> Self {
        let centroids = data.centroids();
        let mut ss = vec![0.0; centroids.len()];
        let mut count = vec![0usize; centroids.len()];
        for (p, &l) in data.points.iter().zip(&data.labels) {
            ss[l] += dist(p, &centroids[l]).powi(2);
            count[l] += 1;
        }
        let stds = ss.iter().zip(&count).map(|(s, &c)| (s / c.max(1) as f64).sqrt()).collect();
        Self { centroids, stds }
    }

    /// Index of the nearest centroid and the distances to the nearest and
    /// second nearest.
    fn nearest(&self, x: &[f64; 2]) -> (usize, f64, f64) {
        let mut best = (0, f64::INFINITY, f64::INFINITY);
        for (k, c) in self.centroids.iter().enumerate() {
            let d = dist(x, c);
            if d < best.1 {
                best = (k, d, best.1);
            } else if d < best.2 {
                best.2 = d;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    /// Fraction of clusters receiving at least 5% of the samples (nearest
    /// centroid assignment).
    pub mode_coverage: f64,
    /// Share of samples assigned to each cluster.
    pub cluster_fractions: Vec<f64>,
    /// RMS distance of the samples assigned to each cluster to its centroid.
    pub within_cluster_rms: Vec<f64>,
    /// Fraction of samples farther than 3 cluster stds from every centroid.
    pub spill_fraction: f64,
    /// Fraction of samples about equally close to two centroids.
    pub bridge_fraction: f64,
    /// Fraction of non-finite samples (excluded from the other metrics).
    pub nonfinite_fraction: f64,
}

pub fn generation_metrics(samples: &[[f64; 2]], clusters: &Clusters) -> GenerationMetrics {
    let k = clusters.centroids.len();
    let finite: Vec<&[f64; 2]> = samples.iter().filter(|s| s.iter().all(|v| v.is_finite())).collect();
    let n = finite.len().max(1) as f64;
    let mut count = vec![0usize; k];
    let mut ss = vec![0.0; k];
    let mut spill = 0usize;
    let mut bridge = 0usize;
    for s in &finite {
        let (c, d1, d2) = clusters.nearest(s);
        count[c] += 1;
        ss[c] += d1 * d1;
        if clusters.centroids.iter().zip(&clusters.stds).all(|(m, sd)| dist(s, m) > SPILL_STDS * sd) {
            spill += 1;
        }
        if d2.is_finite() && d1 > BRIDGE_RATIO * d2 {
            bridge += 1;
        }
    }
    let fractions: Vec<f64> = count.iter().map(|&c| c as f64 / n).collect();
    let covered = fractions.iter().filter(|&&f| f >= COVERAGE_MASS).count();
    GenerationMetrics {
        mode_coverage: covered as f64 / k.max(1) as f64,
        within_cluster_rms: ss.iter().zip(&count).map(|(s, &c)| if c == 0 { 0.0 } else { (s / c as f64).sqrt() }).collect(),
        cluster_fractions: fractions,
        spill_fraction: spill as f64 / n,
        bridge_fraction: bridge as f64 / n,
        nonfinite_fraction: (samples.len() - finite.len()) as f64 / samples.len().max(1) as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMetrics {
    /// Minimum distance between class centroids of the posterior means over
    /// the maximum within-class RMS radius.
    pub separation_ratio: f64,
    pub min_centroid_distance: f64,
    pub max_within_rms: f64,
}

/// Class-wise separation of latent codes (one per labeled point).
pub fn latent_metrics(latents: &[[f64; 2]], labels: &[usize]) -> LatentMetrics {
    let set = LabeledPoints {
        points: latents.to_vec(),
        labels: labels.to_vec(),
    };
    let c = Clusters::from_data(&set);
    let mut min_d = f64::INFINITY;
    for i in 0..c.centroids.len() {
        for j in i + 1..c.centroids.len() {
            min_d = min_d.min(dist(&c.centroids[i], &c.centroids[j]));
        }
    }
    let max_rms = c.stds.iter().copied().fold(0.0, f64::max);
    LatentMetrics {
        // Floor keeps the ratio finite for point-mass classes.
        separation_ratio: if min_d > 0.0 { min_d / max_rms.max(1e-12) } else { 0.0 },
        min_centroid_distance: min_d,
        max_within_rms: max_rms,
    }
}

/// Square 2D histogram over `[-range, range]^2`; samples outside the
/// window are clamped into the border bins, non-finite ones dropped.
/// Entry `[i][j]` counts samples in column `i` (first coordinate) and row
/// `j` (second coordinate).
pub fn histogram2d(samples: &[[f64; 2]], range: f64, bins: usize) -> Vec<Vec<u64>> {
    let mut h = vec![vec![0u64; bins]; bins];
    let cell = |v: f64| (((v + range) / (2.0 * range) * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    for s in samples.iter().filter(|s| s.iter().all(|v| v.is_finite())) {
        h[cell(s[0])][cell(s[1])] += 1;
    }
    h
}
