//! Labeled 2D toy datasets.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::Dataset;
use crate::BenchError;

pub const PINWHEEL_ARMS: usize = 5;
pub const PINWHEEL_RADIAL_STD: f64 = 0.3;
pub const PINWHEEL_TANGENTIAL_STD: f64 = 0.05;
pub const PINWHEEL_RATE: f64 = 0.25;
/// Overall scale of the pinwheel layout.
pub const PINWHEEL_SCALE: f64 = 2.0;

pub const GAUSSIANS_COUNT: usize = 8;
pub const GAUSSIANS_RADIUS: f64 = 2.0;
pub const GAUSSIANS_STD: f64 = 0.1;
pub const GAUSSIANS_SCALE: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoints {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
}

impl LabeledPoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Per-class mean.
    pub fn centroids(&self) -> Vec<[f64; 2]> {
        let k = self.n_classes();
        let mut sum = vec![[0.0; 2]; k];
        let mut count = vec![0usize; k];
        for (p, &l) in self.points.iter().zip(&self.labels) {
            sum[l][0] += p[0];
            sum[l][1] += p[1];
            count[l] += 1;
        }
        sum.iter()
            .zip(&count)
            .map(|(s, &c)| [s[0] / c.max(1) as f64, s[1] / c.max(1) as f64])
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), BenchError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x0", "x1", "label"])?;
        for (p, l) in self.points.iter().zip(&self.labels) {
            wr.write_record([p[0].to_string(), p[1].to_string(), l.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, BenchError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut out = Self {
            points: Vec::new(),
            labels: Vec::new(),
        };
        for rec in rd.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| BenchError::Data(format!("row has {} fields", rec.len())));
            let num = |i: usize| -> Result<f64, BenchError> {
                field(i)?.trim().parse().map_err(|e| BenchError::Data(format!("{e}")))
            };
            out.points.push([num(0)?, num(1)?]);
            out.labels.push(field(2)?.trim().parse().map_err(|e| BenchError::Data(format!("{e}")))?);
        }
        Ok(out)
    }
}

pub fn generate(dataset: Dataset, n: usize, seed: u64) -> LabeledPoints {
    match dataset {
        Dataset::Pinwheel => gen_pinwheel(n, seed),
        Dataset::EightGaussians => gen_8gaussians(n, seed),
    }
}

/// Balanced labels `0, 1, .., k-1, 0, 1, ..` when `n` is not a multiple of
/// `k`; the first `n % k` classes get one extra point.
fn balanced_labels(n: usize, k: usize) -> Vec<usize> {
    (0..k).flat_map(|c| std::iter::repeat_n(c, n / k + usize::from(c < n % k))).collect()
}

/// Five curved arms: per arm a Gaussian blob at radius 1 (radial std 0.3,
/// tangential std 0.05), rotated by `2 pi k / 5 + rate * exp(r)`, then
/// scaled by 2. Points come out shuffled.
pub fn gen_pinwheel(n: usize, seed: u64) -> LabeledPoints {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = balanced_labels(n, PINWHEEL_ARMS);
    labels.shuffle(&mut rng);
    let points = labels
        .iter()
        .map(|&k| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let r = 1.0 + PINWHEEL_RADIAL_STD * a;
            let t = PINWHEEL_TANGENTIAL_STD * b;
            let angle = 2.0 * PI * k as f64 / PINWHEEL_ARMS as f64 + PINWHEEL_RATE * r.exp();
            let (s, c) = angle.sin_cos();
            [PINWHEEL_SCALE * (r * c - t * s), PINWHEEL_SCALE * (r * s + t * c)]
        })
        .collect();
    LabeledPoints { points, labels }
}

/// Eight blobs of std 0.1 on a circle of radius 2, the whole layout scaled
/// by `sqrt(2)`.
pub fn gen_8gaussians(n: usize, seed: u64) -> LabeledPoints {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = balanced_labels(n, GAUSSIANS_COUNT);
    labels.shuffle(&mut rng);
    let points = labels
        .iter()
        .map(|&k| {
            let angle = 2.0 * PI * k as f64 / GAUSSIANS_COUNT as f64;
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [
                GAUSSIANS_SCALE * (GAUSSIANS_RADIUS * angle.cos() + GAUSSIANS_STD * a),
                GAUSSIANS_SCALE * (GAUSSIANS_RADIUS * angle.sin() + GAUSSIANS_STD * b),
            ]
        })
        .collect();
    LabeledPoints { points, labels }
}
