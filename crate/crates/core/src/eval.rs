//! Evaluation metrics: pitch mean absolute error and gross error rate,
//! DTW divergence with a cosine frame distance, and ABX error rates over
//! supplied triplets.

use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{Features, FeaturesCollection};

/// Relative deviation above which a pitch estimate is a gross error.
pub const GROSS_ERROR_THRESHOLD: f64 = 0.05;

/// Ground truth and estimated pitch tracks, with the frames to score.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchEval {
    ground_truth: Vec<f64>,
    estimates: Vec<f64>,
    mask: Vec<bool>,
}

impl PitchEval {
    pub fn new(ground_truth: Vec<f64>, estimates: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if ground_truth.len() != estimates.len() || mask.len() != estimates.len() {
            return Err(Error::Shape(format!(
                "ground truth, estimates and mask have lengths {}, {} and {}",
                ground_truth.len(),
                estimates.len(),
                mask.len()
            )));
        }
        for (i, (&t, &e)) in ground_truth.iter().zip(&estimates).enumerate() {
            if mask[i] && !(t > 0.0 && t.is_finite() && e.is_finite()) {
                return Err(Error::OutOfRange(format!(
                    "frame {i}: ground truth must be positive and values finite, found {t} and {e}"
                )));
            }
        }
        Ok(Self {
            ground_truth,
            estimates,
            mask,
        })
    }

    /// Scores every frame.
    pub fn unmasked(ground_truth: Vec<f64>, estimates: Vec<f64>) -> Result<Self> {
        let mask = vec![true; ground_truth.len()];
        Self::new(ground_truth, estimates, mask)
    }

    /// Scores the frames voiced in both tracks, unvoiced frames being
    /// marked by non-positive values.
    pub fn voiced(ground_truth: Vec<f64>, estimates: Vec<f64>) -> Result<Self> {
        let mask = ground_truth
            .iter()
            .zip(&estimates)
            .map(|(&t, &e)| t > 0.0 && e > 0.0)
            .collect();
        Self::new(ground_truth, estimates, mask)
    }

    fn pairs(&self) -> Result<Vec<(f64, f64)>> {
        let pairs: Vec<(f64, f64)> = self
            .ground_truth
            .iter()
            .zip(&self.estimates)
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|((&t, &e), _)| (t, e))
            .collect();
        if pairs.is_empty() {
            return Err(Error::OutOfRange("no frame selected by the mask".into()));
        }
        Ok(pairs)
    }
}

/// Mean absolute error in Hz over the masked frames.
pub fn mae(eval: &PitchEval) -> Result<f64> {
    let pairs = eval.pairs()?;
    Ok(pairs.iter().map(|(t, e)| (e - t).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Percentage of masked frames deviating from the truth by strictly more
/// than 5%.
pub fn ger(eval: &PitchEval) -> Result<f64> {
    let pairs = eval.pairs()?;
    let gross = pairs
        .iter()
        .filter(|(t, e)| (e - t).abs() > GROSS_ERROR_THRESHOLD * t)
        .count();
    Ok(100.0 * gross as f64 / pairs.len() as f64)
}

/// Reads a pitch track from a CSV file: one frame per line, the pitch in
/// the last column. A non-numeric first line is taken as a header.
pub fn read_pitch_track(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut track = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let last = line.rsplit([',', ' ', '\t']).next().unwrap_or_default();
        match last.trim().parse::<f64>() {
            Ok(v) => track.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Format(format!(
                    "{}, line {}: invalid pitch value `{last}`",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(track)
}

fn cosine_cost(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => (1.0 - a.dot(&b) / (na * nb)).clamp(0.0, 2.0),
    }
}

/// DTW divergence between two frame sequences with `1 - cos` as frame
/// distance: the cheapest monotone alignment (ties going to the shorter
/// path), its cost divided by its length.
pub fn dtw_cosine_data(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "cannot align {} and {} channels",
            a.ncols(),
            b.ncols()
        )));
    }
    let (n, m) = (a.nrows(), b.nrows());
    if n == 0 || m == 0 {
        return Err(Error::Shape("cannot align empty sequences".into()));
    }
    // (cost, length) of the best path to each cell of the previous row
    let mut prev: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); m];
    let mut row: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); m];
    let better = |x: (f64, usize), y: (f64, usize)| {
        if x.0 < y.0 || (x.0 == y.0 && x.1 < y.1) {
            x
        } else {
            y
        }
    };
    for i in 0..n {
        for j in 0..m {
            let c = cosine_cost(a.row(i), b.row(j));
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, usize::MAX);
                if i > 0 {
                    best = better(prev[j], best);
                }
                if j > 0 {
                    best = better(row[j - 1], best);
                }
                if i > 0 && j > 0 {
                    best = better(prev[j - 1], best);
                }
                best
            };
            row[j] = (best.0 + c, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    let (cost, len) = prev[m - 1];
    Ok(cost / len as f64)
}

pub fn dtw_cosine(a: &Features, b: &Features) -> Result<f64> {
    dtw_cosine_data(a.data().view(), b.data().view())
}

/// An ABX triplet: `a` and `x` share a category, `b` does not.
#[derive(Debug, Clone, Copy)]
pub struct AbxTriplet<'a> {
    pub a: &'a Features,
    pub b: &'a Features,
    pub x: &'a Features,
}

/// Error of one triplet: 0 when `x` is closer to `a`, 1 when closer to
/// `b`, 0.5 on ties.
pub fn abx_triplet_error(t: &AbxTriplet<'_>) -> Result<f64> {
    let da = dtw_cosine(t.a, t.x)?;
    let db = dtw_cosine(t.b, t.x)?;
    Ok(if da > db {
        1.0
    } else if da == db {
        0.5
    } else {
        0.0
    })
}

/// ABX error rate in percent: the mean triplet error.
pub fn abx_score(triplets: &[AbxTriplet<'_>]) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::OutOfRange("no ABX triplet to score".into()));
    }
    let errors: Vec<f64> = triplets
        .par_iter()
        .map(abx_triplet_error)
        .collect::<Result<_>>()?;
    Ok(100.0 * errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Parses `<name_a> <name_b> <name_x>` lines.
pub fn parse_triplets(text: &str) -> Result<Vec<[String; 3]>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Manifest {
                line: i + 1,
                reason: format!("expected `<a> <b> <x>`, found {} fields", fields.len()),
            });
        }
        out.push([fields[0].into(), fields[1].into(), fields[2].into()]);
    }
    Ok(out)
}

/// Looks the triplet names up in `coll`.
pub fn resolve_triplets<'a>(
    coll: &'a FeaturesCollection,
    names: &[[String; 3]],
) -> Result<Vec<AbxTriplet<'a>>> {
    names
        .iter()
        .enumerate()
        .map(|(i, [a, b, x])| {
            let get = |name: &String| {
                coll.get(name).ok_or_else(|| Error::Manifest {
                    line: i + 1,
                    reason: format!("no features named `{name}`"),
                })
            };
            Ok(AbxTriplet {
                a: get(a)?,
                b: get(b)?,
                x: get(x)?,
            })
        })
        .collect()
}
