//! Diagonal-covariance Gaussian mixtures and universal background model
//! training by expectation-maximization.

use std::f64::consts::PI;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::features::{Features, FeaturesCollection};

/// Frames per E-step work unit. Statistics are reduced in chunk order, so
/// results do not depend on the number of worker threads.
const CHUNK_FRAMES: usize = 512;
/// Relative mean offset of the two halves of a split component, in units
/// of that component's standard deviation.
const SPLIT_OFFSET: f64 = 0.5;
/// Spread of the initial component means around the global mean, in
/// global standard deviations.
const INIT_SPREAD: f64 = 0.5;
/// Variance floor as a fraction of the global per-dimension variance.
pub const VARIANCE_FLOOR_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmm {
    weights: Array1<f64>,
    means: Array2<f64>,
    vars: Array2<f64>,
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl DiagGmm {
    pub fn new(weights: Array1<f64>, means: Array2<f64>, vars: Array2<f64>) -> Result<Self> {
        let gmm = Self {
            weights,
            means,
            vars,
        };
        gmm.validate()?;
        Ok(gmm)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.weights.len();
        if g == 0 {
            return Err(Error::Shape("a mixture needs at least one component".into()));
        }
        if self.means.nrows() != g || self.vars.dim() != self.means.dim() {
            return Err(Error::Shape(format!(
                "weights {g}, means {:?} and vars {:?} disagree",
                self.means.dim(),
                self.vars.dim()
            )));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Invariant("weights must be non-negative".into()));
        }
        if (self.weights.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::Invariant(format!(
                "weights sum to {}, not 1",
                self.weights.sum()
            )));
        }
        if self.vars.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Invariant("variances must be positive".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Invariant("means must be finite".into()));
        }
        Ok(())
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn vars(&self) -> &Array2<f64> {
        &self.vars
    }

    fn scorer(&self) -> Scorer {
        let inv_vars = self.vars.mapv(|v| 1.0 / v);
        let consts = (0..self.num_components())
            .map(|g| {
                let logdet: f64 = self.vars.row(g).iter().map(|v| (2.0 * PI * v).ln()).sum();
                self.weights[g].ln() - 0.5 * logdet
            })
            .collect();
        Scorer {
            means: self.means.clone(),
            inv_vars,
            consts,
        }
    }

    /// Log-likelihood of one frame.
    pub fn loglike(&self, frame: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_dim(frame.len())?;
        let mut buf = vec![0.0; self.num_components()];
        Ok(self.scorer().frame(frame, &mut buf))
    }

    /// Summed log-likelihood of the rows of `data`.
    pub fn total_loglike(&self, data: ArrayView2<'_, f64>) -> Result<f64> {
        self.check_dim(data.ncols())?;
        let scorer = self.scorer();
        let chunks: Vec<_> = data.axis_chunks_iter(Axis(0), CHUNK_FRAMES).collect();
        let parts: Vec<f64> = chunks
            .par_iter()
            .map(|chunk| {
                let mut buf = vec![0.0; self.num_components()];
                chunk.rows().into_iter().map(|r| scorer.frame(r, &mut buf)).sum()
            })
            .collect();
        Ok(parts.iter().sum())
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::Shape(format!(
                "frame has dimension {d}, model has {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// The model as a features collection of three named matrices
    /// (`weights` `[G, 1]`, `means` and `vars` `[G, D]`), rows indexed by
    /// component.
    pub fn to_collection(&self) -> Result<FeaturesCollection> {
        let g = self.num_components();
        let index: Vec<f64> = (0..g).map(|i| i as f64).collect();
        let weights = self.weights.clone().insert_axis(Axis(1));
        let mut coll = FeaturesCollection::new();
        for (name, data) in [
            ("weights", weights),
            ("means", self.means.clone()),
            ("vars", self.vars.clone()),
        ] {
            let props = json!({ "processor": "ubm", "matrix": name });
            coll.insert(name, Features::with_centers(data, &index, props)?)?;
        }
        Ok(coll)
    }

    pub fn from_collection(coll: &FeaturesCollection) -> Result<Self> {
        let get = |name: &str| {
            coll.get(name)
                .map(|f| f.data().clone())
                .ok_or_else(|| Error::Format(format!("model has no `{name}` matrix")))
        };
        let weights = get("weights")?;
        if weights.ncols() != 1 {
            return Err(Error::Format("`weights` must have a single column".into()));
        }
        Self::new(weights.column(0).to_owned(), get("means")?, get("vars")?)
    }
}

/// Precomputed per-component terms for fast evaluation.
struct Scorer {
    means: Array2<f64>,
    inv_vars: Array2<f64>,
    consts: Vec<f64>,
}

impl Scorer {
    /// Fills `out` with per-component joint log-likelihoods and returns
    /// their log-sum-exp.
    fn frame(&self, x: ArrayView1<'_, f64>, out: &mut [f64]) -> f64 {
        for (g, o) in out.iter_mut().enumerate() {
            let mean = self.means.row(g);
            let inv = self.inv_vars.row(g);
            let mut q = 0.0;
            for d in 0..x.len() {
                let diff = x[d] - mean[d];
                q += diff * diff * inv[d];
            }
            *o = self.consts[g] - 0.5 * q;
        }
        log_sum_exp(out)
    }
}

/// Log-likelihood of `frame` under `gmm`, computed with log-sum-exp.
pub fn gmm_loglike(gmm: &DiagGmm, frame: ArrayView1<'_, f64>) -> Result<f64> {
    gmm.loglike(frame)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UbmOptions {
    pub num_gauss: usize,
    pub num_iters: usize,
    pub initial_gauss_proportion: f64,
    pub num_iters_init: usize,
    pub num_frames: usize,
    pub min_gaussian_weight: f64,
    pub remove_low_count_gaussians: bool,
}

impl Default for UbmOptions {
    fn default() -> Self {
        Self {
            num_gauss: 64,
            num_iters: 4,
            initial_gauss_proportion: 0.5,
            num_iters_init: 20,
            num_frames: 500_000,
            min_gaussian_weight: 1e-4,
            remove_low_count_gaussians: false,
        }
    }
}

impl UbmOptions {
    pub fn validate(&self) -> Result<()> {
        if self.num_gauss == 0 {
            return Err(Error::param("num_gauss", "must be positive"));
        }
        if !(self.initial_gauss_proportion > 0.0 && self.initial_gauss_proportion <= 1.0) {
            return Err(Error::param("initial_gauss_proportion", "must be in (0, 1]"));
        }
        if self.num_frames == 0 {
            return Err(Error::param("num_frames", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.min_gaussian_weight) {
            return Err(Error::param("min_gaussian_weight", "must be in [0, 1)"));
        }
        Ok(())
    }

    fn initial_components(&self) -> usize {
        ((self.initial_gauss_proportion * self.num_gauss as f64).round() as usize)
            .clamp(1, self.num_gauss)
    }
}

/// Per-iteration record of EM training. Each segment holds the average
/// per-frame log-likelihood before every EM update and after the last
/// one, on fixed data with a fixed set of components; a new segment
/// starts after a split, a removal or a change of training data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmTrace {
    pub segments: Vec<Vec<f64>>,
}

impl EmTrace {
    /// Largest relative decrease of the log-likelihood between two
    /// consecutive iterations of a segment (zero if none decreases).
    pub fn max_relative_decrease(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|s| s.windows(2))
            .map(|w| (w[0] - w[1]) / w[0].abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

struct Stats {
    occupancy: Array1<f64>,
    first: Array2<f64>,
    second: Array2<f64>,
    loglike: f64,
}

fn accumulate(gmm: &DiagGmm, data: ArrayView2<'_, f64>) -> Stats {
    let (g, d) = (gmm.num_components(), gmm.dim());
    let scorer = gmm.scorer();
    let chunks: Vec<_> = data.axis_chunks_iter(Axis(0), CHUNK_FRAMES).collect();
    let parts: Vec<Stats> = chunks
        .par_iter()
        .map(|chunk| {
            let mut stats = Stats {
                occupancy: Array1::zeros(g),
                first: Array2::zeros((g, d)),
                second: Array2::zeros((g, d)),
                loglike: 0.0,
            };
            let mut post = vec![0.0; g];
            for x in chunk.rows() {
                let total = scorer.frame(x, &mut post);
                stats.loglike += total;
                for (k, &p) in post.iter().enumerate() {
                    let gamma = (p - total).exp();
                    if gamma == 0.0 {
                        continue;
                    }
                    stats.occupancy[k] += gamma;
                    let mut first = stats.first.row_mut(k);
                    let mut second = stats.second.row_mut(k);
                    for j in 0..d {
                        first[j] += gamma * x[j];
                        second[j] += gamma * x[j] * x[j];
                    }
                }
            }
            stats
        })
        .collect();
    let mut total = Stats {
        occupancy: Array1::zeros(g),
        first: Array2::zeros((g, d)),
        second: Array2::zeros((g, d)),
        loglike: 0.0,
    };
    for p in parts {
        total.occupancy += &p.occupancy;
        total.first += &p.first;
        total.second += &p.second;
        total.loglike += p.loglike;
    }
    total
}

/// One maximization step. Components whose new weight falls below
/// `min_weight` keep their mean and variance.
fn maximize(gmm: &mut DiagGmm, stats: &Stats, floor: &Array1<f64>, min_weight: f64) {
    let total: f64 = stats.occupancy.sum();
    for k in 0..gmm.num_components() {
        let n = stats.occupancy[k];
        let w = n / total;
        gmm.weights[k] = w;
        if w < min_weight || n <= 0.0 {
            continue;
        }
        for j in 0..gmm.dim() {
            let mean = stats.first[[k, j]] / n;
            let var = stats.second[[k, j]] / n - mean * mean;
            gmm.means[[k, j]] = mean;
            gmm.vars[[k, j]] = var.max(floor[j]);
        }
    }
    let sum = gmm.weights.sum();
    gmm.weights /= sum;
}

fn remove_low_weight(gmm: &mut DiagGmm, min_weight: f64) -> bool {
    let keep: Vec<usize> = (0..gmm.num_components())
        .filter(|&k| gmm.weights[k] >= min_weight)
        .collect();
    if keep.len() == gmm.num_components() || keep.is_empty() {
        return false;
    }
    gmm.weights = gmm.weights.select(Axis(0), &keep);
    gmm.weights /= gmm.weights.sum();
    gmm.means = gmm.means.select(Axis(0), &keep);
    gmm.vars = gmm.vars.select(Axis(0), &keep);
    true
}

/// Splits the highest-weight component in two along its standard
/// deviation.
fn split_largest(gmm: &mut DiagGmm) {
    let k = gmm
        .weights
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(a, best), (i, &w)| if w > best { (i, w) } else { (a, best) })
        .0;
    let w = gmm.weights[k] / 2.0;
    gmm.weights[k] = w;
    let sd = gmm.vars.row(k).mapv(f64::sqrt);
    let mean = gmm.means.row(k).to_owned();
    gmm.means.row_mut(k).assign(&(&mean + &(&sd * SPLIT_OFFSET)));
    let twin = &mean - &(&sd * SPLIT_OFFSET);
    let var = gmm.vars.row(k).to_owned();
    let grow = |m: &Array2<f64>, row: &Array1<f64>| {
        concatenate(Axis(0), &[m.view(), row.view().insert_axis(Axis(0))]).unwrap()
    };
    gmm.weights = concatenate(Axis(0), &[gmm.weights.view(), ArrayView1::from(&[w])]).unwrap();
    gmm.means = grow(&gmm.means, &twin);
    gmm.vars = grow(&gmm.vars, &var);
}

/// Stacks every frame of the collection, in name order.
pub(crate) fn stack_frames<'a>(features: impl IntoIterator<Item = &'a Features>) -> Result<Array2<f64>> {
    let views: Vec<ArrayView2<'_, f64>> = features.into_iter().map(|f| f.data().view()).collect();
    if views.is_empty() {
        return Err(Error::Degenerate("no frames to train on".into()));
    }
    let d = views[0].ncols();
    if views.iter().any(|v| v.ncols() != d) {
        return Err(Error::Shape("features have different dimensions".into()));
    }
    concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Trains a UBM on every frame of `coll`. See [`train_ubm_with_trace`].
pub fn train_ubm(coll: &FeaturesCollection, opts: &UbmOptions, seed: u64) -> Result<DiagGmm> {
    let data = stack_frames(coll.iter().map(|(_, f)| f))?;
    train_ubm_on(data.view(), opts, seed).map(|(gmm, _)| gmm)
}

/// Trains a UBM and returns the log-likelihood trace of every EM
/// iteration alongside.
///
/// Initialization runs on at most `num_frames` randomly chosen frames:
/// components start around the global mean with the global variance and
/// the largest one is repeatedly split at evenly spaced iterations until
/// `num_gauss` is reached. Then `num_iters` EM passes run on all frames.
pub fn train_ubm_with_trace(
    coll: &FeaturesCollection,
    opts: &UbmOptions,
    seed: u64,
) -> Result<(DiagGmm, EmTrace)> {
    let data = stack_frames(coll.iter().map(|(_, f)| f))?;
    train_ubm_on(data.view(), opts, seed)
}

pub(crate) fn train_ubm_on(
    data: ArrayView2<'_, f64>,
    opts: &UbmOptions,
    seed: u64,
) -> Result<(DiagGmm, EmTrace)> {
    opts.validate()?;
    let (m, d) = data.dim();
    if m < opts.num_gauss {
        return Err(Error::Degenerate(format!(
            "{m} frames cannot train {} gaussians",
            opts.num_gauss
        )));
    }
    if d == 0 {
        return Err(Error::Degenerate("features have no dimension".into()));
    }
    let mean = data.mean_axis(Axis(0)).unwrap();
    let var = data.var_axis(Axis(0), 0.0);
    for j in 0..d {
        if !(var[j] > f64::EPSILON * (1.0 + mean[j] * mean[j])) {
            return Err(Error::Degenerate(format!(
                "dimension {j} has zero variance"
            )));
        }
    }
    let floor = &var * VARIANCE_FLOOR_FRACTION;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let subset: Array2<f64> = if m > opts.num_frames {
        let mut idx = sample(&mut rng, m, opts.num_frames).into_vec();
        idx.sort_unstable();
        data.select(Axis(0), &idx)
    } else {
        data.to_owned()
    };

    let g0 = opts.initial_components();
    let sd = var.mapv(f64::sqrt);
    let mut means = Array2::zeros((g0, d));
    for mut row in means.rows_mut() {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            row[j] = mean[j] + INIT_SPREAD * sd[j] * z;
        }
    }
    let mut gmm = DiagGmm {
        weights: Array1::from_elem(g0, 1.0 / g0 as f64),
        means,
        vars: Array2::from_shape_fn((g0, d), |(_, j)| var[j]),
    };

    let splits = opts.num_gauss - g0;
    let events = if splits == 0 {
        0
    } else {
        opts.num_iters_init.div_ceil(2).max(1)
    };
    let mut trace = EmTrace::default();
    let mut segment = Vec::new();
    let mut done = 0;
    if opts.num_iters_init == 0 {
        for _ in 0..splits {
            split_largest(&mut gmm);
        }
        done = splits;
    }

    let iterate = |gmm: &mut DiagGmm, data: ArrayView2<'_, f64>, segment: &mut Vec<f64>| {
        let stats = accumulate(gmm, data);
        segment.push(stats.loglike / data.nrows() as f64);
        maximize(gmm, &stats, &floor, opts.min_gaussian_weight);
        if opts.remove_low_count_gaussians && remove_low_weight(gmm, opts.min_gaussian_weight) {
            return true;
        }
        false
    };
    let close = |gmm: &DiagGmm, data: ArrayView2<'_, f64>, segment: &mut Vec<f64>, trace: &mut EmTrace| {
        if !segment.is_empty() {
            let stats = accumulate(gmm, data);
            segment.push(stats.loglike / data.nrows() as f64);
            trace.segments.push(std::mem::take(segment));
        }
    };

    for it in 0..opts.num_iters_init {
        if iterate(&mut gmm, subset.view(), &mut segment) {
            trace.segments.push(std::mem::take(&mut segment));
        }
        if it % 2 == 0 && done < splits {
            let event = it / 2;
            let target = ((event + 1) * splits).div_ceil(events).min(splits);
            if target > done {
                close(&gmm, subset.view(), &mut segment, &mut trace);
                while done < target {
                    split_largest(&mut gmm);
                    done += 1;
                }
            }
        }
    }
    while done < splits {
        split_largest(&mut gmm);
        done += 1;
    }
    close(&gmm, subset.view(), &mut segment, &mut trace);

    for _ in 0..opts.num_iters {
        if iterate(&mut gmm, data, &mut segment) {
            trace.segments.push(std::mem::take(&mut segment));
        }
    }
    close(&gmm, data, &mut segment, &mut trace);
    gmm.validate()?;
    Ok((gmm, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn collection(data: Array2<f64>) -> FeaturesCollection {
        let centers: Vec<f64> = (0..data.nrows()).map(|i| i as f64 * 0.01).collect();
        [("u".to_string(), Features::with_centers(data, &centers, json!({})).unwrap())]
            .into_iter()
            .collect()
    }

    fn naive(gmm: &DiagGmm, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for g in 0..gmm.num_components() {
            let mut p = gmm.weights()[g];
            for (j, &xj) in x.iter().enumerate() {
                let v = gmm.vars()[[g, j]];
                let diff = xj - gmm.means()[[g, j]];
                p *= (-0.5 * diff * diff / v).exp() / (2.0 * PI * v).sqrt();
            }
            total += p;
        }
        total.ln()
    }

    fn two_gaussians(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, 1), |(i, _)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if i % 2 == 0 { -4.0 + z } else { 4.0 + z }
        })
    }

    #[test]
    fn standard_normal_at_mean() {
        let gmm = DiagGmm::new(array![1.0], array![[0.5, -1.0]], array![[1.0, 1.0]]).unwrap();
        let ll = gmm_loglike(&gmm, array![0.5, -1.0].view()).unwrap();
        assert!((ll + (2.0 * PI).ln()).abs() < 1e-12);
        assert!((ll + 1.8379).abs() < 1e-4);
        let far = gmm_loglike(&gmm, array![1.5, -1.0].view()).unwrap();
        let farther = gmm_loglike(&gmm, array![2.5, 0.0].view()).unwrap();
        assert!(ll > far && far > farther);
        assert!(gmm_loglike(&gmm, array![0.0].view()).is_err());
    }

    #[test]
    fn identical_components_collapse() {
        let one = DiagGmm::new(array![1.0], array![[1.0, 2.0]], array![[0.5, 2.0]]).unwrap();
        let two = DiagGmm::new(
            array![0.5, 0.5],
            array![[1.0, 2.0], [1.0, 2.0]],
            array![[0.5, 2.0], [0.5, 2.0]],
        )
        .unwrap();
        let x = array![0.3, 4.0];
        let a = one.loglike(x.view()).unwrap();
        let b = two.loglike(x.view()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn no_underflow() {
        let gmm = DiagGmm::new(array![0.5, 0.5], array![[0.0], [1.0]], array![[1e-4], [1e-4]]).unwrap();
        let ll = gmm.loglike(array![1000.0].view()).unwrap();
        assert!(ll.is_finite() && ll < -1e9);
    }

    #[test]
    fn invalid_models() {
        assert!(DiagGmm::new(array![0.5, 0.4], array![[0.0], [1.0]], array![[1.0], [1.0]]).is_err());
        assert!(DiagGmm::new(array![1.0], array![[0.0]], array![[0.0]]).is_err());
        assert!(DiagGmm::new(array![1.0], array![[0.0, 1.0]], array![[1.0]]).is_err());
    }

    #[test]
    fn recovers_two_gaussians() {
        let coll = collection(two_gaussians(10_000, 3));
        let opts = UbmOptions {
            num_gauss: 2,
            ..Default::default()
        };
        let (gmm, trace) = train_ubm_with_trace(&coll, &opts, 7).unwrap();
        let mut means: Vec<f64> = gmm.means().column(0).to_vec();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((means[0] + 4.0).abs() < 0.1, "{means:?}");
        assert!((means[1] - 4.0).abs() < 0.1, "{means:?}");
        assert!(trace.max_relative_decrease() <= 1e-8);
        assert!((gmm.weights().sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn deterministic_and_sized() {
        let coll = collection(two_gaussians(3000, 1));
        let opts = UbmOptions {
            num_gauss: 8,
            num_iters_init: 6,
            num_frames: 1000,
            ..Default::default()
        };
        let a = train_ubm(&coll, &opts, 5).unwrap();
        let b = train_ubm(&coll, &opts, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_components(), 8);
        let c = train_ubm(&coll, &opts, 6).unwrap();
        assert_ne!(a, c);
        let floor = VARIANCE_FLOOR_FRACTION * coll.get("u").unwrap().data().var_axis(Axis(0), 0.0)[0];
        assert!(a.vars().iter().all(|&v| v >= floor));
    }

    #[test]
    fn thread_count_does_not_matter() {
        let coll = collection(two_gaussians(5000, 9));
        let opts = UbmOptions {
            num_gauss: 4,
            num_iters_init: 4,
            ..Default::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train_ubm(&coll, &opts, 2).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn degenerate_inputs() {
        let opts = UbmOptions {
            num_gauss: 2,
            ..Default::default()
        };
        let constant = collection(Array2::from_elem((100, 2), 3.0));
        assert!(matches!(train_ubm(&constant, &opts, 0), Err(Error::Degenerate(_))));
        let few = collection(array![[1.0], [2.0]]);
        let opts = UbmOptions {
            num_gauss: 3,
            ..Default::default()
        };
        assert!(matches!(train_ubm(&few, &opts, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn removes_low_weight_components() {
        let coll = collection(two_gaussians(2000, 4));
        let opts = UbmOptions {
            num_gauss: 16,
            num_iters_init: 8,
            min_gaussian_weight: 0.05,
            remove_low_count_gaussians: true,
            ..Default::default()
        };
        let (gmm, trace) = train_ubm_with_trace(&coll, &opts, 1).unwrap();
        assert!(gmm.num_components() < 16);
        assert!(gmm.weights().iter().all(|&w| w >= 0.05 - 1e-12));
        assert!(trace.max_relative_decrease() <= 1e-8);
    }

    #[test]
    fn collection_round_trip() {
        let gmm = DiagGmm::new(
            array![0.25, 0.75],
            array![[1.0, -2.0], [0.0, 3.0]],
            array![[0.5, 2.0], [1.5, 0.1]],
        )
        .unwrap();
        let coll = gmm.to_collection().unwrap();
        assert_eq!(coll.names().collect::<Vec<_>>(), ["means", "vars", "weights"]);
        let bytes = crate::serialize::encode_binary(&coll).unwrap();
        let back = DiagGmm::from_collection(&crate::serialize::decode_binary(&bytes).unwrap()).unwrap();
        assert_eq!(back, gmm);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn log_sum_exp_matches_naive(seed in 0u64..10_000, g in 1usize..5, d in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
            let raw: Vec<f64> = (0..g).map(|_| normal().abs() + 0.1).collect();
            let total: f64 = raw.iter().sum();
            let weights = Array1::from_iter(raw.iter().map(|w| w / total));
            let means = Array2::from_shape_fn((g, d), |_| normal());
            let vars = Array2::from_shape_fn((g, d), |_| normal().abs() + 0.2);
            let gmm = DiagGmm::new(weights, means, vars).unwrap();
            let x: Vec<f64> = (0..d).map(|_| normal()).collect();
            let fast = gmm.loglike(ArrayView1::from(&x)).unwrap();
            prop_assert!((fast - naive(&gmm, &x)).abs() < 1e-9);
        }

        #[test]
        fn em_is_monotone(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = Array2::from_shape_fn((600, 3), |(_, j)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * (j + 1) as f64 + if rng.random_bool(0.3) { 3.0 } else { 0.0 }
            });
            let opts = UbmOptions { num_gauss: 6, num_iters_init: 6, num_iters: 3, ..Default::default() };
            let (_, trace) = train_ubm_with_trace(&collection(data), &opts, seed).unwrap();
            prop_assert!(trace.segments.iter().map(Vec::len).sum::<usize>() >= 9);
            prop_assert!(trace.max_relative_decrease() <= 1e-8);
        }
    }

}
