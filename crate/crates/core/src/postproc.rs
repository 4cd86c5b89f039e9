//! Post-processors applied to computed features: regression deltas,
//! cepstral mean and variance normalization, and an energy based VAD.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Features, FeaturesCollection};

/// Variance floor under which a channel is considered constant.
pub const CMVN_VARIANCE_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeltaOptions {
    pub order: usize,
    pub window: usize,
}

impl Default for DeltaOptions {
    fn default() -> Self {
        Self {
            order: 2,
            window: 2,
        }
    }
}

impl DeltaOptions {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.order) {
            return Err(Error::param("order", "must be in 1..=3"));
        }
        if self.window == 0 {
            return Err(Error::param("window", "must be at least 1"));
        }
        Ok(())
    }
}

/// Regression delta of every column of `x`:
/// `d_t = sum_k k (c_{t+k} - c_{t-k}) / (2 sum_k k^2)`, with the first and
/// last rows replicated past the edges.
pub fn regression_delta(x: ArrayView2<'_, f64>, window: usize) -> Array2<f64> {
    let m = x.nrows();
    let mut out = Array2::zeros(x.raw_dim());
    if m == 0 || window == 0 {
        return out;
    }
    let norm = 2.0 * (1..=window).map(|k| (k * k) as f64).sum::<f64>();
    let last = m as i64 - 1;
    for t in 0..m {
        let mut row = out.row_mut(t);
        for k in 1..=window {
            let ahead = (t as i64 + k as i64).min(last) as usize;
            let behind = (t as i64 - k as i64).max(0) as usize;
            row.scaled_add(k as f64 / norm, &x.row(ahead));
            row.scaled_add(-(k as f64) / norm, &x.row(behind));
        }
    }
    out
}

/// Appends `order` successive deltas to the features: `n` input columns
/// give `n * (order + 1)` output columns.
pub fn delta(f: &Features, opts: &DeltaOptions) -> Result<Features> {
    opts.validate()?;
    let mut blocks = vec![f.data().clone()];
    for _ in 0..opts.order {
        let next = regression_delta(blocks.last().unwrap().view(), opts.window);
        blocks.push(next);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let data = concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let mut out = f.with_data(data, f.properties().clone())?;
    out.set_property("delta", serde_json::to_value(opts).unwrap_or_default());
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmvnScope {
    Frame,
    #[default]
    Utterance,
    Speaker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmvnOptions {
    pub by: CmvnScope,
    pub norm_vars: bool,
}

impl Default for CmvnOptions {
    fn default() -> Self {
        Self {
            by: CmvnScope::Utterance,
            norm_vars: true,
        }
    }
}

/// Per-channel count, mean and sum of squared deviations. Two sets of
/// statistics merge exactly, in any order, into the statistics of the
/// pooled frames.
#[derive(Debug, Clone, PartialEq)]
pub struct CmvnStats {
    count: usize,
    mean: Array1<f64>,
    m2: Array1<f64>,
}

impl CmvnStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: Array1::zeros(dim),
            m2: Array1::zeros(dim),
        }
    }

    /// Statistics of the rows of `data`.
    pub fn from_data(data: ArrayView2<'_, f64>) -> Self {
        let count = data.nrows();
        if count == 0 {
            return Self::new(data.ncols());
        }
        let mean = data.mean_axis(Axis(0)).unwrap();
        let centered = &data - &mean;
        let m2 = (&centered * &centered).sum_axis(Axis(0));
        Self { count, mean, m2 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    /// Population variance of each channel.
    pub fn variance(&self) -> Array1<f64> {
        if self.count == 0 {
            return Array1::zeros(self.dim());
        }
        &self.m2 / self.count as f64
    }

    pub fn merge(&self, other: &CmvnStats) -> Result<CmvnStats> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "cannot merge statistics of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        if other.count == 0 {
            return Ok(self.clone());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        let mean = &self.mean + &(&delta * (nb / n));
        let m2 = &self.m2 + &other.m2 + &(&delta * &delta * (na * nb / n));
        Ok(CmvnStats {
            count: self.count + other.count,
            mean,
            m2,
        })
    }

    /// Normalizes `data` with these statistics.
    pub fn apply(&self, data: &Array2<f64>, norm_vars: bool) -> Result<Array2<f64>> {
        if data.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "statistics have dimension {} but data has {} columns",
                self.dim(),
                data.ncols()
            )));
        }
        let mut out = data - &self.mean;
        if norm_vars {
            let scale = self
                .variance()
                .mapv(|v| 1.0 / v.max(CMVN_VARIANCE_FLOOR).sqrt());
            out *= &scale;
        }
        Ok(out)
    }
}

/// Normalizes each row of `data` across its channels.
fn normalize_frames(data: &Array2<f64>, norm_vars: bool) -> Array2<f64> {
    let mut out = data.clone();
    for mut row in out.rows_mut() {
        let n = row.len().max(1) as f64;
        let mean = row.sum() / n;
        row.mapv_inplace(|x| x - mean);
        if norm_vars {
            let var = row.dot(&row) / n;
            let scale = 1.0 / var.max(CMVN_VARIANCE_FLOOR).sqrt();
            row.mapv_inplace(|x| x * scale);
        }
    }
    out
}

fn with_cmvn(f: &Features, data: Array2<f64>, opts: &CmvnOptions) -> Result<Features> {
    let mut out = f.with_data(data, f.properties().clone())?;
    out.set_property("cmvn", serde_json::to_value(opts).unwrap_or_default());
    Ok(out)
}

/// Cepstral mean and variance normalization over the scope selected in
/// `opts`. `speakers` maps utterance names to speakers and is only read in
/// speaker mode, where it must cover every utterance.
pub fn cmvn_apply(
    coll: &FeaturesCollection,
    speakers: &BTreeMap<String, String>,
    opts: &CmvnOptions,
) -> Result<FeaturesCollection> {
    let items: Vec<(&String, &Features)> = coll.iter().collect();
    let normalized: Vec<Result<(String, Features)>> = match opts.by {
        CmvnScope::Frame => items
            .par_iter()
            .map(|(name, f)| {
                let data = normalize_frames(f.data(), opts.norm_vars);
                Ok(((*name).clone(), with_cmvn(f, data, opts)?))
            })
            .collect(),
        CmvnScope::Utterance => items
            .par_iter()
            .map(|(name, f)| {
                let stats = CmvnStats::from_data(f.data().view());
                let data = stats.apply(f.data(), opts.norm_vars)?;
                Ok(((*name).clone(), with_cmvn(f, data, opts)?))
            })
            .collect(),
        CmvnScope::Speaker => {
            let mut groups: BTreeMap<&str, Vec<&Features>> = BTreeMap::new();
            for (name, f) in &items {
                let speaker = speakers
                    .get(*name)
                    .ok_or_else(|| Error::MissingSpeaker((*name).clone()))?;
                groups.entry(speaker.as_str()).or_default().push(f);
            }
            let stats: BTreeMap<&str, CmvnStats> = groups
                .par_iter()
                .map(|(speaker, feats)| {
                    let partial: Vec<CmvnStats> = feats
                        .par_iter()
                        .map(|f| CmvnStats::from_data(f.data().view()))
                        .collect();
                    let mut total = CmvnStats::new(feats[0].ndims());
                    for s in &partial {
                        total = total.merge(s)?;
                    }
                    Ok((*speaker, total))
                })
                .collect::<Result<_>>()?;
            items
                .par_iter()
                .map(|(name, f)| {
                    let s = &stats[speakers[*name].as_str()];
                    let data = s.apply(f.data(), opts.norm_vars)?;
                    Ok(((*name).clone(), with_cmvn(f, data, opts)?))
                })
                .collect()
        }
    };
    normalized.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VadOptions {
    pub energy_threshold: f64,
    pub energy_mean_scale: f64,
}

impl Default for VadOptions {
    fn default() -> Self {
        Self {
            energy_threshold: 5.0,
            energy_mean_scale: 0.5,
        }
    }
}

/// Frame `t` is voiced iff its log energy exceeds
/// `energy_threshold + energy_mean_scale * mean(log_energy)`.
pub fn vad(log_energy: &[f64], opts: &VadOptions) -> Result<Vec<bool>> {
    if !(opts.energy_mean_scale >= 0.0) {
        return Err(Error::param("energy_mean_scale", "must be non-negative"));
    }
    if log_energy.is_empty() {
        return Ok(Vec::new());
    }
    let mean = log_energy.iter().sum::<f64>() / log_energy.len() as f64;
    let threshold = opts.energy_threshold + opts.energy_mean_scale * mean;
    Ok(log_energy.iter().map(|&e| e > threshold).collect())
}
