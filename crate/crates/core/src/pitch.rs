//! NCCF pitch tracking with Viterbi smoothing, and the post-processing
//! turning raw estimates into probability of voicing, normalized log pitch
//! and delta pitch features.
//!
//! The audio is low-passed and downsampled, a normalized cross-correlation
//! is computed per frame over a range of integer lags, interpolated onto a
//! log-spaced lag grid, and a Viterbi search picks a smooth lag path. Every
//! frame receives an estimate: there is no hard unvoiced decision.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audio::{Audio, SincKernel};
use crate::error::{Error, Result};
use crate::features::Features;
use crate::postproc::regression_delta;

/// Half-width, in lag samples, of the sinc interpolating the NCCF.
const NCCF_INTERP_HALF_WIDTH: f64 = 5.0;
/// Extra integer lags computed on each side of the searched range.
const LAG_MARGIN: usize = 5;
/// Frames in the centered window of the log pitch normalization.
pub const NORMALIZATION_WINDOW: usize = 151;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchOptions {
    pub sample_rate: u32,
    pub frame_shift: f64,
    pub frame_length: f64,
    pub min_f0: f64,
    pub max_f0: f64,
    pub soft_min_f0: f64,
    pub penalty_factor: f64,
    pub lowpass_cutoff: f64,
    pub resample_freq: f64,
    pub delta_pitch: f64,
    pub nccf_ballast: f64,
}

impl Default for PitchOptions {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            frame_shift: 0.01,
            frame_length: 0.025,
            min_f0: 50.0,
            max_f0: 400.0,
            soft_min_f0: 10.0,
            penalty_factor: 0.1,
            lowpass_cutoff: 1000.0,
            resample_freq: 4000.0,
            delta_pitch: 0.005,
            nccf_ballast: 7000.0,
        }
    }
}

impl PitchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::param("sample_rate", "must be positive"));
        }
        if !(self.frame_shift > 0.0 && self.frame_length > 0.0) {
            return Err(Error::param("frame_shift", "frame shift and length must be positive"));
        }
        if !(self.min_f0 > 0.0 && self.min_f0 < self.max_f0) {
            return Err(Error::param("min_f0", "expected 0 < min_f0 < max_f0"));
        }
        if !(self.max_f0 < self.lowpass_cutoff) {
            return Err(Error::param("max_f0", "must be below lowpass_cutoff"));
        }
        if !(self.lowpass_cutoff <= self.resample_freq / 2.0) {
            return Err(Error::param(
                "lowpass_cutoff",
                "must not exceed half of resample_freq",
            ));
        }
        if !(self.resample_freq <= self.sample_rate as f64) {
            return Err(Error::param("resample_freq", "must not exceed sample_rate"));
        }
        if !(self.delta_pitch > 0.0) {
            return Err(Error::param("delta_pitch", "must be positive"));
        }
        if !(self.soft_min_f0 >= 0.0 && self.penalty_factor >= 0.0 && self.nccf_ballast >= 0.0) {
            return Err(Error::param(
                "penalty_factor",
                "soft_min_f0, penalty_factor and nccf_ballast must be non-negative",
            ));
        }
        if 1.0 / self.min_f0 > self.frame_length {
            return Err(Error::param(
                "min_f0",
                "the longest lag 1/min_f0 exceeds the frame length",
            ));
        }
        Ok(())
    }

    fn samples(&self, seconds: f64, rate: f64) -> usize {
        (seconds * rate).round() as usize
    }

    /// Number of frames for `num_samples` input samples, edges snipped.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        let rate = self.sample_rate as f64;
        let len = self.samples(self.frame_length, rate);
        let shift = self.samples(self.frame_shift, rate).max(1);
        if num_samples < len {
            0
        } else {
            1 + (num_samples - len) / shift
        }
    }

    /// Log-spaced lag grid in seconds, from `1/max_f0` to `1/min_f0` with
    /// relative step `delta_pitch`; the last lag is clamped to `1/min_f0`.
    pub fn lag_grid(&self) -> Vec<f64> {
        let (min_lag, max_lag) = (1.0 / self.max_f0, 1.0 / self.min_f0);
        let mut lags = Vec::new();
        let mut lag = min_lag;
        while lag < max_lag {
            lags.push(lag);
            lag *= 1.0 + self.delta_pitch;
        }
        if lags.last().is_some_and(|&l| max_lag / l - 1.0 < 1e-3 * self.delta_pitch) {
            lags.pop();
        }
        lags.push(max_lag);
        lags
    }
}

/// Probability of voicing from an NCCF value.
pub fn nccf_to_pov(c: f64) -> f64 {
    let c = c.clamp(-1.0, 1.0).abs();
    let l = -5.2 + 5.4 * (7.5 * (c - 1.0)).exp() + 4.8 * c - 2.0 * (-10.0 * c).exp()
        + 4.2 * (20.0 * (c - 1.0)).exp();
    1.0 / (1.0 + (-l).exp())
}

/// Low-pass filtered copy of `samples` at `opts.resample_freq`.
fn downsample(samples: &[f64], opts: &PitchOptions) -> Vec<f64> {
    let rate = opts.sample_rate as f64;
    let mut taps = (2.0 * opts.resample_freq / opts.lowpass_cutoff).ceil() as usize;
    if taps % 2 == 0 {
        taps += 1;
    }
    let half_width = ((taps - 1) / 2).max(1) as f64 / opts.resample_freq;
    let kernel = SincKernel::new(opts.lowpass_cutoff, half_width);
    let out_rate = opts.resample_freq.round() as u32;
    let out_len = (samples.len() as f64 * opts.resample_freq / rate).round() as usize;
    kernel.resample(samples, opts.sample_rate, out_rate, out_len)
}

/// Integer lags spanned by the NCCF computation.
fn integer_lags(opts: &PitchOptions) -> (usize, usize) {
    let first = ((opts.resample_freq / opts.max_f0).floor() as usize).saturating_sub(LAG_MARGIN);
    let last = (opts.resample_freq / opts.min_f0).ceil() as usize + LAG_MARGIN;
    (first.max(1), last)
}

/// Per-frame NCCF over integer lags, without and with ballast.
struct Nccf {
    first_lag: usize,
    raw: Array2<f64>,
    ballasted: Array2<f64>,
}

fn compute_nccf(signal: &[f64], num_frames: usize, opts: &PitchOptions) -> Nccf {
    let rate = opts.resample_freq;
    let frame_len = opts.samples(opts.frame_length, rate);
    let shift = opts.samples(opts.frame_shift, rate).max(1);
    let (first_lag, last_lag) = integer_lags(opts);
    let num_lags = last_lag - first_lag + 1;
    let full = frame_len + last_lag;

    let mean_square = if signal.is_empty() {
        0.0
    } else {
        signal.iter().map(|x| x * x).sum::<f64>() / signal.len() as f64
    };
    let ballast = opts.nccf_ballast * (mean_square * frame_len as f64).powi(2);

    let mut raw = Array2::zeros((num_frames, num_lags));
    let mut ballasted = Array2::zeros((num_frames, num_lags));
    let mut window = vec![0.0; full];
    for i in 0..num_frames {
        let start = i * shift;
        for (k, w) in window.iter_mut().enumerate() {
            *w = signal.get(start + k).copied().unwrap_or(0.0);
        }
        let mean = window.iter().sum::<f64>() / full as f64;
        window.iter_mut().for_each(|w| *w -= mean);

        let head = &window[..frame_len];
        let e1: f64 = head.iter().map(|x| x * x).sum();
        for (j, lag) in (first_lag..=last_lag).enumerate() {
            let tail = &window[lag..lag + frame_len];
            let inner: f64 = head.iter().zip(tail).map(|(a, b)| a * b).sum();
            let e2: f64 = tail.iter().map(|x| x * x).sum();
            let denom = e1 * e2;
            raw[[i, j]] = if denom > 0.0 { inner / denom.sqrt() } else { 0.0 };
            let denom = denom + ballast;
            ballasted[[i, j]] = if denom > 0.0 { inner / denom.sqrt() } else { 0.0 };
        }
    }
    Nccf {
        first_lag,
        raw,
        ballasted,
    }
}

/// Interpolation weights taking integer-lag values to fractional lags
/// (in samples): one row per target lag over the integer lags.
fn interpolation_matrix(targets: &[f64], first_lag: usize, num_lags: usize) -> Array2<f64> {
    let mut w = Array2::zeros((targets.len(), num_lags));
    for (r, &t) in targets.iter().enumerate() {
        for j in 0..num_lags {
            let d = t - (first_lag + j) as f64;
            if d.abs() >= NCCF_INTERP_HALF_WIDTH {
                continue;
            }
            let window = 0.5 * (1.0 + (PI * d / NCCF_INTERP_HALF_WIDTH).cos());
            let sinc = if d == 0.0 { 1.0 } else { (PI * d).sin() / (PI * d) };
            w[[r, j]] = sinc * window;
        }
    }
    w
}

/// Minimum-cost lag path. `local[[t, i]]` is the cost of lag `i` at frame
/// `t`, and moving between lags costs `penalty * ln(l_i / l_j)^2`.
fn viterbi(local: &Array2<f64>, lags: &[f64], penalty: f64) -> Vec<usize> {
    let (m, n) = local.dim();
    if m == 0 {
        return Vec::new();
    }
    let log_lags: Vec<f64> = lags.iter().map(|l| l.ln()).collect();
    let mut transition = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let d = log_lags[i] - log_lags[j];
            transition[[i, j]] = penalty * d * d;
        }
    }
    let mut cost: Vec<f64> = local.row(0).to_vec();
    let mut back = Array2::<usize>::zeros((m, n));
    let mut next = vec![0.0; n];
    for t in 1..m {
        for i in 0..n {
            let row = transition.row(i);
            let (mut best, mut arg) = (f64::INFINITY, 0);
            for j in 0..n {
                let c = cost[j] + row[j];
                if c < best {
                    best = c;
                    arg = j;
                }
            }
            next[i] = best + local[[t, i]];
            back[[t, i]] = arg;
        }
        std::mem::swap(&mut cost, &mut next);
    }
    let mut state = cost
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(a, best), (i, &c)| if c < best { (i, c) } else { (a, best) })
        .0;
    let mut path = vec![0; m];
    for t in (0..m).rev() {
        path[t] = state;
        state = back[[t, state]];
    }
    path
}

/// Raw pitch track: columns `[nccf, f0]` with frame center times.
pub fn estimate_pitch(audio: &Audio, opts: &PitchOptions) -> Result<Features> {
    opts.validate()?;
    if audio.sample_rate() != opts.sample_rate {
        return Err(Error::param(
            "sample_rate",
            format!(
                "audio is sampled at {} Hz but options expect {} Hz",
                audio.sample_rate(),
                opts.sample_rate
            ),
        ));
    }
    let m = opts.num_frames(audio.len());
    if m == 0 {
        return Err(Error::param(
            "audio",
            format!("{} samples is shorter than one frame", audio.len()),
        ));
    }
    let signal = downsample(audio.samples(), opts);
    let nccf = compute_nccf(&signal, m, opts);

    let lags = opts.lag_grid();
    let lag_samples: Vec<f64> = lags.iter().map(|l| l * opts.resample_freq).collect();
    let interp = interpolation_matrix(&lag_samples, nccf.first_lag, nccf.raw.ncols());
    let raw = nccf.raw.dot(&interp.t());
    let ballasted = nccf.ballasted.dot(&interp.t());

    let soft = Array1::from_iter(lags.iter().map(|l| 1.0 - opts.soft_min_f0 * l));
    let local = (&ballasted * &soft).mapv(|x| 1.0 - x);
    let path = viterbi(&local, &lags, opts.penalty_factor);

    let mut data = Array2::zeros((m, 2));
    for (t, &state) in path.iter().enumerate() {
        data[[t, 0]] = raw[[t, state]].clamp(-1.0, 1.0);
        data[[t, 1]] = (1.0 / lags[state]).clamp(opts.min_f0, opts.max_f0);
    }
    let rate = opts.sample_rate as f64;
    let half = opts.samples(opts.frame_length, rate) as f64 / 2.0;
    let shift = opts.samples(opts.frame_shift, rate) as f64;
    let centers: Vec<f64> = (0..m).map(|i| (i as f64 * shift + half) / rate).collect();
    let mut props = json!({ "processor": "pitch" });
    if let (serde_json::Value::Object(map), Ok(serde_json::Value::Object(o))) =
        (&mut props, serde_json::to_value(opts))
    {
        map.extend(o);
    }
    Features::with_centers(data, &centers, props)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostPitchOptions {
    pub pitch_scale: f64,
    pub pov_scale: f64,
    pub delta_pitch_scale: f64,
    pub delta_pitch_noise_stddev: f64,
    pub delta_window: usize,
    pub delay: usize,
}

impl Default for PostPitchOptions {
    fn default() -> Self {
        Self {
            pitch_scale: 2.0,
            pov_scale: 2.0,
            delta_pitch_scale: 10.0,
            delta_pitch_noise_stddev: 0.005,
            delta_window: 2,
            delay: 0,
        }
    }
}

impl PostPitchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.delta_window == 0 {
            return Err(Error::param("delta_window", "must be at least 1"));
        }
        if !(self.delta_pitch_noise_stddev >= 0.0) {
            return Err(Error::param(
                "delta_pitch_noise_stddev",
                "must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Warped probability of voicing, decreasing in `p`.
pub fn pov_feature(p: f64) -> f64 {
    2.0 * (1.0001 - p).powf(0.15) - 1.0
}

/// Turns a raw `[nccf, f0]` track into `[pov, normalized log pitch,
/// delta log pitch]`. The delta noise is drawn from a generator seeded
/// with `seed`.
pub fn postprocess_pitch(raw: &Features, opts: &PostPitchOptions, seed: u64) -> Result<Features> {
    opts.validate()?;
    if raw.ndims() != 2 {
        return Err(Error::Shape(format!(
            "raw pitch must have 2 columns [nccf, f0], found {}",
            raw.ndims()
        )));
    }
    let m = raw.nframes();
    let nccf = raw.data().column(0);
    let f0 = raw.data().column(1);
    if f0.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::param("f0", "raw pitch must be positive"));
    }
    let pov: Vec<f64> = nccf.iter().map(|&c| nccf_to_pov(c)).collect();
    let log_f0: Array1<f64> = f0.mapv(f64::ln);

    let half = NORMALIZATION_WINDOW / 2;
    let weights: Vec<f64> = pov.iter().map(|p| p * p).collect();
    let normalized: Vec<f64> = (0..m)
        .map(|t| {
            let (lo, hi) = (t.saturating_sub(half), (t + half + 1).min(m));
            let (mut num, mut den) = (0.0, 0.0);
            for k in lo..hi {
                num += weights[k] * log_f0[k];
                den += weights[k];
            }
            let mean = if den > 0.0 { num / den } else { log_f0[t] };
            log_f0[t] - mean
        })
        .collect();

    let column = log_f0.view().insert_axis(ndarray::Axis(1));
    let delta = regression_delta(column, opts.delta_window);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, opts.delta_pitch_noise_stddev)
        .map_err(|e| Error::param("delta_pitch_noise_stddev", e.to_string()))?;

    let mut data = Array2::zeros((m, 3));
    for t in 0..m {
        let n = if opts.delta_pitch_noise_stddev > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        data[[t, 0]] = opts.pov_scale * pov_feature(pov[t]);
        data[[t, 1]] = opts.pitch_scale * normalized[t];
        data[[t, 2]] = opts.delta_pitch_scale * (delta[[t, 0]] + n);
    }
    if opts.delay > 0 {
        let shifted = Array2::from_shape_fn((m, 3), |(t, j)| data[[t.saturating_sub(opts.delay), j]]);
        data = shifted;
    }
    let mut props = json!({ "processor": "pitch_postprocessing" });
    if let (serde_json::Value::Object(map), Ok(serde_json::Value::Object(o))) =
        (&mut props, serde_json::to_value(opts))
    {
        map.extend(o);
    }
    props["pitch"] = raw.properties().clone();
    raw.with_data(data, props)
}
