//! Shared front end of the spectral processors: split audio into frames,
//! dither, remove DC, compute raw energy, pre-emphasize and window.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::Audio;
use crate::error::{Error, Result};

/// Scale applied to normalized samples before framing, so that dither and
/// energies live in the 16-bit integer domain.
pub const INT16_SCALE: f64 = 32768.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowType {
    Hamming,
    Hanning,
    Povey,
    Rectangular,
    Blackman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameOptions {
    pub sample_rate: u32,
    pub frame_shift: f64,
    pub frame_length: f64,
    pub dither: f64,
    pub preemph_coeff: f64,
    pub remove_dc_offset: bool,
    pub window_type: WindowType,
    pub snip_edges: bool,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            frame_shift: 0.01,
            frame_length: 0.025,
            dither: 0.1,
            preemph_coeff: 0.97,
            remove_dc_offset: true,
            window_type: WindowType::Povey,
            snip_edges: true,
        }
    }
}

impl FrameOptions {
    /// Frame length in samples.
    pub fn window_size(&self) -> usize {
        (self.frame_length * self.sample_rate as f64).round() as usize
    }

    /// Frame shift in samples.
    pub fn window_shift(&self) -> usize {
        (self.frame_shift * self.sample_rate as f64).round() as usize
    }

    /// Smallest power of two holding a frame.
    pub fn padded_window_size(&self) -> usize {
        self.window_size().next_power_of_two()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::param("sample_rate", "must be positive"));
        }
        if !(self.frame_shift > 0.0 && self.frame_shift <= self.frame_length) {
            return Err(Error::param(
                "frame_shift",
                "expected 0 < frame_shift <= frame_length",
            ));
        }
        if self.window_size() < 2 || self.window_shift() == 0 {
            return Err(Error::param(
                "frame_length",
                "frames must hold at least 2 samples",
            ));
        }
        if !(self.dither >= 0.0) {
            return Err(Error::param("dither", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.preemph_coeff) {
            return Err(Error::param("preemph_coeff", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Number of frames for a signal of `num_samples` samples.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        let (len, shift) = (self.window_size(), self.window_shift());
        if self.snip_edges {
            if num_samples < len {
                0
            } else {
                1 + (num_samples - len) / shift
            }
        } else {
            (num_samples + shift / 2) / shift
        }
    }

    /// Index of the first sample of frame `i`; negative when the frame
    /// starts before the signal (no snip mode).
    pub fn first_sample(&self, i: usize) -> i64 {
        let (len, shift) = (self.window_size() as i64, self.window_shift() as i64);
        let start = i as i64 * shift;
        if self.snip_edges {
            start
        } else {
            start + shift / 2 - len / 2
        }
    }

    /// Frame center times in seconds.
    pub fn frame_centers(&self, num_frames: usize) -> Vec<f64> {
        let half = self.window_size() as f64 / 2.0;
        let rate = self.sample_rate as f64;
        (0..num_frames)
            .map(|i| (self.first_sample(i) as f64 + half) / rate)
            .collect()
    }
}

/// Window coefficients over `n in 0..length`, denominators `length - 1`.
pub fn window_function(window: WindowType, length: usize) -> Result<Vec<f64>> {
    if length < 2 {
        return Err(Error::param("length", "window needs at least 2 points"));
    }
    let a = 2.0 * PI / (length - 1) as f64;
    Ok((0..length)
        .map(|n| {
            let x = a * n as f64;
            match window {
                WindowType::Hanning => 0.5 - 0.5 * x.cos(),
                WindowType::Hamming => 0.54 - 0.46 * x.cos(),
                WindowType::Povey => (0.5 - 0.5 * x.cos()).powf(0.85),
                WindowType::Rectangular => 1.0,
                WindowType::Blackman => 0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos(),
            }
        })
        .collect())
}

/// Windowed frames and their per-frame statistics.
#[derive(Debug, Clone)]
pub struct Frames {
    /// `[m, L]` windowed frames.
    pub frames: Array2<f64>,
    /// Log energy of each frame after dither and DC removal, before
    /// pre-emphasis and windowing.
    pub raw_log_energy: Vec<f64>,
    /// Frame center times in seconds.
    pub times: Vec<f64>,
}

/// Natural log floored at the smallest positive normal double.
pub fn floored_log(x: f64) -> f64 {
    x.max(f64::MIN_POSITIVE).ln()
}

/// Splits audio into processed frames. Dither noise is drawn from a
/// generator seeded with `seed`.
pub fn extract_frames(audio: &Audio, opts: &FrameOptions, seed: u64) -> Result<Frames> {
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
    let samples = audio.samples();
    let n = samples.len() as i64;
    let len = opts.window_size();
    let m = opts.num_frames(samples.len());
    let window = window_function(opts.window_type, len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut frames = Array2::zeros((m, len));
    let mut raw_log_energy = Vec::with_capacity(m);
    for (i, mut frame) in frames.rows_mut().into_iter().enumerate() {
        let start = opts.first_sample(i);
        for (k, x) in frame.iter_mut().enumerate() {
            let mut s = start + k as i64;
            // mirror at the edges (only reached without snip_edges)
            if s < 0 {
                s = -s - 1;
            }
            if s >= n {
                s = 2 * n - 1 - s;
            }
            *x = samples[s.clamp(0, n - 1) as usize] * INT16_SCALE;
        }
        if opts.dither > 0.0 {
            for x in frame.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *x += opts.dither * g;
            }
        }
        if opts.remove_dc_offset {
            let mean = frame.sum() / len as f64;
            frame.mapv_inplace(|x| x - mean);
        }
        raw_log_energy.push(floored_log(frame.dot(&frame)));
        if opts.preemph_coeff != 0.0 {
            for k in (1..len).rev() {
                frame[k] -= opts.preemph_coeff * frame[k - 1];
            }
            frame[0] -= opts.preemph_coeff * frame[0];
        }
        for (x, w) in frame.iter_mut().zip(&window) {
            *x *= w;
        }
    }
    Ok(Frames {
        frames,
        raw_log_energy,
        times: opts.frame_centers(m),
    })
}
