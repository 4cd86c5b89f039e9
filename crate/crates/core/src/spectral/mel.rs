//! Mel scale, VTLN frequency warping and triangular mel filter banks.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framing::FrameOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelOptions {
    #[serde(flatten)]
    pub frame: FrameOptions,
    pub num_bins: usize,
    pub low_freq: f64,
    /// Values `<= 0` are relative to the Nyquist frequency.
    pub high_freq: f64,
    /// Values `<= 0` are relative to the Nyquist frequency.
    pub vtln_low: f64,
    /// Values `<= 0` are relative to the Nyquist frequency.
    pub vtln_high: f64,
}

impl Default for MelOptions {
    fn default() -> Self {
        Self {
            frame: FrameOptions::default(),
            num_bins: 23,
            low_freq: 20.0,
            high_freq: 0.0,
            vtln_low: 100.0,
            vtln_high: -500.0,
        }
    }
}

impl MelOptions {
    pub fn nyquist(&self) -> f64 {
        0.5 * self.frame.sample_rate as f64
    }

    fn relative_to_nyquist(&self, f: f64) -> f64 {
        if f <= 0.0 {
            self.nyquist() + f
        } else {
            f
        }
    }

    pub fn effective_high_freq(&self) -> f64 {
        self.relative_to_nyquist(self.high_freq)
    }

    pub fn effective_vtln_low(&self) -> f64 {
        self.relative_to_nyquist(self.vtln_low)
    }

    pub fn effective_vtln_high(&self) -> f64 {
        self.relative_to_nyquist(self.vtln_high)
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        let high = self.effective_high_freq();
        if !(self.low_freq >= 0.0 && self.low_freq < high && high <= self.nyquist()) {
            return Err(Error::param(
                "low_freq/high_freq",
                format!(
                    "expected 0 <= low_freq < high_freq <= {}, got {} and {high}",
                    self.nyquist(),
                    self.low_freq
                ),
            ));
        }
        if self.num_bins < 3 {
            return Err(Error::param("num_bins", "at least 3 mel bins are required"));
        }
        if self.effective_vtln_low() >= self.effective_vtln_high() {
            return Err(Error::param(
                "vtln_low/vtln_high",
                "vtln_low must be below vtln_high",
            ));
        }
        Ok(())
    }
}

/// Mel scale, `1127 ln(1 + f / 700)`.
pub fn mel(f: f64) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(Error::OutOfRange(format!("negative frequency {f}")));
    }
    Ok(mel_scale(f))
}

pub fn inverse_mel(m: f64) -> f64 {
    700.0 * ((m / 1127.0).exp() - 1.0)
}

fn mel_scale(f: f64) -> f64 {
    1127.0 * (1.0 + f / 700.0).ln()
}

/// Piecewise-linear VTLN frequency warping.
///
/// The middle segment maps `f` to `f / warp`. Below `l = vtln_low *
/// max(1, warp)` and above `h = vtln_high * min(1, warp)` the map is linear
/// and pins `low_freq` and `high_freq` to themselves. Frequencies outside
/// `[low_freq, high_freq]` are returned unchanged.
pub fn vtln_warp_freq(
    f: f64,
    warp: f64,
    low_freq: f64,
    high_freq: f64,
    vtln_low: f64,
    vtln_high: f64,
) -> Result<f64> {
    let l = vtln_low * warp.max(1.0);
    let h = vtln_high * warp.min(1.0);
    if !(l < h && low_freq < l && h < high_freq) {
        return Err(Error::param(
            "vtln_low/vtln_high",
            format!(
                "warp {warp}: inflection points {l} and {h} must satisfy {low_freq} < l < h < {high_freq}"
            ),
        ));
    }
    if f < low_freq || f > high_freq {
        return Ok(f);
    }
    let scale = 1.0 / warp;
    Ok(if f < l {
        let slope = (scale * l - low_freq) / (l - low_freq);
        low_freq + slope * (f - low_freq)
    } else if f < h {
        scale * f
    } else {
        let slope = (high_freq - scale * h) / (high_freq - h);
        high_freq + slope * (f - high_freq)
    })
}

/// Triangular filters over the bins of a power spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct MelBanks {
    /// `(first FFT bin, weights)` for each filter.
    bins: Vec<(usize, Vec<f64>)>,
    center_freqs: Vec<f64>,
    left_mels: Vec<f64>,
    center_mels: Vec<f64>,
}

impl MelBanks {
    /// Builds `num_bins` filters with edges equally spaced on the mel scale
    /// between `low_freq` and `high_freq`. With `vtln_warp != 1` the three
    /// defining frequencies of each triangle are warped first.
    pub fn new(opts: &MelOptions, nfft: usize, vtln_warp: f64) -> Result<Self> {
        opts.validate()?;
        if !nfft.is_power_of_two() || nfft < opts.frame.window_size() {
            return Err(Error::param(
                "nfft",
                format!("{nfft} is not a power of two holding a frame"),
            ));
        }
        if !(vtln_warp > 0.0) {
            return Err(Error::param("vtln_warp", "must be positive"));
        }
        let low = opts.low_freq;
        let high = opts.effective_high_freq();
        let (vtln_low, vtln_high) = (opts.effective_vtln_low(), opts.effective_vtln_high());
        let mel_low = mel_scale(low);
        let mel_high = mel_scale(high);
        let delta = (mel_high - mel_low) / (opts.num_bins + 1) as f64;
        let bin_width = opts.frame.sample_rate as f64 / nfft as f64;

        let warp_mel = |m: f64| -> Result<f64> {
            if vtln_warp == 1.0 {
                return Ok(m);
            }
            let f = vtln_warp_freq(inverse_mel(m), vtln_warp, low, high, vtln_low, vtln_high)?;
            Ok(mel_scale(f))
        };

        let mut bins = Vec::with_capacity(opts.num_bins);
        let mut center_freqs = Vec::with_capacity(opts.num_bins);
        let mut left_mels = Vec::with_capacity(opts.num_bins);
        let mut center_mels = Vec::with_capacity(opts.num_bins);
        for b in 0..opts.num_bins {
            let left = warp_mel(mel_low + b as f64 * delta)?;
            let center = warp_mel(mel_low + (b + 1) as f64 * delta)?;
            let right = warp_mel(mel_low + (b + 2) as f64 * delta)?;
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..=nfft / 2 {
                let m = mel_scale(k as f64 * bin_width);
                if m > left && m < right {
                    let w = if m <= center {
                        (m - left) / (center - left)
                    } else {
                        (right - m) / (right - center)
                    };
                    first.get_or_insert(k);
                    weights.push(w);
                }
            }
            let first = first.ok_or_else(|| {
                Error::param(
                    "num_bins",
                    format!("mel bin {b} is empty, try fewer bins or a larger FFT"),
                )
            })?;
            bins.push((first, weights));
            center_freqs.push(inverse_mel(center));
            left_mels.push(left);
            center_mels.push(center);
        }
        Ok(Self {
            bins,
            center_freqs,
            left_mels,
            center_mels,
        })
    }

    /// Shared, lazily built banks for `(opts, nfft, warp)`.
    pub fn cached(opts: &MelOptions, nfft: usize, vtln_warp: f64) -> Result<Arc<MelBanks>> {
        type Cache = RwLock<HashMap<[u64; 8], Arc<MelBanks>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let key = [
            opts.frame.sample_rate as u64 | ((opts.num_bins as u64) << 32),
            nfft as u64,
            opts.low_freq.to_bits(),
            opts.high_freq.to_bits(),
            opts.vtln_low.to_bits(),
            opts.vtln_high.to_bits(),
            vtln_warp.to_bits(),
            opts.frame.frame_length.to_bits(),
        ];
        if let Some(b) = cache.read().unwrap().get(&key) {
            return Ok(Arc::clone(b));
        }
        let banks = Arc::new(MelBanks::new(opts, nfft, vtln_warp)?);
        cache.write().unwrap().insert(key, Arc::clone(&banks));
        Ok(banks)
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[(usize, Vec<f64>)] {
        &self.bins
    }

    /// Center frequency of each filter in Hz.
    pub fn center_freqs(&self) -> &[f64] {
        &self.center_freqs
    }

    /// Weighted sums of `spectrum` for each filter.
    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        self.bins
            .iter()
            .map(|(first, w)| {
                w.iter()
                    .zip(&spectrum[*first..*first + w.len()])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_values() {
        assert_eq!(mel(0.0).unwrap(), 0.0);
        let expected = 1127.0 * (1.0f64 + 10.0 / 7.0).ln();
        assert!((mel(1000.0).unwrap() - 999.99).abs() < 0.01);
        assert!((mel(1000.0).unwrap() - expected).abs() < 1e-12);
        assert!(mel(-1.0).is_err());
        for f in [0.0, 1.0, 440.0, 8000.0, 22050.0] {
            let back = inverse_mel(mel(f).unwrap());
            assert!((back - f).abs() <= 1e-9 * f.max(1.0));
        }
    }

    #[test]
    fn warp_identity_and_endpoints() {
        for f in [20.0, 100.0, 1234.5, 7500.0, 8000.0] {
            assert_eq!(vtln_warp_freq(f, 1.0, 20.0, 8000.0, 100.0, 7500.0).unwrap(), f);
        }
        for w in [0.85, 0.93, 1.07, 1.15] {
            let lo = vtln_warp_freq(20.0, w, 20.0, 8000.0, 100.0, 7500.0).unwrap();
            let hi = vtln_warp_freq(8000.0, w, 20.0, 8000.0, 100.0, 7500.0).unwrap();
            assert!((lo - 20.0).abs() < 1e-9 && (hi - 8000.0).abs() < 1e-9);
            let mid = vtln_warp_freq(1000.0, w, 20.0, 8000.0, 100.0, 7500.0).unwrap();
            assert!((mid - 1000.0 / w).abs() < 1e-9);
        }
        assert!(vtln_warp_freq(100.0, 1.0, 20.0, 8000.0, 7000.0, 6000.0).is_err());
    }

    #[test]
    fn warp_monotone_and_continuous() {
        for step in 0..=30 {
            let w = 0.85 + 0.01 * step as f64;
            let mut prev = f64::NEG_INFINITY;
            let mut f = 20.0;
            while f <= 8000.0 {
                let y = vtln_warp_freq(f, w, 20.0, 8000.0, 100.0, 7500.0).unwrap();
                assert!(y > prev, "warp {w} not increasing at {f}");
                // continuity: a 0.5 Hz step never moves more than 0.5 Hz / 0.85 * slope bound
                if prev.is_finite() {
                    assert!(y - prev < 2.0);
                }
                prev = y;
                f += 0.5;
            }
        }
    }

    #[test]
    fn centers_equally_spaced() {
        let opts = MelOptions::default();
        let banks = MelBanks::new(&opts, 512, 1.0).unwrap();
        assert_eq!(banks.num_bins(), 23);
        let mels: Vec<f64> = banks.center_freqs().iter().map(|&f| mel_scale(f)).collect();
        let step = mels[1] - mels[0];
        for w in mels.windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-9);
        }
        assert!((banks.center_mels[0] - banks.left_mels[0] - step).abs() < 1e-9);
        for (_, w) in banks.bins() {
            assert!(w.iter().sum::<f64>() > 0.0);
            assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
            let peak = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert!(w[..=peak].windows(2).all(|p| p[0] <= p[1]));
            assert!(w[peak..].windows(2).all(|p| p[0] >= p[1]));
        }
    }

    #[test]
    fn warped_centers_move_up() {
        let opts = MelOptions::default();
        let unwarped = MelBanks::new(&opts, 512, 1.0).unwrap();
        let warped = MelBanks::new(&opts, 512, 0.9).unwrap();
        // linear region: l = 100 Hz, h = 7500 * 0.9 = 6750 Hz
        let mut differ = false;
        for (a, b) in warped.center_freqs().iter().zip(unwarped.center_freqs()) {
            if *b > 100.0 && *b < 6750.0 {
                assert!(a >= b);
                assert!((a - b / 0.9).abs() < 1e-6);
                differ = true;
            }
        }
        assert!(differ);
    }

    #[test]
    fn invalid_options() {
        let mut opts = MelOptions {
            num_bins: 2,
            ..Default::default()
        };
        assert!(MelBanks::new(&opts, 512, 1.0).is_err());
        opts.num_bins = 23;
        opts.low_freq = 9000.0;
        assert!(MelBanks::new(&opts, 512, 1.0).is_err());
        assert!(MelBanks::new(&MelOptions::default(), 256, 1.0).is_err());
        assert!(MelBanks::new(&MelOptions::default(), 500, 1.0).is_err());
    }

    #[test]
    fn cache_returns_same_banks() {
        let opts = MelOptions::default();
        let a = MelBanks::cached(&opts, 512, 1.03).unwrap();
        let b = MelBanks::cached(&opts, 512, 1.03).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(*a, MelBanks::new(&opts, 512, 1.03).unwrap());
    }
}
