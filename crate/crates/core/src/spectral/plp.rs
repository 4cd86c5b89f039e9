//! Perceptual linear prediction, with optional RASTA filtering.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{lifter_coefficients, properties, MelBanks, MelOptions, PowerSpectra};
use crate::audio::Audio;
use crate::error::{Error, Result};
use crate::features::Features;
use crate::framing::floored_log;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlpOptions {
    #[serde(flatten)]
    pub mel: MelOptions,
    pub rasta: bool,
    pub lpc_order: usize,
    pub num_ceps: usize,
    pub use_energy: bool,
    pub energy_floor: f64,
    pub raw_energy: bool,
    pub compress_factor: f64,
    pub cepstral_lifter: f64,
    pub cepstral_scale: f64,
}

impl Default for PlpOptions {
    fn default() -> Self {
        Self {
            mel: MelOptions::default(),
            rasta: false,
            lpc_order: 12,
            num_ceps: 13,
            use_energy: false,
            energy_floor: 0.0,
            raw_energy: true,
            compress_factor: 1.0 / 3.0,
            cepstral_lifter: 22.0,
            cepstral_scale: 1.0,
        }
    }
}

/// RASTA band-pass numerator, applied to the current frame and the four
/// previous ones.
pub const RASTA_NUMERATOR: [f64; 5] = [0.2, 0.1, 0.0, -0.1, -0.2];
pub const RASTA_POLE: f64 = 0.94;

/// Filters one channel trajectory with
/// `H(z) = 0.1 (2 + z^-1 - z^-3 - 2 z^-4) / (1 - 0.94 z^-1)`.
///
/// The first four outputs are zero; the recursion starts once the FIR part
/// is filled, with no feedback from earlier outputs.
pub fn rasta_filter(x: &[f64]) -> Vec<f64> {
    let order = RASTA_NUMERATOR.len() - 1;
    let mut y = vec![0.0; x.len()];
    let mut prev = 0.0;
    for t in order..x.len() {
        let fir: f64 = RASTA_NUMERATOR
            .iter()
            .enumerate()
            .map(|(k, b)| b * x[t - k])
            .sum();
        prev = fir + RASTA_POLE * prev;
        y[t] = prev;
    }
    y
}

/// Equal-loudness weight of frequency `f` in Hz.
pub fn equal_loudness(f: f64) -> f64 {
    let fsq = f * f;
    let r = fsq / (fsq + 1.6e5);
    r * r * (fsq + 1.44e6) / (fsq + 9.61e6)
}

/// Solves the normal equations for autocorrelation `r[0..=p]`.
///
/// Returns predictor coefficients `a[1..=p]` (so that `x[t] ~ sum a_i
/// x[t-i]`) and the final prediction error, or `None` when the prediction
/// error becomes non-positive.
pub fn levinson_durbin(r: &[f64]) -> Option<(Vec<f64>, f64)> {
    let p = r.len().checked_sub(1)?;
    let mut error = r[0];
    if !(error > 0.0) {
        return None;
    }
    let mut a = vec![0.0; p];
    let mut tmp = vec![0.0; p];
    for i in 0..p {
        let mut acc = r[i + 1];
        for j in 0..i {
            acc -= a[j] * r[i - j];
        }
        let k = acc / error;
        a[i] = k;
        for j in 0..i {
            tmp[j] = a[j] - k * a[i - 1 - j];
        }
        a[..i].copy_from_slice(&tmp[..i]);
        error *= 1.0 - k * k;
        if !(error > 0.0) {
            return None;
        }
    }
    Some((a, error))
}

/// Cepstrum `c[1..=n]` of the all-pole model with predictor coefficients
/// `a`: `c_n = a_n + sum_{k=1}^{n-1} (k / n) c_k a_{n-k}`.
pub fn lpc_to_cepstrum(a: &[f64], n: usize) -> Vec<f64> {
    let p = a.len();
    let coef = |i: usize| if i >= 1 && i <= p { a[i - 1] } else { 0.0 };
    let mut c = vec![0.0; n + 1];
    for m in 1..=n {
        let mut acc = coef(m);
        for k in 1..m {
            acc += (k as f64 / m as f64) * c[k] * coef(m - k);
        }
        c[m] = acc;
    }
    c.split_off(1)
}

/// Cosine basis turning an auditory spectrum of `dim` points into
/// `num_lags` autocorrelation lags.
fn idft_bases(num_lags: usize, dim: usize) -> Array2<f64> {
    let fac = PI / (dim - 1) as f64;
    Array2::from_shape_fn((num_lags, dim), |(i, j)| {
        let v = (fac * (i * j) as f64).cos();
        if j == 0 || j == dim - 1 {
            0.5 * v
        } else {
            v
        }
    })
}

pub fn plp(audio: &Audio, opts: &PlpOptions, vtln_warp: f64, seed: u64) -> Result<Features> {
    if opts.lpc_order == 0 {
        return Err(Error::param("lpc_order", "must be at least 1"));
    }
    if opts.num_ceps == 0 || opts.num_ceps > opts.lpc_order + 1 {
        return Err(Error::param(
            "num_ceps",
            format!("must be in [1, lpc_order + 1 = {}]", opts.lpc_order + 1),
        ));
    }
    if !(opts.compress_factor > 0.0) {
        return Err(Error::param("compress_factor", "must be positive"));
    }
    let spectra = PowerSpectra::compute(audio, &opts.mel.frame, seed)?;
    let banks = MelBanks::cached(&opts.mel, spectra.nfft, vtln_warp)?;
    let num_bins = banks.num_bins();
    let loudness: Vec<f64> = banks.center_freqs().iter().map(|&f| equal_loudness(f)).collect();

    let mut auditory = spectra.mel_energies(&banks, true);
    for mut row in auditory.rows_mut() {
        for (x, w) in row.iter_mut().zip(&loudness) {
            *x *= w;
        }
    }
    if opts.rasta {
        for mut channel in auditory.columns_mut() {
            let log: Vec<f64> = channel.iter().map(|&x| floored_log(x)).collect();
            for (x, y) in channel.iter_mut().zip(rasta_filter(&log)) {
                *x = y.exp();
            }
        }
    }

    let bases = idft_bases(opts.lpc_order + 1, num_bins + 2);
    let lifter = lifter_coefficients(opts.num_ceps, opts.cepstral_lifter);
    let energy = opts
        .use_energy
        .then(|| spectra.log_energy(opts.raw_energy, opts.energy_floor));
    let m = auditory.nrows();
    let mut data = Array2::zeros((m, opts.num_ceps));
    let mut padded = vec![0.0; num_bins + 2];
    for (frame, (row, mut out)) in auditory.rows().into_iter().zip(data.rows_mut()).enumerate() {
        for (p, x) in padded[1..=num_bins].iter_mut().zip(row.iter()) {
            *p = x.powf(opts.compress_factor);
        }
        padded[0] = padded[1];
        padded[num_bins + 1] = padded[num_bins];
        let autocorr = bases.dot(&ndarray::ArrayView1::from(&padded));
        let (lpc, error) = levinson_durbin(autocorr.as_slice().unwrap()).ok_or_else(|| {
            Error::Numeric {
                frame,
                reason: "non-positive prediction error in Levinson-Durbin recursion".into(),
            }
        })?;
        let cepstrum = lpc_to_cepstrum(&lpc, opts.num_ceps - 1);
        out[0] = error.ln();
        for (o, c) in out.iter_mut().skip(1).zip(&cepstrum) {
            *o = *c;
        }
        for (o, l) in out.iter_mut().zip(&lifter) {
            *o *= l * opts.cepstral_scale;
        }
        if let Some(e) = &energy {
            out[0] = e[frame];
        }
    }
    Features::with_centers(
        data,
        &spectra.times,
        properties("plp", opts, json!({ "vtln_warp": vtln_warp })),
    )
}
