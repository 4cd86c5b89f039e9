//! Spectro-temporal features: spectrogram, mel filterbank, MFCC and PLP.
//!
//! All processors share the framing front end and produce features with
//! identical frame times for identical framing options, so their outputs
//! can be concatenated. VTLN warping only enters through the mel banks.

mod mel;
mod plp;

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::audio::Audio;
use crate::error::{Error, Result};
use crate::features::Features;
use crate::framing::{extract_frames, floored_log, FrameOptions};

pub use mel::{inverse_mel, mel, vtln_warp_freq, MelBanks, MelOptions};
pub use plp::{
    equal_loudness, lpc_to_cepstrum, levinson_durbin, plp, rasta_filter, PlpOptions,
    RASTA_NUMERATOR, RASTA_POLE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramOptions {
    #[serde(flatten)]
    pub frame: FrameOptions,
    pub energy_floor: f64,
    pub raw_energy: bool,
}

impl Default for SpectrogramOptions {
    fn default() -> Self {
        Self {
            frame: FrameOptions::default(),
            energy_floor: 0.0,
            raw_energy: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterbankOptions {
    #[serde(flatten)]
    pub mel: MelOptions,
    pub use_energy: bool,
    pub energy_floor: f64,
    pub raw_energy: bool,
    pub use_log_fbank: bool,
    pub use_power: bool,
}

impl Default for FilterbankOptions {
    fn default() -> Self {
        Self {
            mel: MelOptions::default(),
            use_energy: false,
            energy_floor: 0.0,
            raw_energy: true,
            use_log_fbank: true,
            use_power: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccOptions {
    #[serde(flatten)]
    pub mel: MelOptions,
    pub num_ceps: usize,
    pub use_energy: bool,
    pub energy_floor: f64,
    pub raw_energy: bool,
    pub cepstral_lifter: f64,
}

impl Default for MfccOptions {
    fn default() -> Self {
        Self {
            mel: MelOptions::default(),
            num_ceps: 13,
            use_energy: false,
            energy_floor: 0.0,
            raw_energy: true,
            cepstral_lifter: 22.0,
        }
    }
}

/// Per-frame power spectra with frame energies.
pub(crate) struct PowerSpectra {
    /// `[m, nfft / 2 + 1]`
    pub power: Array2<f64>,
    pub raw_log_energy: Vec<f64>,
    pub windowed_log_energy: Vec<f64>,
    pub times: Vec<f64>,
    pub nfft: usize,
}

impl PowerSpectra {
    pub fn compute(audio: &Audio, opts: &FrameOptions, seed: u64) -> Result<Self> {
        let frames = extract_frames(audio, opts, seed)?;
        let m = frames.frames.nrows();
        if m == 0 {
            return Err(Error::OutOfRange(format!(
                "signal of {} samples is shorter than one frame ({} samples)",
                audio.len(),
                opts.window_size()
            )));
        }
        let nfft = opts.padded_window_size();
        let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(nfft);
        let mut power = Array2::zeros((m, nfft / 2 + 1));
        let mut windowed_log_energy = Vec::with_capacity(m);
        let mut buffer = vec![Complex::new(0.0, 0.0); nfft];
        for (frame, mut out) in frames.frames.rows().into_iter().zip(power.rows_mut()) {
            windowed_log_energy.push(floored_log(frame.dot(&frame)));
            for (b, &x) in buffer.iter_mut().zip(frame.iter()) {
                *b = Complex::new(x, 0.0);
            }
            buffer[frame.len()..].fill(Complex::new(0.0, 0.0));
            fft.process(&mut buffer);
            for (o, c) in out.iter_mut().zip(&buffer) {
                *o = c.norm_sqr();
            }
        }
        Ok(Self {
            power,
            raw_log_energy: frames.raw_log_energy,
            windowed_log_energy,
            times: frames.times,
            nfft,
        })
    }

    /// Log energy column, raw or windowed, with the absolute floor applied
    /// when `energy_floor > 0`.
    pub fn log_energy(&self, raw: bool, energy_floor: f64) -> Vec<f64> {
        let e = if raw {
            &self.raw_log_energy
        } else {
            &self.windowed_log_energy
        };
        if energy_floor > 0.0 {
            let floor = energy_floor.ln();
            e.iter().map(|&x| x.max(floor)).collect()
        } else {
            e.clone()
        }
    }

    /// Mel filter outputs, on power or magnitude spectrum.
    pub fn mel_energies(&self, banks: &MelBanks, use_power: bool) -> Array2<f64> {
        let m = self.power.nrows();
        let mut out = Array2::zeros((m, banks.num_bins()));
        let mut magnitude = Vec::new();
        for (spec, mut row) in self.power.rows().into_iter().zip(out.rows_mut()) {
            let spec = spec.as_slice().expect("contiguous rows");
            let values = if use_power {
                banks.apply(spec)
            } else {
                magnitude.clear();
                magnitude.extend(spec.iter().map(|p| p.sqrt()));
                banks.apply(&magnitude)
            };
            row.assign(&ndarray::ArrayView1::from(&values));
        }
        out
    }
}

pub(crate) fn properties(processor: &str, options: &impl Serialize, extra: Value) -> Value {
    let mut props = json!({ "processor": processor });
    if let (Value::Object(map), Ok(Value::Object(opts))) = (&mut props, serde_json::to_value(options)) {
        map.extend(opts);
        if let Value::Object(extra) = extra {
            map.extend(extra);
        }
    }
    props
}

/// Log power spectrum with the log energy as first column.
pub fn spectrogram(audio: &Audio, opts: &SpectrogramOptions, seed: u64) -> Result<Features> {
    let spectra = PowerSpectra::compute(audio, &opts.frame, seed)?;
    let energy = spectra.log_energy(opts.raw_energy, opts.energy_floor);
    let mut data = spectra.power.mapv(floored_log);
    data.column_mut(0).assign(&ndarray::ArrayView1::from(&energy));
    Features::with_centers(data, &spectra.times, properties("spectrogram", opts, json!({})))
}

pub fn filterbank(
    audio: &Audio,
    opts: &FilterbankOptions,
    vtln_warp: f64,
    seed: u64,
) -> Result<Features> {
    let spectra = PowerSpectra::compute(audio, &opts.mel.frame, seed)?;
    let banks = MelBanks::cached(&opts.mel, spectra.nfft, vtln_warp)?;
    let mut energies = spectra.mel_energies(&banks, opts.use_power);
    if opts.use_log_fbank {
        energies.mapv_inplace(floored_log);
    }
    let data = if opts.use_energy {
        let energy = spectra.log_energy(opts.raw_energy, opts.energy_floor);
        let col = Array2::from_shape_vec((energy.len(), 1), energy).expect("one column");
        ndarray::concatenate(ndarray::Axis(1), &[col.view(), energies.view()])
            .expect("same row count")
    } else {
        energies
    };
    Features::with_centers(
        data,
        &spectra.times,
        properties("filterbank", opts, json!({ "vtln_warp": vtln_warp })),
    )
}

/// Orthonormal DCT-II matrix restricted to its first `num_ceps` rows.
pub(crate) fn dct_matrix(num_ceps: usize, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((num_ceps, n), |(k, j)| {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        scale * (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos()
    })
}

/// Cepstral liftering coefficients `1 + Q/2 sin(pi i / Q)`; all ones when
/// `Q == 0`.
pub fn lifter_coefficients(num_ceps: usize, lifter: f64) -> Vec<f64> {
    (0..num_ceps)
        .map(|i| {
            if lifter == 0.0 {
                1.0
            } else {
                1.0 + 0.5 * lifter * (PI * i as f64 / lifter).sin()
            }
        })
        .collect()
}

pub fn mfcc(audio: &Audio, opts: &MfccOptions, vtln_warp: f64, seed: u64) -> Result<Features> {
    if opts.num_ceps == 0 || opts.num_ceps > opts.mel.num_bins {
        return Err(Error::param(
            "num_ceps",
            format!("must be in [1, num_bins = {}]", opts.mel.num_bins),
        ));
    }
    let spectra = PowerSpectra::compute(audio, &opts.mel.frame, seed)?;
    let banks = MelBanks::cached(&opts.mel, spectra.nfft, vtln_warp)?;
    let log_mel = spectra.mel_energies(&banks, true).mapv(floored_log);
    let dct = dct_matrix(opts.num_ceps, banks.num_bins());
    let mut data = log_mel.dot(&dct.t());
    let lifter = lifter_coefficients(opts.num_ceps, opts.cepstral_lifter);
    for mut row in data.rows_mut() {
        for (c, l) in row.iter_mut().zip(&lifter) {
            *c *= l;
        }
    }
    if opts.use_energy {
        let energy = spectra.log_energy(opts.raw_energy, opts.energy_floor);
        data.column_mut(0).assign(&ndarray::ArrayView1::from(&energy));
    }
    Features::with_centers(
        data,
        &spectra.times,
        properties("mfcc", opts, json!({ "vtln_warp": vtln_warp })),
    )
}
