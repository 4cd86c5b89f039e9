//! Mono audio buffers: WAV input/output, segmentation and band-limited
//! resampling.
//!
//! Samples are stored as `f64` normalized to `[-1, 1]`. Integer PCM is
//! scaled by the magnitude of the most negative value of its type (2^15
//! for 16-bit), so that a 16-bit write/read round trip is bit-exact.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A mono sample buffer with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Audio {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::param("sample_rate", "must be positive"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::param(
                "samples",
                format!("non-finite value at index {i}"),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Returns the samples in `[floor(onset * rate), floor(offset * rate))`.
    pub fn segment(&self, onset: f64, offset: f64) -> Result<Audio> {
        let duration = self.duration();
        if !(onset >= 0.0 && onset < offset && offset <= duration) {
            return Err(Error::OutOfRange(format!(
                "segment [{onset}, {offset}] outside of [0, {duration}]"
            )));
        }
        let rate = self.sample_rate as f64;
        let start = (onset * rate).floor() as usize;
        let stop = ((offset * rate).floor() as usize).min(self.samples.len());
        Ok(Audio {
            samples: self.samples[start..stop].to_vec(),
            sample_rate: self.sample_rate,
        })
    }

    /// Band-limited resampling to `target_rate`.
    ///
    /// Uses a Hann-windowed sinc kernel spanning 64 zero crossings of the
    /// anti-aliasing cutoff, placed at 95% of the lower Nyquist frequency.
    /// The output holds `round(n * target / source)` samples.
    pub fn resample(&self, target_rate: u32) -> Result<Audio> {
        if target_rate == 0 {
            return Err(Error::param("target_rate", "must be positive"));
        }
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        let cutoff = 0.5 * self.sample_rate.min(target_rate) as f64 * RESAMPLE_ROLLOFF;
        let kernel = SincKernel::new(cutoff, RESAMPLE_ZERO_CROSSINGS as f64 / (2.0 * cutoff));
        let out_len = (self.samples.len() as f64 * target_rate as f64 / self.sample_rate as f64)
            .round() as usize;
        let samples = kernel.resample(&self.samples, self.sample_rate, target_rate, out_len);
        Ok(Audio {
            samples,
            sample_rate: target_rate,
        })
    }
}

const RESAMPLE_ROLLOFF: f64 = 0.95;
const RESAMPLE_ZERO_CROSSINGS: usize = 64;
const MAX_POLYPHASE_PHASES: u64 = 4096;

/// Low-pass interpolation kernel `2fc sinc(2fc t)` tapered by a Hann window
/// of half-width `half_width` seconds.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SincKernel {
    cutoff: f64,
    half_width: f64,
}

impl SincKernel {
    pub(crate) fn new(cutoff: f64, half_width: f64) -> Self {
        Self { cutoff, half_width }
    }

    /// Continuous kernel value at time offset `t` seconds, scaled for an
    /// input sampled at `input_rate`.
    fn weight(&self, t: f64, input_rate: f64) -> f64 {
        if t.abs() >= self.half_width {
            return 0.0;
        }
        let window = 0.5 * (1.0 + (PI * t / self.half_width).cos());
        let arg = 2.0 * self.cutoff * t;
        let sinc = if arg == 0.0 {
            1.0
        } else {
            (PI * arg).sin() / (PI * arg)
        };
        2.0 * self.cutoff / input_rate * sinc * window
    }

    /// Evaluates the filtered input at output times `j / output_rate` for
    /// `j in 0..out_len`; samples outside the input are zero.
    pub(crate) fn resample(
        &self,
        input: &[f64],
        input_rate: u32,
        output_rate: u32,
        out_len: usize,
    ) -> Vec<f64> {
        let g = gcd(input_rate as u64, output_rate as u64);
        let phases = output_rate as u64 / g;
        let step = input_rate as u64 / g;
        let in_rate = input_rate as f64;
        let reach = (self.half_width * in_rate).ceil() as i64 + 1;

        let table: Option<Vec<Vec<f64>>> = (phases <= MAX_POLYPHASE_PHASES).then(|| {
            (0..phases)
                .map(|phase| {
                    let frac = phase as f64 / phases as f64;
                    (-reach..=reach)
                        .map(|d| self.weight((frac - d as f64) / in_rate, in_rate))
                        .collect()
                })
                .collect()
        });

        let n = input.len() as i64;
        (0..out_len as u64)
            .map(|j| {
                let pos = j * step;
                let base = (pos / phases) as i64;
                let phase = pos % phases;
                let mut acc = 0.0;
                for (k, d) in (-reach..=reach).enumerate() {
                    let idx = base + d;
                    if idx < 0 || idx >= n {
                        continue;
                    }
                    let w = match &table {
                        Some(t) => t[phase as usize][k],
                        None => {
                            let frac = phase as f64 / phases as f64;
                            self.weight((frac - d as f64) / in_rate, in_rate)
                        }
                    };
                    acc += w * input[idx as usize];
                }
                acc
            })
            .collect()
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Sample encodings supported by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Reads a mono RIFF/WAVE file (8/16/32-bit integer PCM or 32-bit float).
pub fn load_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Decodes an in-memory WAV file.
pub fn decode_wav(bytes: &[u8]) -> Result<Audio> {
    let malformed = |m: &str| Error::MalformedHeader(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE signature"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start.saturating_add(size);
        match id {
            b"fmt " => {
                if size < 16 || body_end > bytes.len() {
                    return Err(malformed("truncated fmt chunk"));
                }
                let body = &bytes[body_start..body_end];
                let mut format = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes([body[14], body[15]]);
                if format == WAVE_FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(malformed("truncated extensible fmt chunk"));
                    }
                    // first two bytes of the sub-format GUID carry the format code
                    format = u16::from_le_bytes([body[24], body[25]]);
                }
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                // tolerate a data chunk whose declared size overruns the file
                let end = body_end.min(bytes.len());
                data = Some(&bytes[body_start..end]);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end.saturating_add(size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;
    if channels == 0 {
        return Err(malformed("zero channels"));
    }
    if rate == 0 {
        return Err(malformed("zero sample rate"));
    }
    if channels != 1 {
        return Err(Error::ChannelCount(channels));
    }

    let samples: Vec<f64> = match (format, bits) {
        (WAVE_FORMAT_PCM, 8) => data.iter().map(|&b| (b as f64 - 128.0) / 128.0).collect(),
        (WAVE_FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (WAVE_FORMAT_PCM, 32) => data
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64 / 2147483648.0)
            .collect(),
        (WAVE_FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        (format, bits) => return Err(Error::UnsupportedEncoding { format, bits }),
    };
    Audio::new(samples, rate).map_err(|e| Error::MalformedHeader(e.to_string()))
}

/// Writes a mono WAV file. 16-bit output clips to the representable range.
pub fn write_wav(audio: &Audio, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(audio, encoding)).map_err(|e| Error::io(path, e))
}

pub fn encode_wav(audio: &Audio, encoding: WavEncoding) -> Vec<u8> {
    let (format, bits) = match encoding {
        WavEncoding::Pcm16 => (WAVE_FORMAT_PCM, 16u16),
        WavEncoding::Float32 => (WAVE_FORMAT_IEEE_FLOAT, 32u16),
    };
    let block = bits as u32 / 8;
    let data_len = audio.len() as u32 * block;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * block).to_le_bytes());
    out.extend_from_slice(&(block as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in &audio.samples {
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
            WavEncoding::Float32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
        }
    }
    out
}
