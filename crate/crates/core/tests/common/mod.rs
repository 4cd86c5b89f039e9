#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use speech_features::audio::{write_wav, WavEncoding};
use speech_features::{Audio, Utterance, Utterances};

pub const RATE: u32 = 16000;

/// Sum of sines, `(frequency, seconds)` segments with continuous phase.
pub fn tones(segments: &[(f64, f64)], amplitude: f64) -> Audio {
    let rate = RATE as f64;
    let mut samples = Vec::new();
    let mut phase = 0.0f64;
    for &(freq, seconds) in segments {
        for _ in 0..(seconds * rate).round() as usize {
            samples.push(amplitude * phase.sin());
            phase += 2.0 * PI * freq / rate;
        }
    }
    Audio::new(samples, RATE).unwrap()
}

/// Formant frequencies (Hz) of a few vowels.
pub const VOWELS: [[f64; 4]; 6] = [
    [730.0, 1090.0, 2440.0, 3400.0],
    [270.0, 2290.0, 3010.0, 3500.0],
    [300.0, 870.0, 2240.0, 3400.0],
    [530.0, 1840.0, 2480.0, 3500.0],
    [570.0, 840.0, 2410.0, 3400.0],
    [660.0, 1720.0, 2410.0, 3400.0],
];

/// Second-order resonator with unit gain at DC.
fn resonate(x: &[f64], freq: f64, bandwidth: f64, rate: f64) -> Vec<f64> {
    let r = (-PI * bandwidth / rate).exp();
    let a1 = 2.0 * r * (2.0 * PI * freq / rate).cos();
    let a2 = -r * r;
    let gain = 1.0 - a1 - a2;
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let y1 = if n >= 1 { y[n - 1] } else { 0.0 };
        let y2 = if n >= 2 { y[n - 2] } else { 0.0 };
        y[n] = gain * x[n] + a1 * y1 + a2 * y2;
    }
    y
}

/// Vowel sequence from a cascade formant synthesizer driven by a pulse
/// train with slight jitter and aspiration noise. Formants are scaled by
/// `formant_scale`.
pub fn vowels(sequence: &[usize], seconds_each: f64, f0: f64, formant_scale: f64, seed: u64) -> Vec<f64> {
    let rate = RATE as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut out = Vec::new();
    for (k, &v) in sequence.iter().enumerate() {
        let n = (seconds_each * rate) as usize;
        let pitch = f0 * (1.0 + 0.03 * ((k as f64) * 1.7).sin());
        let mut source = vec![0.0; n];
        let mut next = 0.0;
        for (i, s) in source.iter_mut().enumerate() {
            if i as f64 >= next {
                *s = 1.0;
                next += rate / pitch * (1.0 + 0.01 * noise.sample(&mut rng) / 0.02);
            }
            *s += noise.sample(&mut rng);
        }
        let mut y = source;
        for (j, &f) in VOWELS[v].iter().enumerate() {
            let bw = 60.0 + 40.0 * j as f64;
            y = resonate(&y, f * formant_scale, bw * formant_scale, rate);
        }
        out.extend(y);
    }
    let peak = out.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    out.iter().map(|x| 0.5 * x / peak).collect()
}

/// A copy of `samples` played faster by `factor`: read as sampled at
/// `factor * RATE`, then resampled to `RATE`. All frequencies scale by
/// `factor`.
pub fn speed_up(samples: &[f64], factor: f64) -> Audio {
    let declared = (RATE as f64 * factor).round() as u32;
    Audio::new(samples.to_vec(), declared)
        .unwrap()
        .resample(RATE)
        .unwrap()
}

pub fn write(dir: &Path, name: &str, audio: &Audio) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.wav"));
    write_wav(audio, &path, WavEncoding::Pcm16).unwrap();
    path
}

/// Twelve utterances: speaker `a` with natural formants and speaker `b`
/// whose utterances are copies of `a`'s with every frequency raised by 10%.
pub fn vtln_corpus(dir: &Path) -> Utterances {
    let mut items = Vec::new();
    for i in 0..6 {
        let seq = [i % 6, (i + 2) % 6, (i + 4) % 6];
        let a = vowels(&seq, 0.35, 110.0, 1.0, i as u64);
        let path = write(dir, &format!("a{i}"), &Audio::new(a.clone(), RATE).unwrap());
        items.push(Utterance::new(format!("a{i}"), path).with_speaker("a"));
        let path = write(dir, &format!("b{i}"), &speed_up(&a, 1.1));
        items.push(Utterance::new(format!("b{i}"), path).with_speaker("b"));
    }
    Utterances::new(items).unwrap()
}

/// Six utterances of speaker `a` only.
pub fn single_speaker_corpus(dir: &Path) -> Utterances {
    let items = (0..6)
        .map(|i| {
            let seq = [i % 6, (i + 1) % 6, (i + 3) % 6];
            let a = vowels(&seq, 0.35, 115.0, 1.0, 50 + i as u64);
            let path = write(dir, &format!("s{i}"), &Audio::new(a, RATE).unwrap());
            Utterance::new(format!("s{i}"), path).with_speaker("s")
        })
        .collect();
    Utterances::new(items).unwrap()
}
