//! Per-speaker VTLN warp estimation by likelihood grid search against a
//! self-trained UBM.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gmm::{stack_frames, train_ubm_on, DiagGmm, UbmOptions};
use crate::error::{Error, Result};
use crate::features::Features;
use crate::utterances::{Utterance, Utterances};

/// Feature normalization applied to a speaker before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormType {
    /// Shift the speaker's mean onto the corpus mean.
    #[default]
    Offset,
    None,
    /// Shift the mean and scale every channel to the corpus variance.
    Diag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VtlnOptions {
    pub ubm: UbmOptions,
    pub num_iters: usize,
    pub min_warp: f64,
    pub max_warp: f64,
    pub warp_step: f64,
    pub logdet_scale: f64,
    pub norm_type: NormType,
}

impl Default for VtlnOptions {
    fn default() -> Self {
        Self {
            ubm: UbmOptions::default(),
            num_iters: 15,
            min_warp: 0.85,
            max_warp: 1.15,
            warp_step: 0.01,
            logdet_scale: 0.0,
            norm_type: NormType::Offset,
        }
    }
}

impl VtlnOptions {
    pub fn validate(&self) -> Result<()> {
        self.ubm.validate()?;
        if !(self.min_warp > 0.0 && self.min_warp < 1.0 && self.max_warp > 1.0) {
            return Err(Error::param("min_warp", "expected 0 < min_warp < 1 < max_warp"));
        }
        if !(self.warp_step > 0.0) {
            return Err(Error::param("warp_step", "must be positive"));
        }
        Ok(())
    }

    /// Candidate warps `min_warp + k * warp_step` up to `max_warp`.
    pub fn warps(&self) -> Vec<f64> {
        let n = ((self.max_warp - self.min_warp) / self.warp_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|k| round_warp(self.min_warp + k as f64 * self.warp_step))
            .collect()
    }
}

/// Rounds away the accumulation error of the grid so that `1.0` and other
/// decimal warps are exact.
fn round_warp(w: f64) -> f64 {
    (w * 1e10).round() / 1e10
}

/// Index of the best warp: highest score, then closest to 1, then
/// smallest.
pub fn select_warp(warps: &[f64], scores: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..warps.len() {
        let better = match scores[i].partial_cmp(&scores[best]) {
            Some(std::cmp::Ordering::Greater) => true,
            Some(std::cmp::Ordering::Equal) => {
                let (a, b) = ((warps[i] - 1.0).abs(), (warps[best] - 1.0).abs());
                a < b || (a == b && warps[i] < warps[best])
            }
            _ => scores[best].is_nan() && !scores[i].is_nan(),
        };
        if better {
            best = i;
        }
    }
    best
}

fn mean_var(data: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    (
        data.mean_axis(Axis(0)).unwrap(),
        data.var_axis(Axis(0), 0.0),
    )
}

/// Total log-likelihood of a speaker's frames after normalization toward
/// the corpus statistics.
fn score(
    gmm: &DiagGmm,
    frames: &Array2<f64>,
    corpus: &(Array1<f64>, Array1<f64>),
    opts: &VtlnOptions,
) -> Result<f64> {
    let (mean, var) = mean_var(frames);
    match opts.norm_type {
        NormType::None => gmm.total_loglike(frames.view()),
        NormType::Offset => {
            let shifted = frames - &mean + &corpus.0;
            gmm.total_loglike(shifted.view())
        }
        NormType::Diag => {
            let ratio: Array1<f64> = corpus
                .1
                .iter()
                .zip(&var)
                .map(|(c, s)| (c.max(f64::MIN_POSITIVE) / s.max(f64::MIN_POSITIVE)).sqrt())
                .collect();
            let scaled = (frames - &mean) * &ratio + &corpus.0;
            let logdet: f64 = ratio.iter().map(|r| r.ln()).sum();
            Ok(gmm.total_loglike(scaled.view())?
                + opts.logdet_scale * logdet * frames.nrows() as f64)
        }
    }
}

/// Outcome of [`estimate_warps`].
#[derive(Debug, Clone, PartialEq)]
pub struct WarpEstimate {
    /// Selected warp of every speaker.
    pub warps: BTreeMap<String, f64>,
    /// UBM trained on the features at the selected warps.
    pub ubm: DiagGmm,
    /// Number of warp selection rounds run.
    pub iterations: usize,
}

/// Estimates one VTLN warp per speaker.
///
/// `extract` computes the features of an utterance at a given warp. A UBM
/// is trained on the unwarped features, then each round scores every
/// speaker at every warp of the grid, keeps the best warp and retrains the
/// UBM on the features at the selected warps. Rounds stop after
/// `num_iters` or once the warps no longer change.
pub fn estimate_warps<F>(
    utterances: &Utterances,
    extract: F,
    opts: &VtlnOptions,
    seed: u64,
) -> Result<WarpEstimate>
where
    F: Fn(&Utterance, f64) -> Result<Features> + Sync,
{
    opts.validate()?;
    if !utterances.has_speakers() {
        return Err(Error::Config("VTLN requires utterances with speakers".into()));
    }
    let warps = opts.warps();
    let mut all_warps = warps.clone();
    if !warps.contains(&1.0) {
        all_warps.push(1.0);
    }
    let utts: Vec<&Utterance> = utterances.iter().collect();

    // features[u][k]: utterance u at all_warps[k]
    let jobs: Vec<(usize, usize)> = (0..utts.len())
        .flat_map(|u| (0..all_warps.len()).map(move |k| (u, k)))
        .collect();
    let computed: Vec<Features> = jobs
        .par_iter()
        .map(|&(u, k)| {
            extract(utts[u], all_warps[k]).map_err(|e| Error::Utterance {
                name: utts[u].name.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let features: Vec<&[Features]> = computed.chunks(all_warps.len()).collect();
    let unit = all_warps.iter().position(|&w| w == 1.0).unwrap();

    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (u, utt) in utts.iter().enumerate() {
        let speaker = utt
            .speaker
            .as_deref()
            .ok_or_else(|| Error::MissingSpeaker(utt.name.clone()))?;
        by_speaker.entry(speaker).or_default().push(u);
    }
    let speaker_frames: BTreeMap<&str, Vec<Array2<f64>>> = by_speaker
        .iter()
        .map(|(s, us)| {
            let per_warp = (0..warps.len())
                .map(|k| stack_frames(us.iter().map(|&u| &features[u][k])))
                .collect::<Result<Vec<_>>>()?;
            if per_warp[0].nrows() == 0 {
                return Err(Error::Degenerate(format!("speaker {s} has no frames")));
            }
            Ok((*s, per_warp))
        })
        .collect::<Result<_>>()?;

    let mut selected: BTreeMap<&str, usize> = by_speaker.keys().map(|s| (*s, usize::MAX)).collect();
    let training = |choice: &BTreeMap<&str, usize>| -> Result<Array2<f64>> {
        stack_frames(utts.iter().enumerate().map(|(u, utt)| {
            let k = match choice.get(utt.speaker.as_deref().unwrap_or_default()) {
                Some(&k) if k != usize::MAX => k,
                _ => unit,
            };
            &features[u][k]
        }))
    };
    let mut data = training(&selected)?;
    let (mut ubm, _) = train_ubm_on(data.view(), &opts.ubm, seed)?;
    let mut iterations = 0;
    for _ in 0..opts.num_iters {
        iterations += 1;
        let corpus = mean_var(&data);
        let choice: BTreeMap<&str, usize> = speaker_frames
            .par_iter()
            .map(|(s, per_warp)| {
                let scores = per_warp
                    .iter()
                    .map(|frames| score(&ubm, frames, &corpus, opts))
                    .collect::<Result<Vec<f64>>>()?;
                Ok((*s, select_warp(&warps, &scores)))
            })
            .collect::<Result<_>>()?;
        let unchanged = choice.iter().all(|(s, &k)| {
            let prev = selected[s];
            prev == k || (prev == usize::MAX && warps[k] == 1.0)
        });
        selected = choice;
        if unchanged {
            break;
        }
        data = training(&selected)?;
        ubm = train_ubm_on(data.view(), &opts.ubm, seed)?.0;
    }
    let warps = selected
        .iter()
        .map(|(s, &k)| {
            let w = if k == usize::MAX { 1.0 } else { warps[k] };
            (s.to_string(), w)
        })
        .collect();
    Ok(WarpEstimate {
        warps,
        ubm,
        iterations,
    })
}

/// Warp map as `<speaker> <warp>` lines.
pub fn format_warps(warps: &BTreeMap<String, f64>) -> String {
    let mut out = String::new();
    for (speaker, warp) in warps {
        let _ = writeln!(out, "{speaker} {warp}");
    }
    out
}

pub fn parse_warps(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut warps = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |reason: String| Error::Manifest {
            line: i + 1,
            reason,
        };
        if fields.len() != 2 {
            return Err(bad(format!("expected `<speaker> <warp>`, found {} fields", fields.len())));
        }
        let warp: f64 = fields[1]
            .parse()
            .map_err(|_| bad(format!("invalid warp `{}`", fields[1])))?;
        if !(warp > 0.0 && warp.is_finite()) {
            return Err(bad(format!("warp must be positive, found {warp}")));
        }
        if warps.insert(fields[0].to_string(), warp).is_some() {
            return Err(bad(format!("duplicate speaker `{}`", fields[0])));
        }
    }
    Ok(warps)
}

pub fn save_warps(warps: &BTreeMap<String, f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_warps(warps)).map_err(|e| Error::io(path, e))
}

pub fn load_warps(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_warps(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_grid() {
        let warps = VtlnOptions::default().warps();
        assert_eq!(warps.len(), 31);
        assert_eq!(warps[0], 0.85);
        assert_eq!(warps[15], 1.0);
        assert_eq!(warps[30], 1.15);
    }

    #[test]
    fn tie_rules() {
        let warps = [0.98, 0.99, 1.0, 1.01, 1.02];
        assert_eq!(select_warp(&warps, &[5.0, 1.0, 1.0, 1.0, 2.0]), 0);
        assert_eq!(select_warp(&warps, &[1.0, 2.0, 1.0, 2.0, 1.0]), 1);
        assert_eq!(select_warp(&warps, &[3.0; 5]), 2);
        assert_eq!(select_warp(&[0.9, 1.1], &[1.0, 1.0]), 0);
    }

    #[test]
    fn options_checked() {
        let bad = VtlnOptions {
            min_warp: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = VtlnOptions {
            warp_step: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn warp_file_round_trip() {
        let warps: BTreeMap<String, f64> =
            [("s1".to_string(), 0.93), ("s2".to_string(), 1.07)].into_iter().collect();
        assert_eq!(parse_warps(&format_warps(&warps)).unwrap(), warps);
        assert!(parse_warps("s1 0.9\ns1 1.0\n").is_err());
        assert!(parse_warps("s1\n").is_err());
        assert!(parse_warps("s1 abc\n").is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("warps.txt");
        save_warps(&warps, &path).unwrap();
        assert_eq!(load_warps(&path).unwrap(), warps);
    }

    #[test]
    fn requires_speakers() {
        let utts = Utterances::new(vec![Utterance::new("a", "a.wav")]).unwrap();
        let err = estimate_warps(&utts, |_, _| unreachable!(), &VtlnOptions::default(), 0);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn argmax_shift_invariant(
            scores in proptest::collection::vec(-1e3f64..1e3, 31),
            shift in -1e6f64..1e6,
        ) {
            let warps = VtlnOptions::default().warps();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let a = select_warp(&warps, &scores);
            let b = select_warp(&warps, &shifted);
            // shifting may merge near-equal scores by rounding; compare values
            prop_assert!(a == b || scores[a] - scores[b] < 1e-9 * (1.0 + shift.abs()));
        }

        #[test]
        fn quantized_scores_shift_exactly(
            scores in proptest::collection::vec(-64i32..64, 31),
            shift in -1000i32..1000,
        ) {
            let warps = VtlnOptions::default().warps();
            let a: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
            let b: Vec<f64> = scores.iter().map(|&s| (s + shift) as f64).collect();
            prop_assert_eq!(select_warp(&warps, &a), select_warp(&warps, &b));
        }
    }
}
