//! Batch extraction: a configuration selecting the processors, and its
//! application to a set of utterances on a pool of workers.
//!
//! Results are identical whatever the number of workers: every utterance
//! draws its random numbers from a generator seeded by a hash of the
//! configuration seed and the utterance name, and corpus-level stages
//! (VTLN, speaker CMVN) reduce their statistics in a fixed order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::audio::Audio;
use crate::error::{Error, Result};
use crate::features::{Features, FeaturesCollection};
use crate::pitch::{estimate_pitch, postprocess_pitch, PitchOptions, PostPitchOptions};
use crate::postproc::{cmvn_apply, delta, CmvnOptions, CmvnScope, DeltaOptions};
use crate::speaker_norm::{estimate_warps, VtlnOptions};
use crate::spectral::{
    filterbank, mfcc, plp, spectrogram, FilterbankOptions, MfccOptions, PlpOptions,
    SpectrogramOptions,
};
use crate::utterances::{Utterance, Utterances};

/// The spectral processor of a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Spectrogram,
    Filterbank,
    Mfcc,
    Plp,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Spectrogram => "spectrogram",
            FeatureKind::Filterbank => "filterbank",
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Plp => "plp",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectrogram" => Ok(FeatureKind::Spectrogram),
            "filterbank" => Ok(FeatureKind::Filterbank),
            "mfcc" => Ok(FeatureKind::Mfcc),
            "plp" => Ok(FeatureKind::Plp),
            other => Err(Error::Config(format!(
                "unknown features `{other}`, expected spectrogram, filterbank, mfcc or plp"
            ))),
        }
    }
}

/// Spectral processor with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeaturesConfig {
    Spectrogram(SpectrogramOptions),
    Filterbank(FilterbankOptions),
    Mfcc(MfccOptions),
    Plp(PlpOptions),
}

impl FeaturesConfig {
    pub fn default_for(kind: FeatureKind) -> Self {
        match kind {
            FeatureKind::Spectrogram => FeaturesConfig::Spectrogram(Default::default()),
            FeatureKind::Filterbank => FeaturesConfig::Filterbank(Default::default()),
            FeatureKind::Mfcc => FeaturesConfig::Mfcc(Default::default()),
            FeatureKind::Plp => FeaturesConfig::Plp(Default::default()),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            FeaturesConfig::Spectrogram(_) => FeatureKind::Spectrogram,
            FeaturesConfig::Filterbank(_) => FeatureKind::Filterbank,
            FeaturesConfig::Mfcc(_) => FeatureKind::Mfcc,
            FeaturesConfig::Plp(_) => FeatureKind::Plp,
        }
    }

    fn frame(&self) -> &crate::framing::FrameOptions {
        match self {
            FeaturesConfig::Spectrogram(o) => &o.frame,
            FeaturesConfig::Filterbank(o) => &o.mel.frame,
            FeaturesConfig::Mfcc(o) => &o.mel.frame,
            FeaturesConfig::Plp(o) => &o.mel.frame,
        }
    }

    pub fn sample_rate(&self) -> u32 {
        self.frame().sample_rate
    }

    /// Computes the features of `audio` at VTLN warp `warp`.
    pub fn compute(&self, audio: &Audio, warp: f64, seed: u64) -> Result<Features> {
        match self {
            FeaturesConfig::Spectrogram(o) => {
                if warp != 1.0 {
                    return Err(Error::Config("spectrogram does not support VTLN".into()));
                }
                spectrogram(audio, o, seed)
            }
            FeaturesConfig::Filterbank(o) => filterbank(audio, o, warp, seed),
            FeaturesConfig::Mfcc(o) => mfcc(audio, o, warp, seed),
            FeaturesConfig::Plp(o) => plp(audio, o, warp, seed),
        }
    }
}

/// Full description of an extraction pipeline. Serialized as YAML with one
/// section per processor, named after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub features: FeaturesConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch: Option<PitchOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_postprocessing: Option<PostPitchOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<DeltaOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cmvn: Option<CmvnOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vtln: Option<VtlnOptions>,
    #[serde(default)]
    pub seed: u64,
}

/// Configuration with default parameters for the selected processors.
pub fn default_config(
    features: FeatureKind,
    with_pitch: bool,
    with_delta: bool,
    with_cmvn: bool,
    with_vtln: bool,
) -> Result<PipelineConfig> {
    let config = PipelineConfig {
        features: FeaturesConfig::default_for(features),
        pitch: with_pitch.then(PitchOptions::default),
        pitch_postprocessing: with_pitch.then(PostPitchOptions::default),
        delta: with_delta.then(DeltaOptions::default),
        cmvn: with_cmvn.then(CmvnOptions::default),
        vtln: with_vtln.then(VtlnOptions::default),
        seed: 0,
    };
    config.validate()?;
    Ok(config)
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, e: Error| Error::Config(format!("{section}: {e}"));
        let frame = self.features.frame();
        frame.validate().map_err(|e| wrap(self.features.kind().name(), e))?;
        if self.vtln.is_some() && self.features.kind() == FeatureKind::Spectrogram {
            return Err(Error::Config(
                "VTLN is not available for spectrogram features".into(),
            ));
        }
        if self.pitch_postprocessing.is_some() && self.pitch.is_none() {
            return Err(Error::Config(
                "pitch_postprocessing requires a pitch section".into(),
            ));
        }
        if let Some(p) = &self.pitch {
            p.validate().map_err(|e| wrap("pitch", e))?;
            let same = p.sample_rate == frame.sample_rate
                && p.frame_shift == frame.frame_shift
                && p.frame_length == frame.frame_length;
            if !same {
                return Err(Error::Config(
                    "pitch sample_rate, frame_shift and frame_length must match the features".into(),
                ));
            }
            if !frame.snip_edges {
                return Err(Error::Config(
                    "pitch requires features computed with snip_edges".into(),
                ));
            }
        }
        if let Some(p) = &self.pitch_postprocessing {
            p.validate().map_err(|e| wrap("pitch_postprocessing", e))?;
        }
        if let Some(d) = &self.delta {
            d.validate().map_err(|e| wrap("delta", e))?;
        }
        if let Some(v) = &self.vtln {
            v.validate().map_err(|e| wrap("vtln", e))?;
        }
        Ok(())
    }

    pub fn requires_speakers(&self) -> bool {
        self.vtln.is_some() || self.cmvn.as_ref().is_some_and(|c| c.by == CmvnScope::Speaker)
    }

    pub fn to_yaml(&self) -> Result<String> {
        serde_yaml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses and validates a configuration. Sections and parameters left
    /// out take their default values; unknown names are errors.
    pub fn from_yaml(text: &str) -> Result<Self> {
        let raw: serde_yaml::Value =
            serde_yaml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let kinds: Vec<&str> = ["spectrogram", "filterbank", "mfcc", "plp"]
            .into_iter()
            .filter(|k| raw.get(k).is_some())
            .collect();
        if kinds.len() != 1 {
            return Err(Error::Config(format!(
                "expected exactly one features section (spectrogram, filterbank, mfcc or plp), found {}",
                kinds.len()
            )));
        }
        let config: Self =
            serde_yaml::from_value(raw.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let known = serde_yaml::to_value(&config).map_err(|e| Error::Config(e.to_string()))?;
        check_known_keys(&raw, &known, "")?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_yaml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_yaml(&text)
    }
}

fn check_known_keys(raw: &serde_yaml::Value, known: &serde_yaml::Value, path: &str) -> Result<()> {
    let (Some(raw), Some(known)) = (raw.as_mapping(), known.as_mapping()) else {
        return Ok(());
    };
    for (key, value) in raw {
        let name = key.as_str().unwrap_or_default();
        let full = if path.is_empty() {
            name.to_string()
        } else {
            format!("{path}.{name}")
        };
        match known.get(key) {
            Some(k) => check_known_keys(value, k, &full)?,
            None => return Err(Error::Config(format!("unknown parameter `{full}`"))),
        }
    }
    Ok(())
}

/// Seed of one utterance: the first 8 bytes of SHA-256 over the pipeline
/// seed and the utterance name.
pub fn utterance_seed(seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Collects per-utterance results, failing with every error when some
/// utterances failed.
fn gather<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let mut ok = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => errors.push(e),
        }
    }
    match errors.len() {
        0 => Ok(ok),
        1 => Err(errors.pop().unwrap()),
        _ => Err(Error::Batch(errors)),
    }
}

fn in_utterance<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Utterance {
        name: name.to_string(),
        source: Box::new(e),
    })
}

/// Runs the pipeline on every utterance with `njobs` workers.
pub fn extract_features(
    config: &PipelineConfig,
    utterances: &Utterances,
    njobs: usize,
) -> Result<FeaturesCollection> {
    config.validate()?;
    if njobs == 0 {
        return Err(Error::param("njobs", "must be at least 1"));
    }
    if config.requires_speakers() && !utterances.has_speakers() {
        return Err(Error::MissingSpeaker(
            "VTLN and speaker CMVN need a speaker for every utterance".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(njobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {njobs} workers: {e}")))?;
    pool.install(|| run(config, utterances))
}

fn run(config: &PipelineConfig, utterances: &Utterances) -> Result<FeaturesCollection> {
    let rate = config.features.sample_rate();
    let utts: Vec<&Utterance> = utterances.iter().collect();
    let audio: Vec<Audio> = gather(
        utts.par_iter()
            .map(|u| in_utterance(&u.name, u.load_audio().and_then(|a| a.resample(rate))))
            .collect(),
    )?;
    let index: BTreeMap<&str, usize> = utts.iter().enumerate().map(|(i, u)| (u.name.as_str(), i)).collect();
    let seeds: Vec<u64> = utts.iter().map(|u| utterance_seed(config.seed, &u.name)).collect();

    let warps: BTreeMap<String, f64> = match &config.vtln {
        None => BTreeMap::new(),
        Some(vtln) => {
            let opts = MfccOptions {
                mel: crate::spectral::MelOptions {
                    frame: crate::framing::FrameOptions {
                        sample_rate: rate,
                        ..Default::default()
                    },
                    ..Default::default()
                },
                ..Default::default()
            };
            let extract = |u: &Utterance, warp: f64| {
                let i = index[u.name.as_str()];
                mfcc(&audio[i], &opts, warp, seeds[i])
            };
            estimate_warps(utterances, extract, vtln, config.seed)?.warps
        }
    };
    let config_json = serde_json::to_value(config).unwrap_or(Value::Null);

    let computed: Vec<Features> = gather(
        utts.par_iter()
            .enumerate()
            .map(|(i, u)| {
                let warp = u
                    .speaker
                    .as_ref()
                    .and_then(|s| warps.get(s))
                    .copied()
                    .unwrap_or(1.0);
                let pitch_seed = utterance_seed(config.seed, &format!("{}#pitch", u.name));
                let r = extract_one(config, &audio[i], warp, seeds[i], pitch_seed).map(|mut f| {
                    f.set_property(
                        "pipeline",
                        json!({
                            "config": config_json,
                            "audio": u.audio_path.display().to_string(),
                            "utterance": u.name,
                            "speaker": u.speaker,
                            "onset": u.onset,
                            "offset": u.offset,
                            "vtln_warp": config.vtln.as_ref().map(|_| warp),
                        }),
                    );
                    f
                });
                in_utterance(&u.name, r)
            })
            .collect(),
    )?;
    let mut coll = FeaturesCollection::new();
    for (u, f) in utts.iter().zip(computed) {
        coll.insert(u.name.clone(), f)?;
    }
    match &config.cmvn {
        None => Ok(coll),
        Some(cmvn) => {
            let speakers: BTreeMap<String, String> = utts
                .iter()
                .filter_map(|u| u.speaker.clone().map(|s| (u.name.clone(), s)))
                .collect();
            cmvn_apply(&coll, &speakers, cmvn)
        }
    }
}

/// Raw features, then deltas, then pitch.
fn extract_one(
    config: &PipelineConfig,
    audio: &Audio,
    warp: f64,
    seed: u64,
    pitch_seed: u64,
) -> Result<Features> {
    let mut f = config.features.compute(audio, warp, seed)?;
    if let Some(d) = &config.delta {
        f = delta(&f, d)?;
    }
    if let Some(p) = &config.pitch {
        let raw = estimate_pitch(audio, p)?;
        let post = config.pitch_postprocessing.clone().unwrap_or_default();
        let pitch = postprocess_pitch(&raw, &post, pitch_seed)?;
        f = f.concatenate(&pitch)?;
    }
    Ok(f)
}
