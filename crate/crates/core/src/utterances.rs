//! Utterance manifests: named audio fragments with optional speaker labels
//! and time bounds.
//!
//! The text format has one utterance per line, fields separated by spaces
//! or tabs:
//!
//! ```text
//! <name> <wav>
//! <name> <wav> <speaker>
//! <name> <wav> <onset> <offset>
//! <name> <wav> <speaker> <onset> <offset>
//! ```
//!
//! All lines of a manifest must share the same shape.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::audio::{load_wav, Audio};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub name: String,
    pub audio_path: PathBuf,
    pub speaker: Option<String>,
    pub onset: Option<f64>,
    pub offset: Option<f64>,
}

impl Utterance {
    pub fn new(name: impl Into<String>, audio_path: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            audio_path: audio_path.into(),
            speaker: None,
            onset: None,
            offset: None,
        }
    }

    pub fn with_speaker(mut self, speaker: impl Into<String>) -> Self {
        self.speaker = Some(speaker.into());
        self
    }

    pub fn with_bounds(mut self, onset: f64, offset: f64) -> Self {
        self.onset = Some(onset);
        self.offset = Some(offset);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::param("name", "utterance name is empty"));
        }
        match (self.onset, self.offset) {
            (Some(on), Some(off)) if !(on >= 0.0 && on < off) => Err(Error::OutOfRange(format!(
                "utterance {}: expected 0 <= onset < offset, got {on}, {off}",
                self.name
            ))),
            (Some(_), None) | (None, Some(_)) => Err(Error::param(
                "onset/offset",
                format!("utterance {}: onset and offset go together", self.name),
            )),
            _ => Ok(()),
        }
    }

    /// Loads the audio file, restricted to the utterance time bounds.
    pub fn load_audio(&self) -> Result<Audio> {
        let audio = load_wav(&self.audio_path)?;
        match (self.onset, self.offset) {
            (Some(on), Some(off)) => audio.segment(on, off),
            _ => Ok(audio),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Utterances {
    items: Vec<Utterance>,
}

impl Utterances {
    /// Builds a validated set: unique names, and either every utterance
    /// has a speaker or none has.
    pub fn new(items: Vec<Utterance>) -> Result<Self> {
        let mut names = HashSet::new();
        for (i, u) in items.iter().enumerate() {
            u.validate()?;
            if !names.insert(u.name.as_str()) {
                return Err(Error::Manifest {
                    line: i + 1,
                    reason: format!("duplicate utterance name `{}`", u.name),
                });
            }
        }
        let with_speaker = items.iter().filter(|u| u.speaker.is_some()).count();
        if with_speaker != 0 && with_speaker != items.len() {
            return Err(Error::Manifest {
                line: 0,
                reason: "either all or none of the utterances must have a speaker".into(),
            });
        }
        Ok(Self { items })
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Utterance> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn has_speakers(&self) -> bool {
        !self.items.is_empty() && self.items[0].speaker.is_some()
    }

    pub fn get(&self, name: &str) -> Option<&Utterance> {
        self.items.iter().find(|u| u.name == name)
    }

    /// Distinct speakers in order of first appearance.
    pub fn speakers(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.items
            .iter()
            .filter_map(|u| u.speaker.as_deref())
            .filter(|s| seen.insert(*s))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut items = Vec::new();
        let mut shape: Option<(usize, Shape)> = None;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Manifest {
                line: lineno,
                reason,
            };
            let third_is_number = fields.get(2).is_some_and(|f| f.parse::<f64>().is_ok());
            let this_shape = match (fields.len(), third_is_number) {
                (2, _) => Shape::Bare,
                (3, false) => Shape::Speaker,
                (4, true) => Shape::Bounds,
                (5, false) => Shape::SpeakerBounds,
                (n, _) => return Err(err(format!("cannot parse line with {n} fields: `{line}`"))),
            };
            match shape {
                None => shape = Some((lineno, this_shape)),
                Some((first, s)) if s != this_shape => {
                    return Err(err(format!(
                        "line shape {this_shape:?} differs from line {first} ({s:?})"
                    )))
                }
                _ => {}
            }
            let number = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| err(format!("expected a number, found `{s}`")))
            };
            let mut u = Utterance::new(fields[0], fields[1]);
            match this_shape {
                Shape::Bare => {}
                Shape::Speaker => u.speaker = Some(fields[2].to_string()),
                Shape::Bounds => {
                    u.onset = Some(number(fields[2])?);
                    u.offset = Some(number(fields[3])?);
                }
                Shape::SpeakerBounds => {
                    u.speaker = Some(fields[2].to_string());
                    u.onset = Some(number(fields[3])?);
                    u.offset = Some(number(fields[4])?);
                }
            }
            u.validate().map_err(|e| err(e.to_string()))?;
            items.push(u);
        }
        Self::new(items)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

impl<'a> IntoIterator for &'a Utterances {
    type Item = &'a Utterance;
    type IntoIter = std::slice::Iter<'a, Utterance>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Bare,
    Speaker,
    Bounds,
    SpeakerBounds,
}
