//! JSON Lines corpus manifests.
//!
//! One object per line with the keys `id, wav, session, speaker, emotion,
//! scenario, valence, activation, dominance, gender`; the last four may be
//! absent or null. Relative `wav` paths are resolved against the directory
//! holding the manifest.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SerError};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Angry,
    Happy,
    Sad,
    Neutral,
}

impl Emotion {
    pub const ALL: [Emotion; 4] = [Emotion::Angry, Emotion::Happy, Emotion::Sad, Emotion::Neutral];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Self::ALL.get(i).copied()
    }

    /// Maps a raw corpus label onto the four-class set. `excited` merges into
    /// `happy`; anything else outside the set yields `None`.
    pub fn from_raw_label(raw: &str) -> Option<Emotion> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "angry" | "ang" | "anger" => Some(Emotion::Angry),
            "happy" | "hap" | "happiness" | "excited" | "exc" => Some(Emotion::Happy),
            "sad" | "sadness" => Some(Emotion::Sad),
            "neutral" | "neu" => Some(Emotion::Neutral),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Angry => "angry",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Improvised,
    Scripted,
}

impl Scenario {
    fn from_raw(raw: &str) -> Option<Scenario> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "improvised" | "impro" => Some(Scenario::Improvised),
            "scripted" | "script" => Some(Scenario::Scripted),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn index(self) -> usize {
        self as usize
    }

    fn from_raw(raw: &str) -> Option<Gender> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Some(Gender::Male),
            "female" | "f" => Some(Gender::Female),
            _ => None,
        }
    }
}

/// Three-way bucketing of a dimensional rating on the 1..5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimensionClass {
    Low,
    Medium,
    High,
}

impl DimensionClass {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// `[1,2]` is low, `(2,4)` medium, `[4,5]` high.
pub fn discretize_dimension(v: f64) -> Result<DimensionClass> {
    if !(1.0..=5.0).contains(&v) {
        return Err(SerError::Range {
            value: v,
            range: "[1, 5]",
        });
    }
    Ok(if v <= 2.0 {
        DimensionClass::Low
    } else if v < 4.0 {
        DimensionClass::Medium
    } else {
        DimensionClass::High
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    #[serde(rename = "wav")]
    pub wav_path: PathBuf,
    pub session: u8,
    pub speaker: String,
    pub emotion: Emotion,
    pub scenario: Scenario,
    pub valence: Option<f64>,
    pub activation: Option<f64>,
    pub dominance: Option<f64>,
    pub gender: Option<Gender>,
}

impl UtteranceRecord {
    fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.session) {
            return Err(SerError::Validation(format!(
                "record {}: session {} not in 1..=5",
                self.id, self.session
            )));
        }
        for (name, v) in [
            ("valence", self.valence),
            ("activation", self.activation),
            ("dominance", self.dominance),
        ] {
            if let Some(v) = v {
                if !(1.0..=5.0).contains(&v) {
                    return Err(SerError::Validation(format!(
                        "record {}: {name} {v} not in [1, 5]",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Raw manifest line before label mapping.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    wav: String,
    session: i64,
    speaker: String,
    emotion: String,
    scenario: String,
    #[serde(default)]
    valence: Option<f64>,
    #[serde(default)]
    activation: Option<f64>,
    #[serde(default)]
    dominance: Option<f64>,
    #[serde(default)]
    gender: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<UtteranceRecord>,
    pub sample_rate: u32,
    /// Records skipped during parsing because their label fell outside the
    /// four classes.
    pub dropped: usize,
}

impl Corpus {
    pub fn new(records: Vec<UtteranceRecord>) -> Result<Corpus> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(SerError::Validation(format!("duplicate id {}", r.id)));
            }
        }
        Ok(Corpus {
            records,
            sample_rate: SAMPLE_RATE,
            dropped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn class_counts(&self) -> [usize; Emotion::COUNT] {
        let mut counts = [0; Emotion::COUNT];
        for r in &self.records {
            counts[r.emotion.index()] += 1;
        }
        counts
    }
}

pub fn parse_manifest(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| SerError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut records = Vec::new();
    let mut dropped = 0;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| SerError::ManifestParse {
            line: line_no,
            message: e.to_string(),
        })?;
        let Some(emotion) = Emotion::from_raw_label(&raw.emotion) else {
            dropped += 1;
            continue;
        };
        let scenario = Scenario::from_raw(&raw.scenario).ok_or_else(|| SerError::ManifestParse {
            line: line_no,
            message: format!("unknown scenario {:?}", raw.scenario),
        })?;
        let gender = match raw.gender.as_deref() {
            None => None,
            Some(g) => Some(Gender::from_raw(g).ok_or_else(|| SerError::ManifestParse {
                line: line_no,
                message: format!("unknown gender {g:?}"),
            })?),
        };
        let session = u8::try_from(raw.session)
            .ok()
            .filter(|s| (1..=5).contains(s))
            .ok_or_else(|| {
                SerError::Validation(format!(
                    "line {line_no}: session {} not in 1..=5",
                    raw.session
                ))
            })?;
        let wav = PathBuf::from(&raw.wav);
        let wav_path = if wav.is_relative() { base.join(wav) } else { wav };
        records.push(UtteranceRecord {
            id: raw.id,
            wav_path,
            session,
            speaker: raw.speaker,
            emotion,
            scenario,
            valence: raw.valence,
            activation: raw.activation,
            dominance: raw.dominance,
            gender,
        });
    }
    let mut corpus = Corpus::new(records)?;
    corpus.dropped = dropped;
    Ok(corpus)
}

/// Writes records as JSON Lines. Paths are written relative to `base` when
/// they live beneath it.
pub fn write_manifest(path: &Path, records: &[UtteranceRecord], base: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        let mut r = r.clone();
        if let Ok(rel) = r.wav_path.strip_prefix(base) {
            r.wav_path = rel.to_path_buf();
        }
        serde_json::to_writer(&mut out, &r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| SerError::io(path, e))?;
    f.write_all(&out).map_err(|e| SerError::io(path, e))
}

pub fn filter_improvised(corpus: &Corpus) -> Corpus {
    Corpus {
        records: corpus
            .records
            .iter()
            .filter(|r| r.scenario == Scenario::Improvised)
            .cloned()
            .collect(),
        sample_rate: corpus.sample_rate,
        dropped: corpus.dropped,
    }
}
