//! On-disk dataset model: manifest, binary trial files, corpus statistics
//! and a labeled synthetic corpus generator.
//!
//! A corpus is a directory holding a JSON manifest and one binary file per
//! trial. Trial files are little-endian:
//!
//! | field          | type            |
//! |----------------|-----------------|
//! | magic          | `b"MYOS"`       |
//! | version        | u16             |
//! | n_channels     | u16             |
//! | n_samples      | u64             |
//! | sample_rate_hz | f64             |
//! | samples        | f32 × C·N, channel-major |

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const N_CLASSES: usize = 26;
pub const MANIFEST_VERSION: u32 = 1;
pub const TRIAL_MAGIC: &[u8; 4] = b"MYOS";
pub const TRIAL_FORMAT_VERSION: u16 = 1;
const TRIAL_HEADER_LEN: usize = 4 + 2 + 2 + 8 + 8;
const DEFAULT_REPETITIONS: u32 = 10;
const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("missing data file {0}")]
    MissingFile(PathBuf),
    #[error("manifest schema violation: {0}")]
    SchemaViolation(String),
    #[error("cannot parse manifest: {0}")]
    Parse(String),
    #[error("corrupt trial file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error("non-finite sample in {0}")]
    NonFiniteData(PathBuf),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One of the 26 uppercase letter classes, stored as its index 0..26.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Letter(u8);

impl Letter {
    pub fn from_index(index: usize) -> Option<Self> {
        (index < N_CLASSES).then_some(Letter(index as u8))
    }

    pub fn from_char(c: char) -> Option<Self> {
        c.is_ascii_uppercase().then(|| Letter(c as u8 - b'A'))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_char(self) -> char {
        (b'A' + self.0) as char
    }

    pub fn all() -> impl Iterator<Item = Letter> {
        (0..N_CLASSES as u8).map(Letter)
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl std::str::FromStr for Letter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Letter::from_char(c).ok_or_else(|| format!("not an uppercase letter: {s:?}")),
            _ => Err(format!("expected a single letter, got {s:?}")),
        }
    }
}

impl Serialize for Letter {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Letter {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Identity of one trial: (subject, letter, repetition).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrialKey {
    pub subject_id: String,
    pub letter: Letter,
    pub repetition: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub subject_id: String,
    pub letter: Letter,
    pub repetition: u32,
    pub sample_rate_hz: f64,
    pub n_channels: usize,
    pub data_path: PathBuf,
}

impl TrialRecord {
    pub fn key(&self) -> TrialKey {
        TrialKey {
            subject_id: self.subject_id.clone(),
            letter: self.letter,
            repetition: self.repetition,
        }
    }
}

/// A loaded trial. `samples` is `n_channels × n_samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub record: TrialRecord,
    pub samples: Array2<f32>,
}

impl Trial {
    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.record.sample_rate_hz
    }
}

fn default_repetitions() -> u32 {
    DEFAULT_REPETITIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    /// Data directory, relative to the manifest file unless absolute.
    pub root: PathBuf,
    /// Declared repetitions per (subject, letter); every trial's repetition
    /// index must be below it.
    #[serde(default = "default_repetitions")]
    pub n_repetitions: u32,
    pub subjects: Vec<String>,
    pub trials: Vec<TrialRecord>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, n_repetitions: u32, subjects: Vec<String>, trials: Vec<TrialRecord>) -> Self {
        DatasetManifest {
            version: MANIFEST_VERSION,
            root: root.into(),
            n_repetitions,
            subjects,
            trials,
            base_dir: PathBuf::new(),
        }
    }

    /// Directory the trial `data_path`s are resolved against.
    pub fn data_root(&self) -> PathBuf {
        self.base_dir.join(&self.root)
    }

    pub fn trial_path(&self, record: &TrialRecord) -> PathBuf {
        self.data_root().join(&record.data_path)
    }

    /// Schema checks that need no filesystem access.
    pub fn validate(&self) -> Result<(), StoreError> {
        let violation = |msg: String| Err(StoreError::SchemaViolation(msg));
        if self.version != MANIFEST_VERSION {
            return violation(format!("unsupported manifest version {}", self.version));
        }
        if self.n_repetitions == 0 {
            return violation("n_repetitions must be positive".into());
        }
        let mut subjects = HashSet::new();
        for s in &self.subjects {
            if !subjects.insert(s.as_str()) {
                return violation(format!("duplicate subject {s}"));
            }
        }
        let mut seen = HashSet::new();
        for t in &self.trials {
            if !subjects.contains(t.subject_id.as_str()) {
                return violation(format!("trial references unknown subject {}", t.subject_id));
            }
            if t.repetition >= self.n_repetitions {
                return violation(format!(
                    "repetition {} of ({}, {}) outside declared count {}",
                    t.repetition, t.subject_id, t.letter, self.n_repetitions
                ));
            }
            if !(t.sample_rate_hz.is_finite() && t.sample_rate_hz > 0.0) {
                return violation(format!("non-positive sample rate for ({}, {}, {})", t.subject_id, t.letter, t.repetition));
            }
            if t.n_channels == 0 || t.n_channels > u16::MAX as usize {
                return violation(format!("bad channel count for ({}, {}, {})", t.subject_id, t.letter, t.repetition));
            }
            if !seen.insert(t.key()) {
                return violation(format!("duplicate trial ({}, {}, {})", t.subject_id, t.letter, t.repetition));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), StoreError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| StoreError::Parse(e.to_string()))?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Parse and validate a manifest, checking that every data file exists.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => StoreError::MissingFile(path.to_path_buf()),
        _ => StoreError::Io(e),
    })?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| StoreError::Parse(e.to_string()))?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate()?;
    for t in &manifest.trials {
        let p = manifest.trial_path(t);
        if !p.is_file() {
            return Err(StoreError::MissingFile(p));
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TrialHeader {
    n_channels: usize,
    n_samples: usize,
    sample_rate_hz: f64,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> StoreError {
    StoreError::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<TrialHeader, StoreError> {
    if bytes.len() < TRIAL_HEADER_LEN {
        return Err(corrupt(path, "truncated header"));
    }
    if &bytes[0..4] != TRIAL_MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TRIAL_FORMAT_VERSION {
        return Err(corrupt(path, format!("unsupported format version {version}")));
    }
    let n_channels = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let n_samples = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let sample_rate_hz = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    Ok(TrialHeader {
        n_channels,
        n_samples,
        sample_rate_hz,
    })
}

fn read_header(path: &Path) -> Result<TrialHeader, StoreError> {
    let mut file = fs::File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => StoreError::MissingFile(path.to_path_buf()),
        _ => StoreError::Io(e),
    })?;
    let mut buf = [0u8; TRIAL_HEADER_LEN];
    file.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => corrupt(path, "truncated header"),
        _ => StoreError::Io(e),
    })?;
    parse_header(&buf, path)
}

/// Serialize samples (`n_channels × n_samples`) into the trial file format.
pub fn encode_trial(samples: &Array2<f32>, sample_rate_hz: f64) -> Vec<u8> {
    let (c, n) = samples.dim();
    let mut out = Vec::with_capacity(TRIAL_HEADER_LEN + 4 * c * n);
    out.extend_from_slice(TRIAL_MAGIC);
    out.extend_from_slice(&TRIAL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(c as u16).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&sample_rate_hz.to_le_bytes());
    for row in samples.rows() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_trial_file(path: &Path, samples: &Array2<f32>, sample_rate_hz: f64) -> Result<(), StoreError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    file.write_all(&encode_trial(samples, sample_rate_hz))?;
    file.flush()?;
    Ok(())
}

/// Read one trial. The file header must agree with the manifest record.
pub fn load_trial(manifest: &DatasetManifest, record: &TrialRecord) -> Result<Trial, StoreError> {
    if !manifest.trials.iter().any(|t| t.key() == record.key()) {
        return Err(StoreError::SchemaViolation(format!(
            "trial ({}, {}, {}) is not in the manifest",
            record.subject_id, record.letter, record.repetition
        )));
    }
    let path = manifest.trial_path(record);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => StoreError::MissingFile(path.clone()),
        _ => StoreError::Io(e),
    })?;
    let header = parse_header(&bytes, &path)?;
    if header.n_channels != record.n_channels {
        return Err(corrupt(
            &path,
            format!("header declares {} channels, manifest {}", header.n_channels, record.n_channels),
        ));
    }
    if header.sample_rate_hz != record.sample_rate_hz {
        return Err(corrupt(&path, "sample rate disagrees with manifest"));
    }
    if header.n_samples < 2 {
        return Err(corrupt(&path, "fewer than two samples"));
    }
    let expected = header
        .n_channels
        .checked_mul(header.n_samples)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| corrupt(&path, "size overflow"))?;
    let payload = &bytes[TRIAL_HEADER_LEN..];
    if payload.len() != expected {
        return Err(corrupt(
            &path,
            format!("payload holds {} bytes, header implies {expected}", payload.len()),
        ));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StoreError::NonFiniteData(path));
    }
    let samples = Array2::from_shape_vec((header.n_channels, header.n_samples), values)
        .expect("length checked against header");
    Ok(Trial {
        record: record.clone(),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub n: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p999_s: f64,
    pub histogram: Histogram,
}

/// Statistics over a list of durations in seconds.
///
/// Median is the lower median; the 99.9th percentile is nearest-rank, the
/// sorted value at index `ceil(0.999 n) - 1`.
pub fn duration_stats(durations: &[f64]) -> Result<DurationStats, StoreError> {
    if durations.is_empty() {
        return Err(StoreError::EmptyDataset);
    }
    let mut sorted = durations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean_s = sorted.iter().sum::<f64>() / n as f64;
    let median_s = sorted[(n - 1) / 2];
    let rank = ((0.999 * n as f64).ceil() as usize).clamp(1, n);
    let p999_s = sorted[rank - 1];

    let max = sorted[n - 1];
    let width = max / HISTOGRAM_BINS as f64;
    let edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| i as f64 * width).collect();
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    for &d in &sorted {
        let bin = if width > 0.0 {
            ((d / width) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Ok(DurationStats {
        n,
        mean_s,
        median_s,
        p999_s,
        histogram: Histogram { edges, counts },
    })
}

/// Writing-time statistics of every trial, read from the file headers.
pub fn dataset_stats(manifest: &DatasetManifest) -> Result<DurationStats, StoreError> {
    if manifest.trials.is_empty() {
        return Err(StoreError::EmptyDataset);
    }
    let durations = manifest
        .trials
        .iter()
        .map(|t| {
            let header = read_header(&manifest.trial_path(t))?;
            Ok(header.n_samples as f64 / header.sample_rate_hz)
        })
        .collect::<Result<Vec<_>, StoreError>>()?;
    duration_stats(&durations)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub n_repetitions: u32,
    pub n_channels: usize,
    pub sample_rate_hz: f64,
    pub duration_range_s: (f64, f64),
    /// 0 makes every class share one template, 1 gives fully class-specific templates.
    pub class_separability: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_subjects: 5,
            n_repetitions: 2,
            n_channels: 5,
            sample_rate_hz: 2000.0,
            duration_range_s: (1.5, 3.0),
            class_separability: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |m: &str| Err(StoreError::InvalidSpec(m.to_string()));
        let (lo, hi) = self.duration_range_s;
        if self.n_subjects == 0 || self.n_repetitions == 0 || self.n_channels == 0 {
            return bad("subject, repetition and channel counts must be positive");
        }
        if self.n_channels > u16::MAX as usize {
            return bad("too many channels");
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad("sample rate must be positive");
        }
        if !(lo > 0.0 && hi.is_finite() && lo <= hi) {
            return bad("duration range must satisfy 0 < min <= max");
        }
        if (lo * self.sample_rate_hz).round() < 2.0 {
            return bad("shortest trial would hold fewer than two samples");
        }
        if !(0.0..=1.0).contains(&self.class_separability) {
            return bad("class_separability must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Gaussian bumps over relative time `r ∈ [0, 1]`.
#[derive(Debug, Clone)]
struct BurstTemplate {
    bursts: Vec<(f64, f64, f64)>, // (centre, width, amplitude)
}

impl BurstTemplate {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let bursts = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.04..0.12),
                    rng.random_range(0.5..2.0),
                )
            })
            .collect();
        BurstTemplate { bursts }
    }

    fn eval(&self, r: f64) -> f64 {
        self.bursts
            .iter()
            .map(|&(c, w, a)| a * (-(r - c).powi(2) / (2.0 * w * w)).exp())
            .sum()
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn subject_id(index: usize, n_subjects: usize) -> String {
    let width = n_subjects.to_string().len().max(2);
    format!("S{:0width$}", index + 1)
}

/// Render the samples of one synthetic trial without touching disk.
pub fn synthesize_trial(spec: &SyntheticSpec, subject: usize, letter: Letter, repetition: u32) -> Array2<f32> {
    const BASELINE: f64 = 0.1;
    const SCALE_UV: f64 = 50.0;
    let s = spec.class_separability;
    let seed = spec.seed;

    let mut trial_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 1, subject as u64, letter.index() as u64, repetition as u64]));
    let (lo, hi) = spec.duration_range_s;
    let duration = if hi > lo { trial_rng.random_range(lo..=hi) } else { lo };
    let n = ((duration * spec.sample_rate_hz).round() as usize).max(2);
    let jitter: f64 = trial_rng.random_range(-0.02..0.02);

    let mut out = Array2::<f32>::zeros((spec.n_channels, n));
    for ch in 0..spec.n_channels {
        let common = BurstTemplate::draw(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 2, ch as u64])));
        let class = BurstTemplate::draw(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 3, letter.index() as u64, ch as u64])));
        let gain = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 4, subject as u64, ch as u64])).random_range(0.7..1.3);
        let mut row = out.row_mut(ch);
        for (t, v) in row.iter_mut().enumerate() {
            let r = t as f64 / (n - 1) as f64 + jitter;
            let env = BASELINE + (1.0 - s) * common.eval(r) + s * class.eval(r);
            let noise: f64 = StandardNormal.sample(&mut trial_rng);
            *v = (SCALE_UV * gain * env * noise) as f32;
        }
    }
    out
}

/// Write a synthetic corpus under `out_dir` and return its manifest.
///
/// Each class owns per-channel burst envelopes that modulate white noise;
/// subjects differ by a per-channel gain, trials by duration and a small
/// onset jitter. Output is a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<DatasetManifest, StoreError> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let subjects: Vec<String> = (0..spec.n_subjects).map(|i| subject_id(i, spec.n_subjects)).collect();
    let mut trials = Vec::with_capacity(spec.n_subjects * N_CLASSES * spec.n_repetitions as usize);
    for (si, sid) in subjects.iter().enumerate() {
        for letter in Letter::all() {
            for rep in 0..spec.n_repetitions {
                let rel = PathBuf::from(sid).join(format!("{}_{:02}.myos", letter, rep));
                let samples = synthesize_trial(spec, si, letter, rep);
                write_trial_file(&out_dir.join("data").join(&rel), &samples, spec.sample_rate_hz)?;
                trials.push(TrialRecord {
                    subject_id: sid.clone(),
                    letter,
                    repetition: rep,
                    sample_rate_hz: spec.sample_rate_hz,
                    n_channels: spec.n_channels,
                    data_path: rel,
                });
            }
        }
    }
    let mut manifest = DatasetManifest::new("data", spec.n_repetitions, subjects, trials);
    manifest.write(&out_dir.join("manifest.json"))?;
    manifest.base_dir = out_dir.to_path_buf();
    Ok(manifest)
}
