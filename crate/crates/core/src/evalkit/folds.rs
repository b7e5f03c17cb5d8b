//! Five-fold split generation for the two validation schemes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::trial_store::{DatasetManifest, Letter, TrialKey};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Folds partition subjects.
    UserIndependent,
    /// Folds partition repetition indices.
    UserDependent,
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "user-independent" | "independent" => Ok(Scheme::UserIndependent),
            "user-dependent" | "dependent" => Ok(Scheme::UserDependent),
            other => Err(format!("unknown validation scheme {other:?}")),
        }
    }
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::UserIndependent => "user-independent",
            Scheme::UserDependent => "user-dependent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub scheme: Scheme,
    pub n_folds: usize,
    pub seed: u64,
    pub fold_of_trial: BTreeMap<TrialKey, usize>,
}

/// Assign every trial of the manifest to a fold.
///
/// User-independent: subjects are shuffled with `seed` and dealt
/// round-robin over five folds. User-dependent: repetitions are grouped in
/// consecutive blocks, `(0,1), (2,3), …` for ten repetitions. Fewer than
/// five repetitions fall back to one fold per repetition.
pub fn make_folds(manifest: &DatasetManifest, scheme: Scheme, seed: u64) -> Result<SplitAssignment, EvalError> {
    let mut fold_of_trial = BTreeMap::new();
    let n_folds = match scheme {
        Scheme::UserIndependent => {
            let present: BTreeSet<&str> = manifest.trials.iter().map(|t| t.subject_id.as_str()).collect();
            let mut subjects: Vec<&str> = manifest
                .subjects
                .iter()
                .map(String::as_str)
                .filter(|s| present.contains(s))
                .collect();
            if subjects.len() < DEFAULT_FOLDS {
                return Err(EvalError::TooFewSubjects {
                    got: subjects.len(),
                    needed: DEFAULT_FOLDS,
                });
            }
            subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let fold_of_subject: BTreeMap<&str, usize> =
                subjects.iter().enumerate().map(|(i, s)| (*s, i % DEFAULT_FOLDS)).collect();
            for t in &manifest.trials {
                fold_of_trial.insert(t.key(), fold_of_subject[t.subject_id.as_str()]);
            }
            DEFAULT_FOLDS
        }
        Scheme::UserDependent => {
            let n_reps = manifest.n_repetitions as usize;
            let (n_folds, block) = if n_reps.is_multiple_of(DEFAULT_FOLDS) {
                (DEFAULT_FOLDS, n_reps / DEFAULT_FOLDS)
            } else if (2..DEFAULT_FOLDS).contains(&n_reps) {
                (n_reps, 1)
            } else {
                return Err(EvalError::IncompatibleRepetitionCount(n_reps));
            };
            for t in &manifest.trials {
                fold_of_trial.insert(t.key(), t.repetition as usize / block);
            }
            n_folds
        }
    };
    Ok(SplitAssignment {
        scheme,
        n_folds,
        seed,
        fold_of_trial,
    })
}

impl SplitAssignment {
    pub fn fold_of(&self, key: &TrialKey) -> Option<usize> {
        self.fold_of_trial.get(key).copied()
    }

    /// Indices (into `keys`) of the train and test portions of `fold`.
    pub fn partition(&self, keys: &[TrialKey], fold: usize) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
        if fold >= self.n_folds {
            return Err(EvalError::MissingFold(fold));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, k) in keys.iter().enumerate() {
            let f = self.fold_of(k).ok_or_else(|| EvalError::UnassignedTrial(format!("{k:?}")))?;
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        Ok((train, test))
    }

    /// Tab-separated table with a header line and one row per trial.
    pub fn to_table(&self) -> String {
        let mut out = format!("# scheme={} n_folds={} seed={}\n", self.scheme.name(), self.n_folds, self.seed);
        out.push_str("subject_id\tletter\trepetition\tfold\n");
        for (k, f) in &self.fold_of_trial {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", k.subject_id, k.letter, k.repetition, f);
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self, EvalError> {
        let bad = |m: String| EvalError::BadFoldTable(m);
        let mut lines = text.lines();
        let meta = lines.next().ok_or_else(|| bad("empty table".into()))?;
        let meta = meta.strip_prefix("# ").ok_or_else(|| bad("missing metadata line".into()))?;
        let mut scheme = None;
        let mut n_folds = None;
        let mut seed = None;
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("scheme", v)) => scheme = Some(v.parse::<Scheme>().map_err(bad)?),
                Some(("n_folds", v)) => n_folds = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                Some(("seed", v)) => seed = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                _ => return Err(bad(format!("unexpected metadata {kv:?}"))),
            }
        }
        match lines.next() {
            Some("subject_id\tletter\trepetition\tfold") => {}
            _ => return Err(bad("missing column header".into())),
        }
        let n_folds = n_folds.ok_or_else(|| bad("n_folds missing".into()))?;
        let mut fold_of_trial = BTreeMap::new();
        for (ln, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(format!("row {}: expected 4 columns", ln + 3)));
            }
            let letter = Letter::from_str(cols[1]).map_err(bad)?;
            let repetition = cols[2].parse().map_err(|_| bad(format!("row {}: bad repetition", ln + 3)))?;
            let fold: usize = cols[3].parse().map_err(|_| bad(format!("row {}: bad fold", ln + 3)))?;
            if fold >= n_folds {
                return Err(bad(format!("row {}: fold {fold} out of range", ln + 3)));
            }
            let key = TrialKey {
                subject_id: cols[0].to_string(),
                letter,
                repetition,
            };
            if fold_of_trial.insert(key, fold).is_some() {
                return Err(bad(format!("row {}: duplicate trial", ln + 3)));
            }
        }
        Ok(SplitAssignment {
            scheme: scheme.ok_or_else(|| bad("scheme missing".into()))?,
            n_folds,
            seed: seed.ok_or_else(|| bad("seed missing".into()))?,
            fold_of_trial,
        })
    }
}
