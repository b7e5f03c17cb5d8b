use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::trial_store::{Letter, N_CLASSES};

/// 26×26 counts, rows are true letters and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; N_CLASSES]; N_CLASSES],
        }
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn off_diagonal(&self) -> u64 {
        self.total() - self.correct()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.correct() as f64 / t as f64,
        }
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.counts.iter().flatten().max().map_or(1, |m| m.to_string().len()).max(1);
        write!(f, "  ")?;
        for l in Letter::all() {
            write!(f, " {:>width$}", l.as_char())?;
        }
        writeln!(f)?;
        for (l, row) in Letter::all().zip(&self.counts) {
            write!(f, "{} ", l.as_char())?;
            for c in row {
                write!(f, " {c:>width$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn confusion_matrix(true_labels: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix, EvalError> {
    if true_labels.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            left: true_labels.len(),
            right: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in true_labels.iter().zip(predicted) {
        if t >= N_CLASSES || p >= N_CLASSES {
            return Err(EvalError::BadLabel(t.max(p)));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusablePair {
    pub first: Letter,
    pub second: Letter,
    pub count: u64,
    /// Share of all off-diagonal mass, in percent.
    pub percent: f64,
}

/// The `k` unordered letter pairs carrying the most mutual confusion.
/// Ties are broken alphabetically; pairs never confused are not listed.
pub fn top_confusable_pairs(cm: &ConfusionMatrix, k: usize) -> Result<Vec<ConfusablePair>, EvalError> {
    let off = cm.off_diagonal();
    if off == 0 {
        return Err(EvalError::NoErrors);
    }
    let mut pairs = Vec::new();
    for i in 0..N_CLASSES {
        for j in i + 1..N_CLASSES {
            let count = cm.counts[i][j] + cm.counts[j][i];
            if count > 0 {
                pairs.push((count, i, j));
            }
        }
    }
    // (i, j) ascending is alphabetical order for the tie break
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    Ok(pairs
        .into_iter()
        .take(k)
        .map(|(count, i, j)| ConfusablePair {
            first: Letter::from_index(i).unwrap(),
            second: Letter::from_index(j).unwrap(),
            count,
            percent: 100.0 * count as f64 / off as f64,
        })
        .collect())
}

/// Mean and population standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `"0.60 ± 0.014"`: mean to two decimals, deviation to three.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.3}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn idx(c: char) -> usize {
        Letter::from_char(c).unwrap().index()
    }

    #[test]
    fn perfect_predictions() {
        let labels: Vec<usize> = (0..26).chain(0..26).collect();
        let cm = confusion_matrix(&labels, &labels).unwrap();
        assert_eq!(cm.accuracy(), 1.0);
        for i in 0..26 {
            assert_eq!(cm.counts[i][i], 2);
        }
        assert!(matches!(top_confusable_pairs(&cm, 5), Err(EvalError::NoErrors)));
    }

    #[test]
    fn everything_predicted_a() {
        let labels: Vec<usize> = (0..26).collect();
        let cm = confusion_matrix(&labels, &[0; 26]).unwrap();
        assert!((cm.accuracy() - 1.0 / 26.0).abs() < 1e-15);
        assert!(cm.counts.iter().all(|r| r[0] == 1));
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(confusion_matrix(&[0, 1], &[0]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(confusion_matrix(&[26], &[0]), Err(EvalError::BadLabel(26))));
    }

    #[test]
    fn matches_brute_force_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Vec<usize> = (0..500).map(|_| rng.random_range(0..26)).collect();
        let p: Vec<usize> = (0..500).map(|_| rng.random_range(0..26)).collect();
        let cm = confusion_matrix(&t, &p).unwrap();
        for i in 0..26 {
            for j in 0..26 {
                let n = t.iter().zip(&p).filter(|(a, b)| **a == i && **b == j).count() as u64;
                assert_eq!(cm.counts[i][j], n);
            }
            let row: u64 = cm.counts[i].iter().sum();
            assert_eq!(row, t.iter().filter(|&&a| a == i).count() as u64);
        }
        assert_eq!(cm.total(), 500);
    }

    #[test]
    fn tie_broken_alphabetically() {
        let mut cm = ConfusionMatrix::default();
        cm.counts[idx('D')][idx('P')] = 3;
        cm.counts[idx('P')][idx('D')] = 2;
        cm.counts[idx('N')][idx('W')] = 5;
        let pairs = top_confusable_pairs(&cm, 5).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!((pairs[0].first.as_char(), pairs[0].second.as_char()), ('D', 'P'));
        assert_eq!((pairs[1].first.as_char(), pairs[1].second.as_char()), ('N', 'W'));
        assert_eq!(pairs[0].percent, 50.0);
        assert_eq!(pairs[1].percent, 50.0);
    }

    #[test]
    fn pairs_match_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cm = ConfusionMatrix::default();
        for row in cm.counts.iter_mut() {
            for c in row.iter_mut() {
                *c = rng.random_range(0..20);
            }
        }
        let top = top_confusable_pairs(&cm, 10).unwrap();
        let off: u64 = (0..26).flat_map(|i| (0..26).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| cm.counts[i][j]).sum();
        let mut all = Vec::new();
        for i in 0..26 {
            for j in 0..26 {
                if i < j {
                    all.push((cm.counts[i][j] + cm.counts[j][i], i, j));
                }
            }
        }
        for p in &top {
            let (i, j) = (p.first.index(), p.second.index());
            let score = cm.counts[i][j] + cm.counts[j][i];
            assert_eq!(p.count, score);
            assert!((p.percent - 100.0 * score as f64 / off as f64).abs() < 1e-12);
            // no unlisted pair beats a listed one
            let better = all
                .iter()
                .filter(|(s, a, b)| *s > score || (*s == score && (*a, *b) < (i, j)))
                .count();
            assert!(better < top.len());
        }
        assert!(top.windows(2).all(|w| w[0].count >= w[1].count));
    }

    #[test]
    fn fold_summary_format() {
        let (m, s) = mean_and_std(&[0.6, 0.62, 0.58, 0.61, 0.59]);
        assert!((m - 0.6).abs() < 1e-12);
        assert!((s - 0.0002f64.sqrt()).abs() < 1e-12);
        assert_eq!(format_mean_std(m, s), "0.60 ± 0.014");
        assert_eq!(format_mean_std(1.0, 0.0), "1.00 ± 0.000");
    }

    #[test]
    fn grid_renders_every_row() {
        let cm = ConfusionMatrix::default();
        assert_eq!(cm.to_string().lines().count(), 27);
    }
}
