//! Ordinal agreement: discretized regression scores and quadratic weighted
//! kappa over the five severity levels.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataio::{image_path, load_unit, ManifestRecord, NUM_LEVELS};
use crate::error::{Error, Result};
use crate::network::Checkpoint;

pub const THRESHOLDS: [f64; 4] = [0.5, 1.5, 2.5, 3.5];

/// Number of thresholds at or below `score`, so `0.5 → 1` and `5.06 → 4`.
pub fn discretize(score: f64) -> Result<u8> {
    if score.is_nan() {
        return Err(Error::numeric("cannot discretize NaN score"));
    }
    Ok(THRESHOLDS.iter().filter(|&&t| score >= t).count() as u8)
}

/// `confusion[truth][pred]`.
pub fn confusion_matrix(truth: &[u8], pred: &[u8]) -> Result<[[u64; NUM_LEVELS]; NUM_LEVELS]> {
    if truth.len() != pred.len() {
        return Err(Error::usage(format!("rating lengths differ: {} vs {}", truth.len(), pred.len())));
    }
    if truth.is_empty() {
        return Err(Error::usage("kappa needs at least one rating pair"));
    }
    let mut m = [[0u64; NUM_LEVELS]; NUM_LEVELS];
    for (&t, &p) in truth.iter().zip(pred) {
        if t as usize >= NUM_LEVELS || p as usize >= NUM_LEVELS {
            return Err(Error::usage(format!("rating out of range 0..{}: ({t}, {p})", NUM_LEVELS - 1)));
        }
        m[t as usize][p as usize] += 1;
    }
    Ok(m)
}

/// Kappa from a confusion matrix.
pub fn kappa_from_confusion(m: &[[u64; NUM_LEVELS]; NUM_LEVELS]) -> Result<f64> {
    let n: u64 = m.iter().flatten().sum();
    if n == 0 {
        return Err(Error::usage("empty confusion matrix"));
    }
    let rows: Vec<f64> = m.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..NUM_LEVELS).map(|j| m.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let denom = ((NUM_LEVELS - 1) * (NUM_LEVELS - 1)) as f64;
    let (mut observed, mut expected) = (0.0f64, 0.0f64);
    let mut identical = true;
    for i in 0..NUM_LEVELS {
        for j in 0..NUM_LEVELS {
            let w = ((i as f64 - j as f64).powi(2)) / denom;
            let e = rows[i] * cols[j] / n as f64;
            observed += w * m[i][j] as f64;
            expected += w * e;
            identical &= m[i][j] as f64 == e;
        }
    }
    if expected == 0.0 {
        return if identical {
            Ok(1.0)
        } else {
            Err(Error::UndefinedKappa("both raters are constant but disagree".into()))
        };
    }
    Ok(1.0 - observed / expected)
}

pub fn quadratic_weighted_kappa(truth: &[u8], pred: &[u8]) -> Result<f64> {
    kappa_from_confusion(&confusion_matrix(truth, pred)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KappaReport {
    /// Rows are ground truth, columns predictions.
    pub confusion: [[u64; NUM_LEVELS]; NUM_LEVELS],
    pub kappa: f64,
    pub n: u64,
    /// Records that could not be scored, with the reason.
    pub failures: Vec<(String, String)>,
}

impl KappaReport {
    pub fn from_ratings(truth: &[u8], pred: &[u8]) -> Result<Self> {
        let confusion = confusion_matrix(truth, pred)?;
        Ok(KappaReport { confusion, kappa: kappa_from_confusion(&confusion)?, n: truth.len() as u64, failures: Vec::new() })
    }

    pub fn class_counts(&self) -> [u64; NUM_LEVELS] {
        std::array::from_fn(|i| self.confusion[i].iter().sum())
    }
}

impl fmt::Display for KappaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n {}", self.n)?;
        writeln!(f, "kappa {:.6}", self.kappa)?;
        writeln!(f, "confusion rows=truth cols=pred")?;
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        for (id, why) in &self.failures {
            writeln!(f, "failed {id}: {why}")?;
        }
        Ok(())
    }
}

/// Scores every record with the checkpoint's network. Unreadable images are
/// listed in the report instead of aborting.
pub fn evaluate(checkpoint: &Checkpoint, records: &[ManifestRecord], root: impl AsRef<Path>) -> Result<KappaReport> {
    if records.is_empty() {
        return Err(Error::usage("manifest is empty"));
    }
    let network = checkpoint.to_network::<f32>()?;
    let resolution = checkpoint.meta.resolution;
    if resolution as usize != network.input_size() {
        return Err(Error::config(format!(
            "checkpoint resolution {resolution} differs from network input {}",
            network.input_size()
        )));
    }
    let root: PathBuf = root.as_ref().to_path_buf();
    let scored: Vec<std::result::Result<u8, String>> = records
        .par_iter()
        .map(|r| {
            let (mut img, _) =
                image_path(&root, &r.image_id).and_then(|p| load_unit(p, resolution)).map_err(|e| e.to_string())?;
            checkpoint.meta.stats.standardize(&mut img);
            let y = network.predict(&img).map_err(|e| e.to_string())?;
            discretize(y as f64).map_err(|e| e.to_string())
        })
        .collect();
    let (mut truth, mut pred, mut failures) = (Vec::new(), Vec::new(), Vec::new());
    for (r, s) in records.iter().zip(scored) {
        match s {
            Ok(p) => {
                truth.push(r.level);
                pred.push(p);
            }
            Err(e) => failures.push((r.image_id.clone(), e)),
        }
    }
    if truth.is_empty() {
        return Err(Error::Data { path: root, message: format!("no record could be scored ({} failures)", failures.len()) });
    }
    let mut report = KappaReport::from_ratings(&truth, &pred)?;
    report.failures = failures;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Independent formula: per-pair weights and rater histograms, no
    /// confusion matrix.
    fn brute_kappa(a: &[u8], b: &[u8]) -> f64 {
        let n = a.len() as f64;
        let w = |i: u8, j: u8| (i as f64 - j as f64).powi(2) / 16.0;
        let observed: f64 = a.iter().zip(b).map(|(&i, &j)| w(i, j)).sum();
        let mut expected = 0.0;
        for &i in a {
            for &j in b {
                expected += w(i, j);
            }
        }
        1.0 - observed / (expected / n)
    }

    #[test]
    fn discretize_examples() {
        assert_eq!(discretize(0.49).unwrap(), 0);
        assert_eq!(discretize(0.5).unwrap(), 1);
        assert_eq!(discretize(5.06).unwrap(), 4);
        assert_eq!(discretize(-0.3).unwrap(), 0);
        assert_eq!(discretize(3.5).unwrap(), 4);
        assert!(discretize(f64::NAN).is_err());
        assert_eq!(discretize(f64::INFINITY).unwrap(), 4);
    }

    #[test]
    fn opposite_extremes_give_minus_one() {
        assert_eq!(quadratic_weighted_kappa(&[0, 4], &[4, 0]).unwrap(), -1.0);
    }

    #[test]
    fn perfect_agreement_is_one() {
        assert_eq!(quadratic_weighted_kappa(&[0, 1, 2, 3, 4, 2], &[0, 1, 2, 3, 4, 2]).unwrap(), 1.0);
    }

    #[test]
    fn constant_raters() {
        assert_eq!(quadratic_weighted_kappa(&[2], &[2]).unwrap(), 1.0);
        assert_eq!(quadratic_weighted_kappa(&[1, 1], &[1, 1]).unwrap(), 1.0);
        // disagreeing constants still have positive expected disagreement
        assert_eq!(quadratic_weighted_kappa(&[1, 1], &[3, 3]).unwrap(), 0.0);
    }

    #[test]
    fn matches_brute_force_on_random_ratings() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let a: Vec<u8> = (0..1000).map(|_| rng.random_range(0..5)).collect();
            let b: Vec<u8> = (0..1000).map(|_| rng.random_range(0..5)).collect();
            let k = quadratic_weighted_kappa(&a, &b).unwrap();
            assert!((k - brute_kappa(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn all_zero_predictions_on_mixed_truth() {
        let truth = [0, 1, 2, 3, 4, 0, 0];
        let pred = [0; 7];
        // one constant rater: expected disagreement is positive, kappa is 0
        let k = quadratic_weighted_kappa(&truth, &pred).unwrap();
        assert!(k.abs() < 1e-12, "{k}");
        assert!((k - brute_kappa(&truth, &pred)).abs() < 1e-12);
    }

    #[test]
    fn report_text_block() {
        let r = KappaReport::from_ratings(&[0, 1, 1], &[0, 1, 2]).unwrap();
        let text = r.to_string();
        assert!(text.starts_with("n 3\nkappa "));
        assert_eq!(text.lines().count(), 3 + NUM_LEVELS);
        assert_eq!(r.class_counts(), [1, 2, 0, 0, 0]);
    }

    #[test]
    fn mismatched_or_empty_inputs_rejected() {
        assert!(quadratic_weighted_kappa(&[], &[]).is_err());
        assert!(quadratic_weighted_kappa(&[1], &[1, 2]).is_err());
        assert!(quadratic_weighted_kappa(&[5], &[1]).is_err());
    }

    fn ratings() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (2usize..60).prop_flat_map(|n| (prop::collection::vec(0u8..5, n), prop::collection::vec(0u8..5, n)))
    }

    proptest! {
        #[test]
        fn kappa_in_range_and_order_invariant((a, b) in ratings(), seed in any::<u64>()) {
            if let Ok(k) = quadratic_weighted_kappa(&a, &b) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k));
                let mut idx: Vec<usize> = (0..a.len()).collect();
                use rand::seq::SliceRandom;
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                let pa: Vec<u8> = idx.iter().map(|&i| a[i]).collect();
                let pb: Vec<u8> = idx.iter().map(|&i| b[i]).collect();
                prop_assert!((quadratic_weighted_kappa(&pa, &pb).unwrap() - k).abs() < 1e-12);
            }
        }

        #[test]
        fn self_agreement_is_one(a in prop::collection::vec(0u8..5, 2..60)) {
            prop_assume!(a.iter().any(|&v| v != a[0]));
            prop_assert_eq!(quadratic_weighted_kappa(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn discretize_is_monotone(x in -10.0f64..10.0, d in 0.0f64..5.0) {
            prop_assert!(discretize(x).unwrap() <= discretize(x + d).unwrap());
        }
    }
}
