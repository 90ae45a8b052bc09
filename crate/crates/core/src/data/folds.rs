//! Leave-one-session-out folds.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::manifest::{Corpus, Emotion};
use crate::error::{Result, SerError};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    /// 1-based; also the test session.
    pub fold_index: u8,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Splits `total` into per-class quotas proportional to `counts` using the
/// largest-remainder rule, so the quotas sum to exactly `total`.
fn apportion(counts: &[usize], fraction: f64) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let total = (fraction * n as f64).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // Largest fractional part first; ties broken by class index.
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = total.saturating_sub(quota.iter().sum());
    for &k in order.iter().cycle().take(counts.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quota[k] < counts[k] {
            quota[k] += 1;
            remaining -= 1;
        }
    }
    quota
}

/// Fold `k` tests on session `k`. The validation set is a class-stratified
/// random `validation_fraction` of the other four sessions.
pub fn make_session_folds(
    corpus: &Corpus,
    validation_fraction: f64,
    seed: u64,
) -> Result<Vec<FoldSplit>> {
    if !(validation_fraction > 0.0 && validation_fraction < 0.5) {
        return Err(SerError::InvalidArgument(format!(
            "validation_fraction {validation_fraction} not in (0, 0.5)"
        )));
    }
    for s in 1..=5u8 {
        if !corpus.records.iter().any(|r| r.session == s) {
            return Err(SerError::Validation(format!("session {s} absent from corpus")));
        }
    }
    let mut folds = Vec::with_capacity(5);
    for test_session in 1..=5u8 {
        let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); Emotion::COUNT];
        let mut test_ids = Vec::new();
        for r in &corpus.records {
            if r.session == test_session {
                test_ids.push(r.id.clone());
            } else {
                by_class[r.emotion.index()].push(r.id.as_str());
            }
        }
        let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let quotas = apportion(&counts, validation_fraction);
        let mut rng = rng_for(seed, &[stream::FOLDS, test_session as u64]);
        let mut validation = std::collections::HashSet::new();
        for (ids, &q) in by_class.iter_mut().zip(&quotas) {
            ids.shuffle(&mut rng);
            validation.extend(ids[..q].iter().copied());
        }
        let mut train_ids = Vec::new();
        let mut validation_ids = Vec::new();
        for r in corpus.records.iter().filter(|r| r.session != test_session) {
            if validation.contains(r.id.as_str()) {
                validation_ids.push(r.id.clone());
            } else {
                train_ids.push(r.id.clone());
            }
        }
        folds.push(FoldSplit {
            fold_index: test_session,
            train_ids,
            validation_ids,
            test_ids,
        });
    }
    Ok(folds)
}
