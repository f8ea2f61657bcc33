//! Cross-validated selection of k for a single KNN regressor.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{running_mean, IndexKind, KnnError, NeighborIndex, Result};
use crate::data::Dataset;

/// Outcome of [`tune_k`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_k: usize,
    /// `(k, mean fold MSE)` for every distinct candidate, ascending in k.
    pub cv_mse: Vec<(usize, f64)>,
}

/// Shuffles `0..n` with `rng` and deals it into `folds` contiguous chunks
/// whose sizes differ by at most one. Returns the row indices of each fold.
pub fn kfold_assignments<R: Rng + ?Sized>(n: usize, folds: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Picks the candidate k with the lowest mean cross-validated MSE; ties go to
/// the smaller k.
///
/// `train` is used as given, so callers standardize it first. Each held-out
/// row queries its fold's complement once with the largest candidate and the
/// smaller candidates reuse prefixes of that neighbor list.
pub fn tune_k<R: Rng + ?Sized>(
    train: &Dataset,
    candidate_ks: &[usize],
    folds: usize,
    rng: &mut R,
) -> Result<TuneResult> {
    let mut ks: Vec<usize> = candidate_ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(KnnError::NoCandidates);
    }
    if ks[0] == 0 {
        return Err(KnnError::ZeroK);
    }
    if folds < 2 {
        return Err(KnnError::TooFewFolds(folds));
    }
    let n = train.n_rows();
    if n < folds {
        return Err(KnnError::NotEnoughRows { rows: n, folds });
    }
    if ks.len() == 1 {
        return Ok(TuneResult {
            best_k: ks[0],
            cv_mse: vec![(ks[0], f64::NAN)],
        });
    }

    let k_max = *ks.last().unwrap();
    let dim = train.n_cols();
    let assignment = kfold_assignments(n, folds, rng);
    let mut in_fold = vec![0usize; n];
    for (f, rows) in assignment.iter().enumerate() {
        for &r in rows {
            in_fold[r] = f;
        }
    }

    let mut fold_mse_sum = vec![0.0; ks.len()];
    for (f, held_out) in assignment.iter().enumerate() {
        let fit_rows: Vec<usize> = (0..n).filter(|&r| in_fold[r] != f).collect();
        let mut pts = Vec::with_capacity(fit_rows.len() * dim);
        for &r in &fit_rows {
            pts.extend_from_slice(train.row(r));
        }
        let targets: Vec<f64> = fit_rows.iter().map(|&r| train.target()[r]).collect();
        let index = NeighborIndex::build(pts, dim, fit_rows, IndexKind::Auto)?;

        let mut sse = vec![0.0; ks.len()];
        for &r in held_out {
            let nn = index.query_candidates(train.row(r), k_max)?;
            let y = train.target()[r];
            for (slot, &k) in ks.iter().enumerate() {
                let take = k.min(nn.len());
                let pred = running_mean(nn[..take].iter().map(|c| targets[c.pos]));
                sse[slot] += (y - pred) * (y - pred);
            }
        }
        for (acc, s) in fold_mse_sum.iter_mut().zip(sse) {
            *acc += s / held_out.len() as f64;
        }
    }

    let cv_mse: Vec<(usize, f64)> = ks
        .iter()
        .zip(fold_mse_sum)
        .map(|(&k, s)| (k, s / folds as f64))
        .collect();
    let mut best = cv_mse[0];
    for &c in &cv_mse[1..] {
        if c.1 < best.1 {
            best = c;
        }
    }
    Ok(TuneResult {
        best_k: best.0,
        cv_mse,
    })
}
