use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECALL_KS: [usize; 5] = [1, 2, 3, 5, 10];

/// Fraction of pairs whose true-text similarity strictly exceeds the
/// shuffled-text similarity. Ties count as failures.
pub fn car_from_similarities(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::NoMultiEvent);
    }
    let wins = pairs.iter().filter(|(t, s)| t > s).count();
    Ok(wins as f64 / pairs.len() as f64)
}

/// Position of candidate `c` when row `q` is sorted by descending similarity
/// with ties going to the lower candidate index.
pub fn rank_of(sim: &Array2<f64>, q: usize, c: usize) -> usize {
    let target = sim[[q, c]];
    1 + sim
        .row(q)
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < c))
        .count()
}

/// Rank of the designated correct candidate for every query row.
pub fn rank_all(sim: &Array2<f64>, correct: &[usize]) -> Result<Vec<usize>> {
    if correct.len() != sim.nrows() {
        return Err(Error::shape("correct indices", sim.nrows(), correct.len()));
    }
    if let Some(&bad) = correct.iter().find(|&&c| c >= sim.ncols()) {
        return Err(Error::shape("correct index", format!("< {}", sim.ncols()), bad));
    }
    Ok(correct.iter().enumerate().map(|(q, &c)| rank_of(sim, q, c)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r5: f64,
    pub r10: f64,
    pub medr: f64,
    #[serde(rename = "n_ranked")]
    pub n_queries: usize,
}

impl RankSummary {
    pub fn recall(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.r1),
            2 => Some(self.r2),
            3 => Some(self.r3),
            5 => Some(self.r5),
            10 => Some(self.r10),
            _ => None,
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn report(ranks: &[usize]) -> Result<RankSummary> {
    if ranks.is_empty() {
        return Err(Error::EmptyInput("rank list"));
    }
    let n = ranks.len() as f64;
    let at = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let as_f: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
    Ok(RankSummary {
        r1: at(1),
        r2: at(2),
        r3: at(3),
        r5: at(5),
        r10: at(10),
        medr: median(&as_f),
        n_queries: ranks.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn report_examples() {
        let r = report(&[1, 1, 3, 7]).unwrap();
        assert_eq!((r.r1, r.r5, r.medr), (50.0, 75.0, 2.0));
        assert_eq!(report(&[4]).unwrap().medr, 4.0);
        let r = report(&[1, 1, 1]).unwrap();
        assert_eq!((r.r1, r.medr), (100.0, 1.0));
    }

    #[test]
    fn rank_examples() {
        let sim = array![[0.9, 0.1, 0.2], [0.5, 0.5, 0.5]];
        assert_eq!(rank_all(&sim, &[0, 2]).unwrap(), vec![1, 3]);
        let worst = Array2::from_shape_fn((1, 10), |(_, j)| 10.0 - j as f64);
        assert_eq!(rank_all(&worst, &[9]).unwrap(), vec![10]);
    }

    #[test]
    fn car_examples() {
        assert_eq!(car_from_similarities(&[(0.8, 0.3); 4]).unwrap(), 1.0);
        assert_eq!(car_from_similarities(&[(0.5, 0.5); 4]).unwrap(), 0.0);
        assert!(matches!(car_from_similarities(&[]), Err(Error::NoMultiEvent)));
    }
}
