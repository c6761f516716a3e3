use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const IMPROVEMENT_EPS: f64 = 1e-12;

/// `1 - cosine` between every pair of rows.
pub fn dissimilarity_matrix(embeddings: &[Array1<f64>]) -> Result<Array2<f64>> {
    let units: Vec<Array1<f64>> = embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let n = e.dot(e).sqrt();
            if n > 0.0 {
                Ok(e / n)
            } else {
                Err(Error::ZeroNorm(format!("text {i}")))
            }
        })
        .collect::<Result<_>>()?;
    let n = units.len();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 - units[i].dot(&units[j]) }))
}

pub fn subset_objective(dis: &Array2<f64>, subset: &[usize]) -> f64 {
    let mut total = 0.0;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            total += dis[[i, j]];
        }
    }
    total
}

fn greedy(dis: &Array2<f64>, m: usize, start: usize) -> Vec<usize> {
    let n = dis.nrows();
    let mut chosen = vec![start];
    let mut in_set = vec![false; n];
    in_set[start] = true;
    let mut gain: Vec<f64> = (0..n).map(|k| dis[[start, k]]).collect();
    while chosen.len() < m {
        let next = (0..n)
            .filter(|&k| !in_set[k])
            .max_by(|&a, &b| gain[a].total_cmp(&gain[b]).then(b.cmp(&a)))
            .expect("m <= n");
        in_set[next] = true;
        chosen.push(next);
        for k in 0..n {
            gain[k] += dis[[next, k]];
        }
    }
    chosen
}

/// Best-improvement single exchanges until none increases the objective.
fn local_search(dis: &Array2<f64>, subset: &mut Vec<usize>) {
    let n = dis.nrows();
    loop {
        let mut in_set = vec![false; n];
        for &i in subset.iter() {
            in_set[i] = true;
        }
        let contrib: Vec<f64> = (0..n).map(|k| subset.iter().map(|&i| dis[[i, k]]).sum()).collect();
        let mut best = (IMPROVEMENT_EPS, None);
        for (pos, &out) in subset.iter().enumerate() {
            for cand in (0..n).filter(|&k| !in_set[k]) {
                let delta = contrib[cand] - dis[[out, cand]] - contrib[out];
                if delta > best.0 {
                    best = (delta, Some((pos, cand)));
                }
            }
        }
        match best.1 {
            Some((pos, cand)) => subset[pos] = cand,
            None => return,
        }
    }
}

/// Largest single-exchange improvement available; `<= 0` means the subset
/// is 1-swap locally optimal.
pub fn best_swap_gain(dis: &Array2<f64>, subset: &[usize]) -> f64 {
    let base = subset_objective(dis, subset);
    let mut best = f64::NEG_INFINITY;
    for pos in 0..subset.len() {
        for cand in (0..dis.nrows()).filter(|k| !subset.contains(k)) {
            let mut s = subset.to_vec();
            s[pos] = cand;
            best = best.max(subset_objective(dis, &s) - base);
        }
    }
    best
}

/// Approximately maximises the summed pairwise dissimilarity of an
/// `m`-subset: farthest-point greedy from several starts, each polished by
/// 1-swap local search. Indices are returned sorted.
pub fn dissimilar_subset(embeddings: &[Array1<f64>], m: usize, restarts: usize, seed: u64) -> Result<Vec<usize>> {
    let n = embeddings.len();
    if m > n {
        return Err(Error::SubsetTooLarge { m, n });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if m == n {
        return Ok((0..n).collect());
    }
    let dis = dissimilarity_matrix(embeddings)?;
    let mut starts: Vec<usize> = (0..n).collect();
    let mut r: Rng = rng::seeded(seed, &[]);
    starts.shuffle(&mut r);
    starts.truncate(restarts.max(1));
    let mut best: Option<(f64, Vec<usize>)> = None;
    for start in starts {
        let mut s = greedy(&dis, m, start);
        local_search(&dis, &mut s);
        s.sort_unstable();
        let obj = subset_objective(&dis, &s);
        if best.as_ref().is_none_or(|(b, _)| obj > *b + IMPROVEMENT_EPS) {
            best = Some((obj, s));
        }
    }
    Ok(best.expect("at least one start").1)
}
