//! k-means++ seeding used as a batch selector.

use rand::Rng;

use super::SelectionError;
use crate::seed::SimRng;

/// How the first centre is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FirstPick {
    /// Uniform over the pool (classic seeding).
    #[default]
    Uniform,
    /// The point with the largest norm, as in BADGE's reference code.
    MaxNorm,
    /// A fixed index.
    Index(usize),
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Returns `k` distinct indices into `points`. After the first pick each draw
/// is proportional to the squared distance to the nearest chosen point. When
/// every remaining point coincides with a chosen one the draw is uniform over
/// the unchosen points.
pub fn kmeanspp_select(
    points: &[Vec<f64>],
    k: usize,
    first: FirstPick,
    rng: &mut SimRng,
) -> Result<Vec<usize>, SelectionError> {
    let n = points.len();
    if k > n {
        return Err(SelectionError::BudgetExceedsPool { k, pool: n });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let first_idx = match first {
        FirstPick::Uniform => rng.random_range(0..n),
        FirstPick::MaxNorm => {
            let norms: Vec<f64> = points.iter().map(|p| p.iter().map(|v| v * v).sum()).collect();
            (0..n)
                .max_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(b.cmp(&a)))
                .expect("non-empty pool")
        }
        FirstPick::Index(i) => {
            if i >= n {
                return Err(SelectionError::IndexOutOfRange { index: i, pool: n });
            }
            i
        }
    };

    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first_idx])).collect();
    chosen.push(first_idx);
    taken[first_idx] = true;
    d2[first_idx] = 0.0;

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_positive = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                last_positive = Some(i);
                acc += w;
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.or(last_positive).expect("positive mass exists")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for (i, p) in points.iter().enumerate() {
            if !taken[i] {
                let d = sq_dist(p, &points[next]);
                if d < d2[i] {
                    d2[i] = d;
                }
            } else {
                d2[i] = 0.0;
            }
        }
    }
    Ok(chosen)
}
