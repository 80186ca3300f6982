//! Exhaustive grid oracle for tiny hindsight instances.
//!
//! Every item is split on the grid `{j / k}` of the simplex. Enumerating all
//! grid plans is hopeless even at `T = 5, n = 3, k = 50` (about `10^15`
//! plans), so the search is restricted to plans whose agent–item support
//! graph is a forest, which means at most `n − 1` extra split edges beyond one
//! edge per item. Some optimal plan always has this shape: if the support
//! of an optimal plan contains a cycle, the KKT condition `β_i v_τi = max`
//! on its edges makes the value ratios around the cycle multiply to one,
//! so mass can be shifted around the cycle without changing any agent's
//! utility until an edge empties. Rounding the split fractions of that
//! plan to the grid loses at most `(n − 1) v̄ / (k T)` per agent, so the
//! search lower-bounds OPT within `O(v̄ n / k)`.
//!
//! The oracle evaluates welfare values only. It never calls the solver.

use crate::error::{Error, Result};
use crate::instance::ItemSequence;
use crate::welfare::WelfareSpec;

pub const BRUTE_FORCE_MAX_ITEMS: usize = 6;
pub const BRUTE_FORCE_MAX_AGENTS: usize = 3;
pub const BRUTE_FORCE_MAX_GRID: usize = 100;

/// Best grid-plan welfare of the hindsight program (no past utility,
/// divisor `T`).
pub fn brute_force_oracle(spec: &WelfareSpec, items: &ItemSequence, grid_k: usize) -> Result<f64> {
    let n = spec.n();
    let t = items.len();
    if items.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: items.n(),
        });
    }
    if t > BRUTE_FORCE_MAX_ITEMS || n > BRUTE_FORCE_MAX_AGENTS || grid_k > BRUTE_FORCE_MAX_GRID {
        return Err(Error::TooLarge(format!(
            "T={t}, n={n}, grid_k={grid_k}; limits are T<={BRUTE_FORCE_MAX_ITEMS}, n<={BRUTE_FORCE_MAX_AGENTS}, grid_k<={BRUTE_FORCE_MAX_GRID}"
        )));
    }
    if grid_k == 0 || t == 0 {
        return Err(Error::InvalidParameter("need at least one item and grid_k >= 1".into()));
    }

    // Candidate moves per item: (utility increment, extra split edges).
    let splits = split_patterns(n, grid_k);
    let mut moves: Vec<Vec<(Vec<f64>, usize)>> = Vec::with_capacity(t);
    for v in items.rows() {
        let mut options = Vec::new();
        if v.iter().all(|&x| x == 0.0) {
            options.push((vec![0.0; n], 0));
        } else {
            for (fractions, extra) in &splits {
                options.push((fractions.iter().zip(v).map(|(x, v)| x * v / t as f64).collect(), *extra));
            }
        }
        moves.push(options);
    }

    let mut best = f64::NEG_INFINITY;
    let mut u = vec![0.0; n];
    search(spec, &moves, 0, n - 1, &mut u, &mut best);
    Ok(best.exp())
}

fn search(spec: &WelfareSpec, moves: &[Vec<(Vec<f64>, usize)>], depth: usize, budget: usize, u: &mut Vec<f64>, best: &mut f64) {
    if depth == moves.len() {
        let value = spec.log_welfare_unchecked(u);
        if value > *best {
            *best = value;
        }
        return;
    }
    for (delta, extra) in &moves[depth] {
        if *extra > budget {
            continue;
        }
        for (ui, d) in u.iter_mut().zip(delta) {
            *ui += d;
        }
        search(spec, moves, depth + 1, budget - extra, u, best);
        for (ui, d) in u.iter_mut().zip(delta) {
            *ui -= d;
        }
    }
}

/// Every grid point of the simplex `{x : Σx = 1, x_i ∈ {j/k}}` with the
/// number of extra edges it uses (support size minus one).
fn split_patterns(n: usize, k: usize) -> Vec<(Vec<f64>, usize)> {
    let mut out = Vec::new();
    let mut counts = vec![0usize; n];
    compositions(n, k, 0, &mut counts, &mut out);
    out.into_iter()
        .map(|c| {
            let support = c.iter().filter(|&&j| j > 0).count();
            (c.iter().map(|&j| j as f64 / k as f64).collect(), support - 1)
        })
        .collect()
}

fn compositions(n: usize, remaining: usize, i: usize, counts: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if i == n - 1 {
        counts[i] = remaining;
        out.push(counts.clone());
        return;
    }
    for j in (0..=remaining).rev() {
        counts[i] = j;
        compositions(n, remaining - j, i + 1, counts, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn seq(rows: &[&[f64]]) -> ItemSequence {
        ItemSequence::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), 1.0).unwrap()
    }

    #[test]
    fn one_item_equal_split() {
        let spec = WelfareSpec::symmetric(0.0, 2).unwrap();
        let best = brute_force_oracle(&spec, &seq(&[&[1.0, 1.0]]), 100).unwrap();
        assert_relative_eq!(best, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn two_symmetric_items() {
        let spec = WelfareSpec::symmetric(0.0, 2).unwrap();
        let best = brute_force_oracle(&spec, &seq(&[&[1.0, 1.0], &[1.0, 1.0]]), 50).unwrap();
        assert!((best - 0.5).abs() < 0.01);
    }

    #[test]
    fn one_hot_is_exact() {
        let spec = WelfareSpec::symmetric(-1.0, 3).unwrap();
        let c = 0.8;
        let best = brute_force_oracle(&spec, &seq(&[&[c, 0.0, 0.0], &[0.0, c, 0.0], &[0.0, 0.0, c]]), 10).unwrap();
        assert_relative_eq!(best, c / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn patterns_count_extra_edges() {
        let p = split_patterns(3, 4);
        assert_eq!(p.len(), 15);
        assert_eq!(p.iter().filter(|(_, e)| *e == 0).count(), 3);
        assert_eq!(p.iter().filter(|(_, e)| *e == 2).count(), 3);
    }

    /// Unrestricted enumeration agrees with the forest-restricted search
    /// where the former is still affordable.
    #[test]
    fn forest_restriction_loses_nothing_on_small_grids() {
        let spec = WelfareSpec::new(-0.5, vec![0.5, 0.3, 0.2]).unwrap();
        let s = seq(&[&[0.9, 0.2, 0.4], &[0.3, 0.8, 0.1], &[0.5, 0.5, 0.7]]);
        let k = 6;
        let pats = split_patterns(3, k);
        let mut best = f64::NEG_INFINITY;
        for a in &pats {
            for b in &pats {
                for c in &pats {
                    let u: Vec<f64> = (0..3)
                        .map(|i| (a.0[i] * s.row(0)[i] + b.0[i] * s.row(1)[i] + c.0[i] * s.row(2)[i]) / 3.0)
                        .collect();
                    best = best.max(spec.log_welfare_unchecked(&u));
                }
            }
        }
        let oracle = brute_force_oracle(&spec, &s, k).unwrap();
        assert!(oracle <= best.exp() + 1e-15);
        // The forest search may miss grid plans but not by more than the
        // grid resolution.
        assert!(best.exp() - oracle < 0.9 * 2.0 / (k as f64 * 3.0));
    }

    #[test]
    fn limits() {
        let spec = WelfareSpec::symmetric(0.0, 2).unwrap();
        let big = ItemSequence::from_flat(vec![0.5; 14], 2, 1.0).unwrap();
        assert!(matches!(brute_force_oracle(&spec, &big, 10), Err(Error::TooLarge(_))));
    }
}
