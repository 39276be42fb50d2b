//! Wasserstein-2 distance between equal-weight empirical measures.
//!
//! With equal particle counts the optimal coupling is a matching, so
//! `W2^2 = min_perm (1/N) sum_i |a_i - b_perm(i)|^2`. In one dimension the
//! minimum is attained by matching sorted points; in higher dimension we
//! solve the assignment problem exactly up to [`EXACT_ASSIGNMENT_MAX`]
//! particles and fall back to a flagged upper-bound matching above that.

use crate::ensemble::{stable_sum, Ensemble};
use crate::error::{Error, Result};

/// Largest particle count for which the exact O(N^3) assignment is used.
pub const EXACT_ASSIGNMENT_MAX: usize = 64;

/// Distance plus a flag telling whether the matching was provably optimal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Result {
    pub distance: f64,
    pub exact: bool,
}

fn check_pair(a: &Ensemble, b: &Ensemble) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "W2 needs equal particle counts, got {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "W2 needs equal dimensions, got {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Cost of a matching `i -> perm[i]`, summed canonically so equal matchings
/// produce identical bytes regardless of how they were found.
pub fn matching_cost(a: &Ensemble, b: &Ensemble, perm: &[usize]) -> f64 {
    let mut sq: Vec<f64> = perm
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let d = a.point(i) - b.point(j);
            d.dot(&d)
        })
        .collect();
    (stable_sum(&mut sq) / a.len() as f64).max(0.0).sqrt()
}

fn sorted_order_1d(e: &Ensemble) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..e.len()).collect();
    // value first, original index breaks ties
    idx.sort_by(|&i, &j| {
        e.point(i)[0]
            .total_cmp(&e.point(j)[0])
            .then(i.cmp(&j))
    });
    idx
}

fn sorted_order_lex(e: &Ensemble) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..e.len()).collect();
    idx.sort_by(|&i, &j| {
        let (p, q) = (e.point(i), e.point(j));
        for k in 0..e.dim() {
            match p[k].total_cmp(&q[k]) {
                std::cmp::Ordering::Equal => continue,
                ord => return ord,
            }
        }
        i.cmp(&j)
    });
    idx
}

fn order_to_matching(ord_a: &[usize], ord_b: &[usize]) -> Vec<usize> {
    let mut perm = vec![0usize; ord_a.len()];
    for (ia, ib) in ord_a.iter().zip(ord_b) {
        perm[*ia] = *ib;
    }
    perm
}

/// 1-D matching: sort both ensembles and pair in order.
pub fn w2_sorted_1d(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    check_pair(a, b)?;
    if a.dim() != 1 {
        return Err(Error::shape("sorted matching requires dimension 1"));
    }
    let perm = order_to_matching(&sorted_order_1d(a), &sorted_order_1d(b));
    Ok(matching_cost(a, b, &perm))
}

/// Exact matching via the assignment problem on squared distances.
pub fn w2_assignment(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    let cost = |i: usize, j: usize| {
        let d = a.point(i) - b.point(j);
        d.dot(&d)
    };
    let perm = min_cost_assignment(n, cost);
    Ok(matching_cost(a, b, &perm))
}

/// Index-wise matching after a lexicographic sort of both point sets. Any
/// matching bounds the infimum from above, so this is a valid upper bound;
/// it is exact only in dimension 1.
pub fn w2_sorted_lex_upper_bound(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    check_pair(a, b)?;
    let perm = order_to_matching(&sorted_order_lex(a), &sorted_order_lex(b));
    Ok(matching_cost(a, b, &perm))
}

/// W2 between the empirical laws of `a` and `b`.
///
/// Dispatch: dimension 1 uses sorted matching (exact); otherwise the exact
/// assignment up to [`EXACT_ASSIGNMENT_MAX`] particles, above which the
/// lexicographic upper bound is returned with `exact = false`.
pub fn wasserstein2(a: &Ensemble, b: &Ensemble) -> Result<W2Result> {
    wasserstein2_with_cutoff(a, b, EXACT_ASSIGNMENT_MAX)
}

/// Same as [`wasserstein2`] with an explicit cutoff for the exact
/// assignment.
pub fn wasserstein2_with_cutoff(a: &Ensemble, b: &Ensemble, cutoff: usize) -> Result<W2Result> {
    check_pair(a, b)?;
    if a.dim() == 1 {
        return Ok(W2Result {
            distance: w2_sorted_1d(a, b)?,
            exact: true,
        });
    }
    if a.len() <= cutoff {
        Ok(W2Result {
            distance: w2_assignment(a, b)?,
            exact: true,
        })
    } else {
        Ok(W2Result {
            distance: w2_sorted_lex_upper_bound(a, b)?,
            exact: false,
        })
    }
}

/// Minimum-cost perfect matching on an `n x n` cost matrix (Hungarian
/// algorithm with potentials, shortest augmenting paths, O(n^3)).
/// Returns `perm` with row `i` assigned to column `perm[i]`.
pub fn min_cost_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based arrays; index 0 is the virtual start column/row.
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            perm[matched_row[j] - 1] = j - 1;
        }
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn brute_force_w2(a: &Ensemble, b: &Ensemble) -> f64 {
        fn rec(
            n: usize,
            used: &mut Vec<bool>,
            cur: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if cur.len() == n {
                out.push(cur.clone());
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    cur.push(j);
                    rec(n, used, cur, out);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let n = a.len();
        let mut perms = Vec::new();
        rec(n, &mut vec![false; n], &mut Vec::new(), &mut perms);
        perms
            .into_iter()
            .map(|perm| matching_cost(a, b, &perm))
            .fold(f64::INFINITY, f64::min)
    }

    fn random_ensemble(rng: &mut StdRng, n: usize, dim: usize) -> Ensemble {
        Ensemble::new(
            (0..n)
                .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..2.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn shifted_pair_distance_one() {
        let a = Ensemble::from_scalars(&[0.0, 2.0]).unwrap();
        let b = Ensemble::from_scalars(&[1.0, 3.0]).unwrap();
        assert_eq!(wasserstein2(&a, &b).unwrap().distance, 1.0);
    }

    #[test]
    fn identical_laws_have_zero_distance() {
        let a = Ensemble::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let b = Ensemble::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let r = wasserstein2(&a, &b).unwrap();
        assert_eq!(r.distance, 0.0);
        assert!(r.exact);
    }

    #[test]
    fn permuted_ensemble_distance_zero() {
        let a = Ensemble::from_scalars(&[3.0, -1.5, 0.25]).unwrap();
        let p = a.permute(&[2, 0, 1]).unwrap();
        assert_eq!(wasserstein2(&a, &p).unwrap().distance, 0.0);
    }

    #[test]
    fn count_mismatch_is_shape_error() {
        let a = Ensemble::from_scalars(&[0.0, 1.0]).unwrap();
        let b = Ensemble::from_scalars(&[0.0, 1.0, 2.0]).unwrap();
        assert!(wasserstein2(&a, &b).is_err());
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..60 {
            let n = rng.gen_range(1..=6);
            let dim = rng.gen_range(1..=3);
            let a = random_ensemble(&mut rng, n, dim);
            let b = random_ensemble(&mut rng, n, dim);
            let exact = w2_assignment(&a, &b).unwrap();
            let brute = brute_force_w2(&a, &b);
            assert!(
                (exact - brute).abs() <= 1e-12,
                "assignment {exact} vs brute force {brute}"
            );
        }
    }

    #[test]
    fn sorted_matching_equals_assignment_in_1d() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..60 {
            let n = rng.gen_range(1..=8);
            let a = random_ensemble(&mut rng, n, 1);
            let b = random_ensemble(&mut rng, n, 1);
            let s = w2_sorted_1d(&a, &b).unwrap();
            let h = w2_assignment(&a, &b).unwrap();
            assert_eq!(s.to_bits(), h.to_bits());
        }
    }

    #[test]
    fn index_coupling_bounds_distance() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..40 {
            let n = rng.gen_range(1..=8);
            let dim = rng.gen_range(1..=3);
            let a = random_ensemble(&mut rng, n, dim);
            let b = random_ensemble(&mut rng, n, dim);
            let w2 = wasserstein2(&a, &b).unwrap().distance;
            let index_wise = a.distance(&b).unwrap();
            assert!(w2 <= index_wise + 1e-12);
        }
    }

    #[test]
    fn large_n_falls_back_to_flagged_upper_bound() {
        let mut rng = StdRng::seed_from_u64(5);
        let a = random_ensemble(&mut rng, EXACT_ASSIGNMENT_MAX + 1, 2);
        let b = random_ensemble(&mut rng, EXACT_ASSIGNMENT_MAX + 1, 2);
        let r = wasserstein2(&a, &b).unwrap();
        assert!(!r.exact);
        // still an upper bound of the true distance
        let exact = w2_assignment(&a, &b).unwrap();
        assert!(r.distance >= exact - 1e-12);
    }
}
