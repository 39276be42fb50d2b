//! Property tests for the geometric primitives and functionals.

use mftc::ensemble::Ensemble;
use mftc::functionals::{CostFunctional, KernelCost, QuadraticCost};
use mftc::wasserstein::{matching_cost, w2_assignment, w2_sorted_1d, wasserstein2};
use proptest::prelude::*;

fn point_sets(n: usize, dim: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let coord = -5.0..5.0_f64;
    let point = prop::collection::vec(coord, dim);
    (
        prop::collection::vec(point.clone(), n),
        prop::collection::vec(point, n),
    )
}

fn brute_force_w2(a: &Ensemble, b: &Ensemble) -> f64 {
    fn rec(n: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, best: &mut f64, a: &Ensemble, b: &Ensemble) {
        if cur.len() == n {
            *best = best.min(matching_cost(a, b, cur));
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(n, used, cur, best, a, b);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let n = a.len();
    let mut best = f64::INFINITY;
    rec(n, &mut vec![false; n], &mut Vec::new(), &mut best, a, b);
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assignment_is_optimal((rows_a, rows_b) in (1usize..=5, 1usize..=3).prop_flat_map(|(n, d)| point_sets(n, d))) {
        let a = Ensemble::from_rows(&rows_a).unwrap();
        let b = Ensemble::from_rows(&rows_b).unwrap();
        let exact = w2_assignment(&a, &b).unwrap();
        let brute = brute_force_w2(&a, &b);
        prop_assert!((exact - brute).abs() <= 1e-12);
    }

    #[test]
    fn sorted_matching_is_optimal_in_1d((rows_a, rows_b) in (1usize..=6,).prop_flat_map(|(n,)| point_sets(n, 1))) {
        let a = Ensemble::from_rows(&rows_a).unwrap();
        let b = Ensemble::from_rows(&rows_b).unwrap();
        let sorted = w2_sorted_1d(&a, &b).unwrap();
        let exact = w2_assignment(&a, &b).unwrap();
        prop_assert_eq!(sorted.to_bits(), exact.to_bits());
    }

    #[test]
    fn w2_bounded_by_index_coupling((rows_a, rows_b) in (1usize..=6, 1usize..=3).prop_flat_map(|(n, d)| point_sets(n, d))) {
        let a = Ensemble::from_rows(&rows_a).unwrap();
        let b = Ensemble::from_rows(&rows_b).unwrap();
        let w2 = wasserstein2(&a, &b).unwrap().distance;
        prop_assert!(w2 <= a.distance(&b).unwrap() + 1e-12);
    }

    #[test]
    fn inner_product_is_positive_semidefinite(rows in prop::collection::vec(prop::collection::vec(-5.0..5.0_f64, 2), 1..6)) {
        let a = Ensemble::from_rows(&rows).unwrap();
        let quad = a.inner_product(&a).unwrap();
        prop_assert!(quad >= 0.0);
        let zero = rows.iter().all(|r| r.iter().all(|&v| v == 0.0));
        prop_assert_eq!(quad == 0.0, zero);
    }

    #[test]
    fn law_invariance_of_functionals(
        rows in prop::collection::vec(prop::collection::vec(-3.0..3.0_f64, 1), 2..8),
        seed in 0u64..1000,
    ) {
        let x = Ensemble::from_rows(&rows).unwrap();
        // derive a permutation from the seed
        let n = x.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            perm.swap(i, j);
        }
        let xp = x.permute(&perm).unwrap();

        let quad = QuadraticCost::scalar(0.7, 0.4, 1.2).unwrap();
        let kern = KernelCost::gaussian(1, 0.9).unwrap();
        for model in [&quad as &dyn CostFunctional, &kern as &dyn CostFunctional] {
            prop_assert_eq!(model.eval(&x).unwrap().to_bits(), model.eval(&xp).unwrap().to_bits());
            let g = model.grad(&x).unwrap().permute(&perm).unwrap();
            let gp = model.grad(&xp).unwrap();
            prop_assert_eq!(&g, &gp);
        }
        prop_assert_eq!(wasserstein2(&x, &xp).unwrap().distance, 0.0);
    }

    #[test]
    fn lipschitz_certificate_holds(
        rows_a in prop::collection::vec(prop::collection::vec(-4.0..4.0_f64, 2), 3..6),
        rows_b in prop::collection::vec(prop::collection::vec(-4.0..4.0_f64, 2), 3..6),
    ) {
        prop_assume!(rows_a.len() == rows_b.len());
        let a = Ensemble::from_rows(&rows_a).unwrap();
        let b = Ensemble::from_rows(&rows_b).unwrap();
        let model = KernelCost::gaussian(2, 1.3).unwrap();
        let num = model.grad(&a).unwrap().sub(&model.grad(&b).unwrap()).norm();
        prop_assert!(num <= model.lipschitz_constant() * a.distance(&b).unwrap() + 1e-12);
    }
}
