/// Exact 1-D Wasserstein-1 distance between two empirical distributions,
/// `∫ |F_a(x) - F_b(x)| dx`, evaluated over the merged order statistics.
/// Sample sizes may differ.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample set");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        prev = x;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    /// Equal sizes: mean distance between matched order statistics.
    fn order_stat_oracle(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn identical_sets_are_zero() {
        let a = [0.3, -1.0, 2.0, 2.0];
        assert_eq!(wasserstein1(&a, &a), 0.0);
    }

    #[test]
    fn point_masses() {
        assert_eq!(wasserstein1(&[0.0], &[2.5]), 2.5);
        // Half the mass moves by 1.
        assert!((wasserstein1(&[0.0, 1.0], &[0.0, 0.0]) - 0.5).abs() < 1e-15);
        // Unequal sizes: {0} vs {-1, 1}.
        assert!((wasserstein1(&[0.0], &[-1.0, 1.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn translation_shifts_by_offset() {
        let mut rng = Rng::new(1);
        let a: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
        assert!((wasserstein1(&a, &b) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_order_statistics(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..60)
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let w = wasserstein1(&a, &b);
            prop_assert!((w - order_stat_oracle(&a, &b)).abs() < 1e-9);
            prop_assert!((w - wasserstein1(&b, &a)).abs() < 1e-12);
        }

        #[test]
        fn triangle_inequality(
            a in prop::collection::vec(-5.0f64..5.0, 1..30),
            b in prop::collection::vec(-5.0f64..5.0, 1..30),
            c in prop::collection::vec(-5.0f64..5.0, 1..30),
        ) {
            let ab = wasserstein1(&a, &b);
            let bc = wasserstein1(&b, &c);
            let ac = wasserstein1(&a, &c);
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
