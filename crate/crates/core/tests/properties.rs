mod common;

use std::f64::consts::FRAC_PI_2;

use common::brute_force_hint;
use hintreg::losses::{dissimilarity, hint_penalty_batch, hint_penalty_value, Measure, RepresentationBatch};
use hintreg::Tensor;
use proptest::prelude::*;

fn measure() -> impl Strategy<Value = Measure> {
    prop_oneof![Just(Measure::Sed), Just(Measure::Nmd), Just(Measure::As)]
}

/// Representation batch of 1–32 rows over 1–5 classes. Rows keep a norm
/// bounded away from zero so the angular measure is defined.
fn batch() -> impl Strategy<Value = (Tensor, Vec<usize>)> {
    (1usize..=32, 1usize..=8, 1usize..=5).prop_flat_map(|(rows, dim, classes)| {
        (
            prop::collection::vec(-2.0f64..2.0, rows * dim),
            prop::collection::vec(0..classes, rows),
        )
            .prop_map(move |(mut data, labels)| {
                for r in 0..rows {
                    let row = &mut data[r * dim..(r + 1) * dim];
                    if row.iter().map(|x| x * x).sum::<f64>() < 1e-4 {
                        row[0] = 1.0;
                    }
                }
                (Tensor::new(vec![rows, dim], data).unwrap(), labels)
            })
    })
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=12).prop_flat_map(|d| {
        (
            prop::collection::vec(-3.0f64..3.0, d),
            prop::collection::vec(-3.0f64..3.0, d),
        )
    })
}

fn nonzero(v: &[f64]) -> bool {
    v.iter().map(|x| x * x).sum::<f64>() > 1e-6
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn batch_penalty_matches_pair_enumeration((reps, labels) in batch(), m in measure()) {
        let rb = RepresentationBatch::new(&reps, &labels).unwrap();
        let oracle = brute_force_hint(&reps, &labels, m);
        let (value, _) = hint_penalty_batch(&rb, m).unwrap();
        prop_assert!((value - oracle).abs() < 1e-12, "{} vs {}", value, oracle);
        let unordered = hint_penalty_value(&rb, m).unwrap();
        prop_assert!((unordered - oracle).abs() < 1e-12, "{} vs {}", unordered, oracle);
    }

    #[test]
    fn batch_penalty_is_nonnegative((reps, labels) in batch(), m in measure()) {
        let rb = RepresentationBatch::new(&reps, &labels).unwrap();
        prop_assert!(hint_penalty_batch(&rb, m).unwrap().0 >= 0.0);
    }

    #[test]
    fn measures_are_symmetric((a, b) in pair(), m in measure()) {
        prop_assume!(m != Measure::As || (nonzero(&a) && nonzero(&b)));
        let ab = dissimilarity(&a, &b, m).unwrap().value;
        let ba = dissimilarity(&b, &a, m).unwrap().value;
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn measures_are_nonnegative((a, b) in pair(), m in measure()) {
        prop_assume!(m != Measure::As || (nonzero(&a) && nonzero(&b)));
        prop_assert!(dissimilarity(&a, &b, m).unwrap().value >= 0.0);
    }

    #[test]
    fn measures_vanish_at_identity((a, _) in pair(), m in measure()) {
        prop_assume!(m != Measure::As || nonzero(&a));
        prop_assert_eq!(dissimilarity(&a, &a, m).unwrap().value, 0.0);
    }

    #[test]
    fn angle_ignores_positive_scale((a, b) in pair(), s in 1e-3f64..1e3, t in 1e-3f64..1e3) {
        prop_assume!(nonzero(&a) && nonzero(&b));
        let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
        let tb: Vec<f64> = b.iter().map(|x| x * t).collect();
        let base = dissimilarity(&a, &b, Measure::As).unwrap().value;
        let scaled = dissimilarity(&sa, &tb, Measure::As).unwrap().value;
        prop_assert!((base - scaled).abs() < 1e-9, "{} vs {}", base, scaled);
    }

    #[test]
    fn angle_gradient_is_orthogonal_to_its_operand((a, b) in pair()) {
        prop_assume!(nonzero(&a) && nonzero(&b));
        let t = dissimilarity(&a, &b, Measure::As).unwrap();
        let radial: f64 = t.grad_a.iter().zip(&a).map(|(g, x)| g * x).sum();
        let scale = t.grad_a.iter().map(|g| g.abs()).sum::<f64>() * a.iter().map(|x| x.abs()).sum::<f64>();
        prop_assert!(radial.abs() <= 1e-9 * scale.max(1.0));
    }
}

#[test]
fn orthogonal_unit_vectors_are_a_right_angle_apart() {
    let v = dissimilarity(&[1.0, 0.0], &[0.0, 1.0], Measure::As).unwrap().value;
    assert!((v - FRAC_PI_2).abs() < 1e-9);
}
