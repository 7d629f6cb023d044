//! Properties of prediction, metrics, diagnostics and embedding export.

use lacon::eval::{
    compute_metrics, confusion, diagnostics, export_embeddings, imbalance_f1, import_embeddings, matthews_multiclass, predict,
};
use lacon::math::l2_normalize;
use lacon::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            l2_normalize(&v).unwrap()
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

#[test]
fn spectrum_matches_frobenius_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let (n, c, d) = (rng.gen_range(1..=8), rng.gen_range(2..=5), rng.gen_range(2..=6));
        let h = unit_rows(&mut rng, n, d);
        let l = unit_rows(&mut rng, c, d);
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let r = diagnostics(&h, &l, &y, 0.1).unwrap();
        let a = h.matmul(&l.transpose()).unwrap();
        let fro2 = a.frobenius_norm().powi(2);
        let s2: f64 = r.singular_values.iter().map(|s| s * s).sum();
        assert!((s2 - fro2).abs() < 1e-9, "{s2} vs {fro2}");
        assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.singular_values.iter().all(|&s| s >= 0.0));
        assert_eq!(r.sigma_max, r.singular_values[0]);

        let mean_pos: f64 = (0..n).map(|i| a.get(i, y[i])).sum::<f64>() / n as f64;
        assert!((r.alignment - (2.0 - 2.0 * mean_pos)).abs() < 1e-12);
        assert_eq!(r.bound_held, r.entry_sum >= r.sigma_max);
    }
}

#[test]
fn uniformity_matches_direct_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = unit_rows(&mut rng, 4, 3);
    let l = unit_rows(&mut rng, 2, 3);
    let r = diagnostics(&h, &l, &[0, 1, 0, 1], 0.2).unwrap();
    let mut acc = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                let d2: f64 = h.row(i).iter().zip(h.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                acc += (-2.0 * d2).exp();
            }
        }
    }
    assert!((r.uniformity.unwrap() - (acc / 12.0).ln()).abs() < 1e-12);
}

#[test]
fn imbalance_report_names_minority() {
    let golds = [0, 0, 0, 0, 1, 1];
    let preds = [0, 0, 0, 1, 1, 0];
    let m = compute_metrics(&golds, &preds, 2).unwrap();
    let r = imbalance_f1(&m, &[160, 32]).unwrap();
    assert_eq!(imbalance_f1(&m, &[10, 40]).unwrap().minority_class, 0);
    assert_eq!(r.minority_class, 1);
    assert_eq!(r.minority_f1, m.per_class_f1[1]);
    assert_eq!(r.majority_f1, m.per_class_f1[0]);
}

fn labels_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..6).prop_flat_map(|c| (Just(c), prop::collection::vec((0..c, 0..c), 1..60)))
}

proptest! {
    #[test]
    fn accuracy_is_frequency_weighted_recall((c, pairs) in labels_strategy()) {
        let golds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let preds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = compute_metrics(&golds, &preds, c).unwrap();
        let conf = confusion(&golds, &preds, c).unwrap();
        let n = golds.len() as f64;
        let weighted: f64 = (0..c)
            .map(|k| {
                let support = conf[k].iter().sum::<usize>() as f64;
                if support == 0.0 { 0.0 } else { (support / n) * (conf[k][k] as f64 / support) }
            })
            .sum();
        prop_assert!((m.accuracy - weighted).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&m.matthews));
        prop_assert!((0.0..=1.0).contains(&m.macro_f1));
        prop_assert_eq!(m.per_class_f1.len(), c);
    }

    #[test]
    fn binary_matthews_matches_multiclass_form(pairs in prop::collection::vec((0usize..2, 0usize..2), 1..80)) {
        let golds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let preds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = compute_metrics(&golds, &preds, 2).unwrap();
        let general = matthews_multiclass(&confusion(&golds, &preds, 2).unwrap());
        prop_assert!((m.matthews - general).abs() < 1e-12);
    }

    #[test]
    fn prediction_ignores_positive_rescaling(
        h in prop::collection::vec(-1.0f64..1.0, 4),
        l in prop::collection::vec(-1.0f64..1.0, 12),
        scale in 1e-3f64..1e3,
    ) {
        prop_assume!(h.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let lm = Matrix::new(3, 4, l).unwrap();
        prop_assume!(lm.row_iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-6));
        let base = predict(&h, &lm).unwrap();
        let scaled: Vec<f64> = h.iter().map(|v| v * scale).collect();
        let again = predict(&scaled, &lm).unwrap();
        let mut sorted = base.scores.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        // a near-tie may resolve differently after rounding; anything else must agree
        prop_assume!(sorted[0] - sorted[1] > 1e-12);
        prop_assert_eq!(base.class, again.class);
    }

    #[test]
    fn export_round_trip_keeps_nine_digits(
        vals in prop::collection::vec(-1e3f64..1e3, 6),
        y in prop::collection::vec(0usize..2, 2),
    ) {
        let h = Matrix::new(2, 2, vals[..4].to_vec()).unwrap();
        let l = Matrix::new(1, 2, vals[4..].to_vec()).unwrap();
        let l = Matrix::from_rows(&[l.row(0).to_vec(), vec![1.0, 0.0]]).unwrap();
        let csv = export_embeddings(&h, &l, &y).unwrap();
        prop_assert_eq!(csv.lines().count(), 5);
        let back = import_embeddings(&csv).unwrap();
        prop_assert_eq!(&back.classes, &y);
        for (a, b) in h.as_slice().iter().chain(l.as_slice()).zip(back.instances.as_slice().iter().chain(back.labels.as_slice())) {
            prop_assert!((a - b).abs() <= 5e-9 * a.abs().max(f64::MIN_POSITIVE));
        }
    }
}
