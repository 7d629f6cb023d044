//! Loss functions against naive, independently written scalar evaluators,
//! plus the ablation and regularizer-range identities.

use lacon::encoder::{EncoderMode, TokenizedExample};
use lacon::losses::{icl_loss, icl_multihead_loss, lcl_loss, ler_loss, ler_pair_terms, total_loss, LossConfig};
use lacon::{Matrix, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "support/naive.rs"]
mod naive;

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

struct Case {
    h: Vec<Vec<f64>>,
    l: Vec<Vec<f64>>,
    y: Vec<usize>,
    tau: f64,
    heads: usize,
}

fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = [1, 2, 3][rng.gen_range(0..3)];
    let d = heads * rng.gen_range(1..=4);
    let n = rng.gen_range(1..=8);
    let c = rng.gen_range(2..=5);
    Case {
        h: random_rows(&mut rng, n, d),
        l: random_rows(&mut rng, c, d),
        y: (0..n).map(|_| rng.gen_range(0..c)).collect(),
        tau: rng.gen_range(0.1..1.0),
        heads,
    }
}

fn matrix(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

#[test]
fn losses_match_naive_evaluators() {
    for seed in 0..50 {
        let c = case(seed);
        let (h, l) = (matrix(&c.h), matrix(&c.l));
        let pairs = [
            ("icl", icl_loss(&h, &l, &c.y, c.tau).unwrap(), naive::icl(&c.h, &c.l, &c.y, c.tau)),
            (
                "icl_multihead",
                icl_multihead_loss(&h, &l, &c.y, c.tau, c.heads).unwrap(),
                naive::icl_heads(&c.h, &c.l, &c.y, c.tau, c.heads),
            ),
            ("lcl", lcl_loss(&h, &l, &c.y, c.tau).unwrap(), naive::lcl(&c.h, &c.l, &c.y, c.tau)),
            ("ler", ler_loss(&l).unwrap(), naive::ler(&c.l)),
        ];
        for (name, got, want) in pairs {
            assert!((got - want).abs() < 1e-9, "seed {seed} {name}: {got} vs {want}");
        }
    }
}

#[test]
fn single_head_multihead_equals_icl() {
    for seed in 100..200 {
        let c = case(seed);
        let (h, l) = (matrix(&c.h), matrix(&c.l));
        let a = icl_loss(&h, &l, &c.y, c.tau).unwrap();
        let b = icl_multihead_loss(&h, &l, &c.y, c.tau, 1).unwrap();
        assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
    }
}

fn batch(seed: u64) -> Vec<TokenizedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..6)
        .map(|i| TokenizedExample {
            token_ids: (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..7)).collect(),
            label: if i < 3 { i } else { rng.gen_range(0..3) },
            raw_text: String::new(),
        })
        .collect()
}

#[test]
fn disabled_terms_contribute_exact_zeros() {
    for seed in 0..5 {
        let model = Model::init(seed, 7, 6, 3, 3).unwrap();
        let data = batch(seed);
        let refs: Vec<&TokenizedExample> = data.iter().collect();
        for mode in [EncoderMode::Vanilla, EncoderMode::Fusion] {
            let run = |cfg: LossConfig| total_loss(&model, &refs, mode, &cfg).unwrap();
            let base = LossConfig { tau: 0.2, lambda_reg: 0.4, heads: 2, ..LossConfig::default() };

            let none = run(LossConfig { enable_icl: false, enable_lcl: false, enable_ler: false, ..base.clone() });
            assert_eq!(none.total, 0.0);
            assert!(none.grads.flatten().iter().all(|&g| g == 0.0));

            // a disabled term's own hyperparameters cannot leak into value or gradient
            let no_icl = run(LossConfig { enable_icl: false, ..base.clone() });
            let no_icl_other_heads = run(LossConfig { enable_icl: false, heads: 3, multihead: false, ..base.clone() });
            assert_eq!(no_icl.icl, 0.0);
            assert_eq!(no_icl.total.to_bits(), no_icl_other_heads.total.to_bits());
            assert_eq!(no_icl.grads, no_icl_other_heads.grads);

            let no_ler = run(LossConfig { enable_ler: false, ..base.clone() });
            let no_ler_other_lambda = run(LossConfig { enable_ler: false, lambda_reg: 0.9, ..base.clone() });
            let ler_zero_weight = run(LossConfig { lambda_reg: 0.0, ..base.clone() });
            assert_eq!(no_ler.ler, 0.0);
            assert_eq!(no_ler.grads, no_ler_other_lambda.grads);
            assert_eq!(no_ler.grads, ler_zero_weight.grads);
            assert_eq!(no_ler.total.to_bits(), ler_zero_weight.total.to_bits());

            let no_lcl = run(LossConfig { enable_lcl: false, ..base.clone() });
            assert_eq!(no_lcl.lcl, 0.0);
            let icl_only = run(LossConfig { enable_lcl: false, enable_ler: false, ..base.clone() });
            let icl_only_lambda = run(LossConfig { enable_lcl: false, enable_ler: false, lambda_reg: 0.0, ..base.clone() });
            assert_eq!(icl_only.grads, icl_only_lambda.grads);
        }
    }
}

#[test]
fn regularizer_pair_terms_stay_in_range() {
    let upper = 2f64.exp() - 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let c = rng.gen_range(2..=6);
        let d = rng.gen_range(1..=5);
        let l = matrix(&random_rows(&mut rng, c, d));
        for t in ler_pair_terms(&l).unwrap() {
            assert!((0.0..=upper).contains(&t), "{t}");
        }
    }
    let antipodal = matrix(&[vec![0.3, -0.4], vec![-0.3, 0.4]]);
    assert!(ler_loss(&antipodal).unwrap().abs() < 1e-15);
    let identical = matrix(&[vec![0.3, -0.4], vec![0.3, -0.4]]);
    assert!((ler_loss(&identical).unwrap() - upper).abs() < 1e-12);
}
