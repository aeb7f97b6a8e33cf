mod common;

use common::{counts, crafted, nested, oracle_total};
use ddunet::engine::{Rng, Stream, Tape, Tensor};
use ddunet::layers::softmax_channels;
use ddunet::objectives::{
    confusion_counts, dice_loss, evaluate_volume, focal_loss, region_positive_set, total_loss, ConfusionCounts,
    LossConfig, Region,
};

fn random_instance(seed: u64, n: usize) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = Rng::new(seed, Stream::Init);
    let shape = [n, 2, 2, 2, 2];
    let logits = Tensor::normal(&shape, 0.0, 2.0, &mut rng).unwrap();
    let mut t = vec![0.0; logits.numel()];
    for b in 0..n {
        for v in 0..8 {
            t[(b * 2 + rng.below(2)) * 8 + v] = 1.0;
        }
    }
    (softmax_channels(&logits).unwrap(), Tensor::from_vec(&shape, t).unwrap())
}

#[test]
fn total_loss_matches_independent_oracle() {
    let cfg = LossConfig::default();
    assert_eq!((cfg.lambda_dice, cfg.lambda_focal, cfg.gamma, cfg.alpha), (0.7, 0.3, 2.0, 0.25));
    for seed in 0..50 {
        let (p, t) = random_instance(seed, 1 + seed as usize % 2);
        let expected = oracle_total(&nested(&p), &nested(&t), &cfg);
        let got = total_loss(&p, &t, &cfg).unwrap();
        assert!((got - expected).abs() <= 1e-9, "seed {seed}: {got} vs {expected}");

        let mut tape = Tape::new();
        let (pv, tv) = (tape.leaf(p.clone()), tape.constant(t.clone()));
        let l = tape.total_loss(pv, tv, cfg).unwrap();
        assert!((tape.value(l).item().unwrap() - expected).abs() <= 1e-9);
    }
}

#[test]
fn analytic_anchor_values() {
    let cfg = LossConfig::default();
    // Perfect prediction.
    let t = Tensor::from_vec(&[1, 2, 1, 1, 4], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
    assert_eq!(total_loss(&t, &t, &cfg).unwrap(), 0.0);

    // Half overlap in each class: Dice 2*1/(2+2).
    let p = Tensor::from_vec(&[1, 2, 1, 1, 4], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
    let q = Tensor::from_vec(&[1, 2, 1, 1, 4], vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    assert!((dice_loss(&p, &q, cfg.dice_eps).unwrap() - 0.5).abs() < 2e-6);
    assert!((dice_loss(&p, &q, 1e-12).unwrap() - 0.5).abs() < 1e-12);

    // p_t = 0.5 everywhere.
    let half = Tensor::full(&[1, 2, 1, 1, 3], 0.5).unwrap();
    let t = Tensor::from_vec(&[1, 2, 1, 1, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    let expected = 0.25 * 0.25 * 2f64.ln();
    assert!((focal_loss(&half, &t, &cfg).unwrap() - expected).abs() < 1e-15);
}

#[test]
fn crafted_volume_matches_hand_counts() {
    let (pred, truth) = crafted();
    let r = evaluate_volume(&pred, &truth).unwrap();
    let classes: Vec<_> = r.classes.iter().map(|s| s.counts).collect();
    assert_eq!(classes, [counts(16, 16, 32, 0), counts(8, 0, 48, 8), counts(16, 0, 48, 0), counts(0, 8, 40, 16)]);
    let regions: Vec<_> = r.regions.iter().map(|s| s.counts).collect();
    assert_eq!(regions, [counts(32, 0, 16, 16), counts(16, 0, 32, 16), counts(0, 8, 40, 16)]);
    assert_eq!(r.regions[0].scores.dice, 64.0 / 80.0);
    assert_eq!(r.regions[1].scores.sensitivity, 0.5);
    assert_eq!(r.regions[2].scores.dice, 0.0);
    assert_eq!(r.regions[2].scores.specificity, 40.0 / 48.0);

    let perfect = evaluate_volume(&truth, &truth).unwrap();
    for s in perfect.classes.iter().chain(&perfect.regions) {
        assert_eq!((s.scores.dice, s.scores.sensitivity, s.scores.specificity), (1.0, 1.0, 1.0));
    }
}

#[test]
fn region_sets_follow_the_label_definitions() {
    assert_eq!(region_positive_set(Region::WholeTumor), &[1, 2, 3]);
    assert_eq!(region_positive_set(Region::TumorCore), &[1, 3]);
    assert_eq!(region_positive_set(Region::Enhancing), &[3]);
}

#[test]
fn region_scores_equal_binary_mask_counts() {
    let mut rng = Rng::new(17, Stream::Init);
    for _ in 0..100 {
        let n = 64;
        let pred: Vec<u8> = (0..n).map(|_| rng.below(4) as u8).collect();
        let truth: Vec<u8> = (0..n).map(|_| rng.below(4) as u8).collect();
        let report = evaluate_volume(&pred, &truth).unwrap();
        let binarize = |l: &[u8], r: Region| -> Vec<bool> {
            l.iter()
                .map(|&v| match r {
                    Region::WholeTumor => v != 0,
                    Region::TumorCore => v == 1 || v == 3,
                    Region::Enhancing => v == 3,
                })
                .collect()
        };
        for (i, r) in Region::ALL.into_iter().enumerate() {
            let (bp, bt) = (binarize(&pred, r), binarize(&truth, r));
            let mut c = ConfusionCounts::default();
            for (p, t) in bp.into_iter().zip(bt) {
                match (p, t) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, false) => c.tn += 1,
                    (false, true) => c.fn_ += 1,
                }
            }
            assert_eq!(report.regions[i].counts, c);
            assert_eq!(confusion_counts(&pred, &truth, region_positive_set(r)).unwrap(), c);
        }
    }
}
