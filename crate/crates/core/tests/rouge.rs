//! ROUGE-1 and ROUGE-L against brute-force oracles: every pair over a
//! 5-symbol alphabet with combined length at most 8, plus random longer
//! pairs against a separately written reference.

mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::rouge::*;
use tinyalign::metrics::{lcs_len, rouge1, rouge_l, rouge_l_beta, unigram_overlap, RougeScore};

fn assert_score(s: RougeScore, m: usize, r: usize, h: usize, what: &str) {
    let (p, rc, f) = expected(m, r, h);
    assert!((s.precision - p).abs() < 1e-12, "{what} precision");
    assert!((s.recall - rc).abs() < 1e-12, "{what} recall");
    assert!((s.f1 - f).abs() < 1e-12, "{what} f1 {} vs {f}", s.f1);
}

#[test]
fn exhaustive_small_pairs() {
    let mut checked = 0usize;
    for total in 0..=MAX_TOTAL {
        for rl in 0..=total {
            let hl = total - rl;
            let (nr, nh) = ((ALPHABET as usize).pow(rl as u32), (ALPHABET as usize).pow(hl as u32));
            for ri in 0..nr {
                let r = sequence(ri, rl);
                for hi in 0..nh {
                    let h = sequence(hi, hl);
                    let m1 = brute_overlap(&r, &h);
                    let ml = brute_lcs(&h, &r);
                    assert_eq!(unigram_overlap(&r, &h), m1, "{r:?} {h:?}");
                    assert_eq!(lcs_len(&r, &h), ml, "{r:?} {h:?}");
                    assert_score(rouge1(&r, &h), m1, rl, hl, "rouge1");
                    assert_score(rouge_l(&r, &h), ml, rl, hl, "rougeL");
                    checked += 1;
                }
            }
        }
    }
    // sum over n of (n+1)·5^n for n = 0..=8
    assert_eq!(checked, (0..=MAX_TOTAL).map(|n| (n + 1) * 5usize.pow(n as u32)).sum::<usize>());
}

#[test]
fn random_longer_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let alphabet = rng.gen_range(2..=12);
        let r: Vec<u32> = (0..rng.gen_range(9..=60)).map(|_| rng.gen_range(0..alphabet)).collect();
        let h: Vec<u32> = (0..rng.gen_range(9..=60)).map(|_| rng.gen_range(0..alphabet)).collect();
        let (m1, ml) = (reference_overlap(&r, &h), reference_lcs(&r, &h));
        assert_score(rouge1(&r, &h), m1, r.len(), h.len(), "rouge1");
        assert_score(rouge_l(&r, &h), ml, r.len(), h.len(), "rougeL");
        assert!(ml <= m1, "a common subsequence is also a bag match");
    }
}

#[test]
fn documented_examples() {
    let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let s = rouge1(&words("the cat sat on the mat"), &words("the cat on mat"));
    assert_eq!(s.precision, 1.0);
    assert!((s.recall - 4.0 / 6.0).abs() < 1e-12);
    assert!((s.f1 - 0.8).abs() < 1e-12);
    let empty: Vec<String> = vec![];
    assert_eq!(rouge1(&empty, &empty).f1, 1.0);
    assert_eq!(rouge_l(&words("a"), &empty).f1, 0.0);
}

#[test]
fn beta_weights_recall() {
    // m = 2, |ref| = 4, |hyp| = 2: P = 1, R = 0.5
    let s = rouge_l_beta(&[1u32, 2, 3, 4], &[1, 2], 2.0);
    let expected_f = 5.0 * 1.0 * 0.5 / (0.5 + 4.0 * 1.0);
    assert!((s.f1 - expected_f).abs() < 1e-12);
}
