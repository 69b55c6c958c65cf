//! Randomized invariants over kernels, token handling and the loss.

use proptest::prelude::*;
use tinyalign::datakit::{ToyVocab, PAD_ID};
use tinyalign::embedlink::{cast_tokens, combined_loss, embed_text, EmbeddingTable, LossWeights, TokenSequence};
use tinyalign::metrics::{lcs_len, rouge1, unigram_overlap};
use tinyalign::tensor::kernels;
use tinyalign::toylm::{inject_instruction, nearest_token_decode};
use tinyalign::Tensor;

fn tensor3(max_n: usize, max_d: usize) -> impl Strategy<Value = Tensor<f64>> {
    (1..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        prop::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| Tensor::new(vec![1, n, d], v).unwrap())
    })
}

fn ids(max_len: usize, vocab: u32) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..vocab, 0..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_are_distributions(x in tensor3(6, 9)) {
        let y = kernels::softmax_lastdim(&x).unwrap();
        for row in y.data().chunks(x.last_dim()) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(x in tensor3(6, 9)) {
        let d = x.last_dim();
        prop_assume!(d > 1);
        let y = kernels::layer_norm(&x, &Tensor::full(vec![d], 1.0), &Tensor::zeros(vec![d]), 1e-5).unwrap();
        for (row, src) in y.data().chunks(d).zip(x.data().chunks(d)) {
            let m = row.iter().sum::<f64>() / d as f64;
            prop_assert!(m.abs() < 1e-9);
            let sm = src.iter().sum::<f64>() / d as f64;
            let sv = src.iter().map(|v| (v - sm).powi(2)).sum::<f64>() / d as f64;
            let v = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            prop_assert!((v - sv / (sv + 1e-5)).abs() < 1e-9);
        }
    }

    #[test]
    fn pooling_preserves_constant_sequences(c in -5.0f64..5.0, n in 1usize..80, t in 1usize..40) {
        let x = Tensor::full(vec![1, n, 3], c);
        let y = kernels::adaptive_pool(&x, t).unwrap();
        prop_assert!(y.data().iter().all(|&v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn concat_then_narrow_recovers_parts(a in tensor3(5, 4), extra in 1usize..5) {
        let d = a.last_dim();
        let b = Tensor::full(vec![1, extra, d], 0.5);
        let c = kernels::concat(&a, &b, 1).unwrap();
        let n = a.shape()[1];
        prop_assert_eq!(kernels::narrow(&c, 1, 0, n).unwrap(), a);
        prop_assert_eq!(kernels::narrow(&c, 1, n, extra).unwrap(), b);
    }

    #[test]
    fn permute_inverse_is_identity(x in tensor3(5, 6)) {
        let p = kernels::permute(&x, &[2, 0, 1]).unwrap();
        prop_assert_eq!(kernels::permute(&p, &[1, 2, 0]).unwrap(), x);
    }

    #[test]
    fn cast_has_fixed_length_and_keeps_prefix(v in ids(60, 40), t in 1usize..50) {
        let cast = cast_tokens(&TokenSequence::new(v.clone()), t, PAD_ID).unwrap();
        prop_assert_eq!(cast.len(), t);
        let keep = v.len().min(t);
        prop_assert_eq!(&cast.ids()[..keep], &v[..keep]);
        prop_assert!(cast.ids()[keep..].iter().all(|&i| i == PAD_ID));
    }

    #[test]
    fn combined_loss_is_nonnegative_and_zero_on_equality(
        a in tensor3(5, 6),
        alpha in 0.01f64..1.0,
        beta in 0.0f64..1.0,
    ) {
        let w = LossWeights { alpha, beta };
        let b = kernels::gelu(&a);
        prop_assert!(combined_loss(&a, &b, w).unwrap() >= -1e-12);
        prop_assert!(combined_loss(&a, &a, w).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nearest_decode_inverts_lookup(v in ids(30, 24), seed in 0u64..1000) {
        let table = EmbeddingTable::random_unit(24, 16, PAD_ID, seed).unwrap();
        let seq = TokenSequence::new(v.clone());
        prop_assume!(!v.is_empty());
        let e = embed_text(&table, &seq).unwrap();
        prop_assert_eq!(nearest_token_decode(&e, &table).unwrap().ids().to_vec(), v);
    }

    #[test]
    fn injection_prepends_exactly(ni in 0usize..6, t in 1usize..8, seed in 0u64..100) {
        let table = EmbeddingTable::random_unit(10, 8, PAD_ID, seed).unwrap();
        let inst = TokenSequence::new((0..ni as u32).map(|i| i % 10).collect());
        let audio = TokenSequence::new((0..t as u32).map(|i| (i * 3) % 10).collect());
        let e_i = embed_text(&table, &inst).unwrap();
        let e_a = embed_text(&table, &audio).unwrap();
        let out = inject_instruction(&e_i, &e_a).unwrap();
        prop_assert_eq!(out.shape(), &[1, ni + t, 8]);
        prop_assert_eq!(&out.data()[..ni * 8], e_i.data());
        prop_assert_eq!(&out.data()[ni * 8..], e_a.data());
        if ni == 0 {
            prop_assert_eq!(out, e_a);
        }
    }

    #[test]
    fn lcs_never_exceeds_overlap(r in ids(20, 6), h in ids(20, 6)) {
        prop_assert!(lcs_len(&r, &h) <= unigram_overlap(&r, &h));
        prop_assert!((rouge1(&r, &h).f1 - rouge1(&h, &r).f1).abs() < 1e-15);
    }

    #[test]
    fn vocab_words_roundtrip(v in prop::collection::vec(2u32..40, 0..20)) {
        let vocab = ToyVocab::synthetic(40).unwrap();
        let text = vocab.detokenize(&v);
        prop_assert_eq!(vocab.tokenize(&text).ids().to_vec(), v);
    }
}
