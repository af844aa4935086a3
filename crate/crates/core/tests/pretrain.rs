//! Contrastive objective, masking and the pre-training loop.

use hicl::corpus::{build_index, build_vocab, PairMode, CLS_ID, MASK_ID, NUM_SPECIAL, SEP_ID};
use hicl::encoder::{EncoderConfig, EncoderParams, SentenceEmbedding};
use hicl::pretrain::{
    apply_mlm_mask, check_gradients, contrastive_loss, pretrain_loss, tiny_pretrain_batch, MlmSplit,
    PretrainConfig, Pretrainer,
};
use hicl::rng::rng_from_seed;
use hicl::synthetic::{topic_corpus, TopicCorpusConfig};
use proptest::prelude::*;

fn emb(v: Vec<f64>) -> SentenceEmbedding {
    SentenceEmbedding::from_raw(v)
}

/// Direct evaluation: cosines from raw vectors, then a naive log-softmax.
fn reference_loss(a: &[Vec<f64>], p: &[Vec<f64>], tau: f64) -> Vec<f64> {
    let cos = |x: &[f64], y: &[f64]| {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        dot / (nx * ny)
    };
    (0..a.len())
        .map(|i| {
            let s: Vec<f64> = p.iter().map(|pj| cos(&a[i], pj) / tau).collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = s.iter().map(|x| (x - m).exp()).sum();
            -(s[i] - m - denom.ln())
        })
        .collect()
}

fn vectors(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    n.prop_flat_map(|n| {
        let v = || prop::collection::vec(prop::collection::vec(0.1f64..1.0, 4).prop_map(|mut x| {
            x[0] -= 0.55;
            x
        }), n);
        (v(), v())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_matches_direct_evaluation((a, p) in vectors(1..8), tau in 0.05f64..1.0) {
        let got = contrastive_loss(
            &a.iter().cloned().map(emb).collect::<Vec<_>>(),
            &p.iter().cloned().map(emb).collect::<Vec<_>>(),
            tau,
        ).unwrap();
        let want = reference_loss(&a, &p, tau);
        for (g, w) in got.per_example.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-10, "{} vs {}", g, w);
        }
        let mean = want.iter().sum::<f64>() / want.len() as f64;
        prop_assert!((got.loss - mean).abs() <= 1e-10);
    }

    #[test]
    fn permuting_pairs_permutes_losses((a, p) in vectors(2..8), shift in 1usize..7) {
        let n = a.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let base = contrastive_loss(
            &a.iter().cloned().map(emb).collect::<Vec<_>>(),
            &p.iter().cloned().map(emb).collect::<Vec<_>>(),
            0.05,
        ).unwrap();
        let pa: Vec<_> = perm.iter().map(|&i| emb(a[i].clone())).collect();
        let pp: Vec<_> = perm.iter().map(|&i| emb(p[i].clone())).collect();
        let moved = contrastive_loss(&pa, &pp, 0.05).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((moved.per_example[k] - base.per_example[i]).abs() <= 1e-12);
        }
        prop_assert!((moved.loss - base.loss).abs() <= 1e-12);
    }

    #[test]
    fn rescaling_embeddings_leaves_the_loss_unchanged((a, p) in vectors(1..8), c in 0.01f64..100.0) {
        let base = contrastive_loss(
            &a.iter().cloned().map(emb).collect::<Vec<_>>(),
            &p.iter().cloned().map(emb).collect::<Vec<_>>(),
            0.05,
        ).unwrap();
        let scale = |v: &Vec<f64>| emb(v.iter().map(|x| x * c).collect());
        let scaled = contrastive_loss(
            &a.iter().map(scale).collect::<Vec<_>>(),
            &p.iter().map(scale).collect::<Vec<_>>(),
            0.05,
        ).unwrap();
        prop_assert!((base.loss - scaled.loss).abs() <= 1e-9 * (1.0 + base.loss));
    }

    #[test]
    fn total_loss_is_the_weighted_sum(seed in 0u64..200, alpha in 0.0f64..2.0) {
        let cfg = EncoderConfig::tiny(20);
        let params = EncoderParams::init(cfg.clone(), &mut rng_from_seed(seed)).unwrap();
        let batch = tiny_pretrain_batch(&cfg, 3, seed);
        let (l, _) = pretrain_loss(&params, &batch, 0.05, alpha, false, false, &mut rng_from_seed(0)).unwrap();
        prop_assert_eq!(l.loss_total, l.loss_cl + alpha * l.loss_mlm);
        let (z, _) = pretrain_loss(&params, &batch, 0.05, 0.0, false, false, &mut rng_from_seed(0)).unwrap();
        prop_assert_eq!(z.loss_total, z.loss_cl);
    }
}

#[test]
fn score_gradient_rows_balance_at_the_symmetric_point() {
    let n = 4;
    let same: Vec<_> = (0..n).map(|_| emb(vec![1.0, 2.0, -0.5])).collect();
    let l = contrastive_loss(&same, &same, 0.05).unwrap();
    assert!((l.loss - (n as f64).ln()).abs() <= 1e-10);
    for (i, row) in l.d_scores.rows().into_iter().enumerate() {
        assert!(row.sum().abs() <= 1e-15);
        assert!((row[i] - -(n as f64 - 1.0) / (n * n) as f64).abs() <= 1e-15);
    }
    let diag_mean = (0..n).map(|i| l.d_scores[[i, i]]).sum::<f64>() / n as f64;
    let off_mean = l.d_scores.sum() / n as f64 - diag_mean;
    assert!((diag_mean + off_mean).abs() <= 1e-15);
}

#[test]
fn masking_rate_is_binomial() {
    let tokens: Vec<u32> = (0..10_000).map(|i| NUM_SPECIAL as u32 + (i % 50)).collect();
    let (_, targets) = apply_mlm_mask(&tokens, 0.15, MlmSplit::default(), 60, &mut rng_from_seed(11));
    let sigma = (10_000.0f64 * 0.15 * 0.85).sqrt();
    assert!((targets.len() as f64 - 1500.0).abs() <= 3.0 * sigma, "{}", targets.len());
}

#[test]
fn certain_masking_replaces_every_ordinary_token() {
    let tokens = vec![CLS_ID, 7, 8, 9, SEP_ID];
    let all_mask = MlmSplit { to_mask: 1.0, to_random: 0.0 };
    let (out, targets) = apply_mlm_mask(&tokens, 1.0, all_mask, 20, &mut rng_from_seed(0));
    assert_eq!(out, vec![CLS_ID, MASK_ID, MASK_ID, MASK_ID, SEP_ID]);
    assert_eq!(targets.into_iter().collect::<Vec<_>>(), vec![(1, 7), (2, 8), (3, 9)]);
    let (same, none) = apply_mlm_mask(&tokens, 1e-12, MlmSplit::default(), 20, &mut rng_from_seed(0));
    assert_eq!(same, tokens);
    assert!(none.is_empty());
}

#[test]
fn central_differences_converge_as_epsilon_shrinks() {
    let cfg = EncoderConfig::tiny(20);
    let batch = tiny_pretrain_batch(&cfg, 4, 3);
    let errs: Vec<f64> = [1e-3, 1e-4, 1e-5]
        .iter()
        .map(|&eps| check_gradients(&cfg, &PretrainConfig::default(), &batch, eps).unwrap().max_rel_error)
        .collect();
    assert!(errs[0] > errs[1], "{errs:?}");
    assert!(errs[2] < 1e-4, "{errs:?}");
    assert!(errs[1] >= errs[2] || errs[2] < 1e-6, "{errs:?}");
}

fn small_run(seed: u64, epochs: usize) -> (Vec<f64>, String) {
    let corpus = topic_corpus(&TopicCorpusConfig {
        posts: 400,
        source_words_per_topic: 20,
        seed: 100,
        ..TopicCorpusConfig::default()
    });
    let posts: Vec<_> = corpus.into_iter().map(|t| t.post).collect();
    let vocab = build_vocab(&posts, 500).unwrap();
    let (index, _) = build_index(posts).unwrap();
    let enc = EncoderConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        max_seq_len: 48,
        ..EncoderConfig::desk(vocab.len())
    };
    let params = EncoderParams::init(enc, &mut rng_from_seed(seed)).unwrap();
    let cfg = PretrainConfig {
        seed,
        epochs,
        batch_size: 16,
        pairs_per_epoch: Some(128),
        pair_mode: PairMode::HashtagPair,
        ..PretrainConfig::default()
    };
    let mut trainer = Pretrainer::new(params, cfg, &vocab, &index).unwrap();
    let losses = trainer.train(&mut |_| {}).unwrap().into_iter().map(|e| e.mean_loss).collect();
    (losses, trainer.into_params().digest())
}

#[test]
fn loss_falls_between_the_first_and_fifth_epoch() {
    let falls = (0..10)
        .filter(|&seed| {
            let (losses, _) = small_run(seed, 5);
            losses[4] < losses[0]
        })
        .count();
    assert!(falls >= 9, "loss fell in only {falls}/10 seeds");
}

#[test]
fn training_is_deterministic() {
    assert_eq!(small_run(7, 1), small_run(7, 1));
}
