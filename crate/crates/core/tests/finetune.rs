//! Trigger layouts, the classification objective, early stopping,
//! demonstrations, metrics and a small end-to-end fine-tuning run.

use hicl::corpus::{encode_single, Vocab, CLS_ID, SEP_ID};
use hicl::encoder::{forward, trigger_row, trigger_sentinel, EncoderConfig, EncoderParams, TokenBatch};
use hicl::finetune::{
    accuracy, build_icl_demonstrations, classification_loss, evaluate, finetune, macro_f1, predict_input,
    prepare_inputs, reformulate_input, Dataset, EarlyStopping, FinetuneConfig, FinetuneModel, LabeledExample, Metric,
    Placement, TriggerConfig, TriggerPhase, HEAD_BIAS, HEAD_WEIGHT,
};
use hicl::rng::{rng_from_seed, SeedTree};
use hicl::synthetic::{topic_cue_dataset, TaskSizes, TopicCorpusConfig};
use proptest::prelude::*;

const X: [u32; 2] = [10, 11];
const XR: [u32; 3] = [20, 21, 22];

fn t(row: usize) -> u32 {
    trigger_sentinel(row)
}

#[test]
fn preset_layouts_match_the_hand_table() {
    let table: [(Placement, Vec<u32>); 4] = [
        (Placement::Front, vec![t(0), t(1), t(2), t(3), t(4), CLS_ID, 10, 11, 20, 21, 22, SEP_ID]),
        (Placement::Middle, vec![CLS_ID, 10, 11, t(0), t(1), t(2), t(3), t(4), 20, 21, 22, SEP_ID]),
        (Placement::End, vec![CLS_ID, 10, 11, 20, 21, 22, t(0), t(1), t(2), t(3), t(4), SEP_ID]),
        (
            Placement::All,
            vec![
                t(0), t(1), t(2), t(3), t(4), CLS_ID, 10, 11, t(10), t(11), t(12), t(13), t(14), 20, 21, 22, t(5),
                t(6), t(7), t(8), t(9), SEP_ID,
            ],
        ),
    ];
    let trigger_positions: [Vec<usize>; 4] = [
        (0..5).collect(),
        (3..8).collect(),
        (6..11).collect(),
        (0..5).chain(8..13).chain(16..21).collect(),
    ];
    let mut seen = Vec::new();
    for ((placement, want), pos) in table.iter().zip(&trigger_positions) {
        let r = reformulate_input(&X, &[XR.to_vec()], &TriggerConfig::preset(*placement, 5), 64).unwrap();
        assert_eq!(&r.ids, want, "{placement}");
        assert_eq!(&r.trigger_positions(), pos, "{placement}");
        seen.push(r.ids);
    }
    seen.dedup();
    assert_eq!(seen.len(), 4);
    let plain = reformulate_input(&X, &[], &TriggerConfig::none(), 64).unwrap();
    assert_eq!(plain.ids, vec![CLS_ID, 10, 11, SEP_ID]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn removing_frame_positions_recovers_the_segments(
        x in prop::collection::vec(5u32..100, 1..10),
        retrieved in prop::collection::vec(prop::collection::vec(5u32..100, 1..8), 0..4),
        front in 0usize..4, middle in 0usize..4, end in 0usize..4,
    ) {
        let cfg = TriggerConfig { count_front: front, count_middle: middle, count_end: end, init_scale: None };
        let r = reformulate_input(&x, &retrieved, &cfg, 256).unwrap();
        let content: Vec<u32> = r.ids.iter().copied()
            .filter(|&id| trigger_row(id).is_none() && id != CLS_ID && id != SEP_ID)
            .collect();
        let want: Vec<u32> = x.iter().chain(retrieved.iter().flatten()).copied().collect();
        prop_assert_eq!(content, want);
        prop_assert_eq!(r.trigger_positions().len(), cfg.total(retrieved.len()));
        let mut rows = r.trigger_rows();
        rows.sort_unstable();
        prop_assert_eq!(rows, (0..cfg.total(retrieved.len())).collect::<Vec<_>>());
    }

    #[test]
    fn truncated_layouts_fit_and_keep_prefixes(
        x in prop::collection::vec(5u32..100, 1..30),
        retrieved in prop::collection::vec(prop::collection::vec(5u32..100, 1..20), 0..3),
        n in 0usize..4,
        max_len in 12usize..40,
    ) {
        let r = reformulate_input(&x, &retrieved, &TriggerConfig::preset(Placement::All, n), max_len).unwrap();
        prop_assert!(r.ids.len() <= max_len);
        let src = r.segment_tokens(hicl::finetune::Segment::Source);
        prop_assert_eq!(&x[..src.len()], src.as_slice());
        for (g, seg) in retrieved.iter().enumerate() {
            let got = r.segment_tokens(hicl::finetune::Segment::Retrieved(g));
            prop_assert_eq!(&seg[..got.len()], got.as_slice());
        }
    }

    #[test]
    fn argmax_ignores_a_shift_of_every_logit(seed in 0u64..100, c in -50.0f64..50.0) {
        let model = small_model(seed, TriggerConfig::preset(Placement::Middle, 2), 1);
        let input = reformulate_input(&[7, 8, 9], &[vec![12, 13]], &model.trigger_cfg, 16).unwrap();
        let (label, probs) = predict_input(&model, &input).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        let mut shifted = model.clone();
        shifted.head.get_mut(HEAD_BIAS).unwrap().mapv_inplace(|b| b + c);
        prop_assert_eq!(predict_input(&shifted, &input).unwrap().0, label);
    }

    #[test]
    fn metrics_match_a_confusion_matrix_recount(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
    ) {
        let (pred, gold): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let (acc, f1) = confusion_recount(&pred, &gold, 4);
        prop_assert!((accuracy(&pred, &gold) - acc).abs() <= 1e-12);
        prop_assert!((macro_f1(&pred, &gold, 4) - f1).abs() <= 1e-12);
    }
}

/// Accuracy and macro-F1 from an explicit confusion matrix.
fn confusion_recount(pred: &[usize], gold: &[usize], labels: usize) -> (f64, f64) {
    let mut m = vec![vec![0usize; labels]; labels];
    for (&p, &g) in pred.iter().zip(gold) {
        m[g][p] += 1;
    }
    let total: usize = m.iter().flatten().sum();
    let diag: usize = (0..labels).map(|i| m[i][i]).sum();
    let f1s: Vec<f64> = (0..labels)
        .map(|c| {
            let tp = m[c][c] as f64;
            let predicted: usize = (0..labels).map(|g| m[g][c]).sum();
            let actual: usize = m[c].iter().sum();
            if predicted + actual == 0 {
                0.0
            } else {
                2.0 * tp / (predicted + actual) as f64
            }
        })
        .collect();
    (diag as f64 / total as f64, f1s.iter().sum::<f64>() / labels as f64)
}

fn small_model(seed: u64, trig: TriggerConfig, k: usize) -> FinetuneModel {
    let enc = EncoderParams::init(EncoderConfig::tiny(30), &mut rng_from_seed(seed)).unwrap();
    FinetuneModel::new(enc, 3, trig, k, &mut rng_from_seed(seed + 1)).unwrap()
}

#[test]
fn trainable_names_partition_into_backbone_and_triggers() {
    let model = small_model(0, TriggerConfig::preset(Placement::All, 2), 1);
    let backbone = model.backbone_names();
    let triggers = model.trigger_names();
    let all: std::collections::BTreeSet<String> = model.trainable().names().map(str::to_owned).collect();
    assert!(backbone.is_disjoint(&triggers));
    assert_eq!(backbone.union(&triggers).cloned().collect::<std::collections::BTreeSet<_>>(), all);
}

#[test]
fn zero_head_gives_uniform_loss_and_duplicates_add() {
    let mut model = small_model(2, TriggerConfig::preset(Placement::Middle, 2), 1);
    let a = reformulate_input(&[7, 8], &[vec![9]], &model.trigger_cfg, 16).unwrap();
    let b = reformulate_input(&[12, 13, 14], &[vec![15, 16]], &model.trigger_cfg, 16).unwrap();
    let mut rng = rng_from_seed(0);
    let single = classification_loss(&model, &[a.clone()], &[1], false, &mut rng).unwrap().0;
    let pair = classification_loss(&model, &[a.clone(), b.clone()], &[1, 2], false, &mut rng).unwrap().0;
    let triple = classification_loss(&model, &[a.clone(), a.clone(), b.clone()], &[1, 1, 2], false, &mut rng).unwrap().0;
    assert!((triple - (pair + single)).abs() <= 1e-12);

    model.head.get_mut(HEAD_WEIGHT).unwrap().fill(0.0);
    model.head.get_mut(HEAD_BIAS).unwrap().fill(0.0);
    let zero = classification_loss(&model, &[a, b], &[0, 2], false, &mut rng).unwrap().0;
    assert!((zero - 2.0 * 3f64.ln()).abs() <= 1e-12);
}

#[test]
fn no_triggers_and_no_retrieval_is_plain_classification() {
    let model = small_model(4, TriggerConfig::none(), 0);
    let texts: [&[u32]; 3] = [&[7, 8, 9], &[10, 11], &[12, 13, 14, 15]];
    let labels = [2, 0, 1];
    let inputs: Vec<_> = texts
        .iter()
        .map(|x| reformulate_input(x, &[], &model.trigger_cfg, 16).unwrap())
        .collect();
    let (loss, _) = classification_loss(&model, &inputs, &labels, false, &mut rng_from_seed(0)).unwrap();

    let seqs: Vec<Vec<u32>> = texts.iter().map(|x| encode_single(x, 16)).collect();
    let out = forward(&model.encoder, &TokenBatch::from_sequences(&seqs), None, false, &mut rng_from_seed(0)).unwrap();
    let w = model.head.expect(HEAD_WEIGHT);
    let b = model.head.expect(HEAD_BIAS);
    let logits = out.pooled.dot(w) + b;
    let plain: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = logits.row(i);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            z.ln() - row[y]
        })
        .sum();
    assert!((loss - plain).abs() <= 1e-10, "{loss} vs {plain}");
}

#[test]
fn early_stopping_example() {
    let mut stop = EarlyStopping::new(5);
    let mut stopped_at = None;
    for (i, m) in [0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6].iter().enumerate() {
        if stop.observe(i + 1, *m).1 {
            stopped_at = Some(i + 1);
            break;
        }
    }
    assert_eq!(stopped_at, Some(7));
    assert_eq!(stop.best(), Some((2, 0.6)));
}

fn demo_vocab() -> Vocab {
    Vocab::from_tokens(["apple", "pear", "kiwi", "red", "green", "topic0", "topic1", "topic2", "query"].map(String::from).to_vec()).unwrap()
}

#[test]
fn one_demonstration_per_class() {
    let vocab = demo_vocab();
    let train = vec![
        LabeledExample::new("a", "apple red", 0),
        LabeledExample::new("b", "pear green", 1),
        LabeledExample::new("c", "kiwi", 2),
        LabeledExample::new("d", "apple green", 1),
    ];
    let names: Vec<String> = (0..3).map(|i| format!("topic{i}")).collect();
    let seps = |ids: &[u32]| ids.iter().filter(|&&t| t == SEP_ID).count();
    let ids = build_icl_demonstrations(&train, "query", &names, &vocab, 64, &mut rng_from_seed(1)).unwrap();
    assert_eq!(seps(&ids), 2 * 3 + 1);
    for name in &names {
        assert!(ids.contains(&vocab.id(name).unwrap()));
    }
    let again = build_icl_demonstrations(&train, "query", &names, &vocab, 64, &mut rng_from_seed(1)).unwrap();
    assert_eq!(ids, again);

    let single = vec![LabeledExample::new("a", "apple", 0), LabeledExample::new("b", "pear", 0)];
    let ids = build_icl_demonstrations(&single, "query", &names[..1], &vocab, 64, &mut rng_from_seed(2)).unwrap();
    assert_eq!(seps(&ids), 3);
}

fn tiny_task() -> Dataset {
    let corpus = TopicCorpusConfig {
        topics: 3,
        source_words_per_topic: 10,
        seed: 8,
        ..TopicCorpusConfig::default()
    };
    topic_cue_dataset(&corpus, TaskSizes { train: 30, val: 15, test: 40 })
}

#[test]
fn small_run_keeps_the_freeze_and_reports_recountable_metrics() {
    let data = tiny_task();
    let texts: Vec<hicl::corpus::RawPost> = data
        .train
        .iter()
        .chain(&data.val)
        .chain(&data.test)
        .map(|e| hicl::corpus::RawPost::new(e.id.clone(), e.text.clone()))
        .collect();
    let vocab = hicl::corpus::build_vocab(&texts, 200).unwrap();
    let cfg = FinetuneConfig {
        epochs: 4,
        batch_size: 8,
        k_retrieved: 0,
        trigger: TriggerConfig::preset(Placement::Front, 2),
        trigger_phase: TriggerPhase::PerStep,
        metric: Metric::Accuracy,
        max_len: 24,
        backbone: Some(EncoderConfig { max_seq_len: 24, ..EncoderConfig::tiny(vocab.len()) }),
        ..FinetuneConfig::default()
    };
    let (model, history) = finetune(None, &vocab, &data, None, &cfg, 3).unwrap();
    assert!(history.epochs.iter().all(|e| !e.freeze_checks.is_empty()));
    assert!(history.freeze_held());

    let inputs = prepare_inputs(&data.test, &data.train, &data.label_names, &vocab, &cfg, SeedTree::new(0)).unwrap();
    let gold: Vec<usize> = data.test.iter().map(|e| e.label).collect();
    let (reported, pred) = evaluate(&model, &inputs, &gold, Metric::Accuracy).unwrap();
    assert_eq!(confusion_recount(&pred, &gold, 3).0, reported);
    let (again, _) = evaluate(&model, &inputs, &gold, Metric::Accuracy).unwrap();
    assert_eq!(again, reported);
}
