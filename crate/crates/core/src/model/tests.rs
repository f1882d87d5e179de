use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::edit_ops::{extract_spans, OpTag};
use crate::metrics;

fn small_config(vocab: usize, order: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        ff_dim: 32,
        enc_layers: 1,
        dec_layers: 1,
        order_n: order,
        vocab_size: vocab,
        max_len: 32,
        max_history_spans: 64,
        mode: Mode::Editor,
    }
}

/// Shift every parameter so that zero-initialized outputs become live.
fn randomize(model: &mut EditModel, seed: u64, amount: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in &mut model.params.mats {
        m.data.iter_mut().for_each(|v| *v += rng.gen_range(-amount..amount));
    }
}

fn live_model(vocab: usize, order: usize, seed: u64) -> EditModel {
    let mut m = EditModel::new(small_config(vocab, order), seed).unwrap();
    randomize(&mut m, seed + 100, 0.3);
    m
}

fn chain_fixture() -> Vec<StepData> {
    let docs: Vec<Vec<TokenId>> = vec![
        vec![10, 11, 12, 13, 14],
        vec![10, 20, 21, 12, 14],
        vec![9, 10, 20, 21, 12, 14, 30],
        vec![9, 10, 21, 12, 14, 30],
    ];
    docs.windows(2).map(|w| StepData::new(w[0].clone(), w[1].clone())).collect()
}

fn batch(step: StepData) -> StepBatch {
    StepBatch { step, history: Vec::new() }
}

#[test]
fn encoder_output_shape() {
    let m = live_model(40, 2, 1);
    let out = m.encode(&[5, 6, 7, 8], &[]).unwrap();
    assert_eq!(out.shape(), (5, 16));
    assert!(out.is_finite());
}

#[test]
fn too_long_input_is_rejected() {
    let m = live_model(40, 1, 1);
    let tokens = vec![5; 33];
    assert!(matches!(m.encode(&tokens, &[]), Err(Error::TooLong { len: 33, max: 32 })));
}

#[test]
fn history_enters_only_through_cross_attention() {
    let mut m = EditModel::new(small_config(40, 2), 3).unwrap();
    let steps = chain_fixture();
    let hist = m.compress_history(&batch(steps[0].clone()), 1).unwrap();
    let tokens = &steps[1].src;
    // Fresh models have a zero history output projection.
    assert_eq!(m.encode(tokens, &[]).unwrap(), m.encode(tokens, &[hist]).unwrap());

    randomize(&mut m, 4, 0.3);
    let hist = m.compress_history(&batch(steps[0].clone()), 1).unwrap();
    let a = m.encode(tokens, &[]).unwrap();
    let b = m.encode(tokens, &[hist.clone()]).unwrap();
    assert!(a.data.iter().zip(&b.data).any(|(x, y)| (x - y).abs() > 1e-6));

    for l in 0..m.config.enc_layers {
        for part in ["wo", "bo"] {
            let name = format!("enc.{l}.hist_attn.{part}");
            m.params.get_mut(&name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let a = m.encode(tokens, &[]).unwrap();
    let b = m.encode(tokens, &[hist]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tagger_is_causal_in_previous_tags() {
    let m = live_model(40, 1, 5);
    let tokens: Vec<TokenId> = (5..17).collect();
    let enc = m.encode(&tokens, &[]).unwrap();
    assert_eq!(enc.rows, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut prev: Vec<usize> = vec![params::START_TAG];
    prev.extend((0..12).map(|_| rng.gen_range(0..4)));
    let base = m.tag_logits(&enc, &prev);
    for j in 0..12 {
        // The tag at position j is fed to position j + 1.
        let mut changed = prev.clone();
        changed[j + 1] = (prev[j + 1] + 1) % 4;
        let out = m.tag_logits(&enc, &changed);
        for r in 0..=j {
            assert_eq!(out.row(r), base.row(r), "row {r} moved after changing tag {j}");
        }
        assert!(out.row(j + 1).iter().zip(base.row(j + 1)).any(|(a, b)| a != b));
    }
}

#[test]
fn span_decoder_is_causal() {
    let m = live_model(40, 1, 7);
    let enc = m.encode(&[5, 6, 7, 8, 9], &[]).unwrap();
    let content: Vec<TokenId> = vec![11, 12, 13, 14, 15, 16];
    let span = EditSpan { start: 2, end: 4, op: OpTag::Replace, content: content.clone() };
    let base = m.decode_span(&enc, &span).unwrap();
    assert_eq!(base.rows, content.len() + 1);
    for k in 0..content.len() {
        let mut s = span.clone();
        s.content[k] = 30;
        let out = m.decode_span(&enc, &s).unwrap();
        for r in 0..=k {
            assert_eq!(out.row(r), base.row(r));
        }
        assert!(out.row(k + 1).iter().zip(base.row(k + 1)).any(|(a, b)| a != b));
    }
}

#[test]
fn batched_decoding_matches_sequential() {
    let m = live_model(40, 1, 8);
    let enc = m.encode(&[5, 6, 7, 8, 9, 10, 11], &[]).unwrap();
    let spans = vec![
        EditSpan { start: 0, end: 1, op: OpTag::Insert, content: vec![20, 21, 22] },
        EditSpan { start: 2, end: 4, op: OpTag::Replace, content: vec![23] },
        EditSpan { start: 5, end: 6, op: OpTag::Insert, content: vec![24, 25, 26, 27, 28] },
    ];
    let batched = m.decode_spans(&enc, &spans).unwrap();
    for (s, b) in spans.iter().zip(&batched) {
        let alone = m.decode_span(&enc, s).unwrap();
        assert_eq!(alone.shape(), b.shape());
        let diff = alone.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "max diff {diff}");
    }
}

#[test]
fn span_pooling() {
    let m = live_model(40, 1, 9);
    let enc = m.encode(&[5, 6, 7, 8, 9], &[]).unwrap();
    let one = EditSpan { start: 3, end: 4, op: OpTag::Delete, content: vec![] };
    assert_eq!(EditModel::pool_span(&enc, &one).unwrap(), enc.row(3).to_vec());

    let span = EditSpan { start: 1, end: 5, op: OpTag::Replace, content: vec![7] };
    let pooled = EditModel::pool_span(&enc, &span).unwrap();
    let mut rows: Vec<Vec<f64>> = (0..enc.rows).map(|r| enc.row(r).to_vec()).collect();
    rows[1..5].reverse();
    let permuted = Mat::from_rows(&rows);
    let again = EditModel::pool_span(&permuted, &span).unwrap();
    for (a, b) in pooled.iter().zip(&again) {
        assert!((a - b).abs() < 1e-12);
    }

    let as_insert = EditSpan { op: OpTag::Insert, ..span.clone() };
    let x_r = m.span_representation(&enc, &span).unwrap();
    let x_i = m.span_representation(&enc, &as_insert).unwrap();
    assert!(x_r.iter().zip(&x_i).any(|(a, b)| (a - b).abs() > 1e-6));

    let empty = EditSpan { start: 2, end: 2, op: OpTag::Insert, content: vec![] };
    assert!(EditModel::pool_span(&enc, &empty).is_err());
}

#[test]
fn likelihood_decomposes() {
    let m = live_model(40, 1, 10);
    for step in chain_fixture() {
        let s = m.step_loss(&batch(step.clone())).unwrap();
        assert!((s.l_xe - (s.l_e + s.l_x_given_e)).abs() < 1e-9);
        let per_op: f64 = s.op_ll.iter().sum();
        assert!((per_op - s.l_e).abs() < 1e-9);
        assert_eq!(s.n_e, step.src.len() + 1);
        let spans = extract_spans(&step.script);
        let expected_nx: usize = spans.iter().filter(|s| s.op.generates()).map(|s| s.content.len() + 1).sum();
        assert_eq!(s.n_x, expected_nx);
    }
}

#[test]
fn all_keep_step_has_no_content_term() {
    let m = live_model(40, 1, 11);
    let s = m.step_loss(&batch(StepData::new(vec![5, 6, 7], vec![5, 6, 7]))).unwrap();
    assert_eq!(s.n_x, 0);
    assert_eq!(s.l_x_given_e, 0.0);
    assert_eq!(s.l_xe, s.l_e);
}

#[test]
fn fresh_model_is_uniform() {
    let vocab = 40;
    let m = EditModel::new(small_config(vocab, 1), 12).unwrap();
    let scores: Vec<_> = chain_fixture()
        .into_iter()
        .map(|s| m.step_loss(&batch(s)).unwrap())
        .collect();
    for s in &scores {
        assert!((s.l_e + s.n_e as f64 * 4f64.ln()).abs() < 1e-9);
        assert!((s.l_x_given_e + s.n_x as f64 * (vocab as f64).ln()).abs() < 1e-9);
    }
    assert!((metrics::oppl(&scores).unwrap() - 4.0).abs() < 1e-9);
    assert!((metrics::gppl(&scores).unwrap() - vocab as f64).abs() < 1e-9);
}

#[test]
fn compressed_history_has_one_vector_per_span() {
    let m = live_model(40, 3, 13);
    let step = chain_fixture()[1].clone();
    let n_spans = extract_spans(&step.script).len();
    let h1 = m.compress_history(&batch(step.clone()), 1).unwrap();
    let h2 = m.compress_history(&batch(step.clone()), 2).unwrap();
    assert_eq!(h1.vectors.rows, n_spans);
    assert_eq!(h1.base, h2.base);
    let rel = m.params.get("rel_edit_pos").unwrap();
    for r in 0..n_spans {
        for c in 0..16 {
            let d = h1.vectors.at(r, c) - h2.vectors.at(r, c);
            assert!((d - (rel.at(0, c) - rel.at(1, c))).abs() < 1e-12);
        }
    }
    let keep = m.compress_history(&batch(StepData::new(vec![5, 6], vec![5, 6])), 1).unwrap();
    assert_eq!(keep.vectors.rows, 1);
    assert!(m.compress_history(&batch(step), 3).is_err());
}

#[test]
fn first_order_model_ignores_history() {
    let m = live_model(40, 1, 14);
    assert_eq!(m.params.get("rel_edit_pos").unwrap().rows, 0);
    let steps = chain_fixture();
    let chained = m.chain_scores(&steps).unwrap();
    for (s, c) in steps.iter().zip(&chained) {
        let alone = m.step_loss(&batch(s.clone())).unwrap();
        assert!((alone.l_xe - c.l_xe).abs() < 1e-12);
    }
    assert!(m.compress_history(&batch(steps[0].clone()), 1).is_err());
}

#[test]
fn chain_uses_gold_history() {
    let m = live_model(40, 3, 15);
    let steps = chain_fixture();
    let chained = m.chain_scores(&steps).unwrap();
    let h0 = m.compress_history(&batch(steps[0].clone()), 1).unwrap();
    let b1 = StepBatch { step: steps[1].clone(), history: vec![h0.clone()] };
    let one = m.step_loss(&b1).unwrap();
    assert!((one.l_xe - chained[1].l_xe).abs() < 1e-9);

    let h1 = m.compress_history(&b1, 1).unwrap();
    let h0 = m.compressed(h0.base, 2, h0.spans);
    let b2 = StepBatch { step: steps[2].clone(), history: vec![h1, h0] };
    let two = m.step_loss(&b2).unwrap();
    assert!((two.l_xe - chained[2].l_xe).abs() < 1e-9);
}

#[test]
fn seq2seq_mode_scores_the_whole_target() {
    let mut cfg = small_config(40, 1);
    cfg.mode = Mode::Seq2seq;
    let m = EditModel::new(cfg, 16).unwrap();
    let step = chain_fixture()[0].clone();
    let s = m.step_loss(&batch(step.clone())).unwrap();
    assert_eq!(s.n_e, 0);
    assert_eq!(s.n_x, step.tgt.len() + 1);
    assert!((s.l_xe + s.n_x as f64 * 40f64.ln()).abs() < 1e-9);
}

fn chain_loss(m: &EditModel, steps: &[StepData]) -> f64 {
    m.chain_gradients(steps, 0).unwrap().0
}

/// Central-difference check of every named array against the tape.
#[test]
fn gradients_match_finite_differences() {
    for order in [2, 3] {
        let mut m = live_model(40, order, 20 + order as u64);
        let steps = chain_fixture();
        let (_, _, grads) = m.chain_gradients(&steps, 0).unwrap();
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(order as u64);
        for id in 0..m.params.mats.len() {
            let name = m.params.names[id].clone();
            let len = m.params.mats[id].len();
            if len == 0 {
                continue;
            }
            let analytic = grads[id].clone().unwrap_or_else(|| Mat::zeros(m.params.mats[id].rows, m.params.mats[id].cols));
            // The largest analytic entries plus a few random ones.
            let mut idx: Vec<usize> = (0..len).collect();
            idx.sort_by(|&a, &b| analytic.data[b].abs().total_cmp(&analytic.data[a].abs()));
            idx.truncate(4);
            idx.extend((0..3).map(|_| rng.gen_range(0..len)));
            let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
            for &j in &idx {
                let orig = m.params.mats[id].data[j];
                m.params.mats[id].data[j] = orig + h;
                let up = chain_loss(&m, &steps);
                m.params.mats[id].data[j] = orig - h;
                let down = chain_loss(&m, &steps);
                m.params.mats[id].data[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.data[j];
                diff2 += (a - numeric).powi(2);
                a2 += a * a;
                n2 += numeric * numeric;
            }
            let denom = a2.sqrt().max(n2.sqrt()).max(1e-7);
            let rel = diff2.sqrt() / denom;
            assert!(rel < 1e-3, "order {order} {name}: relative error {rel:.3e}");
        }
    }
}
