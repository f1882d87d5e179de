//! Sampling multi-step edit processes from a trained editor.
//!
//! Tags are drawn left to right from `softmax((logits + δ·[KEEP]) / T)`,
//! then every INSERT/REPLACE span is decoded in parallel, one token per
//! round, with nucleus truncation. Each sampled step is compressed and fed
//! back as history for the following steps.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edit_ops::{self, extract_spans, EditScript, EditSpan, OpTag, TokenId};
use crate::error::{Error, Result};
use crate::model::{CompressedEdit, EditModel, Mode, StepBatch, StepData};
use crate::tensor::Mat;
use crate::tokenizer::{EOS, SEP};

/// Temperatures below this decode greedily.
const GREEDY_BELOW: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub steps: usize,
    pub temperature: f64,
    /// Added to the KEEP logit; negative values suppress KEEP.
    pub keep_bias: f64,
    pub seed: u64,
    pub max_span_tokens: usize,
    pub top_p: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            steps: 1,
            temperature: 1.0,
            keep_bias: 0.0,
            seed: 0,
            max_span_tokens: 64,
            top_p: 0.95,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config("top_p must be in (0, 1]".into()));
        }
        if self.max_span_tokens == 0 {
            return Err(Error::Config("max_span_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledStep {
    pub script: EditScript,
    pub doc: Vec<TokenId>,
    /// Some span hit `max_span_tokens` before EOS.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// The seed document followed by every sampled revision.
    pub revisions: Vec<Vec<TokenId>>,
    pub steps: Vec<SampledStep>,
}

/// Index drawn by inverse CDF over weights (need not be normalized).
fn draw<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Probabilities of `logits / temperature` restricted to `allowed`.
fn probs(logits: &[f64], allowed: &[bool], temperature: f64) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(allowed)
        .filter(|(l, &a)| a && l.is_finite())
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .zip(allowed)
        .map(|(&l, &a)| if a && l.is_finite() { ((l - max) / temperature).exp() } else { 0.0 })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn choose<R: Rng>(logits: &[f64], allowed: &[bool], temperature: f64, top_p: f64, rng: &mut R) -> usize {
    if !allowed.iter().zip(logits).any(|(&a, l)| a && l.is_finite()) {
        // Every option suppressed: fall back to the first allowed one.
        return allowed.iter().position(|&a| a).unwrap_or(0);
    }
    if temperature < GREEDY_BELOW {
        let p = probs(logits, allowed, 1.0);
        return argmax(&p);
    }
    let mut p = probs(logits, allowed, temperature);
    if top_p < 1.0 {
        let mut order: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        let mut acc = 0.0;
        let mut keep = vec![false; p.len()];
        for i in order {
            keep[i] = true;
            acc += p[i];
            if acc >= top_p {
                break;
            }
        }
        p.iter_mut().zip(&keep).for_each(|(v, &k)| {
            if !k {
                *v = 0.0
            }
        });
    }
    draw(&p, rng)
}

fn check_editor(model: &EditModel) -> Result<()> {
    if model.config.mode != Mode::Editor {
        return Err(Error::Model("sampling needs an editor-mode model".into()));
    }
    Ok(())
}

/// Sample a tag sequence (sentinel first) for `doc`.
pub fn sample_tags<R: Rng>(
    model: &EditModel,
    enc: &Mat,
    doc_len: usize,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Vec<OpTag> {
    let positions = doc_len + 1;
    let mut prev = vec![crate::model::params::START_TAG; positions];
    let mut tags = Vec::with_capacity(positions);
    for t in 0..positions {
        let logits = model.tag_logits(enc, &prev[..=t]);
        let mut row = logits.row(t).to_vec();
        row[OpTag::Keep.index()] += cfg.keep_bias;
        let mut allowed = [true; 4];
        if t == 0 {
            allowed[OpTag::Delete.index()] = false;
            allowed[OpTag::Replace.index()] = false;
        }
        let tag = OpTag::from_index(choose(&row, &allowed, cfg.temperature, 1.0, rng)).expect("4 tags");
        tags.push(tag);
        if t + 1 < positions {
            prev[t + 1] = tag.index();
        }
    }
    tags
}

/// Decode all generating spans together, one token per round.
fn decode_contents<R: Rng>(
    model: &EditModel,
    enc: &Mat,
    mut spans: Vec<EditSpan>,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<(Vec<EditSpan>, bool)> {
    let vocab = model.config.vocab_size;
    let mut done = vec![false; spans.len()];
    let mut truncated = false;
    while done.iter().any(|d| !d) {
        let active: Vec<usize> = (0..spans.len()).filter(|&i| !done[i]).collect();
        let batch: Vec<EditSpan> = active.iter().map(|&i| spans[i].clone()).collect();
        let logits = model.decode_spans(enc, &batch)?;
        for (&i, l) in active.iter().zip(&logits) {
            let row = l.row(l.rows - 1);
            let first = spans[i].content.is_empty();
            let allowed: Vec<bool> = (0..vocab)
                .map(|t| match t as TokenId {
                    EOS => !first,
                    t => t > SEP,
                })
                .collect();
            let tok = choose(row, &allowed, cfg.temperature, cfg.top_p, rng) as TokenId;
            if tok == EOS {
                done[i] = true;
                continue;
            }
            spans[i].content.push(tok);
            if spans[i].content.len() >= cfg.max_span_tokens {
                truncated = true;
                done[i] = true;
            }
        }
    }
    Ok((spans, truncated))
}

fn script_from(tags: Vec<OpTag>, spans: &[EditSpan]) -> EditScript {
    let mut script = EditScript {
        tags,
        ..Default::default()
    };
    for s in spans {
        match s.op {
            OpTag::Insert => {
                script.insertions.insert(s.start, s.content.clone());
            }
            OpTag::Replace => {
                script.replacements.insert(s.start, s.content.clone());
            }
            _ => {}
        }
    }
    script
}

/// Sample one edit of `doc` given compressed `history`.
pub fn sample_step<R: Rng>(
    model: &EditModel,
    doc: &[TokenId],
    condition: Option<&[TokenId]>,
    history: &[CompressedEdit],
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<SampledStep> {
    check_editor(model)?;
    let enc = model.encode_with(doc, condition, history)?;
    let tags = sample_tags(model, &enc, doc.len(), cfg, rng);
    let skeleton = script_from(tags.clone(), &[]);
    let gen: Vec<EditSpan> = extract_spans(&skeleton)
        .into_iter()
        .filter(|s| s.op.generates())
        .collect();
    let (filled, truncated) = decode_contents(model, &enc, gen, cfg, rng)?;
    let script = script_from(tags, &filled);
    script.validate(doc.len())?;
    let next = edit_ops::apply(doc, &script)?;
    Ok(SampledStep {
        script,
        doc: next,
        truncated,
    })
}

/// Compressed history for the next step: the newest step gets age 1.
fn push_history(
    model: &EditModel,
    history: &mut Vec<CompressedEdit>,
    step: StepData,
) -> Result<()> {
    let keep = model.config.order_n.saturating_sub(1);
    if keep == 0 {
        return Ok(());
    }
    let batch = StepBatch {
        step,
        history: std::mem::take(history),
    };
    let newest = model.compress_history(&batch, 1)?;
    let mut next = vec![newest];
    for h in batch.history.into_iter().take(keep - 1) {
        let age = h.age + 1;
        next.push(model.compressed(h.base, age, h.spans));
    }
    *history = next;
    Ok(())
}

/// `cfg.steps` successive edits starting from `seed_doc`.
pub fn sample_process(model: &EditModel, seed_doc: &[TokenId], cfg: &SampleConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_editor(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut doc = seed_doc.to_vec();
    let mut out = Trajectory {
        revisions: vec![doc.clone()],
        steps: Vec::with_capacity(cfg.steps),
    };
    for _ in 0..cfg.steps {
        let step = sample_step(model, &doc, None, &history, cfg, &mut rng)?;
        if step.doc.len() > model.config.max_len {
            log::warn!("sampled revision of {} tokens exceeds max_len; stopping", step.doc.len());
            out.revisions.push(step.doc.clone());
            out.steps.push(step);
            break;
        }
        let data = StepData {
            src: doc.clone(),
            tgt: step.doc.clone(),
            script: step.script.clone(),
            condition: None,
        };
        push_history(model, &mut history, data)?;
        doc = step.doc.clone();
        out.revisions.push(doc.clone());
        out.steps.push(step);
    }
    Ok(out)
}

/// Sampled tag frequencies (KEEP, DELETE, REPLACE, INSERT) over `docs`,
/// each tagged once without history.
pub fn tag_frequencies(model: &EditModel, docs: &[Vec<TokenId>], cfg: &SampleConfig) -> Result<[f64; 4]> {
    check_editor(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut counts = [0usize; 4];
    for d in docs {
        let enc = model.encode(d, &[])?;
        for t in sample_tags(model, &enc, d.len(), cfg, &mut rng) {
            counts[t.index()] += 1;
        }
    }
    let total = counts.iter().sum::<usize>().max(1) as f64;
    Ok(counts.map(|c| c as f64 / total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub keep_bias: f64,
    pub frequencies: [f64; 4],
    /// Largest absolute gap to the target over the four tags.
    pub max_gap: f64,
    pub iterations: usize,
}

/// Binary search on δ so the sampled KEEP share matches `target[KEEP]`,
/// stopping once every tag share is within `tolerance` of `target`.
pub fn calibrate_keep_bias(
    model: &EditModel,
    docs: &[Vec<TokenId>],
    target: [f64; 4],
    tolerance: f64,
    base: &SampleConfig,
) -> Result<Calibration> {
    let eval = |bias: f64| -> Result<[f64; 4]> {
        let cfg = SampleConfig {
            keep_bias: bias,
            ..base.clone()
        };
        tag_frequencies(model, docs, &cfg)
    };
    let gap = |f: &[f64; 4]| f.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    let mut best = Calibration {
        keep_bias: 0.0,
        frequencies: eval(0.0)?,
        max_gap: 0.0,
        iterations: 0,
    };
    best.max_gap = gap(&best.frequencies);
    let mut bias = 0.0;
    for it in 1..=30 {
        if best.max_gap <= tolerance {
            break;
        }
        let f = if it == 1 { best.frequencies } else { eval(bias)? };
        let g = gap(&f);
        if g < best.max_gap {
            best = Calibration {
                keep_bias: bias,
                frequencies: f,
                max_gap: g,
                iterations: it,
            };
        }
        if f[OpTag::Keep.index()] > target[OpTag::Keep.index()] {
            hi = bias;
        } else {
            lo = bias;
        }
        bias = 0.5 * (lo + hi);
        best.iterations = it;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model(seed: u64) -> EditModel {
        let mut m = EditModel::new(ModelConfig::tiny(300, 2), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut m.params.mats {
            p.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
        }
        m
    }

    #[test]
    fn nucleus_keeps_the_top_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = [5.0, 0.0, 0.0, -1.0];
        for _ in 0..50 {
            assert_eq!(choose(&logits, &[true; 4], 1.0, 0.9, &mut rng), 0);
        }
        assert_eq!(choose(&logits, &[false, true, true, true], 1e-9, 1.0, &mut rng), 1);
    }

    #[test]
    fn strong_negative_bias_removes_keep() {
        let m = model(1);
        let cfg = SampleConfig {
            keep_bias: f64::NEG_INFINITY,
            ..Default::default()
        };
        let docs: Vec<Vec<TokenId>> = (0..5).map(|i| (10..20 + i).collect()).collect();
        let f = tag_frequencies(&m, &docs, &cfg).unwrap();
        assert_eq!(f[OpTag::Keep.index()], 0.0);
    }

    #[test]
    fn trajectories_are_reproducible_and_reapply() {
        let m = model(2);
        let cfg = SampleConfig {
            steps: 3,
            seed: 9,
            max_span_tokens: 4,
            ..Default::default()
        };
        let seed_doc: Vec<TokenId> = (100..110).collect();
        let a = sample_process(&m, &seed_doc, &cfg).unwrap();
        let b = sample_process(&m, &seed_doc, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.revisions.len(), a.steps.len() + 1);
        for (w, s) in a.revisions.windows(2).zip(&a.steps) {
            s.script.validate(w[0].len()).unwrap();
            assert_eq!(edit_ops::apply(&w[0], &s.script).unwrap(), w[1]);
        }
    }

    #[test]
    fn greedy_decoding_is_seed_independent() {
        let m = model(3);
        let seed_doc: Vec<TokenId> = (100..108).collect();
        let cfg = |seed| SampleConfig {
            steps: 2,
            temperature: 1e-9,
            seed,
            max_span_tokens: 3,
            ..Default::default()
        };
        let a = sample_process(&m, &seed_doc, &cfg(1)).unwrap();
        let b = sample_process(&m, &seed_doc, &cfg(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_step_process_matches_single_step() {
        let m = model(4);
        let seed_doc: Vec<TokenId> = (100..108).collect();
        let cfg = SampleConfig {
            seed: 5,
            max_span_tokens: 3,
            ..Default::default()
        };
        let p = sample_process(&m, &seed_doc, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = sample_step(&m, &seed_doc, None, &[], &cfg, &mut rng).unwrap();
        assert_eq!(p.steps, vec![s]);
    }
}
