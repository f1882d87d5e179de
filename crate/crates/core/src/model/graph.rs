//! Forward computation of the editor on a [`Tape`].

use super::config::{Mode, ModelConfig};
use super::params::{AttnIds, Layout, MlpIds, NormIds, START_TAG};
use crate::autodiff::{Mask, Tape, Var};
use crate::edit_ops::{extract_spans, EditScript, EditSpan, OpTag, TokenId};
use crate::error::{Error, Result};
use crate::metrics::StepScore;
use crate::tensor::Mat;
use crate::tokenizer::{BOS, EOS, SEP};

/// One revision step `x_{i-1} -> x_i` with its gold script.
#[derive(Debug, Clone, PartialEq)]
pub struct StepData {
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
    pub script: EditScript,
    /// Comment appended to the encoder input after a separator.
    pub condition: Option<Vec<TokenId>>,
}

impl StepData {
    pub fn new(src: Vec<TokenId>, tgt: Vec<TokenId>) -> Self {
        let script = crate::edit_ops::diff(&src, &tgt);
        StepData {
            src,
            tgt,
            script,
            condition: None,
        }
    }

    pub fn with_condition(mut self, condition: Option<Vec<TokenId>>) -> Self {
        self.condition = condition;
        self
    }

    /// Encoder input: `<s> document [</s> comment]`.
    pub fn encoder_input(&self) -> Vec<TokenId> {
        encoder_input(&self.src, self.condition.as_deref())
    }
}

pub fn encoder_input(src: &[TokenId], condition: Option<&[TokenId]>) -> Vec<TokenId> {
    let extra = condition.map_or(0, |c| c.len() + 1);
    let mut ids = Vec::with_capacity(src.len() + 1 + extra);
    ids.push(BOS);
    ids.extend_from_slice(src);
    if let Some(c) = condition {
        ids.push(SEP);
        ids.extend_from_slice(c);
    }
    ids
}

/// A compressed past step on the tape, before its relative position is added.
#[derive(Debug, Clone, Copy)]
pub struct HistItem {
    pub base: Var,
    pub age: usize,
}

pub struct Decoded {
    pub hidden: Var,
    pub logits: Var,
    /// Row range of each span in `hidden`/`logits`.
    pub ranges: Vec<(usize, usize)>,
}

pub struct StepOut {
    /// `-L_xe / (|x| + |e|)` for this step.
    pub loss: Var,
    pub score: StepScore,
    /// Compressed representation of this step, when requested.
    pub base: Option<Var>,
}

pub struct Graph<'a> {
    pub tape: Tape<'a>,
    layout: &'a Layout,
    cfg: &'a ModelConfig,
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a [Mat], layout: &'a Layout, cfg: &'a ModelConfig) -> Self {
        Graph {
            tape: Tape::new(params),
            layout,
            cfg,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    fn p(&mut self, id: usize) -> Var {
        self.tape.param(id)
    }

    fn norm(&mut self, x: Var, ids: NormIds) -> Var {
        let (g, b) = (self.p(ids.gain), self.p(ids.bias));
        self.tape.layer_norm(x, g, b)
    }

    fn attn(&mut self, xq: Var, xkv: Var, ids: AttnIds, mask: Mask) -> Var {
        let (wq, bq) = (self.p(ids.wq), self.p(ids.bq));
        let (wk, bk) = (self.p(ids.wk), self.p(ids.bk));
        let (wv, bv) = (self.p(ids.wv), self.p(ids.bv));
        let (wo, bo) = (self.p(ids.wo), self.p(ids.bo));
        let q = self.tape.linear(xq, wq, bq);
        let k = self.tape.linear(xkv, wk, bk);
        let v = self.tape.linear(xkv, wv, bv);
        let a = self.tape.attention(q, k, v, self.cfg.n_heads, mask);
        self.tape.linear(a, wo, bo)
    }

    fn mlp(&mut self, x: Var, ids: MlpIds) -> Var {
        let (w1, b1) = (self.p(ids.w1), self.p(ids.b1));
        let (w2, b2) = (self.p(ids.w2), self.p(ids.b2));
        let h = self.tape.linear(x, w1, b1);
        let h = self.tape.gelu(h);
        self.tape.linear(h, w2, b2)
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            Some(t) => Err(Error::Model(format!(
                "token id {t} outside vocabulary of {}",
                self.cfg.vocab_size
            ))),
            None => Ok(()),
        }
    }

    /// Contextual vectors for `<s> tokens`, cross-attending to `history`
    /// when present.
    pub fn encode(&mut self, input: &[TokenId], history: Option<Var>) -> Result<Var> {
        if input.len() > self.cfg.max_len + 1 {
            return Err(Error::TooLong {
                len: input.len() - 1,
                max: self.cfg.max_len,
            });
        }
        self.check_ids(input)?;
        let l = self.layout;
        let emb = self.p(l.tok_emb);
        let pos = self.p(l.enc_pos);
        let x = self.tape.rows(emb, input.iter().map(|&t| t as usize).collect());
        let pe = self.tape.rows(pos, (0..input.len()).collect());
        let mut h = self.tape.add(x, pe);
        for layer in &l.enc {
            let a = self.norm(h, layer.norm_self);
            let a = self.attn(a, a, layer.self_attn, Mask::Full);
            h = self.tape.add(h, a);
            if let Some(mem) = history {
                let a = self.norm(h, layer.norm_hist);
                let a = self.attn(a, mem, layer.hist_attn, Mask::Full);
                h = self.tape.add(h, a);
            }
            let a = self.norm(h, layer.norm_ff);
            let a = self.mlp(a, layer.ff);
            h = self.tape.add(h, a);
        }
        Ok(self.norm(h, l.enc_norm))
    }

    /// Stack past compressed steps (most recent first), each shifted by its
    /// relative edit position, capped at `max_history_spans` rows.
    pub fn history_memory(&mut self, items: &[HistItem]) -> Option<Var> {
        if self.cfg.order_n < 2 || items.is_empty() {
            return None;
        }
        let mut sorted: Vec<HistItem> = items.to_vec();
        sorted.sort_by_key(|h| h.age);
        let rel = self.p(self.layout.rel_pos);
        let mut left = self.cfg.max_history_spans;
        let mut parts = Vec::new();
        for item in sorted {
            if left == 0 {
                break;
            }
            assert!(item.age >= 1 && item.age < self.cfg.order_n, "history age {}", item.age);
            let rows = self.tape.value(item.base).rows;
            let base = if rows > left {
                self.tape.rows(item.base, (0..left).collect())
            } else {
                item.base
            };
            left -= rows.min(left);
            let offset = self.tape.rows(rel, vec![item.age - 1]);
            parts.push(self.tape.add_row(base, offset));
        }
        match parts.len() {
            0 => None,
            1 => Some(parts[0]),
            _ => Some(self.tape.concat(parts)),
        }
    }

    /// 4-way tag logits for the first `positions` encoder rows given the
    /// right-shifted previous tags (`START_TAG` first).
    pub fn tag_logits(&mut self, enc: Var, positions: usize, prev_tags: &[usize]) -> Var {
        assert_eq!(prev_tags.len(), positions);
        let l = self.layout;
        let doc = if self.tape.value(enc).rows == positions {
            enc
        } else {
            self.tape.rows(enc, (0..positions).collect())
        };
        let temb = self.p(l.tag_emb);
        let prev = self.tape.rows(temb, prev_tags.to_vec());
        let mut h = self.tape.add(doc, prev);
        let a = self.norm(h, l.tagger_norm_self);
        let a = self.attn(a, a, l.tagger_attn, Mask::Causal);
        h = self.tape.add(h, a);
        let a = self.norm(h, l.tagger_norm_ff);
        let a = self.mlp(a, l.tagger_ff);
        h = self.tape.add(h, a);
        let h = self.norm(h, l.tagger_norm_out);
        let (w, b) = (self.p(l.tag_w), self.p(l.tag_b));
        self.tape.linear(h, w, b)
    }

    /// Mean-pooled encoder rows of each span, before the operation MLP.
    pub fn pool_spans(&mut self, enc: Var, spans: &[&EditSpan]) -> Var {
        let ranges = spans.iter().map(|s| Some((s.start, s.end))).collect();
        self.tape.mean_rows(enc, ranges)
    }

    /// `MLP(W_op[type] + mean(enc[start..end]))` for each span.
    pub fn span_starts(&mut self, enc: Var, spans: &[&EditSpan]) -> Var {
        let pooled = self.pool_spans(enc, spans);
        let ops = self.p(self.layout.op_emb);
        let op_rows = self.tape.rows(ops, spans.iter().map(|s| s.op.index()).collect());
        let x = self.tape.add(pooled, op_rows);
        self.mlp(x, self.layout.span_mlp)
    }

    /// Teacher-forced decoding of several spans at once. Span `k` reads
    /// `[starts[k], contents[k]..]`; spans never attend to each other.
    pub fn decode(&mut self, enc: Var, starts: Var, contents: &[&[TokenId]]) -> Result<Decoded> {
        let l = self.layout;
        let n_spans = contents.len();
        assert_eq!(self.tape.value(starts).rows, n_spans);
        let mut all_ids = Vec::new();
        for c in contents {
            if c.len() > self.cfg.max_len {
                return Err(Error::TooLong {
                    len: c.len(),
                    max: self.cfg.max_len,
                });
            }
            self.check_ids(c)?;
            all_ids.extend(c.iter().map(|&t| t as usize));
        }
        // Rows of [starts; token embeddings], then permuted into span order.
        let mut order = Vec::with_capacity(n_spans + all_ids.len());
        let mut positions = Vec::with_capacity(order.capacity());
        let mut segments = Vec::with_capacity(order.capacity());
        let mut ranges = Vec::with_capacity(n_spans);
        let mut offset = n_spans;
        for (k, c) in contents.iter().enumerate() {
            let begin = order.len();
            order.push(k);
            order.extend(offset..offset + c.len());
            offset += c.len();
            positions.extend(0..=c.len());
            segments.extend(std::iter::repeat(k).take(c.len() + 1));
            ranges.push((begin, order.len()));
        }
        let stacked = if all_ids.is_empty() {
            starts
        } else {
            let emb = self.p(l.tok_emb);
            let tokens = self.tape.rows(emb, all_ids);
            self.tape.concat(vec![starts, tokens])
        };
        let x = self.tape.rows(stacked, order);
        let pos = self.p(l.dec_pos);
        let pe = self.tape.rows(pos, positions);
        let mut h = self.tape.add(x, pe);
        for layer in &l.dec {
            let a = self.norm(h, layer.norm_self);
            let a = self.attn(a, a, layer.self_attn, Mask::Segments(segments.clone()));
            h = self.tape.add(h, a);
            let a = self.norm(h, layer.norm_cross);
            let a = self.attn(a, enc, layer.cross_attn, Mask::Full);
            h = self.tape.add(h, a);
            let a = self.norm(h, layer.norm_ff);
            let a = self.mlp(a, layer.ff);
            h = self.tape.add(h, a);
        }
        let hidden = self.norm(h, l.dec_norm);
        let (w, b) = (self.p(l.out_w), self.p(l.out_b));
        let logits = self.tape.linear(hidden, w, b);
        Ok(Decoded {
            hidden,
            logits,
            ranges,
        })
    }

    /// Compressed representation of a finished step: one row per span,
    /// `MLP(pool_enc + pool_dec + W_op[type])`. Spans without decoder rows
    /// contribute a zero decoder term.
    pub fn compress(
        &mut self,
        enc: Var,
        spans: &[EditSpan],
        decoded: Option<(Var, &[Option<(usize, usize)>])>,
    ) -> Var {
        let refs: Vec<&EditSpan> = spans.iter().collect();
        let mut x = self.pool_spans(enc, &refs);
        if let Some((hidden, ranges)) = decoded {
            if ranges.iter().any(Option::is_some) {
                let pooled = self.tape.mean_rows(hidden, ranges.to_vec());
                x = self.tape.add(x, pooled);
            }
        }
        let ops = self.p(self.layout.op_emb);
        let op_rows = self.tape.rows(ops, spans.iter().map(|s| s.op.index()).collect());
        let x = self.tape.add(x, op_rows);
        self.mlp(x, self.layout.hist_mlp)
    }

    /// Score one gold step given its history, optionally compressing it.
    pub fn step(&mut self, step: &StepData, history: &[HistItem], compress: bool) -> Result<StepOut> {
        let memory = self.history_memory(history);
        let enc = self.encode(&step.encoder_input(), memory)?;
        match self.cfg.mode {
            Mode::Editor => self.editor_step(step, enc, compress),
            Mode::Seq2seq => self.seq2seq_step(step, enc),
        }
    }

    fn editor_step(&mut self, step: &StepData, enc: Var, compress: bool) -> Result<StepOut> {
        let script = &step.script;
        script.validate(step.src.len())?;
        let positions = script.tags.len();
        let gold: Vec<usize> = script.tags.iter().map(|t| t.index()).collect();
        let mut prev = Vec::with_capacity(positions);
        prev.push(START_TAG);
        prev.extend_from_slice(&gold[..positions - 1]);

        let logits = self.tag_logits(enc, positions, &prev);
        let tag_lp = self.tape.log_softmax_pick(logits, gold.clone());
        let l_e_var = self.tape.sum(tag_lp);
        let mut score = StepScore {
            n_e: positions,
            ..Default::default()
        };
        for (lp, &g) in self.tape.value(tag_lp).data.iter().zip(&gold) {
            score.op_ll[g] += lp;
            score.op_count[g] += 1;
        }

        let spans = extract_spans(script);
        let gen: Vec<&EditSpan> = spans.iter().filter(|s| s.op.generates()).collect();
        let mut total = l_e_var;
        let mut decoded = None;
        if !gen.is_empty() {
            let starts = self.span_starts(enc, &gen);
            let contents: Vec<&[TokenId]> = gen.iter().map(|s| s.content.as_slice()).collect();
            let dec = self.decode(enc, starts, &contents)?;
            let targets = span_targets(&contents);
            score.n_x = targets.len();
            let lp = self.tape.log_softmax_pick(dec.logits, targets);
            let l_x = self.tape.sum(lp);
            score.l_x_given_e = self.tape.scalar(l_x);
            total = self.tape.add(l_e_var, l_x);
            decoded = Some(dec);
        }
        score.l_e = self.tape.scalar(l_e_var);
        score.l_xe = self.tape.scalar(total);
        let loss = self.tape.scale(total, -1.0 / (score.n_e + score.n_x) as f64);

        let base = if compress {
            let mut ranges = Vec::with_capacity(spans.len());
            let mut next = 0;
            for s in &spans {
                if s.op.generates() {
                    ranges.push(decoded.as_ref().map(|d| d.ranges[next]));
                    next += 1;
                } else {
                    ranges.push(None);
                }
            }
            let dec = decoded.as_ref().map(|d| (d.hidden, ranges.as_slice()));
            Some(self.compress(enc, &spans, dec))
        } else {
            None
        };
        Ok(StepOut { loss, score, base })
    }

    fn seq2seq_step(&mut self, step: &StepData, enc: Var) -> Result<StepOut> {
        let emb = self.p(self.layout.tok_emb);
        let start = self.tape.rows(emb, vec![BOS as usize]);
        let contents = [step.tgt.as_slice()];
        let dec = self.decode(enc, start, &contents)?;
        let targets = span_targets(&contents);
        let n_x = targets.len();
        let lp = self.tape.log_softmax_pick(dec.logits, targets);
        let l_x = self.tape.sum(lp);
        let value = self.tape.scalar(l_x);
        let loss = self.tape.scale(l_x, -1.0 / n_x as f64);
        Ok(StepOut {
            loss,
            score: StepScore {
                l_x_given_e: value,
                l_xe: value,
                n_x,
                ..Default::default()
            },
            base: None,
        })
    }

    /// Run consecutive steps of one chain, threading compressed history.
    /// Steps before `score_from` only provide context. Returns the summed
    /// per-step normalized losses of the scored steps.
    pub fn chain(&mut self, steps: &[StepData], score_from: usize) -> Result<(Option<Var>, Vec<StepScore>)> {
        let keep = self.cfg.order_n.saturating_sub(1);
        let uses_history = keep > 0 && self.cfg.mode == Mode::Editor;
        let mut bases: Vec<Var> = Vec::new();
        let mut loss: Option<Var> = None;
        let mut scores = Vec::with_capacity(steps.len().saturating_sub(score_from));
        for (i, step) in steps.iter().enumerate() {
            let history: Vec<HistItem> = bases
                .iter()
                .rev()
                .take(keep)
                .enumerate()
                .map(|(k, &base)| HistItem { base, age: k + 1 })
                .collect();
            let compress = uses_history && i + 1 < steps.len();
            let out = self.step(step, &history, compress)?;
            if let Some(b) = out.base {
                bases.push(b);
            }
            if i >= score_from {
                scores.push(out.score);
                loss = Some(match loss {
                    Some(l) => self.tape.add(l, out.loss),
                    None => out.loss,
                });
            }
        }
        Ok((loss, scores))
    }
}

/// Each span's content followed by EOS.
pub fn span_targets(contents: &[&[TokenId]]) -> Vec<usize> {
    let mut t = Vec::with_capacity(contents.iter().map(|c| c.len() + 1).sum());
    for c in contents {
        t.extend(c.iter().map(|&x| x as usize));
        t.push(EOS as usize);
    }
    t
}

pub fn tags_to_indices(tags: &[OpTag]) -> Vec<usize> {
    tags.iter().map(|t| t.index()).collect()
}
