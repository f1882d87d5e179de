//! The neural editor: a history-aware encoder, an autoregressive operation
//! tagger and a span decoder that fills INSERT/REPLACE spans in parallel.

pub mod checkpoint;
pub mod config;
pub mod graph;
pub mod params;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{Mode, ModelConfig};
pub use graph::{Graph, HistItem, StepData};
pub use params::{Layout, ParamStore};

use crate::edit_ops::{EditSpan, TokenId};
use crate::error::{Error, Result};
use crate::metrics::StepScore;
use crate::tensor::Mat;

/// One past revision step reduced to one vector per span.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedEdit {
    /// Per-span vectors before the relative edit position is added.
    pub base: Mat,
    /// `base` plus the relative-position row for `age`.
    pub vectors: Mat,
    pub age: usize,
    pub spans: Vec<EditSpan>,
}

/// A single step together with the compressed history preceding it.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub step: StepData,
    pub history: Vec<CompressedEdit>,
}

#[derive(Debug, Clone)]
pub struct EditModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub layout: Layout,
}

impl EditModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, layout) = params::init_params(&config, &mut rng);
        Ok(EditModel {
            config,
            params,
            layout,
        })
    }

    /// Rebuild a model from named arrays; names and shapes must match `config`.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Mat)>) -> Result<Self> {
        let mut model = EditModel::new(config, 0)?;
        if named.len() != model.params.mats.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} arrays, found {}",
                model.params.mats.len(),
                named.len()
            )));
        }
        for (name, mat) in named {
            let slot = model
                .params
                .get_mut(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected array {name}")))?;
            if slot.shape() != mat.shape() {
                return Err(Error::Checkpoint(format!(
                    "array {name} has shape {:?}, expected {:?}",
                    mat.shape(),
                    slot.shape()
                )));
            }
            *slot = mat;
        }
        Ok(model)
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::new(&self.params.mats, &self.layout, &self.config)
    }

    fn history_items(&self, g: &mut Graph<'_>, history: &[CompressedEdit]) -> Result<Vec<HistItem>> {
        if history.len() >= self.config.order_n.max(1) {
            return Err(Error::Model(format!(
                "{} history steps for order {}",
                history.len(),
                self.config.order_n
            )));
        }
        Ok(history
            .iter()
            .map(|h| HistItem {
                base: g.tape.constant(h.base.clone()),
                age: h.age,
            })
            .collect())
    }

    /// Encoder output, `(|tokens| + 1) x d_model`.
    pub fn encode(&self, tokens: &[TokenId], history: &[CompressedEdit]) -> Result<Mat> {
        self.encode_with(tokens, None, history)
    }

    /// Encoder output for `tokens` followed by an optional condition; the
    /// first `|tokens| + 1` rows belong to the document.
    pub fn encode_with(
        &self,
        tokens: &[TokenId],
        condition: Option<&[TokenId]>,
        history: &[CompressedEdit],
    ) -> Result<Mat> {
        let mut g = self.graph();
        let items = self.history_items(&mut g, history)?;
        let memory = g.history_memory(&items);
        let input = graph::encoder_input(tokens, condition);
        let enc = g.encode(&input, memory)?;
        Ok(g.tape.value(enc).clone())
    }

    /// Tag logits for the first `prev_tags.len()` rows of `enc_out` given
    /// right-shifted previous tags.
    pub fn tag_logits(&self, enc_out: &Mat, prev_tags: &[usize]) -> Mat {
        assert!(prev_tags.len() <= enc_out.rows, "more tags than encoder rows");
        let mut g = self.graph();
        let enc = g.tape.constant(enc_out.clone());
        let logits = g.tag_logits(enc, prev_tags.len(), prev_tags);
        g.tape.value(logits).clone()
    }

    /// Mean of `enc_out` rows over the span.
    pub fn pool_span(enc_out: &Mat, span: &EditSpan) -> Result<Vec<f64>> {
        if span.start >= span.end || span.end > enc_out.rows {
            return Err(Error::Model(format!(
                "span {}..{} outside {} encoder rows",
                span.start, span.end, enc_out.rows
            )));
        }
        let mut out = vec![0.0; enc_out.cols];
        for r in span.start..span.end {
            for (o, v) in out.iter_mut().zip(enc_out.row(r)) {
                *o += v;
            }
        }
        let n = (span.end - span.start) as f64;
        out.iter_mut().for_each(|v| *v /= n);
        Ok(out)
    }

    /// Decoder start vector `MLP(W_op[type] + pooled span)`.
    pub fn span_representation(&self, enc_out: &Mat, span: &EditSpan) -> Result<Vec<f64>> {
        Self::pool_span(enc_out, span)?;
        let mut g = self.graph();
        let enc = g.tape.constant(enc_out.clone());
        let v = g.span_starts(enc, &[span]);
        Ok(g.tape.value(v).data.clone())
    }

    /// Teacher-forced logits for every span, decoded together.
    pub fn decode_spans(&self, enc_out: &Mat, spans: &[EditSpan]) -> Result<Vec<Mat>> {
        if spans.is_empty() {
            return Ok(Vec::new());
        }
        for s in spans {
            Self::pool_span(enc_out, s)?;
        }
        let mut g = self.graph();
        let enc = g.tape.constant(enc_out.clone());
        let refs: Vec<&EditSpan> = spans.iter().collect();
        let starts = g.span_starts(enc, &refs);
        let contents: Vec<&[TokenId]> = spans.iter().map(|s| s.content.as_slice()).collect();
        let dec = g.decode(enc, starts, &contents)?;
        let logits = g.tape.value(dec.logits);
        Ok(dec
            .ranges
            .iter()
            .map(|&(s, e)| Mat::from_vec(e - s, logits.cols, logits.data[s * logits.cols..e * logits.cols].to_vec()))
            .collect())
    }

    /// Teacher-forced logits for one span decoded on its own.
    pub fn decode_span(&self, enc_out: &Mat, span: &EditSpan) -> Result<Mat> {
        Ok(self.decode_spans(enc_out, std::slice::from_ref(span))?.remove(0))
    }

    /// `(L_e, L_x|e, L_xe)` and lengths of one step.
    pub fn step_loss(&self, batch: &StepBatch) -> Result<StepScore> {
        let mut g = self.graph();
        let items = self.history_items(&mut g, &batch.history)?;
        Ok(g.step(&batch.step, &items, false)?.score)
    }

    /// Compress a gold step (run with its own history) for use `age` steps later.
    pub fn compress_history(&self, batch: &StepBatch, age: usize) -> Result<CompressedEdit> {
        if age == 0 || age >= self.config.order_n {
            return Err(Error::Model(format!(
                "age {age} outside 1..{} for order {}",
                self.config.order_n, self.config.order_n
            )));
        }
        if self.config.mode != Mode::Editor {
            return Err(Error::Model("history compression needs editor mode".into()));
        }
        let mut g = self.graph();
        let items = self.history_items(&mut g, &batch.history)?;
        let out = g.step(&batch.step, &items, true)?;
        let base = g.tape.value(out.base.expect("compression requested")).clone();
        Ok(self.compressed(base, age, crate::edit_ops::extract_spans(&batch.step.script)))
    }

    pub(crate) fn compressed(&self, base: Mat, age: usize, spans: Vec<EditSpan>) -> CompressedEdit {
        let mut vectors = base.clone();
        let rel = &self.params.mats[self.layout.rel_pos];
        for r in 0..vectors.rows {
            for (v, p) in vectors.row_mut(r).iter_mut().zip(rel.row(age - 1)) {
                *v += p;
            }
        }
        CompressedEdit {
            base,
            vectors,
            age,
            spans,
        }
    }

    /// Scores of every step of a chain with gold history.
    pub fn chain_scores(&self, steps: &[StepData]) -> Result<Vec<StepScore>> {
        let mut g = self.graph();
        Ok(g.chain(steps, 0)?.1)
    }

    /// Summed normalized loss of the scored steps and its parameter gradients.
    pub fn chain_gradients(
        &self,
        steps: &[StepData],
        score_from: usize,
    ) -> Result<(f64, Vec<StepScore>, Vec<Option<Mat>>)> {
        let mut g = self.graph();
        let (loss, scores) = g.chain(steps, score_from)?;
        match loss {
            Some(l) => {
                let value = g.tape.scalar(l);
                let grads = g.tape.backward(l);
                Ok((value, scores, grads))
            }
            None => Ok((0.0, scores, vec![None; self.params.mats.len()])),
        }
    }
}

#[cfg(test)]
mod tests;
