use rand::Rng;

use super::config::ModelConfig;
use crate::tensor::Mat;

/// Named dense parameter arrays. Ids index `mats` and stay fixed for a
/// given [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub mats: Vec<Mat>,
}

impl ParamStore {
    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|i| &self.mats[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.id(name).map(move |i| &mut self.mats[i])
    }

    pub fn count(&self) -> usize {
        self.mats.iter().map(Mat::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.mats.iter().all(Mat::is_finite)
    }

    /// Round every value through f32, as a checkpoint does.
    pub fn round_to_f32(&mut self) {
        for m in &mut self.mats {
            m.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttnIds {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct NormIds {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpIds {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EncLayerIds {
    pub norm_self: NormIds,
    pub self_attn: AttnIds,
    pub norm_hist: NormIds,
    pub hist_attn: AttnIds,
    pub norm_ff: NormIds,
    pub ff: MlpIds,
}

#[derive(Debug, Clone, Copy)]
pub struct DecLayerIds {
    pub norm_self: NormIds,
    pub self_attn: AttnIds,
    pub norm_cross: NormIds,
    pub cross_attn: AttnIds,
    pub norm_ff: NormIds,
    pub ff: MlpIds,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub tok_emb: usize,
    pub enc_pos: usize,
    pub dec_pos: usize,
    pub enc: Vec<EncLayerIds>,
    pub enc_norm: NormIds,
    /// Previous-tag embeddings: one row per [`OpTag`](crate::OpTag) plus a start row.
    pub tag_emb: usize,
    pub tagger_norm_self: NormIds,
    pub tagger_attn: AttnIds,
    pub tagger_norm_ff: NormIds,
    pub tagger_ff: MlpIds,
    pub tagger_norm_out: NormIds,
    pub tag_w: usize,
    pub tag_b: usize,
    pub op_emb: usize,
    pub span_mlp: MlpIds,
    pub hist_mlp: MlpIds,
    pub rel_pos: usize,
    pub dec: Vec<DecLayerIds>,
    pub dec_norm: NormIds,
    pub out_w: usize,
    pub out_b: usize,
}

pub const START_TAG: usize = 4;

#[derive(Clone, Copy)]
enum Init {
    Zero,
    One,
    FanIn,
    Embedding,
}

struct Builder<'r, R: Rng> {
    store: ParamStore,
    rng: &'r mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let m = match init {
            Init::Zero => Mat::zeros(rows, cols),
            Init::One => Mat::filled(rows, cols, 1.0),
            Init::FanIn => Mat::uniform(rows, cols, 1.0 / (rows.max(1) as f64).sqrt(), self.rng),
            Init::Embedding => Mat::uniform(rows, cols, 1.0 / (cols as f64).sqrt(), self.rng),
        };
        self.store.names.push(name);
        self.store.mats.push(m);
        self.store.mats.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.add(format!("{prefix}.gain"), 1, d, Init::One),
            bias: self.add(format!("{prefix}.bias"), 1, d, Init::Zero),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize, zero_out: bool) -> AttnIds {
        let out_init = if zero_out { Init::Zero } else { Init::FanIn };
        AttnIds {
            wq: self.add(format!("{prefix}.wq"), d, d, Init::FanIn),
            bq: self.add(format!("{prefix}.bq"), 1, d, Init::Zero),
            wk: self.add(format!("{prefix}.wk"), d, d, Init::FanIn),
            bk: self.add(format!("{prefix}.bk"), 1, d, Init::Zero),
            wv: self.add(format!("{prefix}.wv"), d, d, Init::FanIn),
            bv: self.add(format!("{prefix}.bv"), 1, d, Init::Zero),
            wo: self.add(format!("{prefix}.wo"), d, d, out_init),
            bo: self.add(format!("{prefix}.bo"), 1, d, Init::Zero),
        }
    }

    fn mlp(&mut self, prefix: &str, d: usize, hidden: usize) -> MlpIds {
        MlpIds {
            w1: self.add(format!("{prefix}.w1"), d, hidden, Init::FanIn),
            b1: self.add(format!("{prefix}.b1"), 1, hidden, Init::Zero),
            w2: self.add(format!("{prefix}.w2"), hidden, d, Init::FanIn),
            b2: self.add(format!("{prefix}.b2"), 1, d, Init::Zero),
        }
    }
}

/// Allocate and initialize every array for `cfg`.
///
/// Weights are uniform with scale `1/sqrt(fan_in)`. The tag and token output
/// projections start at zero so an untrained model is exactly uniform, and
/// the history cross-attention output starts at zero so history enters
/// training as a no-op.
pub fn init_params<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> (ParamStore, Layout) {
    let d = cfg.d_model;
    let f = cfg.ff_dim;
    let mut b = Builder {
        store: ParamStore {
            names: Vec::new(),
            mats: Vec::new(),
        },
        rng,
    };
    let tok_emb = b.add("tok_emb".into(), cfg.vocab_size, d, Init::Embedding);
    let enc_pos = b.add("enc_pos".into(), cfg.max_len + 1, d, Init::Embedding);
    let dec_pos = b.add("dec_pos".into(), cfg.max_len + 1, d, Init::Embedding);
    let enc = (0..cfg.enc_layers)
        .map(|l| {
            let p = format!("enc.{l}");
            EncLayerIds {
                norm_self: b.norm(&format!("{p}.norm_self"), d),
                self_attn: b.attn(&format!("{p}.self_attn"), d, false),
                norm_hist: b.norm(&format!("{p}.norm_hist"), d),
                hist_attn: b.attn(&format!("{p}.hist_attn"), d, true),
                norm_ff: b.norm(&format!("{p}.norm_ff"), d),
                ff: b.mlp(&format!("{p}.ff"), d, f),
            }
        })
        .collect();
    let enc_norm = b.norm("enc.norm_out", d);
    let tag_emb = b.add("tagger.prev_tag_emb".into(), 5, d, Init::Embedding);
    let tagger_norm_self = b.norm("tagger.norm_self", d);
    let tagger_attn = b.attn("tagger.self_attn", d, false);
    let tagger_norm_ff = b.norm("tagger.norm_ff", d);
    let tagger_ff = b.mlp("tagger.ff", d, f);
    let tagger_norm_out = b.norm("tagger.norm_out", d);
    let tag_w = b.add("tagger.out_w".into(), d, 4, Init::Zero);
    let tag_b = b.add("tagger.out_b".into(), 1, 4, Init::Zero);
    let op_emb = b.add("op_emb".into(), 4, d, Init::Embedding);
    let span_mlp = b.mlp("span_mlp", d, f);
    let hist_mlp = b.mlp("hist_mlp", d, f);
    let rel_pos = b.add("rel_edit_pos".into(), cfg.order_n - 1, d, Init::Embedding);
    let dec = (0..cfg.dec_layers)
        .map(|l| {
            let p = format!("dec.{l}");
            DecLayerIds {
                norm_self: b.norm(&format!("{p}.norm_self"), d),
                self_attn: b.attn(&format!("{p}.self_attn"), d, false),
                norm_cross: b.norm(&format!("{p}.norm_cross"), d),
                cross_attn: b.attn(&format!("{p}.cross_attn"), d, false),
                norm_ff: b.norm(&format!("{p}.norm_ff"), d),
                ff: b.mlp(&format!("{p}.ff"), d, f),
            }
        })
        .collect();
    let dec_norm = b.norm("dec.norm_out", d);
    let out_w = b.add("dec.out_w".into(), d, cfg.vocab_size, Init::Zero);
    let out_b = b.add("dec.out_b".into(), 1, cfg.vocab_size, Init::Zero);

    let layout = Layout {
        tok_emb,
        enc_pos,
        dec_pos,
        enc,
        enc_norm,
        tag_emb,
        tagger_norm_self,
        tagger_attn,
        tagger_norm_ff,
        tagger_ff,
        tagger_norm_out,
        tag_w,
        tag_b,
        op_emb,
        span_mlp,
        hist_mlp,
        rel_pos,
        dec,
        dec_norm,
        out_w,
        out_b,
    };
    (b.store, layout)
}
