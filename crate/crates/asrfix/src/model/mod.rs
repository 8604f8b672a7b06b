//! Multi-source correction network: a text encoder over the hypothesis plus
//! dialogue context, a convolutional-plus-transformer acoustic encoder, and
//! a decoder that cross-attends to both memories in series. Forward passes
//! are immutable and return explicit caches; `backward` replays them to
//! accumulate parameter gradients, so no autodiff machinery is involved.

pub mod attention;
pub mod beam;
pub mod checkpoint;
pub mod conv;
pub mod layers;
pub mod scalar;
pub mod vocab;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FeatureSequence;
use attention::{AttnCache, MultiHeadAttention};
use conv::{subsample_len, ConvBlock, ConvBlockCache};
use layers::{
    gelu_backward, gelu_forward, Embedding, EmbeddingCache, LayerNorm, LayerNormCache, Linear,
    LinearCache, Param,
};
use scalar::Real;
use vocab::{Vocab, BOS_ID, EOS_ID, SEP_ID};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("acoustic feature width mismatch: model expects {expected}, features have {got}")]
    WidthMismatch { expected: usize, got: usize },
}

/// Architecture plus enabled-input switches. The switches are part of the
/// config on purpose: ablations differ from the full model only here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// FFN hidden size as a multiple of `d_model`.
    pub ffn_mult: usize,
    pub n_text_layers: usize,
    pub n_acoustic_layers: usize,
    pub n_decoder_layers: usize,
    /// Expected acoustic feature width (columns per frame).
    pub feature_width: usize,
    pub conv_channels: [usize; 3],
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    /// Share the decoder embedding with the output projection.
    pub tie_output: bool,
    pub use_text: bool,
    pub use_context: bool,
    pub use_acoustic: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_heads: 4,
            ffn_mult: 2,
            n_text_layers: 6,
            n_acoustic_layers: 4,
            n_decoder_layers: 6,
            feature_width: 64,
            conv_channels: [32, 32, 32],
            max_src_len: 64,
            max_tgt_len: 24,
            tie_output: true,
            use_text: true,
            use_context: true,
            use_acoustic: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        for (name, v) in [
            ("n_text_layers", self.n_text_layers),
            ("n_acoustic_layers", self.n_acoustic_layers),
            ("n_decoder_layers", self.n_decoder_layers),
            ("ffn_mult", self.ffn_mult),
            ("feature_width", self.feature_width),
            ("max_src_len", self.max_src_len),
            ("max_tgt_len", self.max_tgt_len),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !self.use_text && !self.use_acoustic {
            return Err(ModelError::InvalidConfig(
                "at least one of use_text / use_acoustic must be enabled".into(),
            ));
        }
        Ok(())
    }
}

/// Which memories the decoder may consult in this pass. Training phases gate
/// sources independently of the config's ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceGates {
    pub text: bool,
    pub acoustic: bool,
}

impl SourceGates {
    pub fn all() -> SourceGates {
        SourceGates {
            text: true,
            acoustic: true,
        }
    }

    pub fn text_only() -> SourceGates {
        SourceGates {
            text: true,
            acoustic: false,
        }
    }

    pub fn acoustic_only() -> SourceGates {
        SourceGates {
            text: false,
            acoustic: true,
        }
    }
}

/// One correction request: the recognizer hypothesis, its dialogue context,
/// and optionally the utterance's acoustic features.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub hyp: &'a str,
    pub context: &'a str,
    pub features: Option<&'a FeatureSequence>,
}

/// Encoded text memory.
pub struct TextEncoding<T> {
    pub h: Array2<T>,
    pub mask: Vec<bool>,
}

/// Encoded acoustic memory at the subsampled rate.
pub struct AcousticEncoding<T> {
    pub h: Array2<T>,
    pub mask: Vec<bool>,
}

// ---------------------------------------------------------------------------
// Transformer encoder layer (pre-LN): self-attention, then feed-forward.

#[derive(Debug, Clone)]
struct EncoderLayer<T> {
    ln1: LayerNorm<T>,
    attn: MultiHeadAttention<T>,
    ln2: LayerNorm<T>,
    ff1: Linear<T>,
    ff2: Linear<T>,
}

struct EncoderLayerCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttnCache<T>,
    ln2: LayerNormCache<T>,
    ff1: LinearCache<T>,
    gelu: Array2<T>,
    ff2: LinearCache<T>,
}

impl<T: Real> EncoderLayer<T> {
    fn new(prefix: &str, cfg: &ModelConfig, seed: u64) -> EncoderLayer<T> {
        let d = cfg.d_model;
        EncoderLayer {
            ln1: LayerNorm::new(&format!("{prefix}.ln1"), d),
            attn: MultiHeadAttention::new(&format!("{prefix}.attn"), d, cfg.n_heads, seed),
            ln2: LayerNorm::new(&format!("{prefix}.ln2"), d),
            ff1: Linear::new(&format!("{prefix}.ff1"), d, d * cfg.ffn_mult, seed),
            ff2: Linear::new(&format!("{prefix}.ff2"), d * cfg.ffn_mult, d, seed),
        }
    }

    fn forward(&self, x: &Array2<T>, mask: Option<&[bool]>) -> (Array2<T>, EncoderLayerCache<T>) {
        let (n1, ln1) = self.ln1.forward(x);
        let (a, attn) = self.attn.forward(&n1, &n1, false, mask);
        let h = x + &a;
        let (n2, ln2) = self.ln2.forward(&h);
        let (f1, ff1) = self.ff1.forward(&n2);
        let (g, gelu) = gelu_forward(&f1);
        let (f2, ff2) = self.ff2.forward(&g);
        let y = &h + &f2;
        (
            y,
            EncoderLayerCache {
                ln1,
                attn,
                ln2,
                ff1,
                gelu,
                ff2,
            },
        )
    }

    fn backward(&mut self, cache: &EncoderLayerCache<T>, dy: &Array2<T>) -> Array2<T> {
        let d_g = self.ff2.backward(&cache.ff2, dy);
        let d_f1 = gelu_backward(&cache.gelu, &d_g);
        let d_n2 = self.ff1.backward(&cache.ff1, &d_f1);
        let d_h = dy + &self.ln2.backward(&cache.ln2, &d_n2);
        let (d_q, d_kv) = self.attn.backward(&cache.attn, &d_h);
        let d_n1 = d_q + d_kv;
        &d_h + &self.ln1.backward(&cache.ln1, &d_n1)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.ln1.visit(f);
        self.attn.visit(f);
        self.ln2.visit(f);
        self.ff1.visit(f);
        self.ff2.visit(f);
    }
}

// ---------------------------------------------------------------------------
// Decoder layer: causal self-attention, text cross-attention, acoustic
// cross-attention, feed-forward — in series, each with its own residual, so
// a disabled source degenerates to the identity for that sub-layer.

#[derive(Debug, Clone)]
struct DecoderLayer<T> {
    ln_self: LayerNorm<T>,
    self_attn: MultiHeadAttention<T>,
    ln_text: LayerNorm<T>,
    text_cross: MultiHeadAttention<T>,
    ln_ac: LayerNorm<T>,
    ac_cross: MultiHeadAttention<T>,
    ln_ff: LayerNorm<T>,
    ff1: Linear<T>,
    ff2: Linear<T>,
}

struct CrossCache<T> {
    ln: LayerNormCache<T>,
    attn: AttnCache<T>,
}

struct DecoderLayerCache<T> {
    ln_self: LayerNormCache<T>,
    self_attn: AttnCache<T>,
    text: Option<CrossCache<T>>,
    ac: Option<CrossCache<T>>,
    ln_ff: LayerNormCache<T>,
    ff1: LinearCache<T>,
    gelu: Array2<T>,
    ff2: LinearCache<T>,
}

impl<T: Real> DecoderLayer<T> {
    fn new(prefix: &str, cfg: &ModelConfig, seed: u64) -> DecoderLayer<T> {
        let d = cfg.d_model;
        DecoderLayer {
            ln_self: LayerNorm::new(&format!("{prefix}.lns"), d),
            self_attn: MultiHeadAttention::new(&format!("{prefix}.self"), d, cfg.n_heads, seed),
            ln_text: LayerNorm::new(&format!("{prefix}.lnt"), d),
            text_cross: MultiHeadAttention::new(&format!("{prefix}.tcross"), d, cfg.n_heads, seed),
            ln_ac: LayerNorm::new(&format!("{prefix}.lna"), d),
            ac_cross: MultiHeadAttention::new(&format!("{prefix}.across"), d, cfg.n_heads, seed),
            ln_ff: LayerNorm::new(&format!("{prefix}.lnf"), d),
            ff1: Linear::new(&format!("{prefix}.ff1"), d, d * cfg.ffn_mult, seed),
            ff2: Linear::new(&format!("{prefix}.ff2"), d * cfg.ffn_mult, d, seed),
        }
    }

    fn forward(
        &self,
        x: &Array2<T>,
        text_mem: Option<(&Array2<T>, &[bool])>,
        ac_mem: Option<(&Array2<T>, &[bool])>,
    ) -> (Array2<T>, DecoderLayerCache<T>) {
        let (n_s, ln_self) = self.ln_self.forward(x);
        let (a_s, self_attn) = self.self_attn.forward(&n_s, &n_s, true, None);
        let h_s = x + &a_s;

        let (a_t, text) = match text_mem {
            Some((mem, mask)) => {
                let (n_t, ln) = self.ln_text.forward(&h_s);
                let (a, attn) = self.text_cross.forward(&n_t, mem, false, Some(mask));
                (&h_s + &a, Some(CrossCache { ln, attn }))
            }
            None => (h_s.clone(), None),
        };

        let (a_a, ac) = match ac_mem {
            Some((mem, mask)) => {
                let (n_a, ln) = self.ln_ac.forward(&a_t);
                let (a, attn) = self.ac_cross.forward(&n_a, mem, false, Some(mask));
                (&a_t + &a, Some(CrossCache { ln, attn }))
            }
            None => (a_t.clone(), None),
        };

        let (n_f, ln_ff) = self.ln_ff.forward(&a_a);
        let (f1, ff1) = self.ff1.forward(&n_f);
        let (g, gelu) = gelu_forward(&f1);
        let (f2, ff2) = self.ff2.forward(&g);
        let y = &a_a + &f2;
        (
            y,
            DecoderLayerCache {
                ln_self,
                self_attn,
                text,
                ac,
                ln_ff,
                ff1,
                gelu,
                ff2,
            },
        )
    }

    /// Returns `(d_x, d_text_mem, d_ac_mem)`; memory gradients are `None`
    /// when the corresponding sub-layer was skipped.
    fn backward(
        &mut self,
        cache: &DecoderLayerCache<T>,
        dy: &Array2<T>,
    ) -> (Array2<T>, Option<Array2<T>>, Option<Array2<T>>) {
        let d_g = self.ff2.backward(&cache.ff2, dy);
        let d_f1 = gelu_backward(&cache.gelu, &d_g);
        let d_nf = self.ff1.backward(&cache.ff1, &d_f1);
        let d_aa = dy + &self.ln_ff.backward(&cache.ln_ff, &d_nf);

        let (d_at, d_ac_mem) = match &cache.ac {
            Some(cc) => {
                let (d_na, d_mem) = self.ac_cross.backward(&cc.attn, &d_aa);
                (&d_aa + &self.ln_ac.backward(&cc.ln, &d_na), Some(d_mem))
            }
            None => (d_aa.clone(), None),
        };

        let (d_hs, d_text_mem) = match &cache.text {
            Some(cc) => {
                let (d_nt, d_mem) = self.text_cross.backward(&cc.attn, &d_at);
                (&d_at + &self.ln_text.backward(&cc.ln, &d_nt), Some(d_mem))
            }
            None => (d_at.clone(), None),
        };

        let (d_q, d_kv) = self.self_attn.backward(&cache.self_attn, &d_hs);
        let d_ns = d_q + d_kv;
        let d_x = &d_hs + &self.ln_self.backward(&cache.ln_self, &d_ns);
        (d_x, d_text_mem, d_ac_mem)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.ln_self.visit(f);
        self.self_attn.visit(f);
        self.ln_text.visit(f);
        self.text_cross.visit(f);
        self.ln_ac.visit(f);
        self.ac_cross.visit(f);
        self.ln_ff.visit(f);
        self.ff1.visit(f);
        self.ff2.visit(f);
    }
}

// ---------------------------------------------------------------------------

pub struct TextEncCache<T> {
    emb: EmbeddingCache,
    pos: EmbeddingCache,
    layers: Vec<EncoderLayerCache<T>>,
    ln: LayerNormCache<T>,
}

pub struct AcousticEncCache<T> {
    blocks: Vec<ConvBlockCache<T>>,
    t_sub: usize,
    fc1: LinearCache<T>,
    gelu1: Array2<T>,
    fc2: LinearCache<T>,
    gelu2: Array2<T>,
    layers: Vec<EncoderLayerCache<T>>,
    ln: LayerNormCache<T>,
}

pub struct DecoderCache<T> {
    emb: EmbeddingCache,
    pos: EmbeddingCache,
    layers: Vec<DecoderLayerCache<T>>,
    ln: LayerNormCache<T>,
    h_final: Array2<T>,
    out: Option<LinearCache<T>>,
    text_len: usize,
    ac_len: usize,
}

/// Caches for one full forward pass.
pub struct ForwardCache<T> {
    pub text: Option<TextEncCache<T>>,
    pub acoustic: Option<AcousticEncCache<T>>,
    pub decoder: DecoderCache<T>,
}

#[derive(Clone)]
pub struct CorrectionModel<T> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub seed: u64,
    text_embed: Embedding<T>,
    text_pos: Embedding<T>,
    text_layers: Vec<EncoderLayer<T>>,
    text_ln: LayerNorm<T>,
    conv_blocks: Vec<ConvBlock<T>>,
    ac_fc1: Linear<T>,
    ac_fc2: Linear<T>,
    ac_layers: Vec<EncoderLayer<T>>,
    ac_ln: LayerNorm<T>,
    dec_embed: Embedding<T>,
    dec_pos: Embedding<T>,
    dec_layers: Vec<DecoderLayer<T>>,
    dec_ln: LayerNorm<T>,
    out_proj: Option<Linear<T>>,
}

impl<T: Real> CorrectionModel<T> {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<CorrectionModel<T>, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let v = vocab.len();
        let [c1, c2, c3] = config.conv_channels;
        let flat = c3 * config.feature_width;
        let model = CorrectionModel {
            text_embed: Embedding::new("text.emb", v, d, seed),
            text_pos: Embedding::new("text.pos", config.max_src_len, d, seed),
            text_layers: (0..config.n_text_layers)
                .map(|i| EncoderLayer::new(&format!("text.l{i}"), &config, seed))
                .collect(),
            text_ln: LayerNorm::new("text.ln", d),
            conv_blocks: vec![
                ConvBlock::new("ac.b0", 1, c1, seed),
                ConvBlock::new("ac.b1", c1, c2, seed),
                ConvBlock::new("ac.b2", c2, c3, seed),
            ],
            ac_fc1: Linear::new("ac.fc1", flat, d, seed),
            ac_fc2: Linear::new("ac.fc2", d, d, seed),
            ac_layers: (0..config.n_acoustic_layers)
                .map(|i| EncoderLayer::new(&format!("ac.l{i}"), &config, seed))
                .collect(),
            ac_ln: LayerNorm::new("ac.ln", d),
            dec_embed: Embedding::new("dec.emb", v, d, seed),
            dec_pos: Embedding::new("dec.pos", config.max_tgt_len + 1, d, seed),
            dec_layers: (0..config.n_decoder_layers)
                .map(|i| DecoderLayer::new(&format!("dec.l{i}"), &config, seed))
                .collect(),
            dec_ln: LayerNorm::new("dec.ln", d),
            out_proj: if config.tie_output {
                None
            } else {
                Some(Linear::new("dec.out", d, v, seed))
            },
            config,
            vocab,
            seed,
        };
        Ok(model)
    }

    /// Visits every parameter in a fixed order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.text_embed.visit(f);
        self.text_pos.visit(f);
        for l in &mut self.text_layers {
            l.visit(f);
        }
        self.text_ln.visit(f);
        for b in &mut self.conv_blocks {
            b.visit(f);
        }
        self.ac_fc1.visit(f);
        self.ac_fc2.visit(f);
        for l in &mut self.ac_layers {
            l.visit(f);
        }
        self.ac_ln.visit(f);
        self.dec_embed.visit(f);
        self.dec_pos.visit(f);
        for l in &mut self.dec_layers {
            l.visit(f);
        }
        self.dec_ln.visit(f);
        if let Some(o) = &mut self.out_proj {
            o.visit(f);
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    pub fn n_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    /// Source token layout `[BOS] hyp [SEP] context [EOS]`, truncating the
    /// oldest context first and never the hypothesis. Context is dropped
    /// entirely when the config disables it.
    pub fn source_ids(&self, hyp: &str, context: &str) -> Vec<u32> {
        let hyp_ids = self.vocab.encode(hyp);
        let ctx_ids = if self.config.use_context {
            self.vocab.encode(context)
        } else {
            Vec::new()
        };
        let budget = self.config.max_src_len.saturating_sub(3);
        let hyp_keep = hyp_ids.len().min(budget);
        let ctx_budget = budget - hyp_keep;
        let ctx_skip = ctx_ids.len().saturating_sub(ctx_budget);
        let mut ids = Vec::with_capacity(hyp_keep + ctx_ids.len() - ctx_skip + 3);
        ids.push(BOS_ID);
        ids.extend_from_slice(&hyp_ids[..hyp_keep]);
        ids.push(SEP_ID);
        ids.extend_from_slice(&ctx_ids[ctx_skip..]);
        ids.push(EOS_ID);
        ids
    }

    /// Runs the text encoder over explicit ids and a key mask. Exposed so
    /// padding behavior can be exercised directly.
    pub fn encode_tokens(&self, ids: &[u32], mask: &[bool]) -> (TextEncoding<T>, TextEncCache<T>) {
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let pos: Vec<usize> = (0..ids.len()).collect();
        let (e, emb) = self.text_embed.forward(&idx);
        let (p, posc) = self.text_pos.forward(&pos);
        let mut x = e + p;
        let mut layers = Vec::with_capacity(self.text_layers.len());
        for layer in &self.text_layers {
            let (y, c) = layer.forward(&x, Some(mask));
            x = y;
            layers.push(c);
        }
        let (h, ln) = self.text_ln.forward(&x);
        (
            TextEncoding {
                h,
                mask: mask.to_vec(),
            },
            TextEncCache {
                emb,
                pos: posc,
                layers,
                ln,
            },
        )
    }

    pub fn encode_text(&self, hyp: &str, context: &str) -> (TextEncoding<T>, TextEncCache<T>) {
        let ids = self.source_ids(hyp, context);
        let mask = vec![true; ids.len()];
        self.encode_tokens(&ids, &mask)
    }

    fn backward_text(&mut self, cache: &TextEncCache<T>, d_h: &Array2<T>) {
        let mut dx = self.text_ln.backward(&cache.ln, d_h);
        for (layer, c) in self.text_layers.iter_mut().zip(&cache.layers).rev() {
            dx = layer.backward(c, &dx);
        }
        self.text_embed.backward(&cache.emb, &dx);
        self.text_pos.backward(&cache.pos, &dx);
    }

    /// Conv stack, flatten, two projections, sinusoidal positions, then the
    /// acoustic transformer. Output length is `subsample_len(T)`.
    pub fn encode_acoustic(
        &self,
        feats: &FeatureSequence,
    ) -> Result<(AcousticEncoding<T>, AcousticEncCache<T>), ModelError> {
        if feats.width() != self.config.feature_width {
            return Err(ModelError::WidthMismatch {
                expected: self.config.feature_width,
                got: feats.width(),
            });
        }
        let t = feats.len();
        let w = feats.width();
        let mut x3: Array3<T> = Array3::zeros((1, t, w));
        for i in 0..t {
            for j in 0..w {
                x3[[0, i, j]] = T::from_f64(feats.frames[[i, j]] as f64);
            }
        }
        let mut blocks = Vec::with_capacity(3);
        for block in &self.conv_blocks {
            let (y, c) = block.forward(&x3);
            x3 = y;
            blocks.push(c);
        }
        let (c3, t_sub, _) = x3.dim();
        debug_assert_eq!(t_sub, subsample_len(t));
        let mut flat: Array2<T> = Array2::zeros((t_sub, c3 * w));
        for ch in 0..c3 {
            for i in 0..t_sub {
                for j in 0..w {
                    flat[[i, ch * w + j]] = x3[[ch, i, j]];
                }
            }
        }
        let (f1, fc1) = self.ac_fc1.forward(&flat);
        let (g1, gelu1) = gelu_forward(&f1);
        let (f2, fc2) = self.ac_fc2.forward(&g1);
        let (g2, gelu2) = gelu_forward(&f2);
        let h0 = &g2 + &sinusoidal_positions::<T>(t_sub, self.config.d_model);
        let mask = vec![true; t_sub];
        let (enc, tc) = self.acoustic_transform_cached(&h0, &mask);
        Ok((
            enc,
            AcousticEncCache {
                blocks,
                t_sub,
                fc1,
                gelu1,
                fc2,
                gelu2,
                layers: tc.0,
                ln: tc.1,
            },
        ))
    }

    /// The transformer stage of the acoustic encoder on pre-projected
    /// frames; exposed for padding/masking tests.
    pub fn acoustic_transform(&self, h0: &Array2<T>, mask: &[bool]) -> Array2<T> {
        self.acoustic_transform_cached(h0, mask).0.h
    }

    #[allow(clippy::type_complexity)]
    fn acoustic_transform_cached(
        &self,
        h0: &Array2<T>,
        mask: &[bool],
    ) -> (AcousticEncoding<T>, (Vec<EncoderLayerCache<T>>, LayerNormCache<T>)) {
        let mut x = h0.clone();
        let mut layers = Vec::with_capacity(self.ac_layers.len());
        for layer in &self.ac_layers {
            let (y, c) = layer.forward(&x, Some(mask));
            x = y;
            layers.push(c);
        }
        let (h, ln) = self.ac_ln.forward(&x);
        (
            AcousticEncoding {
                h,
                mask: mask.to_vec(),
            },
            (layers, ln),
        )
    }

    fn backward_acoustic(&mut self, cache: &AcousticEncCache<T>, d_h: &Array2<T>) {
        let mut dx = self.ac_ln.backward(&cache.ln, d_h);
        for (layer, c) in self.ac_layers.iter_mut().zip(&cache.layers).rev() {
            dx = layer.backward(c, &dx);
        }
        // Positions are constants; gradient passes straight to the proj.
        let d_g2 = dx;
        let d_f2 = gelu_backward(&cache.gelu2, &d_g2);
        let d_g1 = self.ac_fc2.backward(&cache.fc2, &d_f2);
        let d_f1 = gelu_backward(&cache.gelu1, &d_g1);
        let d_flat = self.ac_fc1.backward(&cache.fc1, &d_f1);
        let w = self.config.feature_width;
        let c3 = self.config.conv_channels[2];
        let mut d_x3: Array3<T> = Array3::zeros((c3, cache.t_sub, w));
        for ch in 0..c3 {
            for i in 0..cache.t_sub {
                for j in 0..w {
                    d_x3[[ch, i, j]] = d_flat[[i, ch * w + j]];
                }
            }
        }
        for (block, c) in self.conv_blocks.iter_mut().zip(&cache.blocks).rev() {
            d_x3 = block.backward(c, &d_x3);
        }
        // Input features are data, not parameters; gradient stops here.
    }

    /// Teacher-forced decoder pass: `prefix` excludes BOS, which is
    /// prepended internally; row `i` of the logits scores position `i+1`.
    pub fn decode_logits(
        &self,
        prefix: &[u32],
        text: Option<&TextEncoding<T>>,
        ac: Option<&AcousticEncoding<T>>,
    ) -> (Array2<T>, DecoderCache<T>) {
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(BOS_ID as usize);
        ids.extend(prefix.iter().map(|&t| t as usize));
        let pos: Vec<usize> = (0..ids.len()).collect();
        let (e, emb) = self.dec_embed.forward(&ids);
        let (p, posc) = self.dec_pos.forward(&pos);
        let mut x = e + p;
        let text_mem = text.map(|t| (&t.h, t.mask.as_slice()));
        let ac_mem = ac.map(|a| (&a.h, a.mask.as_slice()));
        let mut layers = Vec::with_capacity(self.dec_layers.len());
        for layer in &self.dec_layers {
            let (y, c) = layer.forward(&x, text_mem, ac_mem);
            x = y;
            layers.push(c);
        }
        let (h, ln) = self.dec_ln.forward(&x);
        let (logits, out) = match &self.out_proj {
            Some(proj) => {
                let (l, c) = proj.forward(&h);
                (l, Some(c))
            }
            None => (h.dot(&self.dec_embed.table.value.t()), None),
        };
        (
            logits,
            DecoderCache {
                emb,
                pos: posc,
                layers,
                ln,
                h_final: h,
                out,
                text_len: text.map_or(0, |t| t.h.nrows()),
                ac_len: ac.map_or(0, |a| a.h.nrows()),
            },
        )
    }

    /// Backward through the decoder; returns memory gradients
    /// `(d_text_mem, d_ac_mem)` summed over layers.
    fn backward_decoder(
        &mut self,
        cache: &DecoderCache<T>,
        d_logits: &Array2<T>,
    ) -> (Option<Array2<T>>, Option<Array2<T>>) {
        let d_h = match (&mut self.out_proj, &cache.out) {
            (Some(proj), Some(c)) => proj.backward(c, d_logits),
            _ => {
                // Tied projection: logits = h E^T.
                self.dec_embed.table.grad += &d_logits.t().dot(&cache.h_final);
                d_logits.dot(&self.dec_embed.table.value)
            }
        };
        let mut dx = self.dec_ln.backward(&cache.ln, &d_h);
        let d = self.config.d_model;
        let mut d_text = (cache.text_len > 0).then(|| Array2::zeros((cache.text_len, d)));
        let mut d_ac = (cache.ac_len > 0).then(|| Array2::zeros((cache.ac_len, d)));
        for (layer, c) in self.dec_layers.iter_mut().zip(&cache.layers).rev() {
            let (d_in, d_t, d_a) = layer.backward(c, &dx);
            dx = d_in;
            if let (Some(acc), Some(g)) = (d_text.as_mut(), d_t) {
                *acc += &g;
            }
            if let (Some(acc), Some(g)) = (d_ac.as_mut(), d_a) {
                *acc += &g;
            }
        }
        self.dec_embed.backward(&cache.emb, &dx);
        self.dec_pos.backward(&cache.pos, &dx);
        (d_text, d_ac)
    }

    /// Effective gates for this pass: the config's ablation switches AND the
    /// caller's phase gates AND input availability.
    fn effective_gates(&self, input: &ModelInput, gates: SourceGates) -> SourceGates {
        SourceGates {
            text: self.config.use_text && gates.text,
            acoustic: self.config.use_acoustic
                && gates.acoustic
                && input.features.map_or(false, |f| !f.is_empty()),
        }
    }

    /// Full teacher-forced forward pass.
    pub fn forward(
        &self,
        input: &ModelInput,
        prefix: &[u32],
        gates: SourceGates,
    ) -> Result<(Array2<T>, ForwardCache<T>), ModelError> {
        let g = self.effective_gates(input, gates);
        let (text_enc, text_cache) = if g.text {
            let (e, c) = self.encode_text(input.hyp, input.context);
            (Some(e), Some(c))
        } else {
            (None, None)
        };
        let (ac_enc, ac_cache) = if g.acoustic {
            let (e, c) = self.encode_acoustic(input.features.unwrap())?;
            (Some(e), Some(c))
        } else {
            (None, None)
        };
        let (logits, decoder) = self.decode_logits(prefix, text_enc.as_ref(), ac_enc.as_ref());
        Ok((
            logits,
            ForwardCache {
                text: text_cache,
                acoustic: ac_cache,
                decoder,
            },
        ))
    }

    /// Accumulates gradients for one sample given `d loss / d logits`.
    pub fn backward(&mut self, cache: &ForwardCache<T>, d_logits: &Array2<T>) {
        let (d_text, d_ac) = self.backward_decoder(&cache.decoder, d_logits);
        if let (Some(c), Some(g)) = (&cache.text, d_text) {
            self.backward_text(c, &g);
        }
        if let (Some(c), Some(g)) = (&cache.acoustic, d_ac) {
            self.backward_acoustic(c, &g);
        }
    }

    /// Beam-decodes a correction for one input. Returns detokenized text.
    pub fn correct(
        &self,
        input: &ModelInput,
        gates: SourceGates,
        beam_size: usize,
        max_len: usize,
    ) -> Result<String, ModelError> {
        let g = self.effective_gates(input, gates);
        let text_enc = g.text.then(|| self.encode_text(input.hyp, input.context).0);
        let ac_enc = match (g.acoustic, input.features) {
            (true, Some(f)) => Some(self.encode_acoustic(f)?.0),
            _ => None,
        };
        let scorer = DecoderScorer {
            model: self,
            text: text_enc.as_ref(),
            ac: ac_enc.as_ref(),
        };
        let tokens = beam::beam_search(&scorer, beam_size, max_len.min(self.config.max_tgt_len));
        Ok(self.vocab.decode(&tokens))
    }
}

/// Step scorer over a fixed pair of encoded memories.
struct DecoderScorer<'a, T> {
    model: &'a CorrectionModel<T>,
    text: Option<&'a TextEncoding<T>>,
    ac: Option<&'a AcousticEncoding<T>>,
}

impl<T: Real> beam::StepScorer for DecoderScorer<'_, T> {
    fn step_logprobs(&self, prefix: &[u32]) -> Vec<f64> {
        let (logits, _) = self.model.decode_logits(prefix, self.text, self.ac);
        let last = logits.row(logits.nrows() - 1);
        let max = last.iter().cloned().fold(T::neg_infinity(), T::max);
        let lse = max + last.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        last.iter().map(|&v| (v - lse).to_f64()).collect()
    }
}

/// Fixed sinusoidal position table of shape `(len, d)`.
pub fn sinusoidal_positions<T: Real>(len: usize, d: usize) -> Array2<T> {
    Array2::from_shape_fn((len, d), |(t, j)| {
        let pair = (j / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * pair / d as f64);
        T::from_f64(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

#[cfg(test)]
mod tests;
