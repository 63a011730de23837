//! A small pre-norm encoder-decoder transformer, built on the tape so
//! every gradient-flow and overfit test runs in seconds on a CPU.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tapegrad::{BoundParams, ParamStore, Tape, Var};

use super::{apply_dropout, xavier_uniform, BackboneConfig, Mode, ModelBackend};

const NEG_INF: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

/// From-scratch transformer with learned positional embeddings and a
/// feed-forward width of four times the model dimension.
#[derive(Debug, Clone)]
pub struct TinyTransformer {
    config: BackboneConfig,
}

impl TinyTransformer {
    pub fn new(config: BackboneConfig) -> crate::error::Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    fn ff_dim(&self) -> usize {
        4 * self.config.d_model
    }

    fn head_dim(&self) -> usize {
        self.config.d_model / self.config.attention_heads
    }

    /// Multi-head attention. `queries_from` is `[B, Tq, d]`, `keys_from`
    /// is `[B, Tk, d]`, and `additive_mask` is `[B, H, Tq, Tk]` with 0 on
    /// allowed pairs and a large negative value on forbidden ones.
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        prefix: &str,
        queries_from: Var,
        keys_from: Var,
        additive_mask: &ArrayD<f64>,
    ) -> Var {
        let d = self.config.d_model;
        let h = self.config.attention_heads;
        let dh = self.head_dim();
        let q_shape = tape.value(queries_from).shape().to_vec();
        let k_shape = tape.value(keys_from).shape().to_vec();
        let (b, tq, tk) = (q_shape[0], q_shape[1], k_shape[1]);

        let project = |tape: &mut Tape, x: Var, t: usize, name: &str| -> Var {
            let flat = tape.reshape(x, &[b * t, d]);
            let proj = tape.matmul(flat, params.var(name));
            let split = tape.reshape(proj, &[b, t, h, dh]);
            tape.permute(split, &[0, 2, 1, 3])
        };
        let q = project(tape, queries_from, tq, &format!("{prefix}_wq"));
        let k = project(tape, keys_from, tk, &format!("{prefix}_wk"));
        let v = project(tape, keys_from, tk, &format!("{prefix}_wv"));

        let k_t = tape.permute(k, &[0, 1, 3, 2]);
        let scores = tape.batch_matmul(q, k_t);
        let scaled = tape.mul_scalar(scores, 1.0 / (dh as f64).sqrt());
        let masked = tape.add_const(scaled, additive_mask);
        let probs = tape.softmax_last(masked);
        let context = tape.batch_matmul(probs, v);

        let merged = tape.permute(context, &[0, 2, 1, 3]);
        let flat = tape.reshape(merged, &[b * tq, d]);
        let out = tape.matmul(flat, params.var(&format!("{prefix}_wo")));
        tape.reshape(out, &[b, tq, d])
    }

    fn feed_forward(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Var {
        let d = self.config.d_model;
        let shape = tape.value(x).shape().to_vec();
        let (b, t) = (shape[0], shape[1]);
        let flat = tape.reshape(x, &[b * t, d]);
        let h = tape.matmul(flat, params.var(&format!("{prefix}.ff_w1")));
        let h = tape.add_bias(h, params.var(&format!("{prefix}.ff_b1")));
        let h = tape.relu(h);
        let out = tape.matmul(h, params.var(&format!("{prefix}.ff_w2")));
        let out = tape.add_bias(out, params.var(&format!("{prefix}.ff_b2")));
        tape.reshape(out, &[b, t, d])
    }

    fn layer_norm(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        gamma: &str,
        beta: &str,
        x: Var,
    ) -> Var {
        tape.layer_norm(x, params.var(gamma), params.var(beta), LN_EPS)
    }

    fn embed(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        ids: &Array2<usize>,
        pos_table: &str,
    ) -> Var {
        let (_, t) = ids.dim();
        let tok = tape.embedding(params.var("backbone.tok_embed"), ids);
        let positions = Array2::from_shape_fn(ids.dim(), |(_, j)| j);
        let pos = tape.embedding(params.var(pos_table), &positions);
        debug_assert!(t >= 1);
        tape.add(tok, pos)
    }

    /// Additive mask allowing attention only onto unmasked key positions.
    fn padding_mask(&self, key_mask: &Array2<f64>, tq: usize) -> ArrayD<f64> {
        let (b, tk) = key_mask.dim();
        let h = self.config.attention_heads;
        ArrayD::from_shape_fn(IxDyn(&[b, h, tq, tk]), |idx| {
            if key_mask[[idx[0], idx[3]]] == 1.0 {
                0.0
            } else {
                NEG_INF
            }
        })
    }

    /// Additive mask combining causal order with target padding.
    fn causal_mask(&self, tgt_mask: &Array2<f64>) -> ArrayD<f64> {
        let (b, t) = tgt_mask.dim();
        let h = self.config.attention_heads;
        ArrayD::from_shape_fn(IxDyn(&[b, h, t, t]), |idx| {
            let (q, k) = (idx[2], idx[3]);
            if k <= q && tgt_mask[[idx[0], k]] == 1.0 {
                0.0
            } else {
                NEG_INF
            }
        })
    }
}

impl ModelBackend for TinyTransformer {
    fn d_model(&self) -> usize {
        self.config.d_model
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let ff = self.ff_dim();
        let embed = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            ArrayD::from_shape_simple_fn(IxDyn(&[rows, cols]), || rng.gen_range(-0.1..0.1))
        };

        store.insert("backbone.tok_embed", embed(rng, v, d));
        store.insert(
            "backbone.pos_enc",
            embed(rng, self.config.max_source_len, d),
        );
        store.insert(
            "backbone.pos_dec",
            embed(rng, self.config.max_target_len, d),
        );

        let norm_pair = |store: &mut ParamStore, gamma: String, beta: String| {
            store.insert(gamma, ArrayD::ones(IxDyn(&[d])));
            store.insert(beta, ArrayD::zeros(IxDyn(&[d])));
        };
        let attn_block = |store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: String| {
            for suffix in ["wq", "wk", "wv", "wo"] {
                store.insert(format!("{prefix}_{suffix}"), xavier_uniform(rng, d, d));
            }
        };
        let ff_block = |store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: String| {
            store.insert(format!("{prefix}.ff_w1"), xavier_uniform(rng, d, ff));
            store.insert(format!("{prefix}.ff_b1"), ArrayD::zeros(IxDyn(&[ff])));
            store.insert(format!("{prefix}.ff_w2"), xavier_uniform(rng, ff, d));
            store.insert(format!("{prefix}.ff_b2"), ArrayD::zeros(IxDyn(&[d])));
        };

        for i in 0..self.config.encoder_layers {
            let layer = format!("backbone.enc{i}");
            norm_pair(store, format!("{layer}.ln1_g"), format!("{layer}.ln1_b"));
            attn_block(store, rng, format!("{layer}.attn"));
            norm_pair(store, format!("{layer}.ln2_g"), format!("{layer}.ln2_b"));
            ff_block(store, rng, layer);
        }
        norm_pair(
            store,
            "backbone.enc_ln_g".into(),
            "backbone.enc_ln_b".into(),
        );

        for i in 0..self.config.decoder_layers {
            let layer = format!("backbone.dec{i}");
            norm_pair(store, format!("{layer}.ln1_g"), format!("{layer}.ln1_b"));
            attn_block(store, rng, format!("{layer}.self"));
            norm_pair(store, format!("{layer}.ln2_g"), format!("{layer}.ln2_b"));
            attn_block(store, rng, format!("{layer}.cross"));
            norm_pair(store, format!("{layer}.ln3_g"), format!("{layer}.ln3_b"));
            ff_block(store, rng, layer);
        }
        norm_pair(
            store,
            "backbone.dec_ln_g".into(),
            "backbone.dec_ln_b".into(),
        );

        store.insert("backbone.lm_w", xavier_uniform(rng, d, v));
        store.insert("backbone.lm_b", ArrayD::zeros(IxDyn(&[v])));
    }

    fn encode(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        src_ids: &Array2<usize>,
        src_mask: &Array2<f64>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Var {
        let (_, s) = src_ids.dim();
        assert!(
            s <= self.config.max_source_len,
            "source length {s} exceeds max_source_len {}",
            self.config.max_source_len
        );
        let mask = self.padding_mask(src_mask, s);
        let mut x = self.embed(tape, params, src_ids, "backbone.pos_enc");
        for i in 0..self.config.encoder_layers {
            let layer = format!("backbone.enc{i}");
            let normed = self.layer_norm(
                tape,
                params,
                &format!("{layer}.ln1_g"),
                &format!("{layer}.ln1_b"),
                x,
            );
            let attn = self.attention(
                tape,
                params,
                &format!("{layer}.attn"),
                normed,
                normed,
                &mask,
            );
            let attn = apply_dropout(tape, attn, self.config.dropout, mode, rng);
            x = tape.add(x, attn);

            let normed = self.layer_norm(
                tape,
                params,
                &format!("{layer}.ln2_g"),
                &format!("{layer}.ln2_b"),
                x,
            );
            let ff = self.feed_forward(tape, params, &layer, normed);
            let ff = apply_dropout(tape, ff, self.config.dropout, mode, rng);
            x = tape.add(x, ff);
        }
        self.layer_norm(tape, params, "backbone.enc_ln_g", "backbone.enc_ln_b", x)
    }

    fn decode_logits(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        memory: Var,
        src_mask: &Array2<f64>,
        tgt_in_ids: &Array2<usize>,
        tgt_mask: &Array2<f64>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Var {
        let (b, t) = tgt_in_ids.dim();
        assert!(
            t <= self.config.max_target_len,
            "target length {t} exceeds max_target_len {}",
            self.config.max_target_len
        );
        let self_mask = self.causal_mask(tgt_mask);
        let cross_mask = self.padding_mask(src_mask, t);

        let mut x = self.embed(tape, params, tgt_in_ids, "backbone.pos_dec");
        for i in 0..self.config.decoder_layers {
            let layer = format!("backbone.dec{i}");
            let normed = self.layer_norm(
                tape,
                params,
                &format!("{layer}.ln1_g"),
                &format!("{layer}.ln1_b"),
                x,
            );
            let attn = self.attention(
                tape,
                params,
                &format!("{layer}.self"),
                normed,
                normed,
                &self_mask,
            );
            let attn = apply_dropout(tape, attn, self.config.dropout, mode, rng);
            x = tape.add(x, attn);

            let normed = self.layer_norm(
                tape,
                params,
                &format!("{layer}.ln2_g"),
                &format!("{layer}.ln2_b"),
                x,
            );
            let cross = self.attention(
                tape,
                params,
                &format!("{layer}.cross"),
                normed,
                memory,
                &cross_mask,
            );
            let cross = apply_dropout(tape, cross, self.config.dropout, mode, rng);
            x = tape.add(x, cross);

            let normed = self.layer_norm(
                tape,
                params,
                &format!("{layer}.ln3_g"),
                &format!("{layer}.ln3_b"),
                x,
            );
            let ff = self.feed_forward(tape, params, &layer, normed);
            let ff = apply_dropout(tape, ff, self.config.dropout, mode, rng);
            x = tape.add(x, ff);
        }
        let x = self.layer_norm(tape, params, "backbone.dec_ln_g", "backbone.dec_ln_b", x);
        let d = self.config.d_model;
        let flat = tape.reshape(x, &[b * t, d]);
        let logits = tape.matmul(flat, params.var("backbone.lm_w"));
        let logits = tape.add_bias(logits, params.var("backbone.lm_b"));
        tape.reshape(logits, &[b, t, self.config.vocab_size])
    }
}
