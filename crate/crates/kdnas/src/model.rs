//! Configurable transformer encoder used as both teacher and student.
//!
//! Post-layer-norm blocks with learned absolute position embeddings and an
//! embedding layer norm. The forward pass exposes every layer's hidden state
//! and, on request, the concatenated Q/K/V projections of chosen layers, so
//! the same model serves hidden-state and attention-relation distillation.
//!
//! Hidden state `i` (1-based) is the output of transformer layer `i`; the
//! embedding output is not part of the hidden-state list.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::arch::ArchState;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-12;

/// Desk-scale default vocabulary.
pub const DESK_VOCAB: usize = 512;
/// Desk-scale default maximum sequence length.
pub const DESK_MAX_SEQ: usize = 32;

/// Per-layer parameter bundle, generic over storage so the same structure
/// holds tensors (the model) or tape variables (a bound forward pass).
#[derive(Debug, Clone)]
struct LayerParams<T> {
    wq: T,
    bq: T,
    wk: T,
    bk: T,
    wv: T,
    bv: T,
    wo: T,
    bo: T,
    ln1_gamma: T,
    ln1_beta: T,
    w1: T,
    b1: T,
    w2: T,
    b2: T,
    ln2_gamma: T,
    ln2_beta: T,
}

impl<T> LayerParams<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LayerParams<U> {
        LayerParams {
            wq: f(&self.wq),
            bq: f(&self.bq),
            wk: f(&self.wk),
            bk: f(&self.bk),
            wv: f(&self.wv),
            bv: f(&self.bv),
            wo: f(&self.wo),
            bo: f(&self.bo),
            ln1_gamma: f(&self.ln1_gamma),
            ln1_beta: f(&self.ln1_beta),
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
            ln2_gamma: f(&self.ln2_gamma),
            ln2_beta: f(&self.ln2_beta),
        }
    }

    fn fields(&self) -> [(&'static str, &T); 16] {
        [
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln1_gamma", &self.ln1_gamma),
            ("ln1_beta", &self.ln1_beta),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("ln2_gamma", &self.ln2_gamma),
            ("ln2_beta", &self.ln2_beta),
        ]
    }

    fn fields_mut(&mut self) -> [(&'static str, &mut T); 16] {
        [
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln1_gamma", &mut self.ln1_gamma),
            ("ln1_beta", &mut self.ln1_beta),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
            ("ln2_gamma", &mut self.ln2_gamma),
            ("ln2_beta", &mut self.ln2_beta),
        ]
    }
}

#[derive(Debug, Clone)]
struct ParamSet<T> {
    tok_embed: T,
    pos_embed: T,
    emb_ln_gamma: T,
    emb_ln_beta: T,
    layers: Vec<LayerParams<T>>,
}

impl<T> ParamSet<T> {
    fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ParamSet<U> {
        ParamSet {
            tok_embed: f(&self.tok_embed),
            pos_embed: f(&self.pos_embed),
            emb_ln_gamma: f(&self.emb_ln_gamma),
            emb_ln_beta: f(&self.emb_ln_beta),
            layers: self.layers.iter().map(|l| l.map(&mut f)).collect(),
        }
    }

    fn named(&self) -> Vec<(String, &T)> {
        let mut out = vec![
            ("tok_embed".to_string(), &self.tok_embed),
            ("pos_embed".to_string(), &self.pos_embed),
            ("emb_ln_gamma".to_string(), &self.emb_ln_gamma),
            ("emb_ln_beta".to_string(), &self.emb_ln_beta),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (field, t) in layer.fields() {
                out.push((format!("layer{}.{field}", i + 1), t));
            }
        }
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut out = vec![
            ("tok_embed".to_string(), &mut self.tok_embed),
            ("pos_embed".to_string(), &mut self.pos_embed),
            ("emb_ln_gamma".to_string(), &mut self.emb_ln_gamma),
            ("emb_ln_beta".to_string(), &mut self.emb_ln_beta),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (field, t) in layer.fields_mut() {
                out.push((format!("layer{}.{field}", i + 1), t));
            }
        }
        out
    }
}

/// Concatenated Q, K, V projections of one layer, each `|x| × d_h`.
#[derive(Debug, Clone)]
pub struct Qkv<T> {
    pub q: T,
    pub k: T,
    pub v: T,
}

/// Value-level forward outputs.
#[derive(Debug, Clone)]
pub struct ModelOutputs {
    /// Hidden states of layers `1..=L`, each `|x| × d_h`.
    pub hidden_states: Vec<Tensor>,
    /// Q/K/V for each requested layer (1-based).
    pub qkv: BTreeMap<usize, Qkv<Tensor>>,
}

/// Graph-level forward outputs (nodes on a caller-owned tape).
#[derive(Debug, Clone)]
pub struct TapedOutputs {
    pub hidden_states: Vec<Var>,
    pub qkv: BTreeMap<usize, Qkv<Var>>,
}

/// Model parameters bound onto a tape.
pub struct BoundModel {
    params: ParamSet<Var>,
}

impl BoundModel {
    /// Bound variables in the same canonical order as
    /// [`Model::named_params`].
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        self.params.named().into_iter().map(|(n, v)| (n, *v)).collect()
    }
}

/// A transformer encoder with explicit double-precision parameters.
#[derive(Debug, Clone)]
pub struct Model {
    arch: ArchState,
    vocab_size: usize,
    max_seq: usize,
    params: ParamSet<Tensor>,
}

fn xavier(shape: [usize; 2], rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
    Tensor::uniform(shape.to_vec(), -bound, bound, rng)
}

impl Model {
    /// Deterministically initialized model; identical `(arch, seed)` pairs
    /// produce bit-identical parameters.
    pub fn new(arch: ArchState, vocab_size: usize, max_seq: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        if vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocab_size must be at least 2, got {vocab_size}"
            )));
        }
        if max_seq == 0 {
            return Err(Error::Config("max_seq must be positive".into()));
        }
        let d = arch.hidden_size;
        let ff = arch.intermediate_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tok_embed = Tensor::uniform(vec![vocab_size, d], -0.05, 0.05, &mut rng);
        let pos_embed = Tensor::uniform(vec![max_seq, d], -0.05, 0.05, &mut rng);
        let emb_ln_gamma = Tensor::full(vec![d], 1.0);
        let emb_ln_beta = Tensor::zeros(vec![d]);
        let mut layers = Vec::with_capacity(arch.hidden_layers);
        for _ in 0..arch.hidden_layers {
            layers.push(LayerParams {
                wq: xavier([d, d], &mut rng),
                bq: Tensor::zeros(vec![d]),
                wk: xavier([d, d], &mut rng),
                bk: Tensor::zeros(vec![d]),
                wv: xavier([d, d], &mut rng),
                bv: Tensor::zeros(vec![d]),
                wo: xavier([d, d], &mut rng),
                bo: Tensor::zeros(vec![d]),
                ln1_gamma: Tensor::full(vec![d], 1.0),
                ln1_beta: Tensor::zeros(vec![d]),
                w1: xavier([d, ff], &mut rng),
                b1: Tensor::zeros(vec![ff]),
                w2: xavier([ff, d], &mut rng),
                b2: Tensor::zeros(vec![d]),
                ln2_gamma: Tensor::full(vec![d], 1.0),
                ln2_beta: Tensor::zeros(vec![d]),
            });
        }
        Ok(Self {
            arch,
            vocab_size,
            max_seq,
            params: ParamSet {
                tok_embed,
                pos_embed,
                emb_ln_gamma,
                emb_ln_beta,
                layers,
            },
        })
    }

    pub fn arch(&self) -> &ArchState {
        &self.arch
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_seq(&self) -> usize {
        self.max_seq
    }

    /// Named parameters in canonical order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.params.named()
    }

    /// Mutable named parameters in the same canonical order.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.params.named_mut()
    }

    /// Total number of trainable scalar parameters, by enumeration.
    pub fn num_params(&self) -> usize {
        self.params.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Bind all parameters onto a tape; `trainable` controls gradient
    /// tracking.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        BoundModel {
            params: self.params.map(|t| tape.leaf(t.clone(), trainable)),
        }
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("forward: empty token sequence".into()));
        }
        if tokens.len() > self.max_seq {
            return Err(Error::Input(format!(
                "forward: sequence length {} exceeds max_seq {}",
                tokens.len(),
                self.max_seq
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::Input(format!(
                "forward: token id {bad} out of range for vocab {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Differentiable forward pass over parameters previously bound with
    /// [`Model::bind`]. Returns all hidden states and Q/K/V for the layers
    /// in `capture_qkv` (1-based).
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        tokens: &[u32],
        capture_qkv: &BTreeSet<usize>,
    ) -> Result<TapedOutputs> {
        self.check_tokens(tokens)?;
        if let Some(&bad) = capture_qkv.iter().find(|&&l| l == 0 || l > self.arch.hidden_layers) {
            return Err(Error::Input(format!(
                "forward: capture layer {bad} outside 1..={}",
                self.arch.hidden_layers
            )));
        }
        let p = &bound.params;
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok = tape.embed(p.tok_embed, &ids)?;
        let pos = tape.embed(p.pos_embed, &positions)?;
        let summed = tape.add(tok, pos)?;
        let mut x = tape.layer_norm(summed, p.emb_ln_gamma, p.emb_ln_beta, LN_EPS)?;

        let heads = self.arch.attention_heads;
        let head_dim = self.arch.head_dim();
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut hidden_states = Vec::with_capacity(self.arch.hidden_layers);
        let mut qkv = BTreeMap::new();

        for (li, layer) in p.layers.iter().enumerate() {
            let q_lin = tape.matmul(x, layer.wq)?;
            let q = tape.add_row(q_lin, layer.bq)?;
            let k_lin = tape.matmul(x, layer.wk)?;
            let k = tape.add_row(k_lin, layer.bk)?;
            let v_lin = tape.matmul(x, layer.wv)?;
            let v = tape.add_row(v_lin, layer.bv)?;

            let mut contexts = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
                let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
                let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scaled = tape.scale(scores, scale);
                let attn = tape.softmax_rows(scaled)?;
                contexts.push(tape.matmul(attn, vh)?);
            }
            let ctx = tape.concat_cols(&contexts)?;
            let proj = tape.matmul(ctx, layer.wo)?;
            let attn_out = tape.add_row(proj, layer.bo)?;
            let res1 = tape.add(x, attn_out)?;
            let normed1 = tape.layer_norm(res1, layer.ln1_gamma, layer.ln1_beta, LN_EPS)?;

            let ff_lin = tape.matmul(normed1, layer.w1)?;
            let ff_in = tape.add_row(ff_lin, layer.b1)?;
            let ff_act = tape.activation(self.arch.activation, ff_in);
            let ff_proj = tape.matmul(ff_act, layer.w2)?;
            let ff_out = tape.add_row(ff_proj, layer.b2)?;
            let res2 = tape.add(normed1, ff_out)?;
            x = tape.layer_norm(res2, layer.ln2_gamma, layer.ln2_beta, LN_EPS)?;

            hidden_states.push(x);
            if capture_qkv.contains(&(li + 1)) {
                qkv.insert(li + 1, Qkv { q, k, v });
            }
        }
        Ok(TapedOutputs { hidden_states, qkv })
    }

    /// Plain forward pass: no gradients, outputs as owned tensors.
    pub fn forward(&self, tokens: &[u32], capture_qkv: &BTreeSet<usize>) -> Result<ModelOutputs> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = self.forward_bound(&mut tape, &bound, tokens, capture_qkv)?;
        Ok(ModelOutputs {
            hidden_states: out
                .hidden_states
                .iter()
                .map(|&v| tape.value(v).clone())
                .collect(),
            qkv: out
                .qkv
                .iter()
                .map(|(&l, t)| {
                    (
                        l,
                        Qkv {
                            q: tape.value(t.q).clone(),
                            k: tape.value(t.k).clone(),
                            v: tape.value(t.v).clone(),
                        },
                    )
                })
                .collect(),
        })
    }

    /// Persist parameters as a flat binary checkpoint with a shape manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let named = self.params.named();
        let entries: Vec<(String, &Tensor)> =
            named.iter().map(|(n, t)| (n.clone(), *t)).collect();
        checkpoint::save(
            path,
            &entries,
            json!({
                "kind": "encoder",
                "arch": self.arch.to_string(),
                "vocab_size": self.vocab_size,
                "max_seq": self.max_seq,
            }),
        )
    }

    /// Load a checkpoint written by [`Model::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta) = checkpoint::load(path)?;
        let arch: ArchState = meta["arch"]
            .as_str()
            .ok_or_else(|| Error::Input("checkpoint missing arch".into()))?
            .parse()?;
        let vocab_size = meta["vocab_size"]
            .as_u64()
            .ok_or_else(|| Error::Input("checkpoint missing vocab_size".into()))?
            as usize;
        let max_seq = meta["max_seq"]
            .as_u64()
            .ok_or_else(|| Error::Input("checkpoint missing max_seq".into()))?
            as usize;
        let mut model = Model::new(arch, vocab_size, max_seq, 0)?;
        let mut slots = model.params.named_mut();
        if tensors.len() != slots.len() {
            return Err(Error::Input(format!(
                "checkpoint has {} tensors, expected {}",
                tensors.len(),
                slots.len()
            )));
        }
        for ((name, tensor), (expect, slot)) in tensors.into_iter().zip(slots.iter_mut()) {
            if name != *expect {
                return Err(Error::Input(format!(
                    "checkpoint tensor {name:?} does not match manifest slot {expect:?}"
                )));
            }
            if slot.shape() != tensor.shape() {
                return Err(Error::Input(format!(
                    "checkpoint tensor {name:?} shape {:?} does not match model {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            **slot = tensor;
        }
        drop(slots);
        Ok(model)
    }
}

/// Analytic count of trainable parameters for an architecture, matching the
/// instantiated model exactly: token and position embeddings, the embedding
/// layer norm, and per layer four attention projections with biases, two
/// layer norms, and the two FFN projections with biases.
pub fn param_count(arch: &ArchState, vocab_size: usize, max_seq: usize) -> usize {
    let d = arch.hidden_size;
    let ff = arch.intermediate_size;
    let embeddings = vocab_size * d + max_seq * d + 2 * d;
    let attention = 4 * (d * d + d);
    let ffn = d * ff + ff + ff * d + d;
    let norms = 4 * d;
    embeddings + arch.hidden_layers * (attention + ffn + norms)
}

/// Multiply-accumulate &times; 2 estimate of one forward pass, dominated by
/// the projection, attention and FFN matmuls. Used by the synthetic latency
/// table; not a substitute for measurement.
pub fn forward_flops(arch: &ArchState, seq_len: usize) -> f64 {
    let s = seq_len as f64;
    let d = arch.hidden_size as f64;
    let ff = arch.intermediate_size as f64;
    let proj = 4.0 * 2.0 * s * d * d;
    let attn = 2.0 * 2.0 * s * s * d;
    let ffn = 2.0 * 2.0 * s * d * ff;
    arch.hidden_layers as f64 * (proj + attn + ffn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Activation;
    use crate::space;
    use rand::Rng;

    fn toy_arch() -> ArchState {
        ArchState::new(2, 2, 8, 16, Activation::Gelu).unwrap()
    }

    #[test]
    fn same_seed_gives_bit_identical_parameters() {
        let a = Model::new(toy_arch(), 32, 8, 7).unwrap();
        let b = Model::new(toy_arch(), 32, 8, 7).unwrap();
        for ((n1, t1), (_, t2)) in a.named_params().iter().zip(b.named_params()) {
            assert_eq!(t1.data(), t2.data(), "parameter {n1} differs");
        }
        let c = Model::new(toy_arch(), 32, 8, 8).unwrap();
        assert_ne!(
            a.named_params()[0].1.data(),
            c.named_params()[0].1.data()
        );
    }

    #[test]
    fn discovered_arch_shape() {
        let arch: ArchState = "4,4,288,768,gelu".parse().unwrap();
        let model = Model::new(arch, 512, 16, 0).unwrap();
        assert_eq!(model.arch().hidden_layers, 4);
        assert_eq!(model.arch().head_dim(), 72);
    }

    #[test]
    fn invalid_arch_is_config_error() {
        let err = ArchState::new(4, 3, 10, 64, Activation::Gelu).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let arch = toy_arch();
        assert!(matches!(
            Model::new(arch, 1, 8, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn forward_returns_all_hidden_states() {
        let teacher = Model::new(space::desk_teacher_arch(), 64, 16, 3).unwrap();
        let tokens: Vec<u32> = vec![5, 9, 2, 61];
        let out = teacher.forward(&tokens, &BTreeSet::new()).unwrap();
        assert_eq!(out.hidden_states.len(), 12);
        for h in &out.hidden_states {
            assert_eq!(h.shape(), &[4, 64]);
        }
        assert!(out.qkv.is_empty());

        let out2 = teacher.forward(&tokens, &BTreeSet::new()).unwrap();
        for (a, b) in out.hidden_states.iter().zip(&out2.hidden_states) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn forward_captures_requested_qkv() {
        let model = Model::new(toy_arch(), 32, 8, 1).unwrap();
        let capture: BTreeSet<usize> = [2].into();
        let out = model.forward(&[1, 2, 3], &capture).unwrap();
        assert_eq!(out.qkv.len(), 1);
        let qkv = &out.qkv[&2];
        assert_eq!(qkv.q.shape(), &[3, 8]);
        assert_eq!(qkv.k.shape(), &[3, 8]);
        assert_eq!(qkv.v.shape(), &[3, 8]);
    }

    #[test]
    fn forward_rejects_bad_tokens_and_lengths() {
        let model = Model::new(toy_arch(), 32, 4, 1).unwrap();
        assert!(matches!(
            model.forward(&[32], &BTreeSet::new()),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            model.forward(&[0; 5], &BTreeSet::new()),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            model.forward(&[], &BTreeSet::new()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn analytic_param_count_matches_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let heads = [1usize, 2, 4][rng.random_range(0..3)];
            let d = heads * rng.random_range(2..7usize);
            let arch = ArchState::new(
                rng.random_range(1..5usize),
                heads,
                d,
                rng.random_range(4..33usize),
                Activation::ALL[rng.random_range(0..3)],
            )
            .unwrap();
            let vocab = rng.random_range(2..60usize);
            let max_seq = rng.random_range(1..20usize);
            let model = Model::new(arch, vocab, max_seq, 0).unwrap();
            assert_eq!(
                model.num_params(),
                param_count(&arch, vocab, max_seq),
                "mismatch for {arch} vocab {vocab} max_seq {max_seq}"
            );
        }
    }

    #[test]
    fn production_scale_param_counts() {
        // Published parameter totals (in millions) at the 250002-token
        // vocabulary and 512-position embedding table.
        let cases = [
            ("3,12,384,1024,gelu", 100.0),
            ("4,4,288,768,gelu", 76.0),
            ("4,12,576,768,gelu", 153.0),
            ("12,12,768,3072,gelu", 277.0),
        ];
        for (text, published_m) in cases {
            let arch: ArchState = text.parse().unwrap();
            let count = param_count(&arch, 250_002, 512) as f64;
            let rel = (count / 1e6 - published_m).abs() / published_m;
            assert!(rel < 0.02, "{text}: {count} vs {published_m}M (rel {rel})");
        }
    }

    #[test]
    fn hidden_state_shapes_follow_arch_across_space_sample() {
        // 50 random production-space states instantiated at desk vocab.
        let space = paper_space_sample(50, 99);
        for arch in space {
            let model = Model::new(arch, DESK_VOCAB, 8, 5).unwrap();
            let out = model.forward(&[1, 2, 3, 4], &BTreeSet::new()).unwrap();
            assert_eq!(out.hidden_states.len(), arch.hidden_layers);
            for h in out.hidden_states {
                assert_eq!(h.shape(), &[4, arch.hidden_size]);
            }
        }
    }

    fn paper_space_sample(n: usize, seed: u64) -> Vec<ArchState> {
        crate::space::paper_space()
            .sample_random(n, seed, &BTreeSet::new())
            .unwrap()
    }

    #[test]
    fn checkpoint_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let model = Model::new(toy_arch(), 32, 8, 21).unwrap();
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(loaded.arch(), model.arch());
        for ((n, a), (_, b)) in model.named_params().iter().zip(loaded.named_params()) {
            assert_eq!(a.data(), b.data(), "parameter {n} differs after reload");
        }
    }
}
