//! Hooked forward pass: resid_pre capture and replace/add edits at named
//! (layer, position) cells.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::attention::{grouped_attention, mha_attention};
use super::config::{MlpKind, PositionEncoding};
use super::math::{apply_norm, apply_rotary, gelu_f64, linear, matvec, silu_f64};
use super::weights::MlpWeights;
use super::{ModelBundle, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookKind {
    /// Residual stream entering a layer, before its first normalization.
    ResidPre,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionSelector {
    All,
    Single(usize),
    Set(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HookPoint {
    pub layer: usize,
    pub kind: HookKind,
    pub positions: PositionSelector,
}

impl HookPoint {
    pub fn resid_pre(layer: usize, positions: PositionSelector) -> Self {
        HookPoint { layer, kind: HookKind::ResidPre, positions }
    }

    /// resid_pre at every layer at one position.
    pub fn all_layers_at(n_layers: usize, position: usize) -> Vec<HookPoint> {
        (0..n_layers)
            .map(|l| HookPoint::resid_pre(l, PositionSelector::Single(position)))
            .collect()
    }

    /// resid_pre at every layer at every position.
    pub fn all_layers_all_positions(n_layers: usize) -> Vec<HookPoint> {
        (0..n_layers).map(|l| HookPoint::resid_pre(l, PositionSelector::All)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditMode {
    Replace,
    Add,
}

/// One intervention on the residual stream at a resid_pre hook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEdit {
    pub layer: usize,
    pub position: usize,
    pub vector: Vec<f32>,
    pub mode: EditMode,
}

impl ResidualEdit {
    pub fn replace(layer: usize, position: usize, vector: Vec<f32>) -> Self {
        ResidualEdit { layer, position, vector, mode: EditMode::Replace }
    }

    pub fn add(layer: usize, position: usize, vector: Vec<f32>) -> Self {
        ResidualEdit { layer, position, vector, mode: EditMode::Add }
    }
}

/// Which attention kernel the forward pass uses. `Auto` picks the grouped
/// kernel iff `n_kv_heads < n_heads`; the explicit variants exist so the two
/// paths can be compared on the same weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum AttentionPath {
    #[default]
    Auto,
    MultiHead,
    Grouped,
}

#[derive(Debug, Clone)]
pub struct ForwardRequest<'a> {
    pub tokens: &'a [u32],
    pub mask: &'a [bool],
    pub capture: Vec<HookPoint>,
    pub edits: Vec<ResidualEdit>,
    pub attention_path: AttentionPath,
}

impl<'a> ForwardRequest<'a> {
    pub fn new(tokens: &'a [u32], mask: &'a [bool]) -> Self {
        ForwardRequest {
            tokens,
            mask,
            capture: Vec::new(),
            edits: Vec::new(),
            attention_path: AttentionPath::Auto,
        }
    }

    pub fn with_capture(mut self, capture: Vec<HookPoint>) -> Self {
        self.capture = capture;
        self
    }

    pub fn with_edits(mut self, edits: Vec<ResidualEdit>) -> Self {
        self.edits = edits;
        self
    }

    pub fn with_attention_path(mut self, path: AttentionPath) -> Self {
        self.attention_path = path;
        self
    }
}

/// Captured resid_pre vectors keyed by (layer, position).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivationCache {
    map: BTreeMap<(usize, usize), Vec<f32>>,
}

impl ActivationCache {
    pub fn get(&self, layer: usize, position: usize) -> Option<&[f32]> {
        self.map.get(&(layer, position)).map(Vec::as_slice)
    }

    pub fn insert(&mut self, layer: usize, position: usize, value: Vec<f32>) {
        self.map.insert((layer, position), value);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<f32>)> {
        self.map.iter()
    }
}

/// Next-token logits at the final position plus any captured activations.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    pub logits: Vec<f32>,
    pub cache: ActivationCache,
}

fn positions_of(selector: &PositionSelector, seq_len: usize) -> Vec<usize> {
    match selector {
        PositionSelector::All => (0..seq_len).collect(),
        PositionSelector::Single(p) => vec![*p],
        PositionSelector::Set(ps) => ps.clone(),
    }
}

impl ModelBundle {
    fn validate_request(&self, req: &ForwardRequest) -> Result<(), ModelError> {
        let cfg = self.config();
        if req.tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if req.tokens.len() != req.mask.len() {
            return Err(ModelError::MaskLength { tokens: req.tokens.len(), mask: req.mask.len() });
        }
        if req.tokens.len() > cfg.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: req.tokens.len(),
                max: cfg.max_seq_len,
            });
        }
        let seq = req.tokens.len();
        if let Some(idx) = req.tokens.iter().position(|&t| t as usize >= cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                index: idx,
                id: req.tokens[idx],
                vocab_size: cfg.vocab_size,
            });
        }
        for hook in &req.capture {
            if hook.layer >= cfg.n_layers {
                return Err(ModelError::HookOutOfRange {
                    layer: hook.layer,
                    n_layers: cfg.n_layers,
                });
            }
            let ok = match &hook.positions {
                PositionSelector::All => true,
                PositionSelector::Single(p) => *p < seq,
                PositionSelector::Set(ps) => ps.iter().all(|p| *p < seq),
            };
            if !ok {
                return Err(ModelError::PositionOutOfRange { seq_len: seq });
            }
        }
        for edit in &req.edits {
            if edit.layer >= cfg.n_layers {
                return Err(ModelError::HookOutOfRange {
                    layer: edit.layer,
                    n_layers: cfg.n_layers,
                });
            }
            if edit.position >= seq {
                return Err(ModelError::PositionOutOfRange { seq_len: seq });
            }
            if edit.vector.len() != cfg.d_model {
                return Err(ModelError::EditDimension {
                    got: edit.vector.len(),
                    want: cfg.d_model,
                });
            }
            if edit.vector.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteEdit {
                    layer: edit.layer,
                    position: edit.position,
                });
            }
        }
        if matches!(req.attention_path, AttentionPath::MultiHead)
            && cfg.n_kv_heads != cfg.n_heads
        {
            return Err(ModelError::InvalidConfig(
                "multi-head attention path requires n_kv_heads == n_heads".into(),
            ));
        }
        Ok(())
    }

    /// Run one full-sequence forward pass.
    ///
    /// Captured activations are the resid_pre values entering each hooked
    /// layer, recorded after any edit at that same hook (and necessarily
    /// before edits at later hooks). Replace edits overwrite the residual
    /// vector at exactly the named (layer, position) cell; add edits add
    /// their vector in place. Multiple edits on one cell apply in list
    /// order. Masked (padding) positions are excluded from attention.
    pub fn forward(&self, req: &ForwardRequest) -> Result<ForwardRecord, ModelError> {
        self.validate_request(req)?;
        let cfg = self.config();
        let weights = self.weights();
        let seq = req.tokens.len();

        // Rotary/learned position ids count only real tokens, so content
        // tokens keep their positions under left padding.
        let mut position_ids = Vec::with_capacity(seq);
        let mut running = 0usize;
        for &m in req.mask {
            position_ids.push(if m { running } else { 0 });
            if m {
                running += 1;
            }
        }

        let mut x = Array2::<f32>::zeros((seq, cfg.d_model));
        for (s, &tok) in req.tokens.iter().enumerate() {
            let emb = weights.embedding.row_f32(tok as usize);
            let mut row = x.row_mut(s);
            let row = row.as_slice_mut().expect("x rows contiguous");
            row.copy_from_slice(&emb);
            if cfg.position_encoding == PositionEncoding::Learned {
                let pos = weights
                    .pos_embedding
                    .as_ref()
                    .expect("pos_embedding checked at load")
                    .row_f32(position_ids[s]);
                for (r, p) in row.iter_mut().zip(&pos) {
                    *r += p;
                }
            }
        }

        let mut cache = ActivationCache::default();
        for (layer, lw) in weights.layers.iter().enumerate() {
            // Edits at this hook, in list order, then captures at this hook.
            for edit in req.edits.iter().filter(|e| e.layer == layer) {
                let mut row = x.row_mut(edit.position);
                let row = row.as_slice_mut().expect("x rows contiguous");
                match edit.mode {
                    EditMode::Replace => row.copy_from_slice(&edit.vector),
                    EditMode::Add => {
                        for (r, v) in row.iter_mut().zip(&edit.vector) {
                            *r += v;
                        }
                    }
                }
            }
            for hook in req.capture.iter().filter(|h| h.layer == layer) {
                for p in positions_of(&hook.positions, seq) {
                    cache.insert(layer, p, x.row(p).to_vec());
                }
            }

            // Attention sub-block.
            let normed = apply_norm(&x, &lw.attn_norm, cfg.norm_kind, cfg.norm_eps);
            let mut q = linear(&normed, &lw.wq, lw.bq.as_ref());
            let mut k = linear(&normed, &lw.wk, lw.bk.as_ref());
            let v = linear(&normed, &lw.wv, lw.bv.as_ref());
            if cfg.position_encoding == PositionEncoding::Rotary {
                apply_rotary(&mut q, cfg.n_heads, cfg.head_dim(), &position_ids, cfg.rope_base);
                apply_rotary(&mut k, cfg.n_kv_heads, cfg.head_dim(), &position_ids, cfg.rope_base);
            }
            let use_grouped = match req.attention_path {
                AttentionPath::Auto => cfg.n_kv_heads < cfg.n_heads,
                AttentionPath::MultiHead => false,
                AttentionPath::Grouped => true,
            };
            let attn = if use_grouped {
                grouped_attention(
                    &q,
                    &k,
                    &v,
                    req.mask,
                    cfg.n_heads,
                    cfg.n_kv_heads,
                    cfg.head_dim(),
                )
            } else {
                mha_attention(&q, &k, &v, req.mask, cfg.n_heads, cfg.head_dim())
            };
            let attn_out = linear(&attn, &lw.wo, None);
            x = &x + &attn_out;

            // MLP sub-block.
            let normed = apply_norm(&x, &lw.mlp_norm, cfg.norm_kind, cfg.norm_eps);
            let mlp_out = match (&lw.mlp, cfg.mlp_kind) {
                (MlpWeights::GatedSilu { gate, up, down }, MlpKind::GatedSilu) => {
                    let g = linear(&normed, gate, None);
                    let u = linear(&normed, up, None);
                    let mut a = Array2::<f32>::zeros(g.dim());
                    ndarray::Zip::from(&mut a).and(&g).and(&u).for_each(|a, &g, &u| {
                        *a = (silu_f64(g as f64) * u as f64) as f32;
                    });
                    linear(&a, down, None)
                }
                (MlpWeights::Gelu { fc_in, fc_in_bias, fc_out, fc_out_bias }, MlpKind::Gelu) => {
                    let mut h = linear(&normed, fc_in, fc_in_bias.as_ref());
                    h.mapv_inplace(|v| gelu_f64(v as f64) as f32);
                    linear(&h, fc_out, fc_out_bias.as_ref())
                }
                _ => unreachable!("mlp weights checked against mlp_kind at load"),
            };
            x = &x + &mlp_out;
        }

        let final_normed = apply_norm(&x, &weights.final_norm, cfg.norm_kind, cfg.norm_eps);
        let last = final_normed.row(seq - 1);
        let logits = matvec(&weights.unembedding, last.as_slice().expect("contiguous"));
        if let Some(idx) = logits.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteLogits { index: idx });
        }
        Ok(ForwardRecord { logits, cache })
    }
}
