//! Packed forward and backward passes.
//!
//! Batches are ragged: sequences of different lengths are laid out back to
//! back in one token matrix, with per-sequence bounds. Position-wise work
//! (norms, projections, feed-forward) then runs as single large matrix
//! products over all tokens; only attention loops per sequence, because
//! tokens must never attend across sequence boundaries.

use crate::config::{ModelConfig, ModelError};
use crate::math::{gelu, gelu_vjp, rmsnorm, rmsnorm_backward, softmax_f64};
use crate::params::{LayerParams, Params};
use crate::scalar::Real;
use ndarray::{s, Array2};
use prefixforge_core::CoordinateSequence;

/// Ragged token batch: coordinate values plus sequence boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBatch {
    rows: Vec<u32>,
    cols: Vec<u32>,
    bounds: Vec<usize>,
}

impl Default for PackedBatch {
    fn default() -> Self {
        Self::new()
    }
}

impl PackedBatch {
    pub fn new() -> Self {
        Self {
            rows: Vec::new(),
            cols: Vec::new(),
            bounds: vec![0],
        }
    }

    /// Appends one sequence's first `len` coordinates as a new batch entry.
    pub fn push_prefix(&mut self, seq: &CoordinateSequence, len: usize) {
        assert!(len >= 1 && len <= seq.len(), "prefix length out of range");
        for c in &seq.coords()[..len] {
            self.rows.push(c.row() as u32);
            self.cols.push(c.col() as u32);
        }
        self.bounds.push(self.rows.len());
    }

    /// Whole sequences, e.g. for attention inspection or rollout prefixes.
    pub fn full<'a>(seqs: impl IntoIterator<Item = &'a CoordinateSequence>) -> Self {
        let mut batch = Self::new();
        for s in seqs {
            batch.push_prefix(s, s.len());
        }
        batch
    }

    /// Teacher forcing layout: the final coordinate is dropped, since there
    /// is nothing to predict after it. Output index `k` of entry `s` then
    /// scores the prediction of `seqs[s].coords()[k + 1]`.
    pub fn teacher_forcing<'a>(seqs: impl IntoIterator<Item = &'a CoordinateSequence>) -> Self {
        let mut batch = Self::new();
        for s in seqs {
            batch.push_prefix(s, s.len() - 1);
        }
        batch
    }

    pub fn num_tokens(&self) -> usize {
        self.rows.len()
    }

    pub fn num_seqs(&self) -> usize {
        self.bounds.len() - 1
    }

    /// Token span of one batch entry.
    pub fn range(&self, seq: usize) -> std::ops::Range<usize> {
        self.bounds[seq]..self.bounds[seq + 1]
    }

    /// Index of the last token of each entry (where the next step's
    /// distributions live during rollout).
    pub fn last_indices(&self) -> Vec<usize> {
        (0..self.num_seqs()).map(|s| self.bounds[s + 1] - 1).collect()
    }

    pub fn row_values(&self) -> &[u32] {
        &self.rows
    }

    pub fn col_values(&self) -> &[u32] {
        &self.cols
    }

    fn max_value(&self) -> u32 {
        // Rows bound columns in the lower triangle.
        self.rows.iter().copied().max().unwrap_or(0)
    }
}

/// Whether a forward pass keeps the activations needed for backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    Inference,
    Training,
}

pub(crate) struct LayerCache<F> {
    x: Array2<F>,
    normed1: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// Post-softmax attention, one `T x T` matrix per `(entry, head)` pair,
    /// entry-major.
    attn_probs: Vec<Array2<F>>,
    attn_out: Array2<F>,
    x_mid: Array2<F>,
    normed2: Array2<F>,
    ffn_pre: Array2<F>,
}

pub(crate) struct Cache<F> {
    shared: Vec<LayerCache<F>>,
    row: Vec<LayerCache<F>>,
    col: Vec<LayerCache<F>>,
    h_shared: Array2<F>,
    h_row: Array2<F>,
    concat: Array2<F>,
    h_col: Array2<F>,
}

impl<F> LayerCache<F> {
    pub(crate) fn attention(&self) -> &[Array2<F>] {
        &self.attn_probs
    }
}

impl<F> Cache<F> {
    pub(crate) fn shared_layers(&self) -> &[LayerCache<F>] {
        &self.shared
    }

    pub(crate) fn row_layers(&self) -> &[LayerCache<F>] {
        &self.row
    }

    pub(crate) fn col_layers(&self) -> &[LayerCache<F>] {
        &self.col
    }
}

/// Logits (and optionally the activation cache) from one forward pass.
pub struct ForwardPass<F> {
    pub row_logits: Array2<F>,
    pub col_logits: Array2<F>,
    pub(crate) cache: Option<Cache<F>>,
}

/// The policy network: parameters plus precomputed rotary tables.
#[derive(Clone)]
pub struct PolicyModel<F: Real> {
    config: ModelConfig,
    params: Params<F>,
    rope_cos: Array2<F>,
    rope_sin: Array2<F>,
}

impl<F: Real> std::fmt::Debug for PolicyModel<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "PolicyModel<{}>(max_width={}, model_dim={}, layers={}+{}+{})",
            F::DTYPE,
            self.config.max_width,
            self.config.model_dim(),
            self.config.shared_layers,
            self.config.row_layers,
            self.config.col_layers
        )
    }
}

impl<F: Real> PolicyModel<F> {
    /// Randomly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let params = Params::init(&config, seed);
        Self::from_parts(config, params)
    }

    /// Wraps existing parameters (checkpoint load), verifying shapes.
    pub fn from_parts(config: ModelConfig, params: Params<F>) -> Result<Self, ModelError> {
        config.validate()?;
        params.check_shapes(&config)?;
        let half = config.axis_dim / 2;
        let mut rope_cos = Array2::zeros((config.max_width, half));
        let mut rope_sin = Array2::zeros((config.max_width, half));
        if config.rope {
            for m in 0..config.max_width {
                for i in 0..half {
                    let theta = config
                        .rope_base
                        .powf(-2.0 * i as f64 / config.axis_dim as f64);
                    let angle = m as f64 * theta;
                    rope_cos[[m, i]] = F::from_f64(angle.cos());
                    rope_sin[[m, i]] = F::from_f64(angle.sin());
                }
            }
        } else {
            // Identity rotation: the ablated model sees bare value embeddings.
            rope_cos.fill(F::one());
        }
        Ok(Self {
            config,
            params,
            rope_cos,
            rope_sin,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<F> {
        &mut self.params
    }

    /// Embeds all tokens: value lookups in the row/column tables, each half
    /// rotated by its coordinate value, then concatenated.
    pub fn embed(&self, batch: &PackedBatch) -> Array2<F> {
        assert!(
            (batch.max_value() as usize) < self.config.max_width,
            "coordinate value {} outside model width {}",
            batch.max_value(),
            self.config.max_width
        );
        let m = batch.num_tokens();
        let a = self.config.axis_dim;
        let half = a / 2;
        let mut x0 = Array2::zeros((m, 2 * a));
        for t in 0..m {
            let (rv, cv) = (batch.rows[t] as usize, batch.cols[t] as usize);
            let re = self.params.row_embed.row(rv);
            let re = re.as_slice().expect("contiguous");
            let ce = self.params.col_embed.row(cv);
            let ce = ce.as_slice().expect("contiguous");
            let mut out = x0.row_mut(t);
            let out = out.as_slice_mut().expect("contiguous");
            for i in 0..half {
                let (rc, rs) = (self.rope_cos[[rv, i]], self.rope_sin[[rv, i]]);
                let (e0, e1) = (re[2 * i], re[2 * i + 1]);
                out[2 * i] = e0 * rc - e1 * rs;
                out[2 * i + 1] = e0 * rs + e1 * rc;
                let (cc, cs) = (self.rope_cos[[cv, i]], self.rope_sin[[cv, i]]);
                let (f0, f1) = (ce[2 * i], ce[2 * i + 1]);
                out[a + 2 * i] = f0 * cc - f1 * cs;
                out[a + 2 * i + 1] = f0 * cs + f1 * cc;
            }
        }
        x0
    }

    fn layer_forward(
        &self,
        layer: &LayerParams<F>,
        x: Array2<F>,
        batch: &PackedBatch,
        mode: CacheMode,
    ) -> (Array2<F>, Option<LayerCache<F>>) {
        let d = self.config.model_dim();
        let heads = self.config.heads;
        let hd = d / heads;
        let scale = F::from_f64(1.0 / (hd as f64).sqrt());

        let normed1 = rmsnorm(&x, &layer.norm1);
        let q = normed1.dot(&layer.wq);
        let k = normed1.dot(&layer.wk);
        let v = normed1.dot(&layer.wv);

        let mut attn_out = Array2::zeros(x.raw_dim());
        let mut attn_probs = Vec::new();
        for s in 0..batch.num_seqs() {
            let range = batch.range(s);
            for h in 0..heads {
                let hspan = h * hd..(h + 1) * hd;
                let qs = q.slice(s![range.clone(), hspan.clone()]);
                let ks = k.slice(s![range.clone(), hspan.clone()]);
                let vs = v.slice(s![range.clone(), hspan.clone()]);
                let mut scores = qs.dot(&ks.t());
                scores *= scale;
                let t_len = range.len();
                // Causal structure plus row-wise softmax.
                for i in 0..t_len {
                    let mut row = scores.row_mut(i);
                    let row = row.as_slice_mut().expect("contiguous");
                    let mut max = F::neg_infinity();
                    for &val in row[..=i].iter() {
                        if val > max {
                            max = val;
                        }
                    }
                    let mut total = F::zero();
                    for val in row[..=i].iter_mut() {
                        *val = (*val - max).exp();
                        total += *val;
                    }
                    let inv = total.recip();
                    for val in row[..=i].iter_mut() {
                        *val *= inv;
                    }
                    for val in row[i + 1..].iter_mut() {
                        *val = F::zero();
                    }
                }
                let ctx = scores.dot(&vs);
                attn_out
                    .slice_mut(s![range.clone(), hspan])
                    .assign(&ctx);
                if mode == CacheMode::Training {
                    attn_probs.push(scores);
                }
            }
        }
        let projected = attn_out.dot(&layer.wo);
        let x_mid = &x + &projected;

        let normed2 = rmsnorm(&x_mid, &layer.norm2);
        let ffn_pre = normed2.dot(&layer.w1);
        let activated = gelu(&ffn_pre);
        let x_out = &x_mid + &activated.dot(&layer.w2);

        let cache = match mode {
            CacheMode::Training => Some(LayerCache {
                x,
                normed1,
                q,
                k,
                v,
                attn_probs,
                attn_out,
                x_mid,
                normed2,
                ffn_pre,
            }),
            CacheMode::Inference => None,
        };
        (x_out, cache)
    }

    fn stack_forward(
        &self,
        layers: &[LayerParams<F>],
        mut x: Array2<F>,
        batch: &PackedBatch,
        mode: CacheMode,
    ) -> (Array2<F>, Vec<LayerCache<F>>) {
        let mut caches = Vec::with_capacity(layers.len());
        for layer in layers {
            let (next, cache) = self.layer_forward(layer, x, batch, mode);
            x = next;
            if let Some(c) = cache {
                caches.push(c);
            }
        }
        (x, caches)
    }

    /// Runs the network over a packed batch. Every token yields a row and a
    /// column logit vector of length `max_width`; callers doing autoregression
    /// read them at each entry's last index.
    pub fn forward(&self, batch: &PackedBatch, mode: CacheMode) -> ForwardPass<F> {
        assert!(batch.num_seqs() > 0, "empty batch");
        let p = &self.params;
        let x0 = self.embed(batch);

        let (h_shared, shared_caches) = self.stack_forward(&p.shared, x0, batch, mode);
        let (h_row, row_caches) =
            self.stack_forward(&p.row_stack, h_shared.clone(), batch, mode);
        let row_logits = h_row.dot(&p.w_row_head);

        let norm_shared = rmsnorm(&h_shared, &p.junction_norm_shared);
        let norm_row = rmsnorm(&h_row, &p.junction_norm_row);
        let m = batch.num_tokens();
        let d = self.config.model_dim();
        let mut concat = Array2::zeros((m, 2 * d));
        concat.slice_mut(s![.., ..d]).assign(&norm_shared);
        concat.slice_mut(s![.., d..]).assign(&norm_row);
        let junction = concat.dot(&p.w_junction);

        let (h_col, col_caches) = self.stack_forward(&p.col_stack, junction, batch, mode);
        let col_logits = h_col.dot(&p.w_col_head);

        let cache = match mode {
            CacheMode::Training => Some(Cache {
                shared: shared_caches,
                row: row_caches,
                col: col_caches,
                h_shared,
                h_row,
                concat,
                h_col,
            }),
            CacheMode::Inference => None,
        };
        ForwardPass {
            row_logits,
            col_logits,
            cache,
        }
    }

    fn layer_backward(
        &self,
        layer: &LayerParams<F>,
        cache: &LayerCache<F>,
        batch: &PackedBatch,
        d_out: Array2<F>,
        grads: &mut LayerParams<F>,
    ) -> Array2<F> {
        let d = self.config.model_dim();
        let heads = self.config.heads;
        let hd = d / heads;
        let scale = F::from_f64(1.0 / (hd as f64).sqrt());

        // Feed-forward half.
        let activated = gelu(&cache.ffn_pre);
        grads.w2 = &grads.w2 + &activated.t().dot(&d_out);
        let d_act = d_out.dot(&layer.w2.t());
        let d_pre = gelu_vjp(&cache.ffn_pre, &d_act);
        grads.w1 = &grads.w1 + &cache.normed2.t().dot(&d_pre);
        let d_normed2 = d_pre.dot(&layer.w1.t());
        let d_x_mid =
            &d_out + &rmsnorm_backward(&cache.x_mid, &layer.norm2, &d_normed2, &mut grads.norm2);

        // Attention half.
        grads.wo = &grads.wo + &cache.attn_out.t().dot(&d_x_mid);
        let d_attn_out = d_x_mid.dot(&layer.wo.t());
        let mut d_q = Array2::zeros(cache.q.raw_dim());
        let mut d_k = Array2::zeros(cache.k.raw_dim());
        let mut d_v = Array2::zeros(cache.v.raw_dim());
        for s in 0..batch.num_seqs() {
            let range = batch.range(s);
            for h in 0..heads {
                let hspan = h * hd..(h + 1) * hd;
                let probs = &cache.attn_probs[s * heads + h];
                let d_ctx = d_attn_out.slice(s![range.clone(), hspan.clone()]);
                let qs = cache.q.slice(s![range.clone(), hspan.clone()]);
                let ks = cache.k.slice(s![range.clone(), hspan.clone()]);
                let vs = cache.v.slice(s![range.clone(), hspan.clone()]);

                let mut d_probs = d_ctx.dot(&vs.t());
                d_v.slice_mut(s![range.clone(), hspan.clone()])
                    .assign(&probs.t().dot(&d_ctx));

                // Softmax backward row by row: ds = p * (dp - sum(p * dp)).
                let t_len = range.len();
                for i in 0..t_len {
                    let p_row = probs.row(i);
                    let p_row = p_row.as_slice().expect("contiguous");
                    let mut d_row = d_probs.row_mut(i);
                    let d_row = d_row.as_slice_mut().expect("contiguous");
                    let mut dot = F::zero();
                    for j in 0..=i {
                        dot += p_row[j] * d_row[j];
                    }
                    for j in 0..=i {
                        d_row[j] = p_row[j] * (d_row[j] - dot);
                    }
                    for val in d_row[i + 1..].iter_mut() {
                        *val = F::zero();
                    }
                }
                let mut d_qs = d_probs.dot(&ks);
                d_qs *= scale;
                d_q.slice_mut(s![range.clone(), hspan.clone()]).assign(&d_qs);
                let mut d_ks = d_probs.t().dot(&qs);
                d_ks *= scale;
                d_k.slice_mut(s![range.clone(), hspan]).assign(&d_ks);
            }
        }
        grads.wq = &grads.wq + &cache.normed1.t().dot(&d_q);
        grads.wk = &grads.wk + &cache.normed1.t().dot(&d_k);
        grads.wv = &grads.wv + &cache.normed1.t().dot(&d_v);
        let d_normed1 =
            d_q.dot(&layer.wq.t()) + d_k.dot(&layer.wk.t()) + d_v.dot(&layer.wv.t());
        &d_x_mid + &rmsnorm_backward(&cache.x, &layer.norm1, &d_normed1, &mut grads.norm1)
    }

    fn stack_backward(
        &self,
        layers: &[LayerParams<F>],
        caches: &[LayerCache<F>],
        batch: &PackedBatch,
        mut d_out: Array2<F>,
        grad_layers: &mut [LayerParams<F>],
    ) -> Array2<F> {
        for ((layer, cache), grads) in layers
            .iter()
            .zip(caches)
            .zip(grad_layers.iter_mut())
            .rev()
        {
            d_out = self.layer_backward(layer, cache, batch, d_out, grads);
        }
        d_out
    }

    /// Full backward pass from per-token logit gradients to parameter
    /// gradients. The pass must have been run with [`CacheMode::Training`].
    pub fn backward(
        &self,
        batch: &PackedBatch,
        pass: &ForwardPass<F>,
        d_row_logits: &Array2<F>,
        d_col_logits: &Array2<F>,
    ) -> Params<F> {
        let cache = pass
            .cache
            .as_ref()
            .expect("backward requires a Training-mode forward pass");
        let p = &self.params;
        let d = self.config.model_dim();
        let mut g = Params::zeros(&self.config);

        // Column head and stack.
        g.w_col_head = cache.h_col.t().dot(d_col_logits);
        let d_h_col = d_col_logits.dot(&p.w_col_head.t());
        let d_junction =
            self.stack_backward(&p.col_stack, &cache.col, batch, d_h_col, &mut g.col_stack);

        // Junction.
        g.w_junction = cache.concat.t().dot(&d_junction);
        let d_concat = d_junction.dot(&p.w_junction.t());
        let d_norm_shared = d_concat.slice(s![.., ..d]).to_owned();
        let d_norm_row = d_concat.slice(s![.., d..]).to_owned();
        let d_h_shared_junction = rmsnorm_backward(
            &cache.h_shared,
            &p.junction_norm_shared,
            &d_norm_shared,
            &mut g.junction_norm_shared,
        );
        let d_h_row_junction = rmsnorm_backward(
            &cache.h_row,
            &p.junction_norm_row,
            &d_norm_row,
            &mut g.junction_norm_row,
        );

        // Row head and stack.
        g.w_row_head = cache.h_row.t().dot(d_row_logits);
        let d_h_row = d_row_logits.dot(&p.w_row_head.t()) + d_h_row_junction;
        let d_h_shared_row =
            self.stack_backward(&p.row_stack, &cache.row, batch, d_h_row, &mut g.row_stack);

        // Shared trunk.
        let d_h_shared = d_h_shared_row + d_h_shared_junction;
        let d_x0 =
            self.stack_backward(&p.shared, &cache.shared, batch, d_h_shared, &mut g.shared);

        // Embeddings: un-rotate and scatter-add by coordinate value.
        let a = self.config.axis_dim;
        let half = a / 2;
        for t in 0..batch.num_tokens() {
            let (rv, cv) = (batch.rows[t] as usize, batch.cols[t] as usize);
            let dt = d_x0.row(t);
            let dt = dt.as_slice().expect("contiguous");
            {
                let mut dr = g.row_embed.row_mut(rv);
                let dr = dr.as_slice_mut().expect("contiguous");
                for i in 0..half {
                    let (c, s) = (self.rope_cos[[rv, i]], self.rope_sin[[rv, i]]);
                    let (d0, d1) = (dt[2 * i], dt[2 * i + 1]);
                    dr[2 * i] += d0 * c + d1 * s;
                    dr[2 * i + 1] += -d0 * s + d1 * c;
                }
            }
            {
                let mut dc = g.col_embed.row_mut(cv);
                let dc = dc.as_slice_mut().expect("contiguous");
                for i in 0..half {
                    let (c, s) = (self.rope_cos[[cv, i]], self.rope_sin[[cv, i]]);
                    let (d0, d1) = (dt[a + 2 * i], dt[a + 2 * i + 1]);
                    dc[2 * i] += d0 * c + d1 * s;
                    dc[2 * i + 1] += -d0 * s + d1 * c;
                }
            }
        }
        g
    }

    /// Next-step distributions for one partial sequence, over the model's
    /// full `max_width` vocabulary.
    pub fn next_distributions(&self, partial: &CoordinateSequence) -> (Vec<f64>, Vec<f64>) {
        let batch = PackedBatch::full([partial]);
        let pass = self.forward(&batch, CacheMode::Inference);
        let last = batch.num_tokens() - 1;
        let row = pass.row_logits.row(last);
        let col = pass.col_logits.row(last);
        (
            softmax_f64(row.as_slice().expect("contiguous")),
            softmax_f64(col.as_slice().expect("contiguous")),
        )
    }
}
