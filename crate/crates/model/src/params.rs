//! Parameter container: allocation, initialization, and named traversal.

use crate::config::{ModelConfig, ModelError};
use crate::scalar::Real;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// One pre-norm decoder layer: attention then feed-forward, both with RMS
/// norms and residual connections, all linear maps bias-free.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub norm1: Array1<F>,
    pub wq: Array2<F>,
    pub wk: Array2<F>,
    pub wv: Array2<F>,
    pub wo: Array2<F>,
    pub norm2: Array1<F>,
    pub w1: Array2<F>,
    pub w2: Array2<F>,
}

/// All learnable tensors of the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub row_embed: Array2<F>,
    pub col_embed: Array2<F>,
    pub shared: Vec<LayerParams<F>>,
    pub row_stack: Vec<LayerParams<F>>,
    pub col_stack: Vec<LayerParams<F>>,
    pub junction_norm_shared: Array1<F>,
    pub junction_norm_row: Array1<F>,
    pub w_junction: Array2<F>,
    pub w_row_head: Array2<F>,
    pub w_col_head: Array2<F>,
}

/// Borrowed view of one named tensor.
pub enum TensorRef<'a, F> {
    V(&'a Array1<F>),
    M(&'a Array2<F>),
}

impl<F> TensorRef<'_, F> {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::V(a) => a.shape().to_vec(),
            TensorRef::M(a) => a.shape().to_vec(),
        }
    }

    pub fn as_slice(&self) -> &[F] {
        match self {
            TensorRef::V(a) => a.as_slice().expect("parameters are contiguous"),
            TensorRef::M(a) => a.as_slice().expect("parameters are contiguous"),
        }
    }
}

impl<F> LayerParams<F>
where
    F: Real,
{
    fn zeros(config: &ModelConfig) -> Self {
        let d = config.model_dim();
        let h = config.ffn_dim();
        Self {
            norm1: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            norm2: Array1::zeros(d),
            w1: Array2::zeros((d, h)),
            w2: Array2::zeros((h, d)),
        }
    }
}

impl<F> Params<F>
where
    F: Real,
{
    /// All-zero tensors in the right shapes (gradient and moment buffers).
    pub fn zeros(config: &ModelConfig) -> Self {
        let n = config.max_width;
        let a = config.axis_dim;
        let d = config.model_dim();
        Self {
            row_embed: Array2::zeros((n, a)),
            col_embed: Array2::zeros((n, a)),
            shared: (0..config.shared_layers)
                .map(|_| LayerParams::zeros(config))
                .collect(),
            row_stack: (0..config.row_layers)
                .map(|_| LayerParams::zeros(config))
                .collect(),
            col_stack: (0..config.col_layers)
                .map(|_| LayerParams::zeros(config))
                .collect(),
            junction_norm_shared: Array1::zeros(d),
            junction_norm_row: Array1::zeros(d),
            w_junction: Array2::zeros((2 * d, d)),
            w_row_head: Array2::zeros((d, n)),
            w_col_head: Array2::zeros((d, n)),
        }
    }

    /// Fresh random initialization: weights from N(0, 0.02^2), norm gains at
    /// one, and both output heads at zero so an untrained model emits exactly
    /// uniform distributions. Draws are made in f64 in traversal order, so
    /// the same seed yields the same network at any precision.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut params = Self::zeros(config);
        let normal = Normal::new(0.0f64, 0.02).expect("valid std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, values) in params.flatten_mut() {
            if name.ends_with("norm1")
                || name.ends_with("norm2")
                || name.contains("junction_norm")
            {
                values.fill(F::one());
            } else if name.ends_with("head") {
                // leave at zero
            } else {
                for v in values.iter_mut() {
                    *v = F::from_f64(normal.sample(&mut rng));
                }
            }
        }
        params
    }

    pub fn param_count(&self) -> usize {
        self.flatten().iter().map(|(_, t)| t.as_slice().len()).sum()
    }

    /// Named tensors in a fixed traversal order (the checkpoint layout).
    pub fn flatten(&self) -> Vec<(String, TensorRef<'_, F>)> {
        let mut out: Vec<(String, TensorRef<'_, F>)> = vec![
            ("embed.row".into(), TensorRef::M(&self.row_embed)),
            ("embed.col".into(), TensorRef::M(&self.col_embed)),
        ];
        for (stack_name, stack) in [
            ("shared", &self.shared),
            ("row", &self.row_stack),
            ("col", &self.col_stack),
        ] {
            for (i, layer) in stack.iter().enumerate() {
                out.push((format!("{stack_name}.{i}.norm1"), TensorRef::V(&layer.norm1)));
                out.push((format!("{stack_name}.{i}.wq"), TensorRef::M(&layer.wq)));
                out.push((format!("{stack_name}.{i}.wk"), TensorRef::M(&layer.wk)));
                out.push((format!("{stack_name}.{i}.wv"), TensorRef::M(&layer.wv)));
                out.push((format!("{stack_name}.{i}.wo"), TensorRef::M(&layer.wo)));
                out.push((format!("{stack_name}.{i}.norm2"), TensorRef::V(&layer.norm2)));
                out.push((format!("{stack_name}.{i}.w1"), TensorRef::M(&layer.w1)));
                out.push((format!("{stack_name}.{i}.w2"), TensorRef::M(&layer.w2)));
            }
        }
        out.push((
            "junction_norm.shared".into(),
            TensorRef::V(&self.junction_norm_shared),
        ));
        out.push((
            "junction_norm.row".into(),
            TensorRef::V(&self.junction_norm_row),
        ));
        out.push(("w_junction".into(), TensorRef::M(&self.w_junction)));
        out.push(("row.head".into(), TensorRef::M(&self.w_row_head)));
        out.push(("col.head".into(), TensorRef::M(&self.w_col_head)));
        out
    }

    /// Mutable flat slices in the same order as [`Params::flatten`].
    pub fn flatten_mut(&mut self) -> Vec<(String, &mut [F])> {
        fn m<F>(a: &mut Array2<F>) -> &mut [F] {
            a.as_slice_mut().expect("parameters are contiguous")
        }
        fn v<F>(a: &mut Array1<F>) -> &mut [F] {
            a.as_slice_mut().expect("parameters are contiguous")
        }
        let mut out: Vec<(String, &mut [F])> = Vec::new();
        out.push(("embed.row".into(), m(&mut self.row_embed)));
        out.push(("embed.col".into(), m(&mut self.col_embed)));
        for (stack_name, stack) in [
            ("shared", &mut self.shared),
            ("row", &mut self.row_stack),
            ("col", &mut self.col_stack),
        ] {
            for (i, layer) in stack.iter_mut().enumerate() {
                out.push((format!("{stack_name}.{i}.norm1"), v(&mut layer.norm1)));
                out.push((format!("{stack_name}.{i}.wq"), m(&mut layer.wq)));
                out.push((format!("{stack_name}.{i}.wk"), m(&mut layer.wk)));
                out.push((format!("{stack_name}.{i}.wv"), m(&mut layer.wv)));
                out.push((format!("{stack_name}.{i}.wo"), m(&mut layer.wo)));
                out.push((format!("{stack_name}.{i}.norm2"), v(&mut layer.norm2)));
                out.push((format!("{stack_name}.{i}.w1"), m(&mut layer.w1)));
                out.push((format!("{stack_name}.{i}.w2"), m(&mut layer.w2)));
            }
        }
        out.push((
            "junction_norm.shared".into(),
            v(&mut self.junction_norm_shared),
        ));
        out.push(("junction_norm.row".into(), v(&mut self.junction_norm_row)));
        out.push(("w_junction".into(), m(&mut self.w_junction)));
        out.push(("row.head".into(), m(&mut self.w_row_head)));
        out.push(("col.head".into(), m(&mut self.w_col_head)));
        out
    }

    /// Checks that every tensor has the shape the config dictates.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expect = Params::<F>::zeros(config);
        let got = self.flatten();
        let want = expect.flatten();
        if got.len() != want.len() {
            return Err(ModelError::Format(format!(
                "tensor count {} does not match config ({} expected)",
                got.len(),
                want.len()
            )));
        }
        for ((gname, gt), (wname, wt)) in got.iter().zip(&want) {
            if gname != wname || gt.shape() != wt.shape() {
                return Err(ModelError::ShapeMismatch {
                    name: gname.clone(),
                    got: gt.shape(),
                    want: wt.shape(),
                });
            }
        }
        Ok(())
    }

    /// Element-wise `self += other`, used to merge gradient contributions.
    pub fn add_assign(&mut self, other: &Params<F>) {
        for ((_, mine), (_, theirs)) in self.flatten_mut().into_iter().zip(other.flatten()) {
            for (m, &t) in mine.iter_mut().zip(theirs.as_slice()) {
                *m += t;
            }
        }
    }
}
