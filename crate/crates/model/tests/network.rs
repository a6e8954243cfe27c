//! Forward and backward pass behaviour: initial-state distributions, batch
//! packing, causality, the rotary embedding, and a finite-difference check
//! of the full analytic gradient.

use ndarray::Array2;
use prefixforge_core::{random_walk, Coordinate, CoordinateSequence};
use prefixforge_model::{CacheMode, ModelConfig, PackedBatch, PolicyModel, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    let mut c = ModelConfig::new(6, 4);
    c.shared_layers = 1;
    c.row_layers = 1;
    c.col_layers = 1;
    c.heads = 2;
    c.ffn_mult = 2;
    c
}

/// Output heads start at zero, so fresh models emit flat logits. Filling the
/// heads with a fixed pattern makes outputs informative without training.
fn scramble_heads<F: Real>(model: &mut PolicyModel<F>) {
    for (name, values) in model.params_mut().flatten_mut() {
        if name.ends_with("head") {
            for (k, v) in values.iter_mut().enumerate() {
                *v = F::from_f64(0.05 * (0.7 * k as f64).sin());
            }
        }
    }
}

fn walk(width: usize, seed: u64) -> CoordinateSequence {
    random_walk(width, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn fresh_model_predicts_uniformly() {
    let model = PolicyModel::<f32>::new(tiny_config(), 42).unwrap();
    let partial = CoordinateSequence::start(6).unwrap();
    let (rows, cols) = model.next_distributions(&partial);
    let n = model.config().max_width;
    assert_eq!(rows.len(), n);
    assert_eq!(cols.len(), n);
    for p in rows.iter().chain(&cols) {
        assert!((p - 1.0 / n as f64).abs() < 1e-12, "not uniform: {p}");
    }
}

#[test]
fn packed_batch_matches_individual_forwards() {
    let mut model = PolicyModel::<f32>::new(tiny_config(), 7).unwrap();
    scramble_heads(&mut model);
    let seqs: Vec<_> = (0..4).map(|i| walk(3 + (i % 3), 100 + i as u64)).collect();
    let batch = PackedBatch::full(seqs.iter());
    let packed = model.forward(&batch, CacheMode::Inference);
    for (i, seq) in seqs.iter().enumerate() {
        let single = PackedBatch::full([seq]);
        let alone = model.forward(&single, CacheMode::Inference);
        let range = batch.range(i);
        for (t, global) in range.enumerate() {
            assert_eq!(
                packed.row_logits.row(global),
                alone.row_logits.row(t),
                "row logits differ at token {t} of sequence {i}"
            );
            assert_eq!(
                packed.col_logits.row(global),
                alone.col_logits.row(t),
                "col logits differ at token {t} of sequence {i}"
            );
        }
    }
}

#[test]
fn prefix_outputs_ignore_future_tokens() {
    let mut model = PolicyModel::<f64>::new(tiny_config(), 8).unwrap();
    scramble_heads(&mut model);
    let seq = walk(6, 21);
    let cut = seq.len() / 2;
    let prefix = CoordinateSequence::from_coords(6, seq.coords()[..cut].to_vec()).unwrap();

    let full = model.forward(&PackedBatch::full([&seq]), CacheMode::Inference);
    let part = model.forward(&PackedBatch::full([&prefix]), CacheMode::Inference);
    for t in 0..cut {
        assert_eq!(full.row_logits.row(t), part.row_logits.row(t));
        assert_eq!(full.col_logits.row(t), part.col_logits.row(t));
    }
}

#[test]
fn embedding_applies_value_rotation() {
    let cfg = tiny_config();
    let model = PolicyModel::<f64>::new(cfg.clone(), 9).unwrap();
    let seq = CoordinateSequence::from_coords(
        6,
        vec![
            Coordinate::new(0, 0),
            Coordinate::new(1, 1),
            Coordinate::new(1, 0),
            Coordinate::new(2, 2),
            Coordinate::new(2, 0),
            Coordinate::new(3, 3),
        ],
    )
    .unwrap();
    let batch = PackedBatch::full([&seq]);
    let x0 = model.embed(&batch);

    let a = cfg.axis_dim;
    let half = a / 2;
    for (t, c) in seq.coords().iter().enumerate() {
        for (axis, (value, table)) in [
            (c.row(), &model.params().row_embed),
            (c.col(), &model.params().col_embed),
        ]
        .into_iter()
        .enumerate()
        {
            let e = table.row(value);
            for i in 0..half {
                let theta = cfg.rope_base.powf(-2.0 * i as f64 / a as f64);
                let (sin, cos) = (value as f64 * theta).sin_cos();
                let want0 = e[2 * i] * cos - e[2 * i + 1] * sin;
                let want1 = e[2 * i] * sin + e[2 * i + 1] * cos;
                let got0 = x0[[t, axis * a + 2 * i]];
                let got1 = x0[[t, axis * a + 2 * i + 1]];
                assert!((got0 - want0).abs() < 1e-12, "token {t} axis {axis} lane {i}");
                assert!((got1 - want1).abs() < 1e-12, "token {t} axis {axis} lane {i}");
            }
        }
    }

    // Rotations are orthogonal, so each embedded half keeps its table norm.
    for (t, c) in seq.coords().iter().enumerate() {
        let row_norm: f64 = model
            .params()
            .row_embed
            .row(c.row())
            .iter()
            .map(|v| v * v)
            .sum();
        let embedded: f64 = (0..a).map(|k| x0[[t, k]] * x0[[t, k]]).sum();
        assert!((row_norm - embedded).abs() < 1e-12);
    }
}

#[test]
fn disabling_rotation_returns_raw_embeddings() {
    let mut cfg = tiny_config();
    cfg.rope = false;
    let model = PolicyModel::<f64>::new(cfg.clone(), 9).unwrap();
    let seq = walk(6, 3);
    let x0 = model.embed(&PackedBatch::full([&seq]));
    let a = cfg.axis_dim;
    for (t, c) in seq.coords().iter().enumerate() {
        for k in 0..a {
            assert_eq!(x0[[t, k]], model.params().row_embed[[c.row(), k]]);
            assert_eq!(x0[[t, a + k]], model.params().col_embed[[c.col(), k]]);
        }
    }
}

#[test]
fn teacher_forcing_drops_final_coordinate() {
    let seqs: Vec<_> = (0..3).map(|i| walk(4, i)).collect();
    let batch = PackedBatch::teacher_forcing(&seqs);
    assert_eq!(batch.num_seqs(), 3);
    for (i, seq) in seqs.iter().enumerate() {
        assert_eq!(batch.range(i).len(), seq.len() - 1);
    }
    let total: usize = seqs.iter().map(|s| s.len() - 1).sum();
    assert_eq!(batch.num_tokens(), total);
}

#[test]
fn same_seed_matches_across_precisions() {
    let cfg = tiny_config();
    let mut m64 = PolicyModel::<f64>::new(cfg.clone(), 3).unwrap();
    let mut m32 = PolicyModel::<f32>::new(cfg, 3).unwrap();
    scramble_heads(&mut m64);
    scramble_heads(&mut m32);
    let seq = walk(6, 17);
    let batch = PackedBatch::full([&seq]);
    let p64 = m64.forward(&batch, CacheMode::Inference);
    let p32 = m32.forward(&batch, CacheMode::Inference);
    for (a, b) in p64.row_logits.iter().zip(p32.row_logits.iter()) {
        assert!((a - *b as f64).abs() < 1e-3, "row logit drift: {a} vs {b}");
    }
    for (a, b) in p64.col_logits.iter().zip(p32.col_logits.iter()) {
        assert!((a - *b as f64).abs() < 1e-3, "col logit drift: {a} vs {b}");
    }
}

fn loss_of(
    model: &PolicyModel<f64>,
    batch: &PackedBatch,
    d_row: &Array2<f64>,
    d_col: &Array2<f64>,
) -> f64 {
    let pass = model.forward(batch, CacheMode::Inference);
    (&pass.row_logits * d_row).sum() + (&pass.col_logits * d_col).sum()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for rope in [true, false] {
        let mut cfg = tiny_config();
        cfg.rope = rope;
        let mut model = PolicyModel::<f64>::new(cfg.clone(), 11).unwrap();
        scramble_heads(&mut model);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seqs: Vec<_> = (0..3).map(|_| random_walk(5, &mut rng)).collect();
        let batch = PackedBatch::teacher_forcing(&seqs);
        let m = batch.num_tokens();
        let n = cfg.max_width;
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let d_row = Array2::from_shape_fn((m, n), |_| rng.sample(normal));
        let d_col = Array2::from_shape_fn((m, n), |_| rng.sample(normal));

        let pass = model.forward(&batch, CacheMode::Training);
        let grads = model.backward(&batch, &pass, &d_row, &d_col);
        let analytic: Vec<(String, Vec<f64>)> = grads
            .flatten()
            .into_iter()
            .map(|(name, t)| (name, t.as_slice().to_vec()))
            .collect();

        let h = 1e-5;
        for (k, (name, grad)) in analytic.iter().enumerate() {
            for i in 0..grad.len() {
                let original = model.params().flatten()[k].1.as_slice()[i];
                model.params_mut().flatten_mut()[k].1[i] = original + h;
                let up = loss_of(&model, &batch, &d_row, &d_col);
                model.params_mut().flatten_mut()[k].1[i] = original - h;
                let down = loss_of(&model, &batch, &d_row, &d_col);
                model.params_mut().flatten_mut()[k].1[i] = original;
                let numeric = (up - down) / (2.0 * h);
                let got = grad[i];
                let tol = 1e-6 + 1e-4 * got.abs().max(numeric.abs());
                assert!(
                    (got - numeric).abs() <= tol,
                    "rope={rope} {name}[{i}]: analytic {got} vs numeric {numeric}"
                );
            }
        }
    }
}
