//! Rollout, checkpoint, and attention-dump behaviour over the public API.

use prefixforge_core::{random_walk, sequence_to_graph, CoordinateSequence};
use prefixforge_model::{
    dump_attention, load_checkpoint, params_checksum, rollout_masked, save_checkpoint,
    unmasked_legal_rate, CacheMode, LayerSelector, ModelConfig, ModelError, PackedBatch,
    PolicyModel, RolloutConfig, RolloutError, StackSel,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    let mut c = ModelConfig::new(8, 4);
    c.shared_layers = 1;
    c.row_layers = 1;
    c.col_layers = 1;
    c.heads = 2;
    c.ffn_mult = 2;
    c
}

fn tiny_model(seed: u64) -> PolicyModel<f32> {
    PolicyModel::new(tiny_config(), seed).unwrap()
}

#[test]
fn masked_rollouts_are_complete_and_valid() {
    let model = tiny_model(1);
    let config = RolloutConfig::new(6, 40, 77);
    let seqs = rollout_masked(&model, &config).unwrap();
    assert_eq!(seqs.len(), 40);
    for seq in &seqs {
        assert!(seq.is_complete());
        let graph = sequence_to_graph(seq).unwrap();
        assert!(graph.validate().is_valid());
    }
}

#[test]
fn masked_rollouts_are_deterministic_and_chunk_invariant() {
    let model = tiny_model(2);
    let mut config = RolloutConfig::new(6, 30, 99);
    let first = rollout_masked(&model, &config).unwrap();
    let second = rollout_masked(&model, &config).unwrap();
    assert_eq!(first, second);

    // Chunk size changes batching but not any sequence's outcome.
    config.max_batch = 7;
    let chunked = rollout_masked(&model, &config).unwrap();
    assert_eq!(first, chunked);

    config.max_batch = 256;
    config.seed = 100;
    let other = rollout_masked(&model, &config).unwrap();
    assert_ne!(first, other);
}

#[test]
fn rollout_rejects_bad_requests() {
    let model = tiny_model(3);
    let too_wide = RolloutConfig::new(9, 4, 0);
    assert!(matches!(
        rollout_masked(&model, &too_wide),
        Err(RolloutError::WidthExceedsModel { width: 9, max: 8 })
    ));

    let mut bad_temp = RolloutConfig::new(6, 4, 0);
    bad_temp.temperature = 0.0;
    assert!(matches!(
        rollout_masked(&model, &bad_temp),
        Err(RolloutError::Sample(_))
    ));

    let mut no_batch = RolloutConfig::new(6, 4, 0);
    no_batch.max_batch = 0;
    assert!(matches!(
        rollout_masked(&model, &no_batch),
        Err(RolloutError::ZeroBatch)
    ));

    let narrow = RolloutConfig::new(1, 4, 0);
    assert!(matches!(
        rollout_masked(&model, &narrow),
        Err(RolloutError::Sequence(_))
    ));
}

#[test]
fn unmasked_probe_reports_consistent_counts() {
    let model = tiny_model(4);
    let config = RolloutConfig::new(6, 60, 5);
    let report = unmasked_legal_rate(&model, &config).unwrap();
    assert_eq!(report.samples, 60);
    assert!(report.legal <= report.samples);
    assert!((report.rate - report.legal as f64 / 60.0).abs() < 1e-12);

    let again = unmasked_legal_rate(&model, &config).unwrap();
    assert_eq!(report.legal, again.legal);

    // An untrained model samples rows and columns uniformly over the full
    // coordinate range, so most width-6 rollouts die within a few steps.
    assert!(
        report.rate < 0.5,
        "uniform sampling should rarely finish a rollout, got {}",
        report.rate
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn masked_rollouts_valid_for_any_width_and_seed(
        width in 2usize..=8,
        seed in 0u64..1_000_000,
    ) {
        let model = tiny_model(6);
        let mut config = RolloutConfig::new(width, 5, seed);
        config.temperature = 0.7;
        let seqs = rollout_masked(&model, &config).unwrap();
        for seq in &seqs {
            prop_assert!(seq.is_complete());
            prop_assert!(sequence_to_graph(seq).is_ok());
        }
    }
}

#[test]
fn checkpoint_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let model = PolicyModel::<f64>::new(tiny_config(), 12).unwrap();
    let meta = serde_json::json!({"phase": "pretrain", "epoch": 3});
    save_checkpoint(&path, model.config(), model.params(), meta).unwrap();

    let (loaded, header) = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(header.dtype, "f64");
    assert_eq!(header.metadata["epoch"], 3);
    assert_eq!(*loaded.config(), tiny_config());
    for ((_, a), (_, b)) in model.params().flatten().iter().zip(loaded.params().flatten()) {
        assert_eq!(a.as_slice(), b.as_slice());
    }
    assert_eq!(params_checksum(model.params()), header.checksum);
}

#[test]
fn checkpoint_crosses_precisions_by_rounding() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let m64 = PolicyModel::<f64>::new(tiny_config(), 13).unwrap();
    save_checkpoint(&path, m64.config(), m64.params(), serde_json::Value::Null).unwrap();

    let (m32, _) = load_checkpoint::<f32>(&path).unwrap();
    for ((_, a), (_, b)) in m64.params().flatten().iter().zip(m32.params().flatten()) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(*y, *x as f32);
        }
    }

    // f32 values are exact in f64, so an f32 save round-trips bitwise.
    let path32 = dir.path().join("model32.ckpt");
    save_checkpoint(&path32, m32.config(), m32.params(), serde_json::Value::Null).unwrap();
    let (back, header) = load_checkpoint::<f32>(&path32).unwrap();
    assert_eq!(header.dtype, "f32");
    for ((_, a), (_, b)) in m32.params().flatten().iter().zip(back.params().flatten()) {
        assert_eq!(a.as_slice(), b.as_slice());
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let model = PolicyModel::<f32>::new(tiny_config(), 14).unwrap();
    save_checkpoint(&path, model.config(), model.params(), serde_json::Value::Null).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();

    // A flipped value byte breaks the checksum.
    let mut flipped = bytes.clone();
    let target = header_end + 1 + (flipped.len() - header_end) / 2;
    flipped[target] ^= 0x40;
    std::fs::write(&path, &flipped).unwrap();
    let err = load_checkpoint::<f32>(&path).unwrap_err();
    assert!(matches!(err, ModelError::Format(ref m) if m.contains("checksum")));

    // A truncated blob cannot match its checksum either.
    std::fs::write(&path, &bytes[..bytes.len() - 17]).unwrap();
    assert!(load_checkpoint::<f32>(&path).is_err());

    // Garbage before the header newline is not a header.
    std::fs::write(&path, b"not json\nrest").unwrap();
    assert!(matches!(
        load_checkpoint::<f32>(&path),
        Err(ModelError::Format(_))
    ));

    // A file with no newline at all has no header line.
    std::fs::write(&path, b"\x00\x01\x02").unwrap();
    assert!(load_checkpoint::<f32>(&path).is_err());

    // An alien format tag is refused even with a plausible body.
    let mut doctored = String::from_utf8(bytes[..header_end].to_vec()).unwrap();
    doctored = doctored.replace("prefixforge-model", "somebody-elses-model");
    let mut rebuilt = doctored.into_bytes();
    rebuilt.push(b'\n');
    rebuilt.extend_from_slice(&bytes[header_end + 1..]);
    std::fs::write(&path, &rebuilt).unwrap();
    let err = load_checkpoint::<f32>(&path).unwrap_err();
    assert!(matches!(err, ModelError::Format(ref m) if m.contains("format")));
}

#[test]
fn attention_dump_is_causal_and_row_stochastic() {
    let model = tiny_model(15);
    let seq = random_walk(6, &mut ChaCha8Rng::seed_from_u64(2));
    let selector: LayerSelector = "all".parse().unwrap();
    let dump = dump_attention(&model, &seq, &selector).unwrap();

    let cfg = model.config();
    let layers = cfg.shared_layers + cfg.row_layers + cfg.col_layers;
    assert_eq!(dump.entries.len(), layers * cfg.heads);
    assert_eq!(dump.coords.len(), seq.len());

    let t = seq.len();
    for entry in &dump.entries {
        assert_eq!(entry.probs.len(), t);
        for (i, row) in entry.probs.iter().enumerate() {
            assert_eq!(row.len(), t);
            let sum: f64 = row[..=i].iter().sum();
            assert!((sum - 1.0).abs() < 1e-5, "row {i} sums to {sum}");
            assert!(row[i + 1..].iter().all(|&v| v == 0.0), "future leak at row {i}");
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    let json = serde_json::to_string(&dump).unwrap();
    let back: prefixforge_model::AttentionDump = serde_json::from_str(&json).unwrap();
    assert_eq!(back.entries.len(), dump.entries.len());
}

#[test]
fn layer_selector_filters_and_validates() {
    let model = tiny_model(16);
    let seq = random_walk(5, &mut ChaCha8Rng::seed_from_u64(3));

    let selector: LayerSelector = "shared:0".parse().unwrap();
    let dump = dump_attention(&model, &seq, &selector).unwrap();
    assert_eq!(dump.entries.len(), model.config().heads);
    assert!(dump
        .entries
        .iter()
        .all(|e| e.stack == StackSel::Shared && e.layer == 0));

    let selector: LayerSelector = "row, col:*".parse().unwrap();
    let dump = dump_attention(&model, &seq, &selector).unwrap();
    assert!(dump.entries.iter().all(|e| e.stack != StackSel::Shared));

    let out_of_range: LayerSelector = "col:5".parse().unwrap();
    assert!(matches!(
        dump_attention(&model, &seq, &out_of_range),
        Err(ModelError::LayerRange(_))
    ));

    assert!("bogus:1".parse::<LayerSelector>().is_err());
    assert!("shared:x".parse::<LayerSelector>().is_err());
    assert!("".parse::<LayerSelector>().is_err());
}

#[test]
fn next_distributions_match_forward_slice() {
    let mut model = tiny_model(17);
    for (name, values) in model.params_mut().flatten_mut() {
        if name.ends_with("head") {
            for (k, v) in values.iter_mut().enumerate() {
                *v = 0.03 * (k as f32).cos();
            }
        }
    }
    let seq = random_walk(7, &mut ChaCha8Rng::seed_from_u64(4));
    let prefix = CoordinateSequence::from_coords(7, seq.coords()[..4].to_vec()).unwrap();
    let (rows, cols) = model.next_distributions(&prefix);
    assert!((rows.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!((cols.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let pass = model.forward(&PackedBatch::full([&prefix]), CacheMode::Inference);
    let last = prefix.len() - 1;
    let max = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    let logit_max = pass
        .row_logits
        .row(last)
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(max, logit_max);
}
