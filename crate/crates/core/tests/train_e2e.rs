//! Trains a small model end to end on a short synthetic record and checks
//! convergence, checkpoint fidelity, and encode determinism.

use blvae::analysis::encode_cloud;
use blvae::pipeline::{load_checkpoint, save_checkpoint, train, TrainConfig};
use blvae::synth::{generate_case, OperatingPoint};

#[test]
fn small_model_converges_and_checkpoint_preserves_behavior() {
    let rec = generate_case(OperatingPoint::new(1600.0, 0.80), 0.1, 5000.0, 13).unwrap();
    let cfg = TrainConfig {
        window_len: 50,
        stride: 10,
        batch_size: 16,
        h1: 8,
        h2: 4,
        max_epochs: 400,
        patience: 400,
        seed: 13,
        ..TrainConfig::default()
    };
    let ckpt = train(std::slice::from_ref(&rec), &cfg).unwrap();
    let first = ckpt.history.first().unwrap().val_loss;
    let best = ckpt
        .history
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert!(best < 0.5 * first, "no convergence: first {first}, best {best}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.blvc");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();

    let from_memory = encode_cloud(&ckpt, &rec).unwrap();
    let from_disk = encode_cloud(&loaded, &rec).unwrap();
    assert_eq!(from_memory.points, from_disk.points);
    assert_eq!(from_memory.len(), (500 - 50) / 10 + 1);
}
