//! Training protocol: windowing, per-channel normalization, Adam with
//! early stopping, and bit-exact checkpointing.
//!
//! Determinism contract: given identical records, config, and seed, the
//! training loop produces byte-identical checkpoints on one platform.
//! Parameter init draws from the stream (seed, "init"), epoch shuffles and
//! reparameterization noise from (seed, "train"); per-window gradients may
//! be computed in parallel but are reduced in batch order.

mod format;

pub use format::{
    load_checkpoint, load_record_csv, load_record_pmts, save_checkpoint, save_record_csv,
    save_record_pmts, write_atomic,
};

use rayon::prelude::*;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{model_backward, ModelDims, ModelParams, LATENT_DIM};
use crate::numgrad::{Matrix, ParamStore};
use crate::seed::derive_stream;
use crate::synth::{PressureRecord, CHANNELS};

/// Everything the training loop needs beyond the data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub window_len: usize,
    pub stride: usize,
    pub val_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// KL weight.
    pub beta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub h1: usize,
    pub h2: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window_len: 200,
            stride: 100,
            val_fraction: 0.2,
            batch_size: 32,
            learning_rate: 1e-3,
            beta: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 5000,
            patience: 100,
            h1: 32,
            h2: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 8 {
            return Err(Error::Config("window length must be >= 8".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("validation fraction must be in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::Config("beta must be finite and >= 0".into()));
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("adam {name} must be in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam eps must be > 0".into()));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("max epochs and patience must be >= 1".into()));
        }
        if self.h1 == 0 || self.h2 == 0 {
            return Err(Error::Config("hidden sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-channel z-score statistics, fitted on training windows only.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(windows: &[Matrix]) -> Result<Normalizer> {
        let rows: usize = windows.iter().map(Matrix::rows).sum();
        if windows.is_empty() || rows < 2 {
            return Err(Error::Input(
                "normalizer needs at least 2 samples per channel".into(),
            ));
        }
        let channels = windows[0].cols();
        let mut mean = vec![0.0; channels];
        for w in windows {
            if w.cols() != channels {
                return Err(Error::Dimension(
                    "windows disagree on channel count".into(),
                ));
            }
            for r in 0..w.rows() {
                for (m, &x) in mean.iter_mut().zip(w.row(r)) {
                    *m += x;
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; channels];
        for w in windows {
            for r in 0..w.rows() {
                for (v, (&x, &m)) in var.iter_mut().zip(w.row(r).iter().zip(&mean)) {
                    let d = x - m;
                    *v += d * d;
                }
            }
        }
        let mut std = vec![0.0; channels];
        for (ch, (s, &v)) in std.iter_mut().zip(&var).enumerate() {
            let v = v / rows as f64;
            if v < 1e-24 {
                return Err(Error::Data(format!(
                    "channel ch{ch:02} has zero variance; cannot normalize"
                )));
            }
            *s = v.sqrt();
        }
        Ok(Normalizer { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, window: &mut Matrix) -> Result<()> {
        if window.cols() != self.channels() {
            return Err(Error::Dimension(format!(
                "normalizer fitted on {} channels, window has {}",
                self.channels(),
                window.cols()
            )));
        }
        for r in 0..window.rows() {
            for (x, (&m, &s)) in window.row_mut(r).iter_mut().zip(self.mean.iter().zip(&self.std))
            {
                *x = (*x - m) / s;
            }
        }
        Ok(())
    }
}

/// Sliding windows over a record: starts at 0, stride, 2*stride, ...;
/// count = floor((N - W) / stride) + 1.
pub fn make_windows(rec: &PressureRecord, window_len: usize, stride: usize) -> Result<Vec<Matrix>> {
    if stride == 0 {
        return Err(Error::Input("stride must be >= 1".into()));
    }
    let n = rec.n_samples();
    if n < window_len {
        return Err(Error::Input(format!(
            "record {} has {n} samples, shorter than window {window_len}",
            rec.case_id
        )));
    }
    let count = (n - window_len) / stride + 1;
    let mut out = Vec::with_capacity(count);
    let cols = rec.samples.cols();
    for i in 0..count {
        let start = i * stride;
        let mut w = Matrix::zeros(window_len, cols);
        for r in 0..window_len {
            w.row_mut(r).copy_from_slice(rec.samples.row(start + r));
        }
        out.push(w);
    }
    Ok(out)
}

/// Adam first/second moment accumulators.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ParamStore,
    v: ParamStore,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        let zeros = params.to_store().zeros_like();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction. `grads` holds the gradient in its
/// parameter slots, in the model's tensor order.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamStore,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    state.m.check_same_layout(grads)?;
    for (_, g, _) in grads.entries() {
        g.check_finite("gradient")
            .map_err(|e| Error::Numeric(format!("adam step: {e}")))?;
    }
    state.t += 1;
    let t = state.t;
    let bc1 = 1.0 - cfg.adam_beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t as i32);
    for (i, tensor) in params.tensors_mut().into_iter().enumerate() {
        let g = grads.param_at(i).1.as_slice();
        let m = state.m.param_at_mut(i).as_mut_slice();
        for (mk, &gk) in m.iter_mut().zip(g) {
            *mk = cfg.adam_beta1 * *mk + (1.0 - cfg.adam_beta1) * gk;
        }
        let m = state.m.param_at(i).1.as_slice();
        let v = state.v.param_at_mut(i).as_mut_slice();
        for (vk, &gk) in v.iter_mut().zip(g) {
            *vk = cfg.adam_beta2 * *vk + (1.0 - cfg.adam_beta2) * gk * gk;
        }
        for ((pk, &mk), &vk) in tensor.as_mut_slice().iter_mut().zip(m).zip(v.iter()) {
            let m_hat = mk / bc1;
            let v_hat = vk / bc2;
            *pk -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Train/validation losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Trained model plus everything needed to reproduce its preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dims: ModelDims,
    pub window_len: usize,
    pub stride: usize,
    pub seed: u64,
    pub beta: f64,
    pub learning_rate: f64,
    pub normalizer: Normalizer,
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

const IMPROVEMENT_TOL: f64 = 1e-12;

/// Trains on all records jointly. Windows are split per case (the last
/// `val_fraction` of each case's windows validate, so overlapping windows
/// never leak across the split), normalized by train-set statistics, and
/// optimized with Adam until the validation loss stalls for `patience`
/// consecutive epochs or `max_epochs` is reached. Returns the checkpoint
/// of the best validation epoch.
pub fn train(records: &[PressureRecord], cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Input("no records to train on".into()));
    }
    let mut train_windows = Vec::new();
    let mut val_windows = Vec::new();
    for rec in records {
        let windows = make_windows(rec, cfg.window_len, cfg.stride)?;
        let n = windows.len();
        if n < 2 {
            return Err(Error::Input(format!(
                "case {} yields {n} windows; need at least 2 to split",
                rec.case_id
            )));
        }
        let mut val_count = (n as f64 * cfg.val_fraction).round() as usize;
        val_count = val_count.clamp(1, n - 1);
        let split = n - val_count;
        for (i, w) in windows.into_iter().enumerate() {
            if i < split {
                train_windows.push(w);
            } else {
                val_windows.push(w);
            }
        }
    }
    let normalizer = Normalizer::fit(&train_windows)?;
    for w in train_windows.iter_mut().chain(val_windows.iter_mut()) {
        normalizer.apply(w)?;
    }

    let dims = ModelDims::new(CHANNELS, cfg.h1, cfg.h2)?;
    let mut init_rng = derive_stream(cfg.seed, "init");
    let mut params = ModelParams::init(dims, &mut init_rng);
    let mut rng = derive_stream(cfg.seed, "train");
    let mut adam = AdamState::new(&params);

    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut stalled = 0usize;
    let mut indices: Vec<usize> = (0..train_windows.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            let eps: Vec<[f64; 2]> = batch
                .iter()
                .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
                .collect();
            let results: Result<Vec<_>> = batch
                .par_iter()
                .zip(eps.par_iter())
                .map(|(&wi, &e)| model_backward(&train_windows[wi], e, &params, cfg.beta))
                .collect();
            let results =
                results.map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
            let mut grad_mean = results[0].1.zeros_like();
            let scale = 1.0 / results.len() as f64;
            for (terms, g) in &results {
                loss_sum += terms.total;
                grad_mean.add_scaled_params(g, scale)?;
            }
            adam_step(&mut params, &grad_mean, &mut adam, cfg)
                .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
        }
        let train_loss = loss_sum / train_windows.len() as f64;
        let val_loss = evaluate(&val_windows, &params, cfg.beta)
            .map_err(|e| Error::Training(format!("epoch {epoch} validation: {e}")))?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Training(format!(
                "epoch {epoch}: non-finite loss (train {train_loss}, val {val_loss})"
            )));
        }
        history.push(EpochStats {
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            // Snapshot any strict improvement; the patience counter only
            // resets on improvements larger than the tolerance, so FP-level
            // wiggle cannot postpone the stop.
            stalled = if best_val - val_loss > IMPROVEMENT_TOL {
                0
            } else {
                stalled + 1
            };
            best_val = val_loss;
            best_params = params.clone();
        } else {
            stalled += 1;
        }
        if stalled >= cfg.patience {
            break;
        }
    }

    Ok(Checkpoint {
        dims,
        window_len: cfg.window_len,
        stride: cfg.stride,
        seed: cfg.seed,
        beta: cfg.beta,
        learning_rate: cfg.learning_rate,
        normalizer,
        params: best_params,
        history,
    })
}

/// Mean total loss over windows with eps = 0 (deterministic posterior
/// mean). Never mutates parameters.
pub fn evaluate(windows: &[Matrix], params: &ModelParams, beta: f64) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Input("no windows to evaluate".into()));
    }
    let totals: Result<Vec<f64>> = windows
        .par_iter()
        .map(|w| {
            crate::model::forward_full(w, [0.0, 0.0], params, beta).map(|tr| tr.terms.total)
        })
        .collect();
    let totals = totals?;
    Ok(totals.iter().sum::<f64>() / totals.len() as f64)
}

/// Checkpoint hyperparameters must agree with the latent dimension baked
/// into the model.
pub fn check_latent_dim(latent: usize) -> Result<()> {
    if latent != LATENT_DIM {
        return Err(Error::Config(format!(
            "checkpoint declares latent dimension {latent}, model supports {LATENT_DIM}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_case, OperatingPoint};

    fn tiny_record(n: usize) -> PressureRecord {
        let rate = 5000.0;
        let mut rng = derive_stream(5, "tiny");
        let samples = Matrix::from_fn(n, CHANNELS, |_, _| rng.sample(StandardNormal));
        PressureRecord::new(
            samples,
            rate,
            n as f64 / rate,
            OperatingPoint::new(1600.0, 0.65),
            None,
            "tiny".into(),
        )
        .unwrap()
    }

    #[test]
    fn window_count_arithmetic() {
        let rec = tiny_record(40000);
        assert_eq!(make_windows(&rec, 200, 100).unwrap().len(), 399);
        let rec = tiny_record(50);
        assert_eq!(make_windows(&rec, 50, 25).unwrap().len(), 1);
        let rec = tiny_record(1000);
        assert_eq!(make_windows(&rec, 50, 50).unwrap().len(), 20);
        assert!(make_windows(&rec, 1001, 1).is_err());
        assert!(make_windows(&rec, 50, 0).is_err());
    }

    #[test]
    fn windows_copy_the_right_rows() {
        let rec = tiny_record(100);
        let ws = make_windows(&rec, 40, 30).unwrap();
        assert_eq!(ws.len(), 3);
        assert_eq!(ws[1].row(0), rec.samples.row(30));
        assert_eq!(ws[2].row(39), rec.samples.row(99));
    }

    #[test]
    fn normalizer_zscores_the_fit_set() {
        let rec = tiny_record(500);
        let mut ws = make_windows(&rec, 50, 50).unwrap();
        let norm = Normalizer::fit(&ws).unwrap();
        for w in ws.iter_mut() {
            norm.apply(w).unwrap();
        }
        let rows: usize = ws.iter().map(Matrix::rows).sum();
        for ch in 0..CHANNELS {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for w in &ws {
                for r in 0..w.rows() {
                    sum += w.row(r)[ch];
                    sq += w.row(r)[ch] * w.row(r)[ch];
                }
            }
            let mean = sum / rows as f64;
            let var = sq / rows as f64 - mean * mean;
            assert!(mean.abs() < 1e-9, "ch{ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "ch{ch} var {var}");
        }
    }

    #[test]
    fn constant_channel_is_rejected_by_name() {
        let mut w = Matrix::zeros(10, CHANNELS);
        for r in 0..10 {
            for c in 0..CHANNELS {
                w.set(r, c, if c == 3 { 7.0 } else { (r * (c + 1)) as f64 });
            }
        }
        match Normalizer::fit(&[w]) {
            Err(Error::Data(msg)) => assert!(msg.contains("ch03"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let dims = ModelDims::new(CHANNELS, 3, 2).unwrap();
        let mut rng = derive_stream(1, "adam");
        let mut p = ModelParams::init(dims, &mut rng);
        let before = p.to_store();
        let grads = before.zeros_like();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &grads, &mut state, &TrainConfig::default()).unwrap();
        for ((_, a, _), (_, b, _)) in p.to_store().entries().zip(before.entries()) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }

    #[test]
    fn adam_first_step_is_a_sign_step() {
        let dims = ModelDims::new(CHANNELS, 3, 2).unwrap();
        let mut rng = derive_stream(2, "adam");
        let mut p = ModelParams::init(dims, &mut rng);
        let before = p.to_store();
        let mut grads = before.zeros_like();
        for i in 0..grads.len() {
            grads.param_at_mut(i).as_mut_slice().fill(5e-3);
        }
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &grads, &mut state, &cfg).unwrap();
        for ((_, a, _), (_, b, _)) in p.to_store().entries().zip(before.entries()) {
            for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
                let delta = x - y;
                assert!(
                    (delta + cfg.learning_rate).abs() < 1e-5 * cfg.learning_rate,
                    "delta {delta}"
                );
            }
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let dims = ModelDims::new(CHANNELS, 3, 2).unwrap();
        let mut rng = derive_stream(3, "adam");
        let mut p = ModelParams::init(dims, &mut rng);
        let mut grads = p.to_store().zeros_like();
        grads.param_at_mut(0).as_mut_slice()[0] = f64::NAN;
        let mut state = AdamState::new(&p);
        match adam_step(&mut p, &grads, &mut state, &TrainConfig::default()) {
            Err(Error::Numeric(_)) => {}
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn batch_mean_of_identical_windows_matches_single_gradient() {
        let dims = ModelDims::new(CHANNELS, 3, 2).unwrap();
        let mut rng = derive_stream(4, "batch");
        let p = ModelParams::init(dims, &mut rng);
        let w = Matrix::from_fn(10, CHANNELS, |_, _| rng.sample(StandardNormal));
        let eps = [0.3, -0.8];
        let (_, single) = model_backward(&w, eps, &p, 0.5).unwrap();
        // Power-of-two batch: per-item scaling by 1/k is exact.
        let k = 4;
        let mut mean = single.zeros_like();
        for _ in 0..k {
            let (_, g) = model_backward(&w, eps, &p, 0.5).unwrap();
            mean.add_scaled_params(&g, 1.0 / k as f64).unwrap();
        }
        for ((_, a, _), (_, b, _)) in mean.entries().zip(single.entries()) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }

    #[test]
    fn zero_learning_rate_stops_after_patience_plus_one() {
        let rec = generate_case(OperatingPoint::new(1600.0, 0.65), 0.05, 5000.0, 9).unwrap();
        let cfg = TrainConfig {
            window_len: 20,
            stride: 10,
            learning_rate: 0.0,
            max_epochs: 200,
            patience: 7,
            batch_size: 8,
            h1: 4,
            h2: 2,
            ..TrainConfig::default()
        };
        let ckpt = train(&[rec], &cfg).unwrap();
        assert_eq!(ckpt.history.len(), cfg.patience + 1);
        let v0 = ckpt.history[0].val_loss;
        for e in &ckpt.history {
            assert_eq!(e.val_loss, v0);
        }
    }

    #[test]
    fn best_epoch_val_loss_is_minimal_and_runs_are_deterministic() {
        let rec = generate_case(OperatingPoint::new(1600.0, 0.80), 0.05, 5000.0, 3).unwrap();
        let cfg = TrainConfig {
            window_len: 20,
            stride: 10,
            max_epochs: 12,
            patience: 100,
            batch_size: 8,
            h1: 4,
            h2: 2,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&[rec.clone()], &cfg).unwrap();
        let b = train(&[rec], &cfg).unwrap();
        assert_eq!(a.history, b.history);
        for ((_, pa, _), (_, pb, _)) in
            a.params.to_store().entries().zip(b.params.to_store().entries())
        {
            assert_eq!(pa.as_slice(), pb.as_slice());
        }
        assert_eq!(a.history.len(), 12);
        let best = a
            .history
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        // The snapshot tracks every strict improvement, so the stored
        // params correspond to the exact minimum.
        let ws = {
            let recs = generate_case(OperatingPoint::new(1600.0, 0.80), 0.05, 5000.0, 3).unwrap();
            let mut all = make_windows(&recs, 20, 10).unwrap();
            let n = all.len();
            let val_count = ((n as f64) * 0.2).round() as usize;
            let mut val = all.split_off(n - val_count.clamp(1, n - 1));
            let norm = Normalizer::fit(&all).unwrap();
            for w in val.iter_mut() {
                norm.apply(w).unwrap();
            }
            val
        };
        let replayed = evaluate(&ws, &a.params, a.beta).unwrap();
        assert!((replayed - best).abs() < 1e-12, "{replayed} vs {best}");
    }
}
