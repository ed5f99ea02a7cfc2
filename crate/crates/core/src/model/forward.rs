//! Forward pass: LSTM cell and unroll, bidirectional layers, encoding to
//! the latent posterior, reparameterized sampling, decoding, and the loss.
//!
//! Every intermediate needed by backpropagation is captured in trace
//! structs; the traces store direction-local values in processing order
//! (step s of the backward direction reads input index T-1-s).

use crate::error::{Error, Result};
use crate::model::params::{BiLstmLayerParams, LstmDirectionParams, ModelParams};
use crate::model::LatentPoint;
use crate::numgrad::{matvec_add_into, sigmoid, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Loss components of one window: `total = mse + beta * kl`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub mse: f64,
    pub kl: f64,
}

/// Per-direction unroll record, rows in processing order.
#[derive(Debug, Clone)]
pub(crate) struct DirectionTrace {
    /// T x 4H post-activation gates, [input, forget, candidate, output].
    pub gates: Matrix,
    /// T x H cell states.
    pub c: Matrix,
    /// T x H tanh of cell states.
    pub tanh_c: Matrix,
    /// T x H hidden states.
    pub h: Matrix,
}

/// Bidirectional layer record. `out` is in input time order with columns
/// [forward hidden | backward hidden].
#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    pub fw: DirectionTrace,
    pub bw: DirectionTrace,
    pub out: Matrix,
}

#[derive(Debug, Clone)]
pub(crate) struct EncodeTrace {
    pub l1: LayerTrace,
    pub l2: LayerTrace,
    /// Final forward state then final backward state of layer two.
    pub summary: Vec<f64>,
    pub mu: [f64; 2],
    pub logvar: [f64; 2],
}

#[derive(Debug, Clone)]
pub(crate) struct DecodeTrace {
    /// T x 2H2, the projected latent repeated at every timestep.
    pub inject: Matrix,
    pub l1: LayerTrace,
    pub l2: LayerTrace,
    pub recon: Matrix,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    pub enc: EncodeTrace,
    pub eps: [f64; 2],
    pub z: LatentPoint,
    pub dec: DecodeTrace,
    pub terms: LossTerms,
}

fn gates_in_place(preact: &mut [f64], h: usize) {
    for v in &mut preact[..2 * h] {
        *v = sigmoid(*v);
    }
    for v in &mut preact[2 * h..3 * h] {
        *v = v.tanh();
    }
    for v in &mut preact[3 * h..4 * h] {
        *v = sigmoid(*v);
    }
}

fn cell_from_gates(
    gates: &[f64],
    c_prev: &[f64],
    c: &mut [f64],
    tanh_c: &mut [f64],
    h_out: &mut [f64],
) {
    let h = c.len();
    let (i_g, rest) = gates.split_at(h);
    let (f_g, rest) = rest.split_at(h);
    let (g_g, o_g) = rest.split_at(h);
    for k in 0..h {
        c[k] = f_g[k] * c_prev[k] + i_g[k] * g_g[k];
        tanh_c[k] = c[k].tanh();
        h_out[k] = o_g[k] * tanh_c[k];
    }
}

/// One LSTM step from explicit previous state.
pub fn lstm_cell(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmDirectionParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    p.validate("lstm_cell")?;
    let h = p.hidden_size();
    if x.len() != p.input_size() || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Dimension(format!(
            "lstm_cell: x={} h_prev={} c_prev={} incompatible with input {} hidden {}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            p.input_size(),
            h
        )));
    }
    let mut preact = p.b.as_slice().to_vec();
    matvec_add_into(&p.w_ih, x, &mut preact);
    matvec_add_into(&p.w_hh, h_prev, &mut preact);
    gates_in_place(&mut preact, h);
    let mut c = vec![0.0; h];
    let mut tanh_c = vec![0.0; h];
    let mut h_out = vec![0.0; h];
    cell_from_gates(&preact, c_prev, &mut c, &mut tanh_c, &mut h_out);
    if h_out.iter().chain(&c).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("lstm_cell produced non-finite state".into()));
    }
    Ok((h_out, c))
}

/// Unrolls one direction from zero initial state. Trace rows are in
/// processing order.
pub(crate) fn run_direction(
    seq: &Matrix,
    p: &LstmDirectionParams,
    reverse: bool,
) -> Result<DirectionTrace> {
    let t_len = seq.rows();
    if t_len == 0 {
        return Err(Error::Input("lstm unroll: empty sequence".into()));
    }
    if seq.cols() != p.input_size() {
        return Err(Error::Dimension(format!(
            "lstm unroll: sequence width {} does not match input size {}",
            seq.cols(),
            p.input_size()
        )));
    }
    seq.check_finite("lstm unroll input")?;
    let h = p.hidden_size();
    // Input contribution of every step at once; only the recurrent part is
    // inherently sequential.
    let input_pre = seq.matmul(&p.w_ih.transpose())?;
    let mut trace = DirectionTrace {
        gates: Matrix::zeros(t_len, 4 * h),
        c: Matrix::zeros(t_len, h),
        tanh_c: Matrix::zeros(t_len, h),
        h: Matrix::zeros(t_len, h),
    };
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut preact = vec![0.0; 4 * h];
    for s in 0..t_len {
        let idx = if reverse { t_len - 1 - s } else { s };
        preact.copy_from_slice(input_pre.row(idx));
        for (v, &b) in preact.iter_mut().zip(p.b.as_slice()) {
            *v += b;
        }
        matvec_add_into(&p.w_hh, &h_prev, &mut preact);
        gates_in_place(&mut preact, h);
        trace.gates.row_mut(s).copy_from_slice(&preact);
        cell_from_gates(
            &preact,
            &c_prev,
            trace.c.row_mut(s),
            trace.tanh_c.row_mut(s),
            trace.h.row_mut(s),
        );
        c_prev.copy_from_slice(trace.c.row(s));
        h_prev.copy_from_slice(trace.h.row(s));
    }
    trace.h.check_finite("lstm hidden state")?;
    Ok(trace)
}

/// Full unroll of one direction, output re-aligned to input time order.
pub fn lstm_unroll(seq: &Matrix, p: &LstmDirectionParams, direction: Direction) -> Result<Matrix> {
    p.validate("lstm_unroll")?;
    let reverse = direction == Direction::Backward;
    let trace = run_direction(seq, p, reverse)?;
    if !reverse {
        return Ok(trace.h);
    }
    let t_len = seq.rows();
    let mut out = Matrix::zeros(t_len, p.hidden_size());
    for t in 0..t_len {
        out.row_mut(t).copy_from_slice(trace.h.row(t_len - 1 - t));
    }
    Ok(out)
}

pub(crate) fn bi_layer_forward(seq: &Matrix, p: &BiLstmLayerParams) -> Result<LayerTrace> {
    p.validate("bidirectional layer")?;
    let fw = run_direction(seq, &p.forward, false)?;
    let bw = run_direction(seq, &p.backward, true)?;
    let t_len = seq.rows();
    let h = p.hidden_size();
    let mut out = Matrix::zeros(t_len, 2 * h);
    for t in 0..t_len {
        out.row_mut(t)[..h].copy_from_slice(fw.h.row(t));
        out.row_mut(t)[h..].copy_from_slice(bw.h.row(t_len - 1 - t));
    }
    Ok(LayerTrace { fw, bw, out })
}

pub(crate) fn encode_with_trace(window: &Matrix, p: &ModelParams) -> Result<EncodeTrace> {
    p.validate()?;
    if window.cols() != p.dims.channels {
        return Err(Error::Input(format!(
            "encode: window has {} channels, model expects {}",
            window.cols(),
            p.dims.channels
        )));
    }
    if window.rows() == 0 {
        return Err(Error::Input("encode: empty window".into()));
    }
    let l1 = bi_layer_forward(window, &p.enc_layer1)?;
    let l2 = bi_layer_forward(&l1.out, &p.enc_layer2)?;
    let t_last = window.rows() - 1;
    let mut summary = Vec::with_capacity(p.dims.summary_width());
    summary.extend_from_slice(l2.fw.h.row(t_last));
    summary.extend_from_slice(l2.bw.h.row(t_last));
    let mu_v = p.head_mu.apply(&summary)?;
    let lv_v = p.head_logvar.apply(&summary)?;
    Ok(EncodeTrace {
        l1,
        l2,
        summary,
        mu: [mu_v[0], mu_v[1]],
        logvar: [lv_v[0], lv_v[1]],
    })
}

/// Posterior parameters of one window.
pub fn encode(window: &Matrix, p: &ModelParams) -> Result<([f64; 2], [f64; 2])> {
    let tr = encode_with_trace(window, p)?;
    Ok((tr.mu, tr.logvar))
}

/// z = mu + exp(logvar / 2) * eps, elementwise.
pub fn reparameterize(mu: [f64; 2], logvar: [f64; 2], eps: [f64; 2]) -> Result<LatentPoint> {
    for v in mu.iter().chain(&logvar).chain(&eps) {
        if !v.is_finite() {
            return Err(Error::Numeric(
                "reparameterize: non-finite input".into(),
            ));
        }
    }
    let z1 = mu[0] + (0.5 * logvar[0]).exp() * eps[0];
    let z2 = mu[1] + (0.5 * logvar[1]).exp() * eps[1];
    let z = LatentPoint::new(z1, z2);
    if !z.is_finite() {
        return Err(Error::Numeric(
            "reparameterize: non-finite latent point".into(),
        ));
    }
    Ok(z)
}

pub(crate) fn decode_with_trace(z: LatentPoint, t_len: usize, p: &ModelParams) -> Result<DecodeTrace> {
    p.validate()?;
    if t_len == 0 {
        return Err(Error::Input("decode: zero-length window".into()));
    }
    if !z.is_finite() {
        return Err(Error::Numeric("decode: non-finite latent point".into()));
    }
    let z_proj = p.dec_inject.apply(&z.as_array())?;
    let mut inject = Matrix::zeros(t_len, z_proj.len());
    for t in 0..t_len {
        inject.row_mut(t).copy_from_slice(&z_proj);
    }
    let l1 = bi_layer_forward(&inject, &p.dec_layer1)?;
    let l2 = bi_layer_forward(&l1.out, &p.dec_layer2)?;
    let mut recon = Matrix::zeros(t_len, p.dims.channels);
    for t in 0..t_len {
        let y = p.head_out.apply(l2.out.row(t))?;
        recon.row_mut(t).copy_from_slice(&y);
    }
    recon.check_finite("decode output")?;
    Ok(DecodeTrace {
        inject,
        l1,
        l2,
        recon,
    })
}

/// Reconstruction of a `t_len`-step window from one latent point.
pub fn decode(z: LatentPoint, t_len: usize, p: &ModelParams) -> Result<Matrix> {
    Ok(decode_with_trace(z, t_len, p)?.recon)
}

/// KL divergence of a diagonal Gaussian posterior from the standard normal
/// prior: 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar).
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::Dimension(format!(
            "kl: mu length {} vs logvar length {}",
            mu.len(),
            logvar.len()
        )));
    }
    let mut kl = 0.0;
    for (&m, &lv) in mu.iter().zip(logvar) {
        kl += 0.5 * (m * m + lv.exp() - 1.0 - lv);
    }
    if !kl.is_finite() {
        return Err(Error::Numeric("kl: non-finite value".into()));
    }
    Ok(kl)
}

/// Mean squared error over all entries plus `beta` times the KL term.
pub fn loss(
    x: &Matrix,
    x_hat: &Matrix,
    mu: &[f64],
    logvar: &[f64],
    beta: f64,
) -> Result<LossTerms> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Dimension(format!(
            "loss: input {:?} vs reconstruction {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::Input(format!("loss: beta must be >= 0, got {beta}")));
    }
    let mut sse = 0.0;
    for (&a, &b) in x.as_slice().iter().zip(x_hat.as_slice()) {
        let d = a - b;
        sse += d * d;
    }
    let mse = sse / x.len() as f64;
    let kl = kl_divergence(mu, logvar)?;
    let total = mse + beta * kl;
    if !total.is_finite() {
        return Err(Error::Numeric("loss: non-finite total".into()));
    }
    Ok(LossTerms { total, mse, kl })
}

/// Encode, sample with the supplied eps, decode, and evaluate the loss,
/// keeping every intermediate for backpropagation.
pub(crate) fn forward_full(
    window: &Matrix,
    eps: [f64; 2],
    p: &ModelParams,
    beta: f64,
) -> Result<ForwardTrace> {
    let enc = encode_with_trace(window, p)?;
    let z = reparameterize(enc.mu, enc.logvar, eps)?;
    let dec = decode_with_trace(z, window.rows(), p)?;
    let terms = loss(window, &dec.recon, &enc.mu, &enc.logvar, beta)?;
    Ok(ForwardTrace {
        enc,
        eps,
        z,
        dec,
        terms,
    })
}
