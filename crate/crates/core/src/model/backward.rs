//! Analytic backpropagation through the full model. Gradients are written
//! into a `ModelParams`-shaped accumulator and returned as the flat named
//! view; correctness is arbitrated by the finite-difference checker.

use crate::error::Result;
use crate::model::forward::{forward_full, DirectionTrace, ForwardTrace, LayerTrace, LossTerms};
use crate::model::params::{Affine, BiLstmLayerParams, LstmDirectionParams, ModelParams};
use crate::numgrad::{
    dsigmoid_from_output, dtanh_from_output, matvec_t_add_into, rank1_add, Matrix, ParamStore,
};

/// Gradient of the total loss for one window with respect to every named
/// tensor, at fixed eps. Returns the loss terms alongside.
pub fn model_backward(
    window: &Matrix,
    eps: [f64; 2],
    p: &ModelParams,
    beta: f64,
) -> Result<(LossTerms, ParamStore)> {
    let tr = forward_full(window, eps, p, beta)?;
    let g = backward_from_trace(window, &tr, p, beta)?;
    Ok((tr.terms, g.to_store()))
}

fn backward_from_trace(
    window: &Matrix,
    tr: &ForwardTrace,
    p: &ModelParams,
    beta: f64,
) -> Result<ModelParams> {
    let t_len = window.rows();
    let channels = p.dims.channels;
    let h1 = p.dims.h1;
    let h2 = p.dims.h2;
    let mut g = ModelParams::zeros(p.dims);

    // Mean-MSE: d/d x_hat = 2 (x_hat - x) / (T * C).
    let scale = 2.0 / (t_len * channels) as f64;
    let mut d_recon = Matrix::zeros(t_len, channels);
    for t in 0..t_len {
        let x = window.row(t);
        let xh = tr.dec.recon.row(t);
        let d = d_recon.row_mut(t);
        for k in 0..channels {
            d[k] = scale * (xh[k] - x[k]);
        }
    }

    // Output head, per timestep.
    let mut d_dec2_out = Matrix::zeros(t_len, 2 * h1);
    for t in 0..t_len {
        affine_backward(
            &p.head_out,
            &mut g.head_out,
            tr.dec.l2.out.row(t),
            d_recon.row(t),
            d_dec2_out.row_mut(t),
        );
    }

    // Decoder layers, deepest first.
    let d_dec1_out = bi_layer_backward(
        &tr.dec.l1.out,
        &tr.dec.l2,
        &p.dec_layer2,
        &d_dec2_out,
        &mut g.dec_layer2,
    );
    let d_inject = bi_layer_backward(
        &tr.dec.inject,
        &tr.dec.l1,
        &p.dec_layer1,
        &d_dec1_out,
        &mut g.dec_layer1,
    );

    // Every timestep receives the same injected vector.
    let mut d_zproj = vec![0.0; 2 * h2];
    for t in 0..t_len {
        for (acc, &v) in d_zproj.iter_mut().zip(d_inject.row(t)) {
            *acc += v;
        }
    }
    let mut dz = [0.0; 2];
    affine_backward(
        &p.dec_inject,
        &mut g.dec_inject,
        &tr.z.as_array(),
        &d_zproj,
        &mut dz,
    );

    // Reparameterization and the KL term.
    let mut dmu = [0.0; 2];
    let mut dlv = [0.0; 2];
    for d in 0..2 {
        let sigma = (0.5 * tr.enc.logvar[d]).exp();
        dmu[d] = dz[d] + beta * tr.enc.mu[d];
        dlv[d] = dz[d] * tr.eps[d] * 0.5 * sigma + beta * 0.5 * (tr.enc.logvar[d].exp() - 1.0);
    }

    // Latent heads share the summary vector.
    let mut d_summary = vec![0.0; 2 * h2];
    affine_backward(&p.head_mu, &mut g.head_mu, &tr.enc.summary, &dmu, &mut d_summary);
    affine_backward(
        &p.head_logvar,
        &mut g.head_logvar,
        &tr.enc.summary,
        &dlv,
        &mut d_summary,
    );

    // The summary reads the forward direction's last step and the backward
    // direction's last step (input index 0).
    let mut d_enc2_out = Matrix::zeros(t_len, 2 * h2);
    d_enc2_out.row_mut(t_len - 1)[..h2].copy_from_slice(&d_summary[..h2]);
    d_enc2_out.row_mut(0)[h2..].copy_from_slice(&d_summary[h2..]);

    let d_enc1_out = bi_layer_backward(
        &tr.enc.l1.out,
        &tr.enc.l2,
        &p.enc_layer2,
        &d_enc2_out,
        &mut g.enc_layer2,
    );
    bi_layer_backward(window, &tr.enc.l1, &p.enc_layer1, &d_enc1_out, &mut g.enc_layer1);

    Ok(g)
}

/// dW += dy (x)T, db += dy, dx += W^T dy.
fn affine_backward(p: &Affine, g: &mut Affine, x: &[f64], dy: &[f64], dx: &mut [f64]) {
    rank1_add(&mut g.w, dy, x);
    for (acc, &v) in g.b.as_mut_slice().iter_mut().zip(dy) {
        *acc += v;
    }
    matvec_t_add_into(&p.w, dy, dx);
}

/// Backpropagates one bidirectional layer. `d_out` is the upstream gradient
/// on the layer output in input time order; returns the gradient on the
/// layer input sequence.
fn bi_layer_backward(
    seq: &Matrix,
    trace: &LayerTrace,
    p: &BiLstmLayerParams,
    d_out: &Matrix,
    g: &mut BiLstmLayerParams,
) -> Matrix {
    let t_len = seq.rows();
    let h = p.hidden_size();
    let mut d_seq = Matrix::zeros(t_len, seq.cols());
    let mut d_h = Matrix::zeros(t_len, h);
    for t in 0..t_len {
        d_h.row_mut(t).copy_from_slice(&d_out.row(t)[..h]);
    }
    direction_backward(seq, &trace.fw, &p.forward, &d_h, false, &mut g.forward, &mut d_seq);
    for s in 0..t_len {
        d_h.row_mut(s)
            .copy_from_slice(&d_out.row(t_len - 1 - s)[h..]);
    }
    direction_backward(seq, &trace.bw, &p.backward, &d_h, true, &mut g.backward, &mut d_seq);
    d_seq
}

/// Reverse-order pass over one direction's steps. `d_h_upstream` rows are in
/// processing order, matching the trace.
#[allow(clippy::too_many_arguments)]
fn direction_backward(
    seq: &Matrix,
    trace: &DirectionTrace,
    p: &LstmDirectionParams,
    d_h_upstream: &Matrix,
    reverse: bool,
    g: &mut LstmDirectionParams,
    d_seq: &mut Matrix,
) {
    let t_len = seq.rows();
    let h = p.hidden_size();
    let zero = vec![0.0; h];
    let mut dh_carry = vec![0.0; h];
    let mut dc_carry = vec![0.0; h];
    let mut dh_total = vec![0.0; h];
    let mut dpre = vec![0.0; 4 * h];
    for s in (0..t_len).rev() {
        let up = d_h_upstream.row(s);
        for k in 0..h {
            dh_total[k] = up[k] + dh_carry[k];
        }
        let gates = trace.gates.row(s);
        let (i_g, rest) = gates.split_at(h);
        let (f_g, rest) = rest.split_at(h);
        let (g_g, o_g) = rest.split_at(h);
        let tanh_c = trace.tanh_c.row(s);
        let c_prev = if s > 0 { trace.c.row(s - 1) } else { &zero[..] };
        let h_prev = if s > 0 { trace.h.row(s - 1) } else { &zero[..] };
        for k in 0..h {
            let dc = dc_carry[k] + dh_total[k] * o_g[k] * dtanh_from_output(tanh_c[k]);
            let d_o = dh_total[k] * tanh_c[k];
            dpre[k] = dc * g_g[k] * dsigmoid_from_output(i_g[k]);
            dpre[h + k] = dc * c_prev[k] * dsigmoid_from_output(f_g[k]);
            dpre[2 * h + k] = dc * i_g[k] * dtanh_from_output(g_g[k]);
            dpre[3 * h + k] = d_o * dsigmoid_from_output(o_g[k]);
            dc_carry[k] = dc * f_g[k];
        }
        for (acc, &v) in g.b.as_mut_slice().iter_mut().zip(&dpre) {
            *acc += v;
        }
        if s > 0 {
            rank1_add(&mut g.w_hh, &dpre, h_prev);
        }
        dh_carry.fill(0.0);
        matvec_t_add_into(&p.w_hh, &dpre, &mut dh_carry);
        let idx = if reverse { t_len - 1 - s } else { s };
        rank1_add(&mut g.w_ih, &dpre, seq.row(idx));
        matvec_t_add_into(&p.w_ih, &dpre, d_seq.row_mut(idx));
    }
}
