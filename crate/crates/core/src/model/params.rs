//! Parameter containers: LSTM direction weights, bidirectional layer pairs,
//! affine heads, and the full model with its flat named-tensor view.
//!
//! Gate order in every 4H-stacked tensor is [input, forget, candidate,
//! output]. The named-tensor view (`to_store`/`from_store`) fixes both the
//! tensor names and their order; the checkpoint format and the optimizer
//! state layout both inherit it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numgrad::{Matrix, ParamStore};

pub const LATENT_DIM: usize = 2;

/// Size configuration: input channel count and the two encoder hidden widths
/// (per direction). The decoder mirrors them in reverse order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub channels: usize,
    pub h1: usize,
    pub h2: usize,
}

impl ModelDims {
    pub fn new(channels: usize, h1: usize, h2: usize) -> Result<Self> {
        if channels == 0 || h1 == 0 || h2 == 0 {
            return Err(Error::Config(format!(
                "model dims must be positive (channels={channels}, h1={h1}, h2={h2})"
            )));
        }
        Ok(ModelDims { channels, h1, h2 })
    }

    /// Width of the encoder summary vector feeding the latent heads.
    pub fn summary_width(&self) -> usize {
        2 * self.h2
    }
}

/// Weights for one LSTM direction: input, recurrent, and bias tensors, each
/// stacking the four gates along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirectionParams {
    pub w_ih: Matrix,
    pub w_hh: Matrix,
    pub b: Matrix,
}

impl LstmDirectionParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmDirectionParams {
            w_ih: Matrix::zeros(4 * hidden, input),
            w_hh: Matrix::zeros(4 * hidden, hidden),
            b: Matrix::zeros(4 * hidden, 1),
        }
    }

    pub fn init<R: Rng>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let mut p = LstmDirectionParams {
            w_ih: uniform_init(4 * hidden, input, rng),
            w_hh: uniform_init(4 * hidden, hidden, rng),
            b: Matrix::zeros(4 * hidden, 1),
        };
        for r in hidden..2 * hidden {
            p.b.set(r, 0, 1.0);
        }
        p
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let h = self.hidden_size();
        let d = self.input_size();
        if self.w_ih.shape() != (4 * h, d)
            || self.w_hh.shape() != (4 * h, h)
            || self.b.shape() != (4 * h, 1)
        {
            return Err(Error::Dimension(format!(
                "{name}: inconsistent LSTM shapes w_ih={:?} w_hh={:?} b={:?}",
                self.w_ih.shape(),
                self.w_hh.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }
}

/// Forward and backward direction weights of one bidirectional layer.
/// Layer output width is twice the shared hidden size.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayerParams {
    pub forward: LstmDirectionParams,
    pub backward: LstmDirectionParams,
}

impl BiLstmLayerParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        BiLstmLayerParams {
            forward: LstmDirectionParams::zeros(hidden, input),
            backward: LstmDirectionParams::zeros(hidden, input),
        }
    }

    pub fn init<R: Rng>(hidden: usize, input: usize, rng: &mut R) -> Self {
        BiLstmLayerParams {
            forward: LstmDirectionParams::init(hidden, input, rng),
            backward: LstmDirectionParams::init(hidden, input, rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        self.forward.validate(name)?;
        self.backward.validate(name)?;
        if self.forward.hidden_size() != self.backward.hidden_size()
            || self.forward.input_size() != self.backward.input_size()
        {
            return Err(Error::Dimension(format!(
                "{name}: forward/backward direction sizes differ"
            )));
        }
        Ok(())
    }
}

/// y = W x + b.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w: Matrix,
    pub b: Matrix,
}

impl Affine {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Affine {
            w: Matrix::zeros(out_dim, in_dim),
            b: Matrix::zeros(out_dim, 1),
        }
    }

    pub fn init<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        Affine {
            w: uniform_init(out_dim, in_dim, rng),
            b: Matrix::zeros(out_dim, 1),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "affine input length {} expected {}",
                x.len(),
                self.in_dim()
            )));
        }
        let mut y = self.b.as_slice().to_vec();
        crate::numgrad::matvec_add_into(&self.w, x, &mut y);
        Ok(y)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.b.shape() != (self.w.rows(), 1) {
            return Err(Error::Dimension(format!(
                "{name}: bias shape {:?} does not match weight {:?}",
                self.b.shape(),
                self.w.shape()
            )));
        }
        Ok(())
    }
}

fn uniform_init<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let a = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

/// The complete network: two encoder layers, latent heads, latent injection,
/// two decoder layers mirroring the encoder widths, and the output head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub enc_layer1: BiLstmLayerParams,
    pub enc_layer2: BiLstmLayerParams,
    pub head_mu: Affine,
    pub head_logvar: Affine,
    pub dec_inject: Affine,
    pub dec_layer1: BiLstmLayerParams,
    pub dec_layer2: BiLstmLayerParams,
    pub head_out: Affine,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let ModelDims { channels, h1, h2 } = dims;
        ModelParams {
            dims,
            enc_layer1: BiLstmLayerParams::zeros(h1, channels),
            enc_layer2: BiLstmLayerParams::zeros(h2, 2 * h1),
            head_mu: Affine::zeros(LATENT_DIM, 2 * h2),
            head_logvar: Affine::zeros(LATENT_DIM, 2 * h2),
            dec_inject: Affine::zeros(2 * h2, LATENT_DIM),
            dec_layer1: BiLstmLayerParams::zeros(h2, 2 * h2),
            dec_layer2: BiLstmLayerParams::zeros(h1, 2 * h2),
            head_out: Affine::zeros(channels, 2 * h1),
        }
    }

    pub fn init<R: Rng>(dims: ModelDims, rng: &mut R) -> Self {
        let ModelDims { channels, h1, h2 } = dims;
        ModelParams {
            dims,
            enc_layer1: BiLstmLayerParams::init(h1, channels, rng),
            enc_layer2: BiLstmLayerParams::init(h2, 2 * h1, rng),
            head_mu: Affine::init(LATENT_DIM, 2 * h2, rng),
            head_logvar: Affine::init(LATENT_DIM, 2 * h2, rng),
            dec_inject: Affine::init(2 * h2, LATENT_DIM, rng),
            dec_layer1: BiLstmLayerParams::init(h2, 2 * h2, rng),
            dec_layer2: BiLstmLayerParams::init(h1, 2 * h2, rng),
            head_out: Affine::init(channels, 2 * h1, rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ModelDims { channels, h1, h2 } = self.dims;
        self.enc_layer1.validate("enc1")?;
        self.enc_layer2.validate("enc2")?;
        self.dec_layer1.validate("dec1")?;
        self.dec_layer2.validate("dec2")?;
        self.head_mu.validate("head_mu")?;
        self.head_logvar.validate("head_logvar")?;
        self.dec_inject.validate("dec_inject")?;
        self.head_out.validate("head_out")?;
        let checks = [
            ("enc1", self.enc_layer1.forward.input_size(), channels),
            ("enc1", self.enc_layer1.hidden_size(), h1),
            ("enc2", self.enc_layer2.forward.input_size(), 2 * h1),
            ("enc2", self.enc_layer2.hidden_size(), h2),
            ("head_mu", self.head_mu.in_dim(), 2 * h2),
            ("head_mu", self.head_mu.out_dim(), LATENT_DIM),
            ("head_logvar", self.head_logvar.in_dim(), 2 * h2),
            ("head_logvar", self.head_logvar.out_dim(), LATENT_DIM),
            ("dec_inject", self.dec_inject.in_dim(), LATENT_DIM),
            ("dec_inject", self.dec_inject.out_dim(), 2 * h2),
            ("dec1", self.dec_layer1.forward.input_size(), 2 * h2),
            ("dec1", self.dec_layer1.hidden_size(), h2),
            ("dec2", self.dec_layer2.forward.input_size(), 2 * h2),
            ("dec2", self.dec_layer2.hidden_size(), h1),
            ("head_out", self.head_out.in_dim(), 2 * h1),
            ("head_out", self.head_out.out_dim(), channels),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Dimension(format!(
                    "{name}: size {got} does not match configured dims (want {want})"
                )));
            }
        }
        Ok(())
    }

    /// Tensor names in their fixed order. This order defines checkpoint
    /// layout and optimizer-state indexing.
    pub fn tensor_names() -> &'static [&'static str] {
        &[
            "enc1.fw.w_ih",
            "enc1.fw.w_hh",
            "enc1.fw.b",
            "enc1.bw.w_ih",
            "enc1.bw.w_hh",
            "enc1.bw.b",
            "enc2.fw.w_ih",
            "enc2.fw.w_hh",
            "enc2.fw.b",
            "enc2.bw.w_ih",
            "enc2.bw.w_hh",
            "enc2.bw.b",
            "head_mu.w",
            "head_mu.b",
            "head_logvar.w",
            "head_logvar.b",
            "dec_inject.w",
            "dec_inject.b",
            "dec1.fw.w_ih",
            "dec1.fw.w_hh",
            "dec1.fw.b",
            "dec1.bw.w_ih",
            "dec1.bw.w_hh",
            "dec1.bw.b",
            "dec2.fw.w_ih",
            "dec2.fw.w_hh",
            "dec2.fw.b",
            "dec2.bw.w_ih",
            "dec2.bw.w_hh",
            "dec2.bw.b",
            "head_out.w",
            "head_out.b",
        ]
    }

    pub(crate) fn tensors(&self) -> Vec<&Matrix> {
        vec![
            &self.enc_layer1.forward.w_ih,
            &self.enc_layer1.forward.w_hh,
            &self.enc_layer1.forward.b,
            &self.enc_layer1.backward.w_ih,
            &self.enc_layer1.backward.w_hh,
            &self.enc_layer1.backward.b,
            &self.enc_layer2.forward.w_ih,
            &self.enc_layer2.forward.w_hh,
            &self.enc_layer2.forward.b,
            &self.enc_layer2.backward.w_ih,
            &self.enc_layer2.backward.w_hh,
            &self.enc_layer2.backward.b,
            &self.head_mu.w,
            &self.head_mu.b,
            &self.head_logvar.w,
            &self.head_logvar.b,
            &self.dec_inject.w,
            &self.dec_inject.b,
            &self.dec_layer1.forward.w_ih,
            &self.dec_layer1.forward.w_hh,
            &self.dec_layer1.forward.b,
            &self.dec_layer1.backward.w_ih,
            &self.dec_layer1.backward.w_hh,
            &self.dec_layer1.backward.b,
            &self.dec_layer2.forward.w_ih,
            &self.dec_layer2.forward.w_hh,
            &self.dec_layer2.forward.b,
            &self.dec_layer2.backward.w_ih,
            &self.dec_layer2.backward.w_hh,
            &self.dec_layer2.backward.b,
            &self.head_out.w,
            &self.head_out.b,
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.enc_layer1.forward.w_ih,
            &mut self.enc_layer1.forward.w_hh,
            &mut self.enc_layer1.forward.b,
            &mut self.enc_layer1.backward.w_ih,
            &mut self.enc_layer1.backward.w_hh,
            &mut self.enc_layer1.backward.b,
            &mut self.enc_layer2.forward.w_ih,
            &mut self.enc_layer2.forward.w_hh,
            &mut self.enc_layer2.forward.b,
            &mut self.enc_layer2.backward.w_ih,
            &mut self.enc_layer2.backward.w_hh,
            &mut self.enc_layer2.backward.b,
            &mut self.head_mu.w,
            &mut self.head_mu.b,
            &mut self.head_logvar.w,
            &mut self.head_logvar.b,
            &mut self.dec_inject.w,
            &mut self.dec_inject.b,
            &mut self.dec_layer1.forward.w_ih,
            &mut self.dec_layer1.forward.w_hh,
            &mut self.dec_layer1.forward.b,
            &mut self.dec_layer1.backward.w_ih,
            &mut self.dec_layer1.backward.w_hh,
            &mut self.dec_layer1.backward.b,
            &mut self.dec_layer2.forward.w_ih,
            &mut self.dec_layer2.forward.w_hh,
            &mut self.dec_layer2.forward.b,
            &mut self.dec_layer2.backward.w_ih,
            &mut self.dec_layer2.backward.w_hh,
            &mut self.dec_layer2.backward.b,
            &mut self.head_out.w,
            &mut self.head_out.b,
        ]
    }

    /// Flat named-tensor view, tensors cloned in the fixed order.
    pub fn to_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, t) in Self::tensor_names().iter().zip(self.tensors()) {
            store.insert(name, t.clone()).unwrap();
        }
        store
    }

    /// Rebuilds typed parameters from a flat store, checking every name and
    /// shape against `dims`.
    pub fn from_store(dims: ModelDims, store: &ParamStore) -> Result<ModelParams> {
        let mut p = ModelParams::zeros(dims);
        for (name, slot) in Self::tensor_names().iter().zip(p.tensors_mut()) {
            let src = store.get(name).ok_or_else(|| {
                Error::Dimension(format!("parameter store is missing tensor {name:?}"))
            })?;
            if src.shape() != slot.shape() {
                return Err(Error::Dimension(format!(
                    "tensor {name:?}: shape {:?} does not match configured dims (want {:?})",
                    src.shape(),
                    slot.shape()
                )));
            }
            slot.as_mut_slice().copy_from_slice(src.as_slice());
        }
        Ok(p)
    }
}
