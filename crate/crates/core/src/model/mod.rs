//! Decoupled generative model: dual-stream perception encoder, sparse basis
//! dictionary, solution VAE and a four-headed joint decoder.

pub mod checkpoint;
mod loss;
pub mod nn;
mod train;

use ndarray::{Array1, Array2, ArrayView2};
#[cfg(test)]
use ndarray::s;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::wavelet;

pub use loss::{forward_backward, loss_value, Batch, LossBreakdown, LossWeights, TripletBatch};
pub use nn::{BatchNorm, BatchStats, Linear, Mlp, Parameters};
pub use train::{evaluate_loss, train, Adam, EpochTelemetry, TrainConfig, TrainingSet, Trainer};

/// Train mode uses batch statistics and reparameterized sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Component switches for ablation variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_freq_decoupling: bool,
    pub no_basis: bool,
    pub no_vae: bool,
    pub no_triplet: bool,
    pub no_classify: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 5] = ["no_freq_decoupling", "no_basis", "no_vae", "no_triplet", "no_classify"];

    pub fn single(name: &str) -> Result<Self> {
        let mut a = Self::default();
        match name {
            "no_freq_decoupling" => a.no_freq_decoupling = true,
            "no_basis" => a.no_basis = true,
            "no_vae" => a.no_vae = true,
            "no_triplet" => a.no_triplet = true,
            "no_classify" => a.no_classify = true,
            "full" => {}
            other => return Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
        Ok(a)
    }

    pub fn label(&self) -> String {
        let on: Vec<&str> = Self::NAMES
            .iter()
            .zip([self.no_freq_decoupling, self.no_basis, self.no_vae, self.no_triplet, self.no_classify])
            .filter(|(_, f)| *f)
            .map(|(n, _)| *n)
            .collect();
        if on.is_empty() {
            "full".into()
        } else {
            on.join("+")
        }
    }
}

/// Network shape. Every MLP has two hidden layers of width `hidden`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub window_len: usize,
    pub num_objectives: usize,
    pub num_vars: usize,
    pub num_classes: usize,
    pub hidden: usize,
    pub dict_size: usize,
    pub d_struct: usize,
    pub d_z: usize,
    #[serde(default)]
    pub ablation: Ablation,
}

impl Architecture {
    pub fn new(window_len: usize, num_objectives: usize, num_vars: usize, num_classes: usize) -> Self {
        Self {
            window_len,
            num_objectives,
            num_vars,
            num_classes,
            hidden: 128,
            dict_size: 256,
            d_struct: 64,
            d_z: 64,
            ablation: Ablation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("window_len", self.window_len),
            ("num_objectives", self.num_objectives),
            ("num_vars", self.num_vars),
            ("num_classes", self.num_classes),
            ("hidden", self.hidden),
            ("dict_size", self.dict_size),
            ("d_struct", self.d_struct),
            ("d_z", self.d_z),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Flattened window width `L * M`.
    pub fn window_width(&self) -> usize {
        self.window_len * self.num_objectives
    }

    pub fn d_joint(&self) -> usize {
        self.d_z + self.d_struct
    }

    /// Width of the coefficient vector the contrastive loss acts on.
    pub fn coeff_dim(&self) -> usize {
        if self.ablation.no_basis {
            self.d_struct
        } else {
            self.dict_size
        }
    }
}

/// All learnable tensors plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub enc_low: Mlp,
    pub enc_high: Mlp,
    pub fusion: Mlp,
    pub structure: Mlp,
    pub bn: BatchNorm,
    pub dictionary: Array2<f64>,
    pub sol_trunk: Mlp,
    pub sol_mu: Linear,
    pub sol_logvar: Linear,
    pub rec_mlp: Mlp,
    pub rec_out: Linear,
    pub pred_mlp: Mlp,
    pub pred_out: Linear,
    pub cls: Linear,
    pub reg: Linear,
}

impl ModelParams {
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng::stream(seed, rng::streams::INIT);
        let h = arch.hidden;
        let ww = arch.window_width();
        let dj = arch.d_joint();
        let struct_out = arch.coeff_dim();
        let enc_low = Mlp::new(&[ww, h, h], true, &mut r);
        let enc_high = Mlp::new(&[ww, h, h], true, &mut r);
        let fusion = Mlp::new(&[2 * h, h, h], true, &mut r);
        let structure = Mlp::new(&[h, h, struct_out], false, &mut r);
        let std = 1.0 / (arch.d_struct as f64).sqrt();
        let dictionary = Array2::from_shape_simple_fn((arch.dict_size, arch.d_struct), || {
            let n: f64 = StandardNormal.sample(&mut r);
            n * std
        });
        let sol_trunk = Mlp::new(&[arch.num_vars, h, h], true, &mut r);
        let sol_mu = Linear::new(h, arch.d_z, &mut r);
        let sol_logvar = Linear::new(h, arch.d_z, &mut r);
        let rec_mlp = Mlp::new(&[dj, h, h], true, &mut r);
        let rec_out = Linear::new(h, arch.num_vars, &mut r);
        let pred_mlp = Mlp::new(&[dj, h, h], true, &mut r);
        let pred_out = Linear::new(h, arch.num_objectives, &mut r);
        let cls = Linear::new(dj, arch.num_classes, &mut r);
        let reg = Linear::new(dj, 1, &mut r);
        // Ablated components are kept zero-sized so every stored tensor is live.
        let (bn, dictionary) = if arch.ablation.no_basis {
            (BatchNorm::new(0), Array2::zeros((0, arch.d_struct)))
        } else {
            (BatchNorm::new(arch.dict_size), dictionary)
        };
        let sol_logvar = if arch.ablation.no_vae { Linear::zeros(h, 0) } else { sol_logvar };
        Ok(Self {
            bn,
            arch,
            enc_low,
            enc_high,
            fusion,
            structure,
            dictionary,
            sol_trunk,
            sol_mu,
            sol_logvar,
            rec_mlp,
            rec_out,
            pred_mlp,
            pred_out,
            cls,
            reg,
        })
    }

    /// Same shapes, every tensor zero (used as a gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            enc_low: self.enc_low.zeros_like(),
            enc_high: self.enc_high.zeros_like(),
            fusion: self.fusion.zeros_like(),
            structure: self.structure.zeros_like(),
            bn: self.bn.zeros_like(),
            dictionary: Array2::zeros(self.dictionary.raw_dim()),
            sol_trunk: self.sol_trunk.zeros_like(),
            sol_mu: self.sol_mu.zeros_like(),
            sol_logvar: self.sol_logvar.zeros_like(),
            rec_mlp: self.rec_mlp.zeros_like(),
            rec_out: self.rec_out.zeros_like(),
            pred_mlp: self.pred_mlp.zeros_like(),
            pred_out: self.pred_out.zeros_like(),
            cls: self.cls.zeros_like(),
            reg: self.reg.zeros_like(),
        }
    }

    /// Every stored tensor, trainable ones first, then running statistics.
    pub fn all_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut v = Vec::new();
        self.tensors("", &mut v);
        if self.arch.ablation.no_basis {
            return v;
        }
        v.push(("bn.running_mean".into(), vec![self.bn.running_mean.len()], self.bn.running_mean.as_slice().expect("standard layout")));
        v.push(("bn.running_var".into(), vec![self.bn.running_var.len()], self.bn.running_var.as_slice().expect("standard layout")));
        v
    }

    pub fn all_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        self.collect_mut(&mut v, true);
        v
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>, with_running: bool) {
        let Self {
            arch,
            enc_low,
            enc_high,
            fusion,
            structure,
            bn,
            dictionary,
            sol_trunk,
            sol_mu,
            sol_logvar,
            rec_mlp,
            rec_out,
            pred_mlp,
            pred_out,
            cls,
            reg,
        } = self;
        enc_low.tensors_mut(out);
        enc_high.tensors_mut(out);
        fusion.tensors_mut(out);
        structure.tensors_mut(out);
        let BatchNorm {
            scale,
            shift,
            running_mean,
            running_var,
        } = bn;
        if !arch.ablation.no_basis {
            out.push(scale.as_slice_mut().expect("standard layout"));
            out.push(shift.as_slice_mut().expect("standard layout"));
            out.push(dictionary.as_slice_mut().expect("standard layout"));
        }
        sol_trunk.tensors_mut(out);
        sol_mu.tensors_mut(out);
        if !arch.ablation.no_vae {
            sol_logvar.tensors_mut(out);
        }
        rec_mlp.tensors_mut(out);
        rec_out.tensors_mut(out);
        pred_mlp.tensors_mut(out);
        pred_out.tensors_mut(out);
        cls.tensors_mut(out);
        reg.tensors_mut(out);
        if with_running && !arch.ablation.no_basis {
            out.push(running_mean.as_slice_mut().expect("standard layout"));
            out.push(running_var.as_slice_mut().expect("standard layout"));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.all_tensors().iter().all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }
}

impl Parameters for ModelParams {
    fn tensors<'a>(&'a self, _prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        self.enc_low.tensors("enc_low", out);
        self.enc_high.tensors("enc_high", out);
        self.fusion.tensors("fusion", out);
        self.structure.tensors("structure", out);
        if !self.arch.ablation.no_basis {
            self.bn.tensors("bn", out);
            out.push(("dictionary".into(), self.dictionary.shape().to_vec(), self.dictionary.as_slice().expect("standard layout")));
        }
        self.sol_trunk.tensors("sol_trunk", out);
        self.sol_mu.tensors("sol_mu", out);
        if !self.arch.ablation.no_vae {
            self.sol_logvar.tensors("sol_logvar", out);
        }
        self.rec_mlp.tensors("rec_mlp", out);
        self.rec_out.tensors("rec_out", out);
        self.pred_mlp.tensors("pred_mlp", out);
        self.pred_out.tensors("pred_out", out);
        self.cls.tensors("cls", out);
        self.reg.tensors("reg", out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.collect_mut(out, false);
    }
}

/// Latent quantities for a batch, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z_perc: Array2<f64>,
    pub a: Array2<f64>,
    pub z_struct: Array2<f64>,
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
    pub z_sol: Array2<f64>,
    pub z_joint: Array2<f64>,
}

/// Decoder head outputs, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub x_hat: Array2<f64>,
    pub y_hat: Array2<f64>,
    pub logits: Array2<f64>,
    pub t_hat: Array1<f64>,
}

/// Structure module output. `stats` is set in train mode.
#[derive(Debug, Clone)]
pub struct StructureOutput {
    pub a: Array2<f64>,
    pub z_struct: Array2<f64>,
    pub stats: Option<BatchStats>,
}

/// Split raw flattened windows (`B x L*M`, rows oldest first) into the
/// perception streams, honouring the frequency-decoupling ablation.
pub fn perception_inputs(arch: &Architecture, windows: &ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let ww = arch.window_width();
    if windows.ncols() != ww {
        return Err(Error::Config(format!("window width {} does not match configured {ww}", windows.ncols())));
    }
    if arch.ablation.no_freq_decoupling {
        return Ok((windows.to_owned(), Array2::zeros(windows.raw_dim())));
    }
    let b = windows.nrows();
    let mut low = Array2::zeros((b, ww));
    let mut high = Array2::zeros((b, ww));
    for i in 0..b {
        let w = windows
            .row(i)
            .to_owned()
            .into_shape_with_order((arch.window_len, arch.num_objectives))
            .expect("width checked");
        let d = wavelet::decouple_matrix(&w);
        low.row_mut(i).assign(&Array1::from_iter(d.low.iter().copied()));
        high.row_mut(i).assign(&Array1::from_iter(d.high.iter().copied()));
    }
    Ok((low, high))
}

pub fn encode_perception(low: &Array2<f64>, high: &Array2<f64>, params: &ModelParams) -> Result<Array2<f64>> {
    let ww = params.arch.window_width();
    if low.ncols() != ww || high.ncols() != ww || low.nrows() != high.nrows() {
        return Err(Error::Config(format!(
            "perception inputs {:?}/{:?} do not match window width {ww}",
            low.shape(),
            high.shape()
        )));
    }
    let hl = params.enc_low.forward(&low.view());
    let hh = params.enc_high.forward(&high.view());
    Ok(params.fusion.forward(&nn::hconcat(&hl, &hh).view()))
}

/// Coefficients and structural embedding. Train mode normalizes with batch
/// statistics and returns them; the caller folds them into the running stats.
pub fn encode_structure(z_perc: &Array2<f64>, params: &ModelParams, mode: Mode) -> StructureOutput {
    let s = params.structure.forward(&z_perc.view());
    if params.arch.ablation.no_basis {
        return StructureOutput {
            a: s.clone(),
            z_struct: s,
            stats: None,
        };
    }
    let (normed, stats) = match mode {
        Mode::Infer => (params.bn.forward_infer(&s), None),
        Mode::Train => {
            let (y, _, st) = params.bn.forward_train(&s);
            (y, Some(st))
        }
    };
    let a = nn::relu(&normed);
    let z_struct = a.dot(&params.dictionary);
    StructureOutput { a, z_struct, stats }
}

/// `z_struct = a W` for given coefficients.
pub fn struct_from_coefficients(a: &Array2<f64>, params: &ModelParams) -> Array2<f64> {
    if params.arch.ablation.no_basis {
        a.clone()
    } else {
        a.dot(&params.dictionary)
    }
}

/// `(mu, sigma, z_sol)`. Infer mode returns `z_sol = mu` and never touches `rng`.
pub fn encode_solution(
    x_norm: &Array2<f64>,
    params: &ModelParams,
    rng: &mut Rng,
    mode: Mode,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    if x_norm.ncols() != params.arch.num_vars {
        return Err(Error::Config(format!(
            "decision width {} does not match configured {}",
            x_norm.ncols(),
            params.arch.num_vars
        )));
    }
    let h = params.sol_trunk.forward(&x_norm.view());
    let mu = params.sol_mu.forward(&h.view());
    if params.arch.ablation.no_vae {
        let sigma = Array2::zeros(mu.raw_dim());
        return Ok((mu.clone(), sigma, mu));
    }
    let logvar = params.sol_logvar.forward(&h.view()).mapv(loss::clamp_logvar);
    let sigma = logvar.mapv(|v| (0.5 * v).exp());
    let z = match mode {
        Mode::Infer => mu.clone(),
        Mode::Train => {
            let eps = standard_normal(mu.raw_dim(), rng);
            &mu + &(&sigma * &eps)
        }
    };
    Ok((mu, sigma, z))
}

pub(crate) fn standard_normal(dim: ndarray::Ix2, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(dim, || StandardNormal.sample(rng))
}

pub fn decode(z_joint: &Array2<f64>, params: &ModelParams) -> Result<Decoded> {
    if z_joint.ncols() != params.arch.d_joint() {
        return Err(Error::Config(format!(
            "joint latent width {} does not match configured {}",
            z_joint.ncols(),
            params.arch.d_joint()
        )));
    }
    let v = z_joint.view();
    let x_hat = params
        .rec_out
        .forward(&params.rec_mlp.forward(&v).view())
        .mapv(nn::sigmoid);
    let y_hat = params.pred_out.forward(&params.pred_mlp.forward(&v).view());
    let logits = params.cls.forward(&v);
    let t_hat = params.reg.forward(&v).column(0).mapv(nn::sigmoid);
    Ok(Decoded {
        x_hat,
        y_hat,
        logits,
        t_hat,
    })
}

/// Full inference-mode encoding of solutions and their windows.
pub fn encode(x_norm: &Array2<f64>, windows: &Array2<f64>, params: &ModelParams) -> Result<LatentState> {
    if x_norm.nrows() != windows.nrows() {
        return Err(Error::Precondition("solution and window counts differ".into()));
    }
    let (low, high) = perception_inputs(&params.arch, &windows.view())?;
    let z_perc = encode_perception(&low, &high, params)?;
    let st = encode_structure(&z_perc, params, Mode::Infer);
    let mut unused = rng::stream(0, 0);
    let (mu, sigma, z_sol) = encode_solution(x_norm, params, &mut unused, Mode::Infer)?;
    let z_joint = nn::hconcat(&z_sol, &st.z_struct);
    Ok(LatentState {
        z_perc,
        a: st.a,
        z_struct: st.z_struct,
        mu,
        sigma,
        z_sol,
        z_joint,
    })
}

/// Copy of `a` with the listed coefficient dimensions zeroed.
pub fn mask_basis(a: &[f64], dims: &[usize]) -> Result<Vec<f64>> {
    let mut out = a.to_vec();
    for &d in dims {
        if d >= a.len() {
            return Err(Error::OutOfRange { index: d, len: a.len() });
        }
        out[d] = 0.0;
    }
    Ok(out)
}
