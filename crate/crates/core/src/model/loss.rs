//! Training objective and its exact gradient.

use ndarray::{concatenate, s, Array1, Array2, Axis, Zip};

use super::nn::{self, BatchStats};
use super::{ModelParams, Parameters};
use crate::error::{Error, Result};

const LOGVAR_LIMIT: f64 = 10.0;

pub(crate) fn clamp_logvar(v: f64) -> f64 {
    v.clamp(-LOGVAR_LIMIT, LOGVAR_LIMIT)
}

/// One minibatch. `low`/`high` are the decoupled, flattened windows.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x_norm: Array2<f64>,
    pub y: Array2<f64>,
    pub low: Array2<f64>,
    pub high: Array2<f64>,
    pub labels: Vec<usize>,
    pub t_norm: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x_norm.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Positive and negative windows paired row-wise with the batch anchors.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub pos_low: Array2<f64>,
    pub pos_high: Array2<f64>,
    pub neg_low: Array2<f64>,
    pub neg_high: Array2<f64>,
}

/// Term weights. `rec` and `pred` are 1 in training; they are exposed so
/// each term can be isolated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub pred: f64,
    pub contrast: f64,
    pub aux: f64,
    pub kl: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            pred: 1.0,
            contrast: 0.5,
            aux: 0.1,
            kl: 0.01,
            margin: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub rec: f64,
    pub pred: f64,
    pub contrast: f64,
    pub aux: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub(crate) fn add_scaled(&mut self, o: &LossBreakdown, w: f64) {
        self.rec += w * o.rec;
        self.pred += w * o.pred;
        self.contrast += w * o.contrast;
        self.aux += w * o.aux;
        self.kl += w * o.kl;
        self.total += w * o.total;
    }
}

/// Triplet hinge `max(0, |a - p|^2 - |a - n|^2 + m)`.
pub fn triplet_term(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    let dap: f64 = a.iter().zip(p).map(|(x, y)| (x - y) * (x - y)).sum();
    let dan: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum();
    (dap - dan + margin).max(0.0)
}

/// Closed-form `KL(N(mu, diag(exp(logvar))) || N(0, I))` summed over dimensions.
pub fn kl_term(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum()
}

fn validate(params: &ModelParams, batch: &Batch, triplets: Option<&TripletBatch>, noise: &Array2<f64>) -> Result<()> {
    let arch = &params.arch;
    let b = batch.len();
    if b == 0 {
        return Err(Error::Empty("batch"));
    }
    let ww = arch.window_width();
    let ok = batch.x_norm.ncols() == arch.num_vars
        && batch.y.dim() == (b, arch.num_objectives)
        && batch.low.dim() == (b, ww)
        && batch.high.dim() == (b, ww)
        && batch.labels.len() == b
        && batch.t_norm.len() == b
        && noise.dim() == (b, arch.d_z);
    if !ok {
        return Err(Error::Config("batch shapes do not match the architecture".into()));
    }
    if let Some(&l) = batch.labels.iter().find(|&&l| l >= arch.num_classes) {
        return Err(Error::OutOfRange {
            index: l,
            len: arch.num_classes,
        });
    }
    if let Some(t) = triplets {
        if [&t.pos_low, &t.pos_high, &t.neg_low, &t.neg_high].iter().any(|m| m.dim() != (b, ww)) {
            return Err(Error::Config("triplet shapes do not match the batch".into()));
        }
    }
    Ok(())
}

/// Forward-only loss evaluation, identical to the value reported by
/// [`forward_backward`].
pub fn loss_value(
    params: &ModelParams,
    batch: &Batch,
    triplets: Option<&TripletBatch>,
    noise: &Array2<f64>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    run(params, batch, triplets, noise, weights, false).map(|(l, _, _)| l)
}

/// Loss, gradient for every trainable tensor, and the batch-norm statistics of
/// the structure pass (absent when the basis is ablated).
///
/// `noise` is the reparameterization draw, `B x d_z`. Triplets are used only
/// when given and the contrast weight is positive; they then share the
/// perception and structure pass (and its batch statistics) with the anchors.
pub fn forward_backward(
    params: &ModelParams,
    batch: &Batch,
    triplets: Option<&TripletBatch>,
    noise: &Array2<f64>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, ModelParams, Option<BatchStats>)> {
    let (l, g, st) = run(params, batch, triplets, noise, weights, true)?;
    Ok((l, g.expect("requested"), st))
}

fn vstack(parts: &[&Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).expect("equal widths")
}

fn run(
    params: &ModelParams,
    batch: &Batch,
    triplets: Option<&TripletBatch>,
    noise: &Array2<f64>,
    w: &LossWeights,
    backward: bool,
) -> Result<(LossBreakdown, Option<ModelParams>, Option<BatchStats>)> {
    validate(params, batch, triplets, noise)?;
    let arch = &params.arch;
    let b = batch.len();
    let bf = b as f64;
    let triplets = triplets.filter(|_| w.contrast > 0.0);

    // Perception and structure over anchors (and positives/negatives).
    let (low_all, high_all) = match triplets {
        Some(t) => (
            vstack(&[&batch.low, &t.pos_low, &t.neg_low]),
            vstack(&[&batch.high, &t.pos_high, &t.neg_high]),
        ),
        None => (batch.low.clone(), batch.high.clone()),
    };
    let rows_all = low_all.nrows();
    let (hl, cache_l) = params.enc_low.forward_cached(&low_all.view());
    let (hh, cache_h) = params.enc_high.forward_cached(&high_all.view());
    let cat = nn::hconcat(&hl, &hh);
    let (zp, cache_f) = params.fusion.forward_cached(&cat.view());
    let (s_out, cache_s) = params.structure.forward_cached(&zp.view());
    let basis = !arch.ablation.no_basis;
    let (a_all, bn_parts) = if basis {
        let (bn_out, bn_cache, stats) = params.bn.forward_train(&s_out);
        (nn::relu(&bn_out), Some((bn_out, bn_cache, stats)))
    } else {
        (s_out.clone(), None)
    };
    let zs_all = if basis { a_all.dot(&params.dictionary) } else { a_all.clone() };
    let z_struct = zs_all.slice(s![..b, ..]).to_owned();

    // Solution encoder.
    let (h_sol, cache_t) = params.sol_trunk.forward_cached(&batch.x_norm.view());
    let mu = params.sol_mu.forward(&h_sol.view());
    let vae = !arch.ablation.no_vae;
    let (lv_raw, lv, sigma, z_sol) = if vae {
        let lv_raw = params.sol_logvar.forward(&h_sol.view());
        let lv = lv_raw.mapv(clamp_logvar);
        let sigma = lv.mapv(|v| (0.5 * v).exp());
        let z = &mu + &(&sigma * noise);
        (lv_raw, lv, sigma, z)
    } else {
        let e = Array2::zeros(mu.raw_dim());
        (e.clone(), e.clone(), e, mu.clone())
    };
    let zj = nn::hconcat(&z_sol, &z_struct);

    // Heads.
    let (r, cache_r) = params.rec_mlp.forward_cached(&zj.view());
    let x_hat = params.rec_out.forward(&r.view()).mapv(nn::sigmoid);
    let (p, cache_p) = params.pred_mlp.forward_cached(&zj.view());
    let y_hat = params.pred_out.forward(&p.view());
    let logits = params.cls.forward(&zj.view());
    let t_hat = params.reg.forward(&zj.view()).mapv(nn::sigmoid);

    let rec_diff = &x_hat - &batch.x_norm;
    let pred_diff = &y_hat - &batch.y;
    let rec = rec_diff.mapv(|v| v * v).sum() / bf;
    let pred = pred_diff.mapv(|v| v * v).sum() / bf;

    let mut probs = logits.clone();
    let mut ce = 0.0;
    for (i, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
        let mx = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - mx).exp());
        let z: f64 = row.sum();
        ce -= (row[batch.labels[i]] / z).ln();
        row.mapv_inplace(|v| v / z);
    }
    ce /= bf;
    let t_diff: Array1<f64> = &t_hat.column(0) - &batch.t_norm;
    let aux = ce + t_diff.mapv(|v| v * v).sum() / bf;

    let kl = if vae {
        (0..b)
            .map(|i| kl_term(mu.row(i).as_slice().expect("row"), lv.row(i).as_slice().expect("row")))
            .sum::<f64>()
            / bf
    } else {
        0.0
    };

    let mut hinge = vec![0.0; b];
    if triplets.is_some() {
        for (i, h) in hinge.iter_mut().enumerate() {
            let a = a_all.row(i).to_vec();
            let pp = a_all.row(b + i).to_vec();
            let nn_ = a_all.row(2 * b + i).to_vec();
            *h = triplet_term(&a, &pp, &nn_, w.margin);
        }
    }
    let contrast = hinge.iter().sum::<f64>() / bf;

    let total = w.rec * rec + w.pred * pred + w.contrast * contrast + w.aux * aux + w.kl * kl;
    let losses = LossBreakdown {
        rec,
        pred,
        contrast,
        aux,
        kl,
        total,
    };
    let stats = bn_parts.as_ref().map(|(_, _, st)| st.clone());
    if !backward {
        return Ok((losses, None, stats));
    }

    let mut g = params.zeros_like();

    // Heads -> z_joint.
    let mut d_pre = rec_diff * (2.0 * w.rec / bf);
    Zip::from(&mut d_pre).and(&x_hat).for_each(|d, &xh| *d *= xh * (1.0 - xh));
    let dr = params.rec_out.backward(&r.view(), &d_pre, &mut g.rec_out);
    let mut dzj = params.rec_mlp.backward(&cache_r, dr, &mut g.rec_mlp, true).expect("input grad");

    let dy = pred_diff * (2.0 * w.pred / bf);
    let dp = params.pred_out.backward(&p.view(), &dy, &mut g.pred_out);
    dzj += &params.pred_mlp.backward(&cache_p, dp, &mut g.pred_mlp, true).expect("input grad");

    let mut dlogits = probs;
    for (i, &l) in batch.labels.iter().enumerate() {
        dlogits[[i, l]] -= 1.0;
    }
    dlogits *= w.aux / bf;
    dzj += &params.cls.backward(&zj.view(), &dlogits, &mut g.cls);
    let mut dt = Array2::zeros((b, 1));
    for i in 0..b {
        let th = t_hat[[i, 0]];
        dt[[i, 0]] = w.aux * 2.0 * t_diff[i] / bf * th * (1.0 - th);
    }
    dzj += &params.reg.backward(&zj.view(), &dt, &mut g.reg);

    let (dz_sol, dz_struct) = nn::split_cols(&dzj, arch.d_z);

    // Solution encoder.
    let mut dmu = dz_sol.clone();
    let dh = if vae {
        dmu += &(&mu * (w.kl / bf));
        let mut dlv = Array2::zeros(lv.raw_dim());
        Zip::from(&mut dlv)
            .and(&dz_sol)
            .and(noise)
            .and(&sigma)
            .and(&lv)
            .and(&lv_raw)
            .for_each(|d, &dz, &e, &sg, &l, &raw| {
                if raw.abs() < LOGVAR_LIMIT {
                    *d = 0.5 * dz * e * sg + w.kl / bf * 0.5 * (l.exp() - 1.0);
                }
            });
        let mut dh = params.sol_mu.backward(&h_sol.view(), &dmu, &mut g.sol_mu);
        dh += &params.sol_logvar.backward(&h_sol.view(), &dlv, &mut g.sol_logvar);
        dh
    } else {
        params.sol_mu.backward(&h_sol.view(), &dmu, &mut g.sol_mu)
    };
    params.sol_trunk.backward(&cache_t, dh, &mut g.sol_trunk, false);

    // Structure and perception.
    let coeff = arch.coeff_dim();
    let mut da = Array2::<f64>::zeros((rows_all, coeff));
    if triplets.is_some() {
        let c = w.contrast / bf;
        for i in 0..b {
            if hinge[i] <= 0.0 {
                continue;
            }
            for k in 0..coeff {
                let (ai, pi, ni) = (a_all[[i, k]], a_all[[b + i, k]], a_all[[2 * b + i, k]]);
                da[[i, k]] += c * 2.0 * (ni - pi);
                da[[b + i, k]] -= c * 2.0 * (ai - pi);
                da[[2 * b + i, k]] += c * 2.0 * (ai - ni);
            }
        }
    }
    let mut dzs_all = Array2::<f64>::zeros((rows_all, arch.d_struct));
    dzs_all.slice_mut(s![..b, ..]).assign(&dz_struct);
    let ds = if let Some((bn_out, bn_cache, _)) = &bn_parts {
        da += &dzs_all.dot(&params.dictionary.t());
        g.dictionary += &a_all.t().dot(&dzs_all);
        let dbn = nn::relu_backward(bn_out, &da);
        params.bn.backward(bn_cache, &dbn, &mut g.bn)
    } else {
        dzs_all + da
    };
    let dzp = params.structure.backward(&cache_s, ds, &mut g.structure, true).expect("input grad");
    let dcat = params.fusion.backward(&cache_f, dzp, &mut g.fusion, true).expect("input grad");
    let (dhl, dhh) = nn::split_cols(&dcat, arch.hidden);
    params.enc_low.backward(&cache_l, dhl, &mut g.enc_low, false);
    params.enc_high.backward(&cache_h, dhh, &mut g.enc_high, false);

    debug_assert_eq!(g.num_parameters(), params.num_parameters());
    Ok((losses, Some(g), stats))
}
