//! Deterministic minibatch training.

use ndarray::{Array1, Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::loss::{forward_backward, loss_value, Batch, LossBreakdown, LossWeights, TripletBatch};
use super::{perception_inputs, standard_normal, Ablation, Architecture, ModelParams, Parameters};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_contrast: f64,
    pub lambda_aux: f64,
    pub lambda_kl: f64,
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub dict_size: usize,
    pub d_struct: usize,
    pub d_z: usize,
    pub bn_momentum: f64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_contrast: 0.5,
            lambda_aux: 0.1,
            lambda_kl: 0.01,
            margin: 1.0,
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 10,
            seed: 0,
            hidden: 128,
            dict_size: 256,
            d_struct: 64,
            d_z: 64,
            bn_momentum: 0.1,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("lambda_contrast", self.lambda_contrast), ("lambda_aux", self.lambda_aux), ("lambda_kl", self.lambda_kl)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{n} must be a finite nonnegative number")));
            }
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config("margin must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.dict_size == 0 {
            return Err(Error::Config("batch size and dictionary size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("batch-norm momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Effective term weights after ablation switches.
    pub fn weights(&self) -> LossWeights {
        let a = &self.ablation;
        LossWeights {
            rec: 1.0,
            pred: 1.0,
            contrast: if a.no_triplet { 0.0 } else { self.lambda_contrast },
            aux: if a.no_classify { 0.0 } else { self.lambda_aux },
            kl: if a.no_vae { 0.0 } else { self.lambda_kl },
            margin: self.margin,
        }
    }

    pub fn architecture(&self, set: &TrainingSet) -> Architecture {
        Architecture {
            window_len: set.window_len,
            num_objectives: set.y.ncols(),
            num_vars: set.x_norm.ncols(),
            num_classes: set.num_classes,
            hidden: self.hidden,
            dict_size: self.dict_size,
            d_struct: self.d_struct,
            d_z: self.d_z,
            ablation: self.ablation,
        }
    }
}

/// Training records in matrix form plus triplet environment sets.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub window_len: usize,
    pub num_classes: usize,
    pub x_norm: Array2<f64>,
    pub y: Array2<f64>,
    /// Raw flattened windows, `N x L*M`, oldest step first.
    pub windows: Array2<f64>,
    pub labels: Vec<usize>,
    pub t_norm: Vec<f64>,
    /// Global environment index of each record.
    pub env_ids: Vec<usize>,
    /// Per global environment: (positive, negative) environment sets.
    pub triplet_sets: Vec<(Vec<usize>, Vec<usize>)>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.x_norm.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::Empty("training set"));
        }
        if self.y.nrows() != n
            || self.windows.nrows() != n
            || self.labels.len() != n
            || self.t_norm.len() != n
            || self.env_ids.len() != n
        {
            return Err(Error::Precondition("training set columns differ in length".into()));
        }
        if self.window_len == 0 || self.windows.ncols() != self.window_len * self.y.ncols() {
            return Err(Error::Precondition("window width is not L * M".into()));
        }
        if let Some(&e) = self.env_ids.iter().find(|&&e| e >= self.triplet_sets.len()) {
            return Err(Error::Precondition(format!("environment {e} has no triplet sets")));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::OutOfRange { index: l, len: self.num_classes });
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &impl Parameters) -> Self {
        let mut t = Vec::new();
        params.tensors("", &mut t);
        let zeros: Vec<Vec<f64>> = t.iter().map(|(_, _, d)| vec![0.0; d.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let mut g = Vec::new();
        grads.tensors("", &mut g);
        let mut p = Vec::new();
        params.tensors_mut(&mut p);
        for (k, (pt, (_, _, gt))) in p.into_iter().zip(g).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..pt.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gt[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gt[i] * gt[i];
                pt[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochTelemetry {
    pub epoch: usize,
    pub batches: usize,
    /// Batch-size-weighted mean of the batch losses.
    pub loss: LossBreakdown,
}

pub struct Trainer<'a> {
    set: &'a TrainingSet,
    cfg: TrainConfig,
    params: ModelParams,
    last_good: ModelParams,
    adam: Adam,
    low: Array2<f64>,
    high: Array2<f64>,
    by_env: Vec<Vec<usize>>,
    shuffle_rng: Rng,
    triplet_rng: Rng,
    noise_rng: Rng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(set: &'a TrainingSet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        set.validate()?;
        let params = ModelParams::init(cfg.architecture(set), cfg.seed)?;
        Self::with_params(set, cfg, params)
    }

    /// Continue from existing parameters.
    pub fn with_params(set: &'a TrainingSet, cfg: TrainConfig, params: ModelParams) -> Result<Self> {
        cfg.validate()?;
        set.validate()?;
        if params.arch != cfg.architecture(set) {
            return Err(Error::Config("parameters do not match the configured architecture".into()));
        }
        let (low, high) = perception_inputs(&params.arch, &set.windows.view())?;
        let mut by_env = vec![Vec::new(); set.triplet_sets.len()];
        for (i, &e) in set.env_ids.iter().enumerate() {
            by_env[e].push(i);
        }
        Ok(Self {
            adam: Adam::new(cfg.learning_rate, &params),
            last_good: params.clone(),
            params,
            low,
            high,
            by_env,
            shuffle_rng: rng::stream(cfg.seed, rng::streams::SHUFFLE),
            triplet_rng: rng::stream(cfg.seed, rng::streams::TRIPLET),
            noise_rng: rng::stream(cfg.seed, rng::streams::NOISE),
            set,
            cfg,
            epoch: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn gather(&self, idx: &[usize]) -> Batch {
        let s = self.set;
        Batch {
            x_norm: s.x_norm.select(Axis(0), idx),
            y: s.y.select(Axis(0), idx),
            low: self.low.select(Axis(0), idx),
            high: self.high.select(Axis(0), idx),
            labels: idx.iter().map(|&i| s.labels[i]).collect(),
            t_norm: Array1::from_iter(idx.iter().map(|&i| s.t_norm[i])),
        }
    }

    fn pick_record(&self, env: usize, rng: &mut Rng) -> Option<usize> {
        self.by_env.get(env)?.choose(rng).copied()
    }

    /// Positive and negative records for each anchor.
    fn sample_triplets(&self, idx: &[usize], rng: &mut Rng) -> TripletBatch {
        let mut pos = Vec::with_capacity(idx.len());
        let mut neg = Vec::with_capacity(idx.len());
        for &i in idx {
            let e = self.set.env_ids[i];
            let (p_set, n_set) = &self.set.triplet_sets[e];
            let p_env = p_set.choose(rng).copied().unwrap_or(e);
            let p = self.pick_record(p_env, rng).unwrap_or(i);
            let n = n_set
                .choose(rng)
                .and_then(|&ne| self.pick_record(ne, rng))
                .unwrap_or(i);
            pos.push(p);
            neg.push(n);
        }
        TripletBatch {
            pos_low: self.low.select(Axis(0), &pos),
            pos_high: self.high.select(Axis(0), &pos),
            neg_low: self.low.select(Axis(0), &neg),
            neg_high: self.high.select(Axis(0), &neg),
        }
    }

    /// One pass over the data. On a non-finite loss the parameters roll back
    /// to the state at the start of the epoch.
    pub fn run_epoch(&mut self) -> Result<EpochTelemetry> {
        let weights = self.cfg.weights();
        let mut order: Vec<usize> = (0..self.set.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0;
        let mut triplet_rng = self.triplet_rng.clone();
        let mut noise_rng = self.noise_rng.clone();
        for idx in order.chunks(self.cfg.batch_size) {
            let batch = self.gather(idx);
            let trip = (weights.contrast > 0.0).then(|| self.sample_triplets(idx, &mut triplet_rng));
            let noise = standard_normal(ndarray::Ix2(idx.len(), self.params.arch.d_z), &mut noise_rng);
            let (loss, grads, stats) = forward_backward(&self.params, &batch, trip.as_ref(), &noise, &weights)?;
            if !loss.total.is_finite() {
                return Err(self.diverged());
            }
            self.adam.step(&mut self.params, &grads);
            if let Some(st) = stats {
                self.params.bn.update_running(&st, self.cfg.bn_momentum);
            }
            sum.add_scaled(&loss, idx.len() as f64);
            batches += 1;
        }
        if !self.params.is_finite() {
            return Err(self.diverged());
        }
        self.triplet_rng = triplet_rng;
        self.noise_rng = noise_rng;
        let mut mean = LossBreakdown::default();
        mean.add_scaled(&sum, 1.0 / self.set.len() as f64);
        let t = EpochTelemetry {
            epoch: self.epoch,
            batches,
            loss: mean,
        };
        log::info!(
            "epoch {} loss {:.6} (rec {:.5} pred {:.5} contrast {:.5} aux {:.5} kl {:.5})",
            t.epoch,
            mean.total,
            mean.rec,
            mean.pred,
            mean.contrast,
            mean.aux,
            mean.kl
        );
        self.epoch += 1;
        self.last_good = self.params.clone();
        Ok(t)
    }

    fn diverged(&mut self) -> Error {
        self.params = self.last_good.clone();
        Error::Divergence { epoch: self.epoch }
    }
}

/// Train for `cfg.epochs` epochs; returns the parameters and per-epoch telemetry.
pub fn train(set: &TrainingSet, cfg: &TrainConfig) -> Result<(ModelParams, Vec<EpochTelemetry>)> {
    let mut trainer = Trainer::new(set, cfg.clone())?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        log.push(trainer.run_epoch()?);
    }
    Ok((trainer.into_params(), log))
}

/// Mean loss over the whole set in fixed order with a fixed noise/triplet
/// stream; batch statistics are used, running statistics are untouched.
pub fn evaluate_loss(params: &ModelParams, set: &TrainingSet, cfg: &TrainConfig, seed: u64) -> Result<LossBreakdown> {
    let trainer = Trainer::with_params(set, cfg.clone(), params.clone())?;
    let weights = cfg.weights();
    let mut triplet_rng = rng::stream(seed, rng::streams::TRIPLET);
    let mut noise_rng = rng::stream(seed, rng::streams::NOISE);
    let order: Vec<usize> = (0..set.len()).collect();
    let mut sum = LossBreakdown::default();
    for idx in order.chunks(cfg.batch_size) {
        let batch = trainer.gather(idx);
        let trip = (weights.contrast > 0.0).then(|| trainer.sample_triplets(idx, &mut triplet_rng));
        let noise = standard_normal(ndarray::Ix2(idx.len(), params.arch.d_z), &mut noise_rng);
        let l = loss_value(params, &batch, trip.as_ref(), &noise, &weights)?;
        sum.add_scaled(&l, idx.len() as f64);
    }
    let mut mean = LossBreakdown::default();
    mean.add_scaled(&sum, 1.0 / set.len() as f64);
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn toy_set(problems: usize, envs: usize, per_env: usize) -> TrainingSet {
        let mut r = rng::stream(5, 77);
        let n = problems * envs * per_env;
        let mut x = Array2::zeros((n, 3));
        let mut y = Array2::zeros((n, 2));
        let mut w = Array2::zeros((n, 6));
        let mut labels = Vec::new();
        let mut t_norm = Vec::new();
        let mut env_ids = Vec::new();
        let mut row = 0;
        for p in 0..problems {
            for e in 0..envs {
                let shift = (e as f64 / envs as f64) * (1.0 + p as f64);
                for _ in 0..per_env {
                    let u: f64 = r.random();
                    x[[row, 0]] = u;
                    x[[row, 1]] = (0.3 + 0.4 * shift).min(1.0);
                    x[[row, 2]] = 0.5;
                    y[[row, 0]] = u;
                    y[[row, 1]] = 1.0 - u.sqrt() + shift;
                    for k in 0..6 {
                        w[[row, k]] = shift + 0.1 * k as f64 + 0.05 * r.random::<f64>();
                    }
                    labels.push(p);
                    t_norm.push(e as f64 / (envs - 1).max(1) as f64);
                    env_ids.push(p * envs + e);
                    row += 1;
                }
            }
        }
        let total_envs = problems * envs;
        let triplet_sets = (0..total_envs)
            .map(|g| {
                let pos = vec![if g % envs > 0 { g - 1 } else { g + 1 }];
                let neg = vec![(g + total_envs / 2) % total_envs];
                (pos, neg)
            })
            .collect();
        TrainingSet {
            window_len: 3,
            num_classes: problems,
            x_norm: x,
            y,
            windows: w,
            labels,
            t_norm,
            env_ids,
            triplet_sets,
        }
    }

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: 16,
            dict_size: 12,
            d_struct: 6,
            d_z: 6,
            batch_size: 32,
            epochs: 3,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_trainable_tensors_unchanged() {
        let set = toy_set(1, 1, 1);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..small_cfg(3)
        };
        let init = ModelParams::init(cfg.architecture(&set), cfg.seed).unwrap();
        let (p, _) = train(&set, &cfg).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        init.tensors("", &mut a);
        p.tensors("", &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let set = toy_set(2, 4, 10);
        let (a, la) = train(&set, &small_cfg(9)).unwrap();
        let (b, lb) = train(&set, &small_cfg(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let (c, _) = train(&set, &small_cfg(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn loss_decreases_on_toy_data() {
        let set = toy_set(2, 10, 50);
        let cfg = TrainConfig {
            epochs: 20,
            learning_rate: 3e-3,
            ..small_cfg(1)
        };
        let init = ModelParams::init(cfg.architecture(&set), cfg.seed).unwrap();
        let before = evaluate_loss(&init, &set, &cfg, 1).unwrap().total;
        let (p, log) = train(&set, &cfg).unwrap();
        let after = evaluate_loss(&p, &set, &cfg, 1).unwrap().total;
        assert!(after < before, "{before} -> {after}");
        assert_eq!(log.len(), 20);
        assert!(p.bn.running_var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn divergence_reports_epoch_and_rolls_back() {
        let mut set = toy_set(1, 2, 5);
        let cfg = small_cfg(2);
        let mut trainer = Trainer::new(&set, cfg.clone()).unwrap();
        trainer.run_epoch().unwrap();
        let good = trainer.params().clone();
        drop(trainer);
        set.y[[0, 0]] = f64::INFINITY;
        let mut trainer = Trainer::with_params(&set, cfg, good.clone()).unwrap();
        match trainer.run_epoch() {
            Err(Error::Divergence { epoch }) => assert_eq!(epoch, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert_eq!(trainer.params(), &good);
    }

    #[test]
    fn rejects_missing_triplet_sets() {
        let mut set = toy_set(1, 2, 2);
        set.triplet_sets.pop();
        assert!(train(&set, &small_cfg(1)).is_err());
    }
}
