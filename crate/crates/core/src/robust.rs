//! Proximal operators and the alternating robust trainers.
//!
//! [`rha_fit`] feeds the corrupt matrix `X` to the network, trains on the
//! masked target `X − S`, then moves residuals that survive shrinkage into
//! `S`. [`rdae_fit`] is the robust-deep-autoencoder baseline whose network
//! sees `X − S` instead, and [`sae_fit`] / [`inpaint_fit`] are the plain
//! and mask-only special cases.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, RhaError};
use crate::mask::Mask;
use crate::nn::{Autoencoder, TrainConfig, Trainer};
use crate::numerics::{Matrix, Rng};

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(RhaError::param(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    Ok(())
}

/// Elementwise soft threshold `sign(a)·max(|a| − λ, 0)`.
pub fn prox_l1(a: &Matrix, lambda: f64) -> Result<Matrix> {
    check_lambda(lambda)?;
    Ok(a.map(|v| {
        let shrunk = v.abs() - lambda;
        if shrunk > 0.0 {
            v.signum() * shrunk
        } else {
            0.0
        }
    }))
}

/// Column-wise group shrinkage: each column `c` becomes `max(1 − λ/‖c‖₂, 0)·c`.
pub fn prox_l21(a: &Matrix, lambda: f64) -> Result<Matrix> {
    check_lambda(lambda)?;
    let (rows, cols) = a.shape();
    let mut norms = vec![0.0; cols];
    for r in 0..rows {
        for (n, v) in norms.iter_mut().zip(a.row(r)) {
            *n += v * v;
        }
    }
    let factors: Vec<f64> = norms
        .iter()
        .map(|n| {
            let norm = n.sqrt();
            if norm > lambda {
                1.0 - lambda / norm
            } else {
                0.0
            }
        })
        .collect();
    Ok(Matrix::from_fn(rows, cols, |r, c| {
        if factors[c] == 0.0 {
            0.0
        } else {
            factors[c] * a.get(r, c)
        }
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProxKind {
    L1,
    L21,
}

impl ProxKind {
    pub fn apply(self, a: &Matrix, lambda: f64) -> Result<Matrix> {
        match self {
            ProxKind::L1 => prox_l1(a, lambda),
            ProxKind::L21 => prox_l21(a, lambda),
        }
    }
}

impl fmt::Display for ProxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProxKind::L1 => "l1",
            ProxKind::L21 => "l21",
        })
    }
}

impl FromStr for ProxKind {
    type Err = RhaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(ProxKind::L1),
            "l21" => Ok(ProxKind::L21),
            other => Err(RhaError::param(format!("unknown prox kind {other:?}"))),
        }
    }
}

/// Which residual the sparse update shrinks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualMode {
    /// `Ω ⊙ (X − L_D)`: fill values at missing entries never enter `S`.
    Masked,
    /// `X − L_D` over every entry, missing ones included.
    Unmasked,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustConfig {
    pub lambda: f64,
    pub prox: ProxKind,
    pub inner_epochs: usize,
    pub max_outer_iters: usize,
    pub epsilon_conv: f64,
    pub residual: ResidualMode,
    pub train: TrainConfig,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            prox: ProxKind::L1,
            inner_epochs: 5,
            max_outer_iters: 10,
            epsilon_conv: 1e-5,
            residual: ResidualMode::Masked,
            train: TrainConfig::default(),
        }
    }
}

impl RobustConfig {
    /// Total epochs an alternating fit may spend; the non-robust trainers use all of it.
    pub fn epoch_budget(&self) -> usize {
        self.inner_epochs * self.max_outer_iters
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if !(self.epsilon_conv >= 0.0) {
            return Err(RhaError::param("epsilon_conv must be >= 0"));
        }
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    /// Network reconstruction after the last outer iteration.
    pub l_d: Matrix,
    pub s: Matrix,
    pub c1_trace: Vec<f64>,
    pub c2_trace: Vec<f64>,
    /// `‖S‖_F` right after each shrinkage step.
    pub s_norm_trace: Vec<f64>,
    /// Per-epoch training loss across all outer iterations.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
    pub outer_iters_run: usize,
}

impl Decomposition {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().copied()
    }
}

/// State visible to an observer at the end of each outer iteration.
#[derive(Debug)]
pub struct OuterStep<'a> {
    pub iteration: usize,
    /// Matrix the network was trained on (and reconstructed) in this iteration.
    pub network_input: &'a Matrix,
    pub l_d: &'a Matrix,
    pub s: &'a Matrix,
    pub c1: f64,
    pub c2: f64,
}

fn check_data(x: &Matrix) -> Result<f64> {
    if let Some(bad) = x.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(RhaError::param(format!(
            "input entries must lie in [0, 1], found {bad}"
        )));
    }
    let norm = x.frobenius_norm();
    if x.is_empty() || norm == 0.0 {
        return Err(RhaError::DegenerateInput(
            "input matrix has zero Frobenius norm".into(),
        ));
    }
    Ok(norm)
}

fn trainer_and_model(
    x: &Matrix,
    config: &RobustConfig,
    seed: u64,
) -> Result<(Trainer, Autoencoder)> {
    config.validate()?;
    let model = Autoencoder::new(x.cols(), &config.train.hidden, &mut Rng::new(seed))?;
    Ok((Trainer::new(config.train.clone())?, model))
}

fn ensure_finite(iteration: usize, model: &Autoencoder, mats: &[(&str, &Matrix)]) -> Result<()> {
    if !model.is_finite() {
        return Err(RhaError::Numerical {
            iteration,
            message: "non-finite network parameters".into(),
        });
    }
    for (name, m) in mats {
        if !m.is_finite() {
            return Err(RhaError::Numerical {
                iteration,
                message: format!("non-finite entries in {name}"),
            });
        }
    }
    Ok(())
}

/// Residuals, convergence measures and `L_S` bookkeeping shared by the
/// alternating trainers.
struct Alternation {
    x_norm: f64,
    l_s: Matrix,
    decomposition: Decomposition,
}

impl Alternation {
    fn new(x: &Matrix, x_norm: f64) -> Self {
        let (rows, cols) = x.shape();
        Self {
            x_norm,
            l_s: x.clone(),
            decomposition: Decomposition {
                l_d: Matrix::zeros(rows, cols),
                s: Matrix::zeros(rows, cols),
                c1_trace: Vec::new(),
                c2_trace: Vec::new(),
                s_norm_trace: Vec::new(),
                loss_trace: Vec::new(),
                converged: false,
                outer_iters_run: 0,
            },
        }
    }

    /// Records `c1 = ‖X − L_D − S‖/‖X‖` and `c2 = ‖L_S − L_D − S‖/‖X‖`;
    /// returns whether either fell below `epsilon`.
    fn record(
        &mut self,
        iteration: usize,
        x: &Matrix,
        l_d: Matrix,
        s: Matrix,
        epsilon: f64,
    ) -> Result<(f64, f64, bool)> {
        let low_rank_plus_sparse = l_d.add(&s)?;
        let c1 = x.sub(&low_rank_plus_sparse)?.frobenius_norm() / self.x_norm;
        let c2 = self.l_s.sub(&low_rank_plus_sparse)?.frobenius_norm() / self.x_norm;
        if !c1.is_finite() || !c2.is_finite() {
            return Err(RhaError::Numerical {
                iteration,
                message: format!("convergence measures c1={c1}, c2={c2}"),
            });
        }
        let d = &mut self.decomposition;
        d.c1_trace.push(c1);
        d.c2_trace.push(c2);
        d.s_norm_trace.push(s.frobenius_norm());
        d.outer_iters_run = iteration + 1;
        d.l_d = l_d;
        d.s = s;
        let done = c1 < epsilon || c2 < epsilon;
        if done {
            d.converged = true;
        } else {
            self.l_s = low_rank_plus_sparse;
        }
        Ok((c1, c2, done))
    }
}

/// Robust Hadamard autoencoder fit. `seed` drives weight init; minibatch
/// order comes from `config.train.shuffle_seed`.
pub fn rha_fit(
    x: &Matrix,
    mask: &Mask,
    config: &RobustConfig,
    seed: u64,
) -> Result<(Autoencoder, Decomposition)> {
    rha_fit_observed(x, mask, config, seed, |_| {})
}

pub fn rha_fit_observed(
    x: &Matrix,
    mask: &Mask,
    config: &RobustConfig,
    seed: u64,
    mut observer: impl FnMut(&OuterStep<'_>),
) -> Result<(Autoencoder, Decomposition)> {
    if mask.shape() != x.shape() {
        return Err(RhaError::shape("mask", x.shape(), mask.shape()));
    }
    let x_norm = check_data(x)?;
    let (mut trainer, mut model) = trainer_and_model(x, config, seed)?;
    let input = mask.fill_unobserved(x)?;
    let mut state = Alternation::new(x, x_norm);
    let mut s = Matrix::zeros(x.rows(), x.cols());

    for iteration in 0..config.max_outer_iters {
        let losses = trainer.train_epochs(&mut model, x, &s, mask, config.inner_epochs)?;
        state.decomposition.loss_trace.extend(losses);
        let l_d = model.forward(&input)?;
        ensure_finite(iteration, &model, &[("L_D", &l_d)])?;

        let residual = x.sub(&l_d)?;
        let residual = match config.residual {
            ResidualMode::Masked => mask.apply(&residual)?,
            ResidualMode::Unmasked => residual,
        };
        s = config.prox.apply(&residual, config.lambda)?;
        ensure_finite(iteration, &model, &[("S", &s)])?;

        let (c1, c2, done) = state.record(iteration, x, l_d, s.clone(), config.epsilon_conv)?;
        observer(&OuterStep {
            iteration,
            network_input: &input,
            l_d: &state.decomposition.l_d,
            s: &state.decomposition.s,
            c1,
            c2,
        });
        if done {
            break;
        }
    }
    Ok((model, state.decomposition))
}

/// Masked training with no sparse part, over the whole epoch budget.
pub fn inpaint_fit(
    x: &Matrix,
    mask: &Mask,
    config: &RobustConfig,
    seed: u64,
) -> Result<Autoencoder> {
    if mask.shape() != x.shape() {
        return Err(RhaError::shape("mask", x.shape(), mask.shape()));
    }
    check_data(x)?;
    let (mut trainer, mut model) = trainer_and_model(x, config, seed)?;
    let zeros = Matrix::zeros(x.rows(), x.cols());
    trainer.train_epochs(&mut model, x, &zeros, mask, config.epoch_budget())?;
    ensure_finite(0, &model, &[])?;
    Ok(model)
}

/// Plain autoencoder: every entry observed, no sparse part.
pub fn sae_fit(x: &Matrix, config: &RobustConfig, seed: u64) -> Result<Autoencoder> {
    inpaint_fit(x, &Mask::all_observed(x.rows(), x.cols()), config, seed)
}

/// Robust deep autoencoder baseline: the network is trained on, and
/// reconstructs, `L = X − S`, recomputed once per outer iteration.
pub fn rdae_fit(
    x: &Matrix,
    config: &RobustConfig,
    seed: u64,
) -> Result<(Autoencoder, Decomposition)> {
    rdae_fit_observed(x, config, seed, |_| {})
}

pub fn rdae_fit_observed(
    x: &Matrix,
    config: &RobustConfig,
    seed: u64,
    mut observer: impl FnMut(&OuterStep<'_>),
) -> Result<(Autoencoder, Decomposition)> {
    let x_norm = check_data(x)?;
    let (mut trainer, mut model) = trainer_and_model(x, config, seed)?;
    let (rows, cols) = x.shape();
    let zeros = Matrix::zeros(rows, cols);
    let full = Mask::all_observed(rows, cols);
    let mut state = Alternation::new(x, x_norm);
    let mut s = Matrix::zeros(rows, cols);

    for iteration in 0..config.max_outer_iters {
        let low_rank = x.sub(&s)?;
        let losses =
            trainer.train_epochs(&mut model, &low_rank, &zeros, &full, config.inner_epochs)?;
        state.decomposition.loss_trace.extend(losses);
        let l_d = model.forward(&low_rank)?;
        ensure_finite(iteration, &model, &[("L_D", &l_d)])?;

        s = config.prox.apply(&x.sub(&l_d)?, config.lambda)?;
        ensure_finite(iteration, &model, &[("S", &s)])?;

        let (c1, c2, done) = state.record(iteration, x, l_d, s.clone(), config.epsilon_conv)?;
        observer(&OuterStep {
            iteration,
            network_input: &low_rank,
            l_d: &state.decomposition.l_d,
            s: &state.decomposition.s,
            c1,
            c2,
        });
        if done {
            break;
        }
    }
    Ok((model, state.decomposition))
}

/// Denoised / inpainted estimate for data the model was not trained on.
/// Missing entries of `x_new` must already hold their fill value.
pub fn infer(model: &Autoencoder, x_new: &Matrix) -> Result<Matrix> {
    model.forward(x_new)
}
