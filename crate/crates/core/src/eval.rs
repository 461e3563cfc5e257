//! Metrics and the λ × corruption sweep harness.
//!
//! Sweep reports are CSV with one row per cell, in grid order (model, noise,
//! block, seed, λ). Models without a λ (`sae`, `inpaint`) get a single row per
//! (noise, block, seed) with an empty `lambda` field.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::corruption::{corrupt, Corrupted, CorruptionSpec};
use crate::data::Dataset;
use crate::error::{Result, RhaError};
use crate::mask::Mask;
use crate::nn::Autoencoder;
use crate::numerics::{Matrix, Rng};
use crate::robust::{infer, inpaint_fit, rdae_fit, rha_fit, sae_fit, RobustConfig};

pub const CSV_HEADER: &str = "model,lambda,noise,block_h,block_w,seed,train_rmse,test_rmse,\
runtime_s,converged,best_lambda,test_rmse_masked,error";

/// Root mean squared difference over every entry.
pub fn rmse(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(RhaError::shape("rmse", a.shape(), b.shape()));
    }
    if a.is_empty() {
        return Err(RhaError::DegenerateInput("rmse of an empty matrix".into()));
    }
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// RMSE restricted to unobserved entries; `None` when the mask hides nothing.
pub fn masked_rmse(a: &Matrix, b: &Matrix, mask: &Mask) -> Result<Option<f64>> {
    if a.shape() != b.shape() {
        return Err(RhaError::shape("masked_rmse", a.shape(), b.shape()));
    }
    if mask.shape() != a.shape() {
        return Err(RhaError::shape("masked_rmse", a.shape(), mask.shape()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for ((x, y), w) in a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .zip(mask.indicator().as_slice())
    {
        if *w == 0.0 {
            sum += (x - y) * (x - y);
            count += 1;
        }
    }
    Ok((count > 0).then(|| (sum / count as f64).sqrt()))
}

/// Percentage by which model B improves on model A. Positive means B is better.
pub fn pct_diff(rmse_a: f64, rmse_b: f64) -> Result<f64> {
    if rmse_a == 0.0 {
        return Err(RhaError::Division("pct_diff with rmse_a = 0".into()));
    }
    if !(rmse_a > 0.0) || !(rmse_b >= 0.0) {
        return Err(RhaError::param("pct_diff needs non-negative RMSE values"));
    }
    Ok((rmse_a - rmse_b) / rmse_a * 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Model {
    Sae,
    Rdae,
    Rha,
    Inpaint,
}

impl Model {
    pub const ALL: [Model; 4] = [Model::Sae, Model::Rdae, Model::Rha, Model::Inpaint];

    pub fn uses_lambda(self) -> bool {
        matches!(self, Model::Rdae | Model::Rha)
    }

    /// Fits the model on `x` and returns it with its training-set
    /// reconstruction and whether the outer loop met its tolerance.
    pub fn fit(self, x: &Matrix, mask: &Mask, config: &RobustConfig, seed: u64) -> Result<Fitted> {
        let (model, reconstruction, converged) = match self {
            Model::Sae => {
                let m = sae_fit(x, config, seed)?;
                let r = infer(&m, x)?;
                (m, r, false)
            }
            Model::Inpaint => {
                let m = inpaint_fit(x, mask, config, seed)?;
                let r = infer(&m, x)?;
                (m, r, false)
            }
            Model::Rha => {
                let (m, d) = rha_fit(x, mask, config, seed)?;
                (m, d.l_d, d.converged)
            }
            Model::Rdae => {
                let (m, d) = rdae_fit(x, config, seed)?;
                (m, d.l_d, d.converged)
            }
        };
        Ok(Fitted {
            model,
            reconstruction,
            converged,
        })
    }
}

pub struct Fitted {
    pub model: Autoencoder,
    pub reconstruction: Matrix,
    pub converged: bool,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Sae => "sae",
            Model::Rdae => "rdae",
            Model::Rha => "rha",
            Model::Inpaint => "inpaint",
        })
    }
}

impl FromStr for Model {
    type Err = RhaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sae" => Ok(Model::Sae),
            "rdae" => Ok(Model::Rdae),
            "rha" => Ok(Model::Rha),
            "inpaint" => Ok(Model::Inpaint),
            _ => Err(RhaError::param(format!(
                "unknown model {s:?} (expected sae, rdae, rha or inpaint)"
            ))),
        }
    }
}

/// Per-purpose seeds derived from one user-visible seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSeeds {
    pub init: u64,
    pub shuffle: u64,
    pub corrupt_train: u64,
    pub corrupt_test: u64,
}

impl RunSeeds {
    pub fn derive(seed: u64) -> Self {
        Self {
            init: Rng::derive_seed(seed, "init"),
            shuffle: Rng::derive_seed(seed, "shuffle"),
            corrupt_train: Rng::derive_seed(seed, "corrupt-train"),
            corrupt_test: Rng::derive_seed(seed, "corrupt-test"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub lambdas: Vec<f64>,
    pub noise_levels: Vec<usize>,
    pub block_sizes: Vec<(usize, usize)>,
    pub models: Vec<Model>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("lambdas", self.lambdas.is_empty()),
            ("noise_levels", self.noise_levels.is_empty()),
            ("block_sizes", self.block_sizes.is_empty()),
            ("models", self.models.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((axis, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(RhaError::param(format!("sweep axis {axis} is empty")));
        }
        if let Some(l) = self
            .lambdas
            .iter()
            .find(|l| !(**l >= 0.0) || !l.is_finite())
        {
            return Err(RhaError::param(format!(
                "sweep lambda {l} must be finite and >= 0"
            )));
        }
        Ok(())
    }

    fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &model in &self.models {
            for &noise in &self.noise_levels {
                for &block in &self.block_sizes {
                    for &seed in &self.seeds {
                        let lambdas: Vec<Option<f64>> = if model.uses_lambda() {
                            self.lambdas.iter().copied().map(Some).collect()
                        } else {
                            vec![None]
                        };
                        for lambda in lambdas {
                            cells.push(Cell {
                                model,
                                lambda,
                                noise,
                                block,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    model: Model,
    lambda: Option<f64>,
    noise: usize,
    block: (usize, usize),
    seed: u64,
}

/// (model, noise, block height, block width, seed).
type Group = (Model, usize, usize, usize, u64);

/// Everything besides the grid axes that a sweep cell needs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepBase {
    pub robust: RobustConfig,
    /// Source of fill mode and blocks per image; counts and seeds are
    /// overridden per cell.
    pub corruption: CorruptionSpec,
    /// Worker cap; 0 means rayon's default.
    pub jobs: usize,
    /// Wall-clock timing makes reports non-reproducible, so it is opt-in.
    pub record_runtime: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub model: Model,
    pub lambda: Option<f64>,
    pub noise: usize,
    pub block_h: usize,
    pub block_w: usize,
    pub seed: u64,
    pub train_rmse: Option<f64>,
    pub test_rmse: Option<f64>,
    pub runtime_s: Option<f64>,
    pub converged: bool,
    pub best_lambda: bool,
    pub test_rmse_masked: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn group(&self) -> Group {
        (
            self.model,
            self.noise,
            self.block_h,
            self.block_w,
            self.seed,
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.failed() == self.rows.len()
    }

    /// The flagged best-λ row of a (model, noise, block, seed) group.
    pub fn best(
        &self,
        model: Model,
        noise: usize,
        block: (usize, usize),
        seed: u64,
    ) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.best_lambda && r.group() == (model, noise, block.0, block.1, seed))
    }

    /// Flags the lowest test RMSE in each (model, noise, block, seed) group;
    /// ties go to the smaller λ. Failed rows are never flagged.
    pub fn flag_best(&mut self) {
        for r in &mut self.rows {
            r.best_lambda = false;
        }
        let mut best: Vec<(Group, usize)> = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            let Some(score) = r.test_rmse.filter(|v| v.is_finite()) else {
                continue;
            };
            match best.iter_mut().find(|(g, _)| *g == r.group()) {
                None => best.push((r.group(), i)),
                Some((_, j)) => {
                    let cur = &self.rows[*j];
                    let cur_score = cur.test_rmse.unwrap_or(f64::INFINITY);
                    let smaller_lambda = r.lambda.unwrap_or(0.0) < cur.lambda.unwrap_or(0.0);
                    if score < cur_score || (score == cur_score && smaller_lambda) {
                        *j = i;
                    }
                }
            }
        }
        for (_, i) in best {
            self.rows[i].best_lambda = true;
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(format_sig6).unwrap_or_default();
            let error = r
                .error
                .as_deref()
                .map(|e| e.replace([',', '\n', '\r'], ";"))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.model,
                opt(r.lambda),
                r.noise,
                r.block_h,
                r.block_w,
                r.seed,
                opt(r.train_rmse),
                opt(r.test_rmse),
                opt(r.runtime_s),
                r.converged,
                r.best_lambda,
                opt(r.test_rmse_masked),
                error
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(RhaError::format(0, "report header does not match"));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad =
                |what: &str| RhaError::format(n + 1, format!("report row {}: bad {what}", n + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 13 {
                return Err(bad("field count"));
            }
            let opt = |s: &str, what: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad(what))
                }
            };
            let flag = |s: &str, what: &str| s.parse::<bool>().map_err(|_| bad(what));
            rows.push(SweepRow {
                model: f[0].parse().map_err(|_| bad("model"))?,
                lambda: opt(f[1], "lambda")?,
                noise: f[2].parse().map_err(|_| bad("noise"))?,
                block_h: f[3].parse().map_err(|_| bad("block_h"))?,
                block_w: f[4].parse().map_err(|_| bad("block_w"))?,
                seed: f[5].parse().map_err(|_| bad("seed"))?,
                train_rmse: opt(f[6], "train_rmse")?,
                test_rmse: opt(f[7], "test_rmse")?,
                runtime_s: opt(f[8], "runtime_s")?,
                converged: flag(f[9], "converged")?,
                best_lambda: flag(f[10], "best_lambda")?,
                test_rmse_masked: opt(f[11], "test_rmse_masked")?,
                error: (!f[12].is_empty()).then(|| f[12].to_owned()),
            });
        }
        Ok(Self { rows })
    }
}

pub fn write_report(report: &SweepReport, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, report.to_csv())?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<SweepReport> {
    SweepReport::parse_csv(&fs::read_to_string(path)?)
}

/// Six significant digits, fixed notation for moderate exponents and
/// scientific otherwise, trailing zeros trimmed.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_owned()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

struct CorruptedPair {
    noise: usize,
    block: (usize, usize),
    seed: u64,
    train: Corrupted,
    test: Corrupted,
}

/// Runs every grid cell: both splits are corrupted independently per
/// (noise, block, seed), the model is fit on corrupted train data and scored
/// by inference on corrupted test data against the clean test images.
pub fn run_sweep(
    train: &Dataset,
    test: &Dataset,
    grid: &SweepGrid,
    base: &SweepBase,
) -> Result<SweepReport> {
    grid.validate()?;
    base.robust.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(RhaError::DegenerateInput(
            "sweep needs non-empty train and test data".into(),
        ));
    }
    if train.x.cols() != test.x.cols() {
        return Err(RhaError::shape(
            "run_sweep",
            train.x.shape(),
            test.x.shape(),
        ));
    }

    let mut pairs = Vec::new();
    for &noise in &grid.noise_levels {
        for &block in &grid.block_sizes {
            for &seed in &grid.seeds {
                let seeds = RunSeeds::derive(seed);
                let spec = |s| CorruptionSpec {
                    noise_pixels_per_image: noise,
                    block_height: block.0,
                    block_width: block.1,
                    seed: s,
                    ..base.corruption.clone()
                };
                pairs.push(CorruptedPair {
                    noise,
                    block,
                    seed,
                    train: corrupt(train, &spec(seeds.corrupt_train))?,
                    test: corrupt(test, &spec(seeds.corrupt_test))?,
                });
            }
        }
    }

    let cells = grid.cells();
    let run = || -> Vec<SweepRow> {
        cells
            .par_iter()
            .map(|cell| {
                let pair = pairs
                    .iter()
                    .find(|p| p.noise == cell.noise && p.block == cell.block && p.seed == cell.seed)
                    .expect("corruption prepared for every cell");
                run_cell(cell, pair, train, test, base)
            })
            .collect()
    };
    let rows = if base.jobs == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(base.jobs)
            .build()
            .map_err(|e| RhaError::param(format!("thread pool: {e}")))?
            .install(run)
    };
    let mut report = SweepReport { rows };
    report.flag_best();
    Ok(report)
}

fn run_cell(
    cell: &Cell,
    pair: &CorruptedPair,
    train: &Dataset,
    test: &Dataset,
    base: &SweepBase,
) -> SweepRow {
    let seeds = RunSeeds::derive(cell.seed);
    let mut config = base.robust.clone();
    if let Some(l) = cell.lambda {
        config.lambda = l;
    }
    config.train.shuffle_seed = seeds.shuffle;

    let start = Instant::now();
    let outcome = (|| -> Result<(f64, f64, Option<f64>, bool)> {
        let fitted = cell
            .model
            .fit(&pair.train.data.x, &pair.train.mask, &config, seeds.init)?;
        let train_rmse = rmse(&fitted.reconstruction, &train.x)?;
        let test_out = infer(&fitted.model, &pair.test.data.x)?;
        let test_rmse = rmse(&test_out, &test.x)?;
        let masked = masked_rmse(&test_out, &test.x, &pair.test.mask)?;
        Ok((train_rmse, test_rmse, masked, fitted.converged))
    })();
    let runtime_s = base.record_runtime.then(|| start.elapsed().as_secs_f64());

    let mut row = SweepRow {
        model: cell.model,
        lambda: cell.lambda,
        noise: cell.noise,
        block_h: cell.block.0,
        block_w: cell.block.1,
        seed: cell.seed,
        train_rmse: None,
        test_rmse: None,
        runtime_s,
        converged: false,
        best_lambda: false,
        test_rmse_masked: None,
        error: None,
    };
    match outcome {
        Ok((tr, te, masked, converged)) => {
            row.train_rmse = Some(tr);
            row.test_rmse = Some(te);
            row.test_rmse_masked = masked;
            row.converged = converged;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}
