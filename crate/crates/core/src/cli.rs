//! The `rha` command line.
//!
//! Every setting is a key that can come from a flat `key=value` config file
//! (`--config FILE`) or from the matching `--key` flag; flags win. The
//! resolved settings are written to `effective_config.txt` in the output
//! directory. Exit codes: 0 success, 1 I/O or format error, 2 usage error,
//! 3 numerical failure.
//!
//! All randomness comes from `seed` through [`RunSeeds`]: weight init,
//! minibatch shuffling and corruption each get their own derived stream.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::corruption::{corrupt, CorruptionSpec, Fill};
use crate::data::{self, Dataset, Geometry};
use crate::error::RhaError;
use crate::eval::{run_sweep, write_report, Model, RunSeeds, SweepBase, SweepGrid};
use crate::mask::Mask;
use crate::nn::{Autoencoder, TrainConfig};
use crate::numerics::Matrix;
use crate::robust::{
    infer, inpaint_fit, rdae_fit, rha_fit, sae_fit, Decomposition, ProxKind, ResidualMode,
    RobustConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(RhaError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(e) => match e {
                RhaError::Shape { .. } | RhaError::Parameter(_) => EXIT_USAGE,
                RhaError::Numerical { .. } | RhaError::Division(_) => EXIT_NUMERICAL,
                RhaError::Format { .. } | RhaError::Io(_) | RhaError::DegenerateInput(_) => EXIT_IO,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<RhaError> for CliError {
    fn from(e: RhaError) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Clone, Copy)]
enum Kind {
    Value,
    Switch,
}

struct Key {
    name: &'static str,
    default: Option<&'static str>,
    kind: Kind,
    help: &'static str,
}

const fn value(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key {
        name,
        default,
        kind: Kind::Value,
        help,
    }
}

const fn switch(name: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: Some("false"),
        kind: Kind::Switch,
        help,
    }
}

const OUT: Key = value("out", None, "output directory");
const SEED: Key = value(
    "seed",
    Some("0"),
    "user seed; all randomness derives from it",
);

const DATA_KEYS: [Key; 3] = [
    value(
        "format",
        Some("auto"),
        "input format: auto, mnist, cifar or rham",
    ),
    value(
        "geometry",
        None,
        "image geometry HxWxC (needed for rham inputs)",
    ),
    value(
        "fill",
        Some("0.5"),
        "value written into missing blocks, or \"mean\"",
    ),
];

const FIT_KEYS: [Key; 9] = [
    value("prox", Some("l1"), "shrinkage: l1 or l21"),
    value(
        "epochs-inner",
        Some("5"),
        "training epochs per outer iteration",
    ),
    value("outer-iters", Some("10"), "maximum outer iterations"),
    value(
        "epsilon",
        Some("1e-5"),
        "convergence tolerance on c1 and c2",
    ),
    value("batch-size", Some("40"), "minibatch rows"),
    value("lr", Some("0.01"), "Adam learning rate"),
    value(
        "hidden",
        Some("200,50"),
        "encoder widths; the decoder mirrors them",
    ),
    value(
        "residual",
        Some("masked"),
        "masked or unmasked residual for the shrinkage step",
    ),
    SEED,
];

fn corrupt_keys() -> Vec<Key> {
    let mut keys = vec![
        value("input", None, "dataset file (IDX, CIFAR batch or RHAM)"),
        value("count", Some("0"), "number of images to keep (0 = all)"),
        value("noise", Some("0"), "salt-and-pepper entries per image"),
        value("block", Some("0x0"), "missing block size HxW"),
        value("blocks-per-image", Some("1"), "missing blocks per image"),
        value("split", Some("train"), "corruption stream: train or test"),
        SEED,
        OUT,
    ];
    keys.extend(DATA_KEYS);
    keys
}

fn train_keys() -> Vec<Key> {
    let mut keys = vec![
        value("model", Some("rha"), "sae, rdae, rha or inpaint"),
        value("x", None, "training matrix (RHAM)"),
        value(
            "omega",
            None,
            "observation mask (RHAM); all ones if omitted",
        ),
        value("fill", Some("0.5"), "fill value at unobserved entries"),
        value("lambda", Some("0.1"), "shrinkage threshold"),
        OUT,
    ];
    keys.extend(FIT_KEYS);
    keys
}

fn infer_keys() -> Vec<Key> {
    vec![
        value("checkpoint", None, "RHAE checkpoint"),
        value("x", None, "input matrix (RHAM)"),
        switch(
            "export-images",
            "also write an input/reconstruction image grid",
        ),
        value(
            "geometry",
            Some("28x28x1"),
            "image geometry HxWxC for the exported grid",
        ),
        value("images", Some("8"), "number of images in the exported grid"),
        OUT,
    ]
}

fn sweep_keys() -> Vec<Key> {
    let mut keys = vec![
        value("train", None, "training dataset file"),
        value("test", None, "test dataset file"),
        value(
            "train-count",
            Some("2000"),
            "training images to use (0 = all)",
        ),
        value("test-count", Some("500"), "test images to use (0 = all)"),
        value("model", Some("sae,rdae,rha"), "models to fit"),
        value("lambda", Some("0.05,0.1,0.2,0.3,0.5"), "λ values"),
        value(
            "noise",
            Some("10,70,350"),
            "salt-and-pepper entries per image",
        ),
        value("block", Some("10x10"), "missing block sizes HxW"),
        value("blocks-per-image", Some("1"), "missing blocks per image"),
        value("jobs", Some("0"), "worker cap (0 = one per core)"),
        switch(
            "timing",
            "record wall-clock runtime (makes the report non-reproducible)",
        ),
        OUT,
    ];
    keys.extend(DATA_KEYS);
    keys.extend(FIT_KEYS);
    keys.retain(|k| k.name != "seed");
    keys.push(value("seed", Some("0"), "user seeds, comma separated"));
    keys
}

fn export_keys() -> Vec<Key> {
    vec![
        value(
            "inputs",
            None,
            "RHAM matrices, one grid row each, comma separated",
        ),
        value("geometry", Some("28x28x1"), "image geometry HxWxC"),
        value("images", Some("8"), "images per row"),
        value("start", Some("0"), "first image index"),
        value("name", Some("grid"), "output file stem"),
        OUT,
    ]
}

const SUBCOMMANDS: [(&str, &str); 5] = [
    (
        "corrupt",
        "apply salt-and-pepper noise and missing blocks to a dataset",
    ),
    ("train", "fit sae, rdae, rha or inpaint on a matrix"),
    ("infer", "reconstruct new data with a trained checkpoint"),
    ("sweep", "run a λ × corruption grid and write a CSV report"),
    ("export-images", "tile matrix rows into a PGM/PPM image"),
];

fn keys_for(cmd: &str) -> Vec<Key> {
    match cmd {
        "corrupt" => corrupt_keys(),
        "train" => train_keys(),
        "infer" => infer_keys(),
        "sweep" => sweep_keys(),
        "export-images" => export_keys(),
        _ => unreachable!("unknown subcommand {cmd}"),
    }
}

fn command() -> Command {
    let mut root = Command::new("rha")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Robust Hadamard autoencoders: blind denoising and inpainting")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value settings file; flags override it"),
        );
        for key in keys_for(name) {
            let arg = Arg::new(key.name).long(key.name).help(key.help);
            sub = sub.arg(match key.kind {
                Kind::Value => arg.value_name("VALUE"),
                Kind::Switch => arg.action(ArgAction::SetTrue),
            });
        }
        root = root.subcommand(sub);
    }
    root
}

/// Resolved `key → value` settings of one invocation.
struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    fn resolve(cmd: &str, matches: &ArgMatches) -> CliResult<Self> {
        let keys = keys_for(cmd);
        let mut values = BTreeMap::new();
        for k in &keys {
            if let Some(d) = k.default {
                values.insert(k.name.to_owned(), d.to_owned());
            }
        }
        if let Some(path) = matches.get_one::<String>("config") {
            let text = fs::read_to_string(path).map_err(RhaError::from)?;
            for (k, v) in parse_config(&text)? {
                if !keys.iter().any(|key| key.name == k) {
                    return Err(usage(format!("unknown config key {k:?} for {cmd}")));
                }
                values.insert(k, v);
            }
        }
        for k in &keys {
            if matches.value_source(k.name) != Some(ValueSource::CommandLine) {
                continue;
            }
            let v = match k.kind {
                Kind::Value => matches
                    .get_one::<String>(k.name)
                    .cloned()
                    .unwrap_or_default(),
                Kind::Switch => "true".to_owned(),
            };
            values.insert(k.name.to_owned(), v);
        }
        Ok(Self { values })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .filter(|v| !v.is_empty())
    }

    fn required(&self, key: &str) -> CliResult<&str> {
        self.raw(key)
            .ok_or_else(|| usage(format!("missing required setting --{key}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        let raw = self.required(key)?;
        raw.parse()
            .map_err(|_| usage(format!("invalid value {raw:?} for --{key}")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> CliResult<Vec<T>> {
        self.required(key)?
            .split(',')
            .map(|p| {
                let p = p.trim();
                p.parse()
                    .map_err(|_| usage(format!("invalid value {p:?} in --{key}")))
            })
            .collect()
    }

    fn flag(&self, key: &str) -> CliResult<bool> {
        self.parse(key)
    }

    fn out_dir(&self) -> CliResult<PathBuf> {
        let dir = PathBuf::from(self.required("out")?);
        fs::create_dir_all(&dir).map_err(RhaError::from)?;
        Ok(dir)
    }

    fn write_effective(&self, dir: &Path) -> CliResult<()> {
        let mut text = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(text, "{k}={v}");
        }
        fs::write(dir.join("effective_config.txt"), text).map_err(RhaError::from)?;
        Ok(())
    }
}

/// Parses flat `key=value` text. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key=value", n + 1)))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

pub fn parse_block(s: &str) -> Option<(usize, usize)> {
    let (h, w) = s.trim().split_once(['x', 'X'])?;
    Some((h.parse().ok()?, w.parse().ok()?))
}

pub fn parse_geometry(s: &str) -> Option<Geometry> {
    match s {
        "mnist" => return Some(Geometry::MNIST),
        "cifar" | "cifar10" => return Some(Geometry::CIFAR10),
        _ => {}
    }
    let parts: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.parse().ok())
        .collect::<Option<_>>()?;
    match parts[..] {
        [h, w, c] if h > 0 && w > 0 && c > 0 => Some(Geometry::new(h, w, c)),
        _ => None,
    }
}

fn blocks(settings: &Settings, key: &str) -> CliResult<Vec<(usize, usize)>> {
    settings
        .required(key)?
        .split(',')
        .map(|b| parse_block(b).ok_or_else(|| usage(format!("invalid block {b:?}, expected HxW"))))
        .collect()
}

fn geometry_setting(settings: &Settings) -> CliResult<Option<Geometry>> {
    settings
        .raw("geometry")
        .map(|g| {
            parse_geometry(g)
                .ok_or_else(|| usage(format!("invalid geometry {g:?}, expected HxWxC")))
        })
        .transpose()
}

fn fill_setting(settings: &Settings) -> CliResult<Fill> {
    match settings.required("fill")? {
        "mean" => Ok(Fill::ObservedMean),
        _ => Ok(Fill::Constant(settings.parse("fill")?)),
    }
}

/// Loads a dataset file; CIFAR inputs may list several batches joined by commas.
fn load_dataset(path: &str, settings: &Settings) -> CliResult<Dataset> {
    let geometry = geometry_setting(settings)?;
    let format = match settings.required("format")? {
        "auto" => {
            if path.ends_with(".rham") {
                "rham"
            } else if path.ends_with(".bin") {
                "cifar"
            } else {
                "mnist"
            }
        }
        f => f,
    };
    let ds = match format {
        "mnist" => data::load_mnist_idx(path)?,
        "cifar" => {
            let parts: Vec<Dataset> = path
                .split(',')
                .map(data::load_cifar10)
                .collect::<crate::Result<_>>()?;
            let rows: usize = parts.iter().map(Dataset::len).sum();
            let values: Vec<f64> = parts
                .iter()
                .flat_map(|d| d.x.as_slice().iter().copied())
                .collect();
            Dataset::new(
                Matrix::new(rows, Geometry::CIFAR10.len(), values)?,
                Geometry::CIFAR10,
                path,
            )?
        }
        "rham" => {
            let x = data::load_matrix(path)?;
            let g = geometry.unwrap_or(Geometry::new(1, x.cols(), 1));
            Dataset::new(x, g, path)?
        }
        other => return Err(usage(format!("unknown format {other:?}"))),
    };
    match geometry {
        Some(g) if g != ds.geometry => Err(usage(format!(
            "geometry {}x{}x{} does not match {path}",
            g.height, g.width, g.channels
        ))),
        _ => Ok(ds),
    }
}

fn take(ds: Dataset, count: usize) -> Dataset {
    if count == 0 {
        ds
    } else {
        ds.take(count)
    }
}

fn robust_config(settings: &Settings) -> CliResult<RobustConfig> {
    let residual = match settings.required("residual")? {
        "masked" => ResidualMode::Masked,
        "unmasked" => ResidualMode::Unmasked,
        r => {
            return Err(usage(format!(
                "invalid residual {r:?}, expected masked or unmasked"
            )))
        }
    };
    let config = RobustConfig {
        lambda: RobustConfig::default().lambda,
        prox: settings
            .required("prox")?
            .parse::<ProxKind>()
            .map_err(|_| usage("--prox must be l1 or l21"))?,
        inner_epochs: settings.parse("epochs-inner")?,
        max_outer_iters: settings.parse("outer-iters")?,
        epsilon_conv: settings.parse("epsilon")?,
        residual,
        train: TrainConfig {
            learning_rate: settings.parse("lr")?,
            batch_size: settings.parse("batch-size")?,
            hidden: settings.list("hidden")?,
            ..TrainConfig::default()
        },
    };
    config.validate()?;
    Ok(config)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let outcome = Settings::resolve(name, sub).and_then(|s| match name {
        "corrupt" => cmd_corrupt(&s),
        "train" => cmd_train(&s),
        "infer" => cmd_infer(&s),
        "sweep" => cmd_sweep(&s),
        "export-images" => cmd_export(&s),
        _ => unreachable!(),
    });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("rha {name}: {e}");
            e.exit_code()
        }
    }
}

fn cmd_corrupt(s: &Settings) -> CliResult<()> {
    let ds = take(load_dataset(s.required("input")?, s)?, s.parse("count")?);
    let seeds = RunSeeds::derive(s.parse("seed")?);
    let seed = match s.required("split")? {
        "train" => seeds.corrupt_train,
        "test" => seeds.corrupt_test,
        other => {
            return Err(usage(format!(
                "invalid split {other:?}, expected train or test"
            )))
        }
    };
    let block = parse_block(s.required("block")?).ok_or_else(|| usage("--block expects HxW"))?;
    let spec = CorruptionSpec {
        noise_pixels_per_image: s.parse("noise")?,
        block_height: block.0,
        block_width: block.1,
        blocks_per_image: s.parse("blocks-per-image")?,
        fill: fill_setting(s)?,
        seed,
    };
    let out = s.out_dir()?;
    let c = corrupt(&ds, &spec)?;
    data::save_matrix(&c.data.x, out.join("X.rham"))?;
    data::save_matrix(c.mask.indicator(), out.join("omega.rham"))?;
    data::save_matrix(&ds.x, out.join("clean.rham"))?;
    c.record.save(out.join("record.txt"))?;
    s.write_effective(&out)
}

fn cmd_train(s: &Settings) -> CliResult<()> {
    let model: Model = s
        .required("model")?
        .parse()
        .map_err(|e: RhaError| usage(e.to_string()))?;
    let x = data::load_matrix(s.required("x")?)?;
    let fill: f64 = s.parse("fill")?;
    let mask = match s.raw("omega") {
        Some(p) => Mask::new(data::load_matrix(p)?, fill)?,
        None => Mask::new(Matrix::ones(x.rows(), x.cols()), fill)?,
    };
    if mask.shape() != x.shape() {
        return Err(RhaError::shape("train: omega vs x", mask.shape(), x.shape()).into());
    }
    let mut config = robust_config(s)?;
    config.lambda = s.parse("lambda")?;
    config.validate()?;
    let seeds = RunSeeds::derive(s.parse("seed")?);
    config.train.shuffle_seed = seeds.shuffle;

    let out = s.out_dir()?;
    let (net, decomposition): (Autoencoder, Option<Decomposition>) = match model {
        Model::Sae => (sae_fit(&x, &config, seeds.init)?, None),
        Model::Inpaint => (inpaint_fit(&x, &mask, &config, seeds.init)?, None),
        Model::Rha => {
            let (m, d) = rha_fit(&x, &mask, &config, seeds.init)?;
            (m, Some(d))
        }
        Model::Rdae => {
            let (m, d) = rdae_fit(&x, &config, seeds.init)?;
            (m, Some(d))
        }
    };
    net.save(out.join("model.rhae"))?;
    match decomposition {
        Some(d) => {
            data::save_matrix(&d.l_d, out.join("L_D.rham"))?;
            data::save_matrix(&d.s, out.join("S.rham"))?;
            fs::write(out.join("log.csv"), training_log(&d, config.inner_epochs))
                .map_err(RhaError::from)?;
        }
        None => data::save_matrix(&infer(&net, &x)?, out.join("L_D.rham"))?,
    }
    s.write_effective(&out)
}

fn training_log(d: &Decomposition, inner_epochs: usize) -> String {
    let mut text = String::from("iteration,c1,c2,s_norm,loss\n");
    for i in 0..d.c1_trace.len() {
        let loss = ((i + 1) * inner_epochs)
            .checked_sub(1)
            .and_then(|e| d.loss_trace.get(e))
            .map(|v| format!("{v:e}"))
            .unwrap_or_default();
        let _ = writeln!(
            text,
            "{i},{:e},{:e},{:e},{loss}",
            d.c1_trace[i], d.c2_trace[i], d.s_norm_trace[i]
        );
    }
    text
}

fn cmd_infer(s: &Settings) -> CliResult<()> {
    let net = Autoencoder::load(s.required("checkpoint")?)?;
    let x = data::load_matrix(s.required("x")?)?;
    if x.cols() != net.input_width() {
        return Err(usage(format!(
            "input has {} columns but the checkpoint expects {}",
            x.cols(),
            net.input_width()
        )));
    }
    let out = s.out_dir()?;
    let recon = infer(&net, &x)?;
    data::save_matrix(&recon, out.join("L_D.rham"))?;
    if s.flag("export-images")? {
        let g = geometry_setting(s)?.unwrap_or(Geometry::MNIST);
        let n: usize = s.parse("images")?;
        let rows: Vec<usize> = (0..n.min(x.rows())).collect();
        let (a, b) = (x.select_rows(&rows), recon.select_rows(&rows));
        data::write_image_grid(&[&a, &b], g, out.join(grid_name("infer", g)))?;
    }
    s.write_effective(&out)
}

fn grid_name(stem: &str, g: Geometry) -> String {
    format!("{stem}.{}", if g.channels == 1 { "pgm" } else { "ppm" })
}

fn cmd_sweep(s: &Settings) -> CliResult<()> {
    let train = take(
        load_dataset(s.required("train")?, s)?,
        s.parse("train-count")?,
    );
    let test = take(
        load_dataset(s.required("test")?, s)?,
        s.parse("test-count")?,
    );
    let grid = SweepGrid {
        lambdas: s.list("lambda")?,
        noise_levels: s.list("noise")?,
        block_sizes: blocks(s, "block")?,
        models: s
            .required("model")?
            .split(',')
            .map(|m| m.trim().parse().map_err(|e: RhaError| usage(e.to_string())))
            .collect::<CliResult<_>>()?,
        seeds: s.list("seed")?,
    };
    grid.validate().map_err(|e| usage(e.to_string()))?;
    let base = SweepBase {
        robust: robust_config(s)?,
        corruption: CorruptionSpec {
            blocks_per_image: s.parse("blocks-per-image")?,
            fill: fill_setting(s)?,
            ..CorruptionSpec::default()
        },
        jobs: s.parse("jobs")?,
        record_runtime: s.flag("timing")?,
    };
    let out = s.out_dir()?;
    let report = run_sweep(&train, &test, &grid, &base)?;
    write_report(&report, out.join("report.csv"))?;
    s.write_effective(&out)?;
    if report.all_failed() {
        let first = report.rows[0].error.clone().unwrap_or_default();
        return Err(CliError::Run(RhaError::Numerical {
            iteration: 0,
            message: format!("every sweep cell failed; first error: {first}"),
        }));
    }
    Ok(())
}

fn cmd_export(s: &Settings) -> CliResult<()> {
    let g = geometry_setting(s)?.unwrap_or(Geometry::MNIST);
    let start: usize = s.parse("start")?;
    let n: usize = s.parse("images")?;
    let mut strips = Vec::new();
    for path in s.required("inputs")?.split(',') {
        let m = data::load_matrix(path.trim())?;
        if m.cols() != g.len() {
            return Err(usage(format!(
                "{path} has {} columns, geometry needs {}",
                m.cols(),
                g.len()
            )));
        }
        let rows: Vec<usize> = (start..(start + n).min(m.rows())).collect();
        strips.push(m.select_rows(&rows));
    }
    let out = s.out_dir()?;
    let refs: Vec<&Matrix> = strips.iter().collect();
    data::write_image_grid(&refs, g, out.join(grid_name(s.required("name")?, g)))?;
    s.write_effective(&out)
}
