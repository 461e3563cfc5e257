//! Salt-and-pepper noise and missing-block masking.
//!
//! Noise is applied first and blocks second, so a block overwrites any noise
//! that landed inside it. The mask marks only block entries as missing:
//! noisy entries stay "observed" and the model has to find them on its own.
//!
//! Every change is captured in a [`CorruptionRecord`], which serializes to a
//! line-oriented text file:
//!
//! ```text
//! rha-corruption 1
//! geometry 28 28 1
//! block 10 10
//! fill 0.5
//! 17:1 301:0 | 4,12
//! ```
//!
//! Each image line lists `index:value` noise injections, then `|`, then
//! `row,col` block top-left corners.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{Dataset, Geometry};
use crate::error::{Result, RhaError};
use crate::mask::{Mask, DEFAULT_FILL};
use crate::numerics::{Matrix, Rng};

const RECORD_HEADER: &str = "rha-corruption 1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fill {
    Constant(f64),
    /// Mean of every observed entry after noise has been applied.
    ObservedMean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionSpec {
    pub noise_pixels_per_image: usize,
    pub block_height: usize,
    pub block_width: usize,
    pub blocks_per_image: usize,
    pub fill: Fill,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            noise_pixels_per_image: 0,
            block_height: 0,
            block_width: 0,
            blocks_per_image: 1,
            fill: Fill::Constant(DEFAULT_FILL),
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    fn has_blocks(&self) -> bool {
        self.block_height > 0 && self.block_width > 0 && self.blocks_per_image > 0
    }

    fn validate(&self, g: Geometry) -> Result<()> {
        if self.noise_pixels_per_image > g.len() {
            return Err(RhaError::param(format!(
                "{} noise entries requested but images have {}",
                self.noise_pixels_per_image,
                g.len()
            )));
        }
        if self.has_blocks() && (self.block_height > g.height || self.block_width > g.width) {
            return Err(RhaError::param(format!(
                "block {}x{} does not fit in {}x{} images",
                self.block_height, self.block_width, g.height, g.width
            )));
        }
        if let Fill::Constant(v) = self.fill {
            if !(0.0..=1.0).contains(&v) {
                return Err(RhaError::param("fill value must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ImageCorruption {
    /// `(flat index, injected value ∈ {0, 1})`.
    pub noise: Vec<(usize, u8)>,
    /// Top-left `(row, col)` of each missing block.
    pub blocks: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionRecord {
    pub geometry: Geometry,
    pub block_height: usize,
    pub block_width: usize,
    pub fill_value: f64,
    pub images: Vec<ImageCorruption>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corrupted {
    pub data: Dataset,
    pub mask: Mask,
    pub record: CorruptionRecord,
}

/// Sets `noise_pixels_per_image` distinct entries of each image to 0 or 1.
pub fn salt_pepper(
    dataset: &Dataset,
    spec: &CorruptionSpec,
) -> Result<(Dataset, CorruptionRecord)> {
    spec.validate(dataset.geometry)?;
    let mut rng = Rng::new(Rng::derive_seed(spec.seed, "noise"));
    let n = dataset.geometry.len();
    let mut x = dataset.x.clone();
    let mut images = Vec::with_capacity(dataset.len());
    for r in 0..dataset.len() {
        let positions = rng.sample_distinct(n, spec.noise_pixels_per_image);
        let noise: Vec<(usize, u8)> = positions
            .into_iter()
            .map(|i| (i, u8::from(rng.coin())))
            .collect();
        for &(i, v) in &noise {
            x.set(r, i, f64::from(v));
        }
        images.push(ImageCorruption {
            noise,
            blocks: Vec::new(),
        });
    }
    let record = CorruptionRecord {
        geometry: dataset.geometry,
        block_height: 0,
        block_width: 0,
        fill_value: fill_constant(spec.fill),
        images,
    };
    Ok((
        Dataset::new(x, dataset.geometry, dataset.name.clone())?,
        record,
    ))
}

fn fill_constant(fill: Fill) -> f64 {
    match fill {
        Fill::Constant(v) => v,
        Fill::ObservedMean => DEFAULT_FILL,
    }
}

/// Places `blocks_per_image` uniformly positioned blocks per image; block
/// entries (all channels) become the fill value and 0 in the mask.
pub fn block_mask(dataset: &Dataset, spec: &CorruptionSpec) -> Result<Corrupted> {
    spec.validate(dataset.geometry)?;
    let g = dataset.geometry;
    let mut rng = Rng::new(Rng::derive_seed(spec.seed, "blocks"));
    let mut images = Vec::with_capacity(dataset.len());
    let mut indicator = Matrix::ones(dataset.len(), g.len());
    for r in 0..dataset.len() {
        let mut blocks = Vec::new();
        if spec.has_blocks() {
            for _ in 0..spec.blocks_per_image {
                let top = rng.below(g.height - spec.block_height + 1);
                let left = rng.below(g.width - spec.block_width + 1);
                blocks.push((top, left));
                for_each_block_entry(g, (top, left), spec.block_height, spec.block_width, |i| {
                    indicator.set(r, i, 0.0)
                });
            }
        }
        images.push(ImageCorruption {
            noise: Vec::new(),
            blocks,
        });
    }
    let fill_value = match spec.fill {
        Fill::Constant(v) => v,
        Fill::ObservedMean => observed_mean(&dataset.x, &indicator),
    };
    let mask = Mask::new(indicator, fill_value)?;
    let x = mask.fill_unobserved(&dataset.x)?;
    let (bh, bw) = if spec.has_blocks() {
        (spec.block_height, spec.block_width)
    } else {
        (0, 0)
    };
    Ok(Corrupted {
        data: Dataset::new(x, g, dataset.name.clone())?,
        mask,
        record: CorruptionRecord {
            geometry: g,
            block_height: bh,
            block_width: bw,
            fill_value,
            images,
        },
    })
}

fn observed_mean(x: &Matrix, indicator: &Matrix) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for (v, w) in x.as_slice().iter().zip(indicator.as_slice()) {
        if *w != 0.0 {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        DEFAULT_FILL
    } else {
        sum / count as f64
    }
}

fn for_each_block_entry(
    g: Geometry,
    (top, left): (usize, usize),
    height: usize,
    width: usize,
    mut f: impl FnMut(usize),
) {
    for ch in 0..g.channels {
        for r in top..top + height {
            for c in left..left + width {
                f(g.index(ch, r, c));
            }
        }
    }
}

/// Salt-and-pepper noise followed by block masking.
pub fn corrupt(dataset: &Dataset, spec: &CorruptionSpec) -> Result<Corrupted> {
    let (noisy, noise_record) = salt_pepper(dataset, spec)?;
    let mut out = block_mask(&noisy, spec)?;
    for (img, noise) in out.record.images.iter_mut().zip(noise_record.images) {
        img.noise = noise.noise;
    }
    Ok(out)
}

impl CorruptionRecord {
    /// Re-applies the recorded corruption to the clean data.
    pub fn replay(&self, clean: &Dataset) -> Result<(Matrix, Mask)> {
        if clean.geometry != self.geometry || clean.len() != self.images.len() {
            return Err(RhaError::param("record does not match dataset shape"));
        }
        let g = self.geometry;
        let mut x = clean.x.clone();
        let mut indicator = Matrix::ones(clean.len(), g.len());
        for (r, img) in self.images.iter().enumerate() {
            for &(i, v) in &img.noise {
                if i >= g.len() {
                    return Err(RhaError::param(format!("noise index {i} out of range")));
                }
                x.set(r, i, f64::from(v));
            }
            for &(top, left) in &img.blocks {
                if top + self.block_height > g.height || left + self.block_width > g.width {
                    return Err(RhaError::param("recorded block outside image"));
                }
                for_each_block_entry(g, (top, left), self.block_height, self.block_width, |i| {
                    x.set(r, i, self.fill_value);
                    indicator.set(r, i, 0.0);
                });
            }
        }
        Ok((x, Mask::new(indicator, self.fill_value)?))
    }

    pub fn to_text(&self) -> String {
        let g = self.geometry;
        let mut out = String::new();
        let _ = writeln!(out, "{RECORD_HEADER}");
        let _ = writeln!(out, "geometry {} {} {}", g.height, g.width, g.channels);
        let _ = writeln!(out, "block {} {}", self.block_height, self.block_width);
        let _ = writeln!(out, "fill {}", self.fill_value);
        for img in &self.images {
            let noise: Vec<String> = img.noise.iter().map(|(i, v)| format!("{i}:{v}")).collect();
            let blocks: Vec<String> = img.blocks.iter().map(|(r, c)| format!("{r},{c}")).collect();
            let _ = writeln!(out, "{} | {}", noise.join(" "), blocks.join(" "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| RhaError::format(0, format!("record missing {what} line")))
        };
        let bad = |line: usize, msg: &str| {
            RhaError::format(line, format!("record line {}: {msg}", line + 1))
        };

        let (_, header) = next("header")?;
        if header.trim() != RECORD_HEADER {
            return Err(bad(0, "not a corruption record"));
        }
        let mut keyed = |key: &str, count: usize| -> Result<Vec<String>> {
            let (n, line) = next(key)?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(n, &format!("expected {key}")));
            }
            let vals: Vec<String> = parts.map(str::to_owned).collect();
            if vals.len() != count {
                return Err(bad(n, &format!("{key} needs {count} values")));
            }
            Ok(vals)
        };
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| RhaError::format(0, format!("bad number {s:?}")))
        };
        let g = keyed("geometry", 3)?;
        let geometry = Geometry::new(num(&g[0])?, num(&g[1])?, num(&g[2])?);
        let b = keyed("block", 2)?;
        let (block_height, block_width) = (num(&b[0])?, num(&b[1])?);
        let fill_value = keyed("fill", 1)?[0]
            .parse::<f64>()
            .map_err(|_| RhaError::format(3, "bad fill value"))?;

        let mut images = Vec::new();
        for (n, line) in lines {
            let (noise_part, block_part) =
                line.split_once('|').ok_or_else(|| bad(n, "missing '|'"))?;
            let mut img = ImageCorruption::default();
            for tok in noise_part.split_whitespace() {
                let (i, v) = tok
                    .split_once(':')
                    .ok_or_else(|| bad(n, "noise entry needs index:value"))?;
                let v = match v {
                    "0" => 0,
                    "1" => 1,
                    _ => return Err(bad(n, "noise value must be 0 or 1")),
                };
                img.noise.push((num(i)?, v));
            }
            for tok in block_part.split_whitespace() {
                let (r, c) = tok
                    .split_once(',')
                    .ok_or_else(|| bad(n, "block entry needs row,col"))?;
                img.blocks.push((num(r)?, num(c)?));
            }
            images.push(img);
        }
        Ok(Self {
            geometry,
            block_height,
            block_width,
            fill_value,
            images,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
