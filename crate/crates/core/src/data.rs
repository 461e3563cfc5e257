//! Dataset ingestion and on-disk formats.
//!
//! * MNIST IDX image files (big-endian header, magic `0x00000803`), raw or
//!   gzip-compressed.
//! * CIFAR-10 binary batches (3073-byte records: label + R, G, B planes).
//! * `RHAM` matrix container: `b"RHAM"`, rows `u64` LE, cols `u64` LE, then
//!   `rows × cols` little-endian `f64` values in row-major order.
//! * Binary PGM (P5) / PPM (P6) image grids for visual inspection.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, RhaError};
use crate::nn::{sigmoid, ByteReader};
use crate::numerics::{Matrix, Rng};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
const MATRIX_MAGIC: &[u8; 4] = b"RHAM";
const GRID_SEPARATOR: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Geometry {
    pub const MNIST: Geometry = Geometry::new(28, 28, 1);
    pub const CIFAR10: Geometry = Geometry::new(32, 32, 3);

    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    /// Scalar entries per image.
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Flat column of `(channel, row, col)` in the channel-major layout.
    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        channel * self.plane() + row * self.width + col
    }
}

/// Flattened images, one per row, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub geometry: Geometry,
    pub name: String,
}

impl Dataset {
    pub fn new(x: Matrix, geometry: Geometry, name: impl Into<String>) -> Result<Self> {
        if x.cols() != geometry.len() {
            return Err(RhaError::param(format!(
                "dataset width {} does not match geometry {}x{}x{}",
                x.cols(),
                geometry.height,
                geometry.width,
                geometry.channels
            )));
        }
        if let Some(bad) = x.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RhaError::param(format!(
                "dataset value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            x,
            geometry,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// First `n` images (or all of them if there are fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            geometry: self.geometry,
            name: self.name.clone(),
        }
    }
}

pub fn load_mnist_idx(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = gunzip_if_needed(fs::read(path)?)?;
    parse_mnist_idx(&bytes, &path.display().to_string())
}

fn gunzip_if_needed(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if !bytes.starts_with(&[0x1f, 0x8b]) {
        return Ok(bytes);
    }
    let mut out = Vec::new();
    flate2::read::GzDecoder::new(bytes.as_slice())
        .read_to_end(&mut out)
        .map_err(|e| RhaError::format(0, format!("gzip stream: {e}")))?;
    Ok(out)
}

/// Parses an IDX3 image file and scales bytes by 1/255.
pub fn parse_mnist_idx(bytes: &[u8], name: &str) -> Result<Dataset> {
    let header = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| RhaError::format(bytes.len(), "truncated IDX header"))
    };
    let magic = header(0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(RhaError::format(
            0,
            format!("IDX magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x} (image file)"),
        ));
    }
    let count = header(1)? as usize;
    let rows = header(2)? as usize;
    let cols = header(3)? as usize;
    let pixels = rows * cols;
    let payload = &bytes[16..];
    let needed = count * pixels;
    if payload.len() < needed {
        return Err(RhaError::format(
            bytes.len(),
            format!("truncated IDX payload: {count} images need {needed} bytes"),
        ));
    }
    if payload.len() > needed {
        return Err(RhaError::format(
            16 + needed,
            "trailing bytes after IDX payload",
        ));
    }
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Dataset::new(
        Matrix::new(count, pixels, data)?,
        Geometry::new(rows, cols, 1),
        name,
    )
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_cifar10(&fs::read(path)?, &path.display().to_string())
}

/// Parses a CIFAR-10 binary batch; label bytes are dropped.
pub fn parse_cifar10(bytes: &[u8], name: &str) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(RhaError::format(
            bytes.len() - bytes.len() % CIFAR_RECORD,
            format!(
                "CIFAR-10 batch size {} is not a multiple of {CIFAR_RECORD}",
                bytes.len()
            ),
        ));
    }
    let count = bytes.len() / CIFAR_RECORD;
    if count == 0 {
        log::warn!("CIFAR-10 batch {name} is empty");
    }
    let mut data = Vec::with_capacity(count * (CIFAR_RECORD - 1));
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        data.extend(record[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    Dataset::new(
        Matrix::new(count, CIFAR_RECORD - 1, data)?,
        Geometry::CIFAR10,
        name,
    )
}

/// Clean data, sparse spikes, and the logits the clean part came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTruth {
    pub clean: Dataset,
    pub spikes: Matrix,
    pub logits: Matrix,
    pub rank: usize,
}

impl SyntheticTruth {
    /// `clean + spikes`, which stays inside `[0, 1]`.
    pub fn corrupted(&self) -> Matrix {
        self.clean.x.add(&self.spikes).expect("same shape")
    }
}

/// `sigmoid(U·Vᵀ / √rank)` with standard-normal `U`, `V`, plus
/// `round(spike_fraction · rows · cols)` spikes of `±spike_magnitude`
/// clipped so the corrupted value stays in `[0, 1]`.
pub fn make_synthetic(
    rows: usize,
    cols: usize,
    rank: usize,
    spike_fraction: f64,
    spike_magnitude: f64,
    seed: u64,
) -> Result<SyntheticTruth> {
    if rank == 0 || rank > rows.min(cols) {
        return Err(RhaError::param(format!(
            "rank {rank} must lie in 1..={}",
            rows.min(cols)
        )));
    }
    if !(0.0..=1.0).contains(&spike_fraction) {
        return Err(RhaError::param("spike_fraction must lie in [0, 1]"));
    }
    if !(spike_magnitude > 0.0 && spike_magnitude <= 1.0) {
        return Err(RhaError::param("spike_magnitude must lie in (0, 1]"));
    }
    let mut rng = Rng::new(Rng::derive_seed(seed, "synthetic-factors"));
    let u = Matrix::from_fn(rows, rank, |_, _| rng.normal());
    let v = Matrix::from_fn(cols, rank, |_, _| rng.normal());
    let logits = u.matmul_nt(&v)?.scale(1.0 / (rank as f64).sqrt());
    let clean = logits.map(sigmoid);

    let mut spikes = Matrix::zeros(rows, cols);
    let count = (spike_fraction * (rows * cols) as f64).round() as usize;
    let mut rng = Rng::new(Rng::derive_seed(seed, "synthetic-spikes"));
    for idx in rng.sample_distinct(rows * cols, count) {
        let (r, c) = (idx / cols, idx % cols);
        let base = clean.get(r, c);
        let signed = if rng.coin() {
            spike_magnitude
        } else {
            -spike_magnitude
        };
        spikes.set(r, c, (base + signed).clamp(0.0, 1.0) - base);
    }
    Ok(SyntheticTruth {
        clean: Dataset::new(clean, Geometry::new(1, cols, 1), "synthetic")?,
        spikes,
        logits,
        rank,
    })
}

pub fn write_matrix<W: Write>(m: &Matrix, mut w: W) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix(bytes: &[u8]) -> Result<Matrix> {
    let mut r = ByteReader::new(bytes);
    let mut magic = [0u8; 4];
    r.exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(RhaError::format(0, "bad matrix magic, expected RHAM"));
    }
    let rows = usize::try_from(r.u64()?).map_err(|_| RhaError::format(4, "row count overflow"))?;
    let cols =
        usize::try_from(r.u64()?).map_err(|_| RhaError::format(12, "column count overflow"))?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(20))
        .ok_or_else(|| RhaError::format(4, "matrix dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(RhaError::format(
            bytes.len().min(expected),
            format!(
                "{rows}x{cols} matrix needs {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    r.matrix(rows, cols)
}

pub fn save_matrix(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(m, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    read_matrix(&fs::read(path)?)
}

/// `round(v · 255)` with halves rounded up, clamped to the byte range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Renders image strips into one P5 (1 channel) or P6 (3 channels) image.
///
/// Strip `k` becomes tile row `k`; images within a strip are tiled left to
/// right. Tiles are separated by 1-pixel white lines.
pub fn encode_image_grid(strips: &[&Matrix], geometry: Geometry) -> Result<Vec<u8>> {
    let color = match geometry.channels {
        1 => false,
        3 => true,
        c => return Err(RhaError::param(format!("cannot export {c}-channel images"))),
    };
    for s in strips {
        if s.cols() != geometry.len() {
            return Err(RhaError::shape(
                "image grid strip",
                s.shape(),
                (s.rows(), geometry.len()),
            ));
        }
    }
    let tiles = strips.iter().map(|s| s.rows()).max().unwrap_or(0);
    let (gh, gw) = grid_size(strips.len(), tiles, geometry);
    let depth = if color { 3 } else { 1 };
    let mut pixels = vec![GRID_SEPARATOR; gh * gw * depth];
    for (k, strip) in strips.iter().enumerate() {
        for t in 0..strip.rows() {
            let img = strip.row(t);
            let (top, left) = (k * (geometry.height + 1), t * (geometry.width + 1));
            for r in 0..geometry.height {
                for c in 0..geometry.width {
                    let base = ((top + r) * gw + left + c) * depth;
                    for ch in 0..depth {
                        pixels[base + ch] = quantize(img[geometry.index(ch, r, c)]);
                    }
                }
            }
        }
    }
    let mut out = format!("{}\n{gw} {gh}\n255\n", if color { "P6" } else { "P5" }).into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

fn grid_size(strips: usize, tiles: usize, g: Geometry) -> (usize, usize) {
    let span = |n: usize, side: usize| if n == 0 { 0 } else { n * side + n - 1 };
    (span(strips, g.height), span(tiles, g.width))
}

pub fn write_image_grid(
    strips: &[&Matrix],
    geometry: Geometry,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, encode_image_grid(strips, geometry)?)?;
    Ok(())
}

/// Parses a grid written by [`encode_image_grid`] back into `strips`
/// matrices of quantized values (`byte / 255`), `tiles` images each.
pub fn decode_image_grid(
    bytes: &[u8],
    geometry: Geometry,
    strips: usize,
    tiles: usize,
) -> Result<Vec<Matrix>> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(RhaError::format(pos, "truncated PNM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte before the raster
    let depth = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(RhaError::format(0, format!("unsupported PNM kind {other}"))),
    };
    if depth != geometry.channels {
        return Err(RhaError::param("PNM channel count does not match geometry"));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| RhaError::format(0, format!("bad PNM header field {s:?}")))
    };
    let (gw, gh) = (num(&fields[1])?, num(&fields[2])?);
    if num(&fields[3])? != 255 {
        return Err(RhaError::format(0, "only maxval 255 is supported"));
    }
    if (gh, gw) != grid_size(strips, tiles, geometry) {
        return Err(RhaError::param(format!(
            "grid is {gw}x{gh}, expected {strips} strips of {tiles} tiles"
        )));
    }
    let raster = bytes
        .get(pos..pos + gh * gw * depth)
        .ok_or_else(|| RhaError::format(bytes.len(), "truncated PNM raster"))?;
    let mut out = Vec::with_capacity(strips);
    for k in 0..strips {
        let mut m = Matrix::zeros(tiles, geometry.len());
        for t in 0..tiles {
            let (top, left) = (k * (geometry.height + 1), t * (geometry.width + 1));
            for r in 0..geometry.height {
                for c in 0..geometry.width {
                    let base = ((top + r) * gw + left + c) * depth;
                    for ch in 0..depth {
                        m.set(
                            t,
                            geometry.index(ch, r, c),
                            f64::from(raster[base + ch]) / 255.0,
                        );
                    }
                }
            }
        }
        out.push(m);
    }
    Ok(out)
}
