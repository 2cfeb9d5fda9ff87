//! File formats: CSV matrices, BSQ raster cubes with text headers, PGM
//! masks and detection maps, and JSON run records.
//!
//! Format notes:
//! * CSV carries `f64` values printed with 9 significant digits, which
//!   round-trips anything that fits in an `f32` exactly and keeps `f64`
//!   round-trip error under 1e-6 relative.
//! * BSQ is band-sequential little-endian `float32` raw data. A text
//!   sidecar (same path with an `.hdr` extension) declares `height`,
//!   `width`, `bands` and `dtype`; unknown keys are ignored.
//! * PGM masks may be read in ASCII (`P2`) or binary (`P5`) form; any
//!   nonzero sample marks an anomalous pixel. Masks are written as `P5`
//!   with 255 for anomalies.

use crate::data::DataMatrix;
use crate::detect::{DetectorSpec, ScoreField};
use crate::eval::GroundTruthMask;
use crate::synth::{SceneBundle, SceneSpec};
use crate::{Error, Mat, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(format: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        format,
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Nine significant digits: lossless for `f32`, <= 1e-6 relative for `f64`.
fn fmt_sig(v: f64) -> String {
    format!("{v:.8e}")
}

// ---------------------------------------------------------------- CSV

/// Writes a matrix as comma-separated rows.
pub fn save_matrix_csv(path: &Path, mat: &Mat) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        for i in 0..mat.nrows() {
            for j in 0..mat.ncols() {
                if j > 0 {
                    out.write_all(b",")?;
                }
                out.write_all(fmt_sig(mat[(i, j)]).as_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))
}

/// Reads comma-separated numeric rows; all rows must have equal length.
pub fn load_matrix_csv(path: &Path) -> Result<Mat> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    malformed("csv", path, format!("line {}: bad number {tok:?}", ln + 1))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(malformed(
                    "csv",
                    path,
                    format!(
                        "line {}: {} columns, expected {}",
                        ln + 1,
                        row.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(malformed("csv", path, "no data rows"));
    }
    Ok(Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]))
}

/// Writes scores as CSV: an `h x w` grid when the raster shape is known,
/// otherwise one score per line.
pub fn save_scores_csv(path: &Path, scores: &ScoreField) -> Result<()> {
    let vals = scores.scores();
    let (h, w) = scores.shape().unwrap_or((vals.len(), 1));
    save_matrix_csv(path, &Mat::from_fn(h, w, |i, j| vals[i * w + j]))
}

/// Reads scores written by [`save_scores_csv`]; a multi-column file
/// recovers its raster shape.
pub fn load_scores_csv(path: &Path) -> Result<ScoreField> {
    let mat = load_matrix_csv(path)?;
    let (h, w) = (mat.nrows(), mat.ncols());
    let flat: Vec<f64> = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .map(|(i, j)| mat[(i, j)])
        .collect();
    let shape = if w > 1 { Some((h, w)) } else { None };
    ScoreField::new(flat, shape)
}

// ---------------------------------------------------------------- BSQ

fn hdr_path(path: &Path) -> PathBuf {
    path.with_extension("hdr")
}

/// Writes an `n x d` matrix as band-sequential `float32` raster data with a
/// text header sidecar (`.hdr`). Requires `shape` with `h * w == n`.
pub fn save_bsq(path: &Path, mat: &Mat, shape: (usize, usize)) -> Result<()> {
    let (h, w) = shape;
    let (n, d) = (mat.nrows(), mat.ncols());
    if h * w != n {
        return Err(Error::shape(
            format!("{h} x {w} = {} pixels", h * w),
            format!("{n} rows"),
        ));
    }
    let header = format!("height = {h}\nwidth = {w}\nbands = {d}\ndtype = float32\n");
    let hdr = hdr_path(path);
    std::fs::write(&hdr, header).map_err(io_err(&hdr))?;

    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for b in 0..d {
        for p in 0..n {
            out.write_all(&(mat[(p, b)] as f32).to_le_bytes())
                .map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}

/// Reads a BSQ cube and its header sidecar into pixel-major rows.
pub fn load_bsq(path: &Path) -> Result<DataMatrix> {
    let hdr = hdr_path(path);
    let text = std::fs::read_to_string(&hdr).map_err(io_err(&hdr))?;
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            // Unknown keys are deliberately ignored.
            fields.insert(key.trim(), value.trim());
        }
    }
    let dim = |key: &str| -> Result<usize> {
        fields
            .get(key)
            .ok_or_else(|| malformed("bsq header", &hdr, format!("missing {key}")))?
            .parse::<usize>()
            .map_err(|_| malformed("bsq header", &hdr, format!("bad {key} value")))
    };
    let (h, w, d) = (dim("height")?, dim("width")?, dim("bands")?);
    match fields.get("dtype") {
        Some(&"float32") => {}
        Some(other) => {
            return Err(malformed(
                "bsq header",
                &hdr,
                format!("unsupported dtype {other:?}"),
            ))
        }
        None => return Err(malformed("bsq header", &hdr, "missing dtype")),
    }

    let raw = std::fs::read(path).map_err(io_err(path))?;
    let n = h * w;
    let expect = n * d * 4;
    if raw.len() != expect {
        return Err(malformed(
            "bsq",
            path,
            format!("{} bytes, expected {expect} for {h}x{w}x{d} float32", raw.len()),
        ));
    }
    let mut values = Mat::zeros(n, d);
    for b in 0..d {
        for p in 0..n {
            let at = (b * n + p) * 4;
            let v = f32::from_le_bytes(raw[at..at + 4].try_into().expect("length checked"));
            if !v.is_finite() {
                return Err(malformed(
                    "bsq",
                    path,
                    format!("non-finite sample at pixel {p}, band {b}"),
                ));
            }
            values[(p, b)] = v as f64;
        }
    }
    DataMatrix::new(values, Some((h, w)))
}

/// Writes scores as a one-band BSQ cube (shape falls back to one row).
pub fn save_scores_bsq(path: &Path, scores: &ScoreField) -> Result<()> {
    let vals = scores.scores();
    let shape = scores.shape().unwrap_or((1, vals.len()));
    save_bsq(
        path,
        &Mat::from_fn(vals.len(), 1, |i, _| vals[i]),
        shape,
    )
}

/// Reads scores from a one-band BSQ cube.
pub fn load_scores_bsq(path: &Path) -> Result<ScoreField> {
    let data = load_bsq(path)?;
    if data.d() != 1 {
        return Err(malformed(
            "bsq",
            path,
            format!("expected one band of scores, found {}", data.d()),
        ));
    }
    let vals: Vec<f64> = (0..data.n()).map(|i| data.values()[(i, 0)]).collect();
    ScoreField::new(vals, data.shape())
}

// ---------------------------------------------------------------- PGM

/// Writes a boolean raster as a binary `P5` PGM (255 = anomaly).
pub fn save_pgm(path: &Path, labels: &[bool], shape: Option<(usize, usize)>) -> Result<()> {
    let (h, w) = shape.unwrap_or((1, labels.len()));
    if h * w != labels.len() {
        return Err(Error::shape(
            format!("{h} x {w} = {} pixels", h * w),
            format!("{} labels", labels.len()),
        ));
    }
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        write!(out, "P5\n{w} {h}\n255\n")?;
        let bytes: Vec<u8> = labels.iter().map(|&l| if l { 255 } else { 0 }).collect();
        out.write_all(&bytes)?;
        out.flush()
    };
    write(&mut out).map_err(io_err(path))
}

/// Reads an ASCII (`P2`) or binary (`P5`) PGM; nonzero samples are
/// anomalies.
pub fn load_pgm(path: &Path) -> Result<GroundTruthMask> {
    let raw = std::fs::read(path).map_err(io_err(path))?;
    let mut pos = 0usize;

    // PGM headers are whitespace-separated tokens with '#' comments.
    let mut token = |raw: &[u8]| -> Result<String> {
        loop {
            while pos < raw.len() && raw[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < raw.len() && raw[pos] == b'#' {
                while pos < raw.len() && raw[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("pgm", path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&raw[start..pos]).into_owned())
    };

    let magic = token(&raw)?;
    if magic != "P2" && magic != "P5" {
        return Err(malformed(
            "pgm",
            path,
            format!("unsupported magic {magic:?}"),
        ));
    }
    let parse_dim = |tok: String| -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| malformed("pgm", path, format!("bad header number {tok:?}")))
    };
    let w = parse_dim(token(&raw)?)?;
    let h = parse_dim(token(&raw)?)?;
    let maxval = parse_dim(token(&raw)?)?;
    if w == 0 || h == 0 {
        return Err(malformed("pgm", path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(malformed("pgm", path, format!("bad maxval {maxval}")));
    }
    let n = h * w;

    let labels: Vec<bool> = if magic == "P2" {
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let v = parse_dim(token(&raw)?)?;
            labels.push(v != 0);
        }
        labels
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let wide = maxval > 255;
        let bytes = n * if wide { 2 } else { 1 };
        if raw.len() < pos + bytes {
            return Err(malformed(
                "pgm",
                path,
                format!("raster has {} bytes, expected {bytes}", raw.len().saturating_sub(pos)),
            ));
        }
        if wide {
            raw[pos..pos + bytes]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) != 0)
                .collect()
        } else {
            raw[pos..pos + bytes].iter().map(|&b| b != 0).collect()
        }
    };
    GroundTruthMask::new(labels, Some((h, w)))
}

// ---------------------------------------------------------------- scenes

/// On-disk image encodings understood by [`load_scene`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Csv,
    Bsq,
}

impl std::fmt::Display for ImageFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ImageFormat::Csv => "csv",
            ImageFormat::Bsq => "bsq",
        })
    }
}

impl std::str::FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ImageFormat::Csv),
            "bsq" => Ok(ImageFormat::Bsq),
            other => Err(Error::invalid(format!(
                "unknown image format {other:?}; expected csv or bsq"
            ))),
        }
    }
}

/// Loads an image (and optional mask) from disk.
///
/// CSV images carry no raster shape of their own, so `dims` supplies it;
/// for BSQ the header is authoritative and `dims`, if given, must agree.
/// The mask must cover exactly one label per pixel.
pub fn load_scene(
    image: &Path,
    format: ImageFormat,
    dims: Option<(usize, usize)>,
    mask: Option<&Path>,
) -> Result<SceneBundle> {
    let image_data = match format {
        ImageFormat::Csv => DataMatrix::new(load_matrix_csv(image)?, dims)?,
        ImageFormat::Bsq => {
            let data = load_bsq(image)?;
            if let (Some(want), Some(have)) = (dims, data.shape()) {
                if want != have {
                    return Err(Error::shape(
                        format!("{} x {}", want.0, want.1),
                        format!("{} x {} from header", have.0, have.1),
                    ));
                }
            }
            data
        }
    };
    let truth = match mask {
        None => None,
        Some(mask_path) => {
            let mask = load_pgm(mask_path)?;
            if mask.len() != image_data.n() {
                return Err(Error::shape(
                    format!("{} pixel labels", image_data.n()),
                    format!("{}", mask.len()),
                ));
            }
            if let (Some(a), Some(b)) = (image_data.shape(), mask.shape()) {
                if a != b {
                    return Err(Error::shape(
                        format!("mask of {} x {}", a.0, a.1),
                        format!("{} x {}", b.0, b.1),
                    ));
                }
            }
            Some(mask)
        }
    };
    let provenance = format!(
        "loaded {format} image {:?}{}",
        image,
        mask.map(|m| format!(" with mask {m:?}")).unwrap_or_default()
    );
    Ok(SceneBundle {
        image: image_data,
        truth,
        provenance,
    })
}

// ---------------------------------------------------------------- run records

/// Everything needed to reproduce a run bit-exactly: the library version,
/// the resolved detector configuration, the scene parameters (for synthetic
/// scenes) and the input paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorSpec>,
    /// Bandwidth actually used, after resolving a median-heuristic request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
    /// Input paths and other free-form settings.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn new(command: impl Into<String>) -> Self {
        RunRecord {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            detector: None,
            resolved_sigma: None,
            scene: None,
            inputs: BTreeMap::new(),
        }
    }
}

/// Writes a run record as pretty-printed JSON.
pub fn save_run_record(path: &Path, record: &RunRecord) -> Result<()> {
    let json = serde_json::to_string_pretty(record)
        .map_err(|e| malformed("json", path, e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(io_err(path))
}

/// Reads a run record back.
pub fn load_run_record(path: &Path) -> Result<RunRecord> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut text = String::new();
    BufReader::new(file)
        .read_to_string(&mut text)
        .map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| malformed("json", path, e.to_string()))
}
