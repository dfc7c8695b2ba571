//! CSV and PGM input/output.
//!
//! Matrices and vectors are stored as header-less, row-major CSV with `.` as
//! decimal separator. Images are grayscale PGM (P2 or P5).

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::{Matrix, Vector};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

fn parse_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, IoError> {
    let file = std::fs::File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>, IoError> {
    let mut rows = Vec::new();
    for (line, record) in reader(path)?.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(path, format!("line {}: cannot parse {f:?} as a number", line + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a dense matrix; every row must have the same number of fields.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix, IoError> {
    let path = path.as_ref();
    let rows = read_rows(path)?;
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(k) = rows.iter().position(|r| r.len() != ncols) {
        return Err(parse_err(
            path,
            format!("line {}: expected {ncols} fields, found {}", k + 1, rows[k].len()),
        ));
    }
    Ok(Matrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.into_iter().flatten(),
    ))
}

/// Reads a vector stored either as a single row or as a single column.
pub fn read_vector_csv(path: impl AsRef<Path>) -> Result<Vector, IoError> {
    let path = path.as_ref();
    let m = read_matrix_csv(path)?;
    if m.ncols() == 1 || m.nrows() == 1 {
        Ok(Vector::from_iterator(m.len(), m.transpose().iter().copied()))
    } else {
        Err(parse_err(
            path,
            format!("expected a single row or column, found {}x{}", m.nrows(), m.ncols()),
        ))
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, IoError> {
    let file = std::fs::File::create(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    parse_err(path, e.to_string())
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:e}")))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a vector as a single column.
pub fn write_vector_csv(path: impl AsRef<Path>, v: &Vector) -> Result<(), IoError> {
    write_matrix_csv(path, &Matrix::from_column_slice(v.len(), 1, v.as_slice()))
}

/// Grayscale image with intensities in `[0, 255]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

/// Reads a P2 or P5 PGM file.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image, IoError> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|source| IoError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Image {
        height: h as usize,
        width: w as usize,
        pixels: img.into_raw().into_iter().map(f64::from).collect(),
    })
}

/// Writes a binary (P5) PGM, clamping values to `[0, 255]`.
pub fn write_pgm(path: impl AsRef<Path>, img: &Image) -> Result<(), IoError> {
    let path = path.as_ref();
    let raw: Vec<u8> = img.pixels.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| parse_err(path, "pixel count does not match dimensions"))?;
    buf.save_with_format(path, image::ImageFormat::Pnm)
        .map_err(|source| IoError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads `(index, block-id)` pairs and returns the blocks ordered by id.
/// Indices are zero-based and must cover `0..dim` exactly once.
pub fn read_blocks_csv(path: impl AsRef<Path>, dim: usize) -> Result<Vec<Vec<usize>>, IoError> {
    let path = path.as_ref();
    let rows = read_rows(path)?;
    let mut pairs = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        let ok = r.len() == 2 && r.iter().all(|v| *v >= 0.0 && v.fract() == 0.0);
        if !ok {
            return Err(parse_err(path, format!("line {}: expected two non-negative integers", k + 1)));
        }
        pairs.push((r[0] as usize, r[1] as usize));
    }
    blocks_from_pairs(&pairs, dim).map_err(|m| parse_err(path, m))
}

pub(crate) fn blocks_from_pairs(pairs: &[(usize, usize)], dim: usize) -> Result<Vec<Vec<usize>>, String> {
    let mut seen = vec![false; dim];
    let mut ids: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut blocks = vec![Vec::new(); ids.len()];
    for &(i, id) in pairs {
        if i >= dim {
            return Err(format!("index {i} out of range for dimension {dim}"));
        }
        if seen[i] {
            return Err(format!("index {i} assigned twice"));
        }
        seen[i] = true;
        let b = ids.binary_search(&id).expect("id collected above");
        blocks[b].push(i);
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(format!("index {i} not assigned to any block"));
    }
    for b in &mut blocks {
        b.sort_unstable();
    }
    Ok(blocks)
}
