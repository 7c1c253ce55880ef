//! Dense matrix container format and atomic file writing.
//!
//! The binary container starts with the magic bytes `MAT1`, followed by the
//! row and column counts as little-endian `u64`, followed by the matrix
//! entries as little-endian `f64` in row-major order. Round-trips are
//! bit-exact. All writers in this crate stage output in a temporary file in
//! the destination directory and atomically rename it into place, so readers
//! never observe partially written files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MAT1";

/// Writes `out` via a closure into a temporary file next to `path`, then
/// atomically renames it into place.
pub fn atomic_write_text<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir),
        None => tempfile::NamedTempFile::new(),
    }
    .map_err(|e| Error::io(path, e))?;
    {
        let mut out = BufWriter::new(tmp.as_file_mut());
        write(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path)
        .map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Writes a dense matrix in the binary container format (atomic).
pub fn write_matrix(path: &Path, matrix: &ArrayView2<f64>) -> Result<()> {
    let (rows, cols) = matrix.dim();
    atomic_write_text(path, |out| {
        out.write_all(MAGIC)?;
        out.write_all(&(rows as u64).to_le_bytes())?;
        out.write_all(&(cols as u64).to_le_bytes())?;
        for row in matrix.rows() {
            for &x in row {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    })
}

/// Reads a dense matrix from the binary container format.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::format(path, "file too short for header"))?;
    if &magic != MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic bytes {magic:02x?}, expected {MAGIC:02x?}"),
        ));
    }

    let mut word = [0u8; 8];
    reader
        .read_exact(&mut word)
        .map_err(|_| Error::format(path, "file too short for row count"))?;
    let rows = u64::from_le_bytes(word) as usize;
    reader
        .read_exact(&mut word)
        .map_err(|_| Error::format(path, "file too short for column count"))?;
    let cols = u64::from_le_bytes(word) as usize;

    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(path, "dimension overflow"))?;
    let mut buf = vec![0u8; n * 8];
    reader
        .read_exact(&mut buf)
        .map_err(|_| Error::format(path, "file truncated before end of payload"))?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after payload"));
    }

    let data: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Writes a vector as a 1 x V matrix.
pub fn write_vector(path: &Path, v: &Array1<f64>) -> Result<()> {
    let m = v.view().insert_axis(ndarray::Axis(0));
    write_matrix(path, &m)
}

/// Reads a vector stored as a 1 x V or V x 1 matrix.
pub fn read_vector(path: &Path) -> Result<Array1<f64>> {
    let m = read_matrix(path)?;
    let (r, c) = m.dim();
    if r != 1 && c != 1 {
        return Err(Error::format(
            path,
            format!("expected a vector-shaped matrix, found {r} x {c}"),
        ));
    }
    Ok(Array1::from_iter(m.iter().copied()))
}
