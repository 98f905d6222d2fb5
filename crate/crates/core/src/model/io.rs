//! Design matrix files: header-free CSV (one row per observation) and the
//! LBLB1 binary layout.
//!
//! LBLB1: the five bytes `LBLB1`, then `n` and `p` as little-endian `u64`,
//! then the `n * p` entries as little-endian `f64` in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"LBLB1";

pub fn read_csv_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    parse_csv_matrix(&text)
}

pub fn parse_csv_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("line {}: {:?}: {e}", lineno + 1, f.trim()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "line {} has {} fields, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix file".into()));
    }
    let (n, p) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

pub fn write_csv_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn encode_binary(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 16 + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 21 || &bytes[..5] != MAGIC {
        return Err(Error::Parse("missing LBLB1 header".into()));
    }
    let n = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let p = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    let body = &bytes[21..];
    let expected = n
        .checked_mul(p)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::Parse("LBLB1 dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(Error::Parse(format!(
            "LBLB1 body has {} bytes, expected {expected} for {n} x {p}",
            body.len()
        )));
    }
    let mut m = DMatrix::zeros(n, p);
    for (idx, chunk) in body.chunks_exact(8).enumerate() {
        m[(idx / p, idx % p)] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(m)
}

pub fn write_binary_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_binary(m))?;
    Ok(())
}

/// Load either format, sniffing the magic bytes.
pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Parse(format!("{} is neither LBLB1 nor UTF-8 CSV", path.display())))?;
        parse_csv_matrix(&text)
    }
}

/// A vector stored as one value per line (or a single CSV row).
pub fn load_vector(path: &Path) -> Result<DVector<f64>> {
    let m = load_matrix(path)?;
    if m.ncols() == 1 || m.nrows() == 1 {
        Ok(DVector::from_iterator(m.len(), m.iter().copied()))
    } else {
        Err(Error::Parse(format!(
            "{} holds a {} x {} matrix, expected a vector",
            path.display(),
            m.nrows(),
            m.ncols()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_header_layout() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, -2.5]);
        let b = encode_binary(&m);
        assert_eq!(&b[..5], b"LBLB1");
        assert_eq!(u64::from_le_bytes(b[5..13].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[13..21].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[21..29].try_into().unwrap()), 1.0);
        assert_eq!(b.len(), 21 + 16);
    }

    #[test]
    fn truncated_binary_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = encode_binary(&m);
        assert!(decode_binary(&b[..b.len() - 1]).is_err());
        assert!(decode_binary(b"LBLB").is_err());
    }

    #[test]
    fn ragged_csv_rejected() {
        assert!(parse_csv_matrix("1,2\n3\n").is_err());
        assert!(parse_csv_matrix("1,x\n").is_err());
        assert!(parse_csv_matrix("\n").is_err());
    }

    proptest! {
        #[test]
        fn both_formats_round_trip(n in 1usize..6, p in 1usize..6, seed in any::<u64>()) {
            let m = DMatrix::from_fn(n, p, |i, j| {
                let h = seed.wrapping_mul(6364136223846793005).wrapping_add((i * 31 + j) as u64);
                (h as f64 / u64::MAX as f64 - 0.5) * 1e3
            });
            prop_assert_eq!(&decode_binary(&encode_binary(&m)).unwrap(), &m);
            let mut text = String::new();
            for i in 0..n {
                let row: Vec<String> = (0..p).map(|j| format!("{}", m[(i, j)])).collect();
                text.push_str(&row.join(","));
                text.push('\n');
            }
            prop_assert_eq!(&parse_csv_matrix(&text).unwrap(), &m);
        }
    }
}
