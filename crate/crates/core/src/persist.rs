//! Little-endian binary helpers shared by the factor and checkpoint files.

use std::io::{self, Read, Write};

use ndarray::{Array1, Array2};

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_len<R: Read>(r: &mut R, limit: u64) -> io::Result<usize> {
    let n = read_u64(r)?;
    if n > limit {
        return Err(invalid(format!("length {n} exceeds limit {limit}")));
    }
    Ok(n as usize)
}

pub(crate) fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> io::Result<()> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(invalid(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

/// Row count, column count, then row-major values.
pub(crate) fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> io::Result<()> {
    write_u64(w, m.nrows() as u64)?;
    write_u64(w, m.ncols() as u64)?;
    for v in m.iter() {
        write_f64(w, *v)?;
    }
    Ok(())
}

const MAX_DIM: u64 = 1 << 32;

pub(crate) fn read_matrix<R: Read>(r: &mut R) -> io::Result<Array2<f64>> {
    let rows = read_len(r, MAX_DIM)?;
    let cols = read_len(r, MAX_DIM)?;
    let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 26));
    for _ in 0..rows * cols {
        data.push(read_f64(r)?);
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| invalid(e.to_string()))
}

pub(crate) fn write_vector<W: Write>(w: &mut W, v: &Array1<f64>) -> io::Result<()> {
    write_u64(w, v.len() as u64)?;
    for x in v.iter() {
        write_f64(w, *x)?;
    }
    Ok(())
}

pub(crate) fn read_vector<R: Read>(r: &mut R) -> io::Result<Array1<f64>> {
    let n = read_len(r, MAX_DIM)?;
    (0..n).map(|_| read_f64(r)).collect::<io::Result<Vec<_>>>().map(Array1::from)
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> io::Result<()> {
    write_u64(w, v.len() as u64)?;
    v.iter().try_for_each(|x| write_f64(w, *x))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R) -> io::Result<Vec<f64>> {
    let n = read_len(r, MAX_DIM)?;
    (0..n).map(|_| read_f64(r)).collect()
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> io::Result<String> {
    let n = read_len(r, MAX_DIM)?;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| invalid(e.to_string()))
}
