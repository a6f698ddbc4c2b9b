//! Binary snapshots of a TT field.
//!
//! Layout (little endian): `b"TT3F"`, `u32` version, `u64` Nx, Nv, r1, r2,
//! then for every spatial point core 1 (`Nv × r1`), core 2 (`r1 × Nv × r2`,
//! first index fastest) and core 3 (`r2 × Nv`), column-major `f64`. Cores are
//! written in form I.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tt::{Core2, Form, TensorTrain3};

pub const MAGIC: &[u8; 4] = b"TT3F";
pub const VERSION: u32 = 1;

pub fn encode(field: &[TensorTrain3]) -> Result<Vec<u8>> {
    let (nv, (r1, r2)) = match field.first() {
        Some(f) => (f.nv(), f.ranks()),
        None => (0, (0, 0)),
    };
    let mut out = Vec::with_capacity(36 + field.len() * 8 * nv * (r1 + r1 * r2 + r2));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for n in [field.len(), nv, r1, r2] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for (j, f) in field.iter().enumerate() {
        if f.nv() != nv || f.ranks() != (r1, r2) {
            return Err(Error::Snapshot(format!(
                "point {j} has Nv {} ranks {:?}, expected {nv} {:?}",
                f.nv(),
                f.ranks(),
                (r1, r2)
            )));
        }
        let g = f.to_form_i();
        for x in g.core1.iter().chain(g.core2.as_slice()).chain(g.core3.iter()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Snapshot(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Snapshot(format!("size {v} out of range")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Snapshot("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<TensorTrain3>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let (nx, nv, r1, r2) = (c.u64()?, c.u64()?, c.u64()?, c.u64()?);
    let per_point = nv
        .checked_mul(r1 + r1 * r2 + r2)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Snapshot("size overflow".into()))?;
    if nx.checked_mul(per_point) != Some(buf.len() - c.pos) {
        return Err(Error::Snapshot(format!(
            "payload is {} bytes, header implies {nx} × {per_point}",
            buf.len() - c.pos
        )));
    }
    (0..nx)
        .map(|_| {
            let core1 = DMatrix::from_vec(nv, r1, c.f64s(nv * r1)?);
            let core2 = Core2::from_column_major(r1, nv, r2, c.f64s(r1 * nv * r2)?)?;
            let core3 = DMatrix::from_vec(r2, nv, c.f64s(r2 * nv)?);
            let mut f = TensorTrain3::new(core1, core2, core3)?;
            f.form = Form::I;
            if f.orthonormality_residual() > 1e-10 {
                f.form = Form::General;
            }
            Ok(f)
        })
        .collect()
}

pub fn write_snapshot(path: &Path, field: &[TensorTrain3]) -> Result<()> {
    let bytes = encode(field)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Vec<TensorTrain3>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
