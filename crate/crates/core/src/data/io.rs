//! Binary dataset format.
//!
//! ```text
//! magic   b"FUSL1"
//! header  n, dim, n_class, n_super      (u32 LE each)
//! records n × (class u32 LE, superclass u32 LE, dim × f64 LE)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DATASET_MAGIC: &[u8; 5] = b"FUSL1";

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Invalid(format!("{what} {v} does not fit in u32")))
}

pub fn write_dataset(mut w: impl Write, ds: &Dataset) -> Result<()> {
    let mut buf = Vec::with_capacity(21 + ds.len() * (8 + 8 * ds.dim()));
    buf.extend_from_slice(DATASET_MAGIC);
    for (v, what) in [
        (ds.len(), "n"),
        (ds.dim(), "dim"),
        (ds.n_class(), "n_class"),
        (ds.n_super(), "n_super"),
    ] {
        buf.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    for i in 0..ds.len() {
        buf.extend_from_slice(&to_u32(ds.class_labels()[i], "class")?.to_le_bytes());
        buf.extend_from_slice(&to_u32(ds.superclass_labels()[i], "superclass")?.to_le_bytes());
        for v in ds.x().row(i) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_dataset(mut r: impl Read) -> Result<Dataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < DATASET_MAGIC.len() || &bytes[..5] != DATASET_MAGIC {
        return Err(Error::BadMagic { expected: "FUSL1" });
    }
    let mut pos = 5;
    let mut next_u32 = |what: &str| -> Result<u32> {
        let b = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| Error::Truncated(format!("while reading {what}")))?;
        pos += 4;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    };
    let n = next_u32("n")? as usize;
    let dim = next_u32("dim")? as usize;
    let n_class = next_u32("n_class")? as usize;
    let n_super = next_u32("n_super")? as usize;
    let record = 8 + 8 * dim;
    let expected = 21usize
        .checked_add(n.checked_mul(record).ok_or_else(|| Error::Malformed("header sizes overflow".into()))?)
        .ok_or_else(|| Error::Malformed("header sizes overflow".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated(format!(
            "header promises {n} records of {dim} features ({expected} bytes), file has {}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - expected)));
    }

    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().expect("4 bytes")) as usize;
    let mut classes = Vec::with_capacity(n);
    let mut supers = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let p = 21 + i * record;
        classes.push(u32_at(p));
        supers.push(u32_at(p + 4));
        data.extend(
            bytes[p + 8..p + record]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
        );
    }
    let x = Matrix::new(n, dim, data)?;
    Dataset::new(x, classes, supers, n_class, n_super).map_err(|e| match e {
        Error::Invalid(msg) => Error::Malformed(msg),
        other => other,
    })
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, ds)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(fs::read(path)?.as_slice())
}
