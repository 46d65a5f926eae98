//! `DSQ1` checkpoint files: magic, record count, then per tensor its name,
//! rank, extents and raw values. All integers are u32 little-endian and all
//! values are IEEE-754 f32 little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};

pub const MAGIC: &[u8; 4] = b"DSQ1";

pub type Record = (String, Vec<usize>, Vec<f32>);

pub fn write_records<W: Write>(mut w: W, records: &[Record]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, shape, data) in records {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Checkpoint(format!(
                "record `{name}` has shape {shape:?} but {} values",
                data.len()
            )));
        }
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(data.len() * 4);
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(TensorError::Checkpoint(format!(
                "truncated while reading {what} at byte offset {} (need {n} bytes, {} left)",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<Record>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(4, "magic")? != MAGIC {
        return Err(TensorError::Checkpoint(
            "bad magic at byte offset 0, expected `DSQ1`".into(),
        ));
    }
    let count = c.u32("record count")? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32("name length")? as usize;
        let name = String::from_utf8(c.take(name_len, "name")?.to_vec()).map_err(|_| {
            TensorError::Checkpoint(format!("name before byte offset {} is not UTF-8", c.pos))
        })?;
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n * 4, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((name, shape, data));
    }
    if c.pos != bytes.len() {
        return Err(TensorError::Checkpoint(format!(
            "{} trailing bytes after last record",
            bytes.len() - c.pos
        )));
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_records(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    read_records(std::fs::File::open(path)?)
}
