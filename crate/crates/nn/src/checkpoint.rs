//! SIGW v1 parameter files.
//!
//! ```text
//! magic   "SIGW"
//! u16     version (1)
//! u16     flags   (bit 0: Adam state present)
//! u32     entry count
//! entry*  u8 kind (0 parameter, 1 buffer)
//!         u16 name length, UTF-8 name
//!         u8 rank, rank × u32 dims
//!         values as little-endian f32
//!         [parameters with bit 0 set] u64 step, m values, v values
//! ```

use std::fs;
use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::{AdamState, ParamStore};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SIGW";
const VERSION: u16 = 1;
const FLAG_ADAM: u16 = 1;

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    buf.reserve(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_entry(buf: &mut Vec<u8>, kind: u8, name: &str, t: &Tensor) {
    buf.push(kind);
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(t.shape().len() as u8);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    put_f32s(buf, t.data());
}

/// Serializes all parameters and buffers, optionally with optimizer state.
pub fn encode(store: &ParamStore, with_adam: bool) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let flags = if with_adam { FLAG_ADAM } else { 0 };
    buf.extend_from_slice(&flags.to_le_bytes());
    let count = store.params().len() + store.buffers().len();
    buf.extend_from_slice(&(count as u32).to_le_bytes());
    for p in store.params() {
        put_entry(&mut buf, 0, &p.name, &p.value);
        if with_adam {
            buf.extend_from_slice(&p.adam.step.to_le_bytes());
            put_f32s(&mut buf, &p.adam.m);
            put_f32s(&mut buf, &p.adam.v);
        }
    }
    for b in store.buffers() {
        put_entry(&mut buf, 1, &b.name, &b.value);
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Format {
                field,
                msg: format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, field: &'static str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| NnError::Format {
            field,
            msg: "size overflow".into(),
        })?, field)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses SIGW bytes into a fresh store (entries in file order).
pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(NnError::Format {
            field: "magic",
            msg: "expected \"SIGW\"".into(),
        });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(NnError::Format {
            field: "version",
            msg: format!("unsupported version {version}"),
        });
    }
    let with_adam = r.u16("flags")? & FLAG_ADAM != 0;
    let count = r.u32("count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let kind = r.u8("kind")?;
        let name_len = r.u16("name")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|e| NnError::Format {
                field: "name",
                msg: e.to_string(),
            })?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("shape").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        let value = Tensor::new(&shape, r.f32s(n, "values")?)?;
        match kind {
            0 => {
                let id = store.add_param(name, value)?;
                if with_adam {
                    let step = r.u64("adam.step")?;
                    let m = r.f32s(n, "adam.m")?;
                    let v = r.f32s(n, "adam.v")?;
                    store.param_mut(id).adam = AdamState { m, v, step };
                }
            }
            1 => {
                store.add_buffer(name, value)?;
            }
            k => {
                return Err(NnError::Format {
                    field: "kind",
                    msg: format!("unknown entry kind {k}"),
                })
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(NnError::Format {
            field: "payload",
            msg: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path, with_adam: bool) -> Result<()> {
    fs::write(path, encode(store, with_adam))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    decode(&fs::read(path)?)
}

/// Loads values (and, when present, Adam state) into an existing store,
/// requiring identical names and shapes.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let src = load(path)?;
    if src.params().len() != store.params().len() || src.buffers().len() != store.buffers().len() {
        return Err(NnError::Format {
            field: "count",
            msg: format!(
                "file has {}+{} entries, model has {}+{}",
                src.params().len(),
                src.buffers().len(),
                store.params().len(),
                store.buffers().len()
            ),
        });
    }
    store.copy_values_from(&src)?;
    for p in store.params_mut() {
        let s = src.params().iter().find(|q| q.name == p.name).expect("checked by copy");
        if s.adam.m.len() == p.value.len() {
            p.adam = s.adam.clone();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut store = ParamStore::new();
        store.add_param("a", Tensor::full(&[2, 2], 1.0)).unwrap();
        let bytes = encode(&store, true);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(NnError::Format { field: "magic", .. })));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(NnError::Format { field: "adam.v", .. })
        ));
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(matches!(decode(&ver), Err(NnError::Format { field: "version", .. })));
    }
}
