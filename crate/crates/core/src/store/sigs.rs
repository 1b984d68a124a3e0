//! SIGS v1 raster stacks.
//!
//! ```text
//! magic   "SIGS"
//! u16     version (1)
//! u16     channel count
//! u32     rows, u32 cols
//! [10]    ISO date "YYYY-MM-DD"
//! u16 len + UTF-8 region name
//! per channel: u16 len + UTF-8 name
//! channels × rows × cols little-endian f32
//! ```

use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::raster::Raster;

const MAGIC: &[u8; 4] = b"SIGS";
const VERSION: u16 = 1;
const QUIET_NAN: u32 = 0x7fc0_0000;

/// One date's multi-channel raster.
#[derive(Clone, Debug, PartialEq)]
pub struct GridStack {
    pub region: String,
    pub date: NaiveDate,
    pub channels: Vec<String>,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl GridStack {
    pub fn new(
        region: impl Into<String>,
        date: NaiveDate,
        channels: Vec<String>,
        rows: usize,
        cols: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != channels.len() * rows * cols {
            return Err(Error::Shape(format!(
                "{} channels of {rows}×{cols} need {} values, got {}",
                channels.len(),
                channels.len() * rows * cols,
                data.len()
            )));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(Error::Config(format!("duplicate channel `{c}`")));
            }
        }
        Ok(Self {
            region: region.into(),
            date,
            channels,
            rows,
            cols,
            data,
        })
    }

    pub fn from_rasters(
        region: impl Into<String>,
        date: NaiveDate,
        planes: Vec<(String, Raster)>,
    ) -> Result<Self> {
        let (rows, cols) = planes.first().map(|(_, r)| (r.rows, r.cols)).unwrap_or((0, 0));
        let mut names = Vec::with_capacity(planes.len());
        let mut data = Vec::with_capacity(planes.len() * rows * cols);
        for (name, r) in planes {
            if (r.rows, r.cols) != (rows, cols) {
                return Err(Error::Shape(format!("channel `{name}` extent differs")));
            }
            names.push(name);
            data.extend_from_slice(&r.data);
        }
        Self::new(region, date, names, rows, cols, data)
    }

    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn plane(&self, index: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.channel_index(name).is_some()
    }

    pub fn channel(&self, name: &str) -> Result<&[f32]> {
        self.channel_index(name)
            .map(|i| self.plane(i))
            .ok_or_else(|| Error::MissingChannel(name.to_string()))
    }

    pub fn raster(&self, name: &str) -> Result<Raster> {
        Raster::new(self.rows, self.cols, self.channel(name)?.to_vec())
    }

    /// Copy with every NaN replaced by the canonical quiet NaN.
    pub fn nan_normalized(&self) -> GridStack {
        let mut s = self.clone();
        for v in &mut s.data {
            if v.is_nan() {
                *v = f32::from_bits(QUIET_NAN);
            }
        }
        s
    }
}

pub fn encode(stack: &GridStack) -> Result<Vec<u8>> {
    let too_long = |what: &str| Error::format(what, "longer than 65535 bytes");
    let mut buf = Vec::with_capacity(64 + stack.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let nch = u16::try_from(stack.channels.len()).map_err(|_| too_long("channels"))?;
    buf.extend_from_slice(&nch.to_le_bytes());
    buf.extend_from_slice(&(stack.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(stack.cols as u32).to_le_bytes());
    buf.extend_from_slice(stack.date.format("%Y-%m-%d").to_string().as_bytes());
    for (field, s) in std::iter::once(("region", &stack.region))
        .chain(stack.channels.iter().map(|c| ("channel name", c)))
    {
        let len = u16::try_from(s.len()).map_err(|_| too_long(field))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(s.as_bytes());
    }
    for v in &stack.data {
        let bits = if v.is_nan() { QUIET_NAN } else { v.to_bits() };
        buf.extend_from_slice(&bits.to_le_bytes());
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                field,
                format!(
                    "truncated: need {n} bytes at offset {}, {} remain",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn string(&mut self, field: &str) -> Result<String> {
        let n = self.u16(field)? as usize;
        let raw = self.take(n, field)?;
        String::from_utf8(raw.to_vec()).map_err(|e| Error::format(field, e.to_string()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<GridStack> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format("magic", "expected \"SIGS\""));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let nch = r.u16("channel count")? as usize;
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let raw_date = r.take(10, "date")?;
    let date = std::str::from_utf8(raw_date)
        .ok()
        .and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
        .ok_or_else(|| Error::format("date", "expected YYYY-MM-DD"))?;
    let region = r.string("region")?;
    let channels = (0..nch)
        .map(|_| r.string("channel name"))
        .collect::<Result<Vec<_>>>()?;
    let n = nch
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format("payload", "size overflow"))?;
    let payload = r.take(n, "payload")?;
    if r.pos != bytes.len() {
        return Err(Error::format(
            "payload",
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    GridStack::new(region, date, channels, rows, cols, data)
}

pub fn write_stack(stack: &GridStack, path: &Path) -> Result<()> {
    std::fs::write(path, encode(stack)?).map_err(|e| Error::io(path, e))
}

pub fn read_stack(path: &Path) -> Result<GridStack> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Reads a stack and checks it has the expected extent.
pub fn read_stack_expect(path: &Path, rows: usize, cols: usize) -> Result<GridStack> {
    let s = read_stack(path)?;
    if s.rows != rows {
        return Err(Error::format("rows", format!("expected {rows}, file has {}", s.rows)));
    }
    if s.cols != cols {
        return Err(Error::format("cols", format!("expected {cols}, file has {}", s.cols)));
    }
    Ok(s)
}
