//! File formats tying the pipeline together: the binary raster
//! container, the plume tile container, external prediction sets and
//! GeoJSON record emission.

pub mod external;
pub mod geojson;
pub mod raster;
pub mod tiles;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{format}: bad magic")]
    BadMagic { format: &'static str },
    #[error("{format}: truncated at {what}")]
    Truncated { format: &'static str, what: &'static str },
    #[error("{format}: {reason}")]
    Corrupt { format: &'static str, reason: String },
    #[error("external prediction set: missing file for head {head:?}, slot {slot}")]
    MissingSlotFile { head: String, slot: usize },
    #[error("external prediction set: {reason}")]
    BadManifest { reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

// Shared little-endian cursor helpers.

pub(crate) struct Reader<'a> {
    format: &'static str,
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(format: &'static str, buf: &'a [u8]) -> Self {
        Self { format, buf }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len()
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() < n {
            return Err(FormatError::Truncated {
                format: self.format,
                what,
            });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn magic(&mut self, expected: &[u8; 8]) -> Result<(), FormatError> {
        let got = self.take(8, "magic")?;
        if got != expected {
            return Err(FormatError::BadMagic {
                format: self.format,
            });
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &'static str) -> Result<f64, FormatError> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, FormatError> {
        let b = self.take(8 * n, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f32s_as_f64(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, FormatError> {
        let b = self.take(4 * n, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    pub fn corrupt(&self, reason: impl Into<String>) -> FormatError {
        FormatError::Corrupt {
            format: self.format,
            reason: reason.into(),
        }
    }
}

pub(crate) fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}
