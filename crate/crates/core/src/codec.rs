//! Little-endian reader/writer shared by the binary formats.

use crate::error::FormatError;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn with_header(magic: &[u8; 4], version: u16) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u16(version);
        w
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        self.buf.reserve(vs.len() * 4);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version, leaving the cursor after them.
    pub fn with_header(buf: &'a [u8], magic: &[u8; 4], version: u16) -> Result<Self, FormatError> {
        let mut r = Reader { buf, pos: 0 };
        let found: [u8; 4] = r.take(4)?.try_into().unwrap();
        if &found != magic {
            return Err(FormatError::BadMagic {
                expected: *magic,
                found,
            });
        }
        let v = r.u16()?;
        if v != version {
            return Err(FormatError::UnsupportedVersion {
                found: v,
                expected: version,
            });
        }
        Ok(r)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| FormatError::Inconsistent(format!("element count {n} overflows")))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(self) -> Result<(), FormatError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(FormatError::Inconsistent(format!("{n} trailing bytes"))),
        }
    }
}

/// Converts a header dimension to usize, rejecting zero.
pub(crate) fn dim(v: u32, what: &str) -> Result<usize, FormatError> {
    if v == 0 {
        return Err(FormatError::Inconsistent(format!("{what} is zero")));
    }
    Ok(v as usize)
}

pub(crate) fn to_u32(v: usize, what: &str) -> u32 {
    u32::try_from(v).unwrap_or_else(|_| panic!("{what} = {v} does not fit in u32"))
}
