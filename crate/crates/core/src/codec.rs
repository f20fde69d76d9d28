//! Little-endian cursor helpers shared by the FMAP, INDX and DESC codecs.

/// Reader over a byte slice that tracks its offset for error reporting.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

/// The stream ended at `offset`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Short {
    pub offset: usize,
}

#[derive(Debug)]
pub(crate) enum StrError {
    Short(Short),
    Utf8 { offset: usize },
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], Short> {
        if self.remaining() < n {
            return Err(Short { offset: self.pos });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], Short> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, Short> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16, Short> {
        self.array().map(u16::from_le_bytes)
    }

    pub fn u32(&mut self) -> Result<u32, Short> {
        self.array().map(u32::from_le_bytes)
    }

    pub fn u64(&mut self) -> Result<u64, Short> {
        self.array().map(u64::from_le_bytes)
    }

    /// Length-prefixed (u16) UTF-8 string.
    pub fn str16(&mut self) -> Result<String, StrError> {
        let len = self.u16().map_err(StrError::Short)? as usize;
        let start = self.pos;
        let raw = self.take(len).map_err(StrError::Short)?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|_| StrError::Utf8 { offset: start })
    }

    /// `n` little-endian binary32 values.
    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, Short> {
        let byte_len = n.checked_mul(4).ok_or(Short { offset: self.pos })?;
        let raw = self.take(byte_len)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes a u16 length prefix and the UTF-8 bytes. Returns `false` when the
/// string does not fit a u16 length.
#[must_use]
pub(crate) fn put_str16(out: &mut Vec<u8>, s: &str) -> bool {
    let Ok(len) = u16::try_from(s.len()) else {
        return false;
    };
    put_u16(out, len);
    out.extend_from_slice(s.as_bytes());
    true
}
