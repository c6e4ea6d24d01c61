//! Big-endian, length-prefixed field encoding shared by the signed messages.

use super::EnvelopeError;

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// `len u32 | bytes`
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.u32(bytes.len() as u32).raw(bytes)
    }

    /// `count u32 | f64 bit patterns`
    pub fn reals(&mut self, values: &[f64]) -> &mut Self {
        self.u32(values.len() as u32);
        for v in values {
            self.u64(v.to_bits());
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    rest: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { rest: bytes }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], EnvelopeError> {
        if self.rest.len() < n {
            return Err(EnvelopeError::Malformed("truncated message"));
        }
        let (head, tail) = self.rest.split_at(n);
        self.rest = tail;
        Ok(head)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], EnvelopeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, EnvelopeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, EnvelopeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, EnvelopeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], EnvelopeError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn reals(&mut self) -> Result<Vec<f64>, EnvelopeError> {
        let count = self.u32()? as usize;
        if count > self.rest.len() / 8 {
            return Err(EnvelopeError::Malformed("truncated message"));
        }
        (0..count)
            .map(|_| Ok(f64::from_bits(self.u64()?)))
            .collect()
    }

    /// Count prefix for a list whose items are at least `item_len` bytes.
    pub fn count(&mut self, item_len: usize) -> Result<usize, EnvelopeError> {
        let count = self.u32()? as usize;
        if count > self.rest.len() / item_len.max(1) {
            return Err(EnvelopeError::Malformed("truncated message"));
        }
        Ok(count)
    }

    pub fn finish(self) -> Result<(), EnvelopeError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(EnvelopeError::Malformed("trailing bytes"))
        }
    }
}
