//! Canonical field-tagged binary encoding shared by credentials and the
//! gateway protocol.
//!
//! A message is a flat sequence of fields. Each field is
//! `tag (1 byte) | length (4 bytes, big-endian) | value (length bytes)`.
//! Encoders emit fields in strictly ascending tag order; repeated fields
//! (lists) share one tag and keep list order. Decoders reject out-of-order
//! tags and trailing bytes, and skip unknown tags, so adding a new optional
//! field with a fresh tag never breaks an old reader. The full layout is
//! documented in `docs/wire-format.md`.

use std::fmt;

/// Fixed-width scalar layouts used inside field values.
/// u16/u32/u64 are big-endian; booleans are a single 0/1 byte.
const LEN_BYTES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireError {
    /// Field value or frame extends past the end of the buffer.
    Truncated,
    /// Tags not strictly ascending, or a repeated group interleaved.
    TagOrder { tag: u8 },
    /// A required field is missing.
    MissingField { tag: u8 },
    /// Value length does not match the expected scalar width.
    BadScalar { tag: u8, expected: usize, got: usize },
    /// Value is not valid UTF-8.
    BadString { tag: u8 },
    /// Enum discriminant out of range.
    BadEnum { tag: u8, value: u64 },
    /// Trailing bytes after the last field.
    TrailingBytes,
}

impl fmt::Display for WireError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WireError::Truncated => write!(f, "truncated field data"),
            WireError::TagOrder { tag } => write!(f, "field tag {tag} out of order"),
            WireError::MissingField { tag } => write!(f, "missing required field tag {tag}"),
            WireError::BadScalar { tag, expected, got } => {
                write!(f, "field tag {tag}: expected {expected}-byte scalar, got {got}")
            }
            WireError::BadString { tag } => write!(f, "field tag {tag}: invalid utf-8"),
            WireError::BadEnum { tag, value } => {
                write!(f, "field tag {tag}: enum value {value} out of range")
            }
            WireError::TrailingBytes => write!(f, "trailing bytes after last field"),
        }
    }
}

impl std::error::Error for WireError {}

/// Canonical encoder. Callers must emit fields in ascending tag order;
/// this is asserted in debug builds.
#[derive(Default)]
pub struct Enc {
    buf: Vec<u8>,
    last_tag: Option<u8>,
}

impl Enc {
    pub fn new() -> Self {
        Self::default()
    }

    fn field(&mut self, tag: u8, value: &[u8]) {
        if let Some(last) = self.last_tag {
            debug_assert!(tag >= last, "fields must be emitted in ascending tag order");
        }
        self.last_tag = Some(tag);
        self.buf.push(tag);
        self.buf
            .extend_from_slice(&u32::try_from(value.len()).expect("field too large").to_be_bytes());
        self.buf.extend_from_slice(value);
    }

    pub fn u8(&mut self, tag: u8, v: u8) -> &mut Self {
        self.field(tag, &[v]);
        self
    }

    pub fn u16(&mut self, tag: u8, v: u16) -> &mut Self {
        self.field(tag, &v.to_be_bytes());
        self
    }

    pub fn u32(&mut self, tag: u8, v: u32) -> &mut Self {
        self.field(tag, &v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, tag: u8, v: u64) -> &mut Self {
        self.field(tag, &v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, tag: u8, v: bool) -> &mut Self {
        self.field(tag, &[u8::from(v)]);
        self
    }

    pub fn bytes(&mut self, tag: u8, v: &[u8]) -> &mut Self {
        self.field(tag, v);
        self
    }

    pub fn string(&mut self, tag: u8, v: &str) -> &mut Self {
        self.field(tag, v.as_bytes());
        self
    }

    /// Optional field: absent values are simply omitted.
    pub fn opt_string(&mut self, tag: u8, v: Option<&str>) -> &mut Self {
        if let Some(v) = v {
            self.string(tag, v);
        }
        self
    }

    pub fn opt_bytes(&mut self, tag: u8, v: Option<&[u8]>) -> &mut Self {
        if let Some(v) = v {
            self.bytes(tag, v);
        }
        self
    }

    /// Repeated field: one tagged entry per list element, in list order.
    pub fn list<T>(&mut self, tag: u8, items: &[T], mut f: impl FnMut(&T) -> Vec<u8>) -> &mut Self {
        for item in items {
            self.field(tag, &f(item));
        }
        self
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

/// Canonical decoder: a forward-only cursor over tagged fields.
pub struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
    last_tag: Option<u8>,
}

/// One peeked field: tag, value slice, and the cursor position after it.
type Peeked<'a> = Option<(u8, &'a [u8], usize)>;

impl<'a> Dec<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0, last_tag: None }
    }

    /// Peeks the next field without consuming it.
    fn peek(&self) -> Result<Peeked<'a>, WireError> {
        if self.pos == self.buf.len() {
            return Ok(None);
        }
        if self.buf.len() - self.pos < 1 + LEN_BYTES {
            return Err(WireError::Truncated);
        }
        let tag = self.buf[self.pos];
        let mut len_bytes = [0u8; LEN_BYTES];
        len_bytes.copy_from_slice(&self.buf[self.pos + 1..self.pos + 1 + LEN_BYTES]);
        let len = u32::from_be_bytes(len_bytes) as usize;
        let start = self.pos + 1 + LEN_BYTES;
        if self.buf.len() - start < len {
            return Err(WireError::Truncated);
        }
        Ok(Some((tag, &self.buf[start..start + len], start + len)))
    }

    fn advance(&mut self, tag: u8, next_pos: usize) -> Result<(), WireError> {
        if let Some(last) = self.last_tag {
            // Strictly ascending except for repeated groups, which reuse a tag.
            if tag < last {
                return Err(WireError::TagOrder { tag });
            }
        }
        self.last_tag = Some(tag);
        self.pos = next_pos;
        Ok(())
    }

    /// Finds field `tag`, skipping unknown (smaller) tags along the way.
    /// Returns None if the next known field has a larger tag or input ended.
    fn seek(&mut self, tag: u8) -> Result<Option<&'a [u8]>, WireError> {
        loop {
            match self.peek()? {
                None => return Ok(None),
                Some((t, value, next)) => {
                    if t == tag {
                        self.advance(t, next)?;
                        return Ok(Some(value));
                    }
                    if t > tag {
                        return Ok(None);
                    }
                    // Unknown or superseded tag: skip for forward compatibility.
                    self.advance(t, next)?;
                }
            }
        }
    }

    pub fn opt_raw(&mut self, tag: u8) -> Result<Option<&'a [u8]>, WireError> {
        self.seek(tag)
    }

    pub fn raw(&mut self, tag: u8) -> Result<&'a [u8], WireError> {
        self.seek(tag)?.ok_or(WireError::MissingField { tag })
    }

    fn scalar<const N: usize>(&mut self, tag: u8) -> Result<[u8; N], WireError> {
        let raw = self.raw(tag)?;
        if raw.len() != N {
            return Err(WireError::BadScalar { tag, expected: N, got: raw.len() });
        }
        let mut out = [0u8; N];
        out.copy_from_slice(raw);
        Ok(out)
    }

    pub fn u8(&mut self, tag: u8) -> Result<u8, WireError> {
        Ok(self.scalar::<1>(tag)?[0])
    }

    pub fn u16(&mut self, tag: u8) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.scalar(tag)?))
    }

    pub fn u32(&mut self, tag: u8) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.scalar(tag)?))
    }

    pub fn u64(&mut self, tag: u8) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.scalar(tag)?))
    }

    pub fn bool(&mut self, tag: u8) -> Result<bool, WireError> {
        match self.u8(tag)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(WireError::BadEnum { tag, value: u64::from(v) }),
        }
    }

    pub fn bytes(&mut self, tag: u8) -> Result<Vec<u8>, WireError> {
        Ok(self.raw(tag)?.to_vec())
    }

    pub fn array<const N: usize>(&mut self, tag: u8) -> Result<[u8; N], WireError> {
        self.scalar(tag)
    }

    pub fn string(&mut self, tag: u8) -> Result<String, WireError> {
        std::str::from_utf8(self.raw(tag)?)
            .map(str::to_owned)
            .map_err(|_| WireError::BadString { tag })
    }

    pub fn opt_string(&mut self, tag: u8) -> Result<Option<String>, WireError> {
        match self.seek(tag)? {
            None => Ok(None),
            Some(raw) => std::str::from_utf8(raw)
                .map(|s| Some(s.to_owned()))
                .map_err(|_| WireError::BadString { tag }),
        }
    }

    pub fn opt_bytes(&mut self, tag: u8) -> Result<Option<Vec<u8>>, WireError> {
        Ok(self.seek(tag)?.map(<[u8]>::to_vec))
    }

    pub fn opt_u64(&mut self, tag: u8) -> Result<Option<u64>, WireError> {
        match self.seek(tag)? {
            None => Ok(None),
            Some(raw) => {
                if raw.len() != 8 {
                    return Err(WireError::BadScalar { tag, expected: 8, got: raw.len() });
                }
                let mut b = [0u8; 8];
                b.copy_from_slice(raw);
                Ok(Some(u64::from_be_bytes(b)))
            }
        }
    }

    /// Collects a contiguous repeated group under one tag.
    pub fn list<T>(
        &mut self,
        tag: u8,
        mut f: impl FnMut(&[u8]) -> Result<T, WireError>,
    ) -> Result<Vec<T>, WireError> {
        let mut out = Vec::new();
        while let Some((t, value, next)) = self.peek()? {
            if t != tag {
                if out.is_empty() && t < tag {
                    // Skip unknown tags preceding the group.
                    self.advance(t, next)?;
                    continue;
                }
                break;
            }
            self.advance(t, next)?;
            out.push(f(value)?);
        }
        Ok(out)
    }

    /// Asserts the cursor consumed every field (unknown trailing tags are
    /// tolerated: they are skipped, not errors).
    pub fn finish(mut self) -> Result<(), WireError> {
        while let Some((t, _, next)) = self.peek()? {
            self.advance(t, next)?;
        }
        if self.pos != self.buf.len() {
            return Err(WireError::TrailingBytes);
        }
        Ok(())
    }
}

/// Types with a canonical wire form.
pub trait WireEncode {
    fn encode(&self) -> Vec<u8>;
}

/// Types decodable from their canonical wire form.
pub trait WireDecode: Sized {
    fn decode(bytes: &[u8]) -> Result<Self, WireError>;
}
