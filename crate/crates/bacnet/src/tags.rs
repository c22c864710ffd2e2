//! Tag-length-value encoding of BACnet primitive data.

use crate::BacnetError;

pub mod app {
    pub const NULL: u8 = 0;
    pub const BOOLEAN: u8 = 1;
    pub const UNSIGNED: u8 = 2;
    pub const SIGNED: u8 = 3;
    pub const REAL: u8 = 4;
    pub const DOUBLE: u8 = 5;
    pub const OCTET_STRING: u8 = 6;
    pub const CHARACTER_STRING: u8 = 7;
    pub const BIT_STRING: u8 = 8;
    pub const ENUMERATED: u8 = 9;
    pub const DATE: u8 = 10;
    pub const TIME: u8 = 11;
    pub const OBJECT_ID: u8 = 12;
}

/// UTF-8 character set marker of a character string.
const CHARSET_UTF8: u8 = 0;

/// An application-tagged primitive value.
#[derive(Debug, Clone, PartialEq)]
pub enum AppValue {
    Boolean(bool),
    Unsigned(u64),
    Real(f32),
    CharacterString(String),
    Enumerated(u32),
    ObjectId(u32),
    /// Any other application tag; the value is skipped.
    Unsupported(u8),
}

#[derive(Debug, Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

fn unsigned_bytes(v: u32) -> Vec<u8> {
    let bytes = v.to_be_bytes();
    let skip = bytes.iter().take(3).take_while(|b| **b == 0).count();
    bytes[skip..].to_vec()
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn push(&mut self, b: u8) {
        self.buf.push(b);
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    fn tag(&mut self, number: u8, context: bool, len: u32) {
        let class = if context { 0x08 } else { 0x00 };
        let (first_num, ext_num) = if number < 15 { (number, None) } else { (15, Some(number)) };
        let lvt = if len <= 4 { len as u8 } else { 5 };
        self.buf.push(first_num << 4 | class | lvt);
        if let Some(n) = ext_num {
            self.buf.push(n);
        }
        if len > 4 {
            if len <= 253 {
                self.buf.push(len as u8);
            } else if len <= 0xFFFF {
                self.buf.push(254);
                self.buf.extend_from_slice(&(len as u16).to_be_bytes());
            } else {
                self.buf.push(255);
                self.buf.extend_from_slice(&len.to_be_bytes());
            }
        }
    }

    pub fn opening(&mut self, number: u8) {
        self.buf.push(number << 4 | 0x0E);
    }

    pub fn closing(&mut self, number: u8) {
        self.buf.push(number << 4 | 0x0F);
    }

    pub fn context_unsigned(&mut self, number: u8, v: u32) {
        let bytes = unsigned_bytes(v);
        self.tag(number, true, bytes.len() as u32);
        self.buf.extend_from_slice(&bytes);
    }

    pub fn context_object_id(&mut self, number: u8, raw: u32) {
        self.tag(number, true, 4);
        self.buf.extend_from_slice(&raw.to_be_bytes());
    }

    pub fn app_enumerated(&mut self, v: u32) {
        let bytes = unsigned_bytes(v);
        self.tag(app::ENUMERATED, false, bytes.len() as u32);
        self.buf.extend_from_slice(&bytes);
    }

    pub fn app_value(&mut self, v: &AppValue) {
        match v {
            AppValue::Boolean(b) => self.tag(app::BOOLEAN, false, *b as u32),
            AppValue::Unsigned(u) => {
                let bytes = u.to_be_bytes();
                let skip = bytes.iter().take(7).take_while(|b| **b == 0).count();
                self.tag(app::UNSIGNED, false, (8 - skip) as u32);
                self.buf.extend_from_slice(&bytes[skip..]);
            }
            AppValue::Real(r) => {
                self.tag(app::REAL, false, 4);
                self.buf.extend_from_slice(&r.to_be_bytes());
            }
            AppValue::CharacterString(s) => {
                self.tag(app::CHARACTER_STRING, false, s.len() as u32 + 1);
                self.buf.push(CHARSET_UTF8);
                self.buf.extend_from_slice(s.as_bytes());
            }
            AppValue::Enumerated(e) => self.app_enumerated(*e),
            AppValue::ObjectId(raw) => {
                self.tag(app::OBJECT_ID, false, 4);
                self.buf.extend_from_slice(&raw.to_be_bytes());
            }
            AppValue::Unsupported(_) => self.tag(app::NULL, false, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagKind {
    Application,
    Context,
    Opening,
    Closing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tag {
    pub number: u8,
    pub kind: TagKind,
    /// Content length, or the value itself for application booleans.
    pub len: u32,
}

/// Bounds-checked cursor over an encoded buffer. No method panics on short
/// or malformed input.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed(what: &str) -> BacnetError {
    BacnetError::MalformedTag(what.to_string())
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub fn remaining(&self) -> usize {
        self.buf.len().saturating_sub(self.pos)
    }

    pub fn u8(&mut self) -> Result<u8, BacnetError> {
        let b = *self.buf.get(self.pos).ok_or_else(|| malformed("unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], BacnetError> {
        if self.remaining() < n {
            return Err(malformed("content runs past the end of the datagram"));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn peek_tag(&self) -> Result<Tag, BacnetError> {
        self.clone().tag()
    }

    pub fn tag(&mut self) -> Result<Tag, BacnetError> {
        let first = self.u8()?;
        let mut number = first >> 4;
        if number == 15 {
            number = self.u8()?;
        }
        let context = first & 0x08 != 0;
        let lvt = first & 0x07;
        if context && lvt == 6 {
            return Ok(Tag { number, kind: TagKind::Opening, len: 0 });
        }
        if context && lvt == 7 {
            return Ok(Tag { number, kind: TagKind::Closing, len: 0 });
        }
        let len = if lvt == 5 {
            match self.u8()? {
                254 => {
                    let b = self.take(2)?;
                    u16::from_be_bytes([b[0], b[1]]) as u32
                }
                255 => {
                    let b = self.take(4)?;
                    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
                }
                n => n as u32,
            }
        } else {
            lvt as u32
        };
        let kind = if context { TagKind::Context } else { TagKind::Application };
        Ok(Tag { number, kind, len })
    }

    fn unsigned_content(&mut self, len: u32) -> Result<u64, BacnetError> {
        if len == 0 || len > 8 {
            return Err(malformed("unsigned length outside 1..=8"));
        }
        Ok(self
            .take(len as usize)?
            .iter()
            .fold(0u64, |acc, b| acc << 8 | *b as u64))
    }

    pub fn expect_opening(&mut self, number: u8) -> Result<(), BacnetError> {
        let t = self.tag()?;
        if t.kind != TagKind::Opening || t.number != number {
            return Err(malformed(&format!("expected opening tag {number}")));
        }
        Ok(())
    }

    pub fn expect_closing(&mut self, number: u8) -> Result<(), BacnetError> {
        let t = self.tag()?;
        if t.kind != TagKind::Closing || t.number != number {
            return Err(malformed(&format!("expected closing tag {number}")));
        }
        Ok(())
    }

    pub fn is_closing(&self, number: u8) -> bool {
        matches!(self.peek_tag(), Ok(Tag { kind: TagKind::Closing, number: n, .. }) if n == number)
    }

    pub fn is_opening(&self, number: u8) -> bool {
        matches!(self.peek_tag(), Ok(Tag { kind: TagKind::Opening, number: n, .. }) if n == number)
    }

    pub fn is_context(&self, number: u8) -> bool {
        matches!(self.peek_tag(), Ok(Tag { kind: TagKind::Context, number: n, .. }) if n == number)
    }

    pub fn context_unsigned(&mut self, number: u8) -> Result<u32, BacnetError> {
        let t = self.tag()?;
        if t.kind != TagKind::Context || t.number != number {
            return Err(malformed(&format!("expected context tag {number}")));
        }
        if t.len > 4 {
            return Err(malformed("context unsigned wider than 32 bits"));
        }
        Ok(self.unsigned_content(t.len)? as u32)
    }

    pub fn context_object_id(&mut self, number: u8) -> Result<u32, BacnetError> {
        let t = self.tag()?;
        if t.kind != TagKind::Context || t.number != number || t.len != 4 {
            return Err(malformed(&format!("expected object identifier in context tag {number}")));
        }
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn app_enumerated(&mut self) -> Result<u32, BacnetError> {
        match self.app_value()? {
            AppValue::Enumerated(e) => Ok(e),
            _ => Err(malformed("expected enumerated value")),
        }
    }

    /// Reads one application-tagged value. Tags outside the supported set
    /// are skipped and reported as [`AppValue::Unsupported`].
    pub fn app_value(&mut self) -> Result<AppValue, BacnetError> {
        let t = self.tag()?;
        if t.kind != TagKind::Application {
            return Err(malformed("expected application tag"));
        }
        Ok(match t.number {
            app::BOOLEAN => match t.len {
                0 => AppValue::Boolean(false),
                1 => AppValue::Boolean(true),
                _ => return Err(malformed("boolean value outside 0..=1")),
            },
            app::UNSIGNED => AppValue::Unsigned(self.unsigned_content(t.len)?),
            app::REAL => {
                if t.len != 4 {
                    return Err(malformed("real must be 4 bytes"));
                }
                let b = self.take(4)?;
                AppValue::Real(f32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            }
            app::CHARACTER_STRING => {
                if t.len == 0 {
                    return Err(malformed("character string without charset"));
                }
                let content = self.take(t.len as usize)?;
                if content[0] != CHARSET_UTF8 {
                    return Ok(AppValue::Unsupported(app::CHARACTER_STRING));
                }
                match std::str::from_utf8(&content[1..]) {
                    Ok(s) => AppValue::CharacterString(s.to_string()),
                    Err(_) => return Err(malformed("character string is not UTF-8")),
                }
            }
            app::ENUMERATED => {
                if t.len > 4 {
                    return Err(malformed("enumerated wider than 32 bits"));
                }
                AppValue::Enumerated(self.unsigned_content(t.len)? as u32)
            }
            app::OBJECT_ID => {
                if t.len != 4 {
                    return Err(malformed("object identifier must be 4 bytes"));
                }
                let b = self.take(4)?;
                AppValue::ObjectId(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            }
            other => {
                self.take(t.len as usize)?;
                AppValue::Unsupported(other)
            }
        })
    }
}
