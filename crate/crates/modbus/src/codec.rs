use gateway_core::Value;
use serde::{Deserialize, Serialize};

use crate::ModbusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    U16,
    I16,
    U32,
    I32,
    F32,
}

impl DataType {
    /// Number of 16-bit registers the type occupies.
    pub fn span(self) -> u16 {
        match self {
            DataType::U16 | DataType::I16 => 1,
            DataType::U32 | DataType::I32 | DataType::F32 => 2,
        }
    }
}

impl std::str::FromStr for DataType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "u16" => Ok(DataType::U16),
            "i16" => Ok(DataType::I16),
            "u32" => Ok(DataType::U32),
            "i32" => Ok(DataType::I32),
            "f32" => Ok(DataType::F32),
            other => Err(format!("unknown register type `{other}`")),
        }
    }
}

/// Order of the two registers of a 32-bit value. Bytes inside a register are
/// always big-endian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordOrder {
    #[default]
    Big,
    Little,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegisterCodec {
    pub datatype: DataType,
    #[serde(default)]
    pub word_order: WordOrder,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

impl RegisterCodec {
    pub fn new(datatype: DataType) -> Self {
        RegisterCodec {
            datatype,
            word_order: WordOrder::Big,
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn scaled(datatype: DataType, scale: f64) -> Self {
        RegisterCodec {
            scale,
            ..Self::new(datatype)
        }
    }

    pub fn with_word_order(mut self, order: WordOrder) -> Self {
        self.word_order = order;
        self
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn span(&self) -> u16 {
        self.datatype.span()
    }

    /// Raw register value before scale and offset.
    pub fn raw(&self, words: &[u16]) -> Result<f64, ModbusError> {
        if words.len() != self.span() as usize {
            return Err(ModbusError::SpanMismatch {
                expected: self.span(),
                got: words.len(),
            });
        }
        let combined = || -> u32 {
            let (hi, lo) = match self.word_order {
                WordOrder::Big => (words[0], words[1]),
                WordOrder::Little => (words[1], words[0]),
            };
            (hi as u32) << 16 | lo as u32
        };
        Ok(match self.datatype {
            DataType::U16 => words[0] as f64,
            DataType::I16 => words[0] as i16 as f64,
            DataType::U32 => combined() as f64,
            DataType::I32 => combined() as i32 as f64,
            DataType::F32 => f32::from_bits(combined()) as f64,
        })
    }
}

/// Decodes `words` as `raw × scale + offset`.
pub fn decode_registers(codec: &RegisterCodec, words: &[u16]) -> Result<Value, ModbusError> {
    let value = codec.raw(words)? * codec.scale + codec.offset;
    if !value.is_finite() {
        return Err(ModbusError::NonFiniteValue);
    }
    Ok(Value::Real(value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_big_word_order() {
        let v = decode_registers(&RegisterCodec::new(DataType::F32), &[0x4049, 0x0FDB]).unwrap();
        // IEEE-754 single 0x40490FDB
        assert_eq!(v, Value::Real(f32::from_bits(0x4049_0FDB) as f64));
        let little = RegisterCodec::new(DataType::F32).with_word_order(WordOrder::Little);
        assert_eq!(
            decode_registers(&little, &[0x0FDB, 0x4049]).unwrap(),
            Value::Real(f32::from_bits(0x4049_0FDB) as f64)
        );
    }

    #[test]
    fn signed_16() {
        assert_eq!(
            decode_registers(&RegisterCodec::new(DataType::I16), &[0xFFFF]).unwrap(),
            Value::Real(-1.0)
        );
        assert_eq!(
            decode_registers(&RegisterCodec::new(DataType::U16), &[0xFFFF]).unwrap(),
            Value::Real(65535.0)
        );
    }

    #[test]
    fn scaled_u32() {
        // 0x000186A0 = 100000
        let codec = RegisterCodec::scaled(DataType::U32, 0.001);
        assert_eq!(decode_registers(&codec, &[0x0001, 0x86A0]).unwrap(), Value::Real(100.0));
    }

    #[test]
    fn i32_and_offset() {
        let codec = RegisterCodec::scaled(DataType::I32, 0.5).with_offset(10.0);
        // -4 * 0.5 + 10
        assert_eq!(decode_registers(&codec, &[0xFFFF, 0xFFFC]).unwrap(), Value::Real(8.0));
    }

    #[test]
    fn span_is_checked() {
        assert_eq!(
            decode_registers(&RegisterCodec::new(DataType::U32), &[1]),
            Err(ModbusError::SpanMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn nan_never_leaves_the_decoder() {
        assert_eq!(
            decode_registers(&RegisterCodec::new(DataType::F32), &[0x7FC0, 0x0000]),
            Err(ModbusError::NonFiniteValue)
        );
    }
}
