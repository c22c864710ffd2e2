//! Historical block reads.
//!
//! Some energy controllers only expose past data on request: the client
//! writes the wanted date into a date register block, polls a status register
//! until the controller reports the data as ready, and then reads the data
//! registers.

use std::time::Duration;

use chrono::{Datelike, NaiveDate};
use gateway_core::{DataPoint, Timestamp};
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::device::{read_bindings, ModbusBinding, ModbusDevice};
use crate::frame::RegisterKind;
use crate::{ModbusClient, ModbusError};

/// How the requested date is laid out in the date registers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateEncoding {
    /// Three registers: year − 2000, month, day.
    #[default]
    RegisterPerField,
    /// Three bytes packed big-endian into two registers: `[yy mm] [dd 00]`.
    PackedBytes,
}

impl DateEncoding {
    pub fn encode(self, date: NaiveDate) -> Result<Vec<u16>, ModbusError> {
        let year = date.year() - 2000;
        if !(0..=255).contains(&year) {
            return Err(ModbusError::InvalidDate(date.to_string()));
        }
        let (y, m, d) = (year as u16, date.month() as u16, date.day() as u16);
        Ok(match self {
            DateEncoding::RegisterPerField => vec![y, m, d],
            DateEncoding::PackedBytes => vec![y << 8 | m, d << 8],
        })
    }

    pub fn decode(self, words: &[u16]) -> Option<NaiveDate> {
        let (y, m, d) = match (self, words) {
            (DateEncoding::RegisterPerField, [y, m, d, ..]) => (*y as i32, *m as u32, *d as u32),
            (DateEncoding::PackedBytes, [a, b, ..]) => {
                ((a >> 8) as i32, (a & 0xFF) as u32, (b >> 8) as u32)
            }
            _ => return None,
        };
        NaiveDate::from_ymd_opt(2000 + y, m, d)
    }

    pub fn register_count(self) -> u16 {
        match self {
            DateEncoding::RegisterPerField => 3,
            DateEncoding::PackedBytes => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistoricalConfig {
    pub date_addr: u16,
    pub ready_addr: u16,
    pub ready_value: u16,
    /// Base address added to every data binding address.
    pub data_addr: u16,
    pub data_bindings: Vec<ModbusBinding>,
    pub poll_interval_ms: u64,
    pub max_polls: u32,
    pub date_encoding: DateEncoding,
}

impl Default for HistoricalConfig {
    fn default() -> Self {
        HistoricalConfig {
            date_addr: 0x1000,
            ready_addr: 0x1003,
            ready_value: 1,
            data_addr: 0,
            data_bindings: Vec::new(),
            poll_interval_ms: 500,
            max_polls: 20,
            date_encoding: DateEncoding::RegisterPerField,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HistoricalBlock {
    pub date: NaiveDate,
    pub points: Vec<DataPoint>,
    /// Status register reads issued before the data was ready.
    pub status_polls: u32,
    pub data_requests: u32,
}

/// Runs the write-date / wait-ready / read-data handshake.
pub async fn read_historical_block(
    client: &mut ModbusClient,
    device: &ModbusDevice,
    date: NaiveDate,
    cfg: &HistoricalConfig,
) -> Result<HistoricalBlock, ModbusError> {
    if cfg.data_bindings.is_empty() {
        return Err(ModbusError::CountOutOfRange { count: 0 });
    }
    let words = cfg.date_encoding.encode(date)?;
    match client.write_registers(cfg.date_addr, &words).await {
        Ok(()) => {}
        Err(ModbusError::ExceptionResponse { code, .. }) => {
            return Err(ModbusError::WriteRejected { code })
        }
        Err(e) => return Err(e),
    }

    let mut status_polls = 0;
    loop {
        if status_polls >= cfg.max_polls {
            return Err(ModbusError::ReadyTimeout {
                polls: status_polls,
            });
        }
        if status_polls > 0 {
            tokio::time::sleep(Duration::from_millis(cfg.poll_interval_ms)).await;
        }
        status_polls += 1;
        let status = client
            .read_registers(RegisterKind::Holding, cfg.ready_addr, 1)
            .await?;
        debug!(poll = status_polls, status = status[0], "historical status");
        if status[0] == cfg.ready_value {
            break;
        }
    }

    let (results, data_requests) = read_bindings(client, &cfg.data_bindings, cfg.data_addr).await;
    let at = Timestamp::now();
    let date_tag = date.format("%Y-%m-%d").to_string();
    let mut points = Vec::with_capacity(cfg.data_bindings.len());
    for (binding, result) in cfg.data_bindings.iter().zip(results) {
        let value = result.expect("every binding belongs to a group")?;
        let mut dp = device.make_point(binding, value, at);
        dp.tags.retain(|(k, _)| k != "date");
        dp.tags.push(("date".into(), date_tag.clone()));
        points.push(dp);
    }
    Ok(HistoricalBlock {
        date,
        points,
        status_polls,
        data_requests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn date_encodings() {
        let date = NaiveDate::from_ymd_opt(2023, 1, 15).unwrap();
        assert_eq!(DateEncoding::RegisterPerField.encode(date).unwrap(), vec![23, 1, 15]);
        assert_eq!(DateEncoding::PackedBytes.encode(date).unwrap(), vec![0x1701, 0x0F00]);
        for enc in [DateEncoding::RegisterPerField, DateEncoding::PackedBytes] {
            assert_eq!(enc.decode(&enc.encode(date).unwrap()), Some(date));
        }
        let too_old = NaiveDate::from_ymd_opt(1999, 12, 31).unwrap();
        assert!(DateEncoding::RegisterPerField.encode(too_old).is_err());
    }

    #[test]
    fn defaults() {
        let cfg = HistoricalConfig::default();
        assert_eq!(cfg.date_addr, 0x1000);
        assert_eq!(cfg.ready_addr, 0x1003);
        assert_eq!((cfg.ready_value, cfg.poll_interval_ms, cfg.max_polls), (1, 500, 20));
    }
}
