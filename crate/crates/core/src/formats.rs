//! File formats.
//!
//! - item bank: one JSON array of [`BankRecord`]
//! - probability surfaces: JSON lines of [`ProbabilitySurface`]
//! - history: JSON lines of [`HistoricalSession`]
//! - session events: JSON lines of [`SessionEvent`]
//! - exposure table: CSV `item_type,item_id,selections,share`

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::bank::{BankRecord, ItemBank};
use crate::calibration::ProbabilitySurface;
use crate::error::{Error, Result};
use crate::session::SessionEvent;
use crate::simulation::{HistoricalSession, SimulationReport};

/// Parses JSON lines, skipping blank lines. Errors carry the 1-based line number.
pub fn read_json_lines<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Malformed(format!("line {}: {e}", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_json_lines<T: Serialize, W: Write>(mut writer: W, values: &[T]) -> Result<()> {
    for v in values {
        serde_json::to_writer(&mut writer, v)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_surfaces<R: BufRead>(reader: R) -> Result<Vec<ProbabilitySurface>> {
    let surfaces: Vec<ProbabilitySurface> = read_json_lines(reader)?;
    for (i, s) in surfaces.iter().enumerate() {
        s.validate()
            .map_err(|e| Error::Malformed(format!("surface {}: {e}", i + 1)))?;
    }
    Ok(surfaces)
}

pub fn read_history<R: BufRead>(reader: R) -> Result<Vec<HistoricalSession>> {
    let history: Vec<HistoricalSession> = read_json_lines(reader)?;
    for s in &history {
        s.validate()?;
    }
    Ok(history)
}

pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<SessionEvent>> {
    read_json_lines(reader)
}

pub fn parse_bank(json: &str) -> Result<ItemBank> {
    let records: Vec<BankRecord> = serde_json::from_str(json)?;
    ItemBank::from_records(records)
}

pub fn bank_to_json(bank: &ItemBank) -> Result<String> {
    Ok(serde_json::to_string_pretty(&bank.records())?)
}

/// Exposure table with one row per item, grouped by item type.
pub fn exposure_csv(report: &SimulationReport) -> String {
    let mut out = String::from("item_type,item_id,selections,share\n");
    for (ty, counts) in &report.exposure {
        let total: u64 = counts.values().sum();
        for (id, c) in counts {
            let share = if total > 0 { *c as f64 / total as f64 } else { 0.0 };
            let _ = writeln!(out, "{ty},{id},{c},{share}");
        }
    }
    out
}
