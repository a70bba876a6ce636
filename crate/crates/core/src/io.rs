//! CSV ingestion and dataset / truth writers.
//!
//! Input contract: a header row, a positive `time` column, a 0/1 `event`
//! column, and numeric covariates in every other column. `NA` or an empty
//! field marks a missing value; rows with any missing field are dropped.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulation::SimTruth;
use crate::survival::SurvivalDataset;

/// Parsed dataset plus the row bookkeeping of the complete-case filter.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: SurvivalDataset,
    pub raw_rows: usize,
    pub complete_rows: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    /// Covariate columns to keep, in this order; all when `None`.
    /// Complete-case filtering always looks at every column.
    pub covariates: Option<Vec<String>>,
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f == "NA"
}

fn parse_number(field: &str, column: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("column `{column}`: `{field}` is not a number"),
    })
}

pub fn read_dataset<R: Read>(reader: R, options: &CsvOptions) -> Result<LoadedDataset> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = csv
        .headers()
        .map_err(|e| csv_parse_error(e, 1))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let time_col = find("time").ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing required column `time`".into(),
    })?;
    let event_col = find("event").ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing required column `event`".into(),
    })?;
    let all_covariates: Vec<usize> = (0..header.len())
        .filter(|&c| c != time_col && c != event_col)
        .collect();
    let covariate_cols: Vec<usize> = match &options.covariates {
        None => all_covariates,
        Some(names) => names
            .iter()
            .map(|n| {
                find(n)
                    .filter(|c| *c != time_col && *c != event_col)
                    .ok_or_else(|| Error::Config(format!("covariate `{n}` is not a column")))
            })
            .collect::<Result<_>>()?,
    };
    if covariate_cols.is_empty() {
        return Err(Error::InvalidData("no covariate columns".into()));
    }

    let mut times = Vec::new();
    let mut events = Vec::new();
    let mut design = Vec::new();
    let mut raw_rows = 0;
    for (k, record) in csv.records().enumerate() {
        let fallback_line = k + 2;
        let record = record.map_err(|e| csv_parse_error(e, fallback_line))?;
        let line = record
            .position()
            .map_or(fallback_line, |p| p.line() as usize);
        raw_rows += 1;
        if record.iter().any(is_missing) {
            continue;
        }
        let t = parse_number(&record[time_col], "time", line)?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Parse {
                line,
                message: format!("time must be positive, got {t}"),
            });
        }
        let event = match record[event_col].trim() {
            "1" | "1.0" => true,
            "0" | "0.0" => false,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("event must be 0 or 1, got `{other}`"),
                })
            }
        };
        // every column must be numeric, including ones not selected
        for (c, name) in header.iter().enumerate() {
            if c != event_col {
                parse_number(&record[c], name, line)?;
            }
        }
        times.push(t);
        events.push(event);
        for &c in &covariate_cols {
            design.push(parse_number(&record[c], &header[c], line)?);
        }
    }
    let complete_rows = times.len();
    if complete_rows == 0 {
        return Err(Error::InvalidData(format!(
            "no complete rows among {raw_rows}"
        )));
    }
    let names = covariate_cols.iter().map(|&c| header[c].clone()).collect();
    Ok(LoadedDataset {
        dataset: SurvivalDataset::new(times, events, design, names)?,
        raw_rows,
        complete_rows,
    })
}

fn csv_parse_error(e: csv::Error, fallback_line: usize) -> Error {
    let line = e
        .position()
        .map_or(fallback_line, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn read_dataset_file(path: &Path, options: &CsvOptions) -> Result<LoadedDataset> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read_dataset(std::io::BufReader::new(file), options)
}

/// Writes `time,event,<covariates>`; floats use the shortest round-trip
/// representation so a re-read dataset is identical.
pub fn write_dataset<W: Write>(dataset: &SurvivalDataset, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string(), "event".to_string()];
    header.extend(dataset.names().iter().cloned());
    csv.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..dataset.n() {
        record.clear();
        record.push(dataset.times()[i].to_string());
        record.push(if dataset.events()[i] { "1" } else { "0" }.to_string());
        record.extend(dataset.row(i).iter().map(|x| x.to_string()));
        csv.write_record(&record)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_truth<W: Write>(truth: &SimTruth, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, truth)?;
    writeln!(writer)?;
    Ok(())
}

pub fn read_truth<R: Read>(reader: R) -> Result<SimTruth> {
    Ok(serde_json::from_reader(reader)?)
}
