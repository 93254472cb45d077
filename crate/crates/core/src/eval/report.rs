//! Language × method result tables in CSV and markdown.
//!
//! Values are percentages. Lines starting with `#` are comments; a row named
//! `Avg` is treated as derived and recomputed rather than read.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mean_accuracy, EvalRecord, SweepResult};
use crate::error::{Error, Result};

pub const AVG_ROW: &str = "Avg";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::invalid(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    /// Name of the first column, e.g. "language".
    pub key: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ResultTable {
    /// Rows are languages in sorted order; columns are methods in first-seen order.
    pub fn from_records(records: &[EvalRecord]) -> Self {
        let mut columns: Vec<String> = Vec::new();
        let mut languages: Vec<String> = Vec::new();
        for r in records {
            if !columns.contains(&r.method) {
                columns.push(r.method.clone());
            }
            if !languages.contains(&r.language) {
                languages.push(r.language.clone());
            }
        }
        languages.sort();
        let rows = languages
            .into_iter()
            .map(|lang| {
                let values = columns
                    .iter()
                    .map(|m| {
                        records
                            .iter()
                            .find(|r| r.language == lang && &r.method == m)
                            .map(|r| 100.0 * r.accuracy())
                    })
                    .collect();
                (lang, values)
            })
            .collect();
        ResultTable {
            key: "language".into(),
            columns,
            rows,
        }
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file).map_err(|e| match e {
            Error::Invalid(m) => Error::invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?.clone();
        if header.len() < 2 {
            return Err(Error::invalid("result table needs a key column and at least one value column"));
        }
        let key = header[0].to_string();
        let columns: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let name = rec[0].to_string();
            if name == AVG_ROW {
                continue;
            }
            let values = rec
                .iter()
                .skip(1)
                .map(|cell| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>()
                            .map(Some)
                            .map_err(|_| Error::invalid(format!("row {name:?}: bad number {cell:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((name, values));
        }
        Ok(ResultTable { key, columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().filter_map(|(_, v)| v[i]).collect())
    }

    pub fn average(&self, column: &str) -> Result<f64> {
        let values = self
            .column(column)
            .ok_or_else(|| Error::invalid(format!("no column {column:?}")))?;
        mean_accuracy(&values)
    }

    /// Macro-average of every column; `None` where a column has no values.
    pub fn averages(&self) -> Vec<Option<f64>> {
        self.columns
            .iter()
            .map(|c| self.average(c).ok())
            .collect()
    }

    fn grid(&self, with_avg: bool) -> Vec<Vec<String>> {
        let fmt = |v: &Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
        let mut out = vec![std::iter::once(self.key.clone()).chain(self.columns.iter().cloned()).collect()];
        for (name, values) in &self.rows {
            out.push(std::iter::once(name.clone()).chain(values.iter().map(fmt)).collect());
        }
        if with_avg {
            out.push(std::iter::once(AVG_ROW.to_string()).chain(self.averages().iter().map(fmt)).collect());
        }
        out
    }

    pub fn to_csv(&self, preamble: &[String], with_avg: bool) -> Result<String> {
        let mut text = String::new();
        for line in preamble {
            for l in line.lines() {
                let _ = writeln!(text, "# {l}");
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.grid(with_avg) {
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        text.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        Ok(text)
    }

    pub fn to_markdown(&self, preamble: &[String], with_avg: bool) -> String {
        let mut text = String::new();
        for line in preamble {
            let _ = writeln!(text, "<!-- {line} -->");
        }
        let grid = self.grid(with_avg);
        let escape = |s: &str| s.replace('|', "\\|");
        for (i, row) in grid.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| escape(c)).collect();
            let _ = writeln!(text, "| {} |", cells.join(" | "));
            if i == 0 {
                let sep: Vec<&str> = row.iter().map(|_| "---").collect();
                let _ = writeln!(text, "| {} |", sep.join(" | "));
            }
        }
        text
    }

    pub fn render(&self, format: ReportFormat, preamble: &[String], with_avg: bool) -> Result<String> {
        match format {
            ReportFormat::Csv => self.to_csv(preamble, with_avg),
            ReportFormat::Markdown => Ok(self.to_markdown(preamble, with_avg)),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

/// Writes a language × method table with a trailing `Avg` row.
pub fn emit_report(
    records: &[EvalRecord],
    format: ReportFormat,
    preamble: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let text = ResultTable::from_records(records).render(format, preamble, true)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One row per sweep value, one column per sweep series.
pub fn sweep_table(sweeps: &[SweepResult]) -> ResultTable {
    let mut values: Vec<usize> = sweeps.iter().flat_map(|s| s.points.iter().map(|p| p.value)).collect();
    values.sort_unstable();
    values.dedup();
    let key = sweeps.first().map(|s| s.axis.to_string()).unwrap_or_else(|| "value".into());
    let rows = values
        .iter()
        .map(|&v| {
            let cells = sweeps
                .iter()
                .map(|s| s.points.iter().find(|p| p.value == v).map(|p| 100.0 * p.macro_accuracy))
                .collect();
            (v.to_string(), cells)
        })
        .collect();
    ResultTable {
        key,
        columns: sweeps.iter().map(|s| s.series.clone()).collect(),
        rows,
    }
}

pub fn emit_sweeps(
    sweeps: &[SweepResult],
    format: ReportFormat,
    preamble: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let text = sweep_table(sweeps).render(format, preamble, false)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Method → average accuracy, e.g. an ablation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub entries: Vec<(String, f64)>,
}

impl AblationTable {
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let table = ResultTable::read_csv(path)?;
        if table.columns.len() != 1 {
            return Err(Error::invalid("ablation table needs exactly two columns: method,accuracy"));
        }
        let entries = table
            .rows
            .into_iter()
            .map(|(m, v)| {
                v[0].map(|x| (m.clone(), x))
                    .ok_or_else(|| Error::invalid(format!("no value for {m:?}")))
            })
            .collect::<Result<_>>()?;
        Ok(AblationTable { entries })
    }

    pub fn value(&self, method: &str) -> Option<f64> {
        self.entries.iter().find(|(m, _)| m == method).map(|(_, v)| *v)
    }

    /// `reference − other` for every other method, in table order.
    pub fn gaps(&self, reference: &str) -> Result<Vec<(String, f64)>> {
        let r = self
            .value(reference)
            .ok_or_else(|| Error::invalid(format!("no row for {reference:?}")))?;
        Ok(self
            .entries
            .iter()
            .filter(|(m, _)| m != reference)
            .map(|(m, v)| (m.clone(), r - v))
            .collect())
    }
}
