//! Risk reports and their CSV/JSON serialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "scenario,policy,M,K,c,runs,error_rate,error_rate_se,\
mean_samples,mean_samples_se,risk,risk_se,cap_hits";

/// Monte-Carlo aggregates for one (scenario, policy, tree size) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub scenario: String,
    pub policy: String,
    #[serde(rename = "M")]
    pub processes: u64,
    #[serde(rename = "K")]
    pub anomalies: u64,
    #[serde(rename = "c")]
    pub cost: f64,
    pub runs: u64,
    pub error_rate: f64,
    pub error_rate_se: f64,
    pub mean_samples: f64,
    pub mean_samples_se: f64,
    /// Always exactly `error_rate + cost * mean_samples`.
    pub risk: f64,
    pub risk_se: f64,
    pub cap_hits: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub rows: Vec<RiskRow>,
}

/// 17 significant digits: enough to round-trip any f64 exactly.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl RiskReport {
    pub fn row(&self, policy: &str, processes: u64) -> Option<&RiskRow> {
        self.rows
            .iter()
            .find(|r| r.policy == policy && r.processes == processes)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.scenario,
                r.policy,
                r.processes,
                r.anomalies,
                fmt_f64(r.cost),
                r.runs,
                fmt_f64(r.error_rate),
                fmt_f64(r.error_rate_se),
                fmt_f64(r.mean_samples),
                fmt_f64(r.mean_samples_se),
                fmt_f64(r.risk),
                fmt_f64(r.risk_se),
                r.cap_hits,
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::EmptyReport)?;
        if header.trim() != CSV_HEADER {
            return Err(Error::MalformedReport(format!(
                "unexpected header {header:?}"
            )));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 13 {
                return Err(Error::MalformedReport(format!(
                    "line {}: expected 13 fields, got {}",
                    i + 2,
                    f.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|e| Error::MalformedReport(format!("line {}: {e}", i + 2)))
            };
            let int = |s: &str| -> Result<u64> {
                s.parse()
                    .map_err(|e| Error::MalformedReport(format!("line {}: {e}", i + 2)))
            };
            rows.push(RiskRow {
                scenario: f[0].to_string(),
                policy: f[1].to_string(),
                processes: int(f[2])?,
                anomalies: int(f[3])?,
                cost: num(f[4])?,
                runs: int(f[5])?,
                error_rate: num(f[6])?,
                error_rate_se: num(f[7])?,
                mean_samples: num(f[8])?,
                mean_samples_se: num(f[9])?,
                risk: num(f[10])?,
                risk_se: num(f[11])?,
                cap_hits: int(f[12])?,
            });
        }
        Ok(RiskReport { rows })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::MalformedReport(e.to_string()))
    }
}

/// Output format of `emit_report`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidConfig(format!(
                "unknown format {other:?}; use csv or json"
            ))),
        }
    }
}

/// Write a nonempty report to `path`.
pub fn emit_report(
    report: &RiskReport,
    format: ReportFormat,
    path: &std::path::Path,
) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    let text = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json(),
    };
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row() -> RiskRow {
        RiskRow {
            scenario: "heavy-hitter".into(),
            policy: "hds".into(),
            processes: 8,
            anomalies: 1,
            cost: 0.01,
            runs: 100,
            error_rate: 0.02,
            error_rate_se: 0.014,
            mean_samples: 120.0,
            mean_samples_se: 3.5,
            risk: 0.02 + 0.01 * 120.0,
            risk_se: 0.04,
            cap_hits: 0,
        }
    }

    #[test]
    fn risk_arithmetic_example() {
        let r = sample_row();
        assert_eq!(r.risk, 1.22);
    }

    #[test]
    fn one_row_report_is_two_csv_lines() {
        let report = RiskReport {
            rows: vec![sample_row()],
        };
        let csv = report.to_csv();
        assert_eq!(csv.trim_end().lines().count(), 2);
        assert!(csv.starts_with("scenario,policy,M,K,c,runs,"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut row = sample_row();
        row.error_rate = 0.1 + 0.2; // deliberately non-representable sum
        row.risk = row.error_rate + row.cost * row.mean_samples;
        let report = RiskReport { rows: vec![row] };
        let parsed = RiskReport::from_csv(&report.to_csv()).unwrap();
        assert_eq!(report, parsed);
        // The identity survives serialization bit-for-bit.
        let r = &parsed.rows[0];
        assert_eq!(r.risk, r.error_rate + r.cost * r.mean_samples);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let report = RiskReport {
            rows: vec![sample_row()],
        };
        let parsed = RiskReport::from_json(&report.to_json()).unwrap();
        assert_eq!(report, parsed);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(RiskReport::from_csv("").is_err());
        assert!(RiskReport::from_csv("bad,header\n").is_err());
        let text = format!("{CSV_HEADER}\nonly,three,fields\n");
        assert!(RiskReport::from_csv(&text).is_err());
    }
}
