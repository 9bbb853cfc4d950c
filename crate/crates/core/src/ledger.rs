//! The energy ledger: sampled norms, functionals and residuals of a run,
//! and its CSV form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::NormSnapshot;
use crate::error::{Error, Result};
use crate::field::SpectralField;

/// Column order of the ledger CSV.
pub const COLUMNS: [&str; 15] = [
    "t",
    "l2_sq",
    "cum_ux",
    "w_u",
    "w_ux",
    "w_uy",
    "w_uxx",
    "w_uxy",
    "w_uyy",
    "res_E2",
    "res_E3",
    "res_E4",
    "res_ELEV",
    "env_ratio",
    "buffer_peak",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub snapshot: NormSnapshot,
    /// Relative identity residuals; NaN when not evaluated.
    pub res_e2: f64,
    pub res_e3: f64,
    pub res_e4: f64,
    pub res_elev: f64,
    /// `(w, u^2)(t) / (e^{-chi t} (w, u0^2))`, 0 for zero data.
    pub env_ratio: f64,
}

impl LedgerRow {
    pub fn record(&self) -> [f64; 15] {
        let s = &self.snapshot;
        [
            s.t,
            s.l2_sq,
            s.cum_ux,
            s.w_u,
            s.w_ux,
            s.w_uy,
            s.w_uxx,
            s.w_uxy,
            s.w_uyy,
            self.res_e2,
            self.res_e3,
            self.res_e4,
            self.res_elev,
            self.env_ratio,
            s.buffer_peak,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationWarning {
    pub t: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
    pub warnings: Vec<ContaminationWarning>,
    /// Set when the run stopped early.
    pub failed: bool,
    /// State at the last completed step.
    pub final_state: Option<SpectralField>,
}

impl EnergyLedger {
    pub fn snapshots(&self) -> Vec<NormSnapshot> {
        self.rows.iter().map(|r| r.snapshot).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = COLUMNS.join(",");
        out.push('\n');
        for row in &self.rows {
            let rec = row.record();
            for (i, v) in rec.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Writes the ledger CSV to `path`.
pub fn emit_ledger(ledger: &EnergyLedger, path: &Path) -> Result<()> {
    ledger.write_csv(path)
}

/// Parses a ledger CSV back into numeric records.
pub fn parse_ledger_csv(text: &str) -> Result<Vec<[f64; 15]>> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h,
        None => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "missing header row".into(),
            })
        }
    };
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names != COLUMNS {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("header must be {}", COLUMNS.join(",")),
        });
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec = [0.0; 15];
        let mut count = 0;
        let mut column = 1;
        for field in line.split(',') {
            if count == 15 {
                return Err(Error::Parse {
                    line: idx + 1,
                    column,
                    message: "too many fields".into(),
                });
            }
            rec[count] = field.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: idx + 1,
                column,
                message: format!("invalid number {:?}: {e}", field),
            })?;
            count += 1;
            column += field.chars().count() + 1;
        }
        if count != 15 {
            return Err(Error::Parse {
                line: idx + 1,
                column,
                message: format!("expected 15 fields, found {count}"),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64) -> LedgerRow {
        LedgerRow {
            snapshot: NormSnapshot {
                t,
                l2_sq: 0.1 + t,
                cum_ux: t / 3.0,
                w_u: std::f64::consts::PI,
                buffer_peak: 1e-300,
                ..NormSnapshot::default()
            },
            res_e2: 1.0 / 7.0,
            env_ratio: 0.999_999_999_999_9,
            ..LedgerRow::default()
        }
    }

    #[test]
    fn two_rows_three_lines() {
        let ledger = EnergyLedger {
            rows: vec![row(0.0), row(0.1)],
            ..EnergyLedger::default()
        };
        let csv = ledger.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(
            "t,l2_sq,cum_ux,w_u,w_ux,w_uy,w_uxx,w_uxy,w_uyy,res_E2,res_E3,res_E4,res_ELEV,env_ratio,buffer_peak\n"
        ));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ledger = EnergyLedger {
            rows: vec![row(0.0), row(0.1), row(1.0 / 3.0)],
            ..EnergyLedger::default()
        };
        let back = parse_ledger_csv(&ledger.to_csv()).unwrap();
        for (r, b) in ledger.rows.iter().zip(&back) {
            for (x, y) in r.record().iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn zero_rows_are_zero() {
        let ledger = EnergyLedger {
            rows: vec![LedgerRow::default()],
            ..EnergyLedger::default()
        };
        let back = parse_ledger_csv(&ledger.to_csv()).unwrap();
        assert!(back[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positioned_errors() {
        assert!(parse_ledger_csv("").is_err());
        let header = COLUMNS.join(",");
        let err = parse_ledger_csv(&format!("{header}\n1,2,x\n")).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 5);
            }
            other => panic!("{other}"),
        }
        assert!(parse_ledger_csv(&format!("{header}\n1,2\n")).is_err());
    }
}
