use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::AdversaryLoss;
use crate::error::{DadiError, Result};
use crate::eval::metrics::{quartiles, Quartiles};

pub const REPORT_HEADER: &str = "fold,gamma,reward_kind,auc,disparity,mean_features";
pub const AGGREGATE_HEADER: &str = "gamma,reward_kind,n_folds,auc_median,auc_q1,auc_q3,\
disparity_median,disparity_q1,disparity_q3,mean_features_median";

/// One trained-and-evaluated cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub fold: usize,
    pub gamma: f64,
    pub reward_kind: AdversaryLoss,
    pub auc: f64,
    pub disparity: f64,
    pub mean_features: f64,
}

/// Fold statistics for one `(gamma, reward_kind)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub gamma: f64,
    pub reward_kind: AdversaryLoss,
    pub n_folds: usize,
    pub auc: Quartiles,
    pub disparity: Quartiles,
    pub mean_features_median: f64,
}

/// Orders rows by reward kind, then gamma, then fold.
pub fn sort_rows(rows: &mut [TradeoffRow]) {
    rows.sort_by(|a, b| {
        a.reward_kind
            .as_str()
            .cmp(b.reward_kind.as_str())
            .then(a.gamma.total_cmp(&b.gamma))
            .then(a.fold.cmp(&b.fold))
    });
}

pub fn aggregate_folds(rows: &[TradeoffRow]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(&'static str, u64), Vec<&TradeoffRow>> = BTreeMap::new();
    for r in rows {
        // gamma lies in [0, 1], where the bit pattern orders like the value
        cells.entry((r.reward_kind.as_str(), r.gamma.to_bits())).or_default().push(r);
    }
    cells
        .into_values()
        .map(|rs| {
            let col = |f: fn(&TradeoffRow) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            AggregateRow {
                gamma: rs[0].gamma,
                reward_kind: rs[0].reward_kind,
                n_folds: rs.len(),
                auc: quartiles(&col(|r| r.auc)),
                disparity: quartiles(&col(|r| r.disparity)),
                mean_features_median: quartiles(&col(|r| r.mean_features)).median,
            }
        })
        .collect()
}

pub fn write_report_csv<W: Write>(mut out: W, rows: &[TradeoffRow]) -> Result<()> {
    let io = |e| DadiError::io("<report>", e);
    writeln!(out, "{REPORT_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.fold, r.gamma, r.reward_kind, r.auc, r.disparity, r.mean_features
        )
        .map_err(io)?;
    }
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(mut out: W, rows: &[AggregateRow]) -> Result<()> {
    let io = |e| DadiError::io("<aggregate>", e);
    writeln!(out, "{AGGREGATE_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.gamma,
            r.reward_kind,
            r.n_folds,
            r.auc.median,
            r.auc.q1,
            r.auc.q3,
            r.disparity.median,
            r.disparity.q1,
            r.disparity.q3,
            r.mean_features_median
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Parses a report written by [`write_report_csv`]; the header must match
/// exactly.
pub fn parse_report_csv(bytes: &[u8]) -> Result<Vec<TradeoffRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != REPORT_HEADER {
        return Err(DadiError::Format(format!("unexpected report header {header:?}")));
    }
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let bad = |m: String| DadiError::MalformedRow { row, message: m };
        let float = |i: usize| -> Result<f64> {
            let v: f64 = rec[i].trim().parse().map_err(|_| bad(format!("bad number {:?}", &rec[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("non-finite value {:?}", &rec[i])))
            }
        };
        let gamma = float(1)?;
        if !(0.0..=1.0).contains(&gamma) {
            return Err(bad(format!("gamma {gamma} outside [0, 1]")));
        }
        rows.push(TradeoffRow {
            fold: rec[0].trim().parse().map_err(|_| bad(format!("bad fold {:?}", &rec[0])))?,
            gamma,
            reward_kind: AdversaryLoss::parse(rec[2].trim())
                .ok_or_else(|| bad(format!("unknown reward kind {:?}", &rec[2])))?,
            auc: float(3)?,
            disparity: float(4)?,
            mean_features: float(5)?,
        });
    }
    Ok(rows)
}
