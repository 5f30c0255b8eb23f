//! Estimation-error and path-bandwidth statistics, and file export.
//!
//! Standard deviations are population (not sample) deviations. Every float
//! written to disk carries 9 significant digits, and the in-memory statistics
//! are computed from, and rounded to, the same 9-digit values, so statistics
//! recomputed from an exported file match the in-memory ones exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::network::{compute_weights, ConsensusRound, Network, RelayClass};
use crate::simulator::{EstimateMoments, MonteCarloResult, RoundRecord};

pub const ROUNDS_CSV: &str = "rounds.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MC_SUMMARY_JSON: &str = "mc_summary.json";

pub const ROUNDS_HEADER: [&str; 11] = [
    "round",
    "relay_id",
    "class",
    "true_capacity_kbps",
    "weight_exit",
    "weight_guard",
    "weight_middle",
    "m1_kbps",
    "m2_kbps",
    "estimate_kbps",
    "rel_error",
];

/// Rounds `x` to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn fmt9(x: f64) -> String {
    format!("{}", sig9(x))
}

/// Mean, population std, max and min of one group of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub round: usize,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
}

impl StatRow {
    /// `None` for an empty group.
    pub fn of(round: usize, values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        Some(StatRow {
            round,
            mean: sig9(mean),
            std: sig9(var.sqrt()),
            max: sig9(max),
            min: sig9(min),
        })
    }
}

/// Relative estimation error per class and round.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub per_class: BTreeMap<RelayClass, Vec<StatRow>>,
}

impl ErrorStats {
    pub fn class(&self, class: RelayClass) -> &[StatRow] {
        self.per_class.get(&class).map_or(&[], Vec::as_slice)
    }

    /// Mean error of `class` in the last round.
    pub fn final_mean(&self, class: RelayClass) -> Option<f64> {
        self.class(class).last().map(|r| r.mean)
    }
}

/// Builds error statistics from `(round, class, relative error)` samples
/// given in round order.
pub fn error_stats_from_samples<I>(samples: I) -> ErrorStats
where
    I: IntoIterator<Item = (usize, RelayClass, f64)>,
{
    let mut grouped: BTreeMap<RelayClass, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for (round, class, err) in samples {
        grouped
            .entry(class)
            .or_default()
            .entry(round)
            .or_default()
            .push(sig9(err));
    }
    let per_class = grouped
        .into_iter()
        .map(|(class, rounds)| {
            let rows = rounds
                .into_iter()
                .filter_map(|(round, errs)| StatRow::of(round, &errs))
                .collect();
            (class, rows)
        })
        .collect();
    ErrorStats { per_class }
}

pub fn compute_error_stats(records: &[RoundRecord]) -> ErrorStats {
    error_stats_from_samples(records.iter().flat_map(|rec| {
        rec.relays
            .iter()
            .map(move |r| (rec.round, r.class, r.relative_error()))
    }))
}

/// Client path bandwidth statistics for one round. All fields are `None`
/// (serialized as `null`) for a round without clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathBandwidthStats {
    pub round: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub max: Option<f64>,
    pub min: Option<f64>,
}

impl PathBandwidthStats {
    pub fn is_empty(&self) -> bool {
        self.mean.is_none()
    }
}

pub fn compute_path_stats(records: &[RoundRecord]) -> Vec<PathBandwidthStats> {
    records
        .iter()
        .map(|rec| {
            let row = StatRow::of(rec.round, &rec.path_rates);
            PathBandwidthStats {
                round: rec.round,
                mean: row.map(|r| r.mean),
                std: row.map(|r| r.std),
                max: row.map(|r| r.max),
                min: row.map(|r| r.min),
            }
        })
        .collect()
}

/// Selection weights proportional to the true capacities.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealWeights(pub ConsensusRound);

impl IdealWeights {
    pub fn new(network: &Network) -> Result<Self> {
        compute_weights(&network.true_capacities(), network).map(IdealWeights)
    }

    pub fn selection_weight(&self, j: usize) -> f64 {
        self.0.selection_weight(j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: EstimatorKind,
    pub seed: u64,
    pub rounds: usize,
    pub per_class: BTreeMap<RelayClass, Vec<StatRow>>,
    pub path_bw: Vec<PathBandwidthStats>,
}

impl Summary {
    pub fn new(method: EstimatorKind, seed: u64, records: &[RoundRecord]) -> Self {
        Summary {
            method,
            seed,
            rounds: records.len(),
            per_class: compute_error_stats(records).per_class,
            path_bw: compute_path_stats(records),
        }
    }
}

/// Writes `rounds.csv` rows for `records`.
pub fn write_rounds_csv<W: Write>(records: &[RoundRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ROUNDS_HEADER)?;
    for rec in records {
        for r in &rec.relays {
            w.write_record([
                rec.round.to_string(),
                r.id.to_string(),
                r.class.to_string(),
                fmt9(r.true_capacity),
                fmt9(r.weight_exit),
                fmt9(r.weight_guard),
                fmt9(r.weight_middle),
                fmt9(r.m1),
                fmt9(r.m2),
                fmt9(r.estimate),
                fmt9(r.relative_error()),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<rounds csv>", e))?;
    Ok(())
}

/// One parsed row of `rounds.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RoundsRow {
    pub round: usize,
    pub relay_id: usize,
    pub class: RelayClass,
    pub true_capacity_kbps: f64,
    pub weight_exit: f64,
    pub weight_guard: f64,
    pub weight_middle: f64,
    pub m1_kbps: f64,
    pub m2_kbps: f64,
    pub estimate_kbps: f64,
    pub rel_error: f64,
}

pub fn read_rounds_csv(path: impl AsRef<Path>) -> Result<Vec<RoundsRow>> {
    let file = fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes `contents` through a sibling temporary file so a failed write never
/// leaves a partial file behind.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Writes `rounds.csv` and `summary.json` into `out_dir`, creating it if
/// needed. Returns the written paths.
pub fn export(records: &[RoundRecord], summary: &Summary, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(ROUNDS_CSV);
    let mut buf = Vec::new();
    write_rounds_csv(records, &mut buf)?;
    write_atomic(&csv_path, &buf)?;
    let json_path = dir.join(SUMMARY_JSON);
    write_atomic(&json_path, to_json_string(summary)?.as_bytes())?;
    Ok(vec![csv_path, json_path])
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Summary> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Monte Carlo output: per-round moments of every relay's estimate and each
/// trial's final-round class errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub method: EstimatorKind,
    pub seed: u64,
    pub trials: usize,
    pub rounds: usize,
    pub moments: Vec<EstimateMoments>,
    pub final_class_error: Vec<BTreeMap<RelayClass, f64>>,
}

impl MonteCarloSummary {
    pub fn new(method: EstimatorKind, seed: u64, result: &MonteCarloResult) -> Self {
        let round9 = |v: &[f64]| v.iter().map(|&x| sig9(x)).collect::<Vec<_>>();
        MonteCarloSummary {
            method,
            seed,
            trials: result.trials.len(),
            rounds: result.moments.len(),
            moments: result
                .moments
                .iter()
                .map(|m| EstimateMoments {
                    round: m.round,
                    mean: round9(&m.mean),
                    variance: round9(&m.variance),
                })
                .collect(),
            final_class_error: result
                .trials
                .iter()
                .map(|records| {
                    let stats = compute_error_stats(records);
                    RelayClass::ALL
                        .into_iter()
                        .filter_map(|c| stats.final_mean(c).map(|m| (c, m)))
                        .collect()
                })
                .collect(),
        }
    }
}

pub fn export_monte_carlo(summary: &MonteCarloSummary, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MC_SUMMARY_JSON);
    write_atomic(&path, to_json_string(summary)?.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::RelayRound;

    fn record(round: usize, relays: &[(RelayClass, f64, f64)], rates: Vec<f64>) -> RoundRecord {
        RoundRecord {
            round,
            user_count: rates.len() as u64,
            c_avg_client: 1.0,
            relays: relays
                .iter()
                .enumerate()
                .map(|(id, &(class, truth, est))| RelayRound {
                    id,
                    class,
                    true_capacity: truth,
                    estimate: est,
                    weight_exit: 0.0,
                    weight_guard: 0.0,
                    weight_middle: 0.0,
                    m1: 1.0,
                    m2: 0.5,
                    client_flows: 0,
                    client_throughput: 0.0,
                    fallback: false,
                })
                .collect(),
            path_rates: rates,
        }
    }

    use RelayClass::*;

    #[test]
    fn exact_estimates_have_zero_error() {
        let recs = [record(1, &[(Guard, 10.0, 10.0), (Exit, 5.0, 5.0)], vec![])];
        let s = compute_error_stats(&recs);
        for c in [Guard, Exit] {
            let r = s.class(c)[0];
            assert_eq!((r.mean, r.std, r.max, r.min), (0.0, 0.0, 0.0, 0.0));
        }
        assert!(s.class(Middle).is_empty());
    }

    #[test]
    fn doubled_estimates_have_unit_error() {
        let recs = [record(
            1,
            &[(Guard, 10.0, 20.0), (Middle, 3.0, 6.0), (Exit, 5.0, 10.0)],
            vec![],
        )];
        let s = compute_error_stats(&recs);
        for c in RelayClass::ALL {
            assert_eq!(s.final_mean(c), Some(1.0));
        }
    }

    #[test]
    fn mixed_class_arithmetic() {
        let recs = [record(1, &[(Exit, 10.0, 11.0), (Exit, 10.0, 7.0)], vec![])];
        let r = compute_error_stats(&recs).class(Exit)[0];
        assert!((r.mean - 0.2).abs() < 1e-12);
        assert!((r.max - 0.3).abs() < 1e-12);
        assert!((r.min - 0.1).abs() < 1e-12);
        assert!((r.std - 0.1).abs() < 1e-12);
    }

    #[test]
    fn path_stats() {
        let recs = [
            record(1, &[], vec![4.0; 5]),
            record(2, &[], vec![1.0, 3.0]),
            record(3, &[], vec![]),
        ];
        let p = compute_path_stats(&recs);
        assert_eq!((p[0].mean, p[0].std), (Some(4.0), Some(0.0)));
        assert_eq!((p[1].mean, p[1].std), (Some(2.0), Some(1.0)));
        assert!(p[2].is_empty());
        let json = serde_json::to_string(&p[2]).unwrap();
        assert_eq!(json, r#"{"round":3,"mean":null,"std":null,"max":null,"min":null}"#);
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt9(123_456.789_012_3), "123456.789");
        assert_eq!(fmt9(2.0), "2");
        assert_eq!(fmt9(0.0), "0");
    }

    #[test]
    fn empty_export_is_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let summary = Summary::new(EstimatorKind::Actual, 1, &[]);
        export(&[], &summary, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join(ROUNDS_CSV)).unwrap();
        assert_eq!(csv, format!("{}\n", ROUNDS_HEADER.join(",")));
        assert_eq!(read_summary(dir.path().join(SUMMARY_JSON)).unwrap(), summary);
    }
}
