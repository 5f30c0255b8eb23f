use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use super::{classify_case, Case, EstimatorConfig};
use crate::allocator::MeasurementPair;
use crate::error::{Error, Result};

/// `ln P(X = z)` for `X ~ Poisson(mu)`, continued to real `z ≥ 0` through
/// `lnΓ(z + 1)`. Negative `z` is impossible and maps to `−∞`.
pub fn poisson_log_pmf(z: f64, mu: f64) -> f64 {
    if z.is_nan() || z < 0.0 {
        return f64::NEG_INFINITY;
    }
    if mu <= 0.0 {
        return if z == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let log_factorial = if z == 0.0 { 0.0 } else { ln_gamma(z + 1.0) };
    -mu - log_factorial + z * mu.ln()
}

/// One round's dual-probe log-likelihood of capacity `kappa`, given the
/// relay's selection weight `w`.
pub fn log_likelihood_term(kappa: f64, m: MeasurementPair, w: f64, cfg: &EstimatorConfig) -> f64 {
    let mu = cfg.lambda_s * w;
    let implied_clients = match classify_case(m, cfg.case_tolerance) {
        Case::Unsaturated => (kappa - m.m1) / cfg.c_avg_client,
        Case::Bottlenecked => kappa / m.m2 - 2.0,
    };
    poisson_log_pmf(implied_clients, mu)
}

/// Single-probe analogue: the probe got `m1 = κ/(X+1)`.
pub fn mleflow_q_term(kappa: f64, m1: f64, w: f64, cfg: &EstimatorConfig) -> f64 {
    poisson_log_pmf(kappa / m1 - 1.0, cfg.lambda_s * w)
}

/// Cumulative log-likelihood scores, one row per relay and one column per
/// grid bin. Starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTable {
    relays: usize,
    bins: usize,
    scores: Vec<f64>,
}

/// Estimates produced by a table update. `fallback[j]` is set when every bin
/// of row `j` is infeasible and the previous estimate was kept.
#[derive(Debug, Clone, PartialEq)]
pub struct TableUpdate {
    pub estimates: Vec<f64>,
    pub fallback: Vec<bool>,
}

impl LikelihoodTable {
    pub fn new(relays: usize, bins: usize) -> Self {
        LikelihoodTable {
            relays,
            bins,
            scores: vec![0.0; relays * bins],
        }
    }

    pub fn relays(&self) -> usize {
        self.relays
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.scores[j * self.bins..(j + 1) * self.bins]
    }

    /// Index of the best bin in row `j`; ties go to the smallest bin. `None`
    /// if every bin is `−∞`.
    pub fn argmax(&self, j: usize) -> Option<usize> {
        argmax_row(self.row(j))
    }

    /// Adds `term(j, κ)` to every cell and returns the per-row argmax
    /// centers, falling back to `previous` for infeasible rows.
    fn accumulate<F>(&mut self, centers: &[f64], previous: &[f64], term: F) -> Result<TableUpdate>
    where
        F: Fn(usize, f64) -> f64 + Sync,
    {
        if centers.len() != self.bins || previous.len() != self.relays {
            return Err(Error::InvalidInput(format!(
                "table is {}x{}, got {} previous estimates and {} bins",
                self.relays,
                self.bins,
                previous.len(),
                centers.len()
            )));
        }
        let picks: Vec<Option<usize>> = self
            .scores
            .par_chunks_mut(self.bins)
            .enumerate()
            .map(|(j, row)| {
                for (s, &kappa) in row.iter_mut().zip(centers) {
                    *s += term(j, kappa);
                }
                argmax_row(row)
            })
            .collect();
        let fallback: Vec<bool> = picks.iter().map(Option::is_none).collect();
        let estimates = picks
            .iter()
            .zip(previous)
            .map(|(p, &prev)| p.map_or(prev, |b| centers[b]))
            .collect();
        Ok(TableUpdate { estimates, fallback })
    }
}

fn argmax_row(row: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (b, &s) in row.iter().enumerate() {
        if s == f64::NEG_INFINITY || s.is_nan() {
            continue;
        }
        if best.is_none_or(|i| s > row[i]) {
            best = Some(b);
        }
    }
    best
}

fn check_lengths(n: usize, other: &[usize]) -> Result<()> {
    if other.iter().any(|&l| l != n) {
        return Err(Error::InvalidInput(format!(
            "per-relay inputs must all have {n} entries, got {other:?}"
        )));
    }
    Ok(())
}

/// DiProber-WH: `S_{t+1} = S_t + L_t`, estimate = argmax bin center.
pub fn diprober_wh_update(
    table: &mut LikelihoodTable,
    measurements: &[MeasurementPair],
    weights: &[f64],
    cfg: &EstimatorConfig,
    previous: &[f64],
) -> Result<TableUpdate> {
    check_lengths(table.relays(), &[measurements.len(), weights.len()])?;
    table.accumulate(cfg.grid.centers(), previous, |j, kappa| {
        log_likelihood_term(kappa, measurements[j], weights[j], cfg)
    })
}

/// MLEFlow-Q: the single-probe likelihood accumulated over the history.
pub fn mleflow_q_update(
    table: &mut LikelihoodTable,
    m1: &[f64],
    weights: &[f64],
    cfg: &EstimatorConfig,
    previous: &[f64],
) -> Result<TableUpdate> {
    check_lengths(table.relays(), &[m1.len(), weights.len()])?;
    table.accumulate(cfg.grid.centers(), previous, |j, kappa| {
        mleflow_q_term(kappa, m1[j], weights[j], cfg)
    })
}
