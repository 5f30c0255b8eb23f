//! Slow, deliberately naive reference implementations for tests.
//!
//! Nothing here calls into the allocator or estimator code; only plain data
//! types are shared.

use crate::allocator::{AllocationProblem, AllocationResult, MeasurementPair};
use crate::error::{Error, Result};

pub const ORACLE_MAX_RELAYS: usize = 10;
pub const ORACLE_MAX_FLOWS: usize = 50;
pub const ORACLE_MAX_HISTORY: usize = 50;
pub const DENSE_BASE: f64 = 1.001;

/// Progressive filling by trial steps of a common rate increment.
///
/// All unfrozen flows rise together. A step that would overload a relay is
/// retried at half size; a successful step doubles the next one. Once the
/// step falls below `1e-12` of the smallest capacity, flows crossing a
/// saturated relay are frozen and filling resumes with the rest.
pub fn oracle_maxmin(problem: &AllocationProblem) -> Result<AllocationResult> {
    let caps = problem.relay_capacities();
    let flows: Vec<&[usize]> = problem.flows().collect();
    if caps.len() > ORACLE_MAX_RELAYS || flows.len() > ORACLE_MAX_FLOWS {
        return Err(Error::InvalidInput(format!(
            "oracle handles at most {ORACLE_MAX_RELAYS} relays and {ORACLE_MAX_FLOWS} flows, got {} and {}",
            caps.len(),
            flows.len()
        )));
    }
    let min_cap = caps.iter().copied().filter(|&c| c > 0.0).fold(f64::INFINITY, f64::min);
    let min_step = if min_cap.is_finite() { 1e-12 * min_cap } else { 1e-12 };

    let mut rate = vec![0.0; flows.len()];
    let mut frozen: Vec<bool> = flows.iter().map(|f| f.is_empty()).collect();
    let load_with = |rate: &[f64], frozen: &[bool], level: f64| {
        let mut load = vec![0.0; caps.len()];
        for (f, relays) in flows.iter().enumerate() {
            let r = if frozen[f] { rate[f] } else { level };
            for &j in relays.iter() {
                load[j] += r;
            }
        }
        load
    };

    let mut level = 0.0;
    while frozen.iter().any(|&z| !z) {
        let mut step = min_cap.min(1.0).max(min_step);
        while step >= min_step {
            let load = load_with(&rate, &frozen, level + step);
            if load.iter().zip(caps).all(|(l, c)| *l <= *c) {
                level += step;
                step *= 2.0;
            } else {
                step /= 2.0;
            }
        }
        let load = load_with(&rate, &frozen, level);
        let saturated: Vec<bool> = load
            .iter()
            .zip(caps)
            .map(|(l, c)| c - l <= 1e-9 * c.max(1.0))
            .collect();
        let mut progressed = false;
        for (f, relays) in flows.iter().enumerate() {
            if !frozen[f] && relays.iter().any(|&j| saturated[j]) {
                frozen[f] = true;
                rate[f] = level;
                progressed = true;
            }
        }
        if !progressed {
            // Numerically stuck: freeze everything at the reached level.
            for f in 0..flows.len() {
                if !frozen[f] {
                    frozen[f] = true;
                    rate[f] = level;
                }
            }
        }
    }
    let relay_loads = load_with(&rate, &frozen, 0.0);
    Ok(AllocationResult {
        flow_rates: rate,
        relay_loads,
    })
}

/// Checks the max-min characterization: feasibility, and every flow crosses
/// a saturated relay on which no other flow is faster.
pub fn check_maxmin(problem: &AllocationProblem, result: &AllocationResult, tol: f64) -> std::result::Result<(), String> {
    let caps = problem.relay_capacities();
    let flows: Vec<&[usize]> = problem.flows().collect();
    if result.flow_rates.len() != flows.len() {
        return Err(format!("{} rates for {} flows", result.flow_rates.len(), flows.len()));
    }
    let mut load = vec![0.0; caps.len()];
    for (f, relays) in flows.iter().enumerate() {
        if result.flow_rates[f] < -tol {
            return Err(format!("flow {f} has negative rate"));
        }
        for &j in relays.iter() {
            load[j] += result.flow_rates[f];
        }
    }
    for (j, (&l, &c)) in load.iter().zip(caps).enumerate() {
        if l > c + tol {
            return Err(format!("relay {j} carries {l} over capacity {c}"));
        }
    }
    for (f, relays) in flows.iter().enumerate() {
        let rf = result.flow_rates[f];
        let bottlenecked = relays.iter().any(|&j| {
            let saturated = load[j] >= caps[j] - tol;
            let fastest = flows
                .iter()
                .enumerate()
                .filter(|(_, g)| g.contains(&j))
                .all(|(g, _)| result.flow_rates[g] <= rf + tol);
            saturated && fastest
        });
        if !bottlenecked && !relays.is_empty() {
            return Err(format!("flow {f} at rate {rf} has no bottleneck relay"));
        }
    }
    Ok(())
}

/// `ln Γ(x)` for `x > 0`: upward recurrence to `x ≥ 15`, then the Stirling
/// series.
pub fn oracle_ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "oracle_ln_gamma needs x > 0, got {x}");
    let mut shift = 0.0;
    let mut z = x;
    while z < 15.0 {
        shift += z.ln();
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
    (z - 0.5) * z.ln() - z + 0.5 * (2.0 * std::f64::consts::PI).ln() + series - shift
}

/// Poisson probability mass `e^{−λ} λ^k / k!`, with `ln k!` summed term by
/// term.
pub fn oracle_poisson_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let ln_fact: f64 = (2..=k).map(|i| (i as f64).ln()).sum();
    (-lambda + k as f64 * lambda.ln() - ln_fact).exp()
}

/// How `ln z!` is evaluated for real `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFactorial {
    /// `ln Γ(z + 1)`.
    Exact,
    /// `z ln z − z`, the first-order Stirling form.
    Stirling,
}

impl LogFactorial {
    fn eval(self, z: f64) -> f64 {
        match self {
            LogFactorial::Exact => oracle_ln_gamma(z + 1.0),
            LogFactorial::Stirling if z == 0.0 => 0.0,
            LogFactorial::Stirling => z * z.ln() - z,
        }
    }
}

/// Geometric grid of base 1.001 spanning `[lo, hi]`; each point is the
/// geometric center of its cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    pub points: Vec<f64>,
}

impl DenseGrid {
    pub fn new(lo: f64, hi: f64) -> Self {
        DenseGrid::with_base(DENSE_BASE, lo, hi)
    }

    pub fn with_base(base: f64, lo: f64, hi: f64) -> Self {
        assert!(base > 1.0 && lo > 0.0 && hi > lo);
        let mut points = Vec::new();
        let mut edge = lo;
        while edge < hi {
            points.push(edge * base.sqrt());
            edge *= base;
        }
        DenseGrid { points }
    }

    pub fn base(&self) -> f64 {
        if self.points.len() < 2 {
            return f64::NAN;
        }
        self.points[1] / self.points[0]
    }
}

/// Inputs the likelihood needs besides the measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleParams {
    pub lambda_s: f64,
    pub c_avg_client: f64,
    pub case_tolerance: f64,
}

/// One round of a relay's history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleRound {
    pub m: MeasurementPair,
    pub w: f64,
}

fn poisson_log_term(z: f64, mu: f64, lf: LogFactorial) -> f64 {
    if z < 0.0 {
        return f64::NEG_INFINITY;
    }
    if mu == 0.0 {
        return if z == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -mu - lf.eval(z) + z * mu.ln()
}

fn dual_probe_term(kappa: f64, round: &OracleRound, p: &OracleParams, lf: LogFactorial) -> f64 {
    let OracleRound { m, w } = *round;
    let unsaturated = (m.m1 - 2.0 * m.m2).abs() <= p.case_tolerance * m.m1;
    let z = if unsaturated {
        (kappa - m.m1) / p.c_avg_client
    } else {
        kappa / m.m2 - 2.0
    };
    poisson_log_term(z, p.lambda_s * w, lf)
}

fn scan<F: Fn(f64) -> f64>(grid: &DenseGrid, score: F) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &k in &grid.points {
        let s = score(k);
        if s == f64::NEG_INFINITY || s.is_nan() {
            continue;
        }
        if best.is_none() || s > best.unwrap().1 {
            best = Some((k, s));
        }
    }
    best.map(|(k, _)| k)
}

fn check_history(len: usize) -> Result<()> {
    if len == 0 || len > ORACLE_MAX_HISTORY {
        return Err(Error::InvalidInput(format!(
            "oracle history must hold 1..={ORACLE_MAX_HISTORY} rounds, got {len}"
        )));
    }
    Ok(())
}

/// Exhaustive argmax over `grid` of the summed dual-probe log-likelihood.
/// `None` if every point is infeasible.
pub fn oracle_mle_argmax(
    history: &[OracleRound],
    params: &OracleParams,
    grid: &DenseGrid,
    lf: LogFactorial,
) -> Result<Option<f64>> {
    check_history(history.len())?;
    Ok(scan(grid, |k| {
        history.iter().map(|r| dual_probe_term(k, r, params, lf)).sum()
    }))
}

/// Exhaustive argmax of the summed single-probe log-likelihood, where `m1`
/// is read as `κ / (X + 1)`.
pub fn oracle_mleflow_argmax(
    history: &[(f64, f64)],
    lambda_s: f64,
    grid: &DenseGrid,
    lf: LogFactorial,
) -> Result<Option<f64>> {
    check_history(history.len())?;
    Ok(scan(grid, |k| {
        history
            .iter()
            .map(|&(m1, w)| poisson_log_term(k / m1 - 1.0, lambda_s * w, lf))
            .sum()
    }))
}
