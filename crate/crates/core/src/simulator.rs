//! Synchronous round loop: arrivals, path construction, allocation, dual
//! probing, estimation, and weight feedback.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::{measure_relay_pair, MeasurementPair};
use crate::error::{Error, Result};
use crate::estimators::{
    diprober_o_estimate, diprober_wh_update, mleflow_q_update, sbws_update, torflow_p_update,
    EstimatorConfig, EstimatorKind, LikelihoodTable, QuantizationGrid, DEFAULT_CASE_TOLERANCE,
};
use crate::network::{compute_weights, sample_paths, sample_user_count, Network, RelayClass};
use crate::rng::{self, SimRng};

/// One kilobyte per second in kb/s.
pub const KBYTES: f64 = 8.0;

/// Multiplicative measurement noise: `Y ~ N(1, std²)` truncated to
/// `[y_min, y_max]`, drawn independently for every probe reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub std: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            std: 1.0 / 20.0,
            y_min: 0.7,
            y_max: 1.3,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.std > 0.0 && self.y_min <= 1.0 && 1.0 <= self.y_max) {
            return Err(Error::InvalidInput(format!(
                "noise needs std > 0 and y_min <= 1 <= y_max, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let normal = Normal::new(1.0, self.std).expect("validated std");
        loop {
            let y = normal.sample(rng);
            if (self.y_min..=self.y_max).contains(&y) {
                return y;
            }
        }
    }
}

/// Estimator parameters that do not depend on the population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSettings {
    /// Known average client bandwidth, kb/s. When absent, each round uses
    /// the mean client path rate of that round's probe-free allocation.
    #[serde(default)]
    pub c_avg_client: Option<f64>,
    #[serde(default = "default_case_tolerance")]
    pub case_tolerance: f64,
    #[serde(default = "default_quant_base")]
    pub quant_base: f64,
}

fn default_case_tolerance() -> f64 {
    DEFAULT_CASE_TOLERANCE
}

fn default_quant_base() -> f64 {
    1.1
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            c_avg_client: None,
            case_tolerance: DEFAULT_CASE_TOLERANCE,
            quant_base: default_quant_base(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub lambda_s: f64,
    pub rounds: usize,
    pub method: EstimatorKind,
    pub seed: u64,
    pub underloaded: bool,
    /// Per-client cap range in kb/s, used when `underloaded`.
    pub cap_range: (f64, f64),
    pub noise: Option<NoiseModel>,
    pub estimator: EstimatorSettings,
    /// Observed-bandwidth window, in rounds.
    pub window: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            lambda_s: 5_000.0,
            rounds: 50,
            method: EstimatorKind::DiProberWH,
            seed: 0,
            underloaded: false,
            cap_range: (8.0 * KBYTES, 18.0 * KBYTES),
            noise: None,
            estimator: EstimatorSettings::default(),
            window: 5,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::InvalidInput("rounds must be at least 1".into()));
        }
        if !(self.lambda_s > 0.0 && self.lambda_s.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda_s must be > 0, got {}", self.lambda_s)));
        }
        let (lo, hi) = self.cap_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "cap range must satisfy 0 < min <= max, got [{lo}, {hi}]"
            )));
        }
        if self.window < 1 {
            return Err(Error::InvalidInput("window must be at least 1 round".into()));
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        Ok(())
    }

    /// Estimator configuration for `network`; the grid spans the
    /// population's plausible capacities.
    pub fn estimator_config(&self, network: &Network) -> Result<EstimatorConfig> {
        let grid = QuantizationGrid::for_population(
            self.estimator.quant_base,
            network.min_capacity(),
            network.max_capacity(),
        )?;
        let mut cfg = EstimatorConfig::new(self.lambda_s, self.estimator.c_avg_client.unwrap_or(1.0), grid);
        cfg.case_tolerance = self.estimator.case_tolerance;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-relay state of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayRound {
    pub id: usize,
    pub class: RelayClass,
    pub true_capacity: f64,
    /// Estimate produced from this round's measurements.
    pub estimate: f64,
    pub weight_exit: f64,
    pub weight_guard: f64,
    pub weight_middle: f64,
    pub m1: f64,
    pub m2: f64,
    pub client_flows: usize,
    pub client_throughput: f64,
    /// The likelihood row had no feasible bin; the previous estimate was kept.
    pub fallback: bool,
}

impl RelayRound {
    pub fn measurement(&self) -> MeasurementPair {
        MeasurementPair { m1: self.m1, m2: self.m2 }
    }

    pub fn selection_weight(&self) -> f64 {
        self.weight_exit + self.weight_guard + self.weight_middle
    }

    pub fn relative_error(&self) -> f64 {
        (self.estimate - self.true_capacity).abs() / self.true_capacity
    }
}

/// Measurement period `round` (1-based): the weights in force, the probe
/// readings, and the estimates they produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub user_count: u64,
    pub c_avg_client: f64,
    pub relays: Vec<RelayRound>,
    /// Client path rates in the probe-free allocation.
    pub path_rates: Vec<f64>,
}

impl RoundRecord {
    pub fn estimates(&self) -> Vec<f64> {
        self.relays.iter().map(|r| r.estimate).collect()
    }
}

// Stream ids per round. Rounds start at 1, so the ids of round 0 are free.
const STREAMS_PER_ROUND: u64 = 4;
/// Stream reserved for generating a synthetic population from the run seed.
pub const POPULATION_STREAM: u64 = 3;
const STREAM_USERS: u64 = 0;
const STREAM_PATHS: u64 = 1;
const STREAM_NOISE: u64 = 2;

fn round_stream(seed: u64, round: usize, purpose: u64) -> SimRng {
    rng::stream(seed, round as u64 * STREAMS_PER_ROUND + purpose)
}

enum EstimatorState {
    Stateless,
    Table(LikelihoodTable),
}

pub fn run_simulation(network: &Network, cfg: &SimConfig) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    let mut est_cfg = cfg.estimator_config(network)?;
    let mut net = network.clone();
    let n = net.len();
    let true_caps = net.true_capacities();

    let mut estimates = match cfg.method {
        EstimatorKind::Actual => true_caps.clone(),
        _ => vec![est_cfg.grid.midpoint(); n],
    };
    let mut consensus = compute_weights(&estimates, &net)?;
    let mut state = match cfg.method {
        EstimatorKind::MleFlowQ | EstimatorKind::DiProberWH => {
            EstimatorState::Table(LikelihoodTable::new(n, est_cfg.grid.len()))
        }
        _ => EstimatorState::Stateless,
    };
    let mut c_avg = cfg.estimator.c_avg_client.unwrap_or(f64::NAN);

    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        let mut step = || -> Result<RoundRecord> {
            let users = sample_user_count(cfg.lambda_s, &mut round_stream(cfg.seed, t, STREAM_USERS))?;
            let paths = sample_paths(
                users as usize,
                &consensus,
                &mut round_stream(cfg.seed, t, STREAM_PATHS),
                cfg.underloaded,
                cfg.cap_range,
            )?;
            let mut meas = measure_relay_pair(&true_caps, &paths)?;
            if let Some(noise) = &cfg.noise {
                let mut rng = round_stream(cfg.seed, t, STREAM_NOISE);
                for p in &mut meas.pairs {
                    p.m1 *= noise.sample(&mut rng);
                    p.m2 *= noise.sample(&mut rng);
                }
            }
            for (j, &x) in meas.probed_throughput.iter().enumerate() {
                net.relay_mut(j).record_throughput(x, cfg.window);
            }

            if cfg.estimator.c_avg_client.is_none() && !meas.client_rates.is_empty() {
                c_avg = meas.client_rates.iter().sum::<f64>() / meas.client_rates.len() as f64;
            }
            est_cfg.c_avg_client = if c_avg.is_finite() && c_avg > 0.0 { c_avg } else { 1.0 };

            let weights = consensus.selection_weights();
            let m1: Vec<f64> = meas.pairs.iter().map(|p| p.m1).collect();
            let mut fallback = vec![false; n];
            let next = match (cfg.method, &mut state) {
                (EstimatorKind::Actual, _) => true_caps.clone(),
                (EstimatorKind::TorFlowP, _) => torflow_p_update(&estimates, &m1)?,
                (EstimatorKind::Sbws, _) => {
                    let observed: Vec<f64> = net.relays().iter().map(|r| r.observed_bandwidth()).collect();
                    sbws_update(&observed, &m1)?
                }
                (EstimatorKind::DiProberO, _) => meas
                    .pairs
                    .iter()
                    .zip(&weights)
                    .map(|(&m, &w)| diprober_o_estimate(m, w, &est_cfg))
                    .collect(),
                (EstimatorKind::DiProberWH, EstimatorState::Table(table)) => {
                    let up = diprober_wh_update(table, &meas.pairs, &weights, &est_cfg, &estimates)?;
                    fallback = up.fallback;
                    up.estimates
                }
                (EstimatorKind::MleFlowQ, EstimatorState::Table(table)) => {
                    let up = mleflow_q_update(table, &m1, &weights, &est_cfg, &estimates)?;
                    fallback = up.fallback;
                    up.estimates
                }
                (kind, _) => unreachable!("no likelihood table for {kind}"),
            };

            let relays = net
                .relays()
                .iter()
                .map(|r| {
                    let j = r.id;
                    RelayRound {
                        id: j,
                        class: r.class,
                        true_capacity: r.true_capacity,
                        estimate: next[j],
                        weight_exit: consensus.weight_exit[j],
                        weight_guard: consensus.weight_guard[j],
                        weight_middle: consensus.weight_middle[j],
                        m1: meas.pairs[j].m1,
                        m2: meas.pairs[j].m2,
                        client_flows: meas.load.client_flow_count[j],
                        client_throughput: meas.load.client_throughput[j],
                        fallback: fallback[j],
                    }
                })
                .collect();
            let record = RoundRecord {
                round: t,
                user_count: users,
                c_avg_client: est_cfg.c_avg_client,
                relays,
                path_rates: meas.client_rates,
            };
            consensus = compute_weights(&next, &net)?.with_round(t);
            estimates = next;
            Ok(record)
        };
        records.push(step().map_err(|e| e.in_round(t))?);
    }
    Ok(records)
}

/// Seed used by Monte Carlo trial `index`.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(seed, index as u64)
}

/// Per-round sample mean and (unbiased) sample variance of each relay's
/// estimate across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateMoments {
    pub round: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub trials: Vec<Vec<RoundRecord>>,
    pub moments: Vec<EstimateMoments>,
}

/// Runs `trials` independent simulations in parallel. Results do not depend
/// on scheduling: trial `i` always uses [`trial_seed`]`(cfg.seed, i)`.
pub fn run_monte_carlo(network: &Network, cfg: &SimConfig, trials: usize) -> Result<MonteCarloResult> {
    if trials < 1 {
        return Err(Error::InvalidInput("at least one trial is required".into()));
    }
    let runs = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = trial_seed(cfg.seed, i);
            run_simulation(network, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    let moments = estimate_moments(&runs);
    Ok(MonteCarloResult {
        trials: runs,
        moments,
    })
}

pub fn estimate_moments(runs: &[Vec<RoundRecord>]) -> Vec<EstimateMoments> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let k = runs.len() as f64;
    (0..first.len())
        .map(|t| {
            let n = first[t].relays.len();
            let mut mean = vec![0.0; n];
            let mut variance = vec![0.0; n];
            for j in 0..n {
                let xs = runs.iter().map(|r| r[t].relays[j].estimate);
                let mu = xs.clone().sum::<f64>() / k;
                mean[j] = mu;
                if runs.len() > 1 {
                    variance[j] = xs.map(|x| (x - mu).powi(2)).sum::<f64>() / (k - 1.0);
                }
            }
            EstimateMoments {
                round: first[t].round,
                mean,
                variance,
            }
        })
        .collect()
}
