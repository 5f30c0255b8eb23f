//! Max-min fair bandwidth allocation and the dual-probe measurement.
//!
//! The allocator is event driven: every unfrozen flow shares a common rate
//! ("water level"), and each relay saturates at the level
//! `(capacity − frozen load) / unfrozen flows`. Relays are kept in a min-heap
//! keyed by that level; popping the lowest freezes every flow crossing it.
//! Saturation levels only increase as flows freeze elsewhere, so stale heap
//! entries are detected by recomputing the key on pop.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Path;

/// Absolute tolerance on rates and loads, kb/s.
pub const RATE_TOLERANCE: f64 = 1e-9;

/// Relays with capacities, and flows given as the relay sets they traverse.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AllocationProblem {
    relay_capacities: Vec<f64>,
    flow_offsets: Vec<usize>,
    flow_relays: Vec<usize>,
}

impl AllocationProblem {
    pub fn new(relay_capacities: Vec<f64>) -> Self {
        AllocationProblem {
            relay_capacities,
            flow_offsets: vec![0],
            flow_relays: Vec::new(),
        }
    }

    /// Builds a problem from explicit flows, validating every invariant.
    pub fn from_flows(relay_capacities: Vec<f64>, flows: &[Vec<usize>]) -> Result<Self> {
        let mut p = AllocationProblem::new(relay_capacities);
        for f in flows {
            p.add_flow(f);
        }
        p.validate()?;
        Ok(p)
    }

    /// Appends a relay and returns its index.
    pub fn add_relay(&mut self, capacity: f64) -> usize {
        self.relay_capacities.push(capacity);
        self.relay_capacities.len() - 1
    }

    /// Appends a flow and returns its index.
    pub fn add_flow(&mut self, relays: &[usize]) -> usize {
        self.flow_relays.extend_from_slice(relays);
        self.flow_offsets.push(self.flow_relays.len());
        self.flow_offsets.len() - 2
    }

    pub fn relay_capacities(&self) -> &[f64] {
        &self.relay_capacities
    }

    pub fn relay_count(&self) -> usize {
        self.relay_capacities.len()
    }

    pub fn flow_count(&self) -> usize {
        self.flow_offsets.len() - 1
    }

    pub fn flow(&self, f: usize) -> &[usize] {
        &self.flow_relays[self.flow_offsets[f]..self.flow_offsets[f + 1]]
    }

    pub fn flows(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.flow_count()).map(move |f| self.flow(f))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((j, c)) = self
            .relay_capacities
            .iter()
            .enumerate()
            .find(|(_, c)| !(**c > 0.0 && c.is_finite()))
        {
            return Err(Error::InvalidInput(format!("relay {j} has capacity {c}")));
        }
        for (f, relays) in self.flows().enumerate() {
            if relays.is_empty() {
                return Err(Error::InvalidInput(format!("flow {f} traverses no relay")));
            }
            if let Some(&r) = relays.iter().find(|&&r| r >= self.relay_count()) {
                return Err(Error::InvalidInput(format!("flow {f} references unknown relay {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub flow_rates: Vec<f64>,
    pub relay_loads: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Saturation {
    level: f64,
    relay: usize,
}

impl Eq for Saturation {}

impl Ord for Saturation {
    // Reversed so BinaryHeap pops the lowest level, then the lowest relay id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .level
            .total_cmp(&self.level)
            .then_with(|| other.relay.cmp(&self.relay))
    }
}

impl PartialOrd for Saturation {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Progressive-filling max-min allocation.
///
/// Assumes a valid problem (see [`AllocationProblem::validate`]).
pub fn maxmin_allocate(problem: &AllocationProblem) -> AllocationResult {
    let n_relays = problem.relay_count();
    let n_flows = problem.flow_count();

    // Reverse index: flows crossing each relay.
    let mut counts = vec![0usize; n_relays + 1];
    for f in problem.flows() {
        for &r in f {
            counts[r + 1] += 1;
        }
    }
    for r in 0..n_relays {
        counts[r + 1] += counts[r];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut relay_flows = vec![0usize; problem.flow_relays.len()];
    for (f, relays) in problem.flows().enumerate() {
        for &r in relays {
            relay_flows[cursor[r]] = f;
            cursor[r] += 1;
        }
    }

    let caps = problem.relay_capacities();
    let mut unfrozen: Vec<usize> = (0..n_relays).map(|r| offsets[r + 1] - offsets[r]).collect();
    let mut frozen_load = vec![0.0f64; n_relays];
    let mut rate = vec![f64::NAN; n_flows];
    let level_of = |r: usize, frozen: &[f64], unfrozen: &[usize]| {
        ((caps[r] - frozen[r]) / unfrozen[r] as f64).max(0.0)
    };

    let mut heap: BinaryHeap<Saturation> = (0..n_relays)
        .filter(|&r| unfrozen[r] > 0)
        .map(|r| Saturation {
            level: level_of(r, &frozen_load, &unfrozen),
            relay: r,
        })
        .collect();

    let mut water = 0.0f64;
    let mut remaining = n_flows;
    while remaining > 0 {
        let Some(Saturation { level, relay }) = heap.pop() else {
            break;
        };
        if unfrozen[relay] == 0 || level != level_of(relay, &frozen_load, &unfrozen) {
            continue;
        }
        water = water.max(level);
        for &f in &relay_flows[offsets[relay]..offsets[relay + 1]] {
            if !rate[f].is_nan() {
                continue;
            }
            rate[f] = water;
            remaining -= 1;
            for &s in problem.flow(f) {
                frozen_load[s] += water;
                unfrozen[s] -= 1;
                if s != relay && unfrozen[s] > 0 {
                    heap.push(Saturation {
                        level: level_of(s, &frozen_load, &unfrozen),
                        relay: s,
                    });
                }
            }
        }
    }

    let mut relay_loads = vec![0.0; n_relays];
    for (f, relays) in problem.flows().enumerate() {
        for &r in relays {
            relay_loads[r] += rate[f];
        }
    }
    AllocationResult {
        flow_rates: rate,
        relay_loads,
    }
}

/// Dual-probe observations for one relay in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPair {
    /// Rate of the first probe, alone on the relay.
    pub m1: f64,
    /// Rate of the second probe, added while the first is active.
    pub m2: f64,
}

/// Client-side load per relay from the probe-free allocation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundLoad {
    pub client_flow_count: Vec<usize>,
    pub client_throughput: Vec<f64>,
}

/// Everything the measurement passes of one round produce.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMeasurement {
    pub pairs: Vec<MeasurementPair>,
    pub load: RoundLoad,
    /// Client path rates in the probe-free allocation, in path order.
    pub client_rates: Vec<f64>,
    /// Per-relay load during the single-probe pass (clients plus probe).
    pub probed_throughput: Vec<f64>,
}

/// Runs the three allocations of a round: clients only, clients plus one
/// probe per relay, and clients plus two probes per relay. All relays are
/// probed jointly in each pass.
pub fn measure_relay_pair(capacities: &[f64], paths: &[Path]) -> Result<RoundMeasurement> {
    let n = capacities.len();
    let mut problem = AllocationProblem::new(capacities.to_vec());
    for p in paths {
        let mut hops = p.relays().to_vec();
        if let Some(cap) = p.cap {
            hops.push(problem.add_relay(cap));
        }
        problem.add_flow(&hops);
    }
    problem.validate()?;
    let n_clients = paths.len();

    let base = maxmin_allocate(&problem);
    let mut load = RoundLoad {
        client_flow_count: vec![0; n],
        client_throughput: vec![0.0; n],
    };
    for (p, &r) in paths.iter().zip(&base.flow_rates) {
        for j in p.relays() {
            load.client_flow_count[j] += 1;
            load.client_throughput[j] += r;
        }
    }

    for j in 0..n {
        problem.add_flow(&[j]);
    }
    let pass1 = maxmin_allocate(&problem);
    let m1: Vec<f64> = pass1.flow_rates[n_clients..n_clients + n].to_vec();
    let probed_throughput = pass1.relay_loads[..n].to_vec();

    for j in 0..n {
        problem.add_flow(&[j]);
    }
    let pass2 = maxmin_allocate(&problem);
    let second = &pass2.flow_rates[n_clients + n..n_clients + 2 * n];

    let pairs = m1
        .iter()
        .zip(second)
        .map(|(&m1, &m2)| MeasurementPair { m1, m2 })
        .collect();
    Ok(RoundMeasurement {
        pairs,
        load,
        client_rates: base.flow_rates[..n_clients].to_vec(),
        probed_throughput,
    })
}
