//! Relay population, consensus weights, and proportional path construction.
//!
//! Relays fall into three classes. Exits fill the last path position, guards
//! the first, and the middle position is drawn from guards and middles
//! together, with guard capacity scaled by the multiplier `W_mg` so that
//! guard bandwidth is not exhausted by middle-position traffic.

use std::collections::VecDeque;
use std::fmt;
use std::io::Read;
use std::path::Path as FsPath;
use std::str::FromStr;

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of every published weight vector.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Attempts made to re-draw a colliding middle relay before giving up.
pub const MAX_COLLISION_REDRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelayClass {
    Guard,
    Middle,
    Exit,
}

impl RelayClass {
    pub const ALL: [RelayClass; 3] = [RelayClass::Guard, RelayClass::Middle, RelayClass::Exit];

    pub fn as_str(self) -> &'static str {
        match self {
            RelayClass::Guard => "guard",
            RelayClass::Middle => "middle",
            RelayClass::Exit => "exit",
        }
    }
}

impl fmt::Display for RelayClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelayClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "guard" => Ok(RelayClass::Guard),
            "middle" => Ok(RelayClass::Middle),
            // Relays flagged both Exit and Guard are accounted as exits.
            "exit" | "guard+exit" | "exit+guard" => Ok(RelayClass::Exit),
            other => Err(Error::InvalidInput(format!(
                "unknown relay class {other:?} (expected guard, middle or exit)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relay {
    pub id: usize,
    pub class: RelayClass,
    /// True capacity in kb/s.
    pub true_capacity: f64,
    observed_bw_window: VecDeque<f64>,
}

impl Relay {
    pub fn new(id: usize, class: RelayClass, true_capacity: f64) -> Result<Self> {
        if !(true_capacity > 0.0 && true_capacity.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "relay {id}: capacity must be positive and finite, got {true_capacity}"
            )));
        }
        Ok(Relay {
            id,
            class,
            true_capacity,
            observed_bw_window: VecDeque::new(),
        })
    }

    /// Appends one round's realized throughput, keeping at most `window`
    /// entries.
    pub fn record_throughput(&mut self, throughput: f64, window: usize) {
        self.observed_bw_window.push_back(throughput.max(0.0));
        while self.observed_bw_window.len() > window.max(1) {
            self.observed_bw_window.pop_front();
        }
    }

    /// Self-reported observed bandwidth: the maximum throughput in the
    /// window, or zero before any round has been recorded.
    pub fn observed_bandwidth(&self) -> f64 {
        self.observed_bw_window.iter().copied().fold(0.0, f64::max)
    }

    pub fn observed_window(&self) -> impl Iterator<Item = f64> + '_ {
        self.observed_bw_window.iter().copied()
    }
}

/// Relay counts per class for synthetic populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub guard: usize,
    pub middle: usize,
    pub exit: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.guard + self.middle + self.exit
    }
}

impl Default for ClassCounts {
    fn default() -> Self {
        ClassCounts {
            guard: 24,
            middle: 22,
            exit: 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    relays: Vec<Relay>,
}

#[derive(Debug, Deserialize)]
struct PopulationRow {
    relay_id: usize,
    class: String,
    capacity_kbps: f64,
}

impl Network {
    /// Builds a network, re-ordering relays by id. Ids must be a permutation
    /// of `0..n` and the guard and exit classes must be nonempty.
    pub fn new(mut relays: Vec<Relay>) -> Result<Self> {
        relays.sort_by_key(|r| r.id);
        for (expected, relay) in relays.iter().enumerate() {
            if relay.id != expected {
                return Err(Error::InvalidInput(format!(
                    "relay ids must be a permutation of 0..{}; id {} missing or duplicated",
                    relays.len(),
                    expected
                )));
            }
        }
        let net = Network { relays };
        for class in [RelayClass::Guard, RelayClass::Exit] {
            if net.members(class).next().is_none() {
                return Err(Error::DegenerateNetwork(format!("no {class} relays")));
            }
        }
        Ok(net)
    }

    /// Builds a network where relay `i` has `classes[i]` and `capacities[i]`.
    pub fn from_parts(classes: &[RelayClass], capacities: &[f64]) -> Result<Self> {
        if classes.len() != capacities.len() {
            return Err(Error::InvalidInput(
                "class and capacity vectors differ in length".into(),
            ));
        }
        let relays = classes
            .iter()
            .zip(capacities)
            .enumerate()
            .map(|(id, (&class, &cap))| Relay::new(id, class, cap))
            .collect::<Result<Vec<_>>>()?;
        Network::new(relays)
    }

    /// Reads a population CSV with header `relay_id,class,capacity_kbps`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["relay_id", "class", "capacity_kbps"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::InvalidInput(format!(
                "population header must be `{}`, got `{}`",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut relays = Vec::new();
        for row in rdr.deserialize::<PopulationRow>() {
            let row = row?;
            relays.push(Relay::new(row.relay_id, row.class.parse()?, row.capacity_kbps)?);
        }
        Network::new(relays)
    }

    pub fn from_csv_path(path: impl AsRef<FsPath>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Network::from_csv_reader(file)
    }

    /// Writes the population in the same CSV format it is read from.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["relay_id", "class", "capacity_kbps"])?;
        for r in &self.relays {
            w.write_record([
                r.id.to_string(),
                r.class.to_string(),
                format!("{}", r.true_capacity),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<population csv>", e))?;
        Ok(())
    }

    /// Synthetic population: capacities log-uniform over `cap_range` within
    /// each class. Guards get the lowest ids, then middles, then exits.
    pub fn synthetic<R: Rng + ?Sized>(
        counts: ClassCounts,
        cap_range: (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        let (lo, hi) = cap_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "synthetic capacity range must satisfy 0 < min <= max, got [{lo}, {hi}]"
            )));
        }
        let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
        let mut classes = Vec::with_capacity(counts.total());
        classes.extend(std::iter::repeat_n(RelayClass::Guard, counts.guard));
        classes.extend(std::iter::repeat_n(RelayClass::Middle, counts.middle));
        classes.extend(std::iter::repeat_n(RelayClass::Exit, counts.exit));
        let capacities: Vec<f64> = classes
            .iter()
            .map(|_| {
                let u: f64 = rng.random();
                (ln_lo + u * (ln_hi - ln_lo)).exp()
            })
            .collect();
        Network::from_parts(&classes, &capacities)
    }

    pub fn len(&self) -> usize {
        self.relays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relays.is_empty()
    }

    pub fn relays(&self) -> &[Relay] {
        &self.relays
    }

    pub fn relay(&self, id: usize) -> &Relay {
        &self.relays[id]
    }

    pub(crate) fn relay_mut(&mut self, id: usize) -> &mut Relay {
        &mut self.relays[id]
    }

    pub fn class_of(&self, id: usize) -> RelayClass {
        self.relays[id].class
    }

    pub fn members(&self, class: RelayClass) -> impl Iterator<Item = usize> + '_ {
        self.relays.iter().filter(move |r| r.class == class).map(|r| r.id)
    }

    pub fn true_capacities(&self) -> Vec<f64> {
        self.relays.iter().map(|r| r.true_capacity).collect()
    }

    pub fn max_capacity(&self) -> f64 {
        self.relays.iter().map(|r| r.true_capacity).fold(0.0, f64::max)
    }

    pub fn min_capacity(&self) -> f64 {
        self.relays
            .iter()
            .map(|r| r.true_capacity)
            .fold(f64::INFINITY, f64::min)
    }
}

/// One round's published estimates and the selection weights derived from
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusRound {
    pub round: usize,
    pub estimates: Vec<f64>,
    pub weight_exit: Vec<f64>,
    pub weight_guard: Vec<f64>,
    pub weight_middle: Vec<f64>,
    pub w_mg: f64,
}

impl ConsensusRound {
    pub fn with_round(mut self, round: usize) -> Self {
        self.round = round;
        self
    }

    /// Probability that one path uses relay `j` in any position. Guards can
    /// be picked first or second, so their two role weights add up.
    pub fn selection_weight(&self, j: usize) -> f64 {
        self.weight_exit[j] + self.weight_guard[j] + self.weight_middle[j]
    }

    pub fn selection_weights(&self) -> Vec<f64> {
        (0..self.estimates.len()).map(|j| self.selection_weight(j)).collect()
    }

    /// Checks the normalization and support rules for every role vector.
    pub fn validate(&self, network: &Network) -> Result<()> {
        let n = network.len();
        for (name, v, legal) in [
            ("exit", &self.weight_exit, &[RelayClass::Exit][..]),
            ("guard", &self.weight_guard, &[RelayClass::Guard][..]),
            (
                "middle",
                &self.weight_middle,
                &[RelayClass::Guard, RelayClass::Middle][..],
            ),
        ] {
            if v.len() != n {
                return Err(Error::InvalidInput(format!("{name} weights sized {} != {n}", v.len())));
            }
            let mut sum = 0.0;
            for (j, &x) in v.iter().enumerate() {
                if x.is_nan() || x < 0.0 {
                    return Err(Error::InvalidInput(format!("{name} weight {j} is {x}")));
                }
                if x > 0.0 && !legal.contains(&network.class_of(j)) {
                    return Err(Error::InvalidInput(format!(
                        "{name} weight on relay {j} of class {}",
                        network.class_of(j)
                    )));
                }
                sum += x;
            }
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::InvalidInput(format!("{name} weights sum to {sum}")));
            }
        }
        Ok(())
    }
}

/// Derives the per-position selection weights from capacity estimates.
///
/// `W_mg = (ΣG − ΣM) / (2ΣG)`, clamped to `[0, 1]`.
pub fn compute_weights(estimates: &[f64], network: &Network) -> Result<ConsensusRound> {
    if estimates.len() != network.len() {
        return Err(Error::InvalidInput(format!(
            "{} estimates for {} relays",
            estimates.len(),
            network.len()
        )));
    }
    if let Some((j, &c)) = estimates.iter().enumerate().find(|(_, c)| !(**c >= 0.0 && c.is_finite())) {
        return Err(Error::InvalidInput(format!("estimate for relay {j} is {c}")));
    }

    let class_sum = |class| -> f64 { network.members(class).map(|j| estimates[j]).sum() };
    let (sum_g, sum_m, sum_e) = (
        class_sum(RelayClass::Guard),
        class_sum(RelayClass::Middle),
        class_sum(RelayClass::Exit),
    );
    for (class, sum) in [
        (RelayClass::Guard, sum_g),
        (RelayClass::Middle, sum_m),
        (RelayClass::Exit, sum_e),
    ] {
        if sum <= 0.0 && network.members(class).next().is_some() {
            return Err(Error::DegenerateConsensus(format!(
                "{class} relays have zero total estimated capacity"
            )));
        }
    }

    let w_mg = ((sum_g - sum_m) / (2.0 * sum_g)).clamp(0.0, 1.0);
    let middle_denominator = w_mg * sum_g + sum_m;
    if middle_denominator <= 0.0 {
        return Err(Error::DegenerateConsensus(
            "middle position has no selectable capacity".into(),
        ));
    }

    let n = network.len();
    let mut weight_exit = vec![0.0; n];
    let mut weight_guard = vec![0.0; n];
    let mut weight_middle = vec![0.0; n];
    for r in network.relays() {
        let c = estimates[r.id];
        match r.class {
            RelayClass::Exit => weight_exit[r.id] = c / sum_e,
            RelayClass::Guard => {
                weight_guard[r.id] = c / sum_g;
                weight_middle[r.id] = w_mg * c / middle_denominator;
            }
            RelayClass::Middle => weight_middle[r.id] = c / middle_denominator,
        }
    }

    Ok(ConsensusRound {
        round: 0,
        estimates: estimates.to_vec(),
        weight_exit,
        weight_guard,
        weight_middle,
        w_mg,
    })
}

/// A client path. `cap` is the private per-client bandwidth limit used in
/// the under-loaded scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub guard: usize,
    pub middle: usize,
    pub exit: usize,
    pub cap: Option<f64>,
}

impl Path {
    pub fn relays(&self) -> [usize; 3] {
        [self.guard, self.middle, self.exit]
    }
}

/// Draws `count` paths from the round's weights. The exit comes from the
/// exit weights, the guard from the guard weights, and the middle from the
/// middle weights; a middle equal to the guard is re-drawn. After
/// [`MAX_COLLISION_REDRAWS`] failed re-draws the middle is drawn with the
/// guard excluded.
pub fn sample_paths<R: Rng + ?Sized>(
    count: usize,
    weights: &ConsensusRound,
    rng: &mut R,
    underloaded: bool,
    cap_range: (f64, f64),
) -> Result<Vec<Path>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let (cap_lo, cap_hi) = cap_range;
    if underloaded && !(cap_lo > 0.0 && cap_hi >= cap_lo) {
        return Err(Error::InvalidInput(format!(
            "cap range must satisfy 0 < min <= max, got [{cap_lo}, {cap_hi}]"
        )));
    }
    let index = |v: &[f64], role: &str| {
        WeightedIndex::new(v).map_err(|e| {
            Error::DegenerateNetwork(format!("{role} weights cannot be sampled: {e}"))
        })
    };
    let exit_dist = index(&weights.weight_exit, "exit")?;
    let guard_dist = index(&weights.weight_guard, "guard")?;
    let middle_dist = index(&weights.weight_middle, "middle")?;

    let mut paths = Vec::with_capacity(count);
    for _ in 0..count {
        let exit = exit_dist.sample(rng);
        let guard = guard_dist.sample(rng);
        let mut middle = middle_dist.sample(rng);
        let mut attempts = 0;
        while middle == guard {
            attempts += 1;
            if attempts > MAX_COLLISION_REDRAWS {
                middle = sample_excluding(&weights.weight_middle, guard, rng)?;
                break;
            }
            middle = middle_dist.sample(rng);
        }
        let cap = underloaded.then(|| {
            if cap_hi > cap_lo {
                rng.random_range(cap_lo..=cap_hi)
            } else {
                cap_lo
            }
        });
        paths.push(Path {
            guard,
            middle,
            exit,
            cap,
        });
    }
    Ok(paths)
}

/// Draws from `weights` with entry `excluded` removed, which is the law
/// that unbounded re-drawing converges to.
fn sample_excluding<R: Rng + ?Sized>(weights: &[f64], excluded: usize, rng: &mut R) -> Result<usize> {
    let mut w = weights.to_vec();
    w[excluded] = 0.0;
    let dist = WeightedIndex::new(&w).map_err(|_| {
        Error::DegenerateNetwork(format!("no middle relay other than guard {excluded} has positive weight"))
    })?;
    Ok(dist.sample(rng))
}

/// Number of users arriving in one round: Poisson with mean `lambda`.
pub fn sample_user_count<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("user rate must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(lambda).map_err(|e| Error::InvalidInput(format!("poisson({lambda}): {e}")))?;
    Ok(dist.sample(rng) as u64)
}
