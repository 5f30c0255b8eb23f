//! Configuration, population setup and run orchestration for the `relaycap`
//! binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use relaycap::metrics::{self, MonteCarloSummary, Summary};
use relaycap::network::{ClassCounts, Network};
use relaycap::simulator::{
    run_monte_carlo, run_simulation, EstimatorSettings, NoiseModel, SimConfig, POPULATION_STREAM,
};
use relaycap::{rng, EstimatorKind};

pub const MANIFEST_JSON: &str = "manifest.json";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Capacity range of synthetic populations, kb/s.
pub const SYNTHETIC_CAPACITY_RANGE: (f64, f64) = (100.0, 169_000.0);

#[derive(Debug, Clone, Parser)]
#[command(name = "relaycap", version, about = "Relay capacity estimation simulator")]
pub struct Args {
    /// JSON run configuration (a previous manifest.json also works).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Relay population CSV with header relay_id,class,capacity_kbps.
    #[arg(long)]
    pub relays: Option<PathBuf>,
    /// Estimation method.
    #[arg(long)]
    pub method: Option<EstimatorKind>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mean number of users per round.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Give every client flow a private bandwidth cap.
    #[arg(long)]
    pub underloaded: bool,
    /// Smallest per-client cap, kb/s.
    #[arg(long)]
    pub cap_min: Option<f64>,
    /// Largest per-client cap, kb/s.
    #[arg(long)]
    pub cap_max: Option<f64>,
    /// Multiply probe readings by truncated-normal noise.
    #[arg(long)]
    pub noise: bool,
    /// Base of the geometric capacity grid.
    #[arg(long)]
    pub quant_base: Option<f64>,
    /// Relative band for the unsaturated-relay test |m1 - 2 m2| <= tol m1.
    #[arg(long)]
    pub case_tolerance: Option<f64>,
    /// Known average client bandwidth, kb/s.
    #[arg(long)]
    pub c_avg_client: Option<f64>,
    /// Number of Monte Carlo trials; more than one switches to Monte Carlo output.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// A complete run description; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub lambda_s: f64,
    pub rounds: usize,
    pub method: EstimatorKind,
    pub seed: u64,
    pub underloaded: bool,
    pub cap_range: (f64, f64),
    pub noise: Option<NoiseModel>,
    pub estimator: EstimatorSettings,
    pub window: usize,
    pub trials: usize,
    /// Population CSV; a synthetic population is drawn when absent.
    pub relays: Option<PathBuf>,
    pub class_counts: ClassCounts,
    /// Provenance written by a previous run; ignored except for checking the
    /// population file digest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_sim(SimConfig::default())
    }
}

impl RunConfig {
    fn from_sim(sim: SimConfig) -> Self {
        RunConfig {
            lambda_s: sim.lambda_s,
            rounds: sim.rounds,
            method: sim.method,
            seed: sim.seed,
            underloaded: sim.underloaded,
            cap_range: sim.cap_range,
            noise: sim.noise,
            estimator: sim.estimator,
            window: sim.window,
            trials: 1,
            relays: None,
            class_counts: ClassCounts::default(),
            manifest: None,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            lambda_s: self.lambda_s,
            rounds: self.rounds,
            method: self.method,
            seed: self.seed,
            underloaded: self.underloaded,
            cap_range: self.cap_range,
            noise: self.noise,
            estimator: self.estimator,
            window: self.window,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("invalid configuration")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        RunConfig::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Applies command-line overrides.
    pub fn apply(&mut self, args: &Args) {
        if let Some(p) = &args.relays {
            self.relays = Some(p.clone());
        }
        if let Some(m) = args.method {
            self.method = m;
        }
        if let Some(r) = args.rounds {
            self.rounds = r;
        }
        if let Some(s) = args.seed {
            self.seed = s;
        }
        if let Some(l) = args.lambda {
            self.lambda_s = l;
        }
        if args.underloaded {
            self.underloaded = true;
        }
        if let Some(lo) = args.cap_min {
            self.cap_range.0 = lo;
        }
        if let Some(hi) = args.cap_max {
            self.cap_range.1 = hi;
        }
        if args.noise && self.noise.is_none() {
            self.noise = Some(NoiseModel::default());
        }
        if let Some(b) = args.quant_base {
            self.estimator.quant_base = b;
        }
        if let Some(t) = args.case_tolerance {
            self.estimator.case_tolerance = t;
        }
        if let Some(c) = args.c_avg_client {
            self.estimator.c_avg_client = Some(c);
        }
        if let Some(k) = args.trials {
            self.trials = k;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config().validate()?;
        if self.trials < 1 {
            bail!("trials must be at least 1");
        }
        if self.relays.is_none() && self.class_counts.total() == 0 {
            bail!("class_counts must describe at least one relay");
        }
        Ok(())
    }
}

/// Provenance recorded next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInfo {
    pub version: String,
    /// SHA-256 of each input file, keyed by role.
    pub inputs: BTreeMap<String, String>,
}

/// The resolved configuration plus provenance. Written as `manifest.json`;
/// loading it with `--config` repeats the run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: RunConfig,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.config)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Merges the config file (if any) with command-line flags.
pub fn resolve(args: &Args) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(args);
    cfg.validate()?;
    Ok(cfg)
}

/// Loads or generates the relay population, and returns it with the input
/// digests.
pub fn load_population(cfg: &RunConfig) -> Result<(Network, BTreeMap<String, String>)> {
    let mut inputs = BTreeMap::new();
    let network = match &cfg.relays {
        Some(path) => {
            let digest = sha256_file(path)?;
            if let Some(expected) = cfg.manifest.as_ref().and_then(|m| m.inputs.get("relays")) {
                if *expected != digest {
                    bail!(
                        "relay file {} does not match the manifest digest (expected {expected}, found {digest})",
                        path.display()
                    );
                }
            }
            inputs.insert("relays".to_string(), digest);
            Network::from_csv_path(path).with_context(|| format!("loading relays from {}", path.display()))?
        }
        None => Network::synthetic(
            cfg.class_counts,
            SYNTHETIC_CAPACITY_RANGE,
            &mut rng::stream(cfg.seed, POPULATION_STREAM),
        )?,
    };
    Ok((network, inputs))
}

/// Executes a run and writes its outputs. Returns the written paths.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (network, inputs) = load_population(cfg)?;
    let sim = cfg.sim_config();
    let mut written = if cfg.trials > 1 {
        let mc = run_monte_carlo(&network, &sim, cfg.trials)?;
        let summary = MonteCarloSummary::new(sim.method, sim.seed, &mc);
        vec![metrics::export_monte_carlo(&summary, out)?]
    } else {
        let records = run_simulation(&network, &sim)?;
        let summary = Summary::new(sim.method, sim.seed, &records);
        metrics::export(&records, &summary, out)?
    };
    let mut resolved = cfg.clone();
    resolved.manifest = Some(ManifestInfo {
        version: VERSION.to_string(),
        inputs,
    });
    let manifest = RunManifest { config: resolved };
    let path = out.join(MANIFEST_JSON);
    fs::write(&path, manifest.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(written)
}

/// Parses `argv`, runs, and reports. Returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = resolve(&args).and_then(|cfg| run(&cfg, &args.out));
    match outcome {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
