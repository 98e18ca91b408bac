//! AWGN Monte Carlo harness.
//!
//! Noise levels are given as a distance in dB from the Poltyrev threshold
//! `σ² = 1/(2πe)` of a unit-volume lattice. Each trial sends a lattice point,
//! adds white Gaussian noise, decodes, and counts the integer coordinates
//! that came back wrong. Trial noise is drawn from a ChaCha stream keyed by
//! `(seed, point index, trial index)`, so results do not depend on how trials
//! are scheduled across threads.

use std::f64::consts::{E, PI};
use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::decoder::{decode, DecoderParams};
use crate::lattice::{LatticeError, MagicSquareH};

/// Two-sided 97.5% standard normal quantile.
const Z_95: f64 = 1.959_963_984_540_054;

pub const CSV_HEADER: &str = "db,sigma2,trials,symbol_errors,ser,ci_low,ci_high,mean_iters,uncoded_ser";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trials per point must be at least 1")]
    NoTrials,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("at {db} dB: {source}")]
    Point {
        db: f64,
        #[source]
        source: Box<SimError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What each trial transmits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transmission {
    /// The all-zeros lattice point.
    #[default]
    Zero,
    /// `b` uniform in `[−radius, radius]ⁿ`, encoded per trial.
    RandomIntegers { radius: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub d: usize,
    /// Distances above the Poltyrev threshold, in dB.
    pub db_distances: Vec<f64>,
    pub trials_per_point: usize,
    pub decoder_params: DecoderParams,
    pub seed: u64,
    pub transmission: Transmission,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.trials_per_point == 0 {
            return Err(SimError::NoTrials);
        }
        if let Some(db) = self.db_distances.iter().find(|x| !x.is_finite()) {
            return Err(SimError::InvalidConfig(format!("non-finite dB distance {db}")));
        }
        self.decoder_params.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))
    }
}

/// Outcome of one transmitted codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub db: f64,
    pub sigma2: f64,
    /// Number of `i` with `b̂_i ≠ b_i`.
    pub symbol_errors: usize,
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
    /// The decoder failed numerically; counted as `n` symbol errors.
    pub decode_failed: bool,
    /// Largest stored message seen during the decode.
    pub peak_components: usize,
}

/// Aggregate of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub db: f64,
    pub sigma2: f64,
    pub trials: usize,
    pub symbol_errors: u64,
    pub symbols: u64,
    pub ser: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_iters: f64,
    pub uncoded_ser: f64,
    pub decode_failures: usize,
    pub peak_components: usize,
}

/// Noise variance `10^(−db/10) / (2πe)` at `db` above the Poltyrev threshold.
pub fn sigma2_from_db(db: f64) -> f64 {
    10f64.powf(-db / 10.0) / (2.0 * PI * E)
}

/// Per-symbol error probability `2·Q(1/(2σ))` of the integer lattice.
pub fn uncoded_ser(sigma2: f64) -> f64 {
    // 2·Q(t) = erfc(t/√2)
    let t = 0.5 / sigma2.sqrt();
    statrs::function::erf::erfc(t / std::f64::consts::SQRT_2)
}

/// Wilson score interval at 95% for `successes` out of `total`.
pub fn wilson_interval(successes: u64, total: u64) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    if successes == 0 {
        let n = total as f64;
        return (0.0, Z_95 * Z_95 / (n + Z_95 * Z_95));
    }
    let n = total as f64;
    let p = successes as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise stream of one trial.
pub fn trial_rng(seed: u64, point_index: u64, trial_index: u64) -> ChaCha8Rng {
    let key = mix64(seed ^ mix64(point_index.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(trial_index);
    rng
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    h: &MagicSquareH,
    db: f64,
    sigma2: f64,
    params: &DecoderParams,
    transmission: Transmission,
    seed: u64,
    point_index: u64,
    trial_index: u64,
) -> Result<TrialRecord, SimError> {
    let n = h.n();
    let mut rng = trial_rng(seed, point_index, trial_index);
    let (b, x) = match transmission {
        Transmission::Zero => (vec![0i64; n], vec![0.0; n]),
        Transmission::RandomIntegers { radius } => {
            let b: Vec<i64> = (0..n).map(|_| rng.random_range(-radius..=radius)).collect();
            let x = h.encode(&b)?.coords;
            (b, x)
        }
    };
    let sigma = sigma2.sqrt();
    let y: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let z: f64 = rng.sample(StandardNormal);
            xi + sigma * z
        })
        .collect();
    let record = match decode(&y, h, sigma2, params) {
        Ok(res) => TrialRecord {
            db,
            sigma2,
            symbol_errors: res.b_hat.iter().zip(&b).filter(|(a, b)| a != b).count(),
            n,
            iterations: res.iterations_used,
            converged: res.converged,
            decode_failed: false,
            peak_components: res.diagnostics.peak_stored_components,
        },
        Err(_) => TrialRecord {
            db,
            sigma2,
            symbol_errors: n,
            n,
            iterations: params.max_iterations,
            converged: false,
            decode_failed: true,
            peak_components: 0,
        },
    };
    Ok(record)
}

/// Runs `trials` codewords at one noise level and returns every record, in
/// trial order.
#[allow(clippy::too_many_arguments)]
pub fn run_trials(
    h: &MagicSquareH,
    db: f64,
    trials: usize,
    params: &DecoderParams,
    seed: u64,
    point_index: u64,
    transmission: Transmission,
) -> Result<Vec<TrialRecord>, SimError> {
    if trials == 0 {
        return Err(SimError::NoTrials);
    }
    let sigma2 = sigma2_from_db(db);
    (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(h, db, sigma2, params, transmission, seed, point_index, t))
        .collect()
}

/// Folds trial records into one summary line.
pub fn summarize(db: f64, records: &[TrialRecord]) -> PointSummary {
    let sigma2 = sigma2_from_db(db);
    let symbol_errors: u64 = records.iter().map(|r| r.symbol_errors as u64).sum();
    let symbols: u64 = records.iter().map(|r| r.n as u64).sum();
    let iterations: u64 = records.iter().map(|r| r.iterations as u64).sum();
    let (ci_low, ci_high) = wilson_interval(symbol_errors, symbols);
    PointSummary {
        db,
        sigma2,
        trials: records.len(),
        symbol_errors,
        symbols,
        ser: if symbols > 0 { symbol_errors as f64 / symbols as f64 } else { 0.0 },
        ci_low,
        ci_high,
        mean_iters: if records.is_empty() { 0.0 } else { iterations as f64 / records.len() as f64 },
        uncoded_ser: uncoded_ser(sigma2),
        decode_failures: records.iter().filter(|r| r.decode_failed).count(),
        peak_components: records.iter().map(|r| r.peak_components).max().unwrap_or(0),
    }
}

/// Symbol error rate at `db` over `trials` all-zeros transmissions.
pub fn run_point(
    h: &MagicSquareH,
    db: f64,
    trials: usize,
    params: &DecoderParams,
    seed: u64,
) -> Result<PointSummary, SimError> {
    let records = run_trials(h, db, trials, params, seed, 0, Transmission::Zero)?;
    Ok(summarize(db, &records))
}

/// Shortest round-trip decimal, switching to exponent form far from 1.
struct Real(f64);

impl std::fmt::Display for Real {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = self.0;
        if v == 0.0 || (1e-4..1e15).contains(&v.abs()) {
            write!(f, "{v}")
        } else {
            write!(f, "{v:e}")
        }
    }
}

/// One row per sweep point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub points: Vec<PointSummary>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CSV_HEADER}").expect("write to String");
        for p in &self.points {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                Real(p.db),
                Real(p.sigma2),
                p.trials,
                p.symbol_errors,
                Real(p.ser),
                Real(p.ci_low),
                Real(p.ci_high),
                Real(p.mean_iters),
                Real(p.uncoded_ser)
            )
            .expect("write to String");
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(self.to_csv().as_bytes())
    }
}

/// Generates the `(n, d)` matrix from `config.seed` and sweeps it.
pub fn sweep(config: &SimConfig) -> Result<SweepTable, SimError> {
    config.validate()?;
    let h = MagicSquareH::generate(config.n, config.d, config.seed)?;
    sweep_with_matrix(&h, config)
}

/// Sweeps `config.db_distances` on a given matrix (`config.n`/`config.d` are
/// ignored).
pub fn sweep_with_matrix(h: &MagicSquareH, config: &SimConfig) -> Result<SweepTable, SimError> {
    config.validate()?;
    let mut points = Vec::with_capacity(config.db_distances.len());
    for (idx, &db) in config.db_distances.iter().enumerate() {
        let records = run_trials(
            h,
            db,
            config.trials_per_point,
            &config.decoder_params,
            config.seed,
            idx as u64,
            config.transmission,
        )
        .map_err(|e| SimError::Point { db, source: Box::new(e) })?;
        points.push(summarize(db, &records));
    }
    Ok(SweepTable { points })
}
