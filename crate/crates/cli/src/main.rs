use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ldlc::decoder::{decode, DecoderParams};
use ldlc::gmix::ReductionParams;
use ldlc::lattice::MagicSquareH;
use ldlc::selftest::{self, SelftestConfig};
use ldlc::sim::{sweep_with_matrix, SimConfig, SweepTable, Transmission};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "ldlc", version, about = "Low-density lattice codes with a Gaussian-mixture decoder")]
struct Cli {
    /// Worker threads for Monte Carlo runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a magic-square parity matrix.
    GenLattice {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        d: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode one channel output.
    Decode {
        #[arg(long)]
        matrix: PathBuf,
        /// One real per line.
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        sigma2: f64,
        #[command(flatten)]
        decoder: DecoderArgs,
        /// Write b̂ here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo symbol error rate of a stored matrix.
    Simulate {
        #[arg(long)]
        matrix: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Generate a matrix from the seed and simulate it.
    Sweep {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        d: usize,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Cross-check closed forms and node rules against numerical oracles.
    Selftest {
        /// Run the full case counts instead of the quick ones.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args, Debug, Clone)]
struct DecoderArgs {
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, default_value_t = 6)]
    max_components: usize,
    #[arg(long, default_value_t = 3)]
    shifts: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
}

/// Bad option values that clap itself cannot catch; exits like a parse error.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl DecoderArgs {
    fn params(&self) -> Result<DecoderParams> {
        let reduction =
            ReductionParams::new(self.theta, self.max_components).map_err(|e| UsageError(e.to_string()))?;
        let params = DecoderParams {
            reduction,
            shift_count: self.shifts,
            max_iterations: self.max_iters,
            ..DecoderParams::default()
        };
        params.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(params)
    }

    fn record(&self, map: &mut BTreeMap<String, Value>) {
        map.insert("theta".into(), json!(self.theta));
        map.insert("max_components".into(), json!(self.max_components));
        map.insert("shifts".into(), json!(self.shifts));
        map.insert("max_iters".into(), json!(self.max_iters));
    }
}

#[derive(Args, Debug, Clone)]
struct SimArgs {
    /// Comma-separated distances from the Poltyrev threshold, in dB.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    db: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    decoder: DecoderArgs,
    /// CSV output path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    params: BTreeMap<String, Value>,
    seed: Option<u64>,
    version: &'static str,
    timestamp: String,
}

impl RunManifest {
    fn new(command: &str, params: BTreeMap<String, Value>, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            params,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    /// Writes `<artifact>.manifest.json` next to the artifact.
    fn write_beside(&self, artifact: &Path) -> Result<()> {
        let path = sidecar(artifact, "manifest.json");
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }
}

fn sidecar(artifact: &Path, suffix: &str) -> PathBuf {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn read_matrix(path: &Path) -> Result<MagicSquareH> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    MagicSquareH::read_from(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn read_reals(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(t.parse::<f64>().with_context(|| format!("{}:{}: not a number: {t}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn gen_lattice(n: usize, d: usize, seed: u64, out: &Path, as_json: bool) -> Result<()> {
    let h = MagicSquareH::generate(n, d, seed)?;
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    h.write_to(&mut w)?;
    w.flush()?;
    let params = BTreeMap::from([("n".to_string(), json!(n)), ("d".to_string(), json!(d))]);
    RunManifest::new("gen-lattice", params, Some(seed)).write_beside(out)?;
    if as_json {
        println!("{}", json!({ "out": out, "n": n, "d": d, "edges": h.edge_count(), "scale": h.global_scale() }));
    } else {
        eprintln!("wrote {} ({n}x{n}, {} non-zeros)", out.display(), h.edge_count());
    }
    Ok(())
}

fn run_decode(
    matrix: &Path,
    y_path: &Path,
    sigma2: f64,
    decoder: &DecoderArgs,
    out: Option<&Path>,
    as_json: bool,
) -> Result<()> {
    let h = read_matrix(matrix)?;
    let y = read_reals(y_path)?;
    let res = decode(&y, &h, sigma2, &decoder.params()?)?;
    let diag = json!({
        "iterations": res.iterations_used,
        "converged": res.converged,
        "max_components_per_iteration": res.diagnostics.max_components_per_iteration,
        "peak_stored_components": res.diagnostics.peak_stored_components,
        "variance_clamps": res.diagnostics.variance_clamps,
    });
    let mut b_lines = String::new();
    for b in &res.b_hat {
        b_lines.push_str(&b.to_string());
        b_lines.push('\n');
    }
    match out {
        Some(path) => {
            std::fs::write(path, &b_lines).with_context(|| format!("writing {}", path.display()))?;
            std::fs::write(sidecar(path, "diag.jsonl"), format!("{diag}\n"))?;
            let mut params = BTreeMap::new();
            params.insert("matrix".into(), json!(matrix));
            params.insert("y".into(), json!(y_path));
            params.insert("sigma2".into(), json!(sigma2));
            decoder.record(&mut params);
            RunManifest::new("decode", params, None).write_beside(path)?;
            if as_json {
                println!("{diag}");
            }
        }
        None if as_json => {
            println!("{}", json!({ "b_hat": res.b_hat, "diagnostics": diag }));
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(b_lines.as_bytes())?;
            writeln!(lock, "{diag}")?;
        }
    }
    Ok(())
}

fn run_sim(command: &str, h: &MagicSquareH, sim: &SimArgs, extra: BTreeMap<String, Value>, as_json: bool) -> Result<()> {
    if sim.db.is_empty() {
        bail!(UsageError("--db needs at least one value".into()));
    }
    let config = SimConfig {
        n: h.n(),
        d: h.d(),
        db_distances: sim.db.clone(),
        trials_per_point: sim.trials,
        decoder_params: sim.decoder.params()?,
        seed: sim.seed,
        transmission: Transmission::Zero,
    };
    let table = sweep_with_matrix(h, &config)?;
    match &sim.out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            table.write_csv(&mut w)?;
            w.flush()?;
            let mut params = extra;
            params.insert("db".into(), json!(sim.db));
            params.insert("trials".into(), json!(sim.trials));
            sim.decoder.record(&mut params);
            RunManifest::new(command, params, Some(sim.seed)).write_beside(path)?;
            if as_json {
                println!("{}", table_json(&table));
            }
        }
        None if as_json => println!("{}", table_json(&table)),
        None => print!("{}", table.to_csv()),
    }
    Ok(())
}

fn table_json(table: &SweepTable) -> Value {
    Value::Array(
        table
            .points
            .iter()
            .map(|p| {
                json!({
                    "db": p.db, "sigma2": p.sigma2, "trials": p.trials, "symbol_errors": p.symbol_errors,
                    "ser": p.ser, "ci_low": p.ci_low, "ci_high": p.ci_high, "mean_iters": p.mean_iters,
                    "uncoded_ser": p.uncoded_ser, "decode_failures": p.decode_failures,
                    "peak_components": p.peak_components,
                })
            })
            .collect(),
    )
}

fn run_selftest(full: bool, seed: u64, as_json: bool) -> Result<bool> {
    let cfg = SelftestConfig { seed, ..if full { SelftestConfig::full() } else { SelftestConfig::quick() } };
    let outcomes = selftest::run_all(&cfg);
    if as_json {
        let items: Vec<Value> =
            outcomes.iter().map(|o| json!({ "name": o.name, "passed": o.passed, "detail": o.detail })).collect();
        println!("{}", Value::Array(items));
    } else {
        for o in &outcomes {
            println!("{o}");
        }
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::GenLattice { n, d, seed, out } => gen_lattice(n, d, seed, &out, cli.json)?,
        Command::Decode { matrix, y, sigma2, decoder, out } => {
            run_decode(&matrix, &y, sigma2, &decoder, out.as_deref(), cli.json)?
        }
        Command::Simulate { matrix, sim } => {
            let h = read_matrix(&matrix)?;
            let extra = BTreeMap::from([("matrix".to_string(), json!(matrix))]);
            run_sim("simulate", &h, &sim, extra, cli.json)?
        }
        Command::Sweep { n, d, sim } => {
            let h = MagicSquareH::generate(n, d, sim.seed)?;
            let extra = BTreeMap::from([("n".to_string(), json!(n)), ("d".to_string(), json!(d))]);
            run_sim("sweep", &h, &sim, extra, cli.json)?
        }
        Command::Selftest { full, seed } => return run_selftest(full, seed, cli.json),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<UsageError>() { 1 } else { 2 })
        }
    }
}
