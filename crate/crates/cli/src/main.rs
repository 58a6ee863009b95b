use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cliffsynth::io::{self, BatchHeader, Family};
use cliffsynth::oracle::{self, DistanceTable, Metric, Parity};
use cliffsynth::policy::load_weights;
use cliffsynth::search::{verify_circuit, DecodeConfig, PolicyCache, Schedule};
use cliffsynth::targets::{random_walk_target, uniform_target};
use cliffsynth::train::{Trainer, TrainConfig};
use cliffsynth::{rng, search, Difficulty, Error, Tableau};

const REPORT_HEADER: &str =
    "target_id,n,family,difficulty,solved,cz_count,single_count,samples_used,wall_ms,decoder";

#[derive(Parser)]
#[command(name = "cliffsynth", version, about = "Clifford circuit synthesis with a learned policy")]
struct Cli {
    /// Require an explicit --seed on randomized commands.
    #[arg(long, global = true)]
    ci: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a batch of target tableaus.
    Gen(GenArgs),
    /// Synthesize circuits for a batch of targets.
    Synth(SynthArgs),
    /// Train a policy from a key=value config file.
    Train(TrainArgs),
    /// Exact answers by exhaustive search (n <= 3).
    Oracle(OracleArgs),
    /// Check that a circuit implements a target tableau.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    /// Mean random-walk length.
    #[arg(long, conflicts_with = "uniform", required_unless_present = "uniform")]
    difficulty: Option<f64>,
    /// Sample uniformly from the whole group instead of walking.
    #[arg(long)]
    uniform: bool,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write each walk as `walk_<k>.circuit` in this directory.
    #[arg(long, requires = "difficulty")]
    walk_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    /// bench6, sweep or greedy.
    #[arg(long, default_value = "bench6")]
    preset: String,
    /// Replace the preset's arms with this many samples at --temperature.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 4.0)]
    temperature: f64,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    no_inverse: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for `target_<id>.circuit` files.
    #[arg(long)]
    out_dir: PathBuf,
    /// CSV report; rows are appended.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    config: PathBuf,
    /// Extra `key=value` settings applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    n: usize,
    /// Count the group by breadth-first closure.
    #[arg(long)]
    enumerate: bool,
    /// Print the optimal cost of every tableau in this file.
    #[arg(long)]
    distance: Option<PathBuf>,
    /// Write witness circuits for --distance here.
    #[arg(long, requires = "distance")]
    witness_dir: Option<PathBuf>,
    /// Export the full distance table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// cz (single-qubit gates free) or gates (every gate costs one).
    #[arg(long, default_value = "cz")]
    metric: String,
    /// Two-colour the Cayley graph by walk parity.
    #[arg(long)]
    parity: bool,
    /// Apply the nine-gate odd word and report whether it is the identity.
    #[arg(long)]
    odd_check: bool,
    /// Allow full-group work at n = 3 (1,451,520 states, roughly 100 MB).
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct VerifyArgs {
    circuit: PathBuf,
    target: PathBuf,
    /// Record index when the target file holds several.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Argument(_) | Error::Capacity(_) => 2,
            Error::Format(_) | Error::Shape(_) | Error::Io(_) => 3,
            Error::Invariant(_) | Error::State(_) | Error::Numeric { .. } => 4,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

type Outcome = Result<ExitCode, Failure>;

fn seed_or_entropy(seed: Option<u64>, ci: bool) -> Result<u64, Failure> {
    match seed {
        Some(s) => Ok(s),
        None if ci => Err(usage("--seed is required with --ci")),
        None => {
            let s = rand::random();
            eprintln!("seed={s}");
            Ok(s)
        }
    }
}

fn cmd_gen(a: GenArgs, ci: bool) -> Outcome {
    if a.n == 0 {
        return Err(usage("--n must be positive"));
    }
    let seed = seed_or_entropy(a.seed, ci)?;
    let mut r = rng::from_seed(seed);
    let d = a.difficulty.map(Difficulty::new).transpose()?;
    let mut targets = Vec::with_capacity(a.count);
    let mut walks = Vec::new();
    for _ in 0..a.count {
        match d {
            Some(d) => {
                let (t, walk) = random_walk_target(a.n, d, &mut r);
                targets.push(t);
                walks.push(walk);
            }
            None => targets.push(uniform_target(a.n, &mut r)),
        }
    }
    let header = BatchHeader {
        family: if d.is_some() { Family::Walk } else { Family::Uniform },
        n: a.n,
        d: d.map(|d| d.value()),
        seed,
        count: a.count,
    };
    io::write_atomic(&a.out, io::format_tableaus(Some(&header), &targets).as_bytes())?;
    if let Some(dir) = a.walk_dir {
        fs::create_dir_all(&dir)?;
        for (k, w) in walks.iter().enumerate() {
            io::write_atomic(&dir.join(format!("walk_{k}.circuit")), io::format_circuit(w).as_bytes())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn open_report(path: &Path) -> Result<BufWriter<File>, Failure> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(f);
    if fresh {
        writeln!(w, "{REPORT_HEADER}")?;
    }
    Ok(w)
}

fn decode_config(a: &SynthArgs, n: usize) -> Result<DecodeConfig, Failure> {
    let mut cfg = DecodeConfig::preset(&a.preset, n)?;
    if let Some(k) = a.samples {
        cfg.num_samples = k;
        cfg.schedules = vec![Schedule::Fixed(a.temperature)];
        cfg.greedy = false;
    }
    if let Some(b) = a.budget {
        cfg.step_budget = b;
    }
    if a.no_inverse {
        cfg.inverse_trick = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_synth(a: SynthArgs, ci: bool) -> Outcome {
    let seed = seed_or_entropy(a.seed, ci)?;
    let weights = load_weights(&a.weights)?;
    let (header, targets) = io::read_tableau_file(&a.targets)?;
    fs::create_dir_all(&a.out_dir)?;
    let mut report = open_report(&a.report)?;
    let family = header.as_ref().map(|h| h.family.to_string()).unwrap_or_default();
    let difficulty = header
        .as_ref()
        .and_then(|h| h.d)
        .map(|d| d.to_string())
        .unwrap_or_default();
    let decoder = match a.samples {
        Some(k) => format!("{}+samples{k}", a.preset),
        None => a.preset.clone(),
    };
    let mut cache = PolicyCache::new(&weights);
    let mut r = rng::from_seed(seed);
    let mut all_solved = true;
    for (id, t) in targets.iter().enumerate() {
        let cfg = decode_config(&a, t.n())?;
        let res = search::decode(&mut cache, t, &cfg, &mut r)?;
        if res.solved {
            let path = a.out_dir.join(format!("target_{id}.circuit"));
            io::write_atomic(&path, io::format_circuit(&res.circuit).as_bytes())?;
        }
        all_solved &= res.solved;
        writeln!(
            report,
            "{id},{},{family},{difficulty},{},{},{},{},{},{decoder}",
            t.n(),
            res.solved as u8,
            res.cz_count,
            res.single_count,
            res.samples_used,
            res.wall_time.as_millis()
        )?;
        report.flush()?;
    }
    Ok(if all_solved { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let text = fs::read_to_string(&a.config)?;
    let mut cfg = TrainConfig::parse(&text)?;
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("expected KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut metrics = BufWriter::new(File::create(cfg.out_dir.join("metrics.csv"))?);
    let mut trainer = Trainer::new(cfg)?;
    for path in trainer.run(&mut metrics)? {
        println!("{}", path.display());
    }
    metrics.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(a: OracleArgs) -> Outcome {
    let metric = match a.metric.as_str() {
        "cz" => Metric::CzCount,
        "gates" => Metric::GateCount,
        m => return Err(usage(format!("unknown metric `{m}`"))),
    };
    let needs_group = a.enumerate || a.distance.is_some() || a.csv.is_some() || a.parity;
    if needs_group && a.n == oracle::MAX_N && !a.full {
        return Err(usage("full-group work at n = 3 needs --full"));
    }
    if !(needs_group || a.odd_check) {
        return Err(usage("nothing to do: pass --enumerate, --distance, --csv, --parity or --odd-check"));
    }
    if a.enumerate {
        println!("{}", oracle::enumerate_group(a.n)?.len());
    }
    if a.distance.is_some() || a.csv.is_some() {
        let table = DistanceTable::build(a.n, metric)?;
        if let Some(path) = &a.distance {
            let (_, targets) = io::read_tableau_file(path)?;
            if let Some(dir) = &a.witness_dir {
                fs::create_dir_all(dir)?;
            }
            for (k, t) in targets.iter().enumerate() {
                println!("{k} {}", table.distance(t)?);
                if let Some(dir) = &a.witness_dir {
                    let c = table.witness(t)?;
                    io::write_atomic(&dir.join(format!("target_{k}.circuit")), io::format_circuit(&c).as_bytes())?;
                }
            }
        }
        if let Some(path) = &a.csv {
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            io::write_atomic(path, &buf)?;
        }
    }
    if a.parity {
        match oracle::parity_classes(a.n)? {
            Parity::Bipartite { even, odd } => println!("even {} odd {}", even.len(), odd.len()),
            Parity::OddCycle(c) => {
                let word: Vec<String> = c.gates().iter().map(|g| g.to_string()).collect();
                println!("odd cycle: {}", word.join(", "));
            }
        }
    }
    if a.odd_check {
        println!("{}", oracle::odd_identity_check(a.n)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs) -> Outcome {
    let circuit = io::read_circuit_file(&a.circuit)?;
    let (_, targets) = io::read_tableau_file(&a.target)?;
    let target: &Tableau = targets
        .get(a.index)
        .ok_or_else(|| usage(format!("target file has no record {}", a.index)))?;
    if verify_circuit(&circuit, target)? {
        println!("pass");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("fail");
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a, cli.ci),
        Command::Synth(a) => cmd_synth(a, cli.ci),
        Command::Train(a) => cmd_train(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
