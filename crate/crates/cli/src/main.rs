//! `canlift`: signal extraction from raw CAN logs and driver
//! re-identification.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use canlift::decomposer::CandidateId;
use clap::{Args, Parser, Subcommand};

use crate::output::Format;

#[derive(Debug, Parser)]
#[command(name = "canlift", version, about = "Find signals in undocumented CAN logs and re-identify drivers")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Emit reports as line-delimited JSON.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "CANLIFT_THREADS")]
    pub threads: Option<usize>,
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Fail on the first malformed log line instead of skipping it.
    #[arg(long, global = true)]
    pub strict: bool,
}

impl GlobalOpts {
    pub fn format(&self) -> Format {
        if self.json { Format::Json } else { Format::Text }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List identifiers with frame counts and payload lengths.
    Ids { log: PathBuf },
    /// Candidate manifest: every byte and byte pair, kept or dropped.
    Decompose {
        log: PathBuf,
        #[arg(long)]
        min_variation: Option<usize>,
        /// Window length, seconds.
        #[arg(long)]
        window: Option<f64>,
        #[arg(long)]
        overlap: Option<f64>,
        /// Also decode byte pairs little-endian.
        #[arg(long)]
        little_endian: bool,
    },
    /// Per-bit probability of being set, per identifier.
    Bits {
        log: PathBuf,
        /// Only this identifier (hex).
        #[arg(long, value_parser = parse_hex_id)]
        id: Option<u16>,
    },
    /// Window feature vectors of every kept candidate.
    Features {
        log: PathBuf,
        #[arg(long, default_value = "full15", value_parser = ["full15", "reid11", "full15+cid_ce"])]
        spec: String,
        /// Only this candidate.
        #[arg(long)]
        candidate: Option<CandidateId>,
    },
    /// Rank candidates by DTW distance to GPS-derived velocity.
    FindVelocity {
        log: PathBuf,
        gps: PathBuf,
        /// Largest plausible change between consecutive GPS speeds, km/h.
        #[arg(long)]
        max_jump: Option<f64>,
        /// Sakoe-Chiba band width, seconds.
        #[arg(long)]
        band: Option<usize>,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Rank candidate pairs by how rarely both are active at once.
    FindPedals {
        log: PathBuf,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Rank (rpm, clutch) pairs by spikes and platforms during standing starts.
    FindClutch {
        log: PathBuf,
        /// The velocity candidate.
        #[arg(long)]
        velocity: CandidateId,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Train a signal model on a car whose signal location is known.
    Train {
        #[arg(long)]
        base: PathBuf,
        /// Signal label stored in the model.
        #[arg(long)]
        signal: String,
        /// Location(s) of the signal on the base car, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        truth: Vec<CandidateId>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the candidates of another car by model votes.
    Match {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Known location(s) on the target, for precision, recall and gap.
        #[arg(long, value_delimiter = ',')]
        truth: Vec<CandidateId>,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Pairwise driver re-identification over a directory of drives.
    Reid {
        /// role=candidate pairs, e.g. acc=0130:7,brake=0140:7,velo=0410:1-2,rpm=0420:2-3
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_role)]
        signals: Vec<(String, CandidateId)>,
        /// One `.log` per driver, or one subdirectory of `.log` files per driver.
        #[arg(long)]
        drives: PathBuf,
        /// Drivers drawn for the cohort (default: 5, or all when fewer).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic drive (or base/target car pair).
    Synth {
        /// Scenario file (TOML); defaults apply when absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Drive duration, seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// smooth, moderate or aggressive
        #[arg(long)]
        style: Option<String>,
        /// Draw the car layout from this seed, so drives with different
        /// seeds share a car.
        #[arg(long)]
        layout_seed: Option<u64>,
        /// Write a base car and a target car with disjoint layouts, both
        /// driven in the moderate style.
        #[arg(long, conflicts_with = "layout_seed")]
        pair: bool,
    },
    /// Inspect the effective pipeline configuration.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigAction {
    /// Print the configuration as TOML.
    Dump,
    /// Print the configuration hash.
    Hash,
}

fn parse_hex_id(s: &str) -> Result<u16, String> {
    let t = s.strip_prefix("0x").unwrap_or(s);
    match u16::from_str_radix(t, 16) {
        Ok(v) if v <= canlift::canlog::MAX_STANDARD_ID => Ok(v),
        _ => Err(format!("{s:?} is not an 11-bit hex identifier")),
    }
}

fn parse_role(s: &str) -> Result<(String, CandidateId), String> {
    let (role, cand) = s.split_once('=').ok_or_else(|| format!("expected role=candidate, got {s:?}"))?;
    if role.is_empty() {
        return Err(format!("empty role in {s:?}"));
    }
    Ok((role.to_string(), cand.parse().map_err(|e: canlift::Error| e.to_string())?))
}

/// How a run failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl From<canlift::Error> for Failure {
    fn from(e: canlift::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("canlift: {e}");
            return ExitCode::from(1);
        }
    }
    let stdout = std::io::stdout();
    match commands::run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("canlift: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("canlift: {msg}");
            ExitCode::from(2)
        }
    }
}
