//! `fstm`: simulate, extract, calibrate and benchmark the factorized tree
//! growth model from the command line.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const SCHEMAS: &str = "\
FILE FORMATS

Configuration (JSON):
  {
    \"parameters\": {
      \"r\": 1.79,                 leaf resistance, > 0
      \"k_beer\": 0.7,             extinction coefficient, > 0
      \"s_p\": 3.04,               projected crown area, > 0
      \"env\": 1.0,                environment E(i): a number or one value per cycle
      \"sink_needle\": [..],       needle sink per PA (index 0 = PA 1), > 0
      \"sink_internode\": [..],    internode sink per PA, > 0
      \"ring_sink_const\": 0.6,    constant ring sink, >= 0
      \"ring_sink_slope\": 0.54,   ring sink slope, >= 0
      \"lambda_pressler\": 0.01,   Pressler share of ring growth, in [0, 1]
      \"ring_density\": [..],      ring sink per PA, > 0
      \"allometry_b\": [..],       internode length = b * mass^beta, per PA
      \"allometry_beta\": [..],
      \"slw\": 0.15,               specific needle weight, > 0
      \"wood_density\": 0.45,      > 0
      \"needle_lifespan\": 2,      optional, cycles
      \"seed_biomass\": 1.0,       optional, biomass available at cycle 1
      \"foliage_includes_own\": true,    optional
      \"foliage_measure\": \"count\"       optional, count | mass
    },
    \"rules\": { \"pa_max\": 3, \"branches_per_cycle\": [4, 2], \"horizon\": 18 }
  }
  Sinks are rescaled on load so that sink_needle[PA 1] = 1 and
  ring_density[PA 1] = 1; free-parameter values refer to that scale.

Target CSV:
  pattern,kind,pa,birth_cycle,rank,value,unit,weight
  kinds (unit): stem_len, stem_radius, branch_len (cm);
                stem_wood, stem_needle, branch_wood, branch_needle,
                crown_branch_wood, crown_branch_needle (g)
  pattern 1 accepts stem_len/wood/needle and branch_len/wood/needle;
  pattern 2 accepts stem_len/radius/wood/needle and crown_branch_wood/needle.
  Stem rows use pa=1, birth_cycle=1; crown rows use pa=0, birth_cycle=0 and
  rank 0 (whole crown) or the bearing stem rank (per whorl).
  weight may be empty (= 1).

Free parameters (--free, comma separated):
  r, k_beer, s_p, ring_sink_const (P_0), ring_sink_slope (P_1),
  lambda_pressler (lambda), ring_density[k] (p_rg(k), k >= 2),
  sink_needle[k] (k >= 2), sink_internode[k]

Initial values (--init, a JSON file or inline JSON object):
  {\"r\": 2.5, \"lambda\": 0.05, \"p_rg(2)\": {\"initial\": 0.7, \"lower\": 0.1, \"upper\": 5}}
  Parameters missing from --init start from the configuration value.

Allometry CSV: biomass,length

Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 fit did not converge.
Environment: FSTM_NODE_CAP caps the metamers of explicit expansion (default 1e7).";

#[derive(Parser)]
#[command(name = "fstm", version, about = "Factorized tree growth model: simulation and calibration", after_long_help = SCHEMAS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write its trace (cycles.csv, classes.csv, trace.json, summary.json)
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Simulation backend: factorized or explicit
        #[arg(long, default_value = "factorized")]
        backend: String,
        /// Also run the explicit per-metamer reference and report the difference
        #[arg(long)]
        explicit_oracle: bool,
    },
    /// Extract a pattern vector from a trace as a target CSV
    Extract {
        /// Trace directory written by `simulate` (or its trace.json)
        #[arg(long)]
        trace: PathBuf,
        /// 1, 2, organ, compartment or compartment-whorl
        #[arg(long)]
        pattern: String,
        /// With pattern 2: crown totals per stem whorl
        #[arg(long)]
        per_whorl: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate free parameters against a target CSV
    Fit {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        targets: PathBuf,
        /// Pattern the targets are expected to follow (1 or 2)
        #[arg(long)]
        pattern: u8,
        /// Report JSON
        #[arg(long)]
        out: PathBuf,
        /// Iteration log CSV
        #[arg(long)]
        iter_log: Option<PathBuf>,
        /// Number of starts (the first is --init; others perturb it within x[0.5, 2])
        #[arg(long, default_value_t = 1)]
        multi_start: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the same tree against pattern-1 and pattern-2 targets and compare
    Compare {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        targets1: PathBuf,
        #[arg(long)]
        targets2: PathBuf,
        /// Report JSON (printed to stdout when absent)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit length = b * mass^beta to a biomass,length CSV
    Allometry {
        #[arg(long = "in")]
        input: PathBuf,
        /// Result JSON (printed to stdout when absent)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time factorized against explicit simulation over a horizon sweep
    Benchmark {
        #[arg(long, default_value_t = 4)]
        pa_max: usize,
        /// Branches per metamer for every branching PA
        #[arg(long, default_value_t = 2)]
        branching: u32,
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20")]
        horizons: Vec<usize>,
        /// Timing batches per point (the fastest is kept)
        #[arg(long, default_value_t = 5)]
        batches: usize,
        /// Result CSV (printed to stdout when absent)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a configuration and write its pattern vector as targets,
    /// optionally with multiplicative lognormal noise
    GenSynthetic {
        #[arg(long)]
        config: PathBuf,
        /// 1, 2, organ, compartment or compartment-whorl
        #[arg(long)]
        pattern: String,
        /// σ of the lognormal noise factor
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated free parameters [default: r,P_1,lambda,p_rg(2),s_p]
    #[arg(long, value_delimiter = ',')]
    free: Vec<String>,
    /// Initial values: JSON file or inline JSON object
    #[arg(long)]
    init: Option<String>,
    /// unit (file weights) or relative (1/value²)
    #[arg(long, default_value = "unit")]
    weighting: String,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Relative error decrease at which the fit stops
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate {
            config,
            out,
            backend,
            explicit_oracle,
        } => commands::simulate(&config, &out, &backend, explicit_oracle),
        Command::Extract {
            trace,
            pattern,
            per_whorl,
            out,
        } => commands::extract(&trace, &pattern, per_whorl, &out),
        Command::Fit {
            problem,
            targets,
            pattern,
            out,
            iter_log,
            multi_start,
            seed,
        } => commands::fit(
            &problem,
            &targets,
            pattern,
            &out,
            iter_log.as_deref(),
            multi_start,
            seed,
        ),
        Command::Compare {
            problem,
            targets1,
            targets2,
            out,
        } => commands::compare(&problem, &targets1, &targets2, out.as_deref()),
        Command::Allometry { input, out } => commands::allometry(&input, out.as_deref()),
        Command::Benchmark {
            pa_max,
            branching,
            horizons,
            batches,
            out,
        } => commands::benchmark(pa_max, branching, &horizons, batches, out.as_deref()),
        Command::GenSynthetic {
            config,
            pattern,
            noise,
            seed,
            out,
        } => commands::gen_synthetic(&config, &pattern, noise, seed, &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
