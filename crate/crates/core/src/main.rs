//! Command-line front end: ingest, calibrate, extract, stats, synth, score.
//!
//! Exit codes: 0 success, 1 fatal configuration or I/O error,
//! 2 insufficient data with no fallback permitted.

use clap::{Args, Parser, Subcommand};
use freight_trips::config::{apply_noise_preset, load_fleet_plan, RunConfig};
use freight_trips::pipeline::{
    run_calibrate, run_extract, run_ingest, run_score, run_stats, run_synth, PipelineError,
};
use freight_trips::synth::ScoreParams;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "freight-trips")]
#[command(about = "Identify heavy-truck freight trip ends from GPS trajectories", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (key = value sections).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Worker threads for per-truck parallelism (overrides config; 0 uses
    /// the available parallelism, 1 forces a serial reference run).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw GPS rows and run the preprocessing cascade.
    Ingest(ConfigArgs),
    /// Derive data-driven thresholds and write the calibration report.
    Calibrate(ConfigArgs),
    /// Detect stops, select trip ends, and chain trips.
    Extract(ConfigArgs),
    /// Compute category shares, OD matrix, and trip distributions.
    Stats(ConfigArgs),
    /// Generate a synthetic labeled fleet.
    Synth {
        /// Fleet plan file; omitted keys use the reference plan.
        #[arg(long, value_name = "PATH")]
        plan: PathBuf,
        /// Output directory for gps.csv, geography files, and truth.csv.
        #[arg(long, value_name = "DIR", default_value = "synth_out")]
        out: PathBuf,
        /// Random seed override.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Noise preset override: none or standard.
        #[arg(long, value_name = "PRESET")]
        noise: Option<String>,
    },
    /// Score a trip-ends file against generated ground truth.
    Score {
        /// Predicted trip ends (trip_ends.csv from extract).
        #[arg(long, value_name = "PATH")]
        predictions: PathBuf,
        /// Ground-truth visits file (truth.csv from synth).
        #[arg(long, value_name = "PATH")]
        truth: PathBuf,
        /// Matching radius in meters.
        #[arg(long, value_name = "M", default_value_t = 200.0)]
        match_radius: f64,
        /// Matching time window in seconds.
        #[arg(long, value_name = "S", default_value_t = 1_800)]
        match_window: i64,
    },
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn run() -> Result<(), PipelineError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(args) => {
            let cfg = load_config(&args)?;
            let s = run_ingest(&cfg)?;
            println!(
                "ingest ok: rows={} accepted={} rejected={} trucks={} segments={}",
                s.input_rows, s.accepted, s.rejected, s.trucks, s.segments
            );
        }
        Command::Calibrate(args) => {
            let cfg = load_config(&args)?;
            let s = run_calibrate(&cfg)?;
            for e in &s.detector_errors {
                println!("calibrate fallback: {e}");
            }
            println!("calibrate ok: report={}", s.report_path.display());
        }
        Command::Extract(args) => {
            let cfg = load_config(&args)?;
            let s = run_extract(&cfg)?;
            println!(
                "extract ok: stops={} trip_ends={} trips={} intercity={} \
                 (long={} medium={} short_rejected={} on_road_rejected={} no_poi_rejected={})",
                s.stops,
                s.trip_ends,
                s.trips,
                s.intercity_trips,
                s.selection.accepted_long,
                s.selection.accepted_medium,
                s.selection.rejected_short,
                s.selection.rejected_medium_on_road,
                s.selection.rejected_medium_no_poi,
            );
        }
        Command::Stats(args) => {
            let cfg = load_config(&args)?;
            let s = run_stats(&cfg)?;
            println!(
                "stats ok: trips={} intercity={} od_total={} distance_mode_km={:.1} duration_mode_h={:.2}",
                s.trips,
                s.intercity_trips,
                s.od_total,
                s.distance_mode_m / 1_000.0,
                s.duration_mode_s / 3_600.0
            );
        }
        Command::Synth {
            plan,
            out,
            seed,
            noise,
        } => {
            let mut fleet_plan = load_fleet_plan(&plan)?;
            if let Some(seed) = seed {
                fleet_plan.seed = seed;
            }
            if let Some(preset) = noise {
                apply_noise_preset(&mut fleet_plan, &preset)?;
            }
            let s = run_synth(&fleet_plan, &out, &freight_trips::ingest::ParseOptions::default())?;
            println!(
                "synth ok: trucks={} records={} truth_visits={} truth_trip_ends={} out={}",
                s.trucks,
                s.records,
                s.truth_visits,
                s.truth_trip_ends,
                out.display()
            );
        }
        Command::Score {
            predictions,
            truth,
            match_radius,
            match_window,
        } => {
            let params = ScoreParams {
                match_radius_m: match_radius,
                match_window_s: match_window,
            };
            let r = run_score(&predictions, &truth, &params)?;
            let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
            println!(
                "score: predictions={} truth_trip_ends={} matched={} precision={} recall={}",
                r.n_predictions,
                r.n_truth_trip_ends,
                r.matched,
                fmt(r.precision),
                fmt(r.recall)
            );
            for (label, count) in &r.false_positives_by_label {
                println!("score: false_positives[{label}]={count}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
