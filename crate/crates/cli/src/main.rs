//! `cascade-sim`: run CASCADE reconciliation trials and sweeps.
//!
//! Exit status: 0 when every requested trial ran to completion (whether or
//! not the keys ended up equal), 2 for bad flags or config, 3 when a
//! session aborted on a transport or protocol error, 1 when output could
//! not be written.

mod settings;

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use cascade_core::harness::{
    compare_aggregation, export, map_trials, run_trial_detailed, write_records, Execution, ExperimentSpec,
    TrialRecord,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use settings::{CommonArgs, Resolved, SettingsError, SweepArgs, DEFAULT_LENGTH};

#[derive(Parser, Debug)]
#[command(name = "cascade-sim", version, about = "CASCADE key reconciliation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reconcile one noisy frame pair.
    Run(RunArgs),
    /// Sweep the channel error rate at a fixed length.
    SweepQber(SweepCmd),
    /// Sweep the frame length with a fixed number of errors.
    SweepLength(SweepCmd),
    /// Run each trial with aggregation off and on and compare message counts.
    CompareAggregation(CompareCmd),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Write the binary session transcript here.
    #[arg(long, value_name = "PATH")]
    transcript: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    sweep: SweepArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScenarioArg {
    Qber,
    Length,
}

#[derive(Args, Debug)]
struct CompareCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    sweep: SweepArgs,
    /// Which sweep supplies the trials.
    #[arg(long, value_enum, default_value = "length")]
    scenario: ScenarioArg,
}

enum Failure {
    Config(String),
    Session(String),
    Output(String),
}

impl From<SettingsError> for Failure {
    fn from(e: SettingsError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<cascade_core::error::ConfigError> for Failure {
    fn from(e: cascade_core::error::ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::SweepQber(args) => sweep(args, true),
        Command::SweepLength(args) => sweep(args, false),
        Command::CompareAggregation(args) => compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Session(msg)) => {
            eprintln!("session error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Output(msg)) => {
            eprintln!("output error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn emit(records: &[TrialRecord], r: &Resolved) -> Result<(), Failure> {
    let written = match r.out() {
        Some(path) => export(records, r.format(), path),
        None => write_records(records, r.format(), io::stdout().lock()),
    };
    written.map_err(|e| Failure::Output(e.to_string()))
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let r = Resolved::new(&args.common)?;
    let template = r.template()?;
    let length = r.length().unwrap_or(DEFAULT_LENGTH);
    let outcome = run_trial_detailed(&template, length, r.noise(), r.seed())?;

    let transcript = args.transcript.as_ref().or(r.file.transcript.as_ref());
    if let Some(path) = transcript {
        File::create(path)
            .and_then(|f| outcome.transcript.write_to(BufWriter::new(f)))
            .map_err(|e| Failure::Output(format!("{}: {e}", path.display())))?;
    }
    emit(std::slice::from_ref(&outcome.record), &r)?;

    let rec = &outcome.record;
    eprintln!(
        "{}: {} errors injected, {} corrected, {} left after {} rounds; {} parity bits, {} messages",
        if rec.success { "success" } else { "failure" },
        rec.injected_errors,
        rec.corrected_errors,
        rec.residual_errors,
        rec.rounds_executed,
        rec.parity_bits_disclosed,
        rec.messages_sent,
    );
    match outcome.error {
        Some(e) => Err(Failure::Session(e)),
        None => Ok(()),
    }
}

fn experiment(r: &Resolved, sweep: &SweepArgs, qber: bool) -> Result<ExperimentSpec, Failure> {
    let scenario = if qber { r.qber_sweep(sweep)? } else { r.length_sweep(sweep)? };
    // Catch bad sweep shapes before any trial starts.
    scenario.points()?;
    Ok(ExperimentSpec {
        scenario,
        repeats: r.repeats(sweep),
        base_seed: r.seed(),
        template: r.template()?,
    })
}

fn sweep(args: &SweepCmd, qber: bool) -> Result<(), Failure> {
    let r = Resolved::new(&args.common)?;
    let spec = experiment(&r, &args.sweep, qber)?;
    let results = map_trials(&spec, Execution::Parallel, |o| (o.record, o.error))?;
    let aborted: Vec<String> = results
        .iter()
        .filter_map(|(rec, e)| e.as_ref().map(|e| format!("trial {}: {e}", rec.trial_index)))
        .collect();
    let records: Vec<TrialRecord> = results.into_iter().map(|(rec, _)| rec).collect();
    emit(&records, &r)?;

    let ok = records.iter().filter(|rec| rec.success).count();
    eprintln!("{} trials, {} reconciled", records.len(), ok);
    if aborted.is_empty() {
        Ok(())
    } else {
        Err(Failure::Session(aborted.join("; ")))
    }
}

fn compare(args: &CompareCmd) -> Result<(), Failure> {
    let r = Resolved::new(&args.common)?;
    let spec = experiment(&r, &args.sweep, matches!(args.scenario, ScenarioArg::Qber))?;
    let pairs = compare_aggregation(&spec, Execution::Parallel)?;
    let records: Vec<TrialRecord> = pairs.iter().map(|p| p.optimized.clone()).collect();
    emit(&records, &r)?;

    let mut reductions: Vec<i64> = pairs.iter().map(|p| p.reduction()).collect();
    reductions.sort_unstable();
    let median = reductions.get(reductions.len() / 2).copied().unwrap_or(0);
    let worse = reductions.iter().filter(|&&d| d < 0).count();
    let differing = pairs.iter().filter(|p| !p.frames_identical).count();
    eprintln!(
        "{} pairs: median reduction {} messages, {} pairs where aggregation cost more, {} pairs with different final frames",
        pairs.len(),
        median,
        worse,
        differing
    );
    Ok(())
}
