//! Experiment automation: single trials, the two sweeps, paired
//! aggregation comparisons, and CSV / JSON-lines export.
//!
//! Every trial owns its frames, sessions and channel, so trials run on a
//! rayon pool and are sorted by `trial_index` afterwards. A trial's seed is
//! `derive_seed(base_seed, [scenario, point, repeat])`; it seeds both the
//! frame generator and the session, so a record can be reproduced from the
//! seed alone.
//!
//! # Export columns
//!
//! CSV files have a header row and JSON-lines objects use the same names,
//! in this order: `scenario`, `trial_index`, `seed`, `length`,
//! `qber_true`, `qber_estimate`, `injected_errors`, `rounds_executed`,
//! `corrected_errors`, `residual_errors`, `parity_bits_disclosed`,
//! `parity_fraction`, `messages_sent`, `messages_baseline` (empty / null
//! outside paired runs), `success`, `wall_time_us`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitframe::{apply_noise, derive_seed, hamming_distance, BitFrame, NoiseSpec, PermutationKind, SeededRng};
use crate::channel::Transcript;
use crate::engine::{run_lockstep, Aggregation, FinalStatus, ParityReuse, SessionConfig};
use crate::error::ConfigError;
use crate::schedule::{BlockScheduleConfig, BreakCondition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Static { k: u32 },
    Dynamic,
}

/// Everything about a session except the frame length, the error-rate
/// estimate and the seed, which vary per trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionTemplate {
    pub schedule: ScheduleKind,
    pub break_condition: BreakCondition,
    pub permutation_kind: PermutationKind,
    pub aggregation: Aggregation,
    pub parity_reuse: ParityReuse,
    /// Fixed estimate handed to the schedule; `None` uses the injected rate.
    pub qber_estimate: Option<f64>,
    /// Multiplies the estimate, for sensitivity studies.
    pub misestimation: f64,
}

impl Default for SessionTemplate {
    fn default() -> Self {
        Self {
            schedule: ScheduleKind::Static { k: 2 },
            break_condition: BreakCondition::Static { total_rounds: 4 },
            permutation_kind: PermutationKind::Lcg,
            aggregation: Aggregation::On,
            parity_reuse: ParityReuse::On,
            qber_estimate: None,
            misestimation: 1.0,
        }
    }
}

impl SessionTemplate {
    /// The schedule's error-rate estimate for a trial, clamped to
    /// `[1 / length, 0.499]`.
    pub fn estimate_for(&self, noise: NoiseSpec, length: usize) -> f64 {
        let base = self.qber_estimate.unwrap_or_else(|| noise.nominal_qber(length));
        (base * self.misestimation).max(1.0 / length as f64).min(0.499)
    }

    pub fn session_config(&self, length: usize, qber_estimate: f64, seed: u64) -> SessionConfig {
        let schedule = match self.schedule {
            ScheduleKind::Static { k } => BlockScheduleConfig::Static { k, qber_estimate },
            ScheduleKind::Dynamic => BlockScheduleConfig::Dynamic {
                initial_qber_estimate: qber_estimate,
            },
        };
        SessionConfig {
            frame_length: length,
            permutation_kind: self.permutation_kind,
            schedule,
            break_condition: self.break_condition,
            aggregation: self.aggregation,
            parity_reuse: self.parity_reuse,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let ScheduleKind::Static { k } = self.schedule {
            if k < 2 {
                return Err(ConfigError::invalid("schedule.k", format!("{k} < 2")));
            }
        }
        if !(self.misestimation.is_finite() && self.misestimation > 0.0) {
            return Err(ConfigError::OutOfRange {
                name: "misestimation",
                value: self.misestimation,
                range: "(0, inf)",
            });
        }
        self.break_condition.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    QberSweep {
        length: usize,
        qber_start: f64,
        qber_step: f64,
        steps: usize,
    },
    LengthSweep {
        start: usize,
        step: usize,
        stop: usize,
        fixed_errors: usize,
    },
}

impl Scenario {
    pub fn qber_sweep() -> Self {
        Scenario::QberSweep {
            length: 4096,
            qber_start: 0.005,
            qber_step: 0.005,
            steps: 60,
        }
    }

    pub fn length_sweep() -> Self {
        Scenario::LengthSweep {
            start: 512,
            step: 512,
            stop: 20480,
            fixed_errors: 10,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Scenario::QberSweep { .. } => "qber_sweep",
            Scenario::LengthSweep { .. } => "length_sweep",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Scenario::QberSweep { .. } => 1,
            Scenario::LengthSweep { .. } => 2,
        }
    }

    /// `(length, noise)` for each sweep point.
    pub fn points(&self) -> Result<Vec<(usize, NoiseSpec)>, ConfigError> {
        match *self {
            Scenario::QberSweep {
                length,
                qber_start,
                qber_step,
                steps,
            } => (0..steps)
                .map(|i| {
                    // Rounded so that 0.005 + 59 * 0.005 prints as 0.3.
                    let qber = ((qber_start + i as f64 * qber_step) * 1e12).round() / 1e12;
                    let noise = NoiseSpec::Bsc { qber };
                    noise.validate(length)?;
                    Ok((length, noise))
                })
                .collect(),
            Scenario::LengthSweep {
                start,
                step,
                stop,
                fixed_errors,
            } => {
                if step == 0 || start == 0 || start > stop {
                    return Err(ConfigError::invalid(
                        "lengths",
                        format!("start {start}, step {step}, stop {stop}"),
                    ));
                }
                if fixed_errors > start {
                    return Err(ConfigError::TooManyErrors {
                        count: fixed_errors,
                        length: start,
                    });
                }
                Ok((start..=stop)
                    .step_by(step)
                    .map(|n| (n, NoiseSpec::FixedErrors { count: fixed_errors }))
                    .collect())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub repeats: usize,
    pub base_seed: u64,
    pub template: SessionTemplate,
}

impl ExperimentSpec {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            repeats: 3,
            base_seed: 0,
            template: SessionTemplate::default(),
        }
    }

    pub fn trial_seed(&self, point: usize, repeat: usize) -> u64 {
        derive_seed(self.base_seed, &[self.scenario.tag(), point as u64, repeat as u64])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scenario: String,
    pub trial_index: usize,
    pub seed: u64,
    pub length: usize,
    pub qber_true: f64,
    pub qber_estimate: f64,
    pub injected_errors: usize,
    pub rounds_executed: usize,
    pub corrected_errors: usize,
    pub residual_errors: usize,
    pub parity_bits_disclosed: u64,
    pub parity_fraction: f64,
    pub messages_sent: u64,
    pub messages_baseline: Option<u64>,
    pub success: bool,
    pub wall_time_us: u64,
}

impl TrialRecord {
    /// The record with `wall_time_us` zeroed, for comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_us: 0,
            ..self.clone()
        }
    }
}

/// A trial's record together with what it left behind.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub alice: BitFrame,
    /// Bob's frame at the end, or as injected if the session aborted.
    pub bob: BitFrame,
    pub transcript: Transcript,
    /// Parity-bit counts from each vantage point; `None` if the session
    /// aborted.
    pub counters: Option<LeakageCounters>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageCounters {
    pub initiator: u64,
    pub responder: u64,
    pub transcript: u64,
    pub tap: u64,
}

impl LeakageCounters {
    pub fn consistent(&self) -> bool {
        self.initiator == self.transcript && self.responder == self.transcript && self.tap == self.transcript
    }
}

/// Runs one trial with full detail. Configuration errors are returned;
/// a session that aborts yields a failed record instead.
pub fn run_trial_detailed(
    template: &SessionTemplate,
    length: usize,
    noise: NoiseSpec,
    seed: u64,
) -> Result<TrialOutcome, ConfigError> {
    template.validate()?;
    if length == 0 {
        return Err(ConfigError::EmptyFrame);
    }
    noise.validate(length)?;
    let mut rng = SeededRng::new(seed);
    let alice = BitFrame::random(length, &mut rng);
    let (bob, flipped) = apply_noise(&alice, noise, &mut rng)?;
    let qber_estimate = template.estimate_for(noise, length);
    let config = template.session_config(length, qber_estimate, seed);
    config.validate()?;

    let started = Instant::now();
    let result = run_lockstep(config, alice.clone(), bob.clone());
    let wall_time_us = started.elapsed().as_micros() as u64;

    let mut record = TrialRecord {
        scenario: "single".into(),
        trial_index: 0,
        seed,
        length,
        qber_true: noise.nominal_qber(length),
        qber_estimate,
        injected_errors: flipped,
        rounds_executed: 0,
        corrected_errors: 0,
        residual_errors: flipped,
        parity_bits_disclosed: 0,
        parity_fraction: 0.0,
        messages_sent: 0,
        messages_baseline: None,
        success: false,
        wall_time_us,
    };
    let outcome = match result {
        Ok(run) => {
            let report = run.transcript.leakage();
            let final_bob = run.responder.frame().clone();
            record.rounds_executed = run.responder.history().len();
            record.corrected_errors = run.responder.corrected_total();
            record.residual_errors = hamming_distance(&alice, &final_bob)?;
            record.parity_bits_disclosed = report.parity_bits_disclosed;
            record.parity_fraction = report.parity_bits_disclosed as f64 / length as f64;
            record.messages_sent = report.messages_sent();
            record.success = run.status() == FinalStatus::Success;
            let counters = LeakageCounters {
                initiator: run.initiator.disclosed_parity_bits(),
                responder: run.responder.disclosed_parity_bits(),
                transcript: report.parity_bits_disclosed,
                tap: run.tap.parity_bits(),
            };
            TrialOutcome {
                record,
                alice,
                bob: final_bob,
                transcript: run.transcript,
                counters: Some(counters),
                error: None,
            }
        }
        Err(e) => {
            let report = e.transcript.leakage();
            record.parity_bits_disclosed = report.parity_bits_disclosed;
            record.parity_fraction = report.parity_bits_disclosed as f64 / length as f64;
            record.messages_sent = report.messages_sent();
            TrialOutcome {
                record,
                alice,
                bob,
                transcript: e.transcript,
                counters: None,
                error: Some(e.error.to_string()),
            }
        }
    };
    Ok(outcome)
}

pub fn run_trial(
    template: &SessionTemplate,
    length: usize,
    noise: NoiseSpec,
    seed: u64,
) -> Result<TrialRecord, ConfigError> {
    run_trial_detailed(template, length, noise, seed).map(|o| o.record)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Serial,
}

struct Trial {
    index: usize,
    length: usize,
    noise: NoiseSpec,
    seed: u64,
}

fn trials(spec: &ExperimentSpec) -> Result<Vec<Trial>, ConfigError> {
    spec.template.validate()?;
    let points = spec.scenario.points()?;
    let mut out = Vec::with_capacity(points.len() * spec.repeats);
    for (p, &(length, noise)) in points.iter().enumerate() {
        for r in 0..spec.repeats {
            out.push(Trial {
                index: p * spec.repeats + r,
                length,
                noise,
                seed: spec.trial_seed(p, r),
            });
        }
    }
    Ok(out)
}

fn run_all<T: Send>(
    trials: Vec<Trial>,
    execution: Execution,
    f: impl Fn(&Trial) -> Result<T, ConfigError> + Sync + Send,
) -> Result<Vec<T>, ConfigError> {
    match execution {
        Execution::Parallel => trials.par_iter().map(f).collect(),
        Execution::Serial => trials.iter().map(f).collect(),
    }
}

/// Runs every trial of `spec`; records are sorted by `trial_index`.
pub fn run_experiment(spec: &ExperimentSpec, execution: Execution) -> Result<Vec<TrialRecord>, ConfigError> {
    map_trials(spec, execution, |o| o.record)
}

/// Runs every trial of `spec` and maps each full outcome through `f`, in
/// `trial_index` order. Records are already labelled with the scenario
/// and index.
pub fn map_trials<T: Send>(
    spec: &ExperimentSpec,
    execution: Execution,
    f: impl Fn(TrialOutcome) -> T + Sync + Send,
) -> Result<Vec<T>, ConfigError> {
    let scenario = spec.scenario.id();
    run_all(trials(spec)?, execution, |t| {
        let mut o = run_trial_detailed(&spec.template, t.length, t.noise, t.seed)?;
        o.record.scenario = scenario.into();
        o.record.trial_index = t.index;
        Ok(f(o))
    })
}

pub fn sweep_qber(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>, ConfigError> {
    if !matches!(spec.scenario, Scenario::QberSweep { .. }) {
        return Err(ConfigError::invalid("scenario", "expected a QBER sweep"));
    }
    run_experiment(spec, Execution::Parallel)
}

pub fn sweep_length(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>, ConfigError> {
    if !matches!(spec.scenario, Scenario::LengthSweep { .. }) {
        return Err(ConfigError::invalid("scenario", "expected a length sweep"));
    }
    run_experiment(spec, Execution::Parallel)
}

/// One trial run with aggregation off (baseline) and on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRecord {
    /// Aggregation on; `messages_baseline` holds the baseline's count.
    pub optimized: TrialRecord,
    pub baseline: TrialRecord,
    pub frames_identical: bool,
}

impl PairedRecord {
    /// Messages saved by aggregation; negative if it cost more.
    pub fn reduction(&self) -> i64 {
        self.baseline.messages_sent as i64 - self.optimized.messages_sent as i64
    }
}

pub fn compare_aggregation(spec: &ExperimentSpec, execution: Execution) -> Result<Vec<PairedRecord>, ConfigError> {
    let scenario = spec.scenario.id();
    let off = SessionTemplate {
        aggregation: Aggregation::Off,
        ..spec.template
    };
    let on = SessionTemplate {
        aggregation: Aggregation::On,
        ..spec.template
    };
    let mut pairs = run_all(trials(spec)?, execution, |t| {
        let base = run_trial_detailed(&off, t.length, t.noise, t.seed)?;
        let opt = run_trial_detailed(&on, t.length, t.noise, t.seed)?;
        let label = |mut r: TrialRecord| {
            r.scenario = scenario.into();
            r.trial_index = t.index;
            r
        };
        let mut optimized = label(opt.record);
        optimized.messages_baseline = Some(base.record.messages_sent);
        Ok(PairedRecord {
            optimized,
            baseline: label(base.record),
            frames_identical: base.bob == opt.bob,
        })
    })?;
    pairs.sort_by_key(|p| p.optimized.trial_index);
    Ok(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("no records to export")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn write_records<W: Write>(records: &[TrialRecord], format: ExportFormat, out: W) -> Result<(), ExportError> {
    if records.is_empty() {
        return Err(ExportError::Empty);
    }
    match format {
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        ExportFormat::Jsonl => {
            let mut out = out;
            for r in records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

pub fn export(records: &[TrialRecord], format: ExportFormat, path: &Path) -> Result<(), ExportError> {
    if records.is_empty() {
        return Err(ExportError::Empty);
    }
    write_records(records, format, BufWriter::new(File::create(path)?))
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<TrialRecord>, ExportError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn read_jsonl<R: io::BufRead>(input: R) -> Result<Vec<TrialRecord>, ExportError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_sizes() {
        assert_eq!(Scenario::qber_sweep().points().unwrap().len(), 60);
        assert_eq!(Scenario::length_sweep().points().unwrap().len(), 40);
        let q = Scenario::qber_sweep().points().unwrap();
        assert_eq!(q[0].1, NoiseSpec::Bsc { qber: 0.005 });
        assert_eq!(q[59].1, NoiseSpec::Bsc { qber: 0.3 });
        let l = Scenario::length_sweep().points().unwrap();
        assert_eq!((l[0].0, l[39].0), (512, 20480));
    }

    #[test]
    fn too_many_fixed_errors() {
        let s = Scenario::LengthSweep {
            start: 512,
            step: 512,
            stop: 1024,
            fixed_errors: 600,
        };
        assert_eq!(
            s.points().unwrap_err(),
            ConfigError::TooManyErrors {
                count: 600,
                length: 512
            }
        );
        assert!(sweep_length(&ExperimentSpec::new(s)).is_err());
    }

    #[test]
    fn estimate_defaults_and_clamps() {
        let t = SessionTemplate::default();
        assert_eq!(t.estimate_for(NoiseSpec::Bsc { qber: 0.02 }, 4096), 0.02);
        assert_eq!(t.estimate_for(NoiseSpec::FixedErrors { count: 10 }, 1000), 0.01);
        assert_eq!(t.estimate_for(NoiseSpec::FixedErrors { count: 0 }, 1000), 0.001);
        assert_eq!(t.estimate_for(NoiseSpec::Bsc { qber: 0.45 }, 100), 0.45);
        let doubled = SessionTemplate {
            misestimation: 2.0,
            ..t
        };
        assert_eq!(doubled.estimate_for(NoiseSpec::Bsc { qber: 0.3 }, 100), 0.499);
        let fixed = SessionTemplate {
            qber_estimate: Some(0.1),
            ..t
        };
        assert_eq!(fixed.estimate_for(NoiseSpec::Bsc { qber: 0.3 }, 100), 0.1);
    }

    #[test]
    fn error_free_trial() {
        let t = SessionTemplate::default();
        let out = run_trial_detailed(&t, 1000, NoiseSpec::FixedErrors { count: 0 }, 3).unwrap();
        let r = &out.record;
        assert!(r.success);
        assert_eq!((r.corrected_errors, r.residual_errors, r.injected_errors), (0, 0, 0));
        // Estimate 1/1000 gives one block per round.
        assert_eq!(r.parity_bits_disclosed, 4);
        assert_eq!(r.parity_fraction, 0.004);
    }

    #[test]
    fn trials_are_reproducible() {
        let t = SessionTemplate::default();
        let a = run_trial(&t, 2048, NoiseSpec::Bsc { qber: 0.03 }, 77).unwrap();
        let b = run_trial(&t, 2048, NoiseSpec::Bsc { qber: 0.03 }, 77).unwrap();
        assert_eq!(a.without_timing(), b.without_timing());
    }

    #[test]
    fn single_fixed_error_is_corrected() {
        let t = SessionTemplate::default();
        let ok = (0..100)
            .filter(|&s| {
                let r = run_trial(&t, 512, NoiseSpec::FixedErrors { count: 1 }, s).unwrap();
                assert_eq!(r.success, r.residual_errors == 0);
                r.success
            })
            .count();
        assert!(ok >= 99, "{ok}");
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let spec = ExperimentSpec::new(Scenario::qber_sweep());
        let mut seen = std::collections::HashSet::new();
        for p in 0..60 {
            for r in 0..3 {
                assert!(seen.insert(spec.trial_seed(p, r)));
            }
        }
        assert_eq!(spec.trial_seed(4, 1), derive_seed(0, &[1, 4, 1]));
    }

    #[test]
    fn parallel_matches_serial() {
        let spec = ExperimentSpec {
            repeats: 2,
            ..ExperimentSpec::new(Scenario::QberSweep {
                length: 512,
                qber_start: 0.01,
                qber_step: 0.02,
                steps: 6,
            })
        };
        let par = run_experiment(&spec, Execution::Parallel).unwrap();
        let ser = run_experiment(&spec, Execution::Serial).unwrap();
        assert_eq!(par.len(), 12);
        let strip = |v: &[TrialRecord]| v.iter().map(TrialRecord::without_timing).collect::<Vec<_>>();
        assert_eq!(strip(&par), strip(&ser));
        assert!(par.iter().enumerate().all(|(i, r)| r.trial_index == i));
    }

    #[test]
    fn one_step_sweep() {
        let spec = ExperimentSpec::new(Scenario::QberSweep {
            length: 256,
            qber_start: 0.005,
            qber_step: 0.005,
            steps: 1,
        });
        let records = sweep_qber(&spec).unwrap();
        assert_eq!(records.len(), 3);
        assert!(records.iter().all(|r| r.qber_true == 0.005));
    }

    #[test]
    fn zero_fixed_errors_all_succeed() {
        let spec = ExperimentSpec {
            repeats: 1,
            ..ExperimentSpec::new(Scenario::LengthSweep {
                start: 512,
                step: 512,
                stop: 4096,
                fixed_errors: 0,
            })
        };
        let records = sweep_length(&spec).unwrap();
        assert_eq!(records.len(), 8);
        assert!(records.iter().all(|r| r.success && r.corrected_errors == 0));
    }

    #[test]
    fn error_free_pairs_have_no_reduction() {
        let spec = ExperimentSpec {
            repeats: 2,
            ..ExperimentSpec::new(Scenario::LengthSweep {
                start: 512,
                step: 512,
                stop: 1024,
                fixed_errors: 0,
            })
        };
        let pairs = compare_aggregation(&spec, Execution::Parallel).unwrap();
        assert!(pairs.iter().all(|p| p.reduction() == 0 && p.frames_identical));
    }

    #[test]
    fn export_formats_round_trip() {
        let t = SessionTemplate::default();
        let mut records = vec![
            run_trial(&t, 300, NoiseSpec::Bsc { qber: 0.05 }, 1).unwrap(),
            run_trial(&t, 400, NoiseSpec::FixedErrors { count: 3 }, 2).unwrap(),
        ];
        records[1].messages_baseline = Some(41);
        let mut csv_bytes = Vec::new();
        write_records(&records, ExportFormat::Csv, &mut csv_bytes).unwrap();
        let text = String::from_utf8(csv_bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with(
            "scenario,trial_index,seed,length,qber_true,qber_estimate,injected_errors,rounds_executed,\
             corrected_errors,residual_errors,parity_bits_disclosed,parity_fraction,messages_sent,\
             messages_baseline,success,wall_time_us\n"
        ));
        let from_csv = read_csv(csv_bytes.as_slice()).unwrap();
        assert_eq!(from_csv, records);
        let mut json_bytes = Vec::new();
        write_records(&from_csv, ExportFormat::Jsonl, &mut json_bytes).unwrap();
        assert_eq!(read_jsonl(json_bytes.as_slice()).unwrap(), records);
        assert!(matches!(write_records(&[], ExportFormat::Csv, Vec::new()), Err(ExportError::Empty)));
    }

    #[test]
    fn export_to_unwritable_path_fails() {
        let t = SessionTemplate::default();
        let r = run_trial(&t, 64, NoiseSpec::FixedErrors { count: 0 }, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("missing").join("out.csv");
        assert!(matches!(export(&[r.clone()], ExportFormat::Csv, &bad), Err(ExportError::Io(_))));
        let good = dir.path().join("out.jsonl");
        export(&[r], ExportFormat::Jsonl, &good).unwrap();
        assert_eq!(std::fs::read_to_string(good).unwrap().lines().count(), 1);
    }
}
