//! Command-line and config-file settings, merged into harness types.
//!
//! A value given on the command line wins over the same key in the config
//! file, which wins over the built-in default.

use std::fmt;
use std::path::{Path, PathBuf};

use cascade_core::bitframe::{NoiseSpec, PermutationKind};
use cascade_core::engine::{Aggregation, ParityReuse};
use cascade_core::harness::{ExportFormat, Scenario, ScheduleKind, SessionTemplate};
use cascade_core::schedule::BreakCondition;
use clap::{Args, ValueEnum};
use serde::Deserialize;

pub const DEFAULT_LENGTH: usize = 4096;
pub const DEFAULT_QBER: f64 = 0.02;

/// A bad flag, config key or combination of the two.
#[derive(Debug)]
pub struct SettingsError(pub String);

impl fmt::Display for SettingsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad(msg: impl Into<String>) -> SettingsError {
    SettingsError(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Permutation {
    Shuffle,
    Lcg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleVariant {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreakVariant {
    Static,
    Probabilistic,
    Threshold,
}

/// `--schedule static:k=2`, `static` (k = 2) or `dynamic`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleFlag {
    pub variant: ScheduleVariant,
    pub k: Option<u32>,
}

pub fn parse_schedule(s: &str) -> Result<ScheduleFlag, String> {
    match s.split_once(':') {
        None if s == "static" => Ok(ScheduleFlag {
            variant: ScheduleVariant::Static,
            k: None,
        }),
        None if s == "dynamic" => Ok(ScheduleFlag {
            variant: ScheduleVariant::Dynamic,
            k: None,
        }),
        Some(("static", rest)) => {
            let k = rest
                .strip_prefix("k=")
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| format!("expected static:k=<int>, got {s:?}"))?;
            Ok(ScheduleFlag {
                variant: ScheduleVariant::Static,
                k: Some(k),
            })
        }
        _ => Err(format!("expected static:k=<int> or dynamic, got {s:?}")),
    }
}

/// `--break static:4`, `probabilistic:2` or `threshold:1`.
pub fn parse_break(s: &str) -> Result<(BreakVariant, u32), String> {
    let (name, param) = s
        .split_once(':')
        .ok_or_else(|| format!("expected <variant>:<int>, got {s:?}"))?;
    let variant = match name {
        "static" => BreakVariant::Static,
        "probabilistic" => BreakVariant::Probabilistic,
        "threshold" => BreakVariant::Threshold,
        _ => return Err(format!("unknown break variant {name:?}")),
    };
    let param = param.parse().map_err(|_| format!("bad break parameter {param:?}"))?;
    Ok((variant, param))
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// TOML config file; flags override its keys.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Frame length in bits.
    #[arg(long)]
    pub length: Option<usize>,
    /// Binary symmetric channel error rate, in (0, 0.5).
    #[arg(long, conflicts_with = "errors")]
    pub qber: Option<f64>,
    /// Flip exactly this many distinct bits instead.
    #[arg(long)]
    pub errors: Option<usize>,
    /// Trial seed for `run`, base seed for the sweeps.
    #[arg(long)]
    pub seed: Option<u64>,
    /// static:k=<int> or dynamic.
    #[arg(long, value_parser = parse_schedule)]
    pub schedule: Option<ScheduleFlag>,
    /// Error-rate estimate used to size blocks (default: the injected rate).
    #[arg(long)]
    pub qber_estimate: Option<f64>,
    /// Multiplies the estimate before it is used.
    #[arg(long)]
    pub misestimation: Option<f64>,
    /// static:<rounds>, probabilistic:<quiet rounds> or threshold:<min corrected>.
    #[arg(long = "break", value_parser = parse_break, value_name = "VARIANT:PARAM")]
    pub break_condition: Option<(BreakVariant, u32)>,
    #[arg(long, value_enum)]
    pub permutation: Option<Permutation>,
    #[arg(long, value_enum)]
    pub aggregation: Option<Switch>,
    #[arg(long, value_enum)]
    pub parity_reuse: Option<Switch>,
    /// Write records here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

/// Sweep shape and repetition flags.
#[derive(Args, Debug, Default)]
pub struct SweepArgs {
    /// Trials per sweep point.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub qber_start: Option<f64>,
    #[arg(long)]
    pub qber_step: Option<f64>,
    /// Number of QBER points.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub length_start: Option<usize>,
    #[arg(long)]
    pub length_step: Option<usize>,
    #[arg(long)]
    pub length_stop: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleTable {
    pub variant: Option<ScheduleVariant>,
    pub k: Option<u32>,
    pub qber_estimate: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakTable {
    pub variant: Option<BreakVariant>,
    pub param: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepTable {
    pub repeats: Option<usize>,
    pub qber_start: Option<f64>,
    pub qber_step: Option<f64>,
    pub steps: Option<usize>,
    pub length_start: Option<usize>,
    pub length_step: Option<usize>,
    pub length_stop: Option<usize>,
}

/// The config file. Every key is optional; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub length: Option<usize>,
    pub qber: Option<f64>,
    pub errors: Option<usize>,
    pub seed: Option<u64>,
    pub misestimation: Option<f64>,
    pub permutation: Option<Permutation>,
    pub aggregation: Option<Switch>,
    pub parity_reuse: Option<Switch>,
    pub transcript: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    #[serde(default)]
    pub schedule: ScheduleTable,
    #[serde(default, rename = "break")]
    pub break_condition: BreakTable,
    #[serde(default)]
    pub sweep: SweepTable,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, SettingsError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, SettingsError> {
        let cfg: FileConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        if cfg.qber.is_some() && cfg.errors.is_some() {
            return Err(bad("config sets both qber and errors"));
        }
        Ok(cfg)
    }
}

/// Settings after merging flags over the file.
pub struct Resolved<'a> {
    pub args: &'a CommonArgs,
    pub file: FileConfig,
}

impl<'a> Resolved<'a> {
    pub fn new(args: &'a CommonArgs) -> Result<Self, SettingsError> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        Ok(Self { args, file })
    }

    pub fn seed(&self) -> u64 {
        self.args.seed.or(self.file.seed).unwrap_or(0)
    }

    pub fn length(&self) -> Option<usize> {
        self.args.length.or(self.file.length)
    }

    /// Noise for a single run. A flag for either form replaces both keys
    /// from the file.
    pub fn noise(&self) -> NoiseSpec {
        match (self.args.qber, self.args.errors) {
            (Some(qber), _) => NoiseSpec::Bsc { qber },
            (_, Some(count)) => NoiseSpec::FixedErrors { count },
            _ => match (self.file.qber, self.file.errors) {
                (_, Some(count)) => NoiseSpec::FixedErrors { count },
                (qber, _) => NoiseSpec::Bsc {
                    qber: qber.unwrap_or(DEFAULT_QBER),
                },
            },
        }
    }

    pub fn template(&self) -> Result<SessionTemplate, SettingsError> {
        let d = SessionTemplate::default();
        let (variant, k) = match self.args.schedule {
            Some(flag) => (flag.variant, flag.k.or(self.file.schedule.k)),
            None => (
                self.file.schedule.variant.unwrap_or(ScheduleVariant::Static),
                self.file.schedule.k,
            ),
        };
        let schedule = match variant {
            ScheduleVariant::Static => ScheduleKind::Static { k: k.unwrap_or(2) },
            ScheduleVariant::Dynamic => ScheduleKind::Dynamic,
        };
        let break_condition = match self.args.break_condition {
            Some((variant, param)) => make_break(variant, param),
            None => match (self.file.break_condition.variant, self.file.break_condition.param) {
                (Some(variant), Some(param)) => make_break(variant, param),
                (None, None) => d.break_condition,
                _ => return Err(bad("config needs both break.variant and break.param")),
            },
        };
        let qber_estimate = self.args.qber_estimate.or(self.file.schedule.qber_estimate);
        if let Some(q) = qber_estimate {
            if !(q > 0.0 && q < 0.5) {
                return Err(bad(format!("qber estimate {q} is outside (0, 0.5)")));
            }
        }
        let switch = |flag: Option<Switch>, key: Option<Switch>, default: Switch| match flag.or(key).unwrap_or(default) {
            Switch::On => true,
            Switch::Off => false,
        };
        let template = SessionTemplate {
            schedule,
            break_condition,
            permutation_kind: match self.args.permutation.or(self.file.permutation) {
                Some(Permutation::Shuffle) => PermutationKind::Shuffle,
                Some(Permutation::Lcg) => PermutationKind::Lcg,
                None => d.permutation_kind,
            },
            aggregation: if switch(self.args.aggregation, self.file.aggregation, Switch::On) {
                Aggregation::On
            } else {
                Aggregation::Off
            },
            parity_reuse: if switch(self.args.parity_reuse, self.file.parity_reuse, Switch::On) {
                ParityReuse::On
            } else {
                ParityReuse::Off
            },
            qber_estimate,
            misestimation: self.args.misestimation.or(self.file.misestimation).unwrap_or(1.0),
        };
        template.validate().map_err(|e| bad(e.to_string()))?;
        Ok(template)
    }

    pub fn out(&self) -> Option<&Path> {
        self.args.out.as_deref().or(self.file.out.as_deref())
    }

    pub fn format(&self) -> ExportFormat {
        match self.args.format.or(self.file.format) {
            Some(Format::Jsonl) => ExportFormat::Jsonl,
            _ => ExportFormat::Csv,
        }
    }

    pub fn repeats(&self, sweep: &SweepArgs) -> usize {
        sweep.repeats.or(self.file.sweep.repeats).unwrap_or(3)
    }

    pub fn qber_sweep(&self, sweep: &SweepArgs) -> Result<Scenario, SettingsError> {
        if self.args.qber.is_some() || self.args.errors.is_some() {
            return Err(bad("a QBER sweep takes --qber-start, --qber-step and --steps, not --qber or --errors"));
        }
        let Scenario::QberSweep {
            length,
            qber_start,
            qber_step,
            steps,
        } = Scenario::qber_sweep()
        else {
            unreachable!()
        };
        let f = &self.file.sweep;
        Ok(Scenario::QberSweep {
            length: self.length().unwrap_or(length),
            qber_start: sweep.qber_start.or(f.qber_start).unwrap_or(qber_start),
            qber_step: sweep.qber_step.or(f.qber_step).unwrap_or(qber_step),
            steps: sweep.steps.or(f.steps).unwrap_or(steps),
        })
    }

    pub fn length_sweep(&self, sweep: &SweepArgs) -> Result<Scenario, SettingsError> {
        if self.args.qber.is_some() || self.args.length.is_some() {
            return Err(bad(
                "a length sweep takes --length-start, --length-step, --length-stop and --errors, not --length or --qber",
            ));
        }
        let Scenario::LengthSweep {
            start,
            step,
            stop,
            fixed_errors,
        } = Scenario::length_sweep()
        else {
            unreachable!()
        };
        let f = &self.file.sweep;
        Ok(Scenario::LengthSweep {
            start: sweep.length_start.or(f.length_start).unwrap_or(start),
            step: sweep.length_step.or(f.length_step).unwrap_or(step),
            stop: sweep.length_stop.or(f.length_stop).unwrap_or(stop),
            fixed_errors: self.args.errors.or(self.file.errors).unwrap_or(fixed_errors),
        })
    }
}

fn make_break(variant: BreakVariant, param: u32) -> BreakCondition {
    match variant {
        BreakVariant::Static => BreakCondition::Static { total_rounds: param },
        BreakVariant::Probabilistic => BreakCondition::Probabilistic { quiet_rounds: param },
        BreakVariant::Threshold => BreakCondition::Threshold { min_corrected: param },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_flags() {
        assert_eq!(
            parse_schedule("static:k=3").unwrap(),
            ScheduleFlag {
                variant: ScheduleVariant::Static,
                k: Some(3)
            }
        );
        assert_eq!(parse_schedule("dynamic").unwrap().variant, ScheduleVariant::Dynamic);
        assert_eq!(parse_schedule("static").unwrap().k, None);
        assert!(parse_schedule("static:3").is_err());
        assert!(parse_schedule("dynamic:k=2").is_err());
    }

    #[test]
    fn break_flags() {
        assert_eq!(parse_break("threshold:1").unwrap(), (BreakVariant::Threshold, 1));
        assert_eq!(parse_break("probabilistic:2").unwrap(), (BreakVariant::Probabilistic, 2));
        assert!(parse_break("static").is_err());
        assert!(parse_break("sometimes:2").is_err());
        assert!(parse_break("static:-1").is_err());
    }

    #[test]
    fn flags_beat_the_file() {
        let file = FileConfig::parse(
            r#"
            length = 1000
            errors = 5
            permutation = "shuffle"
            [schedule]
            variant = "static"
            k = 3
            qber_estimate = 0.05
            [break]
            variant = "threshold"
            param = 1
            "#,
        )
        .unwrap();
        let args = CommonArgs {
            qber: Some(0.1),
            schedule: Some(parse_schedule("dynamic").unwrap()),
            ..Default::default()
        };
        let r = Resolved { args: &args, file };
        assert_eq!(r.length(), Some(1000));
        assert_eq!(r.noise(), NoiseSpec::Bsc { qber: 0.1 });
        let t = r.template().unwrap();
        assert_eq!(t.schedule, ScheduleKind::Dynamic);
        assert_eq!(t.break_condition, BreakCondition::Threshold { min_corrected: 1 });
        assert_eq!(t.permutation_kind, PermutationKind::Shuffle);
        assert_eq!(t.qber_estimate, Some(0.05));
    }

    #[test]
    fn static_flag_without_k_keeps_the_file_k() {
        let file = FileConfig::parse("[schedule]\nk = 5\n").unwrap();
        let args = CommonArgs {
            schedule: Some(parse_schedule("static").unwrap()),
            ..Default::default()
        };
        let t = Resolved { args: &args, file }.template().unwrap();
        assert_eq!(t.schedule, ScheduleKind::Static { k: 5 });
    }

    #[test]
    fn file_errors() {
        assert!(FileConfig::parse("colour = \"red\"").is_err());
        assert!(FileConfig::parse("qber = 0.1\nerrors = 3").is_err());
        assert!(FileConfig::parse("[schedule]\nvariant = \"adaptive\"").is_err());
        let file = FileConfig::parse("[break]\nvariant = \"static\"").unwrap();
        let args = CommonArgs::default();
        assert!(Resolved { args: &args, file }.template().is_err());
    }

    #[test]
    fn defaults() {
        let args = CommonArgs::default();
        let r = Resolved {
            args: &args,
            file: FileConfig::default(),
        };
        assert_eq!(r.template().unwrap(), SessionTemplate::default());
        assert_eq!(r.noise(), NoiseSpec::Bsc { qber: DEFAULT_QBER });
        assert_eq!(r.format(), ExportFormat::Csv);
        assert_eq!(r.seed(), 0);
    }
}
