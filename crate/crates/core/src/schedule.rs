//! Block-size schedules and break conditions.
//!
//! Block sizes start at `ceil(1 / qber)` and are always clamped to
//! `[2, frame_length]`: two bits is the smallest block BINARY can bisect.
//! The static schedule multiplies by `k` every round. The dynamic schedule
//! re-estimates the error rate from the previous round's corrections and
//! uses a single frame-wide block when nothing was corrected.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockScheduleConfig {
    Static { k: u32, qber_estimate: f64 },
    Dynamic { initial_qber_estimate: f64 },
}

impl BlockScheduleConfig {
    pub fn qber_estimate(&self) -> f64 {
        match *self {
            BlockScheduleConfig::Static { qber_estimate, .. } => qber_estimate,
            BlockScheduleConfig::Dynamic {
                initial_qber_estimate,
            } => initial_qber_estimate,
        }
    }

    pub fn with_qber_estimate(self, estimate: f64) -> Self {
        match self {
            BlockScheduleConfig::Static { k, .. } => BlockScheduleConfig::Static {
                k,
                qber_estimate: estimate,
            },
            BlockScheduleConfig::Dynamic { .. } => BlockScheduleConfig::Dynamic {
                initial_qber_estimate: estimate,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_qber(self.qber_estimate())?;
        if let BlockScheduleConfig::Static { k, .. } = *self {
            if k < 2 {
                return Err(ConfigError::invalid("schedule.k", format!("{k} < 2")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BreakCondition {
    /// Stop after this many consecutive rounds without corrections.
    Probabilistic { quiet_rounds: u32 },
    /// Stop once a round corrects fewer than `min_corrected` errors.
    Threshold { min_corrected: u32 },
    /// Stop after a fixed number of rounds.
    Static { total_rounds: u32 },
}

impl BreakCondition {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            BreakCondition::Probabilistic { quiet_rounds: 0 } => {
                Err(ConfigError::invalid("break.param", "quiet_rounds must be positive"))
            }
            BreakCondition::Static { total_rounds: 0 } => {
                Err(ConfigError::invalid("break.param", "total_rounds must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Corrections observed in a completed round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundStats {
    pub corrected: usize,
    pub frame_length: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundPlan {
    pub round_index: u32,
    pub block_size: usize,
    pub block_intervals: Vec<Range<usize>>,
}

impl RoundPlan {
    pub fn new(round_index: u32, frame_length: usize, block_size: usize) -> Self {
        Self {
            round_index,
            block_size,
            block_intervals: partition_into_blocks(frame_length, block_size),
        }
    }

    /// Index of the block holding permuted position `position`.
    pub fn block_of(&self, position: usize) -> usize {
        position / self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.block_intervals.len()
    }
}

fn check_qber(q: f64) -> Result<(), ConfigError> {
    if q > 0.0 && q < 0.5 {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            name: "qber_estimate",
            value: q,
            range: "(0, 0.5)",
        })
    }
}

/// `ceil(1 / qber_estimate)`, unclamped.
///
/// A relative slack of 1e-9 absorbs representation error, so `0.01` maps
/// to 100 rather than 101.
pub fn initial_block_size(qber_estimate: f64) -> Result<usize, ConfigError> {
    check_qber(qber_estimate)?;
    let inverse = 1.0 / qber_estimate;
    Ok((inverse * (1.0 - 1e-9)).ceil() as usize)
}

pub fn clamp_block_size(size: usize, frame_length: usize) -> usize {
    size.max(2).min(frame_length.max(1))
}

/// Block size for `round >= 1` given the previous round's statistics.
pub fn next_block_size(config: BlockScheduleConfig, round: u32, prev: RoundStats) -> Result<usize, ConfigError> {
    let n = prev.frame_length;
    let size = match config {
        BlockScheduleConfig::Static { k, qber_estimate } => {
            let base = clamp_block_size(initial_block_size(qber_estimate)?, n);
            let growth = u64::from(k).checked_pow(round).unwrap_or(u64::MAX);
            (base as u64).saturating_mul(growth).min(usize::MAX as u64) as usize
        }
        BlockScheduleConfig::Dynamic { .. } if prev.corrected == 0 => n,
        // 1 / (corrected / n), kept in integers.
        BlockScheduleConfig::Dynamic { .. } => n.div_ceil(prev.corrected),
    };
    Ok(clamp_block_size(size, n))
}

/// Block size used in `round`. Round 0 always uses the a-priori estimate;
/// `prev_corrected` is ignored there.
pub fn block_size_for_round(
    config: BlockScheduleConfig,
    round: u32,
    frame_length: usize,
    prev_corrected: usize,
) -> Result<usize, ConfigError> {
    if round == 0 {
        return Ok(clamp_block_size(
            initial_block_size(config.qber_estimate())?,
            frame_length,
        ));
    }
    next_block_size(
        config,
        round,
        RoundStats {
            corrected: prev_corrected,
            frame_length,
        },
    )
}

pub fn partition_into_blocks(frame_length: usize, block_size: usize) -> Vec<Range<usize>> {
    assert!(block_size >= 1, "block size must be positive");
    (0..frame_length)
        .step_by(block_size)
        .map(|start| start..(start + block_size).min(frame_length))
        .collect()
}

/// Evaluated after each completed round; `history[i]` is the number of
/// errors corrected during round `i`.
pub fn should_terminate(cond: BreakCondition, history: &[usize]) -> bool {
    match cond {
        BreakCondition::Probabilistic { quiet_rounds } => {
            let q = quiet_rounds as usize;
            history.len() >= q && history[history.len() - q..].iter().all(|&c| c == 0)
        }
        BreakCondition::Threshold { min_corrected } => history
            .last()
            .is_some_and(|&c| c < min_corrected as usize),
        BreakCondition::Static { total_rounds } => history.len() >= total_rounds as usize,
    }
}
