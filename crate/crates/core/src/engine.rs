//! One party's CASCADE session.
//!
//! A [`Session`] is a state machine with no I/O of its own. The driver
//! hands it each inbound [`Message`] and sends whatever it returns. The
//! protocol is strictly alternating (every message gets exactly one reply
//! until the session ends), so a single-threaded driver and a two-thread
//! driver produce the same transcript. [`run_lockstep`] and
//! [`run_threaded`] are the two stock drivers.
//!
//! The initiator (Alice) holds the reference frame and answers parity
//! queries. The responder (Bob) holds the noisy frame, drives every
//! search, and flips his bits.
//!
//! ```text
//! Alice                              Bob
//!   Init(config)          ->
//!                         <-  InitAck
//!   BlockParities(r)      ->
//!                         <-  ParityQuery     (repeated while searching)
//!   ParityAnswer          ->
//!                         <-  RoundDone(r)
//!   ... next round, or:
//!   Finalize(fingerprint) ->
//!                         <-  Result
//! ```
//!
//! # Searching
//!
//! Bob keeps, for every round so far, his own block parities and the
//! ones Alice sent. A block is *odd* when they differ. Work proceeds in
//! batches: a batch is every odd block of the lowest round that has one.
//! Blocks of one round are disjoint, so the searches of a batch cannot
//! affect one another. With aggregation off they run one after another and
//! each query message carries one interval. With aggregation on they
//! advance together and one message carries a query for every search
//! still waiting. Found errors are flipped when the batch ends; each flip
//! toggles the parity of the block holding that bit in every round, which
//! can make blocks of earlier rounds odd again (the cascade). Because the
//! batches are the same in both modes, so are the corrections.
//!
//! With parity reuse on, Bob records every parity of Alice's he has learned
//! or can infer (a block parity, a disclosed left half, and the right half
//! obtained by subtraction) and skips queries for intervals already on
//! record.
//!
//! Each `(round, block)` pair has a [`ColoredTree`] in that round's
//! permuted coordinates. With aggregation on, a batch records into fresh
//! trees that are merged into the stored ones when the batch ends.
//!
//! # Fingerprint
//!
//! Completion compares [`fingerprint`]s: the frame's bits, preceded by its
//! length, read as the coefficients of a polynomial over the prime field
//! `2^61 - 1` and evaluated at a point derived from the session seed.
//! Two equal-length frames differing in one bit always disagree.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binary_search::{BinarySearchState, RemoteParity, SearchError};
use crate::bitframe::{apply_permutation, derive_seed, BitFrame, Permutation, PermutationKind};
use crate::channel::{
    channel, ChannelError, ChannelMonitor, Endpoint, EveTap, Message, ResultStatus, Transcript,
};
use crate::error::ConfigError;
use crate::paritytree::{halves, merge_trees, ColoredTree, TreeError};
use crate::schedule::{block_size_for_round, should_terminate, BlockScheduleConfig, BreakCondition, RoundPlan};

/// Sessions end after this many rounds whatever the break condition says.
pub const MAX_ROUNDS: u32 = 64;

pub const FINGERPRINT_MODULUS: u64 = (1 << 61) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Off,
    On,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityReuse {
    Off,
    On,
}

/// Parameters both parties must agree on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub frame_length: usize,
    pub permutation_kind: PermutationKind,
    pub schedule: BlockScheduleConfig,
    pub break_condition: BreakCondition,
    pub aggregation: Aggregation,
    pub parity_reuse: ParityReuse,
    pub seed: u64,
}

impl SessionConfig {
    /// Static schedule with `k = 2`, four rounds, LCG permutations,
    /// aggregation and parity reuse on.
    pub fn new(frame_length: usize, qber_estimate: f64, seed: u64) -> Self {
        Self {
            frame_length,
            permutation_kind: PermutationKind::Lcg,
            schedule: BlockScheduleConfig::Static { k: 2, qber_estimate },
            break_condition: BreakCondition::Static { total_rounds: 4 },
            aggregation: Aggregation::On,
            parity_reuse: ParityReuse::On,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.frame_length == 0 {
            return Err(ConfigError::EmptyFrame);
        }
        self.schedule.validate()?;
        self.break_condition.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorrectionEvent {
    /// Session round during which the bit was corrected.
    pub round: u32,
    /// Round whose block the search ran in.
    pub block_round: u32,
    pub original_position: usize,
    /// Position under `block_round`'s permutation.
    pub permuted_position: usize,
    /// Parity bits the search consumed from the channel.
    pub disclosed_bits: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FinalStatus {
    Success,
    /// The fingerprints differed: residual errors remain.
    Failure,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("peer configuration differs")]
    ConfigMismatch,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("cascade exceeded {limit} corrections")]
    CascadeLimit { limit: usize },
    #[error("transport: {0}")]
    Transport(String),
}

impl From<ChannelError> for SessionError {
    fn from(e: ChannelError) -> Self {
        SessionError::Transport(e.to_string())
    }
}

fn protocol(msg: impl Into<String>) -> SessionError {
    SessionError::Protocol(msg.into())
}

/// Seed-keyed polynomial fingerprint of `frame`.
pub fn fingerprint(frame: &BitFrame, seed: u64) -> u64 {
    const P: u128 = FINGERPRINT_MODULUS as u128;
    let x = u128::from(2 + derive_seed(seed, &[0x4650]) % (FINGERPRINT_MODULUS - 2));
    let mut h = frame.len() as u128 % P;
    for &b in frame.bits() {
        h = (h * x + u128::from(b)) % P;
    }
    h as u64
}

#[derive(Clone, Debug)]
struct RoundData {
    permutation: Permutation,
    inverse: Permutation,
    plan: RoundPlan,
    /// This party's frame under the round's permutation, kept current.
    permuted: BitFrame,
    remote_parities: Vec<u8>,
    local_parities: Vec<u8>,
    odd: BTreeSet<usize>,
}

#[derive(Clone, Debug)]
struct ActiveSearch {
    block: usize,
    state: BinarySearchState,
    /// Alice's parity of the current interval.
    remote: u8,
    /// Batch-local records, merged at the end of the batch.
    tree: Option<ColoredTree>,
}

#[derive(Clone, Debug)]
struct Batch {
    round: u32,
    searches: Vec<ActiveSearch>,
    awaiting: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
enum Phase {
    Created,
    AwaitInit,
    AwaitAck,
    AwaitRoundDone,
    AwaitRound,
    Searching,
    AwaitResult,
    Done,
    Aborted(SessionError),
}

#[derive(Clone, Debug)]
pub struct Session {
    role: Role,
    config: SessionConfig,
    frame: BitFrame,
    phase: Phase,
    rounds: Vec<RoundData>,
    history: Vec<usize>,
    corrections: Vec<CorrectionEvent>,
    stored_parities: HashMap<(u32, Range<usize>), u8>,
    trees: BTreeMap<(u32, usize), ColoredTree>,
    batch: Option<Batch>,
    round_corrected: usize,
    disclosed: u64,
    messages_sent: u64,
    status: Option<FinalStatus>,
}

impl Session {
    pub fn new(role: Role, config: SessionConfig, frame: BitFrame) -> Result<Self, SessionError> {
        config.validate()?;
        if frame.len() != config.frame_length {
            return Err(ConfigError::LengthMismatch {
                expected: config.frame_length,
                found: frame.len(),
            }
            .into());
        }
        Ok(Self {
            role,
            config,
            frame,
            phase: Phase::Created,
            rounds: Vec::new(),
            history: Vec::new(),
            corrections: Vec::new(),
            stored_parities: HashMap::new(),
            trees: BTreeMap::new(),
            batch: None,
            round_corrected: 0,
            disclosed: 0,
            messages_sent: 0,
            status: None,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// The working frame; for the responder it reflects every correction.
    pub fn frame(&self) -> &BitFrame {
        &self.frame
    }

    /// Rounds started so far.
    pub fn rounds_started(&self) -> usize {
        self.rounds.len()
    }

    pub fn permutation(&self, round: u32) -> Option<&Permutation> {
        self.rounds.get(round as usize).map(|r| &r.permutation)
    }

    pub fn round_plan(&self, round: u32) -> Option<&RoundPlan> {
        self.rounds.get(round as usize).map(|r| &r.plan)
    }

    /// Corrections per completed round.
    pub fn history(&self) -> &[usize] {
        &self.history
    }

    pub fn corrections(&self) -> &[CorrectionEvent] {
        &self.corrections
    }

    pub fn corrected_total(&self) -> usize {
        self.corrections.len()
    }

    /// Parity bits sent (initiator) or received (responder).
    pub fn disclosed_parity_bits(&self) -> u64 {
        self.disclosed
    }

    pub fn messages_sent(&self) -> u64 {
        self.messages_sent
    }

    pub fn trees(&self) -> &BTreeMap<(u32, usize), ColoredTree> {
        &self.trees
    }

    pub fn status(&self) -> Option<FinalStatus> {
        self.status
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.phase, Phase::Done | Phase::Aborted(_))
    }

    pub fn abort_reason(&self) -> Option<&SessionError> {
        match &self.phase {
            Phase::Aborted(e) => Some(e),
            _ => None,
        }
    }

    /// Alice's parity of `interval` under `round`'s permutation, if the
    /// responder already knows it. Always `None` with reuse off.
    pub fn reuse_parity_lookup(&self, interval: &Range<usize>, round: u32) -> Option<u8> {
        match self.config.parity_reuse {
            ParityReuse::On => self.stored_parities.get(&(round, interval.clone())).copied(),
            ParityReuse::Off => None,
        }
    }

    /// Original positions revealed by a search ending on a single bit.
    pub fn compromised_positions(&self) -> BTreeSet<usize> {
        self.corrections.iter().map(|c| c.original_position).collect()
    }

    /// Opens the session. The initiator returns its `Init` message.
    pub fn start(&mut self) -> Result<Option<Message>, SessionError> {
        if self.phase != Phase::Created {
            return Err(protocol("session already started"));
        }
        match self.role {
            Role::Initiator => {
                self.phase = Phase::AwaitAck;
                Ok(self.emit(Message::Init(self.config)))
            }
            Role::Responder => {
                self.phase = Phase::AwaitInit;
                Ok(None)
            }
        }
    }

    /// Processes one inbound message and returns the reply, if any.
    pub fn handle(&mut self, message: Message) -> Result<Option<Message>, SessionError> {
        if self.phase == Phase::Created {
            self.start()?;
        }
        let reply = match self.role {
            Role::Initiator => self.handle_initiator(message),
            Role::Responder => self.handle_responder(message),
        };
        match reply {
            Ok(m) => Ok(m.and_then(|m| self.emit(m))),
            Err(e) => {
                self.phase = Phase::Aborted(e.clone());
                Err(e)
            }
        }
    }

    fn emit(&mut self, m: Message) -> Option<Message> {
        self.messages_sent += 1;
        Some(m)
    }

    fn unexpected(&self, m: &Message) -> SessionError {
        protocol(format!("unexpected {} in phase {:?}", m.name(), self.phase))
    }

    // ---- initiator ----

    fn handle_initiator(&mut self, message: Message) -> Result<Option<Message>, SessionError> {
        match (&self.phase, message) {
            (Phase::AwaitAck, Message::InitAck { accepted }) => {
                if !accepted {
                    return Err(SessionError::ConfigMismatch);
                }
                self.open_round_initiator().map(Some)
            }
            (Phase::AwaitRoundDone, Message::ParityQuery { round, intervals }) => {
                let data = self
                    .rounds
                    .get(round as usize)
                    .ok_or_else(|| protocol(format!("query for unknown round {round}")))?;
                let mut entries = Vec::with_capacity(intervals.len());
                for r in intervals {
                    if r.is_empty() || r.end > self.config.frame_length {
                        return Err(protocol(format!("query interval {r:?} out of range")));
                    }
                    let bit = data.permuted.parity_of(r.clone());
                    entries.push((r, bit));
                }
                self.disclosed += entries.len() as u64;
                Ok(Some(Message::ParityAnswer { round, entries }))
            }
            (Phase::AwaitRoundDone, Message::RoundDone { round, corrected }) => {
                if round as usize + 1 != self.rounds.len() {
                    return Err(protocol(format!("RoundDone for round {round}")));
                }
                self.history.push(corrected as usize);
                if self.rounds.len() >= MAX_ROUNDS as usize
                    || should_terminate(self.config.break_condition, &self.history)
                {
                    self.phase = Phase::AwaitResult;
                    Ok(Some(Message::Finalize {
                        fingerprint: fingerprint(&self.frame, self.config.seed),
                    }))
                } else {
                    self.open_round_initiator().map(Some)
                }
            }
            (Phase::AwaitResult, Message::Result { status }) => {
                self.status = Some(match status {
                    ResultStatus::Success => FinalStatus::Success,
                    ResultStatus::Failure => FinalStatus::Failure,
                });
                self.phase = Phase::Done;
                Ok(None)
            }
            (_, m) => Err(self.unexpected(&m)),
        }
    }

    fn open_round_initiator(&mut self) -> Result<Message, SessionError> {
        let round = self.rounds.len() as u32;
        let data = self.derive_round(round)?;
        let parities = data.local_parities.clone();
        self.rounds.push(RoundData {
            remote_parities: parities.clone(),
            ..data
        });
        self.disclosed += parities.len() as u64;
        self.phase = Phase::AwaitRoundDone;
        Ok(Message::BlockParities { round, parities })
    }

    /// Permutation, plan and local parities for `round`; identical on both
    /// sides because they depend only on the config and the history.
    fn derive_round(&self, round: u32) -> Result<RoundData, SessionError> {
        let n = self.config.frame_length;
        let prev = self.history.last().copied().unwrap_or(0);
        let size = block_size_for_round(self.config.schedule, round, n, prev)?;
        let plan = RoundPlan::new(round, n, size);
        let permutation = self.config.permutation_kind.generate(n, round, self.config.seed);
        let permuted = apply_permutation(&self.frame, &permutation)?;
        let local_parities = plan
            .block_intervals
            .iter()
            .map(|b| permuted.parity_of(b.clone()))
            .collect();
        Ok(RoundData {
            inverse: permutation.invert(),
            permutation,
            plan,
            permuted,
            remote_parities: Vec::new(),
            local_parities,
            odd: BTreeSet::new(),
        })
    }

    // ---- responder ----

    fn handle_responder(&mut self, message: Message) -> Result<Option<Message>, SessionError> {
        match (&self.phase, message) {
            (Phase::AwaitInit, Message::Init(remote)) => {
                if remote != self.config {
                    self.phase = Phase::Aborted(SessionError::ConfigMismatch);
                    return Ok(Some(Message::InitAck { accepted: false }));
                }
                self.phase = Phase::AwaitRound;
                Ok(Some(Message::InitAck { accepted: true }))
            }
            (Phase::AwaitRound, Message::BlockParities { round, parities }) => {
                if round as usize != self.rounds.len() {
                    return Err(protocol(format!("expected round {}, got {round}", self.rounds.len())));
                }
                let mut data = self.derive_round(round)?;
                if parities.len() != data.plan.num_blocks() {
                    return Err(protocol(format!(
                        "{} block parities for {} blocks",
                        parities.len(),
                        data.plan.num_blocks()
                    )));
                }
                self.disclosed += parities.len() as u64;
                for (b, interval) in data.plan.block_intervals.iter().enumerate() {
                    let tree = ColoredTree::new(interval.clone(), round)?.set_syndrome(
                        interval.clone(),
                        parities[b],
                        round,
                    )?;
                    self.trees.insert((round, b), tree);
                    self.store_parity(round, interval.clone(), parities[b]);
                }
                data.odd = (0..parities.len())
                    .filter(|&b| parities[b] != data.local_parities[b])
                    .collect();
                data.remote_parities = parities;
                self.rounds.push(data);
                self.round_corrected = 0;
                self.phase = Phase::Searching;
                self.advance().map(Some)
            }
            (Phase::Searching, Message::ParityAnswer { round, entries }) => {
                self.apply_answer(round, entries)?;
                self.advance().map(Some)
            }
            (Phase::AwaitRound, Message::Finalize { fingerprint: remote }) => {
                let ok = remote == fingerprint(&self.frame, self.config.seed);
                let (status, wire) = if ok {
                    (FinalStatus::Success, ResultStatus::Success)
                } else {
                    (FinalStatus::Failure, ResultStatus::Failure)
                };
                self.status = Some(status);
                self.phase = Phase::Done;
                Ok(Some(Message::Result { status: wire }))
            }
            (_, m) => Err(self.unexpected(&m)),
        }
    }

    fn store_parity(&mut self, round: u32, interval: Range<usize>, bit: u8) {
        if self.config.parity_reuse == ParityReuse::On {
            self.stored_parities.insert((round, interval), bit);
        }
    }

    /// Records Alice's parity of both halves of a search's current
    /// interval, given the disclosed or stored left half.
    fn record_halves(&mut self, round: u32, idx: usize, left_bit: u8) -> Result<(), SessionError> {
        let batch = self.batch.as_mut().expect("batch in progress");
        let s = &mut batch.searches[idx];
        let (left, right) = halves(&s.state.current_interval());
        let right_bit = s.remote ^ left_bit;
        let block = s.block;
        let tree = match s.tree.as_mut() {
            Some(t) => t,
            None => self.trees.get_mut(&(round, block)).expect("tree for every block"),
        };
        *tree = tree
            .set_syndrome(left.clone(), left_bit, round)?
            .set_syndrome(right.clone(), right_bit, round)?;
        self.store_parity(round, left, left_bit);
        self.store_parity(round, right, right_bit);
        Ok(())
    }

    /// Steps search `idx` with Alice's parity of its left half.
    fn step_search(&mut self, round: u32, idx: usize, remote: RemoteParity) -> Result<(), SessionError> {
        self.record_halves(round, idx, remote.bit())?;
        let data = &self.rounds[round as usize];
        let batch = self.batch.as_mut().expect("batch in progress");
        let s = &mut batch.searches[idx];
        let query = s.state.pending_query().expect("search is running");
        let local = data.permuted.parity_of(query);
        let next = s.state.step(local, remote)?;
        let went_left = next.current_interval().start == s.state.current_interval().start;
        if !went_left {
            s.remote ^= remote.bit();
        } else {
            s.remote = remote.bit();
        }
        s.state = next;
        Ok(())
    }

    fn apply_answer(&mut self, round: u32, entries: Vec<(Range<usize>, u8)>) -> Result<(), SessionError> {
        let batch = self.batch.as_ref().ok_or_else(|| protocol("answer without a query"))?;
        if round != batch.round || entries.len() != batch.awaiting.len() {
            return Err(protocol("answer does not match the pending query"));
        }
        let awaiting = batch.awaiting.clone();
        for (&idx, (interval, bit)) in awaiting.iter().zip(entries) {
            let expected = self.batch.as_ref().unwrap().searches[idx].state.pending_query();
            if expected.as_ref() != Some(&interval) {
                return Err(protocol(format!("answer for {interval:?}, expected {expected:?}")));
            }
            self.disclosed += 1;
            self.step_search(round, idx, RemoteParity::Disclosed(bit))?;
        }
        self.batch.as_mut().unwrap().awaiting.clear();
        Ok(())
    }

    /// Runs searches as far as known parities allow; returns the next
    /// query, or `RoundDone` when no odd block remains.
    fn advance(&mut self) -> Result<Message, SessionError> {
        loop {
            if self.batch.is_none() && !self.open_batch()? {
                let round = self.rounds.len() as u32 - 1;
                self.history.push(self.round_corrected);
                self.phase = Phase::AwaitRound;
                return Ok(Message::RoundDone {
                    round,
                    corrected: self.round_corrected as u64,
                });
            }
            let round = self.batch.as_ref().unwrap().round;
            let count = self.batch.as_ref().unwrap().searches.len();
            let mut waiting = Vec::new();
            for idx in 0..count {
                if self.config.aggregation == Aggregation::Off && !waiting.is_empty() {
                    break;
                }
                while let Some(q) = self.batch.as_ref().unwrap().searches[idx].state.pending_query() {
                    match self.reuse_parity_lookup(&q, round) {
                        Some(bit) => self.step_search(round, idx, RemoteParity::Stored(bit))?,
                        None => {
                            waiting.push(idx);
                            break;
                        }
                    }
                }
            }
            if waiting.is_empty() {
                self.finish_batch()?;
                continue;
            }
            let batch = self.batch.as_mut().unwrap();
            let intervals = waiting
                .iter()
                .map(|&i| batch.searches[i].state.pending_query().unwrap())
                .collect();
            batch.awaiting = waiting;
            return Ok(Message::ParityQuery { round, intervals });
        }
    }

    fn open_batch(&mut self) -> Result<bool, SessionError> {
        let Some(round) = self.rounds.iter().position(|r| !r.odd.is_empty()) else {
            return Ok(false);
        };
        let data = &self.rounds[round];
        let round = round as u32;
        let mut searches = Vec::new();
        for &b in &data.odd {
            let interval = data.plan.block_intervals[b].clone();
            let state = BinarySearchState::start_on_mismatch(
                interval.clone(),
                data.local_parities[b],
                data.remote_parities[b],
            )?;
            let tree = match self.config.aggregation {
                Aggregation::On => Some(ColoredTree::new(interval, round)?),
                Aggregation::Off => None,
            };
            searches.push(ActiveSearch {
                block: b,
                state,
                remote: data.remote_parities[b],
                tree,
            });
        }
        self.batch = Some(Batch {
            round,
            searches,
            awaiting: Vec::new(),
        });
        Ok(true)
    }

    fn finish_batch(&mut self) -> Result<(), SessionError> {
        let batch = self.batch.take().expect("batch in progress");
        let session_round = self.rounds.len() as u32 - 1;
        for s in batch.searches {
            let position = s.state.found().expect("search finished");
            let key = (batch.round, s.block);
            let mut tree = self.trees[&key].clone();
            if let Some(delta) = s.tree {
                tree = merge_trees(&tree, &delta)?;
            }
            tree = tree.mark_error_leaf(position)?.mark_compromised(position)?;
            self.trees.insert(key, tree);
            let original = self.rounds[batch.round as usize].inverse.target(position);
            self.correct(original);
            self.corrections.push(CorrectionEvent {
                round: session_round,
                block_round: batch.round,
                original_position: original,
                permuted_position: position,
                disclosed_bits: s.state.disclosed_count(),
            });
            self.round_corrected += 1;
            if self.corrections.len() > self.config.frame_length {
                return Err(SessionError::CascadeLimit {
                    limit: self.config.frame_length,
                });
            }
        }
        Ok(())
    }

    /// Flips `original` and toggles the block holding it in every round.
    fn correct(&mut self, original: usize) {
        self.frame.flip(original);
        for data in &mut self.rounds {
            let p = data.permutation.target(original);
            data.permuted.flip(p);
            let b = data.plan.block_of(p);
            data.local_parities[b] ^= 1;
            if data.local_parities[b] != data.remote_parities[b] {
                data.odd.insert(b);
            } else {
                data.odd.remove(&b);
            }
        }
    }
}

/// Both finished sessions of a run plus what the channel saw.
#[derive(Clone, Debug)]
pub struct SessionRun {
    pub initiator: Session,
    pub responder: Session,
    pub transcript: Transcript,
    pub tap: EveTap,
}

impl SessionRun {
    pub fn status(&self) -> FinalStatus {
        self.responder.status().expect("finished run has a status")
    }

    /// Messages sent by both parties.
    pub fn messages_sent(&self) -> u64 {
        self.initiator.messages_sent() + self.responder.messages_sent()
    }
}

/// A failed run; the transcript up to the failure is kept.
#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct RunError {
    pub error: SessionError,
    pub transcript: Transcript,
}

fn fail(monitor: &ChannelMonitor, error: SessionError) -> RunError {
    monitor.close();
    RunError {
        error,
        transcript: monitor.transcript(),
    }
}

fn sessions(
    config: SessionConfig,
    alice_frame: BitFrame,
    bob_frame: BitFrame,
) -> Result<(Session, Session), RunError> {
    let wrap = |error| RunError {
        error,
        transcript: Transcript::default(),
    };
    let alice = Session::new(Role::Initiator, config, alice_frame).map_err(wrap)?;
    let bob = Session::new(Role::Responder, config, bob_frame).map_err(wrap)?;
    Ok((alice, bob))
}

/// Runs both parties on the calling thread, alternating strictly.
pub fn run_lockstep(config: SessionConfig, alice_frame: BitFrame, bob_frame: BitFrame) -> Result<SessionRun, RunError> {
    let (alice, bob) = sessions(config, alice_frame, bob_frame)?;
    run_lockstep_sessions(alice, bob)
}

/// Like [`run_lockstep`] with caller-built sessions, which may hold
/// different configs.
pub fn run_lockstep_sessions(mut alice: Session, mut bob: Session) -> Result<SessionRun, RunError> {
    let (a_end, b_end, monitor) = channel();
    let step = |monitor: &ChannelMonitor, r: Result<Option<Message>, SessionError>| r.map_err(|e| fail(monitor, e));
    let mut pending = step(&monitor, alice.start())?.map(|m| (Role::Initiator, m));
    step(&monitor, bob.start())?;
    while let Some((from, message)) = pending {
        let (tx, rx, receiver) = match from {
            Role::Initiator => (&a_end, &b_end, &mut bob),
            Role::Responder => (&b_end, &a_end, &mut alice),
        };
        tx.send(message).map_err(|e| fail(&monitor, e.into()))?;
        let inbound = rx.recv().map_err(|e| fail(&monitor, e.into()))?;
        let to = receiver.role();
        pending = step(&monitor, receiver.handle(inbound))?.map(|m| (to, m));
    }
    finish(alice, bob, &monitor)
}

fn finish(alice: Session, bob: Session, monitor: &ChannelMonitor) -> Result<SessionRun, RunError> {
    for s in [&alice, &bob] {
        if let Some(e) = s.abort_reason() {
            return Err(fail(monitor, e.clone()));
        }
        if !s.is_finished() {
            return Err(fail(monitor, protocol("conversation ended early")));
        }
    }
    Ok(SessionRun {
        initiator: alice,
        responder: bob,
        transcript: monitor.transcript(),
        tap: monitor.tap(),
    })
}

fn party_loop(session: &mut Session, end: &Endpoint) -> Result<(), SessionError> {
    if let Some(m) = session.start()? {
        end.send(m)?;
    }
    while !session.is_finished() {
        let inbound = end.recv()?;
        if let Some(reply) = session.handle(inbound)? {
            end.send(reply)?;
        }
    }
    match session.abort_reason() {
        Some(e) => Err(e.clone()),
        None => Ok(()),
    }
}

/// Runs each party on its own thread.
pub fn run_threaded(config: SessionConfig, alice_frame: BitFrame, bob_frame: BitFrame) -> Result<SessionRun, RunError> {
    let (mut alice, mut bob) = sessions(config, alice_frame, bob_frame)?;
    let (a_end, b_end, monitor) = channel();
    let (ra, rb) = thread::scope(|scope| {
        let ha = scope.spawn(|| {
            let r = party_loop(&mut alice, &a_end);
            drop(a_end);
            r
        });
        let hb = scope.spawn(|| {
            let r = party_loop(&mut bob, &b_end);
            drop(b_end);
            r
        });
        (ha.join().expect("initiator thread"), hb.join().expect("responder thread"))
    });
    // A transport error on one side is usually the echo of a real error on
    // the other, so report the other one first.
    match (ra, rb) {
        (Ok(()), Ok(())) => finish(alice, bob, &monitor),
        (Err(a), Err(b)) => {
            let e = if matches!(a, SessionError::Transport(_)) { b } else { a };
            Err(fail(&monitor, e))
        }
        (Err(e), Ok(())) | (Ok(()), Err(e)) => Err(fail(&monitor, e)),
    }
}

/// Feeds the initiator's side of a recorded transcript to a fresh
/// responder holding `frame`. The responder's replies must match the
/// recording.
pub fn replay_responder(config: SessionConfig, frame: BitFrame, transcript: &Transcript) -> Result<Session, SessionError> {
    use crate::channel::Direction;
    let mut bob = Session::new(Role::Responder, config, frame)?;
    bob.start()?;
    let mut replies = transcript.messages(Direction::BobToAlice);
    for m in transcript.messages(Direction::AliceToBob) {
        let reply = bob.handle(m.clone())?;
        if reply.as_ref() != replies.next() {
            return Err(protocol("replayed reply differs from the recording"));
        }
    }
    Ok(bob)
}
