//! The classical channel between the two parties.
//!
//! [`channel`] returns a connected pair of [`Endpoint`]s and a
//! [`ChannelMonitor`]. Endpoints are `Send`, so each party can run on its
//! own thread, or a single driver can alternate between them. Every
//! message that crosses the channel is appended to a shared [`Transcript`]
//! and copied to a passive [`EveTap`] before delivery.
//!
//! # Wire format (schema v1)
//!
//! [`encode`] produces a canonical little-endian byte string. The first
//! byte is the variant tag; integers are fixed width; lists carry a `u32`
//! element count; ranges are two `u64`s (`start`, `end`).
//!
//! | tag | variant | payload |
//! |---|---|---|
//! | 0 | `Init` | `frame_length u64`, schedule, break, `permutation u8`, `aggregation u8`, `parity_reuse u8`, `seed u64` |
//! | 1 | `InitAck` | `accepted u8` |
//! | 2 | `BlockParities` | `round u32`, `count u32`, `ceil(count / 8)` bytes of packed bits, LSB first |
//! | 3 | `ParityQuery` | `round u32`, `count u32`, `count` ranges |
//! | 4 | `ParityAnswer` | `round u32`, `count u32`, `count` × (range, `bit u8`) |
//! | 5 | `RoundDone` | `round u32`, `corrected u64` |
//! | 6 | `Finalize` | `fingerprint u64` |
//! | 7 | `Result` | `status u8` (0 success, 1 failure) |
//!
//! A schedule is `0 u8, k u32, qber_estimate f64` (static) or
//! `1 u8, initial_qber_estimate f64` (dynamic). A break condition is a kind
//! byte (0 probabilistic, 1 threshold, 2 static) followed by its `u32`
//! parameter. Permutation kinds are 0 shuffle, 1 LCG; switches are 0 off,
//! 1 on. Unused padding bits must be zero and trailing bytes are rejected,
//! so every message has exactly one encoding.
//!
//! # Transcript files
//!
//! A transcript file starts with the magic bytes `CSTR` and a `u16`
//! version (1). Each record is `direction u8` (0 initiator to responder,
//! 1 the reverse), `seq u64`, `len u32`, then `len` bytes of [`encode`]
//! output.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitframe::PermutationKind;
use crate::engine::{Aggregation, ParityReuse, SessionConfig};
use crate::schedule::{BlockScheduleConfig, BreakCondition};

pub const TRANSCRIPT_MAGIC: &[u8; 4] = b"CSTR";
pub const SCHEMA_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    AliceToBob,
    BobToAlice,
}

impl Direction {
    fn index(self) -> usize {
        match self {
            Direction::AliceToBob => 0,
            Direction::BobToAlice => 1,
        }
    }

    pub fn reverse(self) -> Self {
        match self {
            Direction::AliceToBob => Direction::BobToAlice,
            Direction::BobToAlice => Direction::AliceToBob,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResultStatus {
    Success,
    Failure,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Init(SessionConfig),
    InitAck { accepted: bool },
    BlockParities { round: u32, parities: Vec<u8> },
    ParityQuery { round: u32, intervals: Vec<Range<usize>> },
    ParityAnswer { round: u32, entries: Vec<(Range<usize>, u8)> },
    RoundDone { round: u32, corrected: u64 },
    Finalize { fingerprint: u64 },
    Result { status: ResultStatus },
}

impl Message {
    /// Parity bits this message reveals.
    pub fn parity_bits(&self) -> u64 {
        match self {
            Message::BlockParities { parities, .. } => parities.len() as u64,
            Message::ParityAnswer { entries, .. } => entries.len() as u64,
            _ => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Init(_) => "Init",
            Message::InitAck { .. } => "InitAck",
            Message::BlockParities { .. } => "BlockParities",
            Message::ParityQuery { .. } => "ParityQuery",
            Message::ParityAnswer { .. } => "ParityAnswer",
            Message::RoundDone { .. } => "RoundDone",
            Message::Finalize { .. } => "Finalize",
            Message::Result { .. } => "Result",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated input while reading {field}")]
    Truncated { field: &'static str },
    #[error("invalid value for {field}: {detail}")]
    Invalid { field: &'static str, detail: String },
    #[error("{count} trailing bytes after message")]
    TrailingBytes { count: usize },
}

impl DecodeError {
    pub fn field(&self) -> Option<&'static str> {
        match self {
            DecodeError::Truncated { field } | DecodeError::Invalid { field, .. } => Some(field),
            DecodeError::TrailingBytes { .. } => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("channel closed")]
    Closed,
}

#[derive(Debug, Error)]
pub enum TranscriptFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a transcript file")]
    BadMagic,
    #[error("unsupported transcript version {0}")]
    UnsupportedVersion(u16),
    #[error("record {index}: {source}")]
    Record { index: usize, source: DecodeError },
}

// ---- encoding ----

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("list longer than u32::MAX"));
    }
    fn range(&mut self, r: &Range<usize>) {
        self.u64(r.start as u64);
        self.u64(r.end as u64);
    }
}

pub fn encode(message: &Message) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    match message {
        Message::Init(c) => {
            w.u8(0);
            w.u64(c.frame_length as u64);
            match c.schedule {
                BlockScheduleConfig::Static { k, qber_estimate } => {
                    w.u8(0);
                    w.u32(k);
                    w.f64(qber_estimate);
                }
                BlockScheduleConfig::Dynamic {
                    initial_qber_estimate,
                } => {
                    w.u8(1);
                    w.f64(initial_qber_estimate);
                }
            }
            let (kind, param) = match c.break_condition {
                BreakCondition::Probabilistic { quiet_rounds } => (0, quiet_rounds),
                BreakCondition::Threshold { min_corrected } => (1, min_corrected),
                BreakCondition::Static { total_rounds } => (2, total_rounds),
            };
            w.u8(kind);
            w.u32(param);
            w.u8(match c.permutation_kind {
                PermutationKind::Shuffle => 0,
                PermutationKind::Lcg => 1,
            });
            w.u8(u8::from(c.aggregation == Aggregation::On));
            w.u8(u8::from(c.parity_reuse == ParityReuse::On));
            w.u64(c.seed);
        }
        Message::InitAck { accepted } => {
            w.u8(1);
            w.u8(u8::from(*accepted));
        }
        Message::BlockParities { round, parities } => {
            w.u8(2);
            w.u32(*round);
            w.len(parities.len());
            for chunk in parities.chunks(8) {
                let byte = chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | ((b & 1) << i));
                w.u8(byte);
            }
        }
        Message::ParityQuery { round, intervals } => {
            w.u8(3);
            w.u32(*round);
            w.len(intervals.len());
            for r in intervals {
                w.range(r);
            }
        }
        Message::ParityAnswer { round, entries } => {
            w.u8(4);
            w.u32(*round);
            w.len(entries.len());
            for (r, bit) in entries {
                w.range(r);
                w.u8(*bit & 1);
            }
        }
        Message::RoundDone { round, corrected } => {
            w.u8(5);
            w.u32(*round);
            w.u64(*corrected);
        }
        Message::Finalize { fingerprint } => {
            w.u8(6);
            w.u64(*fingerprint);
        }
        Message::Result { status } => {
            w.u8(7);
            w.u8(match status {
                ResultStatus::Success => 0,
                ResultStatus::Failure => 1,
            });
        }
    }
    w.0
}

// ---- decoding ----

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Truncated { field });
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self, field: &'static str) -> Result<u8, DecodeError> {
        Ok(self.take(1, field)?[0])
    }
    fn u32(&mut self, field: &'static str) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
    fn u64(&mut self, field: &'static str) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
    fn f64(&mut self, field: &'static str) -> Result<f64, DecodeError> {
        self.u64(field).map(f64::from_bits)
    }
    fn usize(&mut self, field: &'static str) -> Result<usize, DecodeError> {
        let v = self.u64(field)?;
        usize::try_from(v).map_err(|_| invalid(field, format!("{v} does not fit in usize")))
    }
    fn flag(&mut self, field: &'static str) -> Result<bool, DecodeError> {
        match self.u8(field)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(invalid(field, format!("expected 0 or 1, found {v}"))),
        }
    }
    /// Element count, checked against the bytes actually remaining.
    fn count(&mut self, field: &'static str, min_element_size: usize) -> Result<usize, DecodeError> {
        let n = self.u32(field)? as usize;
        if n.saturating_mul(min_element_size) > self.buf.len() {
            return Err(DecodeError::Truncated { field });
        }
        Ok(n)
    }
    fn range(&mut self, field: &'static str) -> Result<Range<usize>, DecodeError> {
        let start = self.usize(field)?;
        let end = self.usize(field)?;
        if start > end {
            return Err(invalid(field, format!("start {start} > end {end}")));
        }
        Ok(start..end)
    }
}

fn invalid(field: &'static str, detail: impl Into<String>) -> DecodeError {
    DecodeError::Invalid {
        field,
        detail: detail.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let mut r = Reader { buf: bytes };
    let message = match r.u8("tag")? {
        0 => {
            let frame_length = r.usize("frame_length")?;
            let schedule = match r.u8("schedule.kind")? {
                0 => BlockScheduleConfig::Static {
                    k: r.u32("schedule.k")?,
                    qber_estimate: r.f64("schedule.qber_estimate")?,
                },
                1 => BlockScheduleConfig::Dynamic {
                    initial_qber_estimate: r.f64("schedule.qber_estimate")?,
                },
                v => return Err(invalid("schedule.kind", format!("unknown kind {v}"))),
            };
            let kind = r.u8("break.kind")?;
            let param = r.u32("break.param")?;
            let break_condition = match kind {
                0 => BreakCondition::Probabilistic { quiet_rounds: param },
                1 => BreakCondition::Threshold {
                    min_corrected: param,
                },
                2 => BreakCondition::Static {
                    total_rounds: param,
                },
                v => return Err(invalid("break.kind", format!("unknown kind {v}"))),
            };
            let permutation_kind = match r.u8("permutation_kind")? {
                0 => PermutationKind::Shuffle,
                1 => PermutationKind::Lcg,
                v => return Err(invalid("permutation_kind", format!("unknown kind {v}"))),
            };
            let aggregation = if r.flag("aggregation")? {
                Aggregation::On
            } else {
                Aggregation::Off
            };
            let parity_reuse = if r.flag("parity_reuse")? {
                ParityReuse::On
            } else {
                ParityReuse::Off
            };
            Message::Init(SessionConfig {
                frame_length,
                permutation_kind,
                schedule,
                break_condition,
                aggregation,
                parity_reuse,
                seed: r.u64("seed")?,
            })
        }
        1 => Message::InitAck {
            accepted: r.flag("accepted")?,
        },
        2 => {
            let round = r.u32("round")?;
            let n = r.u32("parities.count")? as usize;
            let packed = r.take(n.div_ceil(8), "parities")?;
            let parities: Vec<u8> = (0..n).map(|i| (packed[i / 8] >> (i % 8)) & 1).collect();
            if n % 8 != 0 && packed[n / 8] >> (n % 8) != 0 {
                return Err(invalid("parities", "nonzero padding bits"));
            }
            Message::BlockParities { round, parities }
        }
        3 => {
            let round = r.u32("round")?;
            let n = r.count("intervals.count", 16)?;
            let intervals = (0..n)
                .map(|_| r.range("intervals"))
                .collect::<Result<_, _>>()?;
            Message::ParityQuery { round, intervals }
        }
        4 => {
            let round = r.u32("round")?;
            let n = r.count("entries.count", 17)?;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let range = r.range("entries.range")?;
                let bit = r.u8("entries.bit")?;
                if bit > 1 {
                    return Err(invalid("entries.bit", format!("expected 0 or 1, found {bit}")));
                }
                entries.push((range, bit));
            }
            Message::ParityAnswer { round, entries }
        }
        5 => Message::RoundDone {
            round: r.u32("round")?,
            corrected: r.u64("corrected")?,
        },
        6 => Message::Finalize {
            fingerprint: r.u64("fingerprint")?,
        },
        7 => Message::Result {
            status: match r.u8("status")? {
                0 => ResultStatus::Success,
                1 => ResultStatus::Failure,
                v => return Err(invalid("status", format!("unknown status {v}"))),
            },
        },
        v => return Err(invalid("tag", format!("unknown tag {v}"))),
    };
    if !r.buf.is_empty() {
        return Err(DecodeError::TrailingBytes { count: r.buf.len() });
    }
    Ok(message)
}

// ---- transcript ----

#[derive(Clone, Debug, PartialEq)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub seq: u64,
    pub message: Message,
}

/// Messages in the order they were sent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub parity_bits_disclosed: u64,
    pub messages_alice_to_bob: u64,
    pub messages_bob_to_alice: u64,
    /// Parity bits disclosed while each round was in progress.
    pub per_round: BTreeMap<u32, u64>,
}

impl LeakageReport {
    pub fn messages_sent(&self) -> u64 {
        self.messages_alice_to_bob + self.messages_bob_to_alice
    }
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn messages(&self, direction: Direction) -> impl Iterator<Item = &Message> {
        self.entries
            .iter()
            .filter(move |e| e.direction == direction)
            .map(|e| &e.message)
    }

    pub fn leakage(&self) -> LeakageReport {
        leakage(self)
    }

    /// Writes the transcript file format.
    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(TRANSCRIPT_MAGIC)?;
        out.write_all(&SCHEMA_VERSION.to_le_bytes())?;
        for e in &self.entries {
            let bytes = encode(&e.message);
            out.write_all(&[e.direction.index() as u8])?;
            out.write_all(&e.seq.to_le_bytes())?;
            out.write_all(&(bytes.len() as u32).to_le_bytes())?;
            out.write_all(&bytes)?;
        }
        out.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, TranscriptFileError> {
        let mut data = Vec::new();
        input.read_to_end(&mut data)?;
        Self::from_bytes(&data)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, TranscriptFileError> {
        if data.len() < 6 || &data[..4] != TRANSCRIPT_MAGIC {
            return Err(TranscriptFileError::BadMagic);
        }
        let version = u16::from_le_bytes([data[4], data[5]]);
        if version != SCHEMA_VERSION {
            return Err(TranscriptFileError::UnsupportedVersion(version));
        }
        let mut r = Reader { buf: &data[6..] };
        let mut entries = Vec::new();
        while !r.buf.is_empty() {
            let index = entries.len();
            let wrap = |source| TranscriptFileError::Record { index, source };
            let direction = match r.u8("record.direction").map_err(wrap)? {
                0 => Direction::AliceToBob,
                1 => Direction::BobToAlice,
                v => return Err(wrap(invalid("record.direction", format!("unknown direction {v}")))),
            };
            let seq = r.u64("record.seq").map_err(wrap)?;
            let len = r.u32("record.len").map_err(wrap)? as usize;
            let body = r.take(len, "record.body").map_err(wrap)?;
            let message = decode(body).map_err(wrap)?;
            entries.push(TranscriptEntry {
                direction,
                seq,
                message,
            });
        }
        Ok(Transcript { entries })
    }
}

/// Counts parity bits and messages. Init, InitAck, ParityQuery, RoundDone,
/// Finalize and Result reveal no parity bits.
pub fn leakage(transcript: &Transcript) -> LeakageReport {
    let mut report = LeakageReport::default();
    let mut round = 0;
    for e in &transcript.entries {
        match e.direction {
            Direction::AliceToBob => report.messages_alice_to_bob += 1,
            Direction::BobToAlice => report.messages_bob_to_alice += 1,
        }
        if let Message::BlockParities { round: r, .. } = e.message {
            round = r;
        }
        let bits = e.message.parity_bits();
        report.parity_bits_disclosed += bits;
        if bits > 0 {
            *report.per_round.entry(round).or_default() += bits;
        }
    }
    report
}

// ---- live channel ----

/// A passive eavesdropper holding a copy of everything sent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EveTap {
    observed: Vec<(Direction, Message)>,
}

impl EveTap {
    pub fn observed(&self) -> &[(Direction, Message)] {
        &self.observed
    }

    pub fn parity_bits(&self) -> u64 {
        self.observed.iter().map(|(_, m)| m.parity_bits()).sum()
    }
}

#[derive(Default)]
struct Log {
    transcript: Transcript,
    next_seq: [u64; 2],
    tap: EveTap,
}

struct Shared {
    log: Mutex<Log>,
    closed: AtomicBool,
}

impl Shared {
    fn log(&self) -> MutexGuard<'_, Log> {
        self.log.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

/// One party's end of the channel.
pub struct Endpoint {
    outgoing: Direction,
    tx: Sender<Message>,
    rx: Receiver<Message>,
    shared: Arc<Shared>,
}

/// Read access to the transcript and tap, plus the ability to close.
#[derive(Clone)]
pub struct ChannelMonitor {
    shared: Arc<Shared>,
}

/// A connected pair: `(initiator, responder, monitor)`.
pub fn channel() -> (Endpoint, Endpoint, ChannelMonitor) {
    let shared = Arc::new(Shared {
        log: Mutex::new(Log::default()),
        closed: AtomicBool::new(false),
    });
    let (to_bob, from_alice) = mpsc::channel();
    let (to_alice, from_bob) = mpsc::channel();
    let alice = Endpoint {
        outgoing: Direction::AliceToBob,
        tx: to_bob,
        rx: from_bob,
        shared: Arc::clone(&shared),
    };
    let bob = Endpoint {
        outgoing: Direction::BobToAlice,
        tx: to_alice,
        rx: from_alice,
        shared: Arc::clone(&shared),
    };
    (alice, bob, ChannelMonitor { shared })
}

impl Endpoint {
    pub fn direction(&self) -> Direction {
        self.outgoing
    }

    pub fn send(&self, message: Message) -> Result<(), ChannelError> {
        if self.shared.closed.load(Ordering::SeqCst) {
            return Err(ChannelError::Closed);
        }
        // Holding the log across delivery keeps transcript order equal to
        // delivery order.
        let mut log = self.shared.log();
        self.tx.send(message.clone()).map_err(|_| ChannelError::Closed)?;
        let d = self.outgoing.index();
        let seq = log.next_seq[d];
        log.next_seq[d] += 1;
        log.tap.observed.push((self.outgoing, message.clone()));
        log.transcript.entries.push(TranscriptEntry {
            direction: self.outgoing,
            seq,
            message,
        });
        Ok(())
    }

    /// Blocks until a message arrives or the peer endpoint is dropped.
    pub fn recv(&self) -> Result<Message, ChannelError> {
        if self.shared.closed.load(Ordering::SeqCst) {
            return Err(ChannelError::Closed);
        }
        self.rx.recv().map_err(|_| ChannelError::Closed)
    }

    pub fn try_recv(&self) -> Result<Option<Message>, ChannelError> {
        if self.shared.closed.load(Ordering::SeqCst) {
            return Err(ChannelError::Closed);
        }
        match self.rx.try_recv() {
            Ok(m) => Ok(Some(m)),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(ChannelError::Closed),
        }
    }

    /// Closes the channel for both parties.
    pub fn close(&self) {
        self.shared.closed.store(true, Ordering::SeqCst);
    }
}

impl ChannelMonitor {
    pub fn transcript(&self) -> Transcript {
        self.shared.log().transcript.clone()
    }

    pub fn tap(&self) -> EveTap {
        self.shared.log().tap.clone()
    }

    pub fn close(&self) {
        self.shared.closed.store(true, Ordering::SeqCst);
    }

    pub fn is_closed(&self) -> bool {
        self.shared.closed.load(Ordering::SeqCst)
    }
}
