//! BINARY: the dichotomic search for one error inside a block whose parity
//! differs between the parties.
//!
//! The search is a plain value advanced by explicit inputs, so the engine
//! can park it while a parity query travels over the channel. Each step
//! compares the first (left) half of the current interval, split at
//! [`split_point`]. A mismatch keeps the left half; a match moves to the
//! right half, whose parity the responder infers from what it already
//! knows. Only left-half parities are ever requested.
//!
//! When the initiator's parity of the left half is already on record, the
//! caller passes it as [`RemoteParity::Stored`] and the step discloses
//! nothing.

use std::ops::Range;

use thiserror::Error;

use crate::paritytree::{halves, split_point};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("cannot search the empty interval {0:?}")]
    EmptyInterval(Range<usize>),
    #[error("block {0:?} has matching parity; BINARY needs an odd number of errors")]
    MatchingParity(Range<usize>),
    #[error("search already found position {0}")]
    AlreadyFound(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchStatus {
    Running,
    Found { position: usize },
}

/// Source of the initiator's parity for one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RemoteParity {
    /// Received over the channel; counts as disclosed.
    Disclosed(u8),
    /// Known from an earlier disclosure; costs nothing.
    Stored(u8),
}

impl RemoteParity {
    pub fn bit(self) -> u8 {
        match self {
            RemoteParity::Disclosed(b) | RemoteParity::Stored(b) => b & 1,
        }
    }
}

/// Request for the initiator's parity of `interval` under round `round`'s
/// permutation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParityQuery {
    pub interval: Range<usize>,
    pub round: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParityAnswer {
    pub interval: Range<usize>,
    pub parity: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinarySearchState {
    current: Range<usize>,
    disclosed: usize,
    status: SearchStatus,
}

impl BinarySearchState {
    /// A search over `interval`. The caller has already established that
    /// the interval holds an odd number of errors.
    pub fn start(interval: Range<usize>) -> Result<Self, SearchError> {
        if interval.is_empty() {
            return Err(SearchError::EmptyInterval(interval));
        }
        let status = if interval.len() == 1 {
            SearchStatus::Found {
                position: interval.start,
            }
        } else {
            SearchStatus::Running
        };
        Ok(Self {
            current: interval,
            disclosed: 0,
            status,
        })
    }

    /// Like [`start`](Self::start), but rejects a block whose parities agree.
    pub fn start_on_mismatch(interval: Range<usize>, local: u8, remote: u8) -> Result<Self, SearchError> {
        if local & 1 == remote & 1 {
            return Err(SearchError::MatchingParity(interval));
        }
        Self::start(interval)
    }

    pub fn current_interval(&self) -> Range<usize> {
        self.current.clone()
    }

    pub fn status(&self) -> SearchStatus {
        self.status
    }

    pub fn found(&self) -> Option<usize> {
        match self.status {
            SearchStatus::Found { position } => Some(position),
            SearchStatus::Running => None,
        }
    }

    /// Remote parity bits consumed by this search.
    pub fn disclosed_count(&self) -> usize {
        self.disclosed
    }

    /// The interval whose parity the next step needs, while running.
    pub fn pending_query(&self) -> Option<Range<usize>> {
        match self.status {
            SearchStatus::Running => Some(self.current.start..split_point(&self.current)),
            SearchStatus::Found { .. } => None,
        }
    }

    /// Advances by one bisection. `local` and `remote` are both parties'
    /// parities of the first half of the current interval.
    pub fn step(&self, local: u8, remote: RemoteParity) -> Result<Self, SearchError> {
        if let SearchStatus::Found { position } = self.status {
            return Err(SearchError::AlreadyFound(position));
        }
        let (left, right) = halves(&self.current);
        let next = if local & 1 != remote.bit() { left } else { right };
        let disclosed = self.disclosed + usize::from(matches!(remote, RemoteParity::Disclosed(_)));
        let status = if next.len() == 1 {
            SearchStatus::Found { position: next.start }
        } else {
            SearchStatus::Running
        };
        Ok(Self {
            current: next,
            disclosed,
            status,
        })
    }
}

/// Worst-case number of disclosures for a block of `n` bits: `ceil(log2 n)`.
pub fn max_disclosures(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}
