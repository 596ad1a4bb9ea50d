//! Colored binary parity trees over one block of a round.
//!
//! A tree covers one block interval of a round's permuted frame. Every
//! internal node splits its interval at [`split_point`], the same split
//! BINARY uses, so each sub-interval BINARY can ever query is a node on the
//! tree's lattice. Nodes are created lazily, the first time something is
//! recorded at or below them.
//!
//! Nodes carry a set of colors that only ever grows:
//!
//! | color | meaning |
//! |---|---|
//! | [`Colors::SYNDROME_KNOWN`] | the initiator's parity of the interval is known |
//! | [`Colors::ERROR_LEAF`] | a unit leaf where an error was corrected |
//! | [`Colors::COMPROMISED`] | a unit leaf whose value the transcript reveals |
//!
//! A node with no color is neutral. The search target highlighted by
//! [`ColoredTree::find_unvisited_sibling`] and
//! [`ColoredTree::multi_error_frontier`] is a return value, not a stored
//! color.
//!
//! Trees are persistent values. Every update returns a new tree that shares
//! untouched subtrees with the old one.
//!
//! # Dump format
//!
//! [`ColoredTree::dump`] writes one line per materialized node in pre-order
//! (left before right), indented by two spaces per depth level:
//!
//! ```text
//! [lo,hi) RBY s=V r=R
//! ```
//!
//! `RBY` holds `R` (syndrome known), `B` (error leaf) and `Y` (compromised),
//! each replaced by `-` when absent. `V` and `R` are the stored syndrome bit
//! and round stamp, or `-` when no syndrome is stored.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::ops::Range;
use std::sync::Arc;

use bitflags::bitflags;
use thiserror::Error;

bitflags! {
    #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
    pub struct Colors: u8 {
        const SYNDROME_KNOWN = 0b001;
        const ERROR_LEAF = 0b010;
        const COMPROMISED = 0b100;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("empty interval {0:?}")]
    EmptyInterval(Range<usize>),
    #[error("interval {interval:?} is not a node of the tree over {root:?}")]
    OffLattice {
        interval: Range<usize>,
        root: Range<usize>,
    },
    #[error("position {position} outside tree interval {root:?}")]
    OutOfRange { position: usize, root: Range<usize> },
    #[error("cannot merge trees over {left:?} and {right:?}")]
    IntervalMismatch {
        left: Range<usize>,
        right: Range<usize>,
    },
    #[error("conflicting syndromes for {interval:?} in round {round}")]
    SyndromeConflict { interval: Range<usize>, round: u32 },
}

/// Midpoint `ceil((lo + hi) / 2)`: odd intervals put the larger half left.
pub fn split_point(interval: &Range<usize>) -> usize {
    (interval.start + interval.end).div_ceil(2)
}

/// Both halves of `interval`, split at [`split_point`].
pub fn halves(interval: &Range<usize>) -> (Range<usize>, Range<usize>) {
    let mid = split_point(interval);
    (interval.start..mid, mid..interval.end)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Syndrome {
    pub value: u8,
    pub round: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParityNode {
    interval: Range<usize>,
    colors: Colors,
    syndrome: Option<Syndrome>,
    children: Option<Arc<[ParityNode; 2]>>,
}

impl ParityNode {
    fn neutral(interval: Range<usize>) -> Self {
        Self {
            interval,
            colors: Colors::empty(),
            syndrome: None,
            children: None,
        }
    }

    pub fn interval(&self) -> Range<usize> {
        self.interval.clone()
    }

    pub fn colors(&self) -> Colors {
        self.colors
    }

    pub fn syndrome(&self) -> Option<Syndrome> {
        self.syndrome
    }

    pub fn children(&self) -> Option<&[ParityNode; 2]> {
        self.children.as_deref()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    fn is_unit(&self) -> bool {
        self.interval.len() == 1
    }

    fn child_index(&self, position: usize) -> usize {
        usize::from(position >= split_point(&self.interval))
    }

    /// Children, materialized as neutral nodes if absent. Unit nodes never split.
    fn expanded(&self) -> [ParityNode; 2] {
        match &self.children {
            Some(children) => (**children).clone(),
            None => {
                let (left, right) = halves(&self.interval);
                [ParityNode::neutral(left), ParityNode::neutral(right)]
            }
        }
    }

    fn record_syndrome(&mut self, value: u8, round: u32) -> Result<(), TreeError> {
        match self.syndrome {
            Some(old) if old.round == round && old.value != value => {
                return Err(TreeError::SyndromeConflict {
                    interval: self.interval.clone(),
                    round,
                })
            }
            Some(old) if old.round >= round => {}
            _ => self.syndrome = Some(Syndrome { value, round }),
        }
        self.colors |= Colors::SYNDROME_KNOWN;
        Ok(())
    }

    /// Rebuilds the path to the node equal to `target`, applying `update` there.
    fn update_at(
        &self,
        target: &Range<usize>,
        update: &mut dyn FnMut(&mut ParityNode) -> Result<(), TreeError>,
    ) -> Result<ParityNode, OffLatticeMarker> {
        let mut node = self.clone();
        if node.interval == *target {
            update(&mut node).map_err(OffLatticeMarker::Inner)?;
            return Ok(node);
        }
        if node.is_unit() {
            return Err(OffLatticeMarker::Off);
        }
        let mut children = node.expanded();
        let slot = children
            .iter()
            .position(|c| c.interval.start <= target.start && target.end <= c.interval.end)
            .ok_or(OffLatticeMarker::Off)?;
        children[slot] = children[slot].update_at(target, update)?;
        node.children = Some(Arc::new(children));
        Ok(node)
    }

    fn merge(&self, other: &ParityNode) -> Result<ParityNode, TreeError> {
        debug_assert_eq!(self.interval, other.interval);
        let mut node = self.clone();
        node.colors |= other.colors;
        node.syndrome = match (self.syndrome, other.syndrome) {
            (Some(a), Some(b)) if a.round == b.round && a.value != b.value => {
                return Err(TreeError::SyndromeConflict {
                    interval: self.interval.clone(),
                    round: a.round,
                })
            }
            (Some(a), Some(b)) => Some(if b.round > a.round { b } else { a }),
            (a, b) => a.or(b),
        };
        node.children = match (&self.children, &other.children) {
            (Some(a), Some(b)) if Arc::ptr_eq(a, b) => Some(a.clone()),
            (Some(a), Some(b)) => Some(Arc::new([a[0].merge(&b[0])?, a[1].merge(&b[1])?])),
            (a, b) => a.clone().or_else(|| b.clone()),
        };
        Ok(node)
    }

    fn visit<'a>(&'a self, depth: usize, f: &mut dyn FnMut(&'a ParityNode, usize)) {
        f(self, depth);
        if let Some(children) = self.children() {
            for child in children {
                child.visit(depth + 1, f);
            }
        }
    }

    /// For each position (sorted, inside this node), the unknown sibling of
    /// the first known node met while climbing from its deepest node up to
    /// (but excluding) this node.
    fn frontier_below(&self, positions: &[usize]) -> Vec<Option<Range<usize>>> {
        let Some(children) = self.children() else {
            return vec![None; positions.len()];
        };
        let mid = split_point(&self.interval);
        let cut = positions.partition_point(|&p| p < mid);
        let (left, right) = positions.split_at(cut);
        let mut out = Vec::with_capacity(positions.len());
        for (index, subset) in [(0usize, left), (1, right)] {
            if subset.is_empty() {
                continue;
            }
            let (child, sibling) = (&children[index], &children[1 - index]);
            let here = (child.syndrome.is_some() && sibling.syndrome.is_none()).then(|| sibling.interval());
            out.extend(
                child
                    .frontier_below(subset)
                    .into_iter()
                    .map(|found| found.or_else(|| here.clone())),
            );
        }
        out
    }
}

enum OffLatticeMarker {
    Off,
    Inner(TreeError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColoredTree {
    root: ParityNode,
    round: u32,
}

pub fn build_tree(interval: Range<usize>, round: u32) -> Result<ColoredTree, TreeError> {
    ColoredTree::new(interval, round)
}

pub fn merge_trees(a: &ColoredTree, b: &ColoredTree) -> Result<ColoredTree, TreeError> {
    a.merge(b)
}

impl ColoredTree {
    /// A single neutral, unexpanded root over `interval`.
    pub fn new(interval: Range<usize>, round: u32) -> Result<Self, TreeError> {
        if interval.is_empty() {
            return Err(TreeError::EmptyInterval(interval));
        }
        Ok(Self {
            root: ParityNode::neutral(interval),
            round,
        })
    }

    pub fn root(&self) -> &ParityNode {
        &self.root
    }

    pub fn interval(&self) -> Range<usize> {
        self.root.interval()
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    fn check_position(&self, position: usize) -> Result<(), TreeError> {
        if self.root.interval.contains(&position) {
            Ok(())
        } else {
            Err(TreeError::OutOfRange {
                position,
                root: self.interval(),
            })
        }
    }

    fn updated(
        &self,
        target: &Range<usize>,
        mut update: impl FnMut(&mut ParityNode) -> Result<(), TreeError>,
    ) -> Result<Self, TreeError> {
        match self.root.update_at(target, &mut update) {
            Ok(root) => Ok(Self {
                root,
                round: self.round,
            }),
            Err(OffLatticeMarker::Inner(e)) => Err(e),
            Err(OffLatticeMarker::Off) => Err(TreeError::OffLattice {
                interval: target.clone(),
                root: self.interval(),
            }),
        }
    }

    /// Records the initiator's parity of `interval` as known in `round`.
    /// The stored stamp is the newest round; equal stamps must agree.
    pub fn set_syndrome(&self, interval: Range<usize>, value: u8, round: u32) -> Result<Self, TreeError> {
        if interval.is_empty() {
            return Err(TreeError::EmptyInterval(interval));
        }
        self.updated(&interval, |node| node.record_syndrome(value & 1, round))
    }

    pub fn mark_error_leaf(&self, position: usize) -> Result<Self, TreeError> {
        self.check_position(position)?;
        self.updated(&(position..position + 1), |node| {
            node.colors |= Colors::ERROR_LEAF;
            Ok(())
        })
    }

    pub fn mark_compromised(&self, position: usize) -> Result<Self, TreeError> {
        self.check_position(position)?;
        self.updated(&(position..position + 1), |node| {
            node.colors |= Colors::COMPROMISED;
            Ok(())
        })
    }

    /// Node-wise union of structure and colors.
    pub fn merge(&self, other: &ColoredTree) -> Result<Self, TreeError> {
        if self.root.interval != other.root.interval {
            return Err(TreeError::IntervalMismatch {
                left: self.interval(),
                right: other.interval(),
            });
        }
        Ok(Self {
            root: self.root.merge(&other.root)?,
            round: self.round.min(other.round),
        })
    }

    /// The materialized node equal to `interval`, if any.
    pub fn node(&self, interval: &Range<usize>) -> Option<&ParityNode> {
        let mut node = &self.root;
        loop {
            if node.interval == *interval {
                return Some(node);
            }
            let children = node.children()?;
            node = children
                .iter()
                .find(|c| c.interval.start <= interval.start && interval.end <= c.interval.end)?;
        }
    }

    pub fn syndrome(&self, interval: &Range<usize>) -> Option<Syndrome> {
        self.node(interval).and_then(|n| n.syndrome)
    }

    /// Materialized nodes from the root down to the deepest one holding `position`.
    pub fn path(&self, position: usize) -> Result<Vec<&ParityNode>, TreeError> {
        self.check_position(position)?;
        let mut path = vec![&self.root];
        let mut node = &self.root;
        while let Some(children) = node.children() {
            node = &children[node.child_index(position)];
            path.push(node);
        }
        Ok(path)
    }

    /// Climbing from the deepest node holding `position` toward the root,
    /// stops at the first node with a known syndrome whose sibling's
    /// syndrome is unknown, and returns that sibling.
    pub fn find_unvisited_sibling(&self, position: usize) -> Result<Option<Range<usize>>, TreeError> {
        let path = self.path(position)?;
        for depth in (1..path.len()).rev() {
            let parent = path[depth - 1];
            let children = parent.children().expect("path parent has children");
            let sibling = &children[1 - parent.child_index(position)];
            if path[depth].syndrome.is_some() && sibling.syndrome.is_none() {
                return Ok(Some(sibling.interval()));
            }
        }
        Ok(None)
    }

    /// Search targets for several corrected positions in one traversal.
    ///
    /// Each position contributes the interval [`find_unvisited_sibling`]
    /// would return for it. Targets nested inside another target are
    /// dropped, so the result is pairwise disjoint and sorted.
    ///
    /// [`find_unvisited_sibling`]: ColoredTree::find_unvisited_sibling
    pub fn multi_error_frontier(&self, positions: &BTreeSet<usize>) -> Result<Vec<Range<usize>>, TreeError> {
        if let Some(&p) = positions.iter().find(|&&p| !self.root.interval.contains(&p)) {
            return Err(TreeError::OutOfRange {
                position: p,
                root: self.interval(),
            });
        }
        let sorted: Vec<usize> = positions.iter().copied().collect();
        let mut found: Vec<Range<usize>> = self.root.frontier_below(&sorted).into_iter().flatten().collect();
        // Outermost first, so nested targets follow their container.
        found.sort_by_key(|r| (r.start, std::cmp::Reverse(r.end)));
        found.dedup();
        let mut frontier: Vec<Range<usize>> = Vec::with_capacity(found.len());
        for interval in found {
            match frontier.last() {
                Some(last) if interval.end <= last.end => {}
                _ => frontier.push(interval),
            }
        }
        Ok(frontier)
    }

    /// Every unknown sibling of a known node on the materialized paths to
    /// `positions`. [`multi_error_frontier`] picks its targets from this set.
    ///
    /// [`multi_error_frontier`]: ColoredTree::multi_error_frontier
    pub fn frontier_candidates(&self, positions: &BTreeSet<usize>) -> Result<BTreeSet<(usize, usize)>, TreeError> {
        let mut out = BTreeSet::new();
        for &p in positions {
            let path = self.path(p)?;
            for pair in path.windows(2) {
                let (parent, node) = (pair[0], pair[1]);
                let children = parent.children().expect("path parent has children");
                let sibling = &children[1 - parent.child_index(p)];
                if node.syndrome.is_some() && sibling.syndrome.is_none() {
                    out.insert((sibling.interval.start, sibling.interval.end));
                }
            }
        }
        Ok(out)
    }

    /// Every materialized node with its depth, in pre-order.
    pub fn nodes(&self) -> Vec<(&ParityNode, usize)> {
        let mut out = Vec::new();
        self.root.visit(0, &mut |node, depth| out.push((node, depth)));
        out
    }

    /// Positions of unit leaves carrying `color`.
    pub fn leaves_with(&self, color: Colors) -> Vec<usize> {
        self.nodes()
            .into_iter()
            .filter(|(n, _)| n.is_unit() && n.colors.contains(color))
            .map(|(n, _)| n.interval.start)
            .collect()
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (node, depth) in self.nodes() {
            let flag = |c: Colors, ch: char| if node.colors.contains(c) { ch } else { '-' };
            let (value, round) = match node.syndrome {
                Some(s) => (s.value.to_string(), s.round.to_string()),
                None => ("-".to_string(), "-".to_string()),
            };
            let _ = writeln!(
                out,
                "{:indent$}[{},{}) {}{}{} s={} r={}",
                "",
                node.interval.start,
                node.interval.end,
                flag(Colors::SYNDROME_KNOWN, 'R'),
                flag(Colors::ERROR_LEAF, 'B'),
                flag(Colors::COMPROMISED, 'Y'),
                value,
                round,
                indent = depth * 2
            );
        }
        out
    }
}
