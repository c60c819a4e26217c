use std::collections::VecDeque;

use super::ProtocolError;
use crate::codec::EncodedBlob;
use crate::{DenseVector, Round};

/// A deployed anchor. The server keeps the uncompressed weights next to the
/// blob so it can evaluate the estimation-error ratio; clients only ever see
/// the blob and its decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorEntry {
    pub stamp: Round,
    pub blob: EncodedBlob,
    /// Decoding of `blob`, cached.
    pub decoded: DenseVector,
    /// Weights the anchor was compressed from.
    pub exact: DenseVector,
}

/// Bounded FIFO of anchors; enqueueing at capacity evicts the oldest.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorQueue {
    capacity: usize,
    entries: VecDeque<AnchorEntry>,
}

impl AnchorQueue {
    pub fn new(capacity: usize) -> Result<Self, ProtocolError> {
        if capacity == 0 {
            return Err(ProtocolError::InvalidConfig(
                "queue capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Appends an entry, returning the evicted one if the queue was full.
    pub fn enqueue(&mut self, entry: AnchorEntry) -> Result<Option<AnchorEntry>, ProtocolError> {
        if let Some(last) = self.entries.back() {
            if entry.stamp <= last.stamp {
                return Err(ProtocolError::StampOrder {
                    newest: last.stamp,
                    offered: entry.stamp,
                });
            }
        }
        let evicted = if self.is_full() {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(entry);
        Ok(evicted)
    }

    /// Newest entry.
    pub fn top(&self) -> Option<&AnchorEntry> {
        self.entries.back()
    }

    pub fn oldest(&self) -> Option<&AnchorEntry> {
        self.entries.front()
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &AnchorEntry> {
        self.entries.iter()
    }

    pub fn get(&self, index: usize) -> Option<&AnchorEntry> {
        self.entries.get(index)
    }

    pub fn stamps(&self) -> Vec<Round> {
        self.entries.iter().map(|e| e.stamp).collect()
    }

    pub fn contains(&self, stamp: Round) -> bool {
        self.entries.iter().any(|e| e.stamp == stamp)
    }
}
