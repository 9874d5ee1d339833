//! Per-stream cache partitions with policy-specific eviction and a ghost
//! list of recent victims.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::namespace::BlockId;
use crate::policy::EvictionPolicy;
use crate::recognize::PatternLabel;

pub const DEFAULT_BUFFER_WINDOW: usize = 100;

/// Blocks kept in a sequence order with O(log n) reordering.
#[derive(Debug, Clone, Default)]
struct OrderedBlocks {
    next: u64,
    pos: HashMap<BlockId, (u64, u64)>,
    order: BTreeMap<u64, BlockId>,
}

impl OrderedBlocks {
    fn len(&self) -> usize {
        self.pos.len()
    }

    fn contains(&self, b: BlockId) -> bool {
        self.pos.contains_key(&b)
    }

    fn push_back(&mut self, b: BlockId, bytes: u64) {
        self.remove(b);
        let s = self.next;
        self.next += 1;
        self.pos.insert(b, (s, bytes));
        self.order.insert(s, b);
    }

    fn touch(&mut self, b: BlockId) {
        if let Some(&(_, bytes)) = self.pos.get(&b) {
            self.push_back(b, bytes);
        }
    }

    fn remove(&mut self, b: BlockId) -> Option<u64> {
        let (s, bytes) = self.pos.remove(&b)?;
        self.order.remove(&s);
        Some(bytes)
    }

    fn pop_front(&mut self) -> Option<(BlockId, u64)> {
        let (_, b) = self.order.pop_first()?;
        let (_, bytes) = self.pos.remove(&b).expect("indexes agree");
        Some((b, bytes))
    }

    fn iter(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.order.values().copied()
    }
}

/// Ghost list of recently evicted block ids, capped at `capacity` entries.
#[derive(Debug, Clone)]
pub struct BufferWindow {
    capacity: usize,
    entries: OrderedBlocks,
}

impl BufferWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: OrderedBlocks::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.len() == 0
    }

    pub fn contains(&self, b: BlockId) -> bool {
        self.entries.contains(b)
    }

    pub fn ids(&self) -> Vec<BlockId> {
        self.entries.iter().collect()
    }

    fn push(&mut self, b: BlockId) {
        if self.capacity == 0 {
            return;
        }
        self.entries.push_back(b, 0);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    fn remove(&mut self, b: BlockId) -> bool {
        self.entries.remove(b).is_some()
    }

    fn touch(&mut self, b: BlockId) {
        self.entries.touch(b);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessOutcome {
    Hit,
    Miss,
    GhostHitMiss,
}

impl AccessOutcome {
    pub fn is_hit(self) -> bool {
        self == AccessOutcome::Hit
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessResult {
    pub outcome: AccessOutcome,
    /// False when a miss was served remotely without being cached.
    pub admitted: bool,
    pub evicted: Vec<BlockId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct UnitStats {
    pub hits: u64,
    pub misses: u64,
    pub ghost_hits: u64,
    pub evictions: u64,
    pub bypasses: u64,
}

/// Counters over the current allocator period.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PeriodStats {
    pub requests: u64,
    pub hits: u64,
    pub ghost_hits: u64,
    pub first_ms: Option<u64>,
    pub last_ms: Option<u64>,
}

impl PeriodStats {
    /// Mean spacing between consecutive requests, in ms.
    pub fn mean_gap_ms(&self) -> Option<f64> {
        match (self.first_ms, self.last_ms) {
            (Some(a), Some(b)) if self.requests >= 2 => {
                Some((b - a) as f64 / (self.requests - 1) as f64)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitExport {
    pub hits: u64,
    pub misses: u64,
    pub ghost_hits: u64,
    pub used: u64,
    pub quota: u64,
    pub policy: EvictionPolicy,
    pub pattern: Option<PatternLabel>,
}

/// One cache partition. `used_bytes <= quota_bytes` holds after every
/// public operation.
#[derive(Debug, Clone)]
pub struct CacheManageUnit {
    stream_id: String,
    quota_bytes: u64,
    used_bytes: u64,
    policy: EvictionPolicy,
    pattern: Option<PatternLabel>,
    resident: OrderedBlocks,
    ghost: BufferWindow,
    stats: UnitStats,
    period: PeriodStats,
}

impl CacheManageUnit {
    pub fn new(
        stream_id: &str,
        quota_bytes: u64,
        policy: EvictionPolicy,
        ghost_capacity: usize,
    ) -> Self {
        Self {
            stream_id: stream_id.to_string(),
            quota_bytes,
            used_bytes: 0,
            policy,
            pattern: None,
            resident: OrderedBlocks::default(),
            ghost: BufferWindow::new(ghost_capacity),
            stats: UnitStats::default(),
            period: PeriodStats::default(),
        }
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    pub fn quota_bytes(&self) -> u64 {
        self.quota_bytes
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    pub fn free_bytes(&self) -> u64 {
        self.quota_bytes - self.used_bytes
    }

    pub fn policy(&self) -> EvictionPolicy {
        self.policy
    }

    pub fn set_policy(&mut self, policy: EvictionPolicy) {
        self.policy = policy;
    }

    pub fn pattern(&self) -> Option<PatternLabel> {
        self.pattern
    }

    pub fn set_pattern(&mut self, pattern: Option<PatternLabel>) {
        self.pattern = pattern;
    }

    pub fn stats(&self) -> &UnitStats {
        &self.stats
    }

    pub fn period(&self) -> &PeriodStats {
        &self.period
    }

    /// Returns the finished period's counters and starts a new one.
    pub fn take_period(&mut self) -> PeriodStats {
        std::mem::take(&mut self.period)
    }

    pub fn buffer_window(&self) -> &BufferWindow {
        &self.ghost
    }

    pub fn contains(&self, b: BlockId) -> bool {
        self.resident.contains(b)
    }

    pub fn resident_count(&self) -> usize {
        self.resident.len()
    }

    /// Resident blocks from first to last eviction candidate.
    pub fn resident_blocks(&self) -> Vec<BlockId> {
        self.resident.iter().collect()
    }

    pub fn export(&self) -> UnitExport {
        UnitExport {
            hits: self.stats.hits,
            misses: self.stats.misses,
            ghost_hits: self.stats.ghost_hits,
            used: self.used_bytes,
            quota: self.quota_bytes,
            policy: self.policy,
            pattern: self.pattern,
        }
    }

    fn evict_front(&mut self) -> Option<BlockId> {
        let (b, bytes) = self.resident.pop_front()?;
        self.used_bytes -= bytes;
        self.stats.evictions += 1;
        self.ghost.push(b);
        Some(b)
    }

    fn evict_block(&mut self, b: BlockId) -> bool {
        match self.resident.remove(b) {
            Some(bytes) => {
                self.used_bytes -= bytes;
                self.stats.evictions += 1;
                self.ghost.push(b);
                true
            }
            None => false,
        }
    }

    /// Serves one request for `b`. Hits and misses are counted here; a miss
    /// is admitted per the unit's policy.
    pub fn access(&mut self, b: BlockId, bytes: u64, now_ms: u64) -> AccessResult {
        self.period.requests += 1;
        self.period.first_ms.get_or_insert(now_ms);
        self.period.last_ms = Some(now_ms);
        if self.resident.contains(b) {
            self.stats.hits += 1;
            self.period.hits += 1;
            let mut evicted = Vec::new();
            match self.policy {
                EvictionPolicy::Lru => self.resident.touch(b),
                EvictionPolicy::Eager => {
                    self.evict_block(b);
                    evicted.push(b);
                }
                EvictionPolicy::Uniform | EvictionPolicy::Fifo => {}
            }
            return AccessResult {
                outcome: AccessOutcome::Hit,
                admitted: true,
                evicted,
            };
        }
        self.stats.misses += 1;
        let outcome = if self.ghost.contains(b) {
            self.stats.ghost_hits += 1;
            self.period.ghost_hits += 1;
            AccessOutcome::GhostHitMiss
        } else {
            AccessOutcome::Miss
        };
        let (admitted, mut evicted) = self.admit_inner(b, bytes);
        if outcome == AccessOutcome::GhostHitMiss
            && !admitted
            && self.policy != EvictionPolicy::Fifo
        {
            self.ghost.touch(b);
        }
        if admitted && self.policy == EvictionPolicy::Eager {
            // served, then dropped
            self.evict_block(b);
            evicted.push(b);
        }
        AccessResult {
            outcome,
            admitted: admitted && self.policy != EvictionPolicy::Eager,
            evicted,
        }
    }

    /// Whether `admit` would accept a block of this size.
    pub fn can_admit(&self, bytes: u64) -> bool {
        bytes <= self.quota_bytes
            && (self.policy != EvictionPolicy::Uniform
                || self.used_bytes + bytes <= self.quota_bytes)
    }

    /// Inserts a non-resident block (e.g. a prefetched one) without counting
    /// a request. Returns the victims, or `None` if the block was bypassed.
    pub fn admit(&mut self, b: BlockId, bytes: u64) -> Option<Vec<BlockId>> {
        match self.admit_inner(b, bytes) {
            (true, evicted) => Some(evicted),
            (false, _) => None,
        }
    }

    fn admit_inner(&mut self, b: BlockId, bytes: u64) -> (bool, Vec<BlockId>) {
        debug_assert!(!self.resident.contains(b));
        if bytes > self.quota_bytes {
            self.stats.bypasses += 1;
            return (false, Vec::new());
        }
        let mut evicted = Vec::new();
        if self.policy == EvictionPolicy::Uniform && self.used_bytes + bytes > self.quota_bytes {
            self.stats.bypasses += 1;
            return (false, evicted);
        }
        self.ghost.remove(b);
        if self.policy != EvictionPolicy::Uniform {
            while self.used_bytes + bytes > self.quota_bytes {
                evicted.push(self.evict_front().expect("used bytes imply residents"));
            }
        }
        self.resident.push_back(b, bytes);
        self.used_bytes += bytes;
        (true, evicted)
    }

    /// Drops a block without recording it as a victim; used when a block
    /// changes owner.
    pub fn take(&mut self, b: BlockId) -> Option<u64> {
        let bytes = self.resident.remove(b)?;
        self.used_bytes -= bytes;
        Some(bytes)
    }

    /// Sets a new quota, evicting by the unit's own order until compliant.
    pub fn resize_quota(
        &mut self,
        new_quota_bytes: u64,
        min_share_bytes: u64,
    ) -> Result<Vec<BlockId>> {
        if new_quota_bytes < min_share_bytes {
            return Err(Error::Domain(format!(
                "quota {new_quota_bytes} for {} is below the minimum share {min_share_bytes}",
                self.stream_id
            )));
        }
        Ok(self.set_quota(new_quota_bytes))
    }

    /// Like `resize_quota` without the minimum-share check.
    pub fn set_quota(&mut self, new_quota_bytes: u64) -> Vec<BlockId> {
        self.quota_bytes = new_quota_bytes;
        let mut evicted = Vec::new();
        while self.used_bytes > self.quota_bytes {
            evicted.push(self.evict_front().expect("used bytes imply residents"));
        }
        evicted
    }

    /// Evicts everything and releases the whole quota. Returns the victims
    /// and the released bytes.
    pub fn expire_stream(&mut self) -> (Vec<BlockId>, u64) {
        let mut evicted = Vec::with_capacity(self.resident.len());
        while let Some(b) = self.evict_front() {
            evicted.push(b);
        }
        let released = std::mem::take(&mut self.quota_bytes);
        (evicted, released)
    }

    /// Merges `other` into this unit: quota, residents (kept in their
    /// order, after this unit's) and statistics.
    pub fn absorb(&mut self, other: CacheManageUnit) {
        self.quota_bytes += other.quota_bytes;
        for b in other.resident.iter() {
            let bytes = other.resident.pos[&b].1;
            self.resident.push_back(b, bytes);
            self.used_bytes += bytes;
        }
        self.stats.hits += other.stats.hits;
        self.stats.misses += other.stats.misses;
        self.stats.ghost_hits += other.stats.ghost_hits;
        self.stats.evictions += other.stats.evictions;
        self.stats.bypasses += other.stats.bypasses;
    }
}
