use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::alloc::{marginal_benefit, rebalance, AllocatorConfig, BenefitInputs, UnitAllocation};
use crate::cache::{AccessOutcome, CacheManageUnit};
use crate::error::Result;
use crate::namespace::{BlockId, FileId, NamespaceCatalog};
use crate::policy::{
    check_stream_expiry, fit_ttl, plan_prefetch_random, plan_prefetch_sequential, select_policies,
    EvictionPolicy, PolicyConfig, TtlModel,
};
use crate::recognize::{classify, PatternLabel, RecognizerConfig};
use crate::trace::{validate_trace, AccessEvent};
use crate::tree::{resolve_levels, AccessStreamTree, DebugNode, Level, NodeId, Transition};

use super::config::{AllocationMode, PolicyMode, PrefetchSetting, SimConfig};
use super::latency::LatencyModel;
use super::report::{
    AggregateReport, AllocationEntry, ChrSample, Counter, Expiration, JobReport, PatternChange,
    SimReport, StreamReport, TransferReport, UnitAllocationReport,
};

/// Index of the partition that holds unclassified data. In adaptive mode its
/// quota is the free pool; in baseline modes it is the whole cache.
const SHARED: usize = 0;

struct Unit {
    cache: CacheManageUnit,
    prefix: String,
    active: bool,
    absorbed: bool,
    ttl: Option<TtlModel>,
    last_access_ms: f64,
    created_ms: f64,
    transitions: Vec<PatternChange>,
    expired_at_ms: Option<f64>,
    dataset_blocks: u64,
    dataset_bytes: u64,
}

struct BlockRef {
    id: BlockId,
    bytes: u64,
    levels: Vec<Level>,
    components: Vec<String>,
}

struct Job {
    id: String,
    events: Vec<usize>,
    next: usize,
    issue_ms: f64,
    report: JobReport,
}

/// Replays a trace against the cache under a closed-loop virtual clock:
/// each job issues its next request when the previous one completes plus
/// the gap between their trace timestamps.
pub fn run(
    events: &[AccessEvent],
    catalog: &NamespaceCatalog,
    config: &SimConfig,
) -> Result<SimReport> {
    run_with_tree(events, catalog, config).map(|(r, _)| r)
}

/// Like [`run`], also returning the final access-stream tree.
pub fn run_with_tree(
    events: &[AccessEvent],
    catalog: &NamespaceCatalog,
    config: &SimConfig,
) -> Result<(SimReport, DebugNode)> {
    config.validate()?;
    validate_trace(events, catalog)?;
    let mut blocks = Vec::with_capacity(events.len());
    for ev in events {
        let item = ev.path.without_block();
        let mut refs = Vec::new();
        for id in ev.blocks(catalog)? {
            let path = item.with_block(id.block);
            refs.push(BlockRef {
                id,
                bytes: catalog.block_bytes(id),
                levels: resolve_levels(&path, catalog)?,
                components: item.components().to_vec(),
            });
        }
        blocks.push(refs);
    }
    let mut sim = Simulator::new(catalog, config.clone())?;
    let mut jobs: Vec<Job> = Vec::new();
    let mut job_index: HashMap<&str, usize> = HashMap::new();
    for (i, ev) in events.iter().enumerate() {
        let j = *job_index.entry(ev.job_id.as_str()).or_insert_with(|| {
            jobs.push(Job {
                id: ev.job_id.clone(),
                events: Vec::new(),
                next: 0,
                issue_ms: ev.timestamp_ms as f64,
                report: JobReport {
                    start_ms: ev.timestamp_ms as f64,
                    ..JobReport::default()
                },
            });
            jobs.len() - 1
        });
        jobs[j].events.push(i);
    }

    while let Some(j) = (0..jobs.len())
        .filter(|&j| jobs[j].next < jobs[j].events.len())
        .min_by(|&a, &b| {
            jobs[a]
                .issue_ms
                .total_cmp(&jobs[b].issue_ms)
                .then(a.cmp(&b))
        })
    {
        let now = jobs[j].issue_ms;
        sim.advance_to(now);
        let ev_idx = jobs[j].events[jobs[j].next];
        let mut t = now;
        for b in &blocks[ev_idx] {
            let hit;
            (t, hit) = sim.serve(b, t, &jobs[j].id);
            let r = &mut jobs[j].report;
            r.accesses += 1;
            if hit {
                r.hits += 1;
            } else {
                r.misses += 1;
            }
        }
        let job = &mut jobs[j];
        job.report.events += 1;
        job.report.completion_ms = t;
        job.next += 1;
        if let Some(&n) = job.events.get(job.next) {
            job.issue_ms = t + (events[n].timestamp_ms - events[ev_idx].timestamp_ms) as f64;
        }
    }

    let tree = sim.tree.dump();
    let mut report = sim.finish();
    for job in jobs {
        let mut r = job.report;
        r.jct_ms = r.completion_ms - r.start_ms;
        report.aggregate.events += r.events;
        report.per_job.insert(job.id, r);
    }
    report.finish();
    Ok((report, tree))
}

struct Simulator<'a> {
    catalog: &'a NamespaceCatalog,
    cfg: SimConfig,
    rec: RecognizerConfig,
    pol: PolicyConfig,
    alloc: AllocatorConfig,
    lat: LatencyModel,
    tree: AccessStreamTree,
    units: Vec<Unit>,
    unit_by_prefix: HashMap<String, usize>,
    location: HashMap<BlockId, usize>,
    inflight: HashMap<BlockId, f64>,
    /// Prefetched blocks not yet requested, with their size.
    unused: HashMap<BlockId, u64>,
    background: VecDeque<(usize, BlockId)>,
    stride: HashMap<FileId, (u64, u32)>,
    clock: f64,
    link_free_ms: f64,
    background_next_ms: f64,
    next_tick_ms: u64,
    period: Counter,
    period_jobs: BTreeMap<String, Counter>,
    period_start_ms: u64,
    patterns: BTreeMap<String, Vec<PatternChange>>,
    report: SimReport,
}

impl<'a> Simulator<'a> {
    fn new(catalog: &'a NamespaceCatalog, cfg: SimConfig) -> Result<Self> {
        let shared_policy = match cfg.policy {
            PolicyMode::Adaptive | PolicyMode::Lru => EvictionPolicy::Lru,
            PolicyMode::Fifo => EvictionPolicy::Fifo,
            PolicyMode::Uniform => EvictionPolicy::Uniform,
        };
        let shared = Unit {
            cache: CacheManageUnit::new("/", cfg.cache_bytes, shared_policy, cfg.buffer_window),
            prefix: "/".into(),
            active: true,
            absorbed: false,
            ttl: None,
            last_access_ms: 0.0,
            created_ms: 0.0,
            transitions: Vec::new(),
            expired_at_ms: None,
            dataset_blocks: catalog.blocks_under("/").len() as u64,
            dataset_bytes: catalog.bytes_under("/"),
        };
        Ok(Self {
            catalog,
            rec: cfg.recognizer(),
            pol: cfg.policy_config(),
            alloc: cfg.allocator(),
            lat: cfg.latency(),
            tree: AccessStreamTree::new(cfg.tree())?,
            units: vec![shared],
            unit_by_prefix: HashMap::new(),
            location: HashMap::new(),
            inflight: HashMap::new(),
            unused: HashMap::new(),
            background: VecDeque::new(),
            stride: HashMap::new(),
            clock: 0.0,
            link_free_ms: 0.0,
            background_next_ms: 0.0,
            next_tick_ms: cfg.period_ms,
            period: Counter::default(),
            period_jobs: BTreeMap::new(),
            period_start_ms: 0,
            patterns: BTreeMap::new(),
            report: SimReport {
                aggregate: AggregateReport::default(),
                per_job: BTreeMap::new(),
                per_stream: BTreeMap::new(),
                allocation_timeline: Vec::new(),
                chr_timeline: Vec::new(),
                expirations: Vec::new(),
                patterns: BTreeMap::new(),
                config: cfg.clone(),
            },
            cfg,
        })
    }

    /// Capacity held back for unpartitioned data; never more than half the
    /// cache so that small caches still leave room for partitions.
    fn reserve(&self) -> u64 {
        self.cfg
            .unclassified_share_bytes
            .min(self.cfg.cache_bytes / 2)
    }

    fn adaptive(&self) -> bool {
        self.cfg.policy == PolicyMode::Adaptive
    }

    /// Runs allocator ticks and background transfers up to `now`.
    fn advance_to(&mut self, now: f64) {
        while (self.next_tick_ms as f64) <= now {
            let at = self.next_tick_ms;
            self.pump_background(at as f64);
            self.clock = self.clock.max(at as f64);
            self.tick(at);
            self.next_tick_ms += self.cfg.period_ms;
        }
        self.pump_background(now);
        self.clock = self.clock.max(now);
        self.check_expiry(now);
    }

    fn owner_of(&self, components: &[String]) -> usize {
        if self.unit_by_prefix.is_empty() {
            return SHARED;
        }
        let mut prefix = String::new();
        for c in components {
            prefix.push('/');
            prefix.push_str(c);
            if let Some(&u) = self.unit_by_prefix.get(&prefix) {
                return u;
            }
        }
        SHARED
    }

    fn owner_of_block(&self, b: BlockId) -> usize {
        if self.unit_by_prefix.is_empty() {
            return SHARED;
        }
        let path = self.catalog.file_path(b.file);
        let comps: Vec<String> = path
            .split('/')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        self.owner_of(&comps)
    }

    fn on_evicted(&mut self, victims: &[BlockId]) {
        for v in victims {
            self.location.remove(v);
            self.inflight.remove(v);
            if let Some(bytes) = self.unused.remove(v) {
                self.report.aggregate.unused_prefetch_bytes += bytes;
            }
        }
    }

    fn set_quota(&mut self, u: usize, quota: u64) {
        let evicted = self.units[u].cache.set_quota(quota);
        self.on_evicted(&evicted);
    }

    /// Serves one block request starting at `now`; returns the completion
    /// time and whether it was a hit.
    fn serve(&mut self, b: &BlockRef, now: f64, job: &str) -> (f64, bool) {
        let ts = now as u64;
        let touches = self.tree.observe(&b.levels, ts);
        for t in &touches {
            if t.transition == Transition::BecameNonTrivial {
                self.on_non_trivial(t.node, now);
            }
        }

        let owner = self.owner_of(&b.components);
        if !self.units[owner].active {
            self.reactivate(owner, now);
        }
        self.units[owner].last_access_ms = now;

        let mut unit = owner;
        if let Some(&loc) = self.location.get(&b.id) {
            if loc != owner {
                if self.units[owner].cache.can_admit(b.bytes) {
                    self.units[loc].cache.take(b.id);
                    let evicted = self.units[owner]
                        .cache
                        .admit(b.id, b.bytes)
                        .expect("checked");
                    self.on_evicted(&evicted);
                    self.location.insert(b.id, owner);
                } else {
                    unit = loc;
                }
            }
        }
        let res = self.units[unit].cache.access(b.id, b.bytes, ts);
        let hit = res.outcome == AccessOutcome::Hit;
        let completion = if hit {
            self.unused.remove(&b.id);
            let ready = self.inflight.remove(&b.id).unwrap_or(now);
            ready.max(now) + self.lat.hit_latency_ms
        } else {
            self.report.aggregate.demand_bytes += b.bytes;
            let start = now.max(self.link_free_ms);
            let transfer = self.lat.transfer_ms(b.bytes);
            self.link_free_ms = start + transfer;
            if res.admitted {
                self.location.insert(b.id, unit);
            }
            start + transfer + self.lat.remote_delay_ms + self.lat.hit_latency_ms
        };
        self.on_evicted(&res.evicted);

        let agg = &mut self.report.aggregate;
        agg.accesses += 1;
        if hit {
            agg.hits += 1;
        } else {
            agg.misses += 1;
        }
        self.period.accesses += 1;
        self.period.hits += hit as u64;
        let pj = self.period_jobs.entry(job.to_string()).or_default();
        pj.accesses += 1;
        pj.hits += hit as u64;

        match self.cfg.prefetch {
            PrefetchSetting::None => {}
            PrefetchSetting::Stride => self.stride_prefetch(b, now),
            PrefetchSetting::Adaptive => {
                for t in &touches {
                    if !t.new_visit {
                        continue;
                    }
                    let Some(child) = t.child_index else { continue };
                    let node = self.tree.node(t.node).expect("touched node is live");
                    if node.is_non_trivial() && node.pattern() == Some(PatternLabel::Sequential) {
                        self.sequential_prefetch(t.node, child, now);
                    }
                }
            }
        }
        (completion, hit)
    }

    fn stride_prefetch(&mut self, b: &BlockRef, now: f64) {
        let k = b.id.block;
        let run = match self.stride.get(&b.id.file) {
            Some(&(last, run)) if last + 1 == k => run + 1,
            Some(&(last, run)) if last == k => run,
            _ => 1,
        };
        self.stride.insert(b.id.file, (k, run));
        if run < 2 {
            return;
        }
        let count = self
            .catalog
            .block_count(self.catalog.file_path(b.id.file))
            .unwrap_or(0);
        let last = (k + self.cfg.stride_depth as u64).min(count.saturating_sub(1));
        for block in k + 1..=last {
            self.issue_prefetch(
                BlockId {
                    file: b.id.file,
                    block,
                },
                now,
            );
        }
    }

    fn sequential_prefetch(&mut self, node: NodeId, child: u64, now: f64) {
        let prefix = self.tree.prefix(node);
        let n = self.tree.node(node).expect("live");
        let location = &self.location;
        let inflight = &self.inflight;
        let catalog = self.catalog;
        let plan =
            plan_prefetch_sequential(&prefix, child, n.child_freq(), catalog, &self.pol, |p| {
                catalog
                    .resolve_block(p)
                    .map(|b| location.contains_key(&b) || inflight.contains_key(&b))
                    .unwrap_or(true)
            });
        for t in plan.targets {
            if let Ok(b) = self.catalog.resolve_block(&t) {
                self.issue_prefetch(b, now);
            }
        }
    }

    /// Starts a demand-driven prefetch on the shared link.
    fn issue_prefetch(&mut self, b: BlockId, now: f64) {
        if self.location.contains_key(&b) {
            return;
        }
        let u = self.owner_of_block(b);
        if !self.units[u].active {
            return;
        }
        let bytes = self.catalog.block_bytes(b);
        let Some(evicted) = self.units[u].cache.admit(b, bytes) else {
            return;
        };
        self.on_evicted(&evicted);
        self.location.insert(b, u);
        let start = now.max(self.link_free_ms);
        let transfer = self.lat.transfer_ms(bytes);
        self.link_free_ms = start + transfer;
        self.inflight
            .insert(b, start + transfer + self.lat.remote_delay_ms);
        self.unused.insert(b, bytes);
        self.report.aggregate.prefetch_bytes += bytes;
    }

    /// Issues queued statistical prefetches whose paced start time has come.
    fn pump_background(&mut self, until: f64) {
        while let Some(&(u, b)) = self.background.front() {
            let start = self
                .link_free_ms
                .max(self.background_next_ms)
                .max(self.clock);
            if start > until {
                break;
            }
            self.background.pop_front();
            let unit = &self.units[u];
            if self.location.contains_key(&b)
                || !unit.active
                || unit.cache.pattern() != Some(PatternLabel::Random)
                || self.owner_of_block(b) != u
            {
                continue;
            }
            let bytes = self.catalog.block_bytes(b);
            let Some(evicted) = self.units[u].cache.admit(b, bytes) else {
                self.background.retain(|&(x, _)| x != u);
                continue;
            };
            self.on_evicted(&evicted);
            self.location.insert(b, u);
            let transfer = self.lat.transfer_ms(bytes);
            self.link_free_ms = start + transfer;
            self.background_next_ms = start + transfer / self.pol.prefetch_rate_cap;
            self.inflight
                .insert(b, start + transfer + self.lat.remote_delay_ms);
            self.unused.insert(b, bytes);
            self.report.aggregate.prefetch_bytes += bytes;
        }
    }

    fn plan_statistical(&mut self, u: usize) {
        self.background.retain(|&(x, _)| x != u);
        if !self.adaptive() || self.cfg.prefetch != PrefetchSetting::Adaptive {
            return;
        }
        let unit = &self.units[u];
        if !unit.active || unit.cache.pattern() != Some(PatternLabel::Random) {
            return;
        }
        let location = &self.location;
        let catalog = self.catalog;
        let plan = plan_prefetch_random(
            &unit.prefix,
            unit.cache.quota_bytes(),
            unit.cache.used_bytes(),
            catalog,
            &self.pol,
            |p| {
                catalog
                    .resolve_block(p)
                    .map(|b| location.contains_key(&b))
                    .unwrap_or(true)
            },
        );
        for t in plan.targets {
            if let Ok(b) = catalog.resolve_block(&t) {
                self.background.push_back((u, b));
            }
        }
    }

    fn record_pattern(&mut self, prefix: &str, label: PatternLabel, now: f64) {
        let changes = self.patterns.entry(prefix.to_string()).or_default();
        if changes.last().map(|c| c.pattern) != Some(label) {
            changes.push(PatternChange {
                at_ms: now,
                pattern: label,
            });
        }
    }

    fn classify_node(&mut self, node: NodeId) -> Option<PatternLabel> {
        let prefix = self.tree.prefix(node);
        let c = self.catalog.item_count(&prefix)?;
        let indices = self.tree.snapshot(node).indices();
        let label = classify(&indices, c, &self.rec).ok()?.label;
        self.tree.set_pattern(node, label);
        Some(label)
    }

    fn fitted_ttl(&self, node: Option<NodeId>) -> Option<TtlModel> {
        if let Some(ms) = self.cfg.fixed_ttl_ms {
            return Some(TtlModel::fixed(ms));
        }
        let gaps = self.tree.snapshot(node?).temporal_gaps_ms();
        fit_ttl(&gaps, &self.pol).ok()
    }

    fn on_non_trivial(&mut self, node: NodeId, now: f64) {
        let Some(label) = self.classify_node(node) else {
            return;
        };
        let prefix = self.tree.prefix(node);
        self.record_pattern(&prefix, label, now);
        if !self.adaptive() || prefix == "/" {
            return;
        }
        if let Some(&u) = self.unit_by_prefix.get(&prefix) {
            self.apply_label(u, label, Some(node), now);
            return;
        }
        let comps: Vec<String> = prefix
            .split('/')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if self.owner_of(&comps[..comps.len() - 1]) != SHARED {
            // already inside a partition
            return;
        }
        self.create_unit(&prefix, label, node, now);
    }

    fn apply_label(&mut self, u: usize, label: PatternLabel, node: Option<NodeId>, now: f64) {
        let changed = self.units[u].cache.pattern() != Some(label);
        if changed {
            self.units[u].cache.set_pattern(Some(label));
            self.units[u].cache.set_policy(select_policies(label).1);
            self.units[u].transitions.push(PatternChange {
                at_ms: now,
                pattern: label,
            });
        }
        self.units[u].ttl = if label == PatternLabel::Random {
            self.fitted_ttl(node).or(self.units[u].ttl)
        } else {
            None
        };
        if changed {
            self.plan_statistical(u);
        }
    }

    fn create_unit(&mut self, prefix: &str, label: PatternLabel, node: NodeId, now: f64) {
        let idx = self.units.len();
        let policy = select_policies(label).1;
        let blocks = self.catalog.blocks_under(prefix);
        self.units.push(Unit {
            cache: CacheManageUnit::new(prefix, 0, policy, self.cfg.buffer_window),
            prefix: prefix.to_string(),
            active: true,
            absorbed: false,
            ttl: None,
            last_access_ms: now,
            created_ms: now,
            transitions: Vec::new(),
            expired_at_ms: None,
            dataset_blocks: blocks.len() as u64,
            dataset_bytes: blocks.iter().map(|&b| self.catalog.block_bytes(b)).sum(),
        });
        let below = format!("{prefix}/");
        let mut absorbed: Vec<usize> = self
            .unit_by_prefix
            .iter()
            .filter(|(p, _)| p.starts_with(&below))
            .map(|(_, &u)| u)
            .collect();
        absorbed.sort_unstable();
        for u in absorbed {
            self.unit_by_prefix.remove(&self.units[u].prefix);
            self.background.retain(|&(x, _)| x != u);
            for b in self.units[u].cache.resident_blocks() {
                self.location.insert(b, idx);
            }
            let placeholder =
                CacheManageUnit::new(&self.units[u].prefix, 0, EvictionPolicy::Lru, 0);
            let old = std::mem::replace(&mut self.units[u].cache, placeholder);
            self.units[u].absorbed = true;
            self.units[u].active = false;
            self.units[idx].cache.absorb(old);
        }
        self.unit_by_prefix.insert(prefix.to_string(), idx);
        self.units[idx].cache.set_pattern(Some(label));
        self.units[idx].transitions.push(PatternChange {
            at_ms: now,
            pattern: label,
        });
        if label == PatternLabel::Random {
            self.units[idx].ttl = self.fitted_ttl(Some(node));
        }
        let target = match self.cfg.expected_streams {
            Some(k) => self.cfg.cache_bytes / k as u64,
            None => {
                let active = self.units.iter().skip(1).filter(|u| u.active).count() as u64;
                self.cfg.cache_bytes / active.max(1)
            }
        };
        if self.cfg.allocation == AllocationMode::Static {
            self.split_evenly();
        } else {
            self.grant_share(idx, target);
        }
        // quota may have shrunk below what absorbed residents occupy
        let q = self.units[idx].cache.quota_bytes();
        self.set_quota(idx, q);
        self.plan_statistical(idx);
    }

    /// Raises `u` towards `target`, first from the free pool, then from the
    /// largest partitions down to `max(min_share, target)`.
    fn grant_share(&mut self, u: usize, target: u64) {
        let mut need = target.saturating_sub(self.units[u].cache.quota_bytes());
        let free = self.units[SHARED].cache.quota_bytes();
        let from_free = need.min(free.saturating_sub(self.reserve()));
        if from_free > 0 {
            self.set_quota(SHARED, free - from_free);
            let q = self.units[u].cache.quota_bytes();
            self.set_quota(u, q + from_free);
            need -= from_free;
        }
        if need == 0 {
            return;
        }
        let floor = self.alloc.min_share_bytes.max(target);
        let mut donors: Vec<usize> = (1..self.units.len())
            .filter(|&d| {
                d != u && self.units[d].active && self.units[d].cache.quota_bytes() > floor
            })
            .collect();
        donors.sort_by(|&a, &b| {
            let (qa, qb) = (
                self.units[a].cache.quota_bytes(),
                self.units[b].cache.quota_bytes(),
            );
            qb.cmp(&qa)
                .then_with(|| self.units[a].prefix.cmp(&self.units[b].prefix))
        });
        for d in donors {
            if need == 0 {
                break;
            }
            let qd = self.units[d].cache.quota_bytes();
            let give = need.min(qd - floor);
            self.set_quota(d, qd - give);
            let q = self.units[u].cache.quota_bytes();
            self.set_quota(u, q + give);
            need -= give;
            self.plan_statistical(d);
        }
    }

    fn reactivate(&mut self, u: usize, now: f64) {
        self.units[u].active = true;
        self.units[u].last_access_ms = now;
        if self.cfg.allocation == AllocationMode::Static {
            self.split_evenly();
        } else {
            self.grant_share(u, self.alloc.min_share_bytes);
        }
        self.plan_statistical(u);
    }

    /// Static allocation: every active partition holds the same share of
    /// the capacity outside the reserve.
    fn split_evenly(&mut self) {
        let active: Vec<usize> = (1..self.units.len())
            .filter(|&u| self.units[u].active)
            .collect();
        if active.is_empty() {
            return;
        }
        let share = (self.cfg.cache_bytes - self.reserve()) / active.len() as u64;
        // shrink first so the free pool never goes negative
        for &u in &active {
            let q = self.units[u].cache.quota_bytes();
            if q > share {
                self.set_quota(u, share);
                let free = self.units[SHARED].cache.quota_bytes();
                self.set_quota(SHARED, free + (q - share));
                self.plan_statistical(u);
            }
        }
        for &u in &active {
            let q = self.units[u].cache.quota_bytes();
            if q < share {
                let free = self.units[SHARED].cache.quota_bytes();
                let give = (share - q).min(free);
                self.set_quota(SHARED, free - give);
                self.set_quota(u, q + give);
                self.plan_statistical(u);
            }
        }
    }

    fn check_expiry(&mut self, now: f64) {
        for u in 1..self.units.len() {
            let unit = &self.units[u];
            if !unit.active || unit.cache.pattern() != Some(PatternLabel::Random) {
                continue;
            }
            let Some(ttl) = unit.ttl else { continue };
            if !check_stream_expiry(unit.last_access_ms as u64, now as u64, &ttl) {
                continue;
            }
            self.background.retain(|&(x, _)| x != u);
            let (evicted, released) = self.units[u].cache.expire_stream();
            self.on_evicted(&evicted);
            let free = self.units[SHARED].cache.quota_bytes();
            self.set_quota(SHARED, free + released);
            self.units[u].active = false;
            self.units[u].expired_at_ms = Some(now);
            if self.cfg.allocation == AllocationMode::Static {
                self.split_evenly();
            }
            let unit = &self.units[u];
            self.report.expirations.push(Expiration {
                stream: unit.prefix.clone(),
                at_ms: now,
                last_access_ms: unit.last_access_ms,
                ttl_ms: ttl.ttl_ms(),
                evicted_blocks: evicted.len(),
                released_bytes: released,
            });
        }
    }

    fn tick(&mut self, at: u64) {
        let mut snapshot = Vec::new();
        let mut estimates = BTreeMap::new();
        for u in 1..self.units.len() {
            if !self.units[u].active {
                continue;
            }
            // refresh pattern and policies from the current window
            if let Some(node) = self.tree.find(&self.units[u].prefix) {
                if self.tree.node(node).is_some_and(|n| n.is_non_trivial()) {
                    if let Some(label) = self.classify_node(node) {
                        let prefix = self.units[u].prefix.clone();
                        self.record_pattern(&prefix, label, at as f64);
                        self.apply_label(u, label, Some(node), at as f64);
                    }
                }
            }
            let unit = &mut self.units[u];
            let period = unit.cache.take_period();
            let inputs = match unit.cache.pattern() {
                Some(PatternLabel::Random) => BenefitInputs::Random {
                    mean_gap_s: period.mean_gap_ms().map(|g| g / 1000.0),
                    block_count: unit.dataset_blocks,
                },
                Some(PatternLabel::Skewed) => {
                    let warmed = unit.created_ms + self.cfg.period_ms as f64 <= at as f64;
                    let secs = self.cfg.period_ms as f64 / 1000.0;
                    BenefitInputs::Skewed {
                        arrival_rate: warmed.then(|| period.requests as f64 / secs),
                        ghost_hit_freq: if period.requests > 0 {
                            period.ghost_hits as f64 / period.requests as f64
                        } else {
                            0.0
                        },
                        window: self.cfg.buffer_window,
                    }
                }
                _ => BenefitInputs::Sequential,
            };
            let mut est = marginal_benefit(&unit.prefix, inputs);
            if unit.cache.pattern() == Some(PatternLabel::Random)
                && unit.cache.quota_bytes() >= unit.dataset_bytes
            {
                // the whole dataset already fits
                est.benefit = 0.0;
            }
            snapshot.push(UnitAllocation {
                id: unit.prefix.clone(),
                quota_bytes: unit.cache.quota_bytes(),
                benefit: est.benefit,
            });
            estimates.insert(unit.prefix.clone(), (est, u));
        }
        self.units[SHARED].cache.take_period();

        let mut transfers = Vec::new();
        if self.adaptive() && self.cfg.allocation == AllocationMode::Adaptive {
            let free = self.units[SHARED]
                .cache
                .quota_bytes()
                .saturating_sub(self.reserve());
            let round = rebalance(&snapshot, free, &self.alloc, at);
            for t in round.transfers {
                let to = estimates[&t.to].1;
                match &t.from {
                    None => {
                        let q = self.units[SHARED].cache.quota_bytes();
                        self.set_quota(SHARED, q - t.bytes);
                    }
                    Some(from) => {
                        let d = estimates[from].1;
                        let q = self.units[d].cache.quota_bytes();
                        let evicted = self.units[d]
                            .cache
                            .resize_quota(q - t.bytes, self.alloc.min_share_bytes)
                            .expect("rebalance respects the minimum share");
                        self.on_evicted(&evicted);
                        self.plan_statistical(d);
                    }
                }
                let q = self.units[to].cache.quota_bytes();
                self.set_quota(to, q + t.bytes);
                self.plan_statistical(to);
                transfers.push(TransferReport {
                    from: t.from,
                    to: t.to,
                    bytes: t.bytes,
                });
            }
        }

        let units = estimates
            .into_iter()
            .map(|(id, (est, u))| {
                let entry = UnitAllocationReport {
                    quota: self.units[u].cache.quota_bytes(),
                    benefit: est.benefit,
                    warming: est.warming,
                    pattern: self.units[u].cache.pattern(),
                };
                (id, entry)
            })
            .collect();
        self.report.allocation_timeline.push(AllocationEntry {
            at_ms: at,
            free_bytes: self.units[SHARED].cache.quota_bytes(),
            units,
            transfers,
        });
        self.flush_period(at);
    }

    fn flush_period(&mut self, end_ms: u64) {
        let p = std::mem::take(&mut self.period);
        self.report.chr_timeline.push(ChrSample {
            start_ms: self.period_start_ms,
            end_ms,
            hits: p.hits,
            accesses: p.accesses,
            chr: p.chr(),
            jobs: std::mem::take(&mut self.period_jobs),
        });
        self.period_start_ms = end_ms;
    }

    fn finish(mut self) -> SimReport {
        if self.period.accesses > 0 {
            let end = self.clock.ceil() as u64;
            self.flush_period(end.max(self.period_start_ms));
        }
        self.report.aggregate.unused_prefetch_bytes += self.unused.values().sum::<u64>();
        for unit in &self.units {
            if unit.absorbed {
                continue;
            }
            let mut s = StreamReport {
                pattern: unit.cache.pattern(),
                policy: unit.cache.policy(),
                transitions: unit.transitions.clone(),
                hits: 0,
                misses: 0,
                ghost_hits: 0,
                evictions: 0,
                bypasses: 0,
                used: unit.cache.used_bytes(),
                quota: unit.cache.quota_bytes(),
                ttl_ms: unit.ttl.map(|t| t.ttl_ms()),
                expired_at_ms: unit.expired_at_ms,
            };
            s.fill_stats(unit.cache.stats());
            self.report.per_stream.insert(unit.prefix.clone(), s);
        }
        self.report.patterns = self.patterns;
        self.report
    }
}
