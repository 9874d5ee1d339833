//! The access-stream tree.
//!
//! Every block access is routed from the root along its path. Each node is
//! an access stream: it records which child was accessed (by sequential
//! index) in a bounded observation window, and turns non-trivial once more
//! than `window_size` distinct children have been seen.
//!
//! Nodes live in an arena. Chains of single-child trivial nodes can be
//! merged into one node carrying several path segments; such a node is
//! split again as soon as the chain bifurcates. A global recency index keeps
//! the node count under `max_nodes`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::mem::size_of;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::namespace::{ItemPath, NamespaceCatalog};
use crate::recognize::PatternLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TreeConfig {
    pub window_size: usize,
    pub max_nodes: usize,
    pub compression_enabled: bool,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            window_size: 100,
            max_nodes: 10_000,
            compression_enabled: true,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 {
            return Err(Error::Config("window_size must be at least 2".into()));
        }
        if self.max_nodes < self.window_size {
            return Err(Error::Config(
                "max_nodes must be at least window_size".into(),
            ));
        }
        Ok(())
    }
}

/// One level of a resolved path: the segment name (`#k` for block `k`) and
/// its sequential index within the parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Level {
    pub name: String,
    pub index: u64,
}

/// Resolves every level of `path` against the catalog.
pub fn resolve_levels(path: &ItemPath, catalog: &NamespaceCatalog) -> Result<Vec<Level>> {
    let comps = path.components();
    let mut levels = Vec::with_capacity(comps.len() + 1);
    let mut dir = String::from("/");
    for c in comps {
        let index = catalog
            .child_position(&dir, c)
            .ok_or_else(|| Error::Lookup(path.item_str()))?;
        levels.push(Level {
            name: c.clone(),
            index: index as u64,
        });
        if dir.len() > 1 {
            dir.push('/');
        }
        dir.push_str(c);
    }
    if let Some(b) = path.block() {
        let blocks = catalog
            .block_count(&dir)
            .ok_or_else(|| Error::Lookup(dir.clone()))?;
        if b >= blocks.max(1) {
            return Err(Error::Lookup(path.to_string()));
        }
        levels.push(Level {
            name: format!("#{b}"),
            index: b,
        });
    }
    Ok(levels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(u32);

pub const ROOT: NodeId = NodeId(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamState {
    Trivial,
    NonTrivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    None,
    BecameNonTrivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WindowEntry {
    pub index: u64,
    pub ts_ms: u64,
}

/// Per-node counts of which relative descendants get accessed per child
/// visit, for hierarchical prefetching. `observations` is the number of
/// child visits; `counts[id]` is the number of visits that touched `id`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChildFrequencyTable {
    counts: BTreeMap<String, u64>,
    observations: u64,
}

impl ChildFrequencyTable {
    /// Entries kept before the coldest half is dropped.
    pub const MAX_ENTRIES: usize = 1024;

    pub fn observations(&self) -> u64 {
        self.observations
    }

    pub fn count(&self, id: &str) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn frequency(&self, id: &str) -> f64 {
        if self.observations == 0 {
            0.0
        } else {
            self.count(id) as f64 / self.observations as f64
        }
    }

    /// Relative identifiers whose frequency reaches `threshold`.
    pub fn hot(&self, threshold: f64) -> Vec<(&str, f64)> {
        if self.observations == 0 {
            return Vec::new();
        }
        self.counts
            .iter()
            .map(|(k, &x)| (k.as_str(), x as f64 / self.observations as f64))
            .filter(|&(_, f)| f >= threshold)
            .collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn begin_visit(&mut self) {
        self.observations += 1;
    }

    pub fn record(&mut self, id: &str) {
        *self.counts.entry(id.to_string()).or_insert(0) += 1;
        if self.counts.len() > Self::MAX_ENTRIES {
            let mut by_count: Vec<(String, u64)> =
                std::mem::take(&mut self.counts).into_iter().collect();
            by_count.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            by_count.truncate(Self::MAX_ENTRIES / 2);
            self.counts = by_count.into_iter().collect();
        }
    }

    #[cfg(test)]
    pub(crate) fn from_counts(observations: u64, counts: &[(&str, u64)]) -> Self {
        Self {
            counts: counts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            observations,
        }
    }
}

#[derive(Debug, Clone)]
struct Segment {
    name: String,
    index: u64,
}

#[derive(Debug, Clone, Default)]
struct Visit {
    child: Option<u64>,
    seen: HashSet<String>,
}

#[derive(Debug, Clone)]
pub struct AccessStreamNode {
    segments: Vec<Segment>,
    parent: Option<NodeId>,
    depth: u32,
    children: BTreeMap<String, NodeId>,
    window: VecDeque<WindowEntry>,
    distinct: HashSet<u64>,
    state: StreamState,
    pattern: Option<PatternLabel>,
    last_access_ms: u64,
    child_freq: ChildFrequencyTable,
    visit: Visit,
}

impl AccessStreamNode {
    fn new(segments: Vec<Segment>, parent: Option<NodeId>, depth: u32, ts: u64) -> Self {
        Self {
            segments,
            parent,
            depth,
            children: BTreeMap::new(),
            window: VecDeque::new(),
            distinct: HashSet::new(),
            state: StreamState::Trivial,
            pattern: None,
            last_access_ms: ts,
            child_freq: ChildFrequencyTable::default(),
            visit: Visit::default(),
        }
    }

    pub fn state(&self) -> StreamState {
        self.state
    }

    pub fn pattern(&self) -> Option<PatternLabel> {
        self.pattern
    }

    pub fn last_access_ms(&self) -> u64 {
        self.last_access_ms
    }

    pub fn child_count(&self) -> usize {
        self.children.len()
    }

    pub fn window(&self) -> &VecDeque<WindowEntry> {
        &self.window
    }

    pub fn window_indices(&self) -> Vec<u64> {
        self.window.iter().map(|e| e.index).collect()
    }

    pub fn child_freq(&self) -> &ChildFrequencyTable {
        &self.child_freq
    }

    /// Number of path levels this node stands for (more than one after
    /// layer compression).
    pub fn merged_levels(&self) -> usize {
        self.segments.len()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    /// Index of the most recent window entry.
    pub fn last_child_index(&self) -> Option<u64> {
        self.window.back().map(|e| e.index)
    }

    pub fn is_non_trivial(&self) -> bool {
        self.state == StreamState::NonTrivial
    }
}

/// What happened at one node during a single access.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Touch {
    pub node: NodeId,
    /// Sequential index of the child the access went through; `None` at the
    /// leaf.
    pub child_index: Option<u64>,
    /// The access started a new visit to a child (a window entry that is not
    /// a repeat).
    pub new_visit: bool,
    pub transition: Transition,
}

/// Immutable copy of a node's window, handed to pattern analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSnapshot {
    pub node: NodeId,
    pub prefix: String,
    pub entries: Vec<WindowEntry>,
}

impl WindowSnapshot {
    pub fn indices(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.index).collect()
    }

    /// Temporal gaps between consecutive entries, in milliseconds.
    pub fn temporal_gaps_ms(&self) -> Vec<f64> {
        self.entries
            .windows(2)
            .map(|w| w[1].ts_ms.saturating_sub(w[0].ts_ms) as f64)
            .collect()
    }
}

#[derive(Debug, Serialize)]
pub struct DebugNode {
    pub prefix: String,
    pub state: StreamState,
    pub pattern: Option<PatternLabel>,
    pub window_len: usize,
    pub children: Vec<DebugNode>,
}

type LruKey = (u64, Reverse<u32>, NodeId);

pub struct AccessStreamTree {
    config: TreeConfig,
    nodes: Vec<Option<AccessStreamNode>>,
    free: Vec<u32>,
    count: usize,
    recency: BTreeSet<LruKey>,
    accesses: u64,
}

impl AccessStreamTree {
    pub fn new(config: TreeConfig) -> Result<Self> {
        config.validate()?;
        let root = AccessStreamNode::new(Vec::new(), None, 0, 0);
        Ok(Self {
            config,
            nodes: vec![Some(root)],
            free: Vec::new(),
            count: 1,
            recency: BTreeSet::new(),
            accesses: 0,
        })
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn node_count(&self) -> usize {
        self.count
    }

    pub fn node(&self, id: NodeId) -> Option<&AccessStreamNode> {
        self.nodes.get(id.0 as usize).and_then(Option::as_ref)
    }

    fn get(&self, id: NodeId) -> &AccessStreamNode {
        self.nodes[id.0 as usize].as_ref().expect("live node")
    }

    fn get_mut(&mut self, id: NodeId) -> &mut AccessStreamNode {
        self.nodes[id.0 as usize].as_mut().expect("live node")
    }

    fn lru_key(&self, id: NodeId) -> LruKey {
        let n = self.get(id);
        (n.last_access_ms, Reverse(n.depth), id)
    }

    fn alloc(&mut self, node: AccessStreamNode) -> NodeId {
        self.count += 1;
        let id = if let Some(slot) = self.free.pop() {
            self.nodes[slot as usize] = Some(node);
            NodeId(slot)
        } else {
            self.nodes.push(Some(node));
            NodeId(self.nodes.len() as u32 - 1)
        };
        let key = self.lru_key(id);
        self.recency.insert(key);
        id
    }

    fn touch(&mut self, id: NodeId, ts: u64) {
        if id == ROOT {
            self.get_mut(id).last_access_ms = ts;
            return;
        }
        let old = self.lru_key(id);
        self.recency.remove(&old);
        let n = self.get_mut(id);
        n.last_access_ms = n.last_access_ms.max(ts);
        let key = self.lru_key(id);
        self.recency.insert(key);
    }

    /// Full path string of the stream a node represents.
    pub fn prefix(&self, id: NodeId) -> String {
        let mut parts: Vec<&str> = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            let n = self.get(c);
            for s in n.segments.iter().rev() {
                parts.push(&s.name);
            }
            cur = n.parent;
        }
        parts.reverse();
        let mut out = String::new();
        for p in parts {
            if !p.starts_with('#') {
                out.push('/');
            }
            out.push_str(p);
        }
        if out.is_empty() {
            out.push('/');
        }
        out
    }

    /// Locates the node whose bottom level is exactly `prefix`, if present.
    pub fn find(&self, prefix: &str) -> Option<NodeId> {
        let mut names: Vec<String> = Vec::new();
        let trimmed = prefix.trim_start_matches('/');
        if !trimmed.is_empty() {
            let (item, block) = match trimmed.rsplit_once('#') {
                Some((i, b)) => (i, Some(b)),
                None => (trimmed, None),
            };
            names.extend(item.split('/').map(str::to_string));
            if let Some(b) = block {
                names.push(format!("#{b}"));
            }
        }
        let mut cur = ROOT;
        let mut p = 0;
        while p < names.len() {
            let child = *self.get(cur).children.get(&names[p])?;
            let segs = &self.get(child).segments;
            if p + segs.len() > names.len() {
                return None;
            }
            for (j, s) in segs.iter().enumerate() {
                if s.name != names[p + j] {
                    return None;
                }
            }
            p += segs.len();
            cur = child;
        }
        Some(cur)
    }

    /// Routes one access into the tree, creating nodes as needed and
    /// updating windows, distinct-child counts and frequency tables.
    pub fn record_access(&mut self, levels: &[Level], ts: u64) -> Vec<Touch> {
        self.accesses += 1;
        let mut touches = Vec::with_capacity(levels.len() + 1);
        self.touch(ROOT, ts);
        let mut cur = ROOT;
        let mut p = 0;
        while p < levels.len() {
            let child = match self.get(cur).children.get(&levels[p].name).copied() {
                None => {
                    let depth = self.get(cur).depth + 1;
                    let seg = Segment {
                        name: levels[p].name.clone(),
                        index: levels[p].index,
                    };
                    let id = self.alloc(AccessStreamNode::new(vec![seg], Some(cur), depth, ts));
                    self.get_mut(cur)
                        .children
                        .insert(levels[p].name.clone(), id);
                    id
                }
                Some(c) => {
                    let segs = &self.get(c).segments;
                    let mut matched = 1;
                    while matched < segs.len()
                        && p + matched < levels.len()
                        && segs[matched].name == levels[p + matched].name
                    {
                        matched += 1;
                    }
                    if matched < segs.len() {
                        self.split(c, matched)
                    } else {
                        c
                    }
                }
            };
            let (new_visit, transition) = self.update_stream(cur, &levels[p..], ts);
            touches.push(Touch {
                node: cur,
                child_index: Some(levels[p].index),
                new_visit,
                transition,
            });
            p += self.get(child).segments.len();
            cur = child;
            self.touch(cur, ts);
        }
        touches.push(Touch {
            node: cur,
            child_index: None,
            new_visit: false,
            transition: Transition::None,
        });
        touches
    }

    /// Applies one access to the stream at `id`; `rest[0]` is the child the
    /// access goes through and `rest[1..]` lies below it.
    fn update_stream(&mut self, id: NodeId, rest: &[Level], ts: u64) -> (bool, Transition) {
        let window_size = self.config.window_size;
        let child_index = rest[0].index;
        let relative = relative_id(&rest[1..]);
        let node = self.get_mut(id);

        let new_visit = node.visit.child != Some(child_index);
        if new_visit {
            node.visit.child = Some(child_index);
            node.visit.seen.clear();
            if relative.is_some() {
                node.child_freq.begin_visit();
            }
        }
        let append = match &relative {
            None => true,
            Some(r) => new_visit || node.visit.seen.contains(r),
        };
        if let Some(r) = relative {
            if !node.visit.seen.contains(&r) {
                node.child_freq.record(&r);
                node.visit.seen.insert(r);
            }
        }
        if append {
            if node.window.len() == window_size {
                node.window.pop_front();
            }
            node.window.push_back(WindowEntry {
                index: child_index,
                ts_ms: ts,
            });
        }

        let mut transition = Transition::None;
        if node.state == StreamState::Trivial {
            node.distinct.insert(child_index);
            if node.distinct.len() > window_size {
                node.state = StreamState::NonTrivial;
                node.distinct = HashSet::new();
                transition = Transition::BecameNonTrivial;
            }
        }
        (new_visit, transition)
    }

    /// Splits a merged node so that its first `at` segments become a new
    /// parent node. Returns the new upper node.
    fn split(&mut self, id: NodeId, at: usize) -> NodeId {
        let (parent, upper_segs, lower_first, last_access) = {
            let n = self.get_mut(id);
            let lower: Vec<Segment> = n.segments.split_off(at);
            let upper = std::mem::replace(&mut n.segments, lower);
            (n.parent, upper, n.segments[0].clone(), n.last_access_ms)
        };
        let parent = parent.expect("merged nodes are never the root");
        let parent_depth = self.get(parent).depth;
        let key_name = upper_segs[0].name.clone();
        let mut upper = AccessStreamNode::new(
            upper_segs,
            Some(parent),
            parent_depth + at as u32,
            last_access,
        );
        upper.distinct.insert(lower_first.index);
        upper.children.insert(lower_first.name.clone(), id);
        let uid = self.alloc(upper);
        self.get_mut(id).parent = Some(uid);
        self.get_mut(parent).children.insert(key_name, uid);
        uid
    }

    /// Merges every chain of single-child trivial nodes into one node per
    /// chain. Routing and the state of surviving nodes are unchanged.
    pub fn compress_layers(&mut self) {
        if !self.config.compression_enabled {
            return;
        }
        let mut stack = vec![ROOT];
        while let Some(id) = stack.pop() {
            if id != ROOT {
                while self.mergeable(id) {
                    let child = *self.get(id).children.values().next().expect("one child");
                    if !self.mergeable(child) {
                        break;
                    }
                    self.absorb_child(id, child);
                }
            }
            stack.extend(self.get(id).children.values().copied());
        }
    }

    fn mergeable(&self, id: NodeId) -> bool {
        let n = self.get(id);
        id != ROOT && n.state == StreamState::Trivial && n.children.len() == 1
    }

    fn absorb_child(&mut self, id: NodeId, child: NodeId) {
        let key = self.lru_key(child);
        self.recency.remove(&key);
        let c = self.nodes[child.0 as usize].take().expect("live child");
        self.free.push(child.0);
        self.count -= 1;
        for &g in c.children.values() {
            self.get_mut(g).parent = Some(id);
        }
        let old = self.lru_key(id);
        self.recency.remove(&old);
        let n = self.get_mut(id);
        n.segments.extend(c.segments);
        n.depth = c.depth;
        n.children = c.children;
        n.window = c.window;
        n.distinct = c.distinct;
        n.state = c.state;
        n.pattern = c.pattern;
        n.child_freq = c.child_freq;
        n.visit = c.visit;
        n.last_access_ms = n.last_access_ms.max(c.last_access_ms);
        let key = self.lru_key(id);
        self.recency.insert(key);
    }

    /// Detaches child subtrees of a non-trivial node whose entries have left
    /// the window. Window, pattern and frequency table stay on the node.
    pub fn prune_children(&mut self, id: NodeId) -> usize {
        let n = self.get(id);
        if n.state != StreamState::NonTrivial {
            return 0;
        }
        let keep: HashSet<u64> = n.window.iter().map(|e| e.index).collect();
        let victims: Vec<(String, NodeId)> = n
            .children
            .iter()
            .filter(|(_, &c)| !keep.contains(&self.get(c).segments[0].index))
            .map(|(k, &c)| (k.clone(), c))
            .collect();
        let mut removed = 0;
        for (k, c) in victims {
            self.get_mut(id).children.remove(&k);
            removed += self.free_subtree(c);
        }
        removed
    }

    fn free_subtree(&mut self, id: NodeId) -> usize {
        let mut stack = vec![id];
        let mut removed = 0;
        while let Some(n) = stack.pop() {
            let key = self.lru_key(n);
            self.recency.remove(&key);
            let node = self.nodes[n.0 as usize].take().expect("live node");
            self.free.push(n.0);
            self.count -= 1;
            removed += 1;
            stack.extend(node.children.into_values());
        }
        removed
    }

    /// Evicts least-recently-accessed nodes until the cap holds. Ties go to
    /// the deepest node. A node is only removed together with its subtree,
    /// so no retained node loses an ancestor.
    pub fn enforce_node_cap(&mut self) -> usize {
        let mut removed = 0;
        while self.count > self.config.max_nodes {
            let Some(&(_, _, victim)) = self.recency.iter().next() else {
                break;
            };
            let parent = self.get(victim).parent.expect("root is not indexed");
            let name = self.get(victim).segments[0].name.clone();
            self.get_mut(parent).children.remove(&name);
            removed += self.free_subtree(victim);
        }
        removed
    }

    /// Records an access and runs tree maintenance: pruning of oversized
    /// non-trivial nodes, periodic layer compression and the node cap.
    pub fn observe(&mut self, levels: &[Level], ts: u64) -> Vec<Touch> {
        let touches = self.record_access(levels, ts);
        let limit = self.config.window_size + self.config.window_size / 2;
        for t in &touches {
            if self
                .node(t.node)
                .is_some_and(|n| n.is_non_trivial() && n.children.len() > limit)
            {
                self.prune_children(t.node);
            }
        }
        if self.config.compression_enabled
            && self.accesses.is_multiple_of(self.config.max_nodes as u64)
        {
            self.compress_layers();
        }
        self.enforce_node_cap();
        touches
    }

    pub fn set_pattern(&mut self, id: NodeId, label: PatternLabel) {
        self.get_mut(id).pattern = Some(label);
    }

    pub fn snapshot(&self, id: NodeId) -> WindowSnapshot {
        WindowSnapshot {
            node: id,
            prefix: self.prefix(id),
            entries: self.get(id).window.iter().copied().collect(),
        }
    }

    /// Nodes on the path from the root to `id`, root first.
    pub fn ancestry(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            out.push(c);
            cur = self.get(c).parent;
        }
        out.reverse();
        out
    }

    pub fn dump(&self) -> DebugNode {
        self.dump_node(ROOT)
    }

    fn dump_node(&self, id: NodeId) -> DebugNode {
        let n = self.get(id);
        let mut kids: Vec<(&String, &NodeId)> = n.children.iter().collect();
        kids.sort();
        DebugNode {
            prefix: self.prefix(id),
            state: n.state,
            pattern: n.pattern,
            window_len: n.window.len(),
            children: kids.into_iter().map(|(_, &c)| self.dump_node(c)).collect(),
        }
    }

    /// Approximate heap footprint of the tree in bytes.
    pub fn memory_bytes(&self) -> usize {
        let mut total = self.nodes.capacity() * size_of::<Option<AccessStreamNode>>()
            + self.recency.len() * (size_of::<LruKey>() + 16);
        for n in self.nodes.iter().flatten() {
            total += n
                .segments
                .iter()
                .map(|s| size_of::<Segment>() + s.name.capacity())
                .sum::<usize>();
            total += n.children.len() * (size_of::<String>() + size_of::<NodeId>() + 16);
            total += n.children.keys().map(String::capacity).sum::<usize>();
            total += n.window.capacity() * size_of::<WindowEntry>();
            total += n.distinct.capacity() * (size_of::<u64>() + 1);
            total += n
                .child_freq
                .entries()
                .map(|(k, _)| k.len() + size_of::<String>() + 8 + 16)
                .sum::<usize>();
            total += n
                .visit
                .seen
                .iter()
                .map(|s| s.capacity() + size_of::<String>() + 1)
                .sum::<usize>();
        }
        total
    }

    /// Iterates over live nodes.
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_some())
            .map(|(i, _)| NodeId(i as u32))
    }
}

/// Identifier of a descendant relative to a child, e.g. `file.csv#0` for a
/// block two levels down or `#3` for a block directly below.
fn relative_id(rest: &[Level]) -> Option<String> {
    if rest.is_empty() {
        return None;
    }
    let mut s = String::new();
    for (i, l) in rest.iter().enumerate() {
        if i > 0 && !l.name.starts_with('#') {
            s.push('/');
        }
        s.push_str(&l.name);
    }
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recognize::{classify, RecognizerConfig};
    use crate::workload::{build_catalog, DatasetLayout};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn levels(cat: &NamespaceCatalog, path: &str) -> Vec<Level> {
        resolve_levels(&path.parse().unwrap(), cat).unwrap()
    }

    fn tree(window: usize, max_nodes: usize, compression: bool) -> AccessStreamTree {
        AccessStreamTree::new(TreeConfig {
            window_size: window,
            max_nodes,
            compression_enabled: compression,
        })
        .unwrap()
    }

    /// Checks structural consistency: parent links, child maps, counts and
    /// the recency index.
    fn assert_consistent(t: &AccessStreamTree) {
        let mut live = 0;
        for id in t.node_ids() {
            live += 1;
            let n = t.node(id).unwrap();
            if id != ROOT {
                let p = t.node(n.parent.unwrap()).expect("parent alive");
                assert_eq!(p.children.get(&n.segments[0].name), Some(&id));
                assert!(p.last_access_ms >= n.last_access_ms);
            }
            for &c in n.children.values() {
                assert_eq!(t.node(c).unwrap().parent, Some(id));
            }
        }
        assert_eq!(live, t.node_count());
        assert_eq!(t.recency.len(), t.node_count() - 1);
    }

    #[test]
    fn first_access_creates_one_node_per_level() {
        let cat = NamespaceCatalog::from_files(4, [("/ImageNet/train/n01491361/4716.JPEG", 3u64)])
            .unwrap();
        let mut t = tree(100, 10_000, true);
        let touches = t.record_access(&levels(&cat, "/ImageNet/train/n01491361/4716.JPEG#0"), 0);
        assert_eq!(t.node_count(), 6);
        assert_eq!(touches.len(), 6);
        for p in [
            "/ImageNet",
            "/ImageNet/train",
            "/ImageNet/train/n01491361",
            "/ImageNet/train/n01491361/4716.JPEG",
            "/ImageNet/train/n01491361/4716.JPEG#0",
        ] {
            let id = t.find(p).unwrap_or_else(|| panic!("{p} missing"));
            assert_eq!(t.prefix(id), p);
        }
        assert!(touches.iter().all(|x| x.transition == Transition::None));
    }

    #[test]
    fn transition_fires_on_first_distinct_child_beyond_window() {
        let cat =
            build_catalog(&[DatasetLayout::nested("/ImageNet/train", 200, 1, 10)], 16).unwrap();
        let mut t = tree(100, 10_000, true);
        let train = |t: &AccessStreamTree| t.find("/ImageNet/train").unwrap();
        for d in 0..100 {
            let touches = t.record_access(
                &levels(&cat, &format!("/ImageNet/train/{d:05}/000000.dat#0")),
                d,
            );
            assert!(touches.iter().all(|x| x.transition == Transition::None));
        }
        assert_eq!(t.node(train(&t)).unwrap().state(), StreamState::Trivial);
        let touches = t.record_access(&levels(&cat, "/ImageNet/train/00100/000000.dat#0"), 100);
        let fired: Vec<NodeId> = touches
            .iter()
            .filter(|x| x.transition == Transition::BecameNonTrivial)
            .map(|x| x.node)
            .collect();
        assert_eq!(fired, [train(&t)]);
        // never fires twice
        let touches = t.record_access(&levels(&cat, "/ImageNet/train/00150/000000.dat#0"), 101);
        assert!(touches.iter().all(|x| x.transition == Transition::None));
    }

    #[test]
    fn repeated_block_appends_window_without_new_distinct_child() {
        let cat = NamespaceCatalog::from_files(4, [("/d/f", 8u64)]).unwrap();
        let mut t = tree(2, 100, false);
        t.record_access(&levels(&cat, "/d/f#0"), 0);
        t.record_access(&levels(&cat, "/d/f#1"), 1);
        let f = t.find("/d/f").unwrap();
        for ts in 2..6 {
            let touches = t.record_access(&levels(&cat, "/d/f#1"), ts);
            assert!(touches.iter().all(|x| x.transition == Transition::None));
        }
        let n = t.node(f).unwrap();
        assert_eq!(n.state(), StreamState::Trivial);
        assert_eq!(n.window_indices(), [1, 1]);
        // the directory saw one visit to f; continuation blocks add no entries
        let d = t.find("/d").unwrap();
        assert_eq!(t.node(d).unwrap().window.len(), 2);
    }

    #[test]
    fn compression_merges_single_child_chain() {
        let cat = NamespaceCatalog::from_files(4, [("/a/b/c/d", 4u64)]).unwrap();
        let mut t = tree(100, 1000, true);
        t.record_access(&levels(&cat, "/a/b/c/d"), 0);
        assert_eq!(t.node_count(), 5);
        t.compress_layers();
        assert_eq!(t.node_count(), 3);
        let merged = t.find("/a/b/c").unwrap();
        assert_eq!(t.node(merged).unwrap().merged_levels(), 3);
        assert!(t.find("/a").is_none());
        assert!(t.find("/a/b/c/d").is_some());
        let dump = serde_json::to_string(&t.dump()).unwrap();
        t.compress_layers();
        assert_eq!(serde_json::to_string(&t.dump()).unwrap(), dump);
        assert_consistent(&t);
    }

    #[test]
    fn compression_is_a_fixpoint_without_chains() {
        let cat = NamespaceCatalog::from_files(4, [("/a/x", 4u64), ("/a/y", 4)]).unwrap();
        let mut t = tree(100, 1000, true);
        t.record_access(&levels(&cat, "/a/x"), 0);
        t.record_access(&levels(&cat, "/a/y"), 1);
        let before = serde_json::to_string(&t.dump()).unwrap();
        t.compress_layers();
        assert_eq!(serde_json::to_string(&t.dump()).unwrap(), before);
    }

    #[test]
    fn merged_chain_splits_at_branch_point() {
        let cat = NamespaceCatalog::from_files(4, [("/a/b/c/d", 4u64), ("/a/b/e", 4)]).unwrap();
        let mut t = tree(100, 1000, true);
        t.record_access(&levels(&cat, "/a/b/c/d#0"), 0);
        t.compress_layers();
        assert!(t.find("/a/b").is_none());
        t.record_access(&levels(&cat, "/a/b/e#0"), 1);
        let ab = t.find("/a/b").expect("split restores the branch point");
        assert_eq!(t.node(ab).unwrap().child_count(), 2);
        assert!(t.find("/a/b/c/d#0").is_some());
        assert!(t.find("/a/b/e#0").is_some());
        assert_consistent(&t);
    }

    #[test]
    fn prune_keeps_only_children_in_window() {
        let cat = build_catalog(&[DatasetLayout::flat("/d", 150, 4)], 4).unwrap();
        let mut t = tree(100, 10_000, false);
        for i in 0..150 {
            t.record_access(&levels(&cat, &format!("/d/{i:06}.dat#0")), i);
        }
        let d = t.find("/d").unwrap();
        assert_eq!(t.node(d).unwrap().child_count(), 150);
        let freq_before = t.node(d).unwrap().child_freq().clone();
        let removed = t.prune_children(d);
        let n = t.node(d).unwrap();
        assert!(n.child_count() <= 100);
        assert_eq!(removed, 100);
        assert_eq!(n.child_freq(), &freq_before);
        assert!(t.find("/d/000049.dat").is_none());
        assert!(t.find("/d/000149.dat").is_some());
        assert_consistent(&t);
    }

    #[test]
    fn prune_leaves_trivial_nodes_alone() {
        let cat = build_catalog(&[DatasetLayout::flat("/d", 20, 4)], 4).unwrap();
        let mut t = tree(100, 10_000, false);
        for i in 0..20 {
            t.record_access(&levels(&cat, &format!("/d/{i:06}.dat#0")), i);
        }
        let d = t.find("/d").unwrap();
        assert_eq!(t.prune_children(d), 0);
        assert_eq!(t.node(d).unwrap().child_count(), 20);
    }

    #[test]
    fn pruning_does_not_change_windows_or_labels() {
        let cat = build_catalog(&[DatasetLayout::flat("/d", 400, 4)], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut order: Vec<usize> = (0..400).collect();
        let mut pruned = tree(100, 100_000, false);
        let mut reference = tree(100, 100_000, false);
        let cfg = RecognizerConfig::default();
        let mut ts = 0;
        for _ in 0..3 {
            order.shuffle(&mut rng);
            for &i in &order {
                let lv = levels(&cat, &format!("/d/{i:06}.dat#0"));
                let a = pruned.observe(&lv, ts);
                let b = reference.record_access(&lv, ts);
                assert_eq!(
                    a.iter().map(|x| x.transition).collect::<Vec<_>>(),
                    b.iter().map(|x| x.transition).collect::<Vec<_>>()
                );
                ts += 1;
            }
        }
        let (pa, pb) = (pruned.find("/d").unwrap(), reference.find("/d").unwrap());
        let (wa, wb) = (
            pruned.node(pa).unwrap().window_indices(),
            reference.node(pb).unwrap().window_indices(),
        );
        assert_eq!(wa, wb);
        assert_eq!(
            classify(&wa, 400, &cfg).unwrap().label,
            classify(&wb, 400, &cfg).unwrap().label
        );
        assert!(pruned.node(pa).unwrap().child_count() <= 150);
        assert_eq!(reference.node(pb).unwrap().child_count(), 400);
    }

    #[test]
    fn cap_evicts_least_recent_nodes() {
        let cat = build_catalog(&[DatasetLayout::nested("/x", 5000, 1, 12)], 4).unwrap();
        let mut t = tree(5000, 10_000, false);
        // each new directory adds a directory, file and block node
        for i in 0..3332u64 {
            t.observe(&levels(&cat, &format!("/x/{i:05}/000000.dat#0")), i);
        }
        t.observe(&levels(&cat, "/x/03331/000000.dat#1"), 3332);
        t.observe(&levels(&cat, "/x/03331/000000.dat#2"), 3333);
        assert_eq!(t.node_count(), 10_000);
        t.observe(&levels(&cat, "/x/03332/000000.dat#0"), 3334);
        assert_eq!(t.node_count(), 10_000);
        assert!(t.find("/x/00000").is_none(), "least recent subtree evicted");
        assert!(t.find("/x/00001/000000.dat#0").is_some());
        assert!(t.find("/x/03332/000000.dat#0").is_some());
        assert_consistent(&t);
    }

    #[test]
    fn cap_below_limit_is_a_no_op() {
        let cat = build_catalog(&[DatasetLayout::flat("/d", 10, 4)], 4).unwrap();
        let mut t = tree(2, 100, false);
        for i in 0..10 {
            t.record_access(&levels(&cat, &format!("/d/{i:06}.dat#0")), i);
        }
        let before = t.node_count();
        assert_eq!(t.enforce_node_cap(), 0);
        assert_eq!(t.node_count(), before);
    }

    #[test]
    fn equal_recency_evicts_deepest_first() {
        let cat = NamespaceCatalog::from_files(4, [("/a/b/c", 4u64), ("/a/b/d", 4)]).unwrap();
        let mut t = tree(2, 100, false);
        t.record_access(&levels(&cat, "/a/b/c#0"), 7);
        t.record_access(&levels(&cat, "/a/b/d#0"), 7);
        // root, a, b, c, c#0, d, d#0
        assert_eq!(t.node_count(), 7);
        t.config.max_nodes = 5;
        t.enforce_node_cap();
        assert_eq!(t.node_count(), 5);
        assert!(t.find("/a/b/c").is_some() && t.find("/a/b/d").is_some());
        assert!(t.find("/a/b/c#0").is_none() && t.find("/a/b/d#0").is_none());
        t.config.max_nodes = 2;
        t.enforce_node_cap();
        assert_eq!(t.node_count(), 2);
        assert!(t.find("/a").is_some());
        assert_consistent(&t);
    }

    #[test]
    fn child_frequency_tracks_hot_relative_file() {
        let cat = build_catalog(&[DatasetLayout::nested("/o", 30, 10, 8)], 4).unwrap();
        let mut t = tree(10, 10_000, true);
        let mut ts = 0;
        for m in 0..30 {
            for b in 0..2 {
                t.observe(&levels(&cat, &format!("/o/{m:05}/000003.dat#{b}")), ts);
                ts += 1;
            }
            if m % 2 == 0 {
                t.observe(&levels(&cat, &format!("/o/{m:05}/000007.dat#0")), ts);
                ts += 1;
            }
        }
        let o = t.node(t.find("/o").unwrap()).unwrap();
        let freq = o.child_freq();
        assert_eq!(freq.observations(), 30);
        assert_eq!(freq.frequency("000003.dat#0"), 1.0);
        assert_eq!(freq.frequency("000003.dat#1"), 1.0);
        assert_eq!(freq.frequency("000007.dat#0"), 0.5);
        let hot: Vec<&str> = freq.hot(0.8).into_iter().map(|(k, _)| k).collect();
        assert_eq!(hot, ["000003.dat#0", "000003.dat#1"]);
        // one window entry per month visit
        assert_eq!(o.window_indices(), (20..30).collect::<Vec<u64>>());
    }

    /// Records (prefix, window) at every transition.
    fn transitions(
        t: &mut AccessStreamTree,
        trace: &[Vec<Level>],
        compress_every: Option<usize>,
    ) -> Vec<(String, Vec<WindowEntry>)> {
        let mut out = Vec::new();
        for (i, lv) in trace.iter().enumerate() {
            let touches = t.record_access(lv, i as u64);
            for x in touches {
                if x.transition == Transition::BecameNonTrivial {
                    let s = t.snapshot(x.node);
                    out.push((s.prefix, s.entries));
                }
            }
            if let Some(k) = compress_every {
                if i % k == 0 {
                    t.compress_layers();
                }
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    #[test]
    fn compression_preserves_transition_windows() {
        let cat = build_catalog(
            &[
                DatasetLayout::nested("/deep/chain/of/dirs", 150, 3, 8),
                DatasetLayout::flat("/flat", 300, 4),
            ],
            4,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut trace = Vec::new();
        for _ in 0..6000 {
            let path = if rng.random_bool(0.5) {
                let d = rng.random_range(0..150);
                let f = rng.random_range(0..3);
                let b = rng.random_range(0..2);
                format!("/deep/chain/of/dirs/{d:05}/{f:06}.dat#{b}")
            } else {
                format!("/flat/{:06}.dat#0", rng.random_range(0..300))
            };
            trace.push(levels(&cat, &path));
        }
        let mut plain = tree(100, 1_000_000, false);
        let mut compressed = tree(100, 1_000_000, true);
        let a = transitions(&mut plain, &trace, None);
        let b = transitions(&mut compressed, &trace, Some(7));
        assert!(a.len() >= 2);
        assert_eq!(a, b);
        assert!(compressed.node_count() < plain.node_count());
        assert_consistent(&compressed);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn node_count_never_exceeds_cap(
            seed in any::<u64>(),
            cap in 20usize..200,
            compress in any::<bool>(),
        ) {
            let cat = build_catalog(&[DatasetLayout::nested("/p", 20, 20, 12)], 4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = tree(10, cap, compress);
            for ts in 0..600u64 {
                let p = format!(
                    "/p/{:05}/{:06}.dat#{}",
                    rng.random_range(0..20),
                    rng.random_range(0..20),
                    rng.random_range(0..3)
                );
                t.observe(&levels(&cat, &p), ts);
                prop_assert!(t.node_count() <= cap);
                if ts % 50 == 0 {
                    t.compress_layers();
                }
            }
            assert_consistent(&t);
        }
    }
}
