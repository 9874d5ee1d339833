//! Hierarchical namespace model: item paths and the dataset catalog.
//!
//! The catalog fixes the traversal order of every directory. A child's
//! position in that order is its sequential index, which is what spatial
//! gaps are measured in. Blocks are indexed by block id.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BLOCK_SIZE: u64 = 4 * 1024 * 1024;

/// A path in the namespace, optionally resolved down to one block of a file.
///
/// Textual form is `/dir/sub/file#block`; the `#block` suffix is optional.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemPath {
    components: Vec<String>,
    block: Option<u64>,
}

impl ItemPath {
    pub fn new<I, S>(components: I, block: Option<u64>) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let components: Vec<String> = components.into_iter().map(Into::into).collect();
        if components.is_empty() {
            return Err(Error::InvalidPath {
                path: String::new(),
                reason: "no path components",
            });
        }
        for c in &components {
            validate_segment(c)?;
        }
        Ok(Self { components, block })
    }

    pub fn components(&self) -> &[String] {
        &self.components
    }

    pub fn block(&self) -> Option<u64> {
        self.block
    }

    pub fn with_block(&self, block: u64) -> Self {
        Self {
            components: self.components.clone(),
            block: Some(block),
        }
    }

    pub fn without_block(&self) -> Self {
        Self {
            components: self.components.clone(),
            block: None,
        }
    }

    pub fn name(&self) -> &str {
        self.components.last().expect("non-empty")
    }

    /// Path string of the file or directory, without the block suffix.
    pub fn item_str(&self) -> String {
        join_components(&self.components)
    }

    /// Path string of the containing directory (`/` for top-level items).
    pub fn parent_str(&self) -> String {
        join_components(&self.components[..self.components.len() - 1])
    }

    /// True when `prefix` (a path string such as `/a/b`) is this path or an
    /// ancestor of it.
    pub fn starts_with(&self, prefix: &str) -> bool {
        let prefix = prefix.trim_end_matches('/');
        if prefix.is_empty() {
            return true;
        }
        let mut rest = prefix;
        for c in &self.components {
            let Some(r) = rest.strip_prefix('/') else {
                return false;
            };
            let Some(r) = r.strip_prefix(c.as_str()) else {
                return false;
            };
            if r.is_empty() {
                return true;
            }
            if !r.starts_with('/') {
                return false;
            }
            rest = r;
        }
        false
    }
}

fn validate_segment(s: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::InvalidPath {
            path: s.to_string(),
            reason: "empty path segment",
        });
    }
    if s.contains('/') || s.contains('#') {
        return Err(Error::InvalidPath {
            path: s.to_string(),
            reason: "segment contains a separator",
        });
    }
    Ok(())
}

pub fn join_components<S: AsRef<str>>(components: &[S]) -> String {
    if components.is_empty() {
        return "/".to_string();
    }
    let mut s = String::new();
    for c in components {
        s.push('/');
        s.push_str(c.as_ref());
    }
    s
}

/// Joins a directory path string and a child name.
pub fn child_path(dir: &str, name: &str) -> String {
    if dir == "/" {
        format!("/{name}")
    } else {
        format!("{dir}/{name}")
    }
}

impl fmt::Display for ItemPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.components {
            write!(f, "/{c}")?;
        }
        if let Some(b) = self.block {
            write!(f, "#{b}")?;
        }
        Ok(())
    }
}

impl FromStr for ItemPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (item, block) = match s.rsplit_once('#') {
            Some((item, b)) => {
                let block = b.parse::<u64>().map_err(|_| Error::InvalidPath {
                    path: s.to_string(),
                    reason: "block suffix is not a non-negative integer",
                })?;
                (item, Some(block))
            }
            None => (s, None),
        };
        let Some(item) = item.strip_prefix('/') else {
            return Err(Error::InvalidPath {
                path: s.to_string(),
                reason: "path must be absolute",
            });
        };
        ItemPath::new(item.split('/'), block).map_err(|e| match e {
            Error::InvalidPath { reason, .. } => Error::InvalidPath {
                path: s.to_string(),
                reason,
            },
            other => other,
        })
    }
}

impl Serialize for ItemPath {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ItemPath {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dense id of a file in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileId(pub u32);

/// One block of one file; the unit of caching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId {
    pub file: FileId,
    pub block: u64,
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    entries: BTreeMap<String, Vec<String>>,
    file_sizes: BTreeMap<String, u64>,
    #[serde(default = "default_block_size")]
    block_size: u64,
}

fn default_block_size() -> u64 {
    DEFAULT_BLOCK_SIZE
}

/// The directory listing and file sizes of every dataset the cache fronts.
#[derive(Debug, Clone)]
pub struct NamespaceCatalog {
    entries: BTreeMap<String, Vec<String>>,
    file_sizes: BTreeMap<String, u64>,
    block_size: u64,
    positions: HashMap<String, HashMap<String, usize>>,
    file_ids: HashMap<String, FileId>,
    files: Vec<String>,
}

impl NamespaceCatalog {
    /// Builds a catalog from explicit directory listings. The order of each
    /// listing is taken as the traversal order.
    pub fn from_parts(
        entries: BTreeMap<String, Vec<String>>,
        file_sizes: BTreeMap<String, u64>,
        block_size: u64,
    ) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Config("block_size must be positive".into()));
        }
        let mut positions = HashMap::with_capacity(entries.len());
        for (dir, children) in &entries {
            if dir != "/" {
                let p: ItemPath = dir.parse()?;
                if p.block().is_some() {
                    return Err(Error::Config(format!(
                        "directory {dir} carries a block suffix"
                    )));
                }
            }
            let mut pos = HashMap::with_capacity(children.len());
            for (i, c) in children.iter().enumerate() {
                validate_segment(c)?;
                if pos.insert(c.clone(), i).is_some() {
                    return Err(Error::Config(format!("duplicate child {c} under {dir}")));
                }
                let full = child_path(dir, c);
                if !entries.contains_key(&full) && !file_sizes.contains_key(&full) {
                    return Err(Error::Config(format!(
                        "child {full} is neither a directory nor a file"
                    )));
                }
            }
            positions.insert(dir.clone(), pos);
        }
        let mut file_ids = HashMap::with_capacity(file_sizes.len());
        let mut files = Vec::with_capacity(file_sizes.len());
        for path in file_sizes.keys() {
            let p: ItemPath = path.parse()?;
            let parent = p.parent_str();
            let listed = positions
                .get(&parent)
                .is_some_and(|m| m.contains_key(p.name()));
            if !listed {
                return Err(Error::Config(format!(
                    "file {path} is not listed under {parent}"
                )));
            }
            if entries.contains_key(path) {
                return Err(Error::Config(format!(
                    "{path} is both a file and a directory"
                )));
            }
            file_ids.insert(path.clone(), FileId(files.len() as u32));
            files.push(path.clone());
        }
        Ok(Self {
            entries,
            file_sizes,
            block_size,
            positions,
            file_ids,
            files,
        })
    }

    /// Builds a catalog from a flat file listing; every directory's children
    /// are ordered lexicographically.
    pub fn from_files<I, S>(block_size: u64, files: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: AsRef<str>,
    {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut sizes = BTreeMap::new();
        for (path, size) in files {
            let p: ItemPath = path.as_ref().parse()?;
            if p.block().is_some() {
                return Err(Error::Config(format!(
                    "file path {} carries a block suffix",
                    path.as_ref()
                )));
            }
            let comps = p.components();
            for depth in 0..comps.len() {
                let dir = join_components(&comps[..depth]);
                entries.entry(dir).or_default().push(comps[depth].clone());
            }
            sizes.insert(p.item_str(), size);
        }
        for children in entries.values_mut() {
            children.sort();
            children.dedup();
        }
        Self::from_parts(entries, sizes, block_size)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: CatalogFile = serde_json::from_str(s)?;
        Self::from_parts(raw.entries, raw.file_sizes, raw.block_size)
    }

    pub fn to_json(&self) -> String {
        let raw = CatalogFile {
            entries: self.entries.clone(),
            file_sizes: self.file_sizes.clone(),
            block_size: self.block_size,
        };
        serde_json::to_string_pretty(&raw).expect("catalog serializes")
    }

    pub fn block_size(&self) -> u64 {
        self.block_size
    }

    pub fn is_dir(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn is_file(&self, path: &str) -> bool {
        self.file_sizes.contains_key(path)
    }

    pub fn children(&self, dir: &str) -> Option<&[String]> {
        self.entries.get(dir).map(Vec::as_slice)
    }

    pub fn child_position(&self, dir: &str, name: &str) -> Option<usize> {
        self.positions.get(dir)?.get(name).copied()
    }

    pub fn file_size(&self, path: &str) -> Option<u64> {
        self.file_sizes.get(path).copied()
    }

    pub fn file_id(&self, path: &str) -> Option<FileId> {
        self.file_ids.get(path).copied()
    }

    pub fn file_path(&self, id: FileId) -> &str {
        &self.files[id.0 as usize]
    }

    pub fn file_count(&self) -> usize {
        self.files.len()
    }

    pub fn block_count(&self, file: &str) -> Option<u64> {
        self.file_size(file).map(|s| s.div_ceil(self.block_size))
    }

    /// Byte size of one block; the last block of a file may be short.
    pub fn block_bytes(&self, id: BlockId) -> u64 {
        let size = self.file_sizes[self.file_path(id.file)];
        let start = id.block * self.block_size;
        size.saturating_sub(start).min(self.block_size)
    }

    /// Number of children of a directory, or blocks of a file. This is the
    /// item count `c` of the stream rooted at `path`.
    pub fn item_count(&self, path: &str) -> Option<u64> {
        if let Some(children) = self.children(path) {
            return Some(children.len() as u64);
        }
        self.block_count(path)
    }

    /// Sequential index of a path within its parent: the block id for a
    /// block reference, otherwise the position in the parent's listing.
    pub fn sequential_index(&self, path: &ItemPath) -> Result<u64> {
        let item = path.item_str();
        if let Some(b) = path.block() {
            let blocks = self
                .block_count(&item)
                .ok_or_else(|| Error::Lookup(path.to_string()))?;
            if b >= blocks.max(1) {
                return Err(Error::Lookup(path.to_string()));
            }
            return Ok(b);
        }
        self.child_position(&path.parent_str(), path.name())
            .map(|i| i as u64)
            .ok_or_else(|| Error::Lookup(path.to_string()))
    }

    /// Resolves a block reference to its dense id.
    pub fn resolve_block(&self, path: &ItemPath) -> Result<BlockId> {
        let item = path.item_str();
        let file = self
            .file_id(&item)
            .ok_or_else(|| Error::Lookup(item.clone()))?;
        let block = path.block().unwrap_or(0);
        let blocks = self.block_count(&item).unwrap_or(0).max(1);
        if block >= blocks {
            return Err(Error::Lookup(path.to_string()));
        }
        Ok(BlockId { file, block })
    }

    /// Every file under `prefix` (or `prefix` itself when it is a file), in
    /// traversal order.
    pub fn files_under(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_files(prefix, &mut out);
        out
    }

    fn collect_files(&self, path: &str, out: &mut Vec<String>) {
        if self.is_file(path) {
            out.push(path.to_string());
            return;
        }
        if let Some(children) = self.children(path) {
            for c in children {
                self.collect_files(&child_path(path, c), out);
            }
        }
    }

    /// Every block under `prefix`, in traversal order.
    pub fn blocks_under(&self, prefix: &str) -> Vec<BlockId> {
        let mut out = Vec::new();
        for f in self.files_under(prefix) {
            let id = self.file_ids[&f];
            for b in 0..self.block_count(&f).unwrap_or(0) {
                out.push(BlockId { file: id, block: b });
            }
        }
        out
    }

    pub fn bytes_under(&self, prefix: &str) -> u64 {
        self.files_under(prefix)
            .iter()
            .map(|f| self.file_sizes[f])
            .sum()
    }
}
