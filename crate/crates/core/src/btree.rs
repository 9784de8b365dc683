//! Paged B+tree with fixed-width keys and values.
//!
//! Keys are right-padded with 0x00 to the tree's key width, so the padded
//! bytewise order equals lexicographic order on the unpadded strings as
//! long as keys contain no interior 0x00 (ingestion cleaning guarantees
//! that for atoms). Interior entries pair a separator key with a child
//! page; the separator is the smallest key under that child at the time
//! the entry was written. Routing always sends a key smaller than every
//! separator to the first child, so stale first separators cannot
//! misroute.
//!
//! Node layout: type byte (1 interior, 2 leaf), u16 entry count, u32 right
//! sibling (leaves only), then packed entries.
//!
//! The build path is bulk loading from a sorted run at 100% fill, with the
//! two tail nodes of each level rebalanced so no non-root node is less
//! than half full. Incremental insert exists alongside it.

use crate::error::{Error, Result};
use crate::pager::{Block, PageId, PageStore, TreeMeta, NULL_PAGE};

pub const NODE_HEADER: usize = 7;
const TYPE_INTERIOR: u8 = 1;
const TYPE_LEAF: u8 = 2;
const CHILD_WIDTH: usize = 4;

/// Per-tree geometry. The same config must be supplied on reopen; it is
/// normally persisted in the store directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeConfig {
    pub key_width: usize,
    pub value_width: usize,
}

impl TreeConfig {
    /// Leaf entries per block.
    pub fn leaf_cap(&self, block_size: u32) -> usize {
        let cap = (block_size as usize - NODE_HEADER) / (self.key_width + self.value_width);
        cap.min(u16::MAX as usize)
    }

    /// Interior entries per block: the branching factor.
    pub fn fanout(&self, block_size: u32) -> usize {
        let cap = (block_size as usize - NODE_HEADER) / (self.key_width + CHILD_WIDTH);
        cap.min(u16::MAX as usize)
    }

    fn validate(&self, block_size: u32) -> Result<()> {
        if self.key_width == 0 {
            return Err(Error::BadTreeConfig("key width must be positive".into()));
        }
        if self.fanout(block_size) < 3 {
            return Err(Error::BadTreeConfig(format!(
                "branching factor {} below 3 for key width {} at block size {}",
                self.fanout(block_size),
                self.key_width,
                block_size
            )));
        }
        if self.leaf_cap(block_size) < 1 {
            return Err(Error::BadTreeConfig(format!(
                "leaves cannot hold one entry of width {} at block size {}",
                self.key_width + self.value_width,
                block_size
            )));
        }
        Ok(())
    }
}

/// Pads a key to `width` with trailing zeros.
pub fn pad_key(key: &[u8], width: usize) -> Result<Vec<u8>> {
    if key.len() > width {
        return Err(Error::KeyTooLong {
            got: key.len(),
            width,
        });
    }
    let mut k = vec![0u8; width];
    k[..key.len()].copy_from_slice(key);
    Ok(k)
}

// Node accessors over a raw block.

fn node_is_leaf(b: &Block) -> bool {
    b[0] == TYPE_LEAF
}

fn node_count(b: &Block) -> usize {
    u16::from_le_bytes([b[1], b[2]]) as usize
}

fn node_right(b: &Block) -> PageId {
    u32::from_le_bytes(b[3..7].try_into().unwrap())
}

fn set_node_header(b: &mut Block, leaf: bool, count: usize, right: PageId) {
    b[0] = if leaf { TYPE_LEAF } else { TYPE_INTERIOR };
    b[1..3].copy_from_slice(&(count as u16).to_le_bytes());
    b[3..7].copy_from_slice(&right.to_le_bytes());
}

fn entry_width(cfg: &TreeConfig, leaf: bool) -> usize {
    if leaf {
        cfg.key_width + cfg.value_width
    } else {
        cfg.key_width + CHILD_WIDTH
    }
}

fn node_key<'a>(b: &'a Block, cfg: &TreeConfig, leaf: bool, i: usize) -> &'a [u8] {
    let w = entry_width(cfg, leaf);
    let at = NODE_HEADER + i * w;
    &b[at..at + cfg.key_width]
}

fn leaf_value<'a>(b: &'a Block, cfg: &TreeConfig, i: usize) -> &'a [u8] {
    let w = entry_width(cfg, true);
    let at = NODE_HEADER + i * w + cfg.key_width;
    &b[at..at + cfg.value_width]
}

fn interior_child(b: &Block, cfg: &TreeConfig, i: usize) -> PageId {
    let w = entry_width(cfg, false);
    let at = NODE_HEADER + i * w + cfg.key_width;
    u32::from_le_bytes(b[at..at + CHILD_WIDTH].try_into().unwrap())
}

/// First index whose key is >= `key`; `count` if none.
fn lower_bound(b: &Block, cfg: &TreeConfig, leaf: bool, key: &[u8]) -> usize {
    let mut lo = 0usize;
    let mut hi = node_count(b);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if node_key(b, cfg, leaf, mid) < key {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Child to follow for `key`: the last separator <= key, or the first
/// child when key precedes every separator.
fn route(b: &Block, cfg: &TreeConfig, key: &[u8]) -> usize {
    let lb = lower_bound(b, cfg, false, key);
    if lb < node_count(b) && node_key(b, cfg, false, lb) == key {
        lb
    } else {
        lb.saturating_sub(1)
    }
}

/// In-memory node under construction.
struct NodeBuf {
    leaf: bool,
    entries: Vec<(Vec<u8>, Vec<u8>)>, // key, value-or-child bytes
    right: PageId,
}

impl NodeBuf {
    fn to_block(&self, cfg: &TreeConfig, block_size: u32) -> Block {
        let mut b = Block::zeroed(block_size);
        set_node_header(&mut b, self.leaf, self.entries.len(), self.right);
        let w = entry_width(cfg, self.leaf);
        for (i, (k, v)) in self.entries.iter().enumerate() {
            let at = NODE_HEADER + i * w;
            b[at..at + cfg.key_width].copy_from_slice(k);
            b[at + cfg.key_width..at + w].copy_from_slice(v);
        }
        b
    }
}

fn load_entries(b: &Block, cfg: &TreeConfig) -> NodeBuf {
    let leaf = node_is_leaf(b);
    let n = node_count(b);
    let mut entries = Vec::with_capacity(n + 1);
    for i in 0..n {
        let k = node_key(b, cfg, leaf, i).to_vec();
        let v = if leaf {
            leaf_value(b, cfg, i).to_vec()
        } else {
            interior_child(b, cfg, i).to_le_bytes().to_vec()
        };
        entries.push((k, v));
    }
    NodeBuf {
        leaf,
        entries,
        right: node_right(b),
    }
}

/// Handle to one tree inside a store. Mutations update the handle; callers
/// persist `meta()` into the store directory when done.
#[derive(Clone, Debug)]
pub struct BTree {
    root: PageId,
    config: TreeConfig,
    entries: u64,
    depth: u16,
}

impl BTree {
    /// Creates a tree holding nothing: a single empty leaf as root.
    pub fn create_empty(store: &mut PageStore, config: TreeConfig) -> Result<BTree> {
        config.validate(store.block_size())?;
        let root = store.alloc()?;
        let node = NodeBuf {
            leaf: true,
            entries: Vec::new(),
            right: NULL_PAGE,
        };
        store.write(root, &node.to_block(&config, store.block_size()))?;
        Ok(BTree {
            root,
            config,
            entries: 0,
            depth: 1,
        })
    }

    /// Bulk-loads from an iterator of strictly increasing (key, value)
    /// pairs. Keys must be exactly key_width bytes (pre-padded), values
    /// exactly value_width. Leaves fill to capacity; the final two nodes of
    /// every level are rebalanced so each holds at least half capacity.
    pub fn bulk_build<I>(store: &mut PageStore, config: TreeConfig, entries: I) -> Result<BTree>
    where
        I: IntoIterator<Item = (Vec<u8>, Vec<u8>)>,
    {
        config.validate(store.block_size())?;
        let bs = store.block_size();
        let leaf_cap = config.leaf_cap(bs);

        // Build one level: pack `items` into nodes of `cap`, rebalancing the
        // tail. Returns (first_key, page_id) per node, in order.
        fn flush_level(
            store: &mut PageStore,
            config: &TreeConfig,
            leaf: bool,
            cap: usize,
            items: Vec<(Vec<u8>, Vec<u8>)>,
        ) -> Result<Vec<(Vec<u8>, PageId)>> {
            let bs = store.block_size();
            let n = items.len();
            let full = n / cap;
            let rem = n % cap;
            // Node sizes: full nodes of `cap`, then the remainder; if the
            // remainder is under half and a full node precedes it, steal
            // from that node so both halves are >= cap/2.
            let mut sizes: Vec<usize> = vec![cap; full];
            if rem > 0 {
                if rem < cap.div_ceil(2) && full > 0 {
                    let total = cap + rem;
                    let left = total.div_ceil(2);
                    *sizes.last_mut().unwrap() = left;
                    sizes.push(total - left);
                } else {
                    sizes.push(rem);
                }
            }
            if sizes.is_empty() {
                sizes.push(0);
            }

            let mut out = Vec::with_capacity(sizes.len());
            let mut iter = items.into_iter();
            let mut pages: Vec<(NodeBuf, PageId)> = Vec::with_capacity(sizes.len());
            for size in sizes {
                let chunk: Vec<(Vec<u8>, Vec<u8>)> = iter.by_ref().take(size).collect();
                let id = store.alloc()?;
                pages.push((
                    NodeBuf {
                        leaf,
                        entries: chunk,
                        right: NULL_PAGE,
                    },
                    id,
                ));
            }
            for i in 0..pages.len() {
                if leaf && i + 1 < pages.len() {
                    pages[i].0.right = pages[i + 1].1;
                }
                let first_key = pages[i]
                    .0
                    .entries
                    .first()
                    .map(|(k, _)| k.clone())
                    .unwrap_or_else(|| vec![0u8; config.key_width]);
                store.write(pages[i].1, &pages[i].0.to_block(config, bs))?;
                out.push((first_key, pages[i].1));
            }
            Ok(out)
        }

        let mut total = 0u64;
        let mut prev: Option<Vec<u8>> = None;
        let mut leaf_items: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
        for (k, v) in entries {
            if k.len() != config.key_width {
                return Err(Error::KeyTooLong {
                    got: k.len(),
                    width: config.key_width,
                });
            }
            if v.len() != config.value_width {
                return Err(Error::Invalid(format!(
                    "value length {} does not match value width {}",
                    v.len(),
                    config.value_width
                )));
            }
            if let Some(p) = &prev {
                if *p >= k {
                    if *p == k {
                        return Err(Error::DuplicateKey);
                    }
                    return Err(Error::Invalid("bulk input not sorted".into()));
                }
            }
            prev = Some(k.clone());
            leaf_items.push((k, v));
            total += 1;
        }

        let mut level = flush_level(store, &config, true, leaf_cap, leaf_items)?;
        let mut depth = 1u16;
        let fanout = config.fanout(bs);
        while level.len() > 1 {
            let items: Vec<(Vec<u8>, Vec<u8>)> = level
                .into_iter()
                .map(|(k, id)| (k, id.to_le_bytes().to_vec()))
                .collect();
            level = flush_level(store, &config, false, fanout, items)?;
            depth += 1;
        }
        Ok(BTree {
            root: level[0].1,
            config,
            entries: total,
            depth,
        })
    }

    pub fn from_meta(meta: TreeMeta) -> BTree {
        BTree {
            root: meta.root,
            config: TreeConfig {
                key_width: meta.key_width as usize,
                value_width: meta.value_width as usize,
            },
            entries: meta.entries,
            depth: meta.depth,
        }
    }

    pub fn meta(&self) -> TreeMeta {
        TreeMeta {
            root: self.root,
            key_width: self.config.key_width as u16,
            value_width: self.config.value_width as u16,
            entries: self.entries,
            depth: self.depth,
        }
    }

    pub fn config(&self) -> TreeConfig {
        self.config
    }

    pub fn root(&self) -> PageId {
        self.root
    }

    pub fn entries(&self) -> u64 {
        self.entries
    }

    /// Levels from root to leaf inclusive; a lookup reads exactly this many
    /// blocks.
    pub fn depth(&self) -> u16 {
        self.depth
    }

    /// Exact lookup. Reads `depth` blocks.
    pub fn lookup(&self, store: &mut PageStore, key: &[u8]) -> Result<Option<Vec<u8>>> {
        let key = pad_key(key, self.config.key_width)?;
        let mut page = self.root;
        loop {
            let b = store.read(page)?;
            if node_is_leaf(&b) {
                let i = lower_bound(&b, &self.config, true, &key);
                if i < node_count(&b) && node_key(&b, &self.config, true, i) == key.as_slice() {
                    return Ok(Some(leaf_value(&b, &self.config, i).to_vec()));
                }
                return Ok(None);
            }
            page = interior_child(&b, &self.config, route(&b, &self.config, &key));
        }
    }

    /// Inserts one entry; duplicate keys are an error. Intended for tests
    /// and small updates; the build path is `bulk_build`.
    pub fn insert(&mut self, store: &mut PageStore, key: &[u8], value: &[u8]) -> Result<()> {
        let key = pad_key(key, self.config.key_width)?;
        if value.len() != self.config.value_width {
            return Err(Error::Invalid(format!(
                "value length {} does not match value width {}",
                value.len(),
                self.config.value_width
            )));
        }
        let split = self.insert_rec(store, self.root, &key, value)?;
        if let Some((sep, new_page)) = split {
            // Root split: the old root's first key seeds the left entry.
            let old_root_block = store.read(self.root)?;
            let leaf = node_is_leaf(&old_root_block);
            let first = if node_count(&old_root_block) > 0 {
                node_key(&old_root_block, &self.config, leaf, 0).to_vec()
            } else {
                vec![0u8; self.config.key_width]
            };
            let new_root_id = store.alloc()?;
            let node = NodeBuf {
                leaf: false,
                entries: vec![
                    (first, self.root.to_le_bytes().to_vec()),
                    (sep, new_page.to_le_bytes().to_vec()),
                ],
                right: NULL_PAGE,
            };
            store.write(new_root_id, &node.to_block(&self.config, store.block_size()))?;
            self.root = new_root_id;
            self.depth += 1;
        }
        self.entries += 1;
        Ok(())
    }

    fn insert_rec(
        &self,
        store: &mut PageStore,
        page: PageId,
        key: &[u8],
        value: &[u8],
    ) -> Result<Option<(Vec<u8>, PageId)>> {
        let block = store.read(page)?;
        let bs = store.block_size();
        if node_is_leaf(&block) {
            let i = lower_bound(&block, &self.config, true, key);
            if i < node_count(&block) && node_key(&block, &self.config, true, i) == key {
                return Err(Error::DuplicateKey);
            }
            let mut node = load_entries(&block, &self.config);
            node.entries.insert(i, (key.to_vec(), value.to_vec()));
            let cap = self.config.leaf_cap(bs);
            if node.entries.len() <= cap {
                store.write(page, &node.to_block(&self.config, bs))?;
                return Ok(None);
            }
            let mid = node.entries.len() / 2;
            let right_entries = node.entries.split_off(mid);
            let right_id = store.alloc()?;
            let sep = right_entries[0].0.clone();
            let right = NodeBuf {
                leaf: true,
                entries: right_entries,
                right: node.right,
            };
            node.right = right_id;
            store.write(right_id, &right.to_block(&self.config, bs))?;
            store.write(page, &node.to_block(&self.config, bs))?;
            return Ok(Some((sep, right_id)));
        }

        let idx = route(&block, &self.config, key);
        let child = interior_child(&block, &self.config, idx);
        let mut node = load_entries(&block, &self.config);
        // Separators are true lower bounds of their subtrees. A key below
        // the whole node's range would leave entry 0 stale-high, and a
        // later split of that child would promote a separator that lands
        // out of order, so lower the bound on the way down.
        if idx == 0 && key < node.entries[0].0.as_slice() {
            node.entries[0].0 = key.to_vec();
            store.write(page, &node.to_block(&self.config, bs))?;
        }
        let split = self.insert_rec(store, child, key, value)?;
        let Some((sep, new_child)) = split else {
            return Ok(None);
        };
        // The new separator goes right after the routed child.
        node.entries
            .insert(idx + 1, (sep, new_child.to_le_bytes().to_vec()));
        let cap = self.config.fanout(bs);
        if node.entries.len() <= cap {
            store.write(page, &node.to_block(&self.config, bs))?;
            return Ok(None);
        }
        let mid = node.entries.len() / 2;
        let right_entries = node.entries.split_off(mid);
        let right_id = store.alloc()?;
        let sep_up = right_entries[0].0.clone();
        let right = NodeBuf {
            leaf: false,
            entries: right_entries,
            right: NULL_PAGE,
        };
        store.write(right_id, &right.to_block(&self.config, bs))?;
        store.write(page, &node.to_block(&self.config, bs))?;
        Ok(Some((sep_up, right_id)))
    }

    /// Streaming scan of all keys with the given prefix, in key order.
    /// Reads the root-to-leaf path plus one block per additional leaf.
    pub fn scan_prefix<'t, 's>(
        &'t self,
        store: &'s mut PageStore,
        prefix: &[u8],
    ) -> Result<Cursor<'t, 's>> {
        if prefix.len() > self.config.key_width {
            return Err(Error::KeyTooLong {
                got: prefix.len(),
                width: self.config.key_width,
            });
        }
        let low = pad_key(prefix, self.config.key_width)?;
        let mut page = self.root;
        let leaf = loop {
            let b = store.read(page)?;
            if node_is_leaf(&b) {
                break b;
            }
            page = interior_child(&b, &self.config, route(&b, &self.config, &low));
        };
        let idx = lower_bound(&leaf, &self.config, true, &low);
        Ok(Cursor {
            tree: self,
            store,
            leaf,
            idx,
            prefix: prefix.to_vec(),
            done: false,
        })
    }

    /// Full in-order scan.
    pub fn scan_all<'t, 's>(&'t self, store: &'s mut PageStore) -> Result<Cursor<'t, 's>> {
        self.scan_prefix(store, &[])
    }

    /// Walks the whole tree and checks the structural invariants: uniform
    /// leaf depth, strictly sorted keys within and across leaves, child
    /// separators bounding their subtrees, and minimum fill on every node
    /// but the root. Returns the observed shape.
    pub fn check_structure(&self, store: &mut PageStore) -> Result<TreeShape> {
        let bs = store.block_size();
        let mut shape = TreeShape {
            depth: 0,
            levels: Vec::new(),
            leaves: 0,
        };
        // (page, level, lower bound) pairs, depth-first.
        let mut stack = vec![(self.root, 0usize, None::<Vec<u8>>)];
        let mut leaf_level: Option<usize> = None;
        let mut leaf_pages = Vec::new();
        while let Some((page, level, low)) = stack.pop() {
            let b = store.read(page)?;
            if shape.levels.len() <= level {
                shape.levels.resize(level + 1, 0);
            }
            shape.levels[level] += 1;
            let leaf = node_is_leaf(&b);
            let n = node_count(&b);
            let is_root = page == self.root;
            let cap = if leaf {
                self.config.leaf_cap(bs)
            } else {
                self.config.fanout(bs)
            };
            if !is_root && n < cap / 2 {
                return Err(Error::Invalid(format!(
                    "node {page} under half fill: {n} of {cap}"
                )));
            }
            if !leaf && n == 0 {
                return Err(Error::Invalid(format!("empty interior node {page}")));
            }
            for i in 1..n {
                if node_key(&b, &self.config, leaf, i - 1) >= node_key(&b, &self.config, leaf, i) {
                    return Err(Error::Invalid(format!("unsorted keys in node {page}")));
                }
            }
            if let Some(low) = &low {
                if n > 0 && node_key(&b, &self.config, leaf, 0) < low.as_slice() {
                    return Err(Error::Invalid(format!(
                        "node {page} holds a key below its separator"
                    )));
                }
            }
            if leaf {
                match leaf_level {
                    Some(l) if l != level => {
                        return Err(Error::Invalid("leaves at differing depths".into()))
                    }
                    None => leaf_level = Some(level),
                    _ => {}
                }
                leaf_pages.push(page);
                shape.leaves += 1;
            } else {
                for i in (0..n).rev() {
                    // Child 0 inherits no bound: its separator may be stale
                    // after inserts below the tree minimum.
                    let bound = if i == 0 {
                        low.clone()
                    } else {
                        Some(node_key(&b, &self.config, false, i).to_vec())
                    };
                    stack.push((interior_child(&b, &self.config, i), level + 1, bound));
                }
            }
        }
        shape.depth = shape.levels.len() as u16;
        if shape.depth != self.depth {
            return Err(Error::Invalid(format!(
                "recorded depth {} does not match walked depth {}",
                self.depth, shape.depth
            )));
        }

        // The right-sibling chain must visit every leaf in key order.
        let mut chained = Vec::new();
        let mut cur = {
            let mut page = self.root;
            loop {
                let b = store.read(page)?;
                if node_is_leaf(&b) {
                    break page;
                }
                page = interior_child(&b, &self.config, 0);
            }
        };
        let mut last_key: Option<Vec<u8>> = None;
        loop {
            chained.push(cur);
            let b = store.read(cur)?;
            for i in 0..node_count(&b) {
                let k = node_key(&b, &self.config, true, i).to_vec();
                if let Some(lk) = &last_key {
                    if *lk >= k {
                        return Err(Error::Invalid("leaf chain out of order".into()));
                    }
                }
                last_key = Some(k);
            }
            let right = node_right(&b);
            if right == NULL_PAGE {
                break;
            }
            cur = right;
        }
        if chained.len() != leaf_pages.len() {
            return Err(Error::Invalid(format!(
                "leaf chain visits {} leaves, tree has {}",
                chained.len(),
                leaf_pages.len()
            )));
        }
        Ok(shape)
    }
}

/// Observed tree shape from a structure check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeShape {
    pub depth: u16,
    /// Node count per level, root first.
    pub levels: Vec<usize>,
    pub leaves: usize,
}

/// Expected depth of a bulk-built tree from capacity arithmetic alone.
pub fn expected_depth(entries: u64, leaf_cap: usize, fanout: usize) -> u16 {
    if entries == 0 {
        return 1;
    }
    let mut nodes = entries.div_ceil(leaf_cap as u64);
    let mut depth = 1u16;
    while nodes > 1 {
        nodes = nodes.div_ceil(fanout as u64);
        depth += 1;
    }
    depth
}

/// Streaming prefix scan. Holds the current leaf in memory; advancing to
/// the next leaf costs one read.
pub struct Cursor<'t, 's> {
    tree: &'t BTree,
    store: &'s mut PageStore,
    leaf: Block,
    idx: usize,
    prefix: Vec<u8>,
    done: bool,
}

impl Cursor<'_, '_> {
    /// Next (key, value) in order, or None when the prefix range ends.
    pub fn next(&mut self) -> Result<Option<(Vec<u8>, Vec<u8>)>> {
        loop {
            if self.done {
                return Ok(None);
            }
            if self.idx >= node_count(&self.leaf) {
                let right = node_right(&self.leaf);
                if right == NULL_PAGE {
                    self.done = true;
                    return Ok(None);
                }
                self.leaf = self.store.read(right)?;
                self.idx = 0;
                continue;
            }
            let cfg = self.tree.config;
            let key = node_key(&self.leaf, &cfg, true, self.idx);
            if !key.starts_with(&self.prefix) {
                self.done = true;
                return Ok(None);
            }
            let out = (key.to_vec(), leaf_value(&self.leaf, &cfg, self.idx).to_vec());
            self.idx += 1;
            return Ok(Some(out));
        }
    }
}
