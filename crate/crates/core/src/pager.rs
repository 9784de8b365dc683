//! Fixed-size block storage with exact I/O accounting.
//!
//! One file per index family. Page 1 is the header: magic, version, block
//! size, store metadata, and a directory mapping tree names to their root
//! pages. Page id 0 is the null reference. All on-disk integers are
//! little-endian, so files are bit-identical across platforms.
//!
//! Metering contract: `read` increments the read counter by exactly one per
//! call unless the block is served from the optional cache. Benchmarks run
//! without a cache, so counted reads equal block fetches; the cache exists
//! only for interactive (unmetered) use.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::ops::{Deref, DerefMut};
use std::path::Path;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type PageId = u32;

pub const NULL_PAGE: PageId = 0;

const MAGIC: &[u8; 8] = b"TRIPTPG1";
const VERSION: u16 = 1;
const MIN_BLOCK_SIZE: u32 = 512;

/// One block of file data; length always equals the store's block size.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Block(Box<[u8]>);

impl Block {
    pub fn zeroed(block_size: u32) -> Self {
        Block(vec![0u8; block_size as usize].into_boxed_slice())
    }

    pub fn from_vec(v: Vec<u8>) -> Self {
        Block(v.into_boxed_slice())
    }
}

impl Deref for Block {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl DerefMut for Block {
    fn deref_mut(&mut self) -> &mut [u8] {
        &mut self.0
    }
}

/// Block I/O counters. `allocated` includes the header page.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IoStats {
    pub reads: u64,
    pub writes: u64,
    pub allocated: u32,
}

/// Which index family a store holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Triplet,
    Map,
    Hex,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Triplet => "triplet",
            Family::Map => "map",
            Family::Hex => "hex",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Family::Triplet => 1,
            Family::Map => 2,
            Family::Hex => 3,
        }
    }

    fn from_tag(t: u8) -> Option<Family> {
        match t {
            1 => Some(Family::Triplet),
            2 => Some(Family::Map),
            3 => Some(Family::Hex),
            _ => None,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Family> {
        match s {
            "triplet" => Ok(Family::Triplet),
            "map" => Ok(Family::Map),
            "hex" => Ok(Family::Hex),
            other => Err(Error::Invalid(format!("unknown index family {other:?}"))),
        }
    }
}

/// Store-level metadata persisted in the header.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StoreMeta {
    pub family: Option<Family>,
    /// Key budget per atom: tree keys pad each atom field to this width.
    pub atom_width: u16,
    /// Width of one atom field inside out-of-line payloads. Computed from
    /// the data at build time, never larger than `atom_width`.
    pub payload_atom_width: u16,
    /// Family-specific option bits (e.g. mirrored bucket orders).
    pub flags: u8,
}

/// Directory entry for one named tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeMeta {
    pub root: PageId,
    pub key_width: u16,
    pub value_width: u16,
    pub entries: u64,
    /// Number of levels, root to leaf inclusive. A lookup reads exactly
    /// this many blocks.
    pub depth: u16,
}

struct BlockCache {
    capacity: usize,
    tick: u64,
    map: HashMap<PageId, (u64, Block)>,
}

impl BlockCache {
    fn new(capacity: usize) -> Self {
        BlockCache {
            capacity: capacity.max(1),
            tick: 0,
            map: HashMap::new(),
        }
    }

    fn get(&mut self, id: PageId) -> Option<Block> {
        self.tick += 1;
        let tick = self.tick;
        self.map.get_mut(&id).map(|(t, b)| {
            *t = tick;
            b.clone()
        })
    }

    fn put(&mut self, id: PageId, block: Block) {
        self.tick += 1;
        if self.map.len() >= self.capacity && !self.map.contains_key(&id) {
            if let Some((&oldest, _)) = self.map.iter().min_by_key(|(_, (t, _))| *t) {
                self.map.remove(&oldest);
            }
        }
        self.map.insert(id, (self.tick, block));
    }
}

/// A paged file. Single writer; all access goes through `&mut self`.
pub struct PageStore {
    file: File,
    block_size: u32,
    allocated: u32,
    stats: IoStats,
    meta: StoreMeta,
    directory: Vec<(String, TreeMeta)>,
    cache: Option<BlockCache>,
}

impl PageStore {
    /// Creates a new store with only the header page allocated.
    pub fn create(path: &Path, block_size: u32) -> Result<PageStore> {
        if block_size < MIN_BLOCK_SIZE || !block_size.is_power_of_two() {
            return Err(Error::BadBlockSize(block_size));
        }
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        file.set_len(block_size as u64)?;
        let mut store = PageStore {
            file,
            block_size,
            allocated: 1,
            stats: IoStats {
                allocated: 1,
                ..IoStats::default()
            },
            meta: StoreMeta::default(),
            directory: Vec::new(),
            cache: None,
        };
        store.write_header()?;
        Ok(store)
    }

    /// Opens an existing store in metered mode (no cache).
    pub fn open(path: &Path) -> Result<PageStore> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        Self::from_file(file)
    }

    /// Opens read-only; writes and allocation will fail at the OS level.
    pub fn open_readonly(path: &Path) -> Result<PageStore> {
        let file = OpenOptions::new().read(true).open(path)?;
        Self::from_file(file)
    }

    fn from_file(mut file: File) -> Result<PageStore> {
        let mut head = [0u8; 32];
        file.seek(SeekFrom::Start(0))?;
        file.read_exact(&mut head)
            .map_err(|_| Error::BadHeader("file shorter than a header".into()))?;
        if &head[0..8] != MAGIC {
            return Err(Error::BadHeader("bad magic".into()));
        }
        let version = u16::from_le_bytes([head[8], head[9]]);
        if version != VERSION {
            return Err(Error::BadHeader(format!("unsupported version {version}")));
        }
        let block_size = u32::from_le_bytes(head[10..14].try_into().unwrap());
        if block_size < MIN_BLOCK_SIZE || !block_size.is_power_of_two() {
            return Err(Error::BadHeader(format!("bad block size {block_size}")));
        }
        let mut header = vec![0u8; block_size as usize];
        file.seek(SeekFrom::Start(0))?;
        file.read_exact(&mut header)
            .map_err(|_| Error::BadHeader("truncated header page".into()))?;

        let allocated = u32::from_le_bytes(header[14..18].try_into().unwrap());
        if allocated == 0 {
            return Err(Error::BadHeader("zero allocation count".into()));
        }
        let meta = StoreMeta {
            family: Family::from_tag(header[18]),
            atom_width: u16::from_le_bytes(header[19..21].try_into().unwrap()),
            payload_atom_width: u16::from_le_bytes(header[21..23].try_into().unwrap()),
            flags: header[23],
        };
        let count = u16::from_le_bytes(header[24..26].try_into().unwrap()) as usize;
        let mut directory = Vec::with_capacity(count);
        let mut at = 26usize;
        for _ in 0..count {
            let err = || Error::BadHeader("truncated directory".into());
            let name_len = *header.get(at).ok_or_else(err)? as usize;
            at += 1;
            let name_bytes = header.get(at..at + name_len).ok_or_else(err)?;
            let name = String::from_utf8(name_bytes.to_vec())
                .map_err(|_| Error::BadHeader("non-utf8 tree name".into()))?;
            at += name_len;
            let rest = header.get(at..at + 18).ok_or_else(err)?;
            let tree = TreeMeta {
                root: u32::from_le_bytes(rest[0..4].try_into().unwrap()),
                key_width: u16::from_le_bytes(rest[4..6].try_into().unwrap()),
                value_width: u16::from_le_bytes(rest[6..8].try_into().unwrap()),
                entries: u64::from_le_bytes(rest[8..16].try_into().unwrap()),
                depth: u16::from_le_bytes(rest[16..18].try_into().unwrap()),
            };
            at += 18;
            directory.push((name, tree));
        }

        Ok(PageStore {
            file,
            block_size,
            allocated,
            stats: IoStats {
                allocated,
                ..IoStats::default()
            },
            meta,
            directory,
            cache: None,
        })
    }

    /// Enables or disables the read cache. With a cache, hits do not count
    /// as reads.
    pub fn set_cache(&mut self, capacity_blocks: Option<usize>) {
        self.cache = capacity_blocks.map(BlockCache::new);
    }

    pub fn is_metered(&self) -> bool {
        self.cache.is_none()
    }

    pub fn block_size(&self) -> u32 {
        self.block_size
    }

    pub fn meta(&self) -> StoreMeta {
        self.meta
    }

    pub fn set_meta(&mut self, meta: StoreMeta) {
        self.meta = meta;
    }

    pub fn stats(&self) -> IoStats {
        self.stats
    }

    /// Zeroes only the read counter; writes and allocation stand.
    pub fn reset_read_counter(&mut self) {
        self.stats.reads = 0;
    }

    /// Allocates a fresh zeroed page and returns its id. Ids are sequential,
    /// so consecutive allocations form a contiguous extent.
    pub fn alloc(&mut self) -> Result<PageId> {
        let id = self
            .allocated
            .checked_add(1)
            .ok_or_else(|| Error::Invalid("page id space exhausted".into()))?;
        self.allocated = id;
        self.stats.allocated = id;
        self.file
            .set_len(self.block_size as u64 * self.allocated as u64)?;
        Ok(id)
    }

    fn check_id(&self, id: PageId) -> Result<()> {
        if id == NULL_PAGE {
            return Err(Error::NullPage);
        }
        if id > self.allocated {
            return Err(Error::PageOutOfRange(id, self.allocated));
        }
        Ok(())
    }

    fn offset(&self, id: PageId) -> u64 {
        (id as u64 - 1) * self.block_size as u64
    }

    /// Reads one block. Counts one read unless served from the cache.
    pub fn read(&mut self, id: PageId) -> Result<Block> {
        self.check_id(id)?;
        if let Some(cache) = self.cache.as_mut() {
            if let Some(b) = cache.get(id) {
                return Ok(b);
            }
        }
        let mut block = Block::zeroed(self.block_size);
        self.file.seek(SeekFrom::Start(self.offset(id)))?;
        self.file.read_exact(&mut block)?;
        self.stats.reads += 1;
        if let Some(cache) = self.cache.as_mut() {
            cache.put(id, block.clone());
        }
        Ok(block)
    }

    /// Writes one block. Counts one write.
    pub fn write(&mut self, id: PageId, block: &Block) -> Result<()> {
        self.check_id(id)?;
        if block.len() != self.block_size as usize {
            return Err(Error::Invalid(format!(
                "block length {} does not match block size {}",
                block.len(),
                self.block_size
            )));
        }
        self.file.seek(SeekFrom::Start(self.offset(id)))?;
        self.file.write_all(block)?;
        self.stats.writes += 1;
        if let Some(cache) = self.cache.as_mut() {
            cache.put(id, block.clone());
        }
        Ok(())
    }

    /// Upserts a directory entry. The header is persisted on flush.
    pub fn put_tree(&mut self, name: &str, tree: TreeMeta) -> Result<()> {
        if name.len() > u8::MAX as usize {
            return Err(Error::Invalid(format!("tree name too long: {name:?}")));
        }
        match self.directory.iter_mut().find(|(n, _)| n == name) {
            Some((_, t)) => *t = tree,
            None => self.directory.push((name.to_string(), tree)),
        }
        Ok(())
    }

    pub fn tree(&self, name: &str) -> Result<TreeMeta> {
        self.directory
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::UnknownTree(name.to_string()))
    }

    pub fn tree_names(&self) -> Vec<String> {
        self.directory.iter().map(|(n, _)| n.clone()).collect()
    }

    fn write_header(&mut self) -> Result<()> {
        let mut header = vec![0u8; self.block_size as usize];
        header[0..8].copy_from_slice(MAGIC);
        header[8..10].copy_from_slice(&VERSION.to_le_bytes());
        header[10..14].copy_from_slice(&self.block_size.to_le_bytes());
        header[14..18].copy_from_slice(&self.allocated.to_le_bytes());
        header[18] = self.meta.family.map_or(0, Family::tag);
        header[19..21].copy_from_slice(&self.meta.atom_width.to_le_bytes());
        header[21..23].copy_from_slice(&self.meta.payload_atom_width.to_le_bytes());
        header[23] = self.meta.flags;
        header[24..26].copy_from_slice(&(self.directory.len() as u16).to_le_bytes());
        let mut at = 26usize;
        for (name, tree) in &self.directory {
            let need = 1 + name.len() + 18;
            if at + need > header.len() {
                return Err(Error::DirectoryFull);
            }
            header[at] = name.len() as u8;
            at += 1;
            header[at..at + name.len()].copy_from_slice(name.as_bytes());
            at += name.len();
            header[at..at + 4].copy_from_slice(&tree.root.to_le_bytes());
            header[at + 4..at + 6].copy_from_slice(&tree.key_width.to_le_bytes());
            header[at + 6..at + 8].copy_from_slice(&tree.value_width.to_le_bytes());
            header[at + 8..at + 16].copy_from_slice(&tree.entries.to_le_bytes());
            header[at + 16..at + 18].copy_from_slice(&tree.depth.to_le_bytes());
            at += 18;
        }
        self.file.seek(SeekFrom::Start(0))?;
        self.file.write_all(&header)?;
        Ok(())
    }

    /// Persists the header and syncs file contents to disk.
    pub fn flush(&mut self) -> Result<()> {
        self.write_header()?;
        self.file.sync_all()?;
        Ok(())
    }
}
