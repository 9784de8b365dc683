//! Out-of-line payload storage and fixed-width atom fields.
//!
//! A payload is a byte string stored in an extent of consecutive pages and
//! referenced by (first page, byte length), which fits a fixed-width tree
//! value slot. Because extents are contiguous, a reader can fetch any byte
//! range by touching only the pages that range spans; there is no chain to
//! walk. A region read therefore costs exactly the number of distinct
//! blocks under the range.
//!
//! [`PageMemo`] scopes that accounting to one logical operation: every page
//! is fetched (and counted) at most once per memo, so two overlapping
//! region reads within one lookup do not double-bill the shared page.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::Atom;
use crate::pager::{Block, PageId, PageStore, NULL_PAGE};

/// Encoded size of a [`PayloadRef`]: 4-byte page id + 4-byte byte length.
pub const PAYLOAD_REF_WIDTH: usize = 8;

/// Reference to one stored payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PayloadRef {
    pub first_page: PageId,
    pub byte_len: u32,
}

impl PayloadRef {
    pub const EMPTY: PayloadRef = PayloadRef {
        first_page: NULL_PAGE,
        byte_len: 0,
    };

    pub fn encode(&self) -> [u8; PAYLOAD_REF_WIDTH] {
        let mut b = [0u8; PAYLOAD_REF_WIDTH];
        b[0..4].copy_from_slice(&self.first_page.to_le_bytes());
        b[4..8].copy_from_slice(&self.byte_len.to_le_bytes());
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<PayloadRef> {
        if bytes.len() != PAYLOAD_REF_WIDTH {
            return Err(Error::Invalid(format!(
                "payload reference must be {PAYLOAD_REF_WIDTH} bytes, got {}",
                bytes.len()
            )));
        }
        Ok(PayloadRef {
            first_page: u32::from_le_bytes(bytes[0..4].try_into().unwrap()),
            byte_len: u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.byte_len == 0
    }

    /// Pages the payload occupies.
    pub fn blocks(&self, block_size: u32) -> u32 {
        self.byte_len.div_ceil(block_size)
    }
}

/// Writes `bytes` to a fresh extent of consecutive pages.
pub fn write_payload(store: &mut PageStore, bytes: &[u8]) -> Result<PayloadRef> {
    if bytes.is_empty() {
        return Ok(PayloadRef::EMPTY);
    }
    let byte_len = u32::try_from(bytes.len())
        .map_err(|_| Error::Invalid("payload exceeds 4 GiB".into()))?;
    let bs = store.block_size() as usize;
    let first = store.alloc()?;
    let mut page = first;
    for chunk in bytes.chunks(bs) {
        if page != first {
            let next = store.alloc()?;
            // The pager allocates sequentially, which is what makes extents
            // seekable; a gap here means that contract broke.
            if next != page {
                return Err(Error::Invalid("non-contiguous extent allocation".into()));
            }
        }
        let mut block = Block::zeroed(store.block_size());
        block[..chunk.len()].copy_from_slice(chunk);
        store.write(page, &block)?;
        page += 1;
    }
    Ok(PayloadRef {
        first_page: first,
        byte_len,
    })
}

/// Page fetches scoped to one logical operation. Each distinct page costs
/// one metered read no matter how many ranges land on it.
#[derive(Default)]
pub struct PageMemo {
    pages: HashMap<PageId, Block>,
}

impl PageMemo {
    pub fn new() -> PageMemo {
        PageMemo::default()
    }

    pub fn read(&mut self, store: &mut PageStore, id: PageId) -> Result<&Block> {
        if !self.pages.contains_key(&id) {
            let block = store.read(id)?;
            self.pages.insert(id, block);
        }
        Ok(&self.pages[&id])
    }

    /// Distinct pages fetched through this memo so far.
    pub fn pages_touched(&self) -> usize {
        self.pages.len()
    }
}

/// Reads `len` bytes starting at `offset` within the payload, touching only
/// the pages that range spans.
pub fn read_region(
    store: &mut PageStore,
    memo: &mut PageMemo,
    r: PayloadRef,
    offset: u32,
    len: u32,
) -> Result<Vec<u8>> {
    if len == 0 {
        return Ok(Vec::new());
    }
    let end = offset
        .checked_add(len)
        .filter(|&e| e <= r.byte_len)
        .ok_or_else(|| {
            Error::Invalid(format!(
                "payload region {offset}+{len} out of range (payload is {} bytes)",
                r.byte_len
            ))
        })?;
    let bs = store.block_size();
    let first = offset / bs;
    let last = (end - 1) / bs;
    let mut out = Vec::with_capacity(len as usize);
    for i in first..=last {
        let block = memo.read(store, r.first_page + i)?;
        let lo = if i == first { offset % bs } else { 0 } as usize;
        let hi = if i == last { (end - 1) % bs + 1 } else { bs } as usize;
        out.extend_from_slice(&block[lo..hi]);
    }
    Ok(out)
}

/// Reads the whole payload: exactly `blocks()` pages on a fresh memo.
pub fn read_all(store: &mut PageStore, memo: &mut PageMemo, r: PayloadRef) -> Result<Vec<u8>> {
    read_region(store, memo, r, 0, r.byte_len)
}

/// Build-time validation: the atom must fit the field width and must not
/// contain the 0x00 padding byte, or fixed-width encoding would not invert.
pub fn check_atom(atom: &Atom, width: usize) -> Result<()> {
    if atom.len() > width {
        return Err(Error::AtomTooLong {
            got: atom.len(),
            limit: width,
        });
    }
    if atom.as_bytes().contains(&0) {
        return Err(Error::Invalid(
            "atom contains a NUL byte; run ingestion cleaning first".into(),
        ));
    }
    Ok(())
}

/// Encodes an atom as a fixed-width field, right-padded with 0x00.
pub fn encode_field(atom: &Atom, width: usize) -> Result<Vec<u8>> {
    if atom.len() > width {
        return Err(Error::AtomTooLong {
            got: atom.len(),
            limit: width,
        });
    }
    let mut f = vec![0u8; width];
    f[..atom.len()].copy_from_slice(atom.as_bytes());
    Ok(f)
}

/// Decodes a fixed-width field back to an atom by stripping the 0x00
/// padding. Atoms never contain 0x00 (ingestion cleaning replaces it), so
/// this inverts `encode_field`.
pub fn decode_field(field: &[u8]) -> Result<Atom> {
    let end = field
        .iter()
        .rposition(|&b| b != 0)
        .map(|i| i + 1)
        .unwrap_or(0);
    Atom::new(field[..end].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn store(block_size: u32) -> (tempfile::TempDir, PageStore) {
        let dir = tempdir().unwrap();
        let s = PageStore::create(&dir.path().join("p.pg"), block_size).unwrap();
        (dir, s)
    }

    #[test]
    fn ref_encoding_round_trips() {
        let r = PayloadRef {
            first_page: 77,
            byte_len: 123_456,
        };
        assert_eq!(PayloadRef::decode(&r.encode()).unwrap(), r);
        assert!(PayloadRef::decode(&[0u8; 7]).is_err());
    }

    #[test]
    fn small_payload_round_trips_in_one_page() {
        let (_d, mut s) = store(512);
        let data = b"hello payload".to_vec();
        let r = write_payload(&mut s, &data).unwrap();
        assert_eq!(r.blocks(512), 1);
        s.reset_read_counter();
        let mut memo = PageMemo::new();
        assert_eq!(read_all(&mut s, &mut memo, r).unwrap(), data);
        assert_eq!(s.stats().reads, 1);
    }

    #[test]
    fn multi_page_payload_reads_exactly_its_blocks() {
        let (_d, mut s) = store(512);
        let data: Vec<u8> = (0..2000u32).map(|i| (i % 251) as u8).collect();
        let r = write_payload(&mut s, &data).unwrap();
        assert_eq!(r.blocks(512), 4);
        s.reset_read_counter();
        let mut memo = PageMemo::new();
        assert_eq!(read_all(&mut s, &mut memo, r).unwrap(), data);
        assert_eq!(s.stats().reads, 4);
    }

    #[test]
    fn region_read_touches_only_spanned_pages() {
        let (_d, mut s) = store(512);
        let data: Vec<u8> = (0..2048u32).map(|i| (i % 251) as u8).collect();
        let r = write_payload(&mut s, &data).unwrap();

        // Inside one page.
        s.reset_read_counter();
        let mut memo = PageMemo::new();
        let got = read_region(&mut s, &mut memo, r, 600, 100).unwrap();
        assert_eq!(got, &data[600..700]);
        assert_eq!(s.stats().reads, 1);

        // Straddling a page boundary.
        s.reset_read_counter();
        let mut memo = PageMemo::new();
        let got = read_region(&mut s, &mut memo, r, 500, 24).unwrap();
        assert_eq!(got, &data[500..524]);
        assert_eq!(s.stats().reads, 2);

        // Exactly up to a boundary stays on one page.
        s.reset_read_counter();
        let mut memo = PageMemo::new();
        read_region(&mut s, &mut memo, r, 0, 512).unwrap();
        assert_eq!(s.stats().reads, 1);
    }

    #[test]
    fn memo_counts_overlapping_regions_once() {
        let (_d, mut s) = store(512);
        let data = vec![7u8; 1500];
        let r = write_payload(&mut s, &data).unwrap();
        s.reset_read_counter();
        let mut memo = PageMemo::new();
        read_region(&mut s, &mut memo, r, 0, 100).unwrap();
        read_region(&mut s, &mut memo, r, 50, 400).unwrap(); // same page
        read_region(&mut s, &mut memo, r, 400, 200).unwrap(); // pages 0 and 1
        assert_eq!(s.stats().reads, 2);
        assert_eq!(memo.pages_touched(), 2);

        // A fresh memo is a fresh operation and pays again.
        let mut memo = PageMemo::new();
        read_region(&mut s, &mut memo, r, 0, 100).unwrap();
        assert_eq!(s.stats().reads, 3);
    }

    #[test]
    fn empty_payload_costs_nothing() {
        let (_d, mut s) = store(512);
        let r = write_payload(&mut s, &[]).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.blocks(512), 0);
        s.reset_read_counter();
        let mut memo = PageMemo::new();
        assert!(read_all(&mut s, &mut memo, r).unwrap().is_empty());
        assert_eq!(s.stats().reads, 0);
    }

    #[test]
    fn out_of_range_region_is_an_error() {
        let (_d, mut s) = store(512);
        let r = write_payload(&mut s, &[1, 2, 3]).unwrap();
        let mut memo = PageMemo::new();
        assert!(read_region(&mut s, &mut memo, r, 2, 2).is_err());
        assert!(read_region(&mut s, &mut memo, r, u32::MAX, 2).is_err());
    }

    #[test]
    fn payloads_written_back_to_back_stay_separate() {
        let (_d, mut s) = store(512);
        let a = write_payload(&mut s, &vec![1u8; 700]).unwrap();
        let b = write_payload(&mut s, &vec![2u8; 700]).unwrap();
        let mut memo = PageMemo::new();
        assert_eq!(read_all(&mut s, &mut memo, a).unwrap(), vec![1u8; 700]);
        assert_eq!(read_all(&mut s, &mut memo, b).unwrap(), vec![2u8; 700]);
        assert_eq!(b.first_page, a.first_page + 2);
    }

    #[test]
    fn field_encoding_round_trips_and_validates() {
        let a = Atom::text("doc1");
        let f = encode_field(&a, 8).unwrap();
        assert_eq!(f.len(), 8);
        assert_eq!(decode_field(&f).unwrap(), a);
        assert!(matches!(
            encode_field(&Atom::text("much too long"), 4),
            Err(Error::AtomTooLong { .. })
        ));
        assert!(decode_field(&[0u8; 4]).is_err(), "all padding is no atom");
    }
}
