//! The single-tree index: one B+tree keyed on every atom of the graph.
//! Each key's value points at an out-of-line payload holding the atom's
//! complete neighbourhood, split into three buckets by the role the atom
//! plays. One descent therefore answers a pattern no matter which position
//! its constant occupies, and two patterns sharing an atom can be answered
//! from a single payload.

use std::collections::BTreeMap;

use crate::btree::{BTree, TreeConfig};
use crate::error::{Error, Result};
use crate::model::{
    matches, merge_rows, rows_compatible, Atom, BindingRow, Graph, Role, Sap, Term, Triple,
};
use crate::pager::{Family, PageStore, StoreMeta};
use crate::payload::{
    check_atom, decode_field, encode_field, read_all, read_region, write_payload, PageMemo,
    PayloadRef, PAYLOAD_REF_WIDTH,
};

pub const TREE_NAME: &str = "triplet";

/// Payload header: three u32 pair counts, one per bucket.
const HEADER_LEN: u32 = 12;

/// Decoded payload of one atom k. Pair layout per bucket, each pair sorted
/// ascending:
///   subject bucket:   (o, p) of the triples (k, p, o)
///   predicate bucket: (s, o) of the triples (s, k, o)
///   object bucket:    (s, p) of the triples (s, p, k)
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Payload {
    pub s_bucket: Vec<(Atom, Atom)>,
    pub p_bucket: Vec<(Atom, Atom)>,
    pub o_bucket: Vec<(Atom, Atom)>,
}

impl Payload {
    pub fn bucket(&self, role: Role) -> &[(Atom, Atom)] {
        match role {
            Role::Subject => &self.s_bucket,
            Role::Predicate => &self.p_bucket,
            Role::Object => &self.o_bucket,
        }
    }

    pub fn pair_count(&self) -> usize {
        self.s_bucket.len() + self.p_bucket.len() + self.o_bucket.len()
    }

    /// Serialized size at a given pair-field width.
    pub fn byte_len(&self, paw: u16) -> u32 {
        HEADER_LEN + (self.pair_count() * 2 * paw as usize) as u32
    }

    fn encode(&self, paw: usize) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.byte_len(paw as u16) as usize);
        for bucket in [&self.s_bucket, &self.p_bucket, &self.o_bucket] {
            out.extend_from_slice(&(bucket.len() as u32).to_le_bytes());
        }
        for bucket in [&self.s_bucket, &self.p_bucket, &self.o_bucket] {
            for (a, b) in bucket {
                out.extend_from_slice(&encode_field(a, paw)?);
                out.extend_from_slice(&encode_field(b, paw)?);
            }
        }
        Ok(out)
    }

    fn decode(bytes: &[u8], paw: usize) -> Result<Payload> {
        if bytes.len() < HEADER_LEN as usize {
            return Err(Error::Invalid("payload shorter than its header".into()));
        }
        let counts: Vec<usize> = (0..3)
            .map(|i| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize)
            .collect();
        let expect = HEADER_LEN as usize + counts.iter().sum::<usize>() * 2 * paw;
        if bytes.len() != expect {
            return Err(Error::Invalid(format!(
                "payload length {} does not match header (expected {expect})",
                bytes.len()
            )));
        }
        let mut at = HEADER_LEN as usize;
        let mut buckets = Vec::with_capacity(3);
        for count in counts {
            let pairs = decode_pairs(&bytes[at..at + count * 2 * paw], paw)?;
            at += count * 2 * paw;
            buckets.push(pairs);
        }
        let o_bucket = buckets.pop().unwrap();
        let p_bucket = buckets.pop().unwrap();
        let s_bucket = buckets.pop().unwrap();
        Ok(Payload {
            s_bucket,
            p_bucket,
            o_bucket,
        })
    }
}

fn decode_pairs(bytes: &[u8], paw: usize) -> Result<Vec<(Atom, Atom)>> {
    if bytes.len() % (2 * paw) != 0 {
        return Err(Error::Invalid("bucket bytes not a whole number of pairs".into()));
    }
    bytes
        .chunks_exact(2 * paw)
        .map(|pair| Ok((decode_field(&pair[..paw])?, decode_field(&pair[paw..])?)))
        .collect()
}

/// Rebuilds the triple a bucket pair came from, given the key atom and the
/// role bucket it was read out of.
fn reconstruct(k: &Atom, role: Role, pair: &(Atom, Atom)) -> Triple {
    match role {
        Role::Subject => Triple::new(k.clone(), pair.1.clone(), pair.0.clone()),
        Role::Predicate => Triple::new(pair.0.clone(), k.clone(), pair.1.clone()),
        Role::Object => Triple::new(pair.0.clone(), pair.1.clone(), k.clone()),
    }
}

/// How a single pattern is answered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SapPlan {
    /// Descend on one constant and read the bucket for its role.
    Lookup { atom: Atom, role: Role },
    /// No constants: walk every leaf and every payload's subject bucket.
    FullScan,
}

/// Chooses the descent constant for a pattern. Subject first, then object,
/// then predicate: subject and object buckets stay small on typical graphs
/// while a predicate bucket can span a large fraction of the whole graph.
pub fn plan_sap(sap: &Sap) -> SapPlan {
    for role in [Role::Subject, Role::Object, Role::Predicate] {
        if let Term::Atom(a) = sap.get(role) {
            return SapPlan::Lookup {
                atom: a.clone(),
                role,
            };
        }
    }
    SapPlan::FullScan
}

/// Handle over an open store holding the single-tree index.
pub struct TripletIndex {
    tree: BTree,
    payload_atom_width: u16,
}

impl TripletIndex {
    /// Builds the index over a graph into a fresh store: payload extents
    /// first, then one bulk-loaded tree over all atoms.
    pub fn build(store: &mut PageStore, g: &Graph, atom_width: u16) -> Result<TripletIndex> {
        let width = atom_width as usize;
        let mut paw = 1usize;
        for t in g.iter() {
            for a in t.atoms() {
                check_atom(a, width)?;
                paw = paw.max(a.len());
            }
        }

        let mut payloads: BTreeMap<Atom, Payload> = BTreeMap::new();
        for t in g.iter() {
            payloads
                .entry(t.s.clone())
                .or_default()
                .s_bucket
                .push((t.o.clone(), t.p.clone()));
            payloads
                .entry(t.p.clone())
                .or_default()
                .p_bucket
                .push((t.s.clone(), t.o.clone()));
            payloads
                .entry(t.o.clone())
                .or_default()
                .o_bucket
                .push((t.s.clone(), t.p.clone()));
        }

        let mut entries = Vec::with_capacity(payloads.len());
        for (atom, payload) in &mut payloads {
            payload.s_bucket.sort();
            payload.p_bucket.sort();
            payload.o_bucket.sort();
            let r = write_payload(store, &payload.encode(paw)?)?;
            entries.push((encode_field(atom, width)?, r.encode().to_vec()));
        }

        let config = TreeConfig {
            key_width: width,
            value_width: PAYLOAD_REF_WIDTH,
        };
        let tree = BTree::bulk_build(store, config, entries)?;
        store.set_meta(StoreMeta {
            family: Some(Family::Triplet),
            atom_width,
            payload_atom_width: paw as u16,
            flags: 0,
        });
        store.put_tree(TREE_NAME, tree.meta())?;
        store.flush()?;
        Ok(TripletIndex {
            tree,
            payload_atom_width: paw as u16,
        })
    }

    pub fn open(store: &PageStore) -> Result<TripletIndex> {
        let meta = store.meta();
        if meta.family != Some(Family::Triplet) {
            return Err(Error::FamilyMismatch {
                found: meta.family.map_or("none", Family::as_str).into(),
                expected: Family::Triplet.as_str().into(),
            });
        }
        Ok(TripletIndex {
            tree: BTree::from_meta(store.tree(TREE_NAME)?),
            payload_atom_width: meta.payload_atom_width,
        })
    }

    pub fn tree(&self) -> &BTree {
        &self.tree
    }

    pub fn atom_width(&self) -> u16 {
        self.tree.config().key_width as u16
    }

    pub fn payload_atom_width(&self) -> u16 {
        self.payload_atom_width
    }

    /// Number of indexed atoms.
    pub fn atoms(&self) -> u64 {
        self.tree.entries()
    }

    fn lookup_ref(&self, store: &mut PageStore, k: &Atom) -> Result<Option<PayloadRef>> {
        if k.len() > self.tree.config().key_width {
            // Nothing that long was ever indexed.
            return Ok(None);
        }
        match self.tree.lookup(store, k.as_bytes())? {
            Some(v) => Ok(Some(PayloadRef::decode(&v)?)),
            None => Ok(None),
        }
    }

    /// Fetches an atom's complete payload: one descent plus every payload
    /// page, so the read bill is depth + ceil(byte_len / block_size).
    pub fn payload(&self, store: &mut PageStore, k: &Atom) -> Result<Option<Payload>> {
        let Some(r) = self.lookup_ref(store, k)? else {
            return Ok(None);
        };
        let mut memo = PageMemo::new();
        let bytes = read_all(store, &mut memo, r)?;
        Ok(Some(Payload::decode(
            &bytes,
            self.payload_atom_width as usize,
        )?))
    }

    /// Reads one bucket of an atom's payload: the header locates the
    /// bucket, then only the pages the bucket spans are fetched. Pages
    /// shared between header and bucket are billed once.
    pub fn bucket(
        &self,
        store: &mut PageStore,
        k: &Atom,
        role: Role,
    ) -> Result<Option<Vec<(Atom, Atom)>>> {
        let Some(r) = self.lookup_ref(store, k)? else {
            return Ok(None);
        };
        let mut memo = PageMemo::new();
        let pairs = self.bucket_via(store, &mut memo, r, role)?;
        Ok(Some(pairs))
    }

    /// Bucket read through a caller-owned memo, so several bucket reads
    /// against the same payload bill their shared pages once.
    fn bucket_via(
        &self,
        store: &mut PageStore,
        memo: &mut PageMemo,
        r: PayloadRef,
        role: Role,
    ) -> Result<Vec<(Atom, Atom)>> {
        let paw = self.payload_atom_width as usize;
        let header = read_region(store, memo, r, 0, HEADER_LEN)?;
        let counts: Vec<u32> = (0..3)
            .map(|i| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()))
            .collect();
        let idx = match role {
            Role::Subject => 0,
            Role::Predicate => 1,
            Role::Object => 2,
        };
        let pair_bytes = 2 * paw as u32;
        let offset = HEADER_LEN + counts[..idx].iter().sum::<u32>() * pair_bytes;
        let bytes = read_region(store, memo, r, offset, counts[idx] * pair_bytes)?;
        decode_pairs(&bytes, paw)
    }

    /// Answers one pattern. A pattern with any constant costs one descent
    /// plus one bucket read; the all-variable pattern walks the leaves and
    /// every subject bucket (each triple lives in exactly one of those).
    pub fn eval_sap(&self, store: &mut PageStore, sap: &Sap) -> Result<Vec<BindingRow>> {
        let mut out = Vec::new();
        match plan_sap(sap) {
            SapPlan::Lookup { atom, role } => {
                let Some(pairs) = self.bucket(store, &atom, role)? else {
                    return Ok(out);
                };
                for pair in &pairs {
                    if let Some(row) = matches(&reconstruct(&atom, role, pair), sap) {
                        out.push(row);
                    }
                }
            }
            SapPlan::FullScan => {
                for t in self.scan_triples(store)? {
                    if let Some(row) = matches(&t, sap) {
                        out.push(row);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Every triple of the indexed graph, rebuilt from the subject buckets
    /// in (s, o, p) order.
    pub fn scan_triples(&self, store: &mut PageStore) -> Result<Vec<Triple>> {
        let mut refs = Vec::with_capacity(self.tree.entries() as usize);
        {
            let mut cursor = self.tree.scan_all(store)?;
            while let Some((key, value)) = cursor.next()? {
                refs.push((decode_field(&key)?, PayloadRef::decode(&value)?));
            }
        }
        let mut out = Vec::new();
        for (atom, r) in refs {
            let mut memo = PageMemo::new();
            for pair in self.bucket_via(store, &mut memo, r, Role::Subject)? {
                out.push(reconstruct(&atom, Role::Subject, &pair));
            }
        }
        Ok(out)
    }

    /// Answers two patterns that share the constant `k` (at `r1` in the
    /// first, `r2` in the second) with a single descent: both buckets come
    /// out of one payload fetch, then the two row sets join in memory.
    pub fn self_join(
        &self,
        store: &mut PageStore,
        k: &Atom,
        r1: Role,
        sap1: &Sap,
        r2: Role,
        sap2: &Sap,
    ) -> Result<Vec<BindingRow>> {
        debug_assert_eq!(sap1.get(r1), &Term::Atom(k.clone()));
        debug_assert_eq!(sap2.get(r2), &Term::Atom(k.clone()));
        let Some(r) = self.lookup_ref(store, k)? else {
            return Ok(Vec::new());
        };
        let mut memo = PageMemo::new();
        let pairs1 = self.bucket_via(store, &mut memo, r, r1)?;
        let pairs2 = if r2 == r1 {
            pairs1.clone()
        } else {
            self.bucket_via(store, &mut memo, r, r2)?
        };
        let rows1: Vec<BindingRow> = pairs1
            .iter()
            .filter_map(|p| matches(&reconstruct(k, r1, p), sap1))
            .collect();
        let rows2: Vec<BindingRow> = pairs2
            .iter()
            .filter_map(|p| matches(&reconstruct(k, r2, p), sap2))
            .collect();
        let mut out = Vec::new();
        for a in &rows1 {
            for b in &rows2 {
                if rows_compatible(a, b) {
                    out.push(merge_rows(a, b));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{atom, docs_graph};
    use crate::model::{role_sets, stats};
    use tempfile::tempdir;

    fn built(block_size: u32) -> (tempfile::TempDir, PageStore, TripletIndex) {
        let dir = tempdir().unwrap();
        let mut store = PageStore::create(&dir.path().join("t.idx"), block_size).unwrap();
        let idx = TripletIndex::build(&mut store, &docs_graph(), 64).unwrap();
        (dir, store, idx)
    }

    fn pair(a: &str, b: &str) -> (Atom, Atom) {
        (atom(a), atom(b))
    }

    #[test]
    fn doc1_payload_buckets() {
        let (_d, mut store, idx) = built(512);
        let p = idx.payload(&mut store, &atom("doc1")).unwrap().unwrap();
        assert_eq!(p.s_bucket, vec![pair("4/5", "rating"), pair("PDF", "type")]);
        assert!(p.p_bucket.is_empty());
        assert_eq!(p.o_bucket, vec![pair("Yamada", "authored")]);
    }

    #[test]
    fn knows_payload_buckets() {
        let (_d, mut store, idx) = built(512);
        let p = idx.payload(&mut store, &atom("knows")).unwrap().unwrap();
        assert_eq!(p.s_bucket, vec![pair("social_action", "is_a_kind_of")]);
        assert_eq!(p.p_bucket, vec![pair("Yamada", "McShea")]);
        assert!(p.o_bucket.is_empty());
    }

    #[test]
    fn one_key_per_atom_and_pair_mass_is_three_per_triple() {
        let (_d, mut store, idx) = built(512);
        let g = docs_graph();
        let atoms = role_sets(&g).atoms();
        assert_eq!(idx.atoms(), atoms.len() as u64);
        assert_eq!(store.tree_names(), vec!["triplet".to_string()]);
        let mut pairs = 0;
        for a in &atoms {
            pairs += idx.payload(&mut store, a).unwrap().unwrap().pair_count();
        }
        assert_eq!(pairs, 3 * g.len());
    }

    #[test]
    fn single_triple_graph_has_three_keys() {
        let dir = tempdir().unwrap();
        let mut store = PageStore::create(&dir.path().join("t.idx"), 512).unwrap();
        let g = Graph::from_triples(vec![Triple::new(atom("s"), atom("p"), atom("o"))]);
        let idx = TripletIndex::build(&mut store, &g, 16).unwrap();
        assert_eq!(idx.atoms(), 3);
        assert_eq!(
            idx.payload(&mut store, &atom("p")).unwrap().unwrap().p_bucket,
            vec![pair("s", "o")]
        );
    }

    #[test]
    fn payload_width_is_the_longest_atom() {
        let (_d, store, idx) = built(512);
        assert_eq!(idx.payload_atom_width(), 13); // social_action
        assert_eq!(store.meta().payload_atom_width, 13);
        assert_eq!(store.meta().atom_width, 64);
    }

    #[test]
    fn plan_prefers_subject_then_object_then_predicate() {
        let s = || Term::Atom(atom("s"));
        let v = || Term::var("v");
        let plan = |sap: &Sap| plan_sap(sap);
        assert_eq!(
            plan(&Sap::new(s(), s(), s())),
            SapPlan::Lookup {
                atom: atom("s"),
                role: Role::Subject
            }
        );
        assert_eq!(
            plan(&Sap::new(v(), s(), s())),
            SapPlan::Lookup {
                atom: atom("s"),
                role: Role::Object
            }
        );
        assert_eq!(
            plan(&Sap::new(v(), s(), v())),
            SapPlan::Lookup {
                atom: atom("s"),
                role: Role::Predicate
            }
        );
        assert_eq!(plan(&Sap::new(v(), v(), v())), SapPlan::FullScan);
    }

    #[test]
    fn eval_matches_brute_force_on_every_bound_shape() {
        let (_d, mut store, idx) = built(512);
        let g = docs_graph();
        let shapes: Vec<Sap> = vec![
            Sap::new(Term::Atom(atom("doc1")), Term::var("p"), Term::var("o")),
            Sap::new(Term::var("s"), Term::Atom(atom("authored")), Term::var("o")),
            Sap::new(Term::var("s"), Term::var("p"), Term::Atom(atom("MP3"))),
            Sap::new(Term::Atom(atom("doc3")), Term::Atom(atom("type")), Term::var("o")),
            Sap::new(Term::Atom(atom("Yamada")), Term::var("p"), Term::Atom(atom("doc1"))),
            Sap::new(Term::var("s"), Term::Atom(atom("type")), Term::Atom(atom("MP3"))),
            Sap::new(
                Term::Atom(atom("doc1")),
                Term::Atom(atom("type")),
                Term::Atom(atom("PDF")),
            ),
            Sap::new(Term::var("x"), Term::var("p"), Term::var("x")),
            Sap::new(Term::var("s"), Term::var("p"), Term::var("o")),
        ];
        for sap in &shapes {
            let mut got = idx.eval_sap(&mut store, sap).unwrap();
            let mut want: Vec<BindingRow> =
                g.iter().filter_map(|t| matches(t, sap)).collect();
            got.sort();
            want.sort();
            assert_eq!(got, want, "pattern {sap:?}");
        }
    }

    #[test]
    fn absent_atom_answers_empty() {
        let (_d, mut store, idx) = built(512);
        assert!(idx.payload(&mut store, &atom("nobody")).unwrap().is_none());
        assert!(idx.bucket(&mut store, &atom("nobody"), Role::Subject).unwrap().is_none());
        let sap = Sap::new(Term::Atom(atom("nobody")), Term::var("p"), Term::var("o"));
        assert!(idx.eval_sap(&mut store, &sap).unwrap().is_empty());
        let long = Atom::text(&"x".repeat(200));
        assert!(idx.payload(&mut store, &long).unwrap().is_none());
    }

    #[test]
    fn scan_reproduces_the_graph_exactly_once() {
        let (_d, mut store, idx) = built(512);
        let mut got = idx.scan_triples(&mut store).unwrap();
        got.sort();
        assert_eq!(Graph::from_triples(got.clone()), docs_graph());
        assert_eq!(got.len(), docs_graph().len());
    }

    #[test]
    fn payload_read_bill_is_depth_plus_extent_blocks() {
        let (_d, mut store, idx) = built(512);
        assert!(store.is_metered());
        let depth = idx.tree().depth() as u64;

        // doc1: 3 pairs at width 13 -> 12 + 78 = 90 bytes, one block.
        store.reset_read_counter();
        idx.payload(&mut store, &atom("doc1")).unwrap().unwrap();
        assert_eq!(store.stats().reads, depth + 1);

        // A bucket read with header and bucket on the same page costs the
        // same descent plus that single page.
        store.reset_read_counter();
        idx.bucket(&mut store, &atom("doc1"), Role::Object).unwrap().unwrap();
        assert_eq!(store.stats().reads, depth + 1);

        // A miss costs the descent alone.
        store.reset_read_counter();
        assert!(idx.payload(&mut store, &atom("zzz")).unwrap().is_none());
        assert_eq!(store.stats().reads, depth);
    }

    #[test]
    fn multi_block_payload_bills_every_spanned_page() {
        // One subject with 40 distinct objects at width 16: payload is
        // 12 + 40*2*16 = 1292 bytes -> 3 blocks of 512.
        let dir = tempdir().unwrap();
        let mut store = PageStore::create(&dir.path().join("t.idx"), 512).unwrap();
        let g = Graph::from_triples(
            (0..40).map(|i| Triple::new(atom("hub"), atom("p"), atom(&format!("o{i:02}_pad_to_16_xx")))),
        );
        let idx = TripletIndex::build(&mut store, &g, 16).unwrap();
        assert_eq!(idx.payload_atom_width(), 16);
        let depth = idx.tree().depth() as u64;

        store.reset_read_counter();
        let p = idx.payload(&mut store, &atom("hub")).unwrap().unwrap();
        assert_eq!(p.s_bucket.len(), 40);
        assert_eq!(store.stats().reads, depth + 3);

        // The empty predicate bucket of the same key: header page only.
        store.reset_read_counter();
        let b = idx.bucket(&mut store, &atom("hub"), Role::Predicate).unwrap().unwrap();
        assert!(b.is_empty());
        assert_eq!(store.stats().reads, depth + 1);
    }

    #[test]
    fn self_join_single_descent_cross_role() {
        let (_d, mut store, idx) = built(512);
        // ?w performed doc3 . doc3 type ?t  -- doc3 at O then S.
        let sap1 = Sap::new(Term::var("w"), Term::Atom(atom("performed")), Term::Atom(atom("doc3")));
        let sap2 = Sap::new(Term::Atom(atom("doc3")), Term::Atom(atom("type")), Term::var("t"));
        let depth = idx.tree().depth() as u64;
        store.reset_read_counter();
        let rows = idx
            .self_join(&mut store, &atom("doc3"), Role::Object, &sap1, Role::Subject, &sap2)
            .unwrap();
        // Single descent, all buckets on one page here.
        assert_eq!(store.stats().reads, depth + 1);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0]["w"], atom("McShea"));
        assert_eq!(rows[0]["t"], atom("MP3"));
    }

    #[test]
    fn self_join_predicate_object_link() {
        let (_d, mut store, idx) = built(512);
        // ?x authored ?d . ?m ?q authored  -- authored at P then O.
        let sap1 = Sap::new(Term::var("x"), Term::Atom(atom("authored")), Term::var("d"));
        let sap2 = Sap::new(Term::var("m"), Term::var("q"), Term::Atom(atom("authored")));
        let rows = idx
            .self_join(&mut store, &atom("authored"), Role::Predicate, &sap1, Role::Object, &sap2)
            .unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows {
            assert!(row["x"] == atom("Yamada") || row["x"] == atom("Herzog"));
            assert_eq!(row["m"], atom("McShea"));
            assert_eq!(row["q"], atom("past_action"));
        }
    }

    #[test]
    fn self_join_same_role_shares_one_bucket_read() {
        let (_d, mut store, idx) = built(512);
        let sap1 = Sap::new(Term::Atom(atom("doc3")), Term::Atom(atom("type")), Term::var("t"));
        let sap2 = Sap::new(Term::Atom(atom("doc3")), Term::Atom(atom("created_on")), Term::var("d"));
        let depth = idx.tree().depth() as u64;
        store.reset_read_counter();
        let rows = idx
            .self_join(&mut store, &atom("doc3"), Role::Subject, &sap1, Role::Subject, &sap2)
            .unwrap();
        assert_eq!(store.stats().reads, depth + 1);
        assert_eq!(rows, vec![BindingRow::from([
            ("d".to_string(), atom("26.10.08")),
            ("t".to_string(), atom("MP3")),
        ])]);
    }

    #[test]
    fn self_join_with_shared_variable_filters_rows() {
        let (_d, mut store, idx) = built(512);
        // Shared ?d: documents that were authored and themselves authored
        // something. Both sides read authored's predicate bucket; the join
        // on ?d leaves nothing.
        let sap1 = Sap::new(Term::var("x"), Term::Atom(atom("authored")), Term::var("d"));
        let sap2 = Sap::new(Term::var("d"), Term::Atom(atom("authored")), Term::var("y"));
        let rows = idx
            .self_join(&mut store, &atom("authored"), Role::Predicate, &sap1, Role::Predicate, &sap2)
            .unwrap();
        assert!(rows.is_empty());

        // And one where the shared variable does survive: who knows the
        // performer of doc3? ?a knows ?m . ?m performed doc3.
        let sap3 = Sap::new(Term::var("a"), Term::Atom(atom("knows")), Term::var("m"));
        let sap4 = Sap::new(Term::var("m"), Term::Atom(atom("performed")), Term::Atom(atom("doc3")));
        let rows = idx
            .self_join(&mut store, &atom("doc3"), Role::Object, &sap4, Role::Object, &sap4)
            .unwrap();
        assert_eq!(rows.len(), 1, "degenerate same-pattern join");
        let rows1 = idx.eval_sap(&mut store, &sap3).unwrap();
        let rows2 = idx.eval_sap(&mut store, &sap4).unwrap();
        let joined: Vec<BindingRow> = rows1
            .iter()
            .flat_map(|a| {
                rows2
                    .iter()
                    .filter(|b| rows_compatible(a, b))
                    .map(|b| merge_rows(a, b))
            })
            .collect();
        assert_eq!(joined.len(), 1);
        assert_eq!(joined[0]["a"], atom("Yamada"));
        assert_eq!(joined[0]["m"], atom("McShea"));
    }

    #[test]
    fn open_round_trips_and_checks_family() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.idx");
        {
            let mut store = PageStore::create(&path, 1024).unwrap();
            TripletIndex::build(&mut store, &docs_graph(), 32).unwrap();
        }
        let mut store = PageStore::open(&path).unwrap();
        let idx = TripletIndex::open(&store).unwrap();
        assert_eq!(idx.atoms(), stats(&docs_graph()).atoms as u64);
        assert_eq!(idx.atom_width(), 32);
        let p = idx.payload(&mut store, &atom("doc1")).unwrap().unwrap();
        assert_eq!(p.o_bucket, vec![pair("Yamada", "authored")]);

        let mut meta = store.meta();
        meta.family = Some(Family::Map);
        store.set_meta(meta);
        assert!(matches!(
            TripletIndex::open(&store),
            Err(Error::FamilyMismatch { .. })
        ));
    }

    #[test]
    fn build_rejects_unclean_atoms() {
        let dir = tempdir().unwrap();
        let mut store = PageStore::create(&dir.path().join("t.idx"), 512).unwrap();
        let long = Atom::text(&"x".repeat(20));
        let g = Graph::from_triples(vec![Triple::new(long, atom("p"), atom("o"))]);
        assert!(matches!(
            TripletIndex::build(&mut store, &g, 16),
            Err(Error::AtomTooLong { .. })
        ));
        let nul = Atom::new(vec![b'a', 0, b'b']).unwrap();
        let g = Graph::from_triples(vec![Triple::new(nul, atom("p"), atom("o"))]);
        assert!(matches!(
            TripletIndex::build(&mut store, &g, 16),
            Err(Error::Invalid(_))
        ));
    }
}
