//! The two multi-tree baseline indexes.
//!
//! MAP: three B+trees keyed on the full triple in the orders (s,o,p),
//! (o,s,p) and (p,s,o). Keys are presence-only; a pattern picks the tree
//! whose order starts with the most constants.
//!
//! HexTree: three B+trees keyed on an atom pair, each value pointing at the
//! out-of-line list of third-role atoms. The (s,o) and (o,s) trees list the
//! same predicates for the same pair, so both point at one shared payload.

use std::collections::BTreeMap;

use crate::btree::{BTree, TreeConfig};
use crate::error::{Error, Result};
use crate::model::{matches, Atom, BindingRow, Graph, Role, Sap, Term, Triple};
use crate::pager::{Family, PageStore, StoreMeta};
use crate::payload::{
    check_atom, decode_field, encode_field, read_all, write_payload, PageMemo, PayloadRef,
    PAYLOAD_REF_WIDTH,
};

/// MAP tree orders, in tie-break order: subject-anchored first, then
/// object, then predicate.
pub const MAP_ORDERS: [(&str, [Role; 3]); 3] = [
    ("sop", [Role::Subject, Role::Object, Role::Predicate]),
    ("osp", [Role::Object, Role::Subject, Role::Predicate]),
    ("pso", [Role::Predicate, Role::Subject, Role::Object]),
];

/// HexTree key orders with the payload role, in the same tie-break order.
pub const HEX_ORDERS: [(&str, [Role; 2], Role); 3] = [
    ("so", [Role::Subject, Role::Object], Role::Predicate),
    ("os", [Role::Object, Role::Subject], Role::Predicate),
    ("ps", [Role::Predicate, Role::Subject], Role::Object),
];

fn concat_fields(atoms: &[&Atom], width: usize) -> Result<Vec<u8>> {
    let mut key = Vec::with_capacity(atoms.len() * width);
    for a in atoms {
        key.extend_from_slice(&encode_field(a, width)?);
    }
    Ok(key)
}

/// Longest run of leading constants of `order` in the pattern.
fn bound_prefix(sap: &Sap, order: &[Role]) -> usize {
    order
        .iter()
        .take_while(|&&r| matches!(sap.get(r), Term::Atom(_)))
        .count()
}

/// Validates atoms and returns the payload field width for a build.
fn scan_widths(g: &Graph, width: usize) -> Result<usize> {
    let mut paw = 1usize;
    for t in g.iter() {
        for a in t.atoms() {
            check_atom(a, width)?;
            paw = paw.max(a.len());
        }
    }
    Ok(paw)
}

// ----------------------------------------------------------------------- MAP

/// How MAP answers one pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapPlan {
    /// Fully bound: presence probe on one tree.
    Lookup { order: usize },
    /// Range scan of the order's leading constants; later constants are
    /// checked against each reconstructed triple.
    Scan { order: usize, prefix: usize },
    /// No constants at all: walk every leaf of the first tree.
    FullScan,
}

impl MapPlan {
    pub fn order_name(&self) -> &'static str {
        match self {
            MapPlan::Lookup { order } | MapPlan::Scan { order, .. } => MAP_ORDERS[*order].0,
            MapPlan::FullScan => MAP_ORDERS[0].0,
        }
    }
}

/// Picks the tree with the longest bound prefix, earliest order winning
/// ties.
pub fn plan_map_sap(sap: &Sap) -> MapPlan {
    let mut best = (0usize, 0usize);
    for (i, (_, order)) in MAP_ORDERS.iter().enumerate() {
        let len = bound_prefix(sap, order);
        if len > best.1 {
            best = (i, len);
        }
    }
    match best.1 {
        0 => MapPlan::FullScan,
        3 => MapPlan::Lookup { order: best.0 },
        len => MapPlan::Scan {
            order: best.0,
            prefix: len,
        },
    }
}

/// Handle over an open MAP store.
pub struct MapIndex {
    trees: [BTree; 3],
    atom_width: u16,
}

impl MapIndex {
    pub fn build(store: &mut PageStore, g: &Graph, atom_width: u16) -> Result<MapIndex> {
        let width = atom_width as usize;
        let paw = scan_widths(g, width)?;
        let config = TreeConfig {
            key_width: 3 * width,
            value_width: 0,
        };
        let mut trees = Vec::with_capacity(3);
        for (name, order) in MAP_ORDERS {
            let mut keys: Vec<Vec<u8>> = g
                .iter()
                .map(|t| concat_fields(&order.map(|r| t.get(r)), width))
                .collect::<Result<_>>()?;
            keys.sort_unstable();
            let tree = BTree::bulk_build(store, config, keys.into_iter().map(|k| (k, Vec::new())))?;
            store.put_tree(name, tree.meta())?;
            trees.push(tree);
        }
        store.set_meta(StoreMeta {
            family: Some(Family::Map),
            atom_width,
            payload_atom_width: paw as u16,
            flags: 0,
        });
        store.flush()?;
        Ok(MapIndex {
            trees: trees.try_into().map_err(|_| Error::Invalid("tree count".into()))?,
            atom_width,
        })
    }

    pub fn open(store: &PageStore) -> Result<MapIndex> {
        let meta = store.meta();
        if meta.family != Some(Family::Map) {
            return Err(Error::FamilyMismatch {
                found: meta.family.map_or("none", Family::as_str).into(),
                expected: Family::Map.as_str().into(),
            });
        }
        let mut trees = Vec::with_capacity(3);
        for (name, _) in MAP_ORDERS {
            trees.push(BTree::from_meta(store.tree(name)?));
        }
        Ok(MapIndex {
            trees: trees.try_into().map_err(|_| Error::Invalid("tree count".into()))?,
            atom_width: meta.atom_width,
        })
    }

    pub fn tree(&self, order: usize) -> &BTree {
        &self.trees[order]
    }

    pub fn atom_width(&self) -> u16 {
        self.atom_width
    }

    /// Number of indexed triples (every tree holds all of them).
    pub fn triples(&self) -> u64 {
        self.trees[0].entries()
    }

    fn triple_of_key(&self, order: &[Role; 3], key: &[u8]) -> Result<Triple> {
        let width = self.atom_width as usize;
        let mut by_role = [None, None, None];
        for (i, role) in order.iter().enumerate() {
            by_role[*role as usize] = Some(decode_field(&key[i * width..(i + 1) * width])?);
        }
        let [s, p, o] = by_role;
        Ok(Triple::new(s.unwrap(), p.unwrap(), o.unwrap()))
    }

    pub fn eval_sap(&self, store: &mut PageStore, sap: &Sap) -> Result<Vec<BindingRow>> {
        let width = self.atom_width as usize;
        let plan = plan_map_sap(sap);
        // A constant wider than the field width matches nothing.
        if sap
            .constants()
            .iter()
            .any(|(_, a)| a.len() > width)
        {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        match plan {
            MapPlan::Lookup { order } => {
                let (_, roles) = MAP_ORDERS[order];
                let key = concat_fields(&roles.map(|r| sap.get(r).as_atom().unwrap()), width)?;
                if self.trees[order].lookup(store, &key)?.is_some() {
                    let t = self.triple_of_key(&roles, &key)?;
                    out.extend(matches(&t, sap));
                }
            }
            MapPlan::Scan { order, prefix } => {
                let (_, roles) = MAP_ORDERS[order];
                let bound: Vec<&Atom> = roles[..prefix]
                    .iter()
                    .map(|&r| sap.get(r).as_atom().unwrap())
                    .collect();
                let prefix_bytes = concat_fields(&bound, width)?;
                let mut cursor = self.trees[order].scan_prefix(store, &prefix_bytes)?;
                while let Some((key, _)) = cursor.next()? {
                    let t = self.triple_of_key(&roles, &key)?;
                    out.extend(matches(&t, sap));
                }
            }
            MapPlan::FullScan => {
                for t in self.scan_triples(store)? {
                    out.extend(matches(&t, sap));
                }
            }
        }
        Ok(out)
    }

    /// Every indexed triple, off the (s,o,p) tree.
    pub fn scan_triples(&self, store: &mut PageStore) -> Result<Vec<Triple>> {
        let (_, roles) = MAP_ORDERS[0];
        let mut out = Vec::with_capacity(self.triples() as usize);
        let mut cursor = self.trees[0].scan_all(store)?;
        while let Some((key, _)) = cursor.next()? {
            out.push(self.triple_of_key(&roles, &key)?);
        }
        Ok(out)
    }
}

// ------------------------------------------------------------------- HexTree

/// How HexTree answers one pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HexPlan {
    /// Both key roles bound: one probe, then the payload list.
    Lookup { tree: usize },
    /// First key role bound: scan its pair range, reading each payload.
    Scan { tree: usize },
    /// No constants: walk the smaller of the (s,o) and (p,s) trees.
    FullScan,
}

impl HexPlan {
    pub fn tree_name(&self) -> &'static str {
        match self {
            HexPlan::Lookup { tree } | HexPlan::Scan { tree } => HEX_ORDERS[*tree].0,
            HexPlan::FullScan => "so/ps",
        }
    }
}

pub fn plan_hex_sap(sap: &Sap) -> HexPlan {
    let mut best = (0usize, 0usize);
    for (i, (_, order, _)) in HEX_ORDERS.iter().enumerate() {
        let len = bound_prefix(sap, order);
        if len > best.1 {
            best = (i, len);
        }
    }
    match best.1 {
        0 => HexPlan::FullScan,
        1 => HexPlan::Scan { tree: best.0 },
        _ => HexPlan::Lookup { tree: best.0 },
    }
}

/// Handle over an open HexTree store.
pub struct HexIndex {
    trees: [BTree; 3],
    atom_width: u16,
    payload_atom_width: u16,
}

impl HexIndex {
    pub fn build(store: &mut PageStore, g: &Graph, atom_width: u16) -> Result<HexIndex> {
        let width = atom_width as usize;
        let paw = scan_widths(g, width)?;

        // Group by (s,o) and (p,s); the (o,s) tree reuses the (s,o)
        // payloads, so its refs are collected alongside.
        let mut so: BTreeMap<(&Atom, &Atom), Vec<&Atom>> = BTreeMap::new();
        let mut ps: BTreeMap<(&Atom, &Atom), Vec<&Atom>> = BTreeMap::new();
        for t in g.iter() {
            so.entry((&t.s, &t.o)).or_default().push(&t.p);
            ps.entry((&t.p, &t.s)).or_default().push(&t.o);
        }

        let config = TreeConfig {
            key_width: 2 * width,
            value_width: PAYLOAD_REF_WIDTH,
        };
        let mut so_entries = Vec::with_capacity(so.len());
        let mut os_entries = Vec::with_capacity(so.len());
        for ((s, o), mut thirds) in so {
            thirds.sort();
            let mut bytes = Vec::with_capacity(thirds.len() * paw);
            for a in thirds {
                bytes.extend_from_slice(&encode_field(a, paw)?);
            }
            let r = write_payload(store, &bytes)?;
            so_entries.push((concat_fields(&[s, o], width)?, r.encode().to_vec()));
            os_entries.push((concat_fields(&[o, s], width)?, r.encode().to_vec()));
        }
        os_entries.sort_unstable();
        let so_tree = BTree::bulk_build(store, config, so_entries)?;
        let os_tree = BTree::bulk_build(store, config, os_entries)?;

        let mut ps_entries = Vec::with_capacity(ps.len());
        for ((p, s), mut thirds) in ps {
            thirds.sort();
            let mut bytes = Vec::with_capacity(thirds.len() * paw);
            for a in thirds {
                bytes.extend_from_slice(&encode_field(a, paw)?);
            }
            let r = write_payload(store, &bytes)?;
            ps_entries.push((concat_fields(&[p, s], width)?, r.encode().to_vec()));
        }
        let ps_tree = BTree::bulk_build(store, config, ps_entries)?;

        store.put_tree("so", so_tree.meta())?;
        store.put_tree("os", os_tree.meta())?;
        store.put_tree("ps", ps_tree.meta())?;
        store.set_meta(StoreMeta {
            family: Some(Family::Hex),
            atom_width,
            payload_atom_width: paw as u16,
            flags: 0,
        });
        store.flush()?;
        Ok(HexIndex {
            trees: [so_tree, os_tree, ps_tree],
            atom_width,
            payload_atom_width: paw as u16,
        })
    }

    pub fn open(store: &PageStore) -> Result<HexIndex> {
        let meta = store.meta();
        if meta.family != Some(Family::Hex) {
            return Err(Error::FamilyMismatch {
                found: meta.family.map_or("none", Family::as_str).into(),
                expected: Family::Hex.as_str().into(),
            });
        }
        let mut trees = Vec::with_capacity(3);
        for (name, _, _) in HEX_ORDERS {
            trees.push(BTree::from_meta(store.tree(name)?));
        }
        Ok(HexIndex {
            trees: trees.try_into().map_err(|_| Error::Invalid("tree count".into()))?,
            atom_width: meta.atom_width,
            payload_atom_width: meta.payload_atom_width,
        })
    }

    pub fn tree(&self, tree: usize) -> &BTree {
        &self.trees[tree]
    }

    pub fn atom_width(&self) -> u16 {
        self.atom_width
    }

    pub fn payload_atom_width(&self) -> u16 {
        self.payload_atom_width
    }

    fn decode_thirds(&self, bytes: &[u8]) -> Result<Vec<Atom>> {
        let paw = self.payload_atom_width as usize;
        if bytes.len() % paw != 0 {
            return Err(Error::Invalid("payload not a whole number of atoms".into()));
        }
        bytes.chunks_exact(paw).map(decode_field).collect()
    }

    /// The third-role atoms stored under one pair key, with the read bill:
    /// descent plus the payload's pages.
    pub fn thirds(
        &self,
        store: &mut PageStore,
        tree: usize,
        first: &Atom,
        second: &Atom,
    ) -> Result<Option<Vec<Atom>>> {
        let width = self.atom_width as usize;
        if first.len() > width || second.len() > width {
            return Ok(None);
        }
        let key = concat_fields(&[first, second], width)?;
        let Some(value) = self.trees[tree].lookup(store, &key)? else {
            return Ok(None);
        };
        let r = PayloadRef::decode(&value)?;
        let mut memo = PageMemo::new();
        let bytes = read_all(store, &mut memo, r)?;
        Ok(Some(self.decode_thirds(&bytes)?))
    }

    fn triples_of(&self, tree: usize, pair_key: &[u8], thirds: &[Atom]) -> Result<Vec<Triple>> {
        let width = self.atom_width as usize;
        let (_, order, third_role) = HEX_ORDERS[tree];
        let a = decode_field(&pair_key[..width])?;
        let b = decode_field(&pair_key[width..])?;
        let mut out = Vec::with_capacity(thirds.len());
        for third in thirds {
            let mut by_role = [None, None, None];
            by_role[order[0] as usize] = Some(a.clone());
            by_role[order[1] as usize] = Some(b.clone());
            by_role[third_role as usize] = Some(third.clone());
            let [s, p, o] = by_role;
            out.push(Triple::new(s.unwrap(), p.unwrap(), o.unwrap()));
        }
        Ok(out)
    }

    pub fn eval_sap(&self, store: &mut PageStore, sap: &Sap) -> Result<Vec<BindingRow>> {
        let width = self.atom_width as usize;
        if sap.constants().iter().any(|(_, a)| a.len() > width) {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        match plan_hex_sap(sap) {
            HexPlan::Lookup { tree } => {
                let (_, order, _) = HEX_ORDERS[tree];
                let first = sap.get(order[0]).as_atom().unwrap();
                let second = sap.get(order[1]).as_atom().unwrap();
                let key = concat_fields(&[first, second], width)?;
                if let Some(thirds) = self.thirds(store, tree, first, second)? {
                    for t in self.triples_of(tree, &key, &thirds)? {
                        out.extend(matches(&t, sap));
                    }
                }
            }
            HexPlan::Scan { tree } => {
                let (_, order, _) = HEX_ORDERS[tree];
                let first = sap.get(order[0]).as_atom().unwrap();
                let prefix = encode_field(first, width)?;
                let mut pairs = Vec::new();
                {
                    let mut cursor = self.trees[tree].scan_prefix(store, &prefix)?;
                    while let Some((key, value)) = cursor.next()? {
                        pairs.push((key, PayloadRef::decode(&value)?));
                    }
                }
                let mut memo = PageMemo::new();
                for (key, r) in pairs {
                    let thirds = self.decode_thirds(&read_all(store, &mut memo, r)?)?;
                    for t in self.triples_of(tree, &key, &thirds)? {
                        out.extend(matches(&t, sap));
                    }
                }
            }
            HexPlan::FullScan => {
                for t in self.scan_triples(store)? {
                    out.extend(matches(&t, sap));
                }
            }
        }
        Ok(out)
    }

    /// Every indexed triple, off whichever of the (s,o) and (p,s) trees
    /// holds fewer pairs.
    pub fn scan_triples(&self, store: &mut PageStore) -> Result<Vec<Triple>> {
        let tree = if self.trees[2].entries() < self.trees[0].entries() {
            2
        } else {
            0
        };
        let mut pairs = Vec::new();
        {
            let mut cursor = self.trees[tree].scan_all(store)?;
            while let Some((key, value)) = cursor.next()? {
                pairs.push((key, PayloadRef::decode(&value)?));
            }
        }
        let mut out = Vec::new();
        let mut memo = PageMemo::new();
        for (key, r) in pairs {
            let thirds = self.decode_thirds(&read_all(store, &mut memo, r)?)?;
            out.extend(self.triples_of(tree, &key, &thirds)?);
        }
        Ok(out)
    }
}
