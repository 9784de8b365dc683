//! Query evaluation over an open index of any family.
//!
//! Patterns run left to right; each one's rows merge-join into the
//! accumulated result on the variables the schemas share. On the
//! single-tree index, two adjacent patterns sharing a constant atom can
//! collapse into one unit that answers both from one descent.

use serde::Serialize;

use crate::baselines::{plan_hex_sap, plan_map_sap, HexIndex, HexPlan, MapIndex, MapPlan,
    HEX_ORDERS, MAP_ORDERS};
use crate::error::{Error, Result};
use crate::model::{
    join_types, matches, merge_rows, Atom, BindingRow, Bgp, Graph, JoinLink, Role, Sap, Term,
};
use crate::pager::{Family, PageStore};
use crate::triplet::{plan_sap, SapPlan, TripletIndex};

/// An open index of whichever family the store holds.
pub enum AnyIndex {
    Triplet(TripletIndex),
    Map(MapIndex),
    Hex(HexIndex),
}

impl AnyIndex {
    pub fn family(&self) -> Family {
        match self {
            AnyIndex::Triplet(_) => Family::Triplet,
            AnyIndex::Map(_) => Family::Map,
            AnyIndex::Hex(_) => Family::Hex,
        }
    }

    pub fn eval_sap(&self, store: &mut PageStore, sap: &Sap) -> Result<Vec<BindingRow>> {
        match self {
            AnyIndex::Triplet(t) => t.eval_sap(store, sap),
            AnyIndex::Map(m) => m.eval_sap(store, sap),
            AnyIndex::Hex(h) => h.eval_sap(store, sap),
        }
    }

    pub fn scan_triples(&self, store: &mut PageStore) -> Result<Vec<crate::model::Triple>> {
        match self {
            AnyIndex::Triplet(t) => t.scan_triples(store),
            AnyIndex::Map(m) => m.scan_triples(store),
            AnyIndex::Hex(h) => h.scan_triples(store),
        }
    }
}

/// Opens the index a store holds, dispatching on the header's family tag.
pub fn open_index(store: &PageStore) -> Result<AnyIndex> {
    match store.meta().family {
        Some(Family::Triplet) => Ok(AnyIndex::Triplet(TripletIndex::open(store)?)),
        Some(Family::Map) => Ok(AnyIndex::Map(MapIndex::open(store)?)),
        Some(Family::Hex) => Ok(AnyIndex::Hex(HexIndex::open(store)?)),
        None => Err(Error::BadHeader("store holds no index".into())),
    }
}

/// One step of a query plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanUnit {
    /// One pattern answered on its own.
    Single {
        index: usize,
        full_scan: bool,
        detail: String,
    },
    /// Two adjacent patterns sharing a constant atom, answered from one
    /// descent on the single-tree index.
    Fused {
        left: usize,
        right: usize,
        atom: Atom,
        left_role: Role,
        right_role: Role,
    },
}

fn role_word(r: Role) -> &'static str {
    match r {
        Role::Subject => "subject",
        Role::Predicate => "predicate",
        Role::Object => "object",
    }
}

/// Fusion priority: subject-anchored descents first, then object, then
/// predicate, matching the single-pattern preference.
fn role_rank(r: Role) -> u8 {
    match r {
        Role::Subject => 0,
        Role::Object => 1,
        Role::Predicate => 2,
    }
}

fn prefers(sap: &Sap, k: &Atom, role: Role) -> bool {
    plan_sap(sap)
        == SapPlan::Lookup {
            atom: k.clone(),
            role,
        }
}

/// The constant-atom link two adjacent patterns would fuse on, if any.
/// Cross-role links always qualify: the two buckets live in one payload
/// and a second descent buys nothing. A same-role link qualifies only when
/// both patterns would descend on that atom anyway, so fusing never
/// replaces a cheaper anchor.
fn fusable_link(a: &Sap, b: &Sap) -> Option<JoinLink> {
    let mut candidates: Vec<JoinLink> = join_types(a, b)
        .into_iter()
        .filter(|l| l.is_atom_induced())
        .filter(|l| {
            if l.left_role != l.right_role {
                return true;
            }
            let Term::Atom(k) = &l.term else { return false };
            prefers(a, k, l.left_role) && prefers(b, k, l.right_role)
        })
        .collect();
    candidates.sort_by_key(|l| (role_rank(l.left_role), role_rank(l.right_role)));
    candidates.into_iter().next()
}

fn single_unit(index: &AnyIndex, bgp: &Bgp, i: usize) -> PlanUnit {
    let sap = &bgp.patterns[i];
    let (full_scan, detail) = match index {
        AnyIndex::Triplet(_) => match plan_sap(sap) {
            SapPlan::Lookup { atom, role } => {
                (false, format!("key \"{atom}\", {} bucket", role_word(role)))
            }
            SapPlan::FullScan => (true, "full scan over the subject buckets".into()),
        },
        AnyIndex::Map(_) => match plan_map_sap(sap) {
            MapPlan::Lookup { order } => (false, format!("{} probe", MAP_ORDERS[order].0)),
            MapPlan::Scan { order, prefix } => {
                (false, format!("{} scan, prefix {prefix}", MAP_ORDERS[order].0))
            }
            MapPlan::FullScan => (true, format!("full scan over {}", MAP_ORDERS[0].0)),
        },
        AnyIndex::Hex(h) => match plan_hex_sap(sap) {
            HexPlan::Lookup { tree } => (false, format!("{} pair probe", HEX_ORDERS[tree].0)),
            HexPlan::Scan { tree } => (false, format!("{} range scan", HEX_ORDERS[tree].0)),
            HexPlan::FullScan => {
                let t = if h.tree(2).entries() < h.tree(0).entries() { 2 } else { 0 };
                (true, format!("full scan over {}", HEX_ORDERS[t].0))
            }
        },
    };
    PlanUnit::Single {
        index: i,
        full_scan,
        detail,
    }
}

/// Plans a query for the given index. Patterns keep their textual order;
/// on the single-tree family, adjacent pairs sharing a constant atom fuse
/// greedily left to right.
pub fn plan_bgp(index: &AnyIndex, bgp: &Bgp) -> Vec<PlanUnit> {
    let mut units = Vec::new();
    let mut i = 0;
    while i < bgp.patterns.len() {
        if matches!(index, AnyIndex::Triplet(_)) && i + 1 < bgp.patterns.len() {
            if let Some(link) = fusable_link(&bgp.patterns[i], &bgp.patterns[i + 1]) {
                let Term::Atom(atom) = link.term else { unreachable!() };
                units.push(PlanUnit::Fused {
                    left: i,
                    right: i + 1,
                    atom,
                    left_role: link.left_role,
                    right_role: link.right_role,
                });
                i += 2;
                continue;
            }
        }
        units.push(single_unit(index, bgp, i));
        i += 1;
    }
    units
}

/// Per-unit execution record.
#[derive(Clone, Debug, Serialize)]
pub struct UnitReport {
    pub pattern: String,
    pub access: String,
    pub full_scan: bool,
    /// Blocks read by this unit alone.
    pub reads: u64,
    /// Rows the unit produced before joining.
    pub rows: usize,
    /// Accumulated rows after joining this unit in.
    pub cumulative_rows: usize,
}

/// Execution trace for one query.
#[derive(Clone, Debug, Serialize)]
pub struct Explain {
    pub family: String,
    pub units: Vec<UnitReport>,
    pub total_reads: u64,
}

impl Explain {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("explain serializes")
    }
}

impl std::fmt::Display for Explain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "family: {}", self.family)?;
        for (i, u) in self.units.iter().enumerate() {
            writeln!(
                f,
                "unit {i}: [{}] via {}{}",
                u.pattern,
                u.access,
                if u.full_scan { " (full scan)" } else { "" }
            )?;
            writeln!(
                f,
                "    reads {}, rows {}, accumulated {}",
                u.reads, u.rows, u.cumulative_rows
            )?;
        }
        write!(f, "total reads: {}", self.total_reads)
    }
}

/// Evaluation outcome: projected rows, the block-read bill, and the trace.
#[derive(Debug)]
pub struct QueryResult {
    pub rows: Vec<BindingRow>,
    pub reads: u64,
    pub explain: Explain,
}

/// Sort-merge join of two row sets on their shared variables. With no
/// shared variable this is the cross product.
pub fn join_rows(left: Vec<BindingRow>, right: Vec<BindingRow>) -> Vec<BindingRow> {
    if left.is_empty() || right.is_empty() {
        return Vec::new();
    }
    let shared: Vec<String> = left[0]
        .keys()
        .filter(|k| right[0].contains_key(k.as_str()))
        .cloned()
        .collect();
    if shared.is_empty() {
        let mut out = Vec::with_capacity(left.len() * right.len());
        for a in &left {
            for b in &right {
                out.push(merge_rows(a, b));
            }
        }
        return out;
    }
    let with_key = |rows: Vec<BindingRow>| -> Vec<(Vec<Atom>, BindingRow)> {
        let mut v: Vec<(Vec<Atom>, BindingRow)> = rows
            .into_iter()
            .map(|r| (shared.iter().map(|s| r[s].clone()).collect(), r))
            .collect();
        v.sort();
        v
    };
    let l = with_key(left);
    let r = with_key(right);
    let mut out = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < l.len() && j < r.len() {
        match l[i].0.cmp(&r[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let key = &l[i].0;
                let ie = i + l[i..].iter().take_while(|(k, _)| k == key).count();
                let je = j + r[j..].iter().take_while(|(k, _)| k == key).count();
                for (_, a) in &l[i..ie] {
                    for (_, b) in &r[j..je] {
                        out.push(merge_rows(a, b));
                    }
                }
                i = ie;
                j = je;
            }
        }
    }
    out
}

/// Projects rows onto the selection, deduplicating. An empty selection is
/// a bare existence check: one empty row when anything matched.
fn project(rows: Vec<BindingRow>, select: &[String]) -> Vec<BindingRow> {
    if select.is_empty() {
        return if rows.is_empty() {
            Vec::new()
        } else {
            vec![BindingRow::new()]
        };
    }
    let set: std::collections::BTreeSet<BindingRow> = rows
        .into_iter()
        .map(|r| {
            select
                .iter()
                .filter_map(|v| r.get(v).map(|a| (v.clone(), a.clone())))
                .collect()
        })
        .collect();
    set.into_iter().collect()
}

/// Runs a query: plan, execute unit by unit with joins, project. Read
/// counts come off the store's meter as per-unit deltas.
pub fn eval_bgp(store: &mut PageStore, index: &AnyIndex, bgp: &Bgp) -> Result<QueryResult> {
    if bgp.patterns.is_empty() {
        return Err(Error::Invalid("query has no patterns".into()));
    }
    let units = plan_bgp(index, bgp);
    let start = store.stats().reads;
    let mut acc: Option<Vec<BindingRow>> = None;
    let mut reports = Vec::new();
    for unit in &units {
        let before = store.stats().reads;
        let (rows, pattern, access, full_scan) = match unit {
            PlanUnit::Single {
                index: i,
                full_scan,
                detail,
            } => {
                let sap = &bgp.patterns[*i];
                let rows = index.eval_sap(store, sap)?;
                (rows, sap.to_string(), detail.clone(), *full_scan)
            }
            PlanUnit::Fused {
                left,
                right,
                atom,
                left_role,
                right_role,
            } => {
                let AnyIndex::Triplet(t) = index else {
                    return Err(Error::Invalid("fused unit on a multi-tree index".into()));
                };
                let (s1, s2) = (&bgp.patterns[*left], &bgp.patterns[*right]);
                let rows = t.self_join(store, atom, *left_role, s1, *right_role, s2)?;
                (
                    rows,
                    format!("{s1} . {s2}"),
                    format!(
                        "one descent on \"{atom}\", {} and {} buckets",
                        role_word(*left_role),
                        role_word(*right_role)
                    ),
                    false,
                )
            }
        };
        let produced = rows.len();
        acc = Some(match acc {
            None => rows,
            Some(prev) => join_rows(prev, rows),
        });
        reports.push(UnitReport {
            pattern,
            access,
            full_scan,
            reads: store.stats().reads - before,
            rows: produced,
            cumulative_rows: acc.as_ref().map_or(0, Vec::len),
        });
    }
    let total = store.stats().reads - start;
    Ok(QueryResult {
        rows: project(acc.unwrap_or_default(), &bgp.select),
        reads: total,
        explain: Explain {
            family: index.family().as_str().into(),
            units: reports,
            total_reads: total,
        },
    })
}

/// Reference evaluation straight off an in-memory graph, for checking the
/// index paths.
pub fn oracle_eval(g: &Graph, bgp: &Bgp) -> Vec<BindingRow> {
    let mut acc: Option<Vec<BindingRow>> = None;
    for sap in &bgp.patterns {
        let rows: Vec<BindingRow> = g.iter().filter_map(|t| matches(t, sap)).collect();
        acc = Some(match acc {
            None => rows,
            Some(prev) => join_rows(prev, rows),
        });
    }
    project(acc.unwrap_or_default(), &bgp.select)
}

// --------------------------------------------------------- join scenarios

/// Checks a two-pattern pair against one of the four join-cost scenario
/// shapes.
///
///   1: both fully bound, at least one shared constant atom
///   2: one fully bound, the other with exactly one variable position,
///      at least one shared constant atom
///   3: exactly one variable position on each side, the same variable,
///      no shared constant atom
///   4: exactly one variable position on each side, the same variable,
///      at least one shared constant atom
pub fn validate_scenario(scenario: u8, a: &Sap, b: &Sap) -> Result<()> {
    let var_positions = |s: &Sap| {
        Role::ALL
            .iter()
            .filter(|&&r| matches!(s.get(r), Term::Var(_)))
            .count()
    };
    fn single_var(s: &Sap) -> Option<&str> {
        if Role::ALL
            .iter()
            .filter(|&&r| matches!(s.get(r), Term::Var(_)))
            .count()
            != 1
        {
            return None;
        }
        s.vars().into_iter().next()
    }
    let shares_atom = join_types(a, b).iter().any(JoinLink::is_atom_induced);
    let fail = |msg: &str| Err(Error::BadScenario(format!("scenario {scenario}: {msg}")));
    match scenario {
        1 => {
            if !a.is_fully_bound() || !b.is_fully_bound() {
                return fail("both patterns must be fully bound");
            }
            if !shares_atom {
                return fail("patterns must share a constant atom");
            }
        }
        2 => {
            let ok = (a.is_fully_bound() && var_positions(b) == 1)
                || (b.is_fully_bound() && var_positions(a) == 1);
            if !ok {
                return fail("one pattern must be fully bound, the other must have one variable");
            }
            if !shares_atom {
                return fail("patterns must share a constant atom");
            }
        }
        3 => {
            match (single_var(a), single_var(b)) {
                (Some(x), Some(y)) if x == y => {}
                _ => return fail("each pattern must hold exactly one variable, the same one"),
            }
            if shares_atom {
                return fail("patterns must not share a constant atom");
            }
        }
        4 => {
            match (single_var(a), single_var(b)) {
                (Some(x), Some(y)) if x == y => {}
                _ => return fail("each pattern must hold exactly one variable, the same one"),
            }
            if !shares_atom {
                return fail("patterns must share a constant atom");
            }
        }
        n => return Err(Error::BadScenario(format!("unknown scenario {n}"))),
    }
    Ok(())
}

/// Evaluates a validated two-pattern join and returns (result rows, blocks
/// read).
pub fn eval_k1(
    store: &mut PageStore,
    index: &AnyIndex,
    scenario: u8,
    a: &Sap,
    b: &Sap,
) -> Result<(usize, u64)> {
    validate_scenario(scenario, a, b)?;
    let select: Vec<String> = a
        .vars()
        .into_iter()
        .chain(b.vars())
        .map(str::to_string)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let bgp = Bgp::new(select, vec![a.clone(), b.clone()]);
    let result = eval_bgp(store, index, &bgp)?;
    Ok((result.rows.len(), result.reads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_bgp;
    use crate::fixtures::{atom, docs_graph, DOCS_QUERY};
    use tempfile::tempdir;

    fn all_built(block_size: u32) -> (tempfile::TempDir, Vec<(PageStore, AnyIndex)>) {
        let dir = tempdir().unwrap();
        let g = docs_graph();
        let mut out = Vec::new();
        let mut ts = PageStore::create(&dir.path().join("t.idx"), block_size).unwrap();
        TripletIndex::build(&mut ts, &g, 32).unwrap();
        let t = open_index(&ts).unwrap();
        out.push((ts, t));
        let mut ms = PageStore::create(&dir.path().join("m.idx"), block_size).unwrap();
        MapIndex::build(&mut ms, &g, 32).unwrap();
        let m = open_index(&ms).unwrap();
        out.push((ms, m));
        let mut hs = PageStore::create(&dir.path().join("h.idx"), block_size).unwrap();
        HexIndex::build(&mut hs, &g, 32).unwrap();
        let h = open_index(&hs).unwrap();
        out.push((hs, h));
        (dir, out)
    }

    #[test]
    fn docs_query_answers_identically_on_all_families() {
        let (_d, mut built) = all_built(1024);
        let bgp = parse_bgp(DOCS_QUERY).unwrap();
        let want = oracle_eval(&docs_graph(), &bgp);
        assert_eq!(want.len(), 1);
        assert_eq!(want[0]["date"], atom("26.10.08"));
        assert_eq!(want[0]["type"], atom("MP3"));
        for (store, index) in built.iter_mut() {
            let got = eval_bgp(store, index, &bgp).unwrap();
            assert_eq!(got.rows, want, "family {}", index.family().as_str());
            assert!(got.reads > 0);
            assert_eq!(got.explain.total_reads, got.reads);
        }
    }

    #[test]
    fn docs_query_intermediate_binding_is_doc3() {
        let (_d, mut built) = all_built(1024);
        let bgp = parse_bgp("SELECT ?doc WHERE { McShea performed ?doc }").unwrap();
        for (store, index) in built.iter_mut() {
            let got = eval_bgp(store, index, &bgp).unwrap();
            assert_eq!(got.rows.len(), 1);
            assert_eq!(got.rows[0]["doc"], atom("doc3"));
        }
    }

    #[test]
    fn oracle_equivalence_on_assorted_queries() {
        let (_d, mut built) = all_built(1024);
        let queries = [
            "SELECT ?x WHERE { ?x authored ?d . ?d type MP3 }",
            "SELECT ?t WHERE { ?d type ?t }",
            "SELECT ?s ?o WHERE { ?s authored ?o . ?s knows ?k }",
            "SELECT ?a WHERE { ?a knows ?m . ?m performed ?doc . ?doc type ?t }",
            "SELECT WHERE { Yamada authored doc1 }",
            "SELECT WHERE { Yamada authored doc2 }",
            "SELECT ?s ?p ?o WHERE { ?s ?p ?o }",
            "SELECT ?p WHERE { doc3 ?p ?o . ?s performed doc3 }",
            "SELECT ?x WHERE { ?x type MP3 . ?x created_on ?d }",
            "SELECT ?v WHERE { doc1 rating ?v }",
        ];
        for q in queries {
            let bgp = parse_bgp(q).unwrap();
            let want = oracle_eval(&docs_graph(), &bgp);
            for (store, index) in built.iter_mut() {
                let got = eval_bgp(store, index, &bgp).unwrap();
                assert_eq!(got.rows, want, "family {} on {q}", index.family().as_str());
            }
        }
    }

    #[test]
    fn cross_role_shared_atom_fuses_into_one_descent() {
        let (_d, mut built) = all_built(1024);
        let (store, index) = &mut built[0];
        let bgp = parse_bgp("SELECT ?w ?t WHERE { ?w performed doc3 . doc3 type ?t }").unwrap();
        let units = plan_bgp(index, &bgp);
        assert_eq!(units.len(), 1);
        match &units[0] {
            PlanUnit::Fused {
                atom: k,
                left_role,
                right_role,
                ..
            } => {
                assert_eq!(k, &atom("doc3"));
                assert_eq!(*left_role, Role::Object);
                assert_eq!(*right_role, Role::Subject);
            }
            other => panic!("expected a fused unit, got {other:?}"),
        }
        let AnyIndex::Triplet(t) = &*index else { unreachable!() };
        let depth = t.tree().depth() as u64;
        store.reset_read_counter();
        let got = eval_bgp(store, index, &bgp).unwrap();
        assert_eq!(got.reads, depth + 1, "single descent plus one payload page");
        assert_eq!(got.rows.len(), 1);
        assert_eq!(got.rows[0]["w"], atom("McShea"));
        assert_eq!(got.rows[0]["t"], atom("MP3"));
    }

    #[test]
    fn every_cross_role_pair_shape_plans_fused() {
        let (_d, built) = all_built(1024);
        let index = &built[0].1;
        // Shared atom k placed at each cross-role combination.
        let cases = [
            ("SELECT ?a ?b WHERE { doc3 type ?a . ?b performed doc3 }", Role::Subject, Role::Object),
            ("SELECT ?a ?b WHERE { doc3 type ?a . ?b doc3 ?c }", Role::Subject, Role::Predicate),
            ("SELECT ?a ?b WHERE { ?a doc3 ?b . doc3 ?c ?e }", Role::Predicate, Role::Subject),
            ("SELECT ?a ?b WHERE { ?a doc3 ?b . ?c type doc3 }", Role::Predicate, Role::Object),
            ("SELECT ?a ?b WHERE { ?a type doc3 . doc3 ?b ?c }", Role::Object, Role::Subject),
            ("SELECT ?a ?b WHERE { ?a type doc3 . ?b doc3 ?c }", Role::Object, Role::Predicate),
        ];
        for (q, lr, rr) in cases {
            let bgp = parse_bgp(q).unwrap();
            let units = plan_bgp(index, &bgp);
            assert_eq!(units.len(), 1, "{q}");
            match &units[0] {
                PlanUnit::Fused {
                    left_role,
                    right_role,
                    ..
                } => {
                    assert_eq!((*left_role, *right_role), (lr, rr), "{q}");
                }
                other => panic!("{q}: expected fusion, got {other:?}"),
            }
        }
    }

    #[test]
    fn same_role_fusion_only_when_both_sides_prefer_the_shared_atom() {
        let (_d, built) = all_built(1024);
        let index = &built[0].1;
        // Both subjects are the shared atom: preferred on both sides.
        let bgp = parse_bgp("SELECT ?t ?d WHERE { doc3 type ?t . doc3 created_on ?d }").unwrap();
        assert!(matches!(plan_bgp(index, &bgp)[0], PlanUnit::Fused { .. }));
        // Shared predicate, but both sides hold a subject constant they
        // prefer; fusing on the predicate would read the giant bucket.
        let bgp =
            parse_bgp("SELECT ?a ?b WHERE { Yamada authored ?a . Herzog authored ?b }").unwrap();
        let units = plan_bgp(index, &bgp);
        assert_eq!(units.len(), 2);
        assert!(units.iter().all(|u| matches!(u, PlanUnit::Single { .. })));
        // Shared predicate with nothing better on either side: fuse.
        let bgp = parse_bgp("SELECT ?a ?b WHERE { ?a authored ?b . ?c authored ?e }").unwrap();
        match &plan_bgp(index, &bgp)[0] {
            PlanUnit::Fused {
                atom: k,
                left_role,
                right_role,
                ..
            } => {
                assert_eq!(k, &atom("authored"));
                assert_eq!(*left_role, Role::Predicate);
                assert_eq!(*right_role, Role::Predicate);
            }
            other => panic!("expected predicate-bucket fusion, got {other:?}"),
        }
    }

    #[test]
    fn fusion_pairs_greedily_without_overlap() {
        let (_d, built) = all_built(1024);
        let index = &built[0].1;
        // Patterns 0-1 share doc3 cross-role; pattern 2 would also pair
        // with 1 but 1 is taken, and 2-3 share doc1 cross-role.
        let bgp = parse_bgp(
            "SELECT ?a WHERE { ?w performed doc3 . doc3 type ?a . ?x authored doc1 . doc1 rating ?r }",
        )
        .unwrap();
        let units = plan_bgp(index, &bgp);
        assert_eq!(units.len(), 2);
        assert!(matches!(
            units[0],
            PlanUnit::Fused { left: 0, right: 1, .. }
        ));
        assert!(matches!(
            units[1],
            PlanUnit::Fused { left: 2, right: 3, .. }
        ));
        // An unpairable leading pattern leaves the later pair intact.
        let bgp = parse_bgp(
            "SELECT ?a WHERE { ?s knows ?m . ?w performed doc3 . doc3 type ?a }",
        )
        .unwrap();
        let units = plan_bgp(index, &bgp);
        assert_eq!(units.len(), 2);
        assert!(matches!(units[0], PlanUnit::Single { index: 0, .. }));
        assert!(matches!(
            units[1],
            PlanUnit::Fused { left: 1, right: 2, .. }
        ));
    }

    #[test]
    fn multi_tree_families_never_fuse() {
        let (_d, built) = all_built(1024);
        let bgp = parse_bgp("SELECT ?w ?t WHERE { ?w performed doc3 . doc3 type ?t }").unwrap();
        for (_, index) in &built[1..] {
            let units = plan_bgp(index, &bgp);
            assert_eq!(units.len(), 2);
            assert!(units.iter().all(|u| matches!(u, PlanUnit::Single { .. })));
        }
    }

    #[test]
    fn all_variable_pattern_flags_a_full_scan() {
        let (_d, mut built) = all_built(1024);
        let bgp = parse_bgp("SELECT ?s ?p ?o WHERE { ?s ?p ?o }").unwrap();
        for (store, index) in built.iter_mut() {
            let units = plan_bgp(index, &bgp);
            assert!(
                matches!(&units[0], PlanUnit::Single { full_scan: true, .. }),
                "family {}",
                index.family().as_str()
            );
            let got = eval_bgp(store, index, &bgp).unwrap();
            assert_eq!(got.rows.len(), 12);
            assert!(got.explain.units[0].full_scan);
        }
    }

    #[test]
    fn projection_dedups_and_orders() {
        let (_d, mut built) = all_built(1024);
        let bgp = parse_bgp("SELECT ?t WHERE { ?d type ?t }").unwrap();
        for (store, index) in built.iter_mut() {
            let got = eval_bgp(store, index, &bgp).unwrap();
            let types: Vec<&Atom> = got.rows.iter().map(|r| &r["t"]).collect();
            assert_eq!(types, vec![&atom("MP3"), &atom("PDF")]);
        }
    }

    #[test]
    fn empty_selection_is_an_existence_check() {
        let (_d, mut built) = all_built(1024);
        let hit = parse_bgp("SELECT WHERE { Yamada authored doc1 }").unwrap();
        let miss = parse_bgp("SELECT WHERE { Yamada authored doc2 }").unwrap();
        for (store, index) in built.iter_mut() {
            let got = eval_bgp(store, index, &hit).unwrap();
            assert_eq!(got.rows, vec![BindingRow::new()]);
            let got = eval_bgp(store, index, &miss).unwrap();
            assert!(got.rows.is_empty());
        }
    }

    #[test]
    fn join_rows_covers_merge_and_cross_product() {
        let row = |pairs: &[(&str, &str)]| -> BindingRow {
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), atom(v)))
                .collect()
        };
        // Shared variable x.
        let left = vec![row(&[("x", "1"), ("y", "a")]), row(&[("x", "2"), ("y", "b")])];
        let right = vec![row(&[("x", "1"), ("z", "p")]), row(&[("x", "3"), ("z", "q")])];
        let out = join_rows(left.clone(), right);
        assert_eq!(out, vec![row(&[("x", "1"), ("y", "a"), ("z", "p")])]);
        // Duplicate keys multiply.
        let right = vec![row(&[("x", "1"), ("z", "p")]), row(&[("x", "1"), ("z", "q")])];
        assert_eq!(join_rows(left.clone(), right).len(), 2);
        // Disjoint schemas cross.
        let right = vec![row(&[("z", "p")]), row(&[("z", "q")])];
        assert_eq!(join_rows(left, right).len(), 4);
        // Empty side annihilates.
        assert!(join_rows(Vec::new(), vec![row(&[("x", "1")])]).is_empty());
    }

    #[test]
    fn explain_reports_units_and_serializes() {
        let (_d, mut built) = all_built(1024);
        let bgp = parse_bgp(DOCS_QUERY).unwrap();
        let (store, index) = &mut built[0];
        let got = eval_bgp(store, index, &bgp).unwrap();
        let text = got.explain.to_string();
        assert!(text.contains("family: triplet"));
        assert!(text.contains("total reads:"));
        let json = got.explain.to_json();
        let back: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(back["family"], "triplet");
        assert_eq!(
            back["units"].as_array().unwrap().len(),
            got.explain.units.len()
        );
        let sum: u64 = got.explain.units.iter().map(|u| u.reads).sum();
        assert_eq!(sum, got.reads);
    }

    #[test]
    fn scenario_validation_accepts_and_rejects_by_shape() {
        let c = |s: &str| Term::Atom(atom(s));
        let v = |s: &str| Term::var(s);
        let bound = Sap::new(c("a"), c("b"), c("c"));
        let bound_sharing = Sap::new(c("a"), c("q"), c("r"));
        let one_var_sharing = Sap::new(c("a"), c("q"), v("x"));
        let one_var_disjoint = Sap::new(c("u"), c("w"), v("x"));
        let two_vars = Sap::new(v("x"), c("k"), v("y"));

        assert!(validate_scenario(1, &bound, &bound_sharing).is_ok());
        assert!(validate_scenario(1, &bound, &one_var_sharing).is_err());
        assert!(validate_scenario(1, &bound, &Sap::new(c("u"), c("w"), c("z"))).is_err());

        assert!(validate_scenario(2, &bound, &one_var_sharing).is_ok());
        assert!(validate_scenario(2, &one_var_sharing, &bound).is_ok());
        assert!(validate_scenario(2, &bound, &one_var_disjoint).is_err());
        assert!(validate_scenario(2, &bound, &two_vars).is_err());

        let other_var = Sap::new(c("u"), c("w"), v("z"));
        assert!(validate_scenario(3, &one_var_disjoint, &Sap::new(c("m"), c("n"), v("x"))).is_ok());
        assert!(validate_scenario(3, &one_var_disjoint, &other_var).is_err());
        assert!(validate_scenario(3, &one_var_sharing, &Sap::new(c("a"), c("n"), v("x"))).is_err());

        assert!(validate_scenario(4, &one_var_sharing, &Sap::new(c("a"), c("n"), v("x"))).is_ok());
        assert!(validate_scenario(4, &one_var_disjoint, &Sap::new(c("m"), c("n"), v("x"))).is_err());
        assert!(validate_scenario(5, &bound, &bound).is_err());
    }

    #[test]
    fn eval_k1_runs_each_scenario_on_each_family() {
        let (_d, mut built) = all_built(1024);
        // Scenario pairs drawn from the docs graph.
        let pairs: [(u8, &str, &str); 4] = [
            (1, "doc3 type MP3", "doc3 created_on 26.10.08"),
            (2, "doc3 type MP3", "doc3 created_on ?d"),
            (3, "Yamada authored ?d", "?d type PDF"),
            (4, "doc3 type ?t", "doc2 type ?t"),
        ];
        let term = |w: &str| -> Term {
            if let Some(name) = w.strip_prefix('?') {
                Term::var(name)
            } else {
                Term::Atom(atom(w))
            }
        };
        let sap = |text: &str| -> Sap {
            let w: Vec<&str> = text.split_whitespace().collect();
            Sap::new(term(w[0]), term(w[1]), term(w[2]))
        };
        for (scenario, a, b) in pairs {
            let (a, b) = (sap(a), sap(b));
            let bgp = Bgp::new(Vec::new(), vec![a.clone(), b.clone()]);
            let want = oracle_eval(&docs_graph(), &bgp);
            for (store, index) in built.iter_mut() {
                let (rows, reads) = eval_k1(store, index, scenario, &a, &b).unwrap();
                assert!(reads > 0);
                let expect_rows = if a.vars().is_empty() && b.vars().is_empty() {
                    want.len()
                } else {
                    rows
                };
                assert_eq!(rows, expect_rows);
                assert!(
                    (rows > 0) == (!want.is_empty()),
                    "scenario {scenario} family {}",
                    index.family().as_str()
                );
            }
        }
        // Shape violations surface as errors.
        let a = sap("doc3 type ?t");
        let b = sap("doc1 type ?u");
        for (store, index) in built.iter_mut() {
            assert!(matches!(
                eval_k1(store, index, 4, &a, &b),
                Err(Error::BadScenario(_))
            ));
        }
    }
}
