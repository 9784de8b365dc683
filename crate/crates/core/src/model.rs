//! Graph model: atoms, triples, access patterns, and the join taxonomy.
//!
//! An atom is an uninterpreted byte string; a triple is three atoms in
//! subject/predicate/object position. Everything downstream (key encoding,
//! bucket sort orders, merge joins) compares atoms bytewise, so this module
//! is the single place that fixes those orderings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

/// Uninterpreted byte string. Ordering is bytewise lexicographic.
///
/// Atoms are non-empty; length limits are enforced where a width budget
/// exists (ingestion cleaning, index key encoding), not at construction.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom(Box<[u8]>);

impl Atom {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self> {
        let v = bytes.into();
        if v.is_empty() {
            return Err(Error::EmptyAtom);
        }
        Ok(Atom(v.into_boxed_slice()))
    }

    /// Convenience constructor for string literals. Panics on empty input,
    /// which is a programming error at the call site.
    pub fn text(s: &str) -> Self {
        Atom::new(s.as_bytes().to_vec()).expect("non-empty atom literal")
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", String::from_utf8_lossy(&self.0))
    }
}

impl fmt::Debug for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Atom({})", String::from_utf8_lossy(&self.0))
    }
}

/// Triple role. The derived order (S < P < O) also fixes the role priority
/// used by access-path tie-breaks.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Role {
    Subject,
    Predicate,
    Object,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Subject, Role::Predicate, Role::Object];

    pub fn letter(self) -> char {
        match self {
            Role::Subject => 'S',
            Role::Predicate => 'P',
            Role::Object => 'O',
        }
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Triple {
    pub s: Atom,
    pub p: Atom,
    pub o: Atom,
}

impl Triple {
    pub fn new(s: Atom, p: Atom, o: Atom) -> Self {
        Triple { s, p, o }
    }

    pub fn get(&self, role: Role) -> &Atom {
        match role {
            Role::Subject => &self.s,
            Role::Predicate => &self.p,
            Role::Object => &self.o,
        }
    }

    pub fn atoms(&self) -> [&Atom; 3] {
        [&self.s, &self.p, &self.o]
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.s, self.p, self.o)
    }
}

/// A set of triples, stored sorted and deduplicated.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Graph {
    triples: Vec<Triple>,
}

impl Graph {
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut v: Vec<Triple> = triples.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Graph { triples: v }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triple> {
        self.triples.iter()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.binary_search(t).is_ok()
    }
}

/// The atoms of a graph split by the role they appear in.
#[derive(Clone, Debug, Default)]
pub struct RoleSets {
    pub subjects: BTreeSet<Atom>,
    pub predicates: BTreeSet<Atom>,
    pub objects: BTreeSet<Atom>,
}

impl RoleSets {
    /// Union of the three role sets: every atom occurring anywhere in G.
    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut a = self.subjects.clone();
        a.extend(self.predicates.iter().cloned());
        a.extend(self.objects.iter().cloned());
        a
    }
}

pub fn role_sets(g: &Graph) -> RoleSets {
    let mut r = RoleSets::default();
    for t in g.iter() {
        r.subjects.insert(t.s.clone());
        r.predicates.insert(t.p.clone());
        r.objects.insert(t.o.clone());
    }
    r
}

/// Cardinality summary of a graph, including the pairwise role overlaps.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphStats {
    pub triples: usize,
    pub subjects: usize,
    pub predicates: usize,
    pub objects: usize,
    pub atoms: usize,
    pub subject_object: usize,
    pub subject_predicate: usize,
    pub predicate_object: usize,
    /// Mean byte length over the distinct atoms of G.
    pub avg_atom_len: f64,
}

pub fn stats(g: &Graph) -> GraphStats {
    let r = role_sets(g);
    let atoms = r.atoms();
    let total_len: usize = atoms.iter().map(Atom::len).sum();
    let avg = if atoms.is_empty() {
        0.0
    } else {
        total_len as f64 / atoms.len() as f64
    };
    GraphStats {
        triples: g.len(),
        subjects: r.subjects.len(),
        predicates: r.predicates.len(),
        objects: r.objects.len(),
        atoms: atoms.len(),
        subject_object: r.subjects.intersection(&r.objects).count(),
        subject_predicate: r.subjects.intersection(&r.predicates).count(),
        predicate_object: r.predicates.intersection(&r.objects).count(),
        avg_atom_len: avg,
    }
}

/// One position of an access pattern: a constant atom or a named variable.
/// Variable names are stored without the leading `?`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Term {
    Atom(Atom),
    Var(String),
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(name.to_string())
    }

    pub fn as_atom(&self) -> Option<&Atom> {
        match self {
            Term::Atom(a) => Some(a),
            Term::Var(_) => None,
        }
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Atom(_) => None,
            Term::Var(v) => Some(v),
        }
    }
}

/// Atoms render bare when they contain no whitespace or metacharacters,
/// quoted otherwise; the BGP parser accepts both forms.
fn needs_quoting(bytes: &[u8]) -> bool {
    bytes.iter().any(|&b| {
        b.is_ascii_whitespace()
            || b == b'"'
            || b == b'\\'
            || b == b'?'
            || b == b'{'
            || b == b'}'
            || b < 0x20
    }) || bytes == b"."
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Atom(a) => {
                if needs_quoting(a.as_bytes()) {
                    write!(f, "\"")?;
                    for &b in a.as_bytes() {
                        match b {
                            b'"' => write!(f, "\\\"")?,
                            b'\\' => write!(f, "\\\\")?,
                            b'\n' => write!(f, "\\n")?,
                            b'\t' => write!(f, "\\t")?,
                            b'\r' => write!(f, "\\r")?,
                            _ => write!(f, "{}", b as char)?,
                        }
                    }
                    write!(f, "\"")
                } else {
                    write!(f, "{a}")
                }
            }
        }
    }
}

/// Single access pattern: a triple of terms.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Sap {
    pub s: Term,
    pub p: Term,
    pub o: Term,
}

impl Sap {
    pub fn new(s: Term, p: Term, o: Term) -> Self {
        Sap { s, p, o }
    }

    pub fn get(&self, role: Role) -> &Term {
        match role {
            Role::Subject => &self.s,
            Role::Predicate => &self.p,
            Role::Object => &self.o,
        }
    }

    /// Bound positions in role order.
    pub fn constants(&self) -> Vec<(Role, &Atom)> {
        Role::ALL
            .iter()
            .filter_map(|&r| self.get(r).as_atom().map(|a| (r, a)))
            .collect()
    }

    /// Distinct variable names, sorted.
    pub fn vars(&self) -> BTreeSet<&str> {
        Role::ALL
            .iter()
            .filter_map(|&r| self.get(r).as_var())
            .collect()
    }

    pub fn is_fully_bound(&self) -> bool {
        self.vars().is_empty()
    }

    pub fn is_all_variable(&self) -> bool {
        self.constants().is_empty()
    }
}

impl fmt::Display for Sap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.s, self.p, self.o)
    }
}

/// Basic graph pattern: a conjunction of access patterns plus a projection.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Bgp {
    pub select: Vec<String>,
    pub patterns: Vec<Sap>,
}

impl Bgp {
    pub fn new(select: Vec<String>, patterns: Vec<Sap>) -> Self {
        Bgp { select, patterns }
    }

    /// Distinct variable names across all patterns, sorted.
    pub fn vars(&self) -> BTreeSet<&str> {
        self.patterns.iter().flat_map(|s| s.vars()).collect()
    }
}

impl fmt::Display for Bgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SELECT")?;
        for v in &self.select {
            write!(f, " ?{v}")?;
        }
        write!(f, " WHERE {{ ")?;
        for (i, sap) in self.patterns.iter().enumerate() {
            if i > 0 {
                write!(f, " . ")?;
            }
            write!(f, "{sap}")?;
        }
        write!(f, " }}")
    }
}

/// The six join types induced by the roles a shared term occupies in two
/// patterns. The name is canonical: role pair {Subject, Object} is `SO`
/// regardless of which pattern holds which role.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum JoinType {
    SS,
    SP,
    SO,
    PP,
    PO,
    OO,
}

impl JoinType {
    pub fn from_roles(a: Role, b: Role) -> JoinType {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        match (lo, hi) {
            (Role::Subject, Role::Subject) => JoinType::SS,
            (Role::Subject, Role::Predicate) => JoinType::SP,
            (Role::Subject, Role::Object) => JoinType::SO,
            (Role::Predicate, Role::Predicate) => JoinType::PP,
            (Role::Predicate, Role::Object) => JoinType::PO,
            (Role::Object, Role::Object) => JoinType::OO,
            // lo <= hi after the swap above
            _ => unreachable!(),
        }
    }
}

impl fmt::Display for JoinType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            JoinType::SS => "SS",
            JoinType::SP => "SP",
            JoinType::SO => "SO",
            JoinType::PP => "PP",
            JoinType::PO => "PO",
            JoinType::OO => "OO",
        };
        write!(f, "{s}")
    }
}

/// One join link between two patterns: the shared term and the roles it
/// occupies on each side.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct JoinLink {
    pub join: JoinType,
    /// Role in the left pattern.
    pub left_role: Role,
    /// Role in the right pattern.
    pub right_role: Role,
    /// The shared term: a variable or a constant atom.
    pub term: Term,
}

impl JoinLink {
    pub fn is_atom_induced(&self) -> bool {
        matches!(self.term, Term::Atom(_))
    }
}

/// All join links between two patterns: every pair of positions holding the
/// same variable or the same constant atom.
pub fn join_types(a: &Sap, b: &Sap) -> Vec<JoinLink> {
    let mut links = Vec::new();
    for &ra in &Role::ALL {
        for &rb in &Role::ALL {
            let (ta, tb) = (a.get(ra), b.get(rb));
            if ta == tb {
                links.push(JoinLink {
                    join: JoinType::from_roles(ra, rb),
                    left_role: ra,
                    right_role: rb,
                    term: ta.clone(),
                });
            }
        }
    }
    links.sort();
    links
}

/// One result row: variable name to bound atom.
pub type BindingRow = BTreeMap<String, Atom>;

/// A set of rows. `BTreeSet` gives deduplication and a canonical order.
pub type BindingSet = BTreeSet<BindingRow>;

/// Matches a triple against a pattern. Returns the variable bindings on
/// success; repeated variables must bind to equal atoms.
pub fn matches(t: &Triple, sap: &Sap) -> Option<BindingRow> {
    let mut row = BindingRow::new();
    for &role in &Role::ALL {
        let atom = t.get(role);
        match sap.get(role) {
            Term::Atom(a) => {
                if a != atom {
                    return None;
                }
            }
            Term::Var(v) => match row.get(v.as_str()) {
                Some(bound) if bound != atom => return None,
                Some(_) => {}
                None => {
                    row.insert(v.clone(), atom.clone());
                }
            },
        }
    }
    Some(row)
}

/// Two rows agree when every variable bound in both carries the same atom.
pub fn rows_compatible(a: &BindingRow, b: &BindingRow) -> bool {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .all(|(v, atom)| large.get(v).map_or(true, |other| other == atom))
}

/// Union of two compatible rows.
pub fn merge_rows(a: &BindingRow, b: &BindingRow) -> BindingRow {
    let mut out = a.clone();
    for (v, atom) in b {
        out.insert(v.clone(), atom.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{atom, docs_graph};

    fn sap(s: Term, p: Term, o: Term) -> Sap {
        Sap::new(s, p, o)
    }

    #[test]
    fn empty_atom_rejected() {
        assert!(matches!(Atom::new(Vec::new()), Err(Error::EmptyAtom)));
    }

    #[test]
    fn atom_order_is_bytewise() {
        assert!(atom("4/5") < atom("PDF"));
        assert!(atom("a") < atom("ab"));
        assert!(atom("B") < atom("a")); // 0x42 < 0x61
    }

    #[test]
    fn graph_dedups_and_sorts() {
        let t = Triple::new(atom("a"), atom("b"), atom("c"));
        let u = Triple::new(atom("a"), atom("b"), atom("d"));
        let g = Graph::from_triples(vec![u.clone(), t.clone(), t.clone()]);
        assert_eq!(g.len(), 2);
        assert_eq!(g.triples()[0], t);
        assert!(g.contains(&u));
    }

    #[test]
    fn docs_graph_role_sets() {
        let g = docs_graph();
        let r = role_sets(&g);
        assert_eq!(g.len(), 12);
        // Hand enumeration of the 12-triple example graph.
        assert_eq!(r.subjects.len(), 7); // Yamada Herzog McShea knows doc1 doc2 doc3
        assert_eq!(r.predicates.len(), 8);
        assert_eq!(r.objects.len(), 10);
        assert_eq!(r.atoms().len(), 19);
        assert!(r.subjects.contains(&atom("knows")));
        assert!(r.predicates.contains(&atom("knows")));
    }

    #[test]
    fn docs_graph_stats_match_hand_enumeration() {
        let g = docs_graph();
        // Independent enumeration straight from the triple list.
        let mut s = BTreeSet::new();
        let mut p = BTreeSet::new();
        let mut o = BTreeSet::new();
        for t in g.iter() {
            s.insert(t.s.clone());
            p.insert(t.p.clone());
            o.insert(t.o.clone());
        }
        let mut a = s.clone();
        a.extend(p.iter().cloned());
        a.extend(o.iter().cloned());
        let st = stats(&g);
        assert_eq!(st.triples, 12);
        assert_eq!(st.subjects, s.len());
        assert_eq!(st.predicates, p.len());
        assert_eq!(st.objects, o.len());
        assert_eq!(st.atoms, a.len());
        assert_eq!(st.subject_object, s.intersection(&o).count());
        assert_eq!(st.subject_predicate, s.intersection(&p).count());
        assert_eq!(st.predicate_object, p.intersection(&o).count());
        // knows appears as subject and predicate; authored as predicate and
        // object; McShea and the three docs as subject and object.
        assert_eq!(st.subject_predicate, 1);
        assert_eq!(st.predicate_object, 1);
        assert_eq!(st.subject_object, 4);
        let total: usize = a.iter().map(Atom::len).sum();
        assert!((st.avg_atom_len - total as f64 / a.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn stats_of_empty_graph() {
        let st = stats(&Graph::default());
        assert_eq!(st.triples, 0);
        assert_eq!(st.atoms, 0);
        assert_eq!(st.avg_atom_len, 0.0);
    }

    #[test]
    fn atoms_is_union_of_role_sets() {
        let g = docs_graph();
        let r = role_sets(&g);
        let a = r.atoms();
        assert!(r.subjects.is_subset(&a));
        assert!(r.predicates.is_subset(&a));
        assert!(r.objects.is_subset(&a));
        assert_eq!(
            a.len(),
            r.subjects
                .union(&r.predicates)
                .cloned()
                .collect::<BTreeSet<_>>()
                .union(&r.objects)
                .count()
        );
    }

    #[test]
    fn matches_binds_variables() {
        let t = Triple::new(atom("McShea"), atom("performed"), atom("doc3"));
        let s = sap(
            Term::Atom(atom("McShea")),
            Term::Atom(atom("performed")),
            Term::var("doc"),
        );
        let row = matches(&t, &s).unwrap();
        assert_eq!(row["doc"], atom("doc3"));
    }

    #[test]
    fn matches_rejects_mismatched_constant() {
        let t = Triple::new(atom("McShea"), atom("performed"), atom("doc3"));
        let s = sap(
            Term::Atom(atom("Herzog")),
            Term::Atom(atom("performed")),
            Term::var("doc"),
        );
        assert!(matches(&t, &s).is_none());
    }

    #[test]
    fn matches_repeated_variable_requires_equal_atoms() {
        let t = Triple::new(atom("doc1"), atom("type"), atom("PDF"));
        let s = sap(Term::var("x"), Term::var("x"), Term::var("y"));
        assert!(matches(&t, &s).is_none(), "doc1 != type");
        let t2 = Triple::new(atom("z"), atom("z"), atom("w"));
        let row = matches(&t2, &s).unwrap();
        assert_eq!(row["x"], atom("z"));
        assert_eq!(row["y"], atom("w"));
    }

    #[test]
    fn join_types_variable_induced() {
        let a = sap(
            Term::Atom(atom("McShea")),
            Term::Atom(atom("performed")),
            Term::var("doc"),
        );
        let b = sap(
            Term::var("doc"),
            Term::Atom(atom("created_on")),
            Term::var("date"),
        );
        let links = join_types(&a, &b);
        assert_eq!(links.len(), 1);
        assert_eq!(links[0].join, JoinType::SO);
        assert_eq!(links[0].left_role, Role::Object);
        assert_eq!(links[0].right_role, Role::Subject);
        assert_eq!(links[0].term, Term::var("doc"));
    }

    #[test]
    fn join_types_atom_induced() {
        // Shared constant atom `authored`: predicate on the left, object on
        // the right.
        let a = sap(Term::var("x"), Term::Atom(atom("authored")), Term::var("y"));
        let b = sap(
            Term::Atom(atom("McShea")),
            Term::Atom(atom("past_action")),
            Term::Atom(atom("authored")),
        );
        let links = join_types(&a, &b);
        assert_eq!(links.len(), 1);
        assert_eq!(links[0].join, JoinType::PO);
        assert!(links[0].is_atom_induced());
    }

    #[test]
    fn join_types_symmetric_with_roles_swapped() {
        let a = sap(Term::var("x"), Term::Atom(atom("p")), Term::var("y"));
        let b = sap(Term::var("y"), Term::Atom(atom("p")), Term::var("x"));
        let ab = join_types(&a, &b);
        let ba = join_types(&b, &a);
        assert_eq!(ab.len(), ba.len());
        for l in &ab {
            assert!(ba.iter().any(|m| {
                m.join == l.join
                    && m.left_role == l.right_role
                    && m.right_role == l.left_role
                    && m.term == l.term
            }));
        }
        // x, y, and the shared predicate each induce a link.
        assert_eq!(ab.len(), 3);
    }

    #[test]
    fn no_join_without_shared_terms() {
        let a = sap(Term::var("x"), Term::Atom(atom("p")), Term::Atom(atom("a")));
        let b = sap(Term::var("y"), Term::Atom(atom("q")), Term::Atom(atom("b")));
        assert!(join_types(&a, &b).is_empty());
    }

    #[test]
    fn bgp_render_round_trips_through_parser() {
        let b = Bgp::new(
            vec!["date".into()],
            vec![
                sap(
                    Term::Atom(atom("McShea")),
                    Term::Atom(atom("performed")),
                    Term::var("doc"),
                ),
                sap(
                    Term::var("doc"),
                    Term::Atom(atom("created on")),
                    Term::var("date"),
                ),
            ],
        );
        let text = b.to_string();
        let parsed = crate::data::parse_bgp(&text).unwrap();
        assert_eq!(parsed, b);
    }
}
