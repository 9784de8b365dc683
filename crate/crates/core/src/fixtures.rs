//! Small example dataset used throughout the documentation and tests: a
//! twelve-triple graph about two documents' authors and metadata. Several
//! atoms deliberately occur in more than one role (`knows` is a subject and
//! a predicate, `authored` a predicate and an object), which exercises the
//! role-overlap paths that realistic RDF exhibits.

use crate::model::{Atom, Graph, Triple};

/// Infallible atom constructor for fixture and test code.
pub fn atom(s: &str) -> Atom {
    Atom::text(s)
}

fn t(s: &str, p: &str, o: &str) -> Triple {
    Triple::new(atom(s), atom(p), atom(o))
}

/// The documentation example graph.
pub fn docs_graph() -> Graph {
    Graph::from_triples(vec![
        t("Yamada", "authored", "doc1"),
        t("Yamada", "knows", "McShea"),
        t("knows", "is_a_kind_of", "social_action"),
        t("Herzog", "authored", "doc2"),
        t("Herzog", "authored", "doc3"),
        t("McShea", "performed", "doc3"),
        t("McShea", "past_action", "authored"),
        t("doc1", "type", "PDF"),
        t("doc1", "rating", "4/5"),
        t("doc2", "type", "MP3"),
        t("doc3", "type", "MP3"),
        t("doc3", "created_on", "26.10.08"),
    ])
}

/// The example query over [`docs_graph`]: the documents McShea performed,
/// with their creation date and media type.
pub const DOCS_QUERY: &str =
    "SELECT ?date ?type WHERE { McShea performed ?doc . ?doc created_on ?date . ?doc type ?type }";
