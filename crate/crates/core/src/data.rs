//! Data supply: synthetic graph generators, N-Triples ingestion with
//! cleaning and sampling, the small BGP query reader, and the canonical
//! run-file format that feeds bulk index builds.
//!
//! Everything seeded is deterministic: one parameter set and seed produce the
//! same graph bytes on every platform.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Atom, Bgp, Graph, Sap, Term, Triple};
use crate::payload::{decode_field, encode_field};

// ---------------------------------------------------------------- generators

/// Synthetic dataset request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenSpec {
    pub n: u64,
    /// 1: uniform draws over a cube-root-sized pool, repetition allowed
    /// within a triple. 2: slightly larger pool, the three positions of a
    /// triple must hold pairwise distinct atoms.
    pub variant: u8,
    pub seed: u64,
}

/// Largest r with r^3 <= n.
fn icbrt(n: u64) -> u64 {
    let mut r = (n as f64).cbrt() as u64;
    while (r as u128 + 1).pow(3) <= n as u128 {
        r += 1;
    }
    while (r as u128).pow(3) > n as u128 {
        r -= 1;
    }
    r
}

/// Atom pool size for a generator variant.
///
/// Variant 1 targets n^(1/3) rounded to the nearest integer, bumped up by
/// one when the rounded cube cannot hold n distinct triples. Variant 2 uses
/// ceil(n^(1/3)) + 2 so that triples with three distinct atoms exist in
/// sufficient number.
pub fn pool_size(variant: u8, n: u64) -> Result<u64> {
    if n == 0 {
        return Err(Error::Infeasible("n must be at least 1".into()));
    }
    let r = icbrt(n);
    let ceil = if (r as u128).pow(3) == n as u128 { r } else { r + 1 };
    match variant {
        1 => {
            // Nearest integer: n^(1/3) >= r + 1/2 iff 8n >= (2r+1)^3.
            let mut pool = if 8 * n as u128 >= (2 * r as u128 + 1).pow(3) {
                r + 1
            } else {
                r
            };
            if (pool as u128).pow(3) < n as u128 {
                pool = ceil;
            }
            if (pool as u128).pow(3) < n as u128 {
                return Err(Error::Infeasible(format!(
                    "pool {pool} cannot produce {n} distinct triples"
                )));
            }
            Ok(pool)
        }
        2 => {
            let pool = ceil + 2;
            let capacity = pool as u128 * (pool - 1) as u128 * (pool - 2) as u128;
            if capacity < n as u128 {
                return Err(Error::Infeasible(format!(
                    "pool {pool} cannot produce {n} distinct repetition-free triples"
                )));
            }
            Ok(pool)
        }
        v => Err(Error::Invalid(format!("unknown generator variant {v}"))),
    }
}

/// Generates exactly `spec.n` distinct triples over the variant's atom
/// pool. Draws are uniform; duplicate triples are discarded and redrawn
/// until the set reaches n.
pub fn gen_synthetic(spec: &GenSpec) -> Result<Graph> {
    let m = pool_size(spec.variant, spec.n)?;
    let pool: Vec<Atom> = (0..m).map(|i| Atom::text(&format!("a{i}"))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut set: BTreeSet<(u64, u64, u64)> = BTreeSet::new();
    while (set.len() as u64) < spec.n {
        let i = rng.gen_range(0..m);
        let j = rng.gen_range(0..m);
        let k = rng.gen_range(0..m);
        if spec.variant == 2 && (i == j || j == k || i == k) {
            continue;
        }
        set.insert((i, j, k));
    }
    Ok(Graph::from_triples(set.into_iter().map(|(i, j, k)| {
        Triple::new(pool[i as usize].clone(), pool[j as usize].clone(), pool[k as usize].clone())
    })))
}

/// Generates a sparse graph shaped like catalogued entity data rather than
/// a saturated cube: many subjects of modest out-degree, a small fixed
/// predicate vocabulary, and objects drawn mostly from the subject pool
/// (entity-to-entity links) with the rest from a literal pool. Object
/// in-degree is capped so no single atom accumulates an outsized payload.
///
/// For n triples this yields roughly n/14 subjects, 40 predicates, and
/// n/30 literals, so the distinct-atom count stays near n/9.5 while no
/// subject or object appears in more than a few dozen triples.
pub fn gen_realistic(n: u64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::Infeasible("n must be at least 1".into()));
    }
    let ns = (n / 14).max(1);
    let np = 40u64;
    let nl = (n / 30).max(1);
    let subjects: Vec<Atom> = (0..ns).map(|i| Atom::text(&format!("s{i}"))).collect();
    let predicates: Vec<Atom> = (0..np).map(|i| Atom::text(&format!("p{i}"))).collect();
    let literals: Vec<Atom> = (0..nl).map(|i| Atom::text(&format!("lit{i}"))).collect();
    const IN_DEGREE_CAP: u32 = 60;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_degree: BTreeMap<Atom, u32> = BTreeMap::new();
    let mut set: BTreeSet<Triple> = BTreeSet::new();
    while (set.len() as u64) < n {
        let s = subjects[rng.gen_range(0..ns) as usize].clone();
        let p = predicates[rng.gen_range(0..np) as usize].clone();
        let mut o = None;
        for _ in 0..100 {
            let cand = if rng.gen_range(0..100u32) < 65 {
                subjects[rng.gen_range(0..ns) as usize].clone()
            } else {
                literals[rng.gen_range(0..nl) as usize].clone()
            };
            if in_degree.get(&cand).copied().unwrap_or(0) < IN_DEGREE_CAP {
                o = Some(cand);
                break;
            }
        }
        // After 100 rejections every candidate we saw was saturated; take
        // the last draw rather than loop forever on tiny pools.
        let o = match o {
            Some(o) => o,
            None => literals[rng.gen_range(0..nl) as usize].clone(),
        };
        if set.insert(Triple::new(s, p, o.clone())) {
            *in_degree.entry(o).or_insert(0) += 1;
        }
    }
    Ok(Graph::from_triples(set))
}

// ----------------------------------------------------------------- ingestion

/// Cleaning and sampling knobs for ingestion.
#[derive(Clone, Copy, Debug)]
pub struct IngestConfig {
    /// Atom byte budget; longer atoms are truncated.
    pub max_atom_len: usize,
    /// Keep only a uniform sample of this many triples when set.
    pub sample_size: Option<u64>,
    pub seed: u64,
}

/// What `clean` did to the input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CleanReport {
    pub input: u64,
    pub output: u64,
    /// Atom occurrences cut to the byte budget.
    pub truncated: u64,
    /// Triples dropped as duplicates (including collisions created by
    /// truncation).
    pub duplicates: u64,
}

fn clean_atom(atom: &Atom, max_len: usize, truncated: &mut u64) -> Atom {
    let mut bytes = atom.as_bytes().to_vec();
    for b in bytes.iter_mut() {
        // 0x00 is the key padding byte and must not occur inside atoms.
        if *b == 0 {
            *b = 1;
        }
    }
    if bytes.len() > max_len {
        *truncated += 1;
        let cut = match std::str::from_utf8(&bytes) {
            Ok(s) => {
                let mut c = max_len;
                while c > 0 && !s.is_char_boundary(c) {
                    c -= 1;
                }
                // A single code point wider than the whole budget: keep raw
                // bytes rather than produce an empty atom.
                if c == 0 {
                    max_len
                } else {
                    c
                }
            }
            Err(_) => max_len,
        };
        bytes.truncate(cut);
    }
    Atom::new(bytes).expect("cleaning keeps atoms non-empty")
}

/// Truncates atoms to the byte budget (on a code-point boundary for UTF-8
/// input), replaces interior 0x00 bytes, and eliminates duplicates.
pub fn clean(triples: impl IntoIterator<Item = Triple>, cfg: &IngestConfig) -> (Graph, CleanReport) {
    let mut report = CleanReport::default();
    let mut out = Vec::new();
    for t in triples {
        report.input += 1;
        out.push(Triple::new(
            clean_atom(&t.s, cfg.max_atom_len, &mut report.truncated),
            clean_atom(&t.p, cfg.max_atom_len, &mut report.truncated),
            clean_atom(&t.o, cfg.max_atom_len, &mut report.truncated),
        ));
    }
    let g = Graph::from_triples(out);
    report.output = g.len() as u64;
    report.duplicates = report.input - report.output;
    (g, report)
}

/// Uniform reservoir sample of min(k, input) triples. Deterministic given
/// the seed and the input order.
pub fn sample(triples: impl IntoIterator<Item = Triple>, k: u64, seed: u64) -> Vec<Triple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<Triple> = Vec::new();
    let mut seen = 0u64;
    for t in triples {
        seen += 1;
        if (reservoir.len() as u64) < k {
            reservoir.push(t);
        } else {
            let j = rng.gen_range(0..seen);
            if j < k {
                reservoir[j as usize] = t;
            }
        }
    }
    reservoir
}

// ------------------------------------------------------------------ N-Triples

/// Streaming N-Triples reader. Malformed lines are skipped and counted;
/// only I/O failures surface as errors.
pub struct NtReader<R> {
    reader: R,
    line: String,
    line_no: u64,
    skipped: u64,
}

impl<R: BufRead> NtReader<R> {
    pub fn new(reader: R) -> Self {
        NtReader {
            reader,
            line: String::new(),
            line_no: 0,
            skipped: 0,
        }
    }

    /// Malformed lines encountered so far.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn line_no(&self) -> u64 {
        self.line_no
    }
}

impl<R: BufRead> Iterator for NtReader<R> {
    type Item = Result<Triple>;

    fn next(&mut self) -> Option<Result<Triple>> {
        loop {
            self.line.clear();
            match self.reader.read_line(&mut self.line) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            match parse_nt_line(&self.line) {
                Ok(Some(t)) => return Some(Ok(t)),
                Ok(None) => {}
                Err(_) => self.skipped += 1,
            }
        }
    }
}

/// Parses a full N-Triples document from a string; returns the triples and
/// the count of malformed lines.
pub fn parse_ntriples_str(text: &str) -> (Vec<Triple>, u64) {
    let mut reader = NtReader::new(text.as_bytes());
    let triples: Vec<Triple> = reader
        .by_ref()
        .map(|r| r.expect("in-memory reads cannot fail"))
        .collect();
    (triples, reader.skipped())
}

struct LineScan<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> LineScan<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.at).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek();
        if b.is_some() {
            self.at += 1;
        }
        b
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ') | Some(b'\t')) {
            self.at += 1;
        }
    }

    fn expect_ws(&mut self) -> std::result::Result<(), String> {
        if !matches!(self.peek(), Some(b' ') | Some(b'\t')) {
            return Err("expected whitespace between terms".into());
        }
        self.skip_ws();
        Ok(())
    }

    /// One \uXXXX or \UXXXXXXXX escape, the backslash already consumed.
    fn uchar(&mut self, marker: u8) -> std::result::Result<char, String> {
        let digits = if marker == b'u' { 4 } else { 8 };
        let mut v: u32 = 0;
        for _ in 0..digits {
            let d = self.bump().ok_or("truncated \\u escape")?;
            let h = (d as char).to_digit(16).ok_or("bad hex digit in \\u escape")?;
            v = v * 16 + h;
        }
        char::from_u32(v).ok_or_else(|| format!("\\u escape U+{v:X} is not a scalar value"))
    }

    /// IRIREF body: everything between < and >, with UCHAR escapes applied.
    fn iri(&mut self) -> std::result::Result<Atom, String> {
        let mut out = String::new();
        loop {
            match self.bump().ok_or("unterminated IRI")? {
                b'>' => break,
                b'\\' => match self.bump().ok_or("truncated escape in IRI")? {
                    m @ (b'u' | b'U') => out.push(self.uchar(m)?),
                    other => return Err(format!("bad IRI escape \\{}", other as char)),
                },
                b' ' | b'\t' => return Err("whitespace inside IRI".into()),
                b => out.push(b as char),
            }
        }
        Atom::new(out.into_bytes()).map_err(|_| "empty IRI".into())
    }

    /// STRING_LITERAL_QUOTE body with ECHAR and UCHAR escapes.
    fn literal_body(&mut self) -> std::result::Result<String, String> {
        let mut out = String::new();
        loop {
            match self.bump().ok_or("unterminated literal")? {
                b'"' => return Ok(out),
                b'\\' => match self.bump().ok_or("truncated escape in literal")? {
                    b't' => out.push('\t'),
                    b'b' => out.push('\u{8}'),
                    b'n' => out.push('\n'),
                    b'r' => out.push('\r'),
                    b'f' => out.push('\u{c}'),
                    b'"' => out.push('"'),
                    b'\'' => out.push('\''),
                    b'\\' => out.push('\\'),
                    m @ (b'u' | b'U') => out.push(self.uchar(m)?),
                    other => return Err(format!("bad literal escape \\{}", other as char)),
                },
                b => out.push(b as char),
            }
        }
    }

    fn blank(&mut self) -> std::result::Result<Atom, String> {
        // The leading '_' is consumed by the caller.
        if self.bump() != Some(b':') {
            return Err("expected ':' after '_' in blank node".into());
        }
        let mut label = String::from("_:");
        while let Some(b) = self.peek() {
            if b == b' ' || b == b'\t' {
                break;
            }
            label.push(b as char);
            self.at += 1;
        }
        if label.len() == 2 {
            return Err("empty blank node label".into());
        }
        Atom::new(label.into_bytes()).map_err(|e| e.to_string())
    }

    /// Subject or predicate position: IRI, or blank node where allowed.
    fn resource(&mut self, allow_blank: bool) -> std::result::Result<Atom, String> {
        match self.bump().ok_or("unexpected end of line")? {
            b'<' => self.iri(),
            b'_' if allow_blank => self.blank(),
            other => Err(format!("unexpected character '{}'", other as char)),
        }
    }

    /// Object position: IRI, blank node, or literal. A literal's language
    /// tag or datatype suffix is kept as part of the atom text.
    fn object(&mut self) -> std::result::Result<Atom, String> {
        match self.bump().ok_or("unexpected end of line")? {
            b'<' => self.iri(),
            b'_' => self.blank(),
            b'"' => {
                let mut text = self.literal_body()?;
                match self.peek() {
                    Some(b'@') => {
                        self.at += 1;
                        text.push('@');
                        let mut any = false;
                        while let Some(b) = self.peek() {
                            if b.is_ascii_alphanumeric() || b == b'-' {
                                text.push(b as char);
                                self.at += 1;
                                any = true;
                            } else {
                                break;
                            }
                        }
                        if !any {
                            return Err("empty language tag".into());
                        }
                    }
                    Some(b'^') => {
                        self.at += 1;
                        if self.bump() != Some(b'^') {
                            return Err("expected '^^' before datatype".into());
                        }
                        if self.bump() != Some(b'<') {
                            return Err("datatype must be an IRI".into());
                        }
                        let dt = self.iri()?;
                        text.push_str("^^");
                        text.push_str(&String::from_utf8_lossy(dt.as_bytes()));
                    }
                    _ => {}
                }
                Atom::new(text.into_bytes()).map_err(|_| "empty literal".into())
            }
            other => Err(format!("unexpected character '{}'", other as char)),
        }
    }
}

/// Parses one N-Triples line. `Ok(None)` for blank and comment lines.
fn parse_nt_line(line: &str) -> std::result::Result<Option<Triple>, String> {
    let trimmed = line.trim_end_matches(['\n', '\r']);
    let mut scan = LineScan {
        bytes: trimmed.as_bytes(),
        at: 0,
    };
    scan.skip_ws();
    match scan.peek() {
        None | Some(b'#') => return Ok(None),
        _ => {}
    }
    let s = scan.resource(true)?;
    scan.expect_ws()?;
    let p = scan.resource(false)?;
    scan.expect_ws()?;
    let o = scan.object()?;
    scan.skip_ws();
    if scan.bump() != Some(b'.') {
        return Err("statement must end with '.'".into());
    }
    scan.skip_ws();
    match scan.peek() {
        None | Some(b'#') => Ok(Some(Triple::new(s, p, o))),
        Some(c) => Err(format!("trailing garbage '{}' after '.'", c as char)),
    }
}

// ------------------------------------------------------------------ run files

pub const RUN_MAGIC: &[u8; 8] = b"TRIPTRN1";

/// Writes the canonical run file: sorted fixed-width triples ready for a
/// bulk index build. Header: magic, atom width (u16), triple count (u64).
pub fn write_run(path: &Path, g: &Graph, atom_width: u16) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RUN_MAGIC)?;
    w.write_all(&atom_width.to_le_bytes())?;
    w.write_all(&(g.len() as u64).to_le_bytes())?;
    for t in g.iter() {
        for atom in t.atoms() {
            w.write_all(&encode_field(atom, atom_width as usize)?)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a run file back into a graph, returning the atom width it was
/// written with.
pub fn read_run(path: &Path) -> Result<(Graph, u16)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 18];
    r.read_exact(&mut head)
        .map_err(|_| Error::BadRunFile("shorter than a header".into()))?;
    if &head[0..8] != RUN_MAGIC {
        return Err(Error::BadRunFile("bad magic".into()));
    }
    let atom_width = u16::from_le_bytes([head[8], head[9]]);
    if atom_width == 0 {
        return Err(Error::BadRunFile("zero atom width".into()));
    }
    let count = u64::from_le_bytes(head[10..18].try_into().unwrap());
    let mut triples = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut field = vec![0u8; atom_width as usize];
    for i in 0..count {
        let mut atoms = Vec::with_capacity(3);
        for _ in 0..3 {
            r.read_exact(&mut field)
                .map_err(|_| Error::BadRunFile(format!("truncated at triple {i}")))?;
            atoms.push(
                decode_field(&field)
                    .map_err(|_| Error::BadRunFile(format!("empty atom field at triple {i}")))?,
            );
        }
        let o = atoms.pop().unwrap();
        let p = atoms.pop().unwrap();
        let s = atoms.pop().unwrap();
        triples.push(Triple::new(s, p, o));
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(Error::BadRunFile("trailing bytes after last triple".into()));
    }
    Ok((Graph::from_triples(triples), atom_width))
}

// ------------------------------------------------------------------ BGP text

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Word(String),
    Var(String),
    QuotedAtom(Atom),
    Dot,
    Open,
    Close,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer {
            chars: text.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            column: self.column,
            message: message.into(),
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next();
        match c {
            Some('\n') => {
                self.line += 1;
                self.column = 1;
            }
            Some(_) => self.column += 1,
            None => {}
        }
        c
    }

    /// Next token with its starting position, or None at end of input.
    fn next_token(&mut self) -> Result<Option<(Token, usize, usize)>> {
        loop {
            match self.chars.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                _ => break,
            }
        }
        let (line, column) = (self.line, self.column);
        let Some(&c) = self.chars.peek() else {
            return Ok(None);
        };
        let tok = match c {
            '{' => {
                self.bump();
                Token::Open
            }
            '}' => {
                self.bump();
                Token::Close
            }
            '?' => {
                self.bump();
                let mut name = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        name.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                if name.is_empty() {
                    return Err(self.err("'?' must be followed by a variable name"));
                }
                Token::Var(name)
            }
            '"' => {
                self.bump();
                let mut out: Vec<u8> = Vec::new();
                loop {
                    match self.bump() {
                        None => return Err(self.err("unterminated quoted atom")),
                        Some('"') => break,
                        Some('\\') => match self.bump() {
                            Some('"') => out.push(b'"'),
                            Some('\\') => out.push(b'\\'),
                            Some('n') => out.push(b'\n'),
                            Some('t') => out.push(b'\t'),
                            Some('r') => out.push(b'\r'),
                            Some(c) => return Err(self.err(format!("bad escape \\{c}"))),
                            None => return Err(self.err("truncated escape")),
                        },
                        Some(c) => {
                            let mut buf = [0u8; 4];
                            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                        }
                    }
                }
                let atom = Atom::new(out).map_err(|_| self.err("empty quoted atom"))?;
                Token::QuotedAtom(atom)
            }
            _ => {
                let mut word = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_whitespace() || c == '{' || c == '}' || c == '"' || c == '?' {
                        break;
                    }
                    word.push(c);
                    self.bump();
                }
                if word == "." {
                    Token::Dot
                } else {
                    Token::Word(word)
                }
            }
        };
        Ok(Some((tok, line, column)))
    }
}

/// Parses the query fragment: `SELECT ?v... WHERE { sap ( . sap )* }`.
/// Pattern terms are variables, bare atoms, or quoted atoms; a pattern
/// separator is a dot standing alone between whitespace.
pub fn parse_bgp(text: &str) -> Result<Bgp> {
    let mut lx = Lexer::new(text);
    let mut toks: Vec<(Token, usize, usize)> = Vec::new();
    while let Some(t) = lx.next_token()? {
        toks.push(t);
    }
    let mut at = 0usize;
    let err_at = |i: usize, message: &str| -> Error {
        let (line, column) = toks
            .get(i)
            .map(|&(_, l, c)| (l, c))
            .or_else(|| toks.last().map(|&(_, l, c)| (l, c)))
            .unwrap_or((1, 1));
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    };

    match toks.get(at) {
        Some((Token::Word(w), _, _)) if w == "SELECT" => at += 1,
        _ => return Err(err_at(at, "query must start with SELECT")),
    }
    let mut select: Vec<(String, usize)> = Vec::new();
    while let Some((Token::Var(v), _, _)) = toks.get(at) {
        select.push((v.clone(), at));
        at += 1;
    }
    match toks.get(at) {
        Some((Token::Word(w), _, _)) if w == "WHERE" => at += 1,
        _ => return Err(err_at(at, "expected WHERE after the selection list")),
    }
    if !matches!(toks.get(at), Some((Token::Open, _, _))) {
        return Err(err_at(at, "expected '{' after WHERE"));
    }
    at += 1;

    let mut patterns = Vec::new();
    loop {
        if matches!(toks.get(at), Some((Token::Close, _, _))) {
            at += 1;
            break;
        }
        let mut terms = Vec::with_capacity(3);
        for _ in 0..3 {
            let term = match toks.get(at) {
                Some((Token::Var(v), _, _)) => Term::Var(v.clone()),
                Some((Token::QuotedAtom(a), _, _)) => Term::Atom(a.clone()),
                Some((Token::Word(w), _, _)) => Term::Atom(
                    Atom::new(w.clone().into_bytes()).map_err(|_| err_at(at, "empty atom"))?,
                ),
                Some((Token::Dot, _, _)) => {
                    return Err(err_at(at, "pattern needs three terms before '.'"))
                }
                Some((Token::Close, _, _)) | None => {
                    return Err(err_at(at, "pattern needs three terms"))
                }
                Some((Token::Open, _, _)) => return Err(err_at(at, "unexpected '{'")),
            };
            terms.push(term);
            at += 1;
        }
        let o = terms.pop().unwrap();
        let p = terms.pop().unwrap();
        let s = terms.pop().unwrap();
        patterns.push(Sap::new(s, p, o));
        match toks.get(at) {
            Some((Token::Dot, _, _)) => {
                at += 1;
                // A trailing dot before '}' is tolerated.
            }
            Some((Token::Close, _, _)) => {}
            _ => return Err(err_at(at, "expected '.' or '}' after a pattern")),
        }
    }
    if at != toks.len() {
        return Err(err_at(at, "trailing input after '}'"));
    }
    if patterns.is_empty() {
        return Err(err_at(at.saturating_sub(1), "empty pattern block"));
    }
    let vars: BTreeSet<&str> = patterns.iter().flat_map(|s| s.vars()).collect();
    for (v, i) in &select {
        if !vars.contains(v.as_str()) {
            return Err(err_at(*i, &format!("selected variable ?{v} not in any pattern")));
        }
    }
    Ok(Bgp::new(select.into_iter().map(|(v, _)| v).collect(), patterns))
}
