//! Rational streams of internal and visible events, presented as guarded
//! equation systems.
//!
//! A stream is one of: the terminated stream `eps`, an internal step
//! `tau . s`, a visible event `vis n . s`, a reference to an equation
//! variable, or a concatenation `s ++ t`. Guarded systems unfold
//! deterministically: every state has exactly one head observation, and the
//! set of states reachable from a root under one-step unfolding is finite
//! for rational systems (enforced by a configurable cap).
//!
//! Canonical form: alias variables (`x = y`) are resolved, concatenation is
//! right-associated, and `eps ++ e` is rewritten to `e`. Structurally equal
//! canonical expressions share one state id.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lattice::{Universe, DEFAULT_UNIVERSE_CAP};

pub type Label = u64;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum StreamExpr {
    Eps,
    Tau(Box<StreamExpr>),
    Vis(Label, Box<StreamExpr>),
    Var(String),
    Concat(Box<StreamExpr>, Box<StreamExpr>),
}

impl StreamExpr {
    pub fn tau(next: StreamExpr) -> StreamExpr {
        StreamExpr::Tau(Box::new(next))
    }

    pub fn vis(label: Label, next: StreamExpr) -> StreamExpr {
        StreamExpr::Vis(label, Box::new(next))
    }

    pub fn var(name: impl Into<String>) -> StreamExpr {
        StreamExpr::Var(name.into())
    }

    pub fn concat(left: StreamExpr, right: StreamExpr) -> StreamExpr {
        StreamExpr::Concat(Box::new(left), Box::new(right))
    }

    fn vars_into(&self, out: &mut BTreeSet<String>) {
        match self {
            StreamExpr::Eps => {}
            StreamExpr::Tau(e) => e.vars_into(out),
            StreamExpr::Vis(_, e) => e.vars_into(out),
            StreamExpr::Var(v) => {
                out.insert(v.clone());
            }
            StreamExpr::Concat(a, b) => {
                a.vars_into(out);
                b.vars_into(out);
            }
        }
    }
}

impl fmt::Display for StreamExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `++` is lowest precedence, so a concat under a prefix constructor
        // needs parentheses to round-trip through the parser.
        fn atom(e: &StreamExpr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match e {
                StreamExpr::Concat(_, _) => write!(f, "({e})"),
                _ => write!(f, "{e}"),
            }
        }
        match self {
            StreamExpr::Eps => write!(f, "eps"),
            StreamExpr::Tau(e) => {
                write!(f, "tau . ")?;
                atom(e, f)
            }
            StreamExpr::Vis(n, e) => {
                write!(f, "vis {n} . ")?;
                atom(e, f)
            }
            StreamExpr::Var(v) => write!(f, "{v}"),
            StreamExpr::Concat(a, b) => {
                atom(a, f)?;
                write!(f, " ++ {b}")
            }
        }
    }
}

/// A system of equations `variable = stream expression`.
#[derive(Clone, Debug, Default)]
pub struct EquationSystem {
    defs: BTreeMap<String, StreamExpr>,
}

impl EquationSystem {
    pub fn new() -> EquationSystem {
        EquationSystem::default()
    }

    pub fn define(&mut self, name: impl Into<String>, expr: StreamExpr) {
        self.defs.insert(name.into(), expr);
    }

    pub fn get(&self, name: &str) -> Option<&StreamExpr> {
        self.defs.get(name)
    }

    pub fn variables(&self) -> impl Iterator<Item = &String> {
        self.defs.keys()
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    /// All variables referenced anywhere in the system or the given extra
    /// expressions must be defined.
    pub fn check_resolved(&self, extra: &[StreamExpr]) -> Result<(), SystemError> {
        let mut used = BTreeSet::new();
        for e in self.defs.values().chain(extra.iter()) {
            e.vars_into(&mut used);
        }
        for v in used {
            if !self.defs.contains_key(&v) {
                return Err(SystemError::UndefinedVariable(v));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SystemError {
    #[error("undefined variable `{0}`")]
    UndefinedVariable(String),
    #[error("unguarded cycle through {}", .0.join(" -> "))]
    UnguardedCycle(Vec<String>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UniverseError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("universe exceeds the cap of {cap} states; the system is not rational within budget")]
    UniverseExplosion { cap: usize },
}

/// Can the expression unfold directly to `eps`? Computed as a least fixed
/// point over the equation variables: `eps` is emptyable, `tau`/`vis` are
/// not, a variable inherits from its equation, and a concatenation is
/// emptyable iff both sides are.
fn emptyable_map(sys: &EquationSystem) -> BTreeMap<String, bool> {
    let mut map: BTreeMap<String, bool> = sys.variables().map(|v| (v.clone(), false)).collect();
    loop {
        let mut changed = false;
        for (v, e) in &sys.defs {
            if !map[v] && expr_emptyable(e, &map) {
                map.insert(v.clone(), true);
                changed = true;
            }
        }
        if !changed {
            return map;
        }
    }
}

fn expr_emptyable(e: &StreamExpr, map: &BTreeMap<String, bool>) -> bool {
    match e {
        StreamExpr::Eps => true,
        StreamExpr::Tau(_) | StreamExpr::Vis(_, _) => false,
        StreamExpr::Var(v) => *map.get(v).unwrap_or(&false),
        StreamExpr::Concat(a, b) => expr_emptyable(a, map) && expr_emptyable(b, map),
    }
}

/// Variables whose head must be known before the head of `e` is known.
fn head_deps(e: &StreamExpr, emptyable: &BTreeMap<String, bool>, out: &mut BTreeSet<String>) {
    match e {
        StreamExpr::Eps | StreamExpr::Tau(_) | StreamExpr::Vis(_, _) => {}
        StreamExpr::Var(v) => {
            out.insert(v.clone());
        }
        StreamExpr::Concat(a, b) => {
            head_deps(a, emptyable, out);
            if expr_emptyable(a, emptyable) {
                head_deps(b, emptyable, out);
            }
        }
    }
}

/// Accepts the system iff the head-dependency graph over variables is
/// acyclic; a cycle means some head observation is not productive.
pub fn check_guarded(sys: &EquationSystem) -> Result<(), SystemError> {
    sys.check_resolved(&[])?;
    let emptyable = emptyable_map(sys);
    let mut graph: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for (v, e) in &sys.defs {
        let mut deps = BTreeSet::new();
        head_deps(e, &emptyable, &mut deps);
        graph.insert(v, deps);
    }

    // DFS with an explicit path stack so the cycle witness can be reported.
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut marks: BTreeMap<&str, Mark> = graph.keys().map(|&v| (v, Mark::White)).collect();

    fn visit<'a>(
        v: &'a str,
        graph: &'a BTreeMap<&str, BTreeSet<String>>,
        marks: &mut BTreeMap<&'a str, Mark>,
        path: &mut Vec<String>,
    ) -> Result<(), SystemError> {
        marks.insert(v, Mark::Grey);
        path.push(v.to_string());
        for w in graph.get(v).into_iter().flatten() {
            let (key, _) = graph.get_key_value(w.as_str()).expect("resolved");
            match marks[key] {
                Mark::Black => {}
                Mark::Grey => {
                    let start = path.iter().position(|p| p == w).unwrap_or(0);
                    let mut cycle: Vec<String> = path[start..].to_vec();
                    cycle.push(w.clone());
                    return Err(SystemError::UnguardedCycle(cycle));
                }
                Mark::White => visit(key, graph, marks, path)?,
            }
        }
        path.pop();
        marks.insert(v, Mark::Black);
        Ok(())
    }

    let vars: Vec<&str> = graph.keys().copied().collect();
    for v in vars {
        if marks[v] == Mark::White {
            visit(v, &graph, &mut marks, &mut Vec::new())?;
        }
    }
    Ok(())
}

/// Canonicalizer for a validated system: resolves alias chains, flattens and
/// right-associates concatenation, and erases `eps ++ e` to `e`.
pub struct Canonicalizer {
    alias: BTreeMap<String, String>,
}

impl Canonicalizer {
    /// Requires a guarded system (alias chains are then acyclic).
    pub fn new(sys: &EquationSystem) -> Canonicalizer {
        let mut alias = BTreeMap::new();
        for v in sys.variables() {
            let mut cur = v.clone();
            while let Some(StreamExpr::Var(next)) = sys.get(&cur) {
                cur = next.clone();
            }
            alias.insert(v.clone(), cur);
        }
        Canonicalizer { alias }
    }

    pub fn canon(&self, e: &StreamExpr) -> StreamExpr {
        match e {
            StreamExpr::Eps => StreamExpr::Eps,
            StreamExpr::Tau(x) => StreamExpr::tau(self.canon(x)),
            StreamExpr::Vis(n, x) => StreamExpr::vis(*n, self.canon(x)),
            StreamExpr::Var(v) => {
                StreamExpr::Var(self.alias.get(v).cloned().unwrap_or_else(|| v.clone()))
            }
            StreamExpr::Concat(_, _) => {
                let mut elems = Vec::new();
                self.flatten(e, &mut elems);
                let last = elems.pop().expect("flatten yields at least one element");
                // interior `eps` elements are left operands of some `++` and
                // are erased; a trailing `eps` is kept
                elems.retain(|x| *x != StreamExpr::Eps);
                elems
                    .into_iter()
                    .rev()
                    .fold(last, |acc, x| StreamExpr::concat(x, acc))
            }
        }
    }

    fn flatten(&self, e: &StreamExpr, out: &mut Vec<StreamExpr>) {
        match e {
            StreamExpr::Concat(a, b) => {
                self.flatten(a, out);
                self.flatten(b, out);
            }
            other => out.push(self.canon(other)),
        }
    }
}

/// One-step observation of a canonical state.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Head {
    Eps,
    Tau(usize),
    Vis(Label, usize),
}

/// Options for universe construction.
#[derive(Clone, Debug)]
pub struct UniverseOptions {
    pub cap: usize,
    /// Also intern every concat decomposition (prefix/suffix splits and the
    /// terminated stream), as required by the concat closure.
    pub concat_closed: bool,
}

impl Default for UniverseOptions {
    fn default() -> Self {
        UniverseOptions {
            cap: DEFAULT_UNIVERSE_CAP,
            concat_closed: false,
        }
    }
}

/// The finite carrier: canonical states reachable from the roots, closed
/// under head successors (and under concat decompositions when requested).
pub struct StreamUniverse {
    carrier: Arc<Universe>,
    system: EquationSystem,
    canon: Canonicalizer,
    exprs: Vec<StreamExpr>,
    heads: Vec<Head>,
    index: HashMap<StreamExpr, usize>,
    /// Per state, the list of splits `(head, tail)` with
    /// `state = canon(head ++ tail)`; populated only when concat-closed.
    decomps: Vec<Vec<(usize, usize)>>,
    concat_closed: bool,
}

impl fmt::Debug for StreamUniverse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StreamUniverse({} states)", self.size())
    }
}

impl StreamUniverse {
    pub fn carrier(&self) -> &Arc<Universe> {
        &self.carrier
    }

    pub fn size(&self) -> usize {
        self.exprs.len()
    }

    pub fn head(&self, state: usize) -> Head {
        self.heads[state]
    }

    pub fn expr(&self, state: usize) -> &StreamExpr {
        &self.exprs[state]
    }

    pub fn name(&self, state: usize) -> &str {
        self.carrier.name(state)
    }

    pub fn system(&self) -> &EquationSystem {
        &self.system
    }

    pub fn is_concat_closed(&self) -> bool {
        self.concat_closed
    }

    /// Looks up the state of an expression (after canonicalization).
    pub fn state_of(&self, e: &StreamExpr) -> Option<usize> {
        self.index.get(&self.canon.canon(e)).copied()
    }

    /// Splits of a state as a concatenation within this universe.
    pub fn decompositions(&self, state: usize) -> &[(usize, usize)] {
        &self.decomps[state]
    }
}

struct Builder<'a> {
    sys: &'a EquationSystem,
    canon: Canonicalizer,
    exprs: Vec<StreamExpr>,
    index: HashMap<StreamExpr, usize>,
    queue: VecDeque<usize>,
    cap: usize,
}

impl<'a> Builder<'a> {
    fn intern(&mut self, canonical: StreamExpr) -> Result<usize, UniverseError> {
        if let Some(&id) = self.index.get(&canonical) {
            return Ok(id);
        }
        if self.exprs.len() >= self.cap {
            return Err(UniverseError::UniverseExplosion { cap: self.cap });
        }
        let id = self.exprs.len();
        self.exprs.push(canonical.clone());
        self.index.insert(canonical, id);
        self.queue.push_back(id);
        Ok(id)
    }

    /// The unique one-step observation of a canonical expression. Guarded
    /// systems make this terminate: variable lookups follow the acyclic
    /// head-dependency graph.
    fn head_of(&mut self, e: &StreamExpr) -> Result<Head, UniverseError> {
        match e {
            StreamExpr::Eps => Ok(Head::Eps),
            StreamExpr::Tau(x) => {
                let id = self.intern((**x).clone())?;
                Ok(Head::Tau(id))
            }
            StreamExpr::Vis(n, x) => {
                let id = self.intern((**x).clone())?;
                Ok(Head::Vis(*n, id))
            }
            StreamExpr::Var(v) => {
                let def = self.sys.get(v).expect("resolved system").clone();
                let canonical = self.canon.canon(&def);
                self.head_of(&canonical)
            }
            StreamExpr::Concat(a, b) => {
                // concatenation observes its first operand; on termination
                // it observes the second
                match self.head_of_inner(a)? {
                    InnerHead::Eps => self.head_of(b),
                    InnerHead::Tau(a1) => {
                        let succ = self.canon.canon(&StreamExpr::concat(a1, (**b).clone()));
                        Ok(Head::Tau(self.intern(succ)?))
                    }
                    InnerHead::Vis(n, a1) => {
                        let succ = self.canon.canon(&StreamExpr::concat(a1, (**b).clone()));
                        Ok(Head::Vis(n, self.intern(succ)?))
                    }
                }
            }
        }
    }

    /// Head computation that returns the successor as an expression instead
    /// of interning it, for use inside concatenations.
    fn head_of_inner(&mut self, e: &StreamExpr) -> Result<InnerHead, UniverseError> {
        match e {
            StreamExpr::Eps => Ok(InnerHead::Eps),
            StreamExpr::Tau(x) => Ok(InnerHead::Tau((**x).clone())),
            StreamExpr::Vis(n, x) => Ok(InnerHead::Vis(*n, (**x).clone())),
            StreamExpr::Var(v) => {
                let def = self.sys.get(v).expect("resolved system").clone();
                let canonical = self.canon.canon(&def);
                self.head_of_inner(&canonical)
            }
            StreamExpr::Concat(a, b) => match self.head_of_inner(a)? {
                InnerHead::Eps => self.head_of_inner(b),
                InnerHead::Tau(a1) => Ok(InnerHead::Tau(
                    self.canon.canon(&StreamExpr::concat(a1, (**b).clone())),
                )),
                InnerHead::Vis(n, a1) => Ok(InnerHead::Vis(
                    n,
                    self.canon.canon(&StreamExpr::concat(a1, (**b).clone())),
                )),
            },
        }
    }
}

enum InnerHead {
    Eps,
    Tau(StreamExpr),
    Vis(Label, StreamExpr),
}

/// Builds the smallest set of canonical states containing the roots and
/// closed under head successors.
pub fn build_universe(
    sys: &EquationSystem,
    roots: &[StreamExpr],
    opts: &UniverseOptions,
) -> Result<Arc<StreamUniverse>, UniverseError> {
    sys.check_resolved(roots)?;
    check_guarded(sys)?;
    let canon = Canonicalizer::new(sys);

    let mut b = Builder {
        sys,
        canon,
        exprs: Vec::new(),
        index: HashMap::new(),
        queue: VecDeque::new(),
        cap: opts.cap,
    };
    for r in roots {
        let c = b.canon.canon(r);
        b.intern(c)?;
    }
    if opts.concat_closed {
        b.intern(StreamExpr::Eps)?;
    }

    let mut heads: Vec<Option<Head>> = Vec::new();
    loop {
        while let Some(id) = b.queue.pop_front() {
            let e = b.exprs[id].clone();
            let h = b.head_of(&e)?;
            if heads.len() <= id {
                heads.resize(id + 1, None);
            }
            heads[id] = Some(h);
        }
        if !opts.concat_closed {
            break;
        }
        // saturate decomposition components: for every interned chain
        // e1 ++ ... ++ ek, every prefix concatenation and suffix must be a
        // state too, then everything is head-closed again
        let mut added = false;
        for id in 0..b.exprs.len() {
            let e = b.exprs[id].clone();
            if let StreamExpr::Concat(_, _) = e {
                for (h, t) in chain_splits(&b.canon, &e) {
                    let before = b.exprs.len();
                    b.intern(h)?;
                    b.intern(t)?;
                    if b.exprs.len() > before {
                        added = true;
                    }
                }
            }
        }
        if !added && b.queue.is_empty() {
            break;
        }
    }

    let heads: Vec<Head> = heads
        .into_iter()
        .map(|h| h.expect("head computed"))
        .collect();
    let names: Vec<String> = b.exprs.iter().map(|e| e.to_string()).collect();
    let carrier = Universe::new(names);

    let mut decomps: Vec<Vec<(usize, usize)>> = vec![Vec::new(); b.exprs.len()];
    if opts.concat_closed {
        let eps_id = b.index[&StreamExpr::Eps];
        for (id, d) in decomps.iter_mut().enumerate() {
            // u = eps ++ u always splits off the terminated stream
            d.push((eps_id, id));
            let e = &b.exprs[id];
            if let StreamExpr::Concat(_, _) = e {
                for (h, t) in chain_splits(&b.canon, e) {
                    d.push((b.index[&h], b.index[&t]));
                }
            }
        }
    }

    Ok(Arc::new(StreamUniverse {
        carrier,
        system: sys.clone(),
        canon: b.canon,
        exprs: b.exprs,
        heads,
        index: b.index,
        decomps,
        concat_closed: opts.concat_closed,
    }))
}

/// All non-trivial splits of a canonical concat chain `e1 ++ ... ++ en`:
/// for each cut point, the canonical prefix concatenation and the suffix.
fn chain_splits(canon: &Canonicalizer, e: &StreamExpr) -> Vec<(StreamExpr, StreamExpr)> {
    let mut elems = Vec::new();
    fn collect(e: &StreamExpr, out: &mut Vec<StreamExpr>) {
        match e {
            StreamExpr::Concat(a, b) => {
                out.push((**a).clone());
                collect(b, out);
            }
            other => out.push(other.clone()),
        }
    }
    collect(e, &mut elems);
    let mut out = Vec::new();
    for cut in 1..elems.len() {
        let prefix = elems[..cut]
            .iter()
            .cloned()
            .reduce(StreamExpr::concat)
            .expect("non-empty prefix");
        let suffix = elems[cut..]
            .iter()
            .cloned()
            .reduce(StreamExpr::concat)
            .expect("non-empty suffix");
        out.push((canon.canon(&prefix), canon.canon(&suffix)));
    }
    out
}

// ---------------------------------------------------------------------------
// Parsing of `.strm` files
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("{line}: duplicate definition of `{name}`")]
    Duplicate { line: usize, name: String },
    #[error("undefined variable `{0}`")]
    Undefined(String),
}

pub(crate) struct Tokenizer<'a> {
    src: &'a str,
    pos: usize,
    pub line: usize,
    line_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Token {
    Ident(String),
    Nat(u64),
    Str(String),
    Punct(&'static str),
    Newline,
    Eof,
}

impl<'a> Tokenizer<'a> {
    pub fn new(src: &'a str) -> Tokenizer<'a> {
        Tokenizer {
            src,
            pos: 0,
            line: 1,
            line_start: 0,
        }
    }

    pub fn col(&self) -> usize {
        self.pos - self.line_start + 1
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    pub fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            col: self.col(),
            msg: msg.into(),
        }
    }

    pub fn next(&mut self) -> Result<Token, ParseError> {
        loop {
            let rest = self.rest();
            let mut chars = rest.chars();
            match chars.next() {
                None => return Ok(Token::Eof),
                Some('\n') => {
                    self.pos += 1;
                    self.line += 1;
                    self.line_start = self.pos;
                    return Ok(Token::Newline);
                }
                Some('\r') => {
                    self.pos += 1;
                }
                Some(c) if c == ' ' || c == '\t' => {
                    self.pos += 1;
                }
                Some('#') => {
                    let nl = rest
                        .find('\n')
                        .map(|i| self.pos + i)
                        .unwrap_or(self.src.len());
                    self.pos = nl;
                }
                Some('"') => {
                    let body = &rest[1..];
                    match body.find('"') {
                        Some(end) => {
                            let s = body[..end].to_string();
                            self.pos += end + 2;
                            return Ok(Token::Str(s));
                        }
                        None => return Err(self.err("unterminated string")),
                    }
                }
                Some(c) if c.is_ascii_digit() => {
                    let len = rest.chars().take_while(|c| c.is_ascii_digit()).count();
                    let n: u64 = rest[..len]
                        .parse()
                        .map_err(|_| self.err("number out of range"))?;
                    self.pos += len;
                    return Ok(Token::Nat(n));
                }
                Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                    let len = rest
                        .chars()
                        .take_while(|&c| c.is_ascii_alphanumeric() || c == '_' || c == '\'')
                        .count();
                    let s = rest[..len].to_string();
                    self.pos += len;
                    return Ok(Token::Ident(s));
                }
                Some(_) => {
                    for p in ["++", "=", ".", "(", ")", "{", "}", ",", ";"] {
                        if rest.starts_with(p) {
                            self.pos += p.len();
                            return Ok(Token::Punct(p));
                        }
                    }
                    return Err(self.err(format!(
                        "unexpected character `{}`",
                        chars.as_str().chars().next().unwrap_or(' ')
                    )));
                }
            }
        }
    }

    pub fn peek(&mut self) -> Result<Token, ParseError> {
        let save = (self.pos, self.line, self.line_start);
        let t = self.next();
        (self.pos, self.line, self.line_start) = save;
        t
    }

    pub fn expect_punct(&mut self, p: &'static str) -> Result<(), ParseError> {
        match self.next()? {
            Token::Punct(q) if q == p => Ok(()),
            other => Err(self.err(format!("expected `{p}`, found {other:?}"))),
        }
    }

    pub fn expect_ident(&mut self) -> Result<String, ParseError> {
        match self.next()? {
            Token::Ident(s) => Ok(s),
            other => Err(self.err(format!("expected identifier, found {other:?}"))),
        }
    }

    /// Skips blank space up to and including line ends.
    pub fn skip_newlines(&mut self) -> Result<(), ParseError> {
        while self.peek()? == Token::Newline {
            self.next()?;
        }
        Ok(())
    }
}

const KEYWORDS: &[&str] = &["def", "eps", "tau", "vis"];

/// Parses one stream expression. `++` is right-associative with the lowest
/// precedence; the prefix constructors bind tighter, so `tau . x ++ y`
/// parses as `(tau . x) ++ y`.
pub(crate) fn parse_expr(tz: &mut Tokenizer) -> Result<StreamExpr, ParseError> {
    let first = parse_atom(tz)?;
    if tz.peek()? == Token::Punct("++") {
        tz.next()?;
        let rest = parse_expr(tz)?;
        Ok(StreamExpr::concat(first, rest))
    } else {
        Ok(first)
    }
}

fn parse_atom(tz: &mut Tokenizer) -> Result<StreamExpr, ParseError> {
    match tz.next()? {
        Token::Ident(s) if s == "eps" => Ok(StreamExpr::Eps),
        Token::Ident(s) if s == "tau" => {
            tz.expect_punct(".")?;
            Ok(StreamExpr::tau(parse_atom(tz)?))
        }
        Token::Ident(s) if s == "vis" => {
            let n = match tz.next()? {
                Token::Nat(n) => n,
                other => return Err(tz.err(format!("expected event label, found {other:?}"))),
            };
            tz.expect_punct(".")?;
            Ok(StreamExpr::vis(n, parse_atom(tz)?))
        }
        Token::Ident(s) if KEYWORDS.contains(&s.as_str()) => {
            Err(tz.err(format!("keyword `{s}` is not a stream expression")))
        }
        Token::Ident(s) => Ok(StreamExpr::var(s)),
        Token::Punct("(") => {
            let e = parse_expr(tz)?;
            tz.expect_punct(")")?;
            Ok(e)
        }
        other => Err(tz.err(format!("expected stream expression, found {other:?}"))),
    }
}

/// Parses a `.strm` file: one `def <ident> = <expr>` per line, `#` comments,
/// LF or CRLF line endings. All referenced variables must be defined.
pub fn parse_system(text: &str) -> Result<EquationSystem, ParseError> {
    let mut tz = Tokenizer::new(text);
    let mut sys = EquationSystem::new();
    loop {
        tz.skip_newlines()?;
        match tz.next()? {
            Token::Eof => break,
            Token::Ident(kw) if kw == "def" => {
                let line = tz.line;
                let name = tz.expect_ident()?;
                if KEYWORDS.contains(&name.as_str()) {
                    return Err(tz.err(format!("`{name}` is a reserved word")));
                }
                if sys.get(&name).is_some() {
                    return Err(ParseError::Duplicate { line, name });
                }
                tz.expect_punct("=")?;
                let expr = parse_expr(&mut tz)?;
                match tz.next()? {
                    Token::Newline | Token::Eof => {}
                    other => return Err(tz.err(format!("trailing input {other:?}"))),
                }
                sys.define(name, expr);
            }
            other => return Err(tz.err(format!("expected `def`, found {other:?}"))),
        }
    }
    if let Err(SystemError::UndefinedVariable(v)) = sys.check_resolved(&[]) {
        return Err(ParseError::Undefined(v));
    }
    Ok(sys)
}

// ---------------------------------------------------------------------------
// Random guarded systems, for the law fuzzer and the algebraic test corpus
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SysGenConfig {
    pub max_vars: usize,
    pub max_labels: Label,
    pub allow_concat: bool,
    /// Reject generated systems whose reachable universe exceeds this size.
    pub max_states: usize,
}

impl Default for SysGenConfig {
    fn default() -> Self {
        SysGenConfig {
            max_vars: 4,
            max_labels: 3,
            allow_concat: true,
            max_states: 6,
        }
    }
}

/// Generates a random guarded system together with its universe (roots: all
/// variables). Candidates that fail the guardedness check or exceed the
/// state bound are regenerated, deterministically in the seed.
pub fn random_system(
    cfg: &SysGenConfig,
    rng: &mut ChaCha8Rng,
) -> (EquationSystem, Arc<StreamUniverse>) {
    loop {
        let k = rng.gen_range(1..=cfg.max_vars);
        let mut sys = EquationSystem::new();
        let names: Vec<String> = (0..k).map(|i| format!("v{i}")).collect();
        for i in 0..k {
            let def = random_def(cfg, &names, i, rng);
            sys.define(names[i].clone(), def);
        }
        if check_guarded(&sys).is_err() {
            continue;
        }
        let roots: Vec<StreamExpr> = names.iter().map(StreamExpr::var).collect();
        let opts = UniverseOptions {
            cap: cfg.max_states,
            concat_closed: false,
        };
        if let Ok(uni) = build_universe(&sys, &roots, &opts) {
            return (sys, uni);
        }
    }
}

fn random_def(cfg: &SysGenConfig, names: &[String], i: usize, rng: &mut ChaCha8Rng) -> StreamExpr {
    let k = names.len();
    let tail = |rng: &mut ChaCha8Rng| -> StreamExpr {
        if rng.gen_bool(0.25) {
            StreamExpr::Eps
        } else {
            StreamExpr::var(&names[rng.gen_range(0..k)])
        }
    };
    let guarded = |rng: &mut ChaCha8Rng| -> StreamExpr {
        let mut e = tail(rng);
        for _ in 0..rng.gen_range(1..=2) {
            e = if rng.gen_bool(0.5) {
                StreamExpr::tau(e)
            } else {
                StreamExpr::vis(rng.gen_range(0..cfg.max_labels), e)
            };
        }
        e
    };
    let roll = rng.gen_range(0..100);
    if roll < 65 || !cfg.allow_concat {
        guarded(rng)
    } else if roll < 75 && i + 1 < k {
        // alias to a later variable keeps the head-dependency graph acyclic
        StreamExpr::var(&names[rng.gen_range(i + 1..k)])
    } else {
        // a constructor-guarded left operand has no head dependencies
        StreamExpr::concat(guarded(rng), tail(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn sys(text: &str) -> EquationSystem {
        parse_system(text).expect("parse")
    }

    #[test]
    fn parses_silent_divergence() {
        let s = sys("def w = tau . w\n");
        assert_eq!(s.get("w"), Some(&StreamExpr::tau(StreamExpr::var("w"))));
    }

    #[test]
    fn parses_eps_definition() {
        let s = sys("def a = eps");
        assert_eq!(s.get("a"), Some(&StreamExpr::Eps));
    }

    #[test]
    fn parses_concat_definition() {
        let s = sys("def r = vis 7 . eps\ndef s1 = eps\ndef u = r ++ s1\n");
        assert_eq!(
            s.get("u"),
            Some(&StreamExpr::concat(
                StreamExpr::var("r"),
                StreamExpr::var("s1")
            ))
        );
    }

    #[test]
    fn concat_is_right_associative_and_lowest_precedence() {
        let s = sys(
            "def a = eps\ndef b = eps\ndef c = eps\ndef u = a ++ b ++ c\ndef v = tau . a ++ b\n",
        );
        assert_eq!(
            s.get("u"),
            Some(&StreamExpr::concat(
                StreamExpr::var("a"),
                StreamExpr::concat(StreamExpr::var("b"), StreamExpr::var("c"))
            ))
        );
        assert_eq!(
            s.get("v"),
            Some(&StreamExpr::concat(
                StreamExpr::tau(StreamExpr::var("a")),
                StreamExpr::var("b")
            ))
        );
    }

    #[test]
    fn parse_error_carries_line_and_col() {
        let err = parse_system("def a = eps\ndef b = tau tau\n").unwrap_err();
        match err {
            ParseError::Syntax { line, col, .. } => {
                assert_eq!(line, 2);
                assert!(col > 8, "col {col}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn undefined_variable_rejected() {
        assert_eq!(
            parse_system("def a = tau . missing\n").unwrap_err(),
            ParseError::Undefined("missing".into())
        );
    }

    #[test]
    fn duplicate_definition_rejected() {
        assert!(matches!(
            parse_system("def a = eps\ndef a = eps\n").unwrap_err(),
            ParseError::Duplicate { .. }
        ));
    }

    #[test]
    fn crlf_accepted() {
        let s = sys("def a = eps\r\ndef b = tau . a\r\n");
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn unguarded_self_reference_reports_cycle() {
        let mut s = EquationSystem::new();
        s.define("x", StreamExpr::var("x"));
        assert_eq!(
            check_guarded(&s).unwrap_err(),
            SystemError::UnguardedCycle(vec!["x".into(), "x".into()])
        );
    }

    #[test]
    fn tau_guard_accepted() {
        let s = sys("def w = tau . w\n");
        assert!(check_guarded(&s).is_ok());
    }

    #[test]
    fn concat_cycle_rejected() {
        let s = sys("def x = x ++ y\ndef y = vis 0 . eps\n");
        assert!(matches!(
            check_guarded(&s).unwrap_err(),
            SystemError::UnguardedCycle(_)
        ));
    }

    #[test]
    fn alias_cycle_rejected() {
        let s = sys("def x = y\ndef y = x\n");
        assert!(matches!(
            check_guarded(&s).unwrap_err(),
            SystemError::UnguardedCycle(_)
        ));
    }

    fn fig1() -> EquationSystem {
        sys("def s0 = vis 0 . s0'\n\
             def s0' = tau . s1\n\
             def s1 = vis 1 . s1'\n\
             def s1' = vis 2 . s0'\n\
             def t0 = vis 0 . t0'\n\
             def t0' = t1\n\
             def t1 = vis 1 . t1'\n\
             def t1' = vis 2 . t0'\n")
    }

    #[test]
    fn alias_system_is_guarded() {
        assert!(check_guarded(&fig1()).is_ok());
    }

    #[test]
    fn head_left_unit_of_concat() {
        let s = sys("def a = eps");
        let uni = build_universe(
            &s,
            &[StreamExpr::concat(
                StreamExpr::Eps,
                StreamExpr::vis(1, StreamExpr::Eps),
            )],
            &UniverseOptions::default(),
        )
        .unwrap();
        // canon already erases the eps prefix, so the root is vis 1 . eps
        let root = uni.state_of(&StreamExpr::vis(1, StreamExpr::Eps)).unwrap();
        let eps = uni.state_of(&StreamExpr::Eps).unwrap();
        assert_eq!(uni.head(root), Head::Vis(1, eps));
    }

    #[test]
    fn head_of_concat_under_tau_keeps_the_tail() {
        let s = sys("def a = tau . eps\ndef b = vis 3 . eps\n");
        let root = StreamExpr::concat(StreamExpr::var("a"), StreamExpr::var("b"));
        let uni =
            build_universe(&s, std::slice::from_ref(&root), &UniverseOptions::default()).unwrap();
        let rid = uni.state_of(&root).unwrap();
        let succ = uni
            .state_of(&StreamExpr::concat(StreamExpr::Eps, StreamExpr::var("b")))
            .unwrap();
        // eps ++ b canonicalizes to b
        assert_eq!(succ, uni.state_of(&StreamExpr::var("b")).unwrap());
        assert_eq!(uni.head(rid), Head::Tau(succ));
    }

    #[test]
    fn fig1_alias_resolution_head() {
        let uni = build_universe(
            &fig1(),
            &[StreamExpr::var("t0'")],
            &UniverseOptions::default(),
        )
        .unwrap();
        let t0p = uni.state_of(&StreamExpr::var("t0'")).unwrap();
        assert_eq!(t0p, uni.state_of(&StreamExpr::var("t1")).unwrap());
        let t1p = uni.state_of(&StreamExpr::var("t1'")).unwrap();
        assert_eq!(uni.head(t0p), Head::Vis(1, t1p));
    }

    #[test]
    fn one_state_loop_universe() {
        let s = sys("def w = tau . w\n");
        let uni = build_universe(&s, &[StreamExpr::var("w")], &UniverseOptions::default()).unwrap();
        assert_eq!(uni.size(), 1);
        assert_eq!(uni.head(0), Head::Tau(0));
    }

    /// Oracle: breadth-first closure done by hand for the Fig-style system of
    /// two four-state loops with one alias.
    #[test]
    fn fig1_universe_has_seven_states() {
        let uni = build_universe(
            &fig1(),
            &[StreamExpr::var("s0"), StreamExpr::var("t0")],
            &UniverseOptions::default(),
        )
        .unwrap();
        assert_eq!(uni.size(), 7);
        let expected = ["s0", "s0'", "s1", "s1'", "t0", "t1", "t1'"];
        for name in expected {
            assert!(
                uni.state_of(&StreamExpr::var(name)).is_some(),
                "missing {name}"
            );
        }
    }

    #[test]
    fn growing_concat_chain_exceeds_cap() {
        let s = sys("def x = tau . (x ++ y)\ndef y = vis 0 . eps\n");
        let err = build_universe(
            &s,
            &[StreamExpr::var("x")],
            &UniverseOptions {
                cap: 16,
                concat_closed: false,
            },
        )
        .unwrap_err();
        assert_eq!(err, UniverseError::UniverseExplosion { cap: 16 });
    }

    #[test]
    fn heads_are_deterministic_and_interned() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let (_, uni) = random_system(&SysGenConfig::default(), &mut rng);
            for s in 0..uni.size() {
                // recomputing the head through the expression gives the same id
                let h1 = uni.head(s);
                let e = uni.expr(s).clone();
                let s2 = uni.state_of(&e).unwrap();
                assert_eq!(s, s2);
                assert_eq!(h1, uni.head(s2));
            }
        }
    }

    #[test]
    fn concat_closed_universe_has_decompositions() {
        let s = sys("def r = tau . vis 7 . eps\ndef k = vis 1 . eps\n");
        let root = StreamExpr::concat(StreamExpr::var("r"), StreamExpr::var("k"));
        let uni = build_universe(
            &s,
            std::slice::from_ref(&root),
            &UniverseOptions {
                cap: 64,
                concat_closed: true,
            },
        )
        .unwrap();
        let rid = uni.state_of(&root).unwrap();
        let r = uni.state_of(&StreamExpr::var("r")).unwrap();
        let k = uni.state_of(&StreamExpr::var("k")).unwrap();
        let eps = uni.state_of(&StreamExpr::Eps).unwrap();
        let d = uni.decompositions(rid);
        assert!(d.contains(&(r, k)));
        assert!(d.contains(&(eps, rid)));
    }

    #[test]
    fn display_round_trips_through_parser() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..40 {
            let (sysm, uni) = random_system(&SysGenConfig::default(), &mut rng);
            for s in 0..uni.size() {
                let printed = uni.expr(s).to_string();
                let mut tz = Tokenizer::new(&printed);
                let parsed = parse_expr(&mut tz).expect("reparse");
                let c = Canonicalizer::new(&sysm);
                assert_eq!(&c.canon(&parsed), uni.expr(s), "from `{printed}`");
            }
        }
    }
}
