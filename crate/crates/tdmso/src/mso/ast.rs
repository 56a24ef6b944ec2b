//! Formula AST, sort checking, and the pretty-printer.
//!
//! Variables are referenced by name and belong to one of four sorts:
//! vertices, edges, vertex sets, edge sets. Atoms come in two layers: the
//! first-order layer (`adj`, `inc`, `=`, `in`, `label`) and a set layer
//! (`sing`, `sub`, `adjS`, `incS`, `labelS`) that the normalizer targets.
//! On singleton sets each set atom coincides with its first-order
//! counterpart.

use std::collections::BTreeSet;
use std::fmt;

use super::MsoError;

/// Variable sort. The concrete syntax spells these `v`, `e`, `vs`, `es`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sort {
    Vertex,
    Edge,
    VertexSet,
    EdgeSet,
}

impl Sort {
    pub fn keyword(self) -> &'static str {
        match self {
            Sort::Vertex => "v",
            Sort::Edge => "e",
            Sort::VertexSet => "vs",
            Sort::EdgeSet => "es",
        }
    }

    pub fn from_keyword(kw: &str) -> Option<Sort> {
        match kw {
            "v" => Some(Sort::Vertex),
            "e" => Some(Sort::Edge),
            "vs" => Some(Sort::VertexSet),
            "es" => Some(Sort::EdgeSet),
            _ => None,
        }
    }

    pub fn is_set(self) -> bool {
        matches!(self, Sort::VertexSet | Sort::EdgeSet)
    }

    /// The set sort holding elements of a first-order sort (identity on
    /// set sorts).
    pub fn set_sort(self) -> Sort {
        match self {
            Sort::Vertex | Sort::VertexSet => Sort::VertexSet,
            Sort::Edge | Sort::EdgeSet => Sort::EdgeSet,
        }
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Atomic formulas. The `String` fields are variable names except for the
/// first field of `Label`/`LabelSet`, which is a label name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Atom {
    /// Two vertices are adjacent.
    Adj(String, String),
    /// A vertex is an endpoint of an edge.
    Inc(String, String),
    /// Equality, at any sort (both sides must share one).
    Eq(String, String),
    /// Element membership: vertex in vertex set or edge in edge set.
    In(String, String),
    /// A vertex or edge carries the named label.
    Label(String, String),
    /// A set has exactly one element.
    Sing(String),
    /// Subset, between sets of the same sort.
    Sub(String, String),
    /// Some element of the first vertex set is adjacent to some element of
    /// the second.
    AdjSet(String, String),
    /// Some vertex of the set is an endpoint of some edge of the edge set.
    IncSet(String, String),
    /// Some element of the set carries the named label.
    LabelSet(String, String),
}

/// Formula body. `Exists`/`Forall` bind a fresh variable of the given sort;
/// inner bindings shadow outer ones of the same name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    Atom(Atom),
    Not(Box<Body>),
    And(Box<Body>, Box<Body>),
    Or(Box<Body>, Box<Body>),
    Implies(Box<Body>, Box<Body>),
    Exists(Sort, String, Box<Body>),
    Forall(Sort, String, Box<Body>),
}

impl std::ops::Not for Body {
    type Output = Body;

    fn not(self) -> Body {
        Body::Not(Box::new(self))
    }
}

impl Body {
    pub fn and(self, rhs: Body) -> Body {
        Body::And(Box::new(self), Box::new(rhs))
    }

    pub fn or(self, rhs: Body) -> Body {
        Body::Or(Box::new(self), Box::new(rhs))
    }

    pub fn implies(self, rhs: Body) -> Body {
        Body::Implies(Box::new(self), Box::new(rhs))
    }

    pub fn exists(sort: Sort, var: impl Into<String>, body: Body) -> Body {
        Body::Exists(sort, var.into(), Box::new(body))
    }

    pub fn forall(sort: Sort, var: impl Into<String>, body: Body) -> Body {
        Body::Forall(sort, var.into(), Box::new(body))
    }

    /// Conjunction of all parts; `True` has no encoding, so the list must be
    /// non-empty.
    pub fn all(parts: Vec<Body>) -> Body {
        let mut it = parts.into_iter();
        let first = it.next().expect("Body::all needs at least one conjunct");
        it.fold(first, Body::and)
    }

    pub fn quantifier_rank(&self) -> u32 {
        match self {
            Body::Atom(_) => 0,
            Body::Not(b) => b.quantifier_rank(),
            Body::And(l, r) | Body::Or(l, r) | Body::Implies(l, r) => {
                l.quantifier_rank().max(r.quantifier_rank())
            }
            Body::Exists(_, _, b) | Body::Forall(_, _, b) => 1 + b.quantifier_rank(),
        }
    }
}

/// A sort-checked formula: declared free variables (order matters for
/// counting) plus a body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MsoFormula {
    free: Vec<(String, Sort)>,
    body: Body,
    rank: u32,
}

impl MsoFormula {
    /// Builds and sort-checks a formula. Every variable used in `body` must
    /// be bound by a quantifier or declared in `free`.
    pub fn new(free: Vec<(String, Sort)>, body: Body) -> Result<MsoFormula, MsoError> {
        let mut seen = BTreeSet::new();
        for (name, _) in &free {
            if !seen.insert(name.clone()) {
                return Err(MsoError::BadFormula(format!("duplicate free variable `{name}`")));
            }
        }
        let mut scope: Vec<(String, Sort)> = free.clone();
        check_sorts(&body, &mut scope).map_err(MsoError::BadFormula)?;
        let rank = body.quantifier_rank();
        Ok(MsoFormula { free, body, rank })
    }

    pub fn free_decls(&self) -> &[(String, Sort)] {
        &self.free
    }

    pub fn body(&self) -> &Body {
        &self.body
    }

    pub fn quantifier_rank(&self) -> u32 {
        self.rank
    }

    /// All label names mentioned anywhere in the body, sorted.
    pub fn labels_mentioned(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        collect_labels(&self.body, &mut out);
        out
    }

    /// True once the formula is in the normalizer's target fragment: only
    /// set-sorted variables, only existential quantifiers, no implication,
    /// and only set-layer atoms.
    pub fn is_normalized(&self) -> bool {
        self.free.iter().all(|(_, s)| s.is_set()) && body_is_normalized(&self.body)
    }
}

impl fmt::Display for MsoFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, sort) in &self.free {
            writeln!(f, "free {sort} {name}")?;
        }
        let mut out = String::new();
        fmt_body(&self.body, 0, true, &mut out);
        f.write_str(&out)
    }
}

fn body_is_normalized(b: &Body) -> bool {
    match b {
        Body::Atom(a) => matches!(
            a,
            Atom::Sing(_) | Atom::Sub(..) | Atom::AdjSet(..) | Atom::IncSet(..) | Atom::LabelSet(..)
        ),
        Body::Not(x) => body_is_normalized(x),
        Body::And(l, r) | Body::Or(l, r) => body_is_normalized(l) && body_is_normalized(r),
        Body::Implies(..) | Body::Forall(..) => false,
        Body::Exists(sort, _, x) => sort.is_set() && body_is_normalized(x),
    }
}

fn collect_labels(b: &Body, out: &mut BTreeSet<String>) {
    match b {
        Body::Atom(Atom::Label(name, _)) | Body::Atom(Atom::LabelSet(name, _)) => {
            out.insert(name.clone());
        }
        Body::Atom(_) => {}
        Body::Not(x) | Body::Exists(_, _, x) | Body::Forall(_, _, x) => collect_labels(x, out),
        Body::And(l, r) | Body::Or(l, r) | Body::Implies(l, r) => {
            collect_labels(l, out);
            collect_labels(r, out);
        }
    }
}

fn lookup(scope: &[(String, Sort)], name: &str) -> Option<Sort> {
    scope.iter().rev().find(|(n, _)| n == name).map(|&(_, s)| s)
}

/// Resolves a variable and checks it against an expected sort.
fn expect_sort(
    scope: &[(String, Sort)],
    name: &str,
    want: Sort,
    what: &str,
) -> Result<(), String> {
    match lookup(scope, name) {
        None => Err(format!("variable `{name}` is not in scope")),
        Some(s) if s == want => Ok(()),
        Some(s) => Err(format!("{what} needs a {want} variable but `{name}` has sort {s}")),
    }
}

pub(super) fn check_atom(a: &Atom, scope: &[(String, Sort)]) -> Result<(), String> {
    match a {
        Atom::Adj(x, y) => {
            expect_sort(scope, x, Sort::Vertex, "adj")?;
            expect_sort(scope, y, Sort::Vertex, "adj")
        }
        Atom::Inc(v, e) => {
            expect_sort(scope, v, Sort::Vertex, "inc")?;
            expect_sort(scope, e, Sort::Edge, "inc")
        }
        Atom::Eq(x, y) => {
            let sx = lookup(scope, x).ok_or(format!("variable `{x}` is not in scope"))?;
            let sy = lookup(scope, y).ok_or(format!("variable `{y}` is not in scope"))?;
            if sx == sy {
                Ok(())
            } else {
                Err(format!("`=` needs matching sorts but `{x}` is {sx} and `{y}` is {sy}"))
            }
        }
        Atom::In(x, set) => {
            let sx = lookup(scope, x).ok_or(format!("variable `{x}` is not in scope"))?;
            if sx.is_set() {
                return Err(format!("`in` needs an element on the left but `{x}` is {sx}"));
            }
            expect_sort(scope, set, sx.set_sort(), "in")
        }
        Atom::Label(_, x) => {
            let sx = lookup(scope, x).ok_or(format!("variable `{x}` is not in scope"))?;
            if sx.is_set() {
                Err(format!("label needs a vertex or edge but `{x}` is {sx}"))
            } else {
                Ok(())
            }
        }
        Atom::Sing(x) => {
            let sx = lookup(scope, x).ok_or(format!("variable `{x}` is not in scope"))?;
            if sx.is_set() {
                Ok(())
            } else {
                Err(format!("sing needs a set but `{x}` is {sx}"))
            }
        }
        Atom::Sub(x, y) => {
            let sx = lookup(scope, x).ok_or(format!("variable `{x}` is not in scope"))?;
            if !sx.is_set() {
                return Err(format!("sub needs sets but `{x}` is {sx}"));
            }
            expect_sort(scope, y, sx, "sub")
        }
        Atom::AdjSet(x, y) => {
            expect_sort(scope, x, Sort::VertexSet, "adjS")?;
            expect_sort(scope, y, Sort::VertexSet, "adjS")
        }
        Atom::IncSet(x, y) => {
            expect_sort(scope, x, Sort::VertexSet, "incS")?;
            expect_sort(scope, y, Sort::EdgeSet, "incS")
        }
        Atom::LabelSet(_, x) => {
            let sx = lookup(scope, x).ok_or(format!("variable `{x}` is not in scope"))?;
            if sx.is_set() {
                Ok(())
            } else {
                Err(format!("labelS needs a set but `{x}` is {sx}"))
            }
        }
    }
}

fn check_sorts(b: &Body, scope: &mut Vec<(String, Sort)>) -> Result<(), String> {
    match b {
        Body::Atom(a) => check_atom(a, scope),
        Body::Not(x) => check_sorts(x, scope),
        Body::And(l, r) | Body::Or(l, r) | Body::Implies(l, r) => {
            check_sorts(l, scope)?;
            check_sorts(r, scope)
        }
        Body::Exists(sort, var, x) | Body::Forall(sort, var, x) => {
            scope.push((var.clone(), *sort));
            let res = check_sorts(x, scope);
            scope.pop();
            res
        }
    }
}

// ---- pretty printer ----------------------------------------------------
//
// Precedence: ~ binds tightest, then &, then |, then ->; a quantifier
// swallows everything to its right. The printer tracks whether a node sits
// in "tail" position (nothing of the enclosing unit follows it): a
// quantifier printed outside tail position must be parenthesized or it
// would capture the rest of the line.

fn prec(b: &Body) -> u8 {
    match b {
        Body::Implies(..) => 1,
        Body::Or(..) => 2,
        Body::And(..) => 3,
        Body::Not(_) | Body::Exists(..) | Body::Forall(..) => 4,
        Body::Atom(_) => 5,
    }
}

fn extends_right(b: &Body) -> bool {
    match b {
        Body::Exists(..) | Body::Forall(..) => true,
        Body::Not(x) => extends_right(x),
        _ => false,
    }
}

fn fmt_body(b: &Body, ctx: u8, tail: bool, out: &mut String) {
    let paren = prec(b) < ctx || (extends_right(b) && !tail);
    if paren {
        out.push('(');
        fmt_open(b, 0, true, out);
        out.push(')');
    } else {
        fmt_open(b, ctx, tail, out);
    }
}

fn fmt_open(b: &Body, _ctx: u8, tail: bool, out: &mut String) {
    match b {
        Body::Atom(a) => fmt_atom(a, out),
        Body::Not(x) => {
            out.push_str("~ ");
            fmt_body(x, 4, tail, out);
        }
        Body::And(l, r) => {
            fmt_body(l, 3, false, out);
            out.push_str(" & ");
            fmt_body(r, 4, tail, out);
        }
        Body::Or(l, r) => {
            fmt_body(l, 2, false, out);
            out.push_str(" | ");
            fmt_body(r, 3, tail, out);
        }
        Body::Implies(l, r) => {
            fmt_body(l, 2, false, out);
            out.push_str(" -> ");
            fmt_body(r, 1, tail, out);
        }
        Body::Exists(sort, var, x) => {
            out.push_str(&format!("exists_{sort} {var}. "));
            fmt_body(x, 0, true, out);
        }
        Body::Forall(sort, var, x) => {
            out.push_str(&format!("forall_{sort} {var}. "));
            fmt_body(x, 0, true, out);
        }
    }
}

fn fmt_atom(a: &Atom, out: &mut String) {
    let s = match a {
        Atom::Adj(x, y) => format!("adj({x},{y})"),
        Atom::Inc(v, e) => format!("inc({v},{e})"),
        Atom::Eq(x, y) => format!("{x} = {y}"),
        Atom::In(x, set) => format!("{x} in {set}"),
        Atom::Label(name, x) => format!("label({name},{x})"),
        Atom::Sing(x) => format!("sing({x})"),
        Atom::Sub(x, y) => format!("sub({x},{y})"),
        Atom::AdjSet(x, y) => format!("adjS({x},{y})"),
        Atom::IncSet(x, y) => format!("incS({x},{y})"),
        Atom::LabelSet(name, x) => format!("labelS({name},{x})"),
    };
    out.push_str(&s);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(name: &str) -> String {
        name.to_string()
    }

    #[test]
    fn rank_counts_nesting_depth() {
        // parallel branches take the max, not the sum
        let parallel = Body::exists(
            Sort::Vertex,
            "x",
            Body::exists(Sort::Vertex, "y", Body::Atom(Atom::Adj(v("x"), v("y"))))
                .and(Body::exists(Sort::Vertex, "z", Body::Atom(Atom::Eq(v("z"), v("z"))))),
        );
        assert_eq!(parallel.quantifier_rank(), 2);
        let chain = Body::exists(
            Sort::Vertex,
            "x",
            Body::exists(
                Sort::Vertex,
                "y",
                Body::exists(Sort::Vertex, "z", Body::Atom(Atom::Adj(v("x"), v("z")))),
            ),
        );
        assert_eq!(chain.quantifier_rank(), 3);
    }

    #[test]
    fn sort_errors_are_caught() {
        // v in X with v undeclared
        let body = Body::exists(Sort::VertexSet, "X", Body::Atom(Atom::In(v("v"), v("X"))));
        assert!(matches!(MsoFormula::new(vec![], body), Err(MsoError::BadFormula(_))));
        // adj on an edge variable
        let body = Body::exists(Sort::Edge, "e", Body::Atom(Atom::Adj(v("e"), v("e"))));
        assert!(matches!(MsoFormula::new(vec![], body), Err(MsoError::BadFormula(_))));
        // shadowing changes the visible sort
        let body = Body::exists(
            Sort::Vertex,
            "x",
            Body::exists(Sort::VertexSet, "x", Body::Atom(Atom::Sing(v("x")))),
        );
        assert!(MsoFormula::new(vec![], body).is_ok());
    }

    #[test]
    fn adj_on_same_variable_is_sort_correct() {
        let f = MsoFormula::new(
            vec![],
            Body::exists(Sort::Vertex, "x", Body::Atom(Atom::Adj(v("x"), v("x")))),
        );
        assert!(f.is_ok());
    }

    #[test]
    fn display_parenthesizes_quantifiers_out_of_tail_position() {
        let q = Body::exists(Sort::Vertex, "x", Body::Atom(Atom::Eq(v("x"), v("x"))));
        let b = q.clone().and(Body::Atom(Atom::Eq(v("y"), v("y"))));
        let f = MsoFormula::new(vec![(v("y"), Sort::Vertex)], b).unwrap();
        assert_eq!(f.to_string(), "free v y\n(exists_v x. x = x) & y = y");
    }
}
