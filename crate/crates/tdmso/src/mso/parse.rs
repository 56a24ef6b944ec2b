//! Concrete syntax for formulas.
//!
//! ```text
//! formula := decl* body
//! decl    := "free" sort ident
//! sort    := "v" | "e" | "vs" | "es"
//! body    := "~" body | body ("&" | "|" | "->") body | "(" body ")" | quant | atom
//! quant   := ("exists_" | "forall_") sort ident "." body
//! atom    := "adj(" t "," t ")" | "inc(" t "," t ")" | t "=" t | t "in" T
//!          | "label(" name "," t ")" | "sing(" T ")" | "sub(" T "," T ")"
//!          | "adjS(" T "," T ")" | "incS(" T "," T ")" | "labelS(" name "," T ")"
//! ```
//!
//! Precedence: `~` over `&` over `|` over `->`; a quantifier extends
//! maximally to the right. `#` starts a comment running to end of line.
//! Sorts are checked during parsing, so both syntax and sort errors carry a
//! line:column position.

use std::ops::Not;

use super::ast::{check_atom, Atom, Body, MsoFormula, Sort};
use super::MsoError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tok<'a> {
    Ident(&'a str),
    LParen,
    RParen,
    Comma,
    Dot,
    Eq,
    And,
    Or,
    Arrow,
    Not,
}

struct Lexer<'a> {
    text: &'a str,
    toks: Vec<(Tok<'a>, usize)>,
}

fn lex(text: &str) -> Result<Lexer<'_>, MsoError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b',' => {
                toks.push((Tok::Comma, i));
                i += 1;
            }
            b'.' => {
                toks.push((Tok::Dot, i));
                i += 1;
            }
            b'=' => {
                toks.push((Tok::Eq, i));
                i += 1;
            }
            b'&' => {
                toks.push((Tok::And, i));
                i += 1;
            }
            b'|' => {
                toks.push((Tok::Or, i));
                i += 1;
            }
            b'~' => {
                toks.push((Tok::Not, i));
                i += 1;
            }
            b'-' => {
                if bytes.get(i + 1) == Some(&b'>') {
                    toks.push((Tok::Arrow, i));
                    i += 2;
                } else {
                    return Err(syntax(text, i, "`-` must be part of `->`"));
                }
            }
            _ if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(&text[start..i]), start));
            }
            _ => {
                return Err(syntax(text, i, format!("unexpected character `{}`", c as char)));
            }
        }
    }
    Ok(Lexer { text, toks })
}

fn line_col(text: &str, pos: usize) -> (usize, usize) {
    let before = &text[..pos.min(text.len())];
    let line = before.bytes().filter(|&b| b == b'\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, col)
}

fn syntax(text: &str, pos: usize, msg: impl Into<String>) -> MsoError {
    let (line, col) = line_col(text, pos);
    MsoError::Syntax { line, col, msg: msg.into() }
}

fn sort_err(text: &str, pos: usize, msg: impl Into<String>) -> MsoError {
    let (line, col) = line_col(text, pos);
    MsoError::Sort { line, col, msg: msg.into() }
}

struct Parser<'a> {
    lx: Lexer<'a>,
    at: usize,
    scope: Vec<(String, Sort)>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<Tok<'a>> {
        self.lx.toks.get(self.at).map(|&(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.lx
            .toks
            .get(self.at)
            .map_or(self.lx.text.len(), |&(_, p)| p)
    }

    fn bump(&mut self) -> Option<Tok<'a>> {
        let t = self.peek();
        if t.is_some() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok<'a>, what: &str) -> Result<(), MsoError> {
        if self.peek() == Some(want) {
            self.at += 1;
            Ok(())
        } else {
            Err(syntax(self.lx.text, self.pos(), format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<&'a str, MsoError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                self.at += 1;
                Ok(s)
            }
            _ => Err(syntax(self.lx.text, self.pos(), format!("expected {what}"))),
        }
    }

    /// Sort-checks an atom in the current scope, positioning errors at `pos`.
    fn atom(&mut self, a: Atom, pos: usize) -> Result<Body, MsoError> {
        check_atom(&a, &self.scope).map_err(|msg| sort_err(self.lx.text, pos, msg))?;
        Ok(Body::Atom(a))
    }

    // body := implies
    fn body(&mut self) -> Result<Body, MsoError> {
        let lhs = self.or_chain()?;
        if self.peek() == Some(Tok::Arrow) {
            self.at += 1;
            let rhs = self.body()?; // right-associative
            Ok(lhs.implies(rhs))
        } else {
            Ok(lhs)
        }
    }

    fn or_chain(&mut self) -> Result<Body, MsoError> {
        let mut lhs = self.and_chain()?;
        while self.peek() == Some(Tok::Or) {
            self.at += 1;
            lhs = lhs.or(self.and_chain()?);
        }
        Ok(lhs)
    }

    fn and_chain(&mut self) -> Result<Body, MsoError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(Tok::And) {
            self.at += 1;
            lhs = lhs.and(self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Body, MsoError> {
        match self.peek() {
            Some(Tok::Not) => {
                self.at += 1;
                Ok(self.unary()?.not())
            }
            Some(Tok::Ident(kw)) if kw.starts_with("exists_") || kw.starts_with("forall_") => {
                self.quant()
            }
            _ => self.primary(),
        }
    }

    fn quant(&mut self) -> Result<Body, MsoError> {
        let pos = self.pos();
        let kw = self.ident("quantifier")?;
        let (exists, sort_kw) = if let Some(s) = kw.strip_prefix("exists_") {
            (true, s)
        } else if let Some(s) = kw.strip_prefix("forall_") {
            (false, s)
        } else {
            unreachable!("caller checked the prefix");
        };
        let sort = Sort::from_keyword(sort_kw)
            .ok_or_else(|| syntax(self.lx.text, pos, format!("unknown sort `{sort_kw}`")))?;
        let var = self.ident("a variable name")?.to_string();
        self.expect(Tok::Dot, "`.` after the bound variable")?;
        self.scope.push((var.clone(), sort));
        let inner = self.body(); // quantifier extends maximally right
        self.scope.pop();
        let inner = inner?;
        Ok(if exists {
            Body::exists(sort, var, inner)
        } else {
            Body::forall(sort, var, inner)
        })
    }

    fn primary(&mut self) -> Result<Body, MsoError> {
        let pos = self.pos();
        match self.peek() {
            Some(Tok::LParen) => {
                self.at += 1;
                let inner = self.body()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                // function-style atoms need a lookahead for `(`
                let is_call = self.lx.toks.get(self.at + 1).map(|&(t, _)| t) == Some(Tok::LParen);
                if is_call
                    && matches!(
                        name,
                        "adj" | "inc" | "label" | "sing" | "sub" | "adjS" | "incS" | "labelS"
                    )
                {
                    self.call_atom(name, pos)
                } else {
                    self.term_atom(pos)
                }
            }
            _ => Err(syntax(self.lx.text, pos, "expected a formula")),
        }
    }

    fn call_atom(&mut self, name: &str, pos: usize) -> Result<Body, MsoError> {
        self.at += 1; // the callee identifier
        self.expect(Tok::LParen, "`(`")?;
        let first = self.ident("an argument")?.to_string();
        let atom = if name == "sing" {
            Atom::Sing(first)
        } else {
            self.expect(Tok::Comma, "`,`")?;
            let second = self.ident("an argument")?.to_string();
            match name {
                "adj" => Atom::Adj(first, second),
                "inc" => Atom::Inc(first, second),
                "label" => Atom::Label(first, second),
                "sub" => Atom::Sub(first, second),
                "adjS" => Atom::AdjSet(first, second),
                "incS" => Atom::IncSet(first, second),
                "labelS" => Atom::LabelSet(first, second),
                _ => unreachable!("caller matched the atom name"),
            }
        };
        self.expect(Tok::RParen, "`)`")?;
        self.atom(atom, pos)
    }

    fn term_atom(&mut self, pos: usize) -> Result<Body, MsoError> {
        let lhs = self.ident("a variable")?.to_string();
        match self.bump() {
            Some(Tok::Eq) => {
                let rhs = self.ident("a variable")?.to_string();
                self.atom(Atom::Eq(lhs, rhs), pos)
            }
            Some(Tok::Ident("in")) => {
                let rhs = self.ident("a set variable")?.to_string();
                self.atom(Atom::In(lhs, rhs), pos)
            }
            _ => Err(syntax(self.lx.text, pos, format!("expected `=` or `in` after `{lhs}`"))),
        }
    }
}

/// Parses and sort-checks a formula. The result round-trips through the
/// pretty-printer: `parse_formula(&f.to_string()) == Ok(f)`.
pub fn parse_formula(text: &str) -> Result<MsoFormula, MsoError> {
    let lx = lex(text)?;
    let mut p = Parser { lx, at: 0, scope: Vec::new() };
    let mut free = Vec::new();
    while p.peek() == Some(Tok::Ident("free")) {
        p.at += 1;
        let pos = p.pos();
        let sort_kw = p.ident("a sort (v, e, vs, es)")?;
        let sort = Sort::from_keyword(sort_kw)
            .ok_or_else(|| syntax(p.lx.text, pos, format!("unknown sort `{sort_kw}`")))?;
        let pos = p.pos();
        let name = p.ident("a variable name")?.to_string();
        if free.iter().any(|(n, _)| *n == name) {
            return Err(sort_err(p.lx.text, pos, format!("duplicate free variable `{name}`")));
        }
        p.scope.push((name.clone(), sort));
        free.push((name, sort));
    }
    let body = p.body()?;
    if p.peek().is_some() {
        return Err(syntax(p.lx.text, p.pos(), "trailing input after the formula"));
    }
    MsoFormula::new(free, body).map_err(|e| match e {
        // the parser checked sorts already; anything surfacing here is a bug
        MsoError::BadFormula(msg) => MsoError::BadFormula(format!("internal recheck failed: {msg}")),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_triangle_formula() {
        let f = parse_formula(
            "~ exists_v x1. exists_v x2. exists_v x3. (adj(x1,x2) & adj(x2,x3) & adj(x3,x1))",
        )
        .unwrap();
        assert_eq!(f.quantifier_rank(), 3);
        assert!(f.free_decls().is_empty());
        assert!(matches!(f.body(), Body::Not(_)));
    }

    #[test]
    fn quantifier_extends_maximally_right() {
        let f = parse_formula("exists_v x. x = x & adj(x,x)").unwrap();
        // the conjunction is inside the quantifier
        let Body::Exists(_, _, inner) = f.body() else { panic!("expected a quantifier") };
        assert!(matches!(**inner, Body::And(..)));
    }

    #[test]
    fn precedence_orders_connectives() {
        let f = parse_formula("free v a\nfree v b\nfree v c\n~ a = a & b = b | c = c -> a = b")
            .unwrap();
        // reads as ((~(a=a) & b=b) | c=c) -> a=b
        let Body::Implies(l, _) = f.body() else { panic!("expected ->") };
        let Body::Or(ll, _) = &**l else { panic!("expected | under ->") };
        let Body::And(lll, _) = &**ll else { panic!("expected & under |") };
        assert!(matches!(&**lll, Body::Not(_)));
    }

    #[test]
    fn undeclared_variable_is_a_sort_error_with_position() {
        let err = parse_formula("exists_vs X. v in X").unwrap_err();
        assert!(matches!(err, MsoError::Sort { line: 1, .. }), "{err}");
    }

    #[test]
    fn set_atoms_parse() {
        let f = parse_formula(
            "free vs X\nfree es F\nsing(X) & sub(X,X) & adjS(X,X) & incS(X,F) & labelS(red,X)",
        )
        .unwrap();
        assert!(f.is_normalized());
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse_formula("exists_v x.\n  adj(x,)").unwrap_err();
        assert!(matches!(err, MsoError::Syntax { line: 2, .. }), "{err}");
    }

    #[test]
    fn round_trips_through_display() {
        let texts = [
            "~ exists_v x1. exists_v x2. exists_v x3. (adj(x1,x2) & adj(x2,x3) & adj(x3,x1))",
            "free vs S\nforall_v x. forall_v y. (x in S & y in S -> ~ adj(x,y))",
            "free v a\n(exists_v x. adj(a,x)) & a = a",
            "free vs X\nfree es F\nsing(X) | (sub(X,X) -> incS(X,F)) & labelS(red,X)",
            "forall_e e. exists_v x. inc(x,e) & label(end,x)",
            "~ ~ exists_vs X. ~ sing(X)",
        ];
        for t in texts {
            let f = parse_formula(t).unwrap();
            let printed = f.to_string();
            let again = parse_formula(&printed)
                .unwrap_or_else(|e| panic!("reparse of `{printed}` failed: {e}"));
            assert_eq!(f, again, "round trip changed `{t}` (printed `{printed}`)");
        }
    }
}
