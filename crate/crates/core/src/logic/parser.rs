//! Line-oriented KB grammar.
//!
//! ```text
//! domain <name> { <c1>, <c2>, ... } .
//! predicate <name>( <domain> [, <domain>]* ) .
//! <pred>( <const> [, <const>]* ) [= <float in [0,1]>] .
//! rule [forall|exists <var> in <domain>]+ : <expr> .
//! ```
//!
//! Connective precedence is `not` > `and` > `or` > `->`; `->` associates to the right.
//! `%` starts a comment that runs to the end of the line. Symbols must be declared
//! before they are used.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use super::ast::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownSymbol,
    ArityMismatch,
    UnboundVariable,
    DomainMismatch,
    Duplicate,
    InvalidValue,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind:?} at {line}:{col}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Dot,
    Colon,
    Eq,
    Arrow,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Number(n) => write!(f, "`{n}`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn err(kind: ParseErrorKind, line: usize, col: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        kind,
        line,
        col,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let single = |tok| Spanned { tok, line: l0, col: c0 };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => {}
            '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '{' => out.push(single(Tok::LBrace)),
            '}' => out.push(single(Tok::RBrace)),
            '(' => out.push(single(Tok::LParen)),
            ')' => out.push(single(Tok::RParen)),
            ',' => out.push(single(Tok::Comma)),
            '.' => out.push(single(Tok::Dot)),
            ':' => out.push(single(Tok::Colon)),
            '=' => out.push(single(Tok::Eq)),
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push(single(Tok::Arrow));
                i += 2;
                col += 2;
                continue;
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                // a '.' belongs to the number only when a digit follows
                if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '-' || chars[j] == '+') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let n = s
                    .parse::<f64>()
                    .map_err(|_| err(ParseErrorKind::Syntax, l0, c0, format!("bad number `{s}`")))?;
                col += i - start;
                out.push(Spanned { tok: Tok::Number(n), line: l0, col: c0 });
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                col += i - start;
                out.push(Spanned { tok: Tok::Ident(s), line: l0, col: c0 });
                continue;
            }
            other => {
                return Err(err(
                    ParseErrorKind::Syntax,
                    l0,
                    c0,
                    format!("unexpected character `{other}`"),
                ))
            }
        }
        i += 1;
        col += 1;
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

const KEYWORDS: &[&str] = &[
    "domain", "predicate", "rule", "forall", "exists", "in", "not", "and", "or",
];

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    kb: KnowledgeBase,
    facts_only: bool,
    scope: Vec<(String, String)>,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, at: &Spanned, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(err(ParseErrorKind::Syntax, at.line, at.col, msg))
    }

    fn expect(&mut self, want: Tok) -> Result<Spanned, ParseError> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            self.syntax(&t, format!("expected {want}, found {}", t.tok))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn ident(&mut self) -> Result<(String, Spanned), ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => Ok((s.clone(), t)),
            _ => self.syntax(&t, format!("expected identifier, found {}", t.tok)),
        }
    }

    fn statements(&mut self) -> Result<(), ParseError> {
        loop {
            let t = self.peek().clone();
            match &t.tok {
                Tok::Eof => return Ok(()),
                Tok::Ident(kw) if kw == "domain" && !self.facts_only => self.domain()?,
                Tok::Ident(kw) if kw == "predicate" && !self.facts_only => self.predicate()?,
                Tok::Ident(kw) if kw == "rule" && !self.facts_only => self.rule()?,
                Tok::Ident(_) => self.fact()?,
                other => return self.syntax(&t, format!("unexpected {other}")),
            }
        }
    }

    fn domain(&mut self) -> Result<(), ParseError> {
        self.next();
        let (name, at) = self.ident()?;
        if self.kb.domain(&name).is_some() {
            return Err(err(ParseErrorKind::Duplicate, at.line, at.col, format!("domain `{name}` already declared")));
        }
        self.expect(Tok::LBrace)?;
        let mut constants = Vec::new();
        let mut seen = HashSet::new();
        if self.peek().tok != Tok::RBrace {
            loop {
                let (c, at) = self.ident()?;
                if !seen.insert(c.clone()) {
                    return Err(err(ParseErrorKind::Duplicate, at.line, at.col, format!("constant `{c}` repeated in domain `{name}`")));
                }
                constants.push(c);
                if self.peek().tok == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RBrace)?;
        self.expect(Tok::Dot)?;
        self.kb.domains.push(DomainDecl { name, constants });
        Ok(())
    }

    fn predicate(&mut self) -> Result<(), ParseError> {
        self.next();
        let (name, at) = self.ident()?;
        if self.kb.predicate(&name).is_some() {
            return Err(err(ParseErrorKind::Duplicate, at.line, at.col, format!("predicate `{name}` already declared")));
        }
        self.expect(Tok::LParen)?;
        let mut argument_domains = Vec::new();
        loop {
            let (d, at) = self.ident()?;
            if self.kb.domain(&d).is_none() {
                return Err(err(ParseErrorKind::UnknownSymbol, at.line, at.col, format!("unknown domain `{d}`")));
            }
            argument_domains.push(d);
            if self.peek().tok == Tok::Comma {
                self.next();
            } else {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::Dot)?;
        self.kb.predicates.push(PredicateDecl { name, argument_domains });
        Ok(())
    }

    fn fact(&mut self) -> Result<(), ParseError> {
        let (pred, at) = self.ident()?;
        let decl = self
            .kb
            .predicate(&pred)
            .cloned()
            .ok_or_else(|| err(ParseErrorKind::UnknownSymbol, at.line, at.col, format!("unknown predicate `{pred}`")))?;
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        loop {
            let (c, cat) = self.ident()?;
            args.push((c, cat));
            if self.peek().tok == Tok::Comma {
                self.next();
            } else {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        if args.len() != decl.arity() {
            return Err(err(
                ParseErrorKind::ArityMismatch,
                at.line,
                at.col,
                format!("`{pred}` takes {} arguments, got {}", decl.arity(), args.len()),
            ));
        }
        for ((c, cat), d) in args.iter().zip(&decl.argument_domains) {
            let dom = self.kb.domain(d).expect("validated at declaration");
            if dom.position(c).is_none() {
                return Err(err(ParseErrorKind::UnknownSymbol, cat.line, cat.col, format!("`{c}` is not a constant of domain `{d}`")));
            }
        }
        let mut value = 1.0;
        if self.peek().tok == Tok::Eq {
            self.next();
            let t = self.next();
            match t.tok.clone() {
                Tok::Number(v) if (0.0..=1.0).contains(&v) => value = v,
                Tok::Number(v) => {
                    return Err(err(ParseErrorKind::InvalidValue, t.line, t.col, format!("truth value {v} outside [0,1]")))
                }
                other => return self.syntax(&t, format!("expected a number, found {other}")),
            }
        }
        self.expect(Tok::Dot)?;
        self.kb.facts.push(Fact {
            atom: GroundAtom {
                predicate: pred,
                args: args.into_iter().map(|(c, _)| c).collect(),
            },
            value,
        });
        Ok(())
    }

    fn rule(&mut self) -> Result<(), ParseError> {
        self.next();
        let mut prefix = Vec::new();
        while self.is_keyword("forall") || self.is_keyword("exists") {
            let q = match self.next().tok {
                Tok::Ident(s) if s == "forall" => Quantifier::Forall,
                _ => Quantifier::Exists,
            };
            let (var, vat) = self.ident()?;
            if self.scope.iter().any(|(v, _)| *v == var) {
                return Err(err(ParseErrorKind::Duplicate, vat.line, vat.col, format!("variable `{var}` bound twice")));
            }
            let t = self.next();
            if t.tok != Tok::Ident("in".into()) {
                return self.syntax(&t, format!("expected `in`, found {}", t.tok));
            }
            let (dom, dat) = self.ident()?;
            if self.kb.domain(&dom).is_none() {
                return Err(err(ParseErrorKind::UnknownSymbol, dat.line, dat.col, format!("unknown domain `{dom}`")));
            }
            self.scope.push((var.clone(), dom.clone()));
            prefix.push((q, var, dom));
        }
        if prefix.is_empty() {
            let t = self.peek().clone();
            return self.syntax(&t, "a rule needs at least one quantifier");
        }
        self.expect(Tok::Colon)?;
        let body = self.implication()?;
        self.expect(Tok::Dot)?;
        self.scope.clear();
        let rule = prefix.into_iter().rev().fold(body, |acc, (quantifier, var, domain)| {
            Formula::Quantified {
                quantifier,
                var,
                domain,
                body: Box::new(acc),
            }
        });
        self.kb.rules.push(rule);
        Ok(())
    }

    fn implication(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.disjunction()?;
        if self.peek().tok == Tok::Arrow {
            self.next();
            let rhs = self.implication()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Formula, ParseError> {
        let mut acc = self.conjunction()?;
        while self.is_keyword("or") {
            self.next();
            acc = Formula::or(acc, self.conjunction()?);
        }
        Ok(acc)
    }

    fn conjunction(&mut self) -> Result<Formula, ParseError> {
        let mut acc = self.unary()?;
        while self.is_keyword("and") {
            self.next();
            acc = Formula::and(acc, self.unary()?);
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if self.is_keyword("not") {
            self.next();
            return Ok(Formula::not(self.unary()?));
        }
        if self.peek().tok == Tok::LParen {
            self.next();
            let f = self.implication()?;
            self.expect(Tok::RParen)?;
            return Ok(f);
        }
        self.rule_atom()
    }

    fn rule_atom(&mut self) -> Result<Formula, ParseError> {
        let (pred, at) = self.ident()?;
        let decl = self
            .kb
            .predicate(&pred)
            .cloned()
            .ok_or_else(|| err(ParseErrorKind::UnknownSymbol, at.line, at.col, format!("unknown predicate `{pred}`")))?;
        self.expect(Tok::LParen)?;
        let mut raw = Vec::new();
        loop {
            raw.push(self.ident()?);
            if self.peek().tok == Tok::Comma {
                self.next();
            } else {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        if raw.len() != decl.arity() {
            return Err(err(
                ParseErrorKind::ArityMismatch,
                at.line,
                at.col,
                format!("`{pred}` takes {} arguments, got {}", decl.arity(), raw.len()),
            ));
        }
        let mut args = Vec::with_capacity(raw.len());
        for ((name, nat), want) in raw.into_iter().zip(&decl.argument_domains) {
            if let Some((_, dom)) = self.scope.iter().rev().find(|(v, _)| *v == name) {
                if dom != want {
                    return Err(err(
                        ParseErrorKind::DomainMismatch,
                        nat.line,
                        nat.col,
                        format!("variable `{name}` ranges over `{dom}` but `{pred}` expects `{want}`"),
                    ));
                }
                args.push(Term::Var(name));
            } else if self.kb.domain(want).and_then(|d| d.position(&name)).is_some() {
                args.push(Term::Const(name));
            } else {
                return Err(err(ParseErrorKind::UnboundVariable, nat.line, nat.col, format!("`{name}` is neither a bound variable nor a constant of `{want}`")));
            }
        }
        Ok(Formula::Atom { predicate: pred, args })
    }
}

fn parser(text: &str, base: KnowledgeBase, facts_only: bool) -> Result<Parser, ParseError> {
    Ok(Parser {
        toks: lex(text)?,
        pos: 0,
        kb: base,
        facts_only,
        scope: Vec::new(),
    })
}

/// Parses and validates a knowledge base.
pub fn parse_kb(text: &str) -> Result<KnowledgeBase, ParseError> {
    let mut p = parser(text, KnowledgeBase::default(), false)?;
    p.statements()?;
    Ok(p.kb)
}

/// Parses a file of ground atoms (`P(a, b) [= v].`) against the declarations of `kb`.
pub fn parse_facts(text: &str, kb: &KnowledgeBase) -> Result<Vec<Fact>, ParseError> {
    let base = KnowledgeBase {
        domains: kb.domains.clone(),
        predicates: kb.predicates.clone(),
        facts: Vec::new(),
        rules: Vec::new(),
    };
    let mut p = parser(text, base, true)?;
    p.statements()?;
    Ok(p.kb.facts)
}

/// Checks a programmatically assembled KB against the same rules the parser enforces.
pub fn validate_kb(kb: &KnowledgeBase) -> Result<(), ParseError> {
    let fail = |kind, msg: String| Err(err(kind, 0, 0, msg));
    let mut names = HashSet::new();
    for d in &kb.domains {
        if !names.insert(d.name.as_str()) {
            return fail(ParseErrorKind::Duplicate, format!("domain `{}` declared twice", d.name));
        }
        let mut seen = HashSet::new();
        for c in &d.constants {
            if !seen.insert(c.as_str()) {
                return fail(ParseErrorKind::Duplicate, format!("constant `{c}` repeated in `{}`", d.name));
            }
        }
    }
    let mut preds = HashSet::new();
    for p in &kb.predicates {
        if !preds.insert(p.name.as_str()) {
            return fail(ParseErrorKind::Duplicate, format!("predicate `{}` declared twice", p.name));
        }
        if p.argument_domains.is_empty() {
            return fail(ParseErrorKind::ArityMismatch, format!("predicate `{}` has no arguments", p.name));
        }
        for d in &p.argument_domains {
            if kb.domain(d).is_none() {
                return fail(ParseErrorKind::UnknownSymbol, format!("unknown domain `{d}`"));
            }
        }
    }
    for f in &kb.facts {
        let Some(decl) = kb.predicate(&f.atom.predicate) else {
            return fail(ParseErrorKind::UnknownSymbol, format!("unknown predicate `{}`", f.atom.predicate));
        };
        if decl.arity() != f.atom.args.len() {
            return fail(ParseErrorKind::ArityMismatch, format!("bad arity in fact {}", f.atom));
        }
        for (c, d) in f.atom.args.iter().zip(&decl.argument_domains) {
            if kb.domain(d).and_then(|dom| dom.position(c)).is_none() {
                return fail(ParseErrorKind::UnknownSymbol, format!("`{c}` is not a constant of `{d}`"));
            }
        }
        if !(0.0..=1.0).contains(&f.value) {
            return fail(ParseErrorKind::InvalidValue, format!("fact {} has value {}", f.atom, f.value));
        }
    }
    for rule in &kb.rules {
        validate_formula(kb, rule, &mut Vec::new())?;
    }
    Ok(())
}

fn validate_formula(kb: &KnowledgeBase, f: &Formula, scope: &mut Vec<(String, String)>) -> Result<(), ParseError> {
    let fail = |kind, msg: String| Err(err(kind, 0, 0, msg));
    match f {
        Formula::Atom { predicate, args } => {
            let Some(decl) = kb.predicate(predicate) else {
                return fail(ParseErrorKind::UnknownSymbol, format!("unknown predicate `{predicate}`"));
            };
            if decl.arity() != args.len() {
                return fail(ParseErrorKind::ArityMismatch, format!("`{predicate}` takes {} arguments", decl.arity()));
            }
            for (t, want) in args.iter().zip(&decl.argument_domains) {
                match t {
                    Term::Var(v) => match scope.iter().rev().find(|(n, _)| n == v) {
                        None => return fail(ParseErrorKind::UnboundVariable, format!("variable `{v}` is free")),
                        Some((_, d)) if d != want => {
                            return fail(ParseErrorKind::DomainMismatch, format!("variable `{v}` ranges over `{d}`, expected `{want}`"))
                        }
                        _ => {}
                    },
                    Term::Const(c) => {
                        if kb.domain(want).and_then(|d| d.position(c)).is_none() {
                            return fail(ParseErrorKind::UnknownSymbol, format!("`{c}` is not a constant of `{want}`"));
                        }
                    }
                }
            }
            Ok(())
        }
        Formula::Not(a) => validate_formula(kb, a, scope),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
            validate_formula(kb, a, scope)?;
            validate_formula(kb, b, scope)
        }
        Formula::Quantified { var, domain, body, .. } => {
            if kb.domain(domain).is_none() {
                return fail(ParseErrorKind::UnknownSymbol, format!("unknown domain `{domain}`"));
            }
            if scope.iter().any(|(v, _)| v == var) {
                return fail(ParseErrorKind::Duplicate, format!("variable `{var}` bound twice"));
            }
            scope.push((var.clone(), domain.clone()));
            let r = validate_formula(kb, body, scope);
            scope.pop();
            r
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_kb() {
        let kb = parse_kb("domain d {a,b}. predicate P(d). P(a).").unwrap();
        assert_eq!(kb.domains.len(), 1);
        assert_eq!(kb.predicates.len(), 1);
        assert_eq!(kb.facts.len(), 1);
        assert_eq!(kb.facts[0].value, 1.0);
    }

    #[test]
    fn undeclared_predicate_in_rule() {
        let e = parse_kb("domain d {a}. predicate P(d).\nrule forall x in d: P(x) -> Q(x).").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownSymbol);
        assert_eq!((e.line, e.col), (2, 29));
    }

    #[test]
    fn soft_facts_and_comments() {
        let kb = parse_kb(
            "% header\ndomain d { a, b }. % trailing\npredicate P(d).\nP(b) = 0.25.\nP(a) = 1.",
        )
        .unwrap();
        assert_eq!(kb.facts[0].value, 0.25);
        assert_eq!(kb.facts[1].value, 1.0);
    }

    #[test]
    fn precedence_and_associativity() {
        let kb = parse_kb(
            "domain d {a}. predicate A(d). predicate B(d). predicate C(d).\n\
             rule forall x in d: not A(x) and B(x) or C(x) -> A(x) -> B(x).",
        )
        .unwrap();
        let x = |p: &str| Formula::atom(p, &["x"]);
        let want = Formula::forall(
            "x",
            "d",
            Formula::implies(
                Formula::or(Formula::and(Formula::not(x("A")), x("B")), x("C")),
                Formula::implies(x("A"), x("B")),
            ),
        );
        assert_eq!(kb.rules[0], want);
    }

    #[test]
    fn error_kinds() {
        let base = "domain d {a, b}. domain e {c}. predicate P(d). predicate R(d, e).\n";
        let cases = [
            ("P(a, b).", ParseErrorKind::ArityMismatch),
            ("P(c).", ParseErrorKind::UnknownSymbol),
            ("rule forall x in d: P(y).", ParseErrorKind::UnboundVariable),
            ("rule forall x in e: P(x).", ParseErrorKind::DomainMismatch),
            ("rule forall x in d forall x in d: P(x).", ParseErrorKind::Duplicate),
            ("domain d {z}.", ParseErrorKind::Duplicate),
            ("P(a) = 1.5.", ParseErrorKind::InvalidValue),
            ("rule P(a).", ParseErrorKind::Syntax),
            ("P(a)", ParseErrorKind::Syntax),
            ("predicate Q(f).", ParseErrorKind::UnknownSymbol),
            ("rule forall x in d: P(x) and.", ParseErrorKind::Syntax),
            ("P(a) # .", ParseErrorKind::Syntax),
        ];
        for (src, kind) in cases {
            let e = parse_kb(&format!("{base}{src}")).unwrap_err();
            assert_eq!(e.kind, kind, "{src}: {e}");
            assert_eq!(e.line, 2, "{src}");
        }
    }

    #[test]
    fn constants_inside_rules() {
        let kb = parse_kb(
            "domain d {a, b}. domain e {c}. predicate R(d, e).\nrule exists x in d: R(x, c).",
        )
        .unwrap();
        let (prefix, matrix) = kb.rules[0].prenex();
        assert_eq!(prefix, vec![(Quantifier::Exists, "x", "d")]);
        assert_eq!(
            *matrix,
            Formula::Atom {
                predicate: "R".into(),
                args: vec![Term::Var("x".into()), Term::Const("c".into())]
            }
        );
    }

    #[test]
    fn targets_file_uses_kb_declarations() {
        let kb = parse_kb("domain d {a, b}. predicate P(d).").unwrap();
        let facts = parse_facts("P(a) = 0.\nP(b) = 0.75.\n", &kb).unwrap();
        assert_eq!(facts.len(), 2);
        assert_eq!(facts[1].value, 0.75);
        let e = parse_facts("domain x {y}.", &kb).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Syntax);
        let e = parse_facts("Q(a).", &kb).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownSymbol);
    }

    #[test]
    fn validate_rejects_open_formula() {
        let mut kb = parse_kb("domain d {a}. predicate P(d).").unwrap();
        kb.rules.push(Formula::atom("P", &["x"]));
        assert_eq!(validate_kb(&kb).unwrap_err().kind, ParseErrorKind::UnboundVariable);
    }
}
