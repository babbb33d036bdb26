use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainDecl {
    pub name: String,
    pub constants: Vec<String>,
}

impl DomainDecl {
    pub fn position(&self, constant: &str) -> Option<usize> {
        self.constants.iter().position(|c| c == constant)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateDecl {
    pub name: String,
    pub argument_domains: Vec<String>,
}

impl PredicateDecl {
    pub fn arity(&self) -> usize {
        self.argument_domains.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn name(&self) -> &str {
        match self {
            Term::Var(n) | Term::Const(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quantifier {
    Forall,
    Exists,
}

impl Quantifier {
    pub fn keyword(self) -> &'static str {
        match self {
            Quantifier::Forall => "forall",
            Quantifier::Exists => "exists",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formula {
    Atom {
        predicate: String,
        args: Vec<Term>,
    },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Quantified {
        quantifier: Quantifier,
        var: String,
        domain: String,
        body: Box<Formula>,
    },
}

impl Formula {
    pub fn atom<S: Into<String>>(predicate: S, vars: &[&str]) -> Formula {
        Formula::Atom {
            predicate: predicate.into(),
            args: vars.iter().map(|v| Term::Var((*v).to_string())).collect(),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn forall(var: &str, domain: &str, body: Formula) -> Formula {
        Formula::Quantified {
            quantifier: Quantifier::Forall,
            var: var.to_string(),
            domain: domain.to_string(),
            body: Box::new(body),
        }
    }

    pub fn exists(var: &str, domain: &str, body: Formula) -> Formula {
        Formula::Quantified {
            quantifier: Quantifier::Exists,
            var: var.to_string(),
            domain: domain.to_string(),
            body: Box::new(body),
        }
    }

    /// Splits a prenex formula into its quantifier prefix (outer to inner) and matrix.
    pub fn prenex(&self) -> (Vec<(Quantifier, &str, &str)>, &Formula) {
        let mut prefix = Vec::new();
        let mut cur = self;
        while let Formula::Quantified {
            quantifier,
            var,
            domain,
            body,
        } = cur
        {
            prefix.push((*quantifier, var.as_str(), domain.as_str()));
            cur = body;
        }
        (prefix, cur)
    }

    pub fn contains_quantifier(&self) -> bool {
        match self {
            Formula::Atom { .. } => false,
            Formula::Not(a) => a.contains_quantifier(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.contains_quantifier() || b.contains_quantifier()
            }
            Formula::Quantified { .. } => true,
        }
    }

    /// Visits every atom in left-to-right order.
    pub fn for_each_atom<'a>(&'a self, f: &mut impl FnMut(&'a str, &'a [Term])) {
        match self {
            Formula::Atom { predicate, args } => f(predicate, args),
            Formula::Not(a) => a.for_each_atom(f),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.for_each_atom(f);
                b.for_each_atom(f);
            }
            Formula::Quantified { body, .. } => body.for_each_atom(f),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Implies(..) => 1,
            Formula::Or(..) => 2,
            Formula::And(..) => 3,
            Formula::Not(..) => 4,
            Formula::Atom { .. } => 5,
            Formula::Quantified { .. } => 0,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let paren = self.precedence() < min;
        if paren {
            f.write_str("(")?;
        }
        match self {
            Formula::Atom { predicate, args } => {
                write!(f, "{predicate}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    f.write_str(a.name())?;
                }
                f.write_str(")")?;
            }
            Formula::Not(a) => {
                f.write_str("not ")?;
                a.fmt_prec(f, 4)?;
            }
            Formula::And(a, b) => {
                a.fmt_prec(f, 3)?;
                f.write_str(" and ")?;
                b.fmt_prec(f, 4)?;
            }
            Formula::Or(a, b) => {
                a.fmt_prec(f, 2)?;
                f.write_str(" or ")?;
                b.fmt_prec(f, 3)?;
            }
            Formula::Implies(a, b) => {
                a.fmt_prec(f, 2)?;
                f.write_str(" -> ")?;
                b.fmt_prec(f, 1)?;
            }
            Formula::Quantified { .. } => {
                let (prefix, matrix) = self.prenex();
                for (q, v, d) in prefix {
                    write!(f, "{} {v} in {d} ", q.keyword())?;
                }
                f.write_str(": ")?;
                matrix.fmt_prec(f, 1)?;
            }
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// Variables of `f` not bound by an enclosing quantifier.
pub fn free_variables(f: &Formula) -> BTreeSet<String> {
    fn walk(f: &Formula, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match f {
            Formula::Atom { args, .. } => {
                for a in args {
                    if let Term::Var(v) = a {
                        if !bound.contains(v) {
                            out.insert(v.clone());
                        }
                    }
                }
            }
            Formula::Not(a) => walk(a, bound, out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                walk(a, bound, out);
                walk(b, bound, out);
            }
            Formula::Quantified { var, body, .. } => {
                bound.push(var.clone());
                walk(body, bound, out);
                bound.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(f, &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn new<S: Into<String>>(predicate: S, args: &[&str]) -> Self {
        GroundAtom {
            predicate: predicate.into(),
            args: args.iter().map(|a| (*a).to_string()).collect(),
        }
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.predicate, self.args.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub atom: GroundAtom,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub domains: Vec<DomainDecl>,
    pub predicates: Vec<PredicateDecl>,
    pub facts: Vec<Fact>,
    pub rules: Vec<Formula>,
}

impl KnowledgeBase {
    pub fn domain(&self, name: &str) -> Option<&DomainDecl> {
        self.domains.iter().find(|d| d.name == name)
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.name == name)
    }

    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn predicate_index(&self, name: &str) -> Option<usize> {
        self.predicates.iter().position(|p| p.name == name)
    }
}

impl fmt::Display for KnowledgeBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.domains {
            writeln!(f, "domain {} {{ {} }}.", d.name, d.constants.join(", "))?;
        }
        for p in &self.predicates {
            writeln!(f, "predicate {}({}).", p.name, p.argument_domains.join(", "))?;
        }
        for fact in &self.facts {
            if fact.value == 1.0 {
                writeln!(f, "{}.", fact.atom)?;
            } else {
                writeln!(f, "{} = {:?}.", fact.atom, fact.value)?;
            }
        }
        for r in &self.rules {
            writeln!(f, "rule {r}.")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_variable_examples() {
        let p = |v: &str| Formula::atom("P", &[v]);
        assert!(free_variables(&Formula::forall("x", "d", p("x"))).is_empty());
        assert_eq!(free_variables(&p("x")), BTreeSet::from(["x".to_string()]));
        let f = Formula::forall("x", "d", Formula::and(p("x"), Formula::atom("Q", &["y"])));
        assert_eq!(free_variables(&f), BTreeSet::from(["y".to_string()]));
    }

    #[test]
    fn display_parenthesizes_by_precedence() {
        let a = Formula::atom("A", &["x"]);
        let b = Formula::atom("B", &["x"]);
        let c = Formula::atom("C", &["x"]);
        let f = Formula::and(Formula::or(a.clone(), b.clone()), Formula::not(c.clone()));
        assert_eq!(f.to_string(), "(A(x) or B(x)) and not C(x)");
        let g = Formula::implies(Formula::implies(a, b), c);
        assert_eq!(g.to_string(), "(A(x) -> B(x)) -> C(x)");
    }
}
