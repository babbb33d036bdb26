//! Knowledge-base frontend: AST, parser and validation.

mod ast;
mod parser;

pub use ast::*;
pub use parser::{parse_facts, parse_kb, validate_kb, ParseError, ParseErrorKind};

/// Domain holding every Countries constant (countries, regions and sub-regions).
pub const COUNTRIES_DOMAIN: &str = "entity";
pub const LOCATED_IN: &str = "locatedIn";
pub const NEIGHBOR_OF: &str = "neighborOf";

/// The eight two-hop rules `forall x, y, z: A(x,y) and B(y,z) -> C(x,z)` with
/// `A, B, C` ranging over `{locatedIn, neighborOf}`.
///
/// Rule `i` uses `A = preds[(i >> 2) & 1]`, `B = preds[(i >> 1) & 1]`,
/// `C = preds[i & 1]` with `preds = [locatedIn, neighborOf]`, so rule 0 is the
/// transitivity of `locatedIn` and rule 4 is
/// `neighborOf(x,y) and locatedIn(y,z) -> locatedIn(x,z)`.
pub fn build_countries_rules() -> Vec<Formula> {
    let preds = [LOCATED_IN, NEIGHBOR_OF];
    (0..8)
        .map(|i| {
            let a = preds[(i >> 2) & 1];
            let b = preds[(i >> 1) & 1];
            let c = preds[i & 1];
            let body = Formula::implies(
                Formula::and(Formula::atom(a, &["x", "y"]), Formula::atom(b, &["y", "z"])),
                Formula::atom(c, &["x", "z"]),
            );
            Formula::forall(
                "x",
                COUNTRIES_DOMAIN,
                Formula::forall("y", COUNTRIES_DOMAIN, Formula::forall("z", COUNTRIES_DOMAIN, body)),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn countries_rules() {
        let rules = build_countries_rules();
        assert_eq!(rules.len(), 8);
        let text: Vec<String> = rules.iter().map(|r| r.to_string()).collect();
        let q = "forall x in entity forall y in entity forall z in entity : ";
        assert!(text.contains(&format!("{q}locatedIn(x, y) and locatedIn(y, z) -> locatedIn(x, z)")));
        assert!(text.contains(&format!("{q}neighborOf(x, y) and locatedIn(y, z) -> locatedIn(x, z)")));
        assert_eq!(text[0], format!("{q}locatedIn(x, y) and locatedIn(y, z) -> locatedIn(x, z)"));
        for r in &rules {
            assert!(free_variables(r).is_empty());
        }
        let mut dedup = text.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 8);
    }
}
