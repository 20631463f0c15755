//! Deterministic recall-oriented rewrite used when no model is available to
//! revise a query.

use crate::index::Field;
use crate::tokenize::tokenize;

use super::{QueryAst, QueryError};

/// Document frequency lookup for a normalized token, optionally restricted to
/// one field (`None` means either field).
pub trait DocFreq {
    fn doc_freq(&self, token: &str, field: Option<Field>) -> usize;
}

impl<F: Fn(&str, Option<Field>) -> usize> DocFreq for F {
    fn doc_freq(&self, token: &str, field: Option<Field>) -> usize {
        self(token, field)
    }
}

/// Relax a query:
/// 1. every term becomes fuzzy;
/// 2. leaf conjuncts with document frequency 0 are dropped from AND nodes
///    while at least one conjunct remains;
/// 3. a root AND is weakened to OR.
pub fn relax_query(ast: &QueryAst, stats: &dyn DocFreq) -> Result<QueryAst, QueryError> {
    let relaxed = match relax_node(ast, stats)? {
        QueryAst::And(children) => QueryAst::Or(children),
        other => other,
    };
    if relaxed.check().is_err() {
        return Err(QueryError::NothingLeft);
    }
    Ok(relaxed)
}

fn is_dead_leaf(node: &QueryAst, stats: &dyn DocFreq) -> bool {
    let (tokens, field) = match node {
        QueryAst::Term { text, field, .. } => (tokenize(text), *field),
        QueryAst::Phrase { tokens, field } => (tokens.clone(), *field),
        _ => return false,
    };
    tokens.iter().any(|t| stats.doc_freq(t, field) == 0)
}

fn fuzzify(node: &QueryAst) -> QueryAst {
    match node {
        QueryAst::Term { text, field, .. } => QueryAst::Term { text: text.clone(), field: *field, fuzzy: true },
        QueryAst::Phrase { .. } => node.clone(),
        QueryAst::And(c) => QueryAst::And(c.iter().map(fuzzify).collect()),
        QueryAst::Or(c) => QueryAst::Or(c.iter().map(fuzzify).collect()),
        QueryAst::Not(c) => QueryAst::negate(fuzzify(c)),
    }
}

fn relax_node(node: &QueryAst, stats: &dyn DocFreq) -> Result<QueryAst, QueryError> {
    match node {
        QueryAst::Term { .. } | QueryAst::Phrase { .. } => Ok(fuzzify(node)),
        // Negated subtrees only get fuzzified; dropping inside a NOT would
        // change which documents are excluded.
        QueryAst::Not(child) => Ok(QueryAst::negate(fuzzify(child))),
        QueryAst::And(children) => {
            let live: Vec<&QueryAst> = children.iter().filter(|c| !is_dead_leaf(c, stats)).collect();
            if live.is_empty() {
                return Err(QueryError::NothingLeft);
            }
            let mut kept = live.into_iter().map(|c| relax_node(c, stats)).collect::<Result<Vec<_>, _>>()?;
            Ok(if kept.len() == 1 { kept.pop().unwrap() } else { QueryAst::And(kept) })
        }
        QueryAst::Or(children) => {
            let mut kept = Vec::new();
            for c in children {
                match relax_node(c, stats) {
                    Ok(n) => kept.push(n),
                    Err(QueryError::NothingLeft) => {}
                    Err(e) => return Err(e),
                }
            }
            match kept.len() {
                0 => Err(QueryError::NothingLeft),
                1 => Ok(kept.pop().unwrap()),
                _ => Ok(QueryAst::Or(kept)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn df(token: &str, _: Option<Field>) -> usize {
        match token {
            "aspirin" => 10,
            "pain" => 3,
            _ => 0,
        }
    }

    #[test]
    fn drops_dead_conjunct_and_collapses() {
        let ast = QueryAst::And(vec![QueryAst::term("aspirin"), QueryAst::term("zqx")]);
        assert_eq!(relax_query(&ast, &df).unwrap(), QueryAst::fuzzy("aspirin"));
    }

    #[test]
    fn single_term_becomes_fuzzy() {
        assert_eq!(relax_query(&QueryAst::term("aspirin"), &df).unwrap(), QueryAst::fuzzy("aspirin"));
    }

    #[test]
    fn all_dead_is_nothing_left() {
        let ast = QueryAst::And(vec![QueryAst::term("zqx"), QueryAst::term("qqq")]);
        assert_eq!(relax_query(&ast, &df), Err(QueryError::NothingLeft));
    }

    #[test]
    fn root_and_weakens_to_or() {
        let ast = QueryAst::And(vec![QueryAst::term("aspirin"), QueryAst::term("pain")]);
        assert_eq!(
            relax_query(&ast, &df).unwrap(),
            QueryAst::Or(vec![QueryAst::fuzzy("aspirin"), QueryAst::fuzzy("pain")])
        );
    }

    #[test]
    fn relaxation_never_leaves_pure_negation() {
        let ast = QueryAst::And(vec![QueryAst::negate(QueryAst::term("aspirin")), QueryAst::term("zqx")]);
        assert_eq!(relax_query(&ast, &df), Err(QueryError::NothingLeft));
    }

    #[test]
    fn nested_dead_branch_removed_from_or() {
        let ast = QueryAst::Or(vec![
            QueryAst::term("pain"),
            QueryAst::And(vec![QueryAst::term("zqx"), QueryAst::term("qqq")]),
        ]);
        assert_eq!(relax_query(&ast, &df).unwrap(), QueryAst::fuzzy("pain"));
    }
}
