//! Prompt templates.
//!
//! Defaults are compiled in from `templates/`; a run config may point at a
//! directory whose files override them one by one. Placeholders are written
//! `{{name}}` and substituted verbatim.

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::qa::QuestionType;

/// Sentinel a model emits when the context cannot answer the question.
pub const INSUFFICIENT_EVIDENCE: &str = "INSUFFICIENT_EVIDENCE";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub qa_system: String,
    pub yesno: String,
    pub factoid: String,
    pub list: String,
    pub low_evidence: String,
    pub repair: String,
    pub synthesis_system: String,
    pub synthesis: String,
    pub query_system: String,
    pub query_generation: String,
    pub query_refinement: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            qa_system: include_str!("../templates/qa_system.txt").into(),
            yesno: include_str!("../templates/yesno.txt").into(),
            factoid: include_str!("../templates/factoid.txt").into(),
            list: include_str!("../templates/list.txt").into(),
            low_evidence: include_str!("../templates/low_evidence.txt").into(),
            repair: include_str!("../templates/repair.txt").into(),
            synthesis_system: include_str!("../templates/synthesis_system.txt").into(),
            synthesis: include_str!("../templates/synthesis.txt").into(),
            query_system: include_str!("../templates/query_system.txt").into(),
            query_generation: include_str!("../templates/query_generation.txt").into(),
            query_refinement: include_str!("../templates/query_refinement.txt").into(),
        }
    }
}

impl Templates {
    /// Defaults, with every `<name>.txt` present in `dir` taking precedence.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut t = Templates::default();
        let slots: [(&str, &mut String); 11] = [
            ("qa_system", &mut t.qa_system),
            ("yesno", &mut t.yesno),
            ("factoid", &mut t.factoid),
            ("list", &mut t.list),
            ("low_evidence", &mut t.low_evidence),
            ("repair", &mut t.repair),
            ("synthesis_system", &mut t.synthesis_system),
            ("synthesis", &mut t.synthesis),
            ("query_system", &mut t.query_system),
            ("query_generation", &mut t.query_generation),
            ("query_refinement", &mut t.query_refinement),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            }
        }
        Ok(t)
    }

    pub fn for_qtype(&self, qtype: QuestionType) -> &str {
        match qtype {
            QuestionType::Yesno => &self.yesno,
            QuestionType::Factoid => &self.factoid,
            QuestionType::List => &self.list,
        }
    }
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{([a-z_]+)\}\}").expect("valid regex"));

/// Single-pass substitution: inserted values are never re-scanned, and
/// unknown placeholders are left as they are.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    PLACEHOLDER
        .replace_all(template, |c: &regex::Captures| {
            vars.iter().find(|(n, _)| *n == &c[1]).map_or_else(|| c[0].to_string(), |(_, v)| v.to_string())
        })
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_replaces_all_occurrences() {
        assert_eq!(fill("{{a}} and {{a}} {{b}} {{c}}", &[("a", "x"), ("b", "{{a}}")]), "x and x {{a}} {{c}}");
        assert_eq!(fill("{{a}}", &[("a", "{{b}}"), ("b", "y")]), "{{b}}");
    }

    #[test]
    fn override_dir_replaces_single_template() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("yesno.txt"), "custom {{question}}").unwrap();
        let t = Templates::load_dir(dir.path()).unwrap();
        assert_eq!(t.yesno, "custom {{question}}");
        assert_eq!(t.factoid, Templates::default().factoid);
    }

    #[test]
    fn qa_templates_mention_sentinel() {
        let t = Templates::default();
        for q in [QuestionType::Yesno, QuestionType::Factoid, QuestionType::List] {
            assert!(t.for_qtype(q).contains(INSUFFICIENT_EVIDENCE));
            assert!(t.for_qtype(q).contains("{{context}}"));
        }
    }
}
