//! Built-in prompt templates, overridable from a directory of
//! `<id>.txt` files.

use std::path::Path;

use predex::prompt::Template;
use predex::{Error, Result};

pub const CONCEPT_EXTRACTION: &str = "concept-extraction";
pub const CONCEPT_GENERATION: &str = "concept-generation";
pub const SENTIMENT: &str = "sentiment";

const BUILTIN: &[(&str, &str)] = &[
    (CONCEPT_EXTRACTION, include_str!("../templates/concept-extraction.txt")),
    (CONCEPT_GENERATION, include_str!("../templates/concept-generation.txt")),
    (SENTIMENT, include_str!("../templates/sentiment.txt")),
];

pub fn builtin(id: &str) -> Option<Template> {
    BUILTIN
        .iter()
        .find(|(k, _)| *k == id)
        .map(|(k, text)| Template::new(*k, *text).expect("built-in templates are valid"))
}

/// `<dir>/<id>.txt` when a directory is given and holds one, else the
/// built-in template of that id.
pub fn load(id: &str, dir: Option<&Path>) -> Result<Template> {
    if let Some(dir) = dir {
        let path = dir.join(format!("{id}.txt"));
        if path.exists() {
            return Template::new(id, std::fs::read_to_string(&path)?);
        }
    }
    builtin(id).ok_or_else(|| Error::Template(format!("no template file for {id:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_have_expected_slots() {
        let names = |id| builtin(id).unwrap().placeholders().into_iter().collect::<Vec<_>>();
        assert_eq!(names(CONCEPT_EXTRACTION), ["examples", "input", "n", "task"]);
        assert_eq!(names(CONCEPT_GENERATION), ["concepts", "input", "task"]);
        assert_eq!(names(SENTIMENT), ["input"]);
    }

    #[test]
    fn directory_overrides_builtin() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("sentiment.txt"), "classify {input}").unwrap();
        assert_eq!(load(SENTIMENT, Some(tmp.path())).unwrap().text(), "classify {input}");
        assert!(load("nope", Some(tmp.path())).is_err());
        assert!(load(SENTIMENT, None).unwrap().text().contains("<UNK>"));
    }
}
