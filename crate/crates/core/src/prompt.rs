//! Text templates with `{name}` placeholders.
//!
//! `{{` and `}}` render literal braces. Rendering fails if the template names
//! a placeholder that was not supplied.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unclosed placeholder starting at byte {0}")]
    Unclosed(usize),
    #[error("stray `}}` at byte {0}")]
    StrayBrace(usize),
    #[error("invalid placeholder name `{0}`")]
    BadName(String),
    #[error("no value supplied for placeholder `{0}`")]
    Missing(String),
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pieces: Vec<Piece>,
}

const STUDENT_TEMPLATE: &str = "You are a student of {ability} ability responding to a stimulus.\n\n\
Given the following **Stimulus**, give a response to the **question**:\n\n\
**Stimulus**\n\n\
Passage:\n{passage}\n\n\
Question:\n{question}";

const SCORER_TEMPLATE: &str = "You are a teacher scoring student responses to open-ended questions.\n\n\
Score the student response using the rubric to the question by only outputting a single integer \
between 0 and {max_score} inclusive.\n\n\
Rubric:\n{rubric}\n\n\
Passage:\n{passage}\n\n\
Question:\n{question}\n\n\
Student response: {response}\n\n\
Score:";

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < text.len() {
            match bytes[i] {
                b'{' if bytes.get(i + 1) == Some(&b'{') => {
                    literal.push('{');
                    i += 2;
                }
                b'}' if bytes.get(i + 1) == Some(&b'}') => {
                    literal.push('}');
                    i += 2;
                }
                b'{' => {
                    let close = text[i..].find('}').ok_or(TemplateError::Unclosed(i))? + i;
                    let name = &text[i + 1..close];
                    if name.is_empty() || !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
                        return Err(TemplateError::BadName(name.to_string()));
                    }
                    if !literal.is_empty() {
                        pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                    }
                    pieces.push(Piece::Slot(name.to_string()));
                    i = close + 1;
                }
                b'}' => return Err(TemplateError::StrayBrace(i)),
                _ => {
                    let ch = text[i..].chars().next().expect("in bounds");
                    literal.push(ch);
                    i += ch.len_utf8();
                }
            }
        }
        if !literal.is_empty() {
            pieces.push(Piece::Literal(literal));
        }
        Ok(Self { pieces })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Simulated-student prompt over `{ability}`, `{passage}` and `{question}`.
    pub fn simulated_student() -> Self {
        Self::parse(STUDENT_TEMPLATE).expect("built-in template parses")
    }

    /// Scoring prompt over `{max_score}`, `{rubric}`, `{passage}`,
    /// `{question}` and `{response}`; ends with `Score:`.
    pub fn scorer() -> Self {
        Self::parse(SCORER_TEMPLATE).expect("built-in template parses")
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for p in &self.pieces {
            if let Piece::Slot(name) = p {
                if !names.contains(&name.as_str()) {
                    names.push(name);
                }
            }
        }
        names
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(name) => {
                    let value = vars
                        .iter()
                        .find(|(k, _)| k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| TemplateError::Missing(name.clone()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// Ability as rendered into prompts: four decimals, no negative zero.
pub fn format_ability(theta: f64) -> String {
    let s = format!("{theta:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_placeholders_and_escapes() {
        let t = PromptTemplate::parse("θ={ability} {{literal}} {question}/{ability}").unwrap();
        assert_eq!(t.placeholders(), vec!["ability", "question"]);
        let s = t.render(&[("ability", "0.5000"), ("question", "Why?")]).unwrap();
        assert_eq!(s, "θ=0.5000 {literal} Why?/0.5000");
    }

    #[test]
    fn parse_and_render_errors() {
        assert!(matches!(PromptTemplate::parse("a {b"), Err(TemplateError::Unclosed(2))));
        assert!(matches!(PromptTemplate::parse("a } b"), Err(TemplateError::StrayBrace(2))));
        assert!(matches!(PromptTemplate::parse("{a b}"), Err(TemplateError::BadName(_))));
        let t = PromptTemplate::parse("{x}").unwrap();
        assert!(matches!(t.render(&[]), Err(TemplateError::Missing(n)) if n == "x"));
    }

    #[test]
    fn built_in_templates() {
        assert_eq!(
            PromptTemplate::simulated_student().placeholders(),
            vec!["ability", "passage", "question"]
        );
        let scorer = PromptTemplate::scorer();
        assert_eq!(
            scorer.placeholders(),
            vec!["max_score", "rubric", "passage", "question", "response"]
        );
        let vars = [
            ("max_score", "2"),
            ("rubric", "r"),
            ("passage", "p"),
            ("question", "q"),
            ("response", "x"),
        ];
        assert!(scorer.render(&vars).unwrap().ends_with("Score:"));
    }

    #[test]
    fn ability_formatting() {
        assert_eq!(format_ability(0.5), "0.5000");
        assert_eq!(format_ability(-1.23456), "-1.2346");
        assert_eq!(format_ability(-0.00001), "0.0000");
    }
}
