//! Prompt templates and structured-response parsing for chat-style clients.
//!
//! Templates use `{name}` placeholders; `{{` and `}}` render as literal
//! braces so JSON examples can live inside a template.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use crate::error::{Error, Result};

/// A text-in, text-out completion backend (live, replayed or recorded).
pub trait ChatClient: Send + Sync {
    /// Stable identifier, used to separate fixtures and cache entries.
    fn id(&self) -> &str;

    fn complete(&self, prompt: &str) -> Result<String>;
}

pub type Slots = BTreeMap<String, String>;

/// Build a slot map from `(name, value)` pairs.
pub fn slots<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> Slots {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: String,
    text: String,
}

enum Piece<'a> {
    Literal(&'a str),
    Brace(char),
    Slot(&'a str),
}

impl Template {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let t = Template { id: id.into(), text: text.into() };
        t.pieces()?;
        Ok(t)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    fn pieces(&self) -> Result<Vec<Piece<'_>>> {
        let s = self.text.as_str();
        let bytes = s.as_bytes();
        let mut out = Vec::new();
        let mut start = 0;
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'{' | b'}' if bytes.get(i + 1) == Some(&bytes[i]) => {
                    out.push(Piece::Literal(&s[start..i]));
                    out.push(Piece::Brace(bytes[i] as char));
                    i += 2;
                    start = i;
                }
                b'{' => {
                    let end = s[i + 1..].find('}').map(|e| e + i + 1).ok_or_else(|| {
                        Error::Template(format!("{}: unclosed placeholder at byte {i}", self.id))
                    })?;
                    let name = &s[i + 1..end];
                    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                        return Err(Error::Template(format!("{}: bad placeholder {{{name}}} at byte {i}", self.id)));
                    }
                    out.push(Piece::Literal(&s[start..i]));
                    out.push(Piece::Slot(name));
                    i = end + 1;
                    start = i;
                }
                b'}' => {
                    return Err(Error::Template(format!("{}: stray '}}' at byte {i}", self.id)));
                }
                _ => i += 1,
            }
        }
        out.push(Piece::Literal(&s[start..]));
        Ok(out)
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        self.pieces()
            .expect("validated at construction")
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(n) => Some(n.to_string()),
                _ => None,
            })
            .collect()
    }

    pub fn render(&self, slots: &Slots) -> Result<String> {
        let missing: Vec<String> = self.placeholders().into_iter().filter(|p| !slots.contains_key(p)).collect();
        if !missing.is_empty() {
            return Err(Error::Template(format!("{}: unfilled placeholders: {}", self.id, missing.join(", "))));
        }
        let mut out = String::with_capacity(self.text.len());
        for p in self.pieces()? {
            match p {
                Piece::Literal(s) => out.push_str(s),
                Piece::Brace(c) => out.push(c),
                Piece::Slot(n) => out.push_str(&slots[n]),
            }
        }
        Ok(out)
    }
}

/// Render `template`, send it, and parse the reply. A reply that fails to
/// parse is retried up to `retries` more times with the parser's message
/// appended to the prompt.
pub fn templated_chat<T>(
    client: &dyn ChatClient,
    template: &Template,
    slots: &Slots,
    retries: usize,
    parse: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<T> {
    let base = template.render(slots)?;
    let mut prompt = base.clone();
    let mut last_raw = String::new();
    let mut last_err = String::new();
    for _ in 0..=retries {
        let raw = client.complete(&prompt)?;
        match parse(&raw) {
            Ok(v) => return Ok(v),
            Err(e) => {
                prompt = format!(
                    "{base}\n\nYour previous reply could not be used: {e}\nReply again using exactly the requested format."
                );
                last_err = e;
                last_raw = raw;
            }
        }
    }
    Err(Error::Unparseable { message: format!("{}: {last_err}", template.id), raw: last_raw })
}

/// First JSON object or array in `text`, ignoring anything after a `###`
/// end marker and any prose before the JSON starts.
pub fn extract_json(text: &str) -> std::result::Result<Value, String> {
    let body = text.split("###").next().unwrap_or(text);
    let start = body.find(['{', '[']).ok_or_else(|| "no JSON object in reply".to_string())?;
    serde_json::Deserializer::from_str(&body[start..])
        .into_iter::<Value>()
        .next()
        .ok_or_else(|| "no JSON object in reply".to_string())?
        .map_err(|e| format!("malformed JSON: {e}"))
}

/// The string under the `"answer"` key of a JSON reply.
pub fn parse_answer(text: &str) -> std::result::Result<String, String> {
    match extract_json(text)?.get("answer") {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(_) => Err("\"answer\" must be a non-empty string".into()),
        None => Err("reply lacks the \"answer\" key".into()),
    }
}

#[cfg(test)]
pub(crate) use tests::Scripted;
