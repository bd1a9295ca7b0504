//! Single-pass `{placeholder}` substitution.

use std::collections::{BTreeMap, BTreeSet};

/// Placeholder name → replacement text.
pub type Bindings = BTreeMap<&'static str, String>;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("placeholder `{{{0}}}` has no binding")]
    UnboundPlaceholder(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    /// Bindings the template never referenced. Reported, never fatal.
    pub unused: Vec<String>,
}

fn placeholder_at(template: &str, open: usize) -> Option<(&str, usize)> {
    let rest = &template[open + 1..];
    let close = rest.find('}')?;
    let name = &rest[..close];
    let mut chars = name.chars();
    let first = chars.next()?;
    let valid = (first.is_ascii_lowercase() || first == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
    valid.then_some((name, open + 1 + close + 1))
}

/// Substitutes every `{name}` in `template` from `bindings`.
///
/// Names are lowercase identifiers; any other brace text is left alone.
/// Substituted text is never re-scanned, so a binding containing `{x}`
/// comes out verbatim.
pub fn render_template(template: &str, bindings: &Bindings) -> Result<Rendered, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let mut used = BTreeSet::new();
    let mut cursor = 0;
    while let Some(offset) = template[cursor..].find('{') {
        let open = cursor + offset;
        out.push_str(&template[cursor..open]);
        match placeholder_at(template, open) {
            Some((name, end)) => {
                let value = bindings
                    .get(name)
                    .ok_or_else(|| TemplateError::UnboundPlaceholder(name.to_string()))?;
                out.push_str(value);
                used.insert(name);
                cursor = end;
            }
            None => {
                out.push('{');
                cursor = open + 1;
            }
        }
    }
    out.push_str(&template[cursor..]);
    let unused: Vec<String> = bindings
        .keys()
        .filter(|k| !used.contains(*k))
        .map(|k| k.to_string())
        .collect();
    Ok(Rendered { text: out, unused })
}
