//! `{name}` placeholder scanning and substitution shared by call templates
//! and slot templates.
//!
//! A placeholder is `{` followed by an identifier (`[A-Za-z_][A-Za-z0-9_]*`)
//! and `}`. Any other brace is literal text.

use std::ops::Range;

/// One placeholder occurrence: its name and the byte span it covers,
/// braces included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placeholder<'a> {
    pub name: &'a str,
    pub span: Range<usize>,
}

fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'_'
}

fn is_ident_continue(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_'
}

/// All placeholders in `text`, left to right.
pub fn scan(text: &str) -> Vec<Placeholder<'_>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' && i + 1 < bytes.len() && is_ident_start(bytes[i + 1]) {
            let mut j = i + 2;
            while j < bytes.len() && is_ident_continue(bytes[j]) {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'}' {
                out.push(Placeholder {
                    name: &text[i + 1..j],
                    span: i..j + 1,
                });
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Placeholder names in order of appearance (duplicates kept).
pub fn names(text: &str) -> Vec<&str> {
    scan(text).into_iter().map(|p| p.name).collect()
}

/// Replace every placeholder for which `resolve` returns a value. Unresolved
/// placeholders are left in place verbatim.
pub fn substitute<F>(text: &str, mut resolve: F) -> String
where
    F: FnMut(&str) -> Option<String>,
{
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for p in scan(text) {
        out.push_str(&text[last..p.span.start]);
        match resolve(p.name) {
            Some(value) => out.push_str(&value),
            None => out.push_str(&text[p.span.clone()]),
        }
        last = p.span.end;
    }
    out.push_str(&text[last..]);
    out
}

/// If the whole text is exactly one placeholder, its name.
pub fn sole_placeholder(text: &str) -> Option<&str> {
    let found = scan(text);
    match found.as_slice() {
        [p] if p.span == (0..text.len()) => Some(p.name),
        _ => None,
    }
}

/// Collect placeholder names from every string inside a JSON value,
/// object keys excluded.
pub fn json_names(value: &serde_json::Value) -> Vec<String> {
    let mut out = Vec::new();
    collect_json(value, &mut out);
    out
}

fn collect_json(value: &serde_json::Value, out: &mut Vec<String>) {
    match value {
        serde_json::Value::String(s) => out.extend(names(s).into_iter().map(str::to_owned)),
        serde_json::Value::Array(items) => items.iter().for_each(|v| collect_json(v, out)),
        serde_json::Value::Object(map) => map.values().for_each(|v| collect_json(v, out)),
        _ => {}
    }
}
