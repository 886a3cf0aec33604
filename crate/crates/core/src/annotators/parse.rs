//! Tolerant extraction of a `name -> bool` dictionary from model output.
//!
//! Models answer with Python dicts, JSON objects, fenced or bare, with
//! single or double quotes, trailing commas and the odd comment. The parser
//! picks the last brace-balanced block that contains a `:` (fenced code
//! blocks are searched first) and reads its entries one by one.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseStatus {
    Ok,
    PartiallyParsed,
    Unparseable,
}

pub type SubgoalFlags = IndexMap<String, bool>;

/// Parses a model response. Never fails; the status reports what happened.
pub fn parse_response(text: &str) -> (SubgoalFlags, ParseStatus) {
    let block =
        fenced_blocks(text).iter().rev().find_map(|body| last_dict_block(body)).or_else(|| last_dict_block(text));
    let Some(block) = block else {
        return (IndexMap::new(), ParseStatus::Unparseable);
    };
    let inner = &block[1..block.len() - 1];
    let mut flags = IndexMap::new();
    let mut bad = 0usize;
    for entry in split_entries(&strip_comments(inner)) {
        match parse_entry(&entry) {
            Some((k, v)) => {
                flags.insert(k, v);
            }
            None => bad += 1,
        }
    }
    let status = match (flags.is_empty(), bad) {
        (true, _) => ParseStatus::Unparseable,
        (false, 0) => ParseStatus::Ok,
        (false, _) => ParseStatus::PartiallyParsed,
    };
    if status == ParseStatus::Unparseable {
        flags.clear();
    }
    (flags, status)
}

/// Bodies of ``` fenced blocks; an unterminated fence runs to the end.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // Skip the info string (e.g. `python`) on the opening line.
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                out.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => {
                out.push(body);
                break;
            }
        }
    }
    out
}

/// End index (inclusive) of the block opened at `start`, honouring quotes.
fn match_brace(s: &str, start: usize, quote_aware: bool) -> Option<usize> {
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, ch) in s[start..].char_indices() {
        let i = start + i;
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == q || ch == '\n' {
                quote = None;
            }
            continue;
        }
        match ch {
            '"' | '\'' if quote_aware => quote = Some(ch),
            '{' => depth += 1,
            '}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Outermost balanced `{...}` blocks that contain a `:`; returns the last.
fn last_dict_block(s: &str) -> Option<&str> {
    let mut last = None;
    let mut i = 0;
    while let Some(off) = s[i..].find('{') {
        let start = i + off;
        let end = match_brace(s, start, true).or_else(|| match_brace(s, start, false));
        match end {
            Some(end) => {
                let block = &s[start..=end];
                if block.contains(':') {
                    last = Some(block);
                }
                i = end + 1;
            }
            None => i = start + 1,
        }
    }
    last
}

/// Drops `#` and `//` comments that start outside quotes.
fn strip_comments(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for line in s.lines() {
        let mut quote: Option<char> = None;
        let mut escaped = false;
        let mut cut = line.len();
        let bytes: Vec<(usize, char)> = line.char_indices().collect();
        for (n, &(i, ch)) in bytes.iter().enumerate() {
            if let Some(q) = quote {
                if escaped {
                    escaped = false;
                } else if ch == '\\' {
                    escaped = true;
                } else if ch == q {
                    quote = None;
                }
                continue;
            }
            match ch {
                '"' | '\'' => quote = Some(ch),
                '#' => {
                    cut = i;
                    break;
                }
                '/' if bytes.get(n + 1).is_some_and(|&(_, c)| c == '/') => {
                    cut = i;
                    break;
                }
                _ => {}
            }
        }
        out.push_str(&line[..cut]);
        out.push('\n');
    }
    out
}

/// Splits on commas and newlines outside quotes.
fn split_entries(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for ch in s.chars() {
        if let Some(q) = quote {
            cur.push(ch);
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == q {
                quote = None;
            }
            continue;
        }
        match ch {
            '"' | '\'' => {
                quote = Some(ch);
                cur.push(ch);
            }
            ',' | '\n' => {
                if !cur.trim().is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                cur.clear();
            }
            _ => cur.push(ch),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur);
    }
    out
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().trim_end_matches(',').trim() {
        "True" | "true" => Some(true),
        "False" | "false" => Some(false),
        _ => None,
    }
}

fn unquote(s: &str) -> Option<String> {
    let s = s.trim();
    let first = s.chars().next()?;
    if (first == '"' || first == '\'') && s.len() >= 2 && s.ends_with(first) {
        let body = &s[1..s.len() - 1];
        let mut out = String::with_capacity(body.len());
        let mut chars = body.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                match chars.next() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(other) => out.push(other),
                    None => out.push('\\'),
                }
            } else {
                out.push(c);
            }
        }
        Some(out)
    } else if s.is_empty() {
        None
    } else {
        Some(s.to_owned())
    }
}

/// `key: value` with the key split at the last colon outside quotes.
fn parse_entry(entry: &str) -> Option<(String, bool)> {
    let mut quote: Option<char> = None;
    let mut escaped = false;
    let mut split = None;
    for (i, ch) in entry.char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == q {
                quote = None;
            }
            continue;
        }
        match ch {
            '"' | '\'' => quote = Some(ch),
            ':' => split = Some(i),
            _ => {}
        }
    }
    let split = split?;
    let value = parse_bool(&entry[split + 1..])?;
    let key = unquote(&entry[..split])?;
    if key.is_empty() {
        return None;
    }
    Some((key, value))
}
