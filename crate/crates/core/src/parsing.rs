//! Tolerant line-based parser for generator output.
//!
//! Grammar, applied to each line after trimming:
//!
//! ```text
//! line    := marker? "(" field "," field "," field ")" trailer?
//! marker  := digits ("." | ")") | "-" | "*" | "•"      followed by optional spaces
//! trailer := "," | "." | ";"
//! ```
//!
//! Commas inside nested parentheses do not count, and a tuple must have exactly
//! two top-level commas. Fields go through [`normalize_surface`]. Blank lines
//! are ignored; every other non-matching line counts as malformed.

use std::collections::HashSet;

use serde::Serialize;

use crate::corpus::{normalize_surface, Triplet};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseOutcome {
    pub triplets: Vec<Triplet>,
    pub malformed_lines: usize,
    /// More distinct valid triplets were present than `max_triplets`.
    pub truncated_to_max: bool,
}

fn strip_marker(line: &str) -> &str {
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    let rest = if digits > 0 {
        match line[digits..].chars().next() {
            Some('.') | Some(')') => &line[digits + 1..],
            _ => line,
        }
    } else if let Some(rest) = line
        .strip_prefix('-')
        .or_else(|| line.strip_prefix('*'))
        .or_else(|| line.strip_prefix('•'))
    {
        rest
    } else {
        line
    };
    rest.trim_start()
}

/// Splits `a, b, c` on top-level commas; `None` unless there are exactly two
/// and parentheses are balanced.
fn split_fields(inner: &str) -> Option<[&str; 3]> {
    let mut depth = 0i32;
    let mut cuts = Vec::with_capacity(2);
    for (i, c) in inner.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            }
            ',' if depth == 0 => cuts.push(i),
            _ => {}
        }
    }
    if depth != 0 || cuts.len() != 2 {
        return None;
    }
    Some([
        &inner[..cuts[0]],
        &inner[cuts[0] + 1..cuts[1]],
        &inner[cuts[1] + 1..],
    ])
}

/// Parses one line into a triplet, if it is a bare tuple.
pub fn parse_line(line: &str) -> Option<Triplet> {
    let body = strip_marker(line.trim());
    let body = body
        .strip_suffix([',', '.', ';'])
        .map(str::trim_end)
        .unwrap_or(body);
    let inner = body.strip_prefix('(')?.strip_suffix(')')?;
    let [s, p, o] = split_fields(inner)?;
    let (s, p, o) = (normalize_surface(s), normalize_surface(p), normalize_surface(o));
    Triplet::new(&s, &p, &o).ok()
}

/// Never fails: rejected lines are counted, duplicates dropped, and output
/// capped at `max_triplets` (at least one).
pub fn parse_triplets(raw: &str, max_triplets: usize) -> ParseOutcome {
    let cap = max_triplets.max(1);
    let mut out = ParseOutcome::default();
    let mut seen = HashSet::new();
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Some(t) => {
                if seen.insert(t.clone()) {
                    if out.triplets.len() < cap {
                        out.triplets.push(t);
                    } else {
                        out.truncated_to_max = true;
                    }
                }
            }
            None => out.malformed_lines += 1,
        }
    }
    out
}
