//! Placeholder masking of SMILES literals in queries and questions.
//!
//! Only the contents of quoted literals change; the quotes stay, so a masked
//! query still parses.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskMap {
    /// Raw literal text (escapes kept) for placeholder `k`.
    pub literals: Vec<String>,
}

impl MaskMap {
    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    pub fn len(&self) -> usize {
        self.literals.len()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("unknown placeholder <SMILES_{0}>")]
    UnknownPlaceholder(usize),
}

pub fn placeholder(k: usize) -> String {
    format!("<SMILES_{k}>")
}

/// A quoted literal: byte range of its contents and its raw text.
#[derive(Debug, Clone, Copy)]
struct Literal<'a> {
    start: usize,
    end: usize,
    raw: &'a str,
}

fn quoted_literals(text: &str) -> Vec<Literal<'_>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let q = bytes[i];
        if q != b'"' && q != b'\'' {
            i += 1;
            continue;
        }
        let start = i + 1;
        let mut j = start;
        while j < bytes.len() && bytes[j] != q {
            if bytes[j] == b'\\' {
                j += 1;
            }
            j += 1;
        }
        if j >= bytes.len() {
            break;
        }
        out.push(Literal {
            start,
            end: j,
            raw: &text[start..j],
        });
        i = j + 1;
    }
    out
}

/// Whether the text before a literal is `name:` or `name =`.
fn in_name_position(text: &str, literal_start: usize) -> bool {
    let before = text[..literal_start - 1].trim_end();
    let Some(rest) = before
        .strip_suffix(':')
        .or_else(|| before.strip_suffix('='))
    else {
        return false;
    };
    let rest = rest.trim_end();
    rest.strip_suffix("name").is_some_and(|r| {
        !r.ends_with(|c: char| c.is_alphanumeric() || c == '_')
    })
}

fn mask_with(text: &str, select: impl Fn(&Literal) -> bool) -> (String, MaskMap) {
    let mut map = MaskMap::default();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for lit in quoted_literals(text) {
        if !select(&lit) {
            continue;
        }
        let k = *index.entry(lit.raw).or_insert_with(|| {
            map.literals.push(lit.raw.to_string());
            map.literals.len() - 1
        });
        out.push_str(&text[last..lit.start]);
        out.push_str(&placeholder(k));
        last = lit.end;
    }
    out.push_str(&text[last..]);
    (out, map)
}

/// Masks literals in a query: known molecule names anywhere, and
/// SMILES-shaped literals bound to a `name` property.
pub fn mask_smiles(text: &str, known: &dyn Fn(&str) -> bool) -> (String, MaskMap) {
    mask_with(text, |l| {
        known(l.raw) || (in_name_position(text, l.start) && is_smiles_like(l.raw))
    })
}

/// Masks quoted literals in a natural-language question that are known
/// molecule names or look like SMILES.
pub fn mask_question(text: &str, known: &dyn Fn(&str) -> bool) -> (String, MaskMap) {
    mask_with(text, |l| known(l.raw) || is_smiles_like(l.raw))
}

pub fn unmask_smiles(text: &str, map: &MaskMap) -> Result<String, MaskError> {
    const OPEN: &str = "<SMILES_";
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find(OPEN) {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + OPEN.len()..];
        let digits = after.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 && after[digits..].starts_with('>') {
            let k: usize = after[..digits]
                .parse()
                .map_err(|_| MaskError::UnknownPlaceholder(usize::MAX))?;
            let lit = map
                .literals
                .get(k)
                .ok_or(MaskError::UnknownPlaceholder(k))?;
            out.push_str(lit);
            rest = &after[digits + 1..];
        } else {
            out.push_str(OPEN);
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Quoted literals that look like SMILES, for checking that text is free of
/// chemistry.
pub fn find_smiles_literals(text: &str) -> Vec<String> {
    quoted_literals(text)
        .into_iter()
        .filter(|l| is_smiles_like(l.raw))
        .map(|l| l.raw.to_string())
        .collect()
}

/// Tokenizes against the organic-subset SMILES grammar. Requires at least one
/// atom, balanced branches and bracket atoms.
pub fn is_smiles_like(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    let mut atoms = 0;
    let mut depth: i32 = 0;
    while i < b.len() {
        let c = b[i];
        match c {
            b'B' | b'C' => {
                atoms += 1;
                i += if b.get(i + 1) == Some(&if c == b'B' { b'r' } else { b'l' }) {
                    2
                } else {
                    1
                };
            }
            b'N' | b'O' | b'P' | b'S' | b'F' | b'I' | b'b' | b'c' | b'n' | b'o' | b'p'
            | b's' => {
                atoms += 1;
                i += 1;
            }
            b'[' => {
                let Some(close) = b[i..].iter().position(|&x| x == b']') else {
                    return false;
                };
                let inner = &s[i + 1..i + close];
                if inner.is_empty()
                    || !inner.starts_with(|c: char| c.is_ascii_alphanumeric())
                    || !inner
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || "+-@H:".contains(c))
                {
                    return false;
                }
                atoms += 1;
                i += close + 1;
            }
            b'(' => {
                depth += 1;
                i += 1;
            }
            b')' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
                i += 1;
            }
            b'-' | b'=' | b'#' | b'$' | b':' | b'/' | b'\\' | b'.' | b'0'..=b'9' => i += 1,
            b'%' => {
                if b.len() < i + 3 || !b[i + 1].is_ascii_digit() || !b[i + 2].is_ascii_digit() {
                    return false;
                }
                i += 3;
            }
            _ => return false,
        }
    }
    atoms > 0 && depth == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none(_: &str) -> bool {
        false
    }

    #[test]
    fn repeated_literal_shares_placeholder() {
        let q = r#"MATCH (a {name: "CCO"}) MATCH (b {name: "CCO"}) MATCH (c {name: "c1ccccc1"}) RETURN a"#;
        let (m, map) = mask_smiles(q, &none);
        assert_eq!(
            m,
            r#"MATCH (a {name: "<SMILES_0>"}) MATCH (b {name: "<SMILES_0>"}) MATCH (c {name: "<SMILES_1>"}) RETURN a"#
        );
        assert_eq!(map.literals, vec!["CCO", "c1ccccc1"]);
        assert_eq!(unmask_smiles(&m, &map).unwrap(), q);
    }

    #[test]
    fn no_literals_unchanged() {
        let q = "MATCH (r:Reaction) WHERE 'Reaction' IN labels(r) RETURN r.id";
        let (m, map) = mask_smiles(q, &none);
        assert_eq!(m, q);
        assert!(map.is_empty());
    }

    #[test]
    fn known_names_masked_anywhere() {
        let q = "MATCH (m) WHERE m.name IN ['CO', 'x'] RETURN m";
        let (m, _) = mask_smiles(q, &|s| s == "CO");
        assert_eq!(m, "MATCH (m) WHERE m.name IN ['<SMILES_0>', 'x'] RETURN m");
        let (m, _) = mask_smiles("MATCH (m) WHERE m.name = 'CCN' RETURN m", &none);
        assert_eq!(m, "MATCH (m) WHERE m.name = '<SMILES_0>' RETURN m");
    }

    #[test]
    fn question_masking() {
        let (m, map) = mask_question(r#"Which reactions produce "CC(=O)O"?"#, &none);
        assert_eq!(m, r#"Which reactions produce "<SMILES_0>"?"#);
        assert_eq!(map.len(), 1);
    }

    #[test]
    fn unknown_placeholder_errors() {
        assert_eq!(
            unmask_smiles("<SMILES_3>", &MaskMap::default()),
            Err(MaskError::UnknownPlaceholder(3))
        );
        assert_eq!(unmask_smiles("<SMILES_x>", &MaskMap::default()).unwrap(), "<SMILES_x>");
    }

    #[test]
    fn smiles_shapes() {
        for s in ["CCO", "c1ccccc1", "C(=O)O", "[Na+].[Cl-]", "ClCCBr", "C%12CC%12"] {
            assert!(is_smiles_like(s), "{s}");
        }
        for s in ["", "Reaction", "hello world", "C(", "123", "yield"] {
            assert!(!is_smiles_like(s), "{s}");
        }
    }
}
