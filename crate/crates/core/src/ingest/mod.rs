//! Loading, cleaning and sampling of reaction records.

pub mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One reaction with role-tagged molecule lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionRecord {
    pub id: String,
    pub reactants: Vec<String>,
    pub products: Vec<String>,
    #[serde(default)]
    pub agents: Vec<String>,
    #[serde(default)]
    pub solvents: Vec<String>,
    /// Percent yield per product SMILES.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yields: Option<BTreeMap<String, f64>>,
}

impl ReactionRecord {
    pub fn roles(&self) -> [&Vec<String>; 4] {
        [&self.reactants, &self.products, &self.agents, &self.solvents]
    }

    fn roles_mut(&mut self) -> [&mut Vec<String>; 4] {
        [
            &mut self.reactants,
            &mut self.products,
            &mut self.agents,
            &mut self.solvents,
        ]
    }

    /// Role-count bounds: 1..=max reactants and products, 0..=max agents and solvents.
    pub fn within_bounds(&self, max_per_role: usize) -> bool {
        (1..=max_per_role).contains(&self.reactants.len())
            && (1..=max_per_role).contains(&self.products.len())
            && self.agents.len() <= max_per_role
            && self.solvents.len() <= max_per_role
    }

    /// Order-insensitive within roles, role-sensitive across roles.
    pub fn dedupe_key(&self) -> String {
        let mut key = String::new();
        for (i, role) in self.roles().into_iter().enumerate() {
            if i > 0 {
                key.push('\u{1e}');
            }
            let mut sorted: Vec<&str> = role.iter().map(String::as_str).collect();
            sorted.sort_unstable();
            key.push_str(&sorted.join("\u{1f}"));
        }
        key
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Format, IngestError> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        ext.parse()
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("unknown input format `{0}` (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("sample size {requested} exceeds the {available} records that survive filtering")]
    SampleTooLarge { requested: usize, available: usize },
}

/// A rejected input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based physical line (CSV header is line 1).
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadOutcome {
    pub records: Vec<ReactionRecord>,
    pub errors: Vec<RowError>,
}

pub fn write_error_report(errors: &[RowError], path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for e in errors {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

pub fn load_reactions(path: &Path, format: Format) -> Result<LoadOutcome, IngestError> {
    let file = fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        Format::Csv => load_csv(file),
        Format::Jsonl => load_jsonl(BufReader::new(file), path),
    }
}

fn split_role(field: &str) -> Vec<String> {
    field
        .split('.')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_yields(field: &str) -> Result<Option<BTreeMap<String, f64>>, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    let mut out = BTreeMap::new();
    for pair in field.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        // SMILES may contain '=', so the value follows the last one.
        let (smiles, pct) = pair
            .rsplit_once('=')
            .ok_or_else(|| format!("yield entry `{pair}` is not smiles=percent"))?;
        let pct: f64 = pct
            .trim()
            .parse()
            .map_err(|_| format!("yield value `{}` is not a number", pct.trim()))?;
        out.insert(smiles.trim().to_string(), pct);
    }
    Ok(Some(out))
}

fn load_csv<R: std::io::Read>(reader: R) -> Result<LoadOutcome, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (id_c, re_c, pr_c) = (col("id"), col("reactants"), col("products"));
    let (ag_c, so_c, yi_c) = (col("agents"), col("solvents"), col("yields"));

    let mut out = LoadOutcome::default();
    for (i, row) in rdr.records().enumerate() {
        let line = row
            .as_ref()
            .ok()
            .and_then(|r| r.position().map(|p| p.line() as usize))
            .unwrap_or(i + 2);
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(RowError {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let get = |c: Option<usize>| c.and_then(|c| row.get(c)).unwrap_or("");
        let id = get(id_c).trim().to_string();
        let yields = match parse_yields(get(yi_c)) {
            Ok(y) => y,
            Err(reason) => {
                out.errors.push(RowError { line, reason });
                continue;
            }
        };
        let rec = ReactionRecord {
            id,
            reactants: split_role(get(re_c)),
            products: split_role(get(pr_c)),
            agents: split_role(get(ag_c)),
            solvents: split_role(get(so_c)),
            yields,
        };
        match check_row(rec) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.errors.push(RowError { line, reason }),
        }
    }
    Ok(out)
}

fn load_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<LoadOutcome, IngestError> {
    let mut out = LoadOutcome::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: ReactionRecord = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(RowError {
                    line: line_no,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match check_row(rec) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.errors.push(RowError {
                line: line_no,
                reason,
            }),
        }
    }
    Ok(out)
}

/// Row-level checks shared by both formats. Role-count bounds are left to the filter stage.
fn check_row(mut rec: ReactionRecord) -> Result<ReactionRecord, String> {
    if rec.id.trim().is_empty() {
        return Err("empty id".into());
    }
    for role in rec.roles_mut() {
        for s in role.iter_mut() {
            *s = s.trim().to_string();
        }
        role.retain(|s| !s.is_empty());
    }
    if rec.products.is_empty() {
        return Err("row has no products".into());
    }
    if let Some(yields) = rec.yields.as_mut() {
        let mut clean = BTreeMap::new();
        for (smiles, pct) in std::mem::take(yields) {
            let smiles = smiles.trim().to_string();
            if !rec.products.contains(&smiles) {
                return Err(format!("yield key `{smiles}` is not among the products"));
            }
            if !pct.is_finite() {
                return Err(format!("yield for `{smiles}` is not finite"));
            }
            let clamped = pct.clamp(0.0, 100.0);
            if clamped != pct {
                log::warn!(
                    "reaction {}: yield {pct} for {smiles} clamped to {clamped}",
                    rec.id
                );
            }
            clean.insert(smiles, clamped);
        }
        *yields = clean;
    }
    Ok(rec)
}

/// Molecule normalization applied before deduplication.
pub trait Canonicalizer: Sync {
    fn canonicalize(&self, smiles: &str) -> Result<String, String>;
}

/// Leaves strings unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Canonicalizer for Identity {
    fn canonicalize(&self, smiles: &str) -> Result<String, String> {
        Ok(smiles.to_string())
    }
}

impl<F> Canonicalizer for F
where
    F: Fn(&str) -> Result<String, String> + Sync,
{
    fn canonicalize(&self, smiles: &str) -> Result<String, String> {
        self(smiles)
    }
}

fn dedupe_in_place(list: &mut Vec<String>) {
    let mut seen = HashSet::new();
    list.retain(|s| seen.insert(s.clone()));
}

fn canonicalize_record(
    mut rec: ReactionRecord,
    canon: Option<&dyn Canonicalizer>,
) -> Result<ReactionRecord, String> {
    let apply = |s: &str| -> Result<String, String> {
        let t = s.trim();
        match canon {
            Some(c) => c
                .canonicalize(t)
                .map(|c| c.trim().to_string())
                .map_err(|e| format!("canonicalizer failed on `{t}`: {e}")),
            None => Ok(t.to_string()),
        }
    };
    for role in rec.roles_mut() {
        for s in role.iter_mut() {
            *s = apply(s)?;
        }
        role.retain(|s| !s.is_empty());
        dedupe_in_place(role);
    }
    if let Some(yields) = rec.yields.take() {
        let mut out = BTreeMap::new();
        for (k, v) in yields {
            let k = apply(&k)?;
            if rec.products.contains(&k) {
                out.entry(k).or_insert(v);
            }
        }
        rec.yields = Some(out);
    }
    Ok(rec)
}

/// Trim, canonicalize, drop within-role duplicates, then drop whole-reaction
/// duplicates keeping the first occurrence.
pub fn normalize_and_dedupe(
    records: Vec<ReactionRecord>,
    canonicalizer: Option<&dyn Canonicalizer>,
) -> Vec<ReactionRecord> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let id = rec.id.clone();
        let rec = match canonicalize_record(rec, canonicalizer) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("reaction {id} excluded: {e}");
                continue;
            }
        };
        if seen.insert(rec.dedupe_key()) {
            out.push(rec);
        } else {
            log::debug!("reaction {id} dropped as duplicate");
        }
    }
    out
}

/// Drop reactions mentioning any molecule seen fewer than `min_count` times
/// across the whole set, repeating until nothing changes (a drop can push
/// other molecules under the threshold). `min_count <= 1` is a no-op.
pub fn filter_rare(mut records: Vec<ReactionRecord>, min_count: usize) -> Vec<ReactionRecord> {
    if min_count <= 1 {
        return records;
    }
    loop {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in &records {
            for role in r.roles() {
                for s in role {
                    *counts.entry(s.as_str()).or_default() += 1;
                }
            }
        }
        let keep: Vec<bool> = records
            .iter()
            .map(|r| {
                r.roles()
                    .iter()
                    .all(|role| role.iter().all(|s| counts[s.as_str()] >= min_count))
            })
            .collect();
        if keep.iter().all(|&k| k) {
            return records;
        }
        records = records
            .into_iter()
            .zip(keep)
            .filter_map(|(r, k)| k.then_some(r))
            .collect();
    }
}

pub fn filter_by_role_counts(
    records: Vec<ReactionRecord>,
    max_per_role: usize,
) -> Vec<ReactionRecord> {
    records
        .into_iter()
        .filter(|r| r.within_bounds(max_per_role))
        .collect()
}

/// Role-count filter followed by a seeded uniform sample of exactly
/// `sample_size` records. The sample keeps input order.
pub fn filter_and_sample(
    records: Vec<ReactionRecord>,
    max_per_role: usize,
    sample_size: usize,
    seed: u64,
) -> Result<Vec<ReactionRecord>, IngestError> {
    let survivors = filter_by_role_counts(records, max_per_role);
    if sample_size > survivors.len() {
        return Err(IngestError::SampleTooLarge {
            requested: sample_size,
            available: survivors.len(),
        });
    }
    let picked = sample_indices(survivors.len(), sample_size, seed);
    let mut mask = vec![false; survivors.len()];
    for i in picked {
        mask[i] = true;
    }
    Ok(survivors
        .into_iter()
        .zip(mask)
        .filter_map(|(r, m)| m.then_some(r))
        .collect())
}

/// Partial Fisher-Yates over `0..n`; returns `k` distinct indices.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        // u64 draws keep the stream identical on 32- and 64-bit targets.
        let j = i + rng.random_range(0..(n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx
}

pub fn write_jsonl(records: &[ReactionRecord], path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, re: &[&str], pr: &[&str]) -> ReactionRecord {
        ReactionRecord {
            id: id.into(),
            reactants: re.iter().map(|s| s.to_string()).collect(),
            products: pr.iter().map(|s| s.to_string()).collect(),
            agents: vec![],
            solvents: vec![],
            yields: None,
        }
    }

    fn write_tmp(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_roles_and_yields() {
        let f = write_tmp(
            "id,reactants,products,agents,solvents,yields\n\
             R1,CCO.CC(=O)O,CCOC(C)=O,,O,CCOC(C)=O=85\n",
            ".csv",
        );
        let out = load_reactions(f.path(), Format::Csv).unwrap();
        assert!(out.errors.is_empty(), "{:?}", out.errors);
        let r = &out.records[0];
        assert_eq!(r.reactants, vec!["CCO", "CC(=O)O"]);
        assert_eq!(r.products, vec!["CCOC(C)=O"]);
        assert!(r.agents.is_empty());
        assert_eq!(r.solvents, vec!["O"]);
        assert_eq!(r.yields.as_ref().unwrap()["CCOC(C)=O"], 85.0);
    }

    #[test]
    fn bad_rows_are_reported_not_dropped() {
        let f = write_tmp(
            "id,reactants,products,agents,solvents,yields\n\
             R1,A,,,,\n\
             R2,A,B,,,C=50\n\
             R3,A,B,,,B=150\n",
            ".csv",
        );
        let out = load_reactions(f.path(), Format::Csv).unwrap();
        assert_eq!(
            out.errors.iter().map(|e| e.line).collect::<Vec<_>>(),
            vec![2, 3]
        );
        assert!(out.errors[0].reason.contains("no products"));
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].yields.as_ref().unwrap()["B"], 100.0);
    }

    #[test]
    fn five_reactants_survive_loading_but_not_filtering() {
        let f = write_tmp(
            "id,reactants,products,agents,solvents,yields\nR1,A.B.C.D.E,F,,,\n",
            ".csv",
        );
        let out = load_reactions(f.path(), Format::Csv).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(filter_by_role_counts(out.records, 4).is_empty());
    }

    #[test]
    fn empty_file_and_jsonl() {
        let f = write_tmp("", ".jsonl");
        let out = load_reactions(f.path(), Format::Jsonl).unwrap();
        assert!(out.records.is_empty() && out.errors.is_empty());
        let f = write_tmp(
            "{\"id\":\"R1\",\"reactants\":[\"A\"],\"products\":[\"B\"],\"yields\":{\"B\":12.5}}\nnot json\n",
            ".jsonl",
        );
        let out = load_reactions(f.path(), Format::Jsonl).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.errors[0].line, 2);
    }

    #[test]
    fn unknown_format_and_missing_file() {
        assert!(matches!(
            "xml".parse::<Format>(),
            Err(IngestError::UnknownFormat(_))
        ));
        assert!(matches!(
            load_reactions(Path::new("/nonexistent/x.csv"), Format::Csv),
            Err(IngestError::Io { .. })
        ));
    }

    #[test]
    fn dedupe_within_and_across() {
        let a = rec("R1", &["CCO", " CCO"], &["X"]);
        let b = rec("R2", &["CCO"], &["X"]);
        let c = rec("R3", &["X"], &["CCO"]);
        let out = normalize_and_dedupe(vec![a, b, c], None);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].id, "R1");
        assert_eq!(out[0].reactants, vec!["CCO"]);
        assert_eq!(out[1].id, "R3");
    }

    #[test]
    fn canonicalizer_failure_excludes_record() {
        let canon = |s: &str| -> Result<String, String> {
            if s == "bad" {
                Err("nope".into())
            } else {
                Ok(s.to_lowercase())
            }
        };
        let out = normalize_and_dedupe(
            vec![rec("R1", &["bad"], &["X"]), rec("R2", &["A"], &["B"])],
            Some(&canon),
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].reactants, vec!["a"]);
        let ident = normalize_and_dedupe(vec![rec("R2", &["A"], &["B"])], Some(&Identity));
        assert_eq!(ident, normalize_and_dedupe(vec![rec("R2", &["A"], &["B"])], None));
    }

    #[test]
    fn sample_is_seeded_and_exact() {
        let recs: Vec<_> = (0..100)
            .map(|i| rec(&format!("R{i}"), &["A"], &[&format!("P{i}")]))
            .collect();
        let all = filter_and_sample(recs.clone(), 4, 100, 7).unwrap();
        assert_eq!(all, recs);
        let a = filter_and_sample(recs.clone(), 4, 10, 7).unwrap();
        let b = filter_and_sample(recs.clone(), 4, 10, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(matches!(
            filter_and_sample(recs, 4, 101, 7),
            Err(IngestError::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn rare_filter() {
        let recs = vec![
            rec("R1", &["A"], &["B"]),
            rec("R2", &["A"], &["B"]),
            rec("R3", &["A"], &["Z"]),
        ];
        let out = filter_rare(recs.clone(), 2);
        assert_eq!(out.len(), 2);
        assert_eq!(filter_rare(recs.clone(), 0), recs);
    }
}
