//! Query text similarity: BLEU, METEOR and ROUGE-L over Cypher tokens.

use std::collections::HashMap;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

const PUNCT: &str = "()[]{},.:=<>-|";
pub const BLEU_EPSILON: f64 = 1e-9;
const METEOR_ALPHA: f64 = 0.9;
const METEOR_GAMMA: f64 = 0.5;
const METEOR_BETA: f64 = 3.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TextScores {
    pub bleu: f64,
    pub meteor: f64,
    pub rouge_l: f64,
}

/// Splits on whitespace and keeps each Cypher punctuation character as its
/// own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() || PUNCT.contains(c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn text_scores(candidate: &str, reference: &str) -> TextScores {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    TextScores {
        bleu: bleu(&c, &r),
        meteor: meteor(&c, &r),
        rouge_l: rouge_l(&c, &r),
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU: a corpus of one pair.
pub fn bleu<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    corpus_bleu(&[(candidate, reference)])
}

/// Corpus BLEU with clipped n-gram counts pooled over pairs, up to 4-grams
/// (fewer when every candidate is shorter), brevity penalty, and zero
/// matches replaced by epsilon.
pub fn corpus_bleu<S: AsRef<str>>(pairs: &[(&[S], &[S])]) -> f64 {
    let cand_len: usize = pairs.iter().map(|(c, _)| c.len()).sum();
    if cand_len == 0 {
        return 0.0;
    }
    let ref_len: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    let max_n = pairs.iter().map(|(c, _)| c.len()).max().unwrap_or(0).min(4);
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (c, r) in pairs {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(c, n) {
                matched += k.min(rc.get(&g).copied().unwrap_or(0));
                total += k;
            }
        }
        let num = if matched == 0 {
            BLEU_EPSILON
        } else {
            matched as f64
        };
        log_sum += (num / total.max(1) as f64).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    (bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0)
}

/// Unigram alignment as (candidate index, reference index), exact stage
/// first, then Porter stems over what is left. Each stage takes the earliest
/// free reference position.
pub fn meteor_alignment<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Vec<(usize, usize)> {
    let stemmer = Stemmer::create(Algorithm::English);
    let stem = |s: &str| stemmer.stem(&s.to_lowercase()).into_owned();
    let mut ref_used = vec![false; reference.len()];
    let mut cand_used = vec![false; candidate.len()];
    let mut pairs = Vec::new();
    let c_stems: Vec<String> = candidate.iter().map(|t| stem(t.as_ref())).collect();
    let r_stems: Vec<String> = reference.iter().map(|t| stem(t.as_ref())).collect();
    for stage in 0..2 {
        for (i, c) in candidate.iter().enumerate() {
            if cand_used[i] {
                continue;
            }
            let hit = (0..reference.len()).find(|&j| {
                !ref_used[j]
                    && if stage == 0 {
                        c.as_ref() == reference[j].as_ref()
                    } else {
                        c_stems[i] == r_stems[j]
                    }
            });
            if let Some(j) = hit {
                cand_used[i] = true;
                ref_used[j] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

pub fn meteor<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let align = meteor_alignment(candidate, reference);
    let m = align.len();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 1;
    for w in align.windows(2) {
        if w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1 {
            chunks += 1;
        }
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (chunks as f64 / m as f64).powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    2.0 * p * r / (p + r)
}
