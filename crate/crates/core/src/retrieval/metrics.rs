use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{AfmError, Result};

/// Relevance labels of one query.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Relevance {
    pub positives: BTreeSet<String>,
    pub similar: BTreeSet<String>,
}

/// `query id → relevance`. File format: `query_id: pos pos … | sim sim …`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub queries: BTreeMap<String, Relevance>,
}

impl GroundTruth {
    pub fn insert(&mut self, query: impl Into<String>, rel: Relevance) {
        self.queries.insert(query.into(), rel);
    }

    pub fn get(&self, query: &str) -> Option<&Relevance> {
        self.queries.get(query)
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut gt = GroundTruth::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (q, rest) = t
                .split_once(':')
                .ok_or_else(|| AfmError::parse(i + 1, "expected `query_id: …`"))?;
            let q = q.trim();
            if q.is_empty() {
                return Err(AfmError::parse(i + 1, "empty query id"));
            }
            let (pos, sim) = rest.split_once('|').unwrap_or((rest, ""));
            let rel = Relevance {
                positives: pos.split_whitespace().map(String::from).collect(),
                similar: sim.split_whitespace().map(String::from).collect(),
            };
            gt.insert(q, rel);
        }
        Ok(gt)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (q, rel) in &self.queries {
            write!(w, "{q}:")?;
            for p in &rel.positives {
                write!(w, " {p}")?;
            }
            if !rel.similar.is_empty() {
                write!(w, " |")?;
                for s in &rel.similar {
                    write!(w, " {s}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| AfmError::file(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }
}

/// Ranked ids with "similar" items either dropped (`similar_positive =
/// false`) or merged into the positives.
fn judged<'a>(
    ranked: &'a [&'a str],
    rel: &'a Relevance,
    similar_positive: bool,
) -> (Vec<bool>, usize) {
    let hits = ranked
        .iter()
        .filter(|id| similar_positive || !rel.similar.contains(**id))
        .map(|id| rel.positives.contains(*id) || (similar_positive && rel.similar.contains(*id)))
        .collect();
    let total = rel.positives.len()
        + if similar_positive {
            rel.similar.difference(&rel.positives).count()
        } else {
            0
        };
    (hits, total)
}

/// Mean of the precision at each positive's rank; positives missing from
/// the list contribute zero. `None` when the query has no positives.
pub fn average_precision(ranked: &[&str], rel: &Relevance, similar_positive: bool) -> Option<f64> {
    let (hits, total) = judged(ranked, rel, similar_positive);
    if total == 0 {
        return None;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (k, &h) in hits.iter().enumerate() {
        if h {
            found += 1;
            sum += found as f64 / (k + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Fraction of the top `n` (after dropping ignored items) that are positive.
pub fn precision_at(ranked: &[&str], rel: &Relevance, n: usize, similar_positive: bool) -> Option<f64> {
    let (hits, total) = judged(ranked, rel, similar_positive);
    if total == 0 || n == 0 {
        return None;
    }
    Some(hits.iter().take(n).filter(|&&h| h).count() as f64 / n as f64)
}

/// `(query id, ranked ids)` pairs.
pub type RunResults = [(String, Vec<String>)];

fn per_query(
    runs: &RunResults,
    gt: &GroundTruth,
    f: impl Fn(&[&str], &Relevance) -> Option<f64>,
) -> f64 {
    let mut vals = Vec::new();
    for (q, ids) in runs {
        let Some(rel) = gt.get(q) else {
            log::warn!("query `{q}` has no ground truth; excluded");
            continue;
        };
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        match f(&refs, rel) {
            Some(v) => vals.push(v),
            None => log::warn!("query `{q}` has no positives; excluded"),
        }
    }
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub fn evaluate_map(runs: &RunResults, gt: &GroundTruth, similar_positive: bool) -> f64 {
    per_query(runs, gt, |r, rel| average_precision(r, rel, similar_positive))
}

pub fn evaluate_p_at(runs: &RunResults, gt: &GroundTruth, n: usize, similar_positive: bool) -> f64 {
    per_query(runs, gt, |r, rel| precision_at(r, rel, n, similar_positive))
}

/// Cut-offs reported by `eval`.
pub const P_AT: [usize; 4] = [5, 10, 25, 50];
