//! Scoring (§2.5.1): exact/relaxed P/R/F1 for NER and RE, the bootstrap
//! Wilcoxon significance test, §3.4 error categories and Table 1 statistics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::schema::{
    stats_modifier_order, AnnotationSet, EntityKind, EntityMention, MainEntityType, ModifierType, STATS_MAIN_ORDER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Exact,
    Relaxed,
}

impl MatchMode {
    pub const ALL: [MatchMode; 2] = [MatchMode::Exact, MatchMode::Relaxed];

    pub fn name(self) -> &'static str {
        match self {
            MatchMode::Exact => "exact",
            MatchMode::Relaxed => "relaxed",
        }
    }

    fn ranges_match(self, a: (usize, usize), b: (usize, usize)) -> bool {
        match self {
            MatchMode::Exact => a == b,
            MatchMode::Relaxed => overlap(a, b) > 0,
        }
    }
}

impl std::str::FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(MatchMode::Exact),
            "relaxed" => Ok(MatchMode::Relaxed),
            other => Err(format!("unknown match mode `{other}` (expected exact|relaxed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Main entity mentions.
    Ner,
    /// Main–modifier relations.
    Re,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Ner, Task::Re];

    pub fn name(self) -> &'static str {
        match self {
            Task::Ner => "ner",
            Task::Re => "re",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ner" => Ok(Task::Ner),
            "re" => Ok(Task::Re),
            other => Err(format!("unknown task `{other}` (expected ner|re)")),
        }
    }
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// One scorable unit: a mention (one part) or a relation (main and modifier
/// parts). Units match when keys are equal and every part matches in kind and
/// range under the mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Item {
    /// Mention type, or `main/label` for relations.
    pub key: String,
    pub parts: Vec<(EntityKind, usize, usize)>,
}

impl Item {
    pub fn mention(m: &EntityMention) -> Self {
        Item { key: m.kind.name().to_string(), parts: vec![(m.kind, m.start, m.end)] }
    }

    fn compatible(&self, other: &Item, mode: MatchMode) -> bool {
        self.key == other.key
            && self.parts.len() == other.parts.len()
            && self
                .parts
                .iter()
                .zip(&other.parts)
                .all(|(a, b)| a.0 == b.0 && mode.ranges_match((a.1, a.2), (b.1, b.2)))
    }

    fn overlaps_everywhere(&self, other: &Item) -> bool {
        self.parts.len() == other.parts.len()
            && self.parts.iter().zip(&other.parts).all(|(a, b)| overlap((a.1, a.2), (b.1, b.2)) > 0)
    }

    fn overlap_len(&self, other: &Item) -> usize {
        self.parts.iter().zip(&other.parts).map(|(a, b)| overlap((a.1, a.2), (b.1, b.2))).sum()
    }
}

/// Scorable units of one annotation set for a task.
pub fn items(set: &AnnotationSet, task: Task) -> Vec<Item> {
    match task {
        Task::Ner => set.main_mentions().map(Item::mention).collect(),
        Task::Re => {
            let by_id = set.mention_map();
            set.relations
                .iter()
                .filter_map(|r| {
                    let main = by_id.get(r.main.as_str())?;
                    let modifier = by_id.get(r.modifier.as_str())?;
                    Some(Item {
                        key: format!("{}/{}", main.kind.name(), r.label.name()),
                        parts: vec![(main.kind, main.start, main.end), (modifier.kind, modifier.start, modifier.end)],
                    })
                })
                .collect()
        }
    }
}

/// One-to-one maximum-cardinality matching where `edge(g, p)` returns a
/// preference weight for admissible pairs (higher is preferred).
///
/// Pairs are first taken greedily in preference order (weight desc, then
/// earlier gold, then earlier pred); augmenting paths then extend the
/// matching to maximum cardinality.
fn max_matching(n_gold: usize, n_pred: usize, edge: impl Fn(usize, usize) -> Option<usize>) -> Vec<(usize, usize)> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_gold];
    let mut edges = Vec::new();
    for (g, list) in adj.iter_mut().enumerate() {
        for p in 0..n_pred {
            if let Some(w) = edge(g, p) {
                list.push((w, p));
                edges.push((w, g, p));
            }
        }
        list.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    }
    edges.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut gold_to: Vec<Option<usize>> = vec![None; n_gold];
    let mut pred_to: Vec<Option<usize>> = vec![None; n_pred];
    for (_, g, p) in edges {
        if gold_to[g].is_none() && pred_to[p].is_none() {
            gold_to[g] = Some(p);
            pred_to[p] = Some(g);
        }
    }

    fn augment(
        g: usize,
        adj: &[Vec<(usize, usize)>],
        seen: &mut [bool],
        gold_to: &mut [Option<usize>],
        pred_to: &mut [Option<usize>],
    ) -> bool {
        for &(_, p) in &adj[g] {
            if seen[p] {
                continue;
            }
            seen[p] = true;
            if pred_to[p].is_none_or(|g2| augment(g2, adj, seen, gold_to, pred_to)) {
                gold_to[g] = Some(p);
                pred_to[p] = Some(g);
                return true;
            }
        }
        false
    }

    let mut seen = vec![false; n_pred];
    for g in 0..n_gold {
        if gold_to[g].is_none() && !adj[g].is_empty() {
            seen.iter_mut().for_each(|s| *s = false);
            augment(g, &adj, &mut seen, &mut gold_to, &mut pred_to);
        }
    }
    gold_to.iter().enumerate().filter_map(|(g, p)| p.map(|p| (g, p))).collect()
}

/// Matched `(gold index, pred index)` pairs, sorted by gold index.
pub fn match_items(gold: &[Item], pred: &[Item], mode: MatchMode) -> Vec<(usize, usize)> {
    max_matching(gold.len(), pred.len(), |g, p| {
        gold[g].compatible(&pred[p], mode).then(|| gold[g].overlap_len(&pred[p]))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MatchCounts {
    pub fn from_pairs(n_gold: usize, n_pred: usize, tp: usize) -> Self {
        MatchCounts { tp, fp: n_pred - tp, fn_: n_gold - tp }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn match_mentions(
    gold: &[EntityMention],
    pred: &[EntityMention],
    mode: MatchMode,
) -> (Vec<(usize, usize)>, MatchCounts) {
    let g: Vec<Item> = gold.iter().map(Item::mention).collect();
    let p: Vec<Item> = pred.iter().map(Item::mention).collect();
    let pairs = match_items(&g, &p, mode);
    let counts = MatchCounts::from_pairs(g.len(), p.len(), pairs.len());
    (pairs, counts)
}

/// Relation counts: labels equal and both endpoints match under `mode`.
pub fn match_relations(gold: &AnnotationSet, pred: &AnnotationSet, mode: MatchMode) -> MatchCounts {
    let g = items(gold, Task::Re);
    let p = items(pred, Task::Re);
    MatchCounts::from_pairs(g.len(), p.len(), match_items(&g, &p, mode).len())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("gold and prediction document ids differ: {detail}")]
    DocIdMismatch { detail: String },
    #[error("bootstrap needs at least 2 documents, got {0}")]
    InsufficientData(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeScores {
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<MatchCounts> for TypeScores {
    fn from(counts: MatchCounts) -> Self {
        TypeScores { counts, precision: counts.precision(), recall: counts.recall(), f1: counts.f1() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub mode: MatchMode,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: MatchCounts,
    /// Mean F1 over the types present in gold or predictions.
    pub macro_f1: f64,
    pub per_type: BTreeMap<String, TypeScores>,
}

/// Pair documents by id; both sides must carry the same id multiset.
fn align_docs<'a>(
    gold: &'a [AnnotationSet],
    pred: &'a [AnnotationSet],
) -> Result<Vec<(&'a AnnotationSet, &'a AnnotationSet)>, EvalError> {
    let mut g: Vec<&AnnotationSet> = gold.iter().collect();
    let mut p: Vec<&AnnotationSet> = pred.iter().collect();
    g.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    p.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let gi: Vec<&str> = g.iter().map(|s| s.doc_id.as_str()).collect();
    let pi: Vec<&str> = p.iter().map(|s| s.doc_id.as_str()).collect();
    if gi != pi {
        let missing: Vec<&str> = gi.iter().filter(|d| !pi.contains(d)).copied().take(5).collect();
        let extra: Vec<&str> = pi.iter().filter(|d| !gi.contains(d)).copied().take(5).collect();
        return Err(EvalError::DocIdMismatch {
            detail: format!(
                "{} gold vs {} predicted; missing from predictions {:?}, unexpected {:?}",
                gi.len(),
                pi.len(),
                missing,
                extra
            ),
        });
    }
    Ok(g.into_iter().zip(p).collect())
}

/// Counts for one document, overall and per type key.
fn doc_counts(gold: &AnnotationSet, pred: &AnnotationSet, task: Task, mode: MatchMode) -> (MatchCounts, Vec<(String, MatchCounts)>) {
    let g = items(gold, task);
    let p = items(pred, task);
    let pairs = match_items(&g, &p, mode);
    let mut per: HashMap<&str, MatchCounts> = HashMap::new();
    let mut matched_g = vec![false; g.len()];
    let mut matched_p = vec![false; p.len()];
    for &(gi, pi) in &pairs {
        matched_g[gi] = true;
        matched_p[pi] = true;
        per.entry(&g[gi].key).or_default().tp += 1;
    }
    for (i, it) in g.iter().enumerate() {
        if !matched_g[i] {
            per.entry(&it.key).or_default().fn_ += 1;
        }
    }
    for (i, it) in p.iter().enumerate() {
        if !matched_p[i] {
            per.entry(&it.key).or_default().fp += 1;
        }
    }
    (
        MatchCounts::from_pairs(g.len(), p.len(), pairs.len()),
        per.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    )
}

/// Micro-averaged scores over a corpus (documents scored in parallel).
pub fn score_corpus(
    gold: &[AnnotationSet],
    pred: &[AnnotationSet],
    task: Task,
    mode: MatchMode,
) -> Result<MetricReport, EvalError> {
    let docs = align_docs(gold, pred)?;
    let per_doc: Vec<_> = docs.par_iter().map(|(g, p)| doc_counts(g, p, task, mode)).collect();
    let mut total = MatchCounts::default();
    let mut per_type: BTreeMap<String, MatchCounts> = BTreeMap::new();
    for (c, per) in per_doc {
        total += c;
        for (k, v) in per {
            *per_type.entry(k).or_default() += v;
        }
    }
    let per_type: BTreeMap<String, TypeScores> = per_type.into_iter().map(|(k, v)| (k, v.into())).collect();
    let macro_f1 = if per_type.is_empty() {
        0.0
    } else {
        per_type.values().map(|t| t.f1).sum::<f64>() / per_type.len() as f64
    };
    Ok(MetricReport {
        task,
        mode,
        precision: total.precision(),
        recall: total.recall(),
        f1: total.f1(),
        counts: total,
        macro_f1,
        per_type,
    })
}

/// Table 2-style text: one row per report.
pub fn render_reports(reports: &[MetricReport]) -> String {
    let mut out = format!("{:<5} {:<8} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}\n", "task", "mode", "P", "R", "F1", "TP", "FP", "FN");
    for r in reports {
        out.push_str(&format!(
            "{:<5} {:<8} {:>6.3} {:>6.3} {:>6.3} {:>6} {:>6} {:>6}\n",
            r.task.name(),
            r.mode.name(),
            r.precision,
            r.recall,
            r.f1,
            r.counts.tp,
            r.counts.fp,
            r.counts.fn_
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub task: Task,
    pub mode: MatchMode,
    pub replicates: usize,
    pub seed: u64,
    /// Resampling unit; documents (see the decisions ledger).
    pub unit: String,
    pub f1_a: f64,
    pub f1_b: f64,
    /// Mann-Whitney U of the A replicate sample against the B sample.
    pub statistic: f64,
    /// One-sided p for H1: F1_a > F1_b.
    pub p_value: f64,
    /// 2.5/97.5 percentile interval of F1_a − F1_b over replicates.
    pub ci95: (f64, f64),
}

pub const DEFAULT_REPLICATES: usize = 1000;

/// Bootstrap comparison of two systems on one gold corpus.
///
/// Documents are ordered by id before resampling, so the report does not
/// depend on input order. Replicate `r` draws its indices from ChaCha8
/// stream `r` of `seed`; replicates run in parallel.
pub fn bootstrap_significance(
    gold: &[AnnotationSet],
    pred_a: &[AnnotationSet],
    pred_b: &[AnnotationSet],
    task: Task,
    mode: MatchMode,
    replicates: usize,
    seed: u64,
) -> Result<SignificanceReport, EvalError> {
    let a = align_docs(gold, pred_a)?;
    let b = align_docs(gold, pred_b)?;
    let n = a.len();
    if n < 2 {
        return Err(EvalError::InsufficientData(n));
    }
    let counts_a: Vec<MatchCounts> = a.par_iter().map(|(g, p)| doc_counts(g, p, task, mode).0).collect();
    let counts_b: Vec<MatchCounts> = b.par_iter().map(|(g, p)| doc_counts(g, p, task, mode).0).collect();
    let sum = |c: &[MatchCounts]| {
        c.iter().fold(MatchCounts::default(), |mut acc, x| {
            acc += *x;
            acc
        })
    };

    let samples: Vec<(f64, f64)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let (mut ca, mut cb) = (MatchCounts::default(), MatchCounts::default());
            for _ in 0..n {
                let i = rng.random_range(0..n);
                ca += counts_a[i];
                cb += counts_b[i];
            }
            (ca.f1(), cb.f1())
        })
        .collect();
    let fa: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let fb: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (statistic, p_value) = rank_sum_greater(&fa, &fb);
    let mut diffs: Vec<f64> = samples.iter().map(|s| s.0 - s.1).collect();
    diffs.sort_by(f64::total_cmp);

    Ok(SignificanceReport {
        task,
        mode,
        replicates,
        seed,
        unit: "document".into(),
        f1_a: sum(&counts_a).f1(),
        f1_b: sum(&counts_b).f1(),
        statistic,
        p_value,
        ci95: (percentile(&diffs, 0.025), percentile(&diffs, 0.975)),
    })
}

/// Linear-interpolated percentile of sorted data; 0 for empty data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Midranks (1-based) of the pooled sample, plus tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Samples smaller than this on either side use the exact null distribution.
pub const EXACT_RANK_SUM_LIMIT: usize = 30;

/// One-sided Wilcoxon rank-sum test of H1: `x` tends to exceed `y`.
/// Returns (U of `x`, p-value).
pub fn rank_sum_greater(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (n1, n2) = (x.len(), y.len());
    if n1 == 0 || n2 == 0 {
        return (0.0, 1.0);
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    if n1 < EXACT_RANK_SUM_LIMIT && n2 < EXACT_RANK_SUM_LIMIT {
        return (u, exact_rank_sum_p(&ranks, n1, r1));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let nf = n1f + n2f;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - tie_term);
    if var <= 0.0 {
        return (u, 1.0);
    }
    let z = (u - n1f * n2f / 2.0 - 0.5) / var.sqrt();
    let normal = Normal::standard();
    (u, (1.0 - normal.cdf(z)).clamp(0.0, 1.0))
}

/// P(W ≥ observed) under random assignment of the pooled midranks, where W
/// is the rank sum of a size-`n1` subset.
fn exact_rank_sum_p(ranks: &[f64], n1: usize, observed: f64) -> f64 {
    // Doubled midranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[k][s]: subsets of size k with doubled rank sum s.
    let mut ways = vec![vec![0u128; max_sum + 1]; n1 + 1];
    ways[0][0] = 1;
    for &d in &doubled {
        for k in (1..=n1).rev() {
            for s in (d..=max_sum).rev() {
                let add = ways[k - 1][s - d];
                if add != 0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    let threshold = (observed * 2.0).round() as usize;
    let total: u128 = ways[n1].iter().sum();
    let tail: u128 = ways[n1][threshold.min(max_sum + 1)..].iter().sum();
    tail as f64 / total as f64
}

/// Category assigned to one non-exact-match item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Miss,
    Spurious,
    Boundary,
    Type,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorExample {
    pub doc_id: String,
    pub category: ErrorCategory,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub misses: usize,
    pub spurious: usize,
    pub boundary_errors: usize,
    pub type_errors: usize,
    pub examples: Vec<ErrorExample>,
}

impl ErrorBreakdown {
    fn absorb(&mut self, other: ErrorBreakdown) {
        self.misses += other.misses;
        self.spurious += other.spurious;
        self.boundary_errors += other.boundary_errors;
        self.type_errors += other.type_errors;
        self.examples.extend(other.examples);
    }
}

fn describe(item: &Item) -> String {
    let spans: Vec<String> = item.parts.iter().map(|(_, s, e)| format!("{s}..{e}")).collect();
    format!("{} {}", item.key, spans.join(" -> "))
}

/// Categorize one document's errors for `task`.
pub fn categorize_errors(gold: &AnnotationSet, pred: &AnnotationSet, task: Task) -> ErrorBreakdown {
    let g = items(gold, task);
    let p = items(pred, task);
    let exact = match_items(&g, &p, MatchMode::Exact);
    let mut g_left = vec![true; g.len()];
    let mut p_left = vec![true; p.len()];
    for &(gi, pi) in &exact {
        g_left[gi] = false;
        p_left[pi] = false;
    }
    let gr: Vec<usize> = (0..g.len()).filter(|&i| g_left[i]).collect();
    let pr: Vec<usize> = (0..p.len()).filter(|&i| p_left[i]).collect();
    // Same-key pairings outrank cross-key ones, then overlap size decides.
    let pairs = max_matching(gr.len(), pr.len(), |a, b| {
        let (x, y) = (&g[gr[a]], &p[pr[b]]);
        x.overlaps_everywhere(y).then(|| x.overlap_len(y) + if x.key == y.key { 1 << 40 } else { 0 })
    });

    let mut out = ErrorBreakdown::default();
    let example = |category, gi: Option<usize>, pi: Option<usize>| ErrorExample {
        doc_id: gold.doc_id.clone(),
        category,
        gold: gi.map(|i| describe(&g[i])),
        pred: pi.map(|i| describe(&p[i])),
    };
    let mut g_paired = vec![false; gr.len()];
    let mut p_paired = vec![false; pr.len()];
    for (a, b) in pairs {
        g_paired[a] = true;
        p_paired[b] = true;
        let (gi, pi) = (gr[a], pr[b]);
        if g[gi].key == p[pi].key {
            out.boundary_errors += 1;
            out.examples.push(example(ErrorCategory::Boundary, Some(gi), Some(pi)));
        } else {
            out.type_errors += 1;
            out.examples.push(example(ErrorCategory::Type, Some(gi), Some(pi)));
        }
    }
    for (a, &gi) in gr.iter().enumerate() {
        if !g_paired[a] {
            out.misses += 1;
            out.examples.push(example(ErrorCategory::Miss, Some(gi), None));
        }
    }
    for (b, &pi) in pr.iter().enumerate() {
        if !p_paired[b] {
            out.spurious += 1;
            out.examples.push(example(ErrorCategory::Spurious, None, Some(pi)));
        }
    }
    out
}

/// Error categories summed over a corpus.
pub fn categorize_corpus(gold: &[AnnotationSet], pred: &[AnnotationSet], task: Task) -> Result<ErrorBreakdown, EvalError> {
    let mut out = ErrorBreakdown::default();
    for (g, p) in align_docs(gold, pred)? {
        out.absorb(categorize_errors(g, p, task));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainStats {
    #[serde(rename = "type")]
    pub main: MainEntityType,
    pub mentions: usize,
    /// Relation counts per permitted modifier, in Table 1 row order.
    pub relations: Vec<(ModifierType, usize)>,
}

/// Table 1-shaped corpus statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub documents: usize,
    pub rows: Vec<MainStats>,
}

impl StatsTable {
    pub fn mentions(&self, t: MainEntityType) -> usize {
        self.rows.iter().find(|r| r.main == t).map_or(0, |r| r.mentions)
    }

    pub fn relations(&self, t: MainEntityType, m: ModifierType) -> usize {
        self.rows
            .iter()
            .find(|r| r.main == t)
            .and_then(|r| r.relations.iter().find(|(x, _)| *x == m))
            .map_or(0, |(_, n)| *n)
    }
}

impl fmt::Display for StatsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>8}", "Documents", self.documents)?;
        for row in &self.rows {
            writeln!(f, "{:<28} {:>8}", row.main.display_label(), row.mentions)?;
            for (m, n) in &row.relations {
                writeln!(f, "  {:<26} {:>8}", format!("{}/{}", row.main.display_label(), m.display_label()), n)?;
            }
        }
        Ok(())
    }
}

pub fn corpus_stats(sets: &[AnnotationSet]) -> StatsTable {
    let mut mentions: HashMap<MainEntityType, usize> = HashMap::new();
    let mut relations: HashMap<(MainEntityType, ModifierType), usize> = HashMap::new();
    for set in sets {
        let by_id = set.mention_map();
        for m in set.main_mentions() {
            if let Some(t) = m.kind.as_main() {
                *mentions.entry(t).or_default() += 1;
            }
        }
        for r in &set.relations {
            if let Some(t) = by_id.get(r.main.as_str()).and_then(|m| m.kind.as_main()) {
                *relations.entry((t, r.label)).or_default() += 1;
            }
        }
    }
    StatsTable {
        documents: sets.len(),
        rows: STATS_MAIN_ORDER
            .iter()
            .map(|&t| MainStats {
                main: t,
                mentions: mentions.get(&t).copied().unwrap_or(0),
                relations: stats_modifier_order(t)
                    .iter()
                    .map(|&m| (m, relations.get(&(t, m)).copied().unwrap_or(0)))
                    .collect(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{MainEntityType as M, ModifierType as Mo, Relation};
    use proptest::prelude::*;

    fn mention(id: &str, kind: EntityKind, start: usize, end: usize) -> EntityMention {
        EntityMention::new(id, kind, start, end, "x".repeat(end - start))
    }

    fn problem(id: &str, start: usize, end: usize) -> EntityMention {
        mention(id, EntityKind::Main(M::Problem), start, end)
    }

    /// Brute-force maximum matching over all injective pairings.
    fn brute_force(gold: &[Item], pred: &[Item], mode: MatchMode) -> usize {
        fn go(g: usize, used: u32, gold: &[Item], pred: &[Item], mode: MatchMode, memo: &mut HashMap<(usize, u32), usize>) -> usize {
            if g == gold.len() {
                return 0;
            }
            if let Some(&v) = memo.get(&(g, used)) {
                return v;
            }
            let mut best = go(g + 1, used, gold, pred, mode, memo);
            for p in 0..pred.len() {
                if used & (1 << p) == 0 && gold[g].compatible(&pred[p], mode) {
                    best = best.max(1 + go(g + 1, used | (1 << p), gold, pred, mode, memo));
                }
            }
            memo.insert((g, used), best);
            best
        }
        go(0, 0, gold, pred, mode, &mut HashMap::new())
    }

    #[test]
    fn exact_vs_relaxed() {
        let (_, e) = match_mentions(&[problem("a", 10, 20)], &[problem("b", 12, 25)], MatchMode::Exact);
        let (_, r) = match_mentions(&[problem("a", 10, 20)], &[problem("b", 12, 25)], MatchMode::Relaxed);
        assert_eq!((e.tp, r.tp), (0, 1));
    }

    #[test]
    fn one_to_one_relaxed() {
        let gold = [problem("a", 0, 5), problem("b", 6, 10)];
        let pred = [problem("p", 3, 8)];
        let (pairs, c) = match_mentions(&gold, &pred, MatchMode::Relaxed);
        assert_eq!(c, MatchCounts { tp: 1, fp: 0, fn_: 1 });
        // Larger overlap (3..5 vs 6..8 are both 2 chars) ties → earlier gold.
        assert_eq!(pairs, [(0, 0)]);
        let g: Vec<Item> = gold.iter().map(Item::mention).collect();
        let p: Vec<Item> = pred.iter().map(Item::mention).collect();
        assert_eq!(brute_force(&g, &p, MatchMode::Relaxed), 1);
    }

    #[test]
    fn greedy_choice_is_repaired_to_maximum() {
        // Greedy takes (g0, p0) for its larger overlap; augmentation must
        // move g0 to p1 so g1 can take p0.
        let gold = [problem("a", 0, 10), problem("b", 8, 9)];
        let pred = [problem("p", 0, 10), problem("q", 9, 12)];
        let (pairs, c) = match_mentions(&gold, &pred, MatchMode::Relaxed);
        assert_eq!(c.tp, 2);
        assert_eq!(pairs, [(0, 1), (1, 0)]);
    }

    fn set(doc: &str, mentions: Vec<EntityMention>, relations: Vec<Relation>) -> AnnotationSet {
        AnnotationSet::new(doc, mentions, relations).unwrap()
    }

    fn rel(main: &str, modifier: &str, label: Mo) -> Relation {
        Relation { main: main.into(), modifier: modifier.into(), label }
    }

    #[test]
    fn relation_matching() {
        let gold = set(
            "d",
            vec![problem("T1", 0, 4), mention("T2", EntityKind::Modifier(Mo::Severity), 5, 11)],
            vec![rel("T1", "T2", Mo::Severity)],
        );
        assert_eq!(match_relations(&gold, &gold, MatchMode::Exact), MatchCounts { tp: 1, fp: 0, fn_: 0 });

        let relabeled = set(
            "d",
            vec![problem("T1", 0, 4), mention("T2", EntityKind::Modifier(Mo::Course), 5, 11)],
            vec![rel("T1", "T2", Mo::Course)],
        );
        assert_eq!(match_relations(&gold, &relabeled, MatchMode::Relaxed).tp, 0);

        let shifted = set(
            "d",
            vec![problem("T1", 0, 4), mention("T2", EntityKind::Modifier(Mo::Severity), 5, 13)],
            vec![rel("T1", "T2", Mo::Severity)],
        );
        assert_eq!(match_relations(&gold, &shifted, MatchMode::Exact).tp, 0);
        assert_eq!(match_relations(&gold, &shifted, MatchMode::Relaxed).tp, 1);
    }

    #[test]
    fn corpus_scores() {
        let gold = vec![
            set("a", vec![problem("T1", 0, 2), problem("T2", 3, 5), problem("T3", 6, 8)], vec![]),
            set("b", vec![problem("T1", 0, 2), problem("T2", 3, 5)], vec![]),
        ];
        let pred = vec![
            set("b", vec![problem("T1", 0, 2), problem("T2", 10, 12)], vec![]),
            set("a", vec![problem("T1", 0, 2), problem("T2", 3, 5)], vec![]),
        ];
        let r = score_corpus(&gold, &pred, Task::Ner, MatchMode::Exact).unwrap();
        assert_eq!(r.counts, MatchCounts { tp: 3, fp: 1, fn_: 2 });
        assert!((r.precision - 0.75).abs() < 1e-12);
        assert!((r.recall - 0.6).abs() < 1e-12);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);

        let same = score_corpus(&gold, &gold, Task::Ner, MatchMode::Exact).unwrap();
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));

        let empty = vec![set("a", vec![], vec![]), set("b", vec![], vec![])];
        let z = score_corpus(&gold, &empty, Task::Ner, MatchMode::Exact).unwrap();
        assert_eq!((z.precision, z.recall, z.f1), (0.0, 0.0, 0.0));

        assert!(matches!(
            score_corpus(&gold, &empty[..1], Task::Ner, MatchMode::Exact),
            Err(EvalError::DocIdMismatch { .. })
        ));
    }

    #[test]
    fn error_categories() {
        let gold = set("d", vec![problem("T1", 10, 20)], vec![]);
        assert_eq!(categorize_errors(&gold, &gold, Task::Ner), ErrorBreakdown::default());

        let short = set("d", vec![problem("T1", 10, 18)], vec![]);
        let b = categorize_errors(&gold, &short, Task::Ner);
        assert_eq!((b.boundary_errors, b.misses, b.spurious, b.type_errors), (1, 0, 0, 0));

        let retyped = set("d", vec![mention("T1", EntityKind::Main(M::Test), 10, 20)], vec![]);
        let t = categorize_errors(&gold, &retyped, Task::Ner);
        assert_eq!((t.type_errors, t.misses, t.spurious, t.boundary_errors), (1, 0, 0, 0));

        let disjoint = set("d", vec![problem("T1", 30, 40)], vec![]);
        let d = categorize_errors(&gold, &disjoint, Task::Ner);
        assert_eq!((d.misses, d.spurious), (1, 1));
    }

    #[test]
    fn stats() {
        let empty = corpus_stats(&[]);
        assert_eq!(empty.documents, 0);
        assert!(empty.rows.iter().all(|r| r.mentions == 0 && r.relations.iter().all(|(_, n)| *n == 0)));

        let s = set(
            "d",
            vec![problem("T1", 0, 2), problem("T2", 3, 5), mention("T3", EntityKind::Modifier(Mo::Negation), 6, 8)],
            vec![rel("T1", "T3", Mo::Negation)],
        );
        let t = corpus_stats(&[s]);
        assert_eq!(t.documents, 1);
        assert_eq!(t.mentions(M::Problem), 2);
        assert_eq!(t.relations(M::Problem, Mo::Negation), 1);
        assert_eq!(t.rows.iter().map(|r| r.main).collect::<Vec<_>>(), STATS_MAIN_ORDER);
    }

    #[test]
    fn exact_rank_sum_matches_enumeration() {
        // x = [3, 4], y = [1, 2]: U = 4 is the most extreme of C(4,2) = 6.
        let (u, p) = rank_sum_greater(&[3.0, 4.0], &[1.0, 2.0]);
        assert_eq!(u, 4.0);
        assert!((p - 1.0 / 6.0).abs() < 1e-12);
        // With ties: x = [1, 2], y = [2, 3]; midranks 1, 2.5, 2.5, 4.
        // Subset rank sums: {1,2.5}x2=3.5, {1,4}=5, {2.5,2.5}=5, {2.5,4}x2=6.5.
        let (_, p) = rank_sum_greater(&[1.0, 2.0], &[2.0, 3.0]);
        assert!((p - 1.0).abs() < 1e-12);
        let (_, p) = rank_sum_greater(&[2.0, 3.0], &[1.0, 2.0]);
        assert!((p - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn normal_approximation_is_close_to_exact() {
        let x: Vec<f64> = (0..29).map(|i| (i * 7 % 31) as f64 + 0.5).collect();
        let y: Vec<f64> = (0..29).map(|i| (i * 5 % 29) as f64).collect();
        let (_, exact) = rank_sum_greater(&x, &y);
        let mut x2 = x.clone();
        x2.push(100.0);
        let mut y2 = y.clone();
        y2.push(-100.0);
        let (_, approx) = rank_sum_greater(&x2, &y2);
        assert!((0.0..=1.0).contains(&exact) && (0.0..=1.0).contains(&approx));
        // Adding one extreme pair can only strengthen the evidence for x > y.
        assert!(approx <= exact + 0.05);
    }

    fn synthetic(n_docs: usize) -> (Vec<AnnotationSet>, Vec<AnnotationSet>) {
        let gold: Vec<AnnotationSet> = (0..n_docs)
            .map(|d| set(&format!("doc{d:03}"), (0..10).map(|i| problem(&format!("T{}", i + 1), i * 10, i * 10 + 5)).collect(), vec![]))
            .collect();
        let half: Vec<AnnotationSet> = gold
            .iter()
            .map(|g| set(&g.doc_id, g.mentions.iter().step_by(2).cloned().collect(), vec![]))
            .collect();
        (gold, half)
    }

    #[test]
    fn bootstrap_dominance_and_identity() {
        let (gold, half) = synthetic(20);
        let r = bootstrap_significance(&gold, &gold, &half, Task::Ner, MatchMode::Exact, 200, 7).unwrap();
        assert!(r.p_value < 0.05);
        assert!(r.ci95.0 > 0.0);

        let same = bootstrap_significance(&gold, &half, &half, Task::Ner, MatchMode::Exact, 200, 7).unwrap();
        assert!(same.p_value >= 0.4);
        assert_eq!(same.ci95, (0.0, 0.0));

        let again = bootstrap_significance(&gold, &gold, &half, Task::Ner, MatchMode::Exact, 200, 7).unwrap();
        assert_eq!(again, r);

        let mut shuffled_gold = gold.clone();
        shuffled_gold.reverse();
        let mut shuffled_half = half.clone();
        shuffled_half.rotate_left(3);
        let permuted = bootstrap_significance(&shuffled_gold, &shuffled_gold, &shuffled_half, Task::Ner, MatchMode::Exact, 200, 7).unwrap();
        assert_eq!(permuted, r);

        assert_eq!(
            bootstrap_significance(&gold[..1], &gold[..1], &half[..1], Task::Ner, MatchMode::Exact, 10, 1),
            Err(EvalError::InsufficientData(1))
        );
    }

    fn arb_items(max: usize) -> impl Strategy<Value = Vec<Item>> {
        prop::collection::vec((0usize..2, 0usize..30, 1usize..8), 0..=max).prop_map(|v| {
            v.into_iter()
                .map(|(k, s, l)| {
                    let kind = EntityKind::Main([M::Problem, M::Test][k]);
                    Item { key: kind.name().into(), parts: vec![(kind, s, s + l)] }
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn matching_equals_brute_force(gold in arb_items(10), pred in arb_items(10)) {
            for mode in MatchMode::ALL {
                let pairs = match_items(&gold, &pred, mode);
                prop_assert_eq!(pairs.len(), brute_force(&gold, &pred, mode));
                prop_assert_eq!(pairs.len(), match_items(&pred, &gold, mode).len());
            }
            let exact = match_items(&gold, &pred, MatchMode::Exact).len();
            let relaxed = match_items(&gold, &pred, MatchMode::Relaxed).len();
            prop_assert!(relaxed >= exact);
            prop_assert!(relaxed <= gold.len().min(pred.len()));
        }

        #[test]
        fn error_breakdown_partitions(gold in arb_items(8), pred in arb_items(8)) {
            let to_set = |items: &[Item]| {
                let mut s = AnnotationSet::empty("d");
                for (i, it) in items.iter().enumerate() {
                    let (k, a, b) = it.parts[0];
                    s.mentions.push(mention(&format!("T{}", i + 1), k, a, b));
                }
                s
            };
            let (g, p) = (to_set(&gold), to_set(&pred));
            let tp = match_items(&gold, &pred, MatchMode::Exact).len();
            let b = categorize_errors(&g, &p, Task::Ner);
            prop_assert_eq!(gold.len() - tp, b.misses + b.boundary_errors + b.type_errors);
            prop_assert_eq!(pred.len() - tp, b.spurious + b.boundary_errors + b.type_errors);
        }
    }
}
