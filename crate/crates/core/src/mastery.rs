//! Knowledge mastery of a model: per-fact success ratios over a grid of
//! prompt templates and samples, five-way bucketing, dataset splits and
//! template selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::JsonlError;

pub const BUCKETS: usize = 5;

#[derive(Error, Debug)]
pub enum MasteryError {
    #[error("missing trials: {}", fmt_missing(.0))]
    MissingTrials(Vec<MissingCells>),
    #[error("duplicate completion for item {item_id} template {template_id} sample {sample_id}")]
    DuplicateTrial {
        item_id: String,
        template_id: u32,
        sample_id: u32,
    },
    #[error("completion for item {item_id} has template {template_id} / sample {sample_id} outside the {n_map}x{n_sample} grid")]
    CellOutOfRange {
        item_id: String,
        template_id: u32,
        sample_id: u32,
        n_map: u32,
        n_sample: u32,
    },
    #[error("completion refers to unknown item {0}")]
    UnknownItem(String),
    #[error("item {0} appears twice")]
    DuplicateItem(String),
    #[error("item {0} has an empty object")]
    EmptyObject(String),
    #[error("mastery ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error("threshold {0} outside [0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("grid must be non-empty, got {0}x{1}")]
    EmptyGrid(u32, u32),
    #[error("no items for topic {0}")]
    EmptyTopic(String),
    #[error("no template pack for topic {0}")]
    UnknownTopic(String),
    #[error("template pack {topic}: {reason}")]
    BadPack { topic: String, reason: String },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

pub type Result<T> = std::result::Result<T, MasteryError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingCells {
    pub item_id: String,
    /// (template_id, sample_id)
    pub cells: Vec<(u32, u32)>,
}

fn fmt_missing(m: &[MissingCells]) -> String {
    const SHOW: usize = 8;
    let mut parts: Vec<String> = m
        .iter()
        .take(SHOW)
        .map(|c| {
            let cells: Vec<String> = c.cells.iter().take(SHOW).map(|(t, s)| format!("({t},{s})")).collect();
            let more = c.cells.len().saturating_sub(SHOW);
            let tail = if more > 0 { format!(" +{more} more") } else { String::new() };
            format!("{} [{}{}]", c.item_id, cells.join(" "), tail)
        })
        .collect();
    if m.len() > SHOW {
        parts.push(format!("and {} more items", m.len() - SHOW));
    }
    parts.join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    TestOod,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::TestOod => "test_ood",
        })
    }
}

/// A (subject, relation, object) fact as stored in an item file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub id: String,
    pub topic: String,
    pub subject: String,
    pub object: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub item_id: String,
    pub template_id: u32,
    pub sample_id: u32,
    pub completion: String,
}

/// Canonical object name to accepted surface forms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Synonyms(pub BTreeMap<String, Vec<String>>);

const BUILTIN_SYNONYMS: &str = include_str!("../data/synonyms.json");

impl Synonyms {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_SYNONYMS).expect("bundled synonym table parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// The object itself plus every listed alias.
    pub fn aliases_for(&self, object: &str) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.0.get(object).into_iter().flatten().cloned().collect();
        out.insert(object.to_string());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub n_map: u32,
    pub n_sample: u32,
}

impl Default for Grid {
    fn default() -> Self {
        Grid { n_map: 21, n_sample: 10 }
    }
}

impl Grid {
    pub fn trials(&self) -> u64 {
        self.n_map as u64 * self.n_sample as u64
    }

    fn check(&self) -> Result<()> {
        if self.n_map == 0 || self.n_sample == 0 {
            return Err(MasteryError::EmptyGrid(self.n_map, self.n_sample));
        }
        Ok(())
    }

    fn cell(&self, template_id: u32, sample_id: u32) -> usize {
        template_id as usize * self.n_sample as usize + sample_id as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub case_sensitive: bool,
}

pub fn normalize(s: &str, opts: MatchOptions) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if opts.case_sensitive {
        collapsed
    } else {
        collapsed.to_lowercase()
    }
}

/// True when some alias occurs in the completion after normalization.
pub fn match_answer<S: AsRef<str>>(completion: &str, aliases: impl IntoIterator<Item = S>) -> bool {
    match_answer_with(completion, aliases, MatchOptions::default())
}

pub fn match_answer_with<S: AsRef<str>>(
    completion: &str,
    aliases: impl IntoIterator<Item = S>,
    opts: MatchOptions,
) -> bool {
    let hay = normalize(completion, opts);
    aliases.into_iter().any(|a| {
        let needle = normalize(a.as_ref(), opts);
        !needle.is_empty() && hay.contains(&needle)
    })
}

/// Pre-normalized alias set for repeated matching.
struct Matcher {
    needles: Vec<String>,
    opts: MatchOptions,
}

impl Matcher {
    fn new(aliases: &BTreeSet<String>, opts: MatchOptions) -> Self {
        Matcher {
            needles: aliases.iter().map(|a| normalize(a, opts)).filter(|a| !a.is_empty()).collect(),
            opts,
        }
    }

    fn hit(&self, completion: &str) -> bool {
        let hay = normalize(completion, self.opts);
        self.needles.iter().any(|n| hay.contains(n.as_str()))
    }
}

/// Hit flags of one item laid out template-major; `None` marks a missing trial.
fn fill_grid<'r>(
    item_id: &str,
    records: impl IntoIterator<Item = &'r CompletionRecord>,
    grid: Grid,
    matcher: &Matcher,
) -> Result<Vec<Option<bool>>> {
    let mut cells = vec![None; grid.trials() as usize];
    for r in records {
        if r.template_id >= grid.n_map || r.sample_id >= grid.n_sample {
            return Err(MasteryError::CellOutOfRange {
                item_id: item_id.to_string(),
                template_id: r.template_id,
                sample_id: r.sample_id,
                n_map: grid.n_map,
                n_sample: grid.n_sample,
            });
        }
        let c = &mut cells[grid.cell(r.template_id, r.sample_id)];
        if c.is_some() {
            return Err(MasteryError::DuplicateTrial {
                item_id: item_id.to_string(),
                template_id: r.template_id,
                sample_id: r.sample_id,
            });
        }
        *c = Some(matcher.hit(&r.completion));
    }
    Ok(cells)
}

fn missing_cells(item_id: &str, cells: &[Option<bool>], grid: Grid) -> Option<MissingCells> {
    let missing: Vec<(u32, u32)> = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_none())
        .map(|(i, _)| ((i / grid.n_sample as usize) as u32, (i % grid.n_sample as usize) as u32))
        .collect();
    (!missing.is_empty()).then(|| MissingCells {
        item_id: item_id.to_string(),
        cells: missing,
    })
}

/// Hits over `n_map * n_sample` for one item's completions.
pub fn mastery_ratio<S: AsRef<str>>(
    records: &[CompletionRecord],
    aliases: impl IntoIterator<Item = S>,
    grid: Grid,
) -> Result<f64> {
    grid.check()?;
    let aliases: BTreeSet<String> = aliases.into_iter().map(|a| a.as_ref().to_string()).collect();
    let item_id = records.first().map_or("", |r| r.item_id.as_str());
    let cells = fill_grid(item_id, records, grid, &Matcher::new(&aliases, MatchOptions::default()))?;
    if let Some(m) = missing_cells(item_id, &cells, grid) {
        return Err(MasteryError::MissingTrials(vec![m]));
    }
    let hits = cells.iter().filter(|c| **c == Some(true)).count();
    Ok(hits as f64 / grid.trials() as f64)
}

/// 0 for a zero ratio, otherwise the quarter `((i-1)/4, i/4]` holding it.
pub fn assign_bucket(r: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&r) {
        return Err(MasteryError::RatioOutOfRange(r));
    }
    if r == 0.0 {
        return Ok(0);
    }
    Ok((1..=4u8).find(|&i| r <= i as f64 / 4.0).expect("r <= 1"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub hits: u64,
    pub n_trials: u64,
    pub r: f64,
    pub bucket: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasteryReport {
    pub grid: Grid,
    pub match_options: MatchOptions,
    pub per_item: BTreeMap<String, ItemScore>,
    pub bucket_counts: [u64; BUCKETS],
}

/// Item ids per split and bucket.
pub type SplitBuckets = BTreeMap<Split, [Vec<String>; BUCKETS]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub report: MasteryReport,
    pub splits: SplitBuckets,
}

impl Classification {
    pub fn bucket_of(&self, item_id: &str) -> Option<u8> {
        self.report.per_item.get(item_id).map(|s| s.bucket)
    }
}

fn index_items(items: &[KnowledgeItem]) -> Result<BTreeMap<&str, &KnowledgeItem>> {
    let mut by_id = BTreeMap::new();
    for it in items {
        if it.object.trim().is_empty() {
            return Err(MasteryError::EmptyObject(it.id.clone()));
        }
        if by_id.insert(it.id.as_str(), it).is_some() {
            return Err(MasteryError::DuplicateItem(it.id.clone()));
        }
    }
    Ok(by_id)
}

/// Full hit grids for `items`, failing on any incomplete grid.
fn score_grids(
    items: &[KnowledgeItem],
    log: &[CompletionRecord],
    synonyms: &Synonyms,
    grid: Grid,
    opts: MatchOptions,
) -> Result<BTreeMap<String, Vec<bool>>> {
    grid.check()?;
    let by_id = index_items(items)?;
    let mut per_item: BTreeMap<&str, Vec<&CompletionRecord>> = by_id.keys().map(|k| (*k, Vec::new())).collect();
    for r in log {
        match per_item.get_mut(r.item_id.as_str()) {
            Some(v) => v.push(r),
            None => return Err(MasteryError::UnknownItem(r.item_id.clone())),
        }
    }
    let filled: Vec<(&str, Vec<Option<bool>>)> = per_item
        .into_par_iter()
        .map(|(id, recs)| {
            let matcher = Matcher::new(&synonyms.aliases_for(&by_id[id].object), opts);
            fill_grid(id, recs, grid, &matcher).map(|c| (id, c))
        })
        .collect::<Result<_>>()?;
    let missing: Vec<MissingCells> = filled.iter().filter_map(|(id, c)| missing_cells(id, c, grid)).collect();
    if !missing.is_empty() {
        return Err(MasteryError::MissingTrials(missing));
    }
    Ok(filled
        .into_iter()
        .map(|(id, c)| (id.to_string(), c.into_iter().map(|x| x == Some(true)).collect()))
        .collect())
}

/// Score, bucket and split every item.
pub fn split_dataset(
    items: &[KnowledgeItem],
    log: &[CompletionRecord],
    synonyms: &Synonyms,
    grid: Grid,
    opts: MatchOptions,
) -> Result<Classification> {
    let grids = score_grids(items, log, synonyms, grid, opts)?;
    let mut per_item = BTreeMap::new();
    let mut bucket_counts = [0u64; BUCKETS];
    for (id, cells) in grids {
        let hits = cells.iter().filter(|h| **h).count() as u64;
        let r = hits as f64 / grid.trials() as f64;
        let bucket = assign_bucket(r)?;
        bucket_counts[bucket as usize] += 1;
        per_item.insert(
            id,
            ItemScore {
                hits,
                n_trials: grid.trials(),
                r,
                bucket,
            },
        );
    }
    let mut splits: SplitBuckets = BTreeMap::new();
    let mut sorted: Vec<&KnowledgeItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for it in sorted {
        let b = per_item[&it.id].bucket as usize;
        splits.entry(it.split).or_default()[b].push(it.id.clone());
    }
    Ok(Classification {
        report: MasteryReport {
            grid,
            match_options: opts,
            per_item,
            bucket_counts,
        },
        splits,
    })
}

/// Template with the highest success rate over all of the topic's items
/// and samples; the lowest id wins ties.
pub fn best_template(
    log: &[CompletionRecord],
    topic: &str,
    items: &[KnowledgeItem],
    synonyms: &Synonyms,
    grid: Grid,
    opts: MatchOptions,
) -> Result<u32> {
    let topic_items: Vec<KnowledgeItem> = items.iter().filter(|i| i.topic == topic).cloned().collect();
    if topic_items.is_empty() {
        return Err(MasteryError::EmptyTopic(topic.to_string()));
    }
    let ids: BTreeSet<&str> = topic_items.iter().map(|i| i.id.as_str()).collect();
    let topic_log: Vec<CompletionRecord> = log.iter().filter(|r| ids.contains(r.item_id.as_str())).cloned().collect();
    let grids = score_grids(&topic_items, &topic_log, synonyms, grid, opts)?;
    let mut per_template = vec![0u64; grid.n_map as usize];
    for cells in grids.values() {
        for (i, h) in cells.iter().enumerate() {
            if *h {
                per_template[i / grid.n_sample as usize] += 1;
            }
        }
    }
    // every template has the same number of trials, so counts order like rates
    let mut best = 0;
    for (t, &n) in per_template.iter().enumerate() {
        if n > per_template[best] {
            best = t;
        }
    }
    Ok(best as u32)
}

/// Items whose ratio strictly exceeds `threshold`.
pub fn filter_high_success(report: &MasteryReport, threshold: f64) -> Result<BTreeSet<String>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MasteryError::ThresholdOutOfRange(threshold));
    }
    Ok(report
        .per_item
        .iter()
        .filter(|(_, s)| s.r > threshold)
        .map(|(id, _)| id.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatePack {
    pub topic: String,
    pub question_template: String,
    pub mappings: Vec<String>,
}

macro_rules! packs {
    ($($t:literal),* $(,)?) => {
        &[$(($t, include_str!(concat!("../data/templates/", $t, ".json")))),*]
    };
}

const BUILTIN_PACKS: &[(&str, &str)] = packs!(
    "P17", "P19", "P20", "P36", "P69", "P131", "P159", "P276", "P495", "P740", "P112", "P127", "P170",
    "P175", "P176", "P26", "P40", "P413", "P50", "P136", "P106", "P264", "P407", "P800",
);

impl TemplatePack {
    pub fn builtin_topics() -> impl Iterator<Item = &'static str> {
        BUILTIN_PACKS.iter().map(|(t, _)| *t)
    }

    pub fn builtin(topic: &str) -> Result<Self> {
        let (_, text) = BUILTIN_PACKS
            .iter()
            .find(|(t, _)| *t == topic)
            .ok_or_else(|| MasteryError::UnknownTopic(topic.to_string()))?;
        let pack: TemplatePack = serde_json::from_str(text)?;
        pack.validate()?;
        Ok(pack)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let pack: TemplatePack = serde_json::from_slice(&std::fs::read(path)?)?;
        pack.validate()?;
        Ok(pack)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(MasteryError::BadPack {
                topic: self.topic.clone(),
                reason,
            })
        };
        if self.mappings.is_empty() {
            return bad("no mappings".into());
        }
        if let Some(i) = self.mappings.iter().position(|m| !m.contains("{subject}")) {
            return bad(format!("mapping {i} lacks {{subject}}"));
        }
        Ok(())
    }

    pub fn render(&self, template_id: u32, subject: &str) -> Option<String> {
        self.mappings.get(template_id as usize).map(|m| m.replace("{subject}", subject))
    }

    pub fn question(&self, subject: &str) -> String {
        self.question_template.replace("{subject}", subject)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn item(id: &str, topic: &str, object: &str, split: Split) -> KnowledgeItem {
        KnowledgeItem {
            id: id.into(),
            topic: topic.into(),
            subject: format!("subject {id}"),
            object: object.into(),
            split,
        }
    }

    /// Grid log where `hit(template, sample)` decides whether the object is named.
    fn log_for(it: &KnowledgeItem, grid: Grid, mut hit: impl FnMut(u32, u32) -> bool) -> Vec<CompletionRecord> {
        let mut out = Vec::new();
        for t in 0..grid.n_map {
            for s in 0..grid.n_sample {
                out.push(CompletionRecord {
                    item_id: it.id.clone(),
                    template_id: t,
                    sample_id: s,
                    completion: if hit(t, s) {
                        format!("it is {}.", it.object)
                    } else {
                        "no idea".into()
                    },
                });
            }
        }
        out
    }

    #[test]
    fn matching_examples() {
        let usa = ["USA", "United States", "United States of America"];
        assert!(match_answer("…is located in the United States of America.", usa));
        assert!(!match_answer("", usa));
        assert!(match_answer("he moved to new york city in 1990", ["New York", "New York City"]));
        assert!(match_answer("the   UNITED\n states", usa));
        assert!(!match_answer_with("the united states", usa, MatchOptions { case_sensitive: true }));
        assert!(match_answer("born in St. Petersburg", ["St. Petersburg"]));
        assert!(!match_answer("born in St Petersburg", ["St. Petersburg"]));
        assert!(!match_answer("anything", [""]));
    }

    #[test]
    fn bucket_table() {
        let table = [
            (0.0, 0),
            (1.0 / 210.0, 1),
            (0.25, 1),
            (0.2500001, 2),
            (0.25 + 1e-9, 2),
            (0.5, 2),
            (0.75, 3),
            (1.0, 4),
        ];
        for (r, b) in table {
            assert_eq!(assign_bucket(r).unwrap(), b, "{r}");
        }
        assert!(assign_bucket(-0.1).is_err());
        assert!(assign_bucket(1.01).is_err());
        assert!(assign_bucket(f64::NAN).is_err());
    }

    #[test]
    fn ratio_examples_and_missing_cells() {
        let grid = Grid::default();
        let it = item("a", "P17", "France", Split::Train);
        let log = log_for(&it, grid, |t, s| (t * 10 + s) % 2 == 0);
        assert_eq!(mastery_ratio(&log, ["France"], grid).unwrap(), 0.5);
        let none = log_for(&it, grid, |_, _| false);
        assert_eq!(mastery_ratio(&none, ["France"], grid).unwrap(), 0.0);
        let mut gappy = log.clone();
        gappy.retain(|r| !(r.template_id == 4 && r.sample_id == 7));
        match mastery_ratio(&gappy, ["France"], grid) {
            Err(MasteryError::MissingTrials(m)) => assert_eq!(m[0].cells, vec![(4, 7)]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn log_errors() {
        let grid = Grid { n_map: 3, n_sample: 2 };
        let it = item("a", "P17", "France", Split::Train);
        let mut log = log_for(&it, grid, |_, _| true);
        let syn = Synonyms::default();
        let mut dup = log.clone();
        dup.push(log[0].clone());
        assert!(matches!(
            split_dataset(&[it.clone()], &dup, &syn, grid, Default::default()),
            Err(MasteryError::DuplicateTrial { .. })
        ));
        log[0].template_id = 3;
        assert!(matches!(
            split_dataset(&[it.clone()], &log, &syn, grid, Default::default()),
            Err(MasteryError::CellOutOfRange { .. })
        ));
        log[0].template_id = 0;
        log[0].item_id = "ghost".into();
        assert!(matches!(
            split_dataset(&[it.clone()], &log, &syn, grid, Default::default()),
            Err(MasteryError::UnknownItem(_))
        ));
        assert!(matches!(
            split_dataset(&[it.clone(), it], &[], &syn, grid, Default::default()),
            Err(MasteryError::DuplicateItem(_))
        ));
    }

    #[test]
    fn planted_split() {
        let grid = Grid { n_map: 4, n_sample: 2 };
        // hits per item out of 8 -> expected bucket
        let plan = [(0, 0), (1, 1), (2, 1), (3, 2), (4, 2), (5, 3), (6, 3), (7, 4), (8, 4), (0, 0)];
        let splits = [Split::Train, Split::Test, Split::TestOod];
        let items: Vec<KnowledgeItem> = plan
            .iter()
            .enumerate()
            .map(|(i, _)| item(&format!("i{i:02}"), "P17", "Paris", splits[i % 3]))
            .collect();
        let mut log = Vec::new();
        for (it, (hits, _)) in items.iter().zip(plan) {
            log.extend(log_for(it, grid, |t, s| ((t * 2 + s) as usize) < hits));
        }
        let c = split_dataset(&items, &log, &Synonyms::default(), grid, Default::default()).unwrap();
        assert_eq!(c.report.bucket_counts, [2, 2, 2, 2, 2]);
        for (it, (hits, b)) in items.iter().zip(plan) {
            let s = &c.report.per_item[&it.id];
            assert_eq!((s.hits, s.bucket), (hits as u64, b));
        }
        let listed: usize = c.splits.values().flat_map(|b| b.iter()).map(|v| v.len()).sum();
        assert_eq!(listed, items.len());
        assert_eq!(c.splits[&Split::Train][0], vec!["i00".to_string(), "i09".to_string()]);
        assert_eq!(c.bucket_of("i07"), Some(4));

        // missing trials name the item
        log.retain(|r| !(r.item_id == "i03" && r.template_id == 1));
        match split_dataset(&items, &log, &Synonyms::default(), grid, Default::default()) {
            Err(MasteryError::MissingTrials(m)) => {
                assert_eq!(m.len(), 1);
                assert_eq!(m[0].item_id, "i03");
                assert_eq!(m[0].cells, vec![(1, 0), (1, 1)]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synonyms_expand_matching() {
        let syn = Synonyms::builtin();
        assert_eq!(syn.0.len(), 29);
        let grid = Grid { n_map: 1, n_sample: 1 };
        let it = item("a", "P17", "United States of America", Split::Test);
        let log = vec![CompletionRecord {
            item_id: "a".into(),
            template_id: 0,
            sample_id: 0,
            completion: "It is in the USA".into(),
        }];
        let c = split_dataset(&[it.clone()], &log, &syn, grid, Default::default()).unwrap();
        assert_eq!(c.report.per_item["a"].bucket, 4);
        let c = split_dataset(&[it], &log, &Synonyms::default(), grid, Default::default()).unwrap();
        assert_eq!(c.report.per_item["a"].bucket, 0);
    }

    #[test]
    fn best_template_rules() {
        let grid = Grid { n_map: 5, n_sample: 3 };
        let items: Vec<KnowledgeItem> = (0..4).map(|i| item(&format!("x{i}"), "P19", "Rome", Split::Train)).collect();
        let log: Vec<_> = items.iter().flat_map(|it| log_for(it, grid, |t, _| t == 3)).collect();
        let syn = Synonyms::default();
        assert_eq!(best_template(&log, "P19", &items, &syn, grid, Default::default()).unwrap(), 3);
        let flat: Vec<_> = items.iter().flat_map(|it| log_for(it, grid, |_, s| s == 0)).collect();
        assert_eq!(best_template(&flat, "P19", &items, &syn, grid, Default::default()).unwrap(), 0);
        assert!(matches!(
            best_template(&log, "P20", &items, &syn, grid, Default::default()),
            Err(MasteryError::EmptyTopic(_))
        ));
    }

    #[test]
    fn best_template_matches_recount() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let grid = Grid { n_map: 6, n_sample: 4 };
        let items: Vec<KnowledgeItem> = (0..7).map(|i| item(&format!("y{i}"), "P36", "Oslo", Split::Test)).collect();
        for _ in 0..50 {
            let log: Vec<_> = items.iter().flat_map(|it| log_for(it, grid, |_, _| rng.gen_bool(0.4))).collect();
            let mut counts = vec![0; 6];
            for r in &log {
                if r.completion.contains("Oslo") {
                    counts[r.template_id as usize] += 1;
                }
            }
            let max = *counts.iter().max().unwrap();
            let want = counts.iter().position(|&c| c == max).unwrap() as u32;
            assert_eq!(best_template(&log, "P36", &items, &Synonyms::default(), grid, Default::default()).unwrap(), want);
        }
    }

    #[test]
    fn high_success_filter() {
        let mk = |r: f64| ItemScore { hits: 0, n_trials: 1, r, bucket: assign_bucket(r).unwrap() };
        let report = MasteryReport {
            grid: Grid::default(),
            match_options: Default::default(),
            per_item: [("a", 0.76), ("b", 0.75), ("c", 0.0), ("d", 0.1)]
                .into_iter()
                .map(|(k, r)| (k.to_string(), mk(r)))
                .collect(),
            bucket_counts: [1, 1, 0, 1, 1],
        };
        let hi = filter_high_success(&report, 0.75).unwrap();
        assert_eq!(hi.into_iter().collect::<Vec<_>>(), vec!["a"]);
        assert_eq!(filter_high_success(&report, 0.0).unwrap().len(), 3);
        assert!(filter_high_success(&report, 1.5).is_err());
    }

    #[test]
    fn builtin_packs_load() {
        assert_eq!(TemplatePack::builtin_topics().count(), 24);
        for t in TemplatePack::builtin_topics() {
            let p = TemplatePack::builtin(t).unwrap();
            assert_eq!(p.topic, t);
            assert_eq!(p.mappings.len(), 21, "{t}");
        }
        let p = TemplatePack::builtin("P17").unwrap();
        assert_eq!(p.render(0, "Eiffel Tower").unwrap(), "Eiffel Tower is located in");
        assert!(p.render(21, "x").is_none());
        assert!(TemplatePack::builtin("P1").is_err());
    }

    #[test]
    fn report_serialization_is_deterministic() {
        let grid = Grid { n_map: 2, n_sample: 2 };
        let items: Vec<KnowledgeItem> = (0..5).map(|i| item(&format!("z{i}"), "P17", "Lima", Split::Test)).collect();
        let mut log: Vec<_> = items.iter().flat_map(|it| log_for(it, grid, |t, s| t + s > 0)).collect();
        let a = split_dataset(&items, &log, &Synonyms::default(), grid, Default::default()).unwrap();
        log.reverse();
        let b = split_dataset(&items, &log, &Synonyms::default(), grid, Default::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    proptest! {
        #[test]
        fn buckets_partition(r in 0.0f64..=1.0) {
            let b = assign_bucket(r).unwrap();
            let inside = |i: u8| if i == 0 { r == 0.0 } else { r > (i - 1) as f64 / 4.0 && r <= i as f64 / 4.0 };
            prop_assert_eq!((0..5u8).filter(|&i| inside(i)).collect::<Vec<_>>(), vec![b]);
        }

        #[test]
        fn alias_monotone(completion in "[a-z ]{0,30}", a in "[a-z]{1,4}", b in "[a-z]{1,4}") {
            if match_answer(&completion, [&a]) {
                prop_assert!(match_answer(&completion, [&a, &b]));
            }
        }
    }
}
