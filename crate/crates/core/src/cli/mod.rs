//! Command-line front end. Machine-readable results go to stdout or
//! `--out`; progress and diagnostics go to stderr.

mod config;
mod synth;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use thiserror::Error;

use crate::delta_rank::{
    attribute, build_delta_index, concentration, select_threshold, BinConfig, PairView, RankError,
    ScanOptions, DEFAULT_CHUNK_ELEMS, DEFAULT_COLLECT_BUDGET,
};
use crate::evaluator::{self, AccuracyReport, EvalError, PredictionRecord, Variance};
use crate::jsonl::{self, JsonlError};
use crate::logit_kl::{self, KlError, LogitsPairRecord};
use crate::mastery::{
    self, filter_high_success, Classification, CompletionRecord, Grid, KnowledgeItem, MasteryError,
    MatchOptions, Synonyms, TemplatePack,
};
use crate::names::{parse_layer_ranges, Exclusions, NameRules, PatternError, DEFAULT_LAYER_PATTERN};
use crate::restorer::{self, RestoreError};
use crate::tensor_store::{validate_pair, Checkpoint, PairReport, StoreError};

pub const DEFAULT_FRACTIONS: [f64; 7] = [0.01, 0.03, 0.05, 0.10, 0.20, 0.40, 0.60];

#[derive(Parser, Debug)]
#[command(name = "ftscope", version, about = "Fine-tuning checkpoint analysis", arg_required_else_help = true)]
pub struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the report here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// TOML file with flag defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check that two checkpoints have identical tensor names, shapes and dtypes
    ValidatePair(PairPaths),
    /// Build the relative-change index of a checkpoint pair
    DiffRank(RankArgs),
    /// Share of total relative change carried by the most-changed parameters
    Concentration {
        #[command(flatten)]
        rank: RankArgs,
        #[arg(long, value_delimiter = ',', value_parser = unit_interval)]
        fractions: Vec<f64>,
    },
    /// Where the top-rho most-changed parameters live, by layer and module
    Attribute {
        #[command(flatten)]
        rank: RankArgs,
        #[arg(long, value_parser = unit_interval)]
        rho: f64,
        #[command(flatten)]
        rules: RuleArgs,
    },
    /// Write a checkpoint with selected parameters reverted to pre-trained values
    Restore {
        #[command(flatten)]
        rank: RankArgs,
        #[arg(long, value_parser = unit_interval, required_unless_present = "layers", conflicts_with = "layers")]
        rho: Option<f64>,
        /// Layer list such as 0-3,28-31
        #[arg(long)]
        layers: Option<String>,
        /// Path of the restored checkpoint
        #[arg(long)]
        checkpoint_out: PathBuf,
        #[command(flatten)]
        rules: RuleArgs,
    },
    /// KL divergence of first-token distributions from logits-pair records
    Kl {
        #[arg(long, value_parser = existing)]
        records: PathBuf,
    },
    /// Mastery ratios, buckets and splits from a completion log
    Classify(ClassifyArgs),
    /// Template with the highest success rate for one topic
    BestTemplate {
        #[command(flatten)]
        data: MasteryInputs,
        #[arg(long)]
        topic: String,
        /// Template pack JSON (default: bundled pack for the topic)
        #[arg(long, value_parser = existing)]
        pack: Option<PathBuf>,
    },
    /// Per-bucket accuracy of predictions
    Evaluate(EvaluateArgs),
    /// Mean and variance over runs of an evaluate report
    Summarize(SummarizeArgs),
    /// classify, evaluate and summarize through files in a work directory
    Pipeline {
        #[command(flatten)]
        classify: ClassifyArgs,
        #[arg(long, value_parser = existing)]
        predictions: PathBuf,
        #[arg(long)]
        sample_variance: bool,
        #[arg(long)]
        work_dir: PathBuf,
    },
    #[command(hide = true)]
    SynthPair {
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        ft: PathBuf,
        #[arg(long)]
        params: u64,
        #[arg(long, default_value_t = 64)]
        tensors: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

const SUBCOMMANDS: [&str; 12] = [
    "validate-pair",
    "diff-rank",
    "concentration",
    "attribute",
    "restore",
    "kl",
    "classify",
    "best-template",
    "evaluate",
    "summarize",
    "pipeline",
    "synth-pair",
];

#[derive(Args, Debug)]
struct PairPaths {
    #[arg(long, value_parser = existing)]
    pre: PathBuf,
    #[arg(long, value_parser = existing)]
    ft: PathBuf,
}

#[derive(Args, Debug)]
struct RankArgs {
    #[command(flatten)]
    paths: PairPaths,
    /// Regex of tensor names to leave out (repeatable)
    #[arg(long)]
    exclude: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_CHUNK_ELEMS, value_parser = clap::value_parser!(usize))]
    chunk_elems: usize,
    #[arg(long, default_value_t = BinConfig::default().bins)]
    bins: u32,
    #[arg(long, default_value_t = DEFAULT_COLLECT_BUDGET)]
    collect_budget: usize,
}

#[derive(Args, Debug)]
struct RuleArgs {
    /// Regex whose first capture group is the layer index
    #[arg(long, default_value = DEFAULT_LAYER_PATTERN)]
    layer_pattern: String,
    /// LABEL=REGEX module rule (repeatable; replaces the defaults)
    #[arg(long)]
    module_rule: Vec<String>,
}

#[derive(Args, Debug)]
struct MasteryInputs {
    #[arg(long, value_parser = existing)]
    items: PathBuf,
    #[arg(long, value_parser = existing)]
    completions: PathBuf,
    /// Synonym table JSON (default: bundled table)
    #[arg(long, value_parser = existing)]
    synonyms: Option<PathBuf>,
    #[arg(long, default_value_t = Grid::default().n_map)]
    n_map: u32,
    #[arg(long, default_value_t = Grid::default().n_sample)]
    n_sample: u32,
    #[arg(long)]
    case_sensitive: bool,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    data: MasteryInputs,
    /// Also list items whose ratio exceeds this value
    #[arg(long, value_parser = unit_interval)]
    high_success: Option<f64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, value_parser = existing)]
    items: PathBuf,
    /// Output of `classify`
    #[arg(long, value_parser = existing)]
    classification: PathBuf,
    #[arg(long, value_parser = existing)]
    predictions: PathBuf,
    #[arg(long, value_parser = existing)]
    synonyms: Option<PathBuf>,
    /// Score only this run (default: every run in the file)
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    case_sensitive: bool,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    /// Output of `evaluate`
    #[arg(long, value_parser = existing)]
    reports: PathBuf,
    #[arg(long)]
    sample_variance: bool,
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is out of range [0, 1]"))
    }
}

fn existing(s: &str) -> std::result::Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.exists() {
        Ok(p)
    } else {
        Err(format!("no such file: {s}"))
    }
}

#[derive(Error, Debug)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("tensor_store: {0}")]
    Store(#[from] StoreError),
    #[error("tensor_store: checkpoint pair is misaligned ({} mismatches)", .0.mismatches.len())]
    Misaligned(PairReport),
    #[error("delta_rank: {0}")]
    Rank(RankError),
    #[error("restorer: {0}")]
    Restore(RestoreError),
    #[error("logit_kl: {0}")]
    Kl(#[from] KlError),
    #[error("mastery: {0}")]
    Mastery(#[from] MasteryError),
    #[error("evaluator: {0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Jsonl(#[from] JsonlError),
    #[error("{0}")]
    Pattern(#[from] PatternError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl From<RankError> for CliError {
    fn from(e: RankError) -> Self {
        match e {
            RankError::Misaligned(r) => CliError::Misaligned(r),
            e => CliError::Rank(e),
        }
    }
}

impl From<RestoreError> for CliError {
    fn from(e: RestoreError) -> Self {
        match e {
            RestoreError::Misaligned(r) | RestoreError::Rank(RankError::Misaligned(r)) => CliError::Misaligned(r),
            e => CliError::Restore(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Emitter {
    out: Option<PathBuf>,
    format: Format,
}

impl Emitter {
    fn write(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => fs::write(p, text)?,
            None => {
                use std::io::Write;
                let mut so = std::io::stdout().lock();
                so.write_all(text.as_bytes())?;
                so.flush()?;
            }
        }
        Ok(())
    }

    /// JSON always; CSV through `csv` when the report has a tabular form.
    fn emit<T: Serialize>(&self, value: &T, csv: Option<&dyn Fn() -> String>) -> Result<()> {
        match (self.format, csv) {
            (Format::Json, _) => self.write(&to_json(value)?),
            (Format::Csv, Some(f)) => self.write(&f()),
            (Format::Csv, None) => Err(CliError::Usage("this report has no CSV form".into())),
        }
    }
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn csv_rows(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).unwrap();
    for r in rows {
        w.write_record(r).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

fn open_pair(p: &PairPaths) -> Result<(Checkpoint, Checkpoint)> {
    Ok((Checkpoint::open(&p.pre)?, Checkpoint::open(&p.ft)?))
}

fn view<'a>(pre: &'a Checkpoint, ft: &'a Checkpoint, a: &RankArgs) -> Result<PairView<'a>> {
    if a.chunk_elems == 0 {
        return Err(CliError::Usage("--chunk-elems must be positive".into()));
    }
    let options = ScanOptions {
        chunk_elems: a.chunk_elems,
        bins: BinConfig {
            bins: a.bins,
            ..BinConfig::default()
        },
        collect_budget: a.collect_budget.max(1),
    };
    Ok(PairView::new(pre, ft, Exclusions::new(&a.exclude)?, options)?)
}

fn name_rules(r: &RuleArgs) -> Result<NameRules> {
    if r.module_rule.is_empty() {
        return Ok(NameRules::new(
            &r.layer_pattern,
            crate::names::DEFAULT_MODULE_RULES
                .iter()
                .map(|(l, p)| (l.to_string(), p.to_string())),
        )?);
    }
    let rules = r
        .module_rule
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(l, p)| (l.to_string(), p.to_string()))
                .ok_or_else(|| CliError::Usage(format!("--module-rule {s:?} is not LABEL=REGEX")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NameRules::new(&r.layer_pattern, rules)?)
}

fn load_synonyms(p: &Option<PathBuf>) -> Result<Synonyms> {
    Ok(match p {
        Some(p) => Synonyms::load(p)?,
        None => Synonyms::builtin(),
    })
}

fn grid_of(d: &MasteryInputs) -> Grid {
    Grid {
        n_map: d.n_map,
        n_sample: d.n_sample,
    }
}

#[derive(Serialize)]
struct ClassifyOutput<'a> {
    #[serde(flatten)]
    classification: &'a Classification,
    #[serde(skip_serializing_if = "Option::is_none")]
    high_success: Option<HighSuccess>,
}

#[derive(Serialize)]
struct HighSuccess {
    threshold: f64,
    items: Vec<String>,
}

fn classify(a: &ClassifyArgs) -> Result<(Classification, Option<HighSuccess>)> {
    let items: Vec<KnowledgeItem> = jsonl::read_all(&a.data.items)?;
    let log: Vec<CompletionRecord> = jsonl::read_all(&a.data.completions)?;
    let syn = load_synonyms(&a.data.synonyms)?;
    let opts = MatchOptions {
        case_sensitive: a.data.case_sensitive,
    };
    info!("classifying {} items from {} completions", items.len(), log.len());
    let c = mastery::split_dataset(&items, &log, &syn, grid_of(&a.data), opts)?;
    let hs = match a.high_success {
        Some(t) => Some(HighSuccess {
            threshold: t,
            items: filter_high_success(&c.report, t)?.into_iter().collect(),
        }),
        None => None,
    };
    Ok((c, hs))
}

fn classify_csv(c: &Classification) -> String {
    csv_rows(
        &["item_id", "hits", "n_trials", "r", "bucket"],
        c.report.per_item.iter().map(|(id, s)| {
            vec![id.clone(), s.hits.to_string(), s.n_trials.to_string(), s.r.to_string(), s.bucket.to_string()]
        }),
    )
}

fn evaluate(a: &EvaluateArgs) -> Result<Vec<AccuracyReport>> {
    let items: Vec<KnowledgeItem> = jsonl::read_all(&a.items)?;
    let c: Classification = serde_json::from_slice(&fs::read(&a.classification)?)?;
    let preds: Vec<PredictionRecord> = jsonl::read_all(&a.predictions)?;
    let syn = load_synonyms(&a.synonyms)?;
    let buckets = c.report.per_item.iter().map(|(k, v)| (k.clone(), v.bucket)).collect();
    let runs = match &a.run_id {
        Some(r) => vec![r.clone()],
        None => evaluator::run_ids(&preds),
    };
    if runs.is_empty() {
        return Err(EvalError::NoPredictions("*".into()).into());
    }
    let opts = MatchOptions {
        case_sensitive: a.case_sensitive,
    };
    runs.iter()
        .map(|r| Ok(evaluator::score_run(&preds, &items, &buckets, &syn, r, opts)?))
        .collect()
}

fn summarize(reports: &Path, sample: bool) -> Result<evaluator::RunSummary> {
    let reports: Vec<AccuracyReport> = serde_json::from_slice(&fs::read(reports)?)?;
    let kind = if sample { Variance::Sample } else { Variance::Population };
    Ok(evaluator::summarize_runs(&reports, kind)?)
}

fn run(cli: Cli) -> Result<()> {
    let em = Emitter {
        out: cli.out.clone(),
        format: cli.format,
    };
    let result = run_command(cli.command, &em);
    if let Err(CliError::Misaligned(report)) = &result {
        // the mismatch list is the useful part of this failure
        em.emit(report, Some(&|| mismatch_csv(report)))?;
    }
    result
}

fn mismatch_csv(report: &PairReport) -> String {
    csv_rows(
        &["name", "reason"],
        report.mismatches.iter().map(|m| {
            let reason = serde_json::to_value(&m.reason).ok();
            vec![m.name.clone(), reason.as_ref().and_then(|v| v.as_str()).unwrap_or("").to_string()]
        }),
    )
}

fn run_command(command: Command, em: &Emitter) -> Result<()> {
    match command {
        Command::ValidatePair(p) => {
            let (pre, ft) = open_pair(&p)?;
            let report = validate_pair(&pre, &ft);
            if !report.aligned {
                return Err(CliError::Misaligned(report));
            }
            em.emit(&report, Some(&|| mismatch_csv(&report)))?;
        }
        Command::DiffRank(a) => {
            let (pre, ft) = open_pair(&a.paths)?;
            let v = view(&pre, &ft, &a)?;
            info!("indexing {} parameters in {} tensors", v.total_count(), v.tensors().len());
            let idx = build_delta_index(&v)?;
            em.emit(
                &idx,
                Some(&|| {
                    csv_rows(
                        &["tensor", "count", "sum_r", "zero_count", "inf_count", "max_finite_r"],
                        idx.per_tensor.iter().map(|(n, t)| {
                            vec![
                                n.clone(),
                                t.count.to_string(),
                                t.sum_r.to_string(),
                                t.zero_count.to_string(),
                                t.inf_count.to_string(),
                                t.max_finite_r.map_or(String::new(), |x| x.to_string()),
                            ]
                        }),
                    )
                }),
            )?;
        }
        Command::Concentration { rank, fractions } => {
            let fractions = if fractions.is_empty() { DEFAULT_FRACTIONS.to_vec() } else { fractions };
            let (pre, ft) = open_pair(&rank.paths)?;
            let v = view(&pre, &ft, &rank)?;
            let idx = build_delta_index(&v)?;
            let table = concentration(&idx, &v, &fractions)?;
            em.emit(
                &table,
                Some(&|| {
                    csv_rows(
                        &["fraction_of_params", "params", "fraction_of_total_update"],
                        table.rows.iter().map(|r| {
                            vec![r.fraction_of_params.to_string(), r.params.to_string(), r.fraction_of_total_update.to_string()]
                        }),
                    )
                }),
            )?;
        }
        Command::Attribute { rank, rho, rules } => {
            let rules = name_rules(&rules)?;
            let (pre, ft) = open_pair(&rank.paths)?;
            let v = view(&pre, &ft, &rank)?;
            let idx = build_delta_index(&v)?;
            let sel = select_threshold(&idx, &v, rho)?;
            let rep = attribute(&idx, &sel, &v, &rules)?;
            em.emit(
                &rep,
                Some(&|| {
                    let layers = rep.by_layer.iter().map(|(l, p)| vec!["layer".into(), l.to_string(), p.to_string()]);
                    let modules = rep.by_module.iter().map(|(m, p)| vec!["module".into(), m.clone(), p.to_string()]);
                    let rest = [
                        vec!["layer".into(), "unmatched".into(), rep.unmatched_layer_pct.to_string()],
                        vec!["module".into(), "unmatched".into(), rep.unmatched_module_pct.to_string()],
                    ];
                    csv_rows(&["kind", "key", "pct"], layers.chain(modules).chain(rest))
                }),
            )?;
        }
        Command::Restore {
            rank,
            rho,
            layers,
            checkpoint_out,
            rules,
        } => {
            let (pre, ft) = open_pair(&rank.paths)?;
            let summary = match (rho, layers) {
                (Some(rho), _) => {
                    let v = view(&pre, &ft, &rank)?;
                    info!("indexing {} parameters", v.total_count());
                    let idx = build_delta_index(&v)?;
                    let sel = select_threshold(&idx, &v, rho)?;
                    info!("restoring {} parameters", sel.selected_count);
                    restorer::restore_topk(&v, &sel, &checkpoint_out)?
                }
                (None, Some(spec)) => {
                    let layers = parse_layer_ranges(&spec).map_err(CliError::Usage)?;
                    restorer::restore_layers(&pre, &ft, &layers, &name_rules(&rules)?, &checkpoint_out)?
                }
                (None, None) => unreachable!("clap requires --rho or --layers"),
            };
            em.emit(&summary, None)?;
        }
        Command::Kl { records } => {
            let rep = logit_kl::aggregate_kl(jsonl::JsonlReader::<LogitsPairRecord>::open(&records)?)?;
            em.emit(&rep, Some(&|| rep.to_csv()))?;
        }
        Command::Classify(a) => {
            let (c, hs) = classify(&a)?;
            em.emit(
                &ClassifyOutput {
                    classification: &c,
                    high_success: hs,
                },
                Some(&|| classify_csv(&c)),
            )?;
        }
        Command::BestTemplate { data, topic, pack } => {
            let items: Vec<KnowledgeItem> = jsonl::read_all(&data.items)?;
            let log: Vec<CompletionRecord> = jsonl::read_all(&data.completions)?;
            let syn = load_synonyms(&data.synonyms)?;
            let opts = MatchOptions {
                case_sensitive: data.case_sensitive,
            };
            let t = mastery::best_template(&log, &topic, &items, &syn, grid_of(&data), opts)?;
            let pack = match pack {
                Some(p) => Some(TemplatePack::load(p)?),
                None => TemplatePack::builtin(&topic).ok(),
            };
            #[derive(Serialize)]
            struct Best {
                topic: String,
                template_id: u32,
                mapping: Option<String>,
            }
            let mapping = pack.and_then(|p| p.mappings.get(t as usize).cloned());
            em.emit(&Best { topic, template_id: t, mapping }, None)?;
        }
        Command::Evaluate(a) => {
            let reports = evaluate(&a)?;
            em.emit(&reports, Some(&|| evaluator::reports_csv(&reports)))?;
        }
        Command::Summarize(a) => {
            let s = summarize(&a.reports, a.sample_variance)?;
            em.emit(&s, Some(&|| evaluator::summary_csv(&s)))?;
        }
        Command::Pipeline {
            classify: ca,
            predictions,
            sample_variance,
            work_dir,
        } => {
            fs::create_dir_all(&work_dir)?;
            let class_path = work_dir.join("classification.json");
            let acc_path = work_dir.join("accuracy.json");
            let (c, hs) = classify(&ca)?;
            fs::write(
                &class_path,
                to_json(&ClassifyOutput {
                    classification: &c,
                    high_success: hs,
                })?,
            )?;
            let reports = evaluate(&EvaluateArgs {
                items: ca.data.items.clone(),
                classification: class_path,
                predictions,
                synonyms: ca.data.synonyms.clone(),
                run_id: None,
                case_sensitive: ca.data.case_sensitive,
            })?;
            fs::write(&acc_path, to_json(&reports)?)?;
            let s = summarize(&acc_path, sample_variance)?;
            fs::write(work_dir.join("summary.json"), to_json(&s)?)?;
            em.emit(&s, Some(&|| evaluator::summary_csv(&s)))?;
        }
        Command::SynthPair {
            pre,
            ft,
            params,
            tensors,
            seed,
        } => {
            if params == 0 {
                return Err(CliError::Usage("--params must be positive".into()));
            }
            synth::synth_pair(&pre, &ft, params, tensors, seed)?;
        }
    }
    Ok(())
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let args = match config::merge(args, &SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return 2;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
        let names: Vec<String> = Cli::command().get_subcommands().map(|s| s.get_name().to_string()).collect();
        assert_eq!(names, SUBCOMMANDS);
    }

    #[test]
    fn rho_range_is_a_usage_error() {
        let e = Cli::try_parse_from(["ftscope", "restore", "--pre", "/", "--ft", "/", "--rho", "1.5", "--checkpoint-out", "x"])
            .unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("out of range"));
    }
}
