use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};

use ovfact_core::agreement::{agreement_rate, AgreementError, AgreementReport, Axis, JudgmentRecord, MetricScores};
use ovfact_core::baseline::{canonical_objects, chair_caption, chair_parse, ChairRecord, ClosedVocabulary};
use ovfact_core::config::RunConfig;
use ovfact_core::hashing::text_hash;
use ovfact_core::model::ReferenceMode;
use ovfact_core::pipeline::cache::ScoreCache;
use ovfact_core::pipeline::dataset::{DatasetError, DatasetReader};
use ovfact_core::pipeline::{
    read_manifest, write_manifest, ErrorRecord, ManifestError, OutputLine, Pipeline, PipelineError, PipelineInputs,
    RunSummary, SampleOutcome, ScoreDirection, ScoreRecord, StrategyKind,
};
use ovfact_core::vocabulary::build_vocabulary;
use serde::Serialize;
use serde_json::json;

use crate::exit::{fail, CliResult, Code, WithCode};
use crate::report::{report_path, write_json, Table};
use crate::{AgreementArgs, AxisArg, CacheAction, FilterArgs, Metric, RefMode, RunArgs, ScoreArgs, VocabAction};

const SHOWN_ERRORS: usize = 5;

fn load_config(run: &RunArgs) -> CliResult<RunConfig> {
    let mut cfg = match &run.config {
        Some(p) => RunConfig::load(p).code(Code::Config)?,
        None => RunConfig::default(),
    };
    let b = &mut cfg.backends;
    if let Some(d) = &run.fixtures_dir {
        b.fixtures_dir = Some(d.clone());
    }
    for (flag, slot) in [
        (&run.endpoint_parser, &mut b.endpoints.parser),
        (&run.endpoint_detector, &mut b.endpoints.detector),
        (&run.endpoint_segmenter, &mut b.endpoints.segmenter),
        (&run.endpoint_embedder, &mut b.endpoints.embedder),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if run.no_segmenter {
        b.use_segmenter = false;
    }
    if let Some(t) = run.detection_threshold {
        cfg.grounding.detection_threshold = t;
    }
    if let Some(t) = run.seg_threshold {
        cfg.grounding.segmentation_confidence_threshold = t;
    }
    if let Some(m) = run.ref_mode {
        cfg.reference_mode = match m {
            RefMode::GtCaption => ReferenceMode::FromGtCaption,
            RefMode::Vocabulary => ReferenceMode::FromVocabularyGrounding,
        };
    }
    if !run.vocab.is_empty() {
        cfg.vocabulary.clone_from(&run.vocab);
    }
    if run.cache_dir.is_some() {
        cfg.cache_dir.clone_from(&run.cache_dir);
    }
    if let Some(c) = run.concurrency {
        cfg.concurrency = c;
    }
    if let Some(s) = run.seed {
        cfg.strategy.seed = Some(s);
    }
    if let Some(f) = run.failure_ceiling {
        cfg.failure_ceiling = f;
    }
    Ok(cfg)
}

fn cancel_flag() -> Arc<AtomicBool> {
    static FLAG: OnceLock<Arc<AtomicBool>> = OnceLock::new();
    FLAG.get_or_init(|| {
        let flag = Arc::new(AtomicBool::new(false));
        let f = flag.clone();
        if let Err(e) = ctrlc::set_handler(move || {
            eprintln!("interrupt received; finishing the current chunk");
            f.store(true, Ordering::SeqCst);
        }) {
            log::warn!("cannot install interrupt handler: {e}");
        }
        flag
    })
    .clone()
}

struct Prepared {
    cfg: RunConfig,
    pipeline: Pipeline,
}

/// Validates the full configuration and builds every backend before any
/// sample is read.
fn prepare(cfg: RunConfig) -> CliResult<Prepared> {
    cfg.validate().code(Code::Config)?;
    let vocabulary = cfg.load_vocabulary().code(Code::Config)?;
    let backends = if cfg.strategy.kind.uses_backends() {
        Some(cfg.build_backends().code(Code::Config)?.0)
    } else {
        None
    };
    let cache = match &cfg.cache_dir {
        Some(dir) => Some(Arc::new(ScoreCache::open(dir).code(Code::Config)?)),
        None => None,
    };
    let pipeline = Pipeline::new(PipelineInputs {
        strategy: cfg.strategy.clone(),
        scoring: cfg.scoring_config(vocabulary.clone()),
        backends,
        vocabulary,
        cache,
        options: cfg.pipeline_options(),
    })
    .map_err(|e| {
        let code = if matches!(e, PipelineError::Dataset(_)) { Code::Data } else { Code::Config };
        crate::exit::CliError { code, error: e.into() }
    })?
    .with_cancel_flag(cancel_flag());
    Ok(Prepared { cfg, pipeline })
}

fn thresholds(table: &mut Table, cfg: &RunConfig) {
    let g = &cfg.grounding;
    table
        .row("detection threshold", g.detection_threshold)
        .row("segmentation confidence", g.segmentation_confidence_threshold)
        .row("segmentation min coverage", g.segmentation_min_coverage)
        .row("segmenter", if cfg.backends.use_segmenter { "on" } else { "off" })
        .row("reference mode", cfg.reference_mode);
}

fn summary_rows(table: &mut Table, s: &RunSummary) {
    table
        .row("samples", s.total)
        .row("scored", s.scored)
        .row("failed", s.failed)
        .row("degenerate", s.degenerate)
        .opt("mean score", s.mean_score)
        .opt("mean precision", s.mean_precision)
        .opt("mean recall", s.mean_recall)
        .opt("mean f1", s.mean_f1);
    for (stage, n) in &s.failures_by_stage {
        table.row(format!("failures at {stage}"), n);
    }
    if let Some(c) = s.cache {
        table.row("cache hits / misses", format!("{} / {}", c.hits, c.misses));
    }
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Header<'a> {
    Header {
        config_fingerprint: &'a str,
        config: &'a RunConfig,
    },
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum EvidenceLine<'a> {
    Evidence(&'a ovfact_core::pipeline::EvidenceRecord),
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", path.display()))
        .code(Code::Data)
}

fn write_line<T: Serialize>(w: &mut impl Write, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::other)?;
    w.write_all(b"\n")
}

fn dataset_rows(path: &Path) -> CliResult<impl Iterator<Item = Result<ovfact_core::CaptionSample, DatasetError>>> {
    Ok(DatasetReader::open(path).code(Code::Data)?.map(|r| r.map(|(_, s)| s)))
}

fn is_backend_stage(stage: &str) -> bool {
    matches!(stage, "parse" | "ground" | "reference" | "embed")
}

/// Maps a finished or aborted run onto an exit code, printing what the
/// operator needs to know.
fn finish_run(
    result: Result<RunSummary, PipelineError>,
    errors: &[ErrorRecord],
) -> CliResult<(RunSummary, Option<Code>)> {
    for e in errors.iter().take(SHOWN_ERRORS) {
        eprintln!("sample {} failed at {}: {}", e.id, e.stage, e.error);
    }
    if errors.len() > SHOWN_ERRORS {
        eprintln!("... and {} more failures", errors.len() - SHOWN_ERRORS);
    }
    match result {
        Ok(s) => Ok((s, None)),
        Err(PipelineError::FailureCeiling {
            failed,
            total,
            ceiling,
            summary,
        }) => {
            eprintln!(
                "error: {failed} of {total} samples failed, above the {:.2}% ceiling",
                ceiling * 100.0
            );
            let all_backend = summary.scored == 0 && errors.iter().all(|e| is_backend_stage(&e.stage));
            Ok((*summary, Some(if all_backend { Code::Backend } else { Code::FailureCeiling })))
        }
        Err(PipelineError::Interrupted { processed }) => fail(
            Code::Interrupted,
            format!("interrupted after {processed} samples; cached work will be reused on rerun"),
        ),
        Err(e @ (PipelineError::Dataset(_) | PipelineError::Output(_) | PipelineError::Cache(_))) => {
            Err(e).code(Code::Data)
        }
        Err(e) => Err(e).code(Code::Config),
    }
}

fn exit_with(code: Option<Code>) -> CliResult {
    match code {
        None => Ok(()),
        Some(code) => fail(code, "run did not complete cleanly"),
    }
}

pub fn score(args: ScoreArgs) -> CliResult {
    let mut cfg = load_config(&args.run)?;
    if args.metric == Metric::Chair {
        return score_chair(&args, &cfg);
    }
    if args.closed_vocab.is_some() {
        log::warn!("--closed-vocab is only used by --metric chair");
    }
    cfg.strategy.kind = match args.metric {
        Metric::Ovfact => StrategyKind::OvfactF1,
        Metric::Aloha => StrategyKind::Aloha,
        Metric::OvfAlm => StrategyKind::OvfAlm,
        Metric::Chair => unreachable!(),
    };
    if args.dump_evidence.is_some() && args.metric != Metric::Ovfact {
        return fail(Code::Config, "--dump-evidence requires --metric ovfact");
    }
    let Prepared { cfg, pipeline } = prepare(cfg)?;
    let fingerprint = pipeline.fingerprint().to_owned();
    let header = Header::Header {
        config_fingerprint: &fingerprint,
        config: &cfg,
    };

    let mut out = create(&args.run.out)?;
    write_line(&mut out, &header).code(Code::Data)?;
    let mut evidence = match &args.dump_evidence {
        Some(p) => {
            let mut w = create(p)?;
            write_line(&mut w, &header).code(Code::Data)?;
            Some(w)
        }
        None => None,
    };
    let mut errors = Vec::new();
    let result = pipeline.run(dataset_rows(&args.run.dataset)?, |o: &SampleOutcome| {
        write_line(&mut out, &o.output_line())?;
        match o {
            SampleOutcome::Scored { evidence: ev, .. } => {
                if let Some(w) = evidence.as_mut() {
                    for e in ev {
                        write_line(w, &EvidenceLine::Evidence(e))?;
                    }
                }
            }
            SampleOutcome::Failed(e) => errors.push(e.clone()),
        }
        Ok(())
    });
    out.flush().code(Code::Data)?;
    if let Some(w) = evidence.as_mut() {
        w.flush().code(Code::Data)?;
    }
    let (summary, code) = finish_run(result, &errors)?;

    let mut table = Table::new(format!("score ({})", pipeline.strategy().kind.name()));
    summary_rows(&mut table, &summary);
    thresholds(&mut table, &cfg);
    table.row("config fingerprint", &fingerprint);
    table.print();
    let report = json!({
        "command": "score",
        "metric": pipeline.strategy().kind.name(),
        "config_fingerprint": fingerprint,
        "config": cfg,
        "summary": summary,
        "outputs": {
            "scores": args.run.out,
            "evidence": args.dump_evidence,
        },
    });
    write_json(&report_path(&args.run.out), &report).code(Code::Data)?;
    exit_with(code)
}

#[derive(Serialize)]
struct ChairLine<'a> {
    record: &'static str,
    id: &'a str,
    #[serde(flatten)]
    chair: &'a ChairRecord,
}

fn score_chair(args: &ScoreArgs, cfg: &RunConfig) -> CliResult {
    let Some(path) = &args.closed_vocab else {
        return fail(Code::Config, "--metric chair requires --closed-vocab");
    };
    if args.dump_evidence.is_some() {
        return fail(Code::Config, "--dump-evidence requires --metric ovfact");
    }
    let vocab = ClosedVocabulary::load(path).code(Code::Config)?;
    let fingerprint = text_hash(&serde_json::to_string(&json!({"metric": "chair", "vocabulary": vocab})).expect("serializes"));
    let mut out = create(&args.run.out)?;
    write_line(
        &mut out,
        &json!({"record": "header", "config_fingerprint": fingerprint, "metric": "chair", "closed_vocabulary": path}),
    )
    .code(Code::Data)?;

    let (mut n, mut sums) = (0usize, [0.0f64; 2]);
    let mut totals = [0usize; 4];
    let mut errors = Vec::new();
    for row in dataset_rows(&args.run.dataset)? {
        let sample = row.code(Code::Data)?;
        let gt = match (&sample.gt_objects, &sample.reference_caption) {
            (Some(labels), _) => canonical_objects(labels, &vocab),
            (None, Some(reference)) => chair_parse(reference, &vocab),
            (None, None) => {
                let e = ErrorRecord {
                    id: sample.id.clone(),
                    stage: "validate".into(),
                    error: "no gt_objects or reference_caption to compare against".into(),
                    retryable: false,
                };
                write_line(&mut out, &OutputLine::Error(e.clone())).code(Code::Data)?;
                errors.push(e);
                continue;
            }
        };
        let rec = chair_caption(&sample.caption, &vocab, &gt);
        write_line(
            &mut out,
            &ChairLine {
                record: "score",
                id: &sample.id,
                chair: &rec,
            },
        )
        .code(Code::Data)?;
        n += 1;
        sums[0] += rec.chair_i;
        sums[1] += rec.chair_s;
        for (t, v) in totals
            .iter_mut()
            .zip([rec.hallucinated, rec.mentioned, rec.hallucinated_sentences, rec.sentences])
        {
            *t += v;
        }
    }
    out.flush().code(Code::Data)?;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mean = |s: f64| (n > 0).then(|| s / n as f64);
    let corpus_i = ratio(totals[0], totals[1]);
    let corpus_s = ratio(totals[2], totals[3]);
    let mut table = Table::new("score (chair)");
    table
        .row("samples", n + errors.len())
        .row("scored", n)
        .row("failed", errors.len())
        .opt("mean CHAIRi", mean(sums[0]))
        .opt("mean CHAIRs", mean(sums[1]))
        .row("corpus CHAIRi", format!("{corpus_i:.4} ({}/{})", totals[0], totals[1]))
        .row("corpus CHAIRs", format!("{corpus_s:.4} ({}/{})", totals[2], totals[3]))
        .row("config fingerprint", &fingerprint);
    table.print();
    let report = json!({
        "command": "score",
        "metric": "chair",
        "config_fingerprint": fingerprint,
        "samples": n + errors.len(),
        "failed": errors.len(),
        "mean_chair_i": mean(sums[0]),
        "mean_chair_s": mean(sums[1]),
        "corpus_chair_i": corpus_i,
        "corpus_chair_s": corpus_s,
        "hallucinated": totals[0],
        "mentioned": totals[1],
        "hallucinated_sentences": totals[2],
        "sentences": totals[3],
    });
    write_json(&report_path(&args.run.out), &report).code(Code::Data)?;
    for e in errors.iter().take(SHOWN_ERRORS) {
        eprintln!("sample {} skipped: {}", e.id, e.error);
    }
    let total = n + errors.len();
    if total > 0 && errors.len() as f64 / total as f64 > cfg.failure_ceiling {
        return fail(Code::FailureCeiling, format!("{} of {total} samples could not be scored", errors.len()));
    }
    Ok(())
}

pub fn filter(args: FilterArgs) -> CliResult {
    let mut cfg = load_config(&args.run)?;
    if let Some(name) = &args.strategy {
        cfg.strategy.kind = StrategyKind::from_name(name).ok_or_else(|| {
            let names: Vec<_> = StrategyKind::ALL.iter().map(|k| k.name()).collect();
            crate::exit::CliError {
                code: Code::Config,
                error: anyhow::anyhow!("unknown strategy {name:?}; expected one of {}", names.join(", ")),
            }
        })?;
    }
    if let Some(r) = args.ratio {
        cfg.data_ratio = r;
    }
    if args.score_file.is_some() {
        cfg.strategy.score_file.clone_from(&args.score_file);
    }
    if cfg.strategy.kind == StrategyKind::ExternalScore {
        cfg.strategy.direction = Some(if args.higher_is_better {
            ScoreDirection::HigherIsBetter
        } else {
            cfg.strategy.direction.unwrap_or_default()
        });
    }
    let Prepared { cfg, pipeline } = prepare(cfg)?;
    let fingerprint = pipeline.fingerprint().to_owned();

    if args.run.out.exists() {
        match read_manifest(&args.run.out) {
            Ok(old) => {
                if let Some(w) = old.fingerprint_warning(&fingerprint) {
                    eprintln!("warning: overwriting {}: {w}", args.run.out.display());
                }
            }
            Err(e) => log::debug!("existing output is not a readable manifest: {e}"),
        }
    }

    let mut scores_out = match &args.scores_out {
        Some(p) => {
            let mut w = create(p)?;
            write_line(
                &mut w,
                &Header::Header {
                    config_fingerprint: &fingerprint,
                    config: &cfg,
                },
            )
            .code(Code::Data)?;
            Some(w)
        }
        None => None,
    };
    let mut records: Vec<ScoreRecord> = Vec::new();
    let mut errors = Vec::new();
    let result = pipeline.run(dataset_rows(&args.run.dataset)?, |o| {
        if let Some(w) = scores_out.as_mut() {
            write_line(w, &o.output_line())?;
        }
        match o {
            SampleOutcome::Scored { record, .. } => records.push(record.clone()),
            SampleOutcome::Failed(e) => errors.push(e.clone()),
        }
        Ok(())
    });
    if let Some(w) = scores_out.as_mut() {
        w.flush().code(Code::Data)?;
    }
    let (summary, code) = finish_run(result, &errors)?;
    if code.is_some() {
        return exit_with(code);
    }

    let manifest = pipeline.select(&records, cfg.data_ratio).map_err(|e| {
        let code = if matches!(e, ManifestError::Ratio(_)) { Code::Config } else { Code::Data };
        crate::exit::CliError { code, error: e.into() }
    })?;
    write_manifest(&manifest, &args.run.out).code(Code::Data)?;

    let mut table = Table::new(format!("filter ({})", cfg.strategy.kind.name()));
    table
        .row("data ratio", cfg.data_ratio)
        .row("ranked", manifest.entries.len())
        .row("selected", manifest.selected_count());
    summary_rows(&mut table, &summary);
    if cfg.strategy.kind.uses_backends() {
        thresholds(&mut table, &cfg);
    }
    table.row("config fingerprint", &fingerprint);
    table.print();
    let report = json!({
        "command": "filter",
        "strategy": cfg.strategy,
        "data_ratio": cfg.data_ratio,
        "config_fingerprint": fingerprint,
        "config": cfg,
        "ranked": manifest.entries.len(),
        "selected": manifest.selected_count(),
        "summary": summary,
        "outputs": {
            "manifest": args.run.out,
            "scores": args.scores_out,
        },
    });
    write_json(&report_path(&args.run.out), &report).code(Code::Data)?;
    Ok(())
}

fn read_jsonl_values(path: &Path) -> CliResult<Vec<(usize, serde_json::Value)>> {
    let file = File::open(path)
        .map_err(|e| anyhow::anyhow!("cannot open {}: {e}", path.display()))
        .code(Code::Data)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.code(Code::Data)?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1))
            .code(Code::Data)?;
        out.push((i + 1, v));
    }
    Ok(out)
}

fn metric_scores(sources: &[(String, PathBuf)], axis: Axis, field: Option<&str>) -> CliResult<MetricScores> {
    let mut scores = MetricScores::new();
    for (model, path) in sources {
        for (line, v) in read_jsonl_values(path)? {
            if v.get("record").and_then(|r| r.as_str()).is_some_and(|r| r != "score") {
                continue;
            }
            let id = v.get("id").and_then(|x| x.as_str());
            let named = field.unwrap_or(match axis {
                Axis::Precision => "precision",
                Axis::Recall => "recall",
            });
            let value = v.get(named).or_else(|| v.get("score")).and_then(|x| x.as_f64());
            match (id, value) {
                (Some(id), Some(value)) => {
                    scores.insert((id.to_owned(), model.clone()), value);
                }
                _ => {
                    return fail(
                        Code::Data,
                        format!("{}:{line}: score record needs an id and a numeric {named:?}", path.display()),
                    )
                }
            }
        }
    }
    Ok(scores)
}

pub fn agreement(args: AgreementArgs) -> CliResult {
    let mut judgments = Vec::new();
    for (line, v) in read_jsonl_values(&args.judgments)? {
        let j: JudgmentRecord = serde_json::from_value(v)
            .map_err(|e| anyhow::anyhow!("{}:{line}: {e}", args.judgments.display()))
            .code(Code::Data)?;
        judgments.push(j);
    }
    let mut sources = Vec::new();
    for s in &args.scores {
        let Some((model, path)) = s.split_once('=') else {
            return fail(Code::Config, format!("--scores expects model=path, got {s:?}"));
        };
        sources.push((model.to_owned(), PathBuf::from(path)));
    }
    let axes: &[Axis] = match args.axis {
        AxisArg::Precision => &[Axis::Precision],
        AxisArg::Recall => &[Axis::Recall],
        AxisArg::Both => &[Axis::Precision, Axis::Recall],
    };
    let mut reports: BTreeMap<String, Option<AgreementReport>> = BTreeMap::new();
    let mut table = Table::new("agreement");
    table.row("judgments", judgments.len());
    for &axis in axes {
        let scores = metric_scores(&sources, axis, args.field.as_deref())?;
        match agreement_rate(&judgments, &scores, axis) {
            Ok(r) => {
                table.row(
                    format!("{axis} agreement"),
                    format!(
                        "{:.4} ({}/{}; {} neutral, {} ties excluded)",
                        r.rate, r.agreed, r.decisive, r.neutral_excluded, r.ties_excluded
                    ),
                );
                reports.insert(axis.to_string(), Some(r));
            }
            Err(AgreementError::Undefined(_)) => {
                table.row(format!("{axis} agreement"), "undefined (no decisive judgments)");
                reports.insert(axis.to_string(), None);
            }
            Err(e) => return Err(e).code(Code::Data),
        }
    }
    table.print();
    if let Some(out) = &args.out {
        write_json(out, &json!({"command": "agreement", "axes": reports})).code(Code::Data)?;
    }
    if reports.values().all(Option::is_none) {
        return fail(Code::Data, "agreement rate is undefined on every requested axis");
    }
    Ok(())
}

pub fn vocab(action: VocabAction) -> CliResult {
    match action {
        VocabAction::Build { vocab, out } => {
            let v = build_vocabulary(&vocab).code(Code::Data)?;
            let mut text = String::new();
            for c in v.iter() {
                text.push_str(c);
                text.push('\n');
            }
            std::fs::write(&out, text).code(Code::Data)?;
            println!("{} concepts from {} lists written to {}", v.len(), vocab.len(), out.display());
        }
        VocabAction::Stats { vocab } => {
            let v = build_vocabulary(&vocab).code(Code::Data)?;
            let mut table = Table::new("vocabulary");
            for s in v.sources() {
                table.row(&s.name, s.concepts);
            }
            let summed: usize = v.sources().iter().map(|s| s.concepts).sum();
            table
                .row("union", v.len())
                .row("shared across lists", summed - v.len())
                .row("content hash", v.content_hash());
            table.print();
        }
    }
    Ok(())
}

pub fn cache(action: CacheAction) -> CliResult {
    match action {
        CacheAction::Stats { cache_dir } => {
            if !cache_dir.is_dir() {
                return fail(Code::Config, format!("{} is not a cache directory", cache_dir.display()));
            }
            let c = ScoreCache::open(&cache_dir).code(Code::Data)?;
            let stats = c.stats();
            let mut table = Table::new("cache");
            table.row("entries", stats.entries);
            for s in &stats.segments {
                table.row(format!("  {}", s.identity), s.entries);
            }
            match ScoreCache::last_run(&cache_dir) {
                Some(r) => {
                    let total = r.hits + r.misses;
                    let ratio = if total == 0 { 0.0 } else { r.hits as f64 / total as f64 };
                    table
                        .row("last run hits / misses", format!("{} / {}", r.hits, r.misses))
                        .row("last run hit ratio", format!("{ratio:.4}"));
                }
                None => {
                    table.row("last run", "none recorded");
                }
            }
            table.print();
        }
        CacheAction::Purge { cache_dir } => {
            let n = if cache_dir.is_dir() {
                ScoreCache::open(&cache_dir).code(Code::Data)?.len()
            } else {
                0
            };
            ScoreCache::purge(&cache_dir).code(Code::Data)?;
            println!("purged {n} entries from {}", cache_dir.display());
        }
    }
    Ok(())
}
