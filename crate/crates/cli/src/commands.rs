//! Subcommand implementations.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use kiwi_core::eval::{
    bootstrap_significance, categorize_corpus, corpus_stats, render_reports, score_corpus, EvalError, MatchMode,
    MetricReport, SignificanceReport, Task,
};
use kiwi_core::pipeline::{annotate_texts, ReInput, SegmenterConfig};
use kiwi_core::schema::AnnotationSet;
use kiwi_core::spanmark::template_version;
use kiwi_core::telemetry::{cost_report, read_samples, render_report, EnergyMethod, RunLedger};

use crate::config::{segmenter, FileConfig, Overrides, ResolvedConfig};
use crate::corpus::{self, create_dir, read_any_corpus, read_notes, write_file, write_set, Format};
use crate::{
    AnnotateArgs, BenchArgs, CliError, Command, ConvertArgs, EvalArgs, ModeChoice, OutputFormat, ServeArgs, StatsArgs,
    TaskChoice,
};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const TIMINGS_FILE: &str = "run_timings.json";
pub const DIAGNOSTICS_FILE: &str = "run_diagnostics.json";

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Annotate(a) => annotate(a),
        Command::Eval(a) => eval(a),
        Command::Stats(a) => stats(a),
        Command::Bench(a) => bench(a),
        Command::Convert(a) => convert(a),
        Command::Serve(a) => serve(a),
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn api_key_from_env() -> Option<String> {
    std::env::var("KIWI_API_KEY").ok()
}

fn annotate(a: AnnotateArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.config.config.as_deref())?;
    let cfg = ResolvedConfig::merge(
        file,
        Overrides {
            backend: a.backend.backend,
            api_key: api_key_from_env(),
            batch_size: a.backend.batch_size,
            re_input: a.re_input,
            relations: !a.no_relations,
        },
    )?;
    let seg = segmenter(&cfg.segmenter);
    let notes = read_notes(&a.input)?;
    let gold = match cfg.re_input {
        ReInput::Pipeline => None,
        ReInput::Gold => {
            let dir = a.gold.as_deref().ok_or_else(|| CliError::Config("--re-input gold requires --gold <dir>".into()))?;
            Some(gold_for(&notes, dir, &seg)?)
        }
    };
    let backend = cfg.build_backend()?;
    let format = match a.format {
        OutputFormat::Json => Format::Json,
        OutputFormat::Brat => Format::Brat,
    };

    let (_, run) = annotate_texts(&notes, backend.as_ref(), &cfg.pipeline(), &seg, gold.as_deref());

    create_dir(&a.output)?;
    let failed: HashMap<&str, &str> = run.failures.iter().map(|f| (f.doc_id.as_str(), f.error.as_str())).collect();
    let mut documents = Vec::new();
    for (set, (id, text)) in run.annotations.iter().zip(&notes) {
        if let Some(err) = failed.get(id.as_str()) {
            documents.push(json!({ "id": id, "status": "failed", "error": err }));
            continue;
        }
        write_set(format, &a.output, set, text, &seg)?;
        documents.push(json!({
            "id": id,
            "status": "ok",
            "file": format!("{id}.{}", format.ext()),
            "mentions": set.mentions.len(),
            "relations": set.relations.len(),
        }));
    }

    let mut parse_kinds: BTreeMap<String, usize> = BTreeMap::new();
    let mut dropped = 0;
    for d in &run.diagnostics {
        for p in &d.parse {
            let kind = serde_json::to_value(p.kind).ok().and_then(|v| v.as_str().map(str::to_string));
            *parse_kinds.entry(kind.unwrap_or_else(|| format!("{:?}", p.kind))).or_default() += 1;
        }
        dropped += d.dropped.len();
    }
    let manifest = json!({
        "kiwi_version": env!("CARGO_PKG_VERSION"),
        "template_version": template_version(),
        "backend": backend.identity(),
        "config": cfg,
        "config_hash": cfg.hash(),
        "seed": a.seed,
        "format": format!("{:?}", a.format).to_lowercase(),
        "documents": documents,
        "diagnostics": {
            "requests_with_diagnostics": run.diagnostics.len(),
            "parse": parse_kinds,
            "dropped_spans": dropped,
            "file": DIAGNOSTICS_FILE,
        },
        "failures": run.failures,
        "stats": run.stats,
    });
    write_file(&a.output.join(MANIFEST_FILE), &pretty(&manifest))?;
    write_file(&a.output.join(DIAGNOSTICS_FILE), &pretty(&run.diagnostics))?;
    write_file(&a.output.join(TIMINGS_FILE), &pretty(&json!({ "timings": run.timings })))?;

    eprintln!(
        "kiwi: annotated {} of {} notes ({} NER + {} RE requests, {} retries, {} diagnostics) in {:.0} ms",
        notes.len() - run.failures.len(),
        notes.len(),
        run.stats.ner_requests,
        run.stats.re_requests,
        run.stats.retries,
        run.diagnostics.len(),
        run.timings.total_ms,
    );
    if run.failures.is_empty() {
        return Ok(());
    }
    let n = run.failures.len();
    if n == notes.len() && run.failures.iter().all(|f| f.backend_unavailable) {
        return Err(CliError::BackendUnreachable(format!(
            "{} ({n} of {n} documents failed; see {MANIFEST_FILE})",
            run.failures[0].error
        )));
    }
    Err(CliError::PartialFailure(format!("{n} of {} documents failed; see {MANIFEST_FILE}", notes.len())))
}

/// Gold annotations for each note, in note order.
fn gold_for(notes: &[(String, String)], dir: &Path, seg: &SegmenterConfig) -> Result<Vec<AnnotationSet>, CliError> {
    let mut by_id: HashMap<String, AnnotationSet> =
        read_any_corpus(dir, seg)?.into_iter().map(|s| (s.doc_id.clone(), s)).collect();
    notes
        .iter()
        .map(|(id, _)| {
            by_id
                .remove(id)
                .ok_or_else(|| CliError::Input(format!("no gold annotation for `{id}` in {}", dir.display())))
        })
        .collect()
}

fn eval_err(e: EvalError) -> CliError {
    CliError::Input(e.to_string())
}

fn tasks(c: TaskChoice) -> &'static [Task] {
    match c {
        TaskChoice::Ner => &[Task::Ner],
        TaskChoice::Re => &[Task::Re],
        TaskChoice::Both => &Task::ALL,
    }
}

fn modes(c: ModeChoice) -> &'static [MatchMode] {
    match c {
        ModeChoice::Exact => &[MatchMode::Exact],
        ModeChoice::Relaxed => &[MatchMode::Relaxed],
        ModeChoice::Both => &MatchMode::ALL,
    }
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let seg = SegmenterConfig::default();
    let gold = read_any_corpus(&a.gold, &seg)?;
    let pred = read_any_corpus(&a.pred, &seg)?;
    let compare = a.compare.as_deref().map(|d| read_any_corpus(d, &seg)).transpose()?;
    if compare.is_some() && a.bootstrap == 0 {
        return Err(CliError::Config("--bootstrap must be at least 1".into()));
    }

    let mut reports: Vec<MetricReport> = Vec::new();
    let mut significance: Vec<SignificanceReport> = Vec::new();
    for &task in tasks(a.task) {
        for &mode in modes(a.mode) {
            reports.push(score_corpus(&gold, &pred, task, mode).map_err(eval_err)?);
            if let Some(b) = &compare {
                significance
                    .push(bootstrap_significance(&gold, &pred, b, task, mode, a.bootstrap, a.seed).map_err(eval_err)?);
            }
        }
    }
    let errors = if a.errors {
        let mut m = BTreeMap::new();
        for &task in tasks(a.task) {
            m.insert(task.name(), categorize_corpus(&gold, &pred, task).map_err(eval_err)?);
        }
        Some(m)
    } else {
        None
    };

    if a.json {
        let mut out = json!({ "documents": gold.len(), "reports": reports });
        if compare.is_some() {
            out["significance"] = serde_json::to_value(&significance).expect("serializes");
        }
        if let Some(e) = &errors {
            out["errors"] = serde_json::to_value(e).expect("serializes");
        }
        print!("{}", pretty(&out));
        return Ok(());
    }
    print!("{}", render_reports(&reports));
    for s in &significance {
        println!(
            "bootstrap {}/{}: F1 pred={:.3} compare={:.3} diff 95% CI [{:.3}, {:.3}] statistic={:.1} one-sided p={:.4} \
             ({} replicates over {}, seed {})",
            s.task.name(),
            s.mode.name(),
            s.f1_a,
            s.f1_b,
            s.ci95.0,
            s.ci95.1,
            s.statistic,
            s.p_value,
            s.replicates,
            s.unit,
            s.seed
        );
    }
    for (task, e) in errors.iter().flatten() {
        println!(
            "errors {task}: misses={} spurious={} boundary={} type={}",
            e.misses, e.spurious, e.boundary_errors, e.type_errors
        );
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<(), CliError> {
    let sets = read_any_corpus(&a.input, &SegmenterConfig::default())?;
    let table = corpus_stats(&sets);
    if a.json {
        print!("{}", pretty(&table));
    } else {
        print!("{table}");
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    let file = std::fs::File::open(&a.ledger)
        .map_err(|e| CliError::Input(format!("{}: {e}", a.ledger.display())))?;
    let samples = read_samples(file).map_err(|e| CliError::Input(format!("{}: {e}", a.ledger.display())))?;
    let ledger = RunLedger {
        phase: a.phase,
        num_gpus: a.num_gpus,
        wall_seconds: a.wall_seconds,
        notes_processed: a.notes,
        epochs: a.epochs,
        samples,
    };
    let method = if a.trapezoid { EnergyMethod::Trapezoid } else { EnergyMethod::MeanPower };
    let report = cost_report(&ledger, method).map_err(|e| CliError::Input(e.to_string()))?;
    if a.json {
        print!("{}", pretty(&report));
    } else {
        print!("{}", render_report(&report));
    }
    Ok(())
}

fn convert(a: ConvertArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.config.config.as_deref())?;
    let seg = segmenter(&file.segmenter);
    let text_dir = a.text.clone().unwrap_or_else(|| a.input.clone());
    let sets = corpus::read_corpus(&a.input, a.from, &text_dir, &seg)?;
    if sets.is_empty() {
        return Err(CliError::Input(format!("no .{} files in {}", a.from.ext(), a.input.display())));
    }
    create_dir(&a.output)?;
    for set in &sets {
        let text = match a.to {
            Format::Json => String::new(),
            Format::Brat | Format::Bio => corpus::read_text(&text_dir.join(format!("{}.txt", set.doc_id)))?,
        };
        if a.to == Format::Bio && !set.relations.is_empty() {
            eprintln!("kiwi: {}: BIO keeps main mentions only; {} relations dropped", set.doc_id, set.relations.len());
        }
        for w in write_set(a.to, &a.output, set, &text, &seg)? {
            eprintln!("kiwi: {}: {w:?}", set.doc_id);
        }
    }
    eprintln!("kiwi: converted {} documents", sets.len());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.config.config.as_deref())?;
    let service = file.service.clone();
    let cfg = ResolvedConfig::merge(
        file,
        Overrides {
            backend: a.backend.backend,
            api_key: api_key_from_env(),
            batch_size: a.backend.batch_size,
            re_input: ReInput::Pipeline,
            relations: true,
        },
    )?;
    let backend: Arc<dyn kiwi_core::pipeline::Backend> = Arc::from(cfg.build_backend()?);
    let config = kiwi_service::ServiceConfig {
        max_body_bytes: service.max_body_bytes,
        cors_origins: if a.cors_origins.is_empty() { service.cors_origins } else { a.cors_origins },
        backend_label: "default".into(),
        pipeline: cfg.pipeline(),
    };
    let bind = a.bind.unwrap_or(service.bind);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| CliError::Config(format!("cannot bind {bind}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        eprintln!("kiwi: serving on http://{addr} (backend {})", backend.identity());
        kiwi_service::serve(listener, kiwi_service::router(backend, config)).await.map_err(|e| CliError::Io(e.to_string()))
    })
}

