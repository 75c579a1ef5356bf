//! End-to-end over the shipped toy corpus with the lexicon mock backend.

use std::collections::HashMap;
use std::path::PathBuf;

use kiwi_core::eval::{corpus_stats, score_corpus, MatchMode, Task};
use kiwi_core::formats::{from_json, to_json};
use kiwi_core::pipeline::{annotate_batch, LexiconBackend, PipelineConfig, ReInput};
use kiwi_core::schema::{validate, Document};
use kiwi_core::{AnnotationSet, MainEntityType, ModifierType};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy")
}

fn load() -> (Vec<Document>, Vec<AnnotationSet>, LexiconBackend) {
    let root = fixtures();
    let mut docs = Vec::new();
    let mut gold = Vec::new();
    let mut names: Vec<_> = std::fs::read_dir(root.join("notes")).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    for path in names {
        let id = path.file_stem().unwrap().to_str().unwrap().to_string();
        let text = std::fs::read_to_string(&path).unwrap();
        docs.push(Document::segmented(id.clone(), text));
        gold.push(from_json(&std::fs::read_to_string(root.join(format!("gold/{id}.kiwi.json"))).unwrap()).unwrap());
    }
    let lexicon = LexiconBackend::from_tsv(&std::fs::read_to_string(root.join("lexicon.tsv")).unwrap()).unwrap();
    (docs, gold, lexicon)
}

fn config(re_input: ReInput) -> PipelineConfig {
    let mut c = PipelineConfig::new();
    c.re_input = re_input;
    c.generation.batch_size = 8;
    c
}

#[test]
fn gold_is_valid_and_canonical() {
    let root = fixtures();
    let (docs, gold, _) = load();
    for (set, doc) in gold.iter().zip(&docs) {
        assert_eq!(validate(set, doc), vec![], "{}", doc.id());
        let raw = std::fs::read_to_string(root.join(format!("gold/{}.kiwi.json", doc.id()))).unwrap();
        assert_eq!(to_json(set), raw, "{} is not in canonical form", doc.id());
    }
}

#[test]
fn mock_pipeline_reproduces_gold_in_both_modes() {
    let (docs, gold, lexicon) = load();
    for mode in [ReInput::Pipeline, ReInput::Gold] {
        let run = annotate_batch(&docs, &lexicon, &config(mode), Some(&gold));
        assert!(run.failures.is_empty(), "{:?}", run.failures);
        assert!(run.diagnostics.is_empty(), "{:?}", run.diagnostics);
        assert_eq!(run.annotations, gold, "{mode:?}");
        for task in Task::ALL {
            let r = score_corpus(&gold, &run.annotations, task, MatchMode::Exact).unwrap();
            assert_eq!(r.f1, 1.0);
        }
    }
}

#[test]
fn stats_equal_hand_counts() {
    let expected: HashMap<String, usize> = std::fs::read_to_string(fixtures().join("expected_stats.tsv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| {
            let (k, v) = l.split_once('\t').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect();
    let (_, gold, _) = load();
    let stats = corpus_stats(&gold);
    assert_eq!(stats.documents, expected["documents"]);
    for t in MainEntityType::ALL {
        assert_eq!(stats.mentions(*t), expected.get(t.name()).copied().unwrap_or(0), "{t}");
        for m in ModifierType::ALL {
            let key = format!("{}/{}", t.name(), m.name());
            assert_eq!(stats.relations(*t, *m), expected.get(&key).copied().unwrap_or(0), "{key}");
        }
    }
}
