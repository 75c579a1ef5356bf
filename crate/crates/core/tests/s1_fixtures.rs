//! Supplementary Table S1: prompts byte-for-byte against hand-typed goldens,
//! and the worked outputs decode to exactly the annotations shown.

use kiwi_core::align::anchor_spans;
use kiwi_core::spanmark::{decode_with, PromptTask};
use kiwi_core::{build_ner_prompt, build_re_prompt, EntityKind, EntityMention};

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");

struct Example {
    name: String,
    input: String,
    main: Option<EntityMention>,
    output: String,
    expected: Vec<(EntityKind, usize, usize)>,
}

fn examples() -> Vec<Example> {
    let src = std::fs::read_to_string(format!("{GOLDEN}/outputs.tsv")).unwrap();
    src.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            assert_eq!(c.len(), 7, "{l}");
            let main = (c[2] != "-").then(|| {
                let (s, e): (usize, usize) = (c[3].parse().unwrap(), c[4].parse().unwrap());
                let surface: String = c[1].chars().skip(s).take(e - s).collect();
                EntityMention::new("T1", c[2].parse().unwrap(), s, e, surface)
            });
            let expected = c[6]
                .split(',')
                .map(|x| {
                    let p: Vec<&str> = x.split(':').collect();
                    (p[0].parse().unwrap(), p[1].parse().unwrap(), p[2].parse().unwrap())
                })
                .collect();
            Example { name: c[0].into(), input: c[1].into(), main, output: c[5].into(), expected }
        })
        .collect()
}

#[test]
fn prompts_match_goldens_byte_for_byte() {
    let ex = examples();
    assert_eq!(ex.len(), 5);
    for e in ex {
        let golden = std::fs::read_to_string(format!("{GOLDEN}/{}.prompt", e.name)).unwrap();
        let built = match &e.main {
            None => build_ner_prompt(&e.input).unwrap(),
            Some(m) => build_re_prompt(&e.input, 0, m).unwrap(),
        };
        assert_eq!(built, golden, "{}", e.name);
    }
}

#[test]
fn outputs_decode_to_the_shown_annotations() {
    for e in examples() {
        let vocab = match &e.main {
            None => PromptTask::Ner.vocabulary(),
            Some(m) => PromptTask::Re(m.kind.as_main().unwrap()).vocabulary(),
        };
        let decoded = decode_with(&e.output, vocab);
        assert!(decoded.diagnostics.is_empty(), "{}: {:?}", e.name, decoded.diagnostics);
        assert_eq!(decoded.plain_text, e.input, "{}", e.name);
        let got: Vec<_> = decoded.spans.iter().map(|s| (s.kind, s.start, s.end)).collect();
        assert_eq!(got, e.expected, "{}", e.name);
        // The echo is verbatim, so anchoring is the identity.
        let anchored = anchor_spans(&e.input, &decoded);
        let anchored: Vec<_> = anchored.spans.iter().map(|s| (s.kind, s.source_start, s.source_end)).collect();
        assert_eq!(anchored, e.expected, "{}", e.name);
    }
}
