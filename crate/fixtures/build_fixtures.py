#!/usr/bin/env python3
"""Build the toy corpus gold files from hand-written annotations.

Each mention is given by its surface and (1-based) occurrence inside its
sentence; offsets are Unicode code-point indices. Mentions are listed in the
order the pipeline assigns ids: main entities in text order, then for each
main (in order) its modifiers in text order, each modifier once.
Run from this directory: python3 build_fixtures.py
"""
import json
import os

NOTES = {
    "note01": [
        ("Patient reports severe chest pain since yesterday.",
         [("chest pain", "problem", [("severe", "severity"), ("since yesterday", "temporal")])]),
        ("No fever or chills.",
         [("fever", "problem", [("No", "negation")]), ("chills", "problem", [("No", "negation")])]),
        ("Hgb 10.6 gm / dL.", [("Hgb", "test", [("10.6 gm / dL", "labvalue")])]),
        ("Aspirin 81 mg PO daily.",
         [("Aspirin", "drug", [("81 mg", "strength"), ("PO", "route"), ("daily", "frequency")])]),
    ],
    "note02": [
        ("Probable pneumonia in the left lower lobe.",
         [("pneumonia", "problem", [("Probable", "uncertain"), ("left lower lobe", "bodyloc")])]),
        ("Chest X-ray was negative.", [("Chest X-ray", "test", [("negative", "labvalue")])]),
        ("Started on azithromycin 500 mg tablet for 5 days.",
         [("azithromycin", "drug", [("500 mg", "strength"), ("tablet", "form"), ("for 5 days", "duration")])]),
    ],
    "note03": [
        ("Mother has history of diabetes.", [("diabetes", "problem", [("Mother", "subject")])]),
        ("Underwent appendectomy in 2010.", [("appendectomy", "treatment", [("in 2010", "temporal")])]),
        ("No surgery was done.", [("surgery", "treatment", [("No", "negation")])]),
        ("Headache is improving.", [("Headache", "problem", [("improving", "course")])]),
    ],
    "note04": [
        ("Cough worsened at night.", [("Cough", "problem", [("worsened", "course"), ("at night", "temporal")])]),
        ("WBC was normal (ref 4.0 - 11.0).",
         [("WBC", "test", [("normal", "labvalue"), ("4.0 - 11.0", "reference_range")])]),
        ("Metformin 500 mg BID.", [("Metformin", "drug", [("500 mg", "strength"), ("BID", "frequency")])]),
    ],
    "note05": [
        ("Café worker with mild rash on the arm.",
         [("rash", "problem", [("mild", "severity"), ("arm", "bodyloc")])]),
        ("No rash today.", [("rash", "problem", [("No", "negation"), ("today", "temporal")])]),
        # "twice weekly" is a frequency, which treatments do not take.
        ("Physical therapy twice weekly.", [("Physical therapy", "treatment", [])]),
    ],
}

# Entries that never appear in gold because no main in their sentence permits them.
EXTRA_LEXICON = [("twice weekly", "frequency")]

SEPARATOR = {"note01": "\n", "note02": " ", "note03": "\n\n", "note04": " ", "note05": "\n"}


def find(sentence, surface):
    i = sentence.find(surface)
    assert i >= 0, (sentence, surface)
    assert sentence.find(surface, i + 1) < 0, f"ambiguous {surface!r} in {sentence!r}"
    return i


def build(doc_id, sentences, sep):
    text = sep.join(s for s, _ in sentences) + "\n"
    mentions, relations = [], []
    main_ids, pending = [], []
    offset = 0
    for sentence, mains in sentences:
        for surface, kind, mods in mains:
            start = offset + find(sentence, surface)
            mid = f"T{len(mentions) + 1}"
            mentions.append({"id": mid, "type": kind, "start": start, "end": start + len(surface), "surface": surface})
            pending.append((mid, offset, sentence, mods))
        offset += len(sentence) + len(sep)
    seen = {}
    for mid, base, sentence, mods in pending:
        for surface, label in sorted(mods, key=lambda m: find(sentence, m[0])):
            start = base + find(sentence, surface)
            key = (label, start)
            if key not in seen:
                seen[key] = f"T{len(mentions) + 1}"
                mentions.append({"id": seen[key], "type": label, "start": start,
                                 "end": start + len(surface), "surface": surface})
            relations.append({"main": mid, "modifier": seen[key], "label": label})
    for m in mentions:
        assert text[m["start"]:m["end"]] == m["surface"]
    return text, {"schema_version": 1, "doc_id": doc_id, "mentions": mentions, "relations": relations}


def dump(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


lexicon = {}
for doc_id, sentences in NOTES.items():
    text, gold = build(doc_id, sentences, SEPARATOR[doc_id])
    with open(f"toy/notes/{doc_id}.txt", "w", encoding="utf-8") as f:
        f.write(text)
    dump(f"toy/gold/{doc_id}.kiwi.json", gold)
    for m in gold["mentions"]:
        assert lexicon.setdefault(m["surface"], m["type"]) == m["type"]
for surface, kind in EXTRA_LEXICON:
    lexicon[surface] = kind
with open("toy/lexicon.tsv", "w", encoding="utf-8") as f:
    f.write("# surface\tclass\n")
    for surface in sorted(lexicon):
        f.write(f"{surface}\t{lexicon[surface]}\n")

# Degraded-prediction fixture: NER tp=3, fp=1, fn=2 -> P=0.75, R=0.6.
DEGRADED = {
    "a": ("Fever, cough and rash.", [("Fever", "problem"), ("cough", "problem"), ("rash", "problem")],
          [("Fever", "problem"), ("cough", "problem")]),
    "b": ("Hgb low. Aspirin given.", [("Hgb", "test"), ("Aspirin", "drug")],
          [("Hgb", "test"), ("given", "problem")]),
}
for doc_id, (text, gold, pred) in DEGRADED.items():
    with open(f"degraded/notes/{doc_id}.txt", "w", encoding="utf-8") as f:
        f.write(text + "\n")
    for side, items in (("gold", gold), ("pred", pred)):
        mentions = []
        for surface, kind in items:
            start = find(text, surface)
            mentions.append({"id": f"T{len(mentions) + 1}", "type": kind, "start": start,
                             "end": start + len(surface), "surface": surface})
        dump(f"degraded/{side}/{doc_id}.kiwi.json",
             {"schema_version": 1, "doc_id": doc_id, "mentions": mentions, "relations": []})
