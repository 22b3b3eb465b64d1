use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use shorthand::dialogdata::{
    convert_dialogs, dedup_split_report, dialog_to_examples, duplicate_kind, read_dialogs, read_examples,
    render_canonical, split_sentences, write_dialogs_jsonl, write_examples, ContextMode, CorpusFormat, Dialog,
    DuplicateKind, Instruction,
};

fn sit_down_dialog() -> Dialog {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/sit_down_dialog.tsv");
    let mut ds = read_dialogs(BufReader::new(File::open(path).unwrap()), CorpusFormat::TdcTxt).unwrap();
    ds.remove(0)
}

#[test]
fn sentence_splitting() {
    assert_eq!(
        split_sentences("Been sitting all day. Work was just one meeting after another."),
        vec!["Been sitting all day.", "Work was just one meeting after another."]
    );
    assert_eq!(split_sentences("hello"), vec!["hello"]);
    assert_eq!(split_sentences("ok... fine"), vec!["ok...", "fine"]);
    assert!(split_sentences("   ").is_empty());
}

#[test]
fn sit_down_examples() {
    let d = sit_down_dialog();
    let ex = dialog_to_examples(&d, ContextMode::Full);
    assert_eq!(ex.len(), 6);
    assert_eq!(ex[1].context, vec!["Would you like to sit down?"]);
    assert_eq!(ex[1].shorthand.as_str(), "n,imfsu");
    // only the first sentence of a multi-sentence turn is a target
    assert_eq!(ex[3].full.normalized, "been sitting all day");
    assert_eq!(ex[3].shorthand.as_str(), "bsad");
    assert_eq!(ex[5].abbrev_len, 9);
    assert!(ex.iter().all(|e| e.noise_sigma == 0.0 && e.turn_index == e.context.len() + 1));

    let prev = dialog_to_examples(&d, ContextMode::Previous1);
    assert_eq!(prev[2].context, vec!["No, I'm fine standing up"]);
    assert_eq!(prev[2].context[..], ex[2].context[1..]);
    assert!(dialog_to_examples(&d, ContextMode::None).iter().all(|e| e.context.is_empty()));

    assert_eq!(
        render_canonical(&ex[1], Instruction::ZeroShot, true),
        "Given previous turn(s) of conversation and acronym of reply, write the full phrase.\n\
         Context: {Would you like to sit down?}. Shorthand: {n , i m f s u}. Full: {No, I'm fine standing up}"
    );
}

#[test]
fn single_turn_and_punctuation_only_targets() {
    let d = Dialog::from_texts("one", &["Hello there."]).unwrap();
    let ex = dialog_to_examples(&d, ContextMode::Previous1);
    assert_eq!(ex.len(), 1);
    assert!(ex[0].context.is_empty());

    let d = Dialog::from_texts("p", &["Hi", "...", "Bye"]).unwrap();
    let (ex, stats) = convert_dialogs(&[d], ContextMode::Full);
    assert_eq!(ex.len(), 2);
    assert_eq!(stats.dropped_empty, 1);
    // the dropped turn still counts as context
    assert_eq!(ex[1].context, vec!["Hi", "..."]);
}

#[test]
fn jsonl_round_trips() {
    let d = sit_down_dialog();
    let mut buf = Vec::new();
    write_dialogs_jsonl(&mut buf, std::slice::from_ref(&d)).unwrap();
    let back = read_dialogs(&buf[..], CorpusFormat::Jsonl).unwrap();
    assert_eq!(back, vec![d.clone()]);

    let ex = dialog_to_examples(&d, ContextMode::Full);
    let mut buf = Vec::new();
    write_examples(&mut buf, &ex).unwrap();
    assert_eq!(read_examples(&buf[..]).unwrap(), ex);
}

#[test]
fn bad_records_report_their_line() {
    let text = "{\"id\":\"a\",\"turns\":[{\"speaker\":0,\"text\":\"hi\"}]}\nnot json\n";
    let err = read_dialogs(text.as_bytes(), CorpusFormat::Jsonl).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    let empty = "{\"id\":\"a\",\"turns\":[]}\n";
    assert!(read_dialogs(empty.as_bytes(), CorpusFormat::Jsonl).is_err());
}

fn d(id: &str, turns: &[&str]) -> Dialog {
    Dialog::from_texts(id, turns).unwrap()
}

#[test]
fn dedup_fixture_with_planted_duplicates() {
    let train = vec![
        d("t0", &["a", "b", "c", "d"]),
        d("t1", &["how are you", "good", "and you", "fine", "bye"]),
        d("t2", &["one", "two"]),
    ];
    let test = vec![
        d("s0", &["A", "B", "C", "D"]),
        d("s1", &["x", "y"]),
        d("s2", &["how are you", "bad", "and you", "fine", "BYE"]),
        d("s3", &["a", "b", "z", "z"]),
        d("s4", &["one", "two"]),
        d("s5", &["one", "two", "three"]),
        d("s6", &["q"]),
        d("s7", &["a", "b", "c"]),
        d("s8", &["how are you", "good", "x", "y", "z"]),
        d("s9", &["m", "n", "o", "p"]),
    ];
    assert_eq!(duplicate_kind(&test[0], &train[0]), Some(DuplicateKind::AllTurns));
    assert_eq!(duplicate_kind(&test[2], &train[1]), Some(DuplicateKind::ThreeOrMoreTurns));
    assert_eq!(duplicate_kind(&test[3], &train[0]), None);

    let (kept, removed) = dedup_split_report(&test, &train);
    assert_eq!(kept.len(), 7);
    let ids: Vec<(&str, &str)> = removed.iter().map(|r| (r.test_id.as_str(), r.train_id.as_str())).collect();
    assert_eq!(ids, vec![("s0", "t0"), ("s2", "t1"), ("s4", "t2")]);
    let (unchanged, none) = dedup_split_report(&test[5..], &train);
    assert_eq!(unchanged.len(), 5);
    assert!(none.is_empty());
}

#[test]
fn public_corpus_fixture_loads() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/chatterbot_english.jsonl");
    let ds = read_dialogs(BufReader::new(File::open(path).unwrap()), CorpusFormat::Jsonl).unwrap();
    assert!(ds.len() > 2000);
    let (ex, _) = convert_dialogs(&ds, ContextMode::Full);
    assert_eq!(ex.len() + convert_dialogs(&ds, ContextMode::Full).1.dropped_empty, ds.iter().map(|d| d.turns.len()).sum::<usize>());
}
