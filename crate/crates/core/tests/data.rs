use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use typegraph::data::{
    build_batches, encode_all, load_dataset, write_dataset, EncodeLimits, MentionKind, Position, TypeVocabulary,
    WordVocabulary, PAD_ID, UNK_ID,
};

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
    path
}

#[test]
fn files_to_batches() {
    let dir = tempfile::tempdir().unwrap();
    let types = write(&dir, "types.tsv", "person\tgeneral\nlocation\tgeneral\nathlete\tfine\ntennis_player\tultra\n");
    let emb = write(&dir, "emb.txt", "today 1 0\ntaiwan 0 1\nis 1 1\nhe 2 0\nwon -1 1\n");
    let data = write(
        &dir,
        "train.jsonl",
        concat!(
            r#"{"left_context_token":["Today",","],"mention_span":"Taiwan","right_context_token":["is"],"y_str":["location"]}"#,
            "\n",
            r#"{"left_context_token":[],"mention_span":"He","right_context_token":["won"],"y_str":["person","athlete","tennis_player"]}"#,
            "\n",
            r#"{"left_context_token":["x"],"mention_span":"it","right_context_token":[],"y_str":["organization"]}"#,
            "\n",
        ),
    );
    let tv = TypeVocabulary::load(&types).unwrap();
    let wv = WordVocabulary::load(&emb, 2).unwrap();
    assert_eq!((tv.len(), wv.len()), (4, 7));
    assert_eq!(wv.vector(PAD_ID), &[0.0, 0.0]);
    assert_eq!(wv.vector(UNK_ID), &[0.6, 0.6]);

    let (samples, report) = load_dataset(&data, &tv).unwrap();
    assert_eq!((report.lines, report.kept, report.dropped_unknown_type), (3, 2, 1));
    assert_eq!(samples[1].mention_kind, MentionKind::Pronoun);
    assert_eq!(samples[0].mention_kind, MentionKind::Other);

    let encoded = encode_all(&samples, &wv, &tv, &EncodeLimits::default());
    assert_eq!(encoded[0].gold, vec![0, 1, 0, 0]);
    assert_eq!(encoded[1].gold, vec![1, 0, 1, 1]);
    let inside = encoded[0].positions.iter().filter(|p| **p == Position::Inside).count();
    assert_eq!(inside, 1);

    let batches = build_batches(&encoded, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(batches.len(), 2);

    // writing and reloading keeps every sample
    let out = dir.path().join("copy.jsonl");
    write_dataset(&out, &samples).unwrap();
    let (again, _) = load_dataset(&out, &tv).unwrap();
    assert_eq!(again, samples);
}

#[test]
fn loading_is_order_stable() {
    let dir = tempfile::tempdir().unwrap();
    let emb = write(&dir, "emb.txt", "b 1 0\na 0 1\nc 1 1\n");
    let x = WordVocabulary::load(&emb, 2).unwrap();
    let y = WordVocabulary::load(&emb, 2).unwrap();
    for tok in ["a", "b", "c", "zzz"] {
        assert_eq!(x.id(tok), y.id(tok));
    }
    assert_eq!(x.id("b") + 1, x.id("a"));
    assert_eq!(x.id("zzz"), UNK_ID);
    let types = write(&dir, "t.tsv", "person\tgeneral\nperson\tfine\n");
    let err = TypeVocabulary::load(&types).unwrap_err().to_string();
    assert!(err.contains('2'), "{err}");
}
