use std::path::PathBuf;

use parrot_core::data::{
    format_feature_table, load_feature_table, pair, write_feature_table, DataError,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pfv").join(name)
}

fn load_err(name: &str) -> DataError {
    match load_feature_table(fixture(name)) {
        Ok(_) => panic!("{name} should not load"),
        Err(e) => e,
    }
}

#[test]
fn good_file_loads() {
    let t = load_feature_table(fixture("good.pfv")).unwrap();
    assert_eq!((t.len(), t.dim()), (3, 3));
    assert_eq!(t.class_names(), &["neutral", "happy"]);
    assert_eq!(t.utterance_ids(), &["u2", "u1", "u3"]);
    assert_eq!(t.matrix().get(0, 1), -1e-3);
}

#[test]
fn good_file_survives_write_and_reload() {
    let t = load_feature_table(fixture("good.pfv")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("copy.pfv");
    write_feature_table(&t, &out).unwrap();
    let back = load_feature_table(&out).unwrap();
    assert_eq!(back, t);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), format_feature_table(&back));
}

#[test]
fn header_errors() {
    for name in [
        "empty.pfv",
        "missing_magic.pfv",
        "unknown_key.pfv",
        "missing_dim.pfv",
        "bad_dim.pfv",
        "duplicate_label_name.pfv",
        "repeated_key.pfv",
    ] {
        assert!(matches!(load_err(name), DataError::MalformedHeader(_)), "{name}");
    }
}

#[test]
fn ragged_rows() {
    assert!(matches!(
        load_err("ragged_short.pfv"),
        DataError::RaggedRow { line: 3, expected: 3, got: 2 }
    ));
    assert!(matches!(
        load_err("ragged_long.pfv"),
        DataError::RaggedRow { line: 2, expected: 3, got: 4 }
    ));
}

#[test]
fn value_errors() {
    assert!(matches!(load_err("bad_number.pfv"), DataError::BadNumber { column: 1, .. }));
    assert!(matches!(load_err("nan_value.pfv"), DataError::NonFinite { line: 2, column: 1 }));
    assert!(matches!(load_err("inf_value.pfv"), DataError::NonFinite { line: 2, column: 2 }));
}

#[test]
fn row_identity_errors() {
    assert!(matches!(load_err("duplicate_id.pfv"), DataError::DuplicateId(ref id) if id == "u1"));
    assert!(matches!(load_err("unknown_label.pfv"), DataError::UnknownLabel { ref label, .. } if label == "angry"));
    assert!(matches!(load_err("empty_id.pfv"), DataError::EmptyId { line: 2 }));
    assert!(matches!(load_err("header_only.pfv"), DataError::EmptyTable));
}

#[test]
fn missing_file_is_io() {
    assert!(matches!(load_err("does_not_exist.pfv"), DataError::Io { .. }));
}

#[test]
fn good_file_pairs_with_itself() {
    let t = load_feature_table(fixture("good.pfv")).unwrap();
    let d = pair(&t, &t).unwrap();
    assert_eq!(d.utterance_ids(), &["u1", "u2", "u3"]);
    assert_eq!(d.labels(), &[0, 1, 1]);
}
