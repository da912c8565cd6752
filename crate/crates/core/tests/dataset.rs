use std::path::PathBuf;

use mmdfn::data::{load_dataset, parse_dataset};
use mmdfn::encoders::Modality;
use mmdfn::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn loads_the_tiny_fixture() {
    let data = load_dataset(&fixture("tiny.jsonl")).unwrap();
    assert_eq!(data.len(), 2);
    assert_eq!(data.class_names(), ["neutral", "happy"]);
    assert_eq!(data.labels(), [1, 0, 1, 0, 0]);
    let first = &data.conversations()[0];
    assert_eq!(first.speakers(), ["A", "B"]);
    assert_eq!(first.feature_matrix(Modality::Textual).row(2), [0.5; 4]);
}

#[test]
fn save_and_reload_is_exact() {
    let data = load_dataset(&fixture("tiny.jsonl")).unwrap();
    assert_eq!(parse_dataset(&data.to_text()).unwrap(), data);
}

#[test]
fn a_missing_modality_is_reported_with_its_line() {
    match load_dataset(&fixture("missing_visual.jsonl")) {
        Err(e) => {
            let text = e.to_string();
            assert!(text.contains("line 2") && text.contains('v'), "{text}");
        }
        Ok(_) => panic!("missing `v` accepted"),
    }
}

#[test]
fn a_missing_file_is_an_io_error() {
    let err = load_dataset(&fixture("absent.jsonl")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
}
