//! The committed `fixtures/` directory must match the generator. Set
//! `BARPLAN_BLESS=1` to rewrite it.

use std::path::PathBuf;

use barplan::fixtures::bundled_files;
use barplan::io::{parse_robot, parse_structure, structure_to_json};

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn committed_fixtures_match_generator() {
    let bless = std::env::var("BARPLAN_BLESS").is_ok_and(|v| v == "1");
    for (name, text) in bundled_files() {
        let path = dir().join(&name);
        if bless {
            std::fs::write(&path, &text).unwrap();
        }
        let on_disk = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(on_disk, text, "{name} is stale; rerun with BARPLAN_BLESS=1");
    }
}

#[test]
fn bundled_structures_round_trip() {
    for (name, text) in bundled_files() {
        if name.starts_with("robot_") {
            let (robot, wc) = parse_robot(&text).unwrap();
            assert_eq!(barplan::io::robot_to_json(&robot, &wc) + "\n", text, "{name}");
        } else if name == "floating.json" {
            let err = parse_structure(&text).unwrap_err();
            let cause = std::error::Error::source(&err).map(|c| c.to_string()).unwrap_or_default();
            assert!(cause.contains("grounded"), "{err}: {cause}");
        } else {
            let s = parse_structure(&text).unwrap();
            assert_eq!(structure_to_json(&s) + "\n", text, "{name}");
        }
    }
}
