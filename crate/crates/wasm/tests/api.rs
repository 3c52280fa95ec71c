use barplan_wasm::{compare_json, fixtures_json, plan_json, stiffness_history_json, structure_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn lists_the_demo_fixtures() {
    let list = parse(&fixtures_json());
    let names: Vec<&str> = list.as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["stack2", "triangle", "tetrahedron", "shell", "pocket"]);
    assert_eq!(list[4]["mode"], "assembly");
    assert_eq!(list[4]["bars"], 9);
}

#[test]
fn geometry_is_a_structure_document() {
    let doc = parse(&structure_json("triangle").unwrap());
    assert_eq!(doc["format_version"], 1);
    assert_eq!(doc["elements"].as_array().unwrap().len(), 3);
    assert!(structure_json("arch").is_err());
}

#[test]
fn history_follows_the_greedy_sequence() {
    let doc = parse(&stiffness_history_json("stack2", 0.005).unwrap());
    assert_eq!(doc["sequence"], serde_json::json!([0, 1]));
    assert_eq!(doc["rows"].as_array().unwrap().len(), 2);
    assert!(stiffness_history_json("stack2", 1e-12).is_err());
    assert!(stiffness_history_json("stack2", -1.0).is_err());
}

#[test]
fn plans_and_compares() {
    let doc = parse(&plan_json("stack2", "backward", "stiff-plan", 0).unwrap());
    assert_eq!(doc["outcome"], "plan");
    assert_eq!(doc["sequence"], serde_json::json!([0, 1]));
    assert!(doc["trajectories"].as_u64().unwrap() >= 5);
    assert!(plan_json("stack2", "sideways", "stiff-plan", 0).is_err());
    assert!(plan_json("stack2", "backward", "lucky", 0).is_err());

    let rows = parse(&compare_json("shell", "stiff-plan", 0).unwrap());
    let back = rows[0]["stats"]["states_expanded"].as_u64().unwrap();
    let fwd = rows[1]["stats"]["states_expanded"].as_u64().unwrap();
    assert_eq!(rows[0]["stats"]["direction"], "backward");
    assert!(back < fwd);
}
