//! Browser bindings for the planner demo. Every export takes plain values and
//! returns a JSON string, so the page needs no generated type glue.
//!
//! The `*_json` functions are the native API; the `#[wasm_bindgen]` wrappers
//! only convert errors.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use barplan::config::{HeuristicKind, PlannerConfig};
use barplan::fixtures::{pocket, robot_for, shell, stack2, tetrahedron, triangle};
use barplan::io::StructureFile;
use barplan::model::BarStructure;
use barplan::motion::PlanContext;
use barplan::search::{heuristic_stiffplan, run_search, Direction, SearchFailure, SearchOptions, SearchStats};
use barplan::stiffness::{deformation_history, HistoryRow, StiffnessChecker};

type Generator = (&'static str, fn() -> BarStructure);

/// Fixtures small enough to plan interactively in a browser tab.
const DEMO_FIXTURES: [Generator; 5] = [
    ("stack2", stack2),
    ("triangle", triangle),
    ("tetrahedron", tetrahedron),
    ("shell", shell),
    ("pocket", pocket),
];

fn structure(name: &str) -> Result<BarStructure, String> {
    DEMO_FIXTURES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, f)| f())
        .ok_or_else(|| format!("unknown fixture `{name}`"))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

#[derive(Serialize)]
struct FixtureInfo {
    name: &'static str,
    mode: String,
    bars: usize,
    elements: usize,
}

pub fn fixtures_json() -> String {
    let list: Vec<FixtureInfo> = DEMO_FIXTURES
        .iter()
        .map(|(name, f)| {
            let s = f();
            FixtureInfo {
                name,
                mode: s.mode.to_string(),
                bars: s.members().len(),
                elements: s.num_elements(),
            }
        })
        .collect();
    to_json(&list)
}

pub fn structure_json(name: &str) -> Result<String, String> {
    Ok(to_json(&StructureFile::from_structure(&structure(name)?)))
}

#[derive(Serialize)]
struct History {
    tolerance: f64,
    sequence: Vec<usize>,
    rows: Vec<HistoryRow>,
}

/// Deformation after each step of the stiffness-only greedy sequence.
pub fn stiffness_history_json(name: &str, tolerance: f64) -> Result<String, String> {
    if !(tolerance > 0.0) {
        return Err("tolerance must be positive".into());
    }
    let s = structure(name)?;
    let mut checker = StiffnessChecker::new(tolerance);
    let h = heuristic_stiffplan(&s, &mut checker);
    let sequence = h
        .sequence
        .ok_or_else(|| format!("no construction order keeps `{name}` within {tolerance} m"))?;
    let rows = deformation_history(&s, &sequence).map_err(|e| e.to_string())?;
    Ok(to_json(&History { tolerance, sequence, rows }))
}

#[derive(Serialize)]
struct PlanSummary {
    outcome: String,
    message: Option<String>,
    sequence: Option<Vec<usize>>,
    trajectories: usize,
    waypoints: usize,
    stats: SearchStats,
}

fn parse_direction(direction: &str) -> Result<Direction, String> {
    match direction {
        "backward" => Ok(Direction::Backward),
        "forward" => Ok(Direction::Forward),
        other => Err(format!("unknown direction `{other}`")),
    }
}

fn plan_summary(s: &BarStructure, direction: Direction, heuristic: HeuristicKind, seed: u64) -> PlanSummary {
    let (robot, workcell) = robot_for(s.mode);
    let cfg = PlannerConfig {
        heuristic,
        seed,
        ..PlannerConfig::default()
    };
    let ctx = PlanContext {
        structure: s,
        robot: &robot,
        workcell: &workcell,
        config: &cfg,
    };
    let (_, result) = run_search(&ctx, direction, &SearchOptions::default());
    let (trajectories, waypoints, message) = match &result.outcome {
        Ok(plan) => {
            let all: Vec<_> = plan
                .steps
                .iter()
                .flat_map(|st| st.trajectories())
                .chain(&plan.final_transit.trajectories)
                .collect();
            (all.len(), all.iter().map(|t| t.waypoints.len()).sum(), None)
        }
        Err(SearchFailure::FullStructureTooFlexible { max_translation_norm }) => {
            (0, 0, Some(format!("complete structure deflects {max_translation_norm:.3e} m")))
        }
        Err(SearchFailure::Splice(e)) => (0, 0, Some(e.to_string())),
        Err(SearchFailure::Invalid(v)) => (0, 0, Some(format!("{} violations", v.len()))),
        Err(_) => (0, 0, None),
    };
    PlanSummary {
        outcome: result.stats.outcome.clone(),
        message,
        sequence: result.sequence,
        trajectories,
        waypoints,
        stats: result.stats,
    }
}

/// Plans a fixture in one direction.
pub fn plan_json(name: &str, direction: &str, heuristic: &str, seed: u64) -> Result<String, String> {
    let s = structure(name)?;
    let heuristic: HeuristicKind = heuristic.parse()?;
    Ok(to_json(&plan_summary(&s, parse_direction(direction)?, heuristic, seed)))
}

/// Backward and matched forward search on the same fixture.
pub fn compare_json(name: &str, heuristic: &str, seed: u64) -> Result<String, String> {
    let s = structure(name)?;
    let heuristic: HeuristicKind = heuristic.parse()?;
    let rows = [Direction::Backward, Direction::Forward].map(|d| plan_summary(&s, d, heuristic, seed));
    Ok(to_json(&rows))
}

#[wasm_bindgen]
pub fn fixtures() -> String {
    fixtures_json()
}

#[wasm_bindgen]
pub fn structure_geometry(name: &str) -> Result<String, JsError> {
    structure_json(name).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn stiffness_history(name: &str, tolerance: f64) -> Result<String, JsError> {
    stiffness_history_json(name, tolerance).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn plan(name: &str, direction: &str, heuristic: &str, seed: u32) -> Result<String, JsError> {
    plan_json(name, direction, heuristic, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compare(name: &str, heuristic: &str, seed: u32) -> Result<String, JsError> {
    compare_json(name, heuristic, seed.into()).map_err(|e| JsError::new(&e))
}
