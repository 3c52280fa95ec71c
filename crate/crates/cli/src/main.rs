//! `barplan`: plan, simulate, validate and compare bar-structure constructions.
//!
//! Exit codes: 0 success, 1 infeasible or invalid, 2 budget exhausted,
//! 3 input or I/O error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use barplan::config::{HeuristicKind, PlannerConfig};
use barplan::fixtures::{bundled_files, robot_for};
use barplan::io::{self, PlanFile, StatsFile, FORMAT_VERSION};
use barplan::kinematics::RobotModel;
use barplan::model::BarStructure;
use barplan::motion::{PlanContext, Workcell};
use barplan::search::{run_search, validate_plan, Direction, SearchFailure, SearchOptions};
use barplan::stiffness::deformation_history;

const EXIT_OK: u8 = 0;
const EXIT_INFEASIBLE: u8 = 1;
const EXIT_TIMEOUT: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "barplan", version, about = "Construction sequence and motion planning for bar structures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeuristicArg {
    StiffPlan,
    EuclideanDist,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Backward,
    Forward,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a construction sequence with robot trajectories.
    Plan {
        structure: PathBuf,
        /// Robot cell file; defaults to the bundled cell for the structure's mode.
        #[arg(long)]
        robot: Option<PathBuf>,
        /// Planner configuration (JSON); missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        heuristic: Option<HeuristicArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Stiffness tolerance (m).
        #[arg(long)]
        tolerance: Option<f64>,
        /// Wall-clock budget for the search (s).
        #[arg(long)]
        time_limit: Option<f64>,
        #[arg(long)]
        max_expansions: Option<usize>,
        #[arg(long, value_enum, default_value = "backward")]
        direction: DirectionArg,
        /// Plan output path.
        #[arg(short, long, default_value = "plan.json")]
        output: PathBuf,
        /// Search statistics output path.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// JSON-lines scene dump output path.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Deformation history of a plan's construction sequence, as CSV.
    Simulate {
        structure: PathBuf,
        plan: PathBuf,
        /// CSV output path; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check a plan against a structure and robot cell.
    Validate {
        structure: PathBuf,
        robot: PathBuf,
        plan: PathBuf,
    },
    /// Compare search statistics files.
    Stats {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Also write the table as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write the bundled structures and robot cells to a directory.
    Fixtures { dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { EXIT_INPUT } else { EXIT_OK });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_structure(path: &Path) -> Result<BarStructure> {
    io::parse_structure(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn load_robot(path: &Path) -> Result<(RobotModel, Workcell)> {
    io::parse_robot(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn load_plan(path: &Path, structure: &BarStructure) -> Result<PlanFile> {
    let plan = io::parse_plan(&read(path)?).with_context(|| format!("in {}", path.display()))?;
    plan.check_structure(structure).with_context(|| format!("in {}", path.display()))?;
    Ok(plan)
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Plan {
            structure,
            robot,
            config,
            heuristic,
            seed,
            tolerance,
            time_limit,
            max_expansions,
            direction,
            output,
            stats,
            scene,
        } => {
            let s = load_structure(&structure)?;
            let (robot, workcell) = match robot {
                Some(p) => load_robot(&p)?,
                None => robot_for(s.mode),
            };
            let mut cfg: PlannerConfig = match config {
                Some(p) => serde_json::from_str(&read(&p)?).with_context(|| format!("in {}", p.display()))?,
                None => PlannerConfig::default(),
            };
            if let Some(h) = heuristic {
                cfg.heuristic = match h {
                    HeuristicArg::StiffPlan => HeuristicKind::StiffPlan,
                    HeuristicArg::EuclideanDist => HeuristicKind::EuclideanDist,
                };
            }
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.tolerance = tolerance.unwrap_or(cfg.tolerance);
            cfg.time_limit = time_limit.unwrap_or(cfg.time_limit);
            if max_expansions.is_some() {
                cfg.max_expansions = max_expansions;
            }
            if let Err(msg) = cfg.validate() {
                bail!("invalid configuration: {msg}");
            }
            let direction = match direction {
                DirectionArg::Backward => Direction::Backward,
                DirectionArg::Forward => Direction::Forward,
            };
            cmd_plan(&s, &robot, &workcell, &cfg, direction, &output, stats.as_deref(), scene.as_deref())
        }
        Command::Simulate { structure, plan, output } => {
            let s = load_structure(&structure)?;
            let plan = load_plan(&plan, &s)?;
            let rows = deformation_history(&s, &plan.sequence).context("simulating the construction sequence")?;
            let csv = io::history_csv(&rows);
            match output {
                Some(p) => write(&p, &csv)?,
                None => print!("{csv}"),
            }
            Ok(EXIT_OK)
        }
        Command::Validate { structure, robot, plan } => {
            let s = load_structure(&structure)?;
            let (robot, workcell) = load_robot(&robot)?;
            let plan = load_plan(&plan, &s)?;
            let ctx = PlanContext {
                structure: &s,
                robot: &robot,
                workcell: &workcell,
                config: &plan.config,
            };
            let report = validate_plan(&ctx, &plan.plan());
            if report.is_empty() {
                println!("valid: {} steps, no violations", plan.steps.len());
                Ok(EXIT_OK)
            } else {
                for v in &report {
                    let step = v.step.map_or("-".to_string(), |s| s.to_string());
                    println!("step {step}: {:?}: {}", v.kind, v.message);
                }
                println!("{} violation(s)", report.len());
                Ok(EXIT_INFEASIBLE)
            }
        }
        Command::Stats { files, json } => {
            let loaded = files
                .iter()
                .map(|p| {
                    let s = io::parse_stats(&read(p)?).with_context(|| format!("in {}", p.display()))?;
                    Ok((p.display().to_string(), s))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = stats_table(&loaded);
            print!("{}", render_table(&table));
            if let Some(p) = json {
                write(&p, &(serde_json::to_string_pretty(&table)? + "\n"))?;
            }
            Ok(EXIT_OK)
        }
        Command::Fixtures { dir } => {
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for (name, text) in bundled_files() {
                write(&dir.join(&name), &text)?;
                println!("{}", dir.join(&name).display());
            }
            Ok(EXIT_OK)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_plan(
    s: &BarStructure,
    robot: &RobotModel,
    workcell: &Workcell,
    cfg: &PlannerConfig,
    direction: Direction,
    output: &Path,
    stats_path: Option<&Path>,
    scene_path: Option<&Path>,
) -> Result<u8> {
    let ctx = PlanContext {
        structure: s,
        robot,
        workcell,
        config: cfg,
    };
    let (_, result) = run_search(&ctx, direction, &SearchOptions::default());
    let st = &result.stats;
    eprintln!(
        "{}: {} elements, {} expanded, {} dead ends, {} backtracks, {:.1} s",
        st.outcome,
        st.elements,
        st.states_expanded,
        st.dead_ends,
        st.backtracks,
        st.wall_time.heuristic + st.wall_time.search + st.wall_time.splice + st.wall_time.validate
    );
    if let Some(p) = stats_path {
        let file = StatsFile {
            format_version: FORMAT_VERSION,
            structure_hash: io::structure_hash(s),
            seed: cfg.seed,
            stats: result.stats.clone(),
        };
        write(p, &(serde_json::to_string_pretty(&file)? + "\n"))?;
    }
    let code = match result.outcome {
        Ok(plan) => {
            if let Some(p) = scene_path {
                write(p, &io::scene_jsonl(s, Some((robot, workcell)), Some(&plan)))?;
            }
            let sequence = plan.sequence.clone();
            write(output, &(PlanFile::new(s, robot, cfg, plan).to_json() + "\n"))?;
            println!("sequence: {sequence:?}");
            EXIT_OK
        }
        Err(failure) => {
            if let Some(p) = scene_path {
                write(p, &io::scene_jsonl(s, Some((robot, workcell)), None))?;
            }
            match failure {
                SearchFailure::FullStructureTooFlexible { max_translation_norm } => {
                    eprintln!(
                        "infeasible: complete structure deflects {max_translation_norm:.3e} m, tolerance {:.3e} m",
                        cfg.tolerance
                    );
                    EXIT_INFEASIBLE
                }
                SearchFailure::Exhausted => {
                    eprintln!("infeasible: no construction sequence under the configured candidate sets");
                    EXIT_INFEASIBLE
                }
                SearchFailure::Timeout => {
                    eprintln!("budget exhausted after {} expansions", result.stats.states_expanded);
                    EXIT_TIMEOUT
                }
                SearchFailure::Splice(e) => {
                    eprintln!("could not join the element steps into a plan: {e}");
                    EXIT_INFEASIBLE
                }
                SearchFailure::Invalid(report) => {
                    for v in &report {
                        eprintln!("violation at step {:?}: {:?}: {}", v.step, v.kind, v.message);
                    }
                    EXIT_INFEASIBLE
                }
            }
        }
    };
    Ok(code)
}

#[derive(Serialize)]
struct Row {
    file: String,
    structure_hash: String,
    direction: Direction,
    heuristic: HeuristicKind,
    seed: u64,
    outcome: String,
    elements: usize,
    states_expanded: usize,
    states_generated: usize,
    dead_ends: usize,
    backtracks: usize,
    wall_time: f64,
    /// All files with the same structure, direction and heuristic report the
    /// same counts.
    consistent: bool,
}

fn stats_table(files: &[(String, StatsFile)]) -> Vec<Row> {
    let counts = |s: &StatsFile| {
        (
            s.stats.outcome.clone(),
            s.stats.states_expanded,
            s.stats.states_generated,
            s.stats.dead_ends,
            s.stats.backtracks,
        )
    };
    let mut groups: BTreeMap<(String, String), Vec<_>> = BTreeMap::new();
    for (_, s) in files {
        let key = (s.structure_hash.clone(), format!("{:?}/{:?}", s.stats.direction, s.stats.heuristic));
        groups.entry(key).or_default().push(counts(s));
    }
    files
        .iter()
        .map(|(name, s)| {
            let key = (s.structure_hash.clone(), format!("{:?}/{:?}", s.stats.direction, s.stats.heuristic));
            let group = &groups[&key];
            let w = s.stats.wall_time;
            Row {
                file: name.clone(),
                structure_hash: s.structure_hash.clone(),
                direction: s.stats.direction,
                heuristic: s.stats.heuristic,
                seed: s.seed,
                outcome: s.stats.outcome.clone(),
                elements: s.stats.elements,
                states_expanded: s.stats.states_expanded,
                states_generated: s.stats.states_generated,
                dead_ends: s.stats.dead_ends,
                backtracks: s.stats.backtracks,
                wall_time: w.heuristic + w.search + w.splice + w.validate,
                consistent: group.iter().all(|c| *c == group[0]),
            }
        })
        .collect()
}

fn render_table(rows: &[Row]) -> String {
    let header = [
        "file", "structure", "direction", "heuristic", "seed", "outcome", "elements", "expanded", "generated",
        "dead_ends", "backtracks", "wall_s", "consistent",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.file.clone(),
                r.structure_hash.chars().take(12).collect(),
                format!("{:?}", r.direction).to_lowercase(),
                match r.heuristic {
                    HeuristicKind::StiffPlan => "stiff-plan".into(),
                    HeuristicKind::EuclideanDist => "euclidean-dist".into(),
                },
                r.seed.to_string(),
                r.outcome.clone(),
                r.elements.to_string(),
                r.states_expanded.to_string(),
                r.states_generated.to_string(),
                r.dead_ends.to_string(),
                r.backtracks.to_string(),
                format!("{:.2}", r.wall_time),
                if r.consistent { "yes" } else { "no" }.into(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<String>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.iter().map(|s| s.to_string()).collect());
    for r in body {
        out += &line(r);
    }
    out
}
