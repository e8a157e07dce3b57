//! Benchmark suites and metrics: success rate, mean clearance (the negated
//! collision term), and mean end-effector path length, pooled and per seed,
//! with CSV/JSON emission for plotting.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::objective::{collision_cost, ObjectiveWeights};
use crate::planner::{check_success, plan, PlanProblem, PlannerConfig, Trajectory};
use crate::robot::RobotSpec;
use crate::sdf::{build_grid, PrimitiveScene, SdfGrid};

/// A bundle of planning problems over one robot and scene, run across seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSuite {
    /// Robot spec path, resolved relative to the suite file's directory.
    pub robot: PathBuf,
    /// Scene path, same resolution rule.
    pub scene: PathBuf,
    pub problems: Vec<PlanProblem>,
    pub seeds: Vec<u64>,
}

impl ProblemSuite {
    pub fn load(path: &Path) -> Result<Self> {
        let mut suite: ProblemSuite = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if suite.problems.is_empty() {
            return Err(Error::InvalidSpec("suite has no problems".into()));
        }
        if suite.seeds.is_empty() {
            suite.seeds = vec![0, 1, 2, 3, 4];
        }
        if let Some(dir) = path.parent() {
            if suite.robot.is_relative() {
                suite.robot = dir.join(&suite.robot);
            }
            if suite.scene.is_relative() {
                suite.scene = dir.join(&suite.scene);
            }
        }
        Ok(suite)
    }
}

/// One (problem, seed) outcome.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemRow {
    pub problem: usize,
    pub seed: u64,
    pub success: bool,
    pub clearance: f64,
    pub path_length: f64,
}

/// Accuracy plus mean/std of clearance and path length over a row set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Aggregate {
    pub accuracy: f64,
    pub clearance_mean: f64,
    pub clearance_std: f64,
    pub path_length_mean: f64,
    pub path_length_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeedAggregate {
    pub seed: u64,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

/// Full benchmark outcome; aggregates are always recomputable from the rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ProblemRow>,
    pub pooled: Aggregate,
    pub per_seed: Vec<SeedAggregate>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
        / (values.len() - 1) as f64;
    (m, var.sqrt())
}

/// Pool rows into accuracy / mean clearance / mean path length.
pub fn aggregate(rows: &[ProblemRow]) -> Aggregate {
    let n = rows.len().max(1);
    let successes = rows.iter().filter(|r| r.success).count();
    let clearances: Vec<f64> = rows.iter().map(|r| r.clearance).collect();
    let lengths: Vec<f64> = rows.iter().map(|r| r.path_length).collect();
    let (cm, cs) = mean_std(&clearances);
    let (lm, ls) = mean_std(&lengths);
    Aggregate {
        accuracy: successes as f64 / n as f64,
        clearance_mean: cm,
        clearance_std: cs,
        path_length_mean: lm,
        path_length_std: ls,
    }
}

fn assemble_report(mut rows: Vec<ProblemRow>) -> MetricsReport {
    rows.sort_by_key(|r| (r.problem, r.seed));
    let pooled = aggregate(&rows);
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let per_seed = seeds
        .into_iter()
        .map(|seed| {
            let sub: Vec<ProblemRow> =
                rows.iter().filter(|r| r.seed == seed).cloned().collect();
            SeedAggregate {
                seed,
                aggregate: aggregate(&sub),
            }
        })
        .collect();
    MetricsReport {
        rows,
        pooled,
        per_seed,
    }
}

/// Negated collision term of a trajectory: `-1/2 ||h_eps(...)||^2`, zero for
/// paths fully clear of the safety margin.
pub fn clearance(
    robot: &RobotSpec,
    grid: &SdfGrid,
    weights: &ObjectiveWeights,
    traj: &Trajectory,
) -> f64 {
    let d = robot.dof();
    let m = Mat::from_fn(traj.joints.len(), d, |i, j| traj.joints[i][j]);
    -0.5 * collision_cost(robot, grid, weights, &m)
}

/// Total distance moved by the end effector, meters.
pub fn path_length(robot: &RobotSpec, traj: &Trajectory) -> f64 {
    let mut total = 0.0;
    let mut prev: Option<[f64; 3]> = None;
    for row in &traj.joints {
        let poses = robot.forward_kinematics(row);
        let p = poses[poses.len() - 1].position;
        if let Some(q) = prev {
            total +=
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        }
        prev = Some(p);
    }
    total
}

fn mix_seed(base: u64, problem: usize) -> u64 {
    // splitmix-style mixing so per-(problem, seed) streams are independent
    let mut x = base ^ (problem as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Run every (problem, seed) pair and assemble the metrics. Per-problem
/// planner failures are recorded as unsuccessful rows; the suite never
/// aborts.
pub fn run_benchmark(suite: &ProblemSuite, config: &PlannerConfig) -> Result<MetricsReport> {
    let robot = RobotSpec::load(&suite.robot)?;
    let scene = PrimitiveScene::load(&suite.scene)?;
    let grid = build_grid(&scene, scene.resolution)?;
    let mut rows = Vec::with_capacity(suite.problems.len() * suite.seeds.len());
    for (pi, problem) in suite.problems.iter().enumerate() {
        for &seed in &suite.seeds {
            let mut cfg = config.clone();
            cfg.seed = mix_seed(seed, pi);
            let row = match plan(&cfg, &robot, &grid, problem) {
                Ok(res) => {
                    let goal = if cfg.constrain_goal {
                        Some(problem.goal.as_slice())
                    } else {
                        None
                    };
                    let success = check_success(
                        &robot,
                        &grid,
                        &res.selected_dense,
                        &res.selected,
                        &problem.start,
                        goal,
                    );
                    ProblemRow {
                        problem: pi,
                        seed,
                        success,
                        clearance: clearance(&robot, &grid, &cfg.weights, &res.selected),
                        path_length: path_length(&robot, &res.selected),
                    }
                }
                Err(_) => ProblemRow {
                    problem: pi,
                    seed,
                    success: false,
                    clearance: f64::NEG_INFINITY,
                    path_length: 0.0,
                },
            };
            rows.push(row);
        }
    }
    Ok(assemble_report(rows))
}

/// Rows as CSV; aggregates are recomputed on parse.
pub fn emit_csv(report: &MetricsReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["problem", "seed", "success", "clearance", "path_length"])
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    for r in &report.rows {
        w.write_record([
            r.problem.to_string(),
            r.seed.to_string(),
            r.success.to_string(),
            format!("{:?}", r.clearance),
            format!("{:?}", r.path_length),
        ])
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidSpec(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidSpec(e.to_string()))
}

pub fn parse_csv(text: &str) -> Result<MetricsReport> {
    let mut rows = Vec::new();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::InvalidSpec(e.to_string()))?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::InvalidSpec("short CSV record".into()))
        };
        rows.push(ProblemRow {
            problem: field(0)?
                .parse()
                .map_err(|_| Error::InvalidSpec("bad problem index".into()))?,
            seed: field(1)?
                .parse()
                .map_err(|_| Error::InvalidSpec("bad seed".into()))?,
            success: field(2)?
                .parse()
                .map_err(|_| Error::InvalidSpec("bad success flag".into()))?,
            clearance: field(3)?
                .parse()
                .map_err(|_| Error::InvalidSpec("bad clearance".into()))?,
            path_length: field(4)?
                .parse()
                .map_err(|_| Error::InvalidSpec("bad path length".into()))?,
        });
    }
    Ok(assemble_report(rows))
}

pub fn emit_json(report: &MetricsReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn parse_json(text: &str) -> Result<MetricsReport> {
    Ok(serde_json::from_str(text)?)
}
