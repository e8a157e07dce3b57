use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use vgpmp::bench::{emit_csv, emit_json, run_benchmark, ProblemSuite};
use vgpmp::gp::{kl_divergence, LowerTri};
use vgpmp::kernels::MaternFamily;
use vgpmp::linalg::Mat;
use vgpmp::objective::{ObjectiveWeights, Targets};
use vgpmp::optimizer::{
    finite_difference_gradient, gradient, Params, TrainableSet,
};
use vgpmp::planner::{intervals, plan, PlanProblem, PlannerConfig, Trajectory};
use vgpmp::robot::{DhJoint, RobotSpec, SphereAttachment};
use vgpmp::sdf::{build_grid, Primitive, PrimitiveScene, WorkspaceBounds};

#[derive(Parser)]
#[command(name = "vgpmp", about = "Variational Gaussian-process motion planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a single trajectory and write it as JSON or CSV.
    Plan(PlanArgs),
    /// Run a problem suite across seeds and emit a metrics report.
    Benchmark(BenchmarkArgs),
    /// Signed-distance-field utilities.
    Sdf {
        #[command(subcommand)]
        command: SdfCommand,
    },
    /// Run built-in oracle suites (sanity checks of the numerics).
    Check(CheckArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// Robot spec (JSON).
    #[arg(long)]
    robot: PathBuf,
    /// Primitive scene (JSON).
    #[arg(long)]
    scene: PathBuf,
    /// Start configuration, comma-separated joint values.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_hyphen_values = true)]
    start: Vec<f64>,
    /// Goal configuration, comma-separated joint values.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_hyphen_values = true)]
    goal: Vec<f64>,
    /// Planner configuration (JSON); defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; `.csv` selects CSV, anything else JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also emit up to N posterior sample trajectories.
    #[arg(long, value_name = "N")]
    emit_samples: Option<usize>,
    /// Emit marginal intervals at the given alpha as per-joint half-widths.
    #[arg(long, value_name = "ALPHA")]
    emit_intervals: Option<f64>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Problem suite (JSON).
    #[arg(long)]
    suite: PathBuf,
    /// Planner configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; `.json` selects JSON, anything else CSV rows.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SdfCommand {
    /// Voxelize a primitive scene into a binary distance grid.
    Build {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CheckArgs {
    /// Check the objective gradient against central finite differences.
    #[arg(long)]
    gradients: bool,
    /// Check the whitened KL against a dense-matrix computation.
    #[arg(long)]
    kl: bool,
    /// Check forward kinematics against a homogeneous-matrix oracle.
    #[arg(long)]
    fk: bool,
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<PlannerConfig> {
    let mut config = match path {
        Some(p) => serde_json::from_str(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing {}", p.display()))?,
        None => PlannerConfig::default(),
    };
    if let Ok(text) = std::env::var("VGPMP_SEED") {
        config.seed = text
            .parse()
            .with_context(|| format!("VGPMP_SEED must be an integer, got {text:?}"))?;
    }
    Ok(config)
}

#[derive(Serialize)]
struct PlanOutput {
    #[serde(flatten)]
    trajectory: Trajectory,
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<Vec<Trajectory>>,
    collision_cost: f64,
    final_loss: f64,
}

fn trajectory_csv(traj: &Trajectory) -> anyhow::Result<String> {
    let d = traj.joints.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|j| format!("q{j}")));
    if traj.std.is_some() {
        header.extend((0..d).map(|j| format!("s{j}")));
    }
    w.write_record(&header)?;
    for (i, t) in traj.times.iter().enumerate() {
        let mut row = vec![format!("{t:?}")];
        row.extend(traj.joints[i].iter().map(|v| format!("{v:?}")));
        if let Some(std) = &traj.std {
            row.extend(std[i].iter().map(|v| format!("{v:?}")));
        }
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn cmd_plan(args: PlanArgs) -> anyhow::Result<()> {
    let robot = RobotSpec::load(&args.robot)?;
    let scene = PrimitiveScene::load(&args.scene)?;
    let grid = build_grid(&scene, scene.resolution)?;
    let config = load_config(args.config.as_ref())?;
    let problem = PlanProblem {
        start: args.start.clone(),
        goal: args.goal.clone(),
        targets: Targets::default(),
    };
    let res = plan(&config, &robot, &grid, &problem)?;
    eprintln!(
        "planned in {:.2}s: loss {:.4}, selected collision cost {:.4}",
        res.wall_clock_s, res.final_loss, res.selected_collision_cost
    );

    let mut selected = res.selected.clone();
    if let Some(alpha) = args.emit_intervals {
        let iv = intervals(&res.state, &robot, &selected.times, alpha)?;
        selected.std = Some(
            iv.iter()
                .map(|row| row.iter().map(|&(lo, hi)| 0.5 * (hi - lo)).collect())
                .collect(),
        );
    }
    let is_csv = args.out.extension().is_some_and(|e| e == "csv");
    if is_csv {
        std::fs::write(&args.out, trajectory_csv(&selected)?)?;
    } else {
        let samples = args
            .emit_samples
            .map(|n| res.samples.iter().take(n).cloned().collect());
        let out = PlanOutput {
            trajectory: selected,
            samples,
            collision_cost: res.selected_collision_cost,
            final_loss: res.final_loss,
        };
        std::fs::write(&args.out, serde_json::to_string_pretty(&out)?)?;
    }
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs) -> anyhow::Result<()> {
    let suite = ProblemSuite::load(&args.suite)?;
    let config = load_config(args.config.as_ref())?;
    let report = run_benchmark(&suite, &config)?;
    let text = if args.out.extension().is_some_and(|e| e == "json") {
        emit_json(&report)?
    } else {
        emit_csv(&report)?
    };
    std::fs::write(&args.out, text)?;
    eprintln!(
        "accuracy {:.1}%, clearance {:.3}±{:.3}, path length {:.3}±{:.3} over {} rows",
        100.0 * report.pooled.accuracy,
        report.pooled.clearance_mean,
        report.pooled.clearance_std,
        report.pooled.path_length_mean,
        report.pooled.path_length_std,
        report.rows.len()
    );
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_sdf_build(scene_path: PathBuf, out: PathBuf) -> anyhow::Result<()> {
    let scene = PrimitiveScene::load(&scene_path)?;
    let grid = build_grid(&scene, scene.resolution)?;
    grid.write_binary(&out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn check_kl() -> bool {
    // whitened closed form vs a dense computation of
    // KL(N(m, LL^T) || N(0, I)) built from trace / log-det / quadratic parts
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=8usize);
        let m: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let mut l = LowerTri::identity(n);
        for i in 0..n {
            for j in 0..i {
                l.data[i * (i + 1) / 2 + j] = rng.gen_range(-0.5..0.5);
            }
            l.data[i * (i + 1) / 2 + i] = rng.gen_range(0.3..2.0);
        }
        let fast = kl_divergence(&m, &l);
        let sigma = Mat::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| {
                    let a = if k <= i { l.get(i, k) } else { 0.0 };
                    let b = if k <= j { l.get(j, k) } else { 0.0 };
                    a * b
                })
                .sum::<f64>()
        });
        let chol = sigma.cholesky().expect("SPD by construction");
        let trace: f64 = (0..n).map(|i| sigma.get(i, i)).sum();
        let logdet: f64 = (0..n).map(|i| 2.0 * chol.get(i, i).ln()).sum();
        let quad: f64 = m.iter().map(|v| v * v).sum();
        let dense = 0.5 * (trace + quad - n as f64 - logdet);
        let rel = (fast - dense).abs() / dense.abs().max(1e-12);
        worst = worst.max(rel);
    }
    println!(
        "kl: max rel err {worst:.3e} over 200 instances -> {}",
        if worst < 1e-10 { "PASS" } else { "FAIL" }
    );
    worst < 1e-10
}

fn check_gradients() -> bool {
    let robot = RobotSpec {
        joints: vec![
            DhJoint {
                a: 1.0,
                d: 0.0,
                alpha: 0.0,
                theta_offset: 0.0,
                min: -3.0,
                max: 3.0,
                vel_max: Some(3.0),
            },
            DhJoint {
                a: 1.0,
                d: 0.0,
                alpha: 0.0,
                theta_offset: 0.0,
                min: -3.0,
                max: 3.0,
                vel_max: Some(3.0),
            },
        ],
        spheres: vec![SphereAttachment {
            link: 2,
            offset: [0.0, 0.0, 0.0],
            radius: 0.05,
        }],
    };
    let scene = PrimitiveScene {
        bounds: WorkspaceBounds {
            min: [-2.5, -2.5, -0.3],
            max: [2.5, 2.5, 0.3],
        },
        resolution: 0.1,
        primitives: vec![Primitive::Sphere {
            center: [1.2, 1.2, 0.0],
            radius: 0.3,
        }],
    };
    let grid = build_grid(&scene, 0.1).expect("small grid");
    let weights = ObjectiveWeights {
        enable_soft_limits: true,
        soft_on_positions: true,
        ..ObjectiveWeights::default()
    };
    let targets = Targets::default();
    let spec = vgpmp::optimizer::EvalSpec {
        robot: &robot,
        grid: &grid,
        weights: &weights,
        targets: &targets,
        slope: 1.0,
        family: MaternFamily::Matern52,
        z_c: vec![0.0, 1.0],
        derivative_flags: vec![true, true],
        u_c: vec![vec![-0.8, 0.8, 0.0, 0.0], vec![0.3, -0.4, 0.0, 0.0]],
        times: (0..10).map(|i| i as f64 / 9.0).collect(),
        n_samples: 3,
        n_features: 32,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let trainable = TrainableSet::default();
    for trial in 0..5 {
        let z_free = vec![0.2, 0.45, 0.7];
        let mut params = Params::pack(
            &vec![vec![0.0; 3]; 2],
            &vec![LowerTri::identity(3); 2],
            &z_free,
            &[0.3, 0.35],
            &[0.5, 0.6],
        );
        for v in &mut params.mu_w.iter_mut().flatten() {
            *v += rng.gen_range(-0.3..0.3);
        }
        let seed = 1000 + trial;
        let (_, g) = gradient(&spec, &params, &trainable, seed).expect("gradient");
        let fd = finite_difference_gradient(&spec, &params, &trainable, seed, 1e-5)
            .expect("finite differences");
        for (a, b) in g.iter().zip(&fd) {
            let denom = a.abs().max(b.abs()).max(1e-6);
            worst = worst.max((a - b).abs() / denom);
        }
    }
    println!(
        "gradients: max rel err {worst:.3e} over 5 configurations -> {}",
        if worst < 1e-4 { "PASS" } else { "FAIL" }
    );
    worst < 1e-4
}

/// 4x4 homogeneous matrix product, independent of the library's Pose type.
fn check_fk() -> bool {
    fn matmul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut c = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let joints: Vec<DhJoint> = (0..7)
        .map(|_| DhJoint {
            a: rng.gen_range(-0.5..0.5),
            d: rng.gen_range(-0.5..0.5),
            alpha: rng.gen_range(-1.5..1.5),
            theta_offset: rng.gen_range(-1.0..1.0),
            min: -3.0,
            max: 3.0,
            vel_max: None,
        })
        .collect();
    let robot = RobotSpec {
        joints,
        spheres: vec![],
    };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.9..2.9)).collect();
        let poses = robot.forward_kinematics(&q);
        let mut acc = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        for (i, joint) in robot.joints.iter().enumerate() {
            let th = q[i] + joint.theta_offset;
            let (st, ct) = th.sin_cos();
            let (sa, ca) = joint.alpha.sin_cos();
            let step = [
                [ct, -st * ca, st * sa, joint.a * ct],
                [st, ct * ca, -ct * sa, joint.a * st],
                [0.0, sa, ca, joint.d],
                [0.0, 0.0, 0.0, 1.0],
            ];
            acc = matmul(&acc, &step);
            for r in 0..3 {
                worst = worst.max((poses[i].position[r] - acc[r][3]).abs());
                for c in 0..3 {
                    worst = worst.max((poses[i].rotation[r][c] - acc[r][c]).abs());
                }
            }
        }
    }
    println!(
        "fk: max abs err {worst:.3e} over 100 random 7-dof configurations -> {}",
        if worst < 1e-10 { "PASS" } else { "FAIL" }
    );
    worst < 1e-10
}

fn cmd_check(args: CheckArgs) -> anyhow::Result<()> {
    if !(args.gradients || args.kl || args.fk) {
        bail!("pass at least one of --gradients, --kl, --fk");
    }
    let mut ok = true;
    if args.kl {
        ok &= check_kl();
    }
    if args.gradients {
        ok &= check_gradients();
    }
    if args.fk {
        ok &= check_fk();
    }
    if !ok {
        bail!("one or more checks failed");
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Plan(args) => cmd_plan(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Sdf {
            command: SdfCommand::Build { scene, out },
        } => cmd_sdf_build(scene, out),
        Command::Check(args) => cmd_check(args),
    }
}
