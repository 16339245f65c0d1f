//! `fusetrack` command line: simulate scenarios, fuse sensor logs, rebuild
//! ground truth from RTK fixes, score estimates and benchmark the tracker.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fusetrack::association::CostCovariance;
use fusetrack::error::Error;
use fusetrack::filtering::StateEstimate;
use fusetrack::jsonl::{read_jsonl, write_jsonl, FusedListRecord};
use fusetrack::latency;
use fusetrack::motion::{EgoMotion, RotationConvention};
use fusetrack::sim::{simulate, ScenarioConfig};
use fusetrack::tracker::{process_log, FusedList, SensorFrame, Track, TrackerConfig};
use fusetrack::truth_eval::{
    evaluate, interpolate, relative_state, wrap_angle, EvalConfig, RelativeState, RtkFix, Vehicle,
};

#[derive(Parser)]
#[command(name = "fusetrack", version, about = "Lidar/Radar obstacle tracking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic two-vehicle scenario log bundle
    Simulate(SimulateArgs),
    /// Fuse a sensor log into a tracked object list
    Fuse(FuseArgs),
    /// Recompose the relative ground truth from two-vehicle RTK fixes
    Gt(GtArgs),
    /// Score sensor and fusion series against the ground truth
    Eval(EvalArgs),
    /// Measure per-frame tracker step latency
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Highway,
    Bend,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    /// scenario length in seconds
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// output directory for sensors.jsonl, ego.jsonl, rtk.jsonl, truth.jsonl
    #[arg(long)]
    out: PathBuf,
    /// radar blackout window, as start:end seconds (repeatable)
    #[arg(long, value_parser = parse_window)]
    radar_dropout: Vec<(f64, f64)>,
    /// standard deviation of the RTK position noise, metres
    #[arg(long)]
    rtk_sigma_pos: Option<f64>,
    /// standard deviation of the RTK velocity noise, m/s
    #[arg(long)]
    rtk_sigma_vel: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GateCovArg {
    /// predicted track covariance only
    Track,
    /// track plus observation covariance
    TrackPlusObs,
}

#[derive(Clone, Copy, ValueEnum)]
enum RotationArg {
    /// rotate compensated states by the yaw increment
    Legacy,
    /// rotate by the negated yaw increment
    Negated,
}

#[derive(Args)]
struct FuseArgs {
    /// sensor frame log (JSONL)
    #[arg(long)]
    sensors: PathBuf,
    /// ego odometry log (JSONL)
    #[arg(long)]
    ego: PathBuf,
    /// output fused-list log (JSONL)
    #[arg(long)]
    out: PathBuf,
    /// validation gate quantile order
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    /// cycles an unassociated track survives before deletion
    #[arg(long, default_value_t = 0)]
    coast: u32,
    /// keep tracks alive through frames with no detections
    #[arg(long)]
    keep_empty_frames: bool,
    #[arg(long, value_enum, default_value_t = GateCovArg::Track)]
    gate_cov: GateCovArg,
    #[arg(long, value_enum, default_value_t = RotationArg::Legacy)]
    rotation: RotationArg,
}

#[derive(Args)]
struct GtArgs {
    /// two-vehicle RTK log (JSONL)
    #[arg(long)]
    rtk: PathBuf,
    /// output relative-truth log (JSONL)
    #[arg(long)]
    out: PathBuf,
    /// drop the omega-cross-r transport term from relative velocities
    #[arg(long)]
    no_transport: bool,
    /// widest interpolation gap bridged between target fixes, seconds
    #[arg(long, default_value_t = 0.5)]
    max_gap: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct EvalArgs {
    /// fused-list log (JSONL)
    #[arg(long)]
    tracks: PathBuf,
    /// relative ground-truth log (JSONL)
    #[arg(long)]
    truth: PathBuf,
    /// sensor frame log; adds per-sensor rows to the report
    #[arg(long)]
    sensors: Option<PathBuf>,
    /// ego odometry log, used for the static-object filter
    #[arg(long)]
    ego: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    report: ReportFormat,
    /// write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// ground-speed threshold below which objects count as static, m/s
    #[arg(long, default_value_t = 0.5)]
    static_threshold: f64,
    /// widest interpolation gap bridged in the truth series, seconds
    #[arg(long, default_value_t = 0.5)]
    max_gap: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 50)]
    obstacles: usize,
    #[arg(long, default_value_t = 10_000)]
    cycles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected start:end, got '{s}'"))?;
    let a: f64 = a.parse().map_err(|e| format!("bad window start: {e}"))?;
    let b: f64 = b.parse().map_err(|e| format!("bad window end: {e}"))?;
    if !(a < b) {
        return Err(format!("window {a}:{b} is empty"));
    }
    Ok((a, b))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FUSETRACK_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Fuse(args) => run_fuse(args),
        Command::Gt(args) => run_gt(args),
        Command::Eval(args) => run_eval(args),
        Command::Bench(args) => run_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run_simulate(args: SimulateArgs) -> fusetrack::Result<()> {
    let mut config = match args.scenario {
        ScenarioArg::Highway => ScenarioConfig::highway(args.duration, args.seed),
        ScenarioArg::Bend => ScenarioConfig::bend(args.duration, args.seed),
    };
    config.radar.dropout_windows = args.radar_dropout;
    if let Some(s) = args.rtk_sigma_pos {
        config.rtk_sigma_pos = s;
    }
    if let Some(s) = args.rtk_sigma_vel {
        config.rtk_sigma_vel = s;
    }
    let bundle = simulate(&config)?;
    std::fs::create_dir_all(&args.out)?;
    write_jsonl(&args.out.join("sensors.jsonl"), bundle.sensor_frames.iter())?;
    write_jsonl(&args.out.join("ego.jsonl"), bundle.ego.iter())?;
    write_jsonl(&args.out.join("rtk.jsonl"), bundle.rtk.iter())?;
    write_jsonl(&args.out.join("truth.jsonl"), bundle.truth.iter())?;
    log::info!(
        "wrote {} sensor frames, {} ego records, {} rtk fixes, {} truth samples to {}",
        bundle.sensor_frames.len(),
        bundle.ego.len(),
        bundle.rtk.len(),
        bundle.truth.len(),
        args.out.display()
    );
    Ok(())
}

fn run_fuse(args: FuseArgs) -> fusetrack::Result<()> {
    let frames: Vec<SensorFrame> = read_jsonl(&args.sensors)?;
    let ego: Vec<EgoMotion> = read_jsonl(&args.ego)?;
    let config = TrackerConfig {
        alpha: args.alpha,
        coast_cycles: args.coast,
        empty_frame_deletes: !args.keep_empty_frames,
        cost_covariance: match args.gate_cov {
            GateCovArg::Track => CostCovariance::Track,
            GateCovArg::TrackPlusObs => CostCovariance::TrackPlusObs,
        },
        rotation: match args.rotation {
            RotationArg::Legacy => RotationConvention::Legacy,
            RotationArg::Negated => RotationConvention::Negated,
        },
        ..TrackerConfig::default()
    };
    let (fused, stats) = process_log(&frames, &ego, &config)?;
    write_jsonl(&args.out, fused.iter().map(FusedListRecord::from))?;
    log::info!(
        "fused {} frames ({} stale dropped, {} without odometry) into {}",
        stats.frames,
        stats.dropped_stale,
        stats.ego_misses,
        args.out.display()
    );
    Ok(())
}

/// Angular rate series for the ego vehicle: the logged `omega` field when
/// present, otherwise a central difference of the heading.
fn ego_omega_series(ego: &[RtkFix]) -> fusetrack::Result<Vec<f64>> {
    ego.iter()
        .enumerate()
        .map(|(i, fix)| {
            if let Some(w) = fix.omega {
                return Ok(w);
            }
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(ego.len() - 1);
            if hi == lo {
                return Ok(0.0);
            }
            let (a, b) = (&ego[lo], &ego[hi]);
            let (ha, hb) = match (a.heading, b.heading) {
                (Some(ha), Some(hb)) => (ha, hb),
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "ego RTK fix near t={} is missing the heading",
                        fix.t
                    )))
                }
            };
            let dt = b.t - a.t;
            if dt <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "ego RTK timestamps not increasing around t={}",
                    fix.t
                )));
            }
            Ok(wrap_angle(hb - ha) / dt)
        })
        .collect()
}

fn run_gt(args: GtArgs) -> fusetrack::Result<()> {
    let fixes: Vec<RtkFix> = read_jsonl(&args.rtk)?;
    let mut ego: Vec<RtkFix> = fixes.iter().filter(|f| f.vehicle == Vehicle::Ego).copied().collect();
    let mut target: Vec<RtkFix> =
        fixes.iter().filter(|f| f.vehicle == Vehicle::Target).copied().collect();
    if ego.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput(
            "rtk log must contain fixes for both vehicles".into(),
        ));
    }
    ego.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    target.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());

    let component = |f: fn(&RtkFix) -> f64| -> Vec<(f64, f64)> {
        target.iter().map(|fix| (fix.t, f(fix))).collect()
    };
    let tpx = component(|f| f.px);
    let tpy = component(|f| f.py);
    let tvx = component(|f| f.vx);
    let tvy = component(|f| f.vy);

    let omegas = ego_omega_series(&ego)?;
    let mut out: Vec<RelativeState> = Vec::with_capacity(ego.len());
    for (fix, omega) in ego.iter().zip(&omegas) {
        let interp = |series: &[(f64, f64)]| interpolate(series, fix.t, args.max_gap);
        let (Some(px), Some(py), Some(vx), Some(vy)) =
            (interp(&tpx), interp(&tpy), interp(&tvx), interp(&tvy))
        else {
            continue;
        };
        let tgt = RtkFix {
            t: fix.t,
            vehicle: Vehicle::Target,
            px,
            py,
            vx,
            vy,
            heading: None,
            omega: None,
        };
        out.push(relative_state(fix, &tgt, *omega, !args.no_transport)?);
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(
            "ego and target fixes never overlap in time".into(),
        ));
    }
    write_jsonl(&args.out, out.iter())?;
    log::info!("wrote {} truth samples to {}", out.len(), args.out.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> fusetrack::Result<()> {
    let records: Vec<FusedListRecord> = read_jsonl(&args.tracks)?;
    let fused: Vec<FusedList> = records
        .iter()
        .map(|rec| FusedList {
            t: rec.t,
            tracks: rec
                .to_states()
                .into_iter()
                .map(|(id, age, state)| Track {
                    id,
                    state: StateEstimate::new(state.mean, state.cov),
                    age,
                    created_at: rec.t,
                    updated_at: rec.t,
                    last_sensor: fusetrack::filtering::SensorId::Lidar,
                    coasted: 0,
                })
                .collect(),
        })
        .collect();
    let truth: Vec<RelativeState> = read_jsonl(&args.truth)?;
    let frames: Vec<SensorFrame> = match &args.sensors {
        Some(path) => read_jsonl(path)?,
        None => Vec::new(),
    };
    let ego: Vec<EgoMotion> = match &args.ego {
        Some(path) => read_jsonl(path)?,
        None => Vec::new(),
    };
    let cfg = EvalConfig {
        static_threshold: args.static_threshold,
        max_gap: args.max_gap,
        transport: true,
    };
    let report = evaluate(&frames, &fused, &truth, &ego, &cfg)?;
    let rendered = match args.report {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json(),
    };
    match &args.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn run_bench(args: BenchArgs) -> fusetrack::Result<()> {
    let report = latency::bench(args.obstacles, args.cycles, args.seed)?;
    println!("{report}");
    println!("reference budget: 15.00 us median on the original hardware");
    Ok(())
}
