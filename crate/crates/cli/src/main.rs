use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hive_energy::capture::{CaptureTimeTable, Resolution};
use hive_energy::config::{
    load_harvest, load_scenario, parse_segmentation, LoadedScenario, BUILTIN_SCENARIO,
};
use hive_energy::network::{
    break_even_idle_time, BreakEvenConvention, Direction, Link, LinkTable, REFERENCE_PAYLOAD_BYTES,
};
use hive_energy::segment::{
    most_energetic, phase_report, segment, write_segments_csv, PhaseLabel, SegmentationConfig,
};
use hive_energy::sim::{lifetime_from_cycle, sweep, SimulationSetup, SweepParam};
use hive_energy::trace::ingest_trace;
use serde_json::json;
use thiserror::Error;

mod render;

#[derive(Parser)]
#[command(
    name = "hive-energy",
    version,
    about = "Power-trace profiling and duty-cycle energy simulation for sensor nodes"
)]
struct Cli {
    /// Print JSON on stdout; human-readable tables go to stderr
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a power trace into labeled phases
    Profile {
        /// Trace CSV (`t_s,power_w` or `t_s,current_a`)
        trace: PathBuf,
        /// Segmentation settings (TOML)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Idle power band in watts, as LOW,HIGH
        #[arg(long, value_parser = parse_band)]
        idle_band: Option<(f64, f64)>,
        #[arg(long)]
        off_threshold: Option<f64>,
        #[arg(long)]
        min_segment: Option<f64>,
        #[arg(long)]
        smoothing: Option<f64>,
        /// Write the segment table as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run one wake cycle and the battery lifetime
    Simulate {
        /// Scenario file or bundled name
        #[arg(default_value = BUILTIN_SCENARIO)]
        scenario: String,
        /// Battery capacity in mAh
        #[arg(long)]
        battery: Option<f64>,
        /// Harvest profile file or bundled name
        #[arg(long)]
        harvest: Option<String>,
        /// Ambient temperature in Celsius
        #[arg(long, allow_hyphen_values = true)]
        ambient: Option<f64>,
        /// Write the per-phase breakdown as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Re-run a scenario for each value of one parameter
    Sweep {
        scenario: String,
        /// Parameter name, e.g. wake_period_s or link
        #[arg(long)]
        param: String,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<String>,
        #[arg(long)]
        battery: Option<f64>,
        #[arg(long)]
        harvest: Option<String>,
        /// Write one row per value as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare Wi-Fi and Ethernet transfers and their break-even idle time
    Links {
        /// Payload in bytes
        #[arg(long, default_value_t = REFERENCE_PAYLOAD_BYTES)]
        payload: u64,
        #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
        direction: DirectionArg,
        /// Ethernet idle overhead in watts
        #[arg(long)]
        overhead: Option<f64>,
        #[arg(long, value_enum, default_value_t = ConventionArg::IdleOnly)]
        convention: ConventionArg,
    },
    /// Capture duration and energy for a batch of images
    CapturePlan {
        /// Scenario supplying the capture model and device
        #[arg(long, default_value = BUILTIN_SCENARIO)]
        scenario: String,
        #[arg(long, default_value_t = 20)]
        images: u32,
        /// Resolution as WxH; repeatable
        #[arg(long = "resolution", default_value = "800x600")]
        resolutions: Vec<String>,
        /// Per-image timing entries WxH:SECONDS, comma-separated
        #[arg(long, value_delimiter = ',')]
        table: Option<Vec<String>>,
        /// Pacing between shots in seconds; 0 for free-running
        #[arg(long)]
        min_interval: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        ambient: Option<f64>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    Download,
    Upload,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConventionArg {
    IdleOnly,
    EqualSession,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| "expected LOW,HIGH".to_string())?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(lo)?, num(hi)?))
}

/// Where reports go: JSON on stdout with tables on stderr, or tables only.
struct Output {
    json: bool,
}

impl Output {
    fn emit(&self, table: &str, value: serde_json::Value) -> Result<(), CliError> {
        let io_err = |e: io::Error| CliError::Input(format!("cannot write output: {e}"));
        if self.json {
            eprint!("{table}");
            let text = serde_json::to_string_pretty(&value)
                .map_err(|e| CliError::Invariant(e.to_string()))?;
            writeln!(io::stdout(), "{text}").map_err(io_err)
        } else {
            write!(io::stdout(), "{table}").map_err(io_err)
        }
    }
}

fn write_csv(path: &Path, body: &str) -> Result<(), CliError> {
    std::fs::write(path, body)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn load_setup(
    scenario: &str,
    battery: Option<f64>,
    harvest: Option<&str>,
) -> Result<LoadedScenario, CliError> {
    let mut loaded = load_scenario(scenario).map_err(input)?;
    if let Some(mah) = battery {
        loaded.setup.battery.capacity_mah = mah;
        loaded.setup.battery.validate().map_err(|e| input(format!("--battery: {e}")))?;
    }
    if let Some(h) = harvest {
        loaded.setup.harvest = Some(load_harvest(h).map_err(input)?);
    }
    Ok(loaded)
}

fn profile(
    out: &Output,
    trace_path: &Path,
    config: Option<&Path>,
    idle_band: Option<(f64, f64)>,
    off_threshold: Option<f64>,
    min_segment: Option<f64>,
    smoothing: Option<f64>,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", p.display())))?;
            parse_segmentation(&text, &p.display().to_string()).map_err(input)?
        }
        None => {
            let (lo, hi) = idle_band.ok_or_else(|| {
                CliError::Input("an idle band is required: pass --idle-band LOW,HIGH or --config".into())
            })?;
            SegmentationConfig::new(lo, hi)
        }
    };
    if let Some(b) = idle_band {
        cfg.idle_band_w = b;
    }
    if let Some(v) = off_threshold {
        cfg.off_threshold_w = v;
    }
    if let Some(v) = min_segment {
        cfg.min_segment_s = v;
    }
    if let Some(v) = smoothing {
        cfg.smoothing_window_s = v;
    }

    let file = File::open(trace_path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", trace_path.display())))?;
    let trace = ingest_trace(BufReader::new(file))
        .map_err(|e| CliError::Input(format!("{}: {e}", trace_path.display())))?;
    let segs = segment(&trace, &cfg).map_err(input)?;
    let total = trace.total_energy();
    let seg_sum: f64 = segs.iter().map(|s| s.energy_j).sum();
    if (seg_sum - total).abs() > 1e-6 * total.max(1e-12) {
        return Err(CliError::Invariant(format!(
            "segment energies sum to {seg_sum} J, trace holds {total} J"
        )));
    }
    let phases = phase_report(&segs);
    let top = most_energetic(&segs, PhaseLabel::Task);

    if let Some(p) = csv {
        let mut buf = Vec::new();
        write_segments_csv(&segs, &mut buf).map_err(|e| CliError::Invariant(e.to_string()))?;
        write_csv(p, &String::from_utf8_lossy(&buf))?;
    }
    let table = render::profile_table(&trace_path.display().to_string(), &trace, &segs, &phases, top);
    out.emit(
        &table,
        json!({
            "trace": trace_path.display().to_string(),
            "samples": trace.len(),
            "duration_s": trace.duration(),
            "total_energy_j": total,
            "config": cfg,
            "segments": segs,
            "phases": phases,
            "most_energetic_task": top,
        }),
    )
}

fn simulate(
    out: &Output,
    scenario: &str,
    battery: Option<f64>,
    harvest: Option<&str>,
    ambient: Option<f64>,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    let mut loaded = load_setup(scenario, battery, harvest)?;
    if let Some(a) = ambient {
        loaded.setup.scenario.ambient_c = a;
    }
    let setup = &loaded.setup;
    let cycle = hive_energy::run_cycle(&setup.scenario).map_err(input)?;
    check_cycle(&cycle, setup)?;
    let life = lifetime_from_cycle(&cycle, &setup.battery, setup.harvest.as_ref(), setup.horizon_s)
        .map_err(input)?
        .report;

    if let Some(p) = csv {
        write_csv(p, &render::phases_csv(&cycle))?;
    }
    let calibration = loaded.calibration_window_j.map(|w| {
        json!({ "window_j": w, "idle_baseline_w": setup.scenario.device.idle_baseline_w })
    });
    let table = render::simulate_table(&loaded, &cycle, &life);
    out.emit(
        &table,
        json!({
            "scenario": setup.scenario.name,
            "calibration": calibration,
            "battery": setup.battery,
            "harvest": setup.harvest,
            "cycle": cycle,
            "lifetime": life,
        }),
    )
}

fn check_cycle(cycle: &hive_energy::CycleReport, setup: &SimulationSetup) -> Result<(), CliError> {
    let parts = cycle.sum_of_parts();
    if (cycle.total_j - parts).abs() > 1e-6 * cycle.total_j.abs().max(1e-12) {
        return Err(CliError::Invariant(format!(
            "cycle total {} J differs from its parts {parts} J",
            cycle.total_j
        )));
    }
    if cycle.active_s > setup.scenario.watchdog_limit_s {
        return Err(CliError::Invariant(format!(
            "active time {} s exceeds the watchdog limit",
            cycle.active_s
        )));
    }
    Ok(())
}

fn run_sweep(
    out: &Output,
    scenario: &str,
    param: &str,
    values: &[String],
    battery: Option<f64>,
    harvest: Option<&str>,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    let loaded = load_setup(scenario, battery, harvest)?;
    let param: SweepParam = param.parse().map_err(|e| {
        let known: Vec<_> = SweepParam::ALL.iter().map(|p| p.name()).collect();
        CliError::Input(format!("{e}; known: {}", known.join(", ")))
    })?;
    let points = sweep(&loaded.setup, param, values).map_err(input)?;
    for p in &points {
        let applied = param.apply(&loaded.setup, &p.value).map_err(input)?;
        check_cycle(&p.cycle, &applied)?;
    }
    if let Some(path) = csv {
        write_csv(path, &render::sweep_csv(param, &points))?;
    }
    let table = render::sweep_table(param, &points);
    out.emit(
        &table,
        json!({
            "scenario": loaded.setup.scenario.name,
            "param": param.name(),
            "points": points,
        }),
    )
}

fn links(
    out: &Output,
    payload: u64,
    direction: DirectionArg,
    overhead: Option<f64>,
    convention: ConventionArg,
) -> Result<(), CliError> {
    if payload == 0 {
        return Err(CliError::Input("--payload must be > 0".into()));
    }
    let mut table = LinkTable::default();
    if let Some(w) = overhead {
        if !(w.is_finite() && w >= 0.0) {
            return Err(CliError::Input("--overhead must be >= 0".into()));
        }
        table.set_idle_overhead_w(Link::Ethernet, w);
    }
    let convention = match convention {
        ConventionArg::IdleOnly => BreakEvenConvention::IdleOnly,
        ConventionArg::EqualSession => BreakEvenConvention::EqualSession,
    };
    let directions: &[Direction] = match direction {
        DirectionArg::Download => &[Direction::Download],
        DirectionArg::Upload => &[Direction::Upload],
        DirectionArg::Both => &[Direction::Download, Direction::Upload],
    };
    let mut rows = Vec::new();
    for &d in directions {
        let wifi = table.get(Link::Wifi, d);
        let eth = table.get(Link::Ethernet, d);
        let be = break_even_idle_time(wifi, eth, payload, convention).map_err(input)?;
        rows.push(render::LinkRow {
            direction: d,
            wifi: *wifi,
            ethernet: *eth,
            wifi_time_s: wifi.transfer_time(payload),
            wifi_energy_j: wifi.transfer_energy(payload),
            eth_time_s: eth.transfer_time(payload),
            eth_energy_j: eth.transfer_energy(payload),
            break_even_s: be,
        });
    }
    let text = render::links_table(payload, &rows);
    let value = json!({
        "payload_bytes": payload,
        "convention": convention,
        "directions": rows.iter().map(|r| json!({
            "direction": r.direction,
            "wifi": {
                "data_rate_bps": r.wifi.data_rate_bps,
                "time_s": r.wifi_time_s,
                "energy_j": r.wifi_energy_j,
            },
            "ethernet": {
                "data_rate_bps": r.ethernet.data_rate_bps,
                "time_s": r.eth_time_s,
                "energy_j": r.eth_energy_j,
                "idle_overhead_w": r.ethernet.idle_overhead_w,
            },
            "break_even_idle_s": r.break_even_s,
        })).collect::<Vec<_>>(),
    });
    out.emit(&text, value)
}

fn capture_plan(
    out: &Output,
    scenario: &str,
    images: u32,
    resolutions: &[String],
    table: Option<&[String]>,
    min_interval: Option<f64>,
    ambient: Option<f64>,
) -> Result<(), CliError> {
    let loaded = load_scenario(scenario).map_err(input)?;
    let s = &loaded.setup.scenario;
    let mut capture = s.capture.clone();
    if let Some(entries) = table {
        capture.table = CaptureTimeTable::parse_entries(entries).map_err(|e| input(format!("--table: {e}")))?;
    }
    if let Some(v) = min_interval {
        capture.min_interval_s = v;
    }
    capture.validate().map_err(input)?;
    let ambient = ambient.unwrap_or(s.ambient_c);
    let mut rows = Vec::new();
    for r in resolutions {
        let res: Resolution = r.parse().map_err(|e| input(format!("--resolution {r}: {e}")))?;
        rows.push(render::CaptureRow {
            resolution: res,
            per_image_s: capture.table.per_image_s(res),
            free_running_s: capture.table.capture_duration(images, res).map_err(input)?,
            paced_s: capture.duration(images, res).map_err(input)?,
            extra_power_w: capture.extra_power(&s.device).map_err(input)?,
            energy_j: capture.energy(&s.device, images, res, ambient).map_err(input)?,
        });
    }
    let text = render::capture_table(images, capture.min_interval_s, ambient, &rows);
    let value = json!({
        "images": images,
        "min_interval_s": capture.min_interval_s,
        "ambient_c": ambient,
        "plans": rows.iter().map(|r| json!({
            "resolution": r.resolution,
            "per_image_s": r.per_image_s,
            "free_running_s": r.free_running_s,
            "paced_s": r.paced_s,
            "extra_power_w": r.extra_power_w,
            "energy_j": r.energy_j,
        })).collect::<Vec<_>>(),
    });
    out.emit(&text, value)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = Output { json: cli.json };
    match cli.command {
        Command::Profile {
            trace,
            config,
            idle_band,
            off_threshold,
            min_segment,
            smoothing,
            csv,
        } => profile(
            &out,
            &trace,
            config.as_deref(),
            idle_band,
            off_threshold,
            min_segment,
            smoothing,
            csv.as_deref(),
        ),
        Command::Simulate {
            scenario,
            battery,
            harvest,
            ambient,
            csv,
        } => simulate(&out, &scenario, battery, harvest.as_deref(), ambient, csv.as_deref()),
        Command::Sweep {
            scenario,
            param,
            values,
            battery,
            harvest,
            csv,
        } => run_sweep(&out, &scenario, &param, &values, battery, harvest.as_deref(), csv.as_deref()),
        Command::Links {
            payload,
            direction,
            overhead,
            convention,
        } => links(&out, payload, direction, overhead, convention),
        Command::CapturePlan {
            scenario,
            images,
            resolutions,
            table,
            min_interval,
            ambient,
        } => capture_plan(
            &out,
            &scenario,
            images,
            &resolutions,
            table.as_deref(),
            min_interval,
            ambient,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
