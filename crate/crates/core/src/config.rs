//! TOML loaders for device models, scenarios, harvest profiles and
//! segmentation settings.
//!
//! A scenario names its device either as a bundled model (`"makers-beehive"`),
//! a path relative to the scenario file, or an inline `[device]` table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::capture::{CaptureJitter, CaptureModel, CaptureTimeTable, Resolution};
use crate::device::{DeviceModel, PeripheralCost, ShutdownMode, TaskSpec, TemperatureModifier};
use crate::network::{Direction, Link};
use crate::segment::SegmentationConfig;
use crate::sim::{
    calibrate_idle_baseline, Battery, HarvestProfile, Scenario, SimError, SimulationSetup, Step,
    StepKind, DEFAULT_HORIZON_S,
};

pub const BUILTIN_DEVICE: &str = "makers-beehive";
pub const BUILTIN_SCENARIO: &str = "makers-beehive";
pub const BUILTIN_HARVEST: &str = "harvest-example";

const DEVICE_TEXT: &str = include_str!("../data/makers-beehive.device.toml");
const SCENARIO_TEXT: &str = include_str!("../data/makers-beehive.scenario");
const HARVEST_TEXT: &str = include_str!("../data/harvest-example.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}: `{key}`: {reason}")]
    Invalid {
        origin: String,
        key: String,
        reason: String,
    },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{origin}: {source}")]
    Sim { origin: String, source: SimError },
}

fn parse_err(origin: &str, e: toml::de::Error) -> ConfigError {
    ConfigError::Parse {
        origin: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    }
}

fn invalid(origin: &str, key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        origin: origin.to_string(),
        key: key.into(),
        reason: reason.into(),
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn builtin_scenario_text(name: &str) -> Option<&'static str> {
    (name == BUILTIN_SCENARIO).then_some(SCENARIO_TEXT)
}

pub fn builtin_device_text(name: &str) -> Option<&'static str> {
    (name == BUILTIN_DEVICE).then_some(DEVICE_TEXT)
}

pub fn builtin_harvest_text(name: &str) -> Option<&'static str> {
    (name == BUILTIN_HARVEST).then_some(HARVEST_TEXT)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PeripheralFile {
    active_idle_w: f64,
    #[serde(default)]
    off_w: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    duration_s: f64,
    energy_j: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemperatureFile {
    reference_range_c: Option<(f64, f64)>,
    cold_range_c: Option<(f64, f64)>,
    cold_energy_factor: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShutdownFile {
    graceful_s: Option<f64>,
    forced_s: Option<f64>,
    spike_fraction: Option<f64>,
    energy_j: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceFile {
    idle_baseline_w: Option<f64>,
    off_standby_w: Option<f64>,
    stress_safe_w: Option<f64>,
    stress_burn_w: Option<f64>,
    #[serde(default)]
    peripherals: BTreeMap<String, PeripheralFile>,
    #[serde(default)]
    tasks: BTreeMap<String, TaskFile>,
    temperature: Option<TemperatureFile>,
    shutdown: Option<ShutdownFile>,
}

impl DeviceFile {
    /// The model plus whether the idle baseline was given explicitly.
    fn build(self) -> (DeviceModel, bool) {
        let mut m = DeviceModel::default();
        let has_baseline = self.idle_baseline_w.is_some();
        if let Some(v) = self.idle_baseline_w {
            m.idle_baseline_w = v;
        }
        if let Some(v) = self.off_standby_w {
            m.off_standby_w = v;
        }
        if let Some(v) = self.stress_safe_w {
            m.stress_safe_w = v;
        }
        if let Some(v) = self.stress_burn_w {
            m.stress_burn_w = v;
        }
        for (name, p) in self.peripherals {
            m.peripherals.insert(
                name.clone(),
                PeripheralCost {
                    name,
                    active_idle_w: p.active_idle_w,
                    off_w: p.off_w,
                },
            );
        }
        for (name, t) in self.tasks {
            m.tasks
                .insert(name.clone(), TaskSpec::new(name, t.duration_s, t.energy_j));
        }
        if let Some(t) = self.temperature {
            let d = TemperatureModifier::default();
            m.temp_modifier = TemperatureModifier {
                reference_range_c: t.reference_range_c.unwrap_or(d.reference_range_c),
                cold_range_c: t.cold_range_c.unwrap_or(d.cold_range_c),
                cold_energy_factor: t.cold_energy_factor.unwrap_or(d.cold_energy_factor),
            };
        }
        if let Some(s) = self.shutdown {
            let sh = &mut m.shutdown;
            if let Some(v) = s.graceful_s {
                sh.graceful_s = v;
            }
            if let Some(v) = s.forced_s {
                sh.forced_s = v;
            }
            if let Some(v) = s.spike_fraction {
                sh.spike_fraction = v;
            }
            sh.energy_j = s.energy_j;
        }
        (m, has_baseline)
    }
}

fn device_from_str(text: &str, origin: &str) -> Result<(DeviceModel, bool), ConfigError> {
    let file: DeviceFile = toml::from_str(text).map_err(|e| parse_err(origin, e))?;
    Ok(file.build())
}

/// Parses a device model file. A missing `idle_baseline_w` leaves it at 0.
pub fn parse_device(text: &str) -> Result<DeviceModel, ConfigError> {
    Ok(device_from_str(text, "device")?.0)
}

/// The bundled device model with its idle baseline calibrated against the
/// bundled scenario.
pub fn builtin_device() -> DeviceModel {
    builtin_setup().scenario.device
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    window_j: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptureFile {
    min_interval_s: Option<f64>,
    reference_task: Option<String>,
    extra_power_w: Option<f64>,
    table: Option<Vec<String>>,
    jitter: Option<CaptureJitter>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkParamsFile {
    download_rate_mbps: Option<f64>,
    upload_rate_mbps: Option<f64>,
    download_energy_j: Option<f64>,
    upload_energy_j: Option<f64>,
    idle_overhead_w: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    selected: Option<String>,
    wifi: Option<LinkParamsFile>,
    ethernet: Option<LinkParamsFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptureStepFile {
    n_images: u32,
    resolution: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransferStepFile {
    payload_bytes: u64,
    direction: String,
    link: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFile {
    name: Option<String>,
    task: Option<String>,
    capture: Option<CaptureStepFile>,
    transfer: Option<TransferStepFile>,
    idle_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatteryFile {
    capacity_mah: Option<f64>,
    nominal_voltage_v: Option<f64>,
    initial_charge_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HarvestFile {
    #[serde(default)]
    start_hour: f64,
    profile: Vec<(f64, f64)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    device: Option<toml::Value>,
    wake_period_s: Option<f64>,
    watchdog_limit_s: Option<f64>,
    ambient_c: Option<f64>,
    attached: Option<Vec<String>>,
    boot: Option<bool>,
    shutdown: Option<String>,
    horizon_days: Option<f64>,
    calibration: Option<CalibrationFile>,
    capture: Option<CaptureFile>,
    link: Option<LinkFile>,
    #[serde(default)]
    steps: Vec<StepFile>,
    battery: Option<BatteryFile>,
    harvest: Option<HarvestFile>,
}

/// A scenario file resolved into a runnable setup.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub setup: SimulationSetup,
    /// Target window energy the idle baseline was calibrated to, if any.
    pub calibration_window_j: Option<f64>,
}

pub fn parse_shutdown(s: &str) -> Option<ShutdownMode> {
    match s {
        "graceful" => Some(ShutdownMode::Graceful),
        "forced" => Some(ShutdownMode::Forced),
        "none" => Some(ShutdownMode::None),
        _ => None,
    }
}

fn apply_link_params(
    scenario: &mut Scenario,
    link: Link,
    p: &LinkParamsFile,
    origin: &str,
    prefix: &str,
) -> Result<(), ConfigError> {
    let positive = |key: &str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(invalid(origin, format!("{prefix}.{key}"), "must be > 0"))
        }
    };
    let non_negative = |key: &str, v: f64| {
        if v.is_finite() && v >= 0.0 {
            Ok(v)
        } else {
            Err(invalid(origin, format!("{prefix}.{key}"), "must be >= 0"))
        }
    };
    let t = &mut scenario.links;
    if let Some(v) = p.download_rate_mbps {
        t.get_mut(link, Direction::Download).data_rate_bps = positive("download_rate_mbps", v)? * 1e6;
    }
    if let Some(v) = p.upload_rate_mbps {
        t.get_mut(link, Direction::Upload).data_rate_bps = positive("upload_rate_mbps", v)? * 1e6;
    }
    if let Some(v) = p.download_energy_j {
        t.get_mut(link, Direction::Download).energy_per_50mb_j = non_negative("download_energy_j", v)?;
    }
    if let Some(v) = p.upload_energy_j {
        t.get_mut(link, Direction::Upload).energy_per_50mb_j = non_negative("upload_energy_j", v)?;
    }
    if let Some(v) = p.idle_overhead_w {
        t.set_idle_overhead_w(link, non_negative("idle_overhead_w", v)?);
    }
    Ok(())
}

fn build_step(i: usize, f: StepFile, origin: &str) -> Result<Step, ConfigError> {
    let key = format!("steps[{i}]");
    let kinds = [
        f.task.is_some(),
        f.capture.is_some(),
        f.transfer.is_some(),
        f.idle_s.is_some(),
    ];
    if kinds.iter().filter(|&&k| k).count() != 1 {
        return Err(invalid(
            origin,
            key,
            "needs exactly one of `task`, `capture`, `transfer`, `idle_s`",
        ));
    }
    let (default_name, kind) = if let Some(task) = f.task {
        (task.clone(), StepKind::Task { task })
    } else if let Some(c) = f.capture {
        let resolution = match c.resolution {
            Some(r) => r
                .parse::<Resolution>()
                .map_err(|e| invalid(origin, format!("{key}.capture.resolution"), e.to_string()))?,
            None => Resolution::REFERENCE,
        };
        (
            "capture".to_string(),
            StepKind::Capture {
                n_images: c.n_images,
                resolution,
            },
        )
    } else if let Some(t) = f.transfer {
        let direction = t
            .direction
            .parse::<Direction>()
            .map_err(|e| invalid(origin, format!("{key}.transfer.direction"), e.to_string()))?;
        let link = t
            .link
            .map(|l| l.parse::<Link>())
            .transpose()
            .map_err(|e| invalid(origin, format!("{key}.transfer.link"), e.to_string()))?;
        (
            "transfer".to_string(),
            StepKind::Transfer {
                payload_bytes: t.payload_bytes,
                direction,
                link,
            },
        )
    } else {
        let d = f.idle_s.unwrap_or_default();
        if !(d.is_finite() && d >= 0.0) {
            return Err(invalid(origin, format!("{key}.idle_s"), "must be >= 0"));
        }
        ("idle".to_string(), StepKind::Idle { duration_s: d })
    };
    Ok(Step {
        name: f.name.unwrap_or(default_name),
        kind,
    })
}

fn harvest_from_file(f: HarvestFile) -> HarvestProfile {
    HarvestProfile {
        entries: f.profile,
        start_hour: f.start_hour,
    }
}

/// Parses a standalone harvest profile file.
pub fn parse_harvest(text: &str, origin: &str) -> Result<HarvestProfile, ConfigError> {
    let f: HarvestFile = toml::from_str(text).map_err(|e| parse_err(origin, e))?;
    let h = harvest_from_file(f);
    h.validate().map_err(|source| ConfigError::Sim {
        origin: origin.into(),
        source,
    })?;
    Ok(h)
}

/// Loads a harvest profile from a path, or a bundled name.
pub fn load_harvest(path_or_name: &str) -> Result<HarvestProfile, ConfigError> {
    let path = Path::new(path_or_name);
    if !path.exists() {
        if let Some(text) = builtin_harvest_text(path_or_name) {
            return parse_harvest(text, path_or_name);
        }
    }
    parse_harvest(&read(path)?, &path.display().to_string())
}

/// Parses a segmentation settings file.
pub fn parse_segmentation(text: &str, origin: &str) -> Result<SegmentationConfig, ConfigError> {
    let cfg: SegmentationConfig = toml::from_str(text).map_err(|e| parse_err(origin, e))?;
    cfg.validate()
        .map_err(|e| invalid(origin, "segmentation", e.to_string()))?;
    Ok(cfg)
}

/// Parses scenario text. `base_dir` resolves a relative device path.
pub fn parse_scenario(
    text: &str,
    origin: &str,
    base_dir: Option<&Path>,
) -> Result<LoadedScenario, ConfigError> {
    let f: ScenarioFile = toml::from_str(text).map_err(|e| parse_err(origin, e))?;

    let (device, has_baseline) = match f.device {
        None => return Err(invalid(origin, "device", "missing")),
        Some(toml::Value::String(name)) => {
            let candidate = base_dir.map_or_else(|| PathBuf::from(&name), |d| d.join(&name));
            if candidate.exists() {
                let dev_origin = candidate.display().to_string();
                device_from_str(&read(&candidate)?, &dev_origin)?
            } else if let Some(t) = builtin_device_text(&name) {
                device_from_str(t, &name)?
            } else {
                return Err(invalid(
                    origin,
                    "device",
                    format!("`{name}` is neither a bundled model nor a readable file"),
                ));
            }
        }
        Some(v @ toml::Value::Table(_)) => {
            let file = DeviceFile::deserialize(v).map_err(|e| ConfigError::Parse {
                origin: origin.into(),
                message: format!("in `device`: {}", e.to_string().trim_end()),
            })?;
            file.build()
        }
        Some(_) => {
            return Err(invalid(origin, "device", "expected a model name, path or table"));
        }
    };

    let name = f.name.unwrap_or_else(|| origin.to_string());
    let mut s = Scenario::new(name, device);
    if let Some(v) = f.wake_period_s {
        s.wake_period_s = v;
    }
    if let Some(v) = f.watchdog_limit_s {
        s.watchdog_limit_s = v;
    }
    if let Some(v) = f.ambient_c {
        s.ambient_c = v;
    }
    if let Some(a) = f.attached {
        s.attached = a.into_iter().collect::<BTreeSet<_>>();
    }
    if let Some(b) = f.boot {
        s.boot = b;
    }
    if let Some(m) = f.shutdown {
        s.shutdown = parse_shutdown(&m)
            .ok_or_else(|| invalid(origin, "shutdown", "expected graceful, forced or none"))?;
    }

    if let Some(c) = f.capture {
        let mut m = CaptureModel::default();
        if let Some(v) = c.min_interval_s {
            m.min_interval_s = v;
        }
        if let Some(v) = c.reference_task {
            m.reference_task = v;
        }
        m.extra_power_w = c.extra_power_w;
        m.jitter = c.jitter;
        if let Some(table) = c.table {
            m.table = CaptureTimeTable::parse_entries(&table)
                .map_err(|e| invalid(origin, "capture.table", e.to_string()))?;
        }
        s.capture = m;
    }

    if let Some(l) = f.link {
        if let Some(sel) = l.selected {
            s.link = sel
                .parse()
                .map_err(|e: crate::network::NetworkError| invalid(origin, "link.selected", e.to_string()))?;
        }
        if let Some(p) = &l.wifi {
            apply_link_params(&mut s, Link::Wifi, p, origin, "link.wifi")?;
        }
        if let Some(p) = &l.ethernet {
            apply_link_params(&mut s, Link::Ethernet, p, origin, "link.ethernet")?;
        }
    }

    s.steps = f
        .steps
        .into_iter()
        .enumerate()
        .map(|(i, st)| build_step(i, st, origin))
        .collect::<Result<_, _>>()?;

    let mut battery = Battery::default();
    if let Some(b) = f.battery {
        if let Some(v) = b.capacity_mah {
            battery.capacity_mah = v;
        }
        if let Some(v) = b.nominal_voltage_v {
            battery.nominal_voltage_v = v;
        }
        if let Some(v) = b.initial_charge_fraction {
            battery.initial_charge_fraction = v;
        }
    }
    let sim_err = |source| ConfigError::Sim {
        origin: origin.into(),
        source,
    };
    battery.validate().map_err(sim_err)?;
    let harvest = f.harvest.map(harvest_from_file);
    if let Some(h) = &harvest {
        h.validate().map_err(sim_err)?;
    }
    let horizon_s = match f.horizon_days {
        Some(d) if d.is_finite() && d > 0.0 => d * 86_400.0,
        Some(_) => return Err(invalid(origin, "horizon_days", "must be > 0")),
        None => DEFAULT_HORIZON_S,
    };

    let calibration_window_j = f.calibration.map(|c| c.window_j);
    match (calibration_window_j, has_baseline) {
        (Some(_), true) => {
            return Err(invalid(
                origin,
                "calibration",
                "device already sets idle_baseline_w; remove one of them",
            ))
        }
        (Some(w), false) => {
            s.device.idle_baseline_w = calibrate_idle_baseline(&s, w).map_err(sim_err)?;
        }
        (None, true) => {}
        (None, false) => {
            return Err(invalid(
                origin,
                "device.idle_baseline_w",
                "missing; set it or add a [calibration] section",
            ))
        }
    }
    s.validate().map_err(sim_err)?;

    Ok(LoadedScenario {
        setup: SimulationSetup {
            scenario: s,
            battery,
            harvest,
            horizon_s,
        },
        calibration_window_j,
    })
}

/// Loads a scenario from a path, or a bundled name when no such file exists.
pub fn load_scenario(path_or_name: &str) -> Result<LoadedScenario, ConfigError> {
    let path = Path::new(path_or_name);
    if !path.exists() {
        if let Some(text) = builtin_scenario_text(path_or_name) {
            return parse_scenario(text, path_or_name, None);
        }
    }
    let text = read(path)?;
    parse_scenario(&text, &path.display().to_string(), path.parent())
}

/// The bundled hive deployment, calibrated.
pub fn builtin_setup() -> SimulationSetup {
    parse_scenario(SCENARIO_TEXT, BUILTIN_SCENARIO, None)
        .expect("bundled scenario is valid")
        .setup
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const MINIMAL: &str = r#"
device = "makers-beehive"
attached = ["arduino"]
[calibration]
window_j = 548.0
[[steps]]
task = "step1"
"#;

    #[test]
    fn builtin_scenario_loads_and_calibrates() {
        let loaded = parse_scenario(SCENARIO_TEXT, "builtin", None).unwrap();
        let s = &loaded.setup.scenario;
        assert_eq!(s.steps.len(), 5);
        assert_eq!(s.wake_period_s, 3900.0);
        assert_eq!(loaded.calibration_window_j, Some(548.0));
        // 300 s of host-on time plus 0.3 s spike allowance, 184 J of extras
        let idle = s.device.idle_power(&s.attached, true).unwrap();
        assert_relative_eq!(idle, 364.0 / 300.3, max_relative = 1e-9);
    }

    #[test]
    fn builtin_device_parses() {
        let m = parse_device(DEVICE_TEXT).unwrap();
        assert_eq!(m.tasks["step3"].energy_j, 126.1);
        assert_eq!(m.peripherals["arduino"].active_idle_w, 0.5);
        assert_eq!(m.off_standby_w, 0.5);
        assert_eq!(m.idle_baseline_w, 0.0);
        m.validate().unwrap();
    }

    #[test]
    fn minimal_scenario_uses_defaults() {
        let loaded = parse_scenario(MINIMAL, "min", None).unwrap();
        let s = &loaded.setup.scenario;
        assert_eq!(s.wake_period_s, 3600.0);
        assert_eq!(s.steps[0].name, "step1");
        assert_eq!(loaded.setup.battery, Battery::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = format!("{MINIMAL}\n[battery]\ncapacity = 3\n");
        let err = parse_scenario(&text, "x", None).unwrap_err().to_string();
        assert!(err.contains("capacity"), "{err}");
        let text = MINIMAL.replace("attached", "atached");
        let err = parse_scenario(&text, "x", None).unwrap_err().to_string();
        assert!(err.contains("atached"), "{err}");
    }

    #[test]
    fn step_must_have_one_kind() {
        let text = format!("{MINIMAL}\n[[steps]]\ntask = \"step1\"\nidle_s = 3.0\n");
        let err = parse_scenario(&text, "x", None).unwrap_err().to_string();
        assert!(err.contains("steps[1]"), "{err}");
    }

    #[test]
    fn missing_baseline_is_reported() {
        let text = MINIMAL.replace("[calibration]\nwindow_j = 548.0\n", "");
        let err = parse_scenario(&text, "x", None).unwrap_err().to_string();
        assert!(err.contains("idle_baseline_w"), "{err}");
    }

    #[test]
    fn inline_device_and_links() {
        let text = r#"
device = { idle_baseline_w = 1.0, tasks = { boot = { duration_s = 5.0, energy_j = 1.0 } } }
[link]
selected = "ethernet"
[link.ethernet]
idle_overhead_w = 0.1
upload_rate_mbps = 10.0
[[steps]]
name = "push"
transfer = { payload_bytes = 1000000, direction = "upload" }
"#;
        let loaded = parse_scenario(text, "x", None).unwrap();
        let s = &loaded.setup.scenario;
        assert_eq!(s.link, Link::Ethernet);
        assert_eq!(s.links.idle_overhead_w(Link::Ethernet), 0.1);
        assert_eq!(s.links.get(Link::Ethernet, Direction::Upload).data_rate_bps, 10e6);
        let err = parse_scenario(&text.replace("upload\"", "sideways\""), "x", None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("steps[0].transfer.direction"), "{err}");
    }

    #[test]
    fn harvest_and_segmentation_files() {
        let h = parse_harvest(HARVEST_TEXT, "h").unwrap();
        assert_eq!(h.entries.len(), 5);
        assert!(parse_harvest("profile = [[25.0, 1.0]]", "h").is_err());
        let cfg = parse_segmentation("idle_band_w = [1.8, 2.2]\nmin_segment_s = 2.0", "s").unwrap();
        assert_eq!(cfg.idle_band_w, (1.8, 2.2));
        assert_eq!(cfg.min_segment_s, 2.0);
        assert!(parse_segmentation("idle_band_w = [2.2, 1.8]", "s").is_err());
        assert!(parse_segmentation("idle_band = [1.8, 2.2]", "s").is_err());
    }
}
