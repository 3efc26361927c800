//! Measured power model of the sensor node and a ground-truth trace generator.
//!
//! Task energies are stored as energy *above* the host's idle level over the
//! task duration, so they stay valid when peripherals are attached or removed.
//! A task running for `d` seconds on a host whose idle draw is `P` therefore
//! costs `P * d + energy_j` in total.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segment::PhaseLabel;
use crate::trace::{PowerTrace, Sample, TraceError};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown peripheral `{0}`")]
    UnknownPeripheral(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("phase label `{0}` cannot be synthesized")]
    UnsupportedPhase(PhaseLabel),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Fixed extra draw of an attached peripheral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeripheralCost {
    pub name: String,
    /// Extra watts while the host is on.
    pub active_idle_w: f64,
    /// Extra watts while the host is off but the peripheral stays plugged in.
    pub off_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub duration_s: f64,
    /// Energy above the idle level over `duration_s`.
    pub energy_j: f64,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, duration_s: f64, energy_j: f64) -> Self {
        TaskSpec {
            name: name.into(),
            duration_s,
            energy_j,
        }
    }

    /// Mean power above idle while the task runs.
    pub fn extra_power_w(&self) -> f64 {
        self.energy_j / self.duration_s
    }
}

/// Ambient-temperature scaling of task energy.
///
/// The factor is `cold_energy_factor` at the cold-range midpoint, `1.0` at
/// the reference-range midpoint, linear in between and clamped outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModifier {
    pub reference_range_c: (f64, f64),
    pub cold_range_c: (f64, f64),
    pub cold_energy_factor: f64,
}

impl Default for TemperatureModifier {
    fn default() -> Self {
        TemperatureModifier {
            reference_range_c: (19.0, 22.0),
            cold_range_c: (3.0, 5.0),
            // 186.4 J cold / 169.6 J room for the same script
            cold_energy_factor: 1.099,
        }
    }
}

impl TemperatureModifier {
    pub fn reference_c(&self) -> f64 {
        0.5 * (self.reference_range_c.0 + self.reference_range_c.1)
    }

    pub fn cold_c(&self) -> f64 {
        0.5 * (self.cold_range_c.0 + self.cold_range_c.1)
    }

    pub fn factor(&self, ambient_c: f64) -> f64 {
        let (cold, reference) = (self.cold_c(), self.reference_c());
        let (lo_t, hi_t, lo_f, hi_f) = if cold <= reference {
            (cold, reference, self.cold_energy_factor, 1.0)
        } else {
            (reference, cold, 1.0, self.cold_energy_factor)
        };
        if ambient_c <= lo_t {
            lo_f
        } else if ambient_c >= hi_t {
            hi_f
        } else {
            lo_f + (hi_f - lo_f) * (ambient_c - lo_t) / (hi_t - lo_t)
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let ok_range = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !ok_range(self.reference_range_c) {
            return Err(invalid("temperature.reference_range_c", "need low <= high"));
        }
        if !ok_range(self.cold_range_c) {
            return Err(invalid("temperature.cold_range_c", "need low <= high"));
        }
        if self.cold_c() == self.reference_c() {
            return Err(invalid(
                "temperature",
                "cold and reference midpoints must differ",
            ));
        }
        if !(self.cold_energy_factor.is_finite() && self.cold_energy_factor > 0.0) {
            return Err(invalid("temperature.cold_energy_factor", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ShutdownMode {
    #[default]
    Graceful,
    Forced,
    /// No shutdown phase: power is cut right after the last step.
    None,
}

/// Shutdown timing. The graceful shutdown briefly spikes above idle while
/// processes are told to stop; the forced cut is the same energy prorated to
/// its shorter duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShutdownSpec {
    pub graceful_s: f64,
    pub forced_s: f64,
    /// Extra energy as a fraction of idle power times graceful duration.
    pub spike_fraction: f64,
    /// Explicit extra energy of a graceful shutdown; overrides `spike_fraction`.
    pub energy_j: Option<f64>,
}

impl Default for ShutdownSpec {
    fn default() -> Self {
        ShutdownSpec {
            graceful_s: 3.0,
            forced_s: 0.5,
            spike_fraction: 0.1,
            energy_j: None,
        }
    }
}

impl ShutdownSpec {
    pub fn duration_s(&self, mode: ShutdownMode) -> f64 {
        match mode {
            ShutdownMode::Graceful => self.graceful_s,
            ShutdownMode::Forced => self.forced_s,
            ShutdownMode::None => 0.0,
        }
    }

    /// Extra energy above idle for `mode`, given the host's idle power.
    pub fn extra_energy_j(&self, mode: ShutdownMode, idle_w: f64) -> f64 {
        let graceful = self
            .energy_j
            .unwrap_or(self.spike_fraction * idle_w * self.graceful_s);
        match mode {
            ShutdownMode::Graceful => graceful,
            ShutdownMode::Forced => graceful * self.forced_s / self.graceful_s,
            ShutdownMode::None => 0.0,
        }
    }
}

/// Name of the task holding the boot profile.
pub const BOOT_TASK: &str = "boot";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    /// Host on, idle, nothing attached.
    pub idle_baseline_w: f64,
    pub peripherals: BTreeMap<String, PeripheralCost>,
    pub tasks: BTreeMap<String, TaskSpec>,
    pub stress_safe_w: f64,
    pub stress_burn_w: f64,
    /// Host off (watchdog micro-controller still powered).
    pub off_standby_w: f64,
    pub temp_modifier: TemperatureModifier,
    pub shutdown: ShutdownSpec,
}

impl Default for DeviceModel {
    fn default() -> Self {
        DeviceModel {
            idle_baseline_w: 0.0,
            peripherals: BTreeMap::new(),
            tasks: BTreeMap::new(),
            stress_safe_w: 2.65,
            stress_burn_w: 4.5,
            off_standby_w: 0.5,
            temp_modifier: TemperatureModifier::default(),
            shutdown: ShutdownSpec::default(),
        }
    }
}

/// One entry of a synthesis schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseSpec {
    /// `off`, `idle`, `boot` or `shutdown` at their model-defined level.
    Label(PhaseLabel),
    /// A named task at its mean extra power above idle.
    Task(String),
    /// Explicit level: host-state power for `label` plus `extra_w`.
    Level { label: PhaseLabel, extra_w: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePhase {
    pub phase: PhaseSpec,
    pub duration_s: f64,
}

impl SchedulePhase {
    pub fn label(label: PhaseLabel, duration_s: f64) -> Self {
        SchedulePhase {
            phase: PhaseSpec::Label(label),
            duration_s,
        }
    }

    pub fn task(name: impl Into<String>, duration_s: f64) -> Self {
        SchedulePhase {
            phase: PhaseSpec::Task(name.into()),
            duration_s,
        }
    }

    pub fn level(label: PhaseLabel, extra_w: f64, duration_s: f64) -> Self {
        SchedulePhase {
            phase: PhaseSpec::Level { label, extra_w },
            duration_s,
        }
    }
}

/// A schedule phase resolved to a constant power over `[start_s, end_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPhase {
    pub label: PhaseLabel,
    pub start_s: f64,
    pub end_s: f64,
    pub power_w: f64,
}

impl ResolvedPhase {
    pub fn energy_j(&self) -> f64 {
        self.power_w * (self.end_s - self.start_s)
    }
}

impl DeviceModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        let nonneg = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be a finite value >= 0, got {v}")))
            }
        };
        nonneg("idle_baseline_w", self.idle_baseline_w)?;
        nonneg("stress_safe_w", self.stress_safe_w)?;
        nonneg("stress_burn_w", self.stress_burn_w)?;
        nonneg("off_standby_w", self.off_standby_w)?;
        if self.stress_burn_w < self.stress_safe_w {
            return Err(invalid("stress_burn_w", "must be >= stress_safe_w"));
        }
        for (key, p) in &self.peripherals {
            nonneg(&format!("peripherals.{key}.active_idle_w"), p.active_idle_w)?;
            nonneg(&format!("peripherals.{key}.off_w"), p.off_w)?;
        }
        for (key, t) in &self.tasks {
            if !(t.duration_s.is_finite() && t.duration_s > 0.0) {
                return Err(invalid(format!("tasks.{key}.duration_s"), "must be > 0"));
            }
            nonneg(&format!("tasks.{key}.energy_j"), t.energy_j)?;
            if t.extra_power_w() > self.stress_burn_w {
                return Err(invalid(
                    format!("tasks.{key}"),
                    format!(
                        "mean extra power {:.3} W exceeds stress_burn_w {} W",
                        t.extra_power_w(),
                        self.stress_burn_w
                    ),
                ));
            }
        }
        let sd = &self.shutdown;
        if !(sd.graceful_s.is_finite() && sd.graceful_s > 0.0) {
            return Err(invalid("shutdown.graceful_s", "must be > 0"));
        }
        if !(sd.forced_s.is_finite() && sd.forced_s > 0.0) {
            return Err(invalid("shutdown.forced_s", "must be > 0"));
        }
        nonneg("shutdown.spike_fraction", sd.spike_fraction)?;
        if let Some(e) = sd.energy_j {
            nonneg("shutdown.energy_j", e)?;
        }
        self.temp_modifier.validate()
    }

    pub fn task(&self, name: &str) -> Result<&TaskSpec, ModelError> {
        self.tasks
            .get(name)
            .ok_or_else(|| ModelError::UnknownTask(name.to_string()))
    }

    pub fn check_attached<'a, I>(&self, attached: I) -> Result<(), ModelError>
    where
        I: IntoIterator<Item = &'a String>,
    {
        for name in attached {
            if !self.peripherals.contains_key(name) {
                return Err(ModelError::UnknownPeripheral(name.clone()));
            }
        }
        Ok(())
    }

    /// Resting power with `attached` peripherals, host on or off.
    pub fn idle_power(&self, attached: &BTreeSet<String>, host_on: bool) -> Result<f64, ModelError> {
        let mut total = if host_on {
            self.idle_baseline_w
        } else {
            self.off_standby_w
        };
        for name in attached {
            let p = self
                .peripherals
                .get(name)
                .ok_or_else(|| ModelError::UnknownPeripheral(name.clone()))?;
            total += if host_on { p.active_idle_w } else { p.off_w };
        }
        Ok(total)
    }

    /// Temperature-scaled energy above idle of one full run of `task_name`.
    pub fn task_energy(&self, task_name: &str, ambient_c: f64) -> Result<f64, ModelError> {
        let task = self.task(task_name)?;
        Ok(task.energy_j * self.temp_modifier.factor(ambient_c))
    }

    /// Tasks whose plateau (idle plus mean extra power) exceeds the burn ceiling.
    pub fn ceiling_warnings(&self, attached: &BTreeSet<String>) -> Result<Vec<String>, ModelError> {
        let idle = self.idle_power(attached, true)?;
        Ok(self
            .tasks
            .values()
            .filter(|t| idle + t.extra_power_w() > self.stress_burn_w)
            .map(|t| t.name.clone())
            .collect())
    }

    /// Resolves a schedule to constant-power intervals starting at t = 0.
    pub fn resolve_schedule(
        &self,
        schedule: &[SchedulePhase],
        attached: &BTreeSet<String>,
        ambient_c: f64,
    ) -> Result<Vec<ResolvedPhase>, ModelError> {
        let on = self.idle_power(attached, true)?;
        let off = self.idle_power(attached, false)?;
        let factor = self.temp_modifier.factor(ambient_c);
        let mut t = 0.0;
        let mut out = Vec::with_capacity(schedule.len());
        for (i, entry) in schedule.iter().enumerate() {
            if !(entry.duration_s.is_finite() && entry.duration_s > 0.0) {
                return Err(invalid(format!("schedule[{i}].duration_s"), "must be > 0"));
            }
            let (label, power_w) = match &entry.phase {
                PhaseSpec::Label(PhaseLabel::Off) => (PhaseLabel::Off, off),
                PhaseSpec::Label(PhaseLabel::Idle) => (PhaseLabel::Idle, on),
                PhaseSpec::Label(PhaseLabel::Boot) => {
                    (PhaseLabel::Boot, on + self.task(BOOT_TASK)?.extra_power_w() * factor)
                }
                PhaseSpec::Label(PhaseLabel::Shutdown) => {
                    let extra = self.shutdown.extra_energy_j(ShutdownMode::Graceful, on);
                    (
                        PhaseLabel::Shutdown,
                        on + extra * factor / self.shutdown.graceful_s,
                    )
                }
                PhaseSpec::Label(other) => return Err(ModelError::UnsupportedPhase(*other)),
                PhaseSpec::Task(name) => {
                    let label = if name == BOOT_TASK {
                        PhaseLabel::Boot
                    } else {
                        PhaseLabel::Task
                    };
                    (label, on + self.task(name)?.extra_power_w() * factor)
                }
                PhaseSpec::Level { label, extra_w } => {
                    if !(extra_w.is_finite() && *extra_w >= 0.0) {
                        return Err(invalid(format!("schedule[{i}].extra_w"), "must be >= 0"));
                    }
                    let base = if *label == PhaseLabel::Off { off } else { on };
                    (*label, base + extra_w)
                }
            };
            let end = t + entry.duration_s;
            out.push(ResolvedPhase {
                label,
                start_s: t,
                end_s: end,
                power_w,
            });
            t = end;
        }
        Ok(out)
    }

    /// Analytic energy of a schedule: sum of power times duration.
    pub fn schedule_energy(
        &self,
        schedule: &[SchedulePhase],
        attached: &BTreeSet<String>,
        ambient_c: f64,
    ) -> Result<f64, ModelError> {
        Ok(self
            .resolve_schedule(schedule, attached, ambient_c)?
            .iter()
            .map(ResolvedPhase::energy_j)
            .sum())
    }

    /// Samples a piecewise-constant trace of `schedule` every `sample_dt_s`.
    ///
    /// A sample at time `t` takes the power of the phase containing `t`;
    /// the final sample sits exactly at the schedule end.
    pub fn synthesize_trace(
        &self,
        schedule: &[SchedulePhase],
        attached: &BTreeSet<String>,
        ambient_c: f64,
        sample_dt_s: f64,
    ) -> Result<PowerTrace, ModelError> {
        let phases = self.resolve_schedule(schedule, attached, ambient_c)?;
        Ok(sample_phases(&phases, sample_dt_s)?)
    }
}

/// Uniformly samples resolved phases into a trace.
pub fn sample_phases(phases: &[ResolvedPhase], sample_dt_s: f64) -> Result<PowerTrace, ModelError> {
    if !(sample_dt_s.is_finite() && sample_dt_s > 0.0) {
        return Err(invalid("sample_dt_s", "must be > 0"));
    }
    let Some(last) = phases.last() else {
        return Ok(PowerTrace::default());
    };
    let end = last.end_s;
    let n = (end / sample_dt_s).ceil() as usize;
    let mut samples = Vec::with_capacity(n + 1);
    let mut idx = 0;
    for k in 0..n {
        let t = k as f64 * sample_dt_s;
        if t >= end {
            break;
        }
        while idx + 1 < phases.len() && t >= phases[idx].end_s {
            idx += 1;
        }
        samples.push(Sample::new(t, phases[idx].power_w));
    }
    // drop a grid point that would land within rounding of the end sample
    if samples.last().is_some_and(|s| end - s.t < sample_dt_s * 1e-6) {
        samples.pop();
    }
    samples.push(Sample::new(end, last.power_w));
    Ok(PowerTrace::new(samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> DeviceModel {
        let mut m = DeviceModel {
            idle_baseline_w: 1.9,
            ..DeviceModel::default()
        };
        m.peripherals.insert(
            "arduino".into(),
            PeripheralCost {
                name: "arduino".into(),
                active_idle_w: 0.5,
                off_w: 0.0,
            },
        );
        m.peripherals.insert(
            "camera".into(),
            PeripheralCost {
                name: "camera".into(),
                active_idle_w: 0.0,
                off_w: 0.0,
            },
        );
        for (name, d, e) in [
            ("boot", 10.0, 14.5),
            ("step1", 2.0, 6.2),
            ("step2", 20.0, 23.7),
            ("step3", 60.0, 126.1),
            ("step4", 15.0, 13.5),
            ("script", 97.0, 169.6),
        ] {
            m.tasks.insert(name.into(), TaskSpec::new(name, d, e));
        }
        m.validate().unwrap();
        m
    }

    fn set(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn arduino_adds_half_watt_when_on_only() {
        let m = model();
        let bare = m.idle_power(&set(&[]), true).unwrap();
        let with = m.idle_power(&set(&["arduino"]), true).unwrap();
        assert_eq!(bare, 1.9);
        assert_relative_eq!(with, 2.4);
        assert_relative_eq!(with - bare, 0.5, epsilon = 1e-12);
        assert_eq!(m.idle_power(&set(&["arduino"]), false).unwrap(), 0.5);
        assert_eq!(
            m.idle_power(&set(&["lidar"]), true),
            Err(ModelError::UnknownPeripheral("lidar".into()))
        );
    }

    #[test]
    fn temperature_scaling() {
        let m = model();
        assert_eq!(m.task_energy("script", 20.5).unwrap(), 169.6);
        assert!((m.task_energy("script", 4.0).unwrap() - 186.4).abs() < 0.1);
        let mid = m.task_energy("step3", 12.25).unwrap();
        assert_relative_eq!(mid, 126.1 * (1.0 + 0.099 / 2.0), max_relative = 1e-12);
        // clamped outside the measured span
        assert_eq!(m.task_energy("step3", -10.0).unwrap(), 126.1 * 1.099);
        assert_eq!(m.task_energy("step3", 35.0).unwrap(), 126.1);
        assert!(matches!(m.task_energy("nope", 20.0), Err(ModelError::UnknownTask(_))));
    }

    #[test]
    fn flat_off_trace() {
        let m = model();
        let tr = m
            .synthesize_trace(&[SchedulePhase::label(PhaseLabel::Off, 10.0)], &set(&[]), 20.5, 0.1)
            .unwrap();
        assert!(tr.samples().iter().all(|s| s.p == 0.5));
        assert_relative_eq!(tr.total_energy(), 5.0, max_relative = 1e-9);
    }

    #[test]
    fn step3_plateau_sits_at_burn_ceiling() {
        let m = model();
        let attached = set(&["arduino"]);
        let tr = m
            .synthesize_trace(&[SchedulePhase::task("step3", 60.0)], &attached, 20.5, 0.5)
            .unwrap();
        let plateau = tr.samples()[10].p;
        assert_relative_eq!(plateau, 2.4 + 126.1 / 60.0, epsilon = 1e-12);
        assert!((plateau - 4.50).abs() < 0.005);
        // step1 is short but dense: 2.4 + 6.2 / 2 W
        assert_eq!(m.ceiling_warnings(&attached).unwrap(), vec!["step1", "step3"]);
    }

    #[test]
    fn invalid_models_are_rejected() {
        let mut m = model();
        m.tasks.insert("burn".into(), TaskSpec::new("burn", 1.0, 10.0));
        assert!(matches!(m.validate(), Err(ModelError::Invalid { .. })));
        let mut m = model();
        m.stress_burn_w = 1.0;
        assert!(m.validate().is_err());
        let mut m = model();
        m.tasks.get_mut("step1").unwrap().duration_s = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn forced_shutdown_is_prorated() {
        let sd = ShutdownSpec::default();
        let graceful = sd.extra_energy_j(ShutdownMode::Graceful, 2.0);
        assert_relative_eq!(graceful, 0.6, epsilon = 1e-12);
        assert_relative_eq!(
            sd.extra_energy_j(ShutdownMode::Forced, 2.0),
            0.6 * 0.5 / 3.0,
            epsilon = 1e-12
        );
        assert!(sd.duration_s(ShutdownMode::Forced) < 1.0);
    }

    #[test]
    fn sampling_handles_off_grid_end() {
        let m = model();
        let sched = [
            SchedulePhase::label(PhaseLabel::Off, 1.05),
            SchedulePhase::label(PhaseLabel::Idle, 2.0),
        ];
        let tr = m.synthesize_trace(&sched, &set(&[]), 20.5, 0.1).unwrap();
        assert_relative_eq!(tr.extent().unwrap().t1, 3.05, epsilon = 1e-12);
        assert!(m.synthesize_trace(&sched, &set(&[]), 20.5, 0.0).is_err());
        assert!(matches!(
            m.synthesize_trace(&[SchedulePhase::task("x", 1.0)], &set(&[]), 20.5, 0.1),
            Err(ModelError::UnknownTask(_))
        ));
        assert!(matches!(
            m.synthesize_trace(
                &[SchedulePhase::label(PhaseLabel::Unknown, 1.0)],
                &set(&[]),
                20.5,
                0.1
            ),
            Err(ModelError::UnsupportedPhase(PhaseLabel::Unknown))
        ));
    }
}
