//! Duty-cycle simulation: one wake cycle (boot, steps, shutdown, off) under a
//! watchdog, battery lifetime over repeated cycles, and parameter sweeps.
//!
//! Energy accounting for every host-on phase is `P_idle * duration + extra`,
//! where `P_idle` is the host's resting draw with the attached peripherals
//! (plus any link idle overhead) and `extra` the phase's energy above idle.

mod events;
pub mod lifetime;
pub mod sweep;

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::capture::{CaptureError, CaptureModel, Resolution};
use crate::device::{DeviceModel, ModelError, PhaseSpec, SchedulePhase, ShutdownMode, BOOT_TASK};
use crate::network::{Direction, Link, LinkTable, NetworkError};
use crate::segment::PhaseLabel;
use events::{Event, EventQueue};

pub use lifetime::{
    lifetime_from_cycle, simulate_lifetime, Battery, CycleState, HarvestProfile, LifetimeReport,
    LifetimeRun, DEFAULT_HORIZON_S,
};
pub use sweep::{sweep, SimulationSetup, SweepParam, SweepPoint};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("step `{step}`: {source}")]
    Step { step: String, source: Box<SimError> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),
    #[error("bad value `{value}` for `{param}`: {reason}")]
    BadValue {
        param: String,
        value: String,
        reason: String,
    },
}

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SimError {
    SimError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StepKind {
    Task {
        task: String,
    },
    Capture {
        n_images: u32,
        resolution: Resolution,
    },
    Transfer {
        payload_bytes: u64,
        direction: Direction,
        /// Falls back to the scenario's selected link.
        link: Option<Link>,
    },
    /// Host stays on, doing nothing.
    Idle {
        duration_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub name: String,
    #[serde(flatten)]
    pub kind: StepKind,
}

impl Step {
    pub fn task(name: impl Into<String>) -> Self {
        let name = name.into();
        Step {
            kind: StepKind::Task { task: name.clone() },
            name,
        }
    }

    pub fn capture(name: impl Into<String>, n_images: u32, resolution: Resolution) -> Self {
        Step {
            name: name.into(),
            kind: StepKind::Capture {
                n_images,
                resolution,
            },
        }
    }

    pub fn transfer(name: impl Into<String>, payload_bytes: u64, direction: Direction) -> Self {
        Step {
            name: name.into(),
            kind: StepKind::Transfer {
                payload_bytes,
                direction,
                link: None,
            },
        }
    }

    pub fn idle(name: impl Into<String>, duration_s: f64) -> Self {
        Step {
            name: name.into(),
            kind: StepKind::Idle { duration_s },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub device: DeviceModel,
    pub capture: CaptureModel,
    pub links: LinkTable,
    /// Link used by transfer steps that do not name one.
    pub link: Link,
    pub steps: Vec<Step>,
    pub wake_period_s: f64,
    pub watchdog_limit_s: f64,
    pub ambient_c: f64,
    pub attached: BTreeSet<String>,
    pub boot: bool,
    pub shutdown: ShutdownMode,
}

impl Scenario {
    pub fn new(name: impl Into<String>, device: DeviceModel) -> Self {
        Scenario {
            name: name.into(),
            device,
            capture: CaptureModel::default(),
            links: LinkTable::default(),
            link: Link::Wifi,
            steps: Vec::new(),
            wake_period_s: 3600.0,
            watchdog_limit_s: 300.0,
            ambient_c: 20.5,
            attached: BTreeSet::new(),
            boot: true,
            shutdown: ShutdownMode::Graceful,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.device.validate()?;
        self.capture.validate()?;
        self.links.validate()?;
        self.device.check_attached(&self.attached)?;
        if !(self.wake_period_s.is_finite() && self.wake_period_s > 0.0) {
            return Err(invalid("wake_period_s", "must be > 0"));
        }
        if !(self.watchdog_limit_s.is_finite() && self.watchdog_limit_s > 0.0) {
            return Err(invalid("watchdog_limit_s", "must be > 0"));
        }
        if self.watchdog_limit_s > self.wake_period_s {
            return Err(invalid("watchdog_limit_s", "must not exceed wake_period_s"));
        }
        if !self.ambient_c.is_finite() {
            return Err(invalid("ambient_c", "must be finite"));
        }
        if self.boot {
            self.device.task(BOOT_TASK)?;
        }
        for step in &self.steps {
            match &step.kind {
                StepKind::Task { task } => {
                    self.device.task(task).map_err(|e| step_err(step, e.into()))?;
                }
                StepKind::Capture { n_images, .. } => {
                    if *n_images == 0 {
                        return Err(step_err(step, CaptureError::NoImages.into()));
                    }
                    self.capture
                        .extra_power(&self.device)
                        .map_err(|e| step_err(step, e.into()))?;
                }
                StepKind::Idle { duration_s } => {
                    if !(duration_s.is_finite() && *duration_s >= 0.0) {
                        return Err(step_err(step, invalid("idle_s", "must be >= 0")));
                    }
                }
                StepKind::Transfer { .. } => {}
            }
        }
        Ok(())
    }

    /// Links that stay attached for the whole cycle.
    fn links_in_use(&self) -> BTreeSet<Link> {
        let mut used = BTreeSet::new();
        used.insert(self.link);
        for step in &self.steps {
            if let StepKind::Transfer { link: Some(l), .. } = step.kind {
                used.insert(l);
            }
        }
        used
    }
}

fn step_err(step: &Step, e: SimError) -> SimError {
    SimError::Step {
        step: step.name.clone(),
        source: Box::new(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKind {
    Boot,
    Step,
    Shutdown,
    Off,
}

/// Energy split of one phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseEnergy {
    pub name: String,
    pub kind: PhaseKind,
    pub start_s: f64,
    pub duration_s: f64,
    /// Resting draw times duration.
    pub baseline_j: f64,
    /// Contribution above the resting draw.
    pub extra_j: f64,
    pub energy_j: f64,
    /// False when the watchdog cut the phase short or it never started.
    pub completed: bool,
    #[serde(skip)]
    label: PhaseLabel,
    #[serde(skip)]
    power_w: f64,
}

impl PhaseEnergy {
    pub fn label(&self) -> PhaseLabel {
        self.label
    }

    /// Constant power over the phase.
    pub fn power_w(&self) -> f64 {
        self.power_w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleReport {
    pub scenario: String,
    pub period_s: f64,
    pub active_s: f64,
    pub boot: Option<PhaseEnergy>,
    pub steps: Vec<PhaseEnergy>,
    pub shutdown: Option<PhaseEnergy>,
    pub off: PhaseEnergy,
    /// Boot, steps and shutdown together.
    pub active_j: f64,
    pub total_j: f64,
    /// `total_j` normalized to one hour of operation.
    pub hourly_energy_j: f64,
    pub watchdog_tripped: bool,
    /// Host-on resting draw used for the baseline terms.
    pub host_idle_w: f64,
    pub host_off_w: f64,
}

impl CycleReport {
    /// Host-on phases in execution order, skipping never-started steps.
    pub fn active_phases(&self) -> impl Iterator<Item = &PhaseEnergy> {
        self.boot
            .iter()
            .chain(self.steps.iter())
            .chain(self.shutdown.iter())
            .filter(|p| p.duration_s > 0.0)
    }

    /// Sum of the individual parts.
    pub fn sum_of_parts(&self) -> f64 {
        self.active_phases().map(|p| p.energy_j).sum::<f64>() + self.off.energy_j
    }

    pub fn step(&self, name: &str) -> Option<&PhaseEnergy> {
        self.steps.iter().find(|s| s.name == name)
    }

    /// The realized cycle as a synthesis schedule, for trace generation.
    pub fn realized_schedule(&self) -> Vec<SchedulePhase> {
        let mut out: Vec<SchedulePhase> = self
            .active_phases()
            .map(|p| SchedulePhase {
                phase: PhaseSpec::Level {
                    label: p.label,
                    extra_w: (p.power_w - self.host_idle_w).max(0.0),
                },
                duration_s: p.duration_s,
            })
            .collect();
        if self.off.duration_s > 0.0 {
            out.push(SchedulePhase::level(
                PhaseLabel::Off,
                (self.off.power_w - self.host_off_w).max(0.0),
                self.off.duration_s,
            ));
        }
        out
    }
}

struct Planned {
    name: String,
    kind: PhaseKind,
    label: PhaseLabel,
    duration_s: f64,
    base_w: f64,
    extra_j: f64,
}

fn plan_phases(s: &Scenario) -> Result<Vec<Planned>, SimError> {
    let dev = &s.device;
    let host_w = dev.idle_power(&s.attached, true)?;
    let links = s.links_in_use();
    let overhead = |transferring: Option<Link>| -> f64 {
        links
            .iter()
            .filter(|&&l| Some(l) != transferring)
            .map(|&l| s.links.idle_overhead_w(l))
            .sum()
    };
    let factor = dev.temp_modifier.factor(s.ambient_c);
    let mut out = Vec::with_capacity(s.steps.len() + 2);

    if s.boot {
        let boot = dev.task(BOOT_TASK)?;
        out.push(Planned {
            name: BOOT_TASK.into(),
            kind: PhaseKind::Boot,
            label: PhaseLabel::Boot,
            duration_s: boot.duration_s,
            base_w: host_w + overhead(None),
            extra_j: boot.energy_j * factor,
        });
    }
    for step in &s.steps {
        let (duration_s, extra_j, label, transferring) = match &step.kind {
            StepKind::Task { task } => {
                let spec = dev.task(task).map_err(|e| step_err(step, e.into()))?;
                (spec.duration_s, spec.energy_j * factor, PhaseLabel::Task, None)
            }
            StepKind::Capture {
                n_images,
                resolution,
            } => {
                let d = s
                    .capture
                    .duration(*n_images, *resolution)
                    .map_err(|e| step_err(step, e.into()))?;
                let e = s
                    .capture
                    .energy(dev, *n_images, *resolution, s.ambient_c)
                    .map_err(|e| step_err(step, e.into()))?;
                (d, e, PhaseLabel::Task, None)
            }
            StepKind::Transfer {
                payload_bytes,
                direction,
                link,
            } => {
                let link = link.unwrap_or(s.link);
                let m = s.links.get(link, *direction);
                (
                    m.transfer_time(*payload_bytes),
                    m.transfer_energy(*payload_bytes),
                    PhaseLabel::Task,
                    Some(link),
                )
            }
            StepKind::Idle { duration_s } => (*duration_s, 0.0, PhaseLabel::Idle, None),
        };
        out.push(Planned {
            name: step.name.clone(),
            kind: PhaseKind::Step,
            label,
            duration_s,
            base_w: host_w + overhead(transferring),
            extra_j,
        });
    }
    if s.shutdown != ShutdownMode::None {
        out.push(Planned {
            name: "shutdown".into(),
            kind: PhaseKind::Shutdown,
            label: PhaseLabel::Shutdown,
            duration_s: dev.shutdown.duration_s(s.shutdown),
            base_w: host_w + overhead(None),
            extra_j: dev.shutdown.extra_energy_j(s.shutdown, host_w) * factor,
        });
    }
    Ok(out)
}

fn realize(p: &Planned, start_s: f64, elapsed: f64, completed: bool) -> PhaseEnergy {
    let extra_j = if completed {
        p.extra_j
    } else if p.duration_s > 0.0 {
        p.extra_j * (elapsed / p.duration_s).min(1.0)
    } else {
        0.0
    };
    let baseline_j = p.base_w * elapsed;
    PhaseEnergy {
        name: p.name.clone(),
        kind: p.kind,
        start_s,
        duration_s: elapsed,
        baseline_j,
        extra_j,
        energy_j: baseline_j + extra_j,
        completed,
        label: p.label,
        power_w: if p.duration_s > 0.0 {
            p.base_w + p.extra_j / p.duration_s
        } else {
            p.base_w
        },
    }
}

/// Runs one wake cycle.
///
/// Phases execute back to back from t = 0. If the host is still on when the
/// watchdog fires at `watchdog_limit_s`, power is cut at exactly that time;
/// the running phase contributes its extra energy prorated by elapsed time
/// and no shutdown phase happens. The host then stays off until the end of
/// `wake_period_s`.
pub fn run_cycle(scenario: &Scenario) -> Result<CycleReport, SimError> {
    scenario.validate()?;
    let planned = plan_phases(scenario)?;
    let limit = scenario.watchdog_limit_s;

    let mut queue = EventQueue::default();
    let mut realized: Vec<Option<PhaseEnergy>> = vec![None; planned.len()];
    let mut current: Option<(usize, f64)> = None;
    let mut tripped = false;
    let mut host_off_at = 0.0;

    if let Some(first) = planned.first() {
        queue.schedule(first.duration_s, Event::PhaseEnd(0));
        current = Some((0, 0.0));
        queue.schedule(limit, Event::Watchdog);
    }
    while let Some((now, event)) = queue.pop() {
        match event {
            Event::PhaseEnd(i) => {
                let start = current.map_or(0.0, |(_, s)| s);
                realized[i] = Some(realize(&planned[i], start, now - start, true));
                if let Some(next) = planned.get(i + 1) {
                    queue.schedule(now + next.duration_s, Event::PhaseEnd(i + 1));
                    current = Some((i + 1, now));
                } else {
                    host_off_at = now;
                    break;
                }
            }
            Event::Watchdog => {
                if let Some((i, start)) = current.take() {
                    realized[i] = Some(realize(&planned[i], start, now - start, false));
                    tripped = true;
                    host_off_at = now;
                }
                break;
            }
        }
    }

    let dev = &scenario.device;
    let host_idle_w = dev.idle_power(&scenario.attached, true)?;
    let host_off_w = dev.idle_power(&scenario.attached, false)?;

    let mut boot = None;
    let mut shutdown = None;
    let mut steps = Vec::with_capacity(scenario.steps.len());
    for (p, r) in planned.iter().zip(realized) {
        // never started: keep steps listed with zero energy
        let r = r.unwrap_or_else(|| realize(p, host_off_at, 0.0, false));
        match p.kind {
            PhaseKind::Boot => boot = Some(r),
            PhaseKind::Shutdown => shutdown = (r.duration_s > 0.0 || r.completed).then_some(r),
            _ => steps.push(r),
        }
    }

    let off_s = scenario.wake_period_s - host_off_at;
    let off_j = host_off_w * off_s;
    let off = PhaseEnergy {
        name: "off".into(),
        kind: PhaseKind::Off,
        start_s: host_off_at,
        duration_s: off_s,
        baseline_j: off_j,
        extra_j: 0.0,
        energy_j: off_j,
        completed: true,
        label: PhaseLabel::Off,
        power_w: host_off_w,
    };

    let active_j: f64 = boot
        .iter()
        .chain(steps.iter())
        .chain(shutdown.iter())
        .map(|p| p.energy_j)
        .sum();
    let total_j = active_j + off_j;
    Ok(CycleReport {
        scenario: scenario.name.clone(),
        period_s: scenario.wake_period_s,
        active_s: host_off_at,
        boot,
        steps,
        shutdown,
        off,
        active_j,
        total_j,
        hourly_energy_j: total_j * 3600.0 / scenario.wake_period_s,
        watchdog_tripped: tripped,
        host_idle_w,
        host_off_w,
    })
}

/// Idle baseline (host on, nothing attached) at which the scenario's active
/// window costs `window_j`.
///
/// Active energy is affine in the baseline, so two probe runs determine it.
pub fn calibrate_idle_baseline(scenario: &Scenario, window_j: f64) -> Result<f64, SimError> {
    if !(window_j.is_finite() && window_j > 0.0) {
        return Err(invalid("calibration.window_j", "must be > 0"));
    }
    let probe = |baseline: f64| -> Result<f64, SimError> {
        let mut s = scenario.clone();
        s.device.idle_baseline_w = baseline;
        Ok(run_cycle(&s)?.active_j)
    };
    let at0 = probe(0.0)?;
    let slope = probe(1.0)? - at0;
    if slope <= 0.0 {
        return Err(invalid(
            "calibration.window_j",
            "scenario has no host-on time to calibrate against",
        ));
    }
    let baseline = (window_j - at0) / slope;
    if baseline < 0.0 {
        return Err(invalid(
            "calibration.window_j",
            format!("{window_j} J is below the window's extra energy of {at0:.3} J"),
        ));
    }
    Ok(baseline)
}
