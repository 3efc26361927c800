//! What-if sweeps over a single scenario parameter.

use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::lifetime::{lifetime_from_cycle, Battery, HarvestProfile, LifetimeReport};
use super::{run_cycle, CycleReport, Scenario, SimError, StepKind};
use crate::capture::Resolution;
use crate::device::ShutdownMode;
use crate::network::Link;

/// Everything a lifetime run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSetup {
    pub scenario: Scenario,
    pub battery: Battery,
    pub harvest: Option<HarvestProfile>,
    pub horizon_s: f64,
}

impl SimulationSetup {
    pub fn new(scenario: Scenario, battery: Battery) -> Self {
        SimulationSetup {
            scenario,
            battery,
            harvest: None,
            horizon_s: super::DEFAULT_HORIZON_S,
        }
    }

    pub fn run(&self) -> Result<(CycleReport, LifetimeReport), SimError> {
        let cycle = run_cycle(&self.scenario)?;
        let life =
            lifetime_from_cycle(&cycle, &self.battery, self.harvest.as_ref(), self.horizon_s)?;
        Ok((cycle, life.report))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    WakePeriod,
    WatchdogLimit,
    Ambient,
    Link,
    CaptureImages,
    CaptureResolution,
    CaptureMinInterval,
    BatteryCapacity,
    IdleBaseline,
    OffStandby,
    EthernetOverhead,
    TransferPayload,
    Shutdown,
}

impl SweepParam {
    pub const ALL: [SweepParam; 13] = [
        SweepParam::WakePeriod,
        SweepParam::WatchdogLimit,
        SweepParam::Ambient,
        SweepParam::Link,
        SweepParam::CaptureImages,
        SweepParam::CaptureResolution,
        SweepParam::CaptureMinInterval,
        SweepParam::BatteryCapacity,
        SweepParam::IdleBaseline,
        SweepParam::OffStandby,
        SweepParam::EthernetOverhead,
        SweepParam::TransferPayload,
        SweepParam::Shutdown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::WakePeriod => "wake_period_s",
            SweepParam::WatchdogLimit => "watchdog_limit_s",
            SweepParam::Ambient => "ambient_c",
            SweepParam::Link => "link",
            SweepParam::CaptureImages => "capture.n_images",
            SweepParam::CaptureResolution => "capture.resolution",
            SweepParam::CaptureMinInterval => "capture.min_interval_s",
            SweepParam::BatteryCapacity => "battery.capacity_mah",
            SweepParam::IdleBaseline => "device.idle_baseline_w",
            SweepParam::OffStandby => "device.off_standby_w",
            SweepParam::EthernetOverhead => "link.ethernet.idle_overhead_w",
            SweepParam::TransferPayload => "transfer.payload_bytes",
            SweepParam::Shutdown => "shutdown",
        }
    }

    /// Returns a copy of `setup` with this parameter set to `value`.
    pub fn apply(self, setup: &SimulationSetup, value: &str) -> Result<SimulationSetup, SimError> {
        let bad = |reason: &str| SimError::BadValue {
            param: self.name().into(),
            value: value.into(),
            reason: reason.into(),
        };
        let num = || -> Result<f64, SimError> {
            let v: f64 = value.trim().parse().map_err(|_| bad("expected a number"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad("must be finite"))
            }
        };
        let int = || -> Result<u64, SimError> {
            value.trim().parse().map_err(|_| bad("expected a non-negative integer"))
        };
        let mut out = setup.clone();
        let s = &mut out.scenario;
        match self {
            SweepParam::WakePeriod => s.wake_period_s = num()?,
            SweepParam::WatchdogLimit => s.watchdog_limit_s = num()?,
            SweepParam::Ambient => s.ambient_c = num()?,
            SweepParam::Link => s.link = Link::from_str(value.trim()).map_err(|e| bad(&e.to_string()))?,
            SweepParam::CaptureImages | SweepParam::CaptureResolution => {
                let mut hit = false;
                for step in &mut s.steps {
                    if let StepKind::Capture {
                        n_images,
                        resolution,
                    } = &mut step.kind
                    {
                        if self == SweepParam::CaptureImages {
                            *n_images = u32::try_from(int()?).map_err(|_| bad("too large"))?;
                        } else {
                            *resolution =
                                Resolution::from_str(value.trim()).map_err(|e| bad(&e.to_string()))?;
                        }
                        hit = true;
                    }
                }
                if !hit {
                    return Err(bad("scenario has no capture step"));
                }
            }
            SweepParam::CaptureMinInterval => s.capture.min_interval_s = num()?,
            SweepParam::BatteryCapacity => out.battery.capacity_mah = num()?,
            SweepParam::IdleBaseline => s.device.idle_baseline_w = num()?,
            SweepParam::OffStandby => s.device.off_standby_w = num()?,
            SweepParam::EthernetOverhead => s.links.set_idle_overhead_w(Link::Ethernet, num()?),
            SweepParam::TransferPayload => {
                let v = int()?;
                let mut hit = false;
                for step in &mut s.steps {
                    if let StepKind::Transfer { payload_bytes, .. } = &mut step.kind {
                        *payload_bytes = v;
                        hit = true;
                    }
                }
                if !hit {
                    return Err(bad("scenario has no transfer step"));
                }
            }
            SweepParam::Shutdown => {
                s.shutdown = match value.trim() {
                    "graceful" => ShutdownMode::Graceful,
                    "forced" => ShutdownMode::Forced,
                    "none" => ShutdownMode::None,
                    _ => return Err(bad("expected graceful, forced or none")),
                }
            }
        }
        Ok(out)
    }
}

impl FromStr for SweepParam {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepParam::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::UnknownParameter(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: String,
    pub cycle: CycleReport,
    pub lifetime: LifetimeReport,
}

/// Runs one independent simulation per value. Output order follows `values`.
pub fn sweep(
    setup: &SimulationSetup,
    param: SweepParam,
    values: &[String],
) -> Result<Vec<SweepPoint>, SimError> {
    // apply every value first so a bad one fails before any work starts
    let setups = values
        .iter()
        .map(|v| param.apply(setup, v))
        .collect::<Result<Vec<_>, _>>()?;
    setups
        .par_iter()
        .zip(values.par_iter())
        .map(|(s, v)| {
            let (cycle, lifetime) = s.run()?;
            Ok(SweepPoint {
                value: v.clone(),
                cycle,
                lifetime,
            })
        })
        .collect()
}
