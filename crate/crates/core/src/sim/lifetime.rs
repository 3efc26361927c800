//! Battery lifetime by coulomb counting at nominal voltage.

use serde::{Deserialize, Serialize};

use super::{invalid, run_cycle, CycleReport, Scenario, SimError};

/// One year; harvest runs that never deplete stop here.
pub const DEFAULT_HORIZON_S: f64 = 365.0 * 86_400.0;

// newer history entries beyond this are not recorded
const MAX_HISTORY: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub capacity_mah: f64,
    pub nominal_voltage_v: f64,
    pub initial_charge_fraction: f64,
}

impl Default for Battery {
    fn default() -> Self {
        Battery {
            capacity_mah: 33_000.0,
            nominal_voltage_v: 5.0,
            initial_charge_fraction: 1.0,
        }
    }
}

impl Battery {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.capacity_mah.is_finite() && self.capacity_mah >= 0.0) {
            return Err(invalid("battery.capacity_mah", "must be >= 0"));
        }
        if !(self.nominal_voltage_v.is_finite() && self.nominal_voltage_v > 0.0) {
            return Err(invalid("battery.nominal_voltage_v", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.initial_charge_fraction) {
            return Err(invalid("battery.initial_charge_fraction", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Joules to milliamp-hours at the nominal voltage.
    pub fn to_mah(&self, joules: f64) -> f64 {
        joules / self.nominal_voltage_v / 3.6
    }

    pub fn to_joules(&self, mah: f64) -> f64 {
        mah * self.nominal_voltage_v * 3.6
    }
}

/// Piecewise-constant charging power over a 24 h day, repeating daily.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestProfile {
    /// `(start_hour, watts)`, hours strictly increasing in `[0, 24)`. The
    /// last entry's power also covers midnight until the first entry.
    pub entries: Vec<(f64, f64)>,
    /// Time of day at simulation start, in hours.
    #[serde(default)]
    pub start_hour: f64,
}

impl HarvestProfile {
    pub fn constant(watts: f64) -> Self {
        HarvestProfile {
            entries: vec![(0.0, watts)],
            start_hour: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.entries.is_empty() {
            return Err(invalid("harvest.profile", "needs at least one entry"));
        }
        for (i, &(h, w)) in self.entries.iter().enumerate() {
            if !(0.0..24.0).contains(&h) {
                return Err(invalid(format!("harvest.profile[{i}]"), "hour must be in [0, 24)"));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(invalid(format!("harvest.profile[{i}]"), "watts must be >= 0"));
            }
            if i > 0 && h <= self.entries[i - 1].0 {
                return Err(invalid(
                    format!("harvest.profile[{i}]"),
                    "hours must be strictly increasing",
                ));
            }
        }
        if !(0.0..24.0).contains(&self.start_hour) {
            return Err(invalid("harvest.start_hour", "must be in [0, 24)"));
        }
        Ok(())
    }

    pub fn power_at_hour(&self, hour_of_day: f64) -> f64 {
        let h = hour_of_day.rem_euclid(24.0);
        let i = self.entries.partition_point(|&(s, _)| s <= h);
        if i == 0 {
            self.entries[self.entries.len() - 1].1
        } else {
            self.entries[i - 1].1
        }
    }

    /// Harvested joules between simulation times `t0_s` and `t1_s`.
    pub fn energy_between(&self, t0_s: f64, t1_s: f64) -> f64 {
        if t1_s <= t0_s {
            return 0.0;
        }
        let day = 86_400.0;
        let offset = self.start_hour * 3600.0;
        let (a, b) = (t0_s + offset, t1_s + offset);
        let breaks: Vec<f64> = self.entries.iter().map(|&(h, _)| h * 3600.0).collect();
        let mut t = a;
        let mut total = 0.0;
        while t < b {
            let day_start = (t / day).floor() * day;
            let tod = t - day_start;
            let next_break = breaks
                .iter()
                .copied()
                .find(|&s| s > tod)
                .map_or(day_start + day, |s| day_start + s);
            let seg_end = next_break.min(b);
            total += self.power_at_hour(tod / 3600.0) * (seg_end - t);
            if seg_end <= t {
                break;
            }
            t = seg_end;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifetimeReport {
    pub charge_per_cycle_mah: f64,
    /// Average charge per hour of operation.
    pub charge_per_hour_mah: f64,
    /// Complete wake cycles the battery sustains.
    pub cycles_to_depletion: u64,
    /// Whole hours of operation until depletion.
    pub hour_cycles_to_depletion: Option<u64>,
    /// `None` when the battery never depletes within the horizon.
    pub time_to_depletion_s: Option<f64>,
    pub depletion_day_hour: String,
    pub indefinite: bool,
    pub horizon_s: f64,
}

/// Battery state around one simulated cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleState {
    pub cycle: u64,
    pub start_s: f64,
    pub charge_before_mah: f64,
    pub draw_mah: f64,
    pub harvest_mah: f64,
    pub charge_after_mah: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifetimeRun {
    pub report: LifetimeReport,
    pub history: Vec<CycleState>,
}

/// Formats seconds as `<days>d <hours>h`, rounding down to whole hours.
pub fn format_day_hour(seconds: f64) -> String {
    let hours = (seconds / 3600.0 + 1e-9).floor() as u64;
    format!("{}d {}h", hours / 24, hours % 24)
}

/// Repeats `cycle` until the battery cannot fund another one.
///
/// Each cycle checks the remaining charge against its draw, subtracts the
/// draw, then adds whatever the harvest profile delivered over the cycle,
/// capped at capacity. After the last complete cycle the remaining charge
/// keeps the node running along the cycle's own timeline; that tail counts
/// toward `time_to_depletion_s` but not toward `cycles_to_depletion`.
pub fn lifetime_from_cycle(
    cycle: &CycleReport,
    battery: &Battery,
    harvest: Option<&HarvestProfile>,
    horizon_s: f64,
) -> Result<LifetimeRun, SimError> {
    battery.validate()?;
    if let Some(h) = harvest {
        h.validate()?;
    }
    let period = cycle.period_s;
    let draw = battery.to_mah(cycle.total_j);
    let capacity = battery.capacity_mah;
    let mut charge = capacity * battery.initial_charge_fraction;
    let tol = 1e-9 * draw.max(1e-12);
    let mut history = Vec::new();
    let mut cycles: u64 = 0;
    let mut depleted = false;

    match harvest {
        None if draw > 0.0 => {
            cycles = ((charge + tol) / draw).floor() as u64;
            for k in 0..cycles.min(MAX_HISTORY as u64) {
                let before = charge - k as f64 * draw;
                history.push(CycleState {
                    cycle: k,
                    start_s: k as f64 * period,
                    charge_before_mah: before,
                    draw_mah: draw,
                    harvest_mah: 0.0,
                    charge_after_mah: before - draw,
                });
            }
            charge = (charge - cycles as f64 * draw).max(0.0);
            depleted = true;
        }
        _ => {
            let max_cycles = (horizon_s / period).floor() as u64;
            while cycles < max_cycles {
                if charge + tol < draw {
                    depleted = true;
                    break;
                }
                let start = cycles as f64 * period;
                let harvested =
                    harvest.map_or(0.0, |h| battery.to_mah(h.energy_between(start, start + period)));
                let before = charge;
                charge = ((charge - draw).max(0.0) + harvested).min(capacity);
                if history.len() < MAX_HISTORY {
                    history.push(CycleState {
                        cycle: cycles,
                        start_s: start,
                        charge_before_mah: before,
                        draw_mah: draw,
                        harvest_mah: harvested,
                        charge_after_mah: charge,
                    });
                }
                cycles += 1;
            }
            if !depleted && draw > 0.0 && charge + tol < draw && cycles == max_cycles {
                depleted = true;
            }
        }
    }

    let hourly = battery.to_mah(cycle.hourly_energy_j);
    let report = if depleted {
        let time = cycles as f64 * period + tail_time(cycle, battery.to_joules(charge));
        LifetimeReport {
            charge_per_cycle_mah: draw,
            charge_per_hour_mah: hourly,
            cycles_to_depletion: cycles,
            hour_cycles_to_depletion: Some((time / 3600.0 + 1e-9).floor() as u64),
            time_to_depletion_s: Some(time),
            depletion_day_hour: format_day_hour(time),
            indefinite: false,
            horizon_s,
        }
    } else {
        LifetimeReport {
            charge_per_cycle_mah: draw,
            charge_per_hour_mah: hourly,
            cycles_to_depletion: cycles,
            hour_cycles_to_depletion: None,
            time_to_depletion_s: None,
            depletion_day_hour: "not depleted within horizon".into(),
            indefinite: true,
            horizon_s,
        }
    };
    Ok(LifetimeRun { report, history })
}

/// Seconds a partial charge of `joules` lasts along one cycle's timeline.
fn tail_time(cycle: &CycleReport, mut joules: f64) -> f64 {
    let mut t = 0.0;
    for phase in cycle.active_phases().chain(std::iter::once(&cycle.off)) {
        let p = phase.power_w();
        if phase.energy_j <= joules || p <= 0.0 {
            joules -= phase.energy_j.min(joules);
            t += phase.duration_s;
        } else {
            return t + joules / p;
        }
    }
    t
}

/// Runs one cycle of `scenario` and repeats it over `battery`.
pub fn simulate_lifetime(
    scenario: &Scenario,
    battery: &Battery,
    harvest: Option<&HarvestProfile>,
) -> Result<LifetimeReport, SimError> {
    let cycle = run_cycle(scenario)?;
    Ok(lifetime_from_cycle(&cycle, battery, harvest, DEFAULT_HORIZON_S)?.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn harvest_profile_integration() {
        let h = HarvestProfile {
            entries: vec![(6.0, 2.0), (18.0, 0.0)],
            start_hour: 0.0,
        };
        assert_eq!(h.power_at_hour(3.0), 0.0);
        assert_eq!(h.power_at_hour(12.0), 2.0);
        assert_relative_eq!(h.energy_between(0.0, 86_400.0), 2.0 * 12.0 * 3600.0);
        assert_relative_eq!(h.energy_between(5.0 * 3600.0, 7.0 * 3600.0), 2.0 * 3600.0);
        assert_relative_eq!(h.energy_between(0.0, 3.0 * 86_400.0), 3.0 * 2.0 * 12.0 * 3600.0);
        let shifted = HarvestProfile {
            start_hour: 6.0,
            ..h.clone()
        };
        assert_relative_eq!(shifted.energy_between(0.0, 3600.0), 2.0 * 3600.0);
    }

    #[test]
    fn harvest_validation() {
        let bad = HarvestProfile {
            entries: vec![(6.0, 2.0), (6.0, 1.0)],
            start_hour: 0.0,
        };
        assert!(bad.validate().is_err());
        assert!(HarvestProfile::constant(-1.0).validate().is_err());
        assert!(HarvestProfile {
            entries: vec![(24.0, 1.0)],
            start_hour: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn day_hour_format() {
        assert_eq!(format_day_hour(274.0 * 3600.0 + 10.0), "11d 10h");
        assert_eq!(format_day_hour(0.0), "0d 0h");
    }

    #[test]
    fn battery_validation() {
        assert!(Battery {
            capacity_mah: -1.0,
            ..Battery::default()
        }
        .validate()
        .is_err());
        assert!(Battery {
            initial_charge_fraction: 1.5,
            ..Battery::default()
        }
        .validate()
        .is_err());
        let b = Battery::default();
        assert_relative_eq!(b.to_mah(2167.0), 120.388_888_888_888_9, epsilon = 1e-9);
    }
}
