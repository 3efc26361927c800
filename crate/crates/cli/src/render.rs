//! Human-readable tables and CSV bodies. Formatting only.

use std::collections::BTreeMap;
use std::fmt::Write;

use hive_energy::capture::Resolution;
use hive_energy::config::LoadedScenario;
use hive_energy::network::{Direction, LinkModel};
use hive_energy::segment::{PhaseLabel, PhaseTotals, Segment};
use hive_energy::sim::{PhaseEnergy, PhaseKind, SweepParam, SweepPoint};
use hive_energy::{CycleReport, LifetimeReport, PowerTrace};

pub struct LinkRow {
    pub direction: Direction,
    pub wifi: LinkModel,
    pub ethernet: LinkModel,
    pub wifi_time_s: f64,
    pub wifi_energy_j: f64,
    pub eth_time_s: f64,
    pub eth_energy_j: f64,
    pub break_even_s: f64,
}

pub struct CaptureRow {
    pub resolution: Resolution,
    pub per_image_s: f64,
    pub free_running_s: f64,
    pub paced_s: f64,
    pub extra_power_w: f64,
    pub energy_j: f64,
}

fn kind(k: PhaseKind) -> &'static str {
    match k {
        PhaseKind::Boot => "boot",
        PhaseKind::Step => "step",
        PhaseKind::Shutdown => "shutdown",
        PhaseKind::Off => "off",
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn profile_table(
    name: &str,
    trace: &PowerTrace,
    segs: &[Segment],
    phases: &BTreeMap<PhaseLabel, PhaseTotals>,
    top: Option<usize>,
) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "trace {name}: {} samples, {:.3} s, {:.3} J",
        trace.len(),
        trace.duration(),
        trace.total_energy()
    );
    let _ = writeln!(
        s,
        "{:>4}  {:<9} {:>10} {:>10} {:>9} {:>11} {:>8}",
        "#", "label", "t0 s", "t1 s", "dur s", "energy J", "mean W"
    );
    for (i, g) in segs.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:>4}  {:<9} {:>10.3} {:>10.3} {:>9.3} {:>11.3} {:>8.3}",
            i,
            g.label,
            g.interval.t0,
            g.interval.t1,
            g.duration_s(),
            g.energy_j,
            g.mean_power_w
        );
    }
    let _ = writeln!(s, "\n{:<9} {:>5} {:>10} {:>11}", "phase", "count", "dur s", "energy J");
    for (label, t) in phases {
        let _ = writeln!(
            s,
            "{:<9} {:>5} {:>10.3} {:>11.3}",
            label, t.count, t.duration_s, t.energy_j
        );
    }
    match top {
        Some(i) => {
            let g = &segs[i];
            let _ = writeln!(
                s,
                "\nmost energetic task: #{i} ({:.3}-{:.3} s, {:.3} J)",
                g.interval.t0, g.interval.t1, g.energy_j
            );
        }
        None => {
            let _ = writeln!(s, "\nno task segments");
        }
    }
    s
}

fn phase_line(s: &mut String, p: &PhaseEnergy) {
    let _ = writeln!(
        s,
        "{:<12} {:<8} {:>9.2} {:>9.2} {:>10.2} {:>9.2} {:>10.2}{}",
        p.name,
        kind(p.kind),
        p.start_s,
        p.duration_s,
        p.baseline_j,
        p.extra_j,
        p.energy_j,
        if p.completed { "" } else { "  (cut)" }
    );
}

fn all_phases(c: &CycleReport) -> impl Iterator<Item = &PhaseEnergy> {
    c.boot
        .iter()
        .chain(c.steps.iter())
        .chain(c.shutdown.iter())
        .chain(std::iter::once(&c.off))
}

pub fn simulate_table(loaded: &LoadedScenario, c: &CycleReport, life: &LifetimeReport) -> String {
    let setup = &loaded.setup;
    let mut s = String::new();
    let _ = writeln!(s, "scenario {}: wake period {} s", c.scenario, c.period_s);
    if let Some(w) = loaded.calibration_window_j {
        let _ = writeln!(
            s,
            "calibrated idle baseline {:.4} W for a {w} J window",
            setup.scenario.device.idle_baseline_w
        );
    }
    let _ = writeln!(
        s,
        "{:<12} {:<8} {:>9} {:>9} {:>10} {:>9} {:>10}",
        "phase", "kind", "start s", "dur s", "base J", "extra J", "total J"
    );
    for p in all_phases(c) {
        phase_line(&mut s, p);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "active time      {:.2} s{}", c.active_s, if c.watchdog_tripped { " (watchdog tripped)" } else { "" });
    let _ = writeln!(s, "active energy    {:.2} J", c.active_j);
    let _ = writeln!(s, "cycle energy     {:.2} J", c.total_j);
    let _ = writeln!(s, "hourly energy    {:.2} J/h", c.hourly_energy_j);
    let _ = writeln!(s, "charge per cycle {:.3} mAh", life.charge_per_cycle_mah);
    let _ = writeln!(s, "charge per hour  {:.3} mAh", life.charge_per_hour_mah);
    let _ = writeln!(
        s,
        "battery          {} mAh at {} V, {}% charged",
        setup.battery.capacity_mah,
        setup.battery.nominal_voltage_v,
        setup.battery.initial_charge_fraction * 100.0
    );
    if let Some(h) = &setup.harvest {
        let _ = writeln!(s, "harvest          {} profile points", h.entries.len());
    }
    if life.indefinite {
        let _ = writeln!(s, "lifetime         indefinite ({})", life.depletion_day_hour);
    } else {
        let hours = life
            .hour_cycles_to_depletion
            .map(|h| format!(" ({h} cycles of 1 hour)"))
            .unwrap_or_default();
        let _ = writeln!(s, "wake cycles      {}{hours}", life.cycles_to_depletion);
        let _ = writeln!(s, "lifetime         {}", life.depletion_day_hour);
    }
    s
}

pub fn phases_csv(c: &CycleReport) -> String {
    let mut s = String::from("name,kind,start_s,duration_s,baseline_j,extra_j,energy_j,completed\n");
    for p in all_phases(c) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            p.name,
            kind(p.kind),
            p.start_s,
            p.duration_s,
            p.baseline_j,
            p.extra_j,
            p.energy_j,
            p.completed
        );
    }
    s
}

pub fn sweep_table(param: SweepParam, points: &[SweepPoint]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>10} {:>10} {:>8} {:>4} {:>9} {:>8} {:>8} {:>9}",
        param.name(),
        "total J",
        "J/h",
        "active s",
        "wd",
        "mAh/cyc",
        "cycles",
        "hours",
        "lifetime"
    );
    for p in points {
        let l = &p.lifetime;
        let _ = writeln!(
            s,
            "{:<14} {:>10.2} {:>10.2} {:>8.2} {:>4} {:>9.3} {:>8} {:>8} {:>9}",
            p.value,
            p.cycle.total_j,
            p.cycle.hourly_energy_j,
            p.cycle.active_s,
            if p.cycle.watchdog_tripped { "yes" } else { "no" },
            l.charge_per_cycle_mah,
            l.cycles_to_depletion,
            opt(l.hour_cycles_to_depletion),
            if l.indefinite { "indefinite" } else { l.depletion_day_hour.as_str() }
        );
    }
    s
}

pub fn sweep_csv(param: SweepParam, points: &[SweepPoint]) -> String {
    let mut s = format!(
        "{},total_j,hourly_energy_j,active_s,watchdog_tripped,charge_per_cycle_mah,cycles,hour_cycles,time_to_depletion_s\n",
        param.name()
    );
    for p in points {
        let l = &p.lifetime;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            p.value,
            p.cycle.total_j,
            p.cycle.hourly_energy_j,
            p.cycle.active_s,
            p.cycle.watchdog_tripped,
            l.charge_per_cycle_mah,
            l.cycles_to_depletion,
            opt(l.hour_cycles_to_depletion),
            opt(l.time_to_depletion_s)
        );
    }
    s
}

pub fn links_table(payload: u64, rows: &[LinkRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "payload {payload} bytes");
    let _ = writeln!(
        s,
        "{:<9} {:<9} {:>9} {:>9} {:>10} {:>11}",
        "direction", "link", "Mbit/s", "time s", "energy J", "overhead W"
    );
    for r in rows {
        for (m, t, e) in [
            (&r.wifi, r.wifi_time_s, r.wifi_energy_j),
            (&r.ethernet, r.eth_time_s, r.eth_energy_j),
        ] {
            let _ = writeln!(
                s,
                "{:<9} {:<9} {:>9.1} {:>9.2} {:>10.2} {:>11.3}",
                r.direction,
                m.link,
                m.data_rate_bps / 1e6,
                t,
                e,
                m.idle_overhead_w
            );
        }
        let _ = writeln!(
            s,
            "{:<9} break-even idle time {:.1} s (Wi-Fi cheaper beyond it)",
            r.direction, r.break_even_s
        );
    }
    s
}

pub fn capture_table(images: u32, min_interval_s: f64, ambient_c: f64, rows: &[CaptureRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{images} images, min interval {min_interval_s} s, ambient {ambient_c} C"
    );
    let _ = writeln!(
        s,
        "{:<11} {:>9} {:>10} {:>9} {:>9} {:>10}",
        "resolution", "s/image", "free s", "paced s", "extra W", "energy J"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<11} {:>9.3} {:>10.2} {:>9.2} {:>9.3} {:>10.2}",
            r.resolution.to_string(),
            r.per_image_s,
            r.free_running_s,
            r.paced_s,
            r.extra_power_w,
            r.energy_j
        );
    }
    s
}
