//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Every tolerance is pinned below.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hive_energy::capture::CaptureTimeTable;
use hive_energy::config::builtin_setup;
use hive_energy::device::{sample_phases, DeviceModel, PeripheralCost, ResolvedPhase, TaskSpec};
use hive_energy::network::{
    break_even_idle_time, BreakEvenConvention, Direction, Link, LinkTable, REFERENCE_PAYLOAD_BYTES,
};
use hive_energy::segment::{phase_report, segment, PhaseLabel, SegmentationConfig};
use hive_energy::sim::{lifetime_from_cycle, run_cycle, Scenario, Step, DEFAULT_HORIZON_S};
use hive_energy::trace::{Interval, PowerTrace, Sample};
use hive_energy::{Resolution, SchedulePhase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// criterion 1
const CHARGE_PER_HOUR_MAH: f64 = 120.4;
const CHARGE_REL_TOL: f64 = 0.01;
const HOUR_CYCLES: u64 = 274;
const HOUR_CYCLES_TOL: u64 = 1;
const LIFETIME_H: f64 = 11.0 * 24.0 + 10.0;
const LIFETIME_TOL_H: f64 = 2.0;
const LIFETIME_RUNTIME: Duration = Duration::from_secs(1);
// criterion 2
const HOURLY_J: f64 = 2167.0;
const HOURLY_REL_TOL: f64 = 0.01;
const OFF_J: f64 = 1800.0;
const WINDOW_J: f64 = 548.0;
const PART_ABS_TOL_J: f64 = 1e-6;
// criterion 3
const STEP_TOL_J: f64 = 0.1;
const SYNTH_REL_TOL: f64 = 0.005;
const SYNTH_DT_S: f64 = 0.1;
// criterion 4
const COLD_SCRIPT_J: f64 = 186.4;
const COLD_TOL_J: f64 = 0.5;
const ROOM_SCRIPT_J: f64 = 169.6;
// criterion 5
const TABLE_ABS_TOL_J: f64 = 1e-9;
const UPLOAD_BREAK_EVEN_S: f64 = 605.0;
const DOWNLOAD_BREAK_EVEN_S: f64 = 273.0;
const BREAK_EVEN_TOL_S: f64 = 1.0;
// criterion 6
const CAPTURE_S: f64 = 10.3;
const CAPTURE_J: f64 = 23.7;
const CAPTURE_TOL: f64 = 1e-9;
const LINEARITY_REL_TOL: f64 = 1e-12;
// criterion 7
const SEG_SCHEDULES: usize = 100;
const SEG_ENERGY_REL_TOL: f64 = 0.02;
const SEG_RUNTIME: Duration = Duration::from_secs(10);
// criterion 8
const ORACLE_TRACES: usize = 1000;
const ORACLE_SAMPLES: usize = 1000;
const ORACLE_REFINE: usize = 100;
const ORACLE_REL_TOL: f64 = 0.005;
// criterion 9
const WATCHDOG_CASES: usize = 256;
const WATCHDOG_LIMIT_S: f64 = 300.0;

struct Outcome {
    ok: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        ok: true,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        ok: false,
        detail: detail.into(),
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    Outcome { ok, detail }
}

fn lifetime_reproduction() -> Outcome {
    let start = Instant::now();
    let setup = builtin_setup();
    let cycle = match run_cycle(&setup.scenario) {
        Ok(c) => c,
        Err(e) => return fail(e.to_string()),
    };
    let life = match lifetime_from_cycle(&cycle, &setup.battery, None, DEFAULT_HORIZON_S) {
        Ok(l) => l.report,
        Err(e) => return fail(e.to_string()),
    };
    let elapsed = start.elapsed();
    let charge = life.charge_per_hour_mah;
    let hours = life.hour_cycles_to_depletion.unwrap_or(0);
    let wall_h = life.time_to_depletion_s.unwrap_or(f64::INFINITY) / 3600.0;
    let ok = (charge / CHARGE_PER_HOUR_MAH - 1.0).abs() <= CHARGE_REL_TOL
        && hours.abs_diff(HOUR_CYCLES) <= HOUR_CYCLES_TOL
        && (wall_h - LIFETIME_H).abs() <= LIFETIME_TOL_H
        && elapsed < LIFETIME_RUNTIME;
    check(
        ok,
        format!(
            "{charge:.2} mAh/h, {hours} hour-cycles ({} wake cycles), {} ({wall_h:.2} h), {:.1} ms",
            life.cycles_to_depletion,
            life.depletion_day_hour,
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn cycle_energy() -> Outcome {
    let setup = builtin_setup();
    let c = match run_cycle(&setup.scenario) {
        Ok(c) => c,
        Err(e) => return fail(e.to_string()),
    };
    let ok = (c.hourly_energy_j / HOURLY_J - 1.0).abs() <= HOURLY_REL_TOL
        && (c.off.energy_j - OFF_J).abs() <= PART_ABS_TOL_J
        && (c.active_j - WINDOW_J).abs() <= PART_ABS_TOL_J
        && (c.total_j - OFF_J - WINDOW_J).abs() <= PART_ABS_TOL_J
        && !c.watchdog_tripped;
    check(
        ok,
        format!(
            "{:.1} J/h; cycle {:.3} J = off {:.3} J + window {:.3} J over {} s",
            c.hourly_energy_j, c.total_j, c.off.energy_j, c.active_j, c.period_s
        ),
    )
}

fn step_energies() -> Outcome {
    let setup = builtin_setup();
    let s = &setup.scenario;
    let c = match run_cycle(s) {
        Ok(c) => c,
        Err(e) => return fail(e.to_string()),
    };
    let expected = [
        ("boot", 14.5),
        ("step1", 6.2),
        ("step2", 23.7),
        ("step3", 126.1),
        ("step4", 13.5),
    ];
    let mut worst: f64 = 0.0;
    for (name, want) in expected {
        let got = if name == "boot" {
            c.boot.as_ref().map(|b| b.extra_j)
        } else {
            c.step(name).map(|p| p.extra_j)
        };
        match got {
            Some(g) => worst = worst.max((g - want).abs()),
            None => return fail(format!("{name} missing from report")),
        }
    }
    // synthesize the realized cycle and integrate it back
    let trace = match s.device.synthesize_trace(
        &c.realized_schedule(),
        &s.attached,
        s.ambient_c,
        SYNTH_DT_S,
    ) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string()),
    };
    // sampling a step function smears each edge over one sample gap, so
    // compare totals over spans whose ends sit on phase edges
    let steps_start = c.boot.as_ref().map_or(0.0, |b| b.duration_s);
    let steps_end = c.step("hold").map_or(c.active_s, |h| h.start_s);
    let step_block: f64 = c
        .steps
        .iter()
        .filter(|p| p.start_s < steps_end)
        .map(|p| p.energy_j)
        .sum();
    let spans = [
        ("cycle", 0.0, c.period_s, c.total_j),
        ("window", 0.0, c.active_s, c.active_j),
        ("steps", steps_start, steps_end, step_block),
    ];
    let mut worst_rel: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, t0, t1, want) in spans {
        let got = trace.energy(Interval::new(t0, t1).unwrap());
        worst_rel = worst_rel.max((got / want - 1.0).abs());
        parts.push(format!("{name} {got:.2}/{want:.2} J"));
    }
    check(
        worst <= STEP_TOL_J && worst_rel <= SYNTH_REL_TOL,
        format!(
            "max step deviation {worst:.2e} J; synthesized trace {} (max rel {worst_rel:.2e})",
            parts.join(", ")
        ),
    )
}

fn temperature() -> Outcome {
    let setup = builtin_setup();
    let mut s = setup.scenario.clone();
    s.steps = vec![Step::task("script")];
    s.boot = false;
    let extra_at = |ambient: f64| -> Result<f64, String> {
        let mut t = s.clone();
        t.ambient_c = ambient;
        let c = run_cycle(&t).map_err(|e| e.to_string())?;
        Ok(c.steps[0].extra_j)
    };
    let (cold, room) = match (extra_at(4.0), extra_at(20.5)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return fail(e),
    };
    let direct = s.device.task_energy("script", 20.5).unwrap_or(f64::NAN);
    check(
        (cold - COLD_SCRIPT_J).abs() <= COLD_TOL_J && room == ROOM_SCRIPT_J && direct == ROOM_SCRIPT_J,
        format!("script task {cold:.3} J at 4 C, {room} J at 20.5 C"),
    )
}

fn network() -> Outcome {
    let t = LinkTable::default();
    let table = [
        (Link::Wifi, Direction::Download, 34.0),
        (Link::Wifi, Direction::Upload, 93.9),
        (Link::Ethernet, Direction::Download, 10.8),
        (Link::Ethernet, Direction::Upload, 42.5),
    ];
    let mut worst: f64 = 0.0;
    for (l, d, want) in table {
        worst = worst.max((t.get(l, d).transfer_energy(REFERENCE_PAYLOAD_BYTES) - want).abs());
    }
    let be = |d| {
        break_even_idle_time(
            t.get(Link::Wifi, d),
            t.get(Link::Ethernet, d),
            REFERENCE_PAYLOAD_BYTES,
            BreakEvenConvention::IdleOnly,
        )
    };
    let (up, down) = match (be(Direction::Upload), be(Direction::Download)) {
        (Ok(u), Ok(d)) => (u, d),
        (Err(e), _) | (_, Err(e)) => return fail(e.to_string()),
    };
    check(
        worst <= TABLE_ABS_TOL_J
            && (up - UPLOAD_BREAK_EVEN_S).abs() <= BREAK_EVEN_TOL_S
            && (down - DOWNLOAD_BREAK_EVEN_S).abs() <= BREAK_EVEN_TOL_S,
        format!("table max deviation {worst:.1e} J; break-even upload {up:.1} s, download {down:.1} s"),
    )
}

fn capture() -> Outcome {
    let setup = builtin_setup();
    let s = &setup.scenario;
    let table = CaptureTimeTable::default();
    let free = table.capture_duration(20, Resolution::REFERENCE).unwrap_or(f64::NAN);
    let energy = s
        .capture
        .energy(&s.device, 20, Resolution::REFERENCE, 20.5)
        .unwrap_or(f64::NAN);
    // every batch size up to 50, on the bundled table and a richer one
    let rich = CaptureTimeTable::parse_entries(&["640x480:0.4", "800x600:0.515", "2592x1944:2.1"])
        .expect("table");
    let mut worst: f64 = 0.0;
    for tbl in [&table, &rich] {
        for res in [Resolution::REFERENCE, Resolution::new(1024, 768).unwrap()] {
            let one = tbl.capture_duration(1, res).unwrap();
            for n in 1..=50u32 {
                let d = tbl.capture_duration(n, res).unwrap();
                worst = worst.max((d / (n as f64 * one) - 1.0).abs());
            }
        }
    }
    check(
        (free - CAPTURE_S).abs() <= CAPTURE_TOL
            && (energy - CAPTURE_J).abs() <= CAPTURE_TOL
            && worst <= LINEARITY_REL_TOL,
        format!("20 x 800x600: {free:.4} s free-running, {energy:.4} J paced; linearity max rel {worst:.1e} over n in [1, 50]"),
    )
}

fn segmentation_model() -> DeviceModel {
    let mut m = DeviceModel {
        idle_baseline_w: 0.712,
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
    m.tasks.insert("boot".into(), TaskSpec::new("boot", 10.0, 14.5));
    m
}

fn random_schedule(rng: &mut ChaCha8Rng) -> Vec<SchedulePhase> {
    let mut s = vec![
        SchedulePhase::label(PhaseLabel::Off, rng.gen_range(5.0..15.0)),
        SchedulePhase::label(PhaseLabel::Boot, rng.gen_range(8.0..12.0)),
        SchedulePhase::label(PhaseLabel::Idle, rng.gen_range(5.0..20.0)),
    ];
    for _ in 0..rng.gen_range(1..=5) {
        s.push(SchedulePhase::level(
            PhaseLabel::Task,
            rng.gen_range(0.5..3.0),
            rng.gen_range(2.0..60.0),
        ));
        s.push(SchedulePhase::label(PhaseLabel::Idle, rng.gen_range(5.0..20.0)));
    }
    s.push(SchedulePhase::label(PhaseLabel::Shutdown, 3.0));
    s.push(SchedulePhase::label(PhaseLabel::Off, rng.gen_range(5.0..15.0)));
    s
}

fn segmentation() -> Outcome {
    let start = Instant::now();
    let m = segmentation_model();
    let attached: BTreeSet<String> = ["arduino".to_string()].into();
    let mut cfg = SegmentationConfig::new(1.1, 1.3);
    cfg.off_threshold_w = 0.8;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst_energy: f64 = 0.0;
    let mut worst_boundary: f64 = 0.0;
    for case in 0..SEG_SCHEDULES {
        let schedule = random_schedule(&mut rng);
        let phases = m.resolve_schedule(&schedule, &attached, 20.5).unwrap();
        let trace = sample_phases(&phases, SYNTH_DT_S).unwrap();
        let segs = match segment(&trace, &cfg) {
            Ok(s) => s,
            Err(e) => return fail(format!("case {case}: {e}")),
        };
        let extent = trace.extent().unwrap();
        let tiles = segs.first().map(|s| s.interval.t0) == Some(extent.t0)
            && segs.last().map(|s| s.interval.t1) == Some(extent.t1)
            && segs.windows(2).all(|w| w[0].interval.t1 == w[1].interval.t0)
            && segs.iter().all(|s| s.interval.t1 > s.interval.t0);
        if !tiles {
            return fail(format!("case {case}: segments do not tile the trace"));
        }
        let truth = truth_runs(&phases);
        let labels: Vec<PhaseLabel> = segs.iter().map(|s| s.label).collect();
        let want: Vec<PhaseLabel> = truth.iter().map(|r| r.0).collect();
        if labels != want {
            return fail(format!("case {case}: labels {labels:?}, expected {want:?}"));
        }
        for (s, r) in segs.iter().zip(&truth).skip(1) {
            worst_boundary = worst_boundary.max((s.interval.t0 - r.1).abs());
        }
        let mut truth_energy: BTreeMap<PhaseLabel, f64> = BTreeMap::new();
        for p in &phases {
            *truth_energy.entry(p.label).or_default() += p.energy_j();
        }
        let report = phase_report(&segs);
        for (label, want) in truth_energy {
            let got = report[&label].energy_j;
            worst_energy = worst_energy.max((got / want - 1.0).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst_energy <= SEG_ENERGY_REL_TOL
            && worst_boundary <= cfg.min_segment_s
            && elapsed < SEG_RUNTIME,
        format!(
            "{SEG_SCHEDULES} schedules tiled; per-label energy max rel {worst_energy:.2e}; boundary max error {worst_boundary:.3} s (limit {} s); {:.2} s",
            cfg.min_segment_s,
            elapsed.as_secs_f64()
        ),
    )
}

/// Ground-truth runs: (label, start time), merging adjacent equal labels.
fn truth_runs(phases: &[ResolvedPhase]) -> Vec<(PhaseLabel, f64)> {
    let mut out: Vec<(PhaseLabel, f64)> = Vec::new();
    for p in phases {
        if out.last().map(|r| r.0) != Some(p.label) {
            out.push((p.label, p.start_s));
        }
    }
    out
}

/// Brute-force oracle: left rectangles on a grid refined `ORACLE_REFINE`
/// times, evaluating the linear interpolant by direct search.
fn rectangle_oracle(ts: &[f64], ps: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..ts.len() - 1 {
        let h = (ts[i + 1] - ts[i]) / ORACLE_REFINE as f64;
        for k in 0..ORACLE_REFINE {
            let t = ts[i] + k as f64 * h;
            let frac = (t - ts[i]) / (ts[i + 1] - ts[i]);
            total += (ps[i] + frac * (ps[i + 1] - ps[i])) * h;
        }
    }
    total
}

fn integration_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for case in 0..ORACLE_TRACES {
        let n = ORACLE_SAMPLES;
        let mut t = 0.0;
        let mut ts = Vec::with_capacity(n);
        let mut ps = Vec::with_capacity(n);
        for _ in 0..n {
            ts.push(t);
            ps.push(rng.gen_range(0.0..5.0));
            t += rng.gen_range(0.01..1.0);
        }
        let trace = PowerTrace::new(ts.iter().zip(&ps).map(|(&t, &p)| Sample::new(t, p)).collect())
            .unwrap();
        let got = trace.total_energy();
        let want = rectangle_oracle(&ts, &ps);
        if want <= 0.0 {
            return fail(format!("case {case}: degenerate oracle"));
        }
        worst = worst.max((got / want - 1.0).abs());
    }
    check(
        worst <= ORACLE_REL_TOL,
        format!("{ORACLE_TRACES} traces; max relative deviation {worst:.2e}"),
    )
}

fn watchdog() -> Outcome {
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestRunner};

    let mut base = DeviceModel {
        idle_baseline_w: 1.0,
        ..DeviceModel::default()
    };
    for (name, d, e) in [("boot", 10.0, 14.5), ("work", 1.0, 1.0)] {
        base.tasks.insert(name.into(), TaskSpec::new(name, d, e));
    }
    let mut runner = TestRunner::new(Config {
        cases: WATCHDOG_CASES as u32,
        failure_persistence: None,
        ..Config::default()
    });
    // each step's durations; the total always exceeds the limit
    let strategy = (
        proptest::collection::vec((1.0f64..200.0, 0.0f64..3.0), 1..8),
        any::<bool>(),
    )
        .prop_filter("over the limit", |(steps, boot)| {
            let d: f64 = steps.iter().map(|s| s.0).sum::<f64>() + if *boot { 10.0 } else { 0.0 } + 3.0;
            d > WATCHDOG_LIMIT_S
        });
    let result = runner.run(&strategy, |(steps, boot)| {
        let mut s = Scenario::new("wd", base.clone());
        s.boot = boot;
        s.watchdog_limit_s = WATCHDOG_LIMIT_S;
        for (i, (d, w)) in steps.iter().enumerate() {
            let name = format!("t{i}");
            s.device.tasks.insert(name.clone(), TaskSpec::new(name.clone(), *d, w * d));
            s.steps.push(Step::task(name));
        }
        let c = run_cycle(&s).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(c.watchdog_tripped);
        prop_assert_eq!(c.active_s, WATCHDOG_LIMIT_S);
        let accounted: f64 = c.active_phases().map(|p| p.duration_s).sum();
        prop_assert!((accounted - WATCHDOG_LIMIT_S).abs() <= 1e-9);
        // a cut during shutdown leaves a partial shutdown phase
        prop_assert!(c.shutdown.as_ref().is_none_or(|p| !p.completed));
        Ok(())
    });
    match result {
        Ok(()) => pass(format!(
            "{WATCHDOG_CASES} over-budget scenarios tripped, active accounting exactly {WATCHDOG_LIMIT_S} s"
        )),
        Err(e) => fail(e.to_string()),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("lifetime reproduction", lifetime_reproduction),
        ("cycle energy", cycle_energy),
        ("step energies", step_energies),
        ("temperature", temperature),
        ("network", network),
        ("capture", capture),
        ("segmentation properties", segmentation),
        ("integration oracle", integration_oracle),
        ("watchdog", watchdog),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.ok {
            failed += 1;
        }
        println!(
            "{} [{}] {name}: {}",
            if o.ok { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
