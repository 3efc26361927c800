//! Power-trace profiling and energy-budget simulation for duty-cycled sensor
//! nodes.
//!
//! - [`trace`]: power traces, CSV ingestion, interval energy.
//! - [`segment`]: labeled phase segmentation of a trace.
//! - [`device`]: node power model and ground-truth trace synthesis.
//! - [`capture`]: image-capture duration and energy.
//! - [`network`]: link transfer costs and Wi-Fi/Ethernet break-even.
//! - [`sim`]: wake-cycle simulation, battery lifetime, sweeps.
//! - [`config`]: TOML loaders and the bundled hive deployment.

pub mod capture;
pub mod config;
pub mod device;
pub mod network;
pub mod segment;
pub mod sim;
pub mod trace;

pub use capture::{CaptureModel, CaptureTimeTable, Resolution};
pub use device::{DeviceModel, PeripheralCost, SchedulePhase, ShutdownMode, TaskSpec};
pub use network::{break_even_idle_time, Direction, Link, LinkModel, LinkTable};
pub use segment::{phase_report, segment, PhaseLabel, Segment, SegmentationConfig};
pub use sim::{run_cycle, simulate_lifetime, sweep, Battery, CycleReport, LifetimeReport, Scenario};
pub use trace::{ingest_trace, parse_trace, Interval, PowerTrace, Sample};
