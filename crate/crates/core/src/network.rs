//! Transfer time and energy per link and direction, and the Wi-Fi versus
//! Ethernet break-even idle time.
//!
//! Default parameters are single 50 MB measurements against a public iPerf
//! server from one site; upload rates in particular are bounded by that
//! site's uplink and should be overridden for other deployments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Payload size the per-transfer energies refer to.
pub const REFERENCE_PAYLOAD_BYTES: u64 = 50_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("no break-even exists: Ethernet idle overhead is zero")]
    NoBreakEven,
    #[error("links have different directions ({0} vs {1})")]
    DirectionMismatch(Direction, Direction),
    #[error("expected a {expected} link, got {got}")]
    WrongLink { expected: Link, got: Link },
    #[error("invalid direction `{0}` (expected `download` or `upload`)")]
    BadDirection(String),
    #[error("invalid link `{0}` (expected `wifi` or `ethernet`)")]
    BadLink(String),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Wifi,
    Ethernet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Download,
    Upload,
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Link::Wifi => "wifi",
            Link::Ethernet => "ethernet",
        })
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Direction::Download => "download",
            Direction::Upload => "upload",
        })
    }
}

impl FromStr for Link {
    type Err = NetworkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wifi" | "wi-fi" => Ok(Link::Wifi),
            "ethernet" | "eth" => Ok(Link::Ethernet),
            _ => Err(NetworkError::BadLink(s.to_string())),
        }
    }
}

impl FromStr for Direction {
    type Err = NetworkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "download" | "down" => Ok(Direction::Download),
            "upload" | "up" => Ok(Direction::Upload),
            _ => Err(NetworkError::BadDirection(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub link: Link,
    pub direction: Direction,
    pub data_rate_bps: f64,
    /// Energy above idle to move 50 MB.
    pub energy_per_50mb_j: f64,
    /// Extra power of having the link attached while not transferring.
    pub idle_overhead_w: f64,
}

/// Midpoint of the 0.07-0.10 W cost of an attached Ethernet port.
pub const ETHERNET_IDLE_OVERHEAD_W: f64 = 0.085;

impl LinkModel {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let field = |name: &str| format!("link.{}.{}_{name}", self.link, self.direction);
        if !(self.data_rate_bps.is_finite() && self.data_rate_bps > 0.0) {
            return Err(NetworkError::Invalid {
                field: field("rate"),
                reason: "must be > 0".into(),
            });
        }
        if !(self.energy_per_50mb_j.is_finite() && self.energy_per_50mb_j >= 0.0) {
            return Err(NetworkError::Invalid {
                field: field("energy_j"),
                reason: "must be >= 0".into(),
            });
        }
        if !(self.idle_overhead_w.is_finite() && self.idle_overhead_w >= 0.0) {
            return Err(NetworkError::Invalid {
                field: format!("link.{}.idle_overhead_w", self.link),
                reason: "must be >= 0".into(),
            });
        }
        Ok(())
    }

    pub fn transfer_time(&self, payload_bytes: u64) -> f64 {
        payload_bytes as f64 * 8.0 / self.data_rate_bps
    }

    pub fn transfer_energy(&self, payload_bytes: u64) -> f64 {
        self.energy_per_50mb_j * payload_bytes as f64 / REFERENCE_PAYLOAD_BYTES as f64
    }
}

/// How the Ethernet idle overhead is charged in a break-even comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BreakEvenConvention {
    /// Overhead only on the session's non-transfer time.
    #[default]
    IdleOnly,
    /// Both sessions last as long as the Wi-Fi one; the faster Ethernet
    /// transfer leaves extra idle time that is also charged.
    EqualSession,
}

/// Idle seconds beyond which a Wi-Fi session costs less than Ethernet.
///
/// Returns 0 when Wi-Fi is already no worse with no idle time at all.
pub fn break_even_idle_time(
    wifi: &LinkModel,
    eth: &LinkModel,
    payload_bytes: u64,
    convention: BreakEvenConvention,
) -> Result<f64, NetworkError> {
    if wifi.link != Link::Wifi {
        return Err(NetworkError::WrongLink {
            expected: Link::Wifi,
            got: wifi.link,
        });
    }
    if eth.link != Link::Ethernet {
        return Err(NetworkError::WrongLink {
            expected: Link::Ethernet,
            got: eth.link,
        });
    }
    if wifi.direction != eth.direction {
        return Err(NetworkError::DirectionMismatch(wifi.direction, eth.direction));
    }
    if eth.idle_overhead_w <= 0.0 {
        return Err(NetworkError::NoBreakEven);
    }
    let saving = wifi.transfer_energy(payload_bytes) - eth.transfer_energy(payload_bytes);
    let mut t = saving / eth.idle_overhead_w;
    if convention == BreakEvenConvention::EqualSession {
        t -= wifi.transfer_time(payload_bytes) - eth.transfer_time(payload_bytes);
    }
    Ok(t.max(0.0))
}

/// Session energy: transfer energy plus idle overhead on `idle_s`.
pub fn session_energy(link: &LinkModel, payload_bytes: u64, idle_s: f64) -> f64 {
    link.transfer_energy(payload_bytes) + link.idle_overhead_w * idle_s
}

/// Cheaper link for a session of one transfer plus `idle_s` of other work.
/// Ties go to Wi-Fi.
pub fn preferred_link(wifi: &LinkModel, eth: &LinkModel, payload_bytes: u64, idle_s: f64) -> Link {
    if session_energy(eth, payload_bytes, idle_s) < session_energy(wifi, payload_bytes, idle_s) {
        Link::Ethernet
    } else {
        Link::Wifi
    }
}

/// Both links in both directions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkTable {
    pub wifi_download: LinkModel,
    pub wifi_upload: LinkModel,
    pub ethernet_download: LinkModel,
    pub ethernet_upload: LinkModel,
}

impl Default for LinkTable {
    fn default() -> Self {
        let m = |link, direction, mbps: f64, energy, overhead| LinkModel {
            link,
            direction,
            data_rate_bps: mbps * 1e6,
            energy_per_50mb_j: energy,
            idle_overhead_w: overhead,
        };
        use Direction::*;
        use Link::*;
        LinkTable {
            wifi_download: m(Wifi, Download, 25.7, 34.0, 0.0),
            wifi_upload: m(Wifi, Upload, 9.5, 93.9, 0.0),
            ethernet_download: m(Ethernet, Download, 86.4, 10.8, ETHERNET_IDLE_OVERHEAD_W),
            ethernet_upload: m(Ethernet, Upload, 19.2, 42.5, ETHERNET_IDLE_OVERHEAD_W),
        }
    }
}

impl LinkTable {
    pub fn get(&self, link: Link, direction: Direction) -> &LinkModel {
        match (link, direction) {
            (Link::Wifi, Direction::Download) => &self.wifi_download,
            (Link::Wifi, Direction::Upload) => &self.wifi_upload,
            (Link::Ethernet, Direction::Download) => &self.ethernet_download,
            (Link::Ethernet, Direction::Upload) => &self.ethernet_upload,
        }
    }

    pub fn get_mut(&mut self, link: Link, direction: Direction) -> &mut LinkModel {
        match (link, direction) {
            (Link::Wifi, Direction::Download) => &mut self.wifi_download,
            (Link::Wifi, Direction::Upload) => &mut self.wifi_upload,
            (Link::Ethernet, Direction::Download) => &mut self.ethernet_download,
            (Link::Ethernet, Direction::Upload) => &mut self.ethernet_upload,
        }
    }

    /// Idle overhead of `link`; taken from its upload entry.
    pub fn idle_overhead_w(&self, link: Link) -> f64 {
        self.get(link, Direction::Upload).idle_overhead_w
    }

    pub fn set_idle_overhead_w(&mut self, link: Link, watts: f64) {
        self.get_mut(link, Direction::Upload).idle_overhead_w = watts;
        self.get_mut(link, Direction::Download).idle_overhead_w = watts;
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        for m in [
            &self.wifi_download,
            &self.wifi_upload,
            &self.ethernet_download,
            &self.ethernet_upload,
        ] {
            m.validate()?;
        }
        Ok(())
    }
}
