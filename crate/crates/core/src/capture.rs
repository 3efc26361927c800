//! Image-capture timing and energy.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DeviceModel, ModelError};

#[derive(Debug, Error, PartialEq)]
pub enum CaptureError {
    #[error("capture time table is empty")]
    EmptyTable,
    #[error("capture time table lacks the 800x600 reference entry")]
    MissingReference,
    #[error("invalid resolution `{0}` (expected <width>x<height>)")]
    BadResolution(String),
    #[error("invalid table entry `{0}` (expected <w>x<h>:<seconds>)")]
    BadEntry(String),
    #[error("per-image time for {0} must be > 0")]
    NonPositiveTime(Resolution),
    #[error("image count must be >= 1")]
    NoImages,
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Resolution {
    pub width_px: u32,
    pub height_px: u32,
}

impl Resolution {
    pub const REFERENCE: Resolution = Resolution {
        width_px: 800,
        height_px: 600,
    };

    pub fn new(width_px: u32, height_px: u32) -> Result<Self, CaptureError> {
        if width_px == 0 || height_px == 0 {
            return Err(CaptureError::BadResolution(format!("{width_px}x{height_px}")));
        }
        Ok(Resolution {
            width_px,
            height_px,
        })
    }

    pub fn pixels(&self) -> u64 {
        u64::from(self.width_px) * u64::from(self.height_px)
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width_px, self.height_px)
    }
}

impl FromStr for Resolution {
    type Err = CaptureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CaptureError::BadResolution(s.to_string());
        let (w, h) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let w = w.trim().parse().map_err(|_| bad())?;
        let h = h.trim().parse().map_err(|_| bad())?;
        Resolution::new(w, h).map_err(|_| bad())
    }
}

impl Serialize for Resolution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Free-running seconds per image, keyed by resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureTimeTable {
    // sorted by (pixel count, resolution)
    entries: Vec<(Resolution, f64)>,
}

impl Default for CaptureTimeTable {
    fn default() -> Self {
        CaptureTimeTable {
            entries: vec![(Resolution::REFERENCE, 0.515)],
        }
    }
}

impl CaptureTimeTable {
    pub fn new(entries: impl IntoIterator<Item = (Resolution, f64)>) -> Result<Self, CaptureError> {
        let mut entries: Vec<(Resolution, f64)> = entries.into_iter().collect();
        if entries.is_empty() {
            return Err(CaptureError::EmptyTable);
        }
        for &(res, secs) in &entries {
            if !(secs.is_finite() && secs > 0.0) {
                return Err(CaptureError::NonPositiveTime(res));
            }
        }
        entries.sort_by(|a, b| (a.0.pixels(), a.0).cmp(&(b.0.pixels(), b.0)));
        entries.dedup_by(|later, earlier| later.0 == earlier.0);
        if !entries.iter().any(|(r, _)| *r == Resolution::REFERENCE) {
            return Err(CaptureError::MissingReference);
        }
        Ok(CaptureTimeTable { entries })
    }

    /// Parses `<w>x<h>:<seconds>` entries.
    pub fn parse_entries<S: AsRef<str>>(items: &[S]) -> Result<Self, CaptureError> {
        let mut parsed = Vec::with_capacity(items.len());
        for item in items {
            let item = item.as_ref();
            let (res, secs) = item
                .split_once(':')
                .ok_or_else(|| CaptureError::BadEntry(item.to_string()))?;
            let res: Resolution = res.parse()?;
            let secs: f64 = secs
                .trim()
                .parse()
                .map_err(|_| CaptureError::BadEntry(item.to_string()))?;
            parsed.push((res, secs));
        }
        Self::new(parsed)
    }

    pub fn entries(&self) -> &[(Resolution, f64)] {
        &self.entries
    }

    /// Seconds per image: exact entry if present, else linear in pixel count
    /// between the nearest entries, clamped at the table's ends.
    pub fn per_image_s(&self, res: Resolution) -> f64 {
        if let Some(&(_, s)) = self.entries.iter().find(|(r, _)| *r == res) {
            return s;
        }
        let px = res.pixels() as f64;
        let first = self.entries[0];
        let last = self.entries[self.entries.len() - 1];
        if px <= first.0.pixels() as f64 {
            return first.1;
        }
        if px >= last.0.pixels() as f64 {
            return last.1;
        }
        let hi = self.entries.partition_point(|(r, _)| (r.pixels() as f64) < px);
        let (r0, s0) = self.entries[hi - 1];
        let (r1, s1) = self.entries[hi];
        let (x0, x1) = (r0.pixels() as f64, r1.pixels() as f64);
        if x1 == x0 {
            return s0;
        }
        s0 + (s1 - s0) * (px - x0) / (x1 - x0)
    }

    /// Free-running duration of an `n_images` batch.
    pub fn capture_duration(&self, n_images: u32, res: Resolution) -> Result<f64, CaptureError> {
        if n_images == 0 {
            return Err(CaptureError::NoImages);
        }
        Ok(f64::from(n_images) * self.per_image_s(res))
    }
}

/// Optional per-image slowdown: each image takes `1 + u * bound` times its
/// nominal time, `u` uniform in `[0, 1)`, drawn from a seeded generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureJitter {
    pub bound: f64,
    pub seed: u64,
}

/// Capture behaviour of a deployed node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureModel {
    pub table: CaptureTimeTable,
    /// Pacing between shots; 0 for free-running benchmark mode.
    pub min_interval_s: f64,
    /// Task whose mean extra power is charged while capturing.
    pub reference_task: String,
    /// Overrides the reference task's extra power when set.
    pub extra_power_w: Option<f64>,
    pub jitter: Option<CaptureJitter>,
}

impl Default for CaptureModel {
    fn default() -> Self {
        CaptureModel {
            table: CaptureTimeTable::default(),
            min_interval_s: 1.0,
            reference_task: "step2".into(),
            extra_power_w: None,
            jitter: None,
        }
    }
}

impl CaptureModel {
    pub fn validate(&self) -> Result<(), CaptureError> {
        if !(self.min_interval_s.is_finite() && self.min_interval_s >= 0.0) {
            return Err(CaptureError::Invalid {
                field: "capture.min_interval_s",
                reason: "must be >= 0".into(),
            });
        }
        if let Some(p) = self.extra_power_w {
            if !(p.is_finite() && p >= 0.0) {
                return Err(CaptureError::Invalid {
                    field: "capture.extra_power_w",
                    reason: "must be >= 0".into(),
                });
            }
        }
        if let Some(j) = self.jitter {
            if !(j.bound.is_finite() && j.bound >= 0.0) {
                return Err(CaptureError::Invalid {
                    field: "capture.jitter_bound",
                    reason: "must be >= 0".into(),
                });
            }
        }
        Ok(())
    }

    /// Paced batch duration: each shot takes at least `min_interval_s`.
    pub fn duration(&self, n_images: u32, res: Resolution) -> Result<f64, CaptureError> {
        if n_images == 0 {
            return Err(CaptureError::NoImages);
        }
        let per = self.table.per_image_s(res).max(self.min_interval_s);
        match self.jitter {
            None => Ok(f64::from(n_images) * per),
            Some(j) => {
                let mut rng = ChaCha8Rng::seed_from_u64(j.seed);
                let free = self.table.per_image_s(res);
                Ok((0..n_images)
                    .map(|_| (free * (1.0 + rng.gen::<f64>() * j.bound)).max(self.min_interval_s))
                    .sum())
            }
        }
    }

    /// Extra power above idle while capturing, at the reference temperature.
    pub fn extra_power(&self, model: &DeviceModel) -> Result<f64, CaptureError> {
        match self.extra_power_w {
            Some(p) => Ok(p),
            None => Ok(model.task(&self.reference_task)?.extra_power_w()),
        }
    }

    /// Energy above idle of a paced batch at `ambient_c`.
    pub fn energy(
        &self,
        model: &DeviceModel,
        n_images: u32,
        res: Resolution,
        ambient_c: f64,
    ) -> Result<f64, CaptureError> {
        let duration = self.duration(n_images, res)?;
        Ok(duration * self.extra_power(model)? * model.temp_modifier.factor(ambient_c))
    }
}
