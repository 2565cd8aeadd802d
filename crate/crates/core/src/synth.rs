//! Deterministic synthetic cell traffic with known daily profiles.
//!
//! Each cell follows one of a few daily shapes, optionally switching shape at
//! week boundaries. Hourly volume is `profile[hour] * weekend * dip + noise`,
//! clipped at zero. Auxiliary channels mimic RAN counters: a few affine
//! copies of volume, two lagged handover counts, and pure noise.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dtw::{dtw_distance, DtwParams};
use crate::error::{Error, Result};
use crate::series::{is_weekend, write_csv, Channel, TimeSeries, HOURS_PER_DAY};

pub const OUTPUT_CHANNEL: &str = "dl_volume";
pub const HANDOVER_IN: &str = "ho_in";
pub const HANDOVER_OUT: &str = "ho_out";
pub const RAN_CHANNELS: usize = 4;
pub const NOISE_CHANNELS: usize = 14;

/// 2024-01-01T00:00Z, a Monday, as an absolute hour index.
pub const DEFAULT_START: i64 = 473_352;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    /// Base daily shape, 24 values in [0, 1].
    pub values: Vec<f64>,
    /// Extra weekend multiplier for this profile (on top of `weekend_scale`).
    pub weekend_factor: f64,
}

impl Profile {
    fn from_bumps(name: &str, base: f64, bumps: &[(f64, f64, f64)], weekend_factor: f64) -> Self {
        let values = (0..HOURS_PER_DAY)
            .map(|h| {
                let h = h as f64;
                let v = bumps.iter().fold(base, |acc, &(center, width, amp)| {
                    let d = (h - center).abs();
                    let d = d.min(24.0 - d);
                    acc + amp * (-d * d / (2.0 * width * width)).exp()
                });
                v.clamp(0.0, 1.0)
            })
            .collect();
        Self {
            name: name.into(),
            values,
            weekend_factor,
        }
    }

    /// Morning and evening commute peaks.
    pub fn bimodal_commuter() -> Self {
        Self::from_bumps("bimodal_commuter", 0.1, &[(8.0, 1.5, 0.8), (18.0, 1.5, 0.85)], 0.8)
    }

    /// Broad night-time load, quiet days.
    pub fn flat_nocturnal() -> Self {
        Self::from_bumps("flat_nocturnal", 0.15, &[(1.0, 4.0, 0.65)], 1.0)
    }

    /// One sharp evening peak.
    pub fn evening_peak() -> Self {
        Self::from_bumps("evening_peak", 0.05, &[(20.5, 1.8, 0.95)], 1.0)
    }

    /// Wide midday plateau, busier at weekends.
    pub fn weekend_heavy() -> Self {
        Self::from_bumps(
            "weekend_heavy",
            0.1,
            &[(11.0, 2.0, 0.55), (14.0, 2.0, 0.55)],
            1.2,
        )
    }

    /// A shape absent from the default set: a short pre-dawn burst over a
    /// high daytime floor.
    pub fn unseen_dawn_burst() -> Self {
        let mut p = Self::from_bumps("dawn_burst", 0.55, &[(4.5, 1.0, 0.45), (15.0, 1.5, -0.5)], 1.0);
        p.values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSwitch {
    pub cell: usize,
    /// First week (0-based) of the new profile.
    pub week: usize,
    pub profile: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dip {
    pub start_week: usize,
    pub end_week: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub profiles: Vec<Profile>,
    pub cells: usize,
    pub weeks: usize,
    pub noise_sigma: f64,
    /// Initial profile per cell; `None` cycles through the profiles.
    pub cell_profiles: Option<Vec<usize>>,
    pub regime_switches: Vec<RegimeSwitch>,
    pub weekend_scale: f64,
    pub dip: Option<Dip>,
    pub start_time: i64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 20 cells, 12 weeks, four profiles, sigma 0.05; every fifth cell
    /// switches profile once.
    fn default() -> Self {
        let cells = 20;
        let profiles = Self::default_profiles();
        let regime_switches = (0..cells)
            .filter(|c| c % 5 == 2)
            .map(|c| RegimeSwitch {
                cell: c,
                week: 6,
                profile: (c + 1) % profiles.len(),
            })
            .collect();
        Self {
            profiles,
            cells,
            weeks: 12,
            noise_sigma: 0.05,
            cell_profiles: None,
            regime_switches,
            weekend_scale: 1.0,
            dip: None,
            start_time: DEFAULT_START,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn default_profiles() -> Vec<Profile> {
        vec![
            Profile::bimodal_commuter(),
            Profile::flat_nocturnal(),
            Profile::evening_peak(),
            Profile::weekend_heavy(),
        ]
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.profiles.is_empty() {
            return bad("at least one profile required".into());
        }
        for p in &self.profiles {
            if p.values.len() != HOURS_PER_DAY as usize {
                return bad(format!("profile `{}` must have 24 values", p.name));
            }
            if p.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad(format!("profile `{}` has values outside [0, 1]", p.name));
            }
            if !(p.weekend_factor > 0.0) {
                return bad(format!("profile `{}` weekend factor must be positive", p.name));
            }
        }
        if self.cells == 0 || self.weeks == 0 {
            return bad("cells and weeks must be >= 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and >= 0".into());
        }
        if !(self.weekend_scale > 0.0) {
            return bad("weekend scale must be positive".into());
        }
        if let Some(d) = &self.dip {
            if !(d.scale > 0.0) || d.start_week > d.end_week {
                return bad("dip needs scale > 0 and start_week <= end_week".into());
            }
        }
        if let Some(cp) = &self.cell_profiles {
            if cp.len() != self.cells || cp.iter().any(|&p| p >= self.profiles.len()) {
                return bad("cell_profiles must name a valid profile for every cell".into());
            }
        }
        for s in &self.regime_switches {
            if s.cell >= self.cells || s.profile >= self.profiles.len() {
                return bad(format!("regime switch {s:?} references an unknown cell or profile"));
            }
        }
        Ok(())
    }

    pub fn cell_id(cell: usize) -> String {
        format!("cell{cell:03}")
    }

    fn profile_on(&self, cell: usize, week: usize) -> usize {
        let initial = self
            .cell_profiles
            .as_ref()
            .map_or(cell % self.profiles.len(), |cp| cp[cell]);
        self.regime_switches
            .iter()
            .filter(|s| s.cell == cell && s.week <= week)
            .max_by_key(|s| s.week)
            .map_or(initial, |s| s.profile)
    }

    /// Smallest DTW distance between two distinct profiles divided by the
    /// noise sigma (infinite for noiseless or single-profile specs).
    pub fn separation_ratio(&self) -> f64 {
        let params = DtwParams::default();
        let mut min = f64::INFINITY;
        for (i, a) in self.profiles.iter().enumerate() {
            for b in &self.profiles[i + 1..] {
                let d = dtw_distance(&a.values, &b.values, &params).unwrap_or(f64::INFINITY);
                min = min.min(d);
            }
        }
        if self.noise_sigma == 0.0 {
            f64::INFINITY
        } else {
            min / self.noise_sigma
        }
    }
}

/// Ground-truth profile of one cell-day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayLabel {
    pub cell: usize,
    pub day_index: usize,
    pub profile: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub series: Vec<TimeSeries>,
    pub labels: Vec<DayLabel>,
}

impl SyntheticDataset {
    pub fn labels_of(&self, cell: usize) -> impl Iterator<Item = &DayLabel> {
        self.labels.iter().filter(move |l| l.cell == cell)
    }

    /// Profile label of a cell-day, looked up by cell id.
    pub fn label(&self, cell_id: &str, day_index: usize) -> Option<usize> {
        let cell = self.series.iter().position(|s| s.cell_id() == cell_id)?;
        self.labels
            .iter()
            .find(|l| l.cell == cell && l.day_index == day_index)
            .map(|l| l.profile)
    }

    /// Writes `data.csv` (ingestion schema) and `labels.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(dir.join("data.csv"), &self.series)?;
        let path = dir.join("labels.csv");
        let io = |e| Error::io(&path, e);
        let mut w = std::io::BufWriter::new(File::create(&path).map_err(io)?);
        writeln!(w, "cell_id,day_index,profile").map_err(io)?;
        for l in &self.labels {
            writeln!(w, "{},{},{}", SyntheticSpec::cell_id(l.cell), l.day_index, l.profile).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn cell_seed(seed: u64, cell: usize) -> u64 {
    seed ^ (cell as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates the dataset described by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let days = spec.weeks * 7;
    let len = days * HOURS_PER_DAY as usize;
    let mut series = Vec::with_capacity(spec.cells);
    let mut labels = Vec::with_capacity(spec.cells * days);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    for cell in 0..spec.cells {
        let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(spec.seed, cell));
        let mut volume = Vec::with_capacity(len);
        for day in 0..days {
            let week = day / 7;
            let p = spec.profile_on(cell, week);
            labels.push(DayLabel {
                cell,
                day_index: day,
                profile: p,
            });
            let profile = &spec.profiles[p];
            for hour in 0..HOURS_PER_DAY as usize {
                let t = spec.start_time + (day * HOURS_PER_DAY as usize + hour) as i64;
                let mut scale = 1.0;
                if is_weekend(t) {
                    scale *= spec.weekend_scale * profile.weekend_factor;
                }
                if let Some(dip) = &spec.dip {
                    if (dip.start_week..=dip.end_week).contains(&week) {
                        scale *= dip.scale;
                    }
                }
                let noise = spec.noise_sigma * unit.sample(&mut rng);
                volume.push((profile.values[hour] * scale + noise).max(0.0));
            }
        }

        let mut channels = vec![Channel {
            name: OUTPUT_CHANNEL.into(),
            values: volume.clone(),
        }];
        for k in 0..RAN_CHANNELS {
            let gain = 0.5 + 0.4 * k as f64;
            let offset = 0.05 * k as f64;
            let jitter = 0.02 * (k + 1) as f64;
            channels.push(Channel {
                name: format!("ran_{}", k + 1),
                values: volume
                    .iter()
                    .map(|v| gain * v + offset + jitter * unit.sample(&mut rng))
                    .collect(),
            });
        }
        for (name, lag, gain) in [(HANDOVER_IN, 1usize, 0.6), (HANDOVER_OUT, 2usize, 0.5)] {
            channels.push(Channel {
                name: name.into(),
                values: (0..len)
                    .map(|i| {
                        let v = volume[i.saturating_sub(lag)];
                        (gain * v + 0.08 * unit.sample(&mut rng)).max(0.0)
                    })
                    .collect(),
            });
        }
        for k in 0..NOISE_CHANNELS {
            channels.push(Channel {
                name: format!("noise_{}", k + 1),
                values: (0..len).map(|_| 0.5 + 0.2 * unit.sample(&mut rng)).collect(),
            });
        }
        series.push(TimeSeries::new(
            SyntheticSpec::cell_id(cell),
            spec.start_time,
            channels,
            OUTPUT_CHANNEL,
        )?);
    }
    Ok(SyntheticDataset { series, labels })
}

/// Separates one cell from the rest. Applying it again to the same dataset
/// yields the same split.
pub fn holdout_split(dataset: &[TimeSeries], holdout_cell: &str) -> Result<(Vec<TimeSeries>, TimeSeries)> {
    let held = dataset
        .iter()
        .find(|s| s.cell_id() == holdout_cell)
        .cloned()
        .ok_or_else(|| Error::UnknownCell(holdout_cell.to_string()))?;
    let train = dataset
        .iter()
        .filter(|s| s.cell_id() != holdout_cell)
        .cloned()
        .collect();
    Ok((train, held))
}
