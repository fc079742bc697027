//! Pittsburgh Sleep Quality Index scoring.
//!
//! Seven component scores in `0..=3` are computed with the standard PSQI
//! rules and summed into a global score in `0..=21`; higher is worse.

use chrono::{NaiveTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SleepLabel;
use crate::survey::SurveyRecord;

/// Conventional clinical threshold: global scores above this are poor sleep.
pub const DEFAULT_CUTOFF: u32 = 5;

pub mod columns {
    pub const BEDTIME: &str = "psqi_bedtime";
    pub const LATENCY_MIN: &str = "psqi_latency_min";
    pub const WAKETIME: &str = "psqi_waketime";
    pub const SLEEP_HOURS: &str = "psqi_sleep_hours";
    pub const DISTURBANCES: [&str; 9] = [
        "psqi_disturb_a",
        "psqi_disturb_b",
        "psqi_disturb_c",
        "psqi_disturb_d",
        "psqi_disturb_e",
        "psqi_disturb_f",
        "psqi_disturb_g",
        "psqi_disturb_h",
        "psqi_disturb_i",
    ];
    pub const QUALITY: &str = "psqi_quality";
    pub const MEDICATION: &str = "psqi_medication";
    pub const STAY_AWAKE: &str = "psqi_stay_awake";
    pub const ENTHUSIASM: &str = "psqi_enthusiasm";

    pub fn all() -> Vec<&'static str> {
        let mut v = vec![BEDTIME, LATENCY_MIN, WAKETIME, SLEEP_HOURS];
        v.extend(DISTURBANCES);
        v.extend([QUALITY, MEDICATION, STAY_AWAKE, ENTHUSIASM]);
        v
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PsqiError {
    #[error("wake time leaves no time in bed after bedtime")]
    InconsistentTimes,
    #[error("invalid PSQI response: {0}")]
    InvalidResponse(String),
    #[error("missing PSQI answer `{0}`")]
    Missing(String),
    #[error("unrecognized PSQI answer `{value}` for `{item}`")]
    Unrecognized { item: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsqiResponse {
    pub bedtime: NaiveTime,
    pub sleep_latency_min: f64,
    pub waketime: NaiveTime,
    pub sleep_hours: f64,
    /// Items 5a-5i; item 5a also feeds the latency component.
    pub disturbance_items: [u8; 9],
    pub subjective_quality: u8,
    pub medication_use: u8,
    /// Trouble staying awake, and lack of enthusiasm.
    pub daytime_dysfunction_items: [u8; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsqiScore {
    pub global: u32,
    /// Quality, latency, duration, efficiency, disturbances, medication, dysfunction.
    pub components: [u8; 7],
    pub label: SleepLabel,
}

fn band(sum: u32, edges: [u32; 3]) -> u8 {
    // edges are the inclusive upper ends of levels 0, 1, 2
    if sum <= edges[0] {
        0
    } else if sum <= edges[1] {
        1
    } else if sum <= edges[2] {
        2
    } else {
        3
    }
}

impl PsqiResponse {
    fn validate(&self) -> Result<(), PsqiError> {
        let codes = self
            .disturbance_items
            .iter()
            .chain(&self.daytime_dysfunction_items)
            .chain([&self.subjective_quality, &self.medication_use]);
        for &c in codes {
            if c > 3 {
                return Err(PsqiError::InvalidResponse(format!("code {c} outside 0..=3")));
            }
        }
        if !(self.sleep_hours >= 0.0) {
            return Err(PsqiError::InvalidResponse("negative sleep hours".into()));
        }
        if !(self.sleep_latency_min >= 0.0) {
            return Err(PsqiError::InvalidResponse("negative sleep latency".into()));
        }
        Ok(())
    }

    /// Hours between bedtime and waketime, wrapping past midnight.
    pub fn hours_in_bed(&self) -> Result<f64, PsqiError> {
        let bed = self.bedtime.num_seconds_from_midnight() as i64;
        let wake = self.waketime.num_seconds_from_midnight() as i64;
        let secs = (wake - bed).rem_euclid(86_400);
        if secs <= 0 {
            return Err(PsqiError::InconsistentTimes);
        }
        Ok(secs as f64 / 3600.0)
    }

    pub fn components(&self) -> Result<[u8; 7], PsqiError> {
        self.validate()?;
        let quality = self.subjective_quality;

        let latency_minutes = if self.sleep_latency_min <= 15.0 {
            0
        } else if self.sleep_latency_min <= 30.0 {
            1
        } else if self.sleep_latency_min <= 60.0 {
            2
        } else {
            3
        };
        let latency = band(latency_minutes + self.disturbance_items[0] as u32, [0, 2, 4]);

        let duration = if self.sleep_hours >= 7.0 {
            0
        } else if self.sleep_hours >= 6.0 {
            1
        } else if self.sleep_hours >= 5.0 {
            2
        } else {
            3
        };

        let efficiency_pct = 100.0 * self.sleep_hours / self.hours_in_bed()?;
        let efficiency = if efficiency_pct >= 85.0 {
            0
        } else if efficiency_pct >= 75.0 {
            1
        } else if efficiency_pct >= 65.0 {
            2
        } else {
            3
        };

        let disturbance_sum: u32 = self.disturbance_items[1..].iter().map(|&c| c as u32).sum();
        let disturbances = band(disturbance_sum, [0, 9, 18]);

        let dysfunction_sum: u32 = self.daytime_dysfunction_items.iter().map(|&c| c as u32).sum();
        let dysfunction = band(dysfunction_sum, [0, 2, 4]);

        Ok([
            quality,
            latency,
            duration,
            efficiency,
            disturbances,
            self.medication_use,
            dysfunction,
        ])
    }

    pub fn score_with_cutoff(&self, cutoff: u32) -> Result<PsqiScore, PsqiError> {
        let components = self.components()?;
        let global = components.iter().map(|&c| c as u32).sum();
        let label = if global > cutoff {
            SleepLabel::Poor
        } else {
            SleepLabel::Good
        };
        Ok(PsqiScore {
            global,
            components,
            label,
        })
    }

    pub fn from_record(record: &SurveyRecord) -> Result<Self, PsqiError> {
        let get = |name: &str| {
            record
                .answer(name)
                .map(str::trim)
                .ok_or_else(|| PsqiError::Missing(name.to_string()))
        };
        let unrecognized = |item: &str, value: &str| PsqiError::Unrecognized {
            item: item.to_string(),
            value: value.to_string(),
        };
        let number = |name: &str| -> Result<f64, PsqiError> {
            let v = get(name)?;
            v.parse::<f64>().map_err(|_| unrecognized(name, v))
        };
        let time = |name: &str| -> Result<NaiveTime, PsqiError> {
            let v = get(name)?;
            parse_clock(v).ok_or_else(|| unrecognized(name, v))
        };
        let code = |name: &str, table: &[&str; 4]| -> Result<u8, PsqiError> {
            let v = get(name)?;
            parse_code(v, table).ok_or_else(|| unrecognized(name, v))
        };

        let mut disturbance_items = [0u8; 9];
        for (slot, name) in disturbance_items.iter_mut().zip(columns::DISTURBANCES) {
            *slot = code(name, &FREQUENCY)?;
        }
        Ok(PsqiResponse {
            bedtime: time(columns::BEDTIME)?,
            sleep_latency_min: number(columns::LATENCY_MIN)?,
            waketime: time(columns::WAKETIME)?,
            sleep_hours: number(columns::SLEEP_HOURS)?,
            disturbance_items,
            subjective_quality: code(columns::QUALITY, &QUALITY)?,
            medication_use: code(columns::MEDICATION, &FREQUENCY)?,
            daytime_dysfunction_items: [
                code(columns::STAY_AWAKE, &FREQUENCY)?,
                code(columns::ENTHUSIASM, &ENTHUSIASM)?,
            ],
        })
    }
}

pub const FREQUENCY: [&str; 4] = [
    "Not during the past month",
    "Less than once a week",
    "Once or twice a week",
    "Three or more times a week",
];
pub const QUALITY: [&str; 4] = ["Very good", "Fairly good", "Fairly bad", "Very bad"];
pub const ENTHUSIASM: [&str; 4] = [
    "No problem at all",
    "Only a very slight problem",
    "Somewhat of a problem",
    "A very big problem",
];

fn parse_code(v: &str, table: &[&str; 4]) -> Option<u8> {
    if let Some(i) = table.iter().position(|t| t.eq_ignore_ascii_case(v)) {
        return Some(i as u8);
    }
    match v.parse::<u8>() {
        Ok(c) if c <= 3 => Some(c),
        _ => None,
    }
}

/// Accepts `23:30`, `11:30 PM`, `11:30PM` and `11 PM`.
pub fn parse_clock(v: &str) -> Option<NaiveTime> {
    let v = v.trim();
    ["%H:%M", "%H:%M:%S", "%I:%M %p", "%I:%M%p"]
        .iter()
        .find_map(|fmt| NaiveTime::parse_from_str(v, fmt).ok())
        .or_else(|| {
            let (h, ampm) = v.split_once(' ')?;
            NaiveTime::parse_from_str(&format!("{h}:00 {ampm}"), "%I:%M %p").ok()
        })
}

pub fn score_psqi(resp: &PsqiResponse) -> Result<PsqiScore, PsqiError> {
    resp.score_with_cutoff(DEFAULT_CUTOFF)
}
