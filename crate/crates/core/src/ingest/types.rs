use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Plausibility band for a single A-weighted reading.
pub const LEVEL_MIN_DBA: f64 = 0.0;
pub const LEVEL_MAX_DBA: f64 = 140.0;

/// One 3-second A-weighted reading at a monitoring terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct SplSample {
    pub nmt_id: String,
    pub timestamp: NaiveDateTime,
    pub level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Operation {
    Departure,
    Arrival,
}

impl Operation {
    pub const ALL: [Operation; 2] = [Operation::Departure, Operation::Arrival];

    pub fn as_str(&self) -> &'static str {
        match self {
            Operation::Departure => "DEPARTURE",
            Operation::Arrival => "ARRIVAL",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Operation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DEPARTURE" => Ok(Operation::Departure),
            "ARRIVAL" => Ok(Operation::Arrival),
            other => Err(format!("operation {other:?} is not DEPARTURE or ARRIVAL")),
        }
    }
}

/// Runway designator such as `32L`: two-digit magnetic heading in tens of
/// degrees plus an optional L/C/R suffix.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Runway(String);

impl Runway {
    pub fn heading_deg(&self) -> f64 {
        let digits: String = self.0.chars().take_while(|c| c.is_ascii_digit()).collect();
        let tens: u32 = digits.parse().expect("validated at construction");
        f64::from(tens * 10) % 360.0
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for Runway {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits: String = s.chars().take_while(|c| c.is_ascii_digit()).collect();
        let suffix = &s[digits.len()..];
        let ok_digits = matches!(digits.parse::<u32>(), Ok(1..=36)) && digits.len() <= 2;
        let ok_suffix = matches!(suffix, "" | "L" | "C" | "R");
        if ok_digits && ok_suffix {
            Ok(Runway(s.to_string()))
        } else {
            Err(format!("runway {s:?} is not a designator like 32L"))
        }
    }
}

impl TryFrom<String> for Runway {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Runway> for String {
    fn from(r: Runway) -> String {
        r.0
    }
}

impl fmt::Display for Runway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightEvent {
    pub timestamp: NaiveDateTime,
    pub operation: Operation,
    pub runway: Runway,
    pub aircraft_type: String,
    pub engine_type: String,
    pub airline: String,
}

impl FlightEvent {
    /// Aircraft-engine pairing label, e.g. `B737+CFM56`.
    pub fn combo(&self) -> String {
        format!("{}+{}", self.aircraft_type, self.engine_type)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherHour {
    pub hour_start: NaiveDateTime,
    pub temperature_c: f64,
    pub wind_speed_kt: f64,
    /// Degrees true, `[0, 360)`.
    pub wind_direction_deg: f64,
    /// Integer tenths of sky covered, `0..=10`.
    pub cloud_cover_tenths: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationRecord {
    pub tract_id: String,
    pub hour_start: NaiveDateTime,
    pub defacto_count: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LandUse {
    Commercial,
    Residential,
    Mixed,
    Unknown,
}

impl LandUse {
    pub fn as_str(&self) -> &'static str {
        match self {
            LandUse::Commercial => "COMMERCIAL",
            LandUse::Residential => "RESIDENTIAL",
            LandUse::Mixed => "MIXED",
            LandUse::Unknown => "UNKNOWN",
        }
    }
}

impl FromStr for LandUse {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "COMMERCIAL" => Ok(LandUse::Commercial),
            "RESIDENTIAL" => Ok(LandUse::Residential),
            "MIXED" => Ok(LandUse::Mixed),
            "UNKNOWN" => Ok(LandUse::Unknown),
            other => Err(format!("land_use {other:?} is not a known category")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TractMeta {
    pub tract_id: String,
    pub district_id: String,
    pub centroid_lat: f64,
    pub centroid_lon: f64,
    pub resident_count: f64,
    pub land_use: LandUse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmtMeta {
    pub nmt_id: String,
    pub tract_id: String,
    pub lat: f64,
    pub lon: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runway_heading_from_designator() {
        assert_eq!("32L".parse::<Runway>().unwrap().heading_deg(), 320.0);
        assert_eq!("14R".parse::<Runway>().unwrap().heading_deg(), 140.0);
        assert_eq!("36".parse::<Runway>().unwrap().heading_deg(), 0.0);
        assert!("37L".parse::<Runway>().is_err());
        assert!("32X".parse::<Runway>().is_err());
        assert!("L".parse::<Runway>().is_err());
    }
}
