//! Typed loading of the six input CSV schemas.
//!
//! Every file carries a mandatory header row. Parsers preserve file order,
//! validate each row against its type invariants and report failures with the
//! 1-based line number of the offending row (the header is line 1).

mod csvio;
mod types;
pub(crate) mod validate;

pub use csvio::{
    parse_flights, parse_nmts, parse_population, parse_spl, parse_tracts, parse_weather, write_flights,
    write_nmts, write_population, write_spl, write_tracts, write_weather, CsvRecord,
};
pub use types::{
    FlightEvent, LandUse, NmtMeta, Operation, PopulationRecord, Runway, SplSample, TractMeta, WeatherHour,
    LEVEL_MAX_DBA, LEVEL_MIN_DBA,
};
pub use validate::{
    validate_bundle, Bundle, Finding, FindingKind, NmtHourCompleteness, Severity, Stream, ValidationReport,
    NOMINAL_SAMPLES_PER_HOUR,
};

use std::path::Path;

pub const SPL_FILE: &str = "spl.csv";
pub const FLIGHTS_FILE: &str = "flights.csv";
pub const WEATHER_FILE: &str = "weather.csv";
pub const POPULATION_FILE: &str = "population.csv";
pub const TRACTS_FILE: &str = "tracts.csv";
pub const NMTS_FILE: &str = "nmts.csv";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: {field} = {value} outside {bounds}")]
    RangeViolation {
        line: u64,
        field: &'static str,
        value: String,
        bounds: &'static str,
    },
    #[error("line {line}: duplicate key {key}")]
    DuplicateKey { line: u64, key: String },
    #[error("line {line}: expected header {expected:?}, found {found:?}")]
    BadHeader {
        line: u64,
        expected: String,
        found: String,
    },
    #[error("line {line}: {source}")]
    Csv {
        line: u64,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<IngestError>,
    },
}

impl IngestError {
    /// 1-based line of the failing row, when the error is row-scoped.
    pub fn line(&self) -> Option<u64> {
        match self {
            Self::MalformedRow { line, .. }
            | Self::RangeViolation { line, .. }
            | Self::DuplicateKey { line, .. }
            | Self::BadHeader { line, .. }
            | Self::Csv { line, .. } => Some(*line),
            Self::InFile { source, .. } => source.line(),
            Self::Io { .. } => None,
        }
    }
}

/// Opens `dir/name` and parses it with `parse`, tagging errors with the path.
pub fn load<T>(
    dir: &Path,
    name: &str,
    parse: impl FnOnce(&[u8]) -> Result<Vec<T>, IngestError>,
) -> Result<Vec<T>, IngestError> {
    let path = dir.join(name);
    let bytes = std::fs::read(&path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&bytes).map_err(|e| IngestError::InFile {
        path: path.display().to_string(),
        source: Box::new(e),
    })
}

/// Reads all six files from a directory.
pub fn load_bundle(dir: &Path) -> Result<Bundle, IngestError> {
    Ok(Bundle {
        spl: load(dir, SPL_FILE, parse_spl)?,
        flights: load(dir, FLIGHTS_FILE, parse_flights)?,
        weather: load(dir, WEATHER_FILE, parse_weather)?,
        population: load(dir, POPULATION_FILE, parse_population)?,
        tracts: load(dir, TRACTS_FILE, parse_tracts)?,
        nmts: load(dir, NMTS_FILE, parse_nmts)?,
    })
}

/// Writes all six files into a directory.
pub fn write_bundle(dir: &Path, bundle: &Bundle) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(SPL_FILE), write_spl(&bundle.spl))?;
    std::fs::write(dir.join(FLIGHTS_FILE), write_flights(&bundle.flights))?;
    std::fs::write(dir.join(WEATHER_FILE), write_weather(&bundle.weather))?;
    std::fs::write(dir.join(POPULATION_FILE), write_population(&bundle.population))?;
    std::fs::write(dir.join(TRACTS_FILE), write_tracts(&bundle.tracts))?;
    std::fs::write(dir.join(NMTS_FILE), write_nmts(&bundle.nmts))?;
    Ok(())
}
