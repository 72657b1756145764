//! Threshold exposure, Gini inequality across tracts, and runway-rotation
//! diagnostics.
//!
//! A tract-hour counts as exposed when its measured LAeq strictly exceeds the
//! threshold; the whole population present is then exposed. Hours without a
//! measured level expose nobody, and [`GiniEntry::coverage`] reports how many
//! tracts had a measurement.

use crate::acoustics::{self, HourlyLaeq};
use crate::fusion::TractHourRecord;
use crate::numeric::{pearson, CompensatedSum};
use crate::output::{Cell, Table};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub const DEFAULT_THRESHOLDS: [f64; 2] = [65.0, 70.0];
pub const DEFAULT_BLOCK_HOURS: u32 = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExposureError {
    #[error("negative exposure value {value} at index {index}")]
    NegativeValue { index: usize, value: f64 },
    #[error("matrices differ in {0}")]
    GridMismatch(&'static str),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationBasis {
    #[default]
    Defacto,
    Residential,
}

impl PopulationBasis {
    pub fn as_str(&self) -> &'static str {
        match self {
            PopulationBasis::Defacto => "defacto",
            PopulationBasis::Residential => "residential",
        }
    }

    pub fn population(&self, record: &TractHourRecord) -> f64 {
        match self {
            PopulationBasis::Defacto => record.population_defacto,
            PopulationBasis::Residential => record.population_resident,
        }
    }
}

/// Threshold rendered for file names and keys: `65`, `67.5`.
pub fn theta_label(theta: f64) -> String {
    theta.to_string()
}

/// De facto population exposed above `theta`.
pub fn exposed(record: &TractHourRecord, theta: f64) -> f64 {
    exposed_on(record, theta, PopulationBasis::Defacto)
}

pub fn exposed_on(record: &TractHourRecord, theta: f64, basis: PopulationBasis) -> f64 {
    match record.laeq {
        Some(l) if l > theta => basis.population(record),
        _ => 0.0,
    }
}

/// Persons exposed per tract (rows) and hour (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureMatrix {
    pub theta: f64,
    pub basis: PopulationBasis,
    pub tract_ids: Vec<String>,
    #[serde(with = "hours_serde")]
    pub hours: Vec<NaiveDateTime>,
    /// Row-major, `tract_ids.len() × hours.len()`.
    pub cells: Vec<f64>,
    pub population: Vec<f64>,
    pub measured: Vec<bool>,
}

mod hours_serde {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(hours: &[NaiveDateTime], s: S) -> Result<S::Ok, S::Error> {
        hours
            .iter()
            .map(crate::time::format_timestamp)
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<NaiveDateTime>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|t| {
                crate::time::parse_timestamp(t)
                    .ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {t}")))
            })
            .collect()
    }
}

impl ExposureMatrix {
    pub fn n_tracts(&self) -> usize {
        self.tract_ids.len()
    }

    pub fn n_hours(&self) -> usize {
        self.hours.len()
    }

    pub fn get(&self, tract: usize, hour: usize) -> f64 {
        self.cells[tract * self.n_hours() + hour]
    }

    pub fn population_at(&self, tract: usize, hour: usize) -> f64 {
        self.population[tract * self.n_hours() + hour]
    }

    pub fn is_measured(&self, tract: usize, hour: usize) -> bool {
        self.measured[tract * self.n_hours() + hour]
    }

    /// Exposure of every tract in one hour.
    pub fn column(&self, hour: usize) -> Vec<f64> {
        (0..self.n_tracts()).map(|i| self.get(i, hour)).collect()
    }

    pub fn tract_index(&self, tract_id: &str) -> Option<usize> {
        self.tract_ids.iter().position(|t| t == tract_id)
    }

    pub fn hour_total(&self, hour: usize) -> f64 {
        (0..self.n_tracts())
            .map(|i| self.get(i, hour))
            .collect::<CompensatedSum>()
            .total()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["tract_id", "hour_start", "population", "laeq_measured", "exposed"]);
        for (i, tract) in self.tract_ids.iter().enumerate() {
            for (h, hour) in self.hours.iter().enumerate() {
                t.push(vec![
                    Cell::text(tract),
                    Cell::time(hour),
                    Cell::Num(self.population_at(i, h)),
                    Cell::Int(self.is_measured(i, h) as i64),
                    Cell::Num(self.get(i, h)),
                ]);
            }
        }
        t
    }
}

/// Builds the full tract × hour grid spanned by `records`. Grid cells with no
/// record hold zero population and are unmeasured.
pub fn exposure_matrix(records: &[TractHourRecord], theta: f64, basis: PopulationBasis) -> ExposureMatrix {
    let tract_ids: Vec<String> = records
        .iter()
        .map(|r| r.tract_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let hours: Vec<NaiveDateTime> = records
        .iter()
        .map(|r| r.hour_start)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let tract_pos: BTreeMap<String, usize> = tract_ids
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    let hour_pos: BTreeMap<NaiveDateTime, usize> = hours.iter().enumerate().map(|(i, h)| (*h, i)).collect();
    let size = tract_ids.len() * hours.len();
    let mut m = ExposureMatrix {
        theta,
        basis,
        cells: vec![0.0; size],
        population: vec![0.0; size],
        measured: vec![false; size],
        tract_ids,
        hours,
    };
    let width = m.hours.len();
    for r in records {
        let k = tract_pos[&r.tract_id] * width + hour_pos[&r.hour_start];
        m.cells[k] = exposed_on(r, theta, basis);
        m.population[k] = basis.population(r);
        m.measured[k] = r.laeq.is_some();
    }
    m
}

/// Gini coefficient `(1 / 2D²μ) ΣᵢΣⱼ |vᵢ − vⱼ|`, computed from the sorted
/// values as `Σ (2i − D − 1) v₍ᵢ₎ / (D Σ v)`. `None` when the mean is zero.
pub fn gini(values: &[f64]) -> Result<Option<f64>, ExposureError> {
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(ExposureError::NegativeValue { index, value });
    }
    let d = values.len();
    let total: f64 = values.iter().copied().collect::<CompensatedSum>().total();
    if d == 0 || total == 0.0 {
        return Ok(None);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let df = d as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * (i + 1) as f64 - df - 1.0) * v)
        .collect::<CompensatedSum>()
        .total();
    let g = weighted / (df * total);
    Ok(Some(g.clamp(0.0, (df - 1.0) / df)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiniEntry {
    #[serde(with = "crate::time::ts_serde")]
    pub hour_start: NaiveDateTime,
    pub gini: Option<f64>,
    pub exposed_total: f64,
    pub mean_exposure: f64,
    /// Fraction of tracts with a measured level this hour.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiniSeries {
    pub theta: f64,
    pub basis: PopulationBasis,
    pub entries: Vec<GiniEntry>,
}

pub fn gini_series(matrix: &ExposureMatrix) -> GiniSeries {
    let d = matrix.n_tracts();
    let entries = matrix
        .hours
        .iter()
        .enumerate()
        .map(|(h, hour)| {
            let col = matrix.column(h);
            let total = matrix.hour_total(h);
            let measured = (0..d).filter(|&i| matrix.is_measured(i, h)).count();
            GiniEntry {
                hour_start: *hour,
                gini: gini(&col).expect("exposure is non-negative"),
                exposed_total: total,
                mean_exposure: if d == 0 { 0.0 } else { total / d as f64 },
                coverage: if d == 0 { 0.0 } else { measured as f64 / d as f64 },
            }
        })
        .collect();
    GiniSeries {
        theta: matrix.theta,
        basis: matrix.basis,
        entries,
    }
}

impl GiniSeries {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["hour_start", "gini", "exposed_total", "mean_exposure", "coverage"]);
        for e in &self.entries {
            t.push(vec![
                Cell::time(&e.hour_start),
                Cell::opt_num(e.gini),
                Cell::Num(e.exposed_total),
                Cell::Num(e.mean_exposure),
                Cell::Num(e.coverage),
            ]);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisComparison {
    #[serde(with = "crate::time::ts_serde")]
    pub hour_start: NaiveDateTime,
    pub defacto_total: f64,
    pub residential_total: f64,
    /// `defacto_total − residential_total`.
    pub delta: f64,
}

pub fn compare_bases(
    defacto: &ExposureMatrix,
    residential: &ExposureMatrix,
) -> Result<Vec<BasisComparison>, ExposureError> {
    if defacto.theta.to_bits() != residential.theta.to_bits() {
        return Err(ExposureError::GridMismatch("theta"));
    }
    if defacto.tract_ids != residential.tract_ids {
        return Err(ExposureError::GridMismatch("tracts"));
    }
    if defacto.hours != residential.hours {
        return Err(ExposureError::GridMismatch("hours"));
    }
    Ok(defacto
        .hours
        .iter()
        .enumerate()
        .map(|(h, hour)| {
            let a = defacto.hour_total(h);
            let b = residential.hour_total(h);
            BasisComparison {
                hour_start: *hour,
                defacto_total: a,
                residential_total: b,
                delta: a - b,
            }
        })
        .collect())
}

pub fn comparison_table(rows: &[BasisComparison], theta: f64) -> Table {
    let mut t = Table::new([
        "theta",
        "hour_start",
        "defacto_total",
        "residential_total",
        "delta",
    ]);
    for r in rows {
        t.push(vec![
            Cell::Num(theta),
            Cell::time(&r.hour_start),
            Cell::Num(r.defacto_total),
            Cell::Num(r.residential_total),
            Cell::Num(r.delta),
        ]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairContrast {
    pub nmt_a: String,
    pub nmt_b: String,
    /// Blocks in which both terminals have a level.
    pub n_blocks: usize,
    /// Pearson correlation of block levels; `None` with fewer than two
    /// common blocks or a constant series.
    pub correlation: Option<f64>,
}

/// Energy-mean LAeq per terminal and `block_hours` block, counted from
/// midnight of the earliest hour. Hours without a level are skipped.
pub fn block_levels(hourly: &[HourlyLaeq], block_hours: u32) -> BTreeMap<String, BTreeMap<i64, f64>> {
    let Some(origin) = hourly.iter().map(|h| h.hour_start).min() else {
        return BTreeMap::new();
    };
    let origin = crate::time::midnight(&origin);
    let span = 3600 * i64::from(block_hours.max(1));
    let mut grouped: BTreeMap<&str, BTreeMap<i64, Vec<f64>>> = BTreeMap::new();
    for h in hourly {
        if let Some(l) = h.laeq {
            let block = (h.hour_start - origin).num_seconds().div_euclid(span);
            grouped
                .entry(&h.nmt_id)
                .or_default()
                .entry(block)
                .or_default()
                .push(l);
        }
    }
    grouped
        .into_iter()
        .map(|(nmt, blocks)| {
            let levels = blocks
                .into_iter()
                .map(|(b, ls)| (b, acoustics::laeq(&ls).expect("finite levels")))
                .collect();
            (nmt.to_string(), levels)
        })
        .collect()
}

/// Block-level correlation for every terminal pair, ordered by id.
pub fn rotation_contrast(
    hourly: &[HourlyLaeq],
    block_hours: u32,
) -> Result<Vec<PairContrast>, ExposureError> {
    if block_hours == 0 {
        return Err(ExposureError::InsufficientData("block length is zero".into()));
    }
    let blocks = block_levels(hourly, block_hours);
    let distinct: BTreeSet<i64> = blocks.values().flat_map(|b| b.keys().copied()).collect();
    if distinct.len() < 2 {
        return Err(ExposureError::InsufficientData(format!(
            "{} block(s) with measured levels, need 2",
            distinct.len()
        )));
    }
    if blocks.len() < 2 {
        return Err(ExposureError::InsufficientData(
            "fewer than two terminals with levels".into(),
        ));
    }
    let ids: Vec<&String> = blocks.keys().collect();
    let mut out = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            let (xa, xb): (Vec<f64>, Vec<f64>) = blocks[*a]
                .iter()
                .filter_map(|(k, la)| blocks[*b].get(k).map(|lb| (*la, *lb)))
                .unzip();
            out.push(PairContrast {
                nmt_a: a.to_string(),
                nmt_b: b.to_string(),
                n_blocks: xa.len(),
                correlation: pearson(&xa, &xb),
            });
        }
    }
    Ok(out)
}

pub fn rotation_table(pairs: &[PairContrast]) -> Table {
    let mut t = Table::new(["nmt_a", "nmt_b", "n_blocks", "correlation"]);
    for p in pairs {
        t.push(vec![
            Cell::text(&p.nmt_a),
            Cell::text(&p.nmt_b),
            Cell::Int(p.n_blocks as i64),
            Cell::opt_num(p.correlation),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_timestamp;
    use proptest::prelude::*;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn rec(tract: &str, hour: &str, n: f64, resident: f64, laeq: Option<f64>) -> TractHourRecord {
        TractHourRecord {
            tract_id: tract.into(),
            hour_start: ts(hour),
            population_defacto: n,
            population_resident: resident,
            laeq,
            source_nmt: "N1".into(),
        }
    }

    fn pairwise(v: &[f64]) -> Option<f64> {
        let d = v.len() as f64;
        let mu = v.iter().sum::<f64>() / d;
        if mu == 0.0 {
            return None;
        }
        let mut s = 0.0;
        for a in v {
            for b in v {
                s += (a - b).abs();
            }
        }
        Some(s / (2.0 * d * d * mu))
    }

    #[test]
    fn exposed_indicator() {
        let r = rec("T", "2024-01-01T09:00:00", 500.0, 400.0, Some(66.2));
        assert_eq!(exposed(&r, 65.0), 500.0);
        assert_eq!(exposed(&r, 70.0), 0.0);
        assert_eq!(exposed(&r, 66.2), 0.0);
        assert_eq!(exposed_on(&r, 65.0, PopulationBasis::Residential), 400.0);
        let quiet = rec("T", "2024-01-01T09:00:00", 500.0, 400.0, None);
        assert_eq!(exposed(&quiet, 0.0), 0.0);
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[5.0; 4]).unwrap(), Some(0.0));
        assert_eq!(gini(&[0.0, 0.0, 0.0, 17.0]).unwrap(), Some(0.75));
        assert_eq!(gini(&[100.0, 300.0, 0.0, 0.0]).unwrap(), Some(0.625));
        assert_eq!(pairwise(&[100.0, 300.0, 0.0, 0.0]), Some(0.625));
        assert_eq!(gini(&[0.0; 3]).unwrap(), None);
        assert_eq!(gini(&[42.0]).unwrap(), Some(0.0));
        assert!(matches!(
            gini(&[1.0, -1.0]),
            Err(ExposureError::NegativeValue { index: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn gini_matches_pairwise(v in prop::collection::vec(0.0f64..1e4, 1..120)) {
            let fast = gini(&v).unwrap();
            let slow = pairwise(&v);
            match (fast, slow) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}"),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn gini_scale_invariant(v in prop::collection::vec(0.0f64..1e3, 1..60), c in 1e-3f64..1e3) {
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            if let (Some(a), Some(b)) = (gini(&v).unwrap(), gini(&scaled).unwrap()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    fn grid() -> Vec<TractHourRecord> {
        vec![
            rec("B", "2024-01-01T09:00:00", 100.0, 50.0, Some(71.0)),
            rec("A", "2024-01-01T09:00:00", 300.0, 500.0, Some(66.0)),
            rec("A", "2024-01-01T10:00:00", 300.0, 500.0, None),
            rec("B", "2024-01-01T10:00:00", 100.0, 50.0, Some(64.0)),
        ]
    }

    #[test]
    fn matrix_and_series() {
        let m65 = exposure_matrix(&grid(), 65.0, PopulationBasis::Defacto);
        let m70 = exposure_matrix(&grid(), 70.0, PopulationBasis::Defacto);
        assert_eq!(m65.tract_ids, ["A", "B"]);
        assert_eq!(m65.cells, [300.0, 0.0, 100.0, 0.0]);
        assert_eq!(m70.cells, [0.0, 0.0, 100.0, 0.0]);
        let s = gini_series(&m65);
        assert_eq!(s.entries[0].gini, Some(0.25));
        assert_eq!(s.entries[0].exposed_total, 400.0);
        assert_eq!(s.entries[0].mean_exposure, 200.0);
        assert_eq!(s.entries[1].gini, None);
        assert_eq!(s.entries[1].coverage, 0.5);
        let csv = String::from_utf8(s.to_table().to_csv()).unwrap();
        assert!(csv.contains("2024-01-01T10:00:00,,0,0,0.5"), "{csv}");
    }

    #[test]
    fn compare_residential() {
        let d = exposure_matrix(&grid(), 65.0, PopulationBasis::Defacto);
        let r = exposure_matrix(&grid(), 65.0, PopulationBasis::Residential);
        let c = compare_bases(&d, &r).unwrap();
        assert_eq!(c[0].delta, 400.0 - 550.0);
        assert!(compare_bases(&d, &d).unwrap().iter().all(|c| c.delta == 0.0));
        let other = exposure_matrix(&grid(), 70.0, PopulationBasis::Residential);
        assert_eq!(
            compare_bases(&d, &other),
            Err(ExposureError::GridMismatch("theta"))
        );
    }

    fn hourly(nmt: &str, levels: &[f64]) -> Vec<HourlyLaeq> {
        let start = ts("2024-01-01T00:00:00");
        levels
            .iter()
            .enumerate()
            .map(|(i, &l)| HourlyLaeq {
                nmt_id: nmt.into(),
                hour_start: start + chrono::Duration::hours(i as i64),
                laeq: Some(l),
                n_retained: 1,
                completeness: 1.0,
            })
            .collect()
    }

    #[test]
    fn rotation_anti_phase() {
        let high_low: Vec<f64> = (0..24)
            .map(|h| if (h / 3) % 2 == 0 { 75.0 } else { 65.0 })
            .collect();
        let low_high: Vec<f64> = high_low.iter().map(|l| 140.0 - l).collect();
        let mut all = hourly("A", &high_low);
        all.extend(hourly("B", &low_high));
        all.extend(hourly("C", &high_low));
        let pairs = rotation_contrast(&all, 3).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!((pairs[0].nmt_a.as_str(), pairs[0].nmt_b.as_str()), ("A", "B"));
        assert!((pairs[0].correlation.unwrap() + 1.0).abs() < 1e-12);
        assert!((pairs[1].correlation.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pairs[1].n_blocks, 8);
    }

    #[test]
    fn rotation_needs_two_blocks() {
        let mut all = hourly("A", &[70.0, 71.0, 72.0]);
        all.extend(hourly("B", &[70.0, 71.0, 72.0]));
        assert!(matches!(
            rotation_contrast(&all, 3),
            Err(ExposureError::InsufficientData(_))
        ));
    }
}
