use super::FusionError;
use crate::ingest::{FlightEvent, Operation, Runway};
use crate::time::{floor_hour, ts_serde, StudyWindow};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Runways in use for each operation during one hour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveRunways {
    pub departure: Runway,
    pub arrival: Runway,
}

impl ActiveRunways {
    pub fn for_operation(&self, op: Operation) -> &Runway {
        match op {
            Operation::Departure => &self.departure,
            Operation::Arrival => &self.arrival,
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            departure: self.arrival.clone(),
            arrival: self.departure.clone(),
        }
    }
}

/// Fixed rotation: runway roles swap every `block_hours`, counted from
/// `origin`. Even blocks use `even_blocks`, odd blocks its swap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSchedule {
    pub block_hours: u32,
    #[serde(with = "ts_serde")]
    pub origin: NaiveDateTime,
    pub even_blocks: ActiveRunways,
}

impl RotationSchedule {
    /// Signed block number of the block containing `ts`.
    pub fn block_index(&self, ts: &NaiveDateTime) -> i64 {
        (*ts - self.origin)
            .num_seconds()
            .div_euclid(3600 * i64::from(self.block_hours))
    }

    pub fn active(&self, ts: &NaiveDateTime) -> ActiveRunways {
        if self.block_index(ts).rem_euclid(2) == 0 {
            self.even_blocks.clone()
        } else {
            self.even_blocks.swapped()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunwaySchedule {
    Rotation(RotationSchedule),
    /// Per-hour runways observed in flight records.
    Observed(BTreeMap<NaiveDateTime, ActiveRunways>),
}

impl RunwaySchedule {
    pub fn active(&self, hour: &NaiveDateTime) -> Option<ActiveRunways> {
        match self {
            RunwaySchedule::Rotation(r) => Some(r.active(hour)),
            RunwaySchedule::Observed(m) => m.get(hour).cloned(),
        }
    }
}

/// Majority runway per hour and operation. Ties go to the runway used first
/// within the hour; hours without operations of a type carry the previous
/// hour's runway forward, and leading empty hours take the first observed one.
pub fn infer_schedule(flights: &[FlightEvent], window: &StudyWindow) -> Result<RunwaySchedule, FusionError> {
    let hours = window.hours();
    let mut per_op: Vec<Vec<Option<Runway>>> = Vec::new();
    for op in Operation::ALL {
        // hour index -> runway -> (count, first use)
        let mut tallies: Vec<BTreeMap<&Runway, (usize, NaiveDateTime)>> = vec![BTreeMap::new(); hours.len()];
        for f in flights.iter().filter(|f| f.operation == op) {
            if let Some(i) = window.hour_index(&floor_hour(&f.timestamp)) {
                let e = tallies[i].entry(&f.runway).or_insert((0, f.timestamp));
                e.0 += 1;
                e.1 = e.1.min(f.timestamp);
            }
        }
        let mut chosen: Vec<Option<Runway>> = tallies
            .iter()
            .map(|t| {
                t.iter()
                    .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then_with(|| b.1 .1.cmp(&a.1 .1)))
                    .map(|(r, _)| (*r).clone())
            })
            .collect();
        let first = chosen
            .iter()
            .flatten()
            .next()
            .cloned()
            .ok_or(FusionError::NoRunwayActivity(op))?;
        let mut last = first;
        for slot in chosen.iter_mut() {
            match slot {
                Some(r) => last = r.clone(),
                None => *slot = Some(last.clone()),
            }
        }
        per_op.push(chosen);
    }
    Ok(RunwaySchedule::Observed(
        hours
            .into_iter()
            .enumerate()
            .map(|(i, h)| {
                (
                    h,
                    ActiveRunways {
                        departure: per_op[0][i].clone().expect("filled"),
                        arrival: per_op[1][i].clone().expect("filled"),
                    },
                )
            })
            .collect(),
    ))
}
