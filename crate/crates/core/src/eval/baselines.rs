use std::collections::HashMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::data::SplitYears;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Fire if any prior year burned at the same location and period.
    AnyFire,
    /// Fire if strictly more prior years burned than did not.
    Majority,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::AnyFire => "anyfire",
            Self::Majority => "majority",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anyfire" => Ok(Self::AnyFire),
            "majority" => Ok(Self::Majority),
            other => Err(Error::InvalidArgument(format!(
                "unknown baseline '{other}'; expected anyfire or majority"
            ))),
        }
    }
}

pub fn naive_anyfire(history: &[bool]) -> bool {
    history.iter().any(|&f| f)
}

pub fn naive_majority(history: &[bool]) -> bool {
    let fires = history.iter().filter(|&&f| f).count();
    fires > history.len() - fires
}

/// Zero-based 8-day period of a date within its year.
pub fn period_of_year(date: NaiveDate) -> usize {
    date.ordinal0() as usize / 8
}

/// Fire history lookup keyed by (year, period of year).
pub struct FireHistory<'a> {
    times: HashMap<(i32, usize), usize>,
    targets: &'a [f32],
    cells: usize,
    years: SplitYears,
}

impl<'a> FireHistory<'a> {
    /// `targets` holds binary `[T, cells]` grids aligned with `times`.
    pub fn new(times: &[NaiveDate], targets: &'a [f32], cells: usize, years: SplitYears) -> Result<Self> {
        if targets.len() != times.len() * cells {
            return Err(Error::Shape(format!(
                "targets hold {} values for {} times x {cells} cells",
                targets.len(),
                times.len()
            )));
        }
        let times = times
            .iter()
            .enumerate()
            .map(|(i, d)| ((d.year(), period_of_year(*d)), i))
            .collect();
        Ok(Self {
            times,
            targets,
            cells,
            years,
        })
    }

    /// Time indices of the same period in every year from the start of the
    /// training range up to, excluding, `date`'s year and capped at the end
    /// of the validation range.
    pub fn prior_times(&self, date: NaiveDate) -> Vec<usize> {
        let k = period_of_year(date);
        let last = (date.year() - 1).min(self.years.val.1);
        (self.years.train.0..=last)
            .filter_map(|y| self.times.get(&(y, k)).copied())
            .collect()
    }

    /// Baseline prediction grid (0/1 per cell) for a target date.
    pub fn predict(&self, kind: BaselineKind, date: NaiveDate) -> Result<Vec<f32>> {
        let prior = self.prior_times(date);
        if prior.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no prior years available for {date}"
            )));
        }
        let mut history = vec![false; prior.len()];
        Ok((0..self.cells)
            .map(|c| {
                for (h, &t) in history.iter_mut().zip(&prior) {
                    *h = self.targets[t * self.cells + c] > 0.5;
                }
                let fire = match kind {
                    BaselineKind::AnyFire => naive_anyfire(&history),
                    BaselineKind::Majority => naive_majority(&history),
                };
                fire as u8 as f32
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules() {
        assert!(naive_anyfire(&[false, true, false, false, false]));
        assert!(!naive_anyfire(&[false, false]));
        assert!(naive_majority(&[true, true, false]));
        assert!(!naive_majority(&[true, true, false, false]));
        assert!(!naive_majority(&[false, false, false]));
    }

    #[test]
    fn period_indexing() {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).unwrap();
        assert_eq!(period_of_year(d(2002, 1, 1)), 0);
        assert_eq!(period_of_year(d(2002, 1, 9)), 1);
        assert_eq!(period_of_year(d(2004, 12, 26)), 45);
    }

    #[test]
    fn history_excludes_test_years() {
        let years = SplitYears {
            train: (2000, 2001),
            val: (2002, 2002),
            test: (2003, 2003),
        };
        let times: Vec<NaiveDate> = (2000..=2003)
            .map(|y| NaiveDate::from_ymd_opt(y, 1, 1).unwrap())
            .collect();
        let targets = vec![1.0, 0.0, 1.0, 1.0];
        let h = FireHistory::new(&times, &targets, 1, years).unwrap();
        assert_eq!(h.prior_times(times[3]), vec![0, 1, 2]);
        assert_eq!(h.prior_times(times[1]), vec![0]);
        assert_eq!(h.predict(BaselineKind::Majority, times[3]).unwrap(), vec![1.0]);
        assert!(h.predict(BaselineKind::AnyFire, times[0]).is_err());
    }
}
