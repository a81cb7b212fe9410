//! Demand series and explanatory indicators derived from trips.

mod census;
mod poi;
mod series;
mod table;

use chrono::{Datelike, NaiveDate, TimeZone, Utc, Weekday};
pub use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use census::{
    census_overlay, read_census_geojson, skewness, CensusInput, CensusTable, CensusUnit,
    MIN_OVERLAP, SKEW_THRESHOLD,
};
pub use poi::{read_poi_csv, venue_entropy, PoiProfile, POI_CATEGORIES};
pub use series::{bin_events, busy_cells, EventKind, EventSeries, EventSeriesSet};
pub use table::{build_feature_table, write_feature_csv, FeatureRow, FeatureTable, FEATURE_NAMES};

/// Consecutive local calendar days covered by an analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Calendar {
    pub tz: Tz,
    pub days: Vec<NaiveDate>,
}

impl Calendar {
    pub fn new(tz: Tz, first: NaiveDate, n_days: usize) -> Self {
        let days = first.iter_days().take(n_days).collect();
        Calendar { tz, days }
    }

    /// Calendar spanning the local dates of the given UTC instants.
    pub fn spanning<'a>(
        tz: Tz,
        instants: impl IntoIterator<Item = &'a chrono::DateTime<Utc>>,
    ) -> Result<Self> {
        let mut lo: Option<NaiveDate> = None;
        let mut hi: Option<NaiveDate> = None;
        for t in instants {
            let d = t.with_timezone(&tz).date_naive();
            lo = Some(lo.map_or(d, |x| x.min(d)));
            hi = Some(hi.map_or(d, |x| x.max(d)));
        }
        match (lo, hi) {
            (Some(lo), Some(hi)) => Ok(Calendar::new(tz, lo, (hi - lo).num_days() as usize + 1)),
            _ => Err(Error::InsufficientData(
                "no timestamps to build a calendar".into(),
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.days.first()?;
        let i = (date - first).num_days();
        (i >= 0 && (i as usize) < self.days.len()).then_some(i as usize)
    }

    pub fn weekday(&self, day: usize) -> Weekday {
        self.days[day].weekday()
    }

    pub fn is_weekday(&self, day: usize) -> bool {
        !matches!(self.weekday(day), Weekday::Sat | Weekday::Sun)
    }

    /// `(day index, minutes since local midnight)` of a UTC instant.
    pub fn locate(&self, t: &chrono::DateTime<Utc>) -> Option<(usize, u32)> {
        use chrono::Timelike;
        let local = t.with_timezone(&self.tz);
        let day = self.index_of(local.date_naive())?;
        Some((day, local.hour() * 60 + local.minute()))
    }

    /// UTC instant of a local wall-clock time; ambiguous times resolve to
    /// the earlier instant, skipped ones shift forward an hour.
    pub fn to_utc(&self, day: usize, minute_of_day: u32) -> chrono::DateTime<Utc> {
        let naive = self.days[day]
            .and_hms_opt(minute_of_day / 60, minute_of_day % 60, 0)
            .expect("minute of day within 0..1440");
        match self.tz.from_local_datetime(&naive) {
            chrono::LocalResult::Single(t) => t.with_timezone(&Utc),
            chrono::LocalResult::Ambiguous(a, _) => a.with_timezone(&Utc),
            chrono::LocalResult::None => self
                .tz
                .from_local_datetime(&(naive + chrono::Duration::hours(1)))
                .earliest()
                .expect("valid after DST gap")
                .with_timezone(&Utc),
        }
    }
}

/// Checks that a bin length divides the day.
pub fn bins_per_day(bin_minutes: u32) -> Result<usize> {
    if bin_minutes == 0 || 1440 % bin_minutes != 0 {
        return Err(Error::invalid(format!(
            "bin length {bin_minutes} min does not divide 1440"
        )));
    }
    Ok((1440 / bin_minutes) as usize)
}

/// Serializable time-zone name wrapper used in configs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TzName(pub String);

impl TzName {
    pub fn parse(&self) -> Result<Tz> {
        self.0
            .parse()
            .map_err(|_| Error::invalid(format!("unknown time zone {:?}", self.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_binning_crosses_midnight_in_utc() {
        let cal = Calendar::new(
            chrono_tz::Europe::Rome,
            NaiveDate::from_ymd_opt(2017, 1, 2).unwrap(),
            3,
        );
        // 23:30 UTC on Jan 2 is 00:30 local on Jan 3.
        let t = Utc.with_ymd_and_hms(2017, 1, 2, 23, 30, 0).unwrap();
        assert_eq!(cal.locate(&t), Some((1, 30)));
        assert_eq!(cal.to_utc(1, 30), t);
        assert!(cal.is_weekday(0));
    }

    #[test]
    fn bin_length_must_divide_day() {
        assert_eq!(bins_per_day(60).unwrap(), 24);
        assert_eq!(bins_per_day(10).unwrap(), 144);
        assert!(bins_per_day(7).is_err());
        assert!(bins_per_day(0).is_err());
    }
}
