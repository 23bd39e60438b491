use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of seasons per year: one per calendar month.
pub const MONTHLY_SEASONS: usize = 12;

// the month of the block's 4th day decides its season
fn season_for(start_date: NaiveDate, week: usize) -> usize {
    (start_date + Duration::days(7 * week as i64 + 3)).month0() as usize
}

/// Consecutive 7-day weeks starting at `start_date`. A trailing partial
/// block is kept as its own week. Weeks and seasons are 0-based in memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekCalendar {
    start_date: NaiveDate,
    n_days: usize,
    seasons: Vec<usize>,
}

impl WeekCalendar {
    /// Covers `n_days` days from `start_date`.
    pub fn new(start_date: NaiveDate, n_days: usize) -> Result<Self> {
        if n_days == 0 {
            return Err(Error::Domain("calendar must span at least one day".into()));
        }
        let n_weeks = n_days.div_ceil(7);
        let seasons = (0..n_weeks).map(|w| season_for(start_date, w)).collect();
        Ok(Self {
            start_date,
            n_days,
            seasons,
        })
    }

    /// `n_weeks` full weeks from `start_date`.
    pub fn weeks(start_date: NaiveDate, n_weeks: usize) -> Result<Self> {
        Self::new(start_date, 7 * n_weeks)
    }

    /// Inclusive first and last dates.
    pub fn between(first: NaiveDate, last: NaiveDate) -> Result<Self> {
        let days = (last - first).num_days();
        if days < 0 {
            return Err(Error::Domain(format!("calendar end {last} precedes start {first}")));
        }
        Self::new(first, days as usize + 1)
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_weeks(&self) -> usize {
        self.seasons.len()
    }

    pub fn n_seasons(&self) -> usize {
        MONTHLY_SEASONS
    }

    pub fn season_of(&self, week: usize) -> usize {
        self.seasons[week]
    }

    /// Season of any week index, including weeks past the end of the window.
    pub fn season_at(&self, week: usize) -> usize {
        self.seasons.get(week).copied().unwrap_or_else(|| season_for(self.start_date, week))
    }

    pub fn seasons(&self) -> &[usize] {
        &self.seasons
    }

    /// Day offset of `date` within the window, if inside it.
    pub fn day_of(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start_date).num_days();
        (d >= 0 && (d as usize) < self.n_days).then_some(d as usize)
    }

    pub fn week_of(&self, date: NaiveDate) -> Option<usize> {
        self.day_of(date).map(|d| d / 7)
    }

    pub fn week_len(&self, week: usize) -> usize {
        (self.n_days - 7 * week).min(7)
    }

    /// The first `n_weeks` weeks of this calendar.
    pub fn truncate(&self, n_weeks: usize) -> Result<Self> {
        if n_weeks == 0 || n_weeks > self.n_weeks() {
            return Err(Error::Domain(format!(
                "cannot truncate {} weeks to {n_weeks}",
                self.n_weeks()
            )));
        }
        let n_days = (7 * n_weeks).min(self.n_days);
        Ok(Self {
            start_date: self.start_date,
            n_days,
            seasons: self.seasons[..n_weeks].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn ten_years_of_days_give_522_weeks() {
        let cal = WeekCalendar::between(date(2006, 1, 1), date(2015, 12, 31)).unwrap();
        assert_eq!(cal.n_days(), 3652);
        assert_eq!(cal.n_weeks(), 522);
        assert_eq!(cal.week_len(520), 7);
        assert_eq!(cal.week_len(521), 5);
    }

    #[test]
    fn season_is_month_of_fourth_day() {
        // week 4 runs Jan 29 .. Feb 4; its 4th day is Feb 1
        let cal = WeekCalendar::weeks(date(2010, 1, 1), 52).unwrap();
        assert_eq!(cal.season_of(0), 0);
        assert_eq!(cal.season_of(4), 1);
        assert_eq!(cal.season_of(51), 11);
        let mut seen = cal.seasons().to_vec();
        seen.dedup();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn season_at_extends_past_the_window() {
        let cal = WeekCalendar::weeks(date(2010, 1, 1), 4).unwrap();
        assert_eq!(cal.season_at(3), cal.season_of(3));
        // week 52 starts 2010-12-31, its 4th day is 2011-01-03
        assert_eq!(cal.season_at(52), 0);
        assert_eq!(cal.season_at(50), 11);
    }

    #[test]
    fn week_of_respects_window() {
        let cal = WeekCalendar::weeks(date(2010, 1, 1), 2).unwrap();
        assert_eq!(cal.week_of(date(2010, 1, 1)), Some(0));
        assert_eq!(cal.week_of(date(2010, 1, 8)), Some(1));
        assert_eq!(cal.week_of(date(2010, 1, 15)), None);
        assert_eq!(cal.week_of(date(2009, 12, 31)), None);
    }
}
