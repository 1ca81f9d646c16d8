//! Calendar bucketing of epoch timestamps at a fixed UTC offset.

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

const DAY_S: i64 = 86_400;

/// Converts epoch seconds to local calendar days and months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DayClock {
    pub utc_offset_s: i64,
}

impl DayClock {
    pub const UTC: DayClock = DayClock { utc_offset_s: 0 };
    pub const JST: DayClock = DayClock { utc_offset_s: 9 * 3600 };

    /// Days since 1970-01-01 in local time.
    pub fn day(&self, epoch_s: i64) -> i64 {
        (epoch_s + self.utc_offset_s).div_euclid(DAY_S)
    }

    /// Calendar month 1–12 in local time.
    pub fn month(&self, epoch_s: i64) -> u8 {
        let local = epoch_s + self.utc_offset_s;
        DateTime::from_timestamp(local, 0).map(|d| d.month() as u8).expect("timestamp within chrono range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jst_shifts_day_and_month() {
        // 2024-06-30T20:00:00Z is 2024-07-01 05:00 JST
        let t = 1_719_777_600;
        assert_eq!(DayClock::UTC.month(t), 6);
        assert_eq!(DayClock::JST.month(t), 7);
        assert_eq!(DayClock::JST.day(t), DayClock::UTC.day(t) + 1);
        assert_eq!(DayClock::UTC.day(-1), -1);
    }
}
