//! Stage 3: quarter-hour activity chains.
//!
//! A chain is a flat list of episodes `(day, code, t_start, t_end, ward)` on a
//! 96-slot daily grid. Text produced by a generator is parsed leniently,
//! validated against the agent's itinerary and either accepted (after gap
//! filling) or regenerated.

pub mod backend;
pub mod fallback;
pub mod generate;
pub mod prompt;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::geo::{WardId, Wards};
use crate::routing::WardItinerary;

pub use backend::{Backend, BackendError, GenRequest, GenResponse, RemoteClient, RemoteConfig, TokenUsage};
pub use fallback::fallback_generate;
pub use generate::{AgentTask, ChainGenerator, ChainSource, GenerateError, GenerateOptions, GeneratedChain};
pub use prompt::{build_prompt, HouseholdContext};

/// Quarter-hour slots in a day.
pub const SLOTS_PER_DAY: u16 = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ActivityType {
    Home = 1,
    Work = 2,
    Education = 3,
    Care = 4,
    Shopping = 5,
    Services = 6,
    Dining = 7,
    PersonalErrands = 8,
    Recreation = 9,
    Exercise = 10,
    SocialVisits = 11,
    Healthcare = 12,
    Religious = 13,
    Miscellaneous = 14,
    Transport = 15,
}

impl ActivityType {
    pub const ALL: [ActivityType; 15] = [
        Self::Home,
        Self::Work,
        Self::Education,
        Self::Care,
        Self::Shopping,
        Self::Services,
        Self::Dining,
        Self::PersonalErrands,
        Self::Recreation,
        Self::Exercise,
        Self::SocialVisits,
        Self::Healthcare,
        Self::Religious,
        Self::Miscellaneous,
        Self::Transport,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Home => "Home (Stay)",
            Self::Work => "Work",
            Self::Education => "Education",
            Self::Care => "Care",
            Self::Shopping => "Shopping",
            Self::Services => "Services",
            Self::Dining => "Dining",
            Self::PersonalErrands => "Personal Errands",
            Self::Recreation => "Recreation/Sightseeing",
            Self::Exercise => "Exercise/Sports",
            Self::SocialVisits => "Social Visits",
            Self::Healthcare => "Healthcare",
            Self::Religious => "Religious",
            Self::Miscellaneous => "Miscellaneous",
            Self::Transport => "Transport",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::Home => "staying at the accommodation (hotel, relatives' home), including sleep and rest",
            Self::Work => "business meetings, conference sessions, trade fair booths and other work",
            Self::Education => "classes, training, study programmes and school visits",
            Self::Care => "looking after a child or another household member",
            Self::Shopping => "retail shopping, markets and souvenir buying",
            Self::Services => "banking, post, currency exchange, hair salon and similar services",
            Self::Dining => "eating out at restaurants, cafes or food stalls",
            Self::PersonalErrands => "short personal tasks such as picking up tickets or luggage",
            Self::Recreation => "sightseeing, museums, temples, parks, entertainment",
            Self::Exercise => "walking tours, running, sports and fitness",
            Self::SocialVisits => "meeting friends or relatives",
            Self::Healthcare => "clinic, pharmacy or hospital visits",
            Self::Religious => "worship or religious ceremonies",
            Self::Miscellaneous => "anything not covered by another code",
            Self::Transport => "travelling between wards by train, bus, taxi or on foot",
        }
    }
}

impl TryFrom<u8> for ActivityType {
    type Error = String;
    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Self::from_code(code).ok_or_else(|| format!("activity code {code} outside 1-15"))
    }
}

impl From<ActivityType> for u8 {
    fn from(a: ActivityType) -> u8 {
        a.code()
    }
}

/// One activity. `code` is kept raw so out-of-vocabulary output stays visible
/// to validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActivityEpisode {
    pub day: u32,
    pub t_start: u16,
    pub t_end: u16,
    pub code: u8,
    pub ward: WardId,
}

impl ActivityEpisode {
    pub fn new(day: u32, activity: ActivityType, t_start: u16, t_end: u16, ward: WardId) -> Self {
        Self { day, t_start, t_end, code: activity.code(), ward }
    }

    pub fn activity(&self) -> Option<ActivityType> {
        ActivityType::from_code(self.code)
    }

    pub fn slots(&self) -> u16 {
        self.t_end.saturating_sub(self.t_start)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityChain {
    pub agent_id: u64,
    /// Sorted by day, then start slot.
    pub episodes: Vec<ActivityEpisode>,
}

impl ActivityChain {
    pub fn new(agent_id: u64, mut episodes: Vec<ActivityEpisode>) -> Self {
        episodes.sort();
        Self { agent_id, episodes }
    }

    pub fn day(&self, d: u32) -> impl Iterator<Item = &ActivityEpisode> {
        self.episodes.iter().filter(move |e| e.day == d)
    }

    pub fn days_present(&self) -> BTreeSet<u32> {
        self.episodes.iter().map(|e| e.day).collect()
    }

    pub fn day_count(&self) -> usize {
        self.days_present().len()
    }

    /// Per-day ward sequence with consecutive repeats collapsed.
    pub fn ward_order(&self) -> Vec<Vec<WardId>> {
        self.days_present()
            .into_iter()
            .map(|d| {
                let mut seq: Vec<WardId> = Vec::new();
                for e in self.day(d) {
                    if seq.last() != Some(&e.ward) {
                        seq.push(e.ward);
                    }
                }
                seq
            })
            .collect()
    }

    pub fn with_agent(&self, agent_id: u64) -> Self {
        Self { agent_id, episodes: self.episodes.clone() }
    }

    pub fn code_multiset(&self) -> std::collections::BTreeMap<u8, usize> {
        let mut m = std::collections::BTreeMap::new();
        for e in &self.episodes {
            *m.entry(e.code).or_insert(0) += 1;
        }
        m
    }
}

/// One tuple per line, the format the prompt asks for.
pub fn render_chain(chain: &ActivityChain, wards: &Wards) -> String {
    let mut out = String::new();
    for e in &chain.episodes {
        out.push_str(&format!("({}, {}, {}, {}, {})\n", e.day, e.code, e.t_start, e.t_end, wards.code(e.ward)));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// A non-blank line that is not a tuple.
    Unparsed {
        line: usize,
        text: String,
    },
    /// A tuple whose numbers are out of range or whose interval is empty.
    BadInterval {
        line: usize,
    },
    UnknownCode {
        line: usize,
        code: i64,
    },
    UnknownWard {
        line: usize,
        ward: String,
    },
}

impl Violation {
    /// Violations that force regeneration.
    pub fn is_hard(&self) -> bool {
        !matches!(self, Violation::Unparsed { .. })
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Unparsed { line, text } => write!(f, "line {line}: not a tuple: {text:?}"),
            Violation::BadInterval { line } => write!(f, "line {line}: invalid day or slot interval"),
            Violation::UnknownCode { line, code } => write!(f, "line {line}: activity code {code} outside 1-15"),
            Violation::UnknownWard { line, ward } => write!(f, "line {line}: unknown ward {ward:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedChain {
    pub chain: ActivityChain,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no parseable activity tuples in generator output")]
pub struct ParseFailure {
    pub violations: Vec<Violation>,
}

fn tuple_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^[-*\s]*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*'?\x22?([^,()'\x22\s]+)'?\x22?\s*\)\s*,?\s*$")
            .expect("valid regex")
    })
}

/// Extracts `(day, code, t_start, t_end, ward)` tuples line by line.
///
/// Blank lines and code fences are ignored; anything else that is not a
/// well-formed tuple is recorded as a violation and dropped.
pub fn parse_chain(agent_id: u64, text: &str, wards: &Wards) -> Result<ParsedChain, ParseFailure> {
    let mut episodes = Vec::new();
    let mut violations = Vec::new();
    let mut tuples = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with("```") {
            continue;
        }
        let Some(c) = tuple_re().captures(s) else {
            violations.push(Violation::Unparsed { line, text: s.to_string() });
            continue;
        };
        tuples += 1;
        let num = |k: usize| c[k].parse::<i64>().ok();
        let (Some(day), Some(code), Some(t0), Some(t1)) = (num(1), num(2), num(3), num(4)) else {
            violations.push(Violation::BadInterval { line });
            continue;
        };
        let Some(ward) = wards.get(&c[5]) else {
            violations.push(Violation::UnknownWard { line, ward: c[5].to_string() });
            continue;
        };
        let slots = 0..=i64::from(SLOTS_PER_DAY);
        if day < 0 || day > u32::MAX as i64 || !slots.contains(&t0) || !slots.contains(&t1) || t0 >= t1 {
            violations.push(Violation::BadInterval { line });
            continue;
        }
        if !(1..=15).contains(&code) {
            violations.push(Violation::UnknownCode { line, code });
            if !(0..=i64::from(u8::MAX)).contains(&code) {
                continue;
            }
        }
        episodes.push(ActivityEpisode { day: day as u32, t_start: t0 as u16, t_end: t1 as u16, code: code as u8, ward });
    }
    if tuples == 0 {
        return Err(ParseFailure { violations });
    }
    Ok(ParsedChain { chain: ActivityChain::new(agent_id, episodes), violations })
}

/// Structural checks of one chain against its itinerary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Days present form `0..=k`, every interval is valid and nothing overlaps.
    pub day_coverage: bool,
    /// Fraction of episodes whose ward is on that day's itinerary list.
    pub ward_adherence: f64,
    /// Day count equals nights + 1.
    pub night_alignment: bool,
    /// Any activity code outside 1–15 or ward outside the itinerary.
    pub hallucination: bool,
    pub overlaps: usize,
    pub bad_intervals: usize,
    /// Uncovered slots summed over the days present.
    pub gap_slots: usize,
}

impl ChainDiagnostics {
    pub fn acceptable(&self) -> bool {
        self.day_coverage && self.night_alignment && !self.hallucination && self.ward_adherence >= 1.0
    }

    pub fn fully_covered(&self) -> bool {
        self.day_coverage && self.gap_slots == 0
    }
}

pub fn validate_chain(chain: &ActivityChain, itinerary: &WardItinerary, nights: u32) -> ChainDiagnostics {
    let allowed = itinerary.ward_set();
    let days = chain.days_present();
    let contiguous = !days.is_empty() && days.iter().copied().eq(0..days.len() as u32);

    let mut bad_intervals = 0;
    let mut overlaps = 0;
    let mut gap_slots = 0;
    for d in &days {
        let mut covered = vec![0u8; SLOTS_PER_DAY as usize];
        for e in chain.day(*d) {
            if e.t_start >= e.t_end || e.t_end > SLOTS_PER_DAY {
                bad_intervals += 1;
                continue;
            }
            for s in e.t_start..e.t_end {
                covered[s as usize] = covered[s as usize].saturating_add(1);
            }
        }
        overlaps += covered.iter().filter(|c| **c > 1).count();
        gap_slots += covered.iter().filter(|c| **c == 0).count();
    }

    let adherent = chain.episodes.iter().filter(|e| itinerary.days.get(e.day as usize).is_some_and(|ws| ws.contains(&e.ward))).count();
    let ward_adherence = if chain.episodes.is_empty() { 0.0 } else { adherent as f64 / chain.episodes.len() as f64 };
    let hallucination = chain.episodes.iter().any(|e| e.activity().is_none() || !allowed.contains(&e.ward));

    ChainDiagnostics {
        day_coverage: contiguous && bad_intervals == 0 && overlaps == 0,
        ward_adherence,
        night_alignment: days.len() == nights as usize + 1,
        hallucination,
        overlaps,
        bad_intervals,
        gap_slots,
    }
}

/// Fills uncovered slots with code-1 rest episodes. A gap takes the ward of
/// the episode before it, or of the one after it at the start of a day, or
/// the day's first itinerary ward when the day is empty.
pub fn fill_gaps(chain: &ActivityChain, itinerary: &WardItinerary) -> ActivityChain {
    let mut out = chain.episodes.clone();
    let n_days = chain.days_present().last().map_or(0, |d| d + 1).max(itinerary.days.len() as u32);
    for d in 0..n_days {
        let day: Vec<ActivityEpisode> = chain.day(d).copied().collect();
        let fallback_ward = itinerary.days.get(d as usize).and_then(|w| w.first()).copied();
        let mut cursor = 0u16;
        let mut last_ward = None;
        for (k, e) in day.iter().enumerate() {
            if e.t_start > cursor {
                let ward = last_ward.or(Some(day[k].ward)).expect("episode ward");
                out.push(ActivityEpisode::new(d, ActivityType::Home, cursor, e.t_start, ward));
            }
            cursor = cursor.max(e.t_end);
            last_ward = Some(e.ward);
        }
        if cursor < SLOTS_PER_DAY {
            if let Some(ward) = last_ward.or(fallback_ward) {
                out.push(ActivityEpisode::new(d, ActivityType::Home, cursor, SLOTS_PER_DAY, ward));
            }
        }
    }
    ActivityChain::new(chain.agent_id, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wards() -> Wards {
        Wards::new(["A", "B", "C"]).unwrap()
    }

    fn itin(days: &[&[usize]]) -> WardItinerary {
        WardItinerary { agent_id: 1, month: 1, days: days.iter().map(|d| d.iter().map(|w| WardId(*w)).collect()).collect() }
    }

    #[test]
    fn taxonomy_is_closed() {
        assert_eq!(ActivityType::ALL.len(), 15);
        for (i, a) in ActivityType::ALL.iter().enumerate() {
            assert_eq!(a.code() as usize, i + 1);
            assert_eq!(ActivityType::from_code(a.code()), Some(*a));
        }
        assert_eq!(ActivityType::from_code(0), None);
        assert_eq!(ActivityType::from_code(16), None);
        assert_eq!(ActivityType::Recreation.name(), "Recreation/Sightseeing");
    }

    #[test]
    fn parse_flags_unknown_code() {
        let p = parse_chain(1, "(0, 16, 10, 20, A)\n(0, 1, 0, 10, A)", &wards()).unwrap();
        assert_eq!(p.violations, vec![Violation::UnknownCode { line: 1, code: 16 }]);
        let it = itin(&[&[0]]);
        assert!(validate_chain(&p.chain, &it, 0).hallucination);
    }

    #[test]
    fn parse_records_unparseable_lines() {
        let text = "Here is the plan:\n```\n(0, 1, 0, 96, B)\n(0, 1, 50, 40, B)\n(0, 1, 0, 96, Z)\n```";
        let p = parse_chain(1, text, &wards()).unwrap();
        assert_eq!(p.chain.episodes.len(), 1);
        assert_eq!(p.violations.len(), 3);
        assert!(!p.violations[0].is_hard());
        assert_eq!(p.violations[1], Violation::BadInterval { line: 4 });
        assert!(matches!(p.violations[2], Violation::UnknownWard { line: 5, .. }));
        assert!(parse_chain(1, "no tuples here", &wards()).is_err());
    }

    #[test]
    fn parse_is_order_independent() {
        let lines = ["(0, 1, 0, 30, A)", "(0, 9, 30, 80, B)", "(0, 1, 80, 96, B)", "(1, 1, 0, 96, B)"];
        let a = parse_chain(1, &lines.join("\n"), &wards()).unwrap();
        let rev: Vec<&str> = lines.iter().rev().copied().collect();
        let b = parse_chain(1, &rev.join("\n"), &wards()).unwrap();
        assert_eq!(a.chain, b.chain);
        assert_eq!(render_chain(&a.chain, &wards()), lines.join("\n") + "\n");
    }

    #[test]
    fn night_count_violation() {
        let w = wards();
        let c = parse_chain(1, "(0, 1, 0, 96, A)\n(1, 1, 0, 96, A)", &w).unwrap().chain;
        let d = validate_chain(&c, &itin(&[&[0], &[0], &[0]]), 2);
        assert!(!d.night_alignment);
        assert!(d.day_coverage);
    }

    #[test]
    fn adherence_drops_for_off_day_ward() {
        let c = parse_chain(1, "(0, 1, 0, 50, A)\n(0, 9, 50, 96, B)\n(1, 1, 0, 96, B)", &wards()).unwrap().chain;
        let d = validate_chain(&c, &itin(&[&[0], &[1]]), 1);
        assert!((d.ward_adherence - 2.0 / 3.0).abs() < 1e-12);
        assert!(!d.hallucination);
        assert!(!d.acceptable());
    }

    #[test]
    fn single_gap_is_filled_with_rest() {
        let c = parse_chain(1, "(0, 1, 0, 40, A)\n(0, 9, 48, 96, A)", &wards()).unwrap().chain;
        let f = fill_gaps(&c, &itin(&[&[0]]));
        assert_eq!(f.episodes.len(), 3);
        assert_eq!(f.episodes[1], ActivityEpisode::new(0, ActivityType::Home, 40, 48, WardId(0)));
        assert!(validate_chain(&f, &itin(&[&[0]]), 0).fully_covered());
    }

    #[test]
    fn overlap_breaks_coverage() {
        let c = parse_chain(1, "(0, 1, 0, 50, A)\n(0, 9, 40, 96, A)", &wards()).unwrap().chain;
        let d = validate_chain(&c, &itin(&[&[0]]), 0);
        assert_eq!(d.overlaps, 10);
        assert!(!d.day_coverage);
    }
}
