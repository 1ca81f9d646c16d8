//! Stage 0: staypoint construction, POI matching, tourist classification and
//! month-conditioned ward priors.
//!
//! Priors are computed from unique-agent counts only; nothing downstream of
//! [`build_monthly_priors`] sees an individual trace.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::DayClock;
use crate::geo::{haversine, GeoPoint, WardId};
use crate::population::SurveyMarginals;
use crate::prob::discrete_quantile;

/// Global dwell floor applied on top of every POI's own threshold.
pub const DEFAULT_DWELL_FLOOR_S: i64 = 900;
/// Minimum number of distinct staypoint locations for an agent to be kept.
pub const DEFAULT_MIN_DISTINCT_LOCATIONS: usize = 8;
/// Weight of the survey-derived value when blending tourist thresholds.
pub const DEFAULT_THRESHOLD_BLEND: f64 = 0.60;

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("pings for agent `{agent}` are not time-ordered at position {index}")]
    UnsortedPings { agent: String, index: usize },
    #[error("staypoint for agent `{agent}` ends before it starts ({start} > {end})")]
    NegativeDwell { agent: String, start: i64, end: i64 },
    #[error("POI `{id}`: {reason}")]
    InvalidPoi { id: String, reason: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ping {
    pub agent: String,
    pub loc: GeoPoint<f64>,
    pub t: i64,
}

/// A merged dwell record of one anonymous agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Staypoint {
    pub agent: String,
    pub loc: GeoPoint<f64>,
    pub start: i64,
    pub end: i64,
}

impl Staypoint {
    /// A single-ping staypoint has `start == end` (zero dwell).
    pub fn new(agent: impl Into<String>, loc: GeoPoint<f64>, start: i64, end: i64) -> Result<Self, CohortError> {
        let agent = agent.into();
        if end < start {
            return Err(CohortError::NegativeDwell { agent, start, end });
        }
        Ok(Self { agent, loc, start, end })
    }

    pub fn dwell_s(&self) -> i64 {
        self.end - self.start
    }
}

/// Collapses consecutive pings of the same agent into staypoints.
///
/// Two consecutive pings are adjacent when they are at most `space_eps_m`
/// apart and at most `time_eps_s` apart in time. Each maximal adjacent run
/// becomes one staypoint at the mean coordinate, spanning first to last ping.
/// Pings of different agents may be interleaved but must be time-ordered per agent.
pub fn merge_pings(pings: &[Ping], space_eps_m: f64, time_eps_s: i64) -> Result<Vec<Staypoint>, CohortError> {
    let mut by_agent: Vec<(&str, Vec<&Ping>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for p in pings {
        let i = *slot.entry(p.agent.as_str()).or_insert_with(|| {
            by_agent.push((p.agent.as_str(), Vec::new()));
            by_agent.len() - 1
        });
        by_agent[i].1.push(p);
    }

    let mut out = Vec::new();
    for (agent, seq) in by_agent {
        if let Some(index) = seq.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(CohortError::UnsortedPings { agent: agent.to_string(), index: index + 1 });
        }
        let mut run: Vec<&Ping> = Vec::new();
        for p in seq {
            if let Some(prev) = run.last() {
                let adjacent = p.t - prev.t <= time_eps_s && haversine(prev.loc, p.loc) <= space_eps_m;
                if !adjacent {
                    out.push(close_run(&run));
                    run.clear();
                }
            }
            run.push(p);
        }
        if !run.is_empty() {
            out.push(close_run(&run));
        }
    }
    out.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.agent.cmp(&b.agent)));
    Ok(out)
}

fn close_run(run: &[&Ping]) -> Staypoint {
    let n = run.len() as f64;
    let lat = run.iter().map(|p| p.loc.lat()).sum::<f64>() / n;
    let lon = run.iter().map(|p| p.loc.lon()).sum::<f64>() / n;
    Staypoint {
        agent: run[0].agent.clone(),
        loc: GeoPoint::new(lat, lon).expect("mean of valid coordinates is valid"),
        start: run[0].t,
        end: run[run.len() - 1].t,
    }
}

/// Location key at 5 decimal places (~1 m).
pub fn location_key(p: GeoPoint<f64>) -> (i64, i64) {
    ((p.lat() * 1e5).round() as i64, (p.lon() * 1e5).round() as i64)
}

/// Drops agents with fewer than `min_distinct` distinct staypoint locations.
pub fn filter_sparse_agents(staypoints: Vec<Staypoint>, min_distinct: usize) -> Vec<Staypoint> {
    let mut distinct: HashMap<&str, HashSet<(i64, i64)>> = HashMap::new();
    for sp in &staypoints {
        distinct.entry(sp.agent.as_str()).or_default().insert(location_key(sp.loc));
    }
    let keep: HashSet<String> = distinct.into_iter().filter(|(_, locs)| locs.len() >= min_distinct).map(|(a, _)| a.to_string()).collect();
    staypoints.into_iter().filter(|sp| keep.contains(&sp.agent)).collect()
}

/// Catalog row: a named attraction or business anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiEntry {
    pub id: String,
    pub name: String,
    pub category: String,
    pub loc: GeoPoint<f64>,
    pub radius_m: f64,
    pub min_dwell_s: i64,
}

impl PoiEntry {
    pub fn validate(&self) -> Result<(), CohortError> {
        if !(self.radius_m > 0.0) {
            return Err(CohortError::InvalidPoi { id: self.id.clone(), reason: "radius_m must be positive" });
        }
        if self.min_dwell_s < 0 {
            return Err(CohortError::InvalidPoi { id: self.id.clone(), reason: "min_dwell_s must be non-negative" });
        }
        Ok(())
    }
}

/// Nearest POI satisfying both the radius and the dwell clause; ties keep catalog order.
pub fn match_poi<'a>(sp: &Staypoint, catalog: &'a [PoiEntry], dwell_floor_s: i64) -> Option<&'a PoiEntry> {
    let dwell = sp.dwell_s();
    let mut best: Option<(&PoiEntry, f64)> = None;
    for poi in catalog {
        let d = haversine(sp.loc, poi.loc);
        if d <= poi.radius_m && dwell >= poi.min_dwell_s.max(dwell_floor_s) {
            match best {
                Some((_, bd)) if bd <= d => {}
                _ => best = Some((poi, d)),
            }
        }
    }
    best.map(|(p, _)| p)
}

/// Which POI categories count as sightseeing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryFilter {
    pub non_sightseeing: BTreeSet<String>,
}

impl Default for CategoryFilter {
    fn default() -> Self {
        Self { non_sightseeing: ["business_district", "conference_center", "airport"].into_iter().map(String::from).collect() }
    }
}

impl CategoryFilter {
    pub fn is_sightseeing(&self, category: &str) -> bool {
        !self.non_sightseeing.contains(category)
    }
}

/// Per-agent statistics used by the tourist rule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentEpisodeStats {
    /// Inclusive day span from first to last staypoint.
    pub episode_days: u32,
    /// Longest run of consecutive sightseeing days.
    pub max_consecutive_sightseeing: u32,
    /// Distinct matched POIs.
    pub distinct_pois: u32,
    pub sightseeing_days: u32,
    pub sightseeing_hours: f64,
    pub active_days: u32,
}

/// Stats for one agent's staypoints paired with their POI match (if any).
pub fn compute_agent_stats(matched: &[(&Staypoint, Option<&PoiEntry>)], filter: &CategoryFilter, clock: DayClock) -> AgentEpisodeStats {
    if matched.is_empty() {
        return AgentEpisodeStats::default();
    }
    let days: BTreeSet<i64> = matched.iter().map(|(sp, _)| clock.day(sp.start)).collect();
    let first = *days.first().expect("non-empty");
    let last = *days.last().expect("non-empty");

    let mut sight_days = BTreeSet::new();
    let mut pois = HashSet::new();
    let mut sight_s = 0i64;
    for (sp, poi) in matched {
        if let Some(poi) = poi {
            pois.insert(poi.id.as_str());
            if filter.is_sightseeing(&poi.category) {
                sight_days.insert(clock.day(sp.start));
                sight_s += sp.dwell_s();
            }
        }
    }

    let mut longest = 0u32;
    let mut run = 0u32;
    let mut prev: Option<i64> = None;
    for d in &sight_days {
        run = if prev == Some(d - 1) { run + 1 } else { 1 };
        longest = longest.max(run);
        prev = Some(*d);
    }

    AgentEpisodeStats {
        episode_days: (last - first + 1) as u32,
        max_consecutive_sightseeing: longest,
        distinct_pois: pois.len() as u32,
        sightseeing_days: sight_days.len() as u32,
        sightseeing_hours: sight_s as f64 / 3600.0,
        active_days: days.len() as u32,
    }
}

/// Bounds of the tourist rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TouristThresholds {
    pub e_min: u32,
    pub e_max: u32,
    pub c_min: u32,
    pub u_min: u32,
    pub s_min: u32,
    pub h_min: f64,
    pub q_max: u32,
}

impl Default for TouristThresholds {
    fn default() -> Self {
        Self { e_min: 2, e_max: 14, c_min: 2, u_min: 3, s_min: 2, h_min: 4.0, q_max: 25 }
    }
}

pub fn classify_tourist(s: &AgentEpisodeStats, th: &TouristThresholds) -> bool {
    th.e_min <= s.episode_days
        && s.episode_days <= th.e_max
        && s.max_consecutive_sightseeing >= th.c_min
        && s.distinct_pois >= th.u_min
        && s.sightseeing_days >= th.s_min
        && s.sightseeing_hours >= th.h_min
        && s.active_days <= th.q_max
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub thresholds: TouristThresholds,
    pub warnings: Vec<String>,
}

/// Blends survey-derived candidates into the default thresholds.
///
/// Candidates: `e_min` = p10 and `e_max` = p90 of (nights + 1), `u_min` = p25
/// of the visited-ward count. Each becomes `round(eta * survey + (1 - eta) * default)`;
/// the remaining bounds keep their defaults.
pub fn calibrate_thresholds(survey: &SurveyMarginals, defaults: &TouristThresholds, eta: f64) -> Calibration {
    let eta = eta.clamp(0.0, 1.0);
    let mut warnings = Vec::new();
    let mut th = *defaults;
    let mix = |survey_value: f64, default: u32| -> u32 { (eta * survey_value + (1.0 - eta) * default as f64).round().max(0.0) as u32 };

    match survey.nights.as_ref() {
        Some(nights) => {
            let days: Vec<(f64, f64)> = nights.iter().map(|(n, p)| (*n as f64 + 1.0, *p)).collect();
            match (discrete_quantile(&days, 0.10), discrete_quantile(&days, 0.90)) {
                (Some(lo), Some(hi)) => {
                    th.e_min = mix(lo, defaults.e_min);
                    th.e_max = mix(hi, defaults.e_max);
                }
                _ => warnings.push("nights marginal has no mass; e_min/e_max keep defaults".into()),
            }
        }
        None => warnings.push("nights marginal missing; e_min/e_max keep defaults".into()),
    }
    match survey.visited_wards.as_ref() {
        Some(wards) => {
            let counts: Vec<(f64, f64)> = wards.iter().map(|(n, p)| (*n as f64, *p)).collect();
            match discrete_quantile(&counts, 0.25) {
                Some(q) => th.u_min = mix(q, defaults.u_min),
                None => warnings.push("visited-ward marginal has no mass; u_min keeps default".into()),
            }
        }
        None => warnings.push("visited-ward marginal missing; u_min keeps default".into()),
    }
    if th.e_min > th.e_max {
        warnings.push(format!("calibrated e_min {} exceeds e_max {}; using defaults", th.e_min, th.e_max));
        th.e_min = defaults.e_min;
        th.e_max = defaults.e_max;
    }
    for w in &warnings {
        warn!("{w}");
    }
    Calibration { thresholds: th, warnings }
}

/// Result of running the tourist rule over a staypoint set.
#[derive(Debug, Clone, Default)]
pub struct CohortResult {
    pub stats: BTreeMap<String, AgentEpisodeStats>,
    pub tourists: BTreeSet<String>,
}

/// Matches every staypoint, computes per-agent stats and applies the tourist rule.
pub fn extract_cohort(
    staypoints: &[Staypoint],
    catalog: &[PoiEntry],
    dwell_floor_s: i64,
    thresholds: &TouristThresholds,
    filter: &CategoryFilter,
    clock: DayClock,
) -> CohortResult {
    let mut by_agent: BTreeMap<&str, Vec<&Staypoint>> = BTreeMap::new();
    for sp in staypoints {
        by_agent.entry(sp.agent.as_str()).or_default().push(sp);
    }
    let mut out = CohortResult::default();
    for (agent, mut sps) in by_agent {
        sps.sort_by_key(|s| s.start);
        let matched: Vec<_> = sps.iter().map(|sp| (*sp, match_poi(sp, catalog, dwell_floor_s))).collect();
        let stats = compute_agent_stats(&matched, filter, clock);
        if classify_tourist(&stats, thresholds) {
            out.tourists.insert(agent.to_string());
        }
        out.stats.insert(agent.to_string(), stats);
    }
    out
}

/// A staypoint reduced to what the priors need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledStaypoint {
    pub agent: String,
    pub ward: WardId,
    pub start: i64,
}

/// Row-stochastic transition prior; rows without support are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransitionPrior {
    rows: Vec<Option<Vec<f64>>>,
}

impl TransitionPrior {
    pub fn from_counts(counts: &[Vec<usize>]) -> Self {
        let rows = counts
            .iter()
            .map(|r| {
                let total: usize = r.iter().sum();
                (total > 0).then(|| r.iter().map(|c| *c as f64 / total as f64).collect())
            })
            .collect();
        Self { rows }
    }

    pub fn from_rows(rows: Vec<Option<Vec<f64>>>) -> Self {
        Self { rows }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, from: usize) -> Option<&[f64]> {
        self.rows.get(from).and_then(|r| r.as_deref())
    }

    pub fn is_supported(&self, from: usize) -> bool {
        self.row(from).is_some()
    }
}

/// Unique-agent counts behind every prior cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PriorSupport {
    pub agents: BTreeMap<u8, usize>,
    pub pooled_agents: usize,
    pub visit: BTreeMap<u8, Vec<usize>>,
    pub transition: BTreeMap<u8, Vec<Vec<usize>>>,
    pub pooled_visit: Vec<usize>,
    pub pooled_transition: Vec<Vec<usize>>,
}

/// Month-conditioned ward visit and transition priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyPriors {
    pub wards: Vec<String>,
    pub visit: BTreeMap<u8, Vec<f64>>,
    pub transition: BTreeMap<u8, TransitionPrior>,
    pub pooled_visit: Vec<f64>,
    pub pooled_transition: TransitionPrior,
    pub support: PriorSupport,
}

impl MonthlyPriors {
    pub fn n_wards(&self) -> usize {
        self.wards.len()
    }

    /// Visit prior for `month`, falling back to the pooled vector.
    pub fn visit_or_pooled(&self, month: u8) -> &[f64] {
        self.visit.get(&month).map_or(&self.pooled_visit, Vec::as_slice)
    }
}

fn normalized(counts: &[usize]) -> Option<Vec<f64>> {
    let total: usize = counts.iter().sum();
    (total > 0).then(|| counts.iter().map(|c| *c as f64 / total as f64).collect())
}

/// Builds visit and transition priors from ward-labeled tourist staypoints.
///
/// `P(w|m)` is proportional to the number of distinct agents seen in ward `w`
/// during month `m`; `P(w'|w,m)` to the number of distinct agents with a
/// consecutive same-day staypoint pair `w -> w'` (`w != w'`). Each staypoint is
/// tagged with the month of its start time.
pub fn build_monthly_priors(staypoints: &[LabeledStaypoint], ward_codes: &[String], clock: DayClock) -> MonthlyPriors {
    let n = ward_codes.len();
    let mut by_agent: BTreeMap<&str, Vec<&LabeledStaypoint>> = BTreeMap::new();
    for sp in staypoints {
        by_agent.entry(sp.agent.as_str()).or_default().push(sp);
    }

    let mut sup = PriorSupport { pooled_visit: vec![0; n], pooled_transition: vec![vec![0; n]; n], ..Default::default() };
    for sps in by_agent.values_mut() {
        sps.sort_by_key(|s| (s.start, s.ward));
        let mut months = BTreeSet::new();
        let mut visits = BTreeSet::new();
        let mut moves = BTreeSet::new();
        for sp in sps.iter() {
            let m = clock.month(sp.start);
            months.insert(m);
            visits.insert((m, sp.ward.0));
        }
        for pair in sps.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if a.ward != b.ward && clock.day(a.start) == clock.day(b.start) {
                moves.insert((clock.month(a.start), a.ward.0, b.ward.0));
            }
        }
        sup.pooled_agents += 1;
        for m in &months {
            *sup.agents.entry(*m).or_default() += 1;
            sup.visit.entry(*m).or_insert_with(|| vec![0; n]);
            sup.transition.entry(*m).or_insert_with(|| vec![vec![0; n]; n]);
        }
        for (m, w) in &visits {
            sup.visit.get_mut(m).expect("month registered")[*w] += 1;
        }
        for w in visits.iter().map(|(_, w)| *w).collect::<BTreeSet<_>>() {
            sup.pooled_visit[w] += 1;
        }
        for (m, a, b) in &moves {
            sup.transition.get_mut(m).expect("month registered")[*a][*b] += 1;
        }
        for (a, b) in moves.iter().map(|(_, a, b)| (*a, *b)).collect::<BTreeSet<_>>() {
            sup.pooled_transition[a][b] += 1;
        }
    }

    let visit = sup.visit.iter().filter_map(|(m, c)| normalized(c).map(|v| (*m, v))).collect();
    let transition = sup.transition.iter().map(|(m, c)| (*m, TransitionPrior::from_counts(c))).collect();
    MonthlyPriors {
        wards: ward_codes.to_vec(),
        visit,
        transition,
        pooled_visit: normalized(&sup.pooled_visit).unwrap_or_else(|| vec![0.0; n]),
        pooled_transition: TransitionPrior::from_counts(&sup.pooled_transition),
        support: sup,
    }
}
