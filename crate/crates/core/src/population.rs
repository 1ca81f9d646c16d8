//! Survey marginals and the synthetic base population.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::Wards;
use crate::prob::sample_index;
use crate::seed::rng_for;

/// Tolerance on the unit sum of a marginal read from disk.
pub const MARGINAL_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error("reading marginals: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing marginals: {0}")]
    Json(#[from] serde_json::Error),
    #[error("distribution `{field}` sums to {sum}, expected 1")]
    BadSum { field: String, sum: f64 },
    #[error("distribution `{field}` has a negative or non-finite entry `{key}`")]
    BadEntry { field: String, key: String },
    #[error("distribution `{0}` is empty")]
    Empty(String),
    #[error("age band `{0}` is not of the form `lo-hi` or `lo+`")]
    AgeBand(String),
    #[error("household size {0} is outside 2..=16")]
    HouseholdSize(u32),
    #[error("travel month {0} outside 1..=12")]
    Month(u32),
    #[error("ward share is missing ward `{0}`")]
    MissingWard(String),
    #[error("ward share names unknown ward `{0}`")]
    UnknownWard(String),
    #[error("population size must be positive")]
    EmptyPopulation,
}

/// Trip purpose categories of the visitor survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Sightseeing,
    #[serde(rename = "Visiting relatives")]
    VisitingRelatives,
    Business,
    #[serde(rename = "International conference")]
    InternationalConference,
    #[serde(rename = "Expo/trade fair")]
    ExpoTradeFair,
    #[serde(rename = "Corporate conference")]
    CorporateConference,
    #[serde(rename = "Incentive/Study abroad")]
    IncentiveStudyAbroad,
    Other,
}

impl Purpose {
    pub const ALL: [Purpose; 8] = [
        Purpose::Sightseeing,
        Purpose::VisitingRelatives,
        Purpose::Business,
        Purpose::InternationalConference,
        Purpose::ExpoTradeFair,
        Purpose::CorporateConference,
        Purpose::IncentiveStudyAbroad,
        Purpose::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Purpose::Sightseeing => "Sightseeing",
            Purpose::VisitingRelatives => "Visiting relatives",
            Purpose::Business => "Business",
            Purpose::InternationalConference => "International conference",
            Purpose::ExpoTradeFair => "Expo/trade fair",
            Purpose::CorporateConference => "Corporate conference",
            Purpose::IncentiveStudyAbroad => "Incentive/Study abroad",
            Purpose::Other => "Other",
        }
    }

    pub fn index(self) -> usize {
        Purpose::ALL.iter().position(|p| *p == self).expect("listed")
    }

    /// Business, conference and expo trips.
    pub fn is_business_oriented(self) -> bool {
        matches!(self, Purpose::Business | Purpose::InternationalConference | Purpose::ExpoTradeFair | Purpose::CorporateConference)
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Purpose {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Purpose::ALL.into_iter().find(|p| p.label().eq_ignore_ascii_case(s.trim())).ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HouseholdRole {
    Head,
    Companion,
}

/// Discrete distribution over integer values (`{"3": 0.2, ...}` on disk).
pub type Histogram = BTreeMap<u32, f64>;
/// Distribution over named categories.
pub type Categorical = BTreeMap<String, f64>;

/// Inclusive age range parsed from labels such as `20-29` or `70+`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgeBand {
    pub lo: u32,
    pub hi: u32,
}

impl FromStr for AgeBand {
    type Err = PopulationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PopulationError::AgeBand(s.to_string());
        let t = s.trim();
        if let Some(lo) = t.strip_suffix('+') {
            let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
            return Ok(AgeBand { lo, hi: lo + 14 });
        }
        let (lo, hi) = t.split_once('-').ok_or_else(bad)?;
        let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        Ok(AgeBand { lo, hi })
    }
}

/// Per-respondent survey marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyMarginals {
    pub gender: Categorical,
    pub age_band: Categorical,
    pub purpose: BTreeMap<Purpose, f64>,
    pub companion: Categorical,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Categorical>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nights: Option<Histogram>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visited_locations: Option<Histogram>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visited_wards: Option<Histogram>,
    /// Total trip expenditure (currency units) histogram.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expenditure: Option<Histogram>,
    /// Survey ward share keyed by ward code.
    pub ward_share: Categorical,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month_weights: Option<BTreeMap<u32, f64>>,
    #[serde(default = "default_household_size")]
    pub household_size: Histogram,
    /// Companion types that mean travelling alone.
    #[serde(default = "default_solo")]
    pub solo_companions: Vec<String>,
    /// Optional joint purpose × companion table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose_companion: Option<BTreeMap<Purpose, Categorical>>,
}

fn default_household_size() -> Histogram {
    [(2, 0.7), (3, 0.2), (4, 0.1)].into_iter().collect()
}

fn default_solo() -> Vec<String> {
    vec!["alone".to_string()]
}

/// On-disk form: purposes are free strings so unknown codes can be dropped.
#[derive(Deserialize)]
struct RawMarginals {
    gender: Categorical,
    age_band: Categorical,
    purpose: Categorical,
    companion: Categorical,
    #[serde(default)]
    origin: Option<Categorical>,
    #[serde(default)]
    nights: Option<Histogram>,
    #[serde(default)]
    visited_locations: Option<Histogram>,
    #[serde(default)]
    visited_wards: Option<Histogram>,
    #[serde(default)]
    expenditure: Option<Histogram>,
    ward_share: Categorical,
    #[serde(default)]
    month_weights: Option<BTreeMap<u32, f64>>,
    #[serde(default = "default_household_size")]
    household_size: Histogram,
    #[serde(default = "default_solo")]
    solo_companions: Vec<String>,
    #[serde(default)]
    purpose_companion: Option<BTreeMap<String, Categorical>>,
}

fn check_sum<'a, K: ToString + 'a>(field: &str, entries: impl IntoIterator<Item = (&'a K, &'a f64)>) -> Result<(), PopulationError> {
    let mut sum = 0.0;
    let mut any = false;
    for (k, v) in entries {
        if !v.is_finite() || *v < 0.0 {
            return Err(PopulationError::BadEntry { field: field.to_string(), key: k.to_string() });
        }
        sum += v;
        any = true;
    }
    if !any {
        return Err(PopulationError::Empty(field.to_string()));
    }
    if (sum - 1.0).abs() > MARGINAL_SUM_TOL {
        return Err(PopulationError::BadSum { field: field.to_string(), sum });
    }
    Ok(())
}

fn known_purposes(field: &str, raw: &Categorical) -> Result<BTreeMap<Purpose, f64>, PopulationError> {
    let mut out = BTreeMap::new();
    let mut dropped = 0.0;
    for (k, v) in raw {
        match k.parse::<Purpose>() {
            Ok(p) => *out.entry(p).or_insert(0.0) += v,
            Err(_) => {
                warn!("{field}: dropping unknown purpose `{k}` (mass {v})");
                dropped += v;
            }
        }
    }
    let kept: f64 = out.values().sum();
    if kept <= 0.0 {
        return Err(PopulationError::Empty(field.to_string()));
    }
    if dropped > 0.0 {
        out.values_mut().for_each(|v| *v /= kept);
    }
    Ok(out)
}

impl SurveyMarginals {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PopulationError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Parses and validates marginals. Unknown purpose categories are dropped
    /// and the remaining purpose mass renormalized.
    pub fn from_json(text: &str) -> Result<Self, PopulationError> {
        let raw: RawMarginals = serde_json::from_str(text)?;
        check_sum("gender", &raw.gender)?;
        check_sum("age_band", &raw.age_band)?;
        check_sum("purpose", &raw.purpose)?;
        check_sum("companion", &raw.companion)?;
        check_sum("ward_share", &raw.ward_share)?;
        check_sum("household_size", &raw.household_size)?;
        for (name, h) in [
            ("nights", &raw.nights),
            ("visited_locations", &raw.visited_locations),
            ("visited_wards", &raw.visited_wards),
            ("expenditure", &raw.expenditure),
        ] {
            if let Some(h) = h {
                check_sum(name, h)?;
            }
        }
        if let Some(o) = &raw.origin {
            check_sum("origin", o)?;
        }
        if let Some(mw) = &raw.month_weights {
            if let Some(m) = mw.keys().find(|m| !(1..=12).contains(*m)) {
                return Err(PopulationError::Month(*m));
            }
            check_sum("month_weights", mw)?;
        }
        for band in raw.age_band.keys() {
            band.parse::<AgeBand>()?;
        }
        if let Some(s) = raw.household_size.keys().find(|s| !(2..=16).contains(*s)) {
            return Err(PopulationError::HouseholdSize(*s));
        }
        let purpose = known_purposes("purpose", &raw.purpose)?;
        let purpose_companion = match raw.purpose_companion {
            Some(joint) => {
                let sum: f64 = joint.values().flat_map(|r| r.values()).sum();
                if (sum - 1.0).abs() > MARGINAL_SUM_TOL {
                    return Err(PopulationError::BadSum { field: "purpose_companion".into(), sum });
                }
                let mut out: BTreeMap<Purpose, Categorical> = BTreeMap::new();
                let mut kept = 0.0;
                for (k, row) in joint {
                    match k.parse::<Purpose>() {
                        Ok(p) => {
                            kept += row.values().sum::<f64>();
                            out.insert(p, row);
                        }
                        Err(_) => warn!("purpose_companion: dropping unknown purpose `{k}`"),
                    }
                }
                for row in out.values_mut() {
                    row.values_mut().for_each(|v| *v /= kept);
                }
                Some(out)
            }
            None => None,
        };
        Ok(SurveyMarginals {
            gender: raw.gender,
            age_band: raw.age_band,
            purpose,
            companion: raw.companion,
            origin: raw.origin,
            nights: raw.nights,
            visited_locations: raw.visited_locations,
            visited_wards: raw.visited_wards,
            expenditure: raw.expenditure,
            ward_share: raw.ward_share,
            month_weights: raw.month_weights,
            household_size: raw.household_size,
            solo_companions: raw.solo_companions,
            purpose_companion,
        })
    }

    /// Ward share as a dense vector in registry order; must cover every ward.
    pub fn ward_vector(&self, wards: &Wards) -> Result<Vec<f64>, PopulationError> {
        if let Some(k) = self.ward_share.keys().find(|k| wards.get(k).is_none()) {
            return Err(PopulationError::UnknownWard(k.clone()));
        }
        wards.codes().iter().map(|c| self.ward_share.get(c).copied().ok_or_else(|| PopulationError::MissingWard(c.clone()))).collect()
    }

    pub fn is_solo(&self, companion: &str) -> bool {
        self.solo_companions.iter().any(|s| s == companion)
    }

    /// Expected household size for a companion type (1 when travelling alone).
    fn expected_size(&self, companion: &str) -> f64 {
        if self.is_solo(companion) {
            1.0
        } else {
            let total: f64 = self.household_size.values().sum();
            self.household_size.iter().map(|(s, p)| *s as f64 * p).sum::<f64>() / total
        }
    }

    #[cfg(test)]
    pub(crate) fn minimal_for_tests() -> Self {
        let cat = |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        SurveyMarginals {
            gender: cat(&[("female", 0.5), ("male", 0.5)]),
            age_band: cat(&[("20-29", 0.5), ("30-49", 0.5)]),
            purpose: [(Purpose::Sightseeing, 0.7), (Purpose::Business, 0.3)].into_iter().collect(),
            companion: cat(&[("alone", 0.5), ("family", 0.5)]),
            origin: None,
            nights: None,
            visited_locations: None,
            visited_wards: None,
            expenditure: None,
            ward_share: cat(&[("A", 0.6), ("B", 0.4)]),
            month_weights: None,
            household_size: default_household_size(),
            solo_companions: default_solo(),
            purpose_companion: None,
        }
    }
}

/// One synthetic traveler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: u64,
    pub gender: String,
    pub age: u32,
    pub purpose: Purpose,
    pub companion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    /// Position of the agent's spending in the survey distribution, 0–100.
    pub expenditure_percentile: f64,
    pub household_id: u64,
    pub household_role: HouseholdRole,
    pub travel_month: u8,
}

fn draw_key<'a, R: Rng + ?Sized>(dist: &'a Categorical, rng: &mut R) -> &'a str {
    let weights: Vec<f64> = dist.values().copied().collect();
    let i = sample_index(&weights, rng).expect("validated distribution has mass");
    dist.keys().nth(i).expect("index in range")
}

fn draw_purpose<R: Rng + ?Sized>(dist: &BTreeMap<Purpose, f64>, rng: &mut R) -> Purpose {
    let weights: Vec<f64> = dist.values().copied().collect();
    let i = sample_index(&weights, rng).expect("validated distribution has mass");
    *dist.keys().nth(i).expect("index in range")
}

fn draw_age<R: Rng + ?Sized>(m: &SurveyMarginals, rng: &mut R) -> u32 {
    let band: AgeBand = draw_key(&m.age_band, rng).parse().expect("validated at load");
    rng.random_range(band.lo..=band.hi)
}

/// Mid-rank percentile of a value drawn from the expenditure histogram, or a uniform draw.
fn draw_expenditure_pct<R: Rng + ?Sized>(m: &SurveyMarginals, rng: &mut R) -> f64 {
    match &m.expenditure {
        Some(h) => {
            let weights: Vec<f64> = h.values().copied().collect();
            let i = sample_index(&weights, rng).expect("validated distribution has mass");
            let total: f64 = weights.iter().sum();
            let below: f64 = weights[..i].iter().sum();
            100.0 * (below + 0.5 * weights[i]) / total
        }
        None => 100.0 * rng.random::<f64>(),
    }
}

fn draw_month<R: Rng + ?Sized>(m: &SurveyMarginals, rng: &mut R) -> u8 {
    match &m.month_weights {
        Some(w) => {
            let months: Vec<u32> = w.keys().copied().collect();
            let weights: Vec<f64> = w.values().copied().collect();
            months[sample_index(&weights, rng).expect("validated")] as u8
        }
        None => rng.random_range(1..=12),
    }
}

/// Samples `n_agents` travelers. Households are generated from independent
/// per-household streams so output depends only on `(m, n_agents, seed)`.
///
/// Heads of group trips spawn a household of 2–4 (per `household_size`).
/// Head companion types are drawn with weights divided by the expected
/// household size so that the agent-level companion share matches the marginal.
pub fn synthesize_population(m: &SurveyMarginals, n_agents: usize, seed: u64) -> Result<Vec<AgentProfile>, PopulationError> {
    if n_agents == 0 {
        return Err(PopulationError::EmptyPopulation);
    }
    // (purpose, companion, weight) cells for heads
    let head_cells: Vec<(Option<Purpose>, String, f64)> = match &m.purpose_companion {
        Some(joint) => joint
            .iter()
            .flat_map(|(p, row)| row.iter().map(move |(c, w)| (Some(*p), c.clone(), *w)))
            .map(|(p, c, w)| {
                let e = m.expected_size(&c);
                (p, c, w / e)
            })
            .collect(),
        None => m.companion.iter().map(|(c, w)| (None, c.clone(), w / m.expected_size(c))).collect(),
    };
    let head_weights: Vec<f64> = head_cells.iter().map(|c| c.2).collect();
    let sizes: Vec<u32> = m.household_size.keys().copied().collect();
    let size_weights: Vec<f64> = m.household_size.values().copied().collect();

    let mut agents = Vec::with_capacity(n_agents);
    let mut household = 0u64;
    while agents.len() < n_agents {
        let mut rng = rng_for(seed, "household", household);
        let cell = &head_cells[sample_index(&head_weights, &mut rng).expect("marginal has mass")];
        let companion = cell.1.clone();
        let head_purpose = cell.0.unwrap_or_else(|| draw_purpose(&m.purpose, &mut rng));
        let month = draw_month(m, &mut rng);
        let size = if m.is_solo(&companion) { 1 } else { sizes[sample_index(&size_weights, &mut rng).expect("validated")] as usize };
        let size = size.min(n_agents - agents.len());
        for k in 0..size {
            let purpose = if k == 0 {
                head_purpose
            } else {
                match &m.purpose_companion {
                    Some(joint) => {
                        let conditional: BTreeMap<Purpose, f64> =
                            joint.iter().map(|(p, row)| (*p, row.get(&companion).copied().unwrap_or(0.0))).collect();
                        if conditional.values().sum::<f64>() > 0.0 {
                            draw_purpose(&conditional, &mut rng)
                        } else {
                            draw_purpose(&m.purpose, &mut rng)
                        }
                    }
                    None => draw_purpose(&m.purpose, &mut rng),
                }
            };
            agents.push(AgentProfile {
                agent_id: agents.len() as u64,
                gender: draw_key(&m.gender, &mut rng).to_string(),
                age: draw_age(m, &mut rng),
                purpose,
                companion: companion.clone(),
                origin: m.origin.as_ref().map(|o| draw_key(o, &mut rng).to_string()),
                expenditure_percentile: draw_expenditure_pct(m, &mut rng),
                household_id: household,
                household_role: if k == 0 { HouseholdRole::Head } else { HouseholdRole::Companion },
                travel_month: month,
            });
        }
        household += 1;
    }
    Ok(agents)
}

/// Groups agents by household, head first.
pub fn households(agents: &[AgentProfile]) -> BTreeMap<u64, Vec<&AgentProfile>> {
    let mut out: BTreeMap<u64, Vec<&AgentProfile>> = BTreeMap::new();
    for a in agents {
        out.entry(a.household_id).or_default().push(a);
    }
    for members in out.values_mut() {
        members.sort_by_key(|a| (a.household_role != HouseholdRole::Head, a.agent_id));
    }
    out
}
