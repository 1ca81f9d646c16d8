//! Per-agent generation loop and household expansion.

use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backend::{Backend, BackendError};
use super::fallback::fallback_generate;
use super::prompt::{build_prompt, HouseholdContext};
use super::{fill_gaps, parse_chain, validate_chain, ActivityChain};
use crate::geo::{DistanceMatrix, Wards};
use crate::population::{AgentProfile, HouseholdRole};
use crate::routing::WardItinerary;
use crate::scope::TripScope;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateOptions {
    /// Generation attempts per chain before falling back.
    pub budget: u32,
    /// Households generated at once.
    pub concurrency: usize,
    pub seed: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self { budget: 3, concurrency: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ChainSource {
    /// Accepted remote output after `attempts` calls.
    Remote { attempts: u32 },
    /// Offline generator, after `rejected` unusable remote outputs.
    Fallback { rejected: u32 },
    /// Verbatim copy of the household head's chain.
    HeadCopy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedChain {
    pub chain: ActivityChain,
    pub source: ChainSource,
}

/// One agent to generate for.
#[derive(Debug, Clone, Copy)]
pub struct AgentTask<'a> {
    pub profile: &'a AgentProfile,
    pub scope: TripScope,
    pub itinerary: &'a WardItinerary,
}

pub struct ChainGenerator<'a> {
    pub backend: &'a Backend,
    pub wards: &'a Wards,
    pub distances: &'a DistanceMatrix<f64>,
    pub opts: GenerateOptions,
}

impl ChainGenerator<'_> {
    fn fallback(&self, task: &AgentTask<'_>) -> ActivityChain {
        let mut rng = rng_for(self.opts.seed, "chains", task.profile.agent_id);
        fallback_generate(task.profile, task.itinerary, &mut rng)
    }

    /// Up to `budget` remote attempts; each output must parse without hard
    /// violations and pass every structural check (gaps are filled), and
    /// `extra` must accept it. Returns the accepted chain and the number of
    /// rejected outputs, or `None` with that count when the budget runs out.
    /// Unreachable-service errors abort.
    fn try_remote(
        &self,
        task: &AgentTask<'_>,
        household: Option<HouseholdContext<'_>>,
        extra: impl Fn(&ActivityChain) -> bool,
    ) -> Result<(Option<ActivityChain>, u32), BackendError> {
        let Backend::Remote(client) = self.backend else {
            return Ok((None, 0));
        };
        let prompt = build_prompt(task.profile, &task.scope, task.itinerary, self.wards, self.distances, household);
        let req = client.config().request(prompt);
        let agent = task.profile.agent_id;
        let mut rejected = 0;
        for attempt in 1..=self.opts.budget.max(1) {
            let text = match client.complete(&req) {
                Ok(r) => r.text,
                Err(e) if e.is_content_failure() => {
                    warn!("agent {agent}: attempt {attempt}: {e}");
                    rejected += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let parsed = match parse_chain(agent, &text, self.wards) {
                Ok(p) => p,
                Err(e) => {
                    warn!("agent {agent}: attempt {attempt}: {e}");
                    rejected += 1;
                    continue;
                }
            };
            if let Some(v) = parsed.violations.iter().find(|v| v.is_hard()) {
                warn!("agent {agent}: attempt {attempt}: {v}");
                rejected += 1;
                continue;
            }
            let diag = validate_chain(&parsed.chain, task.itinerary, task.scope.nights);
            if !diag.acceptable() {
                warn!("agent {agent}: attempt {attempt}: chain rejected {diag:?}");
                rejected += 1;
                continue;
            }
            let filled = fill_gaps(&parsed.chain, task.itinerary);
            if !extra(&filled) {
                warn!("agent {agent}: attempt {attempt}: chain does not follow the household head");
                rejected += 1;
                continue;
            }
            return Ok((Some(filled), rejected));
        }
        Ok((None, rejected))
    }

    /// Chain for one agent: remote output if one is accepted within budget,
    /// otherwise the offline generator.
    pub fn generate(&self, task: &AgentTask<'_>) -> Result<GeneratedChain, BackendError> {
        let (accepted, rejected) = self.try_remote(task, None, |_| true)?;
        Ok(match accepted {
            Some(chain) => GeneratedChain { chain, source: ChainSource::Remote { attempts: rejected + 1 } },
            None => {
                if self.backend.is_remote() {
                    warn!("agent {}: budget spent, using the offline generator", task.profile.agent_id);
                }
                GeneratedChain { chain: self.fallback(task), source: ChainSource::Fallback { rejected } }
            }
        })
    }

    /// Companion chains. Members of a non-business household copy the head
    /// chain. When the head travels on business and a member's purpose
    /// differs, the member gets its own chain constrained to the head's day
    /// count and per-day ward order; output that cannot meet the constraint
    /// within budget is replaced by a copy.
    pub fn household_expand(
        &self,
        head: &AgentProfile,
        head_chain: &ActivityChain,
        members: &[AgentTask<'_>],
    ) -> Result<Vec<GeneratedChain>, BackendError> {
        let head_order = head_chain.ward_order();
        let follows_head = |c: &ActivityChain| c.ward_order() == head_order;
        let mut out = Vec::with_capacity(members.len());
        for m in members {
            let copy = GeneratedChain { chain: head_chain.with_agent(m.profile.agent_id), source: ChainSource::HeadCopy };
            if !(head.purpose.is_business_oriented() && m.profile.purpose != head.purpose) {
                out.push(copy);
                continue;
            }
            let ctx = HouseholdContext { head, head_chain };
            let (accepted, rejected) = self.try_remote(m, Some(ctx), follows_head)?;
            let varied = match accepted {
                Some(chain) => Some(GeneratedChain { chain, source: ChainSource::Remote { attempts: rejected + 1 } }),
                None => Some(GeneratedChain { chain: self.fallback(m), source: ChainSource::Fallback { rejected } })
                    .filter(|g| follows_head(&g.chain)),
            };
            match varied {
                Some(g) => out.push(g),
                None => {
                    warn!("agent {}: variation does not follow the head's wards; copying", m.profile.agent_id);
                    out.push(copy);
                }
            }
        }
        Ok(out)
    }

    /// Generates every household: the head first, then its members. At most
    /// `concurrency` households are in flight. Output is sorted by agent id.
    pub fn run(
        &self,
        agents: &[AgentProfile],
        scopes: &BTreeMap<u64, TripScope>,
        itineraries: &BTreeMap<u64, WardItinerary>,
    ) -> Result<Vec<GeneratedChain>, GenerateError> {
        let mut households: BTreeMap<u64, Vec<&AgentProfile>> = BTreeMap::new();
        for a in agents {
            households.entry(a.household_id).or_default().push(a);
        }
        let tasks: Vec<Vec<AgentTask<'_>>> = households
            .into_values()
            .map(|mut hh| {
                hh.sort_by_key(|a| (a.household_role != HouseholdRole::Head, a.agent_id));
                hh.into_iter()
                    .map(|p| {
                        let scope = *scopes.get(&p.agent_id).ok_or(GenerateError::MissingScope(p.agent_id))?;
                        let itinerary = itineraries.get(&p.agent_id).ok_or(GenerateError::MissingItinerary(p.agent_id))?;
                        Ok(AgentTask { profile: p, scope, itinerary })
                    })
                    .collect::<Result<Vec<_>, GenerateError>>()
            })
            .collect::<Result<_, _>>()?;

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.opts.concurrency.max(1))
            .build()
            .map_err(|e| GenerateError::Pool(e.to_string()))?;
        let per_household: Vec<Vec<GeneratedChain>> = pool.install(|| {
            tasks
                .par_iter()
                .map(|hh| {
                    let head = self.generate(&hh[0])?;
                    let mut out = self.household_expand(hh[0].profile, &head.chain, &hh[1..])?;
                    out.insert(0, head);
                    Ok(out)
                })
                .collect::<Result<Vec<_>, BackendError>>()
        })?;
        let mut all: Vec<GeneratedChain> = per_household.into_iter().flatten().collect();
        all.sort_by_key(|g| g.chain.agent_id);
        let fallback = all.iter().filter(|g| matches!(g.source, ChainSource::Fallback { .. })).count();
        info!("generated {} chains ({fallback} from the offline generator)", all.len());
        Ok(all)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("no trip scope for agent {0}")]
    MissingScope(u64),
    #[error("no itinerary for agent {0}")]
    MissingItinerary(u64),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{render_chain, validate_chain};
    use crate::geo::{GeoPoint, WardId};
    use crate::population::Purpose;

    fn setup() -> (Wards, DistanceMatrix<f64>) {
        let wards = Wards::new(["A", "B", "C", "D"]).unwrap();
        let cents: Vec<_> = (0..4).map(|i| (WardId(i), GeoPoint::new(35.6 + 0.02 * i as f64, 139.7).unwrap())).collect();
        let d = DistanceMatrix::from_centroids(&wards, &cents).unwrap();
        (wards, d)
    }

    fn person(id: u64, hh: u64, role: HouseholdRole, purpose: Purpose) -> AgentProfile {
        AgentProfile {
            agent_id: id,
            gender: "male".into(),
            age: 30,
            purpose,
            companion: "family".into(),
            origin: None,
            expenditure_percentile: 40.0,
            household_id: hh,
            household_role: role,
            travel_month: 3,
        }
    }

    fn itin(id: u64) -> WardItinerary {
        WardItinerary { agent_id: id, month: 3, days: vec![vec![WardId(0), WardId(2)], vec![WardId(3)], vec![WardId(3)]] }
    }

    #[test]
    fn household_rules_with_fallback() {
        let (w, d) = setup();
        let backend = Backend::Fallback;
        let g = ChainGenerator { backend: &backend, wards: &w, distances: &d, opts: GenerateOptions::default() };
        let agents = vec![
            person(1, 1, HouseholdRole::Head, Purpose::Sightseeing),
            person(2, 1, HouseholdRole::Companion, Purpose::Business),
            person(3, 3, HouseholdRole::Head, Purpose::Business),
            person(4, 3, HouseholdRole::Companion, Purpose::Sightseeing),
            person(5, 3, HouseholdRole::Companion, Purpose::Business),
        ];
        let scopes = agents.iter().map(|a| (a.agent_id, TripScope { nights: 2, locations: 3 })).collect();
        let its = agents.iter().map(|a| (a.agent_id, itin(a.agent_id))).collect();
        let out = g.run(&agents, &scopes, &its).unwrap();
        let by: BTreeMap<u64, &GeneratedChain> = out.iter().map(|c| (c.chain.agent_id, c)).collect();

        assert_eq!(render_chain(&by[&2].chain, &w), render_chain(&by[&1].chain, &w));
        assert_eq!(by[&2].source, ChainSource::HeadCopy);
        assert_eq!(by[&5].source, ChainSource::HeadCopy);
        let (head, comp) = (&by[&3].chain, &by[&4].chain);
        assert_eq!(comp.ward_order(), head.ward_order());
        assert_eq!(comp.day_count(), head.day_count());
        assert_ne!(comp.code_multiset(), head.code_multiset());
        for c in &out {
            assert!(validate_chain(&c.chain, &itin(0), 2).acceptable());
        }
    }
}
