//! Stage 2: ward budgets, quota-calibrated ward sets, greedy route ordering
//! and the per-day split.
//!
//! Marginal calibration and ordering are separate steps. Integer quotas fix
//! how often each ward appears across the population; the transition prior,
//! distance decay, survey share and novelty only decide the order in which an
//! agent visits its assigned set.

use std::collections::{BTreeMap, VecDeque};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{MonthlyPriors, TransitionPrior};
use crate::geo::{DistanceMatrix, WardId};
use crate::matrix::SquareMatrix;
use crate::prob::sample_index;

#[derive(Debug, Error, PartialEq)]
pub enum RoutingError {
    #[error("invalid routing parameter: {0}")]
    Params(&'static str),
    #[error("budgets sum to {budgets} but quotas sum to {quotas}")]
    SlotMismatch { budgets: usize, quotas: usize },
    #[error("no assignment gives every agent distinct wards under these quotas")]
    Infeasible,
    #[error("route is empty")]
    EmptyRoute,
    #[error("ward vector has {got} entries, expected {expected}")]
    Dimension { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingParams {
    /// Locations-to-wards conversion ratio.
    pub rho: f64,
    pub u_min: usize,
    pub u_max: usize,
    /// Weight of the pooled transition prior.
    pub gamma: f64,
    pub lambda_t: f64,
    pub lambda_d: f64,
    pub lambda_p: f64,
    pub lambda_n: f64,
    /// Distance decay constant in km.
    pub tau_km: f64,
}

impl Default for RoutingParams {
    fn default() -> Self {
        Self { rho: 0.6, u_min: 1, u_max: 8, gamma: 0.3, lambda_t: 1.0, lambda_d: 1.0, lambda_p: 0.5, lambda_n: 0.5, tau_km: 5.0 }
    }
}

impl RoutingParams {
    pub fn validate(&self) -> Result<(), RoutingError> {
        if self.u_min < 1 {
            return Err(RoutingError::Params("u_min must be at least 1"));
        }
        if self.u_min > self.u_max {
            return Err(RoutingError::Params("u_min must not exceed u_max"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(RoutingError::Params("gamma must lie in [0, 1]"));
        }
        if [self.lambda_t, self.lambda_d, self.lambda_p, self.lambda_n].iter().any(|l| !(*l >= 0.0)) {
            return Err(RoutingError::Params("score weights must be non-negative"));
        }
        if !(self.tau_km > 0.0) {
            return Err(RoutingError::Params("tau_km must be positive"));
        }
        if !(self.rho > 0.0) {
            return Err(RoutingError::Params("rho must be positive"));
        }
        Ok(())
    }
}

/// `clip(round(rho * p_locs), u_min, u_max)`, rounding half away from zero.
pub fn ward_budget(p_locs: u32, params: &RoutingParams) -> usize {
    let raw = (params.rho * p_locs as f64).round().max(0.0) as usize;
    raw.clamp(params.u_min, params.u_max)
}

/// Largest-remainder apportionment of `total` slots to shares `pi`.
///
/// Remainder ties go to the larger share, then the lower ward index.
pub fn allocate_quotas(pi: &[f64], total: usize) -> Vec<usize> {
    let mass: f64 = pi.iter().sum();
    if pi.is_empty() || mass <= 0.0 {
        return vec![0; pi.len()];
    }
    let exact: Vec<f64> = pi.iter().map(|p| p / mass * total as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(pi[b].total_cmp(&pi[a])).then(a.cmp(&b))
    });
    for &w in order.iter().take(total.saturating_sub(assigned)) {
        quotas[w] += 1;
    }
    quotas
}

/// Month-conditioned ward visit weights.
pub trait VisitPrior {
    fn visit(&self, month: u8) -> &[f64];
}

impl VisitPrior for MonthlyPriors {
    fn visit(&self, month: u8) -> &[f64] {
        self.visit_or_pooled(month)
    }
}

/// The same weights for every month.
impl VisitPrior for [f64] {
    fn visit(&self, _month: u8) -> &[f64] {
        self
    }
}

impl VisitPrior for Vec<f64> {
    fn visit(&self, _month: u8) -> &[f64] {
        self
    }
}

/// An agent awaiting a ward set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Traveler {
    pub budget: usize,
    pub month: u8,
}

/// Gale–Ryser test: can agents with `budgets` each take that many distinct
/// wards so that ward `w` is used exactly `remaining[w]` times?
pub fn realizable(budgets: &[usize], remaining: &[usize]) -> bool {
    let total_b: usize = budgets.iter().sum();
    let total_r: usize = remaining.iter().sum();
    if total_b != total_r {
        return false;
    }
    let mut b = budgets.to_vec();
    b.sort_unstable_by(|x, y| y.cmp(x));
    let max_r = remaining.iter().copied().max().unwrap_or(0);
    let mut lhs = 0usize;
    for (k, bk) in b.iter().enumerate() {
        let k1 = k + 1;
        if k1 > max_r {
            // beyond max_r the right side equals total_r
            break;
        }
        lhs += bk;
        let rhs: usize = remaining.iter().map(|r| (*r).min(k1)).sum();
        if lhs > rhs {
            return false;
        }
    }
    true
}

/// The `budget` wards with the largest remaining quota (ties: heavier prior, lower index).
fn greedy_pick(budget: usize, remaining: &[usize], prior: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..remaining.len()).filter(|w| remaining[*w] > 0).collect();
    order.sort_by(|&a, &b| remaining[b].cmp(&remaining[a]).then(prior[b].total_cmp(&prior[a])).then(a.cmp(&b)));
    order.truncate(budget);
    order
}

/// Weighted draw of a distinct ward set; wards whose remaining quota equals
/// the number of agents still waiting are forced in.
fn sampled_pick<R: Rng + ?Sized>(budget: usize, agents_left: usize, remaining: &[usize], prior: &[f64], rng: &mut R) -> Option<Vec<usize>> {
    let mut picked: Vec<usize> = (0..remaining.len()).filter(|w| remaining[*w] >= agents_left).collect();
    if picked.len() > budget {
        return None;
    }
    while picked.len() < budget {
        let free = |w: usize| remaining[w] > 0 && !picked.contains(&w);
        let mut weights: Vec<f64> =
            (0..remaining.len()).map(|w| if free(w) { remaining[w] as f64 * prior[w].max(0.0) } else { 0.0 }).collect();
        if weights.iter().all(|x| *x <= 0.0) {
            weights = (0..remaining.len()).map(|w| if free(w) { remaining[w] as f64 } else { 0.0 }).collect();
        }
        picked.push(sample_index(&weights, rng)?);
    }
    picked.sort_unstable();
    Some(picked)
}

/// Assigns the agents at `members` (indices into `travelers`) from a pool of
/// `quotas`. Returns `None` when the pool is not realizable.
fn fill_pool<P: VisitPrior + ?Sized, R: Rng + ?Sized>(
    travelers: &[Traveler],
    members: &[usize],
    quotas: &[usize],
    prior: &P,
    rng: &mut R,
    out: &mut [Vec<WardId>],
) -> Option<()> {
    let budgets: Vec<usize> = members.iter().map(|i| travelers[*i].budget).collect();
    if !realizable(&budgets, quotas) {
        return None;
    }
    let mut order = members.to_vec();
    order.shuffle(rng);
    let mut remaining = quotas.to_vec();
    let mut waiting: Vec<usize> = order.iter().map(|i| travelers[*i].budget).collect();
    for (pos, &agent) in order.iter().enumerate() {
        let t = travelers[agent];
        let p = prior.visit(t.month);
        let after = &waiting[pos + 1..];
        let try_pick = |pick: &[usize], remaining: &[usize]| {
            let mut r = remaining.to_vec();
            for w in pick {
                r[*w] -= 1;
            }
            realizable(after, &r).then_some(r)
        };
        let sampled = sampled_pick(t.budget, order.len() - pos, &remaining, p, rng);
        let (pick, next) = match sampled.and_then(|s| try_pick(&s, &remaining).map(|r| (s, r))) {
            Some(ok) => ok,
            None => {
                let g = greedy_pick(t.budget, &remaining, p);
                let r = try_pick(&g, &remaining)?;
                (g, r)
            }
        };
        remaining = next;
        out[agent] = pick.into_iter().map(WardId).collect();
        waiting[pos] = 0;
    }
    Some(())
}

/// Splits global quotas into per-month integer quotas whose row sums are the
/// month slot totals and column sums the global quotas, proportional to the
/// month visit priors (iterative proportional fitting, then controlled rounding).
pub fn split_quotas_by_month<P: VisitPrior + ?Sized>(
    quotas: &[usize],
    month_slots: &BTreeMap<u8, usize>,
    prior: &P,
) -> BTreeMap<u8, Vec<usize>> {
    const EPS: f64 = 1e-6;
    let n = quotas.len();
    let months: Vec<u8> = month_slots.keys().copied().collect();
    let rows: Vec<f64> = months.iter().map(|m| month_slots[m] as f64).collect();
    let cols: Vec<f64> = quotas.iter().map(|q| *q as f64).collect();

    let mut x: Vec<Vec<f64>> = months
        .iter()
        .map(|m| {
            let p = prior.visit(*m);
            (0..n).map(|w| if quotas[w] > 0 { p.get(w).copied().unwrap_or(0.0).max(0.0) + EPS } else { 0.0 }).collect()
        })
        .collect();
    for _ in 0..10_000 {
        for (row, target) in x.iter_mut().zip(&rows) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v *= target / s);
            }
        }
        let mut worst = 0.0f64;
        for w in 0..n {
            let s: f64 = x.iter().map(|r| r[w]).sum();
            if s > 0.0 {
                worst = worst.max((s - cols[w]).abs());
                x.iter_mut().for_each(|r| r[w] *= cols[w] / s);
            }
        }
        if worst < 1e-9 {
            break;
        }
    }

    let mut q: Vec<Vec<usize>> = x.iter().map(|r| r.iter().map(|v| v.floor() as usize).collect()).collect();
    let row_def: Vec<usize> = months.iter().enumerate().map(|(i, m)| month_slots[m].saturating_sub(q[i].iter().sum())).collect();
    let col_def: Vec<usize> = (0..n).map(|w| quotas[w].saturating_sub(q.iter().map(|r| r[w]).sum())).collect();
    let frac = |i: usize, w: usize| x[i][w] - x[i][w].floor() > 1e-12;
    let mut adds = round_by_flow(&row_def, &col_def, frac);
    if adds.is_none() {
        adds = round_by_flow(&row_def, &col_def, |_, w| quotas[w] > 0);
    }
    if let Some(adds) = adds {
        for (i, w) in adds {
            q[i][w] += 1;
        }
    }
    months.into_iter().zip(q).collect()
}

/// Unit-capacity bipartite max flow (Edmonds–Karp) matching row deficits to
/// column deficits over allowed cells. `None` if the deficits cannot be met.
fn round_by_flow(rows: &[usize], cols: &[usize], allowed: impl Fn(usize, usize) -> bool) -> Option<Vec<(usize, usize)>> {
    let (r, c) = (rows.len(), cols.len());
    let need: usize = rows.iter().sum();
    if need != cols.iter().sum::<usize>() {
        return None;
    }
    let (src, sink) = (r + c, r + c + 1);
    let nodes = r + c + 2;
    let mut cap = vec![vec![0i64; nodes]; nodes];
    for i in 0..r {
        cap[src][i] = rows[i] as i64;
        for w in 0..c {
            if allowed(i, w) {
                cap[i][r + w] = 1;
            }
        }
    }
    for w in 0..c {
        cap[r + w][sink] = cols[w] as i64;
    }
    let mut flow = 0usize;
    loop {
        let mut parent = vec![usize::MAX; nodes];
        parent[src] = src;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for v in 0..nodes {
                if parent[v] == usize::MAX && cap[u][v] > 0 {
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if parent[sink] == usize::MAX {
            break;
        }
        let mut v = sink;
        while v != src {
            let u = parent[v];
            cap[u][v] -= 1;
            cap[v][u] += 1;
            v = u;
        }
        flow += 1;
    }
    if flow < need {
        return None;
    }
    let mut adds = Vec::new();
    for i in 0..r {
        for w in 0..c {
            // a saturated forward edge leaves residual capacity on the reverse edge
            if allowed(i, w) && cap[i][r + w] == 0 && cap[r + w][i] > 0 {
                adds.push((i, w));
            }
        }
    }
    Some(adds)
}

/// Gives each traveler `budget` distinct wards so that ward `w` is used
/// exactly `quotas[w]` times overall.
///
/// Quotas are first split across travel months in proportion to the month
/// visit prior; within a month, candidates are drawn with weight
/// `remaining quota × P(w|m)`. If a month split is not realizable the
/// assignment falls back to the global pool. Every draw is checked against
/// the Gale–Ryser condition and replaced by the largest-remaining-quota
/// choice when it would strand later agents.
pub fn assign_ward_sets<P: VisitPrior + ?Sized, R: Rng + ?Sized>(
    travelers: &[Traveler],
    quotas: &[usize],
    prior: &P,
    rng: &mut R,
    max_attempts: usize,
) -> Result<Vec<Vec<WardId>>, RoutingError> {
    let budgets: usize = travelers.iter().map(|t| t.budget).sum();
    let total: usize = quotas.iter().sum();
    if budgets != total {
        return Err(RoutingError::SlotMismatch { budgets, quotas: total });
    }
    let mut out = vec![Vec::new(); travelers.len()];

    let mut by_month: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, t) in travelers.iter().enumerate() {
        by_month.entry(t.month).or_default().push(i);
    }
    let slots: BTreeMap<u8, usize> = by_month.iter().map(|(m, idx)| (*m, idx.iter().map(|i| travelers[*i].budget).sum())).collect();
    let monthly = split_quotas_by_month(quotas, &slots, prior);
    let monthly_ok = by_month.iter().all(|(m, idx)| {
        let b: Vec<usize> = idx.iter().map(|i| travelers[*i].budget).collect();
        realizable(&b, &monthly[m])
    });

    if monthly_ok {
        for (m, idx) in &by_month {
            fill_pool(travelers, idx, &monthly[m], prior, rng, &mut out).ok_or(RoutingError::Infeasible)?;
        }
        return Ok(out);
    }
    warn!("monthly quota split not realizable; assigning from the global pool");
    let all: Vec<usize> = (0..travelers.len()).collect();
    for _ in 0..max_attempts.max(1) {
        if fill_pool(travelers, &all, quotas, prior, rng, &mut out).is_some() {
            return Ok(out);
        }
    }
    Err(RoutingError::Infeasible)
}

/// `(1 - gamma) * monthly + gamma * pooled`, row by row.
///
/// Rows the monthly prior does not support use the pooled row alone; rows
/// neither supports become uniform (with a warning).
pub fn blend_transition(monthly: Option<&TransitionPrior>, pooled: &TransitionPrior, gamma: f64) -> SquareMatrix<f64> {
    let n = pooled.n();
    let mut t = SquareMatrix::zeros(n);
    let mut uniform_rows = 0;
    for i in 0..n {
        let m = monthly.and_then(|m| m.row(i));
        let p = pooled.row(i);
        let row: Vec<f64> = match (m, p) {
            (Some(m), Some(p)) => m.iter().zip(p).map(|(a, b)| (1.0 - gamma) * a + gamma * b).collect(),
            (None, Some(p)) => p.to_vec(),
            (Some(m), None) => m.to_vec(),
            (None, None) => {
                uniform_rows += 1;
                vec![1.0 / n as f64; n]
            }
        };
        t.row_mut(i).copy_from_slice(&row);
    }
    if uniform_rows > 0 {
        warn!("{uniform_rows} transition rows unsupported in both priors; using uniform rows");
    }
    t
}

/// Composite next-ward score.
pub fn score(prev: WardId, w: WardId, visited: bool, t: &SquareMatrix<f64>, pi: &[f64], d: &DistanceMatrix<f64>, p: &RoutingParams) -> f64 {
    let novelty = if visited { 0.0 } else { 1.0 };
    p.lambda_t * t.get(prev.0, w.0) + p.lambda_d * (-d.km(prev, w) / p.tau_km).exp() + p.lambda_p * pi[w.0] + p.lambda_n * novelty
}

/// Highest-share member of the set (ties: lower index).
pub fn default_start(ward_set: &[WardId], pi: &[f64]) -> Option<WardId> {
    ward_set.iter().copied().min_by(|a, b| pi[b.0].total_cmp(&pi[a.0]).then(a.cmp(b)))
}

/// Greedy ordering of `ward_set`: from the previous ward, move to the
/// unvisited member with the highest [`score`]; ties go to the lower index.
pub fn order_route(
    ward_set: &[WardId],
    start: Option<WardId>,
    t: &SquareMatrix<f64>,
    pi: &[f64],
    d: &DistanceMatrix<f64>,
    params: &RoutingParams,
) -> Vec<WardId> {
    let Some(start) = start.or_else(|| default_start(ward_set, pi)) else {
        return Vec::new();
    };
    let mut left: Vec<WardId> = ward_set.iter().copied().filter(|w| *w != start).collect();
    left.sort_unstable();
    left.dedup();
    let mut route = vec![start];
    while !left.is_empty() {
        let prev = *route.last().expect("non-empty");
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (k, w) in left.iter().enumerate() {
            let s = score(prev, *w, route.contains(w), t, pi, d, params);
            if s > best_score {
                best = k;
                best_score = s;
            }
        }
        route.push(left.remove(best));
    }
    route
}

/// Contiguous split of `route` into `nights + 1` days, sizes as equal as
/// possible with earlier days taking the extra ward. When the route is shorter
/// than the trip, trailing days stay in the last ward.
pub fn split_days(route: &[WardId], nights: u32) -> Result<Vec<Vec<WardId>>, RoutingError> {
    if route.is_empty() {
        return Err(RoutingError::EmptyRoute);
    }
    let days = nights as usize + 1;
    if route.len() < days {
        let mut out: Vec<Vec<WardId>> = route.iter().map(|w| vec![*w]).collect();
        let last = *route.last().expect("non-empty");
        out.resize(days, vec![last]);
        return Ok(out);
    }
    let (base, extra) = (route.len() / days, route.len() % days);
    let mut out = Vec::with_capacity(days);
    let mut at = 0;
    for d in 0..days {
        let size = base + usize::from(d < extra);
        out.push(route[at..at + size].to_vec());
        at += size;
    }
    Ok(out)
}

/// Day-level ward sequence of one agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WardItinerary {
    pub agent_id: u64,
    pub month: u8,
    pub days: Vec<Vec<WardId>>,
}

impl WardItinerary {
    pub fn nights(&self) -> usize {
        self.days.len().saturating_sub(1)
    }

    /// Route order with the repeated trailing wards dropped.
    pub fn route(&self) -> Vec<WardId> {
        let mut r: Vec<WardId> = Vec::new();
        for w in self.days.iter().flatten() {
            if r.last() != Some(w) {
                r.push(*w);
            }
        }
        r
    }

    pub fn ward_set(&self) -> std::collections::BTreeSet<WardId> {
        self.days.iter().flatten().copied().collect()
    }

    pub fn contains(&self, w: WardId) -> bool {
        self.days.iter().any(|d| d.contains(&w))
    }
}

/// An agent entering Stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteRequest {
    pub agent_id: u64,
    pub month: u8,
    pub nights: u32,
    pub locations: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingOutput {
    pub quotas: Vec<usize>,
    pub itineraries: Vec<WardItinerary>,
}

/// Runs the whole stage: budgets, quotas, ward sets, ordering and day split.
pub fn build_itineraries<R: Rng + ?Sized>(
    requests: &[RouteRequest],
    pi: &[f64],
    priors: &MonthlyPriors,
    d: &DistanceMatrix<f64>,
    params: &RoutingParams,
    rng: &mut R,
) -> Result<RoutingOutput, RoutingError> {
    use rayon::prelude::*;

    params.validate()?;
    let n = d.len();
    if pi.len() != n {
        return Err(RoutingError::Dimension { got: pi.len(), expected: n });
    }
    if priors.n_wards() != n {
        return Err(RoutingError::Dimension { got: priors.n_wards(), expected: n });
    }
    let travelers: Vec<Traveler> =
        requests.iter().map(|r| Traveler { budget: ward_budget(r.locations.max(1), params).min(n), month: r.month }).collect();
    let total: usize = travelers.iter().map(|t| t.budget).sum();
    let quotas = allocate_quotas(pi, total);
    let sets = assign_ward_sets(&travelers, &quotas, priors, rng, 8)?;

    let months: std::collections::BTreeSet<u8> = requests.iter().map(|r| r.month).collect();
    let blended: BTreeMap<u8, SquareMatrix<f64>> =
        months.into_iter().map(|m| (m, blend_transition(priors.transition.get(&m), &priors.pooled_transition, params.gamma))).collect();

    let itineraries = requests
        .par_iter()
        .zip(sets.par_iter())
        .map(|(r, set)| {
            let route = order_route(set, None, &blended[&r.month], pi, d, params);
            Ok(WardItinerary { agent_id: r.agent_id, month: r.month, days: split_days(&route, r.nights)? })
        })
        .collect::<Result<Vec<_>, RoutingError>>()?;
    Ok(RoutingOutput { quotas, itineraries })
}
