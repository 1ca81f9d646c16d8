//! Evaluation metrics: ward-share comparison, transition-matrix agreement
//! and Stage 3 consistency rates.
//!
//! Transition metrics compare two flow matrices whose cell `(w, w')` is the
//! number of distinct agents moving `w -> w'`. Row-JSD normalizes each row;
//! the other metrics use the flows directly.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{validate_chain, ActivityChain};
use crate::cohort::LabeledStaypoint;
use crate::geo::{DistanceMatrix, WardId};
use crate::matrix::SquareMatrix;
use crate::routing::WardItinerary;
use crate::scope::TripScope;

pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
    #[error("matrices are not conformable ({0} vs {1})")]
    Dimension(usize, usize),
    #[error("agent sets differ; missing chains for {missing_chains:?}, missing itineraries or scopes for {missing_inputs:?}")]
    MismatchedAgents { missing_chains: Vec<u64>, missing_inputs: Vec<u64> },
}

fn normalize(counts: Vec<f64>) -> Result<Vec<f64>, EvalError> {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(EvalError::Empty("no visits"));
    }
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// Share of distinct (agent, ward) visits per ward.
pub fn ward_shares_from_itineraries<'a>(
    itineraries: impl IntoIterator<Item = &'a WardItinerary>,
    n_wards: usize,
) -> Result<Vec<f64>, EvalError> {
    let mut counts = vec![0.0; n_wards];
    for it in itineraries {
        for w in it.ward_set() {
            counts[w.0] += 1.0;
        }
    }
    normalize(counts)
}

pub fn ward_shares_from_staypoints(staypoints: &[LabeledStaypoint], n_wards: usize) -> Result<Vec<f64>, EvalError> {
    let pairs: BTreeSet<(&str, WardId)> = staypoints.iter().map(|s| (s.agent.as_str(), s.ward)).collect();
    let mut counts = vec![0.0; n_wards];
    for (_, w) in pairs {
        counts[w.0] += 1.0;
    }
    normalize(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareScope {
    Annual,
    Month(u8),
}

impl ShareScope {
    pub fn label(&self) -> String {
        match self {
            ShareScope::Annual => "annual".into(),
            ShareScope::Month(m) => format!("{m:02}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WardShare {
    pub ward: String,
    pub generated: f64,
    pub reference: f64,
    /// generated − reference
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareComparison {
    pub scope: ShareScope,
    pub wards: Vec<WardShare>,
}

impl ShareComparison {
    pub fn new(scope: ShareScope, codes: &[String], generated: &[f64], reference: &[f64]) -> Self {
        let wards = codes
            .iter()
            .zip(generated.iter().zip(reference))
            .map(|(c, (g, r))| WardShare { ward: c.clone(), generated: *g, reference: *r, gap: g - r })
            .collect();
        Self { scope, wards }
    }

    /// Indices of the `k` wards with the largest reference share (ties: lower index).
    pub fn top_reference(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.wards.len()).collect();
        idx.sort_by(|a, b| self.wards[*b].reference.total_cmp(&self.wards[*a].reference).then(a.cmp(b)));
        idx.truncate(k);
        idx
    }

    pub fn max_abs_gap(&self) -> f64 {
        self.wards.iter().map(|w| w.gap.abs()).fold(0.0, f64::max)
    }
}

/// Per-month comparison of generated shares against the month visit prior.
/// Months with no generated agents or no reference vector are skipped.
pub fn monthly_share_comparisons(
    itineraries: &[WardItinerary],
    reference: &BTreeMap<u8, Vec<f64>>,
    codes: &[String],
) -> Vec<ShareComparison> {
    let mut by_month: BTreeMap<u8, Vec<&WardItinerary>> = BTreeMap::new();
    for it in itineraries {
        by_month.entry(it.month).or_default().push(it);
    }
    by_month
        .into_iter()
        .filter_map(|(m, its)| {
            let r = reference.get(&m)?;
            let g = ward_shares_from_itineraries(its, codes.len()).ok()?;
            Some(ShareComparison::new(ShareScope::Month(m), codes, &g, r))
        })
        .collect()
}

/// Jensen–Shannon divergence with base-2 logarithms, in `[0, 1]`.
/// Inputs are normalized first; an all-zero input is treated as maximally
/// different from a non-zero one.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    match (sp > 0.0, sq > 0.0) {
        (false, false) => return 0.0,
        (true, false) | (false, true) => return 1.0,
        _ => {}
    }
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).log2();
        }
    }
    total.clamp(0.0, 1.0)
}

fn check_dims(a: &SquareMatrix<f64>, b: &SquareMatrix<f64>) -> Result<(), EvalError> {
    if a.n() != b.n() {
        return Err(EvalError::Dimension(a.n(), b.n()));
    }
    Ok(())
}

/// Weighted mean of per-row JSD. Rows empty in both matrices or with zero
/// weight are skipped.
pub fn row_jsd_weighted(p: &SquareMatrix<f64>, q: &SquareMatrix<f64>, weights: &[f64]) -> Result<f64, EvalError> {
    check_dims(p, q)?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..p.n() {
        if (p.row_sum(i) <= 0.0 && q.row_sum(i) <= 0.0) || weights[i] <= 0.0 {
            continue;
        }
        num += weights[i] * jsd(p.row(i), q.row(i));
        den += weights[i];
    }
    if den <= 0.0 {
        return Err(EvalError::Empty("no rows with mass"));
    }
    Ok(num / den)
}

/// Row-JSD weighted by reference row mass.
pub fn row_jsd(reference: &SquareMatrix<f64>, generated: &SquareMatrix<f64>) -> Result<f64, EvalError> {
    let w: Vec<f64> = (0..reference.n()).map(|i| reference.row_sum(i)).collect();
    row_jsd_weighted(reference, generated, &w)
}

/// Row-JSD with every row that has mass in either matrix weighted equally.
pub fn row_jsd_unweighted(reference: &SquareMatrix<f64>, generated: &SquareMatrix<f64>) -> Result<f64, EvalError> {
    row_jsd_weighted(reference, generated, &vec![1.0; reference.n()])
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|k| ranks[*k] = r);
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation of the off-diagonal flows; `None` when either side is
/// constant (undefined).
pub fn flow_spearman(p: &SquareMatrix<f64>, q: &SquareMatrix<f64>) -> Result<Option<f64>, EvalError> {
    check_dims(p, q)?;
    let a: Vec<f64> = p.off_diagonal().map(|(_, _, v)| v).collect();
    let b: Vec<f64> = q.off_diagonal().map(|(_, _, v)| v).collect();
    if a.len() < 2 {
        return Ok(None);
    }
    Ok(pearson(&average_ranks(&a), &average_ranks(&b)))
}

/// Exact 1-D Wasserstein-1 distance between two weighted samples
/// `(value, weight)`, as the integral of the absolute CDF difference.
pub fn wasserstein1(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64, EvalError> {
    let (wa, wb): (f64, f64) = (a.iter().map(|x| x.1).sum(), b.iter().map(|x| x.1).sum());
    if wa <= 0.0 || wb <= 0.0 {
        return Err(EvalError::Empty("empty hop distribution"));
    }
    let mut xs: Vec<f64> = a.iter().chain(b).map(|x| x.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let cdf_steps = |v: &[(f64, f64)], w: f64| {
        let mut mass = vec![0.0; xs.len()];
        for (x, m) in v {
            let k = xs.partition_point(|y| y < x);
            mass[k] += m / w;
        }
        let mut acc = 0.0;
        mass.into_iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect::<Vec<f64>>()
    };
    let (fa, fb) = (cdf_steps(a, wa), cdf_steps(b, wb));
    let mut total = 0.0;
    for k in 0..xs.len().saturating_sub(1) {
        total += (fa[k] - fb[k]).abs() * (xs[k + 1] - xs[k]);
    }
    Ok(total)
}

/// Hop lengths (km) between consecutive wards of each sequence.
pub fn hop_distances(sequences: &[Vec<WardId>], d: &DistanceMatrix<f64>, include_zero: bool) -> Vec<f64> {
    sequences.iter().flat_map(|s| s.windows(2).map(|w| d.km(w[0], w[1]))).filter(|km| include_zero || *km > 0.0).collect()
}

/// W1 between the hop-length distributions of two sets of ward sequences.
pub fn distance_w1(a: &[Vec<WardId>], b: &[Vec<WardId>], d: &DistanceMatrix<f64>, include_zero: bool) -> Result<f64, EvalError> {
    let ha: Vec<(f64, f64)> = hop_distances(a, d, include_zero).into_iter().map(|x| (x, 1.0)).collect();
    let hb: Vec<(f64, f64)> = hop_distances(b, d, include_zero).into_iter().map(|x| (x, 1.0)).collect();
    wasserstein1(&ha, &hb)
}

/// Hop lengths implied by a flow matrix, each weighted by its flow.
pub fn flow_hops(flows: &SquareMatrix<f64>, d: &DistanceMatrix<f64>) -> Vec<(f64, f64)> {
    (0..flows.n())
        .flat_map(|i| (0..flows.n()).map(move |j| (i, j)))
        .filter(|(i, j)| flows.get(*i, *j) > 0.0)
        .map(|(i, j)| (d.km(WardId(i), WardId(j)), flows.get(i, j)))
        .collect()
}

/// Share of the `k` heaviest reference edges (off-diagonal, ties by edge
/// index) that carry generated flow. `k` shrinks, with a warning, when the
/// reference has fewer non-zero edges.
pub fn topk_recall(reference: &SquareMatrix<f64>, generated: &SquareMatrix<f64>, k: usize) -> Result<f64, EvalError> {
    check_dims(reference, generated)?;
    let n = reference.n();
    let mut edges: Vec<(usize, usize, f64)> = reference.off_diagonal().filter(|e| e.2 > 0.0).collect();
    edges.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0 * n + a.1).cmp(&(b.0 * n + b.1))));
    let k_eff = k.min(edges.len());
    if k_eff == 0 {
        return Err(EvalError::Empty("no reference edges"));
    }
    if k_eff < k {
        warn!("only {k_eff} reference edges carry mass; top-{k} recall uses {k_eff}");
    }
    let hit = edges[..k_eff].iter().filter(|(i, j, _)| generated.get(*i, *j) > 0.0).count();
    Ok(hit as f64 / k_eff as f64)
}

/// Fraction of off-diagonal reference flow on edges the generated flows use.
pub fn mass_coverage(reference: &SquareMatrix<f64>, generated: &SquareMatrix<f64>) -> Result<f64, EvalError> {
    check_dims(reference, generated)?;
    let (mut covered, mut total) = (0.0, 0.0);
    for (i, j, v) in reference.off_diagonal() {
        total += v;
        if generated.get(i, j) > 0.0 {
            covered += v;
        }
    }
    if total <= 0.0 {
        return Err(EvalError::Empty("no reference flow"));
    }
    Ok(covered / total)
}

/// Distinct-agent flows along each itinerary's route (consecutive distinct
/// wards, overnight moves included).
pub fn itinerary_flows<'a>(itineraries: impl IntoIterator<Item = &'a WardItinerary>, n_wards: usize) -> SquareMatrix<f64> {
    let mut f = SquareMatrix::zeros(n_wards);
    for it in itineraries {
        let pairs: BTreeSet<(usize, usize)> = it.route().windows(2).map(|w| (w[0].0, w[1].0)).collect();
        for (a, b) in pairs {
            f.add(a, b, 1.0);
        }
    }
    f
}

pub fn counts_to_matrix(counts: &[Vec<usize>]) -> SquareMatrix<f64> {
    let rows: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|c| *c as f64).collect()).collect();
    SquareMatrix::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub row_jsd: f64,
    /// `None` when either flow vector is constant.
    pub flow_spearman: Option<f64>,
    pub distance_w1_km: f64,
    pub topk: usize,
    pub topk_recall: f64,
    pub mass_coverage: f64,
}

pub fn transition_report(
    reference: &SquareMatrix<f64>,
    generated: &SquareMatrix<f64>,
    d: &DistanceMatrix<f64>,
    k: usize,
) -> Result<TransitionReport, EvalError> {
    Ok(TransitionReport {
        row_jsd: row_jsd(reference, generated)?,
        flow_spearman: flow_spearman(reference, generated)?,
        distance_w1_km: wasserstein1(&flow_hops(reference, d), &flow_hops(generated, d))?,
        topk: k,
        topk_recall: topk_recall(reference, generated, k)?,
        mass_coverage: mass_coverage(reference, generated)?,
    })
}

/// Population Stage 3 rates; each is the share of chains passing a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub chains: usize,
    pub day_coverage: f64,
    /// Share of chains whose every episode sits in a ward of its day.
    pub ward_adherence: f64,
    pub night_alignment: f64,
    pub hallucination: f64,
    /// Episode-weighted adherence over all chains.
    pub episode_ward_adherence: f64,
}

pub fn consistency_report(
    chains: &[ActivityChain],
    itineraries: &BTreeMap<u64, WardItinerary>,
    scopes: &BTreeMap<u64, TripScope>,
) -> Result<ConsistencyReport, EvalError> {
    let chain_ids: BTreeSet<u64> = chains.iter().map(|c| c.agent_id).collect();
    let input_ids: BTreeSet<u64> = itineraries.keys().filter(|k| scopes.contains_key(k)).copied().collect();
    let missing_inputs: Vec<u64> = chain_ids.difference(&input_ids).copied().collect();
    let missing_chains: Vec<u64> = itineraries.keys().filter(|k| !chain_ids.contains(k)).copied().collect();
    if !missing_inputs.is_empty() || !missing_chains.is_empty() {
        return Err(EvalError::MismatchedAgents { missing_chains, missing_inputs });
    }
    if chains.is_empty() {
        return Err(EvalError::Empty("no chains"));
    }
    let (mut cov, mut adh, mut night, mut hall) = (0usize, 0usize, 0usize, 0usize);
    let (mut adherent_eps, mut eps) = (0.0, 0usize);
    for c in chains {
        let d = validate_chain(c, &itineraries[&c.agent_id], scopes[&c.agent_id].nights);
        cov += usize::from(d.day_coverage);
        adh += usize::from(d.ward_adherence >= 1.0);
        night += usize::from(d.night_alignment);
        hall += usize::from(d.hallucination);
        adherent_eps += d.ward_adherence * c.episodes.len() as f64;
        eps += c.episodes.len();
    }
    let n = chains.len() as f64;
    Ok(ConsistencyReport {
        chains: chains.len(),
        day_coverage: cov as f64 / n,
        ward_adherence: adh as f64 / n,
        night_alignment: night as f64 / n,
        hallucination: hall as f64 / n,
        episode_ward_adherence: if eps == 0 { 0.0 } else { adherent_eps / eps as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoPoint, Wards};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_flows(rng: &mut ChaCha8Rng, n: usize, density: f64) -> SquareMatrix<f64> {
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(density) {
                    m.set(i, j, rng.random_range(1..50) as f64);
                }
            }
        }
        m
    }

    /// JSD as `H(M) - (H(P) + H(Q)) / 2`.
    fn jsd_entropy_form(p: &[f64], q: &[f64]) -> f64 {
        let h = |v: &[f64]| -v.iter().filter(|x| **x > 0.0).map(|x| x * x.log2()).sum::<f64>();
        let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
        let pn: Vec<f64> = p.iter().map(|x| x / sp).collect();
        let qn: Vec<f64> = q.iter().map(|x| x / sq).collect();
        let m: Vec<f64> = pn.iter().zip(&qn).map(|(a, b)| 0.5 * (a + b)).collect();
        h(&m) - 0.5 * (h(&pn) + h(&qn))
    }

    #[test]
    fn jsd_bounds_and_oracle() {
        assert_eq!(jsd(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
            let q: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
            assert!((jsd(&p, &q) - jsd_entropy_form(&p, &q)).abs() < 1e-12);
        }
    }

    #[test]
    fn row_jsd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(2..=10);
            let (p, q) = (random_flows(&mut rng, n, 0.7), random_flows(&mut rng, n, 0.7));
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..n {
                let (rp, rq): (f64, f64) = (p.row(i).iter().sum(), q.row(i).iter().sum());
                if rp == 0.0 {
                    continue;
                }
                let v = if rq == 0.0 { 1.0 } else { jsd_entropy_form(p.row(i), q.row(i)) };
                num += rp * v;
                den += rp;
            }
            if den == 0.0 {
                continue;
            }
            assert!((row_jsd(&p, &q).unwrap() - num / den).abs() < 1e-12);
            assert_eq!(row_jsd(&p, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn row_jsd_symmetric_with_symmetric_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (p, q) = (random_flows(&mut rng, 6, 0.6), random_flows(&mut rng, 6, 0.6));
        let w: Vec<f64> = (0..6).map(|i| p.row_sum(i) + q.row_sum(i)).collect();
        let a = row_jsd_weighted(&p, &q, &w).unwrap();
        let b = row_jsd_weighted(&q, &p, &w).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    fn brute_spearman(a: &[f64], b: &[f64]) -> f64 {
        // rank = 1 + #smaller + (#equal - 1) / 2
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|x| {
                    let less = v.iter().filter(|y| *y < x).count() as f64;
                    let eq = v.iter().filter(|y| *y == x).count() as f64;
                    1.0 + less + (eq - 1.0) / 2.0
                })
                .collect()
        };
        let (ra, rb) = (rank(a), rank(b));
        let n = ra.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn spearman_identity_reversal_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_flows(&mut rng, 5, 0.8);
        assert_eq!(flow_spearman(&p, &p).unwrap(), Some(1.0));
        let rev = p.map(|v| -v);
        assert_eq!(flow_spearman(&p, &rev).unwrap(), Some(-1.0));
        for _ in 0..100 {
            let n = rng.random_range(2..=10);
            let (a, b) = (random_flows(&mut rng, n, 0.5), random_flows(&mut rng, n, 0.5));
            let va: Vec<f64> = a.off_diagonal().map(|x| x.2).collect();
            let vb: Vec<f64> = b.off_diagonal().map(|x| x.2).collect();
            match flow_spearman(&a, &b).unwrap() {
                Some(s) => assert!((s - brute_spearman(&va, &vb)).abs() < 1e-12),
                None => assert!(va.iter().all(|x| *x == va[0]) || vb.iter().all(|x| *x == vb[0])),
            }
        }
        let q = random_flows(&mut rng, 3, 0.9);
        assert_eq!(flow_spearman(&SquareMatrix::zeros(3), &q).unwrap(), None);
    }

    /// W1 through the quantile functions: integrate |F_a^-1(u) - F_b^-1(u)| over u.
    fn w1_quantile(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
        let prep = |v: &[(f64, f64)]| {
            let mut v = v.to_vec();
            v.sort_by(|x, y| x.0.total_cmp(&y.0));
            let t: f64 = v.iter().map(|x| x.1).sum();
            let mut acc = 0.0;
            v.into_iter()
                .map(|(x, w)| {
                    acc += w / t;
                    (x, acc)
                })
                .collect::<Vec<_>>()
        };
        let (qa, qb) = (prep(a), prep(b));
        let mut cuts: Vec<f64> = qa.iter().chain(&qb).map(|x| x.1.min(1.0)).collect();
        cuts.push(0.0);
        cuts.sort_by(f64::total_cmp);
        let inv = |q: &[(f64, f64)], u: f64| q.iter().find(|x| x.1 >= u).unwrap_or(q.last().unwrap()).0;
        cuts.windows(2)
            .map(|c| {
                let mid = 0.5 * (c[0] + c[1]);
                (c[1] - c[0]) * (inv(&qa, mid) - inv(&qb, mid)).abs()
            })
            .sum()
    }

    #[test]
    fn wasserstein_cases() {
        assert_eq!(wasserstein1(&[(0.0, 1.0)], &[(3.5, 1.0)]).unwrap(), 3.5);
        assert_eq!(wasserstein1(&[(1.0, 2.0), (4.0, 1.0)], &[(1.0, 2.0), (4.0, 1.0)]).unwrap(), 0.0);
        assert!(wasserstein1(&[], &[(1.0, 1.0)]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let na = rng.random_range(1..=20);
            let nb = rng.random_range(1..=20);
            let a: Vec<(f64, f64)> = (0..na).map(|_| (rng.random_range(0.0..20.0), rng.random_range(0.1..3.0))).collect();
            let b: Vec<(f64, f64)> = (0..nb).map(|_| (rng.random_range(0.0..20.0), rng.random_range(0.1..3.0))).collect();
            assert!((wasserstein1(&a, &b).unwrap() - w1_quantile(&a, &b)).abs() < 1e-12);
            assert!((wasserstein1(&a, &b).unwrap() - wasserstein1(&b, &a).unwrap()).abs() < 1e-12);
        }
        // equal-size unweighted samples: mean gap of sorted samples
        let mut a: Vec<f64> = (0..15).map(|_| rng.random_range(0.0..9.0)).collect();
        let mut b: Vec<f64> = (0..15).map(|_| rng.random_range(0.0..9.0)).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let sorted_gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 15.0;
        let wa: Vec<_> = a.iter().map(|x| (*x, 1.0)).collect();
        let wb: Vec<_> = b.iter().map(|x| (*x, 1.0)).collect();
        assert!((wasserstein1(&wa, &wb).unwrap() - sorted_gap).abs() < 1e-12);
    }

    #[test]
    fn distance_w1_on_sequences() {
        let wards = Wards::new(["a", "b", "c"]).unwrap();
        let rows = vec![vec![0.0, 2.0, 5.0], vec![2.0, 0.0, 3.0], vec![5.0, 3.0, 0.0]];
        let d = DistanceMatrix::from_rows(&wards, rows).unwrap();
        let s = |v: &[usize]| v.iter().map(|i| WardId(*i)).collect::<Vec<_>>();
        let a = vec![s(&[0, 1])];
        let b = vec![s(&[0, 2])];
        assert_eq!(distance_w1(&a, &b, &d, true).unwrap(), 3.0);
        let zero = vec![s(&[1, 1, 2])];
        assert_eq!(hop_distances(&zero, &d, true), vec![0.0, 3.0]);
        assert_eq!(hop_distances(&zero, &d, false), vec![3.0]);
        assert!(distance_w1(&[s(&[0])], &b, &d, true).is_err());
    }

    fn brute_topk(r: &SquareMatrix<f64>, g: &SquareMatrix<f64>, k: usize) -> f64 {
        let n = r.n();
        let mut chosen = BTreeSet::new();
        let nonzero = r.off_diagonal().filter(|e| e.2 > 0.0).count();
        let k = k.min(nonzero);
        while chosen.len() < k {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..n {
                for j in 0..n {
                    let e = i * n + j;
                    if i == j || chosen.contains(&e) || r.get(i, j) <= 0.0 {
                        continue;
                    }
                    if best.is_none_or(|(_, v)| r.get(i, j) > v) {
                        best = Some((e, r.get(i, j)));
                    }
                }
            }
            chosen.insert(best.unwrap().0);
        }
        chosen.iter().filter(|e| g.get(*e / n, *e % n) > 0.0).count() as f64 / k as f64
    }

    #[test]
    fn recall_and_coverage_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let n = rng.random_range(3..=10);
            let (r, g) = (random_flows(&mut rng, n, 0.6), random_flows(&mut rng, n, 0.5));
            if r.off_diagonal().all(|e| e.2 == 0.0) {
                continue;
            }
            let k = rng.random_range(1..=25);
            assert!((topk_recall(&r, &g, k).unwrap() - brute_topk(&r, &g, k)).abs() < 1e-12);
            let total: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| r.get(i, j)).sum();
            let hit: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|(i, j)| i != j && g.get(*i, *j) > 0.0)
                .map(|(i, j)| r.get(i, j))
                .sum();
            assert!((mass_coverage(&r, &g).unwrap() - hit / total).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_flows(&mut rng, 6, 0.9);
        assert_eq!(topk_recall(&r, &r, 20).unwrap(), 1.0);
        assert_eq!(topk_recall(&r, &SquareMatrix::zeros(6), 20).unwrap(), 0.0);
        let mut full = SquareMatrix::zeros(6);
        full.off_diagonal().collect::<Vec<_>>().into_iter().for_each(|(i, j, _)| full.set(i, j, 1.0));
        assert_eq!(mass_coverage(&r, &full).unwrap(), 1.0);
        assert_eq!(mass_coverage(&r, &SquareMatrix::zeros(6)).unwrap(), 0.0);
    }

    #[test]
    fn shares_count_unique_agents() {
        let it = |id: u64, days: Vec<Vec<usize>>| WardItinerary {
            agent_id: id,
            month: 1,
            days: days.into_iter().map(|d| d.into_iter().map(WardId).collect()).collect(),
        };
        let all_a = [it(1, vec![vec![0], vec![0]]), it(2, vec![vec![0]])];
        assert_eq!(ward_shares_from_itineraries(&all_a, 2).unwrap(), vec![1.0, 0.0]);
        let mixed = [it(1, vec![vec![0, 1], vec![1]]), it(2, vec![vec![1]])];
        assert_eq!(ward_shares_from_itineraries(&mixed, 2).unwrap(), vec![1.0 / 3.0, 2.0 / 3.0]);
        let sp = |a: &str, w: usize| LabeledStaypoint { agent: a.into(), ward: WardId(w), start: 0 };
        let s = ward_shares_from_staypoints(&[sp("x", 0), sp("x", 0), sp("y", 1)], 2).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
    }

    #[test]
    fn identity_report() {
        let wards = Wards::new((0..5).map(|i| format!("w{i}"))).unwrap();
        let cents: Vec<_> = (0..5).map(|i| (WardId(i), GeoPoint::new(35.6 + 0.01 * i as f64, 139.7).unwrap())).collect();
        let d = DistanceMatrix::from_centroids(&wards, &cents).unwrap();
        let f = random_flows(&mut ChaCha8Rng::seed_from_u64(2), 5, 0.7);
        let r = transition_report(&f, &f, &d, 20).unwrap();
        assert_eq!((r.row_jsd, r.flow_spearman, r.distance_w1_km, r.topk_recall, r.mass_coverage), (0.0, Some(1.0), 0.0, 1.0, 1.0));
    }

    proptest! {
        #[test]
        fn metric_ranges(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_flows(&mut rng, 6, 0.6), random_flows(&mut rng, 6, 0.6));
            prop_assume!(a.off_diagonal().any(|e| e.2 > 0.0));
            let j = row_jsd(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&j));
            if let Some(s) = flow_spearman(&a, &b).unwrap() {
                prop_assert!((-1.0..=1.0).contains(&s));
            }
            prop_assert!((0.0..=1.0).contains(&topk_recall(&a, &b, 20).unwrap()));
            prop_assert!((0.0..=1.0).contains(&mass_coverage(&a, &b).unwrap()));
        }
    }
}
