//! Stage orchestration: each stage reads its inputs from files, runs, and
//! writes its outputs under the configured output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{Backend, BackendError, ChainGenerator, ChainSource, GenerateError, RemoteClient};
use crate::cohort::{
    build_monthly_priors, calibrate_thresholds, extract_cohort, filter_sparse_agents, merge_pings, Calibration, CohortError, CohortResult,
    LabeledStaypoint, MonthlyPriors, PoiEntry, Staypoint,
};
use crate::config::{BackendKind, ConfigError, ExtractConfig, PipelineConfig, TEMPLATE};
use crate::eval::{
    consistency_report, counts_to_matrix, itinerary_flows, monthly_share_comparisons, transition_report, ward_shares_from_itineraries,
    ConsistencyReport, EvalError, ShareComparison, ShareScope, TransitionReport,
};
use crate::geo::{DistanceMatrix, GeoError, GeoPoint, WardId, WardLocator, Wards};
use crate::io::{self, IoError, ScopeRecord};
use crate::population::{households, synthesize_population, AgentProfile, HouseholdRole, PopulationError, SurveyMarginals};
use crate::routing::{build_itineraries, RouteRequest, RoutingError, WardItinerary};
use crate::scope::{train, ScopeError, ScopeModel, TrainingExample, TripScope};
use crate::seed::rng_for;
use crate::synthetic::{self, GpsOptions};

pub const PRIORS_FILE: &str = "priors.json";
pub const COHORT_FILE: &str = "cohort.csv";
pub const POPULATION_FILE: &str = "population.jsonl";
pub const SCOPE_MODEL_FILE: &str = "scope_model.json";
pub const SCOPES_FILE: &str = "scopes.jsonl";
pub const ITINERARIES_FILE: &str = "itineraries.jsonl";
pub const QUOTAS_FILE: &str = "quotas.csv";
pub const CHAINS_FILE: &str = "chains.jsonl";
pub const CHAIN_SOURCES_FILE: &str = "chain_sources.jsonl";
pub const EVAL_DIR: &str = "eval";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("missing input for {stage}: {path} (run `{producer}` first)")]
    MissingUpstream { stage: &'static str, producer: &'static str, path: PathBuf },
    #[error("tourist cohort is empty: {0}")]
    EmptyCohort(String),
    #[error("geography: {0}")]
    Geo(#[from] GeoError),
    #[error("marginals: {0}")]
    Population(#[from] PopulationError),
    #[error("staypoints: {0}")]
    Cohort(#[from] CohortError),
    #[error("trip scope: {0}")]
    Scope(#[from] ScopeError),
    #[error("routing: {0}")]
    Routing(#[from] RoutingError),
    #[error("chains: {0}")]
    Generate(GenerateError),
    #[error("remote backend: {0}")]
    Remote(BackendError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Invalid(String),
}

impl From<GenerateError> for PipelineError {
    fn from(e: GenerateError) -> Self {
        match e {
            GenerateError::Backend(b) => PipelineError::Remote(b),
            other => PipelineError::Generate(other),
        }
    }
}

impl PipelineError {
    /// Process exit code: 1 validation, 2 I/O, 3 remote backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io(e) if !e.is_validation() => 2,
            PipelineError::Config(ConfigError::Read { .. } | ConfigError::MissingFile { .. }) => 2,
            PipelineError::Fs { .. } | PipelineError::MissingUpstream { .. } => 2,
            PipelineError::Population(PopulationError::Io(_)) => 2,
            PipelineError::Remote(BackendError::Config(_)) => 1,
            PipelineError::Remote(_) => 3,
            _ => 1,
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn out_path(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.paths.output_dir.join(name)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Fs { path: dir.to_path_buf(), source })
}

fn upstream(cfg: &PipelineConfig, name: &str, stage: &'static str, producer: &'static str) -> Result<PathBuf> {
    let p = out_path(cfg, name);
    if p.exists() {
        Ok(p)
    } else {
        Err(PipelineError::MissingUpstream { stage, producer, path: p })
    }
}

/// Ward registry, centroids and the km distance matrix.
#[derive(Debug, Clone)]
pub struct Geography {
    pub wards: Wards,
    pub centroids: Vec<(WardId, GeoPoint<f64>)>,
    pub distances: DistanceMatrix<f64>,
}

impl Geography {
    pub fn from_centroids(wards: Wards, centroids: Vec<(WardId, GeoPoint<f64>)>) -> Result<Self> {
        let distances = DistanceMatrix::from_centroids(&wards, &centroids)?;
        Ok(Self { wards, centroids, distances })
    }

    pub fn locator(&self) -> WardLocator {
        WardLocator::NearestCentroid(self.centroids.iter().map(|(_, p)| *p).collect())
    }

    /// Loads centroids and, when configured, replaces the great-circle matrix
    /// with the supplied one (same ward order required).
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let (wards, cents) = io::read_centroids(cfg.require("centroids")?)?;
        let mut geo = Self::from_centroids(wards, cents)?;
        if cfg.paths.distance_matrix.is_some() {
            let path = cfg.require("distance_matrix")?;
            let (dw, d) = io::read_distance_matrix(path)?;
            if dw.codes() != geo.wards.codes() {
                return Err(PipelineError::Invalid(format!("{}: ward order differs from the centroid file", path.display())));
            }
            geo.distances = d;
        }
        Ok(geo)
    }
}

#[derive(Debug, Clone)]
pub struct ExtractResult {
    pub priors: MonthlyPriors,
    pub cohort: CohortResult,
    pub calibration: Calibration,
    /// Agents before and after the sparse-trace filter.
    pub agents_in: usize,
    pub agents_kept: usize,
}

/// Stage 0 on in-memory inputs: sparse filter, tourist rule, ward labelling and priors.
pub fn derive_priors(
    staypoints: Vec<Staypoint>,
    catalog: &[PoiEntry],
    marginals: Option<&SurveyMarginals>,
    ecfg: &ExtractConfig,
    geo: &Geography,
) -> Result<ExtractResult> {
    let agents_in = staypoints.iter().map(|s| s.agent.as_str()).collect::<BTreeSet<_>>().len();
    let kept = filter_sparse_agents(staypoints, ecfg.min_distinct_locations);
    let agents_kept = kept.iter().map(|s| s.agent.as_str()).collect::<BTreeSet<_>>().len();
    let calibration = match marginals {
        Some(m) => calibrate_thresholds(m, &ecfg.thresholds, ecfg.eta),
        None => Calibration { thresholds: ecfg.thresholds, warnings: vec!["no marginals; default thresholds".into()] },
    };
    let clock = ecfg.clock();
    let cohort = extract_cohort(&kept, catalog, ecfg.dwell_floor_s, &calibration.thresholds, &ecfg.category_filter(), clock);
    if cohort.tourists.is_empty() {
        return Err(PipelineError::EmptyCohort(format!("no agent of {agents_kept} (of {agents_in}) passed the tourist rule")));
    }
    let locator = geo.locator();
    let labeled: Vec<LabeledStaypoint> = kept
        .iter()
        .filter(|s| cohort.tourists.contains(&s.agent))
        .map(|s| LabeledStaypoint { agent: s.agent.clone(), ward: locator.locate(s.loc), start: s.start })
        .collect();
    let priors = build_monthly_priors(&labeled, geo.wards.codes(), clock);
    info!("cohort: {} tourists of {agents_kept} agents ({agents_in} before the sparse filter)", cohort.tourists.len());
    Ok(ExtractResult { priors, cohort, calibration, agents_in, agents_kept })
}

fn load_staypoints(cfg: &PipelineConfig) -> Result<Vec<Staypoint>> {
    if cfg.paths.pings.is_some() {
        let pings = io::read_pings(cfg.require("pings")?)?;
        let e = &cfg.extract;
        return Ok(merge_pings(&pings, e.space_eps_m, e.time_eps_s)?);
    }
    Ok(io::read_staypoints(cfg.require("staypoints")?)?)
}

fn load_marginals(cfg: &PipelineConfig) -> Result<SurveyMarginals> {
    Ok(SurveyMarginals::load(cfg.require("marginals")?)?)
}

/// Stage 0: writes the priors and per-agent cohort statistics.
pub fn extract(cfg: &PipelineConfig) -> Result<ExtractResult> {
    let geo = Geography::load(cfg)?;
    let catalog = io::read_poi_catalog(cfg.require("poi")?)?;
    let staypoints = load_staypoints(cfg)?;
    let marginals = match cfg.paths.marginals {
        Some(_) => Some(load_marginals(cfg)?),
        None => None,
    };
    let res = derive_priors(staypoints, &catalog, marginals.as_ref(), &cfg.extract, &geo)?;
    ensure_dir(&cfg.paths.output_dir)?;
    io::write_json(&out_path(cfg, PRIORS_FILE), &res.priors)?;
    let rows = res.cohort.stats.iter().map(|(agent, s)| {
        vec![
            agent.clone(),
            s.episode_days.to_string(),
            s.max_consecutive_sightseeing.to_string(),
            s.distinct_pois.to_string(),
            s.sightseeing_days.to_string(),
            format!("{:.4}", s.sightseeing_hours),
            s.active_days.to_string(),
            res.cohort.tourists.contains(agent).to_string(),
        ]
    });
    io::write_csv_rows(
        &out_path(cfg, COHORT_FILE),
        &[
            "agent_id",
            "episode_days",
            "max_consecutive_sightseeing",
            "distinct_pois",
            "sightseeing_days",
            "sightseeing_hours",
            "active_days",
            "tourist",
        ],
        rows,
    )?;
    Ok(res)
}

/// Synthesizes the base population; `n` overrides the configured size.
pub fn synth(cfg: &PipelineConfig, n: Option<usize>) -> Result<Vec<AgentProfile>> {
    let m = load_marginals(cfg)?;
    let pop = synthesize_population(&m, n.unwrap_or(cfg.synth.agents), cfg.stage_seed("synth"))?;
    ensure_dir(&cfg.paths.output_dir)?;
    io::write_jsonl(&out_path(cfg, POPULATION_FILE), &pop)?;
    info!("synthesized {} agents in {} households", pop.len(), households(&pop).len());
    Ok(pop)
}

/// Samples one scope per household head; companions take the head's scope.
pub fn predict_scopes(model: &ScopeModel, agents: &[AgentProfile], alpha: f64, seed: u64) -> Result<BTreeMap<u64, TripScope>> {
    let mut out = BTreeMap::new();
    for members in households(agents).values() {
        let head = members[0];
        let x = model.schema.encode(head)?;
        let mut rng = rng_for(seed, "scope", head.agent_id);
        let s = model.blended_sample(&x, alpha, &mut rng)?;
        for m in members {
            out.insert(m.agent_id, s);
        }
    }
    Ok(out)
}

/// Stage 1: trains on the observed scopes and predicts every agent.
pub fn scope(cfg: &PipelineConfig) -> Result<BTreeMap<u64, TripScope>> {
    let pop: Vec<AgentProfile> = io::read_jsonl(&upstream(cfg, POPULATION_FILE, "scope", "synth")?)?;
    let training: Vec<TrainingExample> = io::read_jsonl(cfg.require("training")?)?;
    let model = train(&training, &cfg.scope)?;
    let scopes = predict_scopes(&model, &pop, cfg.scope.alpha, cfg.stage_seed("scope"))?;
    io::write_json(&out_path(cfg, SCOPE_MODEL_FILE), &model)?;
    io::write_jsonl(
        &out_path(cfg, SCOPES_FILE),
        scopes.iter().map(|(a, s)| ScopeRecord { agent_id: *a, nights: s.nights, locations: s.locations }),
    )?;
    Ok(scopes)
}

#[derive(Debug, Clone)]
pub struct RouteResult {
    pub itineraries: Vec<WardItinerary>,
    pub quotas: Vec<usize>,
}

/// Routes household heads; companions share their head's itinerary.
pub fn route_population(
    agents: &[AgentProfile],
    scopes: &BTreeMap<u64, TripScope>,
    pi: &[f64],
    priors: &MonthlyPriors,
    geo: &Geography,
    params: &crate::routing::RoutingParams,
    seed: u64,
) -> Result<RouteResult> {
    let hh = households(agents);
    let mut requests = Vec::with_capacity(hh.len());
    for members in hh.values() {
        let head = members[0];
        let s = scopes.get(&head.agent_id).ok_or_else(|| PipelineError::Invalid(format!("no scope for agent {}", head.agent_id)))?;
        requests.push(RouteRequest { agent_id: head.agent_id, month: head.travel_month, nights: s.nights, locations: s.locations });
    }
    let mut rng = rng_for(seed, "route", 0);
    let out = build_itineraries(&requests, pi, priors, &geo.distances, params, &mut rng)?;
    let by_head: BTreeMap<u64, &WardItinerary> = out.itineraries.iter().map(|it| (it.agent_id, it)).collect();
    let mut all = Vec::with_capacity(agents.len());
    for members in hh.values() {
        let it = by_head[&members[0].agent_id];
        for m in members {
            all.push(WardItinerary { agent_id: m.agent_id, ..it.clone() });
        }
    }
    all.sort_by_key(|it| it.agent_id);
    Ok(RouteResult { itineraries: all, quotas: out.quotas })
}

fn read_scopes(cfg: &PipelineConfig, stage: &'static str) -> Result<BTreeMap<u64, TripScope>> {
    let recs: Vec<ScopeRecord> = io::read_jsonl(&upstream(cfg, SCOPES_FILE, stage, "scope")?)?;
    Ok(io::scopes_by_agent(&recs))
}

/// Stage 2: writes itineraries and per-ward quotas.
pub fn route(cfg: &PipelineConfig) -> Result<RouteResult> {
    let geo = Geography::load(cfg)?;
    let pop: Vec<AgentProfile> = io::read_jsonl(&upstream(cfg, POPULATION_FILE, "route", "synth")?)?;
    let scopes = read_scopes(cfg, "route")?;
    let priors: MonthlyPriors = io::read_json(&upstream(cfg, PRIORS_FILE, "route", "extract")?)?;
    if priors.wards != geo.wards.codes() {
        return Err(PipelineError::Invalid("priors were built for a different ward list".into()));
    }
    let pi = load_marginals(cfg)?.ward_vector(&geo.wards)?;
    let res = route_population(&pop, &scopes, &pi, &priors, &geo, &cfg.route, cfg.stage_seed("route"))?;
    io::write_itineraries(&out_path(cfg, ITINERARIES_FILE), &res.itineraries, &geo.wards)?;
    let heads: BTreeSet<u64> = pop.iter().filter(|a| a.household_role == HouseholdRole::Head).map(|a| a.agent_id).collect();
    let mut assigned = vec![0usize; geo.wards.len()];
    for it in res.itineraries.iter().filter(|it| heads.contains(&it.agent_id)) {
        for w in it.ward_set() {
            assigned[w.0] += 1;
        }
    }
    io::write_csv_rows(
        &out_path(cfg, QUOTAS_FILE),
        &["ward", "pi", "quota", "assigned"],
        geo.wards
            .ids()
            .map(|w| vec![geo.wards.code(w).to_string(), pi[w.0].to_string(), res.quotas[w.0].to_string(), assigned[w.0].to_string()]),
    )?;
    Ok(res)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SourceRecord {
    agent_id: u64,
    #[serde(flatten)]
    source: ChainSource,
}

/// Stage 3: writes chains and where each came from. A remote failure
/// leaves no chain file behind.
pub fn chains(cfg: &PipelineConfig) -> Result<Vec<crate::chain::GeneratedChain>> {
    let geo = Geography::load(cfg)?;
    let pop: Vec<AgentProfile> = io::read_jsonl(&upstream(cfg, POPULATION_FILE, "chains", "synth")?)?;
    let scopes = read_scopes(cfg, "chains")?;
    let its = io::read_itineraries(&upstream(cfg, ITINERARIES_FILE, "chains", "route")?, &geo.wards)?;
    let its: BTreeMap<u64, WardItinerary> = its.into_iter().map(|it| (it.agent_id, it)).collect();
    let backend = match cfg.chains.backend {
        BackendKind::Fallback => Backend::Fallback,
        BackendKind::Remote => Backend::Remote(RemoteClient::new(cfg.chains.remote.clone()).map_err(PipelineError::Remote)?),
    };
    let generator = ChainGenerator { backend: &backend, wards: &geo.wards, distances: &geo.distances, opts: cfg.generate_options() };
    let chains_path = out_path(cfg, CHAINS_FILE);
    let _ = std::fs::remove_file(&chains_path);
    let generated = generator.run(&pop, &scopes, &its)?;
    let plain: Vec<_> = generated.iter().map(|g| g.chain.clone()).collect();
    io::write_chains(&chains_path, &plain, &geo.wards)?;
    io::write_jsonl(
        &out_path(cfg, CHAIN_SOURCES_FILE),
        generated.iter().map(|g| SourceRecord { agent_id: g.chain.agent_id, source: g.source }),
    )?;
    Ok(generated)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub annual: ShareComparison,
    pub monthly: Vec<ShareComparison>,
    pub transition: TransitionReport,
    pub consistency: ConsistencyReport,
}

/// All reports on in-memory stage outputs.
pub fn evaluate(
    itineraries: &[WardItinerary],
    chains: &[crate::chain::ActivityChain],
    scopes: &BTreeMap<u64, TripScope>,
    priors: &MonthlyPriors,
    pi: &[f64],
    geo: &Geography,
    top_k: usize,
) -> Result<EvalReport> {
    let n = geo.wards.len();
    let codes = geo.wards.codes();
    let gen = ward_shares_from_itineraries(itineraries, n)?;
    let annual = ShareComparison::new(ShareScope::Annual, codes, &gen, pi);
    let monthly = monthly_share_comparisons(itineraries, &priors.visit, codes);
    let reference = counts_to_matrix(&priors.support.pooled_transition);
    let generated = itinerary_flows(itineraries, n);
    let transition = transition_report(&reference, &generated, &geo.distances, top_k)?;
    let by_agent: BTreeMap<u64, WardItinerary> = itineraries.iter().map(|it| (it.agent_id, it.clone())).collect();
    let consistency = consistency_report(chains, &by_agent, scopes)?;
    Ok(EvalReport { annual, monthly, transition, consistency })
}

/// Writes share CSVs, the gap heatmap, and the transition and consistency reports.
pub fn eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    let geo = Geography::load(cfg)?;
    let its = io::read_itineraries(&upstream(cfg, ITINERARIES_FILE, "eval", "route")?, &geo.wards)?;
    let chains = io::read_chains(&upstream(cfg, CHAINS_FILE, "eval", "chains")?, &geo.wards)?;
    let scopes = read_scopes(cfg, "eval")?;
    let priors: MonthlyPriors = io::read_json(&upstream(cfg, PRIORS_FILE, "eval", "extract")?)?;
    let pi = load_marginals(cfg)?.ward_vector(&geo.wards)?;
    let report = evaluate(&its, &chains, &scopes, &priors, &pi, &geo, cfg.eval.top_k)?;
    let dir = out_path(cfg, EVAL_DIR);
    ensure_dir(&dir)?;
    io::write_share_csv(&dir.join("annual_shares.csv"), std::slice::from_ref(&report.annual))?;
    io::write_share_csv(&dir.join("monthly_shares.csv"), &report.monthly)?;
    io::write_gap_heatmap(&dir.join("monthly_gap_heatmap.csv"), &report.monthly)?;
    io::write_json(&dir.join("transition_report.json"), &report.transition)?;
    io::write_json(&dir.join("consistency.json"), &report.consistency)?;
    let c = &report.consistency;
    info!(
        "annual max |gap| {:.4}; row-JSD {:.4}; coverage {:.3}; day coverage {:.3}, adherence {:.3}, alignment {:.3}, hallucination {:.3}",
        report.annual.max_abs_gap(),
        report.transition.row_jsd,
        report.transition.mass_coverage,
        c.day_coverage,
        c.ward_adherence,
        c.night_alignment,
        c.hallucination
    );
    Ok(report)
}

/// Every stage in order.
pub fn run_all(cfg: &PipelineConfig) -> Result<EvalReport> {
    extract(cfg)?;
    synth(cfg, None)?;
    scope(cfg)?;
    route(cfg)?;
    chains(cfg)?;
    eval(cfg)
}

/// Sizes of a generated fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureOptions {
    pub agents: usize,
    pub gps: GpsOptions,
    pub training: usize,
    pub seed: u64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self { agents: 100, gps: GpsOptions { tourists: 1200, residents: 200, business: 100, seed: 1 }, training: 2000, seed: 7 }
    }
}

/// Writes a complete synthetic input set plus `config.toml` into `dir` and
/// returns the config path. The survey ward share is taken from an
/// independent GPS draw of the same synthetic city.
pub fn write_fixture(dir: &Path, opts: &FixtureOptions) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let (wards, cents) = synthetic::tokyo_geography();
    let geo = Geography::from_centroids(wards, cents)?;
    let catalog = synthetic::poi_catalog();
    let ecfg = ExtractConfig::default();

    let placeholder = synthetic::survey_marginals(synthetic::share_map(&geo.wards, &vec![1.0; geo.wards.len()]));
    let survey_gps = synthetic::synthetic_staypoints(&GpsOptions { seed: opts.gps.seed.wrapping_add(1_000_003), ..opts.gps });
    let survey = derive_priors(survey_gps, &catalog, Some(&placeholder), &ecfg, &geo)?;
    let marginals = synthetic::survey_marginals(synthetic::share_map(&geo.wards, &survey.priors.pooled_visit));

    io::write_centroids(&dir.join("centroids.csv"), &geo.wards, &geo.centroids)?;
    io::write_poi_catalog(&dir.join("poi.csv"), &catalog)?;
    io::write_staypoints(&dir.join("staypoints.csv"), &synthetic::synthetic_staypoints(&opts.gps))?;
    io::write_json(&dir.join("marginals.json"), &marginals)?;
    let training = synthetic::synthetic_training(&marginals, opts.training, opts.seed.wrapping_add(17), 14, 15);
    io::write_jsonl(&dir.join("training.jsonl"), &training)?;

    let config = TEMPLATE.replacen("seed = 7", &format!("seed = {}", opts.seed), 1).replacen(
        "agents = 100",
        &format!("agents = {}", opts.agents),
        1,
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).map_err(|source| PipelineError::Fs { path: path.clone(), source })?;
    if survey.priors.pooled_visit.contains(&0.0) {
        warn!("fixture survey share has wards without visits");
    }
    Ok(path)
}
