//! Stage 1: trip scope (nights, visited locations) from demographics.
//!
//! Two independent multi-class classifiers produce `P_model(y|x)`. Sampling
//! blends each with an empirical per-bucket prior,
//! `P_blend = alpha * P_model + (1 - alpha) * P_prior(y | bucket(x))`,
//! so survey-supported tail classes stay reachable.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::population::{AgentProfile, HouseholdRole, Purpose};
use crate::prob::{blend, sample_index};
use crate::scalar::Scalar;

pub const SCHEMA_VERSION: u32 = 1;
/// Largest nights class; longer stays are clamped into it.
pub const DEFAULT_MAX_NIGHTS: u32 = 14;
/// Largest location-count class.
pub const DEFAULT_MAX_LOCATIONS: u32 = 15;
pub const DEFAULT_ALPHA: f64 = 0.7;

#[derive(Debug, Error, PartialEq)]
pub enum ScopeError {
    #[error("unknown {field} level `{level}`")]
    UnknownLevel { field: &'static str, level: String },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("feature vector has dimension {got}, schema expects {expected}")]
    Dimension { got: usize, expected: usize },
}

/// Encoding parameters stored with a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub genders: Vec<String>,
    pub companions: Vec<String>,
    pub age_mean: f64,
    pub age_std: f64,
}

/// Encoded demographics. Layout:
/// `[gender one-hot | age z-score | purpose one-hot (8) | expenditure/100 | companion one-hot | head]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CoarseAge {
    Under30,
    From30To49,
    From50,
}

impl CoarseAge {
    pub fn of(age: f64) -> Self {
        if age < 30.0 {
            CoarseAge::Under30
        } else if age < 50.0 {
            CoarseAge::From30To49
        } else {
            CoarseAge::From50
        }
    }
}

/// Demographic stratum: purpose, gender, coarse age band and spending quartile.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BucketKey {
    pub purpose: Purpose,
    pub gender: String,
    pub age: CoarseAge,
    /// 0..=3
    pub spend_quartile: u8,
}

impl fmt::Display for BucketKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let age = match self.age {
            CoarseAge::Under30 => "<30",
            CoarseAge::From30To49 => "30-49",
            CoarseAge::From50 => "50+",
        };
        write!(f, "{}|{}|{}|q{}", self.purpose.label(), self.gender, age, self.spend_quartile + 1)
    }
}

impl FeatureSchema {
    /// Levels are the sorted distinct values seen; age standardization from the sample.
    pub fn fit<'a>(profiles: impl IntoIterator<Item = &'a AgentProfile>) -> Self {
        let mut genders = std::collections::BTreeSet::new();
        let mut companions = std::collections::BTreeSet::new();
        let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
        for p in profiles {
            genders.insert(p.gender.clone());
            companions.insert(p.companion.clone());
            let a = p.age as f64;
            n += 1.0;
            sum += a;
            sq += a * a;
        }
        let mean = if n > 0.0 { sum / n } else { 0.0 };
        let var = if n > 0.0 { (sq / n - mean * mean).max(0.0) } else { 0.0 };
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        FeatureSchema {
            version: SCHEMA_VERSION,
            genders: genders.into_iter().collect(),
            companions: companions.into_iter().collect(),
            age_mean: mean,
            age_std: std,
        }
    }

    pub fn dim(&self) -> usize {
        self.genders.len() + 1 + Purpose::ALL.len() + 1 + self.companions.len() + 1
    }

    fn purpose_offset(&self) -> usize {
        self.genders.len() + 1
    }

    pub fn encode(&self, p: &AgentProfile) -> Result<FeatureVector, ScopeError> {
        let g = self
            .genders
            .iter()
            .position(|x| *x == p.gender)
            .ok_or_else(|| ScopeError::UnknownLevel { field: "gender", level: p.gender.clone() })?;
        let c = self
            .companions
            .iter()
            .position(|x| *x == p.companion)
            .ok_or_else(|| ScopeError::UnknownLevel { field: "companion", level: p.companion.clone() })?;
        let mut v = vec![0.0; self.dim()];
        v[g] = 1.0;
        let mut at = self.genders.len();
        v[at] = (p.age as f64 - self.age_mean) / self.age_std;
        at += 1;
        v[at + p.purpose.index()] = 1.0;
        at += Purpose::ALL.len();
        v[at] = (p.expenditure_percentile / 100.0).clamp(0.0, 1.0);
        at += 1;
        v[at + c] = 1.0;
        at += self.companions.len();
        v[at] = if p.household_role == HouseholdRole::Head { 1.0 } else { 0.0 };
        Ok(FeatureVector(v))
    }

    /// Recovers the demographic stratum from an encoded vector.
    pub fn bucket(&self, x: &FeatureVector) -> Result<BucketKey, ScopeError> {
        if x.0.len() != self.dim() {
            return Err(ScopeError::Dimension { got: x.0.len(), expected: self.dim() });
        }
        let argmax = |s: &[f64]| s.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i, *v) } else { b }).0;
        let g = argmax(&x.0[..self.genders.len()]);
        let age = x.0[self.genders.len()] * self.age_std + self.age_mean;
        let po = self.purpose_offset();
        let purpose = Purpose::ALL[argmax(&x.0[po..po + Purpose::ALL.len()])];
        let spend = x.0[po + Purpose::ALL.len()];
        Ok(BucketKey {
            purpose,
            gender: self.genders[g].clone(),
            // round away encoding noise before banding
            age: CoarseAge::of((age * 1e6).round() / 1e6),
            spend_quartile: ((spend * 4.0).floor() as i64).clamp(0, 3) as u8,
        })
    }
}

/// A probabilistic multi-class classifier over encoded features.
pub trait ProbClassifier {
    fn n_classes(&self) -> usize;
    fn predict_proba(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub learning_rate: f64,
    pub max_iter: usize,
    pub l2: f64,
    /// Stop when the loss improves by less than this between iterations.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { learning_rate: 0.5, max_iter: 400, l2: 1e-4, tol: 1e-9 }
    }
}

/// Multinomial logistic regression. Weights are `n_classes × (dim + 1)`, bias last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxRegression<F> {
    pub n_classes: usize,
    pub dim: usize,
    pub weights: Vec<F>,
}

impl<F: Scalar> SoftmaxRegression<F> {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self { n_classes, dim, weights: vec![F::zero(); n_classes * (dim + 1)] }
    }

    fn stride(&self) -> usize {
        self.dim + 1
    }

    pub fn probabilities(&self, x: &[F]) -> Vec<F> {
        let s = self.stride();
        let logits: Vec<F> = (0..self.n_classes)
            .map(|k| {
                let w = &self.weights[k * s..(k + 1) * s];
                w[..self.dim].iter().zip(x).map(|(a, b)| *a * *b).sum::<F>() + w[self.dim]
            })
            .collect();
        softmax(&logits)
    }

    /// Mean cross-entropy plus `l2/2 * ||W||^2` (biases unpenalized).
    pub fn loss(&self, xs: &[Vec<F>], ys: &[usize], l2: F) -> F {
        let n = F::from_usize_lossy(xs.len());
        let tiny = F::min_positive_value();
        let ce: F = xs.iter().zip(ys).map(|(x, y)| -(self.probabilities(x)[*y].max(tiny)).ln()).sum::<F>() / n;
        ce + l2 * F::lit(0.5) * self.penalized_norm_sq()
    }

    fn penalized_norm_sq(&self) -> F {
        let s = self.stride();
        self.weights.iter().enumerate().filter(|(i, _)| i % s != self.dim).map(|(_, w)| *w * *w).sum()
    }

    /// Analytic gradient of [`loss`](Self::loss) in weight layout.
    pub fn gradient(&self, xs: &[Vec<F>], ys: &[usize], l2: F) -> Vec<F> {
        let s = self.stride();
        let n = F::from_usize_lossy(xs.len());
        let mut g = vec![F::zero(); self.weights.len()];
        for (x, y) in xs.iter().zip(ys) {
            let p = self.probabilities(x);
            for k in 0..self.n_classes {
                let r = p[k] - if k == *y { F::one() } else { F::zero() };
                let row = &mut g[k * s..(k + 1) * s];
                for (gi, xi) in row[..self.dim].iter_mut().zip(x) {
                    *gi = *gi + r * *xi;
                }
                row[self.dim] = row[self.dim] + r;
            }
        }
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = *gi / n;
            if i % s != self.dim {
                *gi = *gi + l2 * self.weights[i];
            }
        }
        g
    }

    /// Full-batch gradient descent. Returns the model and its loss after each step.
    pub fn fit(xs: &[Vec<F>], ys: &[usize], n_classes: usize, opts: &FitOptions) -> (Self, Vec<F>) {
        let dim = xs.first().map_or(0, Vec::len);
        let mut m = Self::zeros(n_classes, dim);
        let lr = F::lit(opts.learning_rate);
        let l2 = F::lit(opts.l2);
        let tol = F::lit(opts.tol);
        let mut history = vec![m.loss(xs, ys, l2)];
        for _ in 0..opts.max_iter {
            let g = m.gradient(xs, ys, l2);
            for (w, gi) in m.weights.iter_mut().zip(&g) {
                *w = *w - lr * *gi;
            }
            let l = m.loss(xs, ys, l2);
            let prev = *history.last().expect("non-empty");
            history.push(l);
            if (prev - l).abs() < tol {
                break;
            }
        }
        (m, history)
    }
}

impl ProbClassifier for SoftmaxRegression<f64> {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.probabilities(x)
    }
}

pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut e: Vec<F> = logits.iter().map(|z| (*z - max).exp()).collect();
    let total: F = e.iter().copied().sum();
    e.iter_mut().for_each(|v| *v = *v / total);
    e
}

/// Observed trip scope attached to a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub profile: AgentProfile,
    pub nights: u32,
    pub locations: u32,
}

/// Predicted nights stayed and number of visited locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripScope {
    pub nights: u32,
    pub locations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Nights,
    Locations,
}

/// Two classifiers plus per-bucket empirical priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeModel<C = SoftmaxRegression<f64>> {
    pub schema: FeatureSchema,
    pub max_nights: u32,
    pub max_locations: u32,
    pub alpha: f64,
    pub nights: C,
    pub locations: C,
    /// Add-one smoothed class frequencies keyed by [`BucketKey`] display form.
    pub nights_prior: BTreeMap<String, Vec<f64>>,
    pub locations_prior: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub max_nights: u32,
    pub max_locations: u32,
    pub alpha: f64,
    pub fit: FitOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { max_nights: DEFAULT_MAX_NIGHTS, max_locations: DEFAULT_MAX_LOCATIONS, alpha: DEFAULT_ALPHA, fit: FitOptions::default() }
    }
}

fn nights_class(n: u32, max: u32) -> usize {
    n.min(max) as usize
}

fn locations_class(l: u32, max: u32) -> usize {
    (l.clamp(1, max) - 1) as usize
}

/// Trains with the reference softmax classifier.
pub fn train(examples: &[TrainingExample], opts: &TrainOptions) -> Result<ScopeModel, ScopeError> {
    train_with(examples, opts, |xs, ys, k| SoftmaxRegression::fit(xs, ys, k, &opts.fit).0)
}

/// Trains with any classifier produced by `fit(features, labels, n_classes)`.
pub fn train_with<C, Fit>(examples: &[TrainingExample], opts: &TrainOptions, fit: Fit) -> Result<ScopeModel<C>, ScopeError>
where
    C: ProbClassifier,
    Fit: Fn(&[Vec<f64>], &[usize], usize) -> C,
{
    if examples.is_empty() {
        return Err(ScopeError::EmptyTrainingSet);
    }
    let schema = FeatureSchema::fit(examples.iter().map(|e| &e.profile));
    let xs: Vec<Vec<f64>> = examples.iter().map(|e| schema.encode(&e.profile).map(|v| v.0)).collect::<Result<_, _>>()?;
    let kn = opts.max_nights as usize + 1;
    let kl = opts.max_locations as usize;
    let yn: Vec<usize> = examples.iter().map(|e| nights_class(e.nights, opts.max_nights)).collect();
    let yl: Vec<usize> = examples.iter().map(|e| locations_class(e.locations, opts.max_locations)).collect();

    let mut cn: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut cl: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, x) in xs.iter().enumerate() {
        let key = schema.bucket(&FeatureVector(x.clone()))?.to_string();
        cn.entry(key.clone()).or_insert_with(|| vec![0.0; kn])[yn[i]] += 1.0;
        cl.entry(key).or_insert_with(|| vec![0.0; kl])[yl[i]] += 1.0;
    }
    let smooth = |counts: &mut Vec<f64>| {
        let total: f64 = counts.iter().sum::<f64>() + counts.len() as f64;
        counts.iter_mut().for_each(|c| *c = (*c + 1.0) / total);
    };
    cn.values_mut().for_each(smooth);
    cl.values_mut().for_each(smooth);

    Ok(ScopeModel {
        nights: fit(&xs, &yn, kn),
        locations: fit(&xs, &yl, kl),
        schema,
        max_nights: opts.max_nights,
        max_locations: opts.max_locations,
        alpha: opts.alpha,
        nights_prior: cn,
        locations_prior: cl,
    })
}

impl<C: ProbClassifier> ScopeModel<C> {
    pub fn prior(&self, target: Target, key: &BucketKey) -> Option<&[f64]> {
        let table = match target {
            Target::Nights => &self.nights_prior,
            Target::Locations => &self.locations_prior,
        };
        table.get(&key.to_string()).map(Vec::as_slice)
    }

    pub fn model_proba(&self, target: Target, x: &FeatureVector) -> Vec<f64> {
        match target {
            Target::Nights => self.nights.predict_proba(&x.0),
            Target::Locations => self.locations.predict_proba(&x.0),
        }
    }

    /// Blended class distribution. Falls back to the pure model (alpha = 1)
    /// when the bucket has no prior row; the flag reports that fallback.
    pub fn blended(&self, target: Target, x: &FeatureVector, alpha: f64) -> Result<(Vec<f64>, bool), ScopeError> {
        let key = self.schema.bucket(x)?;
        let model = self.model_proba(target, x);
        Ok(match self.prior(target, &key) {
            Some(prior) => (blend(&model, prior, alpha), false),
            None => {
                warn!("bucket {key} has no prior; sampling from the model alone");
                (model, true)
            }
        })
    }

    /// Samples nights and locations independently from their blended distributions.
    pub fn blended_sample<R: Rng + ?Sized>(&self, x: &FeatureVector, alpha: f64, rng: &mut R) -> Result<TripScope, ScopeError> {
        let (pn, _) = self.blended(Target::Nights, x, alpha)?;
        let (pl, _) = self.blended(Target::Locations, x, alpha)?;
        let n = sample_index(&pn, rng).expect("blend is a distribution");
        let l = sample_index(&pl, rng).expect("blend is a distribution");
        Ok(TripScope { nights: n as u32, locations: l as u32 + 1 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn profile(gender: &str, age: u32, purpose: Purpose, companion: &str, spend: f64) -> AgentProfile {
        AgentProfile {
            agent_id: 0,
            gender: gender.into(),
            age,
            purpose,
            companion: companion.into(),
            origin: None,
            expenditure_percentile: spend,
            household_id: 0,
            household_role: HouseholdRole::Head,
            travel_month: 1,
        }
    }

    fn schema() -> FeatureSchema {
        FeatureSchema {
            version: SCHEMA_VERSION,
            genders: vec!["female".into(), "male".into()],
            companions: vec!["alone".into(), "family".into()],
            age_mean: 40.0,
            age_std: 10.0,
        }
    }

    #[test]
    fn hand_computed_layout() {
        let s = schema();
        let x = s.encode(&profile("male", 55, Purpose::Business, "family", 30.0)).unwrap();
        #[rustfmt::skip]
        let want = vec![
            0.0, 1.0,                                  // gender
            1.5,                                       // (55 - 40) / 10
            0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0,    // purpose: Business
            0.3,                                       // spend
            0.0, 1.0,                                  // companion
            1.0,                                       // head
        ];
        assert_eq!(x.0, want);
        let same = s.encode(&profile("male", 55, Purpose::Business, "family", 30.0)).unwrap();
        assert_eq!(x, same);
        let at_mean = s.encode(&profile("female", 40, Purpose::Other, "alone", 0.0)).unwrap();
        assert_eq!(at_mean.0[2], 0.0);
    }

    #[test]
    fn unknown_level_is_named() {
        let err = schema().encode(&profile("x", 30, Purpose::Other, "alone", 0.0)).unwrap_err();
        assert_eq!(err, ScopeError::UnknownLevel { field: "gender", level: "x".into() });
    }

    #[test]
    fn bucket_ignores_companion() {
        let s = schema();
        let a = s.encode(&profile("female", 31, Purpose::Sightseeing, "alone", 80.0)).unwrap();
        let b = s.encode(&profile("female", 31, Purpose::Sightseeing, "family", 80.0)).unwrap();
        assert_eq!(s.bucket(&a).unwrap(), s.bucket(&b).unwrap());
        let k = s.bucket(&a).unwrap();
        assert_eq!((k.age, k.spend_quartile), (CoarseAge::From30To49, 3));
        assert_eq!(s.bucket(&s.encode(&profile("female", 29, Purpose::Other, "alone", 25.0)).unwrap()).unwrap().age, CoarseAge::Under30);
        assert_eq!(s.bucket(&s.encode(&profile("female", 50, Purpose::Other, "alone", 25.0)).unwrap()).unwrap().spend_quartile, 1);
    }

    #[test]
    fn bucket_cardinality_bound() {
        let s = schema();
        let mut keys = std::collections::BTreeSet::new();
        for p in Purpose::ALL {
            for g in ["female", "male"] {
                for age in 18..90 {
                    for spend in 0..=100 {
                        let x = s.encode(&profile(g, age, p, "alone", spend as f64)).unwrap();
                        keys.insert(s.bucket(&x).unwrap());
                    }
                }
            }
        }
        assert_eq!(keys.len(), 192);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
        let mut m = SoftmaxRegression::<f64>::zeros(3, 4);
        m.weights.iter_mut().for_each(|w| *w = rng.random_range(-0.5..0.5));
        let l2 = 0.01;
        let g = m.gradient(&xs, &ys, l2);
        let h = 1e-5;
        for i in 0..m.weights.len() {
            let mut up = m.clone();
            up.weights[i] += h;
            let mut dn = m.clone();
            dn.weights[i] -= h;
            let fd = (up.loss(&xs, &ys, l2) - dn.loss(&xs, &ys, l2)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4 || (fd - g[i]).abs() < 1e-10, "weight {i}: fd {fd} vs analytic {}", g[i]);
        }
    }

    #[test]
    fn loss_decreases_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<usize> = xs
            .iter()
            .map(|x| {
                if x[0] + x[1] > 0.0 {
                    0
                } else if x[2] > 0.0 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let opts = FitOptions { learning_rate: 0.1, max_iter: 300, l2: 1e-3, tol: 0.0 };
        let (_, hist) = SoftmaxRegression::fit(&xs, &ys, 3, &opts);
        assert!(hist.windows(2).all(|w| w[1] <= w[0]), "loss increased");
        assert!(hist.last().unwrap() < &hist[0]);
    }

    #[test]
    fn f32_classifier_fits() {
        let xs: Vec<Vec<f32>> = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (m, _) = SoftmaxRegression::<f32>::fit(&xs, &[0, 1], 2, &FitOptions::default());
        assert!(m.probabilities(&xs[0])[0] > 0.9);
    }

    #[test]
    fn single_class_fit_is_confident() {
        let ex: Vec<TrainingExample> = (0..50)
            .map(|i| TrainingExample {
                profile: profile(if i % 2 == 0 { "female" } else { "male" }, 20 + i, Purpose::Sightseeing, "alone", i as f64),
                nights: 3,
                locations: 4,
            })
            .collect();
        let m = train(&ex, &TrainOptions::default()).unwrap();
        let x = m.schema.encode(&ex[7].profile).unwrap();
        assert!(m.model_proba(Target::Nights, &x)[3] >= 0.99);
        assert!(m.model_proba(Target::Locations, &x)[3] >= 0.99);
    }

    #[test]
    fn empty_training_set() {
        assert_eq!(train(&[], &TrainOptions::default()).unwrap_err(), ScopeError::EmptyTrainingSet);
    }

    #[test]
    fn prior_rows_are_smoothed_distributions() {
        let ex: Vec<TrainingExample> = (0..20)
            .map(|i| TrainingExample { profile: profile("female", 25, Purpose::Business, "alone", 10.0), nights: i % 3, locations: 99 })
            .collect();
        let m = train(&ex, &TrainOptions::default()).unwrap();
        for row in m.nights_prior.values().chain(m.locations_prior.values()) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|p| *p > 0.0));
        }
        // locations above the cap land in the top class
        let row = m.locations_prior.values().next().unwrap();
        assert!((row[14] - 21.0 / 35.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_one_is_pure_model_and_missing_bucket_falls_back() {
        let ex: Vec<TrainingExample> = (0..20)
            .map(|i| TrainingExample { profile: profile("female", 25 + i, Purpose::Business, "alone", 10.0), nights: i % 4, locations: 2 })
            .collect();
        let m = train(&ex, &TrainOptions::default()).unwrap();
        let x = m.schema.encode(&ex[0].profile).unwrap();
        let (p, fallback) = m.blended(Target::Nights, &x, 1.0).unwrap();
        assert!(!fallback);
        let model = m.model_proba(Target::Nights, &x);
        for (a, b) in p.iter().zip(&model) {
            assert!((a - b).abs() < 1e-12);
        }
        let other = m.schema.encode(&profile("female", 70, Purpose::Other, "alone", 90.0)).unwrap();
        let (p, fallback) = m.blended(Target::Nights, &other, 0.7).unwrap();
        assert!(fallback);
        assert_eq!(p, m.model_proba(Target::Nights, &other));
    }
}
