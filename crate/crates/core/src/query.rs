//! Per-subject EMA query engine.
//!
//! The first `initial_count` samples are only observed: they build the
//! normalization statistics and are never queried. After that, each sample
//! is queried with probability `clamp(n / C, p_min, 1)`, where `n` is the
//! number of earlier unlabeled samples inside a Euclidean ball in z-scored
//! feature space. A lattice cell ("region") that has collected `L_max`
//! labels is saturated and stops generating queries.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ema::{Activity, StressLevel};
use crate::hrv::{FeatureVector, FEATURE_COUNT};

pub const SNAPSHOT_VERSION: u32 = 1;

pub type RegionId = Vec<i64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("invalid query config: {0}")]
    Config(String),
    #[error("duplicate sample id `{0}`")]
    Duplicate(String),
    #[error("unknown sample id `{0}`")]
    UnknownSample(String),
    #[error("sample `{0}` is already labeled")]
    AlreadyLabeled(String),
    #[error("sample `{0}` was never queried")]
    NotQueried(String),
    #[error("subject `{0}` is still in its initial observation phase")]
    InitialPhase(String),
    #[error("feature vector contains non-finite values")]
    NonFinite,
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("snapshot format version {found} is newer than supported version {supported}")]
    IncompatibleSnapshot { found: u32, supported: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    /// Samples observed before any query can fire.
    pub initial_count: usize,
    pub p_min: f64,
    /// Neighbour count at which the query probability reaches 1.
    pub density_divisor: f64,
    pub neighborhood_radius: f64,
    pub region_cell_size: f64,
    /// Labels after which a region is saturated.
    pub saturation_threshold: usize,
    pub rng_seed: u64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            initial_count: 100,
            p_min: 0.1,
            density_divisor: 50.0,
            neighborhood_radius: 1.0,
            region_cell_size: 1.0,
            saturation_threshold: 10,
            rng_seed: 0,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<(), QueryError> {
        let err = |m: &str| Err(QueryError::Config(m.into()));
        if !(self.p_min > 0.0 && self.p_min <= 1.0) {
            return err("p_min must be in (0, 1]");
        }
        if !(self.density_divisor > 0.0) {
            return err("density_divisor must be positive");
        }
        if !(self.neighborhood_radius > 0.0) {
            return err("neighborhood_radius must be positive");
        }
        if !(self.region_cell_size > 0.0) {
            return err("region_cell_size must be positive");
        }
        if self.saturation_threshold == 0 {
            return err("saturation_threshold must be at least 1");
        }
        Ok(())
    }

    /// Query probability for `neighbors` unlabeled neighbours in an
    /// unsaturated region.
    pub fn probability(&self, neighbors: usize) -> f64 {
        (neighbors as f64 / self.density_divisor).clamp(self.p_min, 1.0)
    }
}

/// Lattice cell containing `normalized`: component-wise `floor(x / g)`.
pub fn region_of(normalized: &[f64], cell_size: f64) -> RegionId {
    normalized
        .iter()
        .map(|x| (x / cell_size).floor() as i64)
        .collect()
}

/// Running per-dimension mean and standard deviation (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub count: usize,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
    pub frozen: bool,
}

impl NormalizerState {
    pub fn new(dims: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dims],
            m2: vec![0.0; dims],
            frozen: false,
        }
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *m2 += delta * (v - *m);
        }
    }

    /// Population standard deviation; zero-variance dimensions report 1.
    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|&m2| {
                let s = if self.count > 0 {
                    (m2 / self.count as f64).sqrt()
                } else {
                    0.0
                };
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(self.std())
            .zip(x)
            .map(|((m, s), v)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub subject_id: String,
    pub timestamp_ms: i64,
    pub raw_features: FeatureVector,
    /// Set once the initial phase has completed.
    pub normalized_features: Option<Vec<f64>>,
    pub label: Option<StressLevel>,
    pub activity: Option<Activity>,
    pub queried: bool,
    pub region_id: Option<RegionId>,
}

impl SampleRecord {
    pub fn new(
        sample_id: impl Into<String>,
        subject_id: impl Into<String>,
        timestamp_ms: i64,
        features: FeatureVector,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            subject_id: subject_id.into(),
            timestamp_ms,
            raw_features: features,
            normalized_features: None,
            label: None,
            activity: None,
            queried: false,
            region_id: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionState {
    pub unlabeled_count: usize,
    pub labeled_count: usize,
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryDecision {
    pub trigger: bool,
    pub probability: f64,
    pub neighbor_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Initial,
    Query,
}

/// Outcome of [`QueryEngine::submit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Admission {
    Observed,
    Decided(QueryDecision),
}

/// Query engine for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEngine {
    config: QueryConfig,
    subject_id: String,
    normalizer: NormalizerState,
    records: Vec<SampleRecord>,
    index: HashMap<String, usize>,
    regions: BTreeMap<RegionId, RegionState>,
    rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    config: QueryConfig,
    subject_id: String,
    normalizer: NormalizerState,
    records: Vec<SampleRecord>,
    regions: Vec<(RegionId, RegionState)>,
    rng: ChaCha8Rng,
}

impl QueryEngine {
    pub fn new(subject_id: impl Into<String>, config: QueryConfig) -> Result<Self, QueryError> {
        config.validate()?;
        let mut normalizer = NormalizerState::new(FEATURE_COUNT);
        normalizer.frozen = config.initial_count == 0;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            config,
            subject_id: subject_id.into(),
            normalizer,
            records: Vec::new(),
            index: HashMap::new(),
            regions: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &QueryConfig {
        &self.config
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn phase(&self) -> Phase {
        if self.normalizer.frozen {
            Phase::Query
        } else {
            Phase::Initial
        }
    }

    pub fn normalizer(&self) -> &NormalizerState {
        &self.normalizer
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn record(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.index.get(sample_id).map(|&i| &self.records[i])
    }

    pub fn regions(&self) -> &BTreeMap<RegionId, RegionState> {
        &self.regions
    }

    pub fn region(&self, id: &RegionId) -> Option<&RegionState> {
        self.regions.get(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Routes a sample to [`observe`](Self::observe) or
    /// [`decide_query`](Self::decide_query) according to the phase, using
    /// the engine's own seeded generator.
    pub fn submit(&mut self, sample: SampleRecord) -> Result<Admission, QueryError> {
        match self.phase() {
            Phase::Initial => self.observe(sample).map(|_| Admission::Observed),
            Phase::Query => {
                let mut rng = self.rng.clone();
                let out = self.decide_query(sample, &mut rng);
                self.rng = rng;
                out.map(Admission::Decided)
            }
        }
    }

    fn check_new(&self, sample: &SampleRecord) -> Result<(), QueryError> {
        if self.index.contains_key(&sample.sample_id) {
            return Err(QueryError::Duplicate(sample.sample_id.clone()));
        }
        if !sample.raw_features.is_finite() {
            return Err(QueryError::NonFinite);
        }
        Ok(())
    }

    /// Initial-phase intake: store the sample and update the running
    /// statistics; the N-th sample freezes them and assigns every stored
    /// sample its normalized coordinates and region. Never triggers.
    pub fn observe(&mut self, mut sample: SampleRecord) -> Result<(), QueryError> {
        self.check_new(&sample)?;
        if self.phase() == Phase::Query {
            return Err(QueryError::Config(
                "observe called after the initial phase".into(),
            ));
        }
        self.normalizer.update(&sample.raw_features.to_array());
        sample.queried = false;
        sample.label = None;
        self.push(sample);
        if self.normalizer.count >= self.config.initial_count {
            self.freeze();
        }
        Ok(())
    }

    fn freeze(&mut self) {
        self.normalizer.frozen = true;
        for i in 0..self.records.len() {
            let z = self
                .normalizer
                .normalize(&self.records[i].raw_features.to_array());
            let region = region_of(&z, self.config.region_cell_size);
            self.regions
                .entry(region.clone())
                .or_default()
                .unlabeled_count += 1;
            let rec = &mut self.records[i];
            rec.normalized_features = Some(z);
            rec.region_id = Some(region);
        }
    }

    fn push(&mut self, sample: SampleRecord) {
        self.index
            .insert(sample.sample_id.clone(), self.records.len());
        self.records.push(sample);
    }

    /// Unlabeled stored samples within the neighbourhood radius of `z`.
    pub fn neighbor_count(&self, z: &[f64]) -> usize {
        let r2 = self.config.neighborhood_radius * self.config.neighborhood_radius;
        self.records
            .iter()
            .filter(|r| r.label.is_none())
            .filter_map(|r| r.normalized_features.as_deref())
            .filter(|other| {
                other
                    .iter()
                    .zip(z)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    <= r2
            })
            .count()
    }

    /// Query-phase intake: decide whether to request a label. The record is
    /// stored either way. Exactly one value is drawn from `rng` per call.
    pub fn decide_query<R: Rng + ?Sized>(
        &mut self,
        mut sample: SampleRecord,
        rng: &mut R,
    ) -> Result<QueryDecision, QueryError> {
        if self.phase() == Phase::Initial {
            return Err(QueryError::InitialPhase(self.subject_id.clone()));
        }
        self.check_new(&sample)?;
        let z = self.normalizer.normalize(&sample.raw_features.to_array());
        let region = region_of(&z, self.config.region_cell_size);
        let neighbor_count = self.neighbor_count(&z);
        let saturated = self.regions.get(&region).is_some_and(|r| r.saturated);
        let probability = if saturated {
            0.0
        } else {
            self.config.probability(neighbor_count)
        };
        let draw: f64 = rng.random();
        let trigger = draw < probability;

        sample.normalized_features = Some(z);
        sample.region_id = Some(region.clone());
        sample.queried = trigger;
        sample.label = None;
        self.regions.entry(region).or_default().unlabeled_count += 1;
        self.push(sample);
        Ok(QueryDecision {
            trigger,
            probability,
            neighbor_count,
        })
    }

    /// Stores an answer for a queried sample and updates its region.
    pub fn record_label(
        &mut self,
        sample_id: &str,
        label: StressLevel,
        activity: Activity,
    ) -> Result<(), QueryError> {
        let &i = self
            .index
            .get(sample_id)
            .ok_or_else(|| QueryError::UnknownSample(sample_id.to_string()))?;
        let rec = &mut self.records[i];
        if rec.label.is_some() {
            return Err(QueryError::AlreadyLabeled(sample_id.to_string()));
        }
        if !rec.queried {
            return Err(QueryError::NotQueried(sample_id.to_string()));
        }
        rec.label = Some(label);
        rec.activity = Some(activity);
        if let Some(region) = rec.region_id.clone() {
            let threshold = self.config.saturation_threshold;
            let st = self.regions.entry(region).or_default();
            st.unlabeled_count = st.unlabeled_count.saturating_sub(1);
            st.labeled_count += 1;
            st.saturated = st.labeled_count >= threshold;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> String {
        let snap = Snapshot {
            version: SNAPSHOT_VERSION,
            config: self.config.clone(),
            subject_id: self.subject_id.clone(),
            normalizer: self.normalizer.clone(),
            records: self.records.clone(),
            regions: self
                .regions
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            rng: self.rng.clone(),
        };
        serde_json::to_string(&snap).expect("engine state serializes")
    }

    pub fn restore(data: &str) -> Result<Self, QueryError> {
        #[derive(Deserialize)]
        struct VersionOnly {
            version: u32,
        }
        let v: VersionOnly =
            serde_json::from_str(data).map_err(|e| QueryError::CorruptSnapshot(e.to_string()))?;
        if v.version > SNAPSHOT_VERSION {
            return Err(QueryError::IncompatibleSnapshot {
                found: v.version,
                supported: SNAPSHOT_VERSION,
            });
        }
        let snap: Snapshot =
            serde_json::from_str(data).map_err(|e| QueryError::CorruptSnapshot(e.to_string()))?;
        snap.config.validate()?;
        let index = snap
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.sample_id.clone(), i))
            .collect();
        Ok(Self {
            config: snap.config,
            subject_id: snap.subject_id,
            normalizer: snap.normalizer,
            records: snap.records,
            index,
            regions: snap.regions.into_iter().collect(),
            rng: snap.rng,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(seed: f64) -> FeatureVector {
        let mut a = [0.0; FEATURE_COUNT];
        for (i, v) in a.iter_mut().enumerate() {
            *v = seed * (i as f64 + 1.0);
        }
        FeatureVector::from_array(a)
    }

    fn rec(id: usize, x: f64) -> SampleRecord {
        SampleRecord::new(format!("s{id}"), "subj", id as i64, fv(x))
    }

    fn engine(n: usize) -> QueryEngine {
        QueryEngine::new(
            "subj",
            QueryConfig {
                initial_count: n,
                ..QueryConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn initial_phase_never_triggers() {
        let mut e = engine(100);
        for i in 0..99 {
            assert_eq!(e.submit(rec(i, i as f64)).unwrap(), Admission::Observed);
        }
        assert_eq!(e.phase(), Phase::Initial);
        assert!(e.records().iter().all(|r| !r.queried));
        e.submit(rec(99, 1.0)).unwrap();
        assert_eq!(e.phase(), Phase::Query);
        assert!(e.records().iter().all(|r| r.region_id.is_some()));
    }

    #[test]
    fn zero_initial_count_goes_straight_to_decisions() {
        let mut e = engine(0);
        assert_eq!(e.phase(), Phase::Query);
        let out = e.submit(rec(0, 1.0)).unwrap();
        match out {
            Admission::Decided(d) => {
                assert_eq!(d.neighbor_count, 0);
                assert_eq!(d.probability, 0.1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_is_rejected_without_state_change() {
        let mut e = engine(10);
        e.submit(rec(1, 1.0)).unwrap();
        let before = e.clone();
        assert_eq!(
            e.submit(rec(1, 2.0)),
            Err(QueryError::Duplicate("s1".into()))
        );
        assert_eq!(e, before);
    }

    #[test]
    fn decide_before_freeze_is_protocol_error() {
        let mut e = engine(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            e.decide_query(rec(0, 0.0), &mut rng),
            Err(QueryError::InitialPhase(_))
        ));
    }

    #[test]
    fn dense_neighbourhood_is_certain() {
        let mut e = engine(60);
        for i in 0..60 {
            e.submit(rec(i, 1.0)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = e.decide_query(rec(100, 1.0), &mut rng).unwrap();
        assert_eq!(d.neighbor_count, 60);
        assert_eq!(d.probability, 1.0);
        assert!(d.trigger);
    }

    #[test]
    fn region_of_floors_each_axis() {
        assert_eq!(region_of(&[0.0; 13], 1.0), vec![0; 13]);
        let mut x = vec![0.0; 13];
        x[0] = 1.2;
        x[1] = -0.3;
        let mut want = vec![0; 13];
        want[0] = 1;
        want[1] = -1;
        assert_eq!(region_of(&x, 1.0), want);
        assert_eq!(region_of(&[2.5, -2.5], 2.0), vec![1, -2]);
    }

    fn saturating_engine() -> (QueryEngine, Vec<String>) {
        let mut e = engine(60);
        for i in 0..60 {
            e.submit(rec(i, 1.0)).unwrap();
        }
        let mut queried = Vec::new();
        for i in 100..115 {
            if let Admission::Decided(d) = e.submit(rec(i, 1.0)).unwrap() {
                assert!(d.trigger);
                queried.push(format!("s{i}"));
            }
        }
        (e, queried)
    }

    #[test]
    fn tenth_label_saturates_region() {
        let (mut e, queried) = saturating_engine();
        let region = e.record(&queried[0]).unwrap().region_id.clone().unwrap();
        for (k, id) in queried.iter().take(10).enumerate() {
            assert!(!e.region(&region).unwrap().saturated);
            e.record_label(id, StressLevel::Some, Activity::Sitting)
                .unwrap();
            assert_eq!(e.region(&region).unwrap().labeled_count, k + 1);
        }
        assert!(e.region(&region).unwrap().saturated);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..50 {
            let d = e.decide_query(rec(1000 + i, 1.0), &mut rng).unwrap();
            assert_eq!(d.probability, 0.0);
            assert!(!d.trigger);
        }
    }

    #[test]
    fn label_errors_are_distinct() {
        let (mut e, queried) = saturating_engine();
        assert_eq!(
            e.record_label("nope", StressLevel::Some, Activity::Other),
            Err(QueryError::UnknownSample("nope".into()))
        );
        assert_eq!(
            e.record_label("s0", StressLevel::Some, Activity::Other),
            Err(QueryError::NotQueried("s0".into()))
        );
        e.record_label(&queried[0], StressLevel::Some, Activity::Other)
            .unwrap();
        assert_eq!(
            e.record_label(&queried[0], StressLevel::ALot, Activity::Other),
            Err(QueryError::AlreadyLabeled(queried[0].clone()))
        );
    }

    #[test]
    fn labeling_removes_a_neighbour() {
        let (mut e, queried) = saturating_engine();
        let z = e
            .record(&queried[0])
            .unwrap()
            .normalized_features
            .clone()
            .unwrap();
        let before = e.neighbor_count(&z);
        e.record_label(&queried[0], StressLevel::NotAtAll, Activity::Lying)
            .unwrap();
        assert_eq!(e.neighbor_count(&z), before - 1);
    }

    #[test]
    fn snapshot_round_trip_and_versioning() {
        let empty = engine(5);
        assert_eq!(QueryEngine::restore(&empty.snapshot()).unwrap(), empty);

        let (e, _) = saturating_engine();
        let back = QueryEngine::restore(&e.snapshot()).unwrap();
        assert_eq!(back, e);

        let newer = e.snapshot().replacen("\"version\":1", "\"version\":2", 1);
        assert_eq!(
            QueryEngine::restore(&newer),
            Err(QueryError::IncompatibleSnapshot {
                found: 2,
                supported: 1
            })
        );
        assert!(matches!(
            QueryEngine::restore("{\"version\":1"),
            Err(QueryError::CorruptSnapshot(_))
        ));
        assert!(matches!(
            QueryEngine::restore("{\"version\":1}"),
            Err(QueryError::CorruptSnapshot(_))
        ));
    }

    #[test]
    fn config_validation() {
        for bad in [
            QueryConfig {
                p_min: 0.0,
                ..Default::default()
            },
            QueryConfig {
                p_min: 1.5,
                ..Default::default()
            },
            QueryConfig {
                density_divisor: 0.0,
                ..Default::default()
            },
            QueryConfig {
                neighborhood_radius: -1.0,
                ..Default::default()
            },
            QueryConfig {
                region_cell_size: 0.0,
                ..Default::default()
            },
            QueryConfig {
                saturation_threshold: 0,
                ..Default::default()
            },
        ] {
            assert!(QueryEngine::new("s", bad).is_err());
        }
    }
}
