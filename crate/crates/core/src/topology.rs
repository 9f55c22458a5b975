//! Network structure, outcome indexing and distances between distributions.
//!
//! A network is a list of parties, each fed by an ordered list of sources and
//! producing one of `o_i` outcomes. Joint outcomes `(a_1, ..., a_n)` are
//! flattened in row-major order: the last party's outcome varies fastest.

use std::collections::HashSet;
use std::fmt;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to the second argument of the KL divergence.
pub const KL_CLAMP: f64 = 1e-12;

/// Tolerance on the total mass of a [`Distribution`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartySpec {
    pub name: String,
    pub sources: Vec<String>,
    pub n_outcomes: usize,
}

/// Parties with their source wiring. Party order fixes the outcome-tuple order,
/// source order is by name, with embedded integers compared numerically.
/// States in the Born evaluator and hidden-variable columns follow it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "NetworkDoc", into = "NetworkDoc")]
pub struct NetworkConfig {
    parties: Vec<PartySpec>,
    sources: Vec<String>,
}

impl NetworkConfig {
    pub fn new(parties: Vec<PartySpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, p) in parties.iter().enumerate() {
            let location = format!("parties[{i}] ({})", p.name);
            if !seen.insert(p.name.clone()) {
                return Err(config_err(&location, format!("duplicate party name {:?}", p.name)));
            }
            if p.sources.is_empty() {
                return Err(config_err(&location, "empty source list"));
            }
            if p.n_outcomes < 2 {
                return Err(config_err(
                    &location,
                    format!("n_outcomes must be at least 2, got {}", p.n_outcomes),
                ));
            }
            let mut local = HashSet::new();
            for s in &p.sources {
                if !local.insert(s) {
                    return Err(config_err(&location, format!("source {s:?} listed twice")));
                }
            }
        }
        if parties.is_empty() {
            return Err(config_err("parties", "network has no parties"));
        }

        let mut sources: Vec<String> = Vec::new();
        for p in &parties {
            for s in &p.sources {
                if !sources.contains(s) {
                    sources.push(s.clone());
                }
            }
        }
        sources.sort_by(|a, b| natural_cmp(a, b));
        let config = NetworkConfig { parties, sources };
        for s in &config.sources {
            let users = config
                .parties
                .iter()
                .filter(|p| p.sources.contains(s))
                .count();
            if users == 1 && config.parties.len() > 1 {
                log::warn!("source {s:?} feeds a single party");
            }
        }
        Ok(config)
    }

    /// Ring of `n` parties `a1..an`, party `ai` fed by sources `si` and
    /// `s(i-1)` (cyclically), so source `si` joins `ai` and `a(i+1)`.
    pub fn ring(n: usize, outcomes: usize) -> Result<Self> {
        if n < 2 {
            return Err(config_err("ring", "a ring needs at least two parties"));
        }
        let parties = (0..n)
            .map(|i| PartySpec {
                name: format!("a{}", i + 1),
                sources: vec![format!("s{}", i + 1), format!("s{}", (i + n - 1) % n + 1)],
                n_outcomes: outcomes,
            })
            .collect();
        NetworkConfig::new(parties)
    }

    /// Named ring presets: `triangle`, `square`, `pentagon`.
    pub fn preset(name: &str, outcomes: usize) -> Option<Result<Self>> {
        let n = match name {
            "triangle" => 3,
            "square" => 4,
            "pentagon" => 5,
            _ => return None,
        };
        Some(NetworkConfig::ring(n, outcomes))
    }

    /// Same network with the outcome counts replaced, e.g. after
    /// coarse-graining.
    pub fn with_outcomes(&self, outcomes: &[usize]) -> Result<Self> {
        if outcomes.len() != self.parties.len() {
            return Err(Error::Shape(format!(
                "{} outcome counts for {} parties",
                outcomes.len(),
                self.parties.len()
            )));
        }
        let parties = self
            .parties
            .iter()
            .zip(outcomes)
            .map(|(p, &o)| PartySpec {
                n_outcomes: o,
                ..p.clone()
            })
            .collect();
        NetworkConfig::new(parties)
    }

    pub fn parties(&self) -> &[PartySpec] {
        &self.parties
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn n_parties(&self) -> usize {
        self.parties.len()
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn party_index(&self, name: &str) -> Option<usize> {
        self.parties.iter().position(|p| p.name == name)
    }

    /// Indices into [`Self::sources`] of the sources feeding party `i`.
    pub fn party_source_indices(&self, i: usize) -> Vec<usize> {
        self.parties[i]
            .sources
            .iter()
            .map(|s| self.sources.iter().position(|t| t == s).expect("validated source"))
            .collect()
    }

    pub fn outcome_shape(&self) -> Vec<usize> {
        self.parties.iter().map(|p| p.n_outcomes).collect()
    }

    pub fn indexer(&self) -> OutcomeIndexer {
        OutcomeIndexer::new(self.outcome_shape()).expect("validated outcome counts")
    }

    /// Total number of particles, one per (party, source) incidence.
    pub fn n_particles(&self) -> usize {
        self.parties.iter().map(|p| p.sources.len()).sum()
    }

    /// True when every party has exactly two sources and every source feeds
    /// exactly two parties in a single cycle.
    pub fn is_ring(&self) -> bool {
        let n = self.parties.len();
        if n < 2 || self.sources.len() != n {
            return false;
        }
        if self.parties.iter().any(|p| p.sources.len() != 2) {
            return false;
        }
        self.sources.iter().all(|s| {
            self.parties.iter().filter(|p| p.sources.contains(s)).count() == 2
        })
    }

    /// Parses the JSON config document.
    pub fn parse(text: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(text).map_err(|e| Error::Config {
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        NetworkConfig::try_from(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetworkDoc::from(self.clone())).expect("serializable")
    }
}

/// Parses a config document; see [`NetworkConfig::parse`].
pub fn parse_config(text: &str) -> Result<NetworkConfig> {
    NetworkConfig::parse(text)
}

/// Orders names with embedded integers numerically: `s2 < s10`.
fn natural_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for ((da, xa), (db, xb)) in ca.iter().zip(&cb) {
        let ord = if *da && *db {
            let (ta, tb) = (xa.trim_start_matches('0'), xb.trim_start_matches('0'));
            ta.len().cmp(&tb.len()).then(ta.cmp(tb))
        } else {
            xa.cmp(xb)
        };
        if ord.is_ne() {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then(a.cmp(b))
}

fn config_err(location: &str, message: impl Into<String>) -> Error {
    Error::Config {
        location: location.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartyDoc {
    sources: Vec<String>,
    outcomes: usize,
}

/// On-disk form: `{"parties": {"<name>": {"sources": [...], "outcomes": n}}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    #[serde(
        deserialize_with = "ordered_entries",
        serialize_with = "serialize_entries"
    )]
    parties: Vec<(String, PartyDoc)>,
}

impl TryFrom<NetworkDoc> for NetworkConfig {
    type Error = Error;

    fn try_from(doc: NetworkDoc) -> Result<Self> {
        let parties = doc
            .parties
            .into_iter()
            .map(|(name, p)| PartySpec {
                name,
                sources: p.sources,
                n_outcomes: p.outcomes,
            })
            .collect();
        NetworkConfig::new(parties)
    }
}

impl From<NetworkConfig> for NetworkDoc {
    fn from(c: NetworkConfig) -> Self {
        NetworkDoc {
            parties: c
                .parties
                .into_iter()
                .map(|p| {
                    (
                        p.name,
                        PartyDoc {
                            sources: p.sources,
                            outcomes: p.n_outcomes,
                        },
                    )
                })
                .collect(),
        }
    }
}

// Keeps duplicate keys so they can be reported instead of silently merged.
fn ordered_entries<'de, D>(deserializer: D) -> std::result::Result<Vec<(String, PartyDoc)>, D::Error>
where
    D: Deserializer<'de>,
{
    struct EntriesVisitor;

    impl<'de> Visitor<'de> for EntriesVisitor {
        type Value = Vec<(String, PartyDoc)>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("an object mapping party names to {sources, outcomes}")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some((k, v)) = map.next_entry::<String, PartyDoc>()? {
                out.push((k, v));
            }
            Ok(out)
        }
    }

    deserializer.deserialize_map(EntriesVisitor)
}

fn serialize_entries<S>(entries: &[(String, PartyDoc)], s: S) -> std::result::Result<S::Ok, S::Error>
where
    S: serde::Serializer,
{
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(entries.len()))?;
    for (k, v) in entries {
        map.serialize_entry(k, v)?;
    }
    map.end()
}

/// Row-major bijection between outcome tuples and flat indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeIndexer {
    shape: Vec<usize>,
    total: usize,
}

impl OutcomeIndexer {
    pub fn new(shape: Vec<usize>) -> Result<Self> {
        if shape.iter().any(|&o| o == 0) {
            return Err(Error::Shape(format!("zero-sized axis in {shape:?}")));
        }
        let total = shape.iter().product();
        Ok(OutcomeIndexer { shape, total })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn index(&self, tuple: &[usize]) -> Result<usize> {
        if tuple.len() != self.shape.len() {
            return Err(Error::Shape(format!(
                "tuple of length {} for {} parties",
                tuple.len(),
                self.shape.len()
            )));
        }
        let mut idx = 0;
        for (party, (&a, &o)) in tuple.iter().zip(&self.shape).enumerate() {
            if a >= o {
                return Err(Error::OutcomeOutOfRange {
                    party,
                    value: a,
                    bound: o,
                });
            }
            idx = idx * o + a;
        }
        Ok(idx)
    }

    pub fn tuple(&self, mut index: usize) -> Result<Vec<usize>> {
        if index >= self.total {
            return Err(Error::Shape(format!(
                "flat index {index} out of range for {} outcomes",
                self.total
            )));
        }
        let mut t = vec![0; self.shape.len()];
        for (slot, &o) in t.iter_mut().zip(&self.shape).rev() {
            *slot = index % o;
            index /= o;
        }
        Ok(t)
    }
}

/// Flat nonnegative probability vector over joint outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: Vec<f64>,
    indexer: OutcomeIndexer,
}

impl Distribution {
    pub fn new(probs: Vec<f64>, indexer: OutcomeIndexer) -> Result<Self> {
        if probs.len() != indexer.total() {
            return Err(Error::Shape(format!(
                "{} probabilities for {} joint outcomes",
                probs.len(),
                indexer.total()
            )));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
            return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Distribution { probs, indexer })
    }

    pub fn with_shape(probs: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        Distribution::new(probs, OutcomeIndexer::new(shape)?)
    }

    pub fn uniform(indexer: OutcomeIndexer) -> Self {
        let n = indexer.total();
        Distribution {
            probs: vec![1.0 / n as f64; n],
            indexer,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn indexer(&self) -> &OutcomeIndexer {
        &self.indexer
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, tuple: &[usize]) -> Result<f64> {
        Ok(self.probs[self.indexer.index(tuple)?])
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

fn same_shape(p: &Distribution, q: &Distribution) -> Result<()> {
    if p.indexer != q.indexer {
        return Err(Error::Shape(format!(
            "distributions over {:?} and {:?}",
            p.indexer.shape(),
            q.indexer.shape()
        )));
    }
    Ok(())
}

/// `Σ p log(p/q)` in nats, with `q` clamped below at [`KL_CLAMP`].
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    same_shape(p, q)?;
    Ok(kl_slices(&p.probs, &q.probs))
}

pub fn euclidean_distance(p: &Distribution, q: &Distribution) -> Result<f64> {
    same_shape(p, q)?;
    Ok(euclid_slices(&p.probs, &q.probs))
}

pub(crate) fn kl_slices(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(KL_CLAMP)).ln())
        .sum()
}

pub(crate) fn euclid_slices(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Reads a flat list of probabilities: a JSON array, or numbers separated by
/// whitespace, commas or newlines.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return Ok(serde_json::from_str(trimmed)?);
    }
    trimmed
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidDistribution(format!("not a number: {t:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const TRIANGLE: &str = r#"{"parties": {
        "a1": {"sources": ["lambda1", "lambda3"], "outcomes": 4},
        "a2": {"sources": ["lambda2", "lambda1"], "outcomes": 4},
        "a3": {"sources": ["lambda3", "lambda2"], "outcomes": 4}
    }}"#;

    #[test]
    fn parses_triangle() {
        let c = parse_config(TRIANGLE).unwrap();
        assert_eq!(c.n_parties(), 3);
        assert_eq!(c.n_sources(), 3);
        assert_eq!(c.indexer().total(), 64);
        assert_eq!(c.sources(), &["lambda1", "lambda2", "lambda3"]);
        assert_eq!(c.party_source_indices(1), vec![1, 0]);
        assert!(c.is_ring());
    }

    #[test]
    fn natural_source_order() {
        let names = ["s10", "s2", "s1", "b", "a01x", "a1y"];
        let mut sorted = names.to_vec();
        sorted.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(sorted, ["a01x", "a1y", "b", "s1", "s2", "s10"]);
        let ring = NetworkConfig::ring(12, 2).unwrap();
        assert_eq!(ring.sources()[9..], ["s10", "s11", "s12"]);
    }

    #[test]
    fn parses_single_party() {
        let c = parse_config(r#"{"parties": {"a1": {"sources": ["l1"], "outcomes": 2}}}"#).unwrap();
        assert_eq!((c.n_parties(), c.n_sources(), c.indexer().total()), (1, 1, 2));
    }

    #[test]
    fn pentagon_preset() {
        let c = NetworkConfig::preset("pentagon", 4).unwrap().unwrap();
        assert_eq!((c.n_parties(), c.n_sources(), c.indexer().total()), (5, 5, 1024));
        assert!(c.is_ring());
        let round = parse_config(&c.to_json()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn config_errors() {
        let dup = r#"{"parties": {"a": {"sources": ["x"], "outcomes": 2}, "a": {"sources": ["y"], "outcomes": 2}}}"#;
        let err = parse_config(dup).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");

        let empty = r#"{"parties": {"a": {"sources": [], "outcomes": 2}}}"#;
        assert!(parse_config(empty).unwrap_err().to_string().contains("empty source"));

        let one = r#"{"parties": {"a": {"sources": ["x"], "outcomes": 1}}}"#;
        let err = parse_config(one).unwrap_err().to_string();
        assert!(err.contains("parties[0] (a)"), "{err}");

        let bad = r#"{"parties": {"a": {"sources": ["x"], "outcomes": 2},}}"#;
        let err = parse_config(bad).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");

        let repeated = r#"{"parties": {"a": {"sources": ["x", "x"], "outcomes": 2}}}"#;
        assert!(parse_config(repeated).is_err());
    }

    #[test]
    fn row_major_index() {
        let ix = OutcomeIndexer::new(vec![4, 4, 4]).unwrap();
        assert_eq!(ix.index(&[0, 0, 0]).unwrap(), 0);
        assert_eq!(ix.index(&[0, 0, 1]).unwrap(), 1);
        assert_eq!(ix.index(&[3, 3, 3]).unwrap(), 63);
        assert!(matches!(
            ix.index(&[0, 4, 0]),
            Err(Error::OutcomeOutOfRange { party: 1, value: 4, bound: 4 })
        ));
    }

    fn two(a: f64) -> Distribution {
        Distribution::with_shape(vec![a, 1.0 - a], vec![2]).unwrap()
    }

    #[test]
    fn kl_examples() {
        let p = two(0.5);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let q = two(0.25);
        // 0.5 ln 2 + 0.5 ln(2/3)
        let expected = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert_abs_diff_eq!(kl_divergence(&p, &q).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(kl_divergence(&p, &q).unwrap(), 0.143841036, epsilon = 1e-9);

        let point = two(1.0);
        let near = Distribution::with_shape(vec![1.0 - KL_CLAMP, KL_CLAMP], vec![2]).unwrap();
        assert_abs_diff_eq!(
            kl_divergence(&point, &near).unwrap(),
            -(1.0 - KL_CLAMP).ln(),
            epsilon = 1e-15
        );
        // q = 0 where p > 0 stays finite.
        let zero = two(0.0);
        assert!(kl_divergence(&point, &zero).unwrap().is_finite());
    }

    #[test]
    fn euclid_examples() {
        let p = two(1.0);
        let q = two(0.0);
        assert_abs_diff_eq!(euclidean_distance(&p, &q).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        let d = euclidean_distance(&two(0.5), &two(0.25)).unwrap();
        assert_abs_diff_eq!(d, (2.0 * 0.0625f64).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(d, 0.35355339, epsilon = 1e-8);
    }

    #[test]
    fn shape_mismatch() {
        let a = Distribution::uniform(OutcomeIndexer::new(vec![2, 2]).unwrap());
        let b = Distribution::uniform(OutcomeIndexer::new(vec![4]).unwrap());
        assert!(matches!(kl_divergence(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(euclidean_distance(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn distribution_validation() {
        assert!(Distribution::with_shape(vec![0.5, 0.5 + 2e-9], vec![2]).is_err());
        assert!(Distribution::with_shape(vec![0.5, 0.5 + 5e-10], vec![2]).is_ok());
        assert!(Distribution::with_shape(vec![1.5, -0.5], vec![2]).is_err());
        assert!(Distribution::with_shape(vec![f64::NAN, 1.0], vec![2]).is_err());
    }

    #[test]
    fn parse_values_formats() {
        assert_eq!(parse_values("[0.25, 0.75]").unwrap(), vec![0.25, 0.75]);
        assert_eq!(parse_values("0.25\n0.75\n").unwrap(), vec![0.25, 0.75]);
        assert!(parse_values("0.25 x").is_err());
    }

    fn random_dist(n: usize) -> impl Strategy<Value = Distribution> {
        proptest::collection::vec(1e-6f64..1.0, n).prop_map(move |w| {
            let s: f64 = w.iter().sum();
            Distribution::with_shape(w.iter().map(|x| x / s).collect(), vec![n]).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn index_round_trip(shape in proptest::collection::vec(1usize..5, 1..5), seed in 0usize..10_000) {
            let ix = OutcomeIndexer::new(shape).unwrap();
            let i = seed % ix.total();
            let t = ix.tuple(i).unwrap();
            prop_assert_eq!(ix.index(&t).unwrap(), i);
        }

        #[test]
        fn euclid_triangle_inequality(p in random_dist(8), q in random_dist(8), r in random_dist(8)) {
            let pq = euclidean_distance(&p, &q).unwrap();
            let qr = euclidean_distance(&q, &r).unwrap();
            let pr = euclidean_distance(&p, &r).unwrap();
            prop_assert!(pr <= pq + qr + 1e-12);
            prop_assert!((pq - euclidean_distance(&q, &p).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn kl_gibbs(p in random_dist(6), q in random_dist(6)) {
            prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-15);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-15);
        }
    }
}
