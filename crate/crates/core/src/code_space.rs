//! Code options, ensembles, code index vectors, operation regions and weights.
//!
//! Users are numbered from 0 internally; user sets serialize as 1-based user
//! lists (`[1, 2]`) so files and CLI flags read like the usual notation.
//! Option indices inside a [`CodeIndexVector`] are 0-based.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::channel::ChannelModel;
use crate::error::{Error, Result};

/// Largest supported number of regular users.
pub const MAX_USERS: usize = 16;

const DIST_TOLERANCE: f64 = 1e-12;
const WEIGHT_TOLERANCE: f64 = 1e-9;

/// A set of regular users stored as a bitmask (bit `k` is user `k + 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct UserSet(u32);

impl UserSet {
    pub const EMPTY: UserSet = UserSet(0);

    pub fn from_bits(bits: u32) -> Self {
        UserSet(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    /// All users `0..k`.
    pub fn full(k: usize) -> Self {
        UserSet(((1u64 << k) - 1) as u32)
    }

    pub fn single(user: usize) -> Self {
        UserSet(1 << user)
    }

    /// Builds a set from 0-based user indices.
    pub fn of(users: &[usize]) -> Self {
        UserSet(users.iter().fold(0, |acc, &u| acc | (1 << u)))
    }

    /// Builds a set from 1-based user numbers, rejecting 0 and numbers above `k`.
    pub fn from_one_based(users: &[usize], k: usize) -> Result<Self> {
        let mut bits = 0;
        for &u in users {
            if u == 0 || u > k {
                return Err(Error::OutOfRange {
                    what: "user number",
                    index: u,
                    limit: k,
                });
            }
            bits |= 1 << (u - 1);
        }
        Ok(UserSet(bits))
    }

    pub fn contains(self, user: usize) -> bool {
        self.0 & (1 << user) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: Self) -> Self {
        UserSet(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        UserSet(self.0 & other.0)
    }

    pub fn difference(self, other: Self) -> Self {
        UserSet(self.0 & !other.0)
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_disjoint(self, other: Self) -> bool {
        self.0 & other.0 == 0
    }

    /// Members in increasing order (0-based).
    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&u| self.contains(u))
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn one_based(self) -> Vec<usize> {
        self.iter().map(|u| u + 1).collect()
    }

    /// Every subset of `self`, in increasing bitmask order.
    pub fn subsets(self) -> Vec<UserSet> {
        let mut out = Vec::with_capacity(1 << self.len());
        let mut sub = 0u32;
        loop {
            out.push(UserSet(sub));
            if sub == self.0 {
                break;
            }
            sub = (sub.wrapping_sub(self.0)) & self.0;
        }
        out
    }

    /// Subsets of `self` other than `self`, including the empty set.
    pub fn proper_subsets(self) -> Vec<UserSet> {
        self.subsets().into_iter().filter(|&s| s != self).collect()
    }
}

impl fmt::Display for UserSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let users: Vec<String> = self.one_based().iter().map(|u| u.to_string()).collect();
        write!(f, "{{{}}}", users.join(","))
    }
}

impl Serialize for UserSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for UserSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let users = Vec::<usize>::deserialize(d)?;
        UserSet::from_one_based(&users, MAX_USERS).map_err(serde::de::Error::custom)
    }
}

/// All subsets `S` of `{1..k}` with `anchor` contained in `S`, in increasing
/// bitmask order.
pub fn subsets_containing(k: usize, anchor: UserSet) -> Vec<UserSet> {
    UserSet::full(k)
        .difference(anchor)
        .subsets()
        .into_iter()
        .map(|s| s.union(anchor))
        .collect()
}

/// One random block code: a rate in nats/symbol and an i.i.d. input distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeOption {
    pub rate: f64,
    pub input_dist: Vec<f64>,
}

impl CodeOption {
    pub fn new(rate: f64, input_dist: Vec<f64>) -> Result<Self> {
        let option = Self { rate, input_dist };
        option.check()?;
        Ok(option)
    }

    pub fn uniform(rate: f64, alphabet: usize) -> Self {
        Self {
            rate,
            input_dist: vec![1.0 / alphabet as f64; alphabet],
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(Error::InvalidOption(format!("rate {} must be >= 0", self.rate)));
        }
        check_distribution(&self.input_dist).map_err(|m| Error::InvalidOption(format!("input distribution {m}")))
    }
}

pub(crate) fn check_distribution(dist: &[f64]) -> std::result::Result<(), String> {
    if dist.is_empty() {
        return Err("is empty".into());
    }
    if let Some(p) = dist.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("has invalid entry {p}"));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > DIST_TOLERANCE {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CodeOptionRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate_nats: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate_bits: Option<f64>,
    input_dist: Vec<f64>,
}

impl Serialize for CodeOption {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CodeOptionRepr {
            rate_nats: Some(self.rate),
            rate_bits: None,
            input_dist: self.input_dist.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CodeOption {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = CodeOptionRepr::deserialize(d)?;
        let rate = match (repr.rate_nats, repr.rate_bits) {
            (Some(r), None) => r,
            (None, Some(b)) => b * std::f64::consts::LN_2,
            _ => {
                return Err(serde::de::Error::custom(
                    "exactly one of rate_nats or rate_bits is required",
                ))
            }
        };
        CodeOption::new(rate, repr.input_dist).map_err(serde::de::Error::custom)
    }
}

/// Per-user code ensembles plus the interferer's options (by channel label).
///
/// An empty interferer list means "every option the channel defines".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeEnsemble {
    pub users: Vec<Vec<CodeOption>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interferer_options: Vec<String>,
}

impl CodeEnsemble {
    pub fn new(users: Vec<Vec<CodeOption>>) -> Self {
        Self {
            users,
            interferer_options: Vec::new(),
        }
    }

    pub fn with_interferer(mut self, labels: Vec<String>) -> Self {
        self.interferer_options = labels;
        self
    }
}

/// A code index vector: one option index per regular user plus the index of
/// the interferer's option within the ensemble's interferer list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CodeIndexVector {
    pub options: Vec<usize>,
    pub interferer: usize,
}

impl CodeIndexVector {
    pub fn new(options: Vec<usize>, interferer: usize) -> Self {
        Self { options, interferer }
    }

    /// True when both vectors pick the same option for every user in `set`.
    pub fn agrees_on(&self, other: &Self, set: UserSet) -> bool {
        set.iter().all(|k| self.options[k] == other.options[k])
    }
}

impl fmt::Display for CodeIndexVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opts: Vec<String> = self.options.iter().map(|o| o.to_string()).collect();
        write!(f, "({};{})", opts.join(","), self.interferer)
    }
}

impl<'de> Deserialize<'de> for CodeIndexVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Object {
                options: Vec<usize>,
                #[serde(default)]
                interferer: usize,
            },
            // bare option list, interferer option 0
            List(Vec<usize>),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Object { options, interferer } => CodeIndexVector { options, interferer },
            Repr::List(options) => CodeIndexVector { options, interferer: 0 },
        })
    }
}

/// All code index vectors of an ensemble in lexicographic order: user 1's
/// option is the most significant digit and the interferer option the least.
pub fn enumerate_vectors(option_counts: &[usize], interferer_count: usize) -> Result<Vec<CodeIndexVector>> {
    let mut total: usize = 1;
    for (user, &m) in option_counts.iter().enumerate() {
        total = total.checked_mul(m).ok_or(Error::VectorCountOverflow {
            partial: total,
            user: user + 1,
        })?;
    }
    total = total.checked_mul(interferer_count).ok_or(Error::VectorCountOverflow {
        partial: total,
        user: 0,
    })?;
    let mut radices = option_counts.to_vec();
    radices.push(interferer_count);
    Ok((0..total)
        .map(|i| {
            let mut digits = crate::channel::mixed_radix_digits(&radices, i);
            let interferer = digits.pop().unwrap_or(0);
            CodeIndexVector::new(digits, interferer)
        })
        .collect())
}

/// A channel together with a compatible ensemble.
#[derive(Debug, Clone)]
pub struct System {
    channel: ChannelModel,
    ensemble: CodeEnsemble,
    interferer_channel_index: Vec<usize>,
    vectors: Vec<CodeIndexVector>,
}

impl System {
    pub fn new(channel: ChannelModel, ensemble: CodeEnsemble) -> Result<Self> {
        let k = channel.num_users();
        if k > MAX_USERS {
            return Err(Error::Dimension(format!(
                "{k} users exceeds the maximum of {MAX_USERS}"
            )));
        }
        if ensemble.users.len() != k {
            return Err(Error::Dimension(format!(
                "ensemble has {} users, channel has {}",
                ensemble.users.len(),
                k
            )));
        }
        for (user, options) in ensemble.users.iter().enumerate() {
            if options.is_empty() {
                return Err(Error::InvalidOption(format!("user {} has no options", user + 1)));
            }
            for (j, option) in options.iter().enumerate() {
                option.check()?;
                if option.input_dist.len() != channel.input_alphabets()[user] {
                    return Err(Error::Dimension(format!(
                        "user {} option {} has {} input probabilities, alphabet size is {}",
                        user + 1,
                        j,
                        option.input_dist.len(),
                        channel.input_alphabets()[user]
                    )));
                }
            }
        }
        let interferer_channel_index = if ensemble.interferer_options.is_empty() {
            (0..channel.num_interferer_options()).collect()
        } else {
            ensemble
                .interferer_options
                .iter()
                .map(|label| {
                    channel.interferer_index(label).ok_or_else(|| {
                        Error::Dimension(format!("interferer option {label:?} not defined by the channel"))
                    })
                })
                .collect::<Result<Vec<_>>>()?
        };
        let counts: Vec<usize> = ensemble.users.iter().map(Vec::len).collect();
        let vectors = enumerate_vectors(&counts, interferer_channel_index.len())?;
        Ok(Self {
            channel,
            ensemble,
            interferer_channel_index,
            vectors,
        })
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    pub fn ensemble(&self) -> &CodeEnsemble {
        &self.ensemble
    }

    pub fn num_users(&self) -> usize {
        self.channel.num_users()
    }

    pub fn all_users(&self) -> UserSet {
        UserSet::full(self.num_users())
    }

    /// Every code index vector, in [`enumerate_vectors`] order.
    pub fn vectors(&self) -> &[CodeIndexVector] {
        &self.vectors
    }

    pub fn vector_position(&self, g: &CodeIndexVector) -> Option<usize> {
        self.vectors.binary_search(g).ok()
    }

    pub fn option(&self, user: usize, g: &CodeIndexVector) -> &CodeOption {
        &self.ensemble.users[user][g.options[user]]
    }

    pub fn rate(&self, user: usize, g: &CodeIndexVector) -> f64 {
        self.option(user, g).rate
    }

    /// Channel option index selected by the interferer entry of `g`.
    pub fn channel_option(&self, g: &CodeIndexVector) -> usize {
        self.interferer_channel_index[g.interferer]
    }

    pub fn check_vector(&self, g: &CodeIndexVector) -> Result<()> {
        if g.options.len() != self.num_users() {
            return Err(Error::Dimension(format!(
                "code index vector {g} has {} entries, expected {}",
                g.options.len(),
                self.num_users()
            )));
        }
        for (user, &o) in g.options.iter().enumerate() {
            let limit = self.ensemble.users[user].len();
            if o >= limit {
                return Err(Error::OutOfRange {
                    what: "option index",
                    index: o,
                    limit,
                });
            }
        }
        if g.interferer >= self.interferer_channel_index.len() {
            return Err(Error::OutOfRange {
                what: "interferer index",
                index: g.interferer,
                limit: self.interferer_channel_index.len(),
            });
        }
        Ok(())
    }
}

/// Operation region, margin and decode set of a `(D, R_D)` decoder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperationConfig {
    pub decode_set: UserSet,
    pub region: BTreeSet<CodeIndexVector>,
    pub margin: BTreeSet<CodeIndexVector>,
}

impl OperationConfig {
    /// Rejects overlapping region and margin, and an empty decode set.
    pub fn new(
        decode_set: UserSet,
        region: BTreeSet<CodeIndexVector>,
        margin: BTreeSet<CodeIndexVector>,
    ) -> Result<Self> {
        if decode_set.is_empty() {
            return Err(Error::EmptySet("decode set"));
        }
        if let Some(g) = region.intersection(&margin).next() {
            return Err(Error::RegionMarginOverlap(g.to_string()));
        }
        Ok(Self {
            decode_set,
            region,
            margin,
        })
    }

    /// Like [`OperationConfig::new`] and also checks every vector against `system`.
    pub fn for_system(
        system: &System,
        decode_set: UserSet,
        region: BTreeSet<CodeIndexVector>,
        margin: BTreeSet<CodeIndexVector>,
    ) -> Result<Self> {
        if !decode_set.is_subset_of(system.all_users()) {
            return Err(Error::Dimension(format!("decode set {decode_set} has unknown users")));
        }
        for g in region.iter().chain(&margin) {
            system.check_vector(g)?;
        }
        Self::new(decode_set, region, margin)
    }

    pub fn zone(&self, g: &CodeIndexVector) -> Zone {
        if self.region.contains(g) {
            Zone::Region
        } else if self.margin.contains(g) {
            Zone::Margin
        } else {
            Zone::Outside
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Region,
    Margin,
    Outside,
}

/// Weights `alpha_g >= 0` with `sum_g exp(-N alpha_g) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightRepr", into = "WeightRepr")]
pub struct WeightAssignment {
    n: usize,
    weights: std::collections::BTreeMap<CodeIndexVector, f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightRepr {
    #[serde(rename = "N")]
    n: usize,
    weights: Vec<WeightEntry>,
}

#[derive(Serialize, Deserialize)]
struct WeightEntry {
    g: CodeIndexVector,
    alpha: f64,
}

impl TryFrom<WeightRepr> for WeightAssignment {
    type Error = Error;
    fn try_from(repr: WeightRepr) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for e in repr.weights {
            if map.insert(e.g.clone(), e.alpha).is_some() {
                return Err(Error::InvalidWeights(format!("duplicate weight for {}", e.g)));
            }
        }
        WeightAssignment::new(repr.n, map)
    }
}

impl From<WeightAssignment> for WeightRepr {
    fn from(w: WeightAssignment) -> Self {
        WeightRepr {
            n: w.n,
            weights: w
                .weights
                .into_iter()
                .map(|(g, alpha)| WeightEntry { g, alpha })
                .collect(),
        }
    }
}

impl WeightAssignment {
    pub fn new(n: usize, weights: std::collections::BTreeMap<CodeIndexVector, f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidWeights("blocklength must be positive".into()));
        }
        if weights.is_empty() {
            return Err(Error::EmptySet("weight assignment"));
        }
        if let Some((g, a)) = weights.iter().find(|(_, a)| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::InvalidWeights(format!("alpha for {g} is {a}")));
        }
        let w = Self { n, weights };
        let total = w.total_mass();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidWeights(format!(
                "sum of exp(-N alpha) is {total}, expected 1"
            )));
        }
        Ok(w)
    }

    /// `alpha_g = ln|set| / N` for every vector in the set.
    pub fn uniform<'a, I>(vectors: I, n: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a CodeIndexVector>,
    {
        let set: BTreeSet<&CodeIndexVector> = vectors.into_iter().collect();
        if set.is_empty() {
            return Err(Error::EmptySet("vector set"));
        }
        if n == 0 {
            return Err(Error::InvalidWeights("blocklength must be positive".into()));
        }
        let alpha = (set.len() as f64).ln() / n as f64;
        Self::new(n, set.into_iter().map(|g| (g.clone(), alpha)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self, g: &CodeIndexVector) -> Result<f64> {
        self.weights
            .get(g)
            .copied()
            .ok_or_else(|| Error::MissingWeight(g.to_string()))
    }

    /// `exp(-N alpha_g)`.
    pub fn mass(&self, g: &CodeIndexVector) -> Result<f64> {
        Ok((-(self.n as f64) * self.alpha(g)?).exp())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.values().map(|a| (-(self.n as f64) * a).exp()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CodeIndexVector, f64)> {
        self.weights.iter().map(|(g, a)| (g, *a))
    }

    /// Errors unless every vector has a weight.
    pub fn require_all<'a>(&self, vectors: impl IntoIterator<Item = &'a CodeIndexVector>) -> Result<()> {
        for g in vectors {
            self.alpha(g)?;
        }
        Ok(())
    }
}
