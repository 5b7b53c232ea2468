//! Mutual information and membership predicates for distributed capacity
//! regions.
//!
//! Distributed regions (single user, user subset, all users) use strict
//! inequalities `sum r < I`. The fixed-distribution polymatroid and the
//! Gaussian closure use `<=`. Boundary points therefore fall outside the
//! former and inside the latter. The empty subset is never quantified over.

use std::cell::RefCell;
use std::collections::HashMap;

use serde::Serialize;

use crate::channel::ChannelModel;
use crate::code_space::{subsets_containing, CodeIndexVector, System, UserSet};
use crate::error::{Error, Result};

/// Rates, input distributions and channel option of one code index vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CodePoint {
    pub rates: Vec<f64>,
    pub input_dists: Vec<Vec<f64>>,
    pub channel_option: usize,
}

impl CodePoint {
    pub fn from_system(system: &System, g: &CodeIndexVector) -> Result<Self> {
        system.check_vector(g)?;
        let k = system.num_users();
        Ok(Self {
            rates: (0..k).map(|u| system.rate(u, g)).collect(),
            input_dists: (0..k).map(|u| system.option(u, g).input_dist.clone()).collect(),
            channel_option: system.channel_option(g),
        })
    }
}

/// `P(x_1..x_K, y)` as a dense tensor indexed `(x_index, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    input_alphabets: Vec<usize>,
    output_alphabet: usize,
    probs: Vec<f64>,
}

impl JointDistribution {
    pub fn prob(&self, x_index: usize, y: usize) -> f64 {
        self.probs[x_index * self.output_alphabet + y]
    }

    pub fn num_users(&self) -> usize {
        self.input_alphabets.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// `P(x, y) = P(y | x, g0) * prod_k P_k(x_k)`.
pub fn build_joint(
    channel: &ChannelModel,
    channel_option: usize,
    input_dists: &[Vec<f64>],
) -> Result<JointDistribution> {
    channel.check_g0(channel_option)?;
    if input_dists.len() != channel.num_users() {
        return Err(Error::Dimension(format!(
            "{} input distributions for {} users",
            input_dists.len(),
            channel.num_users()
        )));
    }
    for (k, (dist, &size)) in input_dists.iter().zip(channel.input_alphabets()).enumerate() {
        if dist.len() != size {
            return Err(Error::Dimension(format!(
                "user {} distribution has {} entries, alphabet size {}",
                k + 1,
                dist.len(),
                size
            )));
        }
    }
    let ny = channel.output_alphabet();
    let mut probs = Vec::with_capacity(channel.num_inputs() * ny);
    for x in 0..channel.num_inputs() {
        let px: f64 = channel
            .input_vector(x)
            .iter()
            .zip(input_dists)
            .map(|(&s, d)| d[s])
            .product();
        probs.extend(channel.row(channel_option, x).iter().map(|w| w * px));
    }
    Ok(JointDistribution {
        input_alphabets: channel.input_alphabets().to_vec(),
        output_alphabet: ny,
        probs,
    })
}

/// Joint distribution induced by a code index vector of a system.
pub fn build_joint_for(system: &System, g: &CodeIndexVector) -> Result<JointDistribution> {
    let point = CodePoint::from_system(system, g)?;
    build_joint(system.channel(), point.channel_option, &point.input_dists)
}

/// Mixed-radix key over the users of a subset (lowest user most significant).
struct Projection {
    users: Vec<usize>,
    radices: Vec<usize>,
    size: usize,
}

impl Projection {
    fn new(alphabets: &[usize], set: UserSet) -> Self {
        let users = set.to_vec();
        let radices: Vec<usize> = users.iter().map(|&u| alphabets[u]).collect();
        let size = radices.iter().product();
        Self { users, radices, size }
    }

    fn key(&self, digits: &[usize]) -> usize {
        self.users
            .iter()
            .zip(&self.radices)
            .fold(0, |acc, (&u, &r)| acc * r + digits[u])
    }
}

/// `I(X_A; Y | X_C)` in nats, by marginalizing the joint tensor.
pub fn conditional_mi(joint: &JointDistribution, a: UserSet, c: UserSet) -> Result<f64> {
    if !a.is_disjoint(c) {
        return Err(Error::OverlappingSubsets {
            a: a.to_string(),
            c: c.to_string(),
        });
    }
    let all = UserSet::full(joint.num_users());
    if !a.union(c).is_subset_of(all) {
        return Err(Error::Dimension(format!(
            "subsets {a}, {c} exceed {} users",
            joint.num_users()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let ac = a.union(c);
    let ny = joint.output_alphabet;
    let alphabets = &joint.input_alphabets;
    let proj_ac = Projection::new(alphabets, ac);
    let proj_c = Projection::new(alphabets, c);
    let num_inputs: usize = alphabets.iter().product();

    let mut p_acy = vec![0.0; proj_ac.size * ny];
    let mut p_cy = vec![0.0; proj_c.size * ny];
    for x in 0..num_inputs {
        let digits = crate::channel::mixed_radix_digits(alphabets, x);
        let (kac, kc) = (proj_ac.key(&digits), proj_c.key(&digits));
        for y in 0..ny {
            let p = joint.prob(x, y);
            p_acy[kac * ny + y] += p;
            p_cy[kc * ny + y] += p;
        }
    }
    let p_ac: Vec<f64> = p_acy.chunks(ny).map(|r| r.iter().sum()).collect();
    let p_c: Vec<f64> = p_cy.chunks(ny).map(|r| r.iter().sum()).collect();

    let outside = all.difference(ac);
    let mut mi = 0.0;
    for x in 0..num_inputs {
        let digits = crate::channel::mixed_radix_digits(alphabets, x);
        // one representative input vector per (x_A, x_C) combination
        if outside.iter().any(|u| digits[u] != 0) {
            continue;
        }
        let (kac, kc) = (proj_ac.key(&digits), proj_c.key(&digits));
        for y in 0..ny {
            let pj = p_acy[kac * ny + y];
            if pj > 0.0 {
                mi += pj * (pj * p_c[kc] / (p_ac[kac] * p_cy[kc * ny + y])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// One inequality `sum_{k in S~} r_k (+ slack) < I(X_S~; Y | X_Sbar)` (or `<=`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inequality {
    pub s_tilde: UserSet,
    pub rate_sum: f64,
    pub mutual_info: f64,
    /// `mutual_info - rate_sum - slack`.
    pub margin: f64,
    pub holds: bool,
}

/// Outcome for one quantified subset `S`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetCheck {
    pub s: UserSet,
    /// First candidate `S~` whose inequality holds.
    pub satisfied_by: Option<UserSet>,
    pub candidates: Vec<Inequality>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionVerdict {
    pub member: bool,
    pub slack: f64,
    pub checks: Vec<SubsetCheck>,
}

impl RegionVerdict {
    fn from_checks(checks: Vec<SubsetCheck>, slack: f64) -> Self {
        Self {
            member: checks.iter().all(|c| c.satisfied_by.is_some()),
            slack,
            checks,
        }
    }

    /// Subsets for which no candidate inequality holds.
    pub fn violated_subsets(&self) -> Vec<UserSet> {
        self.checks
            .iter()
            .filter(|c| c.satisfied_by.is_none())
            .map(|c| c.s)
            .collect()
    }
}

/// Evaluates region predicates for fixed rates over one joint distribution.
/// Mutual information values are memoized per `(S~, Sbar)`.
pub struct RegionEvaluator {
    joint: JointDistribution,
    rates: Vec<f64>,
    cache: RefCell<HashMap<(UserSet, UserSet), f64>>,
}

impl RegionEvaluator {
    pub fn new(joint: JointDistribution, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != joint.num_users() {
            return Err(Error::Dimension(format!(
                "{} rates for {} users",
                rates.len(),
                joint.num_users()
            )));
        }
        if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::Domain(format!("rate {r} must be nonnegative")));
        }
        Ok(Self {
            joint,
            rates,
            cache: RefCell::new(HashMap::new()),
        })
    }

    pub fn for_vector(system: &System, g: &CodeIndexVector) -> Result<Self> {
        let point = CodePoint::from_system(system, g)?;
        let joint = build_joint(system.channel(), point.channel_option, &point.input_dists)?;
        Self::new(joint, point.rates)
    }

    pub fn num_users(&self) -> usize {
        self.rates.len()
    }

    pub fn mi(&self, a: UserSet, c: UserSet) -> f64 {
        if let Some(v) = self.cache.borrow().get(&(a, c)) {
            return *v;
        }
        let v = conditional_mi(&self.joint, a, c).expect("disjoint in-range subsets");
        self.cache.borrow_mut().insert((a, c), v);
        v
    }

    fn rate_sum(&self, set: UserSet) -> f64 {
        set.iter().map(|k| self.rates[k]).sum()
    }

    fn inequality(&self, s_tilde: UserSet, s: UserSet, slack: f64, strict: bool) -> Inequality {
        let s_bar = UserSet::full(self.num_users()).difference(s);
        let rate_sum = self.rate_sum(s_tilde);
        let mutual_info = self.mi(s_tilde, s_bar);
        let lhs = rate_sum + slack;
        Inequality {
            s_tilde,
            rate_sum,
            mutual_info,
            margin: mutual_info - lhs,
            holds: if strict { lhs < mutual_info } else { lhs <= mutual_info },
        }
    }

    fn subset_check(&self, s: UserSet, candidates: Vec<UserSet>, slack: f64, strict: bool) -> SubsetCheck {
        let candidates: Vec<Inequality> = candidates
            .into_iter()
            .map(|t| self.inequality(t, s, slack, strict))
            .collect();
        SubsetCheck {
            s,
            satisfied_by: candidates.iter().find(|c| c.holds).map(|c| c.s_tilde),
            candidates,
        }
    }

    fn check_user(&self, k: usize) -> Result<()> {
        if k >= self.num_users() {
            return Err(Error::OutOfRange {
                what: "user",
                index: k,
                limit: self.num_users(),
            });
        }
        Ok(())
    }

    /// Distributed capacity region for user `k` (0-based): every `S` containing
    /// `k` has some `S~` with `k in S~ ⊆ S` and `sum_{S~} r < I(X_S~; Y | X_Sbar)`.
    pub fn in_cd_user(&self, k: usize, slack: f64) -> Result<RegionVerdict> {
        self.check_user(k)?;
        let anchor = UserSet::single(k);
        let checks = subsets_containing(self.num_users(), anchor)
            .into_iter()
            .map(|s| {
                let candidates = s
                    .difference(anchor)
                    .subsets()
                    .into_iter()
                    .map(|t| t.union(anchor))
                    .collect();
                self.subset_check(s, candidates, slack, true)
            })
            .collect();
        Ok(RegionVerdict::from_checks(checks, slack))
    }

    /// Region for a user subset, evaluated directly: every `S` meeting `S0`
    /// has some `S~` with `S ∩ S0 ⊆ S~ ⊆ S` satisfying the strict inequality.
    pub fn in_cd_subset(&self, s0: UserSet, slack: f64) -> Result<RegionVerdict> {
        if s0.is_empty() {
            return Err(Error::EmptySet("user subset S0"));
        }
        if !s0.is_subset_of(UserSet::full(self.num_users())) {
            return Err(Error::Dimension(format!("S0 = {s0} has unknown users")));
        }
        let checks = UserSet::full(self.num_users())
            .subsets()
            .into_iter()
            .filter(|s| !s.is_disjoint(s0))
            .map(|s| {
                let core = s.intersection(s0);
                let candidates = s
                    .difference(core)
                    .subsets()
                    .into_iter()
                    .map(|t| t.union(core))
                    .collect();
                self.subset_check(s, candidates, slack, true)
            })
            .collect();
        Ok(RegionVerdict::from_checks(checks, slack))
    }

    /// The same region as the intersection of the single-user regions.
    pub fn in_cd_subset_by_intersection(&self, s0: UserSet, slack: f64) -> Result<IntersectionVerdict> {
        if s0.is_empty() {
            return Err(Error::EmptySet("user subset S0"));
        }
        let per_user = s0
            .iter()
            .map(|k| Ok((k, self.in_cd_user(k, slack)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(IntersectionVerdict {
            member: per_user.iter().all(|(_, v)| v.member),
            per_user,
        })
    }

    /// Region for decoding all users: `sum_S r < I(X_S; Y | X_Sbar)` for every nonempty `S`.
    pub fn in_cd_all(&self, slack: f64) -> RegionVerdict {
        self.polymatroid(slack, true)
    }

    /// Fixed-distribution Shannon polymatroid: `sum_S r <= I(X_S; Y | X_Sbar)`.
    pub fn shannon_polymatroid(&self) -> RegionVerdict {
        self.polymatroid(0.0, false)
    }

    fn polymatroid(&self, slack: f64, strict: bool) -> RegionVerdict {
        let checks = UserSet::full(self.num_users())
            .subsets()
            .into_iter()
            .filter(|s| !s.is_empty())
            .map(|s| self.subset_check(s, vec![s], slack, strict))
            .collect();
        RegionVerdict::from_checks(checks, slack)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntersectionVerdict {
    pub member: bool,
    pub per_user: Vec<(usize, RegionVerdict)>,
}

pub fn in_cd_user(system: &System, g: &CodeIndexVector, k: usize, slack: f64) -> Result<RegionVerdict> {
    RegionEvaluator::for_vector(system, g)?.in_cd_user(k, slack)
}

pub fn in_cd_subset(system: &System, g: &CodeIndexVector, s0: UserSet, slack: f64) -> Result<RegionVerdict> {
    RegionEvaluator::for_vector(system, g)?.in_cd_subset(s0, slack)
}

pub fn in_cd_all(system: &System, g: &CodeIndexVector, slack: f64) -> Result<RegionVerdict> {
    Ok(RegionEvaluator::for_vector(system, g)?.in_cd_all(slack))
}

/// Polymatroid check for a rate vector under fixed input distributions.
pub fn shannon_polymatroid_check(
    channel: &ChannelModel,
    channel_option: usize,
    input_dists: &[Vec<f64>],
    rates: &[f64],
) -> Result<RegionVerdict> {
    let joint = build_joint(channel, channel_option, input_dists)?;
    Ok(RegionEvaluator::new(joint, rates.to_vec())?.shannon_polymatroid())
}

/// Closed-form Gaussian MAC region with fixed Gaussian inputs:
/// `sum_S r <= 1/2 ln(1 + sum_S P / N0)` for every nonempty `S`.
pub fn gaussian_region_check(powers: &[f64], noise: f64, rates: &[f64]) -> Result<RegionVerdict> {
    if !(noise.is_finite() && noise > 0.0) {
        return Err(Error::Domain(format!("noise variance {noise} must be positive")));
    }
    if powers.len() != rates.len() || powers.is_empty() {
        return Err(Error::Dimension(format!(
            "{} powers and {} rates",
            powers.len(),
            rates.len()
        )));
    }
    if powers.len() > crate::code_space::MAX_USERS {
        return Err(Error::Dimension(format!("{} users exceeds the maximum", powers.len())));
    }
    if let Some(p) = powers.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::Domain(format!("power {p} must be nonnegative")));
    }
    if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::Domain(format!("rate {r} must be nonnegative")));
    }
    let checks = UserSet::full(rates.len())
        .subsets()
        .into_iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            let rate_sum: f64 = s.iter().map(|k| rates[k]).sum();
            let power: f64 = s.iter().map(|k| powers[k]).sum();
            let mutual_info = 0.5 * (1.0 + power / noise).ln();
            let holds = rate_sum <= mutual_info;
            SubsetCheck {
                s,
                satisfied_by: holds.then_some(s),
                candidates: vec![Inequality {
                    s_tilde: s,
                    rate_sum,
                    mutual_info,
                    margin: mutual_info - rate_sum,
                    holds,
                }],
            }
        })
        .collect();
    Ok(RegionVerdict::from_checks(checks, 0.0))
}
