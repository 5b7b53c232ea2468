//! Generalized error performance bounds: the `(D, R_D)` decoder bound and
//! its minimization over partitions of a single user's operation region.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code_space::{subsets_containing, CodeIndexVector, OperationConfig, System, UserSet, WeightAssignment};
use crate::error::{Error, Result};
use crate::exponents::{ExponentCache, ExponentKind, ExponentQuery};

/// Largest number of assignments the exhaustive partition search will visit.
pub const EXHAUSTIVE_CAP: u64 = 1_000_000;

const GREEDY_PASSES: usize = 10;

/// One `multiplier * exp(-N E)` summand of the bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GepTerm {
    pub g_tilde: CodeIndexVector,
    pub s: UserSet,
    pub kind: ExponentKind,
    pub exponent: f64,
    pub multiplier: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorBreakdown {
    pub g: CodeIndexVector,
    /// Wrong-message terms with `g~` inside the region.
    pub message: f64,
    /// Boundary terms with `g~` outside the region, matched on `S ⊂ D`.
    pub interference: f64,
    /// Boundary terms with `g~` outside region and margin, matched on `D`.
    pub detection: f64,
    pub total: f64,
    pub terms: Vec<GepTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GepBoundReport {
    pub decode_set: UserSet,
    #[serde(rename = "N")]
    pub n: usize,
    pub total: f64,
    pub per_g: Vec<VectorBreakdown>,
}

struct TermContext<'a> {
    system: &'a System,
    weights: &'a WeightAssignment,
    cache: &'a ExponentCache,
}

impl TermContext<'_> {
    fn term(
        &self,
        d: UserSet,
        s: UserSet,
        g: &CodeIndexVector,
        g_tilde: &CodeIndexVector,
        kind: ExponentKind,
        multiplier: f64,
    ) -> Result<GepTerm> {
        let query = ExponentQuery {
            kind,
            decode_set: d,
            s,
            g: g.clone(),
            g_tilde: g_tilde.clone(),
            alpha_g: self.weights.alpha(g)?,
            alpha_g_tilde: self.weights.alpha(g_tilde)?,
        };
        let exponent = self.cache.get_or_compute(self.system, &query)?.value;
        Ok(GepTerm {
            g_tilde: g_tilde.clone(),
            s,
            kind,
            exponent,
            multiplier,
            value: multiplier * (-(self.weights.n() as f64) * exponent).exp(),
        })
    }
}

fn check_inputs(system: &System, config: &OperationConfig, weights: &WeightAssignment) -> Result<()> {
    weights.require_all(system.vectors())?;
    if !config.decode_set.is_subset_of(system.all_users()) {
        return Err(Error::Dimension(format!(
            "decode set {} has unknown users",
            config.decode_set
        )));
    }
    for g in config.region.iter().chain(&config.margin) {
        system.check_vector(g)?;
    }
    Ok(())
}

/// Upper bound on `GEP_D` for a decoder with decode set `D`, region `R_D`
/// and margin `R̂_D`, at the blocklength carried by `weights`.
pub fn gep_bound_d(
    system: &System,
    config: &OperationConfig,
    weights: &WeightAssignment,
    cache: &ExponentCache,
) -> Result<GepBoundReport> {
    check_inputs(system, config, weights)?;
    let ctx = TermContext { system, weights, cache };
    let d = config.decode_set;
    let region: Vec<&CodeIndexVector> = config.region.iter().collect();
    let per_g = region
        .par_iter()
        .map(|g| vector_breakdown(&ctx, config, g))
        .collect::<Result<Vec<_>>>()?;
    let total = per_g.iter().map(|b| b.total).sum();
    Ok(GepBoundReport {
        decode_set: d,
        n: weights.n(),
        total,
        per_g,
    })
}

fn vector_breakdown(ctx: &TermContext, config: &OperationConfig, g: &CodeIndexVector) -> Result<VectorBreakdown> {
    let d = config.decode_set;
    let mut terms = Vec::new();
    let (mut message, mut interference, mut detection) = (0.0, 0.0, 0.0);
    for s in d.proper_subsets() {
        for gt in ctx.system.vectors() {
            if !gt.agrees_on(g, s) {
                continue;
            }
            let t = if config.region.contains(gt) {
                let t = ctx.term(d, s, g, gt, ExponentKind::Message, 1.0)?;
                message += t.value;
                t
            } else {
                let t = ctx.term(d, s, g, gt, ExponentKind::InterferenceSubset, 2.0)?;
                interference += t.value;
                t
            };
            terms.push(t);
        }
    }
    for gt in ctx.system.vectors() {
        if config.region.contains(gt) || config.margin.contains(gt) || !gt.agrees_on(g, d) {
            continue;
        }
        let t = ctx.term(d, d, g, gt, ExponentKind::InterferenceFull, 2.0)?;
        detection += t.value;
        terms.push(t);
    }
    Ok(VectorBreakdown {
        g: g.clone(),
        message,
        interference,
        detection,
        total: message + interference + detection,
        terms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    Exhaustive,
    Greedy,
}

impl std::str::FromStr for PartitionStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(Self::Exhaustive),
            "greedy" => Ok(Self::Greedy),
            other => Err(Error::Domain(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Decode set chosen for every vector of user 1's operation region, with
/// the induced regions and margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionAssignment {
    #[serde(with = "pairs")]
    pub assignment: BTreeMap<CodeIndexVector, UserSet>,
    #[serde(with = "pairs")]
    pub regions: BTreeMap<UserSet, BTreeSet<CodeIndexVector>>,
    #[serde(with = "pairs")]
    pub margins: BTreeMap<UserSet, BTreeSet<CodeIndexVector>>,
}

/// Maps with structured keys as `[key, value]` lists, since JSON object keys are strings.
mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

impl PartitionAssignment {
    /// Groups `assignment` into regions and forms the margins
    /// `R̂_D = (R_1 ∪ R̂_1) \ R_D` for every candidate `D`.
    pub fn new(
        assignment: BTreeMap<CodeIndexVector, UserSet>,
        candidates: &[UserSet],
        margin1: &BTreeSet<CodeIndexVector>,
    ) -> Self {
        let mut regions: BTreeMap<UserSet, BTreeSet<CodeIndexVector>> =
            candidates.iter().map(|&d| (d, BTreeSet::new())).collect();
        for (g, d) in &assignment {
            regions.entry(*d).or_default().insert(g.clone());
        }
        let margins = regions
            .iter()
            .map(|(d, r)| {
                let m = assignment
                    .keys()
                    .chain(margin1)
                    .filter(|g| !r.contains(*g))
                    .cloned()
                    .collect();
                (*d, m)
            })
            .collect();
        Self {
            assignment,
            regions,
            margins,
        }
    }

    pub fn config(&self, d: UserSet) -> Result<OperationConfig> {
        OperationConfig::new(
            d,
            self.regions.get(&d).cloned().unwrap_or_default(),
            self.margins.get(&d).cloned().unwrap_or_default(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub strategy: PartitionStrategy,
    #[serde(rename = "N")]
    pub n: usize,
    /// Sum of `reports[*].total`.
    pub total: f64,
    pub assignment: PartitionAssignment,
    /// One bound per decode set with a nonempty region.
    pub reports: Vec<GepBoundReport>,
    pub assignments_evaluated: u64,
}

/// Pairwise decomposition of the partition objective: the contribution of
/// `g` under decode set `D` is `fixed + Σ_{g~ ∈ R_1} (M if g~ shares D else I)`.
struct PartitionTable {
    fixed: Vec<Vec<f64>>,
    /// `[g][d][g~]` for `g~` in `R_1`.
    inside: Vec<Vec<Vec<f64>>>,
    outside: Vec<Vec<Vec<f64>>>,
}

impl PartitionTable {
    fn build(
        ctx: &TermContext,
        region1: &[CodeIndexVector],
        margin1: &BTreeSet<CodeIndexVector>,
        candidates: &[UserSet],
    ) -> Result<Self> {
        let in_r1: BTreeSet<&CodeIndexVector> = region1.iter().collect();
        let rows = region1
            .par_iter()
            .map(|g| {
                let mut fixed = Vec::with_capacity(candidates.len());
                let mut inside = Vec::with_capacity(candidates.len());
                let mut outside = Vec::with_capacity(candidates.len());
                for &d in candidates {
                    let mut f = 0.0;
                    for s in d.proper_subsets() {
                        for gt in ctx.system.vectors() {
                            if !in_r1.contains(gt) && gt.agrees_on(g, s) {
                                f += ctx.term(d, s, g, gt, ExponentKind::InterferenceSubset, 2.0)?.value;
                            }
                        }
                    }
                    for gt in ctx.system.vectors() {
                        if !in_r1.contains(gt) && !margin1.contains(gt) && gt.agrees_on(g, d) {
                            f += ctx.term(d, d, g, gt, ExponentKind::InterferenceFull, 2.0)?.value;
                        }
                    }
                    let (mut ins, mut outs) = (Vec::new(), Vec::new());
                    for gt in region1 {
                        let (mut m, mut i) = (0.0, 0.0);
                        for s in d.proper_subsets() {
                            if gt.agrees_on(g, s) {
                                m += ctx.term(d, s, g, gt, ExponentKind::Message, 1.0)?.value;
                                i += ctx.term(d, s, g, gt, ExponentKind::InterferenceSubset, 2.0)?.value;
                            }
                        }
                        ins.push(m);
                        outs.push(i);
                    }
                    fixed.push(f);
                    inside.push(ins);
                    outside.push(outs);
                }
                Ok((fixed, inside, outside))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut table = PartitionTable {
            fixed: Vec::new(),
            inside: Vec::new(),
            outside: Vec::new(),
        };
        for (f, i, o) in rows {
            table.fixed.push(f);
            table.inside.push(i);
            table.outside.push(o);
        }
        Ok(table)
    }

    fn contribution(&self, choice: &[usize], a: usize) -> f64 {
        let d = choice[a];
        let mut v = self.fixed[a][d];
        for (b, &db) in choice.iter().enumerate() {
            v += if db == d {
                self.inside[a][d][b]
            } else {
                self.outside[a][d][b]
            };
        }
        v
    }

    fn total(&self, choice: &[usize]) -> f64 {
        (0..choice.len()).map(|a| self.contribution(choice, a)).sum()
    }
}

/// Minimizes the summed `(D, R_D)` bounds over assignments of user 1's
/// operation region `region1` to decode sets containing user 1.
pub fn gep_bound_single_user(
    system: &System,
    region1: &BTreeSet<CodeIndexVector>,
    margin1: &BTreeSet<CodeIndexVector>,
    weights: &WeightAssignment,
    strategy: PartitionStrategy,
    cache: &ExponentCache,
) -> Result<PartitionReport> {
    if let Some(g) = region1.intersection(margin1).next() {
        return Err(Error::RegionMarginOverlap(g.to_string()));
    }
    weights.require_all(system.vectors())?;
    for g in region1.iter().chain(margin1) {
        system.check_vector(g)?;
    }
    let candidates = subsets_containing(system.num_users(), UserSet::single(0));
    let vectors: Vec<CodeIndexVector> = region1.iter().cloned().collect();

    let count = (candidates.len() as u128).checked_pow(vectors.len() as u32);
    if strategy == PartitionStrategy::Exhaustive && count.is_none_or(|c| c > EXHAUSTIVE_CAP as u128) {
        let shown = match count {
            Some(c) => c.to_string(),
            None => format!("{}^{}", candidates.len(), vectors.len()),
        };
        return Err(Error::ExhaustiveCap {
            count: shown,
            cap: EXHAUSTIVE_CAP,
        });
    }

    let ctx = TermContext { system, weights, cache };
    let table = PartitionTable::build(&ctx, &vectors, margin1, &candidates)?;
    let full = candidates.len() - 1;
    let (choice, evaluated) = match strategy {
        PartitionStrategy::Exhaustive => exhaustive(&table, vectors.len(), candidates.len()),
        PartitionStrategy::Greedy => greedy(&table, vectors.len(), candidates.len(), full),
    };

    let assignment = vectors
        .iter()
        .cloned()
        .zip(choice.iter().map(|&i| candidates[i]))
        .collect();
    let assignment = PartitionAssignment::new(assignment, &candidates, margin1);
    let mut reports = Vec::new();
    for (&d, region) in &assignment.regions {
        if region.is_empty() {
            continue;
        }
        reports.push(gep_bound_d(system, &assignment.config(d)?, weights, cache)?);
    }
    Ok(PartitionReport {
        strategy,
        n: weights.n(),
        total: reports.iter().map(|r| r.total).sum(),
        assignment,
        reports,
        assignments_evaluated: evaluated,
    })
}

fn exhaustive(table: &PartitionTable, len: usize, radix: usize) -> (Vec<usize>, u64) {
    let mut choice = vec![0; len];
    let mut best = (f64::INFINITY, choice.clone());
    let mut evaluated = 0u64;
    loop {
        let v = table.total(&choice);
        evaluated += 1;
        if v < best.0 {
            best = (v, choice.clone());
        }
        // odometer, last vector fastest
        let mut i = len;
        loop {
            if i == 0 {
                return (best.1, evaluated);
            }
            i -= 1;
            choice[i] += 1;
            if choice[i] < radix {
                break;
            }
            choice[i] = 0;
        }
    }
}

fn greedy(table: &PartitionTable, len: usize, radix: usize, start: usize) -> (Vec<usize>, u64) {
    let mut choice = vec![start; len];
    let mut current = table.total(&choice);
    let mut evaluated = 1u64;
    for _ in 0..GREEDY_PASSES {
        let mut changed = false;
        for a in 0..len {
            let keep = choice[a];
            let mut best = (current, keep);
            for d in 0..radix {
                if d == keep {
                    continue;
                }
                choice[a] = d;
                let v = table.total(&choice);
                evaluated += 1;
                if v < best.0 {
                    best = (v, d);
                }
            }
            choice[a] = best.1;
            if best.1 != keep {
                current = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (choice, evaluated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::fixtures;
    use crate::code_space::{CodeEnsemble, CodeOption};
    use crate::exponents::{maximize, MaximizeOptions};

    fn civ(o: &[usize], i: usize) -> CodeIndexVector {
        CodeIndexVector::new(o.to_vec(), i)
    }

    fn two_user() -> System {
        System::new(
            fixtures::noisy_or(0.1),
            CodeEnsemble::new(vec![
                vec![CodeOption::uniform(0.05, 2), CodeOption::uniform(0.2, 2)],
                vec![CodeOption::uniform(0.0, 2), CodeOption::uniform(0.1, 2)],
            ]),
        )
        .unwrap()
    }

    fn cache() -> ExponentCache {
        ExponentCache::new(MaximizeOptions {
            grid_points: 41,
            ..Default::default()
        })
    }

    /// Independent Gallager random-coding exponent for BSC(p), uniform input.
    fn gallager_er(p: f64, r: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for i in 1..=100_000 {
            let rho = i as f64 / 100_000.0;
            let a = 0.5 * ((1.0 - p).powf(1.0 / (1.0 + rho)) + p.powf(1.0 / (1.0 + rho)));
            let e0 = -(2.0 * a.powf(1.0 + rho)).ln();
            best = best.max(e0 - rho * r);
        }
        best
    }

    #[test]
    fn single_vector_reduces_to_random_coding_bound() {
        let sys = System::new(
            fixtures::bsc(0.1),
            CodeEnsemble::new(vec![vec![CodeOption::uniform(0.1, 2)]]),
        )
        .unwrap();
        let g = civ(&[0], 0);
        let w = WeightAssignment::uniform(sys.vectors(), 20).unwrap();
        let cfg = OperationConfig::new(UserSet::of(&[0]), [g.clone()].into(), BTreeSet::new()).unwrap();
        let r = gep_bound_d(&sys, &cfg, &w, &ExponentCache::new(MaximizeOptions::default())).unwrap();
        assert_eq!(r.per_g.len(), 1);
        assert_eq!(r.per_g[0].terms.len(), 1);
        assert_eq!(r.per_g[0].interference, 0.0);
        assert_eq!(r.per_g[0].detection, 0.0);
        let reference = (-20.0 * gallager_er(0.1, 0.1)).exp();
        assert!(r.total <= reference * (1.0 + 1e-9), "{} vs {}", r.total, reference);
        assert!(r.total >= reference * (1.0 - 1e-4), "{} vs {}", r.total, reference);
    }

    #[test]
    fn empty_region_gives_zero() {
        let sys = two_user();
        let w = WeightAssignment::uniform(sys.vectors(), 10).unwrap();
        let cfg = OperationConfig::new(UserSet::of(&[0, 1]), BTreeSet::new(), BTreeSet::new()).unwrap();
        let r = gep_bound_d(&sys, &cfg, &w, &cache()).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(r.per_g.is_empty());
    }

    #[test]
    fn missing_weight_is_an_error() {
        let sys = two_user();
        let some = [civ(&[0, 0], 0), civ(&[1, 0], 0)];
        let w = WeightAssignment::uniform(&some, 10).unwrap();
        let cfg = OperationConfig::new(UserSet::of(&[0]), some.iter().cloned().collect(), BTreeSet::new()).unwrap();
        assert!(matches!(
            gep_bound_d(&sys, &cfg, &w, &cache()),
            Err(Error::MissingWeight(_))
        ));
    }

    fn config(d: &[usize], region: &[CodeIndexVector], margin: &[CodeIndexVector]) -> OperationConfig {
        OperationConfig::new(
            UserSet::of(d),
            region.iter().cloned().collect(),
            margin.iter().cloned().collect(),
        )
        .unwrap()
    }

    #[test]
    fn total_matches_independent_recomputation() {
        let sys = two_user();
        let w = WeightAssignment::uniform(sys.vectors(), 30).unwrap();
        let opts = MaximizeOptions {
            grid_points: 41,
            ..Default::default()
        };
        let cfg = config(&[0, 1], &[civ(&[0, 0], 0), civ(&[0, 1], 0)], &[civ(&[1, 0], 0)]);
        let report = gep_bound_d(&sys, &cfg, &w, &ExponentCache::new(opts)).unwrap();
        let d = UserSet::of(&[0, 1]);
        let mut expected = 0.0;
        let e = |kind, s, g: &CodeIndexVector, gt: &CodeIndexVector| {
            let q = ExponentQuery {
                kind,
                decode_set: d,
                s,
                g: g.clone(),
                g_tilde: gt.clone(),
                alpha_g: w.alpha(g).unwrap(),
                alpha_g_tilde: w.alpha(gt).unwrap(),
            };
            (-30.0 * maximize(&sys, &q, &opts).unwrap().value).exp()
        };
        let mut count = 0;
        for g in &cfg.region {
            for s in [UserSet::EMPTY, UserSet::of(&[0]), UserSet::of(&[1])] {
                for gt in sys.vectors() {
                    if (0..2).any(|u| s.contains(u) && g.options[u] != gt.options[u]) {
                        continue;
                    }
                    count += 1;
                    expected += if cfg.region.contains(gt) {
                        e(ExponentKind::Message, s, g, gt)
                    } else {
                        2.0 * e(ExponentKind::InterferenceSubset, s, g, gt)
                    };
                }
            }
            // only g itself matches g on D, and it sits in the region
        }
        let terms: usize = report.per_g.iter().map(|b| b.terms.len()).sum();
        assert_eq!(terms, count);
        assert!((report.total - expected).abs() <= 1e-9 * expected.max(1.0));
        let by_parts: f64 = report
            .per_g
            .iter()
            .map(|b| b.message + b.interference + b.detection)
            .sum();
        assert!((report.total - by_parts).abs() < 1e-12);
        assert!(report.total >= 0.0);
    }

    #[test]
    fn detection_terms_require_match_on_d_and_respect_margin() {
        let sys = System::new(
            fixtures::jammed_adder(0.05),
            CodeEnsemble::new(vec![
                vec![CodeOption::uniform(0.02, 2)],
                vec![CodeOption::uniform(0.01, 2)],
            ]),
        )
        .unwrap();
        let w = WeightAssignment::uniform(sys.vectors(), 50).unwrap();
        let clean = civ(&[0, 0], 0);
        let jammed = civ(&[0, 0], 1);
        let open = gep_bound_d(&sys, &config(&[0, 1], &[clean.clone()], &[]), &w, &cache()).unwrap();
        let marg = gep_bound_d(
            &sys,
            &config(&[0, 1], &[clean.clone()], &[jammed.clone()]),
            &w,
            &cache(),
        )
        .unwrap();
        assert!(open.per_g[0].detection > 0.0);
        assert_eq!(marg.per_g[0].detection, 0.0);
        assert_eq!(open.per_g[0].message, marg.per_g[0].message);
        assert_eq!(open.per_g[0].interference, marg.per_g[0].interference);
        assert!(marg.total <= open.total);
    }

    #[test]
    fn doubling_n_decreases_total() {
        let sys = two_user();
        let cfg = config(&[0, 1], &[civ(&[0, 0], 0)], &[]);
        let small = gep_bound_d(
            &sys,
            &cfg,
            &WeightAssignment::uniform(sys.vectors(), 100).unwrap(),
            &cache(),
        )
        .unwrap();
        let big = gep_bound_d(
            &sys,
            &cfg,
            &WeightAssignment::uniform(sys.vectors(), 200).unwrap(),
            &cache(),
        )
        .unwrap();
        let all_positive = small.per_g.iter().flat_map(|b| &b.terms).all(|t| t.exponent > 0.0);
        if all_positive {
            assert!(big.total < small.total);
        }
    }

    #[test]
    fn partition_margins_follow_formula() {
        let sys = two_user();
        let w = WeightAssignment::uniform(sys.vectors(), 40).unwrap();
        let r1: BTreeSet<_> = [civ(&[0, 0], 0), civ(&[0, 1], 0)].into();
        let m1: BTreeSet<_> = [civ(&[1, 0], 0)].into();
        let c = cache();
        let ex = gep_bound_single_user(&sys, &r1, &m1, &w, PartitionStrategy::Exhaustive, &c).unwrap();
        let gr = gep_bound_single_user(&sys, &r1, &m1, &w, PartitionStrategy::Greedy, &c).unwrap();
        assert_eq!(ex.assignments_evaluated, 4);
        assert!(ex.total <= gr.total + 1e-12);
        for rep in [&ex, &gr] {
            let a = &rep.assignment;
            let mut covered = BTreeSet::new();
            for (d, region) in &a.regions {
                assert!(region.iter().all(|g| covered.insert(g.clone())));
                let expect: BTreeSet<_> = r1.union(&m1).filter(|g| !region.contains(*g)).cloned().collect();
                assert_eq!(a.margins[d], expect);
            }
            assert_eq!(covered, r1);
            let summed: f64 = rep.reports.iter().map(|r| r.total).sum();
            assert_eq!(rep.total, summed);
            let json = serde_json::to_string(rep).unwrap();
            assert_eq!(&serde_json::from_str::<PartitionReport>(&json).unwrap(), rep);
        }
    }

    #[test]
    fn partition_table_agrees_with_direct_bounds() {
        let sys = two_user();
        let w = WeightAssignment::uniform(sys.vectors(), 25).unwrap();
        let r1: Vec<_> = vec![civ(&[0, 0], 0), civ(&[0, 1], 0), civ(&[1, 1], 0)];
        let m1: BTreeSet<_> = [civ(&[1, 0], 0)].into();
        let c = cache();
        let ctx = TermContext {
            system: &sys,
            weights: &w,
            cache: &c,
        };
        let candidates = subsets_containing(2, UserSet::single(0));
        let table = PartitionTable::build(&ctx, &r1, &m1, &candidates).unwrap();
        for choice in [[0, 0, 0], [1, 1, 1], [0, 1, 0], [1, 0, 1]] {
            let asg = r1.iter().cloned().zip(choice.iter().map(|&i| candidates[i])).collect();
            let asg = PartitionAssignment::new(asg, &candidates, &m1);
            let direct: f64 = candidates
                .iter()
                .map(|&d| gep_bound_d(&sys, &asg.config(d).unwrap(), &w, &c).unwrap().total)
                .sum();
            let fast = table.total(&choice);
            assert!(
                (direct - fast).abs() <= 1e-9 * direct.max(1.0),
                "{choice:?}: {direct} vs {fast}"
            );
        }
    }

    #[test]
    fn single_vector_partition_and_empty_region() {
        let sys = two_user();
        let w = WeightAssignment::uniform(sys.vectors(), 40).unwrap();
        let c = cache();
        let r1: BTreeSet<_> = [civ(&[1, 1], 0)].into();
        let ex = gep_bound_single_user(&sys, &r1, &BTreeSet::new(), &w, PartitionStrategy::Exhaustive, &c).unwrap();
        let gr = gep_bound_single_user(&sys, &r1, &BTreeSet::new(), &w, PartitionStrategy::Greedy, &c).unwrap();
        assert_eq!(ex.total, gr.total);
        let best = [UserSet::of(&[0]), UserSet::of(&[0, 1])]
            .into_iter()
            .map(|d| {
                let cfg = OperationConfig::new(d, r1.clone(), BTreeSet::new()).unwrap();
                gep_bound_d(&sys, &cfg, &w, &c).unwrap().total
            })
            .fold(f64::INFINITY, f64::min);
        assert!((ex.total - best).abs() <= 1e-12 * best.max(1.0));

        let empty = gep_bound_single_user(
            &sys,
            &BTreeSet::new(),
            &BTreeSet::new(),
            &w,
            PartitionStrategy::Exhaustive,
            &c,
        )
        .unwrap();
        assert_eq!(empty.total, 0.0);
        assert!(empty.assignment.assignment.is_empty());
    }

    #[test]
    fn exhaustive_cap_is_enforced() {
        let opts: Vec<CodeOption> = (0..30).map(|i| CodeOption::uniform(0.001 * i as f64, 2)).collect();
        let sys = System::new(
            fixtures::noisy_or(0.1),
            CodeEnsemble::new(vec![opts.clone(), vec![CodeOption::uniform(0.0, 2)]]),
        )
        .unwrap();
        let w = WeightAssignment::uniform(sys.vectors(), 10).unwrap();
        let r1: BTreeSet<_> = (0..30).map(|i| civ(&[i, 0], 0)).collect();
        let err = gep_bound_single_user(&sys, &r1, &BTreeSet::new(), &w, PartitionStrategy::Exhaustive, &cache())
            .unwrap_err();
        match err {
            Error::ExhaustiveCap { count, cap } => {
                assert_eq!(count, "1073741824");
                assert_eq!(cap, EXHAUSTIVE_CAP);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overlapping_region_and_margin_rejected() {
        let sys = two_user();
        let w = WeightAssignment::uniform(sys.vectors(), 10).unwrap();
        let g: BTreeSet<_> = [civ(&[0, 0], 0)].into();
        assert!(gep_bound_single_user(&sys, &g, &g, &w, PartitionStrategy::Greedy, &cache()).is_err());
    }
}
