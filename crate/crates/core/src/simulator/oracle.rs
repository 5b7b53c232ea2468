use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codebook::{generate_codebooks, DEFAULT_SYMBOL_CAP};
use super::decoder::{DecodeTables, Decoder};
use super::policy::ThresholdPolicy;
use super::{
    check_mode, classify_trial, enumerate_outputs, message_vectors, output_probability, EnumerationLimit, ErrorMode,
};
use crate::code_space::{CodeIndexVector, OperationConfig, System, UserSet, WeightAssignment, Zone};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// An S-equal pair inside the region is at least as likely as the truth.
    Message,
    /// The truth fails its own threshold.
    Threshold,
    /// The truth lies outside the region and an S-equal pair clears the threshold.
    Interference,
}

/// Exact probability of one event class for the realized codebooks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactEvent {
    pub kind: EventKind,
    pub g: CodeIndexVector,
    pub g_tilde: CodeIndexVector,
    pub s: UserSet,
    /// The transmitted vector: `g~` for interference events, `g` otherwise.
    pub truth: CodeIndexVector,
    pub worst: f64,
    pub average: f64,
    /// `worst * e^{-N alpha(truth)}`.
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeProbability {
    pub mode: ErrorMode,
    pub worst: f64,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVector {
    pub g: CodeIndexVector,
    pub zone: Zone,
    pub alpha: f64,
    pub messages: usize,
    pub modes: Vec<ModeProbability>,
}

impl OracleVector {
    pub fn mode(&self, mode: ErrorMode) -> Option<&ModeProbability> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeGep {
    pub mode: ErrorMode,
    /// `sum_g max_w P_e(w, g) e^{-N alpha_g}`.
    pub worst_case: f64,
    /// The same with the maximum over messages replaced by the mean.
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub codebook_seed: u64,
    pub decode_set: UserSet,
    pub outputs: usize,
    pub vectors: Vec<OracleVector>,
    pub gep: Vec<ModeGep>,
    pub events: Vec<ExactEvent>,
    /// `sum` of the weighted event probabilities.
    pub event_total: f64,
}

impl OracleReport {
    pub fn gep(&self, mode: ErrorMode) -> Option<&ModeGep> {
        self.gep.iter().find(|m| m.mode == mode)
    }

    pub fn event(
        &self,
        kind: EventKind,
        g: &CodeIndexVector,
        g_tilde: &CodeIndexVector,
        s: UserSet,
    ) -> Option<&ExactEvent> {
        self.events
            .iter()
            .find(|e| e.kind == kind && &e.g == g && &e.g_tilde == g_tilde && e.s == s)
    }
}

enum Probe {
    Message { c: usize, c2: usize, s: UserSet },
    Threshold { c: usize, k: usize },
    Interference { c: usize, k: usize },
}

struct EventSpec {
    probe: Probe,
    kind: EventKind,
    g: CodeIndexVector,
    g_tilde: CodeIndexVector,
    s: UserSet,
    truth: usize,
}

fn event_specs(decoder: &Decoder, vectors: &[CodeIndexVector]) -> Vec<EventSpec> {
    let index = |g: &CodeIndexVector| vectors.iter().position(|v| v == g).expect("enumerated vector");
    let d = decoder.config().decode_set;
    let mut specs = Vec::new();
    for (c, cand) in decoder.candidates().iter().enumerate() {
        for s in d.proper_subsets() {
            for (c2, other) in decoder.candidates().iter().enumerate() {
                if other.g.agrees_on(&cand.g, s) {
                    specs.push(EventSpec {
                        probe: Probe::Message { c, c2, s },
                        kind: EventKind::Message,
                        g: cand.g.clone(),
                        g_tilde: other.g.clone(),
                        s,
                        truth: index(&cand.g),
                    });
                }
            }
        }
        for (k, con) in cand.constraints.iter().enumerate() {
            for (probe, kind, truth) in [
                (Probe::Threshold { c, k }, EventKind::Threshold, &cand.g),
                (Probe::Interference { c, k }, EventKind::Interference, &con.g_tilde),
            ] {
                specs.push(EventSpec {
                    probe,
                    kind,
                    g: cand.g.clone(),
                    g_tilde: con.g_tilde.clone(),
                    s: con.s,
                    truth: index(truth),
                });
            }
        }
    }
    specs
}

fn fires(decoder: &Decoder, tables: &DecodeTables, spec: &EventSpec, truth: &CodeIndexVector, w_d: &[usize]) -> bool {
    match spec.probe {
        Probe::Message { c, c2, s } => decoder.message_event(tables, c, w_d, c2, s),
        Probe::Threshold { c, k } => decoder.threshold_event(tables, c, k, w_d),
        Probe::Interference { c, k } => decoder.interference_event(tables, c, k, truth, w_d),
    }
}

/// Enumerates every output sequence and message vector for `decoder`'s
/// codebooks, giving exact per-vector error probabilities in each mode and
/// exact probabilities of every event class the decoder tests.
pub fn exact_oracle(decoder: &Decoder, modes: &[ErrorMode], limit: EnumerationLimit) -> Result<OracleReport> {
    let system = decoder.system();
    let config = decoder.config();
    let cb = decoder.codebooks();
    for &m in modes {
        check_mode(m, config)?;
    }
    let outputs = enumerate_outputs(system, cb, limit)?;
    let vectors = system.vectors();
    let messages: Vec<Vec<Vec<usize>>> = vectors.iter().map(|g| message_vectors(cb, g)).collect();
    let specs = event_specs(decoder, vectors);
    let mut by_truth: Vec<Vec<usize>> = vec![Vec::new(); vectors.len()];
    for (e, spec) in specs.iter().enumerate() {
        by_truth[spec.truth].push(e);
    }
    // flat accumulator offsets
    let mut err_offset = Vec::with_capacity(vectors.len());
    let mut total = 0;
    for m in &messages {
        err_offset.push(total);
        total += m.len() * modes.len();
    }
    let mut ev_offset = Vec::with_capacity(specs.len());
    for spec in &specs {
        ev_offset.push(total);
        total += messages[spec.truth].len();
    }

    let partials: Vec<Vec<f64>> = outputs
        .par_chunks()
        .map(|range| {
            let mut acc = vec![0.0; total];
            for code in range {
                let y = outputs.sequence(code);
                let tables = decoder.tables(&y);
                let outcome = decoder.decode_tables(&tables);
                for (vi, g) in vectors.iter().enumerate() {
                    for (wi, w) in messages[vi].iter().enumerate() {
                        let p = output_probability(system, cb, g, w, &y);
                        if p == 0.0 {
                            continue;
                        }
                        for (mi, &mode) in modes.iter().enumerate() {
                            if classify_trial(mode, config, g, w, &outcome) {
                                acc[err_offset[vi] + wi * modes.len() + mi] += p;
                            }
                        }
                        if by_truth[vi].is_empty() {
                            continue;
                        }
                        let w_d = decoder.restrict(w);
                        for &e in &by_truth[vi] {
                            if fires(decoder, &tables, &specs[e], g, &w_d) {
                                acc[ev_offset[e] + wi] += p;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut acc = vec![0.0; total];
    for part in partials {
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
    }

    let weights = decoder.weights();
    let n = decoder.n() as f64;
    let worst_mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (mut max, mut sum, mut count) = (0.0f64, 0.0, 0usize);
        for x in xs {
            max = max.max(x);
            sum += x;
            count += 1;
        }
        (max, sum / count.max(1) as f64)
    };

    let mut report_vectors = Vec::with_capacity(vectors.len());
    let mut gep: Vec<ModeGep> = modes
        .iter()
        .map(|&mode| ModeGep {
            mode,
            worst_case: 0.0,
            average: 0.0,
        })
        .collect();
    for (vi, g) in vectors.iter().enumerate() {
        let alpha = weights.alpha(g)?;
        let mass = (-n * alpha).exp();
        let count = messages[vi].len();
        let mut per_mode = Vec::with_capacity(modes.len());
        for (mi, &mode) in modes.iter().enumerate() {
            let (worst, average) = worst_mean(&mut (0..count).map(|wi| acc[err_offset[vi] + wi * modes.len() + mi]));
            gep[mi].worst_case += worst * mass;
            gep[mi].average += average * mass;
            per_mode.push(ModeProbability { mode, worst, average });
        }
        report_vectors.push(OracleVector {
            g: g.clone(),
            zone: config.zone(g),
            alpha,
            messages: count,
            modes: per_mode,
        });
    }

    let mut events = Vec::with_capacity(specs.len());
    let mut event_total = 0.0;
    for (e, spec) in specs.into_iter().enumerate() {
        let count = messages[spec.truth].len();
        let (worst, average) = worst_mean(&mut acc[ev_offset[e]..ev_offset[e] + count].iter().copied());
        let weighted = worst * (-n * weights.alpha(&vectors[spec.truth])?).exp();
        event_total += weighted;
        events.push(ExactEvent {
            kind: spec.kind,
            g: spec.g,
            g_tilde: spec.g_tilde,
            s: spec.s,
            truth: vectors[spec.truth].clone(),
            worst,
            average,
            weighted,
        });
    }

    Ok(OracleReport {
        n: decoder.n(),
        codebook_seed: cb.seed,
        decode_set: config.decode_set,
        outputs: outputs.len(),
        vectors: report_vectors,
        gep,
        events,
        event_total,
    })
}

/// Mean, standard deviation and range of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedModeGep {
    pub mode: ErrorMode,
    pub worst_case: Spread,
    pub average: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEvent {
    pub kind: EventKind,
    pub g: CodeIndexVector,
    pub g_tilde: CodeIndexVector,
    pub s: UserSet,
    pub truth: CodeIndexVector,
    pub worst: Spread,
    pub average: Spread,
}

/// Exact-oracle results averaged over independently drawn codebooks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSweepReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub seeds: Vec<u64>,
    pub gep: Vec<SeedModeGep>,
    pub events: Vec<SeedEvent>,
}

impl SeedSweepReport {
    pub fn event(
        &self,
        kind: EventKind,
        g: &CodeIndexVector,
        g_tilde: &CodeIndexVector,
        s: UserSet,
    ) -> Option<&SeedEvent> {
        self.events
            .iter()
            .find(|e| e.kind == kind && &e.g == g && &e.g_tilde == g_tilde && e.s == s)
    }
}

/// Runs [`exact_oracle`] once per codebook seed with a fixed policy and
/// summarizes every probability across seeds.
pub fn oracle_over_seeds(
    system: &System,
    config: &OperationConfig,
    weights: &WeightAssignment,
    policy: &ThresholdPolicy,
    seeds: &[u64],
    modes: &[ErrorMode],
    limit: EnumerationLimit,
) -> Result<SeedSweepReport> {
    if seeds.is_empty() {
        return Err(Error::EmptySet("codebook seeds"));
    }
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cb = generate_codebooks(system, weights.n(), seed, DEFAULT_SYMBOL_CAP)?;
        let dec = Decoder::new(system, config, weights, policy, &cb)?;
        reports.push(exact_oracle(&dec, modes, limit)?);
    }
    let first = &reports[0];
    let gep = first
        .gep
        .iter()
        .enumerate()
        .map(|(i, m)| SeedModeGep {
            mode: m.mode,
            worst_case: Spread::of(&reports.iter().map(|r| r.gep[i].worst_case).collect::<Vec<_>>()),
            average: Spread::of(&reports.iter().map(|r| r.gep[i].average).collect::<Vec<_>>()),
        })
        .collect();
    let events = first
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| SeedEvent {
            kind: e.kind,
            g: e.g.clone(),
            g_tilde: e.g_tilde.clone(),
            s: e.s,
            truth: e.truth.clone(),
            worst: Spread::of(&reports.iter().map(|r| r.events[i].worst).collect::<Vec<_>>()),
            average: Spread::of(&reports.iter().map(|r| r.events[i].average).collect::<Vec<_>>()),
        })
        .collect();
    Ok(SeedSweepReport {
        n: weights.n(),
        seeds: seeds.to_vec(),
        gep,
        events,
    })
}
