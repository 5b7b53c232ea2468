use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decoder::{DecodeTables, Decoder};
use super::{enumerate_outputs, output_probability, sample_messages, sample_output_sequence, EnumerationLimit};
use crate::code_space::{CodeIndexVector, UserSet};
use crate::error::{Error, Result};
use crate::optimize::linspace;

const CALIBRATION_SALT: u64 = 0xC0DE_CA11_B7A7_E000;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PolicyKey {
    pub g: CodeIndexVector,
    pub g_tilde: CodeIndexVector,
    pub s: UserSet,
}

/// Per-`(g, g~, S)` threshold offsets `t`. The decoder's log-threshold is
/// `N t` plus the `g~`-side likelihood of the candidate's `S` codewords with
/// the remaining decode-set users averaged out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PolicyRepr", into = "PolicyRepr")]
pub struct ThresholdPolicy {
    pub default_offset: f64,
    pub offsets: BTreeMap<PolicyKey, f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    #[serde(default)]
    default_offset: f64,
    #[serde(default)]
    offsets: Vec<PolicyEntry>,
}

#[derive(Serialize, Deserialize)]
struct PolicyEntry {
    g: CodeIndexVector,
    g_tilde: CodeIndexVector,
    s: UserSet,
    t: f64,
}

impl From<PolicyRepr> for ThresholdPolicy {
    fn from(r: PolicyRepr) -> Self {
        Self {
            default_offset: r.default_offset,
            offsets: r
                .offsets
                .into_iter()
                .map(|e| {
                    (
                        PolicyKey {
                            g: e.g,
                            g_tilde: e.g_tilde,
                            s: e.s,
                        },
                        e.t,
                    )
                })
                .collect(),
        }
    }
}

impl From<ThresholdPolicy> for PolicyRepr {
    fn from(p: ThresholdPolicy) -> Self {
        Self {
            default_offset: p.default_offset,
            offsets: p
                .offsets
                .into_iter()
                .map(|(k, t)| PolicyEntry {
                    g: k.g,
                    g_tilde: k.g_tilde,
                    s: k.s,
                    t,
                })
                .collect(),
        }
    }
}

impl ThresholdPolicy {
    pub fn constant(offset: f64) -> Self {
        Self {
            default_offset: offset,
            offsets: BTreeMap::new(),
        }
    }

    pub fn offset(&self, g: &CodeIndexVector, g_tilde: &CodeIndexVector, s: UserSet) -> f64 {
        let key = PolicyKey {
            g: g.clone(),
            g_tilde: g_tilde.clone(),
            s,
        };
        self.offsets.get(&key).copied().unwrap_or(self.default_offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Calibration {
    /// Full enumeration of outputs and messages for the calibration codebooks.
    Exact,
    /// Uniform messages, `trials` draws per code index vector.
    MonteCarlo { trials: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedOffset {
    pub g: CodeIndexVector,
    pub g_tilde: CodeIndexVector,
    pub s: UserSet,
    pub t: f64,
    /// `P_t e^{-N alpha_g} + P_i e^{-N alpha_g~}` at `t`.
    pub objective: f64,
    pub p_t: f64,
    pub p_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub calibration: Calibration,
    pub codebook_seed: u64,
    pub grid: Vec<f64>,
    pub policy: ThresholdPolicy,
    pub offsets: Vec<TunedOffset>,
}

pub fn default_offset_grid() -> Vec<f64> {
    linspace(-3.0, 3.0, 61)
}

/// Weighted samples of the two per-symbol margins of one constraint.
#[derive(Default, Clone)]
struct MarginSamples {
    /// Truth is the candidate vector; threshold event iff margin `<= t`.
    threshold: Vec<(f64, f64)>,
    /// Truth is `g~`; interference event iff margin `> t`.
    interference: Vec<(f64, f64)>,
}

impl MarginSamples {
    fn merge(&mut self, other: MarginSamples) {
        self.threshold.extend(other.threshold);
        self.interference.extend(other.interference);
    }
}

fn collect_margins(
    decoder: &Decoder,
    tables: &DecodeTables,
    truth: &CodeIndexVector,
    w: &[usize],
    weight: f64,
    out: &mut [Vec<MarginSamples>],
) {
    let w_d = decoder.restrict(w);
    for (c, cand) in decoder.candidates().iter().enumerate() {
        for (k, con) in cand.constraints.iter().enumerate() {
            if &cand.g == truth {
                out[c][k]
                    .threshold
                    .push((decoder.threshold_margin(tables, c, k, &w_d), weight));
            }
            if &con.g_tilde == truth {
                out[c][k]
                    .interference
                    .push((decoder.interference_margin(tables, c, k, truth, &w_d), weight));
            }
        }
    }
}

fn empty_samples(decoder: &Decoder) -> Vec<Vec<MarginSamples>> {
    decoder
        .candidates()
        .iter()
        .map(|c| vec![MarginSamples::default(); c.constraints.len()])
        .collect()
}

/// Chooses every offset of `decoder`'s constraints by grid search on
/// calibration samples, minimizing `P_t e^{-N alpha_g} + P_i e^{-N alpha_g~}`.
/// Ties go to the offset of smallest magnitude. The decoder's own offsets
/// are irrelevant: margins are measured against the base thresholds.
pub fn tune_policy(decoder: &Decoder, calibration: Calibration, grid: &[f64]) -> Result<TuningReport> {
    if grid.is_empty() {
        return Err(Error::Domain("empty offset grid".into()));
    }
    let system = decoder.system();
    let cb = decoder.codebooks();
    let n = decoder.n();
    let mut samples = empty_samples(decoder);
    match calibration {
        Calibration::Exact => {
            let outputs = enumerate_outputs(system, cb, EnumerationLimit::default())?;
            let chunks: Vec<Vec<Vec<MarginSamples>>> = outputs
                .par_chunks()
                .map(|range| {
                    let mut local = empty_samples(decoder);
                    for code in range {
                        let y = outputs.sequence(code);
                        let tables = decoder.tables(&y);
                        for truth in system.vectors() {
                            let messages = super::message_vectors(cb, truth);
                            let share = 1.0 / messages.len() as f64;
                            for w in &messages {
                                let p = output_probability(system, cb, truth, w, &y);
                                if p > 0.0 {
                                    collect_margins(decoder, &tables, truth, w, p * share, &mut local);
                                }
                            }
                        }
                    }
                    local
                })
                .collect();
            for chunk in chunks {
                for (row, part) in samples.iter_mut().zip(chunk) {
                    for (s, p) in row.iter_mut().zip(part) {
                        s.merge(p);
                    }
                }
            }
        }
        Calibration::MonteCarlo { trials, seed } => {
            if trials == 0 {
                return Err(Error::Domain("calibration needs at least one trial".into()));
            }
            for (gi, truth) in system.vectors().iter().enumerate() {
                let parts: Vec<Vec<Vec<MarginSamples>>> = (0..trials)
                    .into_par_iter()
                    .map(|trial| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ CALIBRATION_SALT);
                        rng.set_stream(((gi as u64) << 40) | trial as u64);
                        let w = sample_messages(cb, truth, &mut rng);
                        let y = sample_output_sequence(system, cb, truth, &w, &mut rng);
                        let tables = decoder.tables(&y);
                        let mut local = empty_samples(decoder);
                        collect_margins(decoder, &tables, truth, &w, 1.0 / trials as f64, &mut local);
                        local
                    })
                    .collect();
                for part in parts {
                    for (row, p) in samples.iter_mut().zip(part) {
                        for (s, q) in row.iter_mut().zip(p) {
                            s.merge(q);
                        }
                    }
                }
            }
        }
    }

    let mut policy = ThresholdPolicy::constant(0.0);
    let mut offsets = Vec::new();
    for (c, cand) in decoder.candidates().iter().enumerate() {
        let mass_g = (-(n as f64) * cand.alpha).exp();
        for (k, con) in cand.constraints.iter().enumerate() {
            let alpha_t = decoder_alpha(decoder, &con.g_tilde)?;
            let mass_t = (-(n as f64) * alpha_t).exp();
            let s = &samples[c][k];
            let mut best: Option<TunedOffset> = None;
            for &t in grid {
                let p_t: f64 = s.threshold.iter().filter(|(m, _)| *m <= t).map(|(_, w)| w).sum();
                let p_i: f64 = s.interference.iter().filter(|(m, _)| *m > t).map(|(_, w)| w).sum();
                let objective = p_t * mass_g + p_i * mass_t;
                let better = match &best {
                    None => true,
                    Some(b) => objective < b.objective || (objective == b.objective && t.abs() < b.t.abs()),
                };
                if better {
                    best = Some(TunedOffset {
                        g: cand.g.clone(),
                        g_tilde: con.g_tilde.clone(),
                        s: con.s,
                        t,
                        objective,
                        p_t,
                        p_i,
                    });
                }
            }
            let best = best.expect("nonempty grid");
            policy.offsets.insert(
                PolicyKey {
                    g: best.g.clone(),
                    g_tilde: best.g_tilde.clone(),
                    s: best.s,
                },
                best.t,
            );
            offsets.push(best);
        }
    }
    Ok(TuningReport {
        calibration,
        codebook_seed: cb.seed,
        grid: grid.to_vec(),
        policy,
        offsets,
    })
}

fn decoder_alpha(decoder: &Decoder, g: &CodeIndexVector) -> Result<f64> {
    decoder.weights().alpha(g)
}
