use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decoder::{DecodeOutcome, DecodeTables, Decoder};
use super::{check_mode, classify_trial, sample_messages, sample_output_sequence, wilson_interval, ErrorMode};
use crate::code_space::{CodeIndexVector, UserSet, Zone};
use crate::error::{Error, Result};

const TRIAL_SALT: u64 = 0x5DEE_CE66_D1CE_4E5B;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    /// Trials per code index vector.
    pub trials: usize,
    pub seed: u64,
    pub modes: Vec<ErrorMode>,
    /// Vectors to simulate; every enumerated vector when `None`.
    pub vectors: Option<Vec<CodeIndexVector>>,
    /// Keep per-trial records (outputs, messages, fired events).
    pub record: bool,
}

/// Which event classes fired on one trial. Wrong-message and threshold
/// events apply when the truth is in the region, interference events when
/// it is outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventFlags {
    pub m: bool,
    pub t: bool,
    pub i: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub g: CodeIndexVector,
    pub w: Vec<usize>,
    pub y: Vec<usize>,
    pub outcome: DecodeOutcome,
    pub events: EventFlags,
}

/// Decoder outcomes relative to the whole decode set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub collisions: u64,
    pub decoded_correct: u64,
    pub decoded_wrong: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorEstimate {
    pub g: CodeIndexVector,
    pub zone: Zone,
    pub alpha: f64,
    pub trials: u64,
    pub errors: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: ErrorMode,
    pub per_g: Vec<VectorEstimate>,
    /// `sum_g p_hat(g) e^{-N alpha_g}` over the simulated vectors.
    pub empirical_gep: f64,
    /// The same sum over the interval endpoints.
    pub gep_ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub codebook_seed: u64,
    pub trials_per_vector: usize,
    /// Messages are drawn uniformly, so per-vector rates estimate the
    /// message-averaged error rather than the worst case.
    pub message_handling: String,
    pub decode_set: UserSet,
    pub outcomes: Vec<(CodeIndexVector, OutcomeCounts)>,
    pub modes: Vec<ModeSummary>,
    pub analytic_bound: Option<f64>,
    pub oracle_gep: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub records: Vec<TrialRecord>,
}

impl SimulationReport {
    pub fn mode(&self, mode: ErrorMode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

struct Trial {
    correct: Option<bool>,
    errors: Vec<bool>,
    record: Option<TrialRecord>,
}

/// Flags of the event classes that fired for truth `(w, g)`.
pub(crate) fn fired_events(decoder: &Decoder, tables: &DecodeTables, g: &CodeIndexVector, w: &[usize]) -> EventFlags {
    let w_d = decoder.restrict(w);
    let mut flags = EventFlags::default();
    if let Some(c) = decoder.candidate_index(g) {
        let d = decoder.config().decode_set;
        flags.m = decoder.candidates().iter().enumerate().any(|(c2, cand)| {
            d.proper_subsets()
                .into_iter()
                .any(|s| cand.g.agrees_on(g, s) && decoder.message_event(tables, c, &w_d, c2, s))
        });
        flags.t = (0..decoder.candidates()[c].constraints.len()).any(|k| decoder.threshold_event(tables, c, k, &w_d));
    } else {
        flags.i = decoder.candidates().iter().enumerate().any(|(c, cand)| {
            cand.constraints
                .iter()
                .enumerate()
                .any(|(k, con)| &con.g_tilde == g && decoder.interference_event(tables, c, k, g, &w_d))
        });
    }
    flags
}

fn decoded_correct_on_d(decoder: &Decoder, g: &CodeIndexVector, w: &[usize], outcome: &DecodeOutcome) -> Option<bool> {
    match outcome {
        DecodeOutcome::Collision => None,
        DecodeOutcome::Decoded { messages, g: g_hat } => Some(
            decoder
                .decode_users()
                .iter()
                .zip(messages)
                .all(|(&u, &m)| m == w[u] && g_hat.options[u] == g.options[u]),
        ),
    }
}

/// Simulates `spec.trials` transmissions per code index vector with
/// uniformly drawn messages and fresh channel noise, using `decoder`'s
/// fixed codebooks. Each trial owns a random stream derived from
/// `(seed, vector, trial)`, so results do not depend on the thread count.
pub fn run_monte_carlo(decoder: &Decoder, spec: &MonteCarloSpec) -> Result<SimulationReport> {
    if spec.trials == 0 {
        return Err(Error::Domain("at least one trial is required".into()));
    }
    let system = decoder.system();
    let config = decoder.config();
    let cb = decoder.codebooks();
    for &m in &spec.modes {
        check_mode(m, config)?;
    }
    let vectors: Vec<CodeIndexVector> = match &spec.vectors {
        Some(v) => {
            for g in v {
                system.check_vector(g)?;
            }
            v.clone()
        }
        None => system.vectors().to_vec(),
    };
    let all = system.vectors();
    let n = decoder.n() as f64;

    let mut outcomes = Vec::new();
    let mut error_counts: Vec<Vec<u64>> = vec![Vec::new(); spec.modes.len()];
    let mut records = Vec::new();
    for g in &vectors {
        let gi = all.iter().position(|v| v == g).expect("checked vector") as u64;
        let trials: Vec<Trial> = (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ TRIAL_SALT);
                rng.set_stream((gi << 40) | trial as u64);
                let w = sample_messages(cb, g, &mut rng);
                let y = sample_output_sequence(system, cb, g, &w, &mut rng);
                let tables = decoder.tables(&y);
                let outcome = decoder.decode_tables(&tables);
                let errors = spec
                    .modes
                    .iter()
                    .map(|&m| classify_trial(m, config, g, &w, &outcome))
                    .collect();
                let correct = decoded_correct_on_d(decoder, g, &w, &outcome);
                let record = spec.record.then(|| TrialRecord {
                    g: g.clone(),
                    events: fired_events(decoder, &tables, g, &w),
                    w,
                    y,
                    outcome,
                });
                Trial {
                    correct,
                    errors,
                    record,
                }
            })
            .collect();
        let mut counts = OutcomeCounts::default();
        let mut errs = vec![0u64; spec.modes.len()];
        for t in trials {
            match t.correct {
                None => counts.collisions += 1,
                Some(true) => counts.decoded_correct += 1,
                Some(false) => counts.decoded_wrong += 1,
            }
            for (e, &flag) in errs.iter_mut().zip(&t.errors) {
                *e += flag as u64;
            }
            if let Some(r) = t.record {
                records.push(r);
            }
        }
        outcomes.push((g.clone(), counts));
        for (acc, e) in error_counts.iter_mut().zip(errs) {
            acc.push(e);
        }
    }

    let weights = decoder.weights();
    let modes = spec
        .modes
        .iter()
        .zip(error_counts)
        .map(|(&mode, counts)| {
            let mut per_g = Vec::new();
            let (mut gep, mut lo, mut hi) = (0.0, 0.0, 0.0);
            for (g, errors) in vectors.iter().zip(counts) {
                let alpha = weights.alpha(g)?;
                let mass = (-n * alpha).exp();
                let trials = spec.trials as u64;
                let p_hat = errors as f64 / trials as f64;
                let (ci_low, ci_high) = wilson_interval(errors, trials);
                gep += p_hat * mass;
                lo += ci_low * mass;
                hi += ci_high * mass;
                per_g.push(VectorEstimate {
                    g: g.clone(),
                    zone: config.zone(g),
                    alpha,
                    trials,
                    errors,
                    p_hat,
                    ci_low,
                    ci_high,
                });
            }
            Ok(ModeSummary {
                mode,
                per_g,
                empirical_gep: gep,
                gep_ci: (lo, hi),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SimulationReport {
        n: decoder.n(),
        seed: spec.seed,
        codebook_seed: cb.seed,
        trials_per_vector: spec.trials,
        message_handling: "average-message".into(),
        decode_set: config.decode_set,
        outcomes,
        modes,
        analytic_bound: None,
        oracle_gep: None,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub count: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RateEstimate {
    fn new(count: u64, trials: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(count, trials);
        Self {
            count,
            trials,
            rate: if trials == 0 { 0.0 } else { count as f64 / trials as f64 },
            ci_low,
            ci_high,
        }
    }
}

/// Empirical rates of the three event classes for one `(g, g~, S)`; a class
/// is `None` when it does not apply to the triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRates {
    pub p_m: Option<RateEstimate>,
    pub p_t: Option<RateEstimate>,
    pub p_i: Option<RateEstimate>,
}

/// Recomputes the likelihood comparisons of recorded trials for one triple.
pub fn estimate_event_rates(
    decoder: &Decoder,
    records: &[TrialRecord],
    g: &CodeIndexVector,
    g_tilde: &CodeIndexVector,
    s: UserSet,
) -> Result<EventRates> {
    let c = decoder
        .candidate_index(g)
        .ok_or_else(|| Error::Domain(format!("{g} is not in the operation region")))?;
    let d = decoder.config().decode_set;
    if !g_tilde.agrees_on(g, s) || !s.is_subset_of(d) {
        return Err(Error::Domain(format!("{g_tilde} does not match {g} on {s}")));
    }
    let c2 = decoder.candidate_index(g_tilde).filter(|_| s != d);
    let k = decoder.constraint_index(c, g_tilde, s);
    let (mut m, mut t, mut i, mut own, mut other) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for r in records {
        let is_g = &r.g == g;
        let is_gt = &r.g == g_tilde;
        if !(is_g || (is_gt && k.is_some())) {
            continue;
        }
        let tables = decoder.tables(&r.y);
        let w_d = decoder.restrict(&r.w);
        if is_g {
            own += 1;
            if let Some(c2) = c2 {
                m += decoder.message_event(&tables, c, &w_d, c2, s) as u64;
            }
            if let Some(k) = k {
                t += decoder.threshold_event(&tables, c, k, &w_d) as u64;
            }
        }
        if is_gt {
            if let Some(k) = k {
                other += 1;
                i += decoder.interference_event(&tables, c, k, g_tilde, &w_d) as u64;
            }
        }
    }
    Ok(EventRates {
        p_m: c2.map(|_| RateEstimate::new(m, own)),
        p_t: k.map(|_| RateEstimate::new(t, own)),
        p_i: k.map(|_| RateEstimate::new(i, other)),
    })
}

#[cfg(test)]
mod tests {
    use super::super::oracle::exact_oracle;
    use super::super::policy::ThresholdPolicy;
    use super::super::testkit::{civ, small};
    use super::super::EnumerationLimit;
    use super::*;

    fn spec(trials: usize, record: bool) -> MonteCarloSpec {
        MonteCarloSpec {
            trials,
            seed: 11,
            modes: ErrorMode::ALL.to_vec(),
            vectors: None,
            record,
        }
    }

    #[test]
    fn matches_exact_message_averages() {
        let inst = small(3, 5);
        let policy = ThresholdPolicy::constant(-0.1);
        let dec = Decoder::new(&inst.system, &inst.config, &inst.weights, &policy, &inst.codebooks).unwrap();
        let exact = exact_oracle(&dec, &ErrorMode::ALL, EnumerationLimit::default()).unwrap();
        let sim = run_monte_carlo(&dec, &spec(20_000, false)).unwrap();
        for summary in &sim.modes {
            for est in &summary.per_g {
                let p = exact
                    .vectors
                    .iter()
                    .find(|v| v.g == est.g)
                    .unwrap()
                    .mode(summary.mode)
                    .unwrap()
                    .average;
                let sd = (p * (1.0 - p) / est.trials as f64).sqrt().max(1e-4);
                assert!(
                    (est.p_hat - p).abs() < 5.0 * sd,
                    "{:?} {} {} vs {}",
                    summary.mode,
                    est.g,
                    est.p_hat,
                    p
                );
            }
        }
        assert_eq!(sim.message_handling, "average-message");
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let inst = small(4, 2);
        let policy = ThresholdPolicy::constant(0.0);
        let dec = Decoder::new(&inst.system, &inst.config, &inst.weights, &policy, &inst.codebooks).unwrap();
        let a = run_monte_carlo(&dec, &spec(500, true)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_monte_carlo(&dec, &spec(500, true))).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.records.len(), 500 * inst.system.vectors().len());
    }

    #[test]
    fn outcome_counts_partition_trials() {
        let inst = small(3, 3);
        let policy = ThresholdPolicy::constant(0.0);
        let dec = Decoder::new(&inst.system, &inst.config, &inst.weights, &policy, &inst.codebooks).unwrap();
        let sim = run_monte_carlo(&dec, &spec(300, false)).unwrap();
        for (_, c) in &sim.outcomes {
            assert_eq!(c.collisions + c.decoded_correct + c.decoded_wrong, 300);
        }
        let lenient = sim.mode(ErrorMode::WrongDecode).unwrap();
        let strict = sim.mode(ErrorMode::MissedCollision).unwrap();
        for (a, b) in lenient.per_g.iter().zip(&strict.per_g) {
            assert!(a.errors <= b.errors);
            assert!(a.ci_low <= a.p_hat && a.p_hat <= a.ci_high);
        }
        assert!(lenient.empirical_gep <= strict.empirical_gep);
    }

    #[test]
    fn event_rates_track_exact_probabilities() {
        let inst = small(3, 9);
        let policy = ThresholdPolicy::constant(-0.3);
        let dec = Decoder::new(&inst.system, &inst.config, &inst.weights, &policy, &inst.codebooks).unwrap();
        let exact = exact_oracle(&dec, &[ErrorMode::JointMargin], EnumerationLimit::default()).unwrap();
        let sim = run_monte_carlo(&dec, &spec(8_000, true)).unwrap();
        let (g, gt, s) = (civ(&[0, 0]), civ(&[1, 1]), UserSet::of(&[]));
        let rates = estimate_event_rates(&dec, &sim.records, &g, &gt, s).unwrap();
        assert!(rates.p_m.is_none());
        for (est, kind) in [
            (rates.p_t.unwrap(), super::super::EventKind::Threshold),
            (rates.p_i.unwrap(), super::super::EventKind::Interference),
        ] {
            let p = exact.event(kind, &g, &gt, s).unwrap().average;
            let sd = (p * (1.0 - p) / est.trials as f64).sqrt().max(1e-4);
            assert!((est.rate - p).abs() < 5.0 * sd, "{kind:?} {} vs {p}", est.rate);
        }
        let rates = estimate_event_rates(&dec, &sim.records, &g, &civ(&[0, 1]), UserSet::of(&[0])).unwrap();
        let p = exact
            .event(super::super::EventKind::Message, &g, &civ(&[0, 1]), UserSet::of(&[0]))
            .unwrap()
            .average;
        let est = rates.p_m.unwrap();
        assert!((est.rate - p).abs() < 5.0 * (p * (1.0 - p) / est.trials as f64).sqrt().max(1e-4));
    }

    #[test]
    fn rejects_zero_trials_and_foreign_modes() {
        let inst = small(3, 3);
        let policy = ThresholdPolicy::constant(0.0);
        let dec = Decoder::new(&inst.system, &inst.config, &inst.weights, &policy, &inst.codebooks).unwrap();
        assert!(run_monte_carlo(&dec, &spec(0, false)).is_err());
        let mut bad = spec(5, false);
        bad.vectors = Some(vec![civ(&[2, 0])]);
        assert!(run_monte_carlo(&dec, &bad).is_err());
    }
}
