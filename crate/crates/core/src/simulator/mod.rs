//! End-to-end simulation of a distributed multiple-access system: random
//! codebooks, the weighted-likelihood threshold decoder, error
//! classification, Monte Carlo estimation and an exact enumeration oracle.

mod codebook;
mod decoder;
mod montecarlo;
mod oracle;
mod policy;
#[cfg(test)]
pub(crate) mod testkit;

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{mixed_radix_digits, sample_categorical};
use crate::code_space::{CodeIndexVector, OperationConfig, System, UserSet, Zone};
use crate::error::{Error, Result};

pub use codebook::{codeword_count, generate_codebooks, Codebook, CodebookSet, DEFAULT_SYMBOL_CAP};
pub use decoder::{weighted_log_likelihood, Candidate, Constraint, DecodeOutcome, DecodeTables, Decoder};
pub use montecarlo::{
    estimate_event_rates, run_monte_carlo, EventFlags, EventRates, ModeSummary, MonteCarloSpec, OutcomeCounts,
    RateEstimate, SimulationReport, TrialRecord, VectorEstimate,
};
pub use oracle::{
    exact_oracle, oracle_over_seeds, EventKind, ExactEvent, ModeGep, ModeProbability, OracleReport, OracleVector,
    SeedEvent, SeedModeGep, SeedSweepReport, Spread,
};
pub use policy::{
    default_offset_grid, tune_policy, Calibration, PolicyKey, ThresholdPolicy, TunedOffset, TuningReport,
};

/// Error-probability definitions.
///
/// * `WrongDecode`: two zones, user 1; outside the region only a wrong decode is an error.
/// * `MissedCollision`: two zones, user 1; outside the region anything but a collision is an error.
/// * `JointMargin`: three zones over the whole decode set.
/// * `UserMargin`: three zones, user 1.
///
/// The two-zone modes treat the margin as outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMode {
    WrongDecode,
    MissedCollision,
    JointMargin,
    UserMargin,
}

impl ErrorMode {
    pub const ALL: [ErrorMode; 4] = [
        ErrorMode::WrongDecode,
        ErrorMode::MissedCollision,
        ErrorMode::JointMargin,
        ErrorMode::UserMargin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorMode::WrongDecode => "wrong-decode",
            ErrorMode::MissedCollision => "missed-collision",
            ErrorMode::JointMargin => "joint-margin",
            ErrorMode::UserMargin => "user-margin",
        }
    }

    /// Short alias accepted on input.
    pub fn alias(self) -> &'static str {
        match self {
            ErrorMode::WrongDecode => "eq1",
            ErrorMode::MissedCollision => "eq6",
            ErrorMode::JointMargin => "eq10",
            ErrorMode::UserMargin => "eq12",
        }
    }
}

impl std::str::FromStr for ErrorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ErrorMode::ALL
            .into_iter()
            .find(|m| m.name() == s || m.alias() == s)
            .ok_or_else(|| Error::Domain(format!("unknown error mode {s:?}")))
    }
}

/// Whether the decoded pair matches the truth on every user that `mode` cares about.
fn correct_for(
    mode: ErrorMode,
    config: &OperationConfig,
    g: &CodeIndexVector,
    w: &[usize],
    outcome: &DecodeOutcome,
) -> bool {
    let DecodeOutcome::Decoded { messages, g: g_hat } = outcome else {
        return false;
    };
    let relevant = match mode {
        ErrorMode::JointMargin => config.decode_set,
        _ => UserSet::single(0),
    };
    config
        .decode_set
        .iter()
        .zip(messages)
        .filter(|(u, _)| relevant.contains(*u))
        .all(|(u, &m)| m == w[u] && g_hat.options[u] == g.options[u])
}

/// Error flag of one trial with true code index vector `g` and full message vector `w`.
pub fn classify_trial(
    mode: ErrorMode,
    config: &OperationConfig,
    g: &CodeIndexVector,
    w: &[usize],
    outcome: &DecodeOutcome,
) -> bool {
    let correct = correct_for(mode, config, g, w, outcome);
    let collision = matches!(outcome, DecodeOutcome::Collision);
    let zone = match (mode, config.zone(g)) {
        (ErrorMode::WrongDecode | ErrorMode::MissedCollision, Zone::Margin) => Zone::Outside,
        (_, z) => z,
    };
    match zone {
        Zone::Region => !correct,
        Zone::Margin => !collision && !correct,
        Zone::Outside => match mode {
            ErrorMode::WrongDecode => !collision && !correct,
            _ => !collision,
        },
    }
}

/// Checks that `mode` is meaningful for `config`: single-user modes need user 1 in `D`.
pub fn check_mode(mode: ErrorMode, config: &OperationConfig) -> Result<()> {
    if mode != ErrorMode::JointMargin && !config.decode_set.contains(0) {
        return Err(Error::Domain(format!(
            "mode {} needs user 1 in the decode set",
            mode.name()
        )));
    }
    Ok(())
}

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    const Z: f64 = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Every full message vector under `g`, user 1 most significant.
pub fn message_vectors(codebooks: &CodebookSet, g: &CodeIndexVector) -> Vec<Vec<usize>> {
    let counts: Vec<usize> = g
        .options
        .iter()
        .enumerate()
        .map(|(u, &o)| codebooks.count(u, o))
        .collect();
    let total: usize = counts.iter().product();
    (0..total).map(|i| mixed_radix_digits(&counts, i)).collect()
}

pub(crate) fn sample_messages<R: Rng>(codebooks: &CodebookSet, g: &CodeIndexVector, rng: &mut R) -> Vec<usize> {
    g.options
        .iter()
        .enumerate()
        .map(|(u, &o)| rng.random_range(0..codebooks.count(u, o)))
        .collect()
}

/// Channel input index at every position for messages `w` under `g`.
pub fn input_indices(system: &System, codebooks: &CodebookSet, g: &CodeIndexVector, w: &[usize]) -> Vec<usize> {
    let alphabets = system.channel().input_alphabets();
    (0..codebooks.n)
        .map(|j| {
            g.options.iter().enumerate().fold(0, |acc, (u, &o)| {
                acc * alphabets[u] + codebooks.book(u, o).word(w[u])[j] as usize
            })
        })
        .collect()
}

pub(crate) fn sample_output_sequence<R: Rng>(
    system: &System,
    codebooks: &CodebookSet,
    g: &CodeIndexVector,
    w: &[usize],
    rng: &mut R,
) -> Vec<usize> {
    let g0 = system.channel_option(g);
    input_indices(system, codebooks, g, w)
        .into_iter()
        .map(|x| sample_categorical(system.channel().row(g0, x), rng.random::<f64>()))
        .collect()
}

/// `P(y | w, g)` for the realized codebooks.
pub fn output_probability(
    system: &System,
    codebooks: &CodebookSet,
    g: &CodeIndexVector,
    w: &[usize],
    y: &[usize],
) -> f64 {
    let g0 = system.channel_option(g);
    input_indices(system, codebooks, g, w)
        .into_iter()
        .zip(y)
        .map(|(x, &yj)| system.channel().row(g0, x)[yj])
        .product()
}

/// Cap on `|Y|^N` times the number of `(g, w)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationLimit {
    pub max_terms: u64,
}

impl Default for EnumerationLimit {
    fn default() -> Self {
        Self { max_terms: 10_000_000 }
    }
}

const OUTPUT_CHUNK: usize = 256;

/// All output sequences of length `N`, indexed with position 0 most significant.
#[derive(Debug, Clone)]
pub(crate) struct OutputSpace {
    radices: Vec<usize>,
    count: usize,
}

impl OutputSpace {
    pub(crate) fn len(&self) -> usize {
        self.count
    }

    pub(crate) fn sequence(&self, code: usize) -> Vec<usize> {
        mixed_radix_digits(&self.radices, code)
    }

    /// Fixed-size chunks, so that per-chunk partial sums combine in a
    /// thread-independent order.
    pub(crate) fn par_chunks(&self) -> impl IndexedParallelIterator<Item = Range<usize>> + '_ {
        let chunks = self.count.div_ceil(OUTPUT_CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(move |c| c * OUTPUT_CHUNK..((c + 1) * OUTPUT_CHUNK).min(self.count))
    }
}

pub(crate) fn enumerate_outputs(
    system: &System,
    codebooks: &CodebookSet,
    limit: EnumerationLimit,
) -> Result<OutputSpace> {
    let ny = system.channel().output_alphabet() as u128;
    let n = codebooks.n;
    let pairs: u128 = system
        .vectors()
        .iter()
        .map(|g| {
            g.options
                .iter()
                .enumerate()
                .map(|(u, &o)| codebooks.count(u, o) as u128)
                .product::<u128>()
        })
        .sum();
    let outputs = ny.checked_pow(n as u32);
    let terms = outputs.and_then(|o| o.checked_mul(pairs));
    match terms {
        Some(t) if t <= limit.max_terms as u128 => Ok(OutputSpace {
            radices: vec![ny as usize; n],
            count: outputs.expect("checked") as usize,
        }),
        Some(t) => Err(Error::EnumerationCap {
            count: t.to_string(),
            cap: limit.max_terms,
        }),
        None => Err(Error::EnumerationCap {
            count: format!("{ny}^{n} x {pairs}"),
            cap: limit.max_terms,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    fn civ(o: &[usize], i: usize) -> CodeIndexVector {
        CodeIndexVector::new(o.to_vec(), i)
    }

    fn config() -> OperationConfig {
        OperationConfig::new(UserSet::of(&[0, 1]), [civ(&[0, 0], 0)].into(), [civ(&[1, 0], 0)].into()).unwrap()
    }

    fn decoded(m: &[usize], g: &CodeIndexVector) -> DecodeOutcome {
        DecodeOutcome::Decoded {
            messages: m.to_vec(),
            g: g.clone(),
        }
    }

    #[test]
    fn region_vectors() {
        let cfg = config();
        let g = civ(&[0, 0], 0);
        for mode in ErrorMode::ALL {
            assert!(!classify_trial(mode, &cfg, &g, &[1, 2], &decoded(&[1, 2], &g)));
            assert!(classify_trial(mode, &cfg, &g, &[1, 2], &DecodeOutcome::Collision));
        }
        // user 2 wrong only matters for the decode-set mode
        let out = decoded(&[1, 0], &g);
        assert!(classify_trial(ErrorMode::JointMargin, &cfg, &g, &[1, 2], &out));
        assert!(!classify_trial(ErrorMode::UserMargin, &cfg, &g, &[1, 2], &out));
        assert!(!classify_trial(ErrorMode::WrongDecode, &cfg, &g, &[1, 2], &out));
    }

    #[test]
    fn margin_and_outside_vectors() {
        let cfg = config();
        let margin = civ(&[1, 0], 0);
        let outside = civ(&[1, 1], 0);
        let right = decoded(&[0, 0], &margin);
        assert!(!classify_trial(
            ErrorMode::JointMargin,
            &cfg,
            &margin,
            &[0, 0],
            &DecodeOutcome::Collision
        ));
        assert!(!classify_trial(ErrorMode::UserMargin, &cfg, &margin, &[0, 0], &right));
        // two-zone strict mode treats the margin as outside
        assert!(classify_trial(
            ErrorMode::MissedCollision,
            &cfg,
            &margin,
            &[0, 0],
            &right
        ));

        let right = decoded(&[0, 0], &outside);
        assert!(!classify_trial(ErrorMode::WrongDecode, &cfg, &outside, &[0, 0], &right));
        assert!(classify_trial(
            ErrorMode::MissedCollision,
            &cfg,
            &outside,
            &[0, 0],
            &right
        ));
        assert!(!classify_trial(
            ErrorMode::MissedCollision,
            &cfg,
            &outside,
            &[0, 0],
            &DecodeOutcome::Collision
        ));
        let wrong = decoded(&[1, 0], &civ(&[0, 0], 0));
        assert!(classify_trial(ErrorMode::WrongDecode, &cfg, &outside, &[0, 0], &wrong));
    }

    #[test]
    fn lenient_never_exceeds_strict() {
        let cfg = config();
        let vectors = [civ(&[0, 0], 0), civ(&[1, 0], 0), civ(&[1, 1], 0)];
        let outcomes = [
            DecodeOutcome::Collision,
            decoded(&[0, 0], &vectors[0]),
            decoded(&[1, 0], &vectors[0]),
            decoded(&[0, 1], &vectors[0]),
        ];
        for g in &vectors {
            for o in &outcomes {
                if classify_trial(ErrorMode::WrongDecode, &cfg, g, &[0, 0], o) {
                    assert!(classify_trial(ErrorMode::MissedCollision, &cfg, g, &[0, 0], o));
                }
            }
        }
    }

    #[test]
    fn wilson() {
        let (lo, hi) = wilson_interval(0, 100);
        assert!(lo.abs() < 1e-12);
        assert!((hi - 0.036994).abs() < 1e-5);
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.403832).abs() < 1e-5 && (hi - 0.596168).abs() < 1e-5);
    }
}
