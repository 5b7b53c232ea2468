//! Discrete memoryless multiple-access channels over finite alphabets.
//!
//! A [`ChannelModel`] is a dense tensor of conditional output distributions
//! indexed by `(interferer option, input symbol vector)`. Input vectors use a
//! mixed-radix index with user 1 as the most significant digit, and rows are
//! stored interferer-major, so row `g0 * |X| + x` holds `P(. | x, g0)`.
//! This is also the row order of the JSON description.
//!
//! A channel without an interfering user is the family with a single option.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for row normalization.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Maximum number of offending rows reported by [`validate`].
pub const MAX_REPORTED_VIOLATIONS: usize = 10;

/// The structured-text description of a channel.
///
/// `transition` lists one probability row per `(g0, x)` pair in row-major
/// `(g0, x)` order, with `x` encoded mixed-radix (user 1 most significant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDescription {
    #[serde(rename = "K")]
    pub num_users: usize,
    pub input_alphabets: Vec<usize>,
    pub output_alphabet: usize,
    #[serde(default = "default_interferer_options")]
    pub interferer_options: Vec<String>,
    pub transition: Vec<Vec<f64>>,
}

fn default_interferer_options() -> Vec<String> {
    vec!["none".to_string()]
}

/// One problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g0: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<usize>>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
    /// Total number of offending rows, including the ones not listed.
    pub offending_rows: usize,
}

impl ValidationReport {
    fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| v.message.clone())
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Checks every structural and stochastic invariant of a channel description.
pub fn validate(desc: &ChannelDescription) -> ValidationReport {
    let mut violations = Vec::new();
    let structural = |message: String| Violation {
        row: None,
        g0: None,
        x: None,
        message,
    };

    if desc.num_users == 0 {
        violations.push(structural("K must be positive".into()));
    }
    if desc.input_alphabets.len() != desc.num_users {
        violations.push(structural(format!(
            "input_alphabets has {} entries, K = {}",
            desc.input_alphabets.len(),
            desc.num_users
        )));
    }
    if let Some(k) = desc.input_alphabets.iter().position(|&a| a == 0) {
        violations.push(structural(format!("input alphabet of user {} is empty", k + 1)));
    }
    if desc.output_alphabet == 0 {
        violations.push(structural("output alphabet is empty".into()));
    }
    if desc.interferer_options.is_empty() {
        violations.push(structural("interferer_options must have at least one entry".into()));
    }
    if !violations.is_empty() {
        return ValidationReport {
            valid: false,
            offending_rows: 0,
            violations,
        };
    }

    let inputs: usize = desc.input_alphabets.iter().product();
    let expected_rows = inputs * desc.interferer_options.len();
    if desc.transition.len() != expected_rows {
        let missing = if desc.transition.len() < expected_rows {
            let row = desc.transition.len();
            format!(
                ", first missing entry g0={}, x={:?}",
                row / inputs,
                mixed_radix_digits(&desc.input_alphabets, row % inputs)
            )
        } else {
            String::new()
        };
        violations.push(structural(format!(
            "dense tensor required: expected {} rows, found {}{}",
            expected_rows,
            desc.transition.len(),
            missing
        )));
        return ValidationReport {
            valid: false,
            offending_rows: 0,
            violations,
        };
    }

    let mut offending = 0;
    for (row, probs) in desc.transition.iter().enumerate() {
        let g0 = row / inputs;
        let x = mixed_radix_digits(&desc.input_alphabets, row % inputs);
        let problem = if probs.len() != desc.output_alphabet {
            Some(format!(
                "row has {} entries, output alphabet is {}",
                probs.len(),
                desc.output_alphabet
            ))
        } else if let Some(y) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            Some(format!("entry y={} is {}", y, probs[y]))
        } else {
            let sum: f64 = probs.iter().sum();
            ((sum - 1.0).abs() > ROW_SUM_TOLERANCE).then(|| format!("row sum {}", sum))
        };
        if let Some(message) = problem {
            offending += 1;
            if violations.len() < MAX_REPORTED_VIOLATIONS {
                violations.push(Violation {
                    row: Some(row),
                    g0: Some(g0),
                    x: Some(x),
                    message,
                });
            }
        }
    }
    ValidationReport {
        valid: violations.is_empty(),
        violations,
        offending_rows: offending,
    }
}

/// Digits of `index` in the mixed radix given by `radices`, most significant first.
pub fn mixed_radix_digits(radices: &[usize], mut index: usize) -> Vec<usize> {
    let mut digits = vec![0; radices.len()];
    for (d, &r) in digits.iter_mut().zip(radices).rev() {
        *d = index % r;
        index /= r;
    }
    digits
}

/// Inverse of [`mixed_radix_digits`]. Digits must already be in range.
pub fn mixed_radix_index(radices: &[usize], digits: &[usize]) -> usize {
    digits.iter().zip(radices).fold(0, |acc, (&d, &r)| acc * r + d)
}

/// A validated, immutable multiple-access channel family `P(Y | X, g0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelDescription", into = "ChannelDescription")]
pub struct ChannelModel {
    input_alphabets: Vec<usize>,
    output_alphabet: usize,
    interferer_options: Vec<String>,
    num_inputs: usize,
    transition: Vec<f64>,
}

impl TryFrom<ChannelDescription> for ChannelModel {
    type Error = Error;

    fn try_from(desc: ChannelDescription) -> Result<Self> {
        let report = validate(&desc);
        if !report.valid {
            return Err(Error::InvalidChannel(report.summary()));
        }
        let num_inputs = desc.input_alphabets.iter().product();
        Ok(Self {
            input_alphabets: desc.input_alphabets,
            output_alphabet: desc.output_alphabet,
            interferer_options: desc.interferer_options,
            num_inputs,
            transition: desc.transition.into_iter().flatten().collect(),
        })
    }
}

impl From<ChannelModel> for ChannelDescription {
    fn from(model: ChannelModel) -> Self {
        let transition = model
            .transition
            .chunks(model.output_alphabet)
            .map(<[f64]>::to_vec)
            .collect();
        Self {
            num_users: model.input_alphabets.len(),
            input_alphabets: model.input_alphabets,
            output_alphabet: model.output_alphabet,
            interferer_options: model.interferer_options,
            transition,
        }
    }
}

impl ChannelModel {
    /// Builds a channel from rows in `(g0, x)` row-major order.
    pub fn new(
        input_alphabets: Vec<usize>,
        output_alphabet: usize,
        interferer_options: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        ChannelDescription {
            num_users: input_alphabets.len(),
            input_alphabets,
            output_alphabet,
            interferer_options,
            transition: rows,
        }
        .try_into()
    }

    /// Builds a channel without an interfering user.
    pub fn without_interferer(
        input_alphabets: Vec<usize>,
        output_alphabet: usize,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::new(input_alphabets, output_alphabet, default_interferer_options(), rows)
    }

    pub fn num_users(&self) -> usize {
        self.input_alphabets.len()
    }

    pub fn input_alphabets(&self) -> &[usize] {
        &self.input_alphabets
    }

    pub fn output_alphabet(&self) -> usize {
        self.output_alphabet
    }

    pub fn interferer_options(&self) -> &[String] {
        &self.interferer_options
    }

    pub fn num_interferer_options(&self) -> usize {
        self.interferer_options.len()
    }

    /// Number of distinct input symbol vectors, `prod_k |X_k|`.
    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn interferer_index(&self, label: &str) -> Option<usize> {
        self.interferer_options.iter().position(|l| l == label)
    }

    pub fn input_index(&self, x: &[usize]) -> Result<usize> {
        if x.len() != self.num_users() {
            return Err(Error::Dimension(format!(
                "input vector has {} symbols, channel has {} users",
                x.len(),
                self.num_users()
            )));
        }
        for (&symbol, &size) in x.iter().zip(&self.input_alphabets) {
            if symbol >= size {
                return Err(Error::OutOfRange {
                    what: "input symbol",
                    index: symbol,
                    limit: size,
                });
            }
        }
        Ok(mixed_radix_index(&self.input_alphabets, x))
    }

    pub fn input_vector(&self, index: usize) -> Vec<usize> {
        mixed_radix_digits(&self.input_alphabets, index)
    }

    /// Output distribution for an already-encoded input index. Panics when out of range.
    #[inline]
    pub fn row(&self, g0: usize, x_index: usize) -> &[f64] {
        let start = (g0 * self.num_inputs + x_index) * self.output_alphabet;
        &self.transition[start..start + self.output_alphabet]
    }

    /// `P(y | x, g0)`.
    pub fn emission_prob(&self, g0: usize, x: &[usize], y: usize) -> Result<f64> {
        self.check_g0(g0)?;
        let x_index = self.input_index(x)?;
        if y >= self.output_alphabet {
            return Err(Error::OutOfRange {
                what: "output symbol",
                index: y,
                limit: self.output_alphabet,
            });
        }
        Ok(self.row(g0, x_index)[y])
    }

    /// Draws `y ~ P(. | x, g0)` by inverse-CDF sampling of one uniform draw.
    pub fn sample_output<R: Rng + ?Sized>(&self, g0: usize, x: &[usize], rng: &mut R) -> Result<usize> {
        self.check_g0(g0)?;
        let x_index = self.input_index(x)?;
        Ok(self.sample_output_indexed(g0, x_index, rng))
    }

    #[inline]
    pub fn sample_output_indexed<R: Rng + ?Sized>(&self, g0: usize, x_index: usize, rng: &mut R) -> usize {
        sample_categorical(self.row(g0, x_index), rng.random::<f64>())
    }

    pub(crate) fn check_g0(&self, g0: usize) -> Result<()> {
        if g0 >= self.interferer_options.len() {
            return Err(Error::OutOfRange {
                what: "interferer option",
                index: g0,
                limit: self.interferer_options.len(),
            });
        }
        Ok(())
    }
}

/// Inverse-CDF lookup of a uniform draw `u` in `[0, 1)`. Zero-probability
/// entries are never returned.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cumulative += p;
            last_positive = i;
            if u < cumulative {
                return i;
            }
        }
    }
    last_positive
}

/// Standard channels used by tests, examples and the shipped fixtures.
pub mod fixtures {
    use super::*;

    /// Binary symmetric channel with crossover `p`.
    pub fn bsc(p: f64) -> ChannelModel {
        ChannelModel::without_interferer(vec![2], 2, vec![vec![1.0 - p, p], vec![p, 1.0 - p]]).expect("valid BSC")
    }

    /// Binary symmetric channel whose crossover is selected by an interferer.
    pub fn switched_bsc(p0: f64, p1: f64) -> ChannelModel {
        ChannelModel::new(
            vec![2],
            2,
            vec!["low".into(), "high".into()],
            vec![
                vec![1.0 - p0, p0],
                vec![p0, 1.0 - p0],
                vec![1.0 - p1, p1],
                vec![p1, 1.0 - p1],
            ],
        )
        .expect("valid switched BSC")
    }

    /// Two binary users, `Y = X1 + X2` over `{0, 1, 2}`.
    pub fn noiseless_adder() -> ChannelModel {
        noisy_adder(0.0)
    }

    fn adder_rows(eps: f64) -> Vec<Vec<f64>> {
        (0..4)
            .map(|x| {
                let sum = (x >> 1) + (x & 1);
                (0..3).map(|y| if y == sum { 1.0 - eps } else { eps / 2.0 }).collect()
            })
            .collect()
    }

    /// Adder MAC whose output is replaced by one of the other two symbols
    /// with total probability `eps`.
    pub fn noisy_adder(eps: f64) -> ChannelModel {
        ChannelModel::without_interferer(vec![2, 2], 3, adder_rows(eps)).expect("valid adder")
    }

    /// Noisy adder MAC with a virtual interferer: option `clean` is the
    /// noisy adder, option `jammed` makes the output uniform and independent
    /// of the inputs.
    pub fn jammed_adder(eps: f64) -> ChannelModel {
        let mut rows = adder_rows(eps);
        rows.extend((0..4).map(|_| vec![1.0 / 3.0; 3]));
        ChannelModel::new(vec![2, 2], 3, vec!["clean".into(), "jammed".into()], rows).expect("valid jammed adder")
    }

    /// Two binary users, `Y = X1 OR X2` observed through a BSC(`p`).
    pub fn noisy_or(p: f64) -> ChannelModel {
        let rows = (0..4)
            .map(|x| if x == 0 { vec![1.0 - p, p] } else { vec![p, 1.0 - p] })
            .collect();
        ChannelModel::without_interferer(vec![2, 2], 2, rows).expect("valid noisy OR")
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bsc_desc() -> ChannelDescription {
        bsc(0.1).into()
    }

    #[test]
    fn bsc_is_valid() {
        let report = validate(&bsc_desc());
        assert!(report.valid);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn row_sum_violation_is_reported() {
        let mut desc = bsc_desc();
        desc.transition[0] = vec![0.5, 0.6];
        let report = validate(&desc);
        assert!(!report.valid);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].row, Some(0));
        assert!(report.violations[0].message.starts_with("row sum 1.1"));
    }

    #[test]
    fn missing_row_requires_dense_tensor() {
        let mut desc: ChannelDescription = noiseless_adder().into();
        desc.interferer_options = vec!["a".into(), "b".into()];
        // only the g0=0 block plus three rows of g0=1: (g0=1, x=(1,1)) is missing
        let extra = desc.transition[..3].to_vec();
        desc.transition.extend(extra);
        let report = validate(&desc);
        assert!(!report.valid);
        let msg = &report.violations[0].message;
        assert!(msg.contains("dense tensor required"), "{msg}");
        assert!(msg.contains("g0=1, x=[1, 1]"), "{msg}");
    }

    #[test]
    fn violations_are_capped_at_ten() {
        let rows = (0..16).map(|_| vec![0.7, 0.7]).collect();
        let desc = ChannelDescription {
            num_users: 2,
            input_alphabets: vec![4, 4],
            output_alphabet: 2,
            interferer_options: vec!["none".into()],
            transition: rows,
        };
        let report = validate(&desc);
        assert_eq!(report.violations.len(), MAX_REPORTED_VIOLATIONS);
        assert_eq!(report.offending_rows, 16);
    }

    #[test]
    fn negative_entry_rejected() {
        let mut desc = bsc_desc();
        desc.transition[1] = vec![1.5, -0.5];
        assert!(!validate(&desc).valid);
        assert!(ChannelModel::try_from(desc).is_err());
    }

    #[test]
    fn emission_reads() {
        assert_eq!(bsc(0.1).emission_prob(0, &[0], 0).unwrap(), 0.9);
        assert_eq!(noiseless_adder().emission_prob(0, &[1, 0], 1).unwrap(), 1.0);
        assert_eq!(switched_bsc(0.1, 0.2).emission_prob(1, &[0], 1).unwrap(), 0.2);
    }

    #[test]
    fn emission_range_errors() {
        let ch = bsc(0.1);
        assert!(matches!(
            ch.emission_prob(1, &[0], 0),
            Err(Error::OutOfRange {
                what: "interferer option",
                ..
            })
        ));
        assert!(ch.emission_prob(0, &[2], 0).is_err());
        assert!(ch.emission_prob(0, &[0], 2).is_err());
        assert!(ch.emission_prob(0, &[0, 0], 0).is_err());
    }

    #[test]
    fn mixed_radix_user_one_most_significant() {
        let radices = [2, 3];
        assert_eq!(mixed_radix_digits(&radices, 4), vec![1, 1]);
        assert_eq!(mixed_radix_index(&radices, &[1, 2]), 5);
        for i in 0..6 {
            assert_eq!(mixed_radix_index(&radices, &mixed_radix_digits(&radices, i)), i);
        }
    }

    #[test]
    fn deterministic_row_always_sampled() {
        let ch = ChannelModel::without_interferer(vec![1], 3, vec![vec![0.0, 1.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(ch.sample_output(0, &[0], &mut rng).unwrap(), 1);
        }
        assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], 0.0), 1);
    }

    #[test]
    fn bsc_sampling_frequency() {
        let ch = bsc(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let ones = (0..n)
            .filter(|_| ch.sample_output(0, &[0], &mut rng).unwrap() == 1)
            .count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.1).abs() <= 0.001, "freq {freq}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let ch = noisy_adder(0.2);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200)
                .map(|i| ch.sample_output(0, &[i % 2, (i / 2) % 2], &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let ch = ChannelModel::without_interferer(
            vec![3],
            2,
            vec![
                vec![0.1, 0.9],
                vec![1.0 / 3.0, 2.0 / 3.0],
                vec![std::f64::consts::FRAC_1_SQRT_2, 1.0 - std::f64::consts::FRAC_1_SQRT_2],
            ],
        )
        .unwrap();
        let text = serde_json::to_string(&ch).unwrap();
        let back: ChannelModel = serde_json::from_str(&text).unwrap();
        assert_eq!(ch, back);
        for x in 0..3 {
            for (a, b) in ch.row(0, x).iter().zip(back.row(0, x)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert!(text.contains("\"K\":1"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn empirical_frequencies_converge(weights in proptest::collection::vec(0.05f64..1.0, 2..5), seed in any::<u64>()) {
                let total: f64 = weights.iter().sum();
                let row: Vec<f64> = weights.iter().map(|w| w / total).collect();
                let fixed_sum: f64 = row.iter().sum();
                let mut row = row;
                let last = row.len() - 1;
                row[last] += 1.0 - fixed_sum;
                let k = row.len();
                let ch = ChannelModel::without_interferer(vec![1], k, vec![row.clone()]).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = 100_000;
                let mut counts = vec![0usize; k];
                for _ in 0..n {
                    counts[ch.sample_output(0, &[0], &mut rng).unwrap()] += 1;
                }
                for (c, p) in counts.iter().zip(&row) {
                    let freq = *c as f64 / n as f64;
                    prop_assert!((freq - p).abs() <= 4.0 * (p * (1.0 - p) / n as f64).sqrt());
                }
            }

            #[test]
            fn serialization_round_trips(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 4)) {
                let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| {
                    let s: f64 = r.iter().sum::<f64>() + 1.0;
                    let mut v: Vec<f64> = r.iter().map(|p| p / s).collect();
                    let head: f64 = v.iter().sum();
                    v.push(1.0 - head);
                    v
                }).collect();
                let ch = ChannelModel::without_interferer(vec![2, 2], 4, rows).unwrap();
                let back: ChannelModel = serde_json::from_str(&serde_json::to_string(&ch).unwrap()).unwrap();
                prop_assert_eq!(ch, back);
            }
        }
    }
}
