use serde::{Deserialize, Serialize};

use super::codebook::CodebookSet;
use super::policy::ThresholdPolicy;
use crate::channel::mixed_radix_digits;
use crate::code_space::{CodeIndexVector, OperationConfig, System, UserSet, WeightAssignment, Zone};
use crate::error::{Error, Result};
use crate::exponents::InducedChannel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeOutcome {
    /// Messages are listed for the users of `D` in increasing order.
    Decoded {
        messages: Vec<usize>,
        g: CodeIndexVector,
    },
    Collision,
}

/// `sum_j ln P(y_j | x_{D,j}, g_Dbar) - N alpha` with the interference of
/// users outside `D` averaged under their input distributions in `g`.
/// `x_d[j]` lists the symbols of the users of `D` at position `j`.
pub fn weighted_log_likelihood(
    system: &System,
    decode_set: UserSet,
    g: &CodeIndexVector,
    alpha: f64,
    x_d: &[Vec<usize>],
    y: &[usize],
) -> Result<f64> {
    if x_d.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} input positions, {} outputs",
            x_d.len(),
            y.len()
        )));
    }
    let ch = InducedChannel::new(system, decode_set, g);
    let mut ll = 0.0;
    for (x, &yj) in x_d.iter().zip(y) {
        if x.len() != ch.users().len() || yj >= ch.output_alphabet() {
            return Err(Error::Dimension("symbol out of range for the decode set".into()));
        }
        if x.iter().zip(ch.radices()).any(|(s, r)| s >= r) {
            return Err(Error::Dimension("input symbol out of range".into()));
        }
        ll += ch.prob(ch.key(x), yj).ln();
    }
    Ok(ll - y.len() as f64 * alpha)
}

/// A threshold test `L_g > e^{-N tau}` against one `(g~, S)`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub g_tilde: CodeIndexVector,
    pub s: UserSet,
    pub offset: f64,
    /// Positions of the users of `S` within the decode set.
    s_pos: Vec<usize>,
    s_radices: Vec<usize>,
    s_counts: Vec<usize>,
    /// Per-symbol `ln sum_{x_{D\S}} W~(y | x) prod P~(x_k) - alpha~` at `(x_S key, y)`.
    table: Vec<f64>,
    /// `w_S` index of every candidate message vector.
    ws_of: Vec<usize>,
}

impl Constraint {
    pub fn num_message_subvectors(&self) -> usize {
        self.s_counts.iter().product()
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub g: CodeIndexVector,
    pub alpha: f64,
    /// Message counts of the decode-set users under `g`.
    pub counts: Vec<usize>,
    log_w: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl Candidate {
    pub fn num_messages(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn messages(&self, flat: usize) -> Vec<usize> {
        mixed_radix_digits(&self.counts, flat)
    }

    pub fn flat(&self, messages: &[usize]) -> usize {
        messages.iter().zip(&self.counts).fold(0, |acc, (&m, &c)| acc * c + m)
    }
}

/// Per-output log-likelihoods and base thresholds (offset excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTables {
    /// `[candidate][flat w_D]`.
    pub ll: Vec<Vec<f64>>,
    /// `[candidate][constraint][w_S index]`.
    pub base: Vec<Vec<Vec<f64>>>,
}

/// The weighted-likelihood threshold decoder of a `(D, R_D)` configuration
/// with fixed codebooks and threshold policy.
#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    system: &'a System,
    config: &'a OperationConfig,
    weights: &'a WeightAssignment,
    codebooks: &'a CodebookSet,
    d_users: Vec<usize>,
    radices: Vec<usize>,
    ny: usize,
    candidates: Vec<Candidate>,
}

impl<'a> Decoder<'a> {
    pub fn new(
        system: &'a System,
        config: &'a OperationConfig,
        weights: &'a WeightAssignment,
        policy: &ThresholdPolicy,
        codebooks: &'a CodebookSet,
    ) -> Result<Self> {
        weights.require_all(system.vectors())?;
        for g in config.region.iter().chain(&config.margin) {
            system.check_vector(g)?;
        }
        let d = config.decode_set;
        if !d.is_subset_of(system.all_users()) {
            return Err(Error::Dimension(format!("decode set {d} has unknown users")));
        }
        let d_users = d.to_vec();
        let alphabets = system.channel().input_alphabets();
        let radices: Vec<usize> = d_users.iter().map(|&u| alphabets[u]).collect();
        let ny = system.channel().output_alphabet();

        let mut candidates = Vec::new();
        for g in &config.region {
            let counts: Vec<usize> = d_users.iter().map(|&u| codebooks.count(u, g.options[u])).collect();
            let log_w = InducedChannel::new(system, d, g);
            let log_w = (0..log_w.num_inputs() * ny)
                .map(|i| log_w.prob(i / ny, i % ny).ln())
                .collect();
            let mut candidate = Candidate {
                g: g.clone(),
                alpha: weights.alpha(g)?,
                counts,
                log_w,
                constraints: Vec::new(),
            };
            let mut pairs = Vec::new();
            for s in d.proper_subsets() {
                for gt in system.vectors() {
                    if !config.region.contains(gt) && gt.agrees_on(g, s) {
                        pairs.push((gt, s));
                    }
                }
            }
            for gt in system.vectors() {
                if config.zone(gt) == Zone::Outside && gt.agrees_on(g, d) {
                    pairs.push((gt, d));
                }
            }
            for (gt, s) in pairs {
                let c = build_constraint(
                    system,
                    &d_users,
                    &radices,
                    &candidate,
                    gt,
                    s,
                    weights.alpha(gt)?,
                    policy.offset(g, gt, s),
                );
                candidate.constraints.push(c);
            }
            candidates.push(candidate);
        }
        Ok(Self {
            system,
            config,
            weights,
            codebooks,
            d_users,
            radices,
            ny,
            candidates,
        })
    }

    pub fn system(&self) -> &System {
        self.system
    }

    pub fn config(&self) -> &OperationConfig {
        self.config
    }

    pub fn weights(&self) -> &WeightAssignment {
        self.weights
    }

    pub fn codebooks(&self) -> &CodebookSet {
        self.codebooks
    }

    pub fn n(&self) -> usize {
        self.codebooks.n
    }

    pub fn decode_users(&self) -> &[usize] {
        &self.d_users
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn candidate_index(&self, g: &CodeIndexVector) -> Option<usize> {
        self.candidates.iter().position(|c| &c.g == g)
    }

    pub fn constraint_index(&self, candidate: usize, g_tilde: &CodeIndexVector, s: UserSet) -> Option<usize> {
        self.candidates[candidate]
            .constraints
            .iter()
            .position(|c| &c.g_tilde == g_tilde && c.s == s)
    }

    fn symbol(&self, user: usize, option: usize, message: usize, j: usize) -> usize {
        self.codebooks.book(user, option).word(message)[j] as usize
    }

    pub fn tables(&self, y: &[usize]) -> DecodeTables {
        let n = y.len();
        let ny = self.ny;
        let mut ll = Vec::with_capacity(self.candidates.len());
        let mut base = Vec::with_capacity(self.candidates.len());
        for cand in &self.candidates {
            let words: Vec<Vec<&[u16]>> = self
                .d_users
                .iter()
                .zip(&cand.counts)
                .map(|(&u, &count)| {
                    (0..count)
                        .map(|m| self.codebooks.book(u, cand.g.options[u]).word(m))
                        .collect()
                })
                .collect();
            let mut row = Vec::with_capacity(cand.num_messages());
            for flat in 0..cand.num_messages() {
                let msgs = cand.messages(flat);
                let mut v = 0.0;
                for (j, &yj) in y.iter().enumerate() {
                    let key = msgs
                        .iter()
                        .enumerate()
                        .fold(0, |acc, (i, &m)| acc * self.radices[i] + words[i][m][j] as usize);
                    v += cand.log_w[key * ny + yj];
                }
                row.push(v - n as f64 * cand.alpha);
            }
            ll.push(row);
            let per_constraint = cand
                .constraints
                .iter()
                .map(|c| {
                    (0..c.num_message_subvectors())
                        .map(|ws| {
                            let sm = mixed_radix_digits(&c.s_counts, ws);
                            let mut v = 0.0;
                            for (j, &yj) in y.iter().enumerate() {
                                let key = c.s_pos.iter().zip(&sm).enumerate().fold(0, |acc, (i, (&p, &m))| {
                                    let u = self.d_users[p];
                                    acc * c.s_radices[i] + self.symbol(u, cand.g.options[u], m, j)
                                });
                                v += c.table[key * ny + yj];
                            }
                            v
                        })
                        .collect()
                })
                .collect();
            base.push(per_constraint);
        }
        DecodeTables { ll, base }
    }

    /// `ln` of the threshold of constraint `k` of candidate `c` for candidate messages `flat`.
    #[inline]
    pub fn threshold(&self, tables: &DecodeTables, c: usize, k: usize, flat: usize) -> f64 {
        let con = &self.candidates[c].constraints[k];
        tables.base[c][k][con.ws_of[flat]] + self.n() as f64 * con.offset
    }

    pub fn passes(&self, tables: &DecodeTables, c: usize, flat: usize) -> bool {
        let ll = tables.ll[c][flat];
        (0..self.candidates[c].constraints.len()).all(|k| ll > self.threshold(tables, c, k, flat))
    }

    pub fn decode_tables(&self, tables: &DecodeTables) -> DecodeOutcome {
        let mut best: Option<(f64, usize, usize)> = None;
        let mut tied = false;
        for (c, cand) in self.candidates.iter().enumerate() {
            for flat in 0..cand.num_messages() {
                if !self.passes(tables, c, flat) {
                    continue;
                }
                let v = tables.ll[c][flat];
                match best {
                    Some((b, bc, bf)) if v == b => {
                        if !self.same_on_d(bc, bf, c, flat) {
                            tied = true;
                        }
                    }
                    Some((b, _, _)) if v < b => {}
                    _ => {
                        best = Some((v, c, flat));
                        tied = false;
                    }
                }
            }
        }
        match best {
            Some((_, c, flat)) if !tied => DecodeOutcome::Decoded {
                messages: self.candidates[c].messages(flat),
                g: self.candidates[c].g.clone(),
            },
            _ => DecodeOutcome::Collision,
        }
    }

    pub fn decode(&self, y: &[usize]) -> DecodeOutcome {
        self.decode_tables(&self.tables(y))
    }

    fn same_on_d(&self, c1: usize, f1: usize, c2: usize, f2: usize) -> bool {
        let (a, b) = (&self.candidates[c1], &self.candidates[c2]);
        a.messages(f1) == b.messages(f2) && self.d_users.iter().all(|&u| a.g.options[u] == b.g.options[u])
    }

    /// Decode-set messages of a full message vector.
    pub fn restrict(&self, w: &[usize]) -> Vec<usize> {
        self.d_users.iter().map(|&u| w[u]).collect()
    }

    /// Candidate message vectors `w~_D` of candidate `c2` with `(w~_D, g~)`
    /// S-equal to `(w_D, g)`: equal on `S`, different in `(w_k, g_k)` elsewhere in `D`.
    fn s_equal(&self, g: &CodeIndexVector, w_d: &[usize], c2: usize, s: UserSet, flat: usize) -> bool {
        let gt = &self.candidates[c2].g;
        let wt = self.candidates[c2].messages(flat);
        self.d_users.iter().enumerate().all(|(i, &u)| {
            let same = wt[i] == w_d[i] && gt.options[u] == g.options[u];
            if s.contains(u) {
                same
            } else {
                !same
            }
        })
    }

    /// Wrong-message event: some `(w~_D, g~)` S-equal to the truth `(w_D, g)`
    /// has weighted likelihood at least that of the truth.
    pub fn message_event(&self, tables: &DecodeTables, c: usize, w_d: &[usize], c2: usize, s: UserSet) -> bool {
        let g = &self.candidates[c].g;
        let truth = tables.ll[c][self.candidates[c].flat(w_d)];
        (0..self.candidates[c2].num_messages()).any(|f| self.s_equal(g, w_d, c2, s, f) && truth <= tables.ll[c2][f])
    }

    /// Threshold event: the truth's weighted likelihood does not exceed the threshold.
    pub fn threshold_event(&self, tables: &DecodeTables, c: usize, k: usize, w_d: &[usize]) -> bool {
        let flat = self.candidates[c].flat(w_d);
        tables.ll[c][flat] <= self.threshold(tables, c, k, flat)
    }

    /// Margin of the truth above the base threshold, per symbol.
    pub fn threshold_margin(&self, tables: &DecodeTables, c: usize, k: usize, w_d: &[usize]) -> f64 {
        let flat = self.candidates[c].flat(w_d);
        let con = &self.candidates[c].constraints[k];
        (tables.ll[c][flat] - tables.base[c][k][con.ws_of[flat]]) / self.n() as f64
    }

    /// Interference event: the truth is `(w~_D, g~)` with `g~` outside the
    /// region, and some `(w_D, g)` S-equal to it clears the threshold.
    pub fn interference_event(
        &self,
        tables: &DecodeTables,
        c: usize,
        k: usize,
        true_g: &CodeIndexVector,
        true_w_d: &[usize],
    ) -> bool {
        let s = self.candidates[c].constraints[k].s;
        self.s_equal_flats(c, s, true_g, true_w_d)
            .any(|f| tables.ll[c][f] > self.threshold(tables, c, k, f))
    }

    /// Largest margin above the base threshold among candidates S-equal to the truth,
    /// per symbol; `-inf` when there are none.
    pub fn interference_margin(
        &self,
        tables: &DecodeTables,
        c: usize,
        k: usize,
        true_g: &CodeIndexVector,
        true_w_d: &[usize],
    ) -> f64 {
        let con = &self.candidates[c].constraints[k];
        self.s_equal_flats(c, con.s, true_g, true_w_d)
            .map(|f| (tables.ll[c][f] - tables.base[c][k][con.ws_of[f]]) / self.n() as f64)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn s_equal_flats<'b>(
        &'b self,
        c: usize,
        s: UserSet,
        true_g: &'b CodeIndexVector,
        true_w_d: &'b [usize],
    ) -> impl Iterator<Item = usize> + 'b {
        (0..self.candidates[c].num_messages()).filter(move |&f| self.s_equal(true_g, true_w_d, c, s, f))
    }
}

#[allow(clippy::too_many_arguments)]
fn build_constraint(
    system: &System,
    d_users: &[usize],
    radices: &[usize],
    candidate: &Candidate,
    g_tilde: &CodeIndexVector,
    s: UserSet,
    alpha_tilde: f64,
    offset: f64,
) -> Constraint {
    let d = UserSet::of(d_users);
    let ch = InducedChannel::new(system, d, g_tilde);
    let ny = ch.output_alphabet();
    let s_pos: Vec<usize> = d_users
        .iter()
        .enumerate()
        .filter(|(_, u)| s.contains(**u))
        .map(|(i, _)| i)
        .collect();
    let s_radices: Vec<usize> = s_pos.iter().map(|&p| radices[p]).collect();
    let s_counts: Vec<usize> = s_pos.iter().map(|&p| candidate.counts[p]).collect();
    let n_s: usize = s_radices.iter().product();
    let mut table = vec![0.0; n_s * ny];
    for key in 0..ch.num_inputs() {
        let x = mixed_radix_digits(radices, key);
        let mut weight = 1.0;
        let mut s_key = 0;
        for (i, &u) in d_users.iter().enumerate() {
            if s.contains(u) {
                s_key = s_key * radices[i] + x[i];
            } else {
                weight *= system.option(u, g_tilde).input_dist[x[i]];
            }
        }
        for y in 0..ny {
            table[s_key * ny + y] += ch.prob(key, y) * weight;
        }
    }
    for v in &mut table {
        *v = v.ln() - alpha_tilde;
    }
    let ws_of = (0..candidate.num_messages())
        .map(|flat| {
            let m = candidate.messages(flat);
            s_pos.iter().zip(&s_counts).fold(0, |acc, (&p, &c)| acc * c + m[p])
        })
        .collect();
    Constraint {
        g_tilde: g_tilde.clone(),
        s,
        offset,
        s_pos,
        s_radices,
        s_counts,
        table,
        ws_of,
    }
}
