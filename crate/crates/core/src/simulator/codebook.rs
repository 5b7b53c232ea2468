use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::sample_categorical;
use crate::code_space::{CodeOption, System};
use crate::error::{Error, Result};

/// Default cap on the total number of stored codeword symbols.
pub const DEFAULT_SYMBOL_CAP: usize = 1 << 27;

/// `max(floor(e^{N r}), 1)`, with a relative guard so that `r = ln(M) / N`
/// yields exactly `M` despite rounding in `exp`.
pub fn codeword_count(rate: f64, n: usize, cap: usize) -> Result<usize> {
    let x = (n as f64 * rate).exp() * (1.0 + 1e-12);
    if !x.is_finite() || x > cap as f64 {
        return Err(Error::CodebookCap {
            count: format!("{:.6e}", (n as f64 * rate).exp()),
            cap,
        });
    }
    Ok((x.floor() as usize).max(1))
}

/// Codewords of one `(user, option)` pair, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub user: usize,
    pub option: usize,
    pub n: usize,
    pub count: usize,
    symbols: Vec<u16>,
}

impl Codebook {
    fn generate(user: usize, option: usize, code: &CodeOption, n: usize, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((user as u64) << 32) | option as u64);
        let symbols = (0..count * n)
            .map(|_| sample_categorical(&code.input_dist, rng.random::<f64>()) as u16)
            .collect();
        Self {
            user,
            option,
            n,
            count,
            symbols,
        }
    }

    /// A codebook from explicit codewords of equal, positive length.
    pub fn from_words(user: usize, option: usize, words: &[Vec<u16>]) -> Result<Self> {
        let n = words.first().map_or(0, Vec::len);
        if n == 0 || words.iter().any(|w| w.len() != n) {
            return Err(Error::Dimension(
                "codewords must be nonempty and of equal length".into(),
            ));
        }
        Ok(Self {
            user,
            option,
            n,
            count: words.len(),
            symbols: words.concat(),
        })
    }

    #[inline]
    pub fn word(&self, message: usize) -> &[u16] {
        &self.symbols[message * self.n..(message + 1) * self.n]
    }
}

/// Every codebook of an ensemble at one blocklength, derived from one seed.
/// The receiver rebuilds the same set from the same seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookSet {
    pub n: usize,
    pub seed: u64,
    books: Vec<Vec<Codebook>>,
}

impl CodebookSet {
    #[inline]
    pub fn book(&self, user: usize, option: usize) -> &Codebook {
        &self.books[user][option]
    }

    pub fn count(&self, user: usize, option: usize) -> usize {
        self.books[user][option].count
    }

    /// Assembles explicit codebooks, one per `(user, option)` of `system`'s
    /// ensemble, checking shapes and symbols against the channel.
    pub fn from_books(system: &System, seed: u64, books: Vec<Vec<Codebook>>) -> Result<Self> {
        let options = &system.ensemble().users;
        if books.len() != options.len() || books.iter().zip(options).any(|(b, o)| b.len() != o.len()) {
            return Err(Error::Dimension("one codebook per user option is required".into()));
        }
        let n = books[0][0].n;
        let alphabets = system.channel().input_alphabets();
        for (user, row) in books.iter().enumerate() {
            for (option, book) in row.iter().enumerate() {
                if book.user != user || book.option != option || book.n != n {
                    return Err(Error::Dimension(format!(
                        "codebook ({user}, {option}) is misplaced or has the wrong length"
                    )));
                }
                if book.symbols.iter().any(|&s| s as usize >= alphabets[user]) {
                    return Err(Error::Dimension(format!(
                        "codebook ({user}, {option}) has symbols outside the alphabet"
                    )));
                }
            }
        }
        Ok(Self { n, seed, books })
    }
}

pub fn generate_codebooks(system: &System, n: usize, seed: u64, symbol_cap: usize) -> Result<CodebookSet> {
    if n == 0 {
        return Err(Error::Domain("blocklength must be positive".into()));
    }
    let mut counts = Vec::new();
    let mut total = 0usize;
    for (user, options) in system.ensemble().users.iter().enumerate() {
        let mut row = Vec::new();
        for code in options {
            let c = codeword_count(code.rate, n, symbol_cap)?;
            total = total
                .checked_add(c.saturating_mul(n))
                .filter(|t| *t <= symbol_cap)
                .ok_or_else(|| Error::CodebookCap {
                    count: format!("user {} needs {c} codewords", user + 1),
                    cap: symbol_cap,
                })?;
            row.push(c);
        }
        counts.push(row);
    }
    let books = system
        .ensemble()
        .users
        .iter()
        .enumerate()
        .map(|(user, options)| {
            options
                .iter()
                .enumerate()
                .map(|(option, code)| Codebook::generate(user, option, code, n, counts[user][option], seed))
                .collect()
        })
        .collect();
    Ok(CodebookSet { n, seed, books })
}
