use std::collections::BTreeSet;

use super::codebook::{generate_codebooks, CodebookSet, DEFAULT_SYMBOL_CAP};
use crate::channel::fixtures;
use crate::code_space::{
    CodeEnsemble, CodeIndexVector, CodeOption, OperationConfig, System, UserSet, WeightAssignment,
};

pub(crate) struct Instance {
    pub system: System,
    pub config: OperationConfig,
    pub weights: WeightAssignment,
    pub codebooks: CodebookSet,
}

pub(crate) fn civ(o: &[usize]) -> CodeIndexVector {
    CodeIndexVector::new(o.to_vec(), 0)
}

/// Two users of a noisy OR channel, two rates each, decoding both users
/// with the all-low-rate vector as the region.
pub(crate) fn small(n: usize, seed: u64) -> Instance {
    let user = || vec![CodeOption::uniform(0.0, 2), CodeOption::uniform(0.35, 2)];
    let system = System::new(fixtures::noisy_or(0.1), CodeEnsemble::new(vec![user(), user()])).unwrap();
    let config = OperationConfig::new(
        UserSet::of(&[0, 1]),
        [civ(&[0, 0]), civ(&[0, 1])].into(),
        BTreeSet::new(),
    )
    .unwrap();
    let weights = WeightAssignment::uniform(system.vectors(), n).unwrap();
    let codebooks = generate_codebooks(&system, n, seed, DEFAULT_SYMBOL_CAP).unwrap();
    Instance {
        system,
        config,
        weights,
        codebooks,
    }
}
