use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::TraceOracle;
use super::{Trace, TraceOrigin};

/// What an added step is.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AddMode {
    /// A copy of a step already on the path, at another position.
    #[default]
    Duplicate,
    /// A step taken from any basic path, so possibly of an element the
    /// base path never visits.
    Graft,
}

/// Edit applied to a base trace. Positions refer to the base trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "op")]
pub enum Mutation {
    /// Copies step `from` to position `at`.
    Add { from: usize, at: usize },
    /// Inserts step `from` of basic path number `donor` at position `at`.
    Graft { donor: usize, from: usize, at: usize },
    Remove { at: usize },
    Swap { a: usize, b: usize },
}

impl Mutation {
    fn apply<T: Clone>(self, steps: &[T], donors: &[&[T]]) -> Vec<T> {
        let mut out = steps.to_vec();
        match self {
            Mutation::Add { from, at } => out.insert(at, steps[from].clone()),
            Mutation::Graft { donor, from, at } => out.insert(at, donors[donor][from].clone()),
            Mutation::Remove { at } => {
                out.remove(at);
            }
            Mutation::Swap { a, b } => out.swap(a, b),
        }
        out
    }

    /// `donors` holds the lengths of the paths a graft may take from.
    fn random(rng: &mut ChaCha8Rng, len: usize, add: AddMode, donors: &[usize]) -> Option<Mutation> {
        if len == 0 {
            return None;
        }
        Some(match rng.random_range(0..3) {
            0 if add == AddMode::Graft => {
                let donor = rng.random_range(0..donors.len());
                Mutation::Graft { donor, from: rng.random_range(0..donors[donor]), at: rng.random_range(0..=len) }
            }
            0 => Mutation::Add { from: rng.random_range(0..len), at: rng.random_range(0..=len) },
            1 => Mutation::Remove { at: rng.random_range(0..len) },
            _ if len >= 2 => {
                let a = rng.random_range(0..len);
                let mut b = rng.random_range(0..len - 1);
                if b >= a {
                    b += 1;
                }
                Mutation::Swap { a: a.min(b), b: a.max(b) }
            }
            _ => Mutation::Remove { at: 0 },
        })
    }
}

/// Applies `count` seeded random edits to randomly chosen basic paths and
/// labels each result with the oracle. Results are not deduplicated: a mutant
/// that happens to equal a valid run is simply labelled conforming.
pub fn mutate_traces(oracle: &TraceOracle<'_>, bases: &[Trace], count: usize, seed: u64) -> Vec<Trace> {
    mutate_traces_with(oracle, bases, count, seed, AddMode::Duplicate)
}

/// [`mutate_traces`] with a choice of what an added step is.
pub fn mutate_traces_with(oracle: &TraceOracle<'_>, bases: &[Trace], count: usize, seed: u64, add: AddMode) -> Vec<Trace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let candidates: Vec<&Trace> = bases.iter().filter(|b| !b.steps.is_empty()).collect();
    if candidates.is_empty() {
        return out;
    }
    let donors: Vec<&[_]> = candidates.iter().map(|t| t.steps.as_slice()).collect();
    let donor_lens: Vec<usize> = donors.iter().map(|d| d.len()).collect();
    while out.len() < count {
        let base = candidates[rng.random_range(0..candidates.len())];
        let m = Mutation::random(&mut rng, base.steps.len(), add, &donor_lens).expect("non-empty base");
        let steps = m.apply(&base.steps, &donors);
        let conforming = oracle.judge(&steps).conforming;
        out.push(Trace {
            id: format!("{}/mut-{}", base.id, out.len() + 1),
            steps,
            origin: TraceOrigin::Mutant { mutation: m, base: base.id.clone() },
            conforming,
        });
    }
    out
}
