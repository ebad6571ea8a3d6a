//! Seeded synthetic reaction sets for desk-scale runs and tests.
//!
//! Molecule names are SMILES-shaped strings built from a prefix-free
//! fragment alphabet, so every index decodes to a distinct name. Products are
//! reused as reactants often enough to form multi-step chains.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ReactionRecord;

const FRAGMENTS: [&str; 10] = [
    "C", "N", "O", "S", "F", "Cl", "Br", "c1ccccc1", "C(=O)", "C#N",
];

/// Distinct SMILES-shaped name for a molecule index.
pub fn molecule_name(index: usize) -> String {
    // Fixed width keeps names from different magnitudes distinct.
    let digits = format!("{index:06}");
    let mut s = String::from("C");
    for d in digits.bytes() {
        s.push_str(FRAGMENTS[(d - b'0') as usize]);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub reactions: usize,
    pub seed: u64,
    /// Probability that a reactant is an earlier product.
    pub reuse: f64,
    /// Probability that a product is an already produced molecule.
    pub reproduce: f64,
    pub reagent_pool: usize,
}

impl SynthConfig {
    pub fn new(reactions: usize, seed: u64) -> Self {
        Self {
            reactions,
            seed,
            reuse: 0.45,
            reproduce: 0.08,
            reagent_pool: 24,
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Vec<ReactionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut next_mol = 0usize;
    let mut fresh = || {
        next_mol += 1;
        molecule_name(next_mol - 1)
    };
    let reagents: Vec<String> = (0..cfg.reagent_pool).map(|_| fresh()).collect();
    let base: Vec<String> = (0..cfg.reactions.max(1)).map(|_| fresh()).collect();
    let mut produced: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(cfg.reactions);

    for k in 0..cfg.reactions {
        let n_react = pick(&mut rng, &[35, 45, 20]) + 1;
        let mut reactants: Vec<String> = Vec::new();
        while reactants.len() < n_react {
            let m = if !produced.is_empty() && rng.random_bool(cfg.reuse) {
                produced[rng.random_range(0..produced.len())].clone()
            } else {
                base[rng.random_range(0..base.len())].clone()
            };
            if !reactants.contains(&m) {
                reactants.push(m);
            }
        }

        let n_prod = if rng.random_bool(0.1) { 2 } else { 1 };
        let mut products: Vec<String> = Vec::new();
        while products.len() < n_prod {
            let m = if !produced.is_empty() && rng.random_bool(cfg.reproduce) {
                produced[rng.random_range(0..produced.len())].clone()
            } else {
                fresh()
            };
            if !products.contains(&m) && !reactants.contains(&m) {
                products.push(m);
            }
        }

        let role_from_pool = |n: usize, lo: usize, hi: usize, rng: &mut ChaCha8Rng| {
            let mut v: Vec<String> = Vec::new();
            while v.len() < n {
                let m = reagents[rng.random_range(lo..hi)].clone();
                if !v.contains(&m) {
                    v.push(m);
                }
            }
            v
        };
        let half = reagents.len() / 2;
        let n_agents = pick(&mut rng, &[40, 40, 20]);
        let agents = role_from_pool(n_agents, 0, half, &mut rng);
        let n_solv = pick(&mut rng, &[30, 55, 15]);
        let solvents = role_from_pool(n_solv, half, reagents.len(), &mut rng);

        let mut yields = BTreeMap::new();
        for p in &products {
            if rng.random_bool(0.8) {
                let tenths = rng.random_range(50..=990u32);
                yields.insert(p.clone(), f64::from(tenths) / 10.0);
            }
        }

        for p in &products {
            if !produced.contains(p) {
                produced.push(p.clone());
            }
        }
        out.push(ReactionRecord {
            id: format!("RXN-{k:05}"),
            reactants,
            products,
            agents,
            solvents,
            yields: (!yields.is_empty()).then_some(yields),
        });
    }
    out
}

fn pick(rng: &mut ChaCha8Rng, weights: &[u32]) -> usize {
    let total: u32 = weights.iter().sum();
    let mut x = rng.random_range(0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn names_are_distinct() {
        let names: HashSet<String> = (0..5000).map(molecule_name).collect();
        assert_eq!(names.len(), 5000);
    }

    #[test]
    fn generated_records_satisfy_invariants() {
        let recs = generate(&SynthConfig::new(300, 11));
        assert_eq!(recs.len(), 300);
        for r in &recs {
            assert!(r.within_bounds(4));
            for role in r.roles() {
                let set: HashSet<_> = role.iter().collect();
                assert_eq!(set.len(), role.len());
            }
            if let Some(y) = &r.yields {
                assert!(y.keys().all(|k| r.products.contains(k)));
                assert!(y.values().all(|v| (0.0..=100.0).contains(v)));
            }
        }
        assert_eq!(recs, generate(&SynthConfig::new(300, 11)));
    }
}
