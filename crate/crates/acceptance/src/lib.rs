//! Seeded instance generators shared by the acceptance suite.

use rand::seq::SliceRandom;
use rand::Rng;
use utarget::{optimal_outcome, Instance};

/// Values drawn from `{0, lattice, 2 lattice, ..., max}` until the welfare optimum is unique.
pub fn lattice_instance<R: Rng>(rng: &mut R, n: (usize, usize), m: (usize, usize), lattice: f64, max: f64) -> Instance {
    let steps = (max / lattice).round() as u32;
    loop {
        let nb = rng.gen_range(n.0..=n.1);
        let no = rng.gen_range(m.0..=m.1);
        let rows = (0..nb)
            .map(|_| (0..no).map(|_| rng.gen_range(0..=steps) as f64 * lattice).collect())
            .collect();
        let inst = Instance::new(rows).expect("lattice values are valid");
        if optimal_outcome(&inst).unique {
            return inst;
        }
    }
}

/// Values drawn uniformly from `[0, max)`.
pub fn uniform_instance<R: Rng>(rng: &mut R, n: usize, m: usize, max: f64) -> Instance {
    Instance::new((0..n).map(|_| (0..m).map(|_| rng.gen_range(0.0..max)).collect()).collect())
        .expect("uniform values are valid")
}

/// `n` distinct values from `{lattice, 2 lattice, ..., count * lattice}`.
pub fn distinct_values<R: Rng>(rng: &mut R, n: usize, count: u32, lattice: f64) -> Vec<f64> {
    let mut pool: Vec<u32> = (1..=count).collect();
    pool.shuffle(rng);
    pool[..n].iter().map(|&k| k as f64 * lattice).collect()
}

/// Second-highest entry.
pub fn second_highest(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v[1]
}

/// Uniform values with a unique optimum where every positive competing gap
/// `sum_i max(v_i(o) - v_i(o*), 0)` is at least `min_gap`.
pub fn generic_instance<R: Rng>(rng: &mut R, n: (usize, usize), m: (usize, usize), max: f64, min_gap: f64) -> Instance {
    loop {
        let (nb, no) = (rng.gen_range(n.0..=n.1), rng.gen_range(m.0..=m.1));
        let inst = uniform_instance(rng, nb, no, max);
        let opt = optimal_outcome(&inst);
        if !opt.unique {
            continue;
        }
        let gaps_ok = (0..inst.num_outcomes()).all(|o| {
            let gap: f64 = (0..inst.num_bidders())
                .map(|i| (inst.value(i, o) - inst.value(i, opt.outcome)).max(0.0))
                .sum();
            gap == 0.0 || gap >= min_gap
        });
        if gaps_ok {
            return inst;
        }
    }
}
