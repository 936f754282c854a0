//! Brute-force frontier by enumerating every subset of items.

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::pareto::Frontier;

/// Largest item count the enumeration accepts.
pub const MAX_ORACLE_ITEMS: usize = 20;

/// Frontier over all `2^N` item subsets. Solutions are enumerated in binary
/// counting order with item 1 as the lowest bit.
pub fn brute_force_frontier(inst: &Instance) -> Result<Frontier> {
    let n = inst.num_items();
    if n > MAX_ORACLE_ITEMS {
        return Err(Error::Resource(format!(
            "brute force over {n} items exceeds the {MAX_ORACLE_ITEMS}-item limit"
        )));
    }
    let mut candidates = Vec::new();
    for mask in 0u32..(1u32 << n) {
        let x: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        if inst.is_feasible(&x) {
            candidates.push((inst.evaluate(&x), x));
        }
    }
    Ok(Frontier::from_candidates(candidates))
}
