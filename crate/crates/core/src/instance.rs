//! Multiobjective 0-1 knapsack instances.
//!
//! Instances maximize `K` linear objectives over `N` binary item variables
//! subject to one capacity constraint. Generated instances draw every weight
//! and profit independently from the discrete uniform distribution on
//! `1..=1000` using ChaCha8 seeded from a `u64`, so a `(K, N, seed)` triple
//! names the same instance on every platform.
//!
//! Text layout (UTF-8, LF):
//!
//! ```text
//! K N W
//! w_1 ... w_N
//! p_11 ... p_1N
//! ...
//! p_K1 ... p_KN
//! # seed 42
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Upper bound of the generator's coefficient range.
pub const COEFFICIENT_MAX: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    capacity: u32,
    weights: Vec<u32>,
    profits: Vec<Vec<u32>>,
    seed: Option<u64>,
}

impl Instance {
    /// Builds an instance from raw data, checking dimensions and positivity.
    pub fn new(capacity: u32, weights: Vec<u32>, profits: Vec<Vec<u32>>) -> Result<Self> {
        let inst = Instance {
            capacity,
            weights,
            profits,
            seed: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        if n == 0 {
            return Err(Error::Validation("instance has no items".into()));
        }
        if self.profits.is_empty() {
            return Err(Error::Validation("instance has no objectives".into()));
        }
        if let Some(i) = self.weights.iter().position(|&w| w == 0) {
            return Err(Error::Validation(format!("weight of item {} is zero", i + 1)));
        }
        for (k, row) in self.profits.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Validation(format!(
                    "objective {} has {} profits, expected {n}",
                    k + 1,
                    row.len()
                )));
            }
            if let Some(i) = row.iter().position(|&p| p == 0) {
                return Err(Error::Validation(format!(
                    "profit of item {} in objective {} is zero",
                    i + 1,
                    k + 1
                )));
            }
        }
        let total: u64 = self.weights.iter().map(|&w| w as u64).sum();
        if total > u32::MAX as u64 {
            return Err(Error::Validation("sum of weights overflows u32".into()));
        }
        let max_profit: u64 = self
            .profits
            .iter()
            .map(|row| row.iter().map(|&p| p as u64).sum::<u64>())
            .max()
            .unwrap_or(0);
        if max_profit > u32::MAX as u64 {
            return Err(Error::Validation("sum of profits overflows u32".into()));
        }
        Ok(())
    }

    pub fn num_objectives(&self) -> usize {
        self.profits.len()
    }

    pub fn num_items(&self) -> usize {
        self.weights.len()
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    pub fn weight(&self, item: usize) -> u32 {
        self.weights[item]
    }

    /// Profit matrix, one row per objective.
    pub fn profits(&self) -> &[Vec<u32>] {
        &self.profits
    }

    /// Profits of one item across all objectives (a column of the matrix).
    pub fn item_profits(&self, item: usize) -> impl Iterator<Item = u32> + '_ {
        self.profits.iter().map(move |row| row[item])
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn total_weight(&self) -> u64 {
        self.weights.iter().map(|&w| w as u64).sum()
    }

    /// Checks the knapsack constraint for a 0/1 assignment.
    pub fn is_feasible(&self, solution: &[bool]) -> bool {
        debug_assert_eq!(solution.len(), self.num_items());
        let load: u64 = self
            .weights
            .iter()
            .zip(solution)
            .filter(|(_, &x)| x)
            .map(|(&w, _)| w as u64)
            .sum();
        load <= self.capacity as u64
    }

    /// Objective vector of a 0/1 assignment.
    pub fn evaluate(&self, solution: &[bool]) -> Vec<u32> {
        self.profits
            .iter()
            .map(|row| {
                row.iter()
                    .zip(solution)
                    .filter(|(_, &x)| x)
                    .map(|(&p, _)| p)
                    .sum()
            })
            .collect()
    }

    /// Canonical text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {}",
            self.num_objectives(),
            self.num_items(),
            self.capacity
        );
        write_row(&mut out, &self.weights);
        for row in &self.profits {
            write_row(&mut out, row);
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "# seed {seed}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut data = Vec::new();
        let mut seed = None;
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if let Some(comment) = trimmed.strip_prefix('#') {
                let mut parts = comment.split_whitespace();
                if parts.next() == Some("seed") {
                    if let Some(v) = parts.next() {
                        seed = Some(v.parse::<u64>().map_err(|e| {
                            Error::parse(idx + 1, format!("bad seed {v:?}: {e}"))
                        })?);
                    }
                }
                continue;
            }
            if trimmed.is_empty() {
                continue;
            }
            data.push((idx + 1, trimmed));
        }

        let mut lines = data.into_iter();
        let (line_no, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty instance file"))?;
        let header = parse_numbers(line_no, header)?;
        if header.len() != 3 {
            return Err(Error::parse(line_no, "header must be `K N W`"));
        }
        let (k, n, capacity) = (header[0] as usize, header[1] as usize, header[2]);

        let mut next_row = |what: &str| -> Result<Vec<u32>> {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(line_no + 1, format!("missing {what} row")))?;
            let row = parse_numbers(line_no, line)?;
            if row.len() != n {
                return Err(Error::parse(
                    line_no,
                    format!("expected {n} {what} values, found {}", row.len()),
                ));
            }
            Ok(row)
        };
        let weights = next_row("weight")?;
        let profits = (0..k)
            .map(|_| next_row("profit"))
            .collect::<Result<Vec<_>>>()?;
        if let Some((line_no, _)) = lines.next() {
            return Err(Error::parse(line_no, "unexpected trailing data"));
        }
        let mut inst = Instance::new(capacity, weights, profits)?;
        inst.seed = seed;
        Ok(inst)
    }

    /// Short content hash of the canonical text, used to tie dumps to instances.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&digest[..8])
    }
}

fn write_row(out: &mut String, row: &[u32]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

fn parse_numbers(line_no: usize, line: &str) -> Result<Vec<u32>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<u32>()
                .map_err(|e| Error::parse(line_no, format!("bad integer {tok:?}: {e}")))
        })
        .collect()
}

/// Draws a random instance; capacity is half the total weight, rounded up.
pub fn generate_instance(num_objectives: usize, num_items: usize, seed: u64) -> Instance {
    assert!(num_objectives >= 1, "need at least one objective");
    assert!(num_items >= 1, "need at least one item");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeff = Uniform::new_inclusive(1, COEFFICIENT_MAX);
    let weights: Vec<u32> = (0..num_items).map(|_| coeff.sample(&mut rng)).collect();
    let profits = (0..num_objectives)
        .map(|_| (0..num_items).map(|_| coeff.sample(&mut rng)).collect())
        .collect();
    let capacity = half_capacity(&weights);
    Instance {
        capacity,
        weights,
        profits,
        seed: Some(seed),
    }
}

/// Mixes a base seed with a path of indices (size, split, position, ...)
/// into an independent per-item seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// `ceil(sum(weights) / 2)`.
pub fn half_capacity(weights: &[u32]) -> u32 {
    let total: u64 = weights.iter().map(|&w| w as u64).sum();
    total.div_ceil(2) as u32
}

pub fn write_instance(inst: &Instance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, inst.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Instance::parse(&text)
}
