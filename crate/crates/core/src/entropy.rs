//! Per-user mobility entropies, in bits.
//!
//! * random entropy: `log2 N` over the `N` distinct locations,
//! * temporal-uncorrelated entropy: Shannon entropy of visit frequencies,
//! * real entropy: Lempel-Ziv match-length estimate of the entropy rate,
//!
//! ```text
//! S = n * log2(n) / sum_i Lambda_i
//! ```
//!
//! where `Lambda_i` is the length of the shortest substring starting at `i`
//! that does not occur inside `s[0..i)`. When the whole suffix occurs, this
//! is one past the suffix length (`n - i + 1` with zero-based `i`).

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::cdr_ingest::Trajectory;
use crate::error::{Error, Result};

/// Longest input accepted by [`real_entropy_oracle`].
pub const ORACLE_MAX_LEN: usize = 5_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub user_id: String,
    pub s_rand: f64,
    pub s_unc: f64,
    pub s_real: f64,
    pub n_unique_locations: usize,
    pub sequence_length: usize,
}

fn frequencies<T: Eq + Hash>(seq: &[T]) -> Vec<u64> {
    let mut counts: HashMap<&T, u64> = HashMap::new();
    for s in seq {
        *counts.entry(s).or_default() += 1;
    }
    let mut v: Vec<u64> = counts.into_values().collect();
    // summation order must not depend on labels
    v.sort_unstable();
    v
}

pub fn random_entropy<T: Eq + Hash>(seq: &[T]) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::domain("entropy of an empty trajectory"));
    }
    Ok((frequencies(seq).len() as f64).log2())
}

pub fn uncorrelated_entropy<T: Eq + Hash>(seq: &[T]) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::domain("entropy of an empty trajectory"));
    }
    let counts = frequencies(seq);
    let n = seq.len() as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // Jensen: never above log2 N; clamp absorbs last-ulp rounding
    Ok(h.max(0.0).min((counts.len() as f64).log2()))
}

fn estimate_from_lambda_sum(n: usize, lambda_sum: u64) -> f64 {
    let n_f = n as f64;
    n_f * n_f.log2() / lambda_sum as f64
}

/// Dense symbol codes, assigned in first-seen order.
fn encode<T: Eq + Hash>(seq: &[T]) -> Vec<u32> {
    let mut codes: HashMap<&T, u32> = HashMap::new();
    seq.iter()
        .map(|s| {
            let next = codes.len() as u32;
            *codes.entry(s).or_insert(next)
        })
        .collect()
}

/// Suffix automaton over a growing prefix. Walking from the root along a
/// string succeeds exactly when the string is a substring of the prefix.
struct SuffixAutomaton {
    len: Vec<usize>,
    link: Vec<usize>,
    next: Vec<Vec<(u32, usize)>>,
    last: usize,
}

const NONE: usize = usize::MAX;

impl SuffixAutomaton {
    fn with_capacity(n: usize) -> Self {
        let mut sa = SuffixAutomaton {
            len: Vec::with_capacity(2 * n + 1),
            link: Vec::with_capacity(2 * n + 1),
            next: Vec::with_capacity(2 * n + 1),
            last: 0,
        };
        sa.len.push(0);
        sa.link.push(NONE);
        sa.next.push(Vec::new());
        sa
    }

    fn go(&self, state: usize, c: u32) -> Option<usize> {
        self.next[state].iter().find(|e| e.0 == c).map(|e| e.1)
    }

    fn set(&mut self, state: usize, c: u32, to: usize) {
        match self.next[state].iter_mut().find(|e| e.0 == c) {
            Some(e) => e.1 = to,
            None => self.next[state].push((c, to)),
        }
    }

    fn extend(&mut self, c: u32) {
        let cur = self.len.len();
        self.len.push(self.len[self.last] + 1);
        self.link.push(NONE);
        self.next.push(Vec::new());
        let mut p = self.last;
        while p != NONE && self.go(p, c).is_none() {
            self.set(p, c, cur);
            p = self.link[p];
        }
        if p == NONE {
            self.link[cur] = 0;
        } else {
            let q = self.go(p, c).unwrap();
            if self.len[p] + 1 == self.len[q] {
                self.link[cur] = q;
            } else {
                let clone = self.len.len();
                self.len.push(self.len[p] + 1);
                self.link.push(self.link[q]);
                let edges = self.next[q].clone();
                self.next.push(edges);
                while p != NONE && self.go(p, c) == Some(q) {
                    self.set(p, c, clone);
                    p = self.link[p];
                }
                self.link[q] = clone;
                self.link[cur] = clone;
            }
        }
        self.last = cur;
    }

    /// Length of the longest prefix of `s` that is a substring of the
    /// automaton's text.
    fn longest_match(&self, s: &[u32]) -> usize {
        let mut state = 0;
        for (k, &c) in s.iter().enumerate() {
            match self.go(state, c) {
                Some(nxt) => state = nxt,
                None => return k,
            }
        }
        s.len()
    }
}

/// Sum of the match lengths `Lambda_i`, computed with a suffix automaton of
/// the growing prefix.
pub fn lambda_sum(seq: &[u32]) -> u64 {
    let mut sa = SuffixAutomaton::with_capacity(seq.len());
    let mut total = 0u64;
    for i in 0..seq.len() {
        total += sa.longest_match(&seq[i..]) as u64 + 1;
        sa.extend(seq[i]);
    }
    total
}

pub fn real_entropy_lz<T: Eq + Hash>(seq: &[T]) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::TooShort {
            required: 2,
            actual: seq.len(),
        });
    }
    Ok(estimate_from_lambda_sum(seq.len(), lambda_sum(&encode(seq))))
}

/// Match lengths by direct comparison against every earlier start position.
pub fn lambdas_brute_force<T: PartialEq>(seq: &[T]) -> Vec<u64> {
    let n = seq.len();
    (0..n)
        .map(|i| {
            let mut best = 0;
            for j in 0..i {
                // an occurrence starting at j must end by i
                let cap = (i - j).min(n - i);
                if cap <= best {
                    break;
                }
                let l = (0..cap).take_while(|&k| seq[j + k] == seq[i + k]).count();
                best = best.max(l);
            }
            best as u64 + 1
        })
        .collect()
}

/// Same estimator as [`real_entropy_lz`], by quadratic scanning.
pub fn real_entropy_oracle<T: PartialEq>(seq: &[T]) -> Result<f64> {
    if seq.len() > ORACLE_MAX_LEN {
        return Err(Error::OracleCap {
            len: seq.len(),
            cap: ORACLE_MAX_LEN,
        });
    }
    if seq.len() < 2 {
        return Err(Error::TooShort {
            required: 2,
            actual: seq.len(),
        });
    }
    let sum = lambdas_brute_force(seq).iter().sum();
    Ok(estimate_from_lambda_sum(seq.len(), sum))
}

pub fn entropy_profile(traj: &Trajectory) -> Result<EntropyProfile> {
    let seq = traj.symbols();
    let s_real = real_entropy_lz(seq)?;
    Ok(EntropyProfile {
        user_id: traj.user_id().to_owned(),
        s_rand: random_entropy(seq)?,
        s_unc: uncorrelated_entropy(seq)?,
        s_real,
        n_unique_locations: traj.vocabulary().len(),
        sequence_length: seq.len(),
    })
}
