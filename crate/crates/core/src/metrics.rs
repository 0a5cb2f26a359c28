//! Character n-gram F-score (chrF).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChrfParams {
    pub max_n: usize,
    pub beta: f64,
    pub strip_whitespace: bool,
}

impl Default for ChrfParams {
    fn default() -> Self {
        ChrfParams { max_n: 6, beta: 2.0, strip_whitespace: true }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ChrfError {
    #[error("max_n must be at least 1")]
    MaxN,
    #[error("beta must be positive and finite, got {0}")]
    Beta(f64),
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
}

impl ChrfParams {
    pub fn validate(&self) -> Result<(), ChrfError> {
        if self.max_n == 0 {
            return Err(ChrfError::MaxN);
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(ChrfError::Beta(self.beta));
        }
        Ok(())
    }
}

/// Per-order counts: clipped matches, hypothesis n-grams, reference n-grams.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChrfStats {
    pub matches: Vec<u64>,
    pub hyp: Vec<u64>,
    pub reference: Vec<u64>,
}

impl ChrfStats {
    fn zeros(max_n: usize) -> Self {
        ChrfStats { matches: vec![0; max_n], hyp: vec![0; max_n], reference: vec![0; max_n] }
    }

    /// Adds another segment's counts; associative and commutative.
    pub fn merge(&mut self, other: &ChrfStats) {
        for (a, b) in
            [(&mut self.matches, &other.matches), (&mut self.hyp, &other.hyp), (&mut self.reference, &other.reference)]
        {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Orders with no n-grams on either side are skipped; an order with one
    /// empty side contributes 0 to both means. Returns 0 when nothing counts.
    pub fn score(&self, beta: f64) -> f64 {
        let mut precision = 0.0;
        let mut recall = 0.0;
        let mut orders = 0usize;
        for n in 0..self.matches.len() {
            let (m, h, r) = (self.matches[n], self.hyp[n], self.reference[n]);
            if h == 0 && r == 0 {
                continue;
            }
            orders += 1;
            if h > 0 {
                precision += m as f64 / h as f64;
            }
            if r > 0 {
                recall += m as f64 / r as f64;
            }
        }
        if orders == 0 {
            return 0.0;
        }
        let (p, r) = (precision / orders as f64, recall / orders as f64);
        if p + r == 0.0 {
            return 0.0;
        }
        let b2 = beta * beta;
        100.0 * (1.0 + b2) * p * r / (b2 * p + r)
    }
}

fn chars(text: &str, strip_whitespace: bool) -> Vec<char> {
    text.chars().filter(|c| !(strip_whitespace && c.is_whitespace())).collect()
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for gram in chars.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

pub fn chrf_stats(hypothesis: &str, reference: &str, params: &ChrfParams) -> ChrfStats {
    let h = chars(hypothesis, params.strip_whitespace);
    let r = chars(reference, params.strip_whitespace);
    let mut stats = ChrfStats::zeros(params.max_n);
    for n in 1..=params.max_n {
        let hc = ngram_counts(&h, n);
        let rc = ngram_counts(&r, n);
        stats.matches[n - 1] = hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum();
        stats.hyp[n - 1] = h.len().saturating_sub(n - 1) as u64;
        stats.reference[n - 1] = r.len().saturating_sub(n - 1) as u64;
    }
    stats
}

pub fn chrf(hypothesis: &str, reference: &str, params: &ChrfParams) -> f64 {
    let stats = chrf_stats(hypothesis, reference, params);
    if stats.hyp.iter().chain(&stats.reference).all(|&c| c == 0) {
        log::debug!("chrF of two empty strings is 0");
    }
    stats.score(params.beta)
}

/// Corpus chrF from counts summed over all segments.
pub fn chrf_corpus<H, R>(hyps: H, refs: R, params: &ChrfParams) -> Result<f64, ChrfError>
where
    H: IntoIterator,
    H::Item: AsRef<str>,
    R: IntoIterator,
    R::Item: AsRef<str>,
{
    params.validate()?;
    let mut total = ChrfStats::zeros(params.max_n);
    let (mut nh, mut nr) = (0usize, 0usize);
    let mut refs = refs.into_iter();
    for h in hyps {
        nh += 1;
        if let Some(r) = refs.next() {
            nr += 1;
            total.merge(&chrf_stats(h.as_ref(), r.as_ref(), params));
        }
    }
    nr += refs.count();
    if nh != nr {
        return Err(ChrfError::LengthMismatch { hyps: nh, refs: nr });
    }
    Ok(total.score(params.beta))
}
