//! Gaussian noise sources and the stream-splitting rule.
//!
//! Every Monte Carlo sample gets its own ChaCha8 generator. The 256-bit key is
//! built from `(master_seed, domain, group)` and the ChaCha stream id is the
//! sample index, so a sample's noise depends only on those four numbers and
//! never on scheduling or on how many other samples ran.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A source of independent standard normal variates.
pub trait GaussianStream {
    fn next_normal(&mut self) -> f64;
}

/// A source of Brownian increments `W_{t+dt} − W_t`.
///
/// Every [`GaussianStream`] is one, scaling a standard normal by `√dt`.
pub trait BrownianIncrements {
    fn increment(&mut self, dt: f64) -> f64;
}

impl<G: GaussianStream + ?Sized> BrownianIncrements for G {
    #[inline]
    fn increment(&mut self, dt: f64) -> f64 {
        dt.sqrt() * self.next_normal()
    }
}

/// Key domains, so different experiment kinds never share streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Paths = 1,
    Coupled = 2,
    Cost = 3,
    Moments = 4,
    Gap = 5,
}

#[derive(Debug, Clone)]
pub struct SeededNormals {
    rng: ChaCha8Rng,
}

impl SeededNormals {
    pub fn new(master_seed: u64, domain: Domain, group: u64, index: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
        key[16..24].copy_from_slice(&group.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        Self { rng }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl GaussianStream for SeededNormals {
    #[inline]
    fn next_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

/// Always zero: turns the scheme into its deterministic skeleton.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl GaussianStream for ZeroNoise {
    fn next_normal(&mut self) -> f64 {
        0.0
    }
}

/// Replays a fixed list of normals, then panics when exhausted.
#[derive(Debug, Clone)]
pub struct ReplayNormals {
    values: Vec<f64>,
    pos: usize,
}

impl ReplayNormals {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, pos: 0 }
    }
}

impl GaussianStream for ReplayNormals {
    fn next_normal(&mut self) -> f64 {
        let v = self.values[self.pos];
        self.pos += 1;
        v
    }
}

/// Replays recorded `(dt, dW)` pairs verbatim. The requested `dt` must match
/// the recorded one bit for bit.
#[derive(Debug, Clone)]
pub struct IncrementReplay {
    records: Vec<(f64, f64)>,
    pos: usize,
}

impl IncrementReplay {
    pub fn new(records: Vec<(f64, f64)>) -> Self {
        Self { records, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.records.len() - self.pos
    }
}

impl BrownianIncrements for IncrementReplay {
    fn increment(&mut self, dt: f64) -> f64 {
        let (rec_dt, dw) = self.records[self.pos];
        assert_eq!(
            rec_dt.to_bits(),
            dt.to_bits(),
            "replayed increment {} has dt {rec_dt}, requested {dt}",
            self.pos
        );
        self.pos += 1;
        dw
    }
}

/// Wraps another source and records every `(dt, dW)` it hands out.
#[derive(Debug)]
pub struct RecordingIncrements<B> {
    inner: B,
    pub records: Vec<(f64, f64)>,
}

impl<B> RecordingIncrements<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            records: Vec::new(),
        }
    }
}

impl<B: BrownianIncrements> BrownianIncrements for RecordingIncrements<B> {
    fn increment(&mut self, dt: f64) -> f64 {
        let dw = self.inner.increment(dt);
        self.records.push((dt, dw));
        dw
    }
}
