//! Per-class SMOTE generator.
//!
//! A generator keeps a (possibly subsampled) memory of one class's flattened
//! windows. Synthetic samples are drawn uniformly along segments joining a
//! stored vector to one of its same-class nearest neighbours.
//!
//! The number of samples produced per stored vector is `S / M` with the
//! remainder `S mod M` handed out one each to the first stored vectors, so a
//! request for `S` samples yields exactly `S`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Provenance, WindowedSample};
use crate::error::{Error, Result};
use crate::seed::rng;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGenerator {
    pub class_id: usize,
    pub k: usize,
    pub seed: u64,
    pub window: usize,
    pub channels: usize,
    memory: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationRequest {
    count: usize,
}

impl GenerationRequest {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("generation count must be at least 1".into()));
        }
        Ok(Self { count })
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Fit a generator on one class. With `memory_budget = Some(b)` and more
/// than `b` samples, a seeded uniform subset of size `b` is retained (in
/// original order).
pub fn fit_generator(
    class_id: usize,
    samples: &[WindowedSample],
    k: usize,
    memory_budget: Option<usize>,
    seed: u64,
) -> Result<ClassGenerator> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if let Some(b) = memory_budget {
        if b < 2 {
            return Err(Error::Config(format!("memory_budget {b} must be at least 2")));
        }
    }
    if samples.len() < 2 {
        return Err(Error::ClassTooSmall {
            class_id,
            count: samples.len(),
        });
    }
    if let Some(s) = samples.iter().find(|s| s.class_id != class_id) {
        return Err(Error::MixedClasses {
            expected: class_id,
            found: s.class_id,
        });
    }
    let (window, channels) = (samples[0].window, samples[0].channels);
    if let Some(s) = samples
        .iter()
        .find(|s| s.window != window || s.channels != channels)
    {
        return Err(Error::Shape {
            expected: window * channels,
            got: s.dim(),
        });
    }

    let keep: Vec<usize> = match memory_budget {
        Some(b) if samples.len() > b => {
            let mut r = rng(seed);
            let mut picked = index::sample(&mut r, samples.len(), b).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..samples.len()).collect(),
    };
    let memory = keep.iter().map(|&i| samples[i].features.clone()).collect();
    Ok(ClassGenerator {
        class_id,
        k,
        seed,
        window,
        channels,
        memory,
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl ClassGenerator {
    pub fn memory(&self) -> &[Vec<f64>] {
        &self.memory
    }

    pub fn memory_len(&self) -> usize {
        self.memory.len()
    }

    pub fn effective_k(&self) -> usize {
        self.k.min(self.memory.len() - 1)
    }

    /// Indices of the `min(k, M - 1)` stored vectors nearest to stored
    /// vector `index`, closest first; equal distances go to the lower index.
    pub fn nearest_neighbors(&self, index: usize) -> Result<Vec<usize>> {
        let len = self.memory.len();
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
        let q = &self.memory[index];
        let mut d: Vec<(f64, usize)> = self
            .memory
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != index)
            .map(|(i, v)| (squared_distance(q, v), i))
            .collect();
        let k = self.effective_k();
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k, by_dist);
            d.truncate(k);
        }
        d.sort_by(by_dist);
        Ok(d.into_iter().map(|(_, i)| i).collect())
    }

    /// Number of samples drawn around stored vector `j` for a request of
    /// `total`.
    pub fn quota(&self, j: usize, total: usize) -> usize {
        let m = self.memory.len();
        total / m + usize::from(j < total % m)
    }

    pub fn generate(&self, request: GenerationRequest) -> Result<Vec<WindowedSample>> {
        self.generate_with_seed(request, self.seed)
    }

    /// Generate using an explicit stream seed; disjoint seeds give
    /// independent draws from the same fitted memory.
    pub fn generate_with_seed(
        &self,
        request: GenerationRequest,
        seed: u64,
    ) -> Result<Vec<WindowedSample>> {
        let mut r = rng(seed);
        let mut out = Vec::with_capacity(request.count);
        for j in 0..self.memory.len() {
            let q = self.quota(j, request.count);
            if q == 0 {
                continue;
            }
            let neighbors = self.nearest_neighbors(j)?;
            let n = neighbors.len();
            let anchor = &self.memory[j];
            if q <= n {
                // one candidate per segment, then a subset of them
                let u: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
                for pick in index::sample(&mut r, n, q) {
                    out.push(self.interpolate(j, neighbors[pick], u[pick], anchor)?);
                }
            } else {
                for _ in 0..q {
                    let pick = r.random_range(0..n);
                    let u = r.random::<f64>();
                    out.push(self.interpolate(j, neighbors[pick], u, anchor)?);
                }
            }
        }
        debug_assert_eq!(out.len(), request.count);
        Ok(out)
    }

    fn interpolate(
        &self,
        anchor: usize,
        neighbor: usize,
        u: f64,
        x: &[f64],
    ) -> Result<WindowedSample> {
        let y = &self.memory[neighbor];
        let features = x.iter().zip(y).map(|(a, b)| a + u * (b - a)).collect();
        WindowedSample::new(
            features,
            self.window,
            self.channels,
            self.class_id,
            Provenance::Synthetic { anchor, neighbor },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("generator k must be at least 1".into()));
        }
        if self.memory.len() < 2 {
            return Err(Error::ClassTooSmall {
                class_id: self.class_id,
                count: self.memory.len(),
            });
        }
        let dim = self.window * self.channels;
        for v in &self.memory {
            if v.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("generator memory".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(points: &[&[f64]], class_id: usize) -> Vec<WindowedSample> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                WindowedSample::new(
                    p.to_vec(),
                    1,
                    p.len(),
                    class_id,
                    Provenance::Raw { trial_id: 1, start: i },
                )
                .unwrap()
            })
            .collect()
    }

    fn line(n: usize) -> Vec<WindowedSample> {
        (0..n)
            .map(|i| {
                WindowedSample::new(vec![i as f64, 2.0 * i as f64], 1, 2, 4, Provenance::Raw { trial_id: 1, start: i })
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn budget_not_binding() {
        let g = fit_generator(4, &line(125), 5, Some(125), 1).unwrap();
        assert_eq!(g.memory_len(), 125);
    }

    #[test]
    fn budget_subsamples_reproducibly() {
        let a = fit_generator(4, &line(125), 5, Some(40), 9).unwrap();
        let b = fit_generator(4, &line(125), 5, Some(40), 9).unwrap();
        assert_eq!(a.memory_len(), 40);
        assert_eq!(a, b);
        let c = fit_generator(4, &line(125), 5, Some(40), 10).unwrap();
        assert_ne!(a.memory(), c.memory());
    }

    #[test]
    fn too_small_and_mixed() {
        let one = line(1);
        assert!(matches!(
            fit_generator(4, &one, 5, None, 0),
            Err(Error::ClassTooSmall { count: 1, .. })
        ));
        let mut mixed = line(3);
        mixed[2].class_id = 7;
        assert!(matches!(
            fit_generator(4, &mixed, 5, None, 0),
            Err(Error::MixedClasses { expected: 4, found: 7 })
        ));
    }

    #[test]
    fn neighbors_on_a_line() {
        let g = fit_generator(0, &samples(&[&[0.0], &[1.0], &[3.0], &[7.0]], 0), 2, None, 0).unwrap();
        assert_eq!(g.nearest_neighbors(0).unwrap(), vec![1, 2]);
        assert!(matches!(g.nearest_neighbors(4), Err(Error::IndexOutOfRange { index: 4, len: 4 })));
    }

    #[test]
    fn neighbors_exhaustive_when_k_large() {
        let g = fit_generator(0, &samples(&[&[0.0], &[1.0], &[3.0], &[7.0]], 0), 10, None, 0).unwrap();
        assert_eq!(g.effective_k(), 3);
        let mut n = g.nearest_neighbors(2).unwrap();
        n.sort();
        assert_eq!(n, vec![0, 1, 3]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let g = fit_generator(0, &samples(&[&[0.0], &[-1.0], &[1.0], &[1.0]], 0), 2, None, 0).unwrap();
        assert_eq!(g.nearest_neighbors(0).unwrap(), vec![1, 2]);
    }

    #[test]
    fn two_point_segment() {
        let g = fit_generator(0, &samples(&[&[0.0, 0.0], &[1.0, 1.0]], 0), 1, None, 5).unwrap();
        let out = g.generate(GenerationRequest::new(2).unwrap()).unwrap();
        assert_eq!(out.len(), 2);
        for s in out {
            let (a, b) = (s.features[0], s.features[1]);
            assert_eq!(a, b);
            assert!((0.0..=1.0).contains(&a));
            assert!(s.source.is_synthetic());
        }
    }

    #[test]
    fn identical_memory_yields_copies() {
        let p: &[f64] = &[2.5, -1.0, 4.0];
        let g = fit_generator(0, &samples(&[p, p, p, p], 0), 3, None, 1).unwrap();
        for s in g.generate(GenerationRequest::new(11).unwrap()).unwrap() {
            assert_eq!(s.features, p);
        }
    }

    #[test]
    fn three_neighbors_three_candidates() {
        // one anchor with three neighbours and a quota of three: one point
        // on each segment
        let pts: [&[f64]; 4] = [&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[-1.0, -1.0]];
        let g = fit_generator(0, &samples(&pts, 0), 3, None, 21).unwrap();
        let out = g.generate(GenerationRequest::new(12).unwrap()).unwrap();
        let around_zero: Vec<_> = out
            .iter()
            .filter_map(|s| match s.source {
                Provenance::Synthetic { anchor: 0, neighbor } => Some(neighbor),
                _ => None,
            })
            .collect();
        let mut n = around_zero.clone();
        n.sort();
        assert_eq!(n, vec![1, 2, 3]);
    }

    #[test]
    fn count_exact_when_not_divisible() {
        let g = fit_generator(4, &line(7), 3, None, 2).unwrap();
        for s in [1, 6, 7, 8, 20, 23] {
            let out = g.generate(GenerationRequest::new(s).unwrap()).unwrap();
            assert_eq!(out.len(), s);
        }
        assert!(GenerationRequest::new(0).is_err());
    }

    #[test]
    fn quota_above_k_stays_on_segments() {
        let g = fit_generator(4, &line(5), 1, None, 2).unwrap();
        let out = g.generate(GenerationRequest::new(40).unwrap()).unwrap();
        assert_eq!(out.len(), 40);
        for s in out {
            let Provenance::Synthetic { anchor, neighbor } = s.source else { unreachable!() };
            assert!(g.nearest_neighbors(anchor).unwrap().contains(&neighbor));
        }
    }

    #[test]
    fn json_round_trip_validates() {
        let g = fit_generator(4, &line(6), 2, None, 3).unwrap();
        let back = ClassGenerator::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(g, back);
        let bad = r#"{"class_id":0,"k":1,"seed":0,"window":1,"channels":1,"memory":[[1.0]]}"#;
        assert!(ClassGenerator::from_json(bad).is_err());
    }
}
