use proptest::prelude::*;
use rcl_core::classifier::network::softmax;
use rcl_core::data::{fit_standardizer, window_trial, Provenance, TimeSeriesTrial, WindowedSample};
use rcl_core::eval::{confusion, metrics};
use rcl_core::generator::{fit_generator, GenerationRequest};

fn as_samples(points: &[Vec<f64>]) -> Vec<WindowedSample> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            WindowedSample::new(p.clone(), p.len(), 1, 0, Provenance::Raw { trial_id: 0, start: i }).unwrap()
        })
        .collect()
}

fn point_cloud() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 2usize..25).prop_flat_map(|(dim, m)| {
        proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, dim), m)
    })
}

proptest! {
    #[test]
    fn synthetic_points_lie_on_neighbour_segments(
        points in point_cloud(),
        k in 1usize..8,
        count in 1usize..60,
        seed in any::<u64>(),
    ) {
        let g = fit_generator(0, &as_samples(&points), k, None, seed).unwrap();
        let out = g.generate(GenerationRequest::new(count).unwrap()).unwrap();
        prop_assert_eq!(out.len(), count);
        for s in &out {
            let Provenance::Synthetic { anchor, neighbor } = s.source else {
                return Err(TestCaseError::fail("raw provenance on a synthetic sample"));
            };
            prop_assert!(g.nearest_neighbors(anchor).unwrap().contains(&neighbor));
            let (x, y) = (&points[anchor], &points[neighbor]);
            // s = x + u (y - x) for a single u in [0, 1)
            let len2: f64 = x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum();
            let u = if len2 > 0.0 {
                x.iter().zip(y).zip(&s.features).map(|((a, b), v)| (v - a) * (b - a)).sum::<f64>() / len2
            } else {
                0.0
            };
            prop_assert!((-1e-12..1.0 + 1e-12).contains(&u));
            for ((a, b), v) in x.iter().zip(y).zip(&s.features) {
                prop_assert!((a + u * (b - a) - v).abs() <= 1e-9);
                prop_assert!(*v >= a.min(*b) - 1e-12 && *v <= a.max(*b) + 1e-12);
            }
        }
    }

    #[test]
    fn quotas_sum_to_request(m in 2usize..50, count in 1usize..500) {
        let points: Vec<Vec<f64>> = (0..m).map(|i| vec![i as f64]).collect();
        let g = fit_generator(0, &as_samples(&points), 3, None, 0).unwrap();
        let total: usize = (0..m).map(|j| g.quota(j, count)).sum();
        prop_assert_eq!(total, count);
        let (lo, hi) = ((0..m).map(|j| g.quota(j, count)).min().unwrap(), (0..m).map(|j| g.quota(j, count)).max().unwrap());
        prop_assert!(hi - lo <= 1);
    }

    #[test]
    fn confusion_ignores_sample_order(
        pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..80),
        shift in 0usize..80,
    ) {
        let (t, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let mut rotated = pairs.clone();
        rotated.rotate_left(shift % pairs.len());
        let (rt, rp): (Vec<_>, Vec<_>) = rotated.into_iter().unzip();
        prop_assert_eq!(confusion(&t, &p, 4).unwrap(), confusion(&rt, &rp, 4).unwrap());
    }

    #[test]
    fn relabelling_permutes_per_class_metrics(
        pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..60),
    ) {
        let perm = [2usize, 0, 1];
        let (t, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let (pt, pp): (Vec<_>, Vec<_>) = pairs.iter().map(|&(a, b)| (perm[a], perm[b])).unzip();
        let a = metrics(&confusion(&t, &p, 3).unwrap()).unwrap();
        let b = metrics(&confusion(&pt, &pp, 3).unwrap()).unwrap();
        for c in 0..3 {
            prop_assert_eq!(a.precision[c], b.precision[perm[c]]);
            prop_assert_eq!(a.recall[c], b.recall[perm[c]]);
            prop_assert_eq!(a.f[c], b.f[perm[c]]);
        }
        prop_assert!((a.macro_f - b.macro_f).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution(logits in proptest::collection::vec(-700.0f64..700.0, 2..10)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn standardizer_round_trips(points in point_cloud()) {
        let samples = as_samples(&points);
        let s = fit_standardizer(&samples).unwrap();
        for x in &points {
            let back = s.inverse(&s.transform(x).unwrap()).unwrap();
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn window_count_formula(len in 1usize..300, window in 1usize..40, stride in 1usize..40) {
        let trial = TimeSeriesTrial::new(0, 1, 1, vec![0.5; len], 1.0).unwrap();
        match window_trial(&trial, window, stride) {
            Ok(w) => {
                prop_assert!(window <= len);
                prop_assert_eq!(w.len(), (len - window) / stride + 1);
            }
            Err(_) => prop_assert!(window > len),
        }
    }
}
