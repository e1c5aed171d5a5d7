mod common;

use proptest::prelude::*;

use common::*;
use sedtune::agent::compute_advantages;
use sedtune::dataset::{Dataset, PosteriorClip};
use sedtune::eval::evaluate_dataset;
use sedtune::metric::{decode_events, match_events, BinaryFrames, CollarConfig, Event};
use sedtune::ndmath::log_softmax_rows;
use sedtune::postproc::*;

fn binary(max_len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, 1..=max_len)
}

fn window() -> impl Strategy<Value = usize> {
    (1usize..=10).prop_map(|k| 2 * k + 1)
}

fn events(clip: &'static str, class: usize) -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0u32..200, 1u32..60), 0..=6).prop_map(move |v| {
        v.into_iter()
            .map(|(on, len)| {
                let on = on as f64 * 0.05;
                Event::new(clip, on, on + len as f64 * 0.05, class).unwrap()
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn median_matches_sorting_oracle(col in binary(200), w in window()) {
        prop_assert_eq!(median_filter_column(&col, w).unwrap(), naive_median(&col, w));
    }

    #[test]
    fn repeated_median_reaches_a_fixed_point(col in binary(120), w in window()) {
        let mut cur = median_filter_column(&col, w).unwrap();
        for _ in 0..=col.len() {
            let next = median_filter_column(&cur, w).unwrap();
            if next == cur {
                return Ok(());
            }
            cur = next;
        }
        prop_assert!(false, "no fixed point");
    }

    #[test]
    fn median_keeps_constant_runs_longer_than_half_window(w in window(), pad in 0usize..30, run in 0usize..40) {
        // an isolated block survives iff it is longer than half the window
        let mut col = vec![0u8; pad];
        col.extend(std::iter::repeat_n(1u8, run));
        col.extend(std::iter::repeat_n(0u8, w + pad));
        let out = median_filter_column(&col, w).unwrap();
        if run > w / 2 {
            prop_assert_eq!(out, col);
        } else if pad > 0 {
            prop_assert!(out.iter().all(|v| *v == 0));
        }
    }

    #[test]
    fn matching_symmetric_in_roles(p in events("a", 0), r in events("a", 0)) {
        // swapping roles keeps TP when the collar is symmetric
        let collar = CollarConfig { onset_collar: 0.2, offset_collar_abs: 0.2, offset_collar_rel: 0.0 };
        let a = match_events(&p, &r, &collar, 1).unwrap()[0];
        let b = match_events(&r, &p, &collar, 1).unwrap()[0];
        prop_assert_eq!(a.true_positives, b.true_positives);
        prop_assert_eq!(a.false_positives, b.false_negatives);
    }

    #[test]
    fn matching_equals_brute_force(p in events("a", 0), r in events("a", 0)) {
        let collar = CollarConfig::default();
        let got = match_events(&p, &r, &collar, 1).unwrap()[0].true_positives;
        prop_assert_eq!(got, brute_force_matching(&p, &r, &collar));
    }

    #[test]
    fn perfect_predictions_score_one(r in events("a", 0)) {
        prop_assume!(!r.is_empty());
        let s = match_events(&r, &r, &CollarConfig::default(), 1).unwrap()[0];
        prop_assert_eq!(s.true_positives, r.len());
        prop_assert_eq!(s.f1(), 1.0);
    }

    #[test]
    fn decode_round_trip(col in binary(150)) {
        let hop = 0.064;
        let frames = BinaryFrames::new(col.len(), 1, col.clone()).unwrap();
        let ev = decode_events(&frames, hop, "x").unwrap();
        let mut back = vec![0u8; col.len()];
        for e in &ev {
            let s = (e.onset / hop).round() as usize;
            let t = (e.offset / hop).round() as usize;
            back[s..t].iter_mut().for_each(|v| *v = 1);
        }
        prop_assert_eq!(back, col);
    }

    #[test]
    fn higher_threshold_never_adds_active_frames(
        data in prop::collection::vec(0.0f64..=1.0, 1..100),
        a in 0.01f64..0.99,
        b in 0.01f64..0.99,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let post = Posteriorgram::new(data.len(), 1, data).unwrap();
        let x = apply_thresholds(&post, &[lo]).unwrap();
        let y = apply_thresholds(&post, &[hi]).unwrap();
        prop_assert!(x.data().iter().zip(y.data()).all(|(p, q)| q <= p));
    }

    #[test]
    fn log_softmax_rows_normalize(v in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let out = log_softmax_rows(&v, v.len());
        let total: f64 = out.iter().map(|x| x.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(out.iter().all(|x| *x <= 0.0));
    }

    #[test]
    fn advantages_match_oracle(
        vr in prop::collection::vec((-2.0f64..2.0, 0.0f64..=1.0), 1..=50),
        gamma in 0.1f64..=1.0,
    ) {
        let (values, rewards): (Vec<f64>, Vec<f64>) = vr.into_iter().unzip();
        let got = compute_advantages(&steps_from(&values, &rewards), gamma).unwrap();
        for (a, b) in got.advantages.iter().zip(naive_advantages(&values, &rewards, gamma)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for ((ret, a), v) in got.returns.iter().zip(&got.advantages).zip(&values) {
            prop_assert_eq!(*ret, a + v);
        }
    }

    #[test]
    fn value_equal_to_return_gives_zero_advantage(
        rewards in prop::collection::vec(0.0f64..=1.0, 1..=30),
        gamma in 0.1f64..=1.0,
    ) {
        let mut values = vec![0.0; rewards.len()];
        let mut acc = 0.0;
        for t in (0..rewards.len()).rev() {
            acc = rewards[t] + gamma * acc;
            values[t] = acc;
        }
        let got = compute_advantages(&steps_from(&values, &rewards), gamma).unwrap();
        prop_assert!(got.advantages.iter().all(|a| a.abs() < 1e-12));
    }
}

fn two_class_dataset(seed: u64) -> Dataset {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    random_dataset(&mut rng, 6, 2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn class_scores_depend_only_on_own_params(
        seed in 0u64..1000,
        t in 1usize..19, w in 0usize..10, t2 in 1usize..19, w2 in 0usize..10,
    ) {
        let ds = two_class_dataset(seed);
        let collar = CollarConfig::default();
        let th = |k: usize| k as f64 / 20.0;
        let a = PostProcParams::new(vec![th(t), 0.5], vec![WINDOW_SET[w], 7]).unwrap();
        let b = PostProcParams::new(vec![th(t), th(t2)], vec![WINDOW_SET[w], WINDOW_SET[w2]]).unwrap();
        let ra = evaluate_dataset(&ds, &a, StackOptions::default(), &collar).unwrap();
        let rb = evaluate_dataset(&ds, &b, StackOptions::default(), &collar).unwrap();
        prop_assert_eq!(ra.classes[0].scores, rb.classes[0].scores);
    }

    #[test]
    fn relabeling_classes_permutes_scores(seed in 0u64..1000) {
        let ds = two_class_dataset(seed);
        let collar = CollarConfig::default();
        let swapped_clips: Vec<PosteriorClip> = ds
            .clips()
            .iter()
            .map(|c| {
                let p = &c.posteriors;
                let data = (0..p.frames()).flat_map(|t| [p.get(t, 1), p.get(t, 0)]).collect();
                PosteriorClip::new(c.clip_id.clone(), c.hop, Posteriorgram::new(p.frames(), 2, data).unwrap()).unwrap()
            })
            .collect();
        let refs = ds
            .references()
            .into_iter()
            .map(|e| Event::new(e.clip_id, e.onset, e.offset, 1 - e.class_index).unwrap())
            .collect();
        let labels = vec![ds.class_labels()[1].clone(), ds.class_labels()[0].clone()];
        let swapped = Dataset::new(labels, swapped_clips, refs).unwrap();
        let p = PostProcParams::new(vec![0.3, 0.6], vec![5, 11]).unwrap();
        let q = PostProcParams::new(vec![0.6, 0.3], vec![11, 5]).unwrap();
        let a = evaluate_dataset(&ds, &p, StackOptions::default(), &collar).unwrap();
        let b = evaluate_dataset(&swapped, &q, StackOptions::default(), &collar).unwrap();
        prop_assert_eq!(a.classes[0].scores, b.classes[1].scores);
        prop_assert_eq!(a.classes[1].scores, b.classes[0].scores);
        prop_assert_eq!(a.macro_f1, b.macro_f1);
    }
}
