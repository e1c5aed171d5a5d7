//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits non-zero if any check fails.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use sedtune::agent::*;
use sedtune::dataset::*;
use sedtune::env::{reward_from_report, ClipOrder, Env, RewardMode};
use sedtune::eval::evaluate_dataset;
use sedtune::grid::{grid_search_independent, grid_search_per_class};
use sedtune::metric::{evaluate_events, macro_f1, match_events, ClassScores, CollarConfig};
use sedtune::ndmath::{grad_check, Tensor};
use sedtune::postproc::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn metric_oracle() -> Outcome {
    let collar = CollarConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut mismatches = 0;
    for _ in 0..500 {
        let classes = rng.random_range(1..=3);
        let clips = ["a", "b"];
        let (mut preds, mut refs) = (vec![], vec![]);
        let mut expect = vec![0usize; classes];
        for clip in clips {
            for (c, e) in expect.iter_mut().enumerate() {
                let (np, nr) = (rng.random_range(0..=8), rng.random_range(0..=8));
                let p = random_events(&mut rng, clip, c, np);
                let r = random_events(&mut rng, clip, c, nr);
                *e += brute_force_matching(&p, &r, &collar);
                preds.extend(p);
                refs.extend(r);
            }
        }
        let got = match_events(&preds, &refs, &collar, classes).unwrap();
        let tp: Vec<usize> = got.iter().map(|s| s.true_positives).collect();
        if tp != expect {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches}/500 instances disagree with brute force"),
    )
}

fn median_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut wrong, mut not_idempotent, mut no_root) = (0, 0, 0);
    let mut example = None;
    for _ in 0..1000 {
        let n = rng.random_range(1..=200);
        let window = 2 * rng.random_range(1..=10) + 1;
        let density: f64 = rng.random();
        let col: Vec<u8> = (0..n).map(|_| rng.random_bool(density) as u8).collect();
        let once = median_filter_column(&col, window).unwrap();
        if once != naive_median(&col, window) {
            wrong += 1;
        }
        let twice = median_filter_column(&once, window).unwrap();
        if twice != once {
            not_idempotent += 1;
            if example
                .as_ref()
                .is_none_or(|(c, _): &(Vec<u8>, usize)| c.len() > col.len())
            {
                example = Some((col.clone(), window));
            }
        }
        // repeated passes must reach a fixed point
        let mut cur = once;
        let mut reached = false;
        for _ in 0..=n {
            let next = median_filter_column(&cur, window).unwrap();
            if next == cur {
                reached = true;
                break;
            }
            cur = next;
        }
        if !reached {
            no_root += 1;
        }
    }
    let mut detail = format!(
        "naive mismatches {wrong}/1000, f(f(x)) != f(x) in {not_idempotent}/1000, no fixed point in {no_root}/1000"
    );
    if let Some((col, w)) = example {
        let s: String = col.iter().map(|b| char::from(b'0' + b)).collect();
        detail.push_str(&format!(
            "; shortest non-idempotent case: {s} with window {w}"
        ));
    }
    outcome(wrong == 0 && not_idempotent == 0 && no_root == 0, detail)
}

fn small_clip(rng: &mut ChaCha8Rng, id: &str, frames: usize, classes: usize) -> PosteriorClip {
    let data = (0..frames * classes).map(|_| rng.random::<f64>()).collect();
    PosteriorClip::new(
        id,
        0.064,
        Posteriorgram::new(frames, classes, data).unwrap(),
    )
    .unwrap()
}

fn gradient_check() -> Outcome {
    let grid = ParamGrid::new(vec![0.3, 0.5, 0.7], vec![3, 5, 7], 2, true).unwrap();
    let shape = PolicyShape::for_grid(&grid);
    let mut worst = 0.0f64;
    let seeds = 10;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let policy = PolicyParams::init(shape, &mut rng);
        let clips: Vec<PosteriorClip> = (0..3)
            .map(|i| {
                let frames = rng.random_range(1..=4);
                small_clip(&mut rng, &format!("g{i}"), frames, 2)
            })
            .collect();
        let samples: Vec<ActionSample> = clips
            .iter()
            .map(|c| {
                let (tl, wl, _) = policy_forward(c, &policy).unwrap();
                sample_actions(tl.data(), wl.data(), &grid, &mut rng).unwrap()
            })
            .collect();
        let advantages: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let targets: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..2.0)).collect();
        let tensors: Vec<Tensor> = policy.tensors().into_iter().cloned().collect();
        let forward = |tape: &mut sedtune::ndmath::Tape, vars: &[sedtune::ndmath::Var]| {
            let pv = PolicyVars::from_slice(vars)?;
            let (mut lp, mut h, mut v) = (vec![], vec![], vec![]);
            for (clip, s) in clips.iter().zip(&samples) {
                let out = policy_forward_on(tape, &pv, &shape, clip)?;
                let t = action_terms(tape, &out, s, &grid)?;
                lp.push(t.log_prob);
                h.push(t.entropy);
                v.push(out.value);
            }
            Ok(pg_objective(tape, &lp, &advantages, &h, 0.01, &v, &targets, 0.5)?.loss)
        };
        // a small step drowns gradients near 1e-9 in rounding noise
        worst = worst.max(grad_check(forward, &tensors, 1e-3).unwrap());
    }
    outcome(
        worst <= 1e-4,
        format!("max relative error {worst:.2e} over {seeds} batches"),
    )
}

fn advantage_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=50);
        let gamma = rng.random_range(0.5..=1.0);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let rewards: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let got = compute_advantages(&steps_from(&values, &rewards), gamma).unwrap();
        for (a, b) in got
            .advantages
            .iter()
            .zip(naive_advantages(&values, &rewards, gamma))
        {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max abs deviation {worst:.2e} on 100 trajectories"),
    )
}

fn reward_mapping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let collar = CollarConfig::default();
    let mut bad = 0;
    let mut checked = 0;
    // arbitrary reports
    for _ in 0..1000 {
        let scores: Vec<ClassScores> = (0..rng.random_range(1..6))
            .map(|_| ClassScores {
                true_positives: rng.random_range(0..20),
                false_positives: rng.random_range(0..20),
                false_negatives: rng.random_range(0..20),
            })
            .collect();
        let r = macro_f1(&scores);
        checked += 1;
        if reward_from_report(&r) != r.macro_f1_percent() / 100.0 {
            bad += 1;
        }
    }
    // rewards handed out by the environment
    for mode in [RewardMode::PerSegment, RewardMode::Terminal] {
        let ds = random_dataset(&mut rng, 12, 3);
        let params = PostProcParams::new(
            (0..3)
                .map(|_| rng.random_range(1..20) as f64 / 20.0)
                .collect(),
            (0..3)
                .map(|_| WINDOW_SET[rng.random_range(0..WINDOW_SET.len())])
                .collect(),
        )
        .unwrap();
        let mut env = Env::new(&ds, mode, collar);
        let mut state = env.reset(ClipOrder::Shuffled, &mut rng).unwrap();
        loop {
            let out = env.step(&state, &params).unwrap();
            let expect = match mode {
                RewardMode::PerSegment => {
                    let clip = ds.clip(state.clip_index);
                    let preds = apply_stack(clip, &params).unwrap();
                    let r =
                        evaluate_events(&preds, ds.clip_references(state.clip_index), &collar, 3)
                            .unwrap();
                    r.macro_f1_percent() / 100.0
                }
                RewardMode::Terminal if out.done => {
                    let r =
                        evaluate_dataset(&ds, &params, StackOptions::default(), &collar).unwrap();
                    r.macro_f1_percent() / 100.0
                }
                RewardMode::Terminal => 0.0,
            };
            checked += 1;
            if out.reward != expect {
                bad += 1;
            }
            match out.next {
                Some(s) => state = s,
                None => break,
            }
        }
    }
    outcome(
        bad == 0,
        format!("{bad}/{checked} rewards differ from F1 percent / 100"),
    )
}

fn grid_dominance() -> Outcome {
    let collar = CollarConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut violations = 0;
    for _ in 0..20 {
        let classes = rng.random_range(1..=4);
        let ds = random_dataset(&mut rng, 15, classes);
        let g = ParamGrid::default_for(classes);
        let a = grid_search_independent(&ds, &g, &collar).unwrap();
        let b = grid_search_per_class(&ds, &g, &collar).unwrap();
        if b.best_macro_f1 < a.best_macro_f1 {
            violations += 1;
        }
    }
    let mut brute_mismatch = 0;
    for _ in 0..5 {
        let ds = random_dataset(&mut rng, 8, 2);
        let g = ParamGrid::new(vec![0.2, 0.4, 0.6, 0.8], vec![3, 7, 11], 2, true).unwrap();
        let per_class = grid_search_per_class(&ds, &g, &collar).unwrap();
        let mut best = f64::NEG_INFINITY;
        for &t0 in &g.thresholds {
            for &w0 in &g.windows {
                for &t1 in &g.thresholds {
                    for &w1 in &g.windows {
                        let p = PostProcParams::new(vec![t0, t1], vec![w0, w1]).unwrap();
                        let f = evaluate_dataset(&ds, &p, StackOptions::default(), &collar)
                            .unwrap()
                            .macro_f1;
                        best = best.max(f);
                    }
                }
            }
        }
        if best != per_class.best_macro_f1 {
            brute_mismatch += 1;
        }
    }
    outcome(
        violations == 0 && brute_mismatch == 0,
        format!("per-class below shared on {violations}/20 datasets; full-product mismatch on {brute_mismatch}/5"),
    )
}

const DIRECTIONAL_EPISODES: usize = 25;

fn directional() -> Outcome {
    let collar = CollarConfig::default();
    let mut holds = 0;
    let mut lines = vec![];
    let mut slowest = Duration::ZERO;
    for seed in 0..5u64 {
        let start = Instant::now();
        let ds = synth_generate(&SynthConfig::heterogeneous(200, seed)).unwrap();
        let default = evaluate_dataset(
            &ds,
            &default_params(4).unwrap(),
            StackOptions::default(),
            &collar,
        )
        .unwrap()
        .macro_f1;
        let mut scores = [0.0; 2];
        for (k, class_dependent) in [true, false].into_iter().enumerate() {
            let grid = ParamGrid::default_for(4).with_class_dependent(class_dependent);
            let cfg = TrainerConfig {
                episodes: DIRECTIONAL_EPISODES,
                seed,
                ..Default::default()
            };
            let (policy, _) = train(&ds, &grid, &cfg).unwrap();
            scores[k] = extract_best_params(&policy, &ds, &grid, &collar)
                .unwrap()
                .per_clip_report
                .macro_f1;
        }
        let ok = scores[0] >= default + 0.03 && scores[0] >= scores[1];
        holds += ok as usize;
        slowest = slowest.max(start.elapsed());
        lines.push(format!(
            "seed {seed}: default {:.1} shared {:.1} per-class {:.1}",
            100.0 * default,
            100.0 * scores[1],
            100.0 * scores[0]
        ));
    }
    outcome(
        holds >= 4 && slowest <= Duration::from_secs(15 * 60),
        format!(
            "ordering holds on {holds}/5 seeds, slowest seed {:.0} s [{}]",
            slowest.as_secs_f64(),
            lines.join("; ")
        ),
    )
}

fn noiseless() -> Outcome {
    let collar = CollarConfig::default();
    let ds = synth_generate(&SynthConfig::noiseless(30, 3, 8)).unwrap();
    let f = evaluate_dataset(
        &ds,
        &default_params(3).unwrap(),
        StackOptions::default(),
        &collar,
    )
    .unwrap()
    .macro_f1;
    let grid = ParamGrid::default_for(3);
    let cfg = TrainerConfig {
        episodes: 5,
        seed: 8,
        ..Default::default()
    };
    let (_, log) = train(&ds, &grid, &cfg).unwrap();
    let last = log.last().unwrap().macro_f1;
    outcome(
        f == 1.0 && last == 1.0,
        format!("default params F1 {f}, final episode F1 {last}"),
    )
}

fn determinism() -> Outcome {
    let collar = CollarConfig::default();
    let run = || {
        let ds = synth_generate(&SynthConfig::heterogeneous(20, 77)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let mut files = vec![];
        for name in [
            "manifest.csv",
            "annotations.tsv",
            "posteriors/clip_00000.csv",
            "posteriors/clip_00019.csv",
        ] {
            files.push(std::fs::read(dir.path().join(name)).unwrap());
        }
        let grid = ParamGrid::default_for(4);
        let cfg = TrainerConfig {
            episodes: 3,
            seed: 77,
            ..Default::default()
        };
        let (policy, log) = train(&ds, &grid, &cfg).unwrap();
        let e = extract_best_params(&policy, &ds, &grid, &collar).unwrap();
        let log_bits: Vec<[u64; 4]> = log
            .iter()
            .map(|r| {
                [
                    r.mean_reward.to_bits(),
                    r.macro_f1.to_bits(),
                    r.loss.to_bits(),
                    r.entropy.to_bits(),
                ]
            })
            .collect();
        (ds, files, log_bits, e.per_clip, e.modal)
    };
    let (a, b) = (run(), run());
    let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2, a.3 == b.3, a.4 == b.4];
    outcome(
        same.iter().all(|s| *s),
        format!("dataset/files/log/per-clip/modal identical: {same:?}"),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let checks: [Check; 9] = [
        ("matching equals brute force", metric_oracle),
        ("median filter oracle and idempotence", median_oracle),
        ("policy-gradient loss gradient check", gradient_check),
        ("advantage oracle", advantage_oracle),
        ("reward is F1 percent / 100", reward_mapping),
        ("per-class grid dominates shared grid", grid_dominance),
        (
            "trained per-class policy beats defaults and shared policy",
            directional,
        ),
        ("noiseless data scores 1.0", noiseless),
        ("determinism under fixed seeds", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        println!(
            "criterion {n} {}: {name} ({:.1} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        failed += !o.pass as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
