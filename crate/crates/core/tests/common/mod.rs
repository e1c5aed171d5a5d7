//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use sedtune::agent::{PolicyParams, TrajectoryStep};
use sedtune::dataset::{synth_generate, Dataset, SynthConfig};
use sedtune::metric::{events_match, CollarConfig, Event};
use sedtune::ndmath::Tensor;

/// Largest number of disjoint compatible pairs, by trying every partial
/// assignment of predictions to references (memoized on the set of used
/// references).
pub fn brute_force_matching(preds: &[Event], refs: &[Event], collar: &CollarConfig) -> usize {
    assert!(refs.len() <= 16);
    let ok: Vec<Vec<bool>> = preds
        .iter()
        .map(|p| {
            refs.iter()
                .map(|r| events_match(p, r, collar).unwrap())
                .collect()
        })
        .collect();
    let mut memo = std::collections::HashMap::new();
    fn go(
        i: usize,
        used: u32,
        ok: &[Vec<bool>],
        memo: &mut std::collections::HashMap<(usize, u32), usize>,
    ) -> usize {
        if i == ok.len() {
            return 0;
        }
        if let Some(v) = memo.get(&(i, used)) {
            return *v;
        }
        let mut best = go(i + 1, used, ok, memo);
        for (j, &m) in ok[i].iter().enumerate() {
            if m && used & (1 << j) == 0 {
                best = best.max(1 + go(i + 1, used | (1 << j), ok, memo));
            }
        }
        memo.insert((i, used), best);
        best
    }
    go(0, 0, &ok, &mut memo)
}

/// Median of the sorted window around each frame, edges padded with the
/// end values.
pub fn naive_median(col: &[u8], window: usize) -> Vec<u8> {
    let n = col.len() as isize;
    let half = (window / 2) as isize;
    (0..n)
        .map(|t| {
            let mut w: Vec<u8> = (t - half..=t + half)
                .map(|i| col[i.clamp(0, n - 1) as usize])
                .collect();
            w.sort();
            w[w.len() / 2]
        })
        .collect()
}

/// `Â_t = Σ_k γ^k δ_{t+k}` with `δ_t = r_t + γ V_{t+1} − V_t` and a zero
/// value after the last step.
pub fn naive_advantages(values: &[f64], rewards: &[f64], gamma: f64) -> Vec<f64> {
    let n = values.len();
    let v_next = |t: usize| if t + 1 < n { values[t + 1] } else { 0.0 };
    let delta: Vec<f64> = (0..n)
        .map(|t| rewards[t] + gamma * v_next(t) - values[t])
        .collect();
    (0..n)
        .map(|t| (t..n).map(|k| gamma.powi((k - t) as i32) * delta[k]).sum())
        .collect()
}

pub fn steps_from(values: &[f64], rewards: &[f64]) -> Vec<TrajectoryStep> {
    let n = values.len();
    (0..n)
        .map(|t| TrajectoryStep {
            t,
            clip_index: t,
            action: sedtune::agent::ActionSample {
                threshold_indices: vec![0],
                window_indices: vec![0],
                log_prob: 0.0,
                entropies: vec![],
            },
            value: values[t],
            reward: rewards[t],
            done: t + 1 == n,
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x·W` for a row-major `in × out` matrix, one scalar at a time.
fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    (0..cols)
        .map(|j| (0..rows).map(|i| x[i] * w.data()[i * cols + j]).sum())
        .collect()
}

fn gru_layer(inputs: &[Vec<f64>], p: &sedtune::ndmath::GruLayerParams) -> Vec<Vec<f64>> {
    let hs = p.hidden_size();
    let mut h = vec![0.0; hs];
    let mut out = Vec::new();
    for x in inputs {
        let (xz, xr, xh) = (vec_mat(x, &p.w_z), vec_mat(x, &p.w_r), vec_mat(x, &p.w_h));
        let (hz, hr) = (vec_mat(&h, &p.u_z), vec_mat(&h, &p.u_r));
        let z: Vec<f64> = (0..hs)
            .map(|j| sigmoid(xz[j] + hz[j] + p.b_z.data()[j]))
            .collect();
        let r: Vec<f64> = (0..hs)
            .map(|j| sigmoid(xr[j] + hr[j] + p.b_r.data()[j]))
            .collect();
        let rh: Vec<f64> = (0..hs).map(|j| r[j] * h[j]).collect();
        let uh = vec_mat(&rh, &p.u_h);
        let cand: Vec<f64> = (0..hs)
            .map(|j| (xh[j] + uh[j] + p.b_h.data()[j]).tanh())
            .collect();
        h = (0..hs)
            .map(|j| (1.0 - z[j]) * cand[j] + z[j] * h[j])
            .collect();
        out.push(h.clone());
    }
    out
}

/// Policy outputs computed frame by frame with plain loops.
pub fn naive_policy(frames: &[Vec<f64>], p: &PolicyParams) -> (Vec<f64>, Vec<f64>, f64) {
    let h1 = gru_layer(frames, &p.gru1);
    let h2 = gru_layer(&h1, &p.gru2);
    let last = h2.last().unwrap();
    let head = |l: &sedtune::ndmath::LinearParams| -> Vec<f64> {
        vec_mat(last, &l.weight)
            .iter()
            .zip(l.bias.data())
            .map(|(a, b)| a + b)
            .collect()
    };
    (
        head(&p.threshold_head),
        head(&p.window_head),
        head(&p.value_head)[0],
    )
}

/// Random events on a 0.05 s lattice so that collar boundaries are hit
/// exactly now and then.
pub fn random_events<R: Rng>(rng: &mut R, clip: &str, class: usize, n: usize) -> Vec<Event> {
    (0..n)
        .map(|_| {
            let on = rng.random_range(0..200) as f64 * 0.05;
            let len = rng.random_range(1..60) as f64 * 0.05;
            Event::new(clip, on, on + len, class).unwrap()
        })
        .collect()
}

/// Heterogeneous synthetic data with per-class rates jittered by `rng`.
pub fn random_dataset<R: Rng>(rng: &mut R, clips: usize, classes: usize) -> Dataset {
    let mut cfg = SynthConfig::heterogeneous(clips, rng.random());
    let base = cfg.classes.clone();
    cfg.classes = (0..classes)
        .map(|i| {
            let mut p = base[rng.random_range(0..base.len())].clone();
            p.label = format!("c{i}");
            p.noise_sigma *= rng.random_range(0.5..2.0);
            p.flip_prob = (p.flip_prob + rng.random_range(0.0..0.02)).min(1.0);
            p.flip_burst = rng.random_range(1..5);
            p
        })
        .collect();
    synth_generate(&cfg).unwrap()
}
