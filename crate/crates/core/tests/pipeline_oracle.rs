//! The scoring pipeline against a plain-loop reimplementation that reads
//! weights by name and shares no code with the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uem::autograd::{grad_check, Tape};
use uem::encoders::{FrameSequence, TokenSequence};
use uem::matching::{total_loss, BatchSimilarities, NegativePolicy, TrainingConfig};
use uem::params::Bound;
use uem::refinement::{coarse_event_reps, select_event};
use uem::segmentation::{EventSegmentation, SegmentationMethod, Span};
use uem::{ModelConfig, PipelineVariant, Tensor, UemModel};

type Mat = Vec<Vec<f64>>;

struct Oracle<'a> {
    model: &'a UemModel,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn relu(x: Mat) -> Mat {
    x.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn rows(t: &Tensor) -> Mat {
    t.row_iter().map(<[f64]>::to_vec).collect()
}

impl Oracle<'_> {
    fn w(&self, name: &str) -> &Tensor {
        self.model.params.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"))
    }

    /// `x W (+ b)` with `W` stored `[in, out]`.
    fn linear(&self, x: &Mat, name: &str, bias: bool) -> Mat {
        let w = self.w(&format!("{name}.weight"));
        let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
        x.iter()
            .map(|r| {
                (0..n_out)
                    .map(|o| {
                        let mut s = if bias { self.w(&format!("{name}.bias")).data()[o] } else { 0.0 };
                        for i in 0..n_in {
                            s += r[i] * w.get2(i, o);
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }

    fn project(&self, x: &Mat, name: &str) -> Mat {
        let w = self.w(name);
        x.iter()
            .map(|r| (0..w.shape()[1]).map(|o| (0..w.shape()[0]).map(|i| r[i] * w.get2(i, o)).sum()).collect())
            .collect()
    }

    fn layer_norm(&self, x: &Mat, name: &str) -> Mat {
        let g = self.w(&format!("{name}.gamma")).data();
        let b = self.w(&format!("{name}.beta")).data();
        let eps = self.model.config.ln_eps;
        x.iter()
            .map(|r| {
                let n = r.len() as f64;
                let mean = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                r.iter().enumerate().map(|(j, v)| (v - mean) / (var + eps).sqrt() * g[j] + b[j]).collect()
            })
            .collect()
    }

    fn transformer(&self, x: &Mat, name: &str) -> Mat {
        let cfg = &self.model.config;
        let hd = cfg.d / cfg.heads;
        let normed = self.layer_norm(x, &format!("{name}.ln_attn"));
        let q = self.linear(&normed, &format!("{name}.attn.query"), true);
        let k = self.linear(&normed, &format!("{name}.attn.key"), true);
        let v = self.linear(&normed, &format!("{name}.attn.value"), true);
        let n = x.len();
        let mut merged = vec![vec![0.0; cfg.d]; n];
        for h in 0..cfg.heads {
            let cols = h * hd..(h + 1) * hd;
            for i in 0..n {
                let logits: Vec<f64> =
                    (0..n).map(|j| dot(&q[i][cols.clone()], &k[j][cols.clone()]) / (hd as f64).sqrt()).collect();
                let a = softmax(&logits);
                for c in cols.clone() {
                    merged[i][c] = (0..n).map(|j| a[j] * v[j][c]).sum();
                }
            }
        }
        let h = add(x, &self.linear(&merged, &format!("{name}.attn.out"), true));
        let normed = self.layer_norm(&h, &format!("{name}.ln_ff"));
        let hidden = relu(self.linear(&normed, &format!("{name}.ff.in"), true));
        add(&h, &self.linear(&hidden, &format!("{name}.ff.out"), true))
    }

    fn tower(&self, input: &Mat, name: &str, relu_after_fc: bool) -> Mat {
        let mut h = self.linear(input, &format!("{name}.fc"), true);
        if relu_after_fc {
            h = relu(h);
        }
        let pos = self.w(&format!("{name}.pos"));
        for (i, r) in h.iter_mut().enumerate() {
            for (c, v) in r.iter_mut().enumerate() {
                *v += pos.get2(i, c);
            }
        }
        for l in 0..self.model.config.layers {
            h = self.transformer(&h, &format!("{name}.layer{l}"));
        }
        h
    }

    /// Sentence vector and pooling weights.
    fn text(&self, tokens: &Mat) -> (Vec<f64>, Vec<f64>) {
        let q = self.tower(tokens, "text", true);
        let omega = self.w("text.omega").data();
        let a = softmax(&q.iter().map(|r| dot(r, omega)).collect::<Vec<_>>());
        let d = self.model.config.d;
        let t = (0..d).map(|c| (0..q.len()).map(|i| a[i] * q[i][c]).sum()).collect();
        (t, a)
    }

    fn video(&self, frames: &Mat) -> Mat {
        self.tower(frames, "video", false)
    }

    /// Grouping with the halving center update.
    fn group(&self, v: &Mat, eps: f64) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut start = 0;
        let mut mu = v[0].clone();
        for i in 1..v.len() {
            if cos(&v[i], &mu) >= eps {
                mu = mu.iter().zip(&v[i]).map(|(a, b)| (a + b) / 2.0).collect();
            } else {
                spans.push((start, i - 1));
                mu = v[i].clone();
                start = i;
            }
        }
        spans.push((start, v.len() - 1));
        spans
    }

    /// Score, selected event, attention weights and refined vector.
    fn score(&self, tokens: &Mat, frames: &Mat) -> (f64, usize, Vec<f64>, Vec<f64>) {
        let cfg = &self.model.config;
        let (t, _) = self.text(tokens);
        let v = self.video(frames);
        let spans = self.group(&v, cfg.epsilon);
        let means: Mat = spans
            .iter()
            .map(|&(a, b)| (0..cfg.d).map(|c| (a..=b).map(|i| v[i][c]).sum::<f64>() / (b - a + 1) as f64).collect())
            .collect();
        let mut best = 0;
        for j in 1..means.len() {
            if cos(&means[j], &t) > cos(&means[best], &t) {
                best = j;
            }
        }
        let (a, b) = spans[best];
        let event: Mat = v[a..=b].to_vec();
        let q = self.project(&self.layer_norm(&vec![t.clone()], "caer.ln_t"), "caer.w_q");
        let e = self.layer_norm(&event, "caer.ln_e");
        let k = self.project(&e, "caer.w_k");
        let val = self.project(&e, "caer.w_v");
        let alpha = softmax(&k.iter().map(|r| dot(&q[0], r) / (cfg.d_p as f64).sqrt()).collect::<Vec<_>>());
        let ctx: Vec<f64> = (0..cfg.d_p).map(|c| (0..event.len()).map(|i| alpha[i] * val[i][c]).sum()).collect();
        let hidden = relu(self.linear(&vec![ctx], "caer.mlp.0", true));
        let e_ref = self.linear(&hidden, "caer.mlp.1", true).remove(0);
        (cos(&e_ref, &t), best, alpha, e_ref)
    }
}

fn random_mat(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::new([n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn config() -> ModelConfig {
    ModelConfig {
        text_dim: 5,
        video_dim: 7,
        d: 8,
        d_p: 6,
        heads: 2,
        layers: 2,
        max_len: 16,
        ln_eps: 1e-5,
        epsilon: 0.3,
    }
}

/// A model whose every parameter, layer norms included, is random.
fn scrambled(cfg: ModelConfig, seed: u64) -> UemModel {
    let mut model = UemModel::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let values = model
        .params
        .tensors()
        .into_iter()
        .map(|t| {
            let data = t.data().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
            Tensor::new(t.shape().to_vec(), data).unwrap()
        })
        .collect();
    model.params.set_all(values);
    model
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn text_tower_matches_oracle() {
    for seed in 0..5 {
        let model = scrambled(config(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens = random_mat(&mut rng, 5, 5);
        let got = model.encode_text(&tokens).unwrap();
        let (t, a) = Oracle { model: &model }.text(&rows(&tokens));
        assert!(close(&got.sentence, &t, 1e-10), "seed {seed}");
        assert!(close(&got.weights, &a, 1e-10), "seed {seed}");
    }
}

#[test]
fn video_tower_matches_oracle() {
    let model = scrambled(config(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames = random_mat(&mut rng, 9, 7);
    let got = model.encode_video(&frames).unwrap();
    let want = Oracle { model: &model }.video(&rows(&frames));
    for (g, w) in got.row_iter().zip(&want) {
        assert!(close(g, w, 1e-10));
    }
}

#[test]
fn frame_order_matters() {
    let model = scrambled(config(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frames = random_mat(&mut rng, 4, 7);
    let perm = [2, 0, 3, 1];
    let out = model.encode_video(&frames).unwrap();
    let out_of_permuted = model.encode_video(&frames.select_rows(&perm)).unwrap();
    // without positions the towers would commute with the permutation
    assert!(out.select_rows(&perm).max_abs_diff(&out_of_permuted) > 1e-6);
}

#[test]
fn refined_score_matches_oracle() {
    let mut multi_event = 0;
    for seed in 0..12 {
        // encoded frames of random inputs are close together, so high thresholds split them
        let epsilon = [0.9, 0.97, 0.995][seed as usize % 3];
        let model = scrambled(ModelConfig { epsilon, ..config() }, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (n_t, n_v) = (rng.random_range(1..6), rng.random_range(1..12));
        let tokens = random_mat(&mut rng, n_t, 5);
        let frames = random_mat(&mut rng, n_v, 7);
        let text = TokenSequence::new("t", "v", tokens.clone()).unwrap();
        let video = FrameSequence::new("v", frames.clone()).unwrap();
        let variant = PipelineVariant::full(&model.config);
        let prepared = model.prepare_video(&video, &variant).unwrap();
        multi_event += usize::from(prepared.segmentation.len() > 1);
        let got = model.score_prepared(&model.prepare_query(&text, true).unwrap(), &prepared).unwrap();
        let (score, best, alpha, e_ref) = Oracle { model: &model }.score(&rows(&tokens), &rows(&frames));
        let refined = got.refined.expect("refined");
        assert_eq!(got.selected_event_index, best, "seed {seed}");
        assert!((got.score - score).abs() <= 1e-10, "seed {seed}: {} vs {score}", got.score);
        assert!(close(&refined.attention_weights, &alpha, 1e-10), "seed {seed}");
        assert!(close(&refined.e_ref, &e_ref, 1e-10), "seed {seed}");
        assert!((model.score(&text, &video).unwrap() - score).abs() <= 1e-10);
    }
    assert!(multi_event >= 3, "too few multi-event cases: {multi_event}");
}

#[test]
fn coarse_means_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let f = random_mat(&mut rng, 7, 3);
        let a = rng.random_range(0..5);
        let b = rng.random_range(a + 1..6);
        let spans = vec![Span::new(0, a), Span::new(a + 1, b), Span::new(b + 1, 6)];
        let seg = EventSegmentation {
            video_id: "v".into(),
            centers: vec![vec![0.0; 3]; 3],
            spans: spans.clone(),
        };
        let got = coarse_event_reps(&f, &seg).unwrap();
        for (j, s) in spans.iter().enumerate() {
            for c in 0..3 {
                let mut sum = 0.0;
                let mut count = 0.0;
                for i in 0..7 {
                    if i >= s.start && i <= s.end {
                        sum += f.get2(i, c);
                        count += 1.0;
                    }
                }
                assert!((got.get2(j, c) - sum / count).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn selection_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..200 {
        let mut events = rows(&random_mat(&mut rng, 5, 4));
        if trial % 3 == 0 {
            // duplicated rows tie exactly
            let (i, j) = (rng.random_range(0..5), rng.random_range(0..5));
            events[j] = events[i].clone();
        }
        let t: Vec<f64> = if trial % 2 == 0 {
            events[rng.random_range(0..5)].iter().map(|v| v * 2.0).collect()
        } else {
            (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let sims: Vec<f64> = events.iter().map(|e| cos(e, &t)).collect();
        let top = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expected = sims.iter().position(|&s| s == top).unwrap();
        let coarse = Tensor::from_rows(&events).unwrap();
        assert_eq!(select_event(&coarse, &t).unwrap(), expected, "trial {trial}");
    }
}

#[test]
fn refinement_gradients_pass_finite_differences() {
    let cfg = ModelConfig {
        text_dim: 3,
        video_dim: 3,
        d: 4,
        d_p: 4,
        heads: 1,
        layers: 1,
        max_len: 6,
        ln_eps: 1e-5,
        epsilon: 0.2,
    };
    for seed in 0..3 {
        let model = scrambled(cfg.clone(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_value = Tensor::vector((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
        let event = random_mat(&mut rng, 3, 4);
        let mut inputs = model.params.tensors();
        inputs.push(t_value);
        inputs.push(event);
        let n = inputs.len();
        let report = grad_check(
            |tape: &mut Tape, vars| {
                let bound = Bound::from_vars(vars[..n - 2].to_vec());
                let r = model.caer.refine(tape, &bound, &model.config, vars[n - 2], vars[n - 1])?;
                tape.cosine(r.e_ref, vars[n - 2])
            },
            &inputs,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", report.failures);
    }
}

#[test]
fn two_video_loss_passes_finite_differences() {
    let cfg = ModelConfig {
        text_dim: 3,
        video_dim: 3,
        d: 4,
        d_p: 4,
        heads: 2,
        layers: 1,
        max_len: 6,
        ln_eps: 1e-5,
        epsilon: 0.5,
    };
    let model = scrambled(cfg, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let videos = [random_mat(&mut rng, 5, 3), random_mat(&mut rng, 4, 3)];
    let texts = [random_mat(&mut rng, 2, 3), random_mat(&mut rng, 3, 3)];
    let training = TrainingConfig::default();
    let report = grad_check(
        |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            let s = model.similarity_matrix(tape, &bound, &[&videos[0], &videos[1]], &[&texts[0], &texts[1]])?;
            let s = BatchSimilarities::new(tape, s, vec![0, 1])?;
            Ok(total_loss(tape, &s, &training, NegativePolicy::Hardest)?.total)
        },
        &model.params.tensors(),
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures);
}

#[test]
fn unrefined_variant_scores_coarse_event() {
    let model = scrambled(config(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tokens = random_mat(&mut rng, 3, 5);
    let frames = random_mat(&mut rng, 8, 7);
    let variant = PipelineVariant {
        segmentation: SegmentationMethod::Equal { k: 3 },
        refine: false,
    };
    let video = model.prepare_video(&FrameSequence::new("v", frames.clone()).unwrap(), &variant).unwrap();
    let query = model.prepare_query(&TokenSequence::new("t", "v", tokens.clone()).unwrap(), false).unwrap();
    let got = model.score_prepared(&query, &video).unwrap();
    assert!(got.refined.is_none());

    let o = Oracle { model: &model };
    let (t, _) = o.text(&rows(&tokens));
    let v = o.video(&rows(&frames));
    let means: Mat = [(0, 2), (3, 5), (6, 7)]
        .iter()
        .map(|&(a, b)| (0..8).map(|c| (a..=b).map(|i| v[i][c]).sum::<f64>() / (b - a + 1) as f64).collect())
        .collect();
    let best = (0..3).max_by(|&i, &j| cos(&means[i], &t).total_cmp(&cos(&means[j], &t)).then(j.cmp(&i))).unwrap();
    assert_eq!(got.selected_event_index, best);
    assert!((got.score - cos(&means[best], &t)).abs() <= 1e-10);
}
