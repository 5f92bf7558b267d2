use approx::assert_abs_diff_eq;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::gaussian::DEFAULT_FRAMES;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
}

fn episode(rng: &mut ChaCha8Rng, cfg: &ModelConfig, n: usize, a: usize) -> Episode<f64> {
    Episode {
        id: "q".into(),
        video_id: "v".into(),
        frames: randn(rng, n, cfg.d_v),
        question: randn(rng, 1, cfg.d_t).row(0).to_owned(),
        answers: randn(rng, a, cfg.d_t),
        correct: 1,
        neg_questions: randn(rng, a - 1, cfg.d_t),
        pos_variants: vec![],
        gt_moment: Some(TemporalSegment::new(4.0, 12.0).unwrap()),
        extent: VideoExtent::new(40.0).unwrap(),
        descriptive: false,
    }
}

fn small(seed: u64, k: usize) -> ModelConfig {
    ModelConfig { d_v: 6, d_t: 5, width: 4, n_masks: k, temperature: 0.5, sigma_init: 0.3, seed }
}

fn perturbed(model: &QaModel<f64>, seed: u64) -> QaModel<f64> {
    // Move parameters off their structured initial values.
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for (_, t) in m.params.tensors_mut() {
        t.iter_mut().for_each(|v| *v += 0.3 * rng.sample::<f64, _>(StandardNormal));
    }
    m
}

fn loss_of(model: &QaModel<f64>, ep: &Episode<f64>, spec: &LossSpec<'_, f64>) -> f64 {
    model.loss_and_grad(ep, spec).unwrap().0
}

/// Central differences on every parameter entry.
fn check_gradients(model: &QaModel<f64>, ep: &Episode<f64>, spec: &LossSpec<'_, f64>) {
    let eps = 1e-5;
    let (_, grads) = model.loss_and_grad(ep, spec).unwrap();
    let analytic: Vec<(&str, Vec<f64>)> = grads.tensors().into_iter().map(|(n, _, v)| (n, v.to_vec())).collect();
    let mut probe = model.clone();
    let counts: Vec<usize> = probe.params.tensors().iter().map(|(_, _, v)| v.len()).collect();
    for (t, &len) in counts.iter().enumerate() {
        for i in 0..len {
            let orig = probe.params.tensors()[t].2[i];
            probe.params.tensors_mut()[t].1[i] = orig + eps;
            let up = loss_of(&probe, ep, spec);
            probe.params.tensors_mut()[t].1[i] = orig - eps;
            let down = loss_of(&probe, ep, spec);
            probe.params.tensors_mut()[t].1[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let exact = analytic[t].1[i];
            let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-3);
            assert!(rel <= 1e-4, "{}[{i}]: analytic {exact} numeric {numeric}", analytic[t].0);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..5 {
        let cfg = small(seed, 1);
        let model = perturbed(&QaModel::new(cfg.clone()).unwrap(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let ep = episode(&mut rng, &cfg, 7, 4);
        check_gradients(&model, &ep, &LossSpec::ng());
        check_gradients(&model, &ep, &LossSpec::ngplus(0.7));
        check_gradients(&model, &ep, &LossSpec::grounding_only());
    }
}

#[test]
fn gradients_tiny_episode_and_multi_mask() {
    let cfg = small(9, 1);
    let model = perturbed(&QaModel::new(cfg.clone()).unwrap(), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ep = episode(&mut rng, &cfg, 3, 2);
    ep.correct = 0;
    check_gradients(&model, &ep, &LossSpec::ngplus(1.0));

    let cfg = small(4, 3);
    let model = perturbed(&QaModel::new(cfg.clone()).unwrap(), 4);
    let ep = episode(&mut rng, &cfg, 9, 5);
    check_gradients(&model, &ep, &LossSpec::ngplus(0.5));
}

#[test]
fn gradients_with_positive_rephrasing_and_custom_negatives() {
    let cfg = small(2, 1);
    let model = perturbed(&QaModel::new(cfg.clone()).unwrap(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ep = episode(&mut rng, &cfg, 6, 3);
    let pos = randn(&mut rng, 1, cfg.d_t).row(0).to_owned();
    let negs = randn(&mut rng, 2, cfg.d_t);
    let spec = LossSpec { question: Some(pos.view()), negatives: Some(negs.view()), ..LossSpec::ngplus(1.0) };
    check_gradients(&model, &ep, &spec);
}

#[test]
fn stage_one_leaves_answer_projection_untouched() {
    let cfg = small(1, 1);
    let model = QaModel::<f64>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ep = episode(&mut rng, &cfg, 8, 5);
    let (_, g) = model.loss_and_grad(&ep, &LossSpec::grounding_only()).unwrap();
    assert!(g.w_ans.iter().all(|&v| v == 0.0));
    assert!(g.w_gq.iter().any(|&v| v != 0.0));
}

#[test]
fn ng_loss_matches_gradient_path_and_ln_a_when_uninformative() {
    let cfg = ModelConfig { d_v: 4, d_t: 4, width: 8, ..ModelConfig::default() };
    let mut model = QaModel::<f64>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ep = episode(&mut rng, &cfg, 10, 5);
    assert_abs_diff_eq!(model.ng_loss(&ep).unwrap(), loss_of(&model, &ep, &LossSpec::ng()), epsilon = 1e-12);
    // Identical answer embeddings give uniform scores.
    model.params.w_ans.fill(0.0);
    model.params.w_ans.column_mut(0).fill(1.0);
    let mut same = ep.clone();
    same.answers = Array2::from_shape_fn((5, 4), |(_, j)| j as f64 + 1.0);
    assert_abs_diff_eq!(model.ng_loss(&same).unwrap(), 5f64.ln(), epsilon = 1e-12);
}

#[test]
fn alpha_zero_reduces_to_ng() {
    let cfg = small(3, 1);
    let model = QaModel::<f64>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ep = episode(&mut rng, &cfg, 8, 5);
    assert_eq!(model.ngplus_loss(&ep, 0.0).unwrap(), model.ng_loss(&ep).unwrap());
    let (l0, g0) = model.loss_and_grad(&ep, &LossSpec::ngplus(0.0)).unwrap();
    let (l1, g1) = model.loss_and_grad(&ep, &LossSpec::ng()).unwrap();
    assert_eq!(l0, l1);
    assert_eq!(g0, g1);
    let alpha = 0.4;
    let full = model.ngplus_loss(&ep, alpha).unwrap();
    assert_abs_diff_eq!(full, model.ng_loss(&ep).unwrap() + alpha * model.grounding_loss(&ep).unwrap(), epsilon = 1e-12);
}

#[test]
fn negative_count_must_match_answers() {
    let cfg = small(3, 1);
    let model = QaModel::<f64>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ep = episode(&mut rng, &cfg, 8, 5);
    ep.neg_questions = randn(&mut rng, 2, cfg.d_t);
    assert!(matches!(model.ngplus_loss(&ep, 1.0), Err(Error::NegativeCountMismatch { expected: 4, got: 2 })));
    assert!(matches!(model.loss_and_grad(&ep, &LossSpec::ngplus(1.0)), Err(Error::NegativeCountMismatch { .. })));
    assert!(model.ng_loss(&ep).is_ok());
}

#[test]
fn masks_stay_in_the_box_for_extreme_inputs() {
    let cfg = small(6, 2);
    let mut model = QaModel::<f64>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for scale in [1e-3, 1.0, 1e3, 1e6] {
        model.params.scale(1.0);
        let mut ep = episode(&mut rng, &cfg, 12, 4);
        ep.frames.mapv_inplace(|v| v * scale);
        ep.question.mapv_inplace(|v| v * scale);
        for m in model.predict_masks(&ep).unwrap() {
            assert!((0.0..=1.0).contains(&m.mu()));
            assert!((0.01..=1.0).contains(&m.sigma()), "{}", m.sigma());
        }
        let p = model.predict(&ep, &InferenceOptions::default()).unwrap();
        assert!(p.scores.iter().all(|s| s.is_finite()));
        assert!(p.window.end() <= 40.0);
    }
}

#[test]
fn encode_video_shapes_and_mask_effect() {
    let cfg = small(7, 1);
    let model = QaModel::<f64>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ep = episode(&mut rng, &cfg, 10, 4);
    let (v, trace) = model.encode_video(&ep, None).unwrap();
    assert_eq!(v.len(), cfg.width);
    assert_eq!(trace.len(), 10);
    assert_abs_diff_eq!(trace.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    // A mask that covers everything with weight ~1 reproduces the unmasked encoding.
    let flat = GaussianMask::new(0.5, 1.0).unwrap();
    let (vf, _) = model.encode_video(&ep, Some(&flat)).unwrap();
    let narrow = GaussianMask::new(0.05, 0.01).unwrap();
    let (vn, _) = model.encode_video(&ep, Some(&narrow)).unwrap();
    let d_flat = (&vf - &v).mapv(f64::abs).sum();
    let d_narrow = (&vn - &v).mapv(f64::abs).sum();
    assert!(d_flat < d_narrow);
    // A wrong feature width is rejected.
    let mut bad = ep.clone();
    bad.frames = Array2::zeros((10, cfg.d_v + 1));
    assert!(matches!(model.encode_video(&bad, None), Err(Error::ShapeMismatch(_))));
}

#[test]
fn answer_order_is_equivariant() {
    let cfg = small(8, 1);
    let model = QaModel::<f64>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ep = episode(&mut rng, &cfg, 8, 5);
    let base = model.predict(&ep, &InferenceOptions::default()).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let mut shuffled = ep.clone();
    for (dst, &src) in perm.iter().enumerate() {
        shuffled.answers.row_mut(dst).assign(&ep.answers.row(src));
    }
    let out = model.predict(&shuffled, &InferenceOptions::default()).unwrap();
    for (dst, &src) in perm.iter().enumerate() {
        assert_abs_diff_eq!(out.scores[dst], base.scores[src], epsilon = 1e-12);
    }
    assert_eq!(perm[out.answer], base.answer);
    assert_eq!(out.mask, base.mask);
}

#[test]
fn same_seed_same_model() {
    let cfg = small(11, 2);
    let a = QaModel::<f64>::new(cfg.clone()).unwrap();
    let b = QaModel::<f64>::new(cfg.clone()).unwrap();
    assert_eq!(a, b);
    let c = QaModel::<f64>::new(ModelConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = small(13, 2);
    let model = perturbed(&QaModel::<f64>::new(cfg).unwrap(), 13);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.checkpoint().save(&path).unwrap();
    let back = QaModel::<f64>::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back, model);
    let mut ck = model.checkpoint();
    ck.tensors[2].shape = vec![1, 1];
    assert!(QaModel::<f64>::from_checkpoint(&ck).is_err());
}

#[test]
fn fused_window_is_intersection_or_attention() {
    let s = |a, b| TemporalSegment::new(a, b).unwrap();
    assert_eq!(fuse_windows(&s(0.0, 10.0), &s(5.0, 20.0)), s(5.0, 10.0));
    assert_eq!(fuse_windows(&s(0.0, 4.0), &s(5.0, 20.0)), s(5.0, 20.0));
    assert_eq!(fuse_windows(&s(2.0, 3.0), &s(0.0, 20.0)), s(2.0, 3.0));
}

#[test]
fn predict_window_sources_are_consistent() {
    let cfg = small(14, 1);
    let model = QaModel::<f64>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let ep = episode(&mut rng, &cfg, DEFAULT_FRAMES, 5);
    let g = model.predict(&ep, &InferenceOptions::default()).unwrap();
    let a = model.predict(&ep, &InferenceOptions { window: WindowSource::Attention, ..Default::default() }).unwrap();
    let f = model.predict(&ep, &InferenceOptions { window: WindowSource::Fused, ..Default::default() }).unwrap();
    assert_eq!(g.window, g.gaussian_window);
    assert_eq!(a.window, a.attention_window);
    assert_eq!(f.window, fuse_windows(&g.gaussian_window, &g.attention_window));
    let ci = confidence_interval(&g.mask, &ep.extent, 1.0).unwrap();
    assert_eq!(g.gaussian_window, ci);
    assert_eq!(g.trace.len(), DEFAULT_FRAMES);
}

#[test]
fn episode_round_trips_through_json() {
    let cfg = small(15, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let ep = episode(&mut rng, &cfg, 5, 3);
    let text = serde_json::to_string(&ep).unwrap();
    let back: Episode<f64> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, ep);
    assert_eq!(ep.label().unwrap().segments.len(), 1);
}

#[test]
fn runs_in_f32() {
    let cfg = small(16, 1);
    let model = QaModel::<f32>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let ep64 = episode(&mut rng, &cfg, 6, 3);
    let ep = Episode::<f32> {
        id: ep64.id.clone(),
        video_id: ep64.video_id.clone(),
        frames: ep64.frames.mapv(|v| v as f32),
        question: ep64.question.mapv(|v| v as f32),
        answers: ep64.answers.mapv(|v| v as f32),
        correct: ep64.correct,
        neg_questions: ep64.neg_questions.mapv(|v| v as f32),
        pos_variants: vec![],
        gt_moment: ep64.gt_moment.map(|s| s.convert()),
        extent: VideoExtent::new(40.0f32).unwrap(),
        descriptive: false,
    };
    let (loss, g) = model.loss_and_grad(&ep, &LossSpec::ngplus(1.0)).unwrap();
    assert!(loss.is_finite() && g.all_finite());
    let _: Array1<f32> = model.score_answers(&ep, None).unwrap();
}
