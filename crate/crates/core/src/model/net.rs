//! Forward pass with cached activations and the matching reverse pass.
//!
//! Shapes (one episode): `n` frames, model width `D`, `K` masks, `A` answers,
//! `C` candidate questions for the grounding term.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::Params;
use crate::gaussian::{self, GaussianMask, SIGMA_MIN};
use crate::scalar::Scalar;

/// How the temporal mask is obtained for a forward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) enum MaskSource<T> {
    /// Predicted by the grounding head; gradients flow into the head.
    Predicted,
    /// Externally supplied; no head gradients.
    Fixed(GaussianMask<T>),
    /// All-ones mask: plain self-attention.
    Off,
}

pub(crate) struct HeadCache<T> {
    pub qg: Array1<T>,
    pub pi: Array1<T>,
    pub m: T,
    pub c: Array1<T>,
    pub z_sigma: T,
    pub mask: GaussianMask<T>,
    pub weights: Array1<T>,
}

pub(crate) struct Forward<T> {
    pub h: Array2<T>,
    pub qt: Array1<T>,
    pub kg: Option<Array2<T>>,
    pub heads: Vec<HeadCache<T>>,
    /// Combined per-frame mask weights and, per frame, which mask supplied them.
    pub g: Array1<T>,
    pub winner: Vec<usize>,
    pub qm: Array2<T>,
    pub km: Array2<T>,
    pub vm: Array2<T>,
    pub attn: Array2<T>,
    pub y: Array2<T>,
    /// Attention-pooling distribution (the temporal attention trace).
    pub pool: Array1<T>,
    /// Pooled, masked video vector `v_t`.
    pub v: Array1<T>,
}

pub(crate) fn softmax<T: Scalar>(x: ArrayView1<'_, T>) -> Array1<T> {
    let max = x.fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut e = x.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e.mapv_inplace(|v| v / sum);
    e
}

/// `-log softmax(x)[target]`, computed stably.
pub(crate) fn cross_entropy<T: Scalar>(x: ArrayView1<'_, T>, target: usize) -> T {
    let max = x.fold(T::neg_infinity(), |m, &v| m.max(v));
    let lse = x.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    lse - x[target]
}

fn norm<T: Scalar>(x: ArrayView1<'_, T>) -> T {
    x.dot(&x).sqrt().max(T::lit(1e-12))
}

pub(crate) fn cosine<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.dot(&b) / (norm(a) * norm(b))
}

/// Gradients of `cos(a, b)` with respect to `a` and `b`.
fn cosine_grads<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> (Array1<T>, Array1<T>) {
    let (na, nb) = (norm(a), norm(b));
    let c = a.dot(&b) / (na * nb);
    let da = &b / (na * nb) - &a * (c / (na * na));
    let db = &a / (na * nb) - &b * (c / (nb * nb));
    (da, db)
}

fn outer<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Array2<T> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Normalized frame centers mapped through the logit, used as the head's
/// positional readout.
pub(crate) fn position_logits<T: Scalar>(n: usize) -> Array1<T> {
    Array1::from_iter((0..n).map(|i| (T::lit((i as f64 + 0.5) / n as f64)).logit()))
}

pub(crate) fn positions<T: Scalar>(n: usize) -> Array1<T> {
    Array1::from_iter((0..n).map(|i| T::lit((i as f64 + 0.5) / n as f64)))
}

pub(crate) fn forward<T: Scalar>(p: &Params<T>, frames: ArrayView2<'_, T>, question: ArrayView1<'_, T>, source: MaskSource<T>) -> Forward<T> {
    let n = frames.nrows();
    let width = p.w_v.ncols();
    let inv_sqrt_d = T::one() / T::lit(width as f64).sqrt();
    let h = frames.dot(&p.w_v) + &p.b_v;
    let qt = question.dot(&p.w_text);
    let pos = positions::<T>(n);

    let (kg, heads) = match source {
        MaskSource::Predicted => {
            let kg = h.dot(&p.w_gk);
            let u = position_logits::<T>(n);
            let heads = (0..p.w_gq.shape()[0])
                .map(|k| {
                    let qg = qt.dot(&p.w_gq.slice(s![k, .., ..]));
                    let r = kg.dot(&qg) * inv_sqrt_d;
                    let pi = softmax(r.view());
                    let m = pi.dot(&u);
                    let c = h.t().dot(&pi);
                    let z_mu = p.a_mu[k] * m + p.b_mu[k];
                    let z_sigma = p.w_sigma.row(k).dot(&c) + p.b_sigma[k];
                    let mask = GaussianMask::from_logits(z_mu, z_sigma);
                    let weights = pos.mapv(|x| mask.weight_at(x));
                    HeadCache { qg, pi, m, c, z_sigma, mask, weights }
                })
                .collect::<Vec<_>>();
            (Some(kg), heads)
        }
        MaskSource::Fixed(mask) => {
            let weights = pos.mapv(|x| mask.weight_at(x));
            let empty = Array1::zeros(0);
            (None, vec![HeadCache { qg: empty.clone(), pi: empty.clone(), m: T::zero(), c: empty, z_sigma: T::zero(), mask, weights }])
        }
        MaskSource::Off => (None, Vec::new()),
    };

    let (g, winner) = if heads.is_empty() {
        (Array1::ones(n), vec![0; n])
    } else {
        let mut g = heads[0].weights.clone();
        let mut winner = vec![0; n];
        for (k, head) in heads.iter().enumerate().skip(1) {
            for j in 0..n {
                if head.weights[j] > g[j] {
                    g[j] = head.weights[j];
                    winner[j] = k;
                }
            }
        }
        (g, winner)
    };

    let qm = h.dot(&p.w_q);
    let km = h.dot(&p.w_k);
    let vm = h.dot(&p.w_o);
    let attn = gaussian::attention_probs(qm.view(), km.view());
    let aw = &attn * &g.view().insert_axis(Axis(0));
    let y = aw.dot(&vm);
    let e = y.dot(&p.w_pool);
    let pool = softmax(e.view());
    let v = y.t().dot(&pool);

    Forward { h, qt, kg, heads, g, winner, qm, km, vm, attn, y, pool, v }
}

/// `cos(v + q_t, a W_ans) / tau` for every candidate answer.
pub(crate) fn answer_scores<T: Scalar>(p: &Params<T>, fwd: &Forward<T>, answers: ArrayView2<'_, T>, temperature: T) -> Array1<T> {
    let fused = &fwd.v + &fwd.qt;
    let at = answers.dot(&p.w_ans);
    Array1::from_iter(at.rows().into_iter().map(|row| cosine(fused.view(), row) / temperature))
}

/// `cos(v, c W_text) / tau` for every candidate question.
pub(crate) fn question_scores<T: Scalar>(p: &Params<T>, fwd: &Forward<T>, candidates: ArrayView2<'_, T>, temperature: T) -> Array1<T> {
    let qc = candidates.dot(&p.w_text);
    Array1::from_iter(qc.rows().into_iter().map(|row| cosine(fwd.v.view(), row) / temperature))
}

/// Terms of one training objective.
pub(crate) struct Objective<'a, T> {
    pub answers: ArrayView2<'a, T>,
    pub correct: usize,
    pub qa_weight: T,
    /// Positive question in row 0, negatives after it.
    pub candidates: Option<ArrayView2<'a, T>>,
    pub grounding_weight: T,
    pub temperature: T,
}

/// Loss value and parameter gradients for one episode.
pub(crate) fn loss_and_grad<T: Scalar>(
    p: &Params<T>,
    frames: ArrayView2<'_, T>,
    question: ArrayView1<'_, T>,
    source: MaskSource<T>,
    obj: &Objective<'_, T>,
) -> (T, Params<T>) {
    let fwd = forward(p, frames, question, source);
    let mut grads = p.zeros_like();
    let width = p.w_v.ncols();
    let inv_sqrt_d = T::one() / T::lit(width as f64).sqrt();
    let tau = obj.temperature;
    let mut loss = T::zero();
    let mut dv = Array1::<T>::zeros(width);
    let mut dqt = Array1::<T>::zeros(width);

    if obj.qa_weight != T::zero() {
        let fused = &fwd.v + &fwd.qt;
        let at = obj.answers.dot(&p.w_ans);
        let scores = Array1::from_iter(at.rows().into_iter().map(|row| cosine(fused.view(), row) / tau));
        loss += obj.qa_weight * cross_entropy(scores.view(), obj.correct);
        let probs = softmax(scores.view());
        let mut dat = Array2::<T>::zeros(at.raw_dim());
        let mut dfused = Array1::<T>::zeros(width);
        for (a, row) in at.rows().into_iter().enumerate() {
            let target = if a == obj.correct { T::one() } else { T::zero() };
            let coef = obj.qa_weight * (probs[a] - target) / tau;
            let (df, db) = cosine_grads(fused.view(), row);
            dfused.scaled_add(coef, &df);
            dat.row_mut(a).scaled_add(coef, &db);
        }
        grads.w_ans = obj.answers.t().dot(&dat);
        dv += &dfused;
        dqt += &dfused;
    }

    if let Some(cands) = obj.candidates.filter(|_| obj.grounding_weight != T::zero()) {
        let qc = cands.dot(&p.w_text);
        let scores = Array1::from_iter(qc.rows().into_iter().map(|row| cosine(fwd.v.view(), row) / tau));
        loss += obj.grounding_weight * cross_entropy(scores.view(), 0);
        let probs = softmax(scores.view());
        let mut dqc = Array2::<T>::zeros(qc.raw_dim());
        for (j, row) in qc.rows().into_iter().enumerate() {
            let target = if j == 0 { T::one() } else { T::zero() };
            let coef = obj.grounding_weight * (probs[j] - target) / tau;
            let (dvv, dq) = cosine_grads(fwd.v.view(), row);
            dv.scaled_add(coef, &dvv);
            dqc.row_mut(j).scaled_add(coef, &dq);
        }
        grads.w_text += &cands.t().dot(&dqc);
    }

    // attention pooling: v = y^T p, p = softmax(y w_pool)
    let mut dy = outer(fwd.pool.view(), dv.view());
    let dp = fwd.y.dot(&dv);
    let mean = fwd.pool.dot(&dp);
    let de = &fwd.pool * &(dp - mean);
    dy += &outer(de.view(), p.w_pool.view());
    grads.w_pool = fwd.y.t().dot(&de);

    // y = (attn . G) vm
    let aw = &fwd.attn * &fwd.g.view().insert_axis(Axis(0));
    let daw = dy.dot(&fwd.vm.t());
    let dvm = aw.t().dot(&dy);
    let dg = (&daw * &fwd.attn).sum_axis(Axis(0));
    let dattn = &daw * &fwd.g.view().insert_axis(Axis(0));
    let row_dot = (&dattn * &fwd.attn).sum_axis(Axis(1));
    let dscores = &fwd.attn * &(dattn - &row_dot.insert_axis(Axis(1)));
    let dqm = dscores.dot(&fwd.km) * inv_sqrt_d;
    let dkm = dscores.t().dot(&fwd.qm) * inv_sqrt_d;
    grads.w_q = fwd.h.t().dot(&dqm);
    grads.w_k = fwd.h.t().dot(&dkm);
    grads.w_o = fwd.h.t().dot(&dvm);
    let mut dh = dqm.dot(&p.w_q.t()) + dkm.dot(&p.w_k.t()) + dvm.dot(&p.w_o.t());

    if let (MaskSource::Predicted, Some(kg)) = (source, fwd.kg.as_ref()) {
        let n = frames.nrows();
        let pos = positions::<T>(n);
        let u = position_logits::<T>(n);
        let smin = T::lit(SIGMA_MIN);
        let mut dkg = Array2::<T>::zeros(kg.raw_dim());
        for (k, head) in fwd.heads.iter().enumerate() {
            let upstream = Array1::from_iter((0..n).map(|j| if fwd.winner[j] == k { dg[j] } else { T::zero() }));
            let (d_mu, d_sigma) = gaussian::weight_grads(&head.mask, pos.view(), upstream.view());
            let mu = head.mask.mu();
            let sg = head.z_sigma.logistic();
            let dz_mu = d_mu * mu * (T::one() - mu);
            let dz_sigma = d_sigma * (T::one() - smin) * sg * (T::one() - sg);
            grads.a_mu[k] = dz_mu * head.m;
            grads.b_mu[k] = dz_mu;
            grads.w_sigma.row_mut(k).assign(&(&head.c * dz_sigma));
            grads.b_sigma[k] = dz_sigma;
            let dm = dz_mu * p.a_mu[k];
            let dc = p.w_sigma.row(k).mapv(|w| w * dz_sigma);
            let dpi = &u * dm + fwd.h.dot(&dc);
            dh += &outer(head.pi.view(), dc.view());
            let mean = head.pi.dot(&dpi);
            let dr = &head.pi * &(dpi - mean);
            dkg += &(outer(dr.view(), head.qg.view()) * inv_sqrt_d);
            let dqg = kg.t().dot(&dr) * inv_sqrt_d;
            let wgq = p.w_gq.slice(s![k, .., ..]);
            grads.w_gq.slice_mut(s![k, .., ..]).assign(&outer(fwd.qt.view(), dqg.view()));
            dqt += &wgq.dot(&dqg);
        }
        grads.w_gk = fwd.h.t().dot(&dkg);
        dh += &dkg.dot(&p.w_gk.t());
    }

    grads.w_text += &outer(question, dqt.view());
    grads.w_v = frames.t().dot(&dh);
    grads.b_v = dh.sum_axis(Axis(0));
    grads.standardize();
    (loss, grads)
}
