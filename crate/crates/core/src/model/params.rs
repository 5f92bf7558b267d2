//! Named parameter tensors and the checkpoint archive.

use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::gaussian::SIGMA_MIN;
use crate::scalar::Scalar;

/// Every trainable tensor of the model. Gradients and optimizer moments use
/// the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    /// Frame feature projection, `d_v x D`.
    pub w_v: Array2<T>,
    pub b_v: Array1<T>,
    /// Temporal self-attention query/key/value, `D x D` each.
    pub w_q: Array2<T>,
    pub w_k: Array2<T>,
    pub w_o: Array2<T>,
    /// Attention-pooling query.
    pub w_pool: Array1<T>,
    /// Question projection, `d_t x D`.
    pub w_text: Array2<T>,
    /// Answer projection, `d_t x D`.
    pub w_ans: Array2<T>,
    /// Grounding head: frame keys `D x D`, one question query map per mask `K x D x D`.
    pub w_gk: Array2<T>,
    pub w_gq: Array3<T>,
    /// Center projector `z_mu = a_mu * m + b_mu`, one pair per mask.
    pub a_mu: Array1<T>,
    pub b_mu: Array1<T>,
    /// Spread projector `z_sigma = w_sigma . c + b_sigma`, `K x D` and `K`.
    pub w_sigma: Array2<T>,
    pub b_sigma: Array1<T>,
}

macro_rules! param_fields {
    ($m:ident, $($args:tt)*) => {
        $m! { $($args)* ; w_v, b_v, w_q, w_k, w_o, w_pool, w_text, w_ans, w_gk, w_gq, a_mu, b_mu, w_sigma, b_sigma }
    };
}

macro_rules! impl_views {
    (; $($f:ident),*) => {
        /// `(name, shape, values)` for every tensor, in a fixed order.
        pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[T])> {
            vec![$((stringify!($f), self.$f.shape().to_vec(), self.$f.as_slice().expect("standard layout"))),*]
        }

        pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
            vec![$((stringify!($f), self.$f.as_slice_mut().expect("standard layout"))),*]
        }

        /// Rewrites any tensor that is not in row-major layout.
        pub fn standardize(&mut self) {
            $(if !self.$f.is_standard_layout() {
                self.$f = self.$f.as_standard_layout().into_owned();
            })*
        }

        /// Zero tensors with the same shapes.
        pub fn zeros_like(&self) -> Self {
            Self { $($f: ndarray::ArrayBase::zeros(self.$f.raw_dim())),* }
        }
    };
}

impl<T: Scalar> Params<T> {
    param_fields! { impl_views, }

    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let (dv, dt, d, k) = (cfg.d_v, cfg.d_t, cfg.width, cfg.n_masks);
        let mut normal = |shape: &[usize], fan_in: usize| -> Vec<T> {
            let std = 1.0 / (fan_in as f64).sqrt();
            (0..shape.iter().product::<usize>()).map(|_| T::lit(std * Distribution::<f64>::sample(&StandardNormal, &mut *rng))).collect::<Vec<T>>()
        };
        let a2 = |r: usize, c: usize, v: Vec<T>| Array2::from_shape_vec((r, c), v).expect("shape");
        let w_v = a2(dv, d, normal(&[dv, d], dv));
        let w_q = a2(d, d, normal(&[d, d], d));
        let w_k = a2(d, d, normal(&[d, d], d));
        let w_o = a2(d, d, normal(&[d, d], d));
        let w_pool = Array1::from(normal(&[d], d));
        let w_text = a2(dt, d, normal(&[dt, d], dt));
        let w_ans = a2(dt, d, normal(&[dt, d], dt));
        let w_gk = a2(d, d, normal(&[d, d], d));
        let w_gq = Array3::from_shape_vec((k, d, d), normal(&[k, d, d], d)).expect("shape");
        let w_sigma = a2(k, d, normal(&[k, d], d)) * T::lit(0.1);
        // Masks start at evenly spread centers and a broad spread.
        let b_mu = Array1::from_iter((0..k).map(|i| if k == 1 { T::zero() } else { T::lit((i as f64 + 0.5) / k as f64).logit() }));
        let s0 = (cfg.sigma_init - SIGMA_MIN) / (1.0 - SIGMA_MIN);
        let b_sigma = Array1::from_elem(k, T::lit(s0).logit());
        Self {
            w_v,
            b_v: Array1::zeros(d),
            w_q,
            w_k,
            w_o,
            w_pool,
            w_text,
            w_ans,
            w_gk,
            w_gq,
            a_mu: Array1::ones(k),
            b_mu,
            w_sigma,
            b_sigma,
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for ((_, dst), (_, _, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.tensors().iter().flat_map(|(_, _, v)| v.iter()).fold(T::zero(), |m, x| m.max(x.abs()))
    }
}

pub const CHECKPOINT_FORMAT: &str = "gvqa-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(config: &ModelConfig, params: &Params<T>) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| NamedTensor { name: name.into(), shape, data: data.iter().map(|v| v.as_f64()).collect() })
            .collect();
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, config: config.clone(), tensors }
    }

    pub fn to_params<T: Scalar>(&self) -> Result<Params<T>> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        // Shapes come from a freshly initialized model of the stored config.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut params: Params<T> = Params::init(&self.config, &mut rng);
        let expected: Vec<(&str, Vec<usize>)> = params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::Config(format!("checkpoint has {} tensors, expected {}", self.tensors.len(), expected.len())));
        }
        for ((name, shape), stored) in expected.iter().zip(&self.tensors) {
            if *name != stored.name || *shape != stored.shape || stored.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Config(format!("checkpoint tensor `{}` {:?} does not match `{name}` {shape:?}", stored.name, stored.shape)));
            }
        }
        for ((_, dst), stored) in params.tensors_mut().into_iter().zip(&self.tensors) {
            for (d, &s) in dst.iter_mut().zip(&stored.data) {
                *d = T::lit(s);
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })
    }
}
