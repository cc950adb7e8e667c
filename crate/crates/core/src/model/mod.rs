//! Recurrent-convolutional placement predictor.
//!
//! A GRU encodes the feature stream; its hidden state is decoded into an
//! `n x m` heatmap by a dense projection onto a small channel grid, a stride-2
//! transposed convolution (cropped to the grid), a 1x1 convolution and an
//! elementwise sigmoid.

mod backprop;
mod io;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::FEATURE_DIM;
use crate::grid::{GridSpec, Heatmap};

pub use backprop::{sequence_loss, trajectory_gradient, StepCache};
pub use io::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use train::{train, train_from, Adam, EpochStats, TrainConfig, TrainReport, TrainingSample};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected input of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("prediction and label sequences differ in shape")]
    ShapeMismatch,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("trajectory {0} has fewer than two frames")]
    ShortTrajectory(usize),
    #[error("loss became non-finite in epoch {0}")]
    NonFiniteLoss(usize),
    #[error("invalid training config: {0}")]
    BadConfig(&'static str),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture hyper-parameters. Everything needed to rebuild the parameter
/// layout lives here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub grid_n: usize,
    pub grid_m: usize,
    /// Channels of the projected seed grid.
    pub proj_channels: usize,
    /// Output channels of the transposed convolution.
    pub deconv_channels: usize,
    pub kernel_x: usize,
    pub kernel_y: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ModelShape {
    pub fn new(input_dim: usize, hidden_dim: usize, grid: &GridSpec) -> Self {
        Self {
            input_dim,
            hidden_dim,
            grid_n: grid.n,
            grid_m: grid.m,
            proj_channels: 16,
            deconv_channels: 8,
            kernel_x: 3,
            kernel_y: 4,
            stride: 2,
            padding: 1,
        }
    }

    /// Default 28-input, 64-hidden model for `grid`.
    pub fn default_for(grid: &GridSpec) -> Self {
        Self::new(FEATURE_DIM, 64, grid)
    }

    fn deconv_out(&self, base: usize, kernel: usize) -> usize {
        ((base - 1) * self.stride + kernel).saturating_sub(2 * self.padding)
    }

    /// Smallest seed-grid extent whose transposed convolution covers `want`.
    fn base_for(&self, want: usize, kernel: usize) -> usize {
        (1..).find(|&b| self.deconv_out(b, kernel) >= want).unwrap()
    }

    pub fn base_x(&self) -> usize {
        self.base_for(self.grid_n, self.kernel_x)
    }

    pub fn base_y(&self) -> usize {
        self.base_for(self.grid_m, self.kernel_y)
    }

    pub fn proj_len(&self) -> usize {
        self.proj_channels * self.base_x() * self.base_y()
    }

    pub fn cells(&self) -> usize {
        self.grid_n * self.grid_m
    }

    fn validate(&self) -> Result<(), ModelError> {
        let ok = self.input_dim > 0
            && self.hidden_dim > 0
            && self.grid_n > 0
            && self.grid_m > 0
            && self.proj_channels > 0
            && self.deconv_channels > 0
            && self.kernel_x > 0
            && self.kernel_y > 0
            && self.stride > 0
            && self.kernel_x > self.padding
            && self.kernel_y > self.padding;
        if ok {
            Ok(())
        } else {
            Err(ModelError::Format(format!("invalid model shape {self:?}")))
        }
    }

    /// Named tensors in storage order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let (c1, c2) = (self.proj_channels, self.deconv_channels);
        vec![
            ("gru.w_input", vec![3 * h, d]),
            ("gru.w_hidden", vec![3 * h, h]),
            ("gru.b_input", vec![3 * h]),
            ("gru.b_hidden", vec![3 * h]),
            ("dec.w_proj", vec![self.proj_len(), h]),
            ("dec.b_proj", vec![self.proj_len()]),
            ("dec.w_deconv", vec![c1, c2, self.kernel_x, self.kernel_y]),
            ("dec.b_deconv", vec![c2]),
            ("dec.w_out", vec![c2]),
            ("dec.b_out", vec![1]),
        ]
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Layout {
    pub w_i: usize,
    pub w_h: usize,
    pub b_i: usize,
    pub b_h: usize,
    pub w_p: usize,
    pub b_p: usize,
    pub w_t: usize,
    pub b_t: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub total: usize,
}

impl Layout {
    fn new(shape: &ModelShape) -> Self {
        let sizes: Vec<usize> = shape
            .tensors()
            .iter()
            .map(|(_, dims)| dims.iter().product())
            .collect();
        let mut offs = [0usize; 11];
        for (i, s) in sizes.iter().enumerate() {
            offs[i + 1] = offs[i] + s;
        }
        Self {
            w_i: offs[0],
            w_h: offs[1],
            b_i: offs[2],
            b_h: offs[3],
            w_p: offs[4],
            b_p: offs[5],
            w_t: offs[6],
            b_t: offs[7],
            w_o: offs[8],
            b_o: offs[9],
            total: offs[10],
        }
    }
}

/// Recurrent state carried between frames of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Hidden(pub Vec<f64>);

/// A trained (or freshly initialized) predictor. Immutable during inference;
/// hidden state is owned by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentModel {
    pub(crate) shape: ModelShape,
    pub(crate) grid: GridSpec,
    pub(crate) layout: Layout,
    pub(crate) params: Vec<f64>,
    /// Per-feature affine normalization applied before the GRU.
    pub(crate) input_mean: Vec<f64>,
    pub(crate) input_scale: Vec<f64>,
    pub(crate) version: String,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl IntentModel {
    /// All parameters zero and identity normalization.
    pub fn zeros(shape: ModelShape, grid: GridSpec) -> Result<Self, ModelError> {
        shape.validate()?;
        if shape.grid_n != grid.n || shape.grid_m != grid.m {
            return Err(ModelError::Format("shape and grid disagree".into()));
        }
        let layout = Layout::new(&shape);
        Ok(Self {
            shape,
            grid,
            layout,
            params: vec![0.0; layout.total],
            input_mean: vec![0.0; shape.input_dim],
            input_scale: vec![1.0; shape.input_dim],
            version: concat!("handover-", env!("CARGO_PKG_VERSION")).to_string(),
        })
    }

    /// Uniform fan-in initialization from a seed.
    pub fn init(shape: ModelShape, grid: GridSpec, seed: u64) -> Result<Self, ModelError> {
        let mut model = Self::zeros(shape, grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = model.layout;
        let h = shape.hidden_dim;
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let spans = [
            (l.w_i, l.w_h, fan(h)),
            (l.w_h, l.b_i, fan(h)),
            (l.b_i, l.b_h, fan(h)),
            (l.b_h, l.w_p, fan(h)),
            (l.w_p, l.b_p, fan(h)),
            (l.b_p, l.w_t, fan(h)),
            (
                l.w_t,
                l.b_t,
                fan(shape.proj_channels * shape.kernel_x * shape.kernel_y
                    / (shape.stride * shape.stride)),
            ),
            (l.b_t, l.w_o, 0.1),
            (l.w_o, l.b_o, fan(shape.deconv_channels)),
        ];
        for (lo, hi, bound) in spans {
            for p in &mut model.params[lo..hi] {
                *p = rng.random_range(-bound..bound);
            }
        }
        // Start with low output probabilities; most label cells are near zero.
        model.params[l.b_o] = -2.0;
        Ok(model)
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.shape.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn input_normalization(&self) -> (&[f64], &[f64]) {
        (&self.input_mean, &self.input_scale)
    }

    /// Sets the input normalization to `(x - mean) * scale`.
    pub fn set_input_normalization(
        &mut self,
        mean: Vec<f64>,
        scale: Vec<f64>,
    ) -> Result<(), ModelError> {
        let d = self.shape.input_dim;
        if mean.len() != d || scale.len() != d {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                got: mean.len().min(scale.len()),
            });
        }
        self.input_mean = mean;
        self.input_scale = scale;
        Ok(())
    }

    pub fn initial_hidden(&self) -> Hidden {
        Hidden(vec![0.0; self.shape.hidden_dim])
    }

    /// One inference step. `hidden = None` starts a new trajectory.
    pub fn forward(
        &self,
        input: &[f64],
        hidden: Option<&Hidden>,
    ) -> Result<(Heatmap, Hidden), ModelError> {
        if input.len() != self.shape.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.shape.input_dim,
                got: input.len(),
            });
        }
        let h0 = match hidden {
            Some(h) if h.0.len() != self.shape.hidden_dim => {
                return Err(ModelError::DimensionMismatch {
                    expected: self.shape.hidden_dim,
                    got: h.0.len(),
                })
            }
            Some(h) => h.0.clone(),
            None => vec![0.0; self.shape.hidden_dim],
        };
        let mut cache = StepCache::new(&self.shape);
        self.step(input, &h0, &mut cache);
        let map =
            Heatmap::from_vec(self.grid, cache.p.clone()).expect("decoder emits grid-sized output");
        Ok((map, Hidden(cache.h.clone())))
    }

    /// Runs a full trajectory from a reset state.
    pub fn predict_sequence(&self, inputs: &[Vec<f64>]) -> Result<Vec<Heatmap>, ModelError> {
        let mut hidden: Option<Hidden> = None;
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (map, h) = self.forward(x, hidden.as_ref())?;
            hidden = Some(h);
            out.push(map);
        }
        Ok(out)
    }

    /// Forward step writing every intermediate into `cache`.
    pub(crate) fn step(&self, input: &[f64], h_prev: &[f64], c: &mut StepCache) {
        let s = &self.shape;
        let l = &self.layout;
        let p = &self.params;
        let (d, h) = (s.input_dim, s.hidden_dim);

        for i in 0..d {
            c.x[i] = (input[i] - self.input_mean[i]) * self.input_scale[i];
        }
        c.h_prev.copy_from_slice(h_prev);

        // Gate pre-activations: gi = W_i x + b_i, gh = W_h h + b_h.
        for row in 0..3 * h {
            let wi = &p[l.w_i + row * d..l.w_i + (row + 1) * d];
            let wh = &p[l.w_h + row * h..l.w_h + (row + 1) * h];
            c.gi[row] = p[l.b_i + row] + dot(wi, &c.x);
            c.gh[row] = p[l.b_h + row] + dot(wh, h_prev);
        }
        for k in 0..h {
            let r = sigmoid(c.gi[k] + c.gh[k]);
            let z = sigmoid(c.gi[h + k] + c.gh[h + k]);
            let n = (c.gi[2 * h + k] + r * c.gh[2 * h + k]).tanh();
            c.r[k] = r;
            c.z[k] = z;
            c.n[k] = n;
            c.h[k] = (1.0 - z) * n + z * h_prev[k];
        }

        // Projection onto the seed grid.
        let pl = s.proj_len();
        for row in 0..pl {
            let w = &p[l.w_p + row * h..l.w_p + (row + 1) * h];
            c.a[row] = (p[l.b_p + row] + dot(w, &c.h)).tanh();
        }

        // Transposed convolution, cropped to n x m.
        let (bx, by) = (s.base_x(), s.base_y());
        let (n, m) = (s.grid_n, s.grid_m);
        let (c1, c2) = (s.proj_channels, s.deconv_channels);
        let (kx, ky) = (s.kernel_x, s.kernel_y);
        for co in 0..c2 {
            c.t[co * n * m..(co + 1) * n * m].fill(p[l.b_t + co]);
        }
        for ci in 0..c1 {
            for ax in 0..bx {
                for ay in 0..by {
                    let av = c.a[(ci * bx + ax) * by + ay];
                    for ix in 0..kx {
                        let Some(ox) = out_index(ax, ix, s.stride, s.padding, n) else {
                            continue;
                        };
                        for iy in 0..ky {
                            let Some(oy) = out_index(ay, iy, s.stride, s.padding, m) else {
                                continue;
                            };
                            for co in 0..c2 {
                                let w = p[l.w_t + ((ci * c2 + co) * kx + ix) * ky + iy];
                                c.t[(co * n + ox) * m + oy] += av * w;
                            }
                        }
                    }
                }
            }
        }
        for v in c.t.iter_mut() {
            *v = v.tanh();
        }

        // 1x1 convolution and sigmoid.
        let cells = n * m;
        for cell in 0..cells {
            let mut acc = p[l.b_o];
            for co in 0..c2 {
                acc += p[l.w_o + co] * c.t[co * cells + cell];
            }
            c.p[cell] = sigmoid(acc);
        }
    }
}

/// Output coordinate hit by input position `a` and kernel tap `k`, or `None`
/// when it falls in the padding or beyond the crop.
#[inline]
pub(crate) fn out_index(
    a: usize,
    k: usize,
    stride: usize,
    padding: usize,
    limit: usize,
) -> Option<usize> {
    let o = (a * stride + k).checked_sub(padding)?;
    (o < limit).then_some(o)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
