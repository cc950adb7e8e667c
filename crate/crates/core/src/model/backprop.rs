//! Confidence-weighted squared-error loss and its gradient by
//! backpropagation through time.

use super::{dot, out_index, IntentModel, ModelError, ModelShape};
use crate::grid::Heatmap;
use crate::labels::confidence_weight;

/// Intermediate values of one forward step.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub(crate) x: Vec<f64>,
    pub(crate) h_prev: Vec<f64>,
    pub(crate) gi: Vec<f64>,
    pub(crate) gh: Vec<f64>,
    pub(crate) r: Vec<f64>,
    pub(crate) z: Vec<f64>,
    pub(crate) n: Vec<f64>,
    pub(crate) h: Vec<f64>,
    pub(crate) a: Vec<f64>,
    pub(crate) t: Vec<f64>,
    pub(crate) p: Vec<f64>,
}

impl StepCache {
    pub fn new(shape: &ModelShape) -> Self {
        let h = shape.hidden_dim;
        Self {
            x: vec![0.0; shape.input_dim],
            h_prev: vec![0.0; h],
            gi: vec![0.0; 3 * h],
            gh: vec![0.0; 3 * h],
            r: vec![0.0; h],
            z: vec![0.0; h],
            n: vec![0.0; h],
            h: vec![0.0; h],
            a: vec![0.0; shape.proj_len()],
            t: vec![0.0; shape.deconv_channels * shape.cells()],
            p: vec![0.0; shape.cells()],
        }
    }

    pub fn prediction(&self) -> &[f64] {
        &self.p
    }
}

/// `sum_t c_t * sum_cells (l_t - p_t)^2` with `c_t` computed against `len`.
pub fn sequence_loss(preds: &[Heatmap], labels: &[Heatmap], len: usize) -> Result<f64, ModelError> {
    if preds.len() != labels.len() || len == 0 {
        return Err(ModelError::ShapeMismatch);
    }
    let mut loss = 0.0;
    for (t, (p, l)) in preds.iter().zip(labels).enumerate() {
        if !p.same_shape(l) {
            return Err(ModelError::ShapeMismatch);
        }
        let sq: f64 = p
            .values()
            .iter()
            .zip(l.values())
            .map(|(a, b)| (b - a) * (b - a))
            .sum();
        loss += sq * confidence_weight(t, len);
    }
    Ok(loss)
}

/// Loss of one trajectory and its gradient with respect to every parameter,
/// accumulated into `grad` (which must have the model's parameter length).
/// `labels[t]` holds the `n * m` label values of step `t`.
pub fn trajectory_gradient(
    model: &IntentModel,
    inputs: &[Vec<f64>],
    labels: &[Vec<f64>],
    grad: &mut [f64],
) -> Result<f64, ModelError> {
    if inputs.len() != labels.len() || inputs.is_empty() {
        return Err(ModelError::ShapeMismatch);
    }
    if grad.len() != model.params.len() {
        return Err(ModelError::ShapeMismatch);
    }
    let s = model.shape;
    let len = inputs.len();
    let mut caches: Vec<StepCache> = Vec::with_capacity(len);
    let mut h = vec![0.0; s.hidden_dim];
    let mut loss = 0.0;
    for (t, x) in inputs.iter().enumerate() {
        if x.len() != s.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: s.input_dim,
                got: x.len(),
            });
        }
        if labels[t].len() != s.cells() {
            return Err(ModelError::ShapeMismatch);
        }
        let mut c = StepCache::new(&s);
        model.step(x, &h, &mut c);
        h.copy_from_slice(&c.h);
        let w = confidence_weight(t, len);
        loss += w * c
            .p
            .iter()
            .zip(&labels[t])
            .map(|(p, l)| (p - l) * (p - l))
            .sum::<f64>();
        caches.push(c);
    }

    let mut dh_next = vec![0.0; s.hidden_dim];
    let mut scratch = Scratch::new(&s);
    for t in (0..len).rev() {
        let w = confidence_weight(t, len);
        backward_step(
            model,
            &caches[t],
            &labels[t],
            w,
            &mut dh_next,
            grad,
            &mut scratch,
        );
    }
    Ok(loss)
}

struct Scratch {
    dlogit: Vec<f64>,
    dt: Vec<f64>,
    da: Vec<f64>,
    dh: Vec<f64>,
    dgi: Vec<f64>,
    dgh: Vec<f64>,
}

impl Scratch {
    fn new(s: &ModelShape) -> Self {
        Self {
            dlogit: vec![0.0; s.cells()],
            dt: vec![0.0; s.deconv_channels * s.cells()],
            da: vec![0.0; s.proj_len()],
            dh: vec![0.0; s.hidden_dim],
            dgi: vec![0.0; 3 * s.hidden_dim],
            dgh: vec![0.0; 3 * s.hidden_dim],
        }
    }
}

/// Backward pass of one step. `dh_next` carries dL/dh_t from later steps in
/// and dL/dh_{t-1} out.
fn backward_step(
    model: &IntentModel,
    c: &StepCache,
    label: &[f64],
    weight: f64,
    dh_next: &mut [f64],
    grad: &mut [f64],
    sc: &mut Scratch,
) {
    let s = &model.shape;
    let l = &model.layout;
    let p = &model.params;
    let (d, hd) = (s.input_dim, s.hidden_dim);
    let (n, m) = (s.grid_n, s.grid_m);
    let cells = n * m;
    let (c1, c2) = (s.proj_channels, s.deconv_channels);
    let (bx, by) = (s.base_x(), s.base_y());
    let (kx, ky) = (s.kernel_x, s.kernel_y);

    // Output sigmoid and 1x1 convolution.
    for cell in 0..cells {
        let pv = c.p[cell];
        sc.dlogit[cell] = 2.0 * weight * (pv - label[cell]) * pv * (1.0 - pv);
    }
    grad[l.b_o] += sc.dlogit.iter().sum::<f64>();
    for co in 0..c2 {
        let tv = &c.t[co * cells..(co + 1) * cells];
        grad[l.w_o + co] += dot(&sc.dlogit, tv);
        let wo = p[l.w_o + co];
        let dt = &mut sc.dt[co * cells..(co + 1) * cells];
        let mut bsum = 0.0;
        for cell in 0..cells {
            let g = sc.dlogit[cell] * wo * (1.0 - tv[cell] * tv[cell]);
            dt[cell] = g;
            bsum += g;
        }
        grad[l.b_t + co] += bsum;
    }

    // Transposed convolution.
    for ci in 0..c1 {
        for ax in 0..bx {
            for ay in 0..by {
                let ai = (ci * bx + ax) * by + ay;
                let av = c.a[ai];
                let mut acc = 0.0;
                for ix in 0..kx {
                    let Some(ox) = out_index(ax, ix, s.stride, s.padding, n) else {
                        continue;
                    };
                    for iy in 0..ky {
                        let Some(oy) = out_index(ay, iy, s.stride, s.padding, m) else {
                            continue;
                        };
                        for co in 0..c2 {
                            let wi = l.w_t + ((ci * c2 + co) * kx + ix) * ky + iy;
                            let g = sc.dt[(co * n + ox) * m + oy];
                            grad[wi] += av * g;
                            acc += p[wi] * g;
                        }
                    }
                }
                sc.da[ai] = acc * (1.0 - av * av);
            }
        }
    }

    // Projection.
    sc.dh.copy_from_slice(dh_next);
    for (row, &g) in sc.da.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad[l.b_p + row] += g;
        let wrow = l.w_p + row * hd;
        for k in 0..hd {
            grad[wrow + k] += g * c.h[k];
            sc.dh[k] += g * p[wrow + k];
        }
    }

    // GRU cell.
    for k in 0..hd {
        let dhk = sc.dh[k];
        let (r, z, nv) = (c.r[k], c.z[k], c.n[k]);
        let dn_pre = dhk * (1.0 - z) * (1.0 - nv * nv);
        let dz_pre = dhk * (c.h_prev[k] - nv) * z * (1.0 - z);
        let dr_pre = dn_pre * c.gh[2 * hd + k] * r * (1.0 - r);
        sc.dgi[k] = dr_pre;
        sc.dgi[hd + k] = dz_pre;
        sc.dgi[2 * hd + k] = dn_pre;
        sc.dgh[k] = dr_pre;
        sc.dgh[hd + k] = dz_pre;
        sc.dgh[2 * hd + k] = dn_pre * r;
        dh_next[k] = dhk * z;
    }
    for row in 0..3 * hd {
        let gi = sc.dgi[row];
        let gh = sc.dgh[row];
        grad[l.b_i + row] += gi;
        grad[l.b_h + row] += gh;
        let wi = l.w_i + row * d;
        for j in 0..d {
            grad[wi + j] += gi * c.x[j];
        }
        let wh = l.w_h + row * hd;
        for j in 0..hd {
            grad[wh + j] += gh * c.h_prev[j];
            dh_next[j] += gh * p[wh + j];
        }
    }
}
