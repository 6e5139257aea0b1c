//! DeepSets network: architecture bookkeeping, forward pass, and
//! hand-derived backpropagation.
//!
//! Layout of the flat weight vector: for each layer in order (inner MLP
//! first, then outer MLP), a row-major `out x in` weight matrix followed by
//! an `out` bias vector. Hidden activations are ReLU; the summary output and
//! the final output are linear, with the final output squashed elementwise
//! onto the prior ranges by a scaled logistic.
//!
//! Mean pooling uses an exact (correctly rounded) sum over canonically
//! sorted values, so the pooled summary is a function of the multiset of
//! embeddings alone: permuting dataset rows leaves the output bit-identical,
//! and duplicating every row leaves the pooled summary bit-identical.

use super::PriorSpec;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::{canonical_sum, Real};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

/// Shapes of the two MLPs. The input dimension and output dimension are
/// fixed by the bivariate model (2 in, 6 out).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NbeArchitecture {
    pub input_dim: usize,
    /// Hidden widths of the inner (per-observation) network.
    pub psi_widths: Vec<usize>,
    /// Dimension of the pooled summary.
    pub summary_dim: usize,
    /// Hidden widths of the outer network (its input is `summary_dim + 1`).
    pub phi_widths: Vec<usize>,
    pub output_dim: usize,
}

impl Default for NbeArchitecture {
    fn default() -> Self {
        NbeArchitecture {
            input_dim: 2,
            psi_widths: vec![128, 128, 128],
            summary_dim: 128,
            phi_widths: vec![128, 128, 128],
            output_dim: 6,
        }
    }
}

impl NbeArchitecture {
    /// A small architecture with every width set to `w` (gradient checks,
    /// smoke tests).
    pub fn uniform(w: usize) -> Self {
        NbeArchitecture {
            input_dim: 2,
            psi_widths: vec![w; 3],
            summary_dim: w,
            phi_widths: vec![w; 3],
            output_dim: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != 2 {
            return Err(Error::DimensionMismatch(format!(
                "input dimension is fixed to 2, got {}",
                self.input_dim
            )));
        }
        if self.output_dim != 6 {
            return Err(Error::DimensionMismatch(format!(
                "output dimension is fixed to 6, got {}",
                self.output_dim
            )));
        }
        if self.summary_dim == 0
            || self.psi_widths.iter().any(|&w| w == 0)
            || self.phi_widths.iter().any(|&w| w == 0)
        {
            return Err(Error::InvalidParameter("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// (in, out) shapes of all layers: inner MLP then outer MLP.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut prev = self.input_dim;
        for &w in &self.psi_widths {
            shapes.push((prev, w));
            prev = w;
        }
        shapes.push((prev, self.summary_dim));
        prev = self.summary_dim + 1; // pooled summary plus ln(n)
        for &w in &self.phi_widths {
            shapes.push((prev, w));
            prev = w;
        }
        shapes.push((prev, self.output_dim));
        shapes
    }

    /// Number of layers in the inner network (including its linear output).
    pub fn psi_layer_count(&self) -> usize {
        self.psi_widths.len() + 1
    }

    pub fn weight_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(i, o)| i * o + o)
            .sum()
    }

    /// Offset of each layer's weight matrix and bias in the flat vector.
    fn offsets(&self) -> Vec<(usize, usize, usize)> {
        // (matrix offset, bias offset, end)
        let mut out = Vec::new();
        let mut off = 0;
        for (i, o) in self.layer_shapes() {
            out.push((off, off + i * o, off + i * o + o));
            off += i * o + o;
        }
        out
    }
}

fn layer_view<'a, T: Real>(
    w: &'a [T],
    shapes: &[(usize, usize)],
    offsets: &[(usize, usize, usize)],
    layer: usize,
) -> (ArrayView2<'a, T>, &'a [T]) {
    let (inp, out) = shapes[layer];
    let (m0, b0, end) = offsets[layer];
    (
        ArrayView2::from_shape((out, inp), &w[m0..b0]).expect("layer shape"),
        &w[b0..end],
    )
}

/// Dense layer on a batch of rows: `Z = A W^T + b`.
fn affine_rows<T: Real + ndarray::LinalgScalar>(
    a: &Array2<T>,
    w: ArrayView2<T>,
    b: &[T],
) -> Array2<T> {
    let mut z = a.dot(&w.t());
    for mut row in z.rows_mut() {
        for (zi, &bi) in row.iter_mut().zip(b) {
            *zi += bi;
        }
    }
    z
}

fn relu_inplace<T: Real>(z: &mut Array2<T>) {
    for v in z.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

fn affine_vec<T: Real>(x: &[T], w: ArrayView2<T>, b: &[T]) -> Vec<T> {
    let (out, inp) = (w.nrows(), w.ncols());
    let mut z = b.to_vec();
    for o in 0..out {
        let mut acc = T::zero();
        let row = w.row(o);
        for i in 0..inp {
            acc += row[i] * x[i];
        }
        z[o] += acc;
    }
    z
}

fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Exact mean over each column of the embedding matrix.
fn pooled_mean<T: Real>(h: &Array2<T>) -> Vec<T> {
    let n = h.nrows();
    let inv_n = T::from_f64(n as f64);
    let mut buf = vec![T::zero(); n];
    (0..h.ncols())
        .map(|s| {
            for (b, v) in buf.iter_mut().zip(h.column(s)) {
                *b = *v;
            }
            canonical_sum(&mut buf) / inv_n
        })
        .collect()
}

struct PsiCache<T> {
    /// Input to each inner layer (activations of the previous one).
    inputs: Vec<Array2<T>>,
    /// Embeddings (output of the linear summary layer).
    h: Array2<T>,
}

fn psi_forward<T: Real + ndarray::LinalgScalar>(
    arch: &NbeArchitecture,
    w: &[T],
    x: Array2<T>,
    keep_cache: bool,
) -> PsiCache<T> {
    let shapes = arch.layer_shapes();
    let offsets = arch.offsets();
    let n_psi = arch.psi_layer_count();
    let mut inputs = Vec::with_capacity(if keep_cache { n_psi } else { 1 });
    let mut a = x;
    for layer in 0..n_psi {
        let (wm, b) = layer_view(w, &shapes, &offsets, layer);
        let mut z = affine_rows(&a, wm, b);
        if layer + 1 < n_psi {
            relu_inplace(&mut z);
        }
        if keep_cache {
            inputs.push(a);
        }
        a = z;
    }
    PsiCache { inputs, h: a }
}

struct PhiCache<T> {
    /// Input to each outer layer.
    inputs: Vec<Vec<T>>,
    z_out: Vec<T>,
}

fn phi_forward<T: Real>(arch: &NbeArchitecture, w: &[T], pooled_and_logn: Vec<T>) -> PhiCache<T> {
    let shapes = arch.layer_shapes();
    let offsets = arch.offsets();
    let n_psi = arch.psi_layer_count();
    let n_layers = shapes.len();
    let mut inputs = Vec::with_capacity(n_layers - n_psi);
    let mut x = pooled_and_logn;
    for layer in n_psi..n_layers {
        let (wm, b) = layer_view(w, &shapes, &offsets, layer);
        let mut z = affine_vec(&x, wm, b);
        if layer + 1 < n_layers {
            for v in z.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        inputs.push(x);
        x = z;
    }
    PhiCache { inputs, z_out: x }
}

fn vst_matrix<T: Real>(data: &Dataset<T>) -> Array2<T> {
    let n = data.n();
    let mut x = Array2::zeros((n, 2));
    for (i, row) in data.rows().iter().enumerate() {
        x[[i, 0]] = super::vst(row[0]);
        x[[i, 1]] = super::vst(row[1]);
    }
    x
}

fn squash_to_ranges<T: Real>(z: &[T], prior: &PriorSpec) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (i, (lo, hi)) in prior.ranges().iter().enumerate() {
        out[i] = lo + (hi - lo) * sigmoid(z[i]).as_f64();
    }
    out
}

/// Full forward pass: estimate in original parameter units.
pub(super) fn forward_estimate<T: Real + ndarray::LinalgScalar>(
    arch: &NbeArchitecture,
    w: &[T],
    prior: &PriorSpec,
    data: &Dataset<T>,
) -> [f64; 6] {
    let x = vst_matrix(data);
    let n = data.n();
    let psi = psi_forward(arch, w, x, false);
    let mut pooled = pooled_mean(&psi.h);
    pooled.push(T::from_f64((n as f64).ln()));
    let phi = phi_forward(arch, w, pooled);
    squash_to_ranges(&phi.z_out, prior)
}

/// Loss of one dataset against its generating parameters, and the gradient
/// with respect to every weight (flat, same layout as the weight vector).
///
/// The loss is `sum_p | sigmoid(z_p) - t_p |` with `t` the range-standardized
/// truth, i.e. the L1 distance in standardized parameter space.
pub fn loss_and_grad<T: Real + ndarray::LinalgScalar>(
    arch: &NbeArchitecture,
    w: &[T],
    data: &Dataset<T>,
    truth_standardized: &[f64; 6],
) -> (T, Vec<T>) {
    let shapes = arch.layer_shapes();
    let offsets = arch.offsets();
    let n_psi = arch.psi_layer_count();
    let n_layers = shapes.len();
    let n = data.n();

    // Forward with caches.
    let x = vst_matrix(data);
    let psi = psi_forward(arch, w, x, true);
    let mut pooled = pooled_mean(&psi.h);
    pooled.push(T::from_f64((n as f64).ln()));
    let phi = phi_forward(arch, w, pooled);

    // Loss and output-layer gradient.
    let mut loss = T::zero();
    let mut dz: Vec<T> = Vec::with_capacity(6);
    for p in 0..6 {
        let s = sigmoid(phi.z_out[p]);
        let t = T::from_f64(truth_standardized[p]);
        let diff = s - t;
        loss += diff.abs();
        let sign = if diff > T::zero() {
            T::one()
        } else if diff < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        dz.push(sign * s * (T::one() - s));
    }

    let mut grad = vec![T::zero(); w.len()];

    // Outer MLP backward.
    for layer in (n_psi..n_layers).rev() {
        let (inp, out) = shapes[layer];
        let (m0, b0, _) = offsets[layer];
        let a_in = &phi.inputs[layer - n_psi];
        for o in 0..out {
            grad[b0 + o] = dz[o];
            let g_row = &mut grad[m0 + o * inp..m0 + (o + 1) * inp];
            for i in 0..inp {
                g_row[i] = dz[o] * a_in[i];
            }
        }
        if layer > n_psi {
            // Propagate through the affine map and the ReLU of the previous
            // layer (its output is a_in; zero entries were clipped).
            let (wm, _) = layer_view(w, &shapes, &offsets, layer);
            let mut da = vec![T::zero(); inp];
            for o in 0..out {
                let row = wm.row(o);
                for i in 0..inp {
                    da[i] += dz[o] * row[i];
                }
            }
            for i in 0..inp {
                if a_in[i] <= T::zero() {
                    da[i] = T::zero();
                }
            }
            dz = da;
        } else {
            // Gradient w.r.t. the pooled summary (drop the ln n coordinate).
            let (wm, _) = layer_view(w, &shapes, &offsets, layer);
            let mut da = vec![T::zero(); inp - 1];
            for o in 0..out {
                let row = wm.row(o);
                for (i, d) in da.iter_mut().enumerate() {
                    *d += dz[o] * row[i];
                }
            }
            dz = da;
        }
    }

    // Mean pooling: every row receives dz / n.
    let inv_n = T::one() / T::from_f64(n as f64);
    let s_dim = arch.summary_dim;
    let mut dh = Array2::zeros((n, s_dim));
    for mut row in dh.rows_mut() {
        for (v, &d) in row.iter_mut().zip(&dz) {
            *v = d * inv_n;
        }
    }

    // Inner MLP backward.
    let mut dz_mat = dh;
    for layer in (0..n_psi).rev() {
        let (inp, out) = shapes[layer];
        let (m0, b0, _) = offsets[layer];
        let a_in = &psi.inputs[layer];
        // dW = dZ^T A, db = column sums of dZ.
        let dw = dz_mat.t().dot(a_in);
        debug_assert_eq!(dw.shape(), [out, inp]);
        for o in 0..out {
            let g_row = &mut grad[m0 + o * inp..m0 + (o + 1) * inp];
            for i in 0..inp {
                g_row[i] = dw[[o, i]];
            }
            let mut acc = T::zero();
            for r in dz_mat.column(o) {
                acc += *r;
            }
            grad[b0 + o] = acc;
        }
        if layer > 0 {
            let (wm, _) = layer_view(w, &shapes, &offsets, layer);
            let mut da = dz_mat.dot(&wm);
            // ReLU mask of the previous layer's output.
            for (mut da_row, a_row) in da.rows_mut().into_iter().zip(a_in.rows()) {
                for (d, &a) in da_row.iter_mut().zip(a_row) {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            dz_mat = da;
        }
    }

    (loss, grad)
}

/// He-style uniform initialization: `U(+-sqrt(6 / fan_in))` per layer.
pub(super) fn init_weights<T: Real>(arch: &NbeArchitecture, seed: u64) -> Vec<T> {
    use rand::Rng;
    let mut rng = crate::streams::substream(seed, 0);
    let mut w = Vec::with_capacity(arch.weight_count());
    for (inp, out) in arch.layer_shapes() {
        let bound = (6.0 / inp as f64).sqrt();
        for _ in 0..inp * out {
            w.push(T::from_f64((rng.random::<f64>() * 2.0 - 1.0) * bound));
        }
        for _ in 0..out {
            w.push(T::zero());
        }
    }
    w
}
