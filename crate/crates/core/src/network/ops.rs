//! Dense kernels over channel-major cubic tensors laid out `[c][z][y][x]`.
//!
//! Loops are written over equal-length row slices so the compiler can drop
//! bounds checks and vectorize. Accumulation order is fixed, which keeps
//! every result bitwise reproducible.

use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;

/// Number of taps in a 3×3×3 kernel.
pub const TAPS: usize = 27;

/// Geometry of a cube of side `s` embedded in a zero-padded cube of side
/// `s + 2`.
///
/// In the padded layout voxel `(z, y, x)` of the interior lives at
/// `(z+1)·P + (y+1)·S + (x+1)` with `S = s + 2`, `P = S²`. A convolution
/// output is accumulated in a "padded-stride" buffer where `(z, y, x)` lives
/// at `z·P + y·S + x`; the tap `(kz, ky, kx)` then reads the padded input at
/// that index plus `kz·P + ky·S + kx`, so every tap is one contiguous stream
/// over the whole volume. Entries with `x ≥ s` or `y ≥ s` are scratch.
#[derive(Debug, Clone, Copy)]
struct Padded {
    side: usize,
    stride: usize,
    plane: usize,
    /// Length of a padded-stride accumulation buffer.
    span: usize,
}

impl Padded {
    fn new(side: usize) -> Self {
        let stride = side + 2;
        let plane = stride * stride;
        Self {
            side,
            stride,
            plane,
            span: (side - 1) * plane + (side - 1) * stride + side,
        }
    }

    fn volume(&self) -> usize {
        self.plane * self.stride
    }

    /// Offset of interior voxel (0, 0, 0) in the padded layout.
    fn origin(&self) -> usize {
        self.plane + self.stride + 1
    }

    /// Copies dense `[c][s³]` channels into zero-padded `[c][S³]` buffers.
    fn pad<T: Real>(&self, dense: &[T], channels: usize) -> Vec<T> {
        let s = self.side;
        let vol = s * s * s;
        let pvol = self.volume();
        let mut out = vec![T::ZERO; channels * pvol];
        for c in 0..channels {
            for z in 0..s {
                for y in 0..s {
                    let src = c * vol + (z * s + y) * s;
                    let dst = c * pvol + self.origin() + z * self.plane + y * self.stride;
                    out[dst..dst + s].copy_from_slice(&dense[src..src + s]);
                }
            }
        }
        out
    }

    /// Writes the interior of a padded-stride buffer into a dense cube.
    fn extract<T: Real>(&self, acc: &[T], dense: &mut [T]) {
        let s = self.side;
        for z in 0..s {
            for y in 0..s {
                let src = z * self.plane + y * self.stride;
                dense[(z * s + y) * s..][..s].copy_from_slice(&acc[src..src + s]);
            }
        }
    }
}

/// `acc[i] += Σ_{ky,kx} w[3·ky + kx] · src[i + ky·stride + kx]`.
#[inline]
fn taps9<T: Real>(acc: &mut [T], src: &[T], w: &[T], stride: usize) {
    let n = acc.len();
    let s = |ky: usize, kx: usize| &src[ky * stride + kx..ky * stride + kx + n];
    let (a0, a1, a2) = (s(0, 0), s(0, 1), s(0, 2));
    let (a3, a4, a5) = (s(1, 0), s(1, 1), s(1, 2));
    let (a6, a7, a8) = (s(2, 0), s(2, 1), s(2, 2));
    let w: [T; 9] = core::array::from_fn(|i| w[i]);
    for i in 0..n {
        acc[i] += w[0] * a0[i]
            + w[1] * a1[i]
            + w[2] * a2[i]
            + w[3] * a3[i]
            + w[4] * a4[i]
            + w[5] * a5[i]
            + w[6] * a6[i]
            + w[7] * a7[i]
            + w[8] * a8[i];
    }
}

/// `out[3·ky + kx] += Σ_i g[i] · src[i + ky·stride + kx]` with eight-lane
/// accumulators.
#[inline]
fn dots9<T: Real>(out: &mut [T], g: &[T], src: &[T], stride: usize) {
    let n = g.len();
    let offs: [usize; 9] = core::array::from_fn(|t| (t / 3) * stride + t % 3);
    let mut acc = [[T::ZERO; 8]; 9];
    let chunks = n / 8;
    for c in 0..chunks {
        let base = c * 8;
        let gv: &[T] = &g[base..base + 8];
        for t in 0..9 {
            let a = &src[base + offs[t]..base + offs[t] + 8];
            for l in 0..8 {
                acc[t][l] += gv[l] * a[l];
            }
        }
    }
    for t in 0..9 {
        let a = &acc[t];
        let mut sum = ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
        for i in chunks * 8..n {
            sum += g[i] * src[i + offs[t]];
        }
        out[t] += sum;
    }
}

/// Dot product with eight independent accumulators.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::ZERO; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::ZERO;
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    let s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    s + tail
}

fn sum<T: Real>(a: &[T]) -> T {
    let mut acc = [T::ZERO; 8];
    let mut chunks = a.chunks_exact(8);
    for c in &mut chunks {
        for i in 0..8 {
            acc[i] += c[i];
        }
    }
    let tail = chunks.remainder().iter().fold(T::ZERO, |s, v| s + *v);
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Correlates padded channels with 3×3×3 kernels and writes dense output.
///
/// `kernel(co, ci)` returns the 27 taps applied to input channel `ci` for
/// output channel `co`.
fn correlate<'w, T: Real + 'w>(
    padded: &[T],
    cin: usize,
    geo: Padded,
    cout: usize,
    init: impl Fn(usize) -> T,
    kernel: impl Fn(usize, usize) -> &'w [T],
) -> Vec<T> {
    let vol = geo.side.pow(3);
    let pvol = geo.volume();
    let mut out = vec![T::ZERO; cout * vol];
    let mut acc = vec![T::ZERO; geo.span];
    for co in 0..cout {
        acc.fill(init(co));
        for ci in 0..cin {
            let src = &padded[ci * pvol..(ci + 1) * pvol];
            let w = kernel(co, ci);
            for kz in 0..3 {
                taps9(&mut acc, &src[kz * geo.plane..], &w[kz * 9..kz * 9 + 9], geo.stride);
            }
        }
        geo.extract(&acc, &mut out[co * vol..(co + 1) * vol]);
    }
    out
}

/// 3×3×3 convolution, stride 1, zero padding 1.
///
/// `weight` is `[cout][cin][3][3][3]`, `bias` is `[cout]`.
pub fn conv3_forward<T: Real>(input: &[T], cin: usize, side: usize, weight: &[T], bias: &[T], cout: usize) -> Vec<T> {
    debug_assert_eq!(input.len(), cin * side.pow(3));
    debug_assert_eq!(weight.len(), cout * cin * TAPS);
    let geo = Padded::new(side);
    let padded = geo.pad(input, cin);
    correlate(&padded, cin, geo, cout, |co| bias[co], |co, ci| {
        &weight[(co * cin + ci) * TAPS..(co * cin + ci + 1) * TAPS]
    })
}

/// Backward pass of [`conv3_forward`].
///
/// Accumulates into `grad_weight` and `grad_bias`; when `grad_input` is
/// given, accumulates the input gradient there as well.
#[allow(clippy::too_many_arguments)]
pub fn conv3_backward<T: Real>(
    input: &[T],
    cin: usize,
    side: usize,
    weight: &[T],
    cout: usize,
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    grad_input: Option<&mut [T]>,
) {
    let geo = Padded::new(side);
    let vol = side.pow(3);
    let pvol = geo.volume();
    let padded_in = geo.pad(input, cin);
    let padded_g = geo.pad(grad_out, cout);

    for co in 0..cout {
        grad_bias[co] += sum(&grad_out[co * vol..(co + 1) * vol]);
        // The padded gradient read from the origin is the padded-stride
        // gradient with zeros in the scratch entries.
        let g = &padded_g[co * pvol + geo.origin()..][..geo.span];
        for ci in 0..cin {
            let src = &padded_in[ci * pvol..(ci + 1) * pvol];
            let gw = &mut grad_weight[(co * cin + ci) * TAPS..(co * cin + ci + 1) * TAPS];
            for kz in 0..3 {
                dots9(&mut gw[kz * 9..kz * 9 + 9], g, &src[kz * geo.plane..], geo.stride);
            }
        }
    }

    if let Some(gi) = grad_input {
        // Input gradient is the correlation of the padded output gradient
        // with spatially flipped kernels, summed over output channels.
        let flipped: Vec<T> = (0..cin * cout)
            .flat_map(|pair| {
                let (ci, co) = (pair / cout, pair % cout);
                let w = &weight[(co * cin + ci) * TAPS..(co * cin + ci + 1) * TAPS];
                (0..TAPS).map(move |t| w[TAPS - 1 - t])
            })
            .collect();
        let g_in = correlate(&padded_g, cout, geo, cin, |_| T::ZERO, |ci, co| {
            &flipped[(ci * cout + co) * TAPS..(ci * cout + co + 1) * TAPS]
        });
        gi.iter_mut().zip(&g_in).for_each(|(a, b)| *a += *b);
    }
}

/// Pointwise (1×1×1) channel projection, `weight` is `[cout][cin]`.
pub fn conv1_forward<T: Real>(input: &[T], cin: usize, vol: usize, weight: &[T], bias: &[T], cout: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; cout * vol];
    for (co, o) in out.chunks_exact_mut(vol).enumerate() {
        o.fill(bias[co]);
        for ci in 0..cin {
            let w = weight[co * cin + ci];
            for (a, b) in o.iter_mut().zip(&input[ci * vol..(ci + 1) * vol]) {
                *a += w * *b;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv1_backward<T: Real>(
    input: &[T],
    cin: usize,
    vol: usize,
    weight: &[T],
    cout: usize,
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    grad_input: &mut [T],
) {
    for co in 0..cout {
        let go = &grad_out[co * vol..(co + 1) * vol];
        grad_bias[co] += sum(go);
        for ci in 0..cin {
            let inp = &input[ci * vol..(ci + 1) * vol];
            grad_weight[co * cin + ci] += dot(go, inp);
            let w = weight[co * cin + ci];
            for (g, d) in grad_input[ci * vol..(ci + 1) * vol].iter_mut().zip(go) {
                *g += w * *d;
            }
        }
    }
}

pub fn relu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|v| v.max(T::ZERO)).collect()
}

/// Masks `grad` in place where the pre-activation was not positive.
pub fn relu_backward<T: Real>(pre: &[T], grad: &mut [T]) {
    for (g, p) in grad.iter_mut().zip(pre) {
        if !(*p > T::ZERO) {
            *g = T::ZERO;
        }
    }
}

/// 2×2×2 max pooling with stride 2. Returns pooled values and the flat
/// source index of each maximum (first occurrence wins ties).
pub fn maxpool2_forward<T: Real>(input: &[T], channels: usize, side: usize) -> (Vec<T>, Vec<u32>) {
    let half = side / 2;
    let plane = side * side;
    let vol = plane * side;
    let mut out = Vec::with_capacity(channels * half * half * half);
    let mut idx = Vec::with_capacity(out.capacity());
    for c in 0..channels {
        let base = c * vol;
        for z in 0..half {
            for y in 0..half {
                for x in 0..half {
                    let mut best = base + 2 * z * plane + 2 * y * side + 2 * x;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = base + (2 * z + dz) * plane + (2 * y + dy) * side + 2 * x + dx;
                                if input[i] > input[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    out.push(input[best]);
                    idx.push(best as u32);
                }
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward<T: Real>(indices: &[u32], grad_out: &[T], input_len: usize) -> Vec<T> {
    let mut g = vec![T::ZERO; input_len];
    for (i, d) in indices.iter().zip(grad_out) {
        g[*i as usize] += *d;
    }
    g
}

/// Mean over each channel's voxels.
pub fn global_avg_pool<T: Real>(input: &[T], channels: usize) -> Vec<T> {
    let vol = input.len() / channels;
    let inv = T::from_f64(1.0 / vol as f64);
    input.chunks_exact(vol).map(|c| sum(c) * inv).collect()
}

pub fn global_avg_pool_backward<T: Real>(grad: &[T], vol: usize) -> Vec<T> {
    let inv = T::from_f64(1.0 / vol as f64);
    grad.iter().flat_map(|g| core::iter::repeat(*g * inv).take(vol)).collect()
}
