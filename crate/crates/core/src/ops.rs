//! Forward kernels and their vector-Jacobian products.
//!
//! These are plain functions over [`Tensor`]; the tape in [`crate::autodiff`]
//! records them and calls the `*_backward` halves.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Norm below which a vector is treated as zero.
pub const NORM_EPS: f64 = 1e-12;

fn require_rank<T: Real>(op: &'static str, t: &Tensor<T>, ranks: &[usize]) -> Result<()> {
    if ranks.contains(&t.rank()) {
        Ok(())
    } else {
        Err(Error::InvalidShape {
            op,
            reason: format!("expected rank in {ranks:?}, got shape {:?}", t.shape()),
        })
    }
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a^T` for a rank-2 tensor.
pub fn transpose<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    require_rank("transpose", a, &[2])?;
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let d = a.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Returns `(dA, dB)` for `C = A B` given `dC`.
pub fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let da = matmul(grad_out, &transpose(b)?)?;
    let db = matmul(&transpose(a)?, grad_out)?;
    Ok((da, db))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(grad_out, |v, g| if v > T::zero() { g } else { T::zero() })
}

/// Geometry of a valid-padding convolution over `[B, C, H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    /// Input had no batch axis.
    pub unbatched: bool,
}

impl ConvGeometry {
    pub fn new(x_shape: &[usize], k_shape: &[usize], stride: usize) -> Result<Self> {
        let (unbatched, batch, rest) = match x_shape.len() {
            3 => (true, 1, x_shape),
            4 => (false, x_shape[0], &x_shape[1..]),
            _ => {
                return Err(Error::Shape {
                    op: "conv2d",
                    lhs: x_shape.to_vec(),
                    rhs: k_shape.to_vec(),
                })
            }
        };
        let mismatch = || Error::Shape {
            op: "conv2d",
            lhs: x_shape.to_vec(),
            rhs: k_shape.to_vec(),
        };
        if k_shape.len() != 4 || k_shape[1] != rest[0] || stride == 0 {
            return Err(mismatch());
        }
        let (channels, height, width) = (rest[0], rest[1], rest[2]);
        let (filters, kh, kw) = (k_shape[0], k_shape[2], k_shape[3]);
        if kh > height || kw > width {
            return Err(mismatch());
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            filters,
            kh,
            kw,
            stride,
            out_h: (height - kh) / stride + 1,
            out_w: (width - kw) / stride + 1,
            unbatched,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        if self.unbatched {
            vec![self.filters, self.out_h, self.out_w]
        } else {
            vec![self.batch, self.filters, self.out_h, self.out_w]
        }
    }

    fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn out_len(&self) -> usize {
        self.filters * self.out_h * self.out_w
    }
}

fn conv_single<T: Real>(g: &ConvGeometry, x: &[T], k: &[T], out: &mut [T]) {
    let (h, w, kh, kw, s) = (g.height, g.width, g.kh, g.kw, g.stride);
    for f in 0..g.filters {
        let plane = &mut out[f * g.out_h * g.out_w..(f + 1) * g.out_h * g.out_w];
        for c in 0..g.channels {
            let xc = &x[c * h * w..(c + 1) * h * w];
            let kc = &k[(f * g.channels + c) * kh * kw..(f * g.channels + c + 1) * kh * kw];
            for u in 0..kh {
                for v in 0..kw {
                    let kv = kc[u * kw + v];
                    for i in 0..g.out_h {
                        let xrow = &xc[(i * s + u) * w..];
                        let orow = &mut plane[i * g.out_w..(i + 1) * g.out_w];
                        for (j, o) in orow.iter_mut().enumerate() {
                            *o = *o + kv * xrow[j * s + v];
                        }
                    }
                }
            }
        }
    }
}

/// Valid-padding cross-correlation. `x` is `[C, H, W]` or `[B, C, H, W]`,
/// `kernels` is `[F, C, kh, kw]`.
pub fn conv2d<T: Real>(x: &Tensor<T>, kernels: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), kernels.shape(), stride)?;
    let mut out = vec![T::zero(); g.batch * g.out_len()];
    let k = kernels.data();
    out.par_chunks_mut(g.out_len())
        .zip(x.data().par_chunks(g.in_len()))
        .for_each(|(o, xi)| conv_single(&g, xi, k, o));
    Ok(Tensor::from_parts(g.out_shape(), out))
}

fn conv_single_backward<T: Real>(g: &ConvGeometry, x: &[T], k: &[T], dy: &[T], dx: &mut [T]) -> Vec<T> {
    let (h, w, kh, kw, s) = (g.height, g.width, g.kh, g.kw, g.stride);
    let mut dk = vec![T::zero(); k.len()];
    for f in 0..g.filters {
        let dplane = &dy[f * g.out_h * g.out_w..(f + 1) * g.out_h * g.out_w];
        for c in 0..g.channels {
            let base = (f * g.channels + c) * kh * kw;
            for u in 0..kh {
                for v in 0..kw {
                    let kv = k[base + u * kw + v];
                    let mut acc = T::zero();
                    for i in 0..g.out_h {
                        let row = c * h * w + (i * s + u) * w + v;
                        let drow = &dplane[i * g.out_w..(i + 1) * g.out_w];
                        for (j, &d) in drow.iter().enumerate() {
                            acc = acc + d * x[row + j * s];
                            dx[row + j * s] = dx[row + j * s] + d * kv;
                        }
                    }
                    dk[base + u * kw + v] = dk[base + u * kw + v] + acc;
                }
            }
        }
    }
    dk
}

/// Returns `(dx, dkernels)`. Kernel gradients are reduced over the batch in
/// index order.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = ConvGeometry::new(x.shape(), kernels.shape(), stride)?;
    if grad_out.shape() != g.out_shape().as_slice() {
        return Err(Error::Shape {
            op: "conv2d_backward",
            lhs: g.out_shape(),
            rhs: grad_out.shape().to_vec(),
        });
    }
    let k = kernels.data();
    let mut dx = vec![T::zero(); x.len()];
    let per_item: Vec<Vec<T>> = dx
        .par_chunks_mut(g.in_len())
        .zip(x.data().par_chunks(g.in_len()))
        .zip(grad_out.data().par_chunks(g.out_len()))
        .map(|((dxi, xi), dyi)| conv_single_backward(&g, xi, k, dyi, dxi))
        .collect();
    let mut dk = vec![T::zero(); k.len()];
    for item in &per_item {
        for (a, &b) in dk.iter_mut().zip(item) {
            *a = *a + b;
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(kernels.shape().to_vec(), dk),
    ))
}

fn pool_dims<T: Real>(x: &Tensor<T>, window: usize) -> Result<(usize, usize, usize)> {
    require_rank("avgpool2d", x, &[3, 4])?;
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::InvalidShape {
            op: "avgpool2d",
            reason: format!("extent {h}x{w} is not divisible by window {window}"),
        });
    }
    Ok((x.len() / (h * w), h, w))
}

/// Mean over non-overlapping `window x window` blocks of the last two axes.
pub fn avgpool2d<T: Real>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (planes, h, w) = pool_dims(x, window)?;
    let (oh, ow) = (h / window, w / window);
    let scale = T::one() / T::of((window * window) as f64);
    let d = x.data();
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        for i in 0..h {
            for j in 0..w {
                let o = p * oh * ow + (i / window) * ow + j / window;
                out[o] = out[o] + d[p * h * w + i * w + j];
            }
        }
    }
    out.iter_mut().for_each(|v| *v = *v * scale);
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Ok(Tensor::from_parts(shape, out))
}

pub fn avgpool2d_backward<T: Real>(
    x: &Tensor<T>,
    window: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (planes, h, w) = pool_dims(x, window)?;
    let (oh, ow) = (h / window, w / window);
    if grad_out.len() != planes * oh * ow {
        return Err(Error::Shape {
            op: "avgpool2d_backward",
            lhs: x.shape().to_vec(),
            rhs: grad_out.shape().to_vec(),
        });
    }
    let scale = T::one() / T::of((window * window) as f64);
    let g = grad_out.data();
    let mut dx = vec![T::zero(); x.len()];
    for p in 0..planes {
        for i in 0..h {
            for j in 0..w {
                dx[p * h * w + i * w + j] = g[p * oh * ow + (i / window) * ow + j / window] * scale;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), dx))
}

pub fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// `v / ||v||`, failing when `||v|| <= 1e-12`.
pub fn normalize_slice<T: Real>(v: &[T]) -> Result<Vec<T>> {
    let n = norm(v);
    if !(n.f64() > NORM_EPS) {
        return Err(Error::DegenerateVector {
            norm: n.f64(),
            eps: NORM_EPS,
        });
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

/// Normalizes a vector, or each row of a matrix.
pub fn l2_normalize<T: Real>(v: &Tensor<T>) -> Result<Tensor<T>> {
    require_rank("l2_normalize", v, &[1, 2])?;
    let c = v.cols();
    let mut out = Vec::with_capacity(v.len());
    for r in 0..v.rows() {
        out.extend(normalize_slice(&v.data()[r * c..(r + 1) * c])?);
    }
    Ok(Tensor::from_parts(v.shape().to_vec(), out))
}

/// Row-wise `(dy - y (y . dy)) / ||x||`.
pub fn l2_normalize_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    require_rank("l2_normalize", x, &[1, 2])?;
    if x.shape() != grad_out.shape() {
        return Err(Error::Shape {
            op: "l2_normalize_backward",
            lhs: x.shape().to_vec(),
            rhs: grad_out.shape().to_vec(),
        });
    }
    let c = x.cols();
    let mut dx = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        let xr = &x.data()[r * c..(r + 1) * c];
        let gr = &grad_out.data()[r * c..(r + 1) * c];
        let n = norm(xr);
        let y: Vec<T> = xr.iter().map(|&v| v / n).collect();
        let proj = dot(&y, gr);
        dx.extend(y.iter().zip(gr).map(|(&yi, &gi)| (gi - yi * proj) / n));
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), dx))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity_and_projector() {
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let m = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(matmul(&eye, &m).unwrap(), m);
        let p = t(&[2, 2], &[1., 0., 0., 0.]);
        let b = t(&[2, 2], &[5., 6., 7., 8.]);
        assert_eq!(matmul(&p, &b).unwrap().data(), &[5., 6., 0., 0.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::<f32>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[3], &[-1., 0., 2.])).data(), &[0., 0., 2.]);
        assert_eq!(relu(&t(&[3], &[-1., -5., -0.1])).sum(), 0.0);
        let g = relu_backward(&t(&[2], &[3., -3.]), &t(&[2], &[1., 1.])).unwrap();
        assert_eq!(g.data(), &[1., 0.]);
    }

    #[test]
    fn conv_window_sum() {
        let x = Tensor::<f64>::ones(&[1, 3, 3]);
        let k = Tensor::<f64>::ones(&[1, 1, 2, 2]);
        let y = conv2d(&x, &k, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_delta_kernel_is_identity_on_valid_region() {
        let x = t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = t(&[1, 1, 2, 2], &[1., 0., 0., 0.]);
        let y = conv2d(&x, &k, 1).unwrap();
        assert_eq!(y.data(), &[1., 2., 4., 5.]);
    }

    #[test]
    fn conv_stride_and_batch() {
        let x = Tensor::<f64>::ones(&[2, 1, 5, 5]);
        let k = Tensor::<f64>::ones(&[3, 1, 3, 3]);
        let y = conv2d(&x, &k, 2).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv_kernel_larger_than_input() {
        let x = Tensor::<f32>::ones(&[1, 2, 2]);
        let k = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        assert!(matches!(conv2d(&x, &k, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn avgpool_examples() {
        assert_eq!(avgpool2d(&Tensor::<f64>::ones(&[1, 2, 2]), 2).unwrap().data(), &[1.0]);
        assert_eq!(avgpool2d(&t(&[1, 2, 2], &[1., 2., 3., 4.]), 2).unwrap().data(), &[2.5]);
        assert!(avgpool2d(&Tensor::<f64>::ones(&[1, 3, 3]), 2).is_err());
        let g = avgpool2d_backward(&Tensor::<f64>::ones(&[1, 2, 2]), 2, &t(&[1, 1, 1], &[1.])).unwrap();
        assert_eq!(g.data(), &[0.25; 4]);
    }

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&t(&[2], &[3., 4.])).unwrap();
        assert!((v.data()[0] - 0.6).abs() < 1e-12 && (v.data()[1] - 0.8).abs() < 1e-12);
        let u = t(&[3], &[0., 1., 0.]);
        assert_eq!(l2_normalize(&u).unwrap(), u);
        let w = t(&[3], &[0.3, -1.2, 2.0]);
        let a = l2_normalize(&w).unwrap();
        let b = l2_normalize(&w.map(|x| 7.3 * x)).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!(matches!(
            l2_normalize(&t(&[2], &[0., 1e-13])),
            Err(Error::DegenerateVector { .. })
        ));
    }
}
