//! Tensor operations and their backward rules.

use std::rc::Rc;

use super::{lit, Scalar, Tensor};
use crate::error::{Error, Result};

/// Raw per-head attention weights captured by [`Tensor::attention_core`].
/// Layout is `[heads × n_q × n_k]`, row-major.
#[derive(Debug, Clone)]
pub struct AttentionWeights<T: Scalar = f32> {
    pub heads: usize,
    pub n_q: usize,
    pub n_k: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    pub fn row(&self, head: usize, q: usize) -> &[T] {
        let start = (head * self.n_q + q) * self.n_k;
        &self.data[start..start + self.n_k]
    }
}

// Accumulating matrix kernels. `c` keeps its prior contents; callers zero it
// when they need a plain product.

/// c[m×n] += a[m×k] · b[k×n]
pub(crate) fn mm_nn<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj = *cj + aik * bj;
            }
        }
    }
}

/// Dot product with four independent accumulators. The combine order is
/// fixed, so results are deterministic; the unroll only breaks the serial
/// dependency chain that keeps a plain dot at scalar latency.
#[inline]
fn dot4<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    for (x, y) in (&mut ca).zip(&mut cb) {
        s0 = s0 + x[0] * y[0];
        s1 = s1 + x[1] * y[1];
        s2 = s2 + x[2] * y[2];
        s3 = s3 + x[3] * y[3];
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + x * y;
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// c[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn mm_nt<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cj) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            *cj = *cj + dot4(arow, brow);
        }
    }
}

/// c[k×n] += a[m×k]ᵀ · b[m×n]
pub(crate) fn mm_tn<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let crow = &mut c[kk * n..(kk + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj = *cj + aik * bj;
            }
        }
    }
}

/// In-place row softmax with max subtraction.
fn softmax_rows_inplace<T: Scalar>(s: &mut [T], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut s[r * cols..(r + 1) * cols];
        let mut mx = row[0];
        for &v in row.iter() {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).fast_exp();
            sum = sum + *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::DimensionMismatch {
            op,
            left: sa,
            right: sb,
        });
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        if !Tensor::recording(&[self, other]) {
            return Ok(Tensor::detached(self.shape(), data));
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                pa.accumulate_grad(g);
                pb.accumulate_grad(g);
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        if !Tensor::recording(&[self, other]) {
            return Ok(Tensor::detached(self.shape(), data));
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                pa.accumulate_grad(g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                pb.accumulate_grad(&neg);
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        if !Tensor::recording(&[self, other]) {
            return Ok(Tensor::detached(self.shape(), data));
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // Copy parent values out before touching grads so x·x works.
                let bv = pb.to_vec();
                let av = pa.to_vec();
                let da: Vec<T> = g.iter().zip(&bv).map(|(&gi, &bi)| gi * bi).collect();
                pa.accumulate_grad(&da);
                let db: Vec<T> = g.iter().zip(&av).map(|(&gi, &ai)| gi * ai).collect();
                pb.accumulate_grad(&db);
            }),
        ))
    }

    pub fn add_scalar(&self, c: T) -> Result<Tensor<T>> {
        let data: Vec<T> = self.data().iter().map(|&a| a + c).collect();
        if !Tensor::recording(&[self]) {
            return Ok(Tensor::detached(self.shape(), data));
        }
        let pa = self.clone();
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g| pa.accumulate_grad(g)),
        ))
    }

    pub fn mul_scalar(&self, c: T) -> Result<Tensor<T>> {
        let data: Vec<T> = self.data().iter().map(|&a| a * c).collect();
        if !Tensor::recording(&[self]) {
            return Ok(Tensor::detached(self.shape(), data));
        }
        let pa = self.clone();
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let da: Vec<T> = g.iter().map(|&gi| gi * c).collect();
                pa.accumulate_grad(&da);
            }),
        ))
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::DimensionMismatch {
                op,
                left: s,
                right: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    /// Standard matrix product `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut data = vec![T::zero(); m * n];
        mm_nn(&mut data, &self.data(), &other.data(), m, k, n);
        if !Tensor::recording(&[self, other]) {
            return Ok(Tensor::detached(vec![m, n], data));
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                if pa.requires_grad() {
                    let bv = pb.to_vec();
                    let mut da = vec![T::zero(); m * k];
                    mm_nt(&mut da, g, &bv, m, n, k);
                    pa.accumulate_grad(&da);
                }
                if pb.requires_grad() {
                    let av = pa.to_vec();
                    let mut db = vec![T::zero(); k * n];
                    mm_tn(&mut db, &av, g, m, k, n);
                    pb.accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Adds a length-d bias vector to every row of `[r×d]`.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, d) = self.dims2("add_bias")?;
        if bias.numel() != d {
            return Err(Error::DimensionMismatch {
                op: "add_bias",
                left: self.shape(),
                right: bias.shape(),
            });
        }
        let bv = bias.to_vec();
        let mut data = self.to_vec();
        for row in data.chunks_mut(d) {
            for (x, &b) in row.iter_mut().zip(&bv) {
                *x = *x + b;
            }
        }
        if !Tensor::recording(&[self, bias]) {
            return Ok(Tensor::detached(self.shape(), data));
        }
        let (pa, pb) = (self.clone(), bias.clone());
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                pa.accumulate_grad(g);
                if pb.requires_grad() {
                    let mut db = vec![T::zero(); d];
                    for row in g.chunks(d) {
                        for (s, &gi) in db.iter_mut().zip(row) {
                            *s = *s + gi;
                        }
                    }
                    pb.accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Per-column affine map over rows: `out[r,j] = x[r,j]·scale[j] + shift[j]`.
    /// This is the modulation primitive; scale/shift may be any tensor with
    /// d elements.
    pub fn affine_rows(&self, scale: &Tensor<T>, shift: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, d) = self.dims2("affine_rows")?;
        if scale.numel() != d || shift.numel() != d {
            return Err(Error::DimensionMismatch {
                op: "affine_rows",
                left: self.shape(),
                right: scale.shape(),
            });
        }
        let sv = scale.to_vec();
        let tv = shift.to_vec();
        let xv = self.data();
        let mut data = vec![T::zero(); r * d];
        for (orow, xrow) in data.chunks_mut(d).zip(xv.chunks(d)) {
            for j in 0..d {
                orow[j] = xrow[j] * sv[j] + tv[j];
            }
        }
        drop(xv);
        if !Tensor::recording(&[self, scale, shift]) {
            return Ok(Tensor::detached(self.shape(), data));
        }
        let (px, ps, pt) = (self.clone(), scale.clone(), shift.clone());
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone(), scale.clone(), shift.clone()],
            Box::new(move |g| {
                let sv = ps.to_vec();
                let xv = px.to_vec();
                if px.requires_grad() {
                    let mut dx = vec![T::zero(); r * d];
                    for (drow, grow) in dx.chunks_mut(d).zip(g.chunks(d)) {
                        for j in 0..d {
                            drow[j] = grow[j] * sv[j];
                        }
                    }
                    px.accumulate_grad(&dx);
                }
                if ps.requires_grad() {
                    let mut dsr = vec![T::zero(); d];
                    for (grow, xrow) in g.chunks(d).zip(xv.chunks(d)) {
                        for j in 0..d {
                            dsr[j] = dsr[j] + grow[j] * xrow[j];
                        }
                    }
                    ps.accumulate_grad(&dsr);
                }
                if pt.requires_grad() {
                    let mut dt = vec![T::zero(); d];
                    for grow in g.chunks(d) {
                        for j in 0..d {
                            dt[j] = dt[j] + grow[j];
                        }
                    }
                    pt.accumulate_grad(&dt);
                }
            }),
        ))
    }

    /// Per-row standardization over the last axis with epsilon 1e-6 and no
    /// learned affine; the modulation layer supplies scale/shift externally.
    pub fn layer_norm(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        let d = *s.last().ok_or_else(|| Error::Config("layer_norm on rank-0".into()))?;
        let rows = self.numel() / d;
        let eps = lit::<T>(1e-6);
        let xv = self.data();
        let mut data = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let inv_d = T::one() / lit::<T>(d as f64);
        for r in 0..rows {
            let xrow = &xv[r * d..(r + 1) * d];
            let orow = &mut data[r * d..(r + 1) * d];
            let mut mean = T::zero();
            for &v in xrow {
                mean = mean + v;
            }
            mean = mean * inv_d;
            let mut var = T::zero();
            for &v in xrow {
                let c = v - mean;
                var = var + c * c;
            }
            var = var * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for (o, &v) in orow.iter_mut().zip(xrow) {
                *o = (v - mean) * rs;
            }
        }
        drop(xv);
        if !Tensor::recording(&[self]) {
            return Ok(Tensor::detached(s, data));
        }
        let px = self.clone();
        let xhat = data.clone();
        Ok(Tensor::from_op(
            s.clone(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); rows * d];
                let inv_d = T::one() / lit::<T>(d as f64);
                for r in 0..rows {
                    let grow = &g[r * d..(r + 1) * d];
                    let hrow = &xhat[r * d..(r + 1) * d];
                    let drow = &mut dx[r * d..(r + 1) * d];
                    let mut gsum = T::zero();
                    let mut ghsum = T::zero();
                    for j in 0..d {
                        gsum = gsum + grow[j];
                        ghsum = ghsum + grow[j] * hrow[j];
                    }
                    let gmean = gsum * inv_d;
                    let ghmean = ghsum * inv_d;
                    for j in 0..d {
                        drow[j] = rstd[r] * (grow[j] - gmean - hrow[j] * ghmean);
                    }
                }
                px.accumulate_grad(&dx);
            }),
        ))
    }

    /// x · sigmoid(x)
    pub fn silu(&self) -> Result<Tensor<T>> {
        let rec = Tensor::recording(&[self]);
        // The sigmoid is always materialized and applied as x·s, never as
        // x/(1+e^-x): recorded and unrecorded passes must agree bit for bit,
        // and backward reuses the sigmoids instead of recomputing exp().
        let sig: Vec<T> = self
            .data()
            .iter()
            .map(|&x| T::one() / (T::one() + (-x).fast_exp()))
            .collect();
        let data: Vec<T> = self.data().iter().zip(&sig).map(|(&x, &s)| x * s).collect();
        if !rec {
            return Ok(Tensor::detached(self.shape(), data));
        }
        let px = self.clone();
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let xv = px.to_vec();
                let dx: Vec<T> = g
                    .iter()
                    .zip(&xv)
                    .zip(&sig)
                    .map(|((&gi, &x), &s)| gi * s * (T::one() + x * (T::one() - s)))
                    .collect();
                px.accumulate_grad(&dx);
            }),
        ))
    }

    /// Scaled-dot-product attention over pre-projected q/k/v, fused across
    /// heads. Returns the output and, when `record` is set, the pre-dropout
    /// attention weights (there is no dropout; the weights are exactly what
    /// multiplies v).
    pub fn attention_core(
        q: &Tensor<T>,
        k: &Tensor<T>,
        v: &Tensor<T>,
        heads: usize,
        record: bool,
    ) -> Result<(Tensor<T>, Option<AttentionWeights<T>>)> {
        let (n_q, d) = q.dims2("attention")?;
        let (n_k, dk) = k.dims2("attention")?;
        same_shape("attention", k, v)?;
        if d != dk {
            return Err(Error::DimensionMismatch {
                op: "attention",
                left: q.shape(),
                right: k.shape(),
            });
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "attention: model dim {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = T::one() / lit::<T>((dh as f64).sqrt());

        let qv = q.to_vec();
        let kv = k.to_vec();
        let vv = v.to_vec();

        let gather_head = |src: &[T], n: usize, h: usize| -> Vec<T> {
            let mut out = vec![T::zero(); n * dh];
            for i in 0..n {
                let s = i * d + h * dh;
                out[i * dh..(i + 1) * dh].copy_from_slice(&src[s..s + dh]);
            }
            out
        };

        let mut out = vec![T::zero(); n_q * d];
        let mut weights = vec![T::zero(); heads * n_q * n_k];
        for h in 0..heads {
            let qh = gather_head(&qv, n_q, h);
            let kh = gather_head(&kv, n_k, h);
            let vh = gather_head(&vv, n_k, h);
            let s = &mut weights[h * n_q * n_k..(h + 1) * n_q * n_k];
            mm_nt(s, &qh, &kh, n_q, dh, n_k);
            for x in s.iter_mut() {
                *x = *x * scale;
            }
            softmax_rows_inplace(s, n_q, n_k);
            let mut oh = vec![T::zero(); n_q * dh];
            mm_nn(&mut oh, s, &vh, n_q, n_k, dh);
            for i in 0..n_q {
                out[i * d + h * dh..i * d + (h + 1) * dh]
                    .copy_from_slice(&oh[i * dh..(i + 1) * dh]);
            }
        }

        let recorded = if record {
            Some(AttentionWeights {
                heads,
                n_q,
                n_k,
                data: weights.clone(),
            })
        } else {
            None
        };

        if !Tensor::recording(&[q, k, v]) {
            return Ok((Tensor::detached(vec![n_q, d], out), recorded));
        }

        let (pq, pk, pv) = (q.clone(), k.clone(), v.clone());
        let saved = weights; // moved into the closure
        let tensor = Tensor::from_op(
            vec![n_q, d],
            out,
            vec![q.clone(), k.clone(), v.clone()],
            Box::new(move |g| {
                let qv = pq.to_vec();
                let kv = pk.to_vec();
                let vv = pv.to_vec();
                let mut dq = vec![T::zero(); n_q * d];
                let mut dk_full = vec![T::zero(); n_k * d];
                let mut dv_full = vec![T::zero(); n_k * d];
                let gather = |src: &[T], n: usize, h: usize| -> Vec<T> {
                    let mut out = vec![T::zero(); n * dh];
                    for i in 0..n {
                        let s = i * d + h * dh;
                        out[i * dh..(i + 1) * dh].copy_from_slice(&src[s..s + dh]);
                    }
                    out
                };
                for h in 0..heads {
                    let kh = gather(&kv, n_k, h);
                    let qh = gather(&qv, n_q, h);
                    let vh = gather(&vv, n_k, h);
                    let a = &saved[h * n_q * n_k..(h + 1) * n_q * n_k];
                    let gh = gather(g, n_q, h);
                    // dA = gh · Vhᵀ ; dV = Aᵀ · gh
                    let mut da = vec![T::zero(); n_q * n_k];
                    mm_nt(&mut da, &gh, &vh, n_q, dh, n_k);
                    let mut dvh = vec![T::zero(); n_k * dh];
                    mm_tn(&mut dvh, a, &gh, n_q, n_k, dh);
                    // softmax backward: dS = A ⊙ (dA − rowsum(dA ⊙ A))
                    let mut ds = vec![T::zero(); n_q * n_k];
                    for i in 0..n_q {
                        let ar = &a[i * n_k..(i + 1) * n_k];
                        let dar = &da[i * n_k..(i + 1) * n_k];
                        let mut dot = T::zero();
                        for j in 0..n_k {
                            dot = dot + ar[j] * dar[j];
                        }
                        let dsr = &mut ds[i * n_k..(i + 1) * n_k];
                        for j in 0..n_k {
                            dsr[j] = ar[j] * (dar[j] - dot);
                        }
                    }
                    // dQh = dS · Kh · scale ; dKh = dSᵀ · Qh · scale
                    let mut dqh = vec![T::zero(); n_q * dh];
                    mm_nn(&mut dqh, &ds, &kh, n_q, n_k, dh);
                    let mut dkh = vec![T::zero(); n_k * dh];
                    mm_tn(&mut dkh, &ds, &qh, n_q, n_k, dh);
                    for i in 0..n_q {
                        for j in 0..dh {
                            dq[i * d + h * dh + j] = dqh[i * dh + j] * scale;
                        }
                    }
                    for i in 0..n_k {
                        for j in 0..dh {
                            dk_full[i * d + h * dh + j] = dkh[i * dh + j] * scale;
                            dv_full[i * d + h * dh + j] = dvh[i * dh + j];
                        }
                    }
                }
                pq.accumulate_grad(&dq);
                pk.accumulate_grad(&dk_full);
                pv.accumulate_grad(&dv_full);
            }),
        );
        Ok((tensor, recorded))
    }

    /// Concatenate along the row axis: `[ra×d]` ⧺ `[rb×d]` → `[(ra+rb)×d]`.
    pub fn concat_rows(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (ra, d) = self.dims2("concat_rows")?;
        let (rb, db) = other.dims2("concat_rows")?;
        if d != db {
            return Err(Error::DimensionMismatch {
                op: "concat_rows",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut data = self.to_vec();
        data.extend_from_slice(&other.data());
        if !Tensor::recording(&[self, other]) {
            return Ok(Tensor::detached(vec![ra + rb, d], data));
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![ra + rb, d],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                pa.accumulate_grad(&g[..ra * d]);
                pb.accumulate_grad(&g[ra * d..]);
            }),
        ))
    }

    /// Concatenate along the column axis: `[r×da]` ⧺ `[r×db]` → `[r×(da+db)]`.
    pub fn concat_cols(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, da) = self.dims2("concat_cols")?;
        let (rb, db) = other.dims2("concat_cols")?;
        if r != rb {
            return Err(Error::DimensionMismatch {
                op: "concat_cols",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let av = self.data();
        let bv = other.data();
        let mut data = Vec::with_capacity(r * (da + db));
        for i in 0..r {
            data.extend_from_slice(&av[i * da..(i + 1) * da]);
            data.extend_from_slice(&bv[i * db..(i + 1) * db]);
        }
        drop(av);
        drop(bv);
        if !Tensor::recording(&[self, other]) {
            return Ok(Tensor::detached(vec![r, da + db], data));
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![r, da + db],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let d = da + db;
                if pa.requires_grad() {
                    let mut ga = vec![T::zero(); r * da];
                    for i in 0..r {
                        ga[i * da..(i + 1) * da].copy_from_slice(&g[i * d..i * d + da]);
                    }
                    pa.accumulate_grad(&ga);
                }
                if pb.requires_grad() {
                    let mut gb = vec![T::zero(); r * db];
                    for i in 0..r {
                        gb[i * db..(i + 1) * db].copy_from_slice(&g[i * d + da..(i + 1) * d]);
                    }
                    pb.accumulate_grad(&gb);
                }
            }),
        ))
    }

    /// Same data, new shape (element count preserved).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::Config(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape(),
                shape
            )));
        }
        let data = self.to_vec();
        if !Tensor::recording(&[self]) {
            return Ok(Tensor::detached(shape.to_vec(), data));
        }
        let px = self.clone();
        Ok(Tensor::from_op(
            shape.to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| px.accumulate_grad(g)),
        ))
    }

    /// Rows `[r0, r1)` of a rank-2 tensor.
    pub fn slice_rows(&self, r0: usize, r1: usize) -> Result<Tensor<T>> {
        let (r, d) = self.dims2("slice_rows")?;
        if r0 >= r1 || r1 > r {
            return Err(Error::Config(format!(
                "slice_rows [{r0}, {r1}) out of range for {r} rows"
            )));
        }
        let data = self.data()[r0 * d..r1 * d].to_vec();
        if !Tensor::recording(&[self]) {
            return Ok(Tensor::detached(vec![r1 - r0, d], data));
        }
        let px = self.clone();
        Ok(Tensor::from_op(
            vec![r1 - r0, d],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); r * d];
                dx[r0 * d..r1 * d].copy_from_slice(g);
                px.accumulate_grad(&dx);
            }),
        ))
    }

    /// Stack length-d vectors into `[n×d]`.
    pub fn stack_rows(rows: &[Tensor<T>]) -> Result<Tensor<T>> {
        if rows.is_empty() {
            return Err(Error::Config("stack_rows of zero rows".into()));
        }
        let d = rows[0].numel();
        let mut data = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.numel() != d {
                return Err(Error::DimensionMismatch {
                    op: "stack_rows",
                    left: rows[0].shape(),
                    right: row.shape(),
                });
            }
            data.extend_from_slice(&row.data());
        }
        let refs: Vec<&Tensor<T>> = rows.iter().collect();
        if !Tensor::recording(&refs) {
            return Ok(Tensor::detached(vec![rows.len(), d], data));
        }
        let parents: Vec<Tensor<T>> = rows.to_vec();
        let handles = parents.clone();
        Ok(Tensor::from_op(
            vec![rows.len(), d],
            data,
            parents,
            Box::new(move |g| {
                for (i, row) in handles.iter().enumerate() {
                    if row.requires_grad() {
                        row.accumulate_grad(&g[i * d..(i + 1) * d]);
                    }
                }
            }),
        ))
    }

    /// Index remap: `out[i] = x[index[i]]`. Backward scatter-adds. Used for
    /// patch/pixel layout changes where the map is a pure permutation.
    pub fn gather(&self, index: Rc<Vec<usize>>, out_shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = out_shape.iter().product();
        if numel != index.len() {
            return Err(Error::Config(format!(
                "gather: index table {} vs shape {:?}",
                index.len(),
                out_shape
            )));
        }
        let xv = self.data();
        let src_len = xv.len();
        if let Some(&bad) = index.iter().find(|&&i| i >= src_len) {
            return Err(Error::Config(format!(
                "gather: index {bad} out of range for {src_len}"
            )));
        }
        let data: Vec<T> = index.iter().map(|&i| xv[i]).collect();
        drop(xv);
        if !Tensor::recording(&[self]) {
            return Ok(Tensor::detached(out_shape.to_vec(), data));
        }
        let px = self.clone();
        let idx = Rc::clone(&index);
        Ok(Tensor::from_op(
            out_shape.to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); src_len];
                for (&i, &gi) in idx.iter().zip(g) {
                    dx[i] = dx[i] + gi;
                }
                px.accumulate_grad(&dx);
            }),
        ))
    }

    /// Mean over all elements, as a `[1]` tensor.
    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let n = self.numel();
        let inv = T::one() / lit::<T>(n as f64);
        let mut acc = T::zero();
        for &v in self.data().iter() {
            acc = acc + v;
        }
        let data = vec![acc * inv];
        if !Tensor::recording(&[self]) {
            return Ok(Tensor::detached(vec![1], data));
        }
        let px = self.clone();
        Ok(Tensor::from_op(
            vec![1],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let d = vec![g[0] * inv; n];
                px.accumulate_grad(&d);
            }),
        ))
    }

    /// Mean squared error against `target`, as a `[1]` tensor.
    pub fn mse(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        let diff = self.sub(target)?;
        diff.mul(&diff)?.mean_all()
    }
}
