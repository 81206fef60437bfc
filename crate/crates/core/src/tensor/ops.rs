use rayon::prelude::*;

use super::{gemm, split_axis, MatRef, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Batch-norm behavior of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running moments are updated.
    Train,
    /// Running moments; nothing is updated.
    Eval,
}

/// New running moments produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct MomentUpdate<F> {
    pub mean: Tensor<F>,
    pub var: Tensor<F>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn same_shape(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn scatter_sum<F: Real>(g: &[F]) -> F {
    g.iter().copied().sum()
}

impl<F: Real> Tape<F> {
    pub fn add(&self, a: &Var<F>, b: &Var<F>) -> Result<Var<F>> {
        same_shape("add", a.value(), b.value())?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(a.shape(), data)?;
        Ok(self.record(out, &[a, b], |g, need| {
            vec![need[0].then(|| g.to_vec()), need[1].then(|| g.to_vec())]
        }))
    }

    pub fn mul(&self, a: &Var<F>, b: &Var<F>) -> Result<Var<F>> {
        same_shape("mul", a.value(), b.value())?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(a.shape(), data)?;
        let (av, bv) = (a.arc(), b.arc());
        Ok(self.record(out, &[a, b], move |g, need| {
            let ga = need[0].then(|| g.iter().zip(bv.data()).map(|(&g, &y)| g * y).collect());
            let gb = need[1].then(|| g.iter().zip(av.data()).map(|(&g, &x)| g * x).collect());
            vec![ga, gb]
        }))
    }

    pub fn scale(&self, a: &Var<F>, factor: F) -> Var<F> {
        let out = a.value().map(|v| v * factor);
        self.record(out, &[a], move |g, _| {
            vec![Some(g.iter().map(|&v| v * factor).collect())]
        })
    }

    /// Sum of all elements, as a shape-`[1]` tensor.
    pub fn sum(&self, a: &Var<F>) -> Var<F> {
        let n = a.value().numel();
        let out = Tensor::scalar(a.value().sum());
        self.record(out, &[a], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn relu(&self, a: &Var<F>) -> Var<F> {
        let out = a.value().map(|v| if v > F::zero() { v } else { F::zero() });
        let av = a.arc();
        self.record(out, &[a], move |g, _| {
            vec![Some(
                g.iter()
                    .zip(av.data())
                    .map(|(&g, &x)| if x > F::zero() { g } else { F::zero() })
                    .collect(),
            )]
        })
    }

    pub fn reshape(&self, a: &Var<F>, shape: &[usize]) -> Result<Var<F>> {
        let out = a.value().clone().reshape(shape)?;
        Ok(self.record(out, &[a], |g, _| vec![Some(g.to_vec())]))
    }

    /// Axis permutation: output axis `d` is input axis `perm[d]`.
    pub fn permute(&self, a: &Var<F>, perm: &[usize]) -> Result<Var<F>> {
        let shape = a.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(
                "permute",
                format!("{perm:?} is not a permutation of the axes of {shape:?}"),
            ));
        }
        let (data, out_shape) = permute_data(a.data(), shape, perm);
        let out = Tensor::new(&out_shape, data)?;
        let mut inverse = vec![0; perm.len()];
        for (d, &p) in perm.iter().enumerate() {
            inverse[p] = d;
        }
        Ok(self.record(out, &[a], move |g, _| {
            vec![Some(permute_data(g, &out_shape, &inverse).0)]
        }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&self, xs: &[Var<F>], axis: usize) -> Result<Var<F>> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = first.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut lens = Vec::with_capacity(xs.len());
        for x in xs {
            let s = x.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim(
                    "concat",
                    format!("cannot concatenate {base:?} and {s:?} along axis {axis}"),
                ));
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let total: usize = lens.iter().sum();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (x, &len) in xs.iter().zip(&lens) {
                let block = len * inner;
                data.extend_from_slice(&x.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(&out_shape, data)?;
        let refs: Vec<&Var<F>> = xs.iter().collect();
        Ok(self.record(out, &refs, move |g, need| {
            let mut grads = Vec::with_capacity(lens.len());
            let mut start = 0;
            for (i, &len) in lens.iter().enumerate() {
                grads.push(need[i].then(|| {
                    let mut gi = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let row = o * total * inner;
                        gi.extend_from_slice(&g[row + start * inner..row + (start + len) * inner]);
                    }
                    gi
                }));
                start += len;
            }
            grads
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, a: &Var<F>, axis: usize, start: usize, len: usize) -> Result<Var<F>> {
        let shape = a.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let row = o * full * inner;
            data.extend_from_slice(&a.data()[row + start * inner..row + (start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.record(out, &[a], move |g, _| {
            let mut ga = vec![F::zero(); outer * full * inner];
            for o in 0..outer {
                let row = o * full * inner;
                ga[row + start * inner..row + (start + len) * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(ga)]
        }))
    }

    /// Splits `a` along `axis` into `parts` equal slices.
    pub fn chunk(&self, a: &Var<F>, parts: usize, axis: usize) -> Result<Vec<Var<F>>> {
        let extent = a.shape().get(axis).copied().unwrap_or(0);
        if parts == 0 || extent % parts != 0 {
            return Err(Error::dim(
                "chunk",
                format!("axis {axis} of {:?} does not split into {parts} parts", a.shape()),
            ));
        }
        let len = extent / parts;
        (0..parts).map(|i| self.narrow(a, axis, i * len, len)).collect()
    }

    /// Keeps every `stride`-th slice along `axis`, starting at index 0.
    pub fn subsample(&self, a: &Var<F>, axis: usize, stride: usize) -> Result<Var<F>> {
        let shape = a.shape().to_vec();
        if axis >= shape.len() || stride == 0 {
            return Err(Error::dim(
                "subsample",
                format!("stride {stride} on axis {axis} of {shape:?}"),
            ));
        }
        if stride == 1 {
            return Ok(a.clone());
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let len = full.div_ceil(stride);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for t in 0..len {
                let src = (o * full + t * stride) * inner;
                data.extend_from_slice(&a.data()[src..src + inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.record(out, &[a], move |g, _| {
            let mut ga = vec![F::zero(); outer * full * inner];
            for o in 0..outer {
                for t in 0..len {
                    let dst = (o * full + t * stride) * inner;
                    let src = (o * len + t) * inner;
                    ga[dst..dst + inner].copy_from_slice(&g[src..src + inner]);
                }
            }
            vec![Some(ga)]
        }))
    }

    /// Mean over `axis`, which is removed from the shape (rank-1 inputs give `[1]`).
    pub fn mean_axis(&self, a: &Var<F>, axis: usize) -> Result<Var<F>> {
        let shape = a.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("mean_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let inv = F::one() / F::from_usize(len);
        let mut data = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &a.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        data.iter_mut().for_each(|d| *d = *d * inv);
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.record(out, &[a], move |g, _| {
            let mut ga = vec![F::zero(); outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        ga[(o * len + l) * inner + i] = g[o * inner + i] * inv;
                    }
                }
            }
            vec![Some(ga)]
        }))
    }

    /// Average over the temporal and joint axes: `[N, C, T, V] → [N, C]`.
    pub fn global_avg_pool(&self, x: &Var<F>) -> Result<Var<F>> {
        let [n, c, t, v] = dims4("global_avg_pool", x)?;
        let flat = self.reshape(x, &[n, c, t * v])?;
        self.mean_axis(&flat, 2)
    }

    /// Right-multiplies the joint axis by an adjacency: `out[.., v] = Σ_w x[.., w]·a[w, v]`.
    pub fn graph_contract(&self, x: &Var<F>, a: &Var<F>) -> Result<Var<F>> {
        let xs = x.shape();
        let v = *xs.last().expect("rank >= 1");
        if a.shape() != [v, v] {
            return Err(Error::dim(
                "graph_contract",
                format!("features {xs:?} against adjacency {:?}", a.shape()),
            ));
        }
        let rows = x.value().numel() / v;
        let mut data = vec![F::zero(); rows * v];
        gemm(
            rows,
            v,
            v,
            MatRef::rows(x.data(), v),
            MatRef::rows(a.data(), v),
            F::zero(),
            &mut data,
        );
        let out = Tensor::new(xs, data)?;
        let (xv, av) = (x.arc(), a.arc());
        Ok(self.record(out, &[x, a], move |g, need| {
            let gx = need[0].then(|| {
                let mut gx = vec![F::zero(); rows * v];
                gemm(
                    rows,
                    v,
                    v,
                    MatRef::rows(g, v),
                    MatRef::transposed(av.data(), v),
                    F::zero(),
                    &mut gx,
                );
                gx
            });
            let ga = need[1].then(|| {
                let mut ga = vec![F::zero(); v * v];
                gemm(
                    v,
                    rows,
                    v,
                    MatRef::transposed(xv.data(), v),
                    MatRef::rows(g, v),
                    F::zero(),
                    &mut ga,
                );
                ga
            });
            vec![gx, ga]
        }))
    }

    /// 1×1 convolution over the channel axis of `[N, C_in, ...]`.
    pub fn pointwise_conv(&self, x: &Var<F>, w: &Var<F>, b: Option<&Var<F>>) -> Result<Var<F>> {
        let xs = x.shape().to_vec();
        if xs.len() < 2 || w.shape().len() != 2 || w.shape()[1] != xs[1] {
            return Err(Error::dim(
                "pointwise_conv",
                format!("input {xs:?} against weight {:?}", w.shape()),
            ));
        }
        let (n, ci, co) = (xs[0], xs[1], w.shape()[0]);
        let s: usize = xs[2..].iter().product();
        if let Some(b) = b {
            if b.shape() != [co] {
                return Err(Error::dim(
                    "pointwise_conv",
                    format!("bias {:?} for {co} output channels", b.shape()),
                ));
            }
        }
        let mut data = vec![F::zero(); n * co * s];
        data.par_chunks_mut(co * s).enumerate().for_each(|(i, out)| {
            let xi = &x.data()[i * ci * s..(i + 1) * ci * s];
            gemm(co, ci, s, MatRef::rows(w.data(), ci), MatRef::rows(xi, s), F::zero(), out);
            if let Some(b) = b {
                for (row, &bo) in out.chunks_mut(s).zip(b.data()) {
                    row.iter_mut().for_each(|v| *v += bo);
                }
            }
        });
        let mut out_shape = xs.clone();
        out_shape[1] = co;
        let out = Tensor::new(&out_shape, data)?;
        let (xv, wv) = (x.arc(), w.arc());
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.record(out, &inputs, move |g, need| {
            let gx = need[0].then(|| {
                let mut gx = vec![F::zero(); n * ci * s];
                gx.par_chunks_mut(ci * s).enumerate().for_each(|(i, gxi)| {
                    let gi = &g[i * co * s..(i + 1) * co * s];
                    gemm(ci, co, s, MatRef::transposed(wv.data(), ci), MatRef::rows(gi, s), F::zero(), gxi);
                });
                gx
            });
            let gw = need[1].then(|| {
                let mut gw = vec![F::zero(); co * ci];
                for i in 0..n {
                    let gi = &g[i * co * s..(i + 1) * co * s];
                    let xi = &xv.data()[i * ci * s..(i + 1) * ci * s];
                    gemm(co, s, ci, MatRef::rows(gi, s), MatRef::transposed(xi, s), F::one(), &mut gw);
                }
                gw
            });
            let mut grads = vec![gx, gw];
            if need.len() == 3 {
                grads.push(need[2].then(|| channel_sums(g, n, co, s)));
            }
            grads
        }))
    }

    /// Convolution along the temporal axis of `[N, C_in, T, V]` with a
    /// `[C_out, C_in, K]` kernel, zero padding `K/2` and the given stride.
    pub fn temporal_conv(
        &self,
        x: &Var<F>,
        w: &Var<F>,
        b: Option<&Var<F>>,
        stride: usize,
    ) -> Result<Var<F>> {
        let [n, ci, t, v] = dims4("temporal_conv", x)?;
        let ws = w.shape();
        if ws.len() != 3 || ws[1] != ci {
            return Err(Error::dim(
                "temporal_conv",
                format!("input {:?} against kernel {ws:?}", x.shape()),
            ));
        }
        let (co, k) = (ws[0], ws[2]);
        if k % 2 == 0 {
            return Err(Error::Config(format!("temporal kernel size must be odd, got {k}")));
        }
        if stride == 0 {
            return Err(Error::Config("temporal stride must be positive".into()));
        }
        if let Some(b) = b {
            if b.shape() != [co] {
                return Err(Error::dim(
                    "temporal_conv",
                    format!("bias {:?} for {co} output channels", b.shape()),
                ));
            }
        }
        let geo = ConvGeometry { ci, t, v, k, stride, t_out: (t - 1) / stride + 1 };
        let cols_len = ci * k * geo.t_out * v;
        let s = geo.t_out * v;
        let mut data = vec![F::zero(); n * co * s];
        data.par_chunks_mut(co * s).enumerate().for_each(|(i, out)| {
            let mut cols = vec![F::zero(); cols_len];
            geo.im2col(&x.data()[i * ci * t * v..(i + 1) * ci * t * v], &mut cols);
            gemm(co, ci * k, s, MatRef::rows(w.data(), ci * k), MatRef::rows(&cols, s), F::zero(), out);
            if let Some(b) = b {
                for (row, &bo) in out.chunks_mut(s).zip(b.data()) {
                    row.iter_mut().for_each(|v| *v += bo);
                }
            }
        });
        let out = Tensor::new(&[n, co, geo.t_out, v], data)?;
        let (xv, wv) = (x.arc(), w.arc());
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.record(out, &inputs, move |g, need| {
            let per_sample: Vec<(Option<Vec<F>>, Option<Vec<F>>)> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let gi = &g[i * co * s..(i + 1) * co * s];
                    let gx = need[0].then(|| {
                        let mut gcols = vec![F::zero(); cols_len];
                        gemm(ci * k, co, s, MatRef::transposed(wv.data(), ci * k), MatRef::rows(gi, s), F::zero(), &mut gcols);
                        let mut gx = vec![F::zero(); ci * t * v];
                        geo.col2im(&gcols, &mut gx);
                        gx
                    });
                    let gw = need[1].then(|| {
                        let mut cols = vec![F::zero(); cols_len];
                        geo.im2col(&xv.data()[i * ci * t * v..(i + 1) * ci * t * v], &mut cols);
                        let mut gw = vec![F::zero(); co * ci * k];
                        gemm(co, s, ci * k, MatRef::rows(gi, s), MatRef::transposed(&cols, s), F::zero(), &mut gw);
                        gw
                    });
                    (gx, gw)
                })
                .collect();
            let gx = need[0].then(|| {
                per_sample
                    .iter()
                    .flat_map(|(gx, _)| gx.as_ref().expect("computed").iter().copied())
                    .collect()
            });
            // Summed in sample order so results do not depend on the thread count.
            let gw = need[1].then(|| {
                let mut acc = vec![F::zero(); co * ci * k];
                for (_, gw) in &per_sample {
                    for (a, &v) in acc.iter_mut().zip(gw.as_ref().expect("computed")) {
                        *a += v;
                    }
                }
                acc
            });
            let mut grads = vec![gx, gw];
            if need.len() == 3 {
                grads.push(need[2].then(|| channel_sums(g, n, co, s)));
            }
            grads
        }))
    }

    /// Batch normalization with per-channel statistics along `axis`.
    ///
    /// In [`Mode::Train`] the batch moments are used and new running moments
    /// (momentum 0.1, unbiased variance) are returned; in [`Mode::Eval`] the
    /// given running moments are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &self,
        x: &Var<F>,
        axis: usize,
        scale: &Var<F>,
        shift: &Var<F>,
        running_mean: &Tensor<F>,
        running_var: &Tensor<F>,
        mode: Mode,
    ) -> Result<(Var<F>, Option<MomentUpdate<F>>)> {
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("batch_norm", format!("axis {axis} of {shape:?}")));
        }
        let (outer, c, inner) = split_axis(&shape, axis);
        for (what, t) in [
            ("scale", scale.value()),
            ("shift", shift.value()),
            ("running mean", running_mean),
            ("running var", running_var),
        ] {
            if t.shape() != [c] {
                return Err(Error::dim(
                    "batch_norm",
                    format!("{what} {:?} for {c} channels of {shape:?}", t.shape()),
                ));
            }
        }
        let eps = F::from_f64(BN_EPS);
        let count = outer * inner;
        let xd = x.data();
        let at = move |o: usize, ch: usize, i: usize| (o * c + ch) * inner + i;

        let (mean, var, update) = match mode {
            Mode::Train => {
                let m = F::from_usize(count);
                let mut mean = vec![F::zero(); c];
                let mut var = vec![F::zero(); c];
                for ch in 0..c {
                    let mut s = F::zero();
                    for o in 0..outer {
                        s += xd[at(o, ch, 0)..at(o, ch, 0) + inner].iter().copied().sum();
                    }
                    let mu = s / m;
                    let mut q = F::zero();
                    for o in 0..outer {
                        for &val in &xd[at(o, ch, 0)..at(o, ch, 0) + inner] {
                            q += (val - mu) * (val - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = q / m;
                }
                let mom = F::from_f64(BN_MOMENTUM);
                let unbias = if count > 1 {
                    m / F::from_usize(count - 1)
                } else {
                    F::one()
                };
                let new_mean = running_mean
                    .data()
                    .iter()
                    .zip(&mean)
                    .map(|(&r, &b)| (F::one() - mom) * r + mom * b)
                    .collect();
                let new_var = running_var
                    .data()
                    .iter()
                    .zip(&var)
                    .map(|(&r, &b)| (F::one() - mom) * r + mom * b * unbias)
                    .collect();
                let update = MomentUpdate {
                    mean: Tensor::new(&[c], new_mean)?,
                    var: Tensor::new(&[c], new_var)?,
                };
                (mean, var, Some(update))
            }
            Mode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec(), None),
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![F::zero(); xd.len()];
        let mut data = vec![F::zero(); xd.len()];
        for o in 0..outer {
            for ch in 0..c {
                let (g, b) = (scale.data()[ch], shift.data()[ch]);
                let base = at(o, ch, 0);
                for i in 0..inner {
                    let h = (xd[base + i] - mean[ch]) * inv_std[ch];
                    xhat[base + i] = h;
                    data[base + i] = g * h + b;
                }
            }
        }
        let out = Tensor::new(&shape, data)?;
        let scale_v = scale.arc();
        let var = self.record(out, &[x, scale, shift], move |g, need| {
            let mut gscale = vec![F::zero(); c];
            let mut gshift = vec![F::zero(); c];
            for o in 0..outer {
                for ch in 0..c {
                    let base = at(o, ch, 0);
                    for i in 0..inner {
                        gscale[ch] += g[base + i] * xhat[base + i];
                        gshift[ch] += g[base + i];
                    }
                }
            }
            let gx = need[0].then(|| {
                let mut gx = vec![F::zero(); g.len()];
                for ch in 0..c {
                    let k = scale_v.data()[ch] * inv_std[ch];
                    match mode {
                        Mode::Train => {
                            // d/dx of the normalized value under batch statistics.
                            let m = F::from_usize(count);
                            let (sg, sgx) = (gshift[ch], gscale[ch]);
                            for o in 0..outer {
                                let base = at(o, ch, 0);
                                for i in 0..inner {
                                    gx[base + i] = k / m * (m * g[base + i] - sg - xhat[base + i] * sgx);
                                }
                            }
                        }
                        Mode::Eval => {
                            for o in 0..outer {
                                let base = at(o, ch, 0);
                                for i in 0..inner {
                                    gx[base + i] = k * g[base + i];
                                }
                            }
                        }
                    }
                }
                gx
            });
            vec![gx, need[1].then_some(gscale), need[2].then_some(gshift)]
        });
        Ok((var, update))
    }

    /// Fully connected layer: `[N, C_in] · W[C_out, C_in]ᵀ + b`.
    pub fn linear(&self, x: &Var<F>, w: &Var<F>, b: &Var<F>) -> Result<Var<F>> {
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || b.shape() != [ws[0]] {
            return Err(Error::dim(
                "linear",
                format!("input {xs:?}, weight {ws:?}, bias {:?}", b.shape()),
            ));
        }
        let (n, ci, co) = (xs[0], xs[1], ws[0]);
        let mut data = vec![F::zero(); n * co];
        gemm(n, ci, co, MatRef::rows(x.data(), ci), MatRef::transposed(w.data(), ci), F::zero(), &mut data);
        for row in data.chunks_mut(co) {
            for (v, &bo) in row.iter_mut().zip(b.data()) {
                *v += bo;
            }
        }
        let out = Tensor::new(&[n, co], data)?;
        let (xv, wv) = (x.arc(), w.arc());
        Ok(self.record(out, &[x, w, b], move |g, need| {
            let gx = need[0].then(|| {
                let mut gx = vec![F::zero(); n * ci];
                gemm(n, co, ci, MatRef::rows(g, co), MatRef::rows(wv.data(), ci), F::zero(), &mut gx);
                gx
            });
            let gw = need[1].then(|| {
                let mut gw = vec![F::zero(); co * ci];
                gemm(co, n, ci, MatRef::transposed(g, co), MatRef::rows(xv.data(), ci), F::zero(), &mut gw);
                gw
            });
            let gb = need[2].then(|| channel_sums(g, n, co, 1));
            vec![gx, gw, gb]
        }))
    }

    /// Row-wise softmax of `[N, K]`.
    pub fn softmax(&self, x: &Var<F>) -> Result<Var<F>> {
        let [_, k] = dims2("softmax", x)?;
        let probs = softmax_rows(x.data(), k);
        let out = Tensor::new(x.shape(), probs.clone())?;
        Ok(self.record(out, &[x], move |g, _| {
            let mut gx = vec![F::zero(); g.len()];
            for ((gr, pr), gxr) in g.chunks(k).zip(probs.chunks(k)).zip(gx.chunks_mut(k)) {
                let dot: F = gr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                for ((o, &gi), &pi) in gxr.iter_mut().zip(gr).zip(pr) {
                    *o = pi * (gi - dot);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&self, logits: &Var<F>, labels: &[usize]) -> Result<Var<F>> {
        let [n, k] = dims2("cross_entropy", logits)?;
        if labels.len() != n {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
            return Err(Error::Index(format!(
                "label {y} of row {i} is out of range for {k} classes"
            )));
        }
        let probs = softmax_rows(logits.data(), k);
        let mut loss = F::zero();
        for (row, &y) in logits.data().chunks(k).zip(labels) {
            loss += log_sum_exp(row) - row[y];
        }
        let inv_n = F::one() / F::from_usize(n);
        let out = Tensor::scalar(loss * inv_n);
        let labels = labels.to_vec();
        Ok(self.record(out, &[logits], move |g, _| {
            let mut gx = probs.clone();
            for (row, &y) in gx.chunks_mut(k).zip(&labels) {
                row[y] -= F::one();
            }
            let factor = g[0] * inv_n;
            gx.iter_mut().for_each(|v| *v = *v * factor);
            vec![Some(gx)]
        }))
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Real>(data: &[F], k: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(k) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: F = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out
}

fn log_sum_exp<F: Real>(row: &[F]) -> F {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<F>().ln()
}

fn channel_sums<F: Real>(g: &[F], n: usize, c: usize, s: usize) -> Vec<F> {
    let mut out = vec![F::zero(); c];
    for i in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (i * c + ch) * s;
            *o += scatter_sum(&g[base..base + s]);
        }
    }
    out
}

fn dims4<F: Real>(op: &'static str, x: &Var<F>) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(x.shape())
        .map_err(|_| Error::dim(op, format!("expected [N, C, T, V], got {:?}", x.shape())))
}

fn dims2<F: Real>(op: &'static str, x: &Var<F>) -> Result<[usize; 2]> {
    <[usize; 2]>::try_from(x.shape())
        .map_err(|_| Error::dim(op, format!("expected [N, K], got {:?}", x.shape())))
}

pub(crate) fn permute_data<F: Copy>(data: &[F], shape: &[usize], perm: &[usize]) -> (Vec<F>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

/// Index bookkeeping for the unfolded (im2col) temporal convolution.
#[derive(Clone, Copy)]
struct ConvGeometry {
    ci: usize,
    t: usize,
    v: usize,
    k: usize,
    stride: usize,
    t_out: usize,
}

impl ConvGeometry {
    /// Input frame read by output frame `to` at tap `tap`, if inside the sequence.
    #[inline]
    fn source(&self, to: usize, tap: usize) -> Option<usize> {
        let pos = (to * self.stride + tap) as isize - (self.k / 2) as isize;
        (pos >= 0 && (pos as usize) < self.t).then_some(pos as usize)
    }

    /// `cols[(i·K + tap), (to·V + v)] = x[i, to·stride + tap − K/2, v]`, zero outside.
    fn im2col<F: Real>(&self, x: &[F], cols: &mut [F]) {
        let (v, row) = (self.v, self.t_out * self.v);
        for i in 0..self.ci {
            for tap in 0..self.k {
                let dst = &mut cols[(i * self.k + tap) * row..(i * self.k + tap + 1) * row];
                for to in 0..self.t_out {
                    let seg = &mut dst[to * v..(to + 1) * v];
                    match self.source(to, tap) {
                        Some(ti) => seg.copy_from_slice(&x[(i * self.t + ti) * v..(i * self.t + ti + 1) * v]),
                        None => seg.iter_mut().for_each(|e| *e = F::zero()),
                    }
                }
            }
        }
    }

    fn col2im<F: Real>(&self, cols: &[F], x: &mut [F]) {
        let (v, row) = (self.v, self.t_out * self.v);
        for i in 0..self.ci {
            for tap in 0..self.k {
                let src = &cols[(i * self.k + tap) * row..(i * self.k + tap + 1) * row];
                for to in 0..self.t_out {
                    if let Some(ti) = self.source(to, tap) {
                        let dst = &mut x[(i * self.t + ti) * v..(i * self.t + ti + 1) * v];
                        for (d, &s) in dst.iter_mut().zip(&src[to * v..(to + 1) * v]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}
