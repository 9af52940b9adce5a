//! Differentiable operations. Forward pass computes values eagerly; each op
//! attaches a backward closure that accumulates into its parents' gradient
//! buffers via `with_grad_buf`, so shared parents (diamonds, x⊙x) add up
//! naturally.

use super::shape::{broadcast_shapes, numel, row_major_strides, IndexMap};
use super::Tensor;
use crate::scalar::Scalar;

// c[m×n] += a[m×k] · b[k×n], row-major, ikj order for contiguous inner loops.
fn mm_acc<S: Scalar>(c: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

// c[m×n] += a[m×k] · bᵀ where b is n×k.
fn mm_nt_acc<S: Scalar>(c: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            crow[j] = crow[j] + acc;
        }
    }
}

// c[m×n] += aᵀ · b where a is k×m, b is k×n.
fn mm_tn_acc<S: Scalar>(c: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == S::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

fn broadcast_forward<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    name: &str,
    f: impl Fn(S, S) -> S,
) -> (Vec<usize>, Vec<S>, IndexMap, IndexMap) {
    let out_shape = broadcast_shapes(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!("{name}: shapes {:?} and {:?} not broadcastable", a.shape(), b.shape())
    });
    let amap = IndexMap::new(&out_shape, a.shape());
    let bmap = IndexMap::new(&out_shape, b.shape());
    let av = a.values();
    let bv = b.values();
    let n = numel(&out_shape);
    let mut vals = Vec::with_capacity(n);
    for i in 0..n {
        vals.push(f(av[amap.map(i)], bv[bmap.map(i)]));
    }
    drop(av);
    drop(bv);
    (out_shape, vals, amap, bmap)
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, other: &Tensor<S>) -> Tensor<S> {
        let (shape, vals, amap, bmap) = broadcast_forward(self, other, "add", |x, y| x + y);
        Tensor::from_op(shape, vals, vec![self.clone(), other.clone()], move |_| {
            Box::new(move |g, parents| {
                parents[0].with_grad_buf(|ga| {
                    for (i, &gg) in g.iter().enumerate() {
                        let j = amap.map(i);
                        ga[j] = ga[j] + gg;
                    }
                });
                parents[1].with_grad_buf(|gb| {
                    for (i, &gg) in g.iter().enumerate() {
                        let j = bmap.map(i);
                        gb[j] = gb[j] + gg;
                    }
                });
            })
        })
    }

    pub fn sub(&self, other: &Tensor<S>) -> Tensor<S> {
        let (shape, vals, amap, bmap) = broadcast_forward(self, other, "sub", |x, y| x - y);
        Tensor::from_op(shape, vals, vec![self.clone(), other.clone()], move |_| {
            Box::new(move |g, parents| {
                parents[0].with_grad_buf(|ga| {
                    for (i, &gg) in g.iter().enumerate() {
                        let j = amap.map(i);
                        ga[j] = ga[j] + gg;
                    }
                });
                parents[1].with_grad_buf(|gb| {
                    for (i, &gg) in g.iter().enumerate() {
                        let j = bmap.map(i);
                        gb[j] = gb[j] - gg;
                    }
                });
            })
        })
    }

    pub fn mul(&self, other: &Tensor<S>) -> Tensor<S> {
        let (shape, vals, amap, bmap) = broadcast_forward(self, other, "mul", |x, y| x * y);
        Tensor::from_op(shape, vals, vec![self.clone(), other.clone()], move |_| {
            Box::new(move |g, parents| {
                {
                    let bv = parents[1].values();
                    parents[0].with_grad_buf(|ga| {
                        for (i, &gg) in g.iter().enumerate() {
                            let j = amap.map(i);
                            ga[j] = ga[j] + gg * bv[bmap.map(i)];
                        }
                    });
                }
                let av = parents[0].values();
                parents[1].with_grad_buf(|gb| {
                    for (i, &gg) in g.iter().enumerate() {
                        let j = bmap.map(i);
                        gb[j] = gb[j] + gg * av[amap.map(i)];
                    }
                });
            })
        })
    }

    pub fn scale(&self, c: S) -> Tensor<S> {
        let vals: Vec<S> = self.values().iter().map(|&x| x * c).collect();
        Tensor::from_op(self.shape().to_vec(), vals, vec![self.clone()], move |_| {
            Box::new(move |g, parents| {
                parents[0].with_grad_buf(|ga| {
                    for (gv, &gg) in ga.iter_mut().zip(g) {
                        *gv = *gv + gg * c;
                    }
                });
            })
        })
    }

    /// Batched matrix product over the trailing two dims; leading dims
    /// broadcast. Gradients: dA = dC·Bᵀ, dB = Aᵀ·dC, accumulated per batch.
    pub fn matmul(&self, other: &Tensor<S>) -> Tensor<S> {
        let ash = self.shape().to_vec();
        let bsh = other.shape().to_vec();
        assert!(
            ash.len() >= 2 && bsh.len() >= 2,
            "matmul needs rank >= 2: {ash:?} x {bsh:?}"
        );
        let (p, q) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (q2, r) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        assert_eq!(q, q2, "matmul shape mismatch: {ash:?} x {bsh:?}");
        let batch = broadcast_shapes(&ash[..ash.len() - 2], &bsh[..bsh.len() - 2])
            .unwrap_or_else(|| panic!("matmul batch dims not broadcastable: {ash:?} x {bsh:?}"));
        let amap = IndexMap::new(&batch, &ash[..ash.len() - 2]);
        let bmap = IndexMap::new(&batch, &bsh[..bsh.len() - 2]);
        let nb = numel(&batch);
        let mut out_shape = batch;
        out_shape.push(p);
        out_shape.push(r);
        let mut vals = vec![S::zero(); nb * p * r];
        {
            let av = self.values();
            let bv = other.values();
            for ob in 0..nb {
                mm_acc(
                    &mut vals[ob * p * r..(ob + 1) * p * r],
                    &av[amap.map(ob) * p * q..][..p * q],
                    &bv[bmap.map(ob) * q * r..][..q * r],
                    p,
                    q,
                    r,
                );
            }
        }
        Tensor::from_op(out_shape, vals, vec![self.clone(), other.clone()], move |_| {
            Box::new(move |g, parents| {
                {
                    let bv = parents[1].values();
                    parents[0].with_grad_buf(|ga| {
                        for ob in 0..nb {
                            mm_nt_acc(
                                &mut ga[amap.map(ob) * p * q..][..p * q],
                                &g[ob * p * r..][..p * r],
                                &bv[bmap.map(ob) * q * r..][..q * r],
                                p,
                                r,
                                q,
                            );
                        }
                    });
                }
                let av = parents[0].values();
                parents[1].with_grad_buf(|gb| {
                    for ob in 0..nb {
                        mm_tn_acc(
                            &mut gb[bmap.map(ob) * q * r..][..q * r],
                            &av[amap.map(ob) * p * q..][..p * q],
                            &g[ob * p * r..][..p * r],
                            q,
                            p,
                            r,
                        );
                    }
                });
            })
        })
    }

    /// Numerically stable softmax over the last dim, with an optional
    /// additive mask (use −∞ to exclude positions; masked outputs are
    /// exactly 0). The mask must not require gradients.
    pub fn softmax_lastdim(&self, mask: Option<&Tensor<S>>) -> Tensor<S> {
        let sh = self.shape().to_vec();
        let width = *sh.last().expect("softmax on rank-0 tensor");
        assert!(width >= 1);
        let rows = self.len() / width;
        let madd = mask.map(|m| {
            assert!(!m.requires_grad(), "softmax mask must be a constant");
            let bc = broadcast_shapes(&sh, m.shape());
            assert_eq!(
                bc.as_deref(),
                Some(&sh[..]),
                "softmax mask shape {:?} not broadcastable onto {:?}",
                m.shape(),
                sh
            );
            (IndexMap::new(&sh, m.shape()), m.value_vec())
        });
        let av = self.values();
        let mut vals = vec![S::zero(); self.len()];
        for row in 0..rows {
            let base = row * width;
            let mut shifted = vec![S::zero(); width];
            let mut mx = S::neg_infinity();
            for c in 0..width {
                let mut x = av[base + c];
                assert!(!x.is_nan(), "softmax input contains NaN");
                if let Some((map, mv)) = &madd {
                    let a = mv[map.map(base + c)];
                    assert!(!a.is_nan(), "softmax mask contains NaN");
                    x = x + a;
                }
                shifted[c] = x;
                if x > mx {
                    mx = x;
                }
            }
            assert!(mx > S::neg_infinity(), "softmax row fully masked");
            let mut sum = S::zero();
            for v in &mut shifted {
                *v = (*v - mx).exp();
                sum = sum + *v;
            }
            for c in 0..width {
                vals[base + c] = shifted[c] / sum;
            }
        }
        drop(av);
        Tensor::from_op(sh, vals, vec![self.clone()], move |out_vals| {
            let y = out_vals.to_vec();
            Box::new(move |g, parents| {
                parents[0].with_grad_buf(|ga| {
                    for row in 0..rows {
                        let base = row * width;
                        let yr = &y[base..base + width];
                        let gr = &g[base..base + width];
                        let mut dot = S::zero();
                        for (&a, &b) in yr.iter().zip(gr) {
                            dot = dot + a * b;
                        }
                        for c in 0..width {
                            ga[base + c] = ga[base + c] + yr[c] * (gr[c] - dot);
                        }
                    }
                });
            })
        })
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Tensor<S> {
        let sh = self.shape().to_vec();
        assert!(axis < sh.len(), "mean axis {axis} out of range for shape {sh:?}");
        let outer = numel(&sh[..axis]);
        let len = sh[axis];
        let inner = numel(&sh[axis + 1..]);
        let mut out_shape = sh.clone();
        out_shape.remove(axis);
        let inv = S::one() / S::from_f(len as f64);
        let av = self.values();
        let mut vals = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for t in 0..len {
                let base = (o * len + t) * inner;
                let orow = &mut vals[o * inner..(o + 1) * inner];
                for (i, ov) in orow.iter_mut().enumerate() {
                    *ov = *ov + av[base + i];
                }
            }
        }
        for v in &mut vals {
            *v = *v * inv;
        }
        drop(av);
        Tensor::from_op(out_shape, vals, vec![self.clone()], move |_| {
            Box::new(move |g, parents| {
                parents[0].with_grad_buf(|ga| {
                    for o in 0..outer {
                        for t in 0..len {
                            let base = (o * len + t) * inner;
                            for i in 0..inner {
                                ga[base + i] = ga[base + i] + g[o * inner + i] * inv;
                            }
                        }
                    }
                });
            })
        })
    }

    pub fn sum_all(&self) -> Tensor<S> {
        let total = self.values().iter().fold(S::zero(), |a, &b| a + b);
        Tensor::from_op(vec![], vec![total], vec![self.clone()], |_| {
            Box::new(|g, parents| {
                let gg = g[0];
                parents[0].with_grad_buf(|ga| {
                    for v in ga.iter_mut() {
                        *v = *v + gg;
                    }
                });
            })
        })
    }

    pub fn mean_all(&self) -> Tensor<S> {
        let inv = S::one() / S::from_f(self.len() as f64);
        self.sum_all().scale(inv)
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Tensor<S> {
        assert_eq!(
            numel(new_shape),
            self.len(),
            "reshape {:?} -> {new_shape:?} changes element count",
            self.shape()
        );
        let vals = self.value_vec();
        Tensor::from_op(new_shape.to_vec(), vals, vec![self.clone()], |_| {
            Box::new(|g, parents| {
                parents[0].with_grad_buf(|ga| {
                    for (gv, &gg) in ga.iter_mut().zip(g) {
                        *gv = *gv + gg;
                    }
                });
            })
        })
    }

    pub fn transpose(&self, ax0: usize, ax1: usize) -> Tensor<S> {
        let sh = self.shape().to_vec();
        assert!(
            ax0 < sh.len() && ax1 < sh.len(),
            "transpose axes ({ax0},{ax1}) out of range for shape {sh:?}"
        );
        let mut out_shape = sh.clone();
        out_shape.swap(ax0, ax1);
        let mut perm_strides = row_major_strides(&sh);
        perm_strides.swap(ax0, ax1);
        let out_strides = row_major_strides(&out_shape);
        let n = self.len();
        let source_of = move |k: usize| -> usize {
            let mut rem = k;
            let mut src = 0;
            for (os, ps) in out_strides.iter().zip(&perm_strides) {
                src += (rem / os) * ps;
                rem %= os;
            }
            src
        };
        let av = self.values();
        let vals: Vec<S> = (0..n).map(|k| av[source_of(k)]).collect();
        drop(av);
        Tensor::from_op(out_shape, vals, vec![self.clone()], move |_| {
            Box::new(move |g, parents| {
                parents[0].with_grad_buf(|ga| {
                    for (k, &gg) in g.iter().enumerate() {
                        let src = source_of(k);
                        ga[src] = ga[src] + gg;
                    }
                });
            })
        })
    }

    pub fn concat(parts: &[Tensor<S>], axis: usize) -> Tensor<S> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let rank = parts[0].rank();
        assert!(axis < rank, "concat axis {axis} out of range for rank {rank}");
        let base_shape = parts[0].shape().to_vec();
        for p in &parts[1..] {
            assert_eq!(p.rank(), rank, "concat rank mismatch");
            for d in 0..rank {
                assert!(
                    d == axis || p.shape()[d] == base_shape[d],
                    "concat shape mismatch off axis {axis}: {:?} vs {base_shape:?}",
                    p.shape()
                );
            }
        }
        let outer = numel(&base_shape[..axis]);
        let inner = numel(&base_shape[axis + 1..]);
        let blocks: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total_block: usize = blocks.iter().sum();
        let mut out_shape = base_shape;
        out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut vals = Vec::with_capacity(outer * total_block);
        for o in 0..outer {
            for (pi, p) in parts.iter().enumerate() {
                let pv = p.values();
                vals.extend_from_slice(&pv[o * blocks[pi]..(o + 1) * blocks[pi]]);
            }
        }
        Tensor::from_op(out_shape, vals, parts.to_vec(), move |_| {
            Box::new(move |g, parents| {
                let mut offset = 0;
                for (pi, p) in parents.iter().enumerate() {
                    let block = blocks[pi];
                    p.with_grad_buf(|gp| {
                        for o in 0..outer {
                            let src = &g[o * total_block + offset..][..block];
                            let dst = &mut gp[o * block..][..block];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                    });
                    offset += block;
                }
            })
        })
    }

    /// Embedding lookup: rows of a [V, d] matrix by integer id. The gradient
    /// scatter-adds back into the looked-up rows.
    pub fn gather_rows(&self, ids: &[u32]) -> Tensor<S> {
        assert_eq!(self.rank(), 2, "gather_rows expects a matrix, got {:?}", self.shape());
        let v = self.shape()[0];
        let d = self.shape()[1];
        for &id in ids {
            assert!((id as usize) < v, "index {id} out of vocabulary of size {v}");
        }
        let av = self.values();
        let mut vals = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            vals.extend_from_slice(&av[id as usize * d..][..d]);
        }
        drop(av);
        let ids: Vec<u32> = ids.to_vec();
        let n = ids.len();
        Tensor::from_op(vec![n, d], vals, vec![self.clone()], move |_| {
            Box::new(move |g, parents| {
                parents[0].with_grad_buf(|ga| {
                    for (t, &id) in ids.iter().enumerate() {
                        let dst = &mut ga[id as usize * d..][..d];
                        let src = &g[t * d..][..d];
                        for (x, &y) in dst.iter_mut().zip(src) {
                            *x = *x + y;
                        }
                    }
                });
            })
        })
    }

    /// Contiguous slice along axis 0.
    pub fn slice_rows(&self, start: usize, len: usize) -> Tensor<S> {
        let sh = self.shape().to_vec();
        assert!(!sh.is_empty(), "slice_rows on rank-0 tensor");
        let rows = sh[0];
        let rest = numel(&sh[1..]);
        assert!(
            start + len <= rows,
            "slice_rows {start}..{} out of range for {rows} rows",
            start + len
        );
        let mut out_shape = sh;
        out_shape[0] = len;
        let vals = self.values()[start * rest..(start + len) * rest].to_vec();
        Tensor::from_op(out_shape, vals, vec![self.clone()], move |_| {
            Box::new(move |g, parents| {
                parents[0].with_grad_buf(|ga| {
                    let dst = &mut ga[start * rest..(start + len) * rest];
                    for (gv, &gg) in dst.iter_mut().zip(g) {
                        *gv = *gv + gg;
                    }
                });
            })
        })
    }

    /// Layer normalization over the last dim with learned gain and bias,
    /// population variance, eps 1e-5.
    pub fn layer_norm(&self, gain: &Tensor<S>, bias: &Tensor<S>) -> Tensor<S> {
        let sh = self.shape().to_vec();
        let d = *sh.last().expect("layer_norm on rank-0 tensor");
        assert_eq!(gain.shape(), &[d], "layer_norm gain shape {:?} wants [{d}]", gain.shape());
        assert_eq!(bias.shape(), &[d], "layer_norm bias shape {:?} wants [{d}]", bias.shape());
        let rows = self.len() / d;
        let eps = S::from_f(1e-5);
        let inv_d = S::one() / S::from_f(d as f64);
        let av = self.values();
        let gv = gain.values();
        let bv = bias.values();
        let mut xhat = vec![S::zero(); self.len()];
        let mut inv_std = vec![S::zero(); rows];
        let mut vals = vec![S::zero(); self.len()];
        for r in 0..rows {
            let row = &av[r * d..(r + 1) * d];
            let mean = row.iter().fold(S::zero(), |a, &b| a + b) * inv_d;
            let var = row
                .iter()
                .fold(S::zero(), |a, &b| a + (b - mean) * (b - mean))
                * inv_d;
            let istd = S::one() / (var + eps).sqrt();
            inv_std[r] = istd;
            for c in 0..d {
                let xh = (row[c] - mean) * istd;
                xhat[r * d + c] = xh;
                vals[r * d + c] = gv[c] * xh + bv[c];
            }
        }
        drop(av);
        drop(gv);
        drop(bv);
        let parents = vec![self.clone(), gain.clone(), bias.clone()];
        Tensor::from_op(sh, vals, parents, move |_| {
            Box::new(move |g, parents| {
                let gainv = parents[1].values();
                parents[0].with_grad_buf(|gx| {
                    let mut gh = vec![S::zero(); d];
                    for (r, &istd) in inv_std.iter().enumerate() {
                        let base = r * d;
                        let mut mean_gh = S::zero();
                        let mut mean_ghx = S::zero();
                        for c in 0..d {
                            let v = g[base + c] * gainv[c];
                            gh[c] = v;
                            mean_gh = mean_gh + v;
                            mean_ghx = mean_ghx + v * xhat[base + c];
                        }
                        mean_gh = mean_gh * inv_d;
                        mean_ghx = mean_ghx * inv_d;
                        for c in 0..d {
                            gx[base + c] = gx[base + c]
                                + istd * (gh[c] - mean_gh - xhat[base + c] * mean_ghx);
                        }
                    }
                });
                drop(gainv);
                parents[1].with_grad_buf(|gg| {
                    for r in 0..rows {
                        for c in 0..d {
                            gg[c] = gg[c] + g[r * d + c] * xhat[r * d + c];
                        }
                    }
                });
                parents[2].with_grad_buf(|gb| {
                    for r in 0..rows {
                        for c in 0..d {
                            gb[c] = gb[c] + g[r * d + c];
                        }
                    }
                });
            })
        })
    }

    /// GELU with the tanh approximation (the documented nonlinearity choice).
    pub fn gelu(&self) -> Tensor<S> {
        let c = S::from_f((2.0 / std::f64::consts::PI).sqrt());
        let k = S::from_f(0.044715);
        let half = S::from_f(0.5);
        let three = S::from_f(3.0);
        let vals: Vec<S> = self
            .values()
            .iter()
            .map(|&x| {
                let u = c * (x + k * x * x * x);
                half * x * (S::one() + u.tanh())
            })
            .collect();
        Tensor::from_op(self.shape().to_vec(), vals, vec![self.clone()], move |_| {
            Box::new(move |g, parents| {
                let xv = parents[0].values();
                parents[0].with_grad_buf(|ga| {
                    for (i, &gg) in g.iter().enumerate() {
                        let x = xv[i];
                        let u = c * (x + k * x * x * x);
                        let t = u.tanh();
                        let du = c * (S::one() + three * k * x * x);
                        let dy = half * (S::one() + t) + half * x * (S::one() - t * t) * du;
                        ga[i] = ga[i] + gg * dy;
                    }
                });
            })
        })
    }

    /// New constant leaf sharing this tensor's current values; cuts the
    /// graph (no gradient flows through).
    pub fn detach(&self) -> Tensor<S> {
        Tensor::constant(self.shape().to_vec(), self.value_vec())
    }
}

/// Mean cross-entropy of `logits[t]` against `targets[t]` over positions
/// where `mask[t]`, computed with a stable log-sum-exp.
pub fn cross_entropy_masked<S: Scalar>(
    logits: &Tensor<S>,
    targets: &[u32],
    mask: &[bool],
) -> Tensor<S> {
    assert_eq!(logits.rank(), 2, "cross_entropy expects [L,V] logits, got {:?}", logits.shape());
    let l = logits.shape()[0];
    let v = logits.shape()[1];
    assert_eq!(targets.len(), l, "targets length {} wants {l}", targets.len());
    assert_eq!(mask.len(), l, "mask length {} wants {l}", mask.len());
    let m_count = mask.iter().filter(|&&b| b).count();
    assert!(m_count > 0, "cross-entropy mask selects no positions");
    for (t, &tgt) in targets.iter().enumerate() {
        if mask[t] {
            assert!((tgt as usize) < v, "target {tgt} out of vocabulary of size {v}");
        }
    }
    let inv_m = S::one() / S::from_f(m_count as f64);
    let av = logits.values();
    let mut probs = vec![S::zero(); l * v];
    let mut loss = S::zero();
    for t in 0..l {
        if !mask[t] {
            continue;
        }
        let row = &av[t * v..(t + 1) * v];
        let mx = row.iter().fold(S::neg_infinity(), |a, &b| if b > a { b } else { a });
        let mut sum = S::zero();
        for c in 0..v {
            let e = (row[c] - mx).exp();
            probs[t * v + c] = e;
            sum = sum + e;
        }
        for c in 0..v {
            probs[t * v + c] = probs[t * v + c] / sum;
        }
        let lse = mx + sum.ln();
        loss = loss + (lse - row[targets[t] as usize]);
    }
    loss = loss * inv_m;
    drop(av);
    let targets: Vec<u32> = targets.to_vec();
    let mask: Vec<bool> = mask.to_vec();
    Tensor::from_op(vec![], vec![loss], vec![logits.clone()], move |_| {
        Box::new(move |g, parents| {
            let gg = g[0] * inv_m;
            parents[0].with_grad_buf(|ga| {
                for t in 0..l {
                    if !mask[t] {
                        continue;
                    }
                    let tgt = targets[t] as usize;
                    for c in 0..v {
                        let delta = if c == tgt { S::one() } else { S::zero() };
                        ga[t * v + c] = ga[t * v + c] + gg * (probs[t * v + c] - delta);
                    }
                }
            });
        })
    })
}

/// Mean squared error over all elements of two same-shape tensors.
pub fn mse<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert_eq!(a.shape(), b.shape(), "mse shape mismatch: {:?} vs {:?}", a.shape(), b.shape());
    let n = a.len();
    let inv_n = S::one() / S::from_f(n as f64);
    let av = a.values();
    let bv = b.values();
    let mut loss = S::zero();
    for i in 0..n {
        let d = av[i] - bv[i];
        loss = loss + d * d;
    }
    loss = loss * inv_n;
    drop(av);
    drop(bv);
    let two = S::from_f(2.0);
    Tensor::from_op(vec![], vec![loss], vec![a.clone(), b.clone()], move |_| {
        Box::new(move |g, parents| {
            let gg = g[0] * two * inv_n;
            {
                let av = parents[0].values();
                let bv = parents[1].values();
                parents[0].with_grad_buf(|ga| {
                    for i in 0..n {
                        ga[i] = ga[i] + gg * (av[i] - bv[i]);
                    }
                });
            }
            let av = parents[0].values();
            let bv = parents[1].values();
            parents[1].with_grad_buf(|gb| {
                for i in 0..n {
                    gb[i] = gb[i] - gg * (av[i] - bv[i]);
                }
            });
        })
    })
}
