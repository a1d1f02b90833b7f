//! Reverse-mode differentiation over a recorded sequence of tensor ops.
//!
//! Parameters are referenced by index into a borrowed `ModelParams`; only
//! activations live on the tape. `backward` walks the tape once in reverse.

use crate::error::{shape, Error, Result};
use crate::params::{is_trainable, Gradients, ModelParams};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// New running statistics produced by a training-mode forward pass.
pub type BnUpdates<T> = Vec<(String, Tensor<T>)>;

pub fn apply_bn_updates<T: Scalar>(params: &mut ModelParams<T>, updates: BnUpdates<T>) -> Result<()> {
    for (name, value) in updates {
        let slot = params.get_mut(&name).ok_or_else(|| shape(format!("unknown statistic {name}")))?;
        *slot = value;
    }
    Ok(())
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Pad { x: usize, top: usize, left: usize },
    Conv { x: usize, w: usize, b: usize },
    LeakyRelu { x: usize, slope: T },
    BatchNorm { x: usize, gamma: usize, beta: usize, mean: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    MaxPool { x: usize, argmax: Vec<usize> },
    Upsample { x: usize },
    Concat { a: usize, b: usize },
    Crop { x: usize, top: usize, left: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<'p, T: Scalar> {
    params: &'p ModelParams<T>,
    mode: Mode,
    nodes: Vec<Node<T>>,
    bn_updates: BnUpdates<T>,
}

/// Index reflected into `[0, n)` about the first and last samples (the edge
/// sample is not repeated). A length-1 axis maps everything to 0.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn im2col<T: Scalar>(x: &Tensor<T>, kh: usize, kw: usize) -> (Vec<T>, usize, usize) {
    let (n, c, h, w) = x.nchw().expect("rank 4");
    let (ho, wo) = (h - kh + 1, w - kw + 1);
    let p = ho * wo;
    let cols_n = n * p;
    let mut cols = vec![T::zero(); c * kh * kw * cols_n];
    let xd = x.data();
    for ci in 0..c {
        for dy in 0..kh {
            for dx in 0..kw {
                let row = ((ci * kh + dy) * kw + dx) * cols_n;
                for s in 0..n {
                    let base = (s * c + ci) * h * w;
                    for oy in 0..ho {
                        let src = base + (oy + dy) * w + dx;
                        let dst = row + s * p + oy * wo;
                        cols[dst..dst + wo].copy_from_slice(&xd[src..src + wo]);
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

fn col2im<T: Scalar>(cols: &[T], dx: &mut [T], dims: (usize, usize, usize, usize), kh: usize, kw: usize) {
    let (n, c, h, w) = dims;
    let (ho, wo) = (h - kh + 1, w - kw + 1);
    let p = ho * wo;
    let cols_n = n * p;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * cols_n;
                for s in 0..n {
                    let base = (s * c + ci) * h * w;
                    for oy in 0..ho {
                        let dst = base + (oy + ky) * w + kx;
                        let src = row + s * p + oy * wo;
                        for (d, &v) in dx[dst..dst + wo].iter_mut().zip(&cols[src..src + wo]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

fn add_into<'a, T: Scalar>(slot: &'a mut Option<Tensor<T>>, dims: &[usize]) -> &'a mut [T] {
    slot.get_or_insert_with(|| Tensor::zeros(dims)).data_mut()
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ModelParams<T>, mode: Mode) -> Self {
        Self { params, mode, nodes: Vec::new(), bn_updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn take_bn_updates(&mut self) -> BnUpdates<T> {
        std::mem::take(&mut self.bn_updates)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn param(&self, name: &str) -> Result<(usize, &'p Tensor<T>)> {
        let idx = self.params.index_of(name)?;
        Ok((idx, self.params.by_index(idx)))
    }

    pub fn input(&mut self, x: Tensor<T>) -> Result<Var> {
        x.nchw()?;
        Ok(self.push(x, Op::Input))
    }

    /// Reflection padding by (top, bottom, left, right) samples.
    pub fn pad(&mut self, x: Var, pads: [usize; 4]) -> Var {
        let [top, bottom, left, right] = pads;
        if pads == [0; 4] {
            return x;
        }
        let src = &self.nodes[x.0].value;
        let (n, c, h, w) = src.nchw().expect("rank 4");
        let (ph, pw) = (h + top + bottom, w + left + right);
        let mut out = Vec::with_capacity(n * c * ph * pw);
        let sd = src.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..ph {
                let r = reflect_index(i as isize - top as isize, h);
                for j in 0..pw {
                    out.push(sd[base + r * w + reflect_index(j as isize - left as isize, w)]);
                }
            }
        }
        let value = Tensor::new(vec![n, c, ph, pw], out).expect("consistent dims");
        self.push(value, Op::Pad { x: x.0, top, left })
    }

    /// Unpadded stride-1 convolution with `{name}.weight` (Co, C, kh, kw)
    /// and `{name}.bias` (Co).
    pub fn conv(&mut self, x: Var, name: &str) -> Result<Var> {
        let (wi, weight) = self.param(&format!("{name}.weight"))?;
        let (bi, bias) = self.param(&format!("{name}.bias"))?;
        let src = &self.nodes[x.0].value;
        let (n, c, h, w) = src.nchw()?;
        let [co, ci, kh, kw] = weight.dims()[..] else {
            return Err(shape(format!("{name}.weight must be rank 4")));
        };
        if ci != c || bias.dims() != [co] {
            return Err(shape(format!("{name}: weight {:?} / bias {:?} vs input channels {c}", weight.dims(), bias.dims())));
        }
        if h < kh || w < kw {
            return Err(shape(format!("{name}: input {h}x{w} smaller than kernel {kh}x{kw}")));
        }
        let (cols, ho, wo) = im2col(src, kh, kw);
        let p = ho * wo;
        let k = c * kh * kw;
        let mut prod = vec![T::zero(); co * n * p];
        T::gemm(false, false, co, n * p, k, weight.data(), &cols, T::zero(), &mut prod);
        let mut out = vec![T::zero(); n * co * p];
        for s in 0..n {
            for o in 0..co {
                let b = bias.data()[o];
                let src = &prod[o * n * p + s * p..o * n * p + (s + 1) * p];
                let dst = &mut out[(s * co + o) * p..(s * co + o + 1) * p];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v + b;
                }
            }
        }
        let value = Tensor::new(vec![n, co, ho, wo], out)?;
        Ok(self.push(value, Op::Conv { x: x.0, w: wi, b: bi }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::from_f64_lossy(slope);
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| if v > T::zero() { v } else { v * slope }).collect();
        let value = Tensor::new(src.dims().to_vec(), data).expect("same dims");
        self.push(value, Op::LeakyRelu { x: x.0, slope })
    }

    /// Per-channel batch normalization with `{name}.gamma`, `{name}.beta`
    /// and running statistics `{name}.running_mean` / `{name}.running_var`.
    pub fn batch_norm(&mut self, x: Var, name: &str, eps: f64, momentum: f64) -> Result<Var> {
        let (gi, gamma) = self.param(&format!("{name}.gamma"))?;
        let (bi, beta) = self.param(&format!("{name}.beta"))?;
        let rm_name = format!("{name}.running_mean");
        let rv_name = format!("{name}.running_var");
        let (_, running_mean) = self.param(&rm_name)?;
        let (_, running_var) = self.param(&rv_name)?;
        let src = &self.nodes[x.0].value;
        let (n, c, h, w) = src.nchw()?;
        for t in [gamma, beta, running_mean, running_var] {
            if t.dims() != [c] {
                return Err(shape(format!("{name}: statistics {:?} vs {c} channels", t.dims())));
            }
        }
        let hw = h * w;
        let m = (n * hw) as f64;
        let sd = src.data();
        let batch_stats = self.mode == Mode::Train;
        let mut mean = vec![T::zero(); c];
        let mut inv_std = vec![T::zero(); c];
        let mut new_rm = running_mean.clone();
        let mut new_rv = running_var.clone();
        for ch in 0..c {
            let (mu, var) = if batch_stats {
                let mut sum = 0.0;
                for s in 0..n {
                    sum += sd[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mu = sum / m;
                let mut sq = 0.0;
                for s in 0..n {
                    sq += sd[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>();
                }
                let var = sq / m;
                let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
                let rm = &mut new_rm.data_mut()[ch];
                *rm = T::from_f64_lossy((1.0 - momentum) * rm.as_f64() + momentum * mu);
                let rv = &mut new_rv.data_mut()[ch];
                *rv = T::from_f64_lossy((1.0 - momentum) * rv.as_f64() + momentum * unbiased);
                (mu, var)
            } else {
                (running_mean.data()[ch].as_f64(), running_var.data()[ch].as_f64())
            };
            mean[ch] = T::from_f64_lossy(mu);
            inv_std[ch] = T::from_f64_lossy(1.0 / (var + eps).sqrt());
        }
        let mut out = vec![T::zero(); sd.len()];
        for s in 0..n {
            for ch in 0..c {
                let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
                let range = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                for (o, &v) in out[range.clone()].iter_mut().zip(&sd[range]) {
                    *o = g * (v - mu) * is + b;
                }
            }
        }
        if batch_stats {
            self.bn_updates.push((rm_name, new_rm));
            self.bn_updates.push((rv_name, new_rv));
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(value, Op::BatchNorm { x: x.0, gamma: gi, beta: bi, mean, inv_std, batch_stats }))
    }

    /// 2x2 max pooling with stride 2; H and W must be even.
    pub fn max_pool(&mut self, x: Var) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let (n, c, h, w) = src.nchw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape(format!("max pool needs even dims, got {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let sd = src.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for idx in [best + 1, best + w, best + w + 1] {
                        if sd[idx] > sd[best] {
                            best = idx;
                        }
                    }
                    out.push(sd[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool { x: x.0, argmax }))
    }

    /// Nearest-neighbour upsampling by 2 along H and W.
    pub fn upsample(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let (n, c, h, w) = src.nchw().expect("rank 4");
        let sd = src.data();
        let mut out = Vec::with_capacity(n * c * h * w * 4);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..2 * h {
                for j in 0..2 * w {
                    out.push(sd[base + (i / 2) * w + j / 2]);
                }
            }
        }
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out).expect("consistent dims");
        self.push(value, Op::Upsample { x: x.0 })
    }

    /// Channel concatenation `[a, b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (n, ca, h, w) = ta.nchw()?;
        let (nb, cb, hb, wb) = tb.nchw()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape(format!("concat of {:?} and {:?}", ta.dims(), tb.dims())));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for s in 0..n {
            out.extend_from_slice(&ta.data()[s * ca * hw..(s + 1) * ca * hw]);
            out.extend_from_slice(&tb.data()[s * cb * hw..(s + 1) * cb * hw]);
        }
        let value = Tensor::new(vec![n, ca + cb, h, w], out)?;
        Ok(self.push(value, Op::Concat { a: a.0, b: b.0 }))
    }

    pub fn crop(&mut self, x: Var, top: usize, left: usize, height: usize, width: usize) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let (n, c, h, w) = src.nchw()?;
        if top + height > h || left + width > w {
            return Err(shape(format!("crop {height}x{width} at ({top},{left}) outside {h}x{w}")));
        }
        if (top, left, height, width) == (0, 0, h, w) {
            return Ok(x);
        }
        let sd = src.data();
        let mut out = Vec::with_capacity(n * c * height * width);
        for plane in 0..n * c {
            for i in 0..height {
                let start = plane * h * w + (top + i) * w + left;
                out.extend_from_slice(&sd[start..start + width]);
            }
        }
        let value = Tensor::new(vec![n, c, height, width], out)?;
        Ok(self.push(value, Op::Crop { x: x.0, top, left }))
    }

    /// Propagates `seed` (the gradient of a scalar objective with respect to
    /// `out`) back to every parameter used on the tape.
    pub fn backward(&self, out: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.dims() != self.nodes[out.0].value.dims() {
            return Err(shape(format!("seed {:?} vs output {:?}", seed.dims(), self.nodes[out.0].value.dims())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads = Gradients::zeros_like(self.params);
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let gd = g.data();
            match &node.op {
                Op::Input => {}
                Op::Pad { x, top, left } => {
                    let dims = self.nodes[*x].value.dims().to_vec();
                    let (_, _, h, w) = (dims[0], dims[1], dims[2], dims[3]);
                    let (_, _, ph, pw) = node.value.nchw()?;
                    let dx = add_into(&mut grads[*x], &dims);
                    for plane in 0..dims[0] * dims[1] {
                        for r in 0..ph {
                            let sr = reflect_index(r as isize - *top as isize, h);
                            for c in 0..pw {
                                let sc = reflect_index(c as isize - *left as isize, w);
                                dx[plane * h * w + sr * w + sc] += gd[(plane * ph + r) * pw + c];
                            }
                        }
                    }
                }
                Op::Conv { x, w, b } => {
                    let xin = &self.nodes[*x].value;
                    let (n, c, h, wd) = xin.nchw()?;
                    let weight = self.params.by_index(*w);
                    let (co, kh, kw) = (weight.dims()[0], weight.dims()[2], weight.dims()[3]);
                    let (_, _, ho, wo) = node.value.nchw()?;
                    let p = ho * wo;
                    let k = c * kh * kw;
                    // gradient laid out as (Co, N * P) to match the im2col product
                    let mut gy = vec![T::zero(); co * n * p];
                    for s in 0..n {
                        for o in 0..co {
                            gy[o * n * p + s * p..o * n * p + (s + 1) * p]
                                .copy_from_slice(&gd[(s * co + o) * p..(s * co + o + 1) * p]);
                        }
                    }
                    let (cols, _, _) = im2col(xin, kh, kw);
                    pgrads.accumulate(*w, weight.dims(), |dw| T::gemm(false, true, co, k, n * p, &gy, &cols, T::one(), dw));
                    pgrads.accumulate(*b, &[co], |db| {
                        for o in 0..co {
                            db[o] += gy[o * n * p..(o + 1) * n * p].iter().copied().sum::<T>();
                        }
                    });
                    let mut dcols = cols;
                    T::gemm(true, false, k, n * p, co, weight.data(), &gy, T::zero(), &mut dcols);
                    let dx = add_into(&mut grads[*x], &[n, c, h, wd]);
                    col2im(&dcols, dx, (n, c, h, wd), kh, kw);
                }
                Op::LeakyRelu { x, slope } => {
                    let xin = &self.nodes[*x].value;
                    let dx = add_into(&mut grads[*x], xin.dims());
                    for ((d, &v), &gv) in dx.iter_mut().zip(xin.data()).zip(gd) {
                        *d += if v > T::zero() { gv } else { gv * *slope };
                    }
                }
                Op::BatchNorm { x, gamma, beta, mean, inv_std, batch_stats } => {
                    let xin = &self.nodes[*x].value;
                    let (n, c, h, w) = xin.nchw()?;
                    let hw = h * w;
                    let m = T::from_usize(n * hw).expect("count fits");
                    let gam = self.params.by_index(*gamma);
                    let xd = xin.data();
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    for s in 0..n {
                        for ch in 0..c {
                            let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                            for (&v, &gv) in xd[r.clone()].iter().zip(&gd[r]) {
                                dgamma[ch] += gv * (v - mean[ch]) * inv_std[ch];
                                dbeta[ch] += gv;
                            }
                        }
                    }
                    let dx = add_into(&mut grads[*x], xin.dims());
                    for s in 0..n {
                        for ch in 0..c {
                            let (g, is) = (gam.data()[ch], inv_std[ch]);
                            let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                            for ((d, &v), &gv) in dx[r.clone()].iter_mut().zip(&xd[r.clone()]).zip(&gd[r]) {
                                *d += if *batch_stats {
                                    let xhat = (v - mean[ch]) * is;
                                    g * is / m * (m * gv - dbeta[ch] - xhat * dgamma[ch])
                                } else {
                                    gv * g * is
                                };
                            }
                        }
                    }
                    pgrads.accumulate(*gamma, &[c], |t| t.iter_mut().zip(&dgamma).for_each(|(a, &b)| *a += b));
                    pgrads.accumulate(*beta, &[c], |t| t.iter_mut().zip(&dbeta).for_each(|(a, &b)| *a += b));
                }
                Op::MaxPool { x, argmax } => {
                    let dims = self.nodes[*x].value.dims().to_vec();
                    let dx = add_into(&mut grads[*x], &dims);
                    for (&idx, &gv) in argmax.iter().zip(gd) {
                        dx[idx] += gv;
                    }
                }
                Op::Upsample { x } => {
                    let dims = self.nodes[*x].value.dims().to_vec();
                    let (h, w) = (dims[2], dims[3]);
                    let dx = add_into(&mut grads[*x], &dims);
                    for plane in 0..dims[0] * dims[1] {
                        for i in 0..2 * h {
                            for j in 0..2 * w {
                                dx[plane * h * w + (i / 2) * w + j / 2] += gd[(plane * 2 * h + i) * 2 * w + j];
                            }
                        }
                    }
                }
                Op::Concat { a, b } => {
                    let (n, ca, h, w) = self.nodes[*a].value.nchw()?;
                    let cb = self.nodes[*b].value.nchw()?.1;
                    let hw = h * w;
                    {
                        let da = add_into(&mut grads[*a], &[n, ca, h, w]);
                        for s in 0..n {
                            let src = &gd[s * (ca + cb) * hw..(s * (ca + cb) + ca) * hw];
                            da[s * ca * hw..(s + 1) * ca * hw].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                        }
                    }
                    let db = add_into(&mut grads[*b], &[n, cb, h, w]);
                    for s in 0..n {
                        let src = &gd[(s * (ca + cb) + ca) * hw..(s + 1) * (ca + cb) * hw];
                        db[s * cb * hw..(s + 1) * cb * hw].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                    }
                }
                Op::Crop { x, top, left } => {
                    let dims = self.nodes[*x].value.dims().to_vec();
                    let (h, w) = (dims[2], dims[3]);
                    let (_, _, ch, cw) = node.value.nchw()?;
                    let dx = add_into(&mut grads[*x], &dims);
                    for plane in 0..dims[0] * dims[1] {
                        for i in 0..ch {
                            let dst = plane * h * w + (top + i) * w + left;
                            let src = (plane * ch + i) * cw;
                            dx[dst..dst + cw].iter_mut().zip(&gd[src..src + cw]).for_each(|(d, &v)| *d += v);
                        }
                    }
                }
            }
        }
        for (idx, g) in pgrads.grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient { name: self.params.name(idx).to_string() });
                }
            }
            debug_assert!(g.is_none() || is_trainable(self.params.name(idx)));
        }
        Ok(pgrads)
    }
}
