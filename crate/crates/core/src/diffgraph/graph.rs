use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::diffgraph::param::{ParamId, ParamStore};
use crate::diffgraph::scalar::{sc, Scalar};
use crate::dsp::{MelFilterbank, FRAME_LEN, SPECTRUM_BINS};
use crate::error::{CodecError, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Mel analysis weights plus FFT plans, typed for the graph scalar.
pub struct GraphMelBank<S: Scalar> {
    weights: Array2<S>, // (bank, 257)
    fft_fwd: Arc<dyn Fft<S>>,
    fft_inv: Arc<dyn Fft<S>>,
}

impl<S: Scalar> GraphMelBank<S> {
    pub fn from_filterbank(bank: &MelFilterbank) -> Arc<Self> {
        let mut planner = FftPlanner::<S>::new();
        Arc::new(GraphMelBank {
            weights: bank.weights.mapv(sc::<S>),
            fft_fwd: planner.plan_fft_forward(FRAME_LEN),
            fft_inv: planner.plan_fft_inverse(FRAME_LEN),
        })
    }

    pub fn bank_size(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    l_in: usize,
    c_in: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    pad_left: usize,
    l_out: usize,
}

enum Op<S: Scalar> {
    Input,
    Param(ParamId),
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geom: ConvGeom,
        patches: Array2<S>,
    },
    DepthwiseConv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        k: usize,
    },
    SubpixelShuffle {
        input: NodeId,
    },
    LeakyRelu {
        input: NodeId,
        slope: S,
    },
    Sigmoid {
        input: NodeId,
    },
    Tanh {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: S,
    },
    PairwiseAbsDiff {
        values: NodeId,
        centroids: NodeId,
    },
    NegScale {
        input: NodeId,
        alpha: NodeId,
    },
    RowSoftmax {
        input: NodeId,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Sqrt {
        input: NodeId,
    },
    SumAll {
        input: NodeId,
    },
    ColMean {
        input: NodeId,
    },
    EntropyBits {
        probs: NodeId,
    },
    MelSpec {
        input: NodeId,
        bank: Arc<GraphMelBank<S>>,
        spectrum: Vec<Complex<S>>,
    },
}

struct Node<S: Scalar> {
    value: Array2<S>,
    op: Op<S>,
}

/// A reverse-mode compute graph built per forward pass (define-by-run tape).
///
/// Values are `(length, channels)` arrays. The graph is acyclic by
/// construction: every operation only references already-created nodes.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<S>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array2<S> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Non-trainable input/constant node.
    pub fn input(&mut self, value: Array2<S>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Leaf bound to a parameter; backward accumulates into the store.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// 1-D convolution with "same" zero padding: output length ceil(L/stride).
    ///
    /// `weight` is (k * c_in, c_out) tap-major, `bias` is (1, c_out).
    pub fn conv1d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        dilation: usize,
    ) -> Result<NodeId> {
        let (l_in, c_in) = self.nodes[input.0].value.dim();
        let (wk, c_out) = self.nodes[weight.0].value.dim();
        if wk % c_in != 0 {
            return Err(CodecError::InvalidInput(format!(
                "conv1d: weight rows {} not a multiple of input channels {}",
                wk, c_in
            )));
        }
        let k = wk / c_in;
        if k % 2 == 0 {
            return Err(CodecError::InvalidInput(format!("conv1d: kernel size {} must be odd", k)));
        }
        if !(1..=2).contains(&stride) || dilation < 1 {
            return Err(CodecError::InvalidInput(format!(
                "conv1d: unsupported stride {} / dilation {}",
                stride, dilation
            )));
        }
        if self.nodes[bias.0].value.dim() != (1, c_out) {
            return Err(CodecError::InvalidInput("conv1d: bias shape mismatch".into()));
        }
        let l_out = l_in.div_ceil(stride);
        let span = (k - 1) * dilation + 1;
        let pad_total = ((l_out - 1) * stride + span).saturating_sub(l_in);
        let geom = ConvGeom {
            l_in,
            c_in,
            k,
            stride,
            dilation,
            pad_left: pad_total / 2,
            l_out,
        };
        let mut patches = Array2::<S>::zeros((l_out, k * c_in));
        fill_patches(&self.nodes[input.0].value, &mut patches, &geom);
        let mut out = patches.dot(&self.nodes[weight.0].value);
        out += &self.nodes[bias.0].value;
        Ok(self.push(out, Op::Conv1d { input, weight, bias, geom, patches }))
    }

    /// Depthwise 1-D convolution: one k-tap filter per channel, stride 1,
    /// "same" padding. `weight` is (k, c), `bias` is (1, c).
    pub fn depthwise_conv1d(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (l, c) = self.nodes[input.0].value.dim();
        let (k, wc) = self.nodes[weight.0].value.dim();
        if wc != c || self.nodes[bias.0].value.dim() != (1, c) {
            return Err(CodecError::InvalidInput("depthwise_conv1d: shape mismatch".into()));
        }
        let pad = (k - 1) / 2;
        let mut out = Array2::<S>::zeros((l, c));
        {
            let x = &self.nodes[input.0].value;
            let w = &self.nodes[weight.0].value;
            // tap-major row accumulation keeps the channel loop contiguous
            for j in 0..k {
                let off = j as isize - pad as isize;
                let t0 = (-off).max(0) as usize;
                let t1 = l.min((l as isize - off).max(0) as usize);
                let w_row = w.row(j);
                for t in t0..t1 {
                    let x_row = x.row((t as isize + off) as usize);
                    ndarray::Zip::from(&mut out.row_mut(t))
                        .and(&w_row)
                        .and(&x_row)
                        .for_each(|o, &wv, &xv| *o += wv * xv);
                }
            }
            out += &self.nodes[bias.0].value;
        }
        Ok(self.push(out, Op::DepthwiseConv1d { input, weight, bias, k }))
    }

    /// Subpixel shuffle pairing channels (2j, 2j+1) into one doubled-length
    /// channel: (N, C) -> (2N, C/2).
    pub fn subpixel_shuffle(&mut self, input: NodeId) -> Result<NodeId> {
        let (n, c) = self.nodes[input.0].value.dim();
        if c % 2 != 0 {
            return Err(CodecError::InvalidInput(format!(
                "subpixel_shuffle: channel count {} must be even",
                c
            )));
        }
        let mut out = Array2::<S>::zeros((2 * n, c / 2));
        {
            let x = &self.nodes[input.0].value;
            for t in 0..n {
                for j in 0..c / 2 {
                    out[[2 * t, j]] = x[[t, 2 * j]];
                    out[[2 * t + 1, j]] = x[[t, 2 * j + 1]];
                }
            }
        }
        Ok(self.push(out, Op::SubpixelShuffle { input }))
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: f64) -> NodeId {
        let sl = sc::<S>(slope);
        let v = self.nodes[input.0]
            .value
            .mapv(|x| if x >= S::zero() { x } else { sl * x });
        self.push(v, Op::LeakyRelu { input, slope: sl })
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let one = S::one();
        let v = self.nodes[input.0].value.mapv(|x| one / (one + (-x).exp()));
        self.push(v, Op::Sigmoid { input })
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let v = self.nodes[input.0].value.mapv(|x| x.tanh());
        self.push(v, Op::Tanh { input })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul { a, b })
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let f = sc::<S>(factor);
        let v = self.nodes[input.0].value.mapv(|x| x * f);
        self.push(v, Op::Scale { input, factor: f })
    }

    /// D[n][k] = |h_n - beta_k| for column vectors `values` (N,1) and
    /// `centroids` (K,1).
    pub fn pairwise_absdiff(&mut self, values: NodeId, centroids: NodeId) -> Result<NodeId> {
        let (n, vc) = self.nodes[values.0].value.dim();
        let (kk, cc) = self.nodes[centroids.0].value.dim();
        if vc != 1 || cc != 1 {
            return Err(CodecError::InvalidInput("pairwise_absdiff: expects column vectors".into()));
        }
        let mut out = Array2::<S>::zeros((n, kk));
        {
            let h = &self.nodes[values.0].value;
            let b = &self.nodes[centroids.0].value;
            for i in 0..n {
                for k in 0..kk {
                    out[[i, k]] = (h[[i, 0]] - b[[k, 0]]).abs();
                }
            }
        }
        Ok(self.push(out, Op::PairwiseAbsDiff { values, centroids }))
    }

    /// Y = -alpha * X with a trainable scalar `alpha` of shape (1,1).
    pub fn neg_scale(&mut self, input: NodeId, alpha: NodeId) -> NodeId {
        let a = self.nodes[alpha.0].value[[0, 0]];
        let v = self.nodes[input.0].value.mapv(|x| -(a * x));
        self.push(v, Op::NegScale { input, alpha })
    }

    /// Row-wise softmax with max subtraction.
    pub fn row_softmax(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input.0].value;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            row.mapv_inplace(|e| (e - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|e| e / sum);
        }
        self.push(v, Op::RowSoftmax { input })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (_, ak) = self.nodes[a.0].value.dim();
        let (bk, _) = self.nodes[b.0].value.dim();
        if ak != bk {
            return Err(CodecError::InvalidInput("matmul: inner dimensions differ".into()));
        }
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        Ok(self.push(v, Op::MatMul { a, b }))
    }

    pub fn sqrt(&mut self, input: NodeId) -> NodeId {
        let v = self.nodes[input.0].value.mapv(|x| x.sqrt());
        self.push(v, Op::Sqrt { input })
    }

    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let total = self.nodes[input.0].value.sum();
        self.push(Array2::from_elem((1, 1), total), Op::SumAll { input })
    }

    /// Column means of an (N,K) matrix, returned as (K,1).
    pub fn col_mean(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input.0].value;
        let n = sc::<S>(x.nrows() as f64);
        let mean = x.sum_axis(Axis(0)).mapv(|v| v / n);
        let v = Array2::from_shape_fn((x.ncols(), 1), |(k, _)| mean[k]);
        self.push(v, Op::ColMean { input })
    }

    /// Shannon entropy in bits of a probability column vector; 0 log 0 = 0.
    pub fn entropy_bits(&mut self, probs: NodeId) -> NodeId {
        let ln2 = sc::<S>(std::f64::consts::LN_2);
        let tiny = sc::<S>(1e-30);
        let h = self.nodes[probs.0]
            .value
            .iter()
            .map(|&p| if p > tiny { -(p * p.ln() / ln2) } else { S::zero() })
            .fold(S::zero(), |a, b| a + b);
        self.push(Array2::from_elem((1, 1), h), Op::EntropyBits { probs })
    }

    /// Mel-band magnitudes of a (512,1) frame, differentiable through the FFT.
    pub fn mel_spectrum(&mut self, input: NodeId, bank: &Arc<GraphMelBank<S>>) -> Result<NodeId> {
        let x = &self.nodes[input.0].value;
        if x.dim() != (FRAME_LEN, 1) {
            return Err(CodecError::InvalidInput(format!(
                "mel_spectrum: expects ({}, 1) input, got {:?}",
                FRAME_LEN,
                x.dim()
            )));
        }
        let mut buf: Vec<Complex<S>> = x.iter().map(|&v| Complex::new(v, S::zero())).collect();
        bank.fft_fwd.process(&mut buf);
        let bsize = bank.bank_size();
        let mut out = Array2::<S>::zeros((bsize, 1));
        for b in 0..bsize {
            let mut acc = S::zero();
            for j in 0..SPECTRUM_BINS {
                acc += bank.weights[[b, j]] * buf[j].norm();
            }
            out[[b, 0]] = acc;
        }
        Ok(self.push(
            out,
            Op::MelSpec {
                input,
                bank: Arc::clone(bank),
                spectrum: buf,
            },
        ))
    }

    /// Reverse-mode sweep from a scalar loss node. Parameter gradients are
    /// accumulated (added) into `store`.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore<S>) -> Result<()> {
        if self.nodes[loss.0].value.dim() != (1, 1) {
            return Err(CodecError::InvalidInput(format!(
                "backward: loss must be scalar, got {:?}",
                self.nodes[loss.0].value.dim()
            )));
        }
        let mut grads: Vec<Option<Array2<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), S::one()));
        for i in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[i].take() else { continue };
            // split borrows: grads of parents are disjoint from node i's op data
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    *store.grad_mut(*pid) += &grad;
                }
                Op::Conv1d { input, weight, bias, geom, patches } => {
                    let d_w = patches.t().dot(&grad);
                    accumulate(&mut grads, *weight, d_w);
                    let d_b = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *bias, d_b);
                    let d_patches = grad.dot(&self.nodes[weight.0].value.t());
                    let mut d_in = Array2::<S>::zeros((geom.l_in, geom.c_in));
                    if geom.stride == 1 {
                        // stride 1: each tap scatters a whole shifted block
                        for j in 0..geom.k {
                            let off = (j * geom.dilation) as isize - geom.pad_left as isize;
                            let t0 = (-off).max(0) as usize;
                            let t1 = geom.l_out.min((geom.l_in as isize - off).max(0) as usize);
                            if t0 < t1 {
                                let c = geom.c_in;
                                let seg = d_patches.slice(s![t0..t1, j * c..(j + 1) * c]);
                                let p0 = (t0 as isize + off) as usize;
                                let mut dst = d_in.slice_mut(s![p0..p0 + (t1 - t0), ..]);
                                dst += &seg;
                            }
                        }
                    } else {
                        for t in 0..geom.l_out {
                            for j in 0..geom.k {
                                let pos = (t * geom.stride + j * geom.dilation) as isize
                                    - geom.pad_left as isize;
                                if pos >= 0 && (pos as usize) < geom.l_in {
                                    let mut row = d_in.row_mut(pos as usize);
                                    row += &d_patches
                                        .slice(s![t, j * geom.c_in..(j + 1) * geom.c_in]);
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *input, d_in);
                }
                Op::DepthwiseConv1d { input, weight, bias, k } => {
                    let (l, c) = self.nodes[input.0].value.dim();
                    let pad = (k - 1) / 2;
                    let x = &self.nodes[input.0].value;
                    let w = &self.nodes[weight.0].value;
                    let mut d_in = Array2::<S>::zeros((l, c));
                    let mut d_w = Array2::<S>::zeros((*k, c));
                    let d_b = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    for j in 0..*k {
                        let off = j as isize - pad as isize;
                        let t0 = (-off).max(0) as usize;
                        let t1 = l.min((l as isize - off).max(0) as usize);
                        let w_row = w.row(j);
                        for t in t0..t1 {
                            let pos = (t as isize + off) as usize;
                            let g_row = grad.row(t);
                            ndarray::Zip::from(&mut d_w.row_mut(j))
                                .and(&g_row)
                                .and(&x.row(pos))
                                .for_each(|dw, &g, &xv| *dw += g * xv);
                            ndarray::Zip::from(&mut d_in.row_mut(pos))
                                .and(&g_row)
                                .and(&w_row)
                                .for_each(|di, &g, &wv| *di += g * wv);
                        }
                    }
                    accumulate(&mut grads, *input, d_in);
                    accumulate(&mut grads, *weight, d_w);
                    accumulate(&mut grads, *bias, d_b);
                }
                Op::SubpixelShuffle { input } => {
                    let (n, c) = self.nodes[input.0].value.dim();
                    let mut d_in = Array2::<S>::zeros((n, c));
                    for t in 0..n {
                        for j in 0..c / 2 {
                            d_in[[t, 2 * j]] = grad[[2 * t, j]];
                            d_in[[t, 2 * j + 1]] = grad[[2 * t + 1, j]];
                        }
                    }
                    accumulate(&mut grads, *input, d_in);
                }
                Op::LeakyRelu { input, slope } => {
                    let x = &self.nodes[input.0].value;
                    let sl = *slope;
                    let mut d_in = grad;
                    ndarray::Zip::from(&mut d_in).and(x).for_each(|g, &x| {
                        if x < S::zero() {
                            *g *= sl;
                        }
                    });
                    accumulate(&mut grads, *input, d_in);
                }
                Op::Sigmoid { input } => {
                    let y = &node.value;
                    let one = S::one();
                    let mut d_in = grad;
                    ndarray::Zip::from(&mut d_in).and(y).for_each(|g, &y| {
                        *g *= y * (one - y);
                    });
                    accumulate(&mut grads, *input, d_in);
                }
                Op::Tanh { input } => {
                    let y = &node.value;
                    let one = S::one();
                    let mut d_in = grad;
                    ndarray::Zip::from(&mut d_in).and(y).for_each(|g, &y| {
                        *g *= one - y * y;
                    });
                    accumulate(&mut grads, *input, d_in);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad.mapv(|g| -g));
                }
                Op::Mul { a, b } => {
                    let d_a = &grad * &self.nodes[b.0].value;
                    let d_b = &grad * &self.nodes[a.0].value;
                    accumulate(&mut grads, *a, d_a);
                    accumulate(&mut grads, *b, d_b);
                }
                Op::Scale { input, factor } => {
                    let f = *factor;
                    accumulate(&mut grads, *input, grad.mapv(|g| g * f));
                }
                Op::PairwiseAbsDiff { values, centroids } => {
                    let h = &self.nodes[values.0].value;
                    let b = &self.nodes[centroids.0].value;
                    let (n, kk) = grad.dim();
                    let mut d_h = Array2::<S>::zeros((n, 1));
                    let mut d_b = Array2::<S>::zeros((kk, 1));
                    for i2 in 0..n {
                        for k2 in 0..kk {
                            let diff = h[[i2, 0]] - b[[k2, 0]];
                            let sign = if diff > S::zero() {
                                S::one()
                            } else if diff < S::zero() {
                                -S::one()
                            } else {
                                S::zero()
                            };
                            let g = grad[[i2, k2]] * sign;
                            d_h[[i2, 0]] += g;
                            d_b[[k2, 0]] -= g;
                        }
                    }
                    accumulate(&mut grads, *values, d_h);
                    accumulate(&mut grads, *centroids, d_b);
                }
                Op::NegScale { input, alpha } => {
                    let a = self.nodes[alpha.0].value[[0, 0]];
                    let x = &self.nodes[input.0].value;
                    let d_alpha = -(&grad * x).sum();
                    accumulate(&mut grads, *alpha, Array2::from_elem((1, 1), d_alpha));
                    accumulate(&mut grads, *input, grad.mapv(|g| -(a * g)));
                }
                Op::RowSoftmax { input } => {
                    let y = &node.value;
                    let mut d_in = Array2::<S>::zeros(y.raw_dim());
                    for r in 0..y.nrows() {
                        let dot = y
                            .row(r)
                            .iter()
                            .zip(grad.row(r))
                            .map(|(&a, &g)| a * g)
                            .fold(S::zero(), |acc, v| acc + v);
                        for c2 in 0..y.ncols() {
                            d_in[[r, c2]] = y[[r, c2]] * (grad[[r, c2]] - dot);
                        }
                    }
                    accumulate(&mut grads, *input, d_in);
                }
                Op::MatMul { a, b } => {
                    let d_a = grad.dot(&self.nodes[b.0].value.t());
                    let d_b = self.nodes[a.0].value.t().dot(&grad);
                    accumulate(&mut grads, *a, d_a);
                    accumulate(&mut grads, *b, d_b);
                }
                Op::Sqrt { input } => {
                    let y = &node.value;
                    let half = sc::<S>(0.5);
                    let tiny = sc::<S>(1e-30);
                    let mut d_in = grad;
                    ndarray::Zip::from(&mut d_in).and(y).for_each(|g, &y| {
                        *g = if y > tiny { *g * half / y } else { S::zero() };
                    });
                    accumulate(&mut grads, *input, d_in);
                }
                Op::SumAll { input } => {
                    let g = grad[[0, 0]];
                    let d_in = Array2::from_elem(self.nodes[input.0].value.raw_dim(), g);
                    accumulate(&mut grads, *input, d_in);
                }
                Op::ColMean { input } => {
                    let (n, kk) = self.nodes[input.0].value.dim();
                    let inv_n = sc::<S>(1.0 / n as f64);
                    let d_in = Array2::from_shape_fn((n, kk), |(_, k2)| grad[[k2, 0]] * inv_n);
                    accumulate(&mut grads, *input, d_in);
                }
                Op::EntropyBits { probs } => {
                    let g = grad[[0, 0]];
                    let p = &self.nodes[probs.0].value;
                    let ln2 = sc::<S>(std::f64::consts::LN_2);
                    let one = S::one();
                    let tiny = sc::<S>(1e-30);
                    let d_p = p.mapv(|p| {
                        if p > tiny {
                            -(g * (p.ln() + one) / ln2)
                        } else {
                            S::zero()
                        }
                    });
                    accumulate(&mut grads, *probs, d_p);
                }
                Op::MelSpec { input, bank, spectrum } => {
                    // d mag = W^T dy; route through X/|X|, then an inverse
                    // (adjoint) FFT of the zero-padded half-spectrum gradient.
                    let mut g_spec: Vec<Complex<S>> =
                        vec![Complex::new(S::zero(), S::zero()); FRAME_LEN];
                    let tiny = sc::<S>(1e-30);
                    for j in 0..SPECTRUM_BINS {
                        let mut d_mag = S::zero();
                        for b in 0..bank.bank_size() {
                            d_mag += bank.weights[[b, j]] * grad[[b, 0]];
                        }
                        let x = spectrum[j];
                        let norm = x.norm();
                        if norm > tiny {
                            g_spec[j] = x * (d_mag / norm);
                        }
                    }
                    bank.fft_inv.process(&mut g_spec);
                    let d_in =
                        Array2::from_shape_fn((FRAME_LEN, 1), |(t, _)| g_spec[t].re);
                    accumulate(&mut grads, *input, d_in);
                }
            }
        }
        Ok(())
    }
}

/// Gather convolution patches (im2col). Hot path of every forward pass, so
/// the standard-layout case copies row segments as raw slices; with unit
/// dilation the taps of one output row are adjacent input rows, which lets
/// the whole in-bounds span move in a single copy.
fn fill_patches<S: Scalar>(x: &Array2<S>, patches: &mut Array2<S>, g: &ConvGeom) {
    let c = g.c_in;
    if let (Some(xs), Some(ps)) = (x.as_slice(), patches.as_slice_mut()) {
        let row_w = g.k * c;
        for t in 0..g.l_out {
            let row = &mut ps[t * row_w..(t + 1) * row_w];
            if g.dilation == 1 {
                let start = (t * g.stride) as isize - g.pad_left as isize;
                let j0 = (-start).max(0) as usize;
                let j1 = g.k.min((g.l_in as isize - start).max(0) as usize);
                if j0 < j1 {
                    let src = (start + j0 as isize) as usize * c;
                    row[j0 * c..j1 * c].copy_from_slice(&xs[src..src + (j1 - j0) * c]);
                }
            } else {
                for j in 0..g.k {
                    let pos = (t * g.stride + j * g.dilation) as isize - g.pad_left as isize;
                    if pos >= 0 && (pos as usize) < g.l_in {
                        let src = pos as usize * c;
                        row[j * c..(j + 1) * c].copy_from_slice(&xs[src..src + c]);
                    }
                }
            }
        }
    } else {
        for t in 0..g.l_out {
            for j in 0..g.k {
                let pos = (t * g.stride + j * g.dilation) as isize - g.pad_left as isize;
                if pos >= 0 && (pos as usize) < g.l_in {
                    patches.slice_mut(s![t, j * c..(j + 1) * c]).assign(&x.row(pos as usize));
                }
            }
        }
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Array2<S>>], id: NodeId, delta: Array2<S>) {
    match &mut grads[id.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgraph::gradcheck::finite_difference_check;
    use ndarray::array;
    use rand::prelude::*;

    fn random_array(rng: &mut StdRng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut g = Graph::<f64>::new();
        let mut rng = StdRng::seed_from_u64(1);
        let x = g.input(random_array(&mut rng, 16, 3));
        // k=1 identity weight maps channels straight through
        let w = g.input(Array2::from_shape_fn((3, 3), |(r, c)| if r == c { 1.0 } else { 0.0 }));
        let b = g.input(Array2::zeros((1, 3)));
        let y = g.conv1d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn conv1d_matches_direct_convolution() {
        // single channel, k=3: compare against a hand-rolled same-pad conv
        let mut rng = StdRng::seed_from_u64(2);
        let xv = random_array(&mut rng, 10, 1);
        let wv = random_array(&mut rng, 3, 1);
        let mut g = Graph::<f64>::new();
        let x = g.input(xv.clone());
        let w = g.input(wv.clone());
        let b = g.input(array![[0.25]]);
        let y = g.conv1d(x, w, b, 1, 1).unwrap();
        for t in 0..10 {
            let mut expect = 0.25;
            for j in 0..3usize {
                let pos = t as isize + j as isize - 1;
                if pos >= 0 && pos < 10 {
                    expect += wv[[j, 0]] * xv[[pos as usize, 0]];
                }
            }
            assert!((g.value(y)[[t, 0]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_stride_two_output_length() {
        let mut g = Graph::<f64>::new();
        let mut rng = StdRng::seed_from_u64(3);
        let x = g.input(random_array(&mut rng, 11, 2));
        let w = g.input(random_array(&mut rng, 9 * 2, 4));
        let b = g.input(Array2::zeros((1, 4)));
        let y = g.conv1d(x, w, b, 2, 1).unwrap();
        assert_eq!(g.value(y).dim(), (6, 4));
    }

    #[test]
    fn subpixel_shuffle_layout() {
        let mut g = Graph::<f64>::new();
        let x = g.input(array![[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]]);
        let y = g.subpixel_shuffle(x).unwrap();
        let expect = array![[1.0, 3.0], [2.0, 4.0], [5.0, 7.0], [6.0, 8.0]];
        assert_eq!(g.value(y), &expect);
    }

    #[test]
    fn row_softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new();
        let mut rng = StdRng::seed_from_u64(4);
        let x = g.input(random_array(&mut rng, 5, 7).mapv(|v| v * 50.0));
        let y = g.row_softmax(x);
        for row in g.value(y).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn entropy_of_uniform_distribution() {
        let mut g = Graph::<f64>::new();
        let p = g.input(Array2::from_elem((8, 1), 0.125));
        let h = g.entropy_bits(p);
        assert!((g.value(h)[[0, 0]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mel_spectrum_matches_dsp_path() {
        let bank = MelFilterbank::new(8).unwrap();
        let gbank = GraphMelBank::<f64>::from_filterbank(&bank);
        let mut rng = StdRng::seed_from_u64(5);
        let frame: Vec<f64> = (0..FRAME_LEN).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::<f64>::new();
        let x = g.input(Array2::from_shape_fn((FRAME_LEN, 1), |(t, _)| frame[t]));
        let y = g.mel_spectrum(x, &gbank).unwrap();
        let expect = crate::dsp::mel_spectrum(&frame, &bank).unwrap();
        for (b, &e) in expect.iter().enumerate() {
            assert!((g.value(y)[[b, 0]] - e).abs() < 1e-9 * e.abs().max(1.0));
        }
    }

    /// Build a network exercising every op, return the scalar loss node.
    fn build_everything(
        g: &mut Graph<f64>,
        store: &ParamStore<f64>,
        ids: &EverythingIds,
        input: &Array2<f64>,
        bank: &std::sync::Arc<GraphMelBank<f64>>,
    ) -> NodeId {
        let x = g.input(input.clone());
        let w1 = g.param(store, ids.w1);
        let b1 = g.param(store, ids.b1);
        let h1 = g.conv1d(x, w1, b1, 1, 2).unwrap();
        let h1 = g.leaky_relu(h1, 0.2);
        let wg = g.param(store, ids.wg);
        let bg = g.param(store, ids.bg);
        let gate = g.conv1d(h1, wg, bg, 1, 1).unwrap();
        let gate = g.sigmoid(gate);
        let gated = g.mul(h1, gate);
        let res = g.add(h1, gated);
        let wd = g.param(store, ids.wd);
        let bd = g.param(store, ids.bd);
        let dw = g.depthwise_conv1d(res, wd, bd).unwrap();
        let up = g.subpixel_shuffle(dw).unwrap();
        let w2 = g.param(store, ids.w2);
        let b2 = g.param(store, ids.b2);
        let h2 = g.conv1d(up, w2, b2, 2, 1).unwrap();
        let code = g.tanh(h2); // (L, 1)
        // soft quantization chain
        let beta = g.param(store, ids.beta);
        let alpha = g.param(store, ids.alpha);
        let dist = g.pairwise_absdiff(code, beta).unwrap();
        let logits = g.neg_scale(dist, alpha);
        let soft = g.row_softmax(logits);
        let sq = g.sqrt(soft);
        let penalty = g.sum_all(sq);
        let penalty = g.scale(penalty, 1.0 / g.value(soft).nrows() as f64);
        let probs = g.col_mean(soft);
        let ent = g.entropy_bits(probs);
        let recon = g.matmul(soft, beta).unwrap(); // (L, 1)
        let diff = g.sub(code, recon);
        let sq_err = g.mul(diff, diff);
        let mse = g.sum_all(sq_err);
        // mel term on a synthetic 512-long signal derived from the input column
        let xm = g.input(Array2::from_shape_fn((FRAME_LEN, 1), |(t, _)| {
            input[[t % input.nrows(), 0]] * (0.3 + 0.001 * t as f64)
        }));
        let mel_ref = g.mel_spectrum(xm, bank).unwrap();
        let mel_scaled = g.scale(mel_ref, 0.01);
        let mel_loss = g.sum_all(mel_scaled);
        let a = g.add(mse, penalty);
        let b = g.add(ent, mel_loss);
        g.add(a, b)
    }

    struct EverythingIds {
        w1: ParamId,
        b1: ParamId,
        wg: ParamId,
        bg: ParamId,
        wd: ParamId,
        bd: ParamId,
        w2: ParamId,
        b2: ParamId,
        beta: ParamId,
        alpha: ParamId,
    }

    fn everything_store(rng: &mut StdRng) -> (ParamStore<f64>, EverythingIds) {
        let mut store = ParamStore::<f64>::new();
        let ids = EverythingIds {
            w1: store.add_conv_weight("w1", 5 * 2, 4, rng),
            b1: store.add("b1", random_array(rng, 1, 4).mapv(|v| v * 0.1)),
            wg: store.add_conv_weight("wg", 3 * 4, 4, rng),
            bg: store.add("bg", random_array(rng, 1, 4).mapv(|v| v * 0.1)),
            wd: store.add_conv_weight("wd", 3, 4, rng),
            bd: store.add("bd", random_array(rng, 1, 4).mapv(|v| v * 0.1)),
            w2: store.add_conv_weight("w2", 3 * 2, 1, rng),
            b2: store.add("b2", random_array(rng, 1, 1).mapv(|v| v * 0.1)),
            beta: store.add("beta", random_array(rng, 6, 1)),
            alpha: store.add("alpha", array![[2.5]]),
        };
        (store, ids)
    }

    #[test]
    fn finite_difference_all_ops() {
        let mut rng = StdRng::seed_from_u64(7);
        let (mut store, ids) = everything_store(&mut rng);
        let input = random_array(&mut rng, 12, 2);
        let bank = GraphMelBank::<f64>::from_filterbank(&MelFilterbank::new(8).unwrap());

        let mut g = Graph::<f64>::new();
        let loss = build_everything(&mut g, &store, &ids, &input, &bank);
        store.zero_grads();
        g.backward(loss, &mut store).unwrap();

        let all = [
            ids.w1, ids.b1, ids.wg, ids.bg, ids.wd, ids.bd, ids.w2, ids.b2, ids.beta, ids.alpha,
        ];
        let report = finite_difference_check(
            &mut store,
            &all,
            6,
            1e-5,
            1e-4,
            5e-7,
            &mut StdRng::seed_from_u64(11),
            |s| {
                let mut g = Graph::<f64>::new();
                let loss = build_everything(&mut g, s, &ids, &input, &bank);
                g.value(loss)[[0, 0]]
            },
        )
        .unwrap();
        assert!(report.checked >= 40);
    }

    #[test]
    fn mel_spectrum_gradient_check() {
        // gradient w.r.t. the waveform itself, routed through the FFT adjoint
        let bank = GraphMelBank::<f64>::from_filterbank(&MelFilterbank::new(16).unwrap());
        let mut rng = StdRng::seed_from_u64(13);
        let mut store = ParamStore::<f64>::new();
        let sig = store.add("sig", random_array(&mut rng, FRAME_LEN, 1));
        let build = |s: &ParamStore<f64>, g: &mut Graph<f64>| -> NodeId {
            let x = g.param(s, sig);
            let mel = g.mel_spectrum(x, &bank).unwrap();
            let sq = g.mul(mel, mel);
            g.sum_all(sq)
        };
        let mut g = Graph::<f64>::new();
        let loss = build(&store, &mut g);
        store.zero_grads();
        g.backward(loss, &mut store).unwrap();
        finite_difference_check(
            &mut store,
            &[sig],
            32,
            1e-4,
            1e-4,
            5e-7,
            &mut StdRng::seed_from_u64(17),
            |s| {
                let mut g = Graph::<f64>::new();
                let loss = build(s, &mut g);
                g.value(loss)[[0, 0]]
            },
        )
        .unwrap();
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Array2::zeros((3, 2)));
        let mut store = ParamStore::<f64>::new();
        assert!(g.backward(x, &mut store).is_err());
    }

    #[test]
    fn shared_node_gradients_accumulate() {
        // y = x + x => dy/dx = 2
        let mut store = ParamStore::<f64>::new();
        let p = store.add("x", array![[1.5]]);
        let mut g = Graph::<f64>::new();
        let x = g.param(&store, p);
        let y = g.add(x, x);
        let loss = g.sum_all(y);
        g.backward(loss, &mut store).unwrap();
        assert!((store.grad(p)[[0, 0]] - 2.0).abs() < 1e-12);
    }
}
