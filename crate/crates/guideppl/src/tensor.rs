//! Dense f64 tensors with a define-by-run reverse-mode tape.
//!
//! Gradients are computed by recording every operation on a [`Tape`] and
//! sweeping it once, in reverse. A tape lives for exactly one gradient
//! sample: build the computation, call [`Tensor::backward`] on a scalar loss,
//! read the leaf gradients, and start a new tape for the next sample.
//! Tensors without a tape attachment are plain immutable values.
//!
//! Shapes are rank 0 (scalar), 1 (vector) or 2 (matrix). The only broadcast
//! is scalar-with-tensor in the elementwise binary ops. Any operation whose
//! result would contain a NaN or infinity reports a domain error instead of
//! letting the value propagate.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use statrs::function::gamma;

use crate::error::{Error, Result};

// ── Tape ─────────────────────────────────────────────────────────────────

type BackFn = Box<dyn Fn(&[f64], &mut Adjoints)>;

/// Per-node adjoint buffers for one backward sweep. Buffers are allocated
/// lazily so untouched subgraphs cost nothing.
pub(crate) struct Adjoints {
    bufs: Vec<Vec<f64>>,
}

impl Adjoints {
    fn accum(&mut self, node: usize, size: usize) -> &mut [f64] {
        if self.bufs[node].is_empty() {
            self.bufs[node] = vec![0.0; size];
        }
        &mut self.bufs[node]
    }
}

struct TapeInner {
    // One entry per recorded node; `None` marks a leaf (no inputs).
    nodes: Vec<Option<BackFn>>,
    alive: bool,
}

/// A recording of tensor operations. Cheap to clone (shared handle).
/// Confined to one thread; a tape is consumed by the first `backward`.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new(), alive: true })) }
    }

    pub fn is_alive(&self) -> bool {
        self.inner.borrow().alive
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(&self, back: Option<BackFn>) -> Result<usize> {
        let mut inner = self.inner.borrow_mut();
        if !inner.alive {
            return Err(Error::domain("tape", "tape already consumed by backward"));
        }
        inner.nodes.push(back);
        Ok(inner.nodes.len() - 1)
    }

    /// A new leaf holding `data`; gradients accumulate at leaves.
    pub fn leaf(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        check_shape_data("leaf", &shape, &data)?;
        check_finite("leaf", &data)?;
        let idx = self.push(None)?;
        Ok(Tensor { shape, data: Arc::new(data), node: Some((self.clone(), idx)) })
    }

    fn same_as(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Result of a backward sweep: adjoints for every touched node.
pub struct Gradients {
    bufs: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `t`, or `None` if `t` is detached or was
    /// never reached by the sweep (zero gradient).
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        let (_, idx) = t.node.as_ref()?;
        let buf = &self.bufs[*idx];
        if buf.is_empty() {
            None
        } else {
            Some(buf)
        }
    }

    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.get(t).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.len()])
    }
}

// ── Tensor ───────────────────────────────────────────────────────────────

/// Immutable dense f64 array, optionally attached to a tape node.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<(Tape, usize)>,
}

fn check_shape_data(op: &'static str, shape: &[usize], data: &[f64]) -> Result<()> {
    let want: usize = shape.iter().product();
    if shape.len() > 2 {
        return Err(Error::shape(op, format!("rank {} > 2", shape.len())));
    }
    if want != data.len() || data.is_empty() {
        return Err(Error::shape(op, format!("shape {shape:?} does not fit {} values", data.len())));
    }
    Ok(())
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    for &v in data {
        if !v.is_finite() {
            return Err(Error::domain(op, format!("non-finite result {v}")));
        }
    }
    Ok(())
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    pub fn scalar(x: f64) -> Tensor {
        Tensor { shape: vec![], data: Arc::new(vec![x]), node: None }
    }

    pub fn vector(v: Vec<f64>) -> Tensor {
        Tensor { shape: vec![v.len()], data: Arc::new(v), node: None }
    }

    pub fn matrix(rows: usize, cols: usize, v: Vec<f64>) -> Result<Tensor> {
        check_shape_data("matrix", &[rows, cols], &v)?;
        Ok(Tensor { shape: vec![rows, cols], data: Arc::new(v), node: None })
    }

    pub fn from_shape(shape: Vec<usize>, v: Vec<f64>) -> Result<Tensor> {
        check_shape_data("from_shape", &shape, &v)?;
        Ok(Tensor { shape, data: Arc::new(v), node: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product::<usize>().max(1);
        Tensor { shape, data: Arc::new(vec![0.0; n]), node: None }
    }

    /// Standard-basis vector e_i of length `n` (detached constant).
    pub fn one_hot(i: usize, n: usize) -> Result<Tensor> {
        if i >= n || n == 0 {
            return Err(Error::domain("one_hot", format!("index {i} out of {n}")));
        }
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Ok(Tensor::vector(v))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // empty tensors are rejected at construction
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::shape("item", format!("tensor has {} elements", self.len())))
        }
    }

    /// Same values, no tape attachment: gradients do not flow past this.
    pub fn detach(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.clone(), node: None }
    }

    fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|(t, _)| t)
    }

    fn node_idx(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, i)| *i)
    }

    // ── elementwise unary ────────────────────────────────────────────────

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let y: Vec<f64> = self.data.iter().map(|&x| f(x)).collect();
        check_finite(op, &y)?;
        let node = match &self.node {
            Some((tape, ai)) => {
                let dcoef: Vec<f64> =
                    self.data.iter().zip(&y).map(|(&x, &yy)| df(x, yy)).collect();
                let (ai, n) = (*ai, y.len());
                let idx = tape.push(Some(Box::new(move |g, adj| {
                    let buf = adj.accum(ai, n);
                    for i in 0..n {
                        buf[i] += g[i] * dcoef[i];
                    }
                })))?;
                Some((tape.clone(), idx))
            }
            None => None,
        };
        Ok(Tensor { shape: self.shape.clone(), data: Arc::new(y), node })
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.unary("neg", |x| -x, |_, _| -1.0)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(&x) = self.data.iter().find(|&&x| x <= 0.0) {
            return Err(Error::domain("log", format!("argument {x} <= 0")));
        }
        self.unary("log", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary("sigmoid", stable_sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn tan(&self) -> Result<Tensor> {
        self.unary("tan", f64::tan, |_, y| 1.0 + y * y)
    }

    /// log(exp(x) + 1), computed as max(x,0) + log1p(exp(-|x|)) so that large
    /// positive x neither overflows nor loses the tail (softplus(-50) is
    /// ~1.93e-22, not 0).
    pub fn softplus(&self) -> Result<Tensor> {
        self.unary("softplus", |x| x.max(0.0) + (-x.abs()).exp().ln_1p(), |x, _| stable_sigmoid(x))
    }

    /// Inverse of softplus on (0, ∞): y with softplus(y) = x.
    pub fn invsoftplus(&self) -> Result<Tensor> {
        if let Some(&x) = self.data.iter().find(|&&x| x <= 0.0) {
            return Err(Error::domain("invsoftplus", format!("argument {x} <= 0")));
        }
        self.unary(
            "invsoftplus",
            |x| if x > 20.0 { x + (-(-x).exp()).ln_1p() } else { x.exp_m1().ln() },
            |x, _| 1.0 / (-(-x).exp_m1()),
        )
    }

    /// log Γ(x) for x > 0.
    pub fn lgamma(&self) -> Result<Tensor> {
        if let Some(&x) = self.data.iter().find(|&&x| x <= 0.0) {
            return Err(Error::domain("lgamma", format!("argument {x} <= 0")));
        }
        self.unary("lgamma", gamma::ln_gamma, |x, _| gamma::digamma(x))
    }

    /// Multiply by a constant (no gradient into `c`).
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(Error::domain("scale", format!("non-finite factor {c}")));
        }
        self.unary("scale", |x| c * x, |_, _| c)
    }

    // ── elementwise binary with scalar broadcast ─────────────────────────

    fn binary(
        &self,
        op: &'static str,
        other: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        dfa: impl Fn(f64, f64, f64) -> f64 + 'static,
        dfb: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let (na, nb) = (self.len(), other.len());
        let (a_scalar, b_scalar) = (na == 1, nb == 1);
        if !(self.shape == other.shape || a_scalar || b_scalar) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let n = na.max(nb);
        let out_shape =
            if na >= nb { self.shape.clone() } else { other.shape.clone() };
        let (ad, bd) = (&self.data, &other.data);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            y.push(f(ad[if a_scalar { 0 } else { i }], bd[if b_scalar { 0 } else { i }]));
        }
        check_finite(op, &y)?;

        let tape = match (self.tape(), other.tape()) {
            (Some(ta), Some(tb)) => {
                if !ta.same_as(tb) {
                    return Err(Error::domain(op, "operands recorded on different tapes"));
                }
                Some(ta.clone())
            }
            (Some(t), None) | (None, Some(t)) => Some(t.clone()),
            (None, None) => None,
        };
        let node = match tape {
            Some(tape) => {
                let (ia, ib) = (self.node_idx(), other.node_idx());
                let (ad, bd) = (self.data.clone(), other.data.clone());
                let yd = Arc::new(y);
                let out = yd.clone();
                let idx = tape.push(Some(Box::new(move |g, adj| {
                    if let Some(ia) = ia {
                        let buf = adj.accum(ia, if a_scalar { 1 } else { g.len() });
                        for i in 0..g.len() {
                            let (xa, xb) =
                                (ad[if a_scalar { 0 } else { i }], bd[if b_scalar { 0 } else { i }]);
                            buf[if a_scalar { 0 } else { i }] += g[i] * dfa(xa, xb, out[i]);
                        }
                    }
                    if let Some(ib) = ib {
                        let buf = adj.accum(ib, if b_scalar { 1 } else { g.len() });
                        for i in 0..g.len() {
                            let (xa, xb) =
                                (ad[if a_scalar { 0 } else { i }], bd[if b_scalar { 0 } else { i }]);
                            buf[if b_scalar { 0 } else { i }] += g[i] * dfb(xa, xb, out[i]);
                        }
                    }
                })))?;
                return Ok(Tensor { shape: out_shape, data: yd, node: Some((tape, idx)) });
            }
            None => None,
        };
        Ok(Tensor { shape: out_shape, data: Arc::new(y), node })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary("add", other, |a, b| a + b, |_, _, _| 1.0, |_, _, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary("sub", other, |a, b| a - b, |_, _, _| 1.0, |_, _, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary("mul", other, |a, b| a * b, |_, b, _| b, |a, _, _| a)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data.iter().any(|&b| b == 0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        self.binary("div", other, |a, b| a / b, |_, b, _| 1.0 / b, |_, b, y| -y / b)
    }

    // ── reductions ───────────────────────────────────────────────────────

    /// Sum of all entries, as a scalar.
    pub fn sum(&self) -> Result<Tensor> {
        let s: f64 = self.data.iter().sum();
        check_finite("sum", &[s])?;
        let node = match &self.node {
            Some((tape, ai)) => {
                let (ai, n) = (*ai, self.len());
                let idx = tape.push(Some(Box::new(move |g, adj| {
                    let buf = adj.accum(ai, n);
                    for b in buf.iter_mut() {
                        *b += g[0];
                    }
                })))?;
                Some((tape.clone(), idx))
            }
            None => None,
        };
        Ok(Tensor { shape: vec![], data: Arc::new(vec![s]), node })
    }

    /// Sum of one-element tensors into a scalar; records a single node.
    pub fn sum_of(parts: &[Tensor]) -> Result<Tensor> {
        let mut total = 0.0;
        let mut tape: Option<Tape> = None;
        let mut attached: Vec<usize> = Vec::new();
        for p in parts {
            if p.len() != 1 {
                return Err(Error::shape("sum_of", format!("part has shape {:?}", p.shape)));
            }
            total += p.data[0];
            if let Some((t, i)) = &p.node {
                match &tape {
                    Some(t0) if !t0.same_as(t) => {
                        return Err(Error::domain("sum_of", "parts recorded on different tapes"))
                    }
                    None => tape = Some(t.clone()),
                    _ => {}
                }
                attached.push(*i);
            }
        }
        check_finite("sum_of", &[total])?;
        let node = match tape {
            Some(tape) => {
                let idx = tape.push(Some(Box::new(move |g, adj| {
                    for &i in &attached {
                        adj.accum(i, 1)[0] += g[0];
                    }
                })))?;
                Some((tape, idx))
            }
            None => None,
        };
        Ok(Tensor { shape: vec![], data: Arc::new(vec![total]), node })
    }

    /// log Σ exp(xᵢ) with the max shifted out, so equal large entries do not
    /// overflow: logsumexp([1000, 1000]) = 1000 + log 2.
    pub fn logsumexp(&self) -> Result<Tensor> {
        let m = self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = self.data.iter().map(|&x| (x - m).exp()).sum();
        let out = m + s.ln();
        check_finite("logsumexp", &[out])?;
        let node = match &self.node {
            Some((tape, ai)) => {
                let (ai, n) = (*ai, self.len());
                let dcoef: Vec<f64> = self.data.iter().map(|&x| (x - out).exp()).collect();
                let idx = tape.push(Some(Box::new(move |g, adj| {
                    let buf = adj.accum(ai, n);
                    for i in 0..n {
                        buf[i] += g[0] * dcoef[i];
                    }
                })))?;
                Some((tape.clone(), idx))
            }
            None => None,
        };
        Ok(Tensor { shape: vec![], data: Arc::new(vec![out]), node })
    }

    // ── shape ops ────────────────────────────────────────────────────────

    /// Matrix product: [m,k]·[k,n] → [m,n] or [m,k]·[k] → [m].
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = match self.shape.as_slice() {
            [m, k] => (*m, *k),
            s => return Err(Error::shape("matmul", format!("left operand has shape {s:?}"))),
        };
        let (k2, n, vec_rhs) = match other.shape.as_slice() {
            [k2, n] => (*k2, *n, false),
            [k2] => (*k2, 1, true),
            s => return Err(Error::shape("matmul", format!("right operand has shape {s:?}"))),
        };
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dims {k} vs {k2}")));
        }
        let (a, b) = (&self.data, &other.data);
        let mut y = vec![0.0; m * n];
        if vec_rhs {
            for i in 0..m {
                let row = &a[i * k..(i + 1) * k];
                y[i] = row.iter().zip(b.iter()).map(|(&w, &x)| w * x).sum();
            }
        } else {
            for i in 0..m {
                for p in 0..k {
                    let aip = a[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    let yrow = &mut y[i * n..(i + 1) * n];
                    for j in 0..n {
                        yrow[j] += aip * brow[j];
                    }
                }
            }
        }
        check_finite("matmul", &y)?;
        let out_shape = if vec_rhs { vec![m] } else { vec![m, n] };

        let tape = match (self.tape(), other.tape()) {
            (Some(ta), Some(tb)) => {
                if !ta.same_as(tb) {
                    return Err(Error::domain("matmul", "operands recorded on different tapes"));
                }
                Some(ta.clone())
            }
            (Some(t), None) | (None, Some(t)) => Some(t.clone()),
            (None, None) => None,
        };
        let node = match tape {
            Some(tape) => {
                let (ia, ib) = (self.node_idx(), other.node_idx());
                let (ad, bd) = (self.data.clone(), other.data.clone());
                let idx = tape.push(Some(Box::new(move |g, adj| {
                    if let Some(ia) = ia {
                        // dA = G · Bᵀ
                        let buf = adj.accum(ia, m * k);
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * bd[p * n + j];
                                }
                                buf[i * k + p] += acc;
                            }
                        }
                    }
                    if let Some(ib) = ib {
                        // dB = Aᵀ · G
                        let buf = adj.accum(ib, k * n);
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aip = ad[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                let brow = &mut buf[p * n..(p + 1) * n];
                                for j in 0..n {
                                    brow[j] += aip * gi[j];
                                }
                            }
                        }
                    }
                })))?;
                Some((tape, idx))
            }
            None => None,
        };
        Ok(Tensor { shape: out_shape, data: Arc::new(y), node })
    }

    /// Concatenate scalars/vectors into one vector.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no parts"));
        }
        let mut data = Vec::new();
        let mut tape: Option<Tape> = None;
        let mut segs: Vec<(usize, usize, usize)> = Vec::new(); // (node, offset, len)
        for p in parts {
            if p.shape.len() > 1 {
                return Err(Error::shape("concat", format!("part has shape {:?}", p.shape)));
            }
            if let Some((t, i)) = &p.node {
                match &tape {
                    Some(t0) if !t0.same_as(t) => {
                        return Err(Error::domain("concat", "parts recorded on different tapes"))
                    }
                    None => tape = Some(t.clone()),
                    _ => {}
                }
                segs.push((*i, data.len(), p.len()));
            }
            data.extend_from_slice(&p.data);
        }
        let n = data.len();
        let node = match tape {
            Some(tape) => {
                let idx = tape.push(Some(Box::new(move |g, adj| {
                    for &(ni, off, len) in &segs {
                        let buf = adj.accum(ni, len);
                        for i in 0..len {
                            buf[i] += g[off + i];
                        }
                    }
                })))?;
                Some((tape, idx))
            }
            None => None,
        };
        Ok(Tensor { shape: vec![n], data: Arc::new(data), node })
    }

    /// Element i of a vector, as a scalar.
    pub fn get(&self, i: usize) -> Result<Tensor> {
        if self.shape.len() != 1 {
            return Err(Error::shape("get", format!("expected vector, got {:?}", self.shape)));
        }
        if i >= self.len() {
            return Err(Error::shape("get", format!("index {i} out of {}", self.len())));
        }
        let node = match &self.node {
            Some((tape, ai)) => {
                let (ai, n) = (*ai, self.len());
                let idx = tape.push(Some(Box::new(move |g, adj| {
                    adj.accum(ai, n)[i] += g[0];
                })))?;
                Some((tape.clone(), idx))
            }
            None => None,
        };
        Ok(Tensor { shape: vec![], data: Arc::new(vec![self.data[i]]), node })
    }

    /// Subvector [start, end) of a vector.
    pub fn slice(&self, start: usize, end: usize) -> Result<Tensor> {
        if self.shape.len() != 1 {
            return Err(Error::shape("slice", format!("expected vector, got {:?}", self.shape)));
        }
        if start >= end || end > self.len() {
            return Err(Error::shape("slice", format!("[{start}, {end}) out of {}", self.len())));
        }
        let node = match &self.node {
            Some((tape, ai)) => {
                let (ai, n) = (*ai, self.len());
                let idx = tape.push(Some(Box::new(move |g, adj| {
                    let buf = adj.accum(ai, n);
                    for (j, &gv) in g.iter().enumerate() {
                        buf[start + j] += gv;
                    }
                })))?;
                Some((tape.clone(), idx))
            }
            None => None,
        };
        Ok(Tensor {
            shape: vec![end - start],
            data: Arc::new(self.data[start..end].to_vec()),
            node,
        })
    }

    /// Softmax over the vector extended with one fixed 0 logit: maps K-1 free
    /// values to a point in the interior of the K-simplex.
    pub fn simplex(&self) -> Result<Tensor> {
        if self.shape.len() != 1 {
            return Err(Error::shape("simplex", format!("expected vector, got {:?}", self.shape)));
        }
        let zero = Tensor::scalar(0.0);
        let logits = Tensor::concat(&[self, &zero])?;
        let lse = logits.logsumexp()?;
        logits.sub(&lse)?.exp()
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Consumes the tape: the tape is
    /// cleared and further recording on it fails.
    pub fn backward(&self) -> Result<Gradients> {
        let (tape, li) = match &self.node {
            Some((t, i)) => (t.clone(), *i),
            None => return Err(Error::domain("backward", "loss is detached from any tape")),
        };
        if self.len() != 1 {
            return Err(Error::shape("backward", format!("loss has shape {:?}", self.shape)));
        }
        let mut inner = tape.inner.borrow_mut();
        if !inner.alive {
            return Err(Error::domain("backward", "tape already consumed"));
        }
        let n = inner.nodes.len();
        let mut adj = Adjoints { bufs: vec![Vec::new(); n] };
        adj.accum(li, 1)[0] = 1.0;
        for i in (0..n).rev() {
            if adj.bufs[i].is_empty() {
                continue;
            }
            if let Some(back) = &inner.nodes[i] {
                let g = std::mem::take(&mut adj.bufs[i]);
                back(&g, &mut adj);
                adj.bufs[i] = g;
            }
        }
        inner.alive = false;
        inner.nodes.clear();
        Ok(Gradients { bufs: adj.bufs })
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).cloned().collect();
        let ell = if self.len() > 8 { ", .." } else { "" };
        write!(f, "Tensor{:?} {:?}{}", self.shape, preview, ell)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{assert_rel, finite_diff, rel_err};

    /// Backward-vs-central-difference check for a graph built by `build`
    /// from a single leaf vector.
    fn grad_check(x: &[f64], build: impl Fn(&Tensor) -> Result<Tensor>) {
        let tape = Tape::new();
        let leaf = tape.leaf(vec![x.len()], x.to_vec()).unwrap();
        let loss = build(&leaf).unwrap();
        let grads = loss.backward().unwrap();
        let got = grads.get_or_zeros(&leaf);
        let want = finite_diff(
            &mut |v: &[f64]| {
                let t = Tape::new();
                let leaf = t.leaf(vec![v.len()], v.to_vec()).unwrap();
                build(&leaf).unwrap().item().unwrap()
            },
            x,
            1e-5,
        );
        for (i, (&g, &w)) in got.iter().zip(&want).enumerate() {
            assert!(
                rel_err(g, w) < 1e-4 || (g - w).abs() < 1e-7,
                "coordinate {i}: backward {g} vs finite diff {w}"
            );
        }
    }

    #[test]
    fn forward_values() {
        let v = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(v.sum().unwrap().item().unwrap(), 6.0);
        assert_eq!(v.get(1).unwrap().item().unwrap(), 2.0);
        assert_eq!(v.slice(1, 3).unwrap().data(), &[2.0, 3.0]);
        assert_eq!(Tensor::scalar(0.0).sigmoid().unwrap().item().unwrap(), 0.5);
        assert_rel(
            Tensor::scalar(3.0).softplus().unwrap().item().unwrap(),
            (3.0f64.exp() + 1.0).ln(),
            1e-12,
        );
        let neg = v.neg().unwrap();
        assert_eq!(neg.data(), &[-1.0, -2.0, -3.0]);
    }

    #[test]
    fn softplus_keeps_small_tail() {
        // softplus(-50) = log1p(e^-50); a naive log(exp(x)+1) rounds to 0.
        let y = Tensor::scalar(-50.0).softplus().unwrap().item().unwrap();
        assert_rel(y, 1.9287498479639178e-22, 1e-10);
        // and softplus(710) must not overflow to inf
        let y = Tensor::scalar(710.0).softplus().unwrap().item().unwrap();
        assert_rel(y, 710.0, 1e-12);
    }

    #[test]
    fn invsoftplus_roundtrip() {
        for &x in &[1e-6, 0.3, 1.0, 7.5, 25.0, 300.0] {
            let y = Tensor::scalar(x).invsoftplus().unwrap();
            let back = y.softplus().unwrap().item().unwrap();
            assert_rel(back, x, 1e-9);
        }
    }

    #[test]
    fn logsumexp_is_shift_stable() {
        let y = Tensor::vector(vec![1000.0, 1000.0]).logsumexp().unwrap().item().unwrap();
        assert_rel(y, 1000.0 + 2.0f64.ln(), 1e-12);
    }

    #[test]
    fn matmul_oracle() {
        // [[1,2,3],[4,5,6]] · [[7,8],[9,10],[11,12]] = [[58,64],[139,154]]
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let y = a.matmul(&b).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.data(), &[58., 64., 139., 154.]);
        // matrix-vector
        let x = Tensor::vector(vec![1.0, 0.0, -1.0]);
        let y = a.matmul(&x).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn simplex_is_a_distribution() {
        let z = Tensor::vector(vec![2.0, -1.0]);
        let s = z.simplex().unwrap();
        assert_eq!(s.len(), 3);
        let total: f64 = s.data().iter().sum();
        assert_rel(total, 1.0, 1e-12);
        assert!(s.data().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn grads_elementwise() {
        let x = [0.3, -1.2, 2.0];
        grad_check(&x, |t| t.exp()?.sum());
        grad_check(&x, |t| t.sigmoid()?.sum());
        grad_check(&x, |t| t.tanh()?.sum());
        grad_check(&x, |t| t.softplus()?.sum());
        grad_check(&x, |t| t.tan()?.sum());
        grad_check(&x, |t| t.neg()?.sum());
        grad_check(&x, |t| t.scale(2.5)?.sum());
        grad_check(&[0.4, 1.5, 3.0], |t| t.log()?.sum());
        grad_check(&[0.4, 1.5, 3.0], |t| t.invsoftplus()?.sum());
        grad_check(&[0.4, 1.5, 3.0], |t| t.lgamma()?.sum());
    }

    #[test]
    fn grads_binary_and_broadcast() {
        let x = [0.5, -0.7, 1.3, 2.0];
        grad_check(&x, |t| {
            let a = t.slice(0, 2)?;
            let b = t.slice(2, 4)?;
            a.mul(&b)?.sum()
        });
        grad_check(&x, |t| {
            let a = t.slice(0, 2)?;
            let b = t.slice(2, 4)?;
            a.div(&b)?.sum()
        });
        // scalar broadcast, both positions
        grad_check(&x, |t| {
            let s = t.get(0)?;
            let v = t.slice(1, 4)?;
            s.mul(&v)?.sum()?.add(&v.sub(&s)?.sum()?)
        });
    }

    #[test]
    fn grads_reductions_and_shape_ops() {
        let x = [0.1, -0.4, 0.9, 2.2];
        grad_check(&x, |t| t.logsumexp());
        grad_check(&x, |t| t.simplex()?.mul(&Tensor::vector(vec![1., 2., 3., 4., 5.]))?.sum());
        grad_check(&x, |t| {
            let parts = [t.get(3)?, t.slice(0, 2)?];
            Tensor::concat(&[&parts[0], &parts[1]])?.logsumexp()
        });
        grad_check(&x, |t| {
            Tensor::sum_of(&[t.get(0)?, t.get(2)?, Tensor::scalar(5.0), t.get(0)?])
        });
    }

    #[test]
    fn grads_matmul() {
        let x = [0.5, -0.7, 1.3, 0.2, -0.3, 0.8];
        // leaf as 2x2 matrix times leaf-derived vector
        grad_check(&x, |t| {
            let wdata = t.slice(0, 4)?;
            // reshape through concat into a matrix is not provided; emulate a
            // 2x2 matmul with explicit dot products instead, then compare
            // against the real matmul on constants elsewhere.
            let v = t.slice(4, 6)?;
            let r0 = wdata.slice(0, 2)?.mul(&v)?.sum()?;
            let r1 = wdata.slice(2, 4)?.mul(&v)?.sum()?;
            Tensor::concat(&[&r0, &r1])?.logsumexp()
        });
        // direct matmul gradients via two leaves
        let tape = Tape::new();
        let w = tape.leaf(vec![2, 3], vec![0.2, -0.4, 0.9, 1.1, 0.0, -0.6]).unwrap();
        let v = tape.leaf(vec![3], vec![0.5, -1.0, 0.25]).unwrap();
        let loss = w.matmul(&v).unwrap().logsumexp().unwrap();
        let grads = loss.backward().unwrap();
        let gw = grads.get_or_zeros(&w);
        let gv = grads.get_or_zeros(&v);
        let f = |wd: &[f64], vd: &[f64]| {
            let w = Tensor::matrix(2, 3, wd.to_vec()).unwrap();
            let v = Tensor::vector(vd.to_vec());
            w.matmul(&v).unwrap().logsumexp().unwrap().item().unwrap()
        };
        let wd = w.data().to_vec();
        let vd = v.data().to_vec();
        let fw = finite_diff(&mut |p: &[f64]| f(p, &vd), &wd, 1e-5);
        let fv = finite_diff(&mut |p: &[f64]| f(&wd, p), &vd, 1e-5);
        for (g, w) in gw.iter().zip(&fw) {
            assert!(rel_err(*g, *w) < 1e-4 || (g - w).abs() < 1e-7);
        }
        for (g, w) in gv.iter().zip(&fv) {
            assert!(rel_err(*g, *w) < 1e-4 || (g - w).abs() < 1e-7);
        }
    }

    #[test]
    fn grads_three_layer_net() {
        // tanh(W2·sigmoid(W1·x + b1) + b2) summed; checks long chains.
        let tape = Tape::new();
        let w1 = tape.leaf(vec![3, 2], vec![0.3, -0.2, 0.5, 0.8, -0.6, 0.1]).unwrap();
        let b1 = tape.leaf(vec![3], vec![0.05, -0.1, 0.2]).unwrap();
        let w2 = tape.leaf(vec![2, 3], vec![0.7, -0.4, 0.2, -0.9, 0.3, 0.6]).unwrap();
        let b2 = tape.leaf(vec![2], vec![0.0, 0.1]).unwrap();
        let x = Tensor::vector(vec![0.4, -1.1]);
        let run = |w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor| -> Tensor {
            let h = w1.matmul(&x).unwrap().add(b1).unwrap().sigmoid().unwrap();
            w2.matmul(&h).unwrap().add(b2).unwrap().tanh().unwrap().sum().unwrap()
        };
        let loss = run(&w1, &b1, &w2, &b2);
        let grads = loss.backward().unwrap();
        let leaves = [(&w1, vec![3usize, 2]), (&b1, vec![3]), (&w2, vec![2, 3]), (&b2, vec![2])];
        for (li, (leaf, shape)) in leaves.iter().enumerate() {
            let got = grads.get_or_zeros(leaf);
            let base = leaf.data().to_vec();
            let fd = finite_diff(
                &mut |p: &[f64]| {
                    let t = Tape::new();
                    let mut ts: Vec<Tensor> = leaves
                        .iter()
                        .map(|(l, s)| t.leaf(s.clone(), l.data().to_vec()).unwrap())
                        .collect();
                    ts[li] = t.leaf(shape.clone(), p.to_vec()).unwrap();
                    run(&ts[0], &ts[1], &ts[2], &ts[3]).item().unwrap()
                },
                &base,
                1e-5,
            );
            for (g, w) in got.iter().zip(&fd) {
                assert!(
                    rel_err(*g, *w) < 1e-4 || (g - w).abs() < 1e-7,
                    "leaf {li}: {g} vs {w}"
                );
            }
        }
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(vec![], vec![3.0]).unwrap();
        // y = detach(x) * x  =>  dy/dx = detach(x) = 3
        let y = x.detach().mul(&x).unwrap();
        let grads = y.backward().unwrap();
        assert_eq!(grads.get_or_zeros(&x), vec![3.0]);
    }

    #[test]
    fn backward_errors() {
        let c = Tensor::scalar(1.0);
        assert!(c.backward().is_err(), "detached loss must fail");

        let tape = Tape::new();
        let x = tape.leaf(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(x.backward().is_err(), "non-scalar loss must fail");

        let loss = x.sum().unwrap();
        loss.backward().unwrap();
        assert!(!tape.is_alive());
        assert!(x.exp().is_err(), "recording on a consumed tape must fail");
    }

    #[test]
    fn mixed_tapes_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.leaf(vec![], vec![1.0]).unwrap();
        let b = t2.leaf(vec![], vec![2.0]).unwrap();
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn domain_errors_not_nan() {
        assert!(Tensor::scalar(-1.0).log().is_err());
        assert!(Tensor::scalar(0.0).log().is_err());
        assert!(Tensor::scalar(1000.0).exp().is_err(), "overflow to inf must error");
        assert!(Tensor::vector(vec![1.0, 0.0]).div(&Tensor::vector(vec![0.0, 1.0])).is_err());
        assert!(Tensor::scalar(-0.5).invsoftplus().is_err());
        assert!(Tensor::scalar(0.0).lgamma().is_err());
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert!(a.add(&b).is_err());
        assert!(a.matmul(&b).is_err());
        assert!(Tensor::matrix(2, 2, vec![1.0]).is_err());
        assert!(a.get(5).is_err());
    }

    #[test]
    fn one_hot_basis() {
        let e = Tensor::one_hot(2, 4).unwrap();
        assert_eq!(e.data(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(Tensor::one_hot(4, 4).is_err());
    }

    #[test]
    fn lgamma_matches_factorials() {
        // Γ(n) = (n-1)!
        let y = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0, 5.0]).lgamma().unwrap();
        let want = [0.0, 0.0, 2.0f64.ln(), 6.0f64.ln(), 24.0f64.ln()];
        for (g, w) in y.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-14 + 1e-12 * w.abs(), "{g} vs {w}");
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn logsumexp_shift_invariant(
            xs in proptest::collection::vec(-50.0f64..50.0, 1..8),
            c in -100.0f64..100.0,
        ) {
            let a = Tensor::vector(xs.clone()).logsumexp().unwrap().item().unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let b = Tensor::vector(shifted).logsumexp().unwrap().item().unwrap();
            prop_assert!((a + c - b).abs() < 1e-9 * (1.0 + b.abs()));
        }

        #[test]
        fn simplex_always_valid(zs in proptest::collection::vec(-30.0f64..30.0, 1..6)) {
            let s = Tensor::vector(zs.clone()).simplex().unwrap();
            prop_assert_eq!(s.len(), zs.len() + 1);
            let total: f64 = s.data().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(s.data().iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn softplus_positive_and_monotone(x in -200.0f64..200.0) {
            let y = Tensor::scalar(x).softplus().unwrap().item().unwrap();
            let y2 = Tensor::scalar(x + 0.5).softplus().unwrap().item().unwrap();
            prop_assert!(y > 0.0);
            prop_assert!(y2 > y);
        }
    }
}
