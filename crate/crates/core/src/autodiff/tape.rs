use super::tensor::{GradSet, ParamId, ParamSet};
use super::AutodiffError;

/// Index of a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// A parameter tensor addressed through one of the tape's parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamRef {
    pub group: usize,
    pub id: ParamId,
}

impl ParamRef {
    pub fn new(group: usize, id: ParamId) -> Self {
        Self { group, id }
    }
}

/// Weights of a vanilla tanh RNN cell: `h' = tanh(W_ih x + b_ih + W_hh h + b_hh)`.
#[derive(Clone, Copy, Debug)]
pub struct RnnWeights {
    pub w_ih: ParamRef,
    pub b_ih: ParamRef,
    pub w_hh: ParamRef,
    pub b_hh: ParamRef,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamRef),
    Linear {
        x: NodeId,
        w: ParamRef,
        b: Option<ParamRef>,
    },
    Embedding {
        table: ParamRef,
        row: usize,
    },
    Tanh(NodeId),
    Add(NodeId, NodeId),
    AddScalar(NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Square(NodeId),
    Concat(Vec<NodeId>),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Pick(NodeId, usize),
    Sum(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Reverse-mode tape over a fixed set of parameter groups.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
pub struct Tape<'p> {
    groups: Vec<&'p ParamSet>,
    nodes: Vec<Node>,
    grad_enabled: bool,
    consumed: bool,
}

impl<'p> Tape<'p> {
    /// A recording tape; [`Tape::backward`] is available.
    pub fn new(groups: Vec<&'p ParamSet>) -> Self {
        Self {
            groups,
            nodes: Vec::with_capacity(64),
            grad_enabled: true,
            consumed: false,
        }
    }

    /// A tape used only for forward evaluation.
    pub fn inference(groups: Vec<&'p ParamSet>) -> Self {
        Self {
            grad_enabled: false,
            ..Self::new(groups)
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn param(&self, r: ParamRef) -> &'p super::Tensor {
        self.groups[r.group].get(r.id)
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Vec<f64>,
        op: Op,
    ) -> Result<NodeId, AutodiffError> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Result<NodeId, AutodiffError> {
        self.push("constant", value, Op::Constant)
    }

    /// The whole parameter tensor as a flat vector node.
    pub fn param_node(&mut self, p: ParamRef) -> Result<NodeId, AutodiffError> {
        let value = self.param(p).data().to_vec();
        self.push("param", value, Op::Param(p))
    }

    /// `W x + b` with `W` of shape `[out, in]`.
    pub fn linear(
        &mut self,
        x: NodeId,
        w: ParamRef,
        b: Option<ParamRef>,
    ) -> Result<NodeId, AutodiffError> {
        let wt = self.param(w);
        let xin = &self.nodes[x.0].value;
        if wt.shape().len() != 2 || wt.cols() != xin.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "linear",
                expected: wt.cols(),
                got: xin.len(),
            });
        }
        let rows = wt.rows();
        let mut out = match b {
            Some(b) => {
                let bt = self.param(b);
                if bt.len() != rows {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "linear bias",
                        expected: rows,
                        got: bt.len(),
                    });
                }
                bt.data().to_vec()
            }
            None => vec![0.0; rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(wt.row(r), xin);
        }
        self.push("linear", out, Op::Linear { x, w, b })
    }

    /// Row `row` of an embedding table of shape `[n, dim]`.
    pub fn embedding(&mut self, table: ParamRef, row: usize) -> Result<NodeId, AutodiffError> {
        let t = self.param(table);
        if row >= t.rows() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "embedding",
                index: row,
                len: t.rows(),
            });
        }
        let value = t.row(row).to_vec();
        self.push("embedding", value, Op::Embedding { table, row })
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push("tanh", value, Op::Tanh(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_len("add", va, vb)?;
        let value = va.iter().zip(vb).map(|(x, y)| x + y).collect();
        self.push("add", value, Op::Add(a, b))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId, AutodiffError> {
        let value = self.nodes[x.0].value.iter().map(|v| v + c).collect();
        self.push("add_scalar", value, Op::AddScalar(x))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_len("mul", va, vb)?;
        let value = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        self.push("mul", value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, AutodiffError> {
        let value = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        self.push("scale", value, Op::Scale(x, c))
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.nodes[x.0].value.iter().map(|v| v * v).collect();
        self.push("square", value, Op::Square(x))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let value = parts
            .iter()
            .flat_map(|p| self.nodes[p.0].value.iter().copied())
            .collect();
        self.push("concat", value, Op::Concat(parts.to_vec()))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let value = softmax(&self.nodes[x.0].value);
        self.push("softmax", value, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let value = log_softmax(&self.nodes[x.0].value);
        self.push("log_softmax", value, Op::LogSoftmax(x))
    }

    /// Scalar node holding entry `i` of `x`.
    pub fn pick(&mut self, x: NodeId, i: usize) -> Result<NodeId, AutodiffError> {
        let v = &self.nodes[x.0].value;
        if i >= v.len() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "pick",
                index: i,
                len: v.len(),
            });
        }
        let value = vec![v[i]];
        self.push("pick", value, Op::Pick(x, i))
    }

    /// Sum of all entries of `x` as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let value = vec![self.nodes[x.0].value.iter().sum()];
        self.push("sum", value, Op::Sum(x))
    }

    /// Sum of several same-shaped nodes.
    pub fn add_all(&mut self, xs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let (first, rest) = xs
            .split_first()
            .ok_or(AutodiffError::Empty { op: "add_all" })?;
        rest.iter().try_fold(*first, |acc, x| self.add(acc, *x))
    }

    /// Log-probability of category `index` under `softmax(logits)`, via the
    /// max-shifted log-sum-exp.
    pub fn log_prob(&mut self, logits: NodeId, index: usize) -> Result<NodeId, AutodiffError> {
        let ls = self.log_softmax(logits)?;
        self.pick(ls, index)
    }

    pub fn rnn_cell(
        &mut self,
        h_prev: NodeId,
        x: NodeId,
        w: &RnnWeights,
    ) -> Result<NodeId, AutodiffError> {
        let a = self.linear(x, w.w_ih, Some(w.b_ih))?;
        let b = self.linear(h_prev, w.w_hh, Some(w.b_hh))?;
        let s = self.add(a, b)?;
        self.tanh(s)
    }

    /// Back-propagates from scalar `loss`, allocating fresh gradient buffers.
    pub fn backward(&mut self, loss: NodeId) -> Result<Vec<GradSet>, AutodiffError> {
        let mut grads: Vec<GradSet> = self.groups.iter().map(|g| g.zero_grads()).collect();
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Back-propagates from scalar `loss`, adding parameter gradients into
    /// `grads` (one [`GradSet`] per parameter group).
    pub fn backward_into(
        &mut self,
        loss: NodeId,
        grads: &mut [GradSet],
    ) -> Result<(), AutodiffError> {
        if !self.grad_enabled {
            return Err(AutodiffError::GradDisabled);
        }
        if self.consumed {
            return Err(AutodiffError::AlreadyBackpropagated);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::NotScalar {
                len: self.nodes[loss.0].value.len(),
            });
        }
        if grads.len() != self.groups.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "backward groups",
                expected: self.groups.len(),
                got: grads.len(),
            });
        }
        self.consumed = true;

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => {
                    axpy(grads[p.group].get_mut(p.id), 1.0, &g);
                }
                Op::Linear { x, w, b } => {
                    let wt = self.groups[w.group].get(w.id);
                    let xin = &self.nodes[x.0].value;
                    let cols = wt.cols();
                    {
                        let gw = grads[w.group].get_mut(w.id);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                axpy(&mut gw[r * cols..(r + 1) * cols], gr, xin);
                            }
                        }
                    }
                    if let Some(b) = b {
                        axpy(grads[b.group].get_mut(b.id), 1.0, &g);
                    }
                    let gx = accum(&mut adj, *x, cols);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(gx, gr, wt.row(r));
                        }
                    }
                }
                Op::Embedding { table, row } => {
                    let t = self.groups[table.group].get(table.id);
                    let cols = t.cols();
                    let gt = grads[table.group].get_mut(table.id);
                    axpy(&mut gt[row * cols..(row + 1) * cols], 1.0, &g);
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let gx = accum(&mut adj, *x, y.len());
                    for ((gxi, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *gxi += gi * (1.0 - yi * yi);
                    }
                }
                Op::Add(a, b) => {
                    axpy(accum(&mut adj, *a, g.len()), 1.0, &g);
                    axpy(accum(&mut adj, *b, g.len()), 1.0, &g);
                }
                Op::AddScalar(x) => {
                    axpy(accum(&mut adj, *x, g.len()), 1.0, &g);
                }
                Op::Mul(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let ga = accum(&mut adj, *a, g.len());
                    for ((o, gi), bi) in ga.iter_mut().zip(&g).zip(vb) {
                        *o += gi * bi;
                    }
                    let gb = accum(&mut adj, *b, g.len());
                    for ((o, gi), ai) in gb.iter_mut().zip(&g).zip(va) {
                        *o += gi * ai;
                    }
                }
                Op::Scale(x, c) => {
                    axpy(accum(&mut adj, *x, g.len()), *c, &g);
                }
                Op::Square(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx = accum(&mut adj, *x, g.len());
                    for ((o, gi), xi) in gx.iter_mut().zip(&g).zip(xv) {
                        *o += 2.0 * gi * xi;
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        axpy(accum(&mut adj, *p, n), 1.0, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Softmax(x) => {
                    // dx_i = y_i (g_i - <g, y>)
                    let y = &node.value;
                    let gy: f64 = dot(&g, y);
                    let gx = accum(&mut adj, *x, y.len());
                    for ((o, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *o += yi * (gi - gy);
                    }
                }
                Op::LogSoftmax(x) => {
                    // dx_i = g_i - softmax_i * sum(g)
                    let ls = &node.value;
                    let gs: f64 = g.iter().sum();
                    let gx = accum(&mut adj, *x, ls.len());
                    for ((o, gi), li) in gx.iter_mut().zip(&g).zip(ls) {
                        *o += gi - li.exp() * gs;
                    }
                }
                Op::Pick(x, idx) => {
                    let n = self.nodes[x.0].value.len();
                    accum(&mut adj, *x, n)[*idx] += g[0];
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.len();
                    accum(&mut adj, *x, n).iter_mut().for_each(|v| *v += g[0]);
                }
            }
        }
        Ok(())
    }
}

fn accum(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    adj[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn same_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<(), AutodiffError> {
    if a.len() != b.len() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorise the loop.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Softmax with max subtraction.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `x_i - logsumexp(x)`.
pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}
