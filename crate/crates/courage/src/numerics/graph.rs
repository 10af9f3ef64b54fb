//! Reverse-mode automatic differentiation over dense matrices.
//!
//! The graph is define-by-run: every forward pass appends nodes to an arena
//! and `backward` walks the arena in reverse insertion order, which is a
//! reverse topological order because parents always precede children.

use crate::error::{CourageError, Result};
use crate::numerics::Matrix;

/// Handle to a node inside one [`Graph`]. Handles from different graphs
/// must not be mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Transpose(NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    RowSelect(NodeId, usize),
    MeanRows(NodeId),
    BroadcastAddBias(NodeId, NodeId),
    SumAll(NodeId),
    LayerNormRows {
        input: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    HuberLoss {
        pred: NodeId,
        target: Matrix,
        delta: f64,
    },
}

struct NodeData {
    value: Matrix,
    grad: Matrix,
    op: Op,
}

/// One computation graph. Rebuilt per forward pass; confined to one worker.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<NodeData>,
    backward_run: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(NodeData { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts an input node. Leaves are the only nodes whose gradients are
    /// read back by callers; constants are simply leaves whose gradient is
    /// never consumed.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to this node.
    pub fn grad(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].grad
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a.0].value.add(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a.0].value.sub(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a.0].value.hadamard(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.nodes[a.0].value.scale(factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Row-wise softmax with per-row max subtraction, so any finite input is
    /// safe from overflow.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let input = &self.nodes[a.0].value;
        if input.is_empty() {
            return Err(CourageError::contract("softmax_rows on empty matrix"));
        }
        let mut out = Matrix::zeros(input.rows(), input.cols());
        for r in 0..input.rows() {
            let row = input.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                out.set(r, c, e);
                sum += e;
            }
            for c in 0..input.cols() {
                out.set(r, c, out.get(r, c) / sum);
            }
        }
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Concatenates nodes side by side; all must share the row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(CourageError::contract("concat_cols of zero nodes"));
        }
        let rows = self.nodes[parts[0].0].value.rows();
        let total_cols: usize = parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
        let mut out = Matrix::zeros(rows, total_cols);
        let mut offset = 0;
        for &p in parts {
            let m = &self.nodes[p.0].value;
            if m.rows() != rows {
                return Err(CourageError::Dim {
                    op: "concat_cols",
                    lhs_rows: rows,
                    lhs_cols: total_cols,
                    rhs_rows: m.rows(),
                    rhs_cols: m.cols(),
                });
            }
            for r in 0..rows {
                for c in 0..m.cols() {
                    out.set(r, offset + c, m.get(r, c));
                }
            }
            offset += m.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks nodes vertically; all must share the column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(CourageError::contract("concat_rows of zero nodes"));
        }
        let cols = self.nodes[parts[0].0].value.cols();
        let total_rows: usize = parts.iter().map(|p| self.nodes[p.0].value.rows()).sum();
        let mut out = Matrix::zeros(total_rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = &self.nodes[p.0].value;
            if m.cols() != cols {
                return Err(CourageError::Dim {
                    op: "concat_rows",
                    lhs_rows: total_rows,
                    lhs_cols: cols,
                    rhs_rows: m.rows(),
                    rhs_cols: m.cols(),
                });
            }
            for r in 0..m.rows() {
                for c in 0..cols {
                    out.set(offset + r, c, m.get(r, c));
                }
            }
            offset += m.rows();
        }
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Extracts one row as a 1xC node.
    pub fn row_select(&mut self, a: NodeId, row: usize) -> Result<NodeId> {
        let m = &self.nodes[a.0].value;
        if row >= m.rows() {
            return Err(CourageError::contract(format!(
                "row_select: row {row} out of bounds for {} rows",
                m.rows()
            )));
        }
        let value = Matrix::from_vec(1, m.cols(), m.row(row).to_vec())?;
        Ok(self.push(value, Op::RowSelect(a, row)))
    }

    /// Column means as a 1xC node.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let m = &self.nodes[a.0].value;
        if m.rows() == 0 {
            return Err(CourageError::contract("mean_rows on empty matrix"));
        }
        let mut value = Matrix::zeros(1, m.cols());
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                value.set(0, c, value.get(0, c) + m.get(r, c));
            }
        }
        let value = value.scale(1.0 / m.rows() as f64);
        Ok(self.push(value, Op::MeanRows(a)))
    }

    /// Adds a 1xC bias to every row of an RxC node.
    pub fn broadcast_add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let m = &self.nodes[a.0].value;
        let b = &self.nodes[bias.0].value;
        if b.rows() != 1 || b.cols() != m.cols() {
            return Err(CourageError::Dim {
                op: "broadcast_add_bias",
                lhs_rows: m.rows(),
                lhs_cols: m.cols(),
                rhs_rows: b.rows(),
                rhs_cols: b.cols(),
            });
        }
        let mut out = m.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, out.get(r, c) + b.get(0, c));
            }
        }
        Ok(self.push(out, Op::BroadcastAddBias(a, bias)))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.sum();
        let value = Matrix::from_vec(1, 1, vec![s]).expect("1x1");
        self.push(value, Op::SumAll(a))
    }

    /// Row-wise layer normalization with learned 1xC gain and bias.
    pub fn layer_norm_rows(
        &mut self,
        input: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let x = &self.nodes[input.0].value;
        let g = &self.nodes[gain.0].value;
        let b = &self.nodes[bias.0].value;
        if g.rows() != 1 || g.cols() != x.cols() || b.rows() != 1 || b.cols() != x.cols() {
            return Err(CourageError::Dim {
                op: "layer_norm_rows",
                lhs_rows: x.rows(),
                lhs_cols: x.cols(),
                rhs_rows: g.rows(),
                rhs_cols: g.cols(),
            });
        }
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let (mean, inv_std) = row_moments(x.row(r), eps);
            for c in 0..x.cols() {
                let norm = (x.get(r, c) - mean) * inv_std;
                out.set(r, c, g.get(0, c) * norm + b.get(0, c));
            }
        }
        Ok(self.push(
            out,
            Op::LayerNormRows {
                input,
                gain,
                bias,
                eps,
            },
        ))
    }

    /// Mean Huber loss between a prediction node and a constant target of the
    /// same shape, as a 1x1 node.
    pub fn huber_loss(&mut self, pred: NodeId, target: &Matrix, delta: f64) -> Result<NodeId> {
        let p = &self.nodes[pred.0].value;
        if !p.same_shape(target) {
            return Err(CourageError::Dim {
                op: "huber_loss",
                lhs_rows: p.rows(),
                lhs_cols: p.cols(),
                rhs_rows: target.rows(),
                rhs_cols: target.cols(),
            });
        }
        if delta <= 0.0 {
            return Err(CourageError::config("huber delta must be > 0"));
        }
        let n = p.len() as f64;
        let mut total = 0.0;
        for (pv, tv) in p.data().iter().zip(target.data()) {
            total += crate::train::huber(*pv, *tv, delta);
        }
        let value = Matrix::from_vec(1, 1, vec![total / n])?;
        Ok(self.push(
            value,
            Op::HuberLoss {
                pred,
                target: target.clone(),
                delta,
            },
        ))
    }

    /// Backpropagates from a scalar node, accumulating gradients into every
    /// node's `grad`. May be called once per graph.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_run {
            return Err(CourageError::contract(
                "backward already run on this graph; rebuild the graph instead",
            ));
        }
        let loss_val = &self.nodes[loss.0].value;
        if loss_val.shape() != (1, 1) {
            return Err(CourageError::contract(format!(
                "backward requires a 1x1 node, got {}x{}",
                loss_val.rows(),
                loss_val.cols()
            )));
        }
        if !loss_val.is_finite() {
            return Err(CourageError::numeric("backward on non-finite loss"));
        }
        self.backward_run = true;
        self.nodes[loss.0].grad.set(0, 0, 1.0);

        for i in (0..=loss.0).rev() {
            let op = self.nodes[i].op.clone();
            let upstream = self.nodes[i].grad.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.nodes[a.0].grad.add_assign(&upstream);
                    self.nodes[b.0].grad.add_assign(&upstream);
                }
                Op::Sub(a, b) => {
                    self.nodes[a.0].grad.add_assign(&upstream);
                    self.nodes[b.0].grad.add_assign(&upstream.scale(-1.0));
                }
                Op::Matmul(a, b) => {
                    let da = upstream.matmul(&self.nodes[b.0].value.transpose())?;
                    let db = self.nodes[a.0].value.transpose().matmul(&upstream)?;
                    self.nodes[a.0].grad.add_assign(&da);
                    self.nodes[b.0].grad.add_assign(&db);
                }
                Op::Hadamard(a, b) => {
                    let da = upstream.hadamard(&self.nodes[b.0].value)?;
                    let db = upstream.hadamard(&self.nodes[a.0].value)?;
                    self.nodes[a.0].grad.add_assign(&da);
                    self.nodes[b.0].grad.add_assign(&db);
                }
                Op::Transpose(a) => {
                    self.nodes[a.0].grad.add_assign(&upstream.transpose());
                }
                Op::Scale(a, factor) => {
                    self.nodes[a.0].grad.add_assign(&upstream.scale(factor));
                }
                Op::Relu(a) => {
                    let gate = self.nodes[a.0].value.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    self.nodes[a.0].grad.add_assign(&upstream.hadamard(&gate)?);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = (0..y.cols())
                            .map(|c| upstream.get(r, c) * y.get(r, c))
                            .sum();
                        for c in 0..y.cols() {
                            da.set(r, c, y.get(r, c) * (upstream.get(r, c) - dot));
                        }
                    }
                    self.nodes[a.0].grad.add_assign(&da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.nodes[p.0].value.shape();
                        let mut dp = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                dp.set(r, c, upstream.get(r, offset + c));
                            }
                        }
                        self.nodes[p.0].grad.add_assign(&dp);
                        offset += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.nodes[p.0].value.shape();
                        let mut dp = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                dp.set(r, c, upstream.get(offset + r, c));
                            }
                        }
                        self.nodes[p.0].grad.add_assign(&dp);
                        offset += rows;
                    }
                }
                Op::RowSelect(a, row) => {
                    let cols = self.nodes[a.0].value.cols();
                    let mut da = Matrix::zeros(self.nodes[a.0].value.rows(), cols);
                    for c in 0..cols {
                        da.set(row, c, upstream.get(0, c));
                    }
                    self.nodes[a.0].grad.add_assign(&da);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.nodes[a.0].value.shape();
                    let w = 1.0 / rows as f64;
                    let mut da = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            da.set(r, c, upstream.get(0, c) * w);
                        }
                    }
                    self.nodes[a.0].grad.add_assign(&da);
                }
                Op::BroadcastAddBias(a, bias) => {
                    self.nodes[a.0].grad.add_assign(&upstream);
                    let cols = upstream.cols();
                    let mut db = Matrix::zeros(1, cols);
                    for r in 0..upstream.rows() {
                        for c in 0..cols {
                            db.set(0, c, db.get(0, c) + upstream.get(r, c));
                        }
                    }
                    self.nodes[bias.0].grad.add_assign(&db);
                }
                Op::SumAll(a) => {
                    let g = upstream.get(0, 0);
                    let (rows, cols) = self.nodes[a.0].value.shape();
                    self.nodes[a.0].grad.add_assign(&Matrix::filled(rows, cols, g));
                }
                Op::LayerNormRows {
                    input,
                    gain,
                    bias,
                    eps,
                } => {
                    let x = self.nodes[input.0].value.clone();
                    let g = self.nodes[gain.0].value.clone();
                    let (rows, cols) = x.shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    let mut dg = Matrix::zeros(1, cols);
                    let mut db = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        let (mean, inv_std) = row_moments(x.row(r), eps);
                        // dxhat = dy .* gain; dx derives from the row moments.
                        let mut dxhat = vec![0.0; cols];
                        let mut xhat = vec![0.0; cols];
                        for c in 0..cols {
                            xhat[c] = (x.get(r, c) - mean) * inv_std;
                            dxhat[c] = upstream.get(r, c) * g.get(0, c);
                            dg.set(0, c, dg.get(0, c) + upstream.get(r, c) * xhat[c]);
                            db.set(0, c, db.get(0, c) + upstream.get(r, c));
                        }
                        let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dxhat_xhat: f64 = dxhat
                            .iter()
                            .zip(&xhat)
                            .map(|(d, h)| d * h)
                            .sum::<f64>()
                            / cols as f64;
                        for c in 0..cols {
                            dx.set(
                                r,
                                c,
                                inv_std * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat),
                            );
                        }
                    }
                    self.nodes[input.0].grad.add_assign(&dx);
                    self.nodes[gain.0].grad.add_assign(&dg);
                    self.nodes[bias.0].grad.add_assign(&db);
                }
                Op::HuberLoss {
                    pred,
                    target,
                    delta,
                } => {
                    let p = &self.nodes[pred.0].value;
                    let n = p.len() as f64;
                    let g = upstream.get(0, 0);
                    let dp = p.zip_map(&target, |pv, tv| {
                        g * (pv - tv).clamp(-delta, delta) / n
                    });
                    self.nodes[pred.0].grad.add_assign(&dp);
                }
            }
        }
        Ok(())
    }
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}
