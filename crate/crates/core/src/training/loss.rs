use crate::error::{Error, Result};
use crate::tape::{NodeId, Op, Tape};
use crate::tensor::Tensor;

fn check(scores: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    if scores.ndim() != 2 {
        return Err(Error::shape(format!(
            "scores must be [B, C], got {:?}",
            scores.shape()
        )));
    }
    let (b, k) = (scores.shape()[0], scores.shape()[1]);
    if labels.len() != b || b == 0 {
        return Err(Error::shape(format!(
            "{} labels for {b} score rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok((b, k))
}

/// Row-wise softmax with max subtraction, plus the mean loss.
fn softmax_loss(scores: &Tensor, labels: &[usize]) -> (Vec<f64>, f64) {
    let k = scores.last_dim();
    let mut probs = Vec::with_capacity(scores.numel());
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = scores.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|s| (s - m).exp()).sum();
        loss += z.ln() + m - row[label];
        probs.extend(row.iter().map(|s| (s - m).exp() / z));
    }
    debug_assert_eq!(probs.len(), labels.len() * k);
    (probs, loss / labels.len() as f64)
}

/// Mean negative log-softmax of the true class.
pub fn cross_entropy(scores: &Tensor, labels: &[usize]) -> Result<f64> {
    check(scores, labels)?;
    Ok(softmax_loss(scores, labels).1)
}

#[derive(Debug)]
struct CrossEntropyOp {
    probs: Tensor,
    labels: Vec<usize>,
}

impl Op for CrossEntropyOp {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let g = grad.item()? / self.labels.len() as f64;
        let k = self.probs.last_dim();
        let mut out = self.probs.scale(g);
        for (i, &l) in self.labels.iter().enumerate() {
            out.data_mut()[i * k + l] -= g;
        }
        Ok(vec![Some(out)])
    }
    fn saved_bytes(&self) -> usize {
        self.probs.bytes() + self.labels.len() * std::mem::size_of::<usize>()
    }
}

impl Tape {
    /// Scalar cross-entropy of `[B, C]` logits against integer labels.
    pub fn cross_entropy(&mut self, scores: NodeId, labels: &[usize]) -> Result<NodeId> {
        let s = self.value(scores);
        check(s, labels)?;
        let (probs, loss) = softmax_loss(s, labels);
        let probs = Tensor::from_parts(probs, s.shape().to_vec());
        let op = CrossEntropyOp {
            probs,
            labels: labels.to_vec(),
        };
        self.record(Box::new(op), &[scores], Tensor::scalar(loss))
    }
}

/// Fraction of rows whose arg-max equals the label (first maximum wins).
pub fn accuracy(scores: &Tensor, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let row = scores.row(i);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
            best == l
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}
