use super::layers::softmax;
use super::{NnError, Tensor};

const PROB_FLOOR: f64 = 1e-12;

pub fn one_hot(class: usize, classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; classes];
    y[class] = 1.0;
    y
}

/// `-ln s[class]`, with the probability floored at 1e-12.
pub fn nll_loss(s: &[f64], class: usize) -> f64 {
    -s[class].max(PROB_FLOOR).ln()
}

/// Mean softmax cross-entropy over a `[N, M]` batch of logits, and its
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    let n = logits.batch();
    let m = logits.sample_len();
    if logits.shape().len() != 2 || labels.len() != n || n == 0 {
        return Err(NnError::ShapeMismatch {
            expected: vec![labels.len(), m],
            actual: logits.shape().to_vec(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(NnError::InvalidConfig(format!("label {bad} out of range for {m} classes")));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * m);
    for (i, &label) in labels.iter().enumerate() {
        let s = softmax(logits.sample(i));
        loss += nll_loss(&s, label);
        grad.extend(s.iter().enumerate().map(|(k, &sk)| {
            let yk = if k == label { 1.0 } else { 0.0 };
            (sk - yk) / n as f64
        }));
    }
    Ok((loss / n as f64, Tensor::new(vec![n, m], grad)?))
}

/// Class index of the largest probability (lowest index on ties) and the
/// probability vector for one row of logits.
pub fn predict(logits: &[f64]) -> (usize, Vec<f64>) {
    let s = softmax(logits);
    let mut best = 0;
    for (k, &v) in s.iter().enumerate() {
        if v > s[best] {
            best = k;
        }
    }
    (best, s)
}
