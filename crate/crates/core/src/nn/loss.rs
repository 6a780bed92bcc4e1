use crate::error::{Error, Result};

/// Row-wise softmax of an `m x c` logit block (max-subtracted), and the
/// mean negative log-likelihood over the rows that carry a label.
///
/// Labels are class ids in `1..=c`; `None` rows are unsupervised.
pub fn softmax_xent(logits: &[f64], n_classes: usize, labels: &[Option<usize>]) -> Result<(f64, Vec<f64>)> {
    let probs = softmax(logits, n_classes);
    let mut loss = 0.0;
    let mut count = 0usize;
    for (row, label) in probs.chunks(n_classes).zip(labels) {
        if let Some(c) = *label {
            count += 1;
            // Clamp so a saturated wrong prediction yields a large finite loss.
            loss -= row[c - 1].max(f64::MIN_POSITIVE).ln();
        }
    }
    if count == 0 {
        return Err(Error::NoSupervision);
    }
    Ok((loss / count as f64, probs))
}

pub fn softmax(logits: &[f64], n_classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(n_classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Gradient of [`softmax_xent`]'s loss w.r.t. the logits.
pub fn xent_grad(probs: &[f64], n_classes: usize, labels: &[Option<usize>]) -> Vec<f64> {
    let count = labels.iter().filter(|l| l.is_some()).count().max(1) as f64;
    let mut d = vec![0.0; probs.len()];
    for ((drow, prow), label) in d.chunks_mut(n_classes).zip(probs.chunks(n_classes)).zip(labels) {
        if let Some(c) = *label {
            for (dv, &p) in drow.iter_mut().zip(prow) {
                *dv = p / count;
            }
            drow[c - 1] -= 1.0 / count;
        }
    }
    d
}

pub fn argmax_rows(values: &[f64], n_classes: usize) -> Vec<usize> {
    values
        .chunks(n_classes)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best + 1
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let (loss, p) = softmax_xent(&[0.3, 0.3, 0.3, 0.3], 4, &[Some(2)]).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let (loss, p) = softmax_xent(&[1000.0, 0.0], 2, &[Some(1)]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        assert_eq!(loss, 0.0);
        let (bad, _) = softmax_xent(&[1000.0, 0.0], 2, &[Some(2)]).unwrap();
        assert!(bad.is_finite() && bad > 700.0);
    }

    #[test]
    fn closed_form_two_class() {
        let (loss, p) = softmax_xent(&[0.0, 3f64.ln()], 2, &[Some(2)]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        assert!((loss - 0.28768207245178).abs() < 1e-12);
    }

    #[test]
    fn unlabeled_rows_are_ignored() {
        let (loss, _) = softmax_xent(&[0.0, 3f64.ln(), 50.0, -50.0], 2, &[Some(2), None]).unwrap();
        assert!((loss + 0.75f64.ln()).abs() < 1e-12);
        assert!(matches!(softmax_xent(&[0.0, 0.0], 2, &[None]), Err(Error::NoSupervision)));
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax_rows(&[0.5, 0.5, 0.1, 0.9], 2), vec![1, 2]);
    }
}
