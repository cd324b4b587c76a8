//! Displacement metrics and the training loss.
//!
//! Shapes: a trajectory set is `[T, m, 2]`, a candidate set `[K, T, m, 2]`,
//! and masks are `[T, m]` with `true` marking a valid label frame.

use ndarray::{Array4, ArrayView2, ArrayView3, ArrayView4, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ade,
    Fde,
}

fn dist(pred: &ArrayView3<f64>, gt: &ArrayView3<f64>, t: usize, i: usize) -> f64 {
    (pred[[t, i, 0]] - gt[[t, i, 0]]).hypot(pred[[t, i, 1]] - gt[[t, i, 1]])
}

fn check(pred: &ArrayView3<f64>, gt: &ArrayView3<f64>, mask: &ArrayView2<bool>) -> Result<()> {
    let (t, m, c) = pred.dim();
    if gt.dim() != (t, m, c) || c != 2 || mask.dim() != (t, m) {
        return Err(Error::Shape {
            what: "metric operands".into(),
            expected: vec![t, m, 2],
            actual: gt.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean Euclidean error over the masked `(t, i)` pairs. With an all-true
/// mask this divides by `m * T` exactly.
pub fn ade(pred: ArrayView3<f64>, gt: ArrayView3<f64>, mask: ArrayView2<bool>) -> Result<f64> {
    check(&pred, &gt, &mask)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for ((t, i), &valid) in mask.indexed_iter() {
        if valid {
            sum += dist(&pred, &gt, t, i);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMetric("ADE with every label frame masked"));
    }
    Ok(sum / count as f64)
}

/// Mean final-frame error over pedestrians whose final label is valid.
pub fn fde(pred: ArrayView3<f64>, gt: ArrayView3<f64>, mask: ArrayView2<bool>) -> Result<f64> {
    check(&pred, &gt, &mask)?;
    let (t_len, m, _) = pred.dim();
    if t_len == 0 {
        return Err(Error::EmptyMetric("FDE over zero frames"));
    }
    let last = t_len - 1;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..m {
        if mask[[last, i]] {
            sum += dist(&pred, &gt, last, i);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMetric("FDE with no valid final label"));
    }
    Ok(sum / count as f64)
}

pub fn metric(which: Metric, pred: ArrayView3<f64>, gt: ArrayView3<f64>, mask: ArrayView2<bool>) -> Result<f64> {
    match which {
        Metric::Ade => ade(pred, gt, mask),
        Metric::Fde => fde(pred, gt, mask),
    }
}

/// Minimum of `which` over the candidates of one sample.
pub fn min_k(candidates: ArrayView4<f64>, gt: ArrayView3<f64>, mask: ArrayView2<bool>, which: Metric) -> Result<f64> {
    if candidates.shape()[0] == 0 {
        return Err(Error::InvalidArgument("min_k needs at least one candidate".into()));
    }
    let mut best = f64::INFINITY;
    for c in candidates.axis_iter(Axis(0)) {
        best = best.min(metric(which, c, gt.view(), mask.view())?);
    }
    Ok(best)
}

/// Per-pedestrian best-of-K scores: `min_k` applied to each pedestrian
/// column on its own. Pedestrians without any valid label frame (or without
/// a valid final frame for FDE) yield `None`.
pub fn min_k_per_pedestrian(
    candidates: ArrayView4<f64>,
    gt: ArrayView3<f64>,
    mask: ArrayView2<bool>,
    which: Metric,
) -> Result<Vec<Option<f64>>> {
    let m = gt.shape()[1];
    (0..m)
        .map(|i| {
            let sl = ndarray::s![.., .., i..i + 1, ..];
            match min_k(
                candidates.slice(sl),
                gt.slice(ndarray::s![.., i..i + 1, ..]),
                mask.slice(ndarray::s![.., i..i + 1]),
                which,
            ) {
                Ok(v) => Ok(Some(v)),
                Err(Error::EmptyMetric(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Winner-takes-all masked ADE of one window and its gradient with respect
/// to the candidates. Each pedestrian selects its candidate with the lowest
/// masked ADE; the loss is the masked ADE of the selected rows pooled over
/// all valid `(t, i)`. Returns `(loss, gradient, chosen)`.
pub fn window_loss(
    candidates: ArrayView4<f64>,
    gt: ArrayView3<f64>,
    mask: ArrayView2<bool>,
) -> Result<(f64, Array4<f64>, Vec<usize>)> {
    let (k, t_len, m, _) = candidates.dim();
    if k == 0 {
        return Err(Error::InvalidArgument("loss needs at least one candidate".into()));
    }
    check(&candidates.index_axis(Axis(0), 0), &gt, &mask)?;
    let count = mask.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::EmptyMetric("loss with every label frame masked"));
    }
    let mut grad = Array4::zeros(candidates.dim());
    let mut chosen = vec![0; m];
    let mut total = 0.0;
    for i in 0..m {
        let mut best = (f64::INFINITY, 0);
        for c in 0..k {
            let cand = candidates.index_axis(Axis(0), c);
            let s: f64 = (0..t_len).filter(|&t| mask[[t, i]]).map(|t| dist(&cand, &gt, t, i)).sum();
            if s < best.0 {
                best = (s, c);
            }
        }
        let c = best.1;
        chosen[i] = c;
        if best.0.is_finite() {
            total += best.0;
        }
        for t in 0..t_len {
            if !mask[[t, i]] {
                continue;
            }
            let dx = candidates[[c, t, i, 0]] - gt[[t, i, 0]];
            let dy = candidates[[c, t, i, 1]] - gt[[t, i, 1]];
            let d = dx.hypot(dy);
            if d > 0.0 {
                grad[[c, t, i, 0]] = dx / d / count as f64;
                grad[[c, t, i, 1]] = dy / d / count as f64;
            }
        }
    }
    Ok((total / count as f64, grad, chosen))
}

/// Mean of per-window losses.
pub fn batch_loss(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::EmptyMetric("loss over an empty batch"));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2, Array3};

    #[test]
    fn hand_cases() {
        let gt = Array3::<f64>::zeros((2, 1, 2));
        let pred = array![[[0.0, 0.0]], [[1.0, 0.0]]];
        let all = Array2::from_elem((2, 1), true);
        assert_eq!(ade(pred.view(), gt.view(), all.view()).unwrap(), 0.5);

        let gt = Array3::<f64>::zeros((1, 2, 2));
        let pred = array![[[1.0, 0.0], [0.0, 3.0]]];
        let all = Array2::from_elem((1, 2), true);
        assert_eq!(fde(pred.view(), gt.view(), all.view()).unwrap(), 2.0);
    }

    #[test]
    fn fully_masked_is_undefined() {
        let z = Array3::<f64>::zeros((2, 1, 2));
        let none = Array2::from_elem((2, 1), false);
        assert!(matches!(ade(z.view(), z.view(), none.view()), Err(Error::EmptyMetric(_))));
        assert!(matches!(fde(z.view(), z.view(), none.view()), Err(Error::EmptyMetric(_))));
    }

    #[test]
    fn min_over_explicit_candidates() {
        let gt = Array3::<f64>::zeros((1, 1, 2));
        let cands = Array4::from_shape_vec((3, 1, 1, 2), vec![0.9, 0.0, 0.2, 0.0, 0.0, 0.5]).unwrap();
        let all = Array2::from_elem((1, 1), true);
        assert_eq!(min_k(cands.view(), gt.view(), all.view(), Metric::Ade).unwrap(), 0.2);
    }

    #[test]
    fn perfect_candidate_gives_zero_loss_and_gradient() {
        let gt = array![[[1.0, 2.0]], [[1.5, 2.0]]];
        let mut cands = Array4::zeros((2, 2, 1, 2));
        cands.index_axis_mut(Axis(0), 1).assign(&gt);
        let all = Array2::from_elem((2, 1), true);
        let (l, g, chosen) = window_loss(cands.view(), gt.view(), all.view()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        assert_eq!(chosen, vec![1]);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(batch_loss(&[]).is_err());
    }
}
