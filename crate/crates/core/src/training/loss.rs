//! Masked cosine distance, conditional triplet loss and its gradient.

use crate::error::{Error, Result};
use crate::model::DimensionMask;

const NORM_EPS: f64 = 1e-12;

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `1 - x.y / (|x| |y|)`; returns 1 when either vector is zero.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> f64 {
    let denom = (dot(x, x) * dot(y, y)).sqrt();
    if denom < NORM_EPS {
        return 1.0;
    }
    1.0 - dot(x, y) / denom
}

/// Cosine distance together with its gradients with respect to `x` and `y`.
/// Gradients are zero on the guarded zero-vector path.
pub fn cosine_distance_grad(x: &[f64], y: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let nx2 = dot(x, x);
    let ny2 = dot(y, y);
    let denom = (nx2 * ny2).sqrt();
    if denom < NORM_EPS {
        return (1.0, vec![0.0; x.len()], vec![0.0; y.len()]);
    }
    let s = dot(x, y) / denom;
    let gx = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| -(b / denom - s * a / nx2))
        .collect();
    let gy = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| -(a / denom - s * b / ny2))
        .collect();
    (1.0 - s, gx, gy)
}

/// Cosine distance between `m_s * x` and `m_s * y`.
pub fn masked_cosine_distance(x: &[f64], y: &[f64], mask: &DimensionMask, s: usize) -> f64 {
    let r = mask.range(s);
    cosine_distance(&x[r.clone()], &y[r])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub value: f64,
    pub d_ap: f64,
    pub d_an: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

/// `max(0, d(m a, m p) - d(m a, m n) + margin)` with full-length gradients
/// that vanish outside the mask of dimension `s`.
pub fn conditional_triplet_loss(
    a: &[f64],
    p: &[f64],
    n: &[f64],
    mask: &DimensionMask,
    s: usize,
    margin: f64,
) -> TripletLoss {
    let d = a.len();
    let r = mask.range(s);
    let (d_ap, ga_p, gp) = cosine_distance_grad(&a[r.clone()], &p[r.clone()]);
    let (d_an, ga_n, gn) = cosine_distance_grad(&a[r.clone()], &n[r.clone()]);
    let value = (d_ap - d_an + margin).max(0.0);
    let mut grad_anchor = vec![0.0; d];
    let mut grad_positive = vec![0.0; d];
    let mut grad_negative = vec![0.0; d];
    if value > 0.0 {
        for (k, i) in r.enumerate() {
            grad_anchor[i] = ga_p[k] - ga_n[k];
            grad_positive[i] = gp[k];
            grad_negative[i] = -gn[k];
        }
    }
    TripletLoss {
        value,
        d_ap,
        d_an,
        grad_anchor,
        grad_positive,
        grad_negative,
    }
}

/// Mean of the per-dimension losses.
pub fn multi_dim_loss(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Domain(
            "multi-dimensional loss of no dimensions".into(),
        ));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_distance_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!(cosine_distance(&x, &x).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]) - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&x, &[-1.0, -2.0, -3.0]) - 2.0).abs() < 1e-15);
        assert_eq!(cosine_distance(&[0.0; 3], &[0.0; 3]), 1.0);
    }

    #[test]
    fn multi_dim_loss_examples() {
        assert!((multi_dim_loss(&[0.6, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(multi_dim_loss(&[0.3; 4]).unwrap(), 0.3);
        assert!(matches!(multi_dim_loss(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn satisfied_margin_has_zero_loss() {
        // d_ap = 0.2-ish vs d_an = 1 with margin 0.1.
        let mask = DimensionMask::new(2, 1).unwrap();
        let l = conditional_triplet_loss(&[1.0, 0.0], &[1.0, 0.5], &[0.0, 1.0], &mask, 0, 0.1);
        assert_eq!(l.value, 0.0);
        assert!(l.grad_anchor.iter().all(|&g| g == 0.0));
    }

    fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-2.0f64..2.0, len)
    }

    proptest! {
        #[test]
        fn masked_distance_equals_subvector_distance(x in vector(12), y in vector(12), s in 0usize..6) {
            let mask = DimensionMask::new(12, 6).unwrap();
            let zero_padded = cosine_distance(&mask.apply(&x, s), &mask.apply(&y, s));
            prop_assert!((masked_cosine_distance(&x, &y, &mask, s) - zero_padded).abs() < 1e-12);
        }

        #[test]
        fn distance_in_range(x in vector(8), y in vector(8)) {
            let d = cosine_distance(&x, &y);
            prop_assert!((-1e-12..=2.0 + 1e-12).contains(&d));
        }

        #[test]
        fn multi_dim_loss_is_linear(l in proptest::collection::vec(0.0f64..5.0, 1..7)) {
            let doubled: Vec<f64> = l.iter().map(|v| 2.0 * v).collect();
            prop_assert!((multi_dim_loss(&doubled).unwrap() - 2.0 * multi_dim_loss(&l).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn loss_gradient_matches_finite_differences(
            a in vector(12), p in vector(12), n in vector(12), s in 0usize..3,
        ) {
            let mask = DimensionMask::new(12, 3).unwrap();
            let r = mask.range(s);
            let norms_ok = [&a, &p, &n].iter().all(|v| v[r.clone()].iter().map(|x| x * x).sum::<f64>() > 0.1);
            prop_assume!(norms_ok);
            let l = conditional_triplet_loss(&a, &p, &n, &mask, s, 0.1);
            prop_assume!(l.value > 1e-3);
            let h = 1e-6;
            let f = |a: &[f64], p: &[f64], n: &[f64]| conditional_triplet_loss(a, p, n, &mask, s, 0.1).value;
            for i in 0..12 {
                for (which, grad) in [(0, &l.grad_anchor), (1, &l.grad_positive), (2, &l.grad_negative)] {
                    let mut v = [a.clone(), p.clone(), n.clone()];
                    v[which][i] += h;
                    let fp = f(&v[0], &v[1], &v[2]);
                    v[which][i] -= 2.0 * h;
                    let fm = f(&v[0], &v[1], &v[2]);
                    let fd = (fp - fm) / (2.0 * h);
                    prop_assert!((fd - grad[i]).abs() < 1e-5 * (1.0 + fd.abs()), "slot {which} idx {i}: {fd} vs {}", grad[i]);
                }
            }
        }
    }
}
