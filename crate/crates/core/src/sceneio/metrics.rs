use serde::Serialize;

use super::{MaskCode, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of semantic (non-empty) classes.
pub const SEMANTIC_CLASSES: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScMetrics {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Set when a ratio had an empty denominator and was defined as 1.0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassIou {
    pub iou: f64,
    pub intersection: u64,
    pub union: u64,
    /// False when the class occurs in neither prediction nor ground truth;
    /// such classes score 1.0 and are left out of the average.
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub sc: ScMetrics,
    /// Classes 1..=11 in table order.
    pub per_class: Vec<ClassIou>,
    pub average: f64,
    /// Set when no class was present, so the average is defined as 1.0.
    pub average_degenerate: bool,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn check(pred: &Tensor, gt: &Tensor, masks: &Tensor) -> Result<()> {
    if pred.shape() != gt.shape() || gt.shape() != masks.shape() {
        return Err(Error::Shape(format!(
            "metrics need equal shapes: pred {:?}, gt {:?}, masks {:?}",
            pred.shape(),
            gt.shape(),
            masks.shape()
        )));
    }
    Ok(())
}

fn has_code(m: f64, codes: &[MaskCode]) -> bool {
    codes.iter().any(|&c| m == c as u8 as f64)
}

/// Binary completion scores on occluded voxels (class > 0 = occupied).
pub fn sc_metrics(pred: &Tensor, gt: &Tensor, masks: &Tensor) -> Result<ScMetrics> {
    check(pred, gt, masks)?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(masks.data()) {
        if !has_code(m, &[MaskCode::Occluded]) {
            continue;
        }
        match (p > 0.0, g > 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let mut degenerate = false;
    Ok(ScMetrics {
        precision: ratio(tp, tp + fp, &mut degenerate),
        recall: ratio(tp, tp + fn_, &mut degenerate),
        iou: ratio(tp, tp + fp + fn_, &mut degenerate),
        tp,
        fp,
        fn_,
        degenerate,
    })
}

/// Per-class IoU over observed-surface and occluded voxels, plus SC scores.
pub fn ssc_metrics(pred: &Tensor, gt: &Tensor, masks: &Tensor) -> Result<MetricsReport> {
    let sc = sc_metrics(pred, gt, masks)?;
    let mut inter = [0u64; SEMANTIC_CLASSES + 1];
    let mut union = [0u64; SEMANTIC_CLASSES + 1];
    for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(masks.data()) {
        if !has_code(m, &[MaskCode::ObservedSurface, MaskCode::Occluded]) {
            continue;
        }
        let (p, g) = (p as usize, g as usize);
        if p == g {
            if p > 0 && p <= SEMANTIC_CLASSES {
                inter[p] += 1;
                union[p] += 1;
            }
        } else {
            for c in [p, g] {
                if c > 0 && c <= SEMANTIC_CLASSES {
                    union[c] += 1;
                }
            }
        }
    }
    let per_class: Vec<ClassIou> = (1..=SEMANTIC_CLASSES)
        .map(|c| ClassIou {
            iou: if union[c] == 0 {
                1.0
            } else {
                inter[c] as f64 / union[c] as f64
            },
            intersection: inter[c],
            union: union[c],
            present: union[c] > 0,
        })
        .collect();
    let present: Vec<f64> = per_class.iter().filter(|c| c.present).map(|c| c.iou).collect();
    let average_degenerate = present.is_empty();
    let average = if average_degenerate {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(MetricsReport {
        sc,
        per_class,
        average,
        average_degenerate,
    })
}

/// Sums confusion counts of several samples into one report.
pub fn merge_reports(reports: &[MetricsReport]) -> MetricsReport {
    let (tp, fp, fn_) = reports
        .iter()
        .fold((0, 0, 0), |(a, b, c), r| (a + r.sc.tp, b + r.sc.fp, c + r.sc.fn_));
    let mut degenerate = false;
    let sc = ScMetrics {
        precision: ratio(tp, tp + fp, &mut degenerate),
        recall: ratio(tp, tp + fn_, &mut degenerate),
        iou: ratio(tp, tp + fp + fn_, &mut degenerate),
        tp,
        fp,
        fn_,
        degenerate,
    };
    let per_class: Vec<ClassIou> = (0..SEMANTIC_CLASSES)
        .map(|c| {
            let i: u64 = reports.iter().map(|r| r.per_class[c].intersection).sum();
            let u: u64 = reports.iter().map(|r| r.per_class[c].union).sum();
            ClassIou {
                iou: if u == 0 { 1.0 } else { i as f64 / u as f64 },
                intersection: i,
                union: u,
                present: u > 0,
            }
        })
        .collect();
    let present: Vec<f64> = per_class.iter().filter(|c| c.present).map(|c| c.iou).collect();
    MetricsReport {
        sc,
        average: if present.is_empty() {
            1.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        },
        average_degenerate: present.is_empty(),
        per_class,
    }
}

impl MetricsReport {
    /// Columns: SC precision, recall, IoU, then per-class IoU and average.
    pub fn to_table(&self) -> String {
        let mut head = vec!["prec.".to_string(), "recall".into(), "IoU".into()];
        head.extend(CLASS_NAMES[1..].iter().map(|s| s.to_string()));
        head.push("avg.".into());
        let mut row = vec![self.sc.precision, self.sc.recall, self.sc.iou];
        row.extend(self.per_class.iter().map(|c| c.iou));
        row.push(self.average);
        let mut cells: Vec<String> = row.iter().map(|v| format!("{:.1}", 100.0 * v)).collect();
        for (i, c) in self.per_class.iter().enumerate() {
            if !c.present {
                cells[3 + i] = "-".into();
            }
        }
        let width = 7;
        let mut s: String = head
            .iter()
            .map(|h| format!("{h:>width$}"))
            .collect::<Vec<_>>()
            .join(" ");
        s.push('\n');
        s.push_str(
            &cells
                .iter()
                .map(|c| format!("{c:>width$}"))
                .collect::<Vec<_>>()
                .join(" "),
        );
        s.push('\n');
        if self.sc.degenerate || self.average_degenerate {
            s.push_str("note: empty denominators were scored as 1.0\n");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    fn occluded(n: usize) -> Tensor {
        Tensor::new(&[n], MaskCode::Occluded as u8 as f64).unwrap()
    }

    #[test]
    fn sc_examples() {
        // Voxels a, b, c, d.
        let r = sc_metrics(&t(&[1.0, 1.0, 1.0, 0.0]), &t(&[0.0, 2.0, 3.0, 4.0]), &occluded(4)).unwrap();
        assert_eq!(r.iou, 0.5);
        let r = sc_metrics(&t(&[1.0, 1.0, 0.0]), &t(&[0.0, 1.0, 1.0]), &occluded(3)).unwrap();
        assert_eq!((r.precision, r.recall), (0.5, 0.5));
        assert!((r.iou - 1.0 / 3.0).abs() < 1e-15);
        let r = sc_metrics(&t(&[1.0, 0.0]), &t(&[1.0, 0.0]), &occluded(2)).unwrap();
        assert_eq!((r.precision, r.recall, r.iou), (1.0, 1.0, 1.0));
        let r = sc_metrics(&t(&[0.0]), &t(&[0.0]), &occluded(1)).unwrap();
        assert!(r.degenerate && r.iou == 1.0);
        assert!(sc_metrics(&t(&[0.0]), &t(&[0.0, 1.0]), &occluded(1)).is_err());
    }

    #[test]
    fn ssc_examples() {
        let gt = t(&[2.0, 3.0, 5.0, 0.0]);
        let r = ssc_metrics(&gt, &gt, &occluded(4)).unwrap();
        assert_eq!(r.per_class.iter().filter(|c| c.present).count(), 3);
        assert_eq!(r.average, 1.0);

        let r = ssc_metrics(&t(&[0.0, 0.0]), &t(&[2.0, 0.0]), &occluded(2)).unwrap();
        assert_eq!(r.per_class[1].iou, 0.0);
        assert_eq!(r.average, 0.0);
    }

    #[test]
    fn ssc_ignores_empty_and_outside_voxels() {
        let codes = [
            MaskCode::ObservedEmpty,
            MaskCode::OutsideView,
            MaskCode::ObservedSurface,
        ];
        let masks = Tensor::from_vec(&[3], codes.iter().map(|&c| c as u8 as f64).collect()).unwrap();
        let r = ssc_metrics(&t(&[5.0, 5.0, 2.0]), &t(&[2.0, 2.0, 2.0]), &masks).unwrap();
        assert_eq!(r.per_class[1].iou, 1.0);
        assert!(!r.per_class[4].present);
    }

    /// Set-based oracle: builds explicit index sets per class.
    fn oracle(pred: &[f64], gt: &[f64], masks: &[f64]) -> Vec<Option<f64>> {
        use std::collections::BTreeSet;
        let eval: Vec<usize> = (0..pred.len())
            .filter(|&i| {
                masks[i] == MaskCode::ObservedSurface as u8 as f64 || masks[i] == MaskCode::Occluded as u8 as f64
            })
            .collect();
        (1..=SEMANTIC_CLASSES)
            .map(|c| {
                let p: BTreeSet<usize> = eval.iter().copied().filter(|&i| pred[i] as usize == c).collect();
                let g: BTreeSet<usize> = eval.iter().copied().filter(|&i| gt[i] as usize == c).collect();
                let u = p.union(&g).count();
                (u > 0).then(|| p.intersection(&g).count() as f64 / u as f64)
            })
            .collect()
    }

    #[test]
    fn random_6_cubed_matches_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let n = 216;
            let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64).collect();
            let gt: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64).collect();
            let masks: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
            let shape = [6, 6, 6];
            let r = ssc_metrics(
                &Tensor::from_vec(&shape, pred.clone()).unwrap(),
                &Tensor::from_vec(&shape, gt.clone()).unwrap(),
                &Tensor::from_vec(&shape, masks.clone()).unwrap(),
            )
            .unwrap();
            for (c, expected) in oracle(&pred, &gt, &masks).into_iter().enumerate() {
                match expected {
                    Some(iou) => assert_eq!(r.per_class[c].iou, iou),
                    None => assert!(!r.per_class[c].present),
                }
            }
        }
    }

    #[test]
    fn table_has_all_columns() {
        let gt = t(&[2.0]);
        let s = ssc_metrics(&gt, &gt, &occluded(1)).unwrap().to_table();
        for name in ["prec.", "recall", "IoU", "ceil.", "objs.", "avg."] {
            assert!(s.contains(name), "{s}");
        }
    }

    proptest! {
        #[test]
        fn metrics_are_bounded_and_order_invariant(
            cells in proptest::collection::vec((0u8..12, 0u8..12, 0u8..4), 1..60),
            seed in any::<u64>(),
        ) {
            let pred: Vec<f64> = cells.iter().map(|c| c.0 as f64).collect();
            let gt: Vec<f64> = cells.iter().map(|c| c.1 as f64).collect();
            let masks: Vec<f64> = cells.iter().map(|c| c.2 as f64).collect();
            let r = ssc_metrics(&t(&pred), &t(&gt), &t(&masks)).unwrap();
            for v in [r.sc.precision, r.sc.recall, r.sc.iou, r.average] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(r.sc.iou <= r.sc.precision && r.sc.iou <= r.sc.recall);

            let mut order: Vec<usize> = (0..cells.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let perm = |v: &[f64]| t(&order.iter().map(|&i| v[i]).collect::<Vec<_>>());
            let s = ssc_metrics(&perm(&pred), &perm(&gt), &perm(&masks)).unwrap();
            prop_assert_eq!(r, s);
        }
    }
}
