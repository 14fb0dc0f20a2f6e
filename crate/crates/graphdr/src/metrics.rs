//! Classification metrics over masked nodes and clustering-quality indices
//! over 2-D embeddings.

use crate::error::{GraphDrError, Result};
use crate::matrix::DenseMatrix;

/// Macro-averaged classification metrics, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Per-class (true positives, false positives, false negatives).
    pub per_class: Vec<(usize, usize, usize)>,
    pub support: usize,
}

/// Cluster-quality scores for one embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterScore {
    pub silhouette: f64,
    pub dunn: f64,
    /// Which labeling produced the scores.
    pub labeling: Labeling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Labeling {
    TrueLabels,
    PredictedLabels,
}

/// Argmax predictions on masked rows, scored against labels with
/// macro-averaged precision/recall/F1 (undefined per-class ratios count as 0).
pub fn classification_report(
    logits: &DenseMatrix,
    labels: &[usize],
    mask: &[bool],
) -> Result<ClassificationReport> {
    let n = logits.rows();
    if labels.len() != n || mask.len() != n {
        return Err(GraphDrError::ShapeMismatch {
            op: "classification_report",
            left: format!("{n} logit rows"),
            right: format!("{} labels / {} mask", labels.len(), mask.len()),
        });
    }
    let num_classes = logits.cols();
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut present = vec![false; num_classes];
    let mut correct = 0usize;
    let mut total = 0usize;

    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let label = labels[i];
        if label >= num_classes {
            return Err(GraphDrError::LabelOutOfRange {
                label,
                num_classes,
            });
        }
        let row = logits.row(i);
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(j, _)| j)
            .expect("nonempty row");
        present[label] = true;
        total += 1;
        if pred == label {
            correct += 1;
            tp[label] += 1;
        } else {
            fp[pred] += 1;
            fn_[label] += 1;
        }
    }
    if total == 0 {
        return Err(GraphDrError::EmptyMask);
    }

    // macro average over classes present among the masked labels
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut f1 = 0.0;
    let mut classes = 0usize;
    for c in 0..num_classes {
        if !present[c] {
            continue;
        }
        classes += 1;
        let p = if tp[c] + fp[c] > 0 {
            tp[c] as f64 / (tp[c] + fp[c]) as f64
        } else {
            0.0
        };
        let r = if tp[c] + fn_[c] > 0 {
            tp[c] as f64 / (tp[c] + fn_[c]) as f64
        } else {
            0.0
        };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        precision += p;
        recall += r;
        f1 += f;
    }
    let k = classes.max(1) as f64;

    Ok(ClassificationReport {
        accuracy: 100.0 * correct as f64 / total as f64,
        precision: 100.0 * precision / k,
        recall: 100.0 * recall / k,
        f1: 100.0 * f1 / k,
        per_class: (0..num_classes).map(|c| (tp[c], fp[c], fn_[c])).collect(),
        support: total,
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn cluster_members(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut clusters = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        clusters[l].push(i);
    }
    clusters.retain(|c| !c.is_empty());
    clusters
}

/// Mean silhouette coefficient: per point (b-a)/max(a,b), a the mean distance
/// inside its own cluster (excluding itself), b the smallest mean distance to
/// another cluster. Singleton clusters contribute 0; the a=b=0 tie is 0.
pub fn silhouette(points: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    let n = points.rows();
    if labels.len() != n {
        return Err(GraphDrError::ShapeMismatch {
            op: "silhouette",
            left: format!("{n} points"),
            right: format!("{} labels", labels.len()),
        });
    }
    let clusters = cluster_members(labels);
    if clusters.len() < 2 {
        return Err(GraphDrError::SingleCluster);
    }

    let mut total = 0.0;
    for i in 0..n {
        let own: &Vec<usize> = clusters
            .iter()
            .find(|c| c.contains(&i))
            .expect("every point is clustered");
        if own.len() == 1 {
            continue; // contributes s = 0
        }
        let a = own
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| euclidean(points.row(i), points.row(j)))
            .sum::<f64>()
            / (own.len() - 1) as f64;
        let b = clusters
            .iter()
            .filter(|c| !c.contains(&i))
            .map(|c| {
                c.iter()
                    .map(|&j| euclidean(points.row(i), points.row(j)))
                    .sum::<f64>()
                    / c.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Dunn index: smallest single-linkage inter-cluster distance divided by the
/// largest cluster diameter (complete linkage).
pub fn dunn_index(points: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    let n = points.rows();
    if labels.len() != n {
        return Err(GraphDrError::ShapeMismatch {
            op: "dunn_index",
            left: format!("{n} points"),
            right: format!("{} labels", labels.len()),
        });
    }
    let clusters = cluster_members(labels);
    if clusters.len() < 2 {
        return Err(GraphDrError::SingleCluster);
    }

    let mut max_diameter: f64 = 0.0;
    for c in &clusters {
        for (ai, &i) in c.iter().enumerate() {
            for &j in &c[ai + 1..] {
                max_diameter = max_diameter.max(euclidean(points.row(i), points.row(j)));
            }
        }
    }
    if max_diameter == 0.0 {
        return Err(GraphDrError::ZeroDiameter);
    }

    let mut min_separation = f64::INFINITY;
    for (ci, a) in clusters.iter().enumerate() {
        for b in &clusters[ci + 1..] {
            for &i in a {
                for &j in b {
                    min_separation = min_separation.min(euclidean(points.row(i), points.row(j)));
                }
            }
        }
    }
    Ok(min_separation / max_diameter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn perfect_predictions_score_100() {
        let mut logits = DenseMatrix::zeros(6, 3);
        let labels = vec![0, 1, 2, 0, 1, 2];
        for (i, &l) in labels.iter().enumerate() {
            logits.set(i, l, 5.0);
        }
        let r = classification_report(&logits, &labels, &vec![true; 6]).unwrap();
        assert_eq!(r.accuracy, 100.0);
        assert_eq!(r.precision, 100.0);
        assert_eq!(r.recall, 100.0);
        assert_eq!(r.f1, 100.0);
        assert_eq!(r.support, 6);
    }

    #[test]
    fn balanced_binary_confusion_scores_50() {
        // per class: TP=1, FP=1, FN=1 -> precision = recall = f1 = 50
        let logits = DenseMatrix::from_rows(&[
            vec![1.0, 0.0], // pred 0, label 0: TP for class 0
            vec![1.0, 0.0], // pred 0, label 1: FP for 0, FN for 1
            vec![0.0, 1.0], // pred 1, label 1: TP for class 1
            vec![0.0, 1.0], // pred 1, label 0: FP for 1, FN for 0
        ])
        .unwrap();
        let labels = vec![0, 1, 1, 0];
        let r = classification_report(&logits, &labels, &vec![true; 4]).unwrap();
        assert_eq!(r.accuracy, 50.0);
        assert!((r.precision - 50.0).abs() < 1e-12);
        assert!((r.recall - 50.0).abs() < 1e-12);
        assert!((r.f1 - 50.0).abs() < 1e-12);
    }

    #[test]
    fn report_matches_confusion_matrix_oracle() {
        let mut rng = Rng::new(31);
        let n = 200;
        let c = 5;
        let logits =
            DenseMatrix::from_vec(n, c, (0..n * c).map(|_| rng.normal()).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.7)).collect();
        if !mask.iter().any(|&m| m) {
            return;
        }
        let r = classification_report(&logits, &labels, &mask).unwrap();

        // independent confusion-matrix oracle
        let mut tp = vec![0.0; c];
        let mut fp = vec![0.0; c];
        let mut fn_ = vec![0.0; c];
        let mut present = vec![false; c];
        let mut correct = 0.0;
        let mut total = 0.0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let mut pred = 0;
            for j in 1..c {
                if logits.get(i, j) > logits.get(i, pred) {
                    pred = j;
                }
            }
            present[labels[i]] = true;
            total += 1.0;
            if pred == labels[i] {
                tp[labels[i]] += 1.0;
                correct += 1.0;
            } else {
                fp[pred] += 1.0;
                fn_[labels[i]] += 1.0;
            }
        }
        let mut macro_p = 0.0;
        let mut macro_r = 0.0;
        let mut macro_f = 0.0;
        let mut k = 0.0;
        for j in 0..c {
            if !present[j] {
                continue;
            }
            k += 1.0;
            let p = if tp[j] + fp[j] > 0.0 { tp[j] / (tp[j] + fp[j]) } else { 0.0 };
            let rr = if tp[j] + fn_[j] > 0.0 { tp[j] / (tp[j] + fn_[j]) } else { 0.0 };
            macro_p += p;
            macro_r += rr;
            macro_f += if p + rr > 0.0 { 2.0 * p * rr / (p + rr) } else { 0.0 };
        }
        assert!((r.accuracy - 100.0 * correct / total).abs() < 1e-9);
        assert!((r.precision - 100.0 * macro_p / k).abs() < 1e-9);
        assert!((r.recall - 100.0 * macro_r / k).abs() < 1e-9);
        assert!((r.f1 - 100.0 * macro_f / k).abs() < 1e-9);
    }

    #[test]
    fn logit_shift_does_not_change_report() {
        let mut rng = Rng::new(33);
        let n = 40;
        let c = 4;
        let logits =
            DenseMatrix::from_vec(n, c, (0..n * c).map(|_| rng.normal()).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let mask = vec![true; n];
        let base = classification_report(&logits, &labels, &mask).unwrap();
        let shifted = logits.map(|v| v + 123.456);
        let moved = classification_report(&shifted, &labels, &mask).unwrap();
        assert_eq!(base, moved);
    }

    #[test]
    fn coincident_pairs_at_distance_score_one() {
        let points = DenseMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![3.0, 4.0],
            vec![3.0, 4.0],
        ])
        .unwrap();
        let labels = vec![0, 0, 1, 1];
        let s = silhouette(&points, &labels).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_coincident_points_score_zero() {
        let points = DenseMatrix::zeros(4, 2);
        let labels = vec![0, 0, 1, 1];
        let s = silhouette(&points, &labels).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn silhouette_matches_loop_oracle_on_blobs() {
        let mut rng = Rng::new(35);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let centers = [(0.0, 0.0), (8.0, 0.0), (0.0, 8.0)];
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..20 {
                rows.push(vec![cx + rng.normal(), cy + rng.normal()]);
                labels.push(c);
            }
        }
        let points = DenseMatrix::from_rows(&rows).unwrap();
        let s = silhouette(&points, &labels).unwrap();

        // brute-force oracle
        let n = points.rows();
        let mut total = 0.0;
        for i in 0..n {
            let mut intra = 0.0;
            let mut intra_n = 0.0;
            let mut inter = vec![(0.0, 0.0); 3];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = euclidean(points.row(i), points.row(j));
                if labels[j] == labels[i] {
                    intra += d;
                    intra_n += 1.0;
                } else {
                    inter[labels[j]].0 += d;
                    inter[labels[j]].1 += 1.0;
                }
            }
            let a = intra / intra_n;
            let b = inter
                .iter()
                .filter(|(_, n)| *n > 0.0)
                .map(|(s, n)| s / n)
                .fold(f64::INFINITY, f64::min);
            total += (b - a) / a.max(b);
        }
        let oracle = total / n as f64;
        assert!((s - oracle).abs() < 1e-12);
        assert!(s > 0.5, "blobs should separate, got {s}");
    }

    #[test]
    fn silhouette_rejects_single_cluster() {
        let points = DenseMatrix::zeros(3, 2);
        assert!(matches!(
            silhouette(&points, &[0, 0, 0]),
            Err(GraphDrError::SingleCluster)
        ));
    }

    #[test]
    fn dunn_on_line_clusters() {
        let points = DenseMatrix::from_rows(&[
            vec![0.0],
            vec![1.0],
            vec![10.0],
            vec![11.0],
        ])
        .unwrap();
        let labels = vec![0, 0, 1, 1];
        let d = dunn_index(&points, &labels).unwrap();
        assert!((d - 9.0).abs() < 1e-12);
    }

    #[test]
    fn dunn_is_scale_invariant() {
        let mut rng = Rng::new(37);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let off = if i < 15 { 0.0 } else { 10.0 };
                vec![off + rng.normal(), rng.normal()]
            })
            .collect();
        let labels: Vec<usize> = (0..30).map(|i| usize::from(i >= 15)).collect();
        let points = DenseMatrix::from_rows(&rows).unwrap();
        let d1 = dunn_index(&points, &labels).unwrap();
        let d2 = dunn_index(&points.scale(3.7), &labels).unwrap();
        assert!((d1 - d2).abs() < 1e-9);
    }

    #[test]
    fn dunn_matches_brute_force_oracle() {
        let mut rng = Rng::new(39);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let centers = [(0.0, 0.0), (6.0, 1.0), (2.0, 7.0)];
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..20 {
                rows.push(vec![cx + rng.normal(), cy + rng.normal()]);
                labels.push(c);
            }
        }
        let points = DenseMatrix::from_rows(&rows).unwrap();
        let d = dunn_index(&points, &labels).unwrap();

        let n = points.rows();
        let mut min_inter = f64::INFINITY;
        let mut max_intra: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dist = euclidean(points.row(i), points.row(j));
                if labels[i] == labels[j] {
                    max_intra = max_intra.max(dist);
                } else {
                    min_inter = min_inter.min(dist);
                }
            }
        }
        assert!((d - min_inter / max_intra).abs() < 1e-12);
    }

    #[test]
    fn dunn_rejects_all_singleton_coincident() {
        let points = DenseMatrix::zeros(2, 2);
        assert!(matches!(
            dunn_index(&points, &[0, 1]),
            Err(GraphDrError::ZeroDiameter)
        ));
    }

    #[test]
    fn indices_invariant_under_translation_and_relabeling() {
        let mut rng = Rng::new(41);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let off = if i < 20 { 0.0 } else { 5.0 };
                vec![off + rng.normal(), rng.normal()]
            })
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let swapped: Vec<usize> = labels.iter().map(|&l| 1 - l).collect();
        let points = DenseMatrix::from_rows(&rows).unwrap();
        let moved = points.map(|v| v - 42.0);

        let s = silhouette(&points, &labels).unwrap();
        assert!((s - silhouette(&moved, &labels).unwrap()).abs() < 1e-9);
        assert!((s - silhouette(&points, &swapped).unwrap()).abs() < 1e-12);

        let d = dunn_index(&points, &labels).unwrap();
        assert!((d - dunn_index(&moved, &labels).unwrap()).abs() < 1e-9);
        assert!((d - dunn_index(&points, &swapped).unwrap()).abs() < 1e-12);
    }
}
