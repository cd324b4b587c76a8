//! DBSCAN over 2-D points and the node ordering derived from it.

/// Cluster assignment of one point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Cluster(usize),
    Noise,
}

/// Density-based clustering. A point is a core point when at least `min_pts`
/// points (itself included) lie within distance `eps`. Clusters are numbered
/// in order of their lowest-index core point.
pub fn dbscan(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Vec<Label> {
    let n = points.len();
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| {
                let (a, b) = (points[i], points[j]);
                (a.0 - b.0).hypot(a.1 - b.1) <= eps
            })
            .collect()
    };
    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut next = 0;
    for i in 0..n {
        if labels[i].is_some() {
            continue;
        }
        let seeds = neighbors(i);
        if seeds.len() < min_pts {
            labels[i] = Some(Label::Noise);
            continue;
        }
        let cluster = next;
        next += 1;
        labels[i] = Some(Label::Cluster(cluster));
        let mut queue = seeds;
        let mut head = 0;
        while head < queue.len() {
            let j = queue[head];
            head += 1;
            match labels[j] {
                Some(Label::Cluster(_)) => continue,
                Some(Label::Noise) => {
                    // border point
                    labels[j] = Some(Label::Cluster(cluster));
                    continue;
                }
                None => labels[j] = Some(Label::Cluster(cluster)),
            }
            let nb = neighbors(j);
            if nb.len() >= min_pts {
                queue.extend(nb);
            }
        }
    }
    labels.into_iter().map(|l| l.unwrap_or(Label::Noise)).collect()
}

/// Permutation listing nodes cluster by cluster (clusters ordered by their
/// smallest member index, members ascending), then noise points ascending.
/// `order[slot]` is the original index placed at `slot`.
pub fn order_nodes(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Vec<usize> {
    let labels = dbscan(points, eps, min_pts);
    let mut first_member: Vec<(usize, usize)> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if let Label::Cluster(c) = *l {
            if !first_member.iter().any(|&(cc, _)| cc == c) {
                first_member.push((c, i));
            }
        }
    }
    first_member.sort_by_key(|&(_, i)| i);
    let mut order = Vec::with_capacity(points.len());
    for (c, _) in first_member {
        order.extend((0..points.len()).filter(|&i| labels[i] == Label::Cluster(c)));
    }
    order.extend((0..points.len()).filter(|&i| labels[i] == Label::Noise));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_clusters_keep_identity() {
        let pts: Vec<_> = (0..5).map(|i| (i as f64 * 3.0, 0.0)).collect();
        assert_eq!(order_nodes(&pts, 1.0, 1), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn noise_goes_last() {
        let pts = [(10.0, 0.0), (0.0, 0.0), (0.5, 0.0), (20.0, 0.0)];
        assert_eq!(dbscan(&pts, 1.0, 2), vec![Label::Noise, Label::Cluster(0), Label::Cluster(0), Label::Noise]);
        assert_eq!(order_nodes(&pts, 1.0, 2), vec![1, 2, 0, 3]);
    }

    #[test]
    fn chains_merge_through_core_points() {
        let pts = [(0.0, 0.0), (0.9, 0.0), (1.8, 0.0), (2.7, 0.0)];
        assert!(dbscan(&pts, 1.0, 1).iter().all(|&l| l == Label::Cluster(0)));
    }

    #[test]
    fn earlier_noise_becomes_border() {
        // Only point 1 is core; 0 is first marked noise, then absorbed.
        let pts = [(0.0, 0.0), (0.5, 0.0), (1.4, 0.0)];
        assert_eq!(dbscan(&pts, 1.0, 3), vec![Label::Cluster(0); 3]);
        assert_eq!(dbscan(&pts, 0.6, 3), vec![Label::Noise; 3]);
    }
}
