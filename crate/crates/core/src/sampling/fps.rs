use rand_chacha::ChaCha8Rng;

use super::{check_k, SampleResult, Sampler};
use crate::error::{Error, Result};
use crate::pointcloud::{dist2, PointCloud};

/// Greedy farthest point traversal from `start_index`.
///
/// Keeps each point's squared distance to the selected set; the next pick
/// is the unselected point with the largest such distance, ties going to
/// the lowest index. O(n·k).
pub fn fps(cloud: &PointCloud, k: usize, start_index: usize) -> Result<SampleResult> {
    check_k(cloud, k)?;
    let n = cloud.len();
    if start_index >= n {
        return Err(Error::invalid(format!(
            "start index {start_index} out of range for {n} points"
        )));
    }
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut selected = vec![false; n];
    let mut order = Vec::with_capacity(k);
    let mut last = start_index;
    selected[last] = true;
    order.push(last);
    while order.len() < k {
        let anchor = cloud.points[last];
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in cloud.points.iter().enumerate() {
            if selected[i] {
                continue;
            }
            let d = dist2(p, &anchor);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if best.map_or(true, |(_, bd)| min_d2[i] > bd) {
                best = Some((i, min_d2[i]));
            }
        }
        let (next, _) = best.expect("k <= n leaves a candidate");
        selected[next] = true;
        order.push(next);
        last = next;
    }
    SampleResult::from_indices(cloud, order, "fps")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FpsSampler {
    pub start_index: usize,
}

impl Sampler for FpsSampler {
    fn name(&self) -> &str {
        "fps"
    }

    fn sample(&self, cloud: &PointCloud, k: usize, _rng: &mut ChaCha8Rng) -> Result<SampleResult> {
        fps(cloud, k, self.start_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> PointCloud {
        PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]).unwrap()
    }

    #[test]
    fn unit_square_corners() {
        assert_eq!(fps(&square(), 2, 0).unwrap().indices, vec![0, 3]);
        // (1,0) and (0,1) are both at squared distance 1 from {0, 3}
        assert_eq!(fps(&square(), 3, 0).unwrap().indices, vec![0, 3, 1]);
    }

    #[test]
    fn duplicates_are_never_reselected() {
        let c = PointCloud::new(vec![[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(fps(&c, 4, 0).unwrap().indices, vec![0, 2, 1, 3]);
        let same = PointCloud::new(vec![[2.0; 3]; 5]).unwrap();
        assert_eq!(fps(&same, 5, 3).unwrap().indices, vec![3, 0, 1, 2, 4]);
    }

    #[test]
    fn invalid_arguments() {
        assert!(fps(&square(), 5, 0).is_err());
        assert!(fps(&square(), 2, 4).is_err());
    }
}
