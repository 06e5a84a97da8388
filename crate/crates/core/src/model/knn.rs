use log::warn;

/// z-scored k-nearest-neighbours majority vote.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    points: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

impl KnnModel {
    /// `k` larger than the training set is clamped to its size.
    pub fn fit(features: &[Vec<f64>], labels: &[u8], k: usize) -> Self {
        let n = features.len();
        let dims = features.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dims];
        for row in features {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut std = vec![0.0; dims];
        for row in features {
            for ((s, m), v) in std.iter_mut().zip(&mean).zip(row) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut std {
            *s = (*s / n as f64).sqrt();
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }
        let k = if k > n {
            warn!("k = {k} exceeds training size {n}; using k = {n}");
            n
        } else {
            k
        };
        let mut model = Self {
            k,
            mean,
            std,
            points: Vec::with_capacity(n),
            labels: labels.to_vec(),
        };
        model.points = features.iter().map(|r| model.scale(r)).collect();
        model
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Majority of the k nearest; a tied vote goes to the class with the
    /// smaller summed distance, then to class 0.
    pub fn predict(&self, x: &[f64]) -> u8 {
        let z = self.scale(x);
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d2: f64 = p.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2.sqrt(), i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = [0usize; 2];
        let mut sums = [0.0f64; 2];
        for &(d, i) in dist.iter().take(self.k) {
            let c = self.labels[i] as usize;
            votes[c] += 1;
            sums[c] += d;
        }
        match votes[1].cmp(&votes[0]) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => u8::from(sums[1] < sums[0]),
        }
    }
}
