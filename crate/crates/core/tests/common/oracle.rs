#![allow(dead_code, clippy::needless_range_loop)]

//! Direct summation formulas, written loop by loop without the library's
//! tensor code.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

pub fn sim(image: &[Vec<f64>], text: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    image.iter().map(|i| text.iter().map(|t| cosine(i, t) / tau).collect()).collect()
}

/// Label-smoothed cross-entropy, averaged over the batch.
pub fn id_loss(logits: &[Vec<f64>], labels: &[usize], eps: f64) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let k = row.len();
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        for (j, v) in row.iter().enumerate() {
            let q = if j == y { 1.0 - eps + eps / k as f64 } else { eps / k as f64 };
            total -= q * (v.exp() / z).ln();
        }
    }
    total / labels.len() as f64
}

pub fn i2t(s: &[Vec<f64>]) -> f64 {
    let b = s.len();
    let mut total = 0.0;
    for i in 0..b {
        let denom: f64 = (0..b).map(|j| s[i][j].exp()).sum();
        total -= (s[i][i].exp() / denom).ln();
    }
    total / b as f64
}

pub fn t2i(s: &[Vec<f64>]) -> f64 {
    let b = s.len();
    let mut total = 0.0;
    for i in 0..b {
        let denom: f64 = (0..b).map(|j| s[j][i].exp()).sum();
        total -= (s[i][i].exp() / denom).ln();
    }
    total / b as f64
}

/// Image-to-text and text-to-image supervised contrastive terms for each
/// text anchor, averaged over anchors.
pub fn supcon(s: &[Vec<f64>], labels: &[usize]) -> f64 {
    let b = s.len();
    let mut i2t_sum = 0.0;
    let mut t2i_sum = 0.0;
    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&p| labels[p] == labels[i]).collect();
        let n = positives.len() as f64;
        let mut a = 0.0;
        let mut c = 0.0;
        for &p in &positives {
            let row: f64 = (0..b).map(|m| s[p][m].exp()).sum();
            a += (s[p][i].exp() / row).ln();
            let col: f64 = (0..b).map(|m| s[m][i].exp()).sum();
            c += (s[p][i].exp() / col).ln();
        }
        i2t_sum -= a / n;
        t2i_sum -= c / n;
    }
    (i2t_sum + t2i_sum) / b as f64
}

pub fn total(logits: &[Vec<f64>], image: &[Vec<f64>], text: &[Vec<f64>], labels: &[usize], eps: f64, tau: f64) -> f64 {
    id_loss(logits, labels, eps) + supcon(&sim(image, text, tau), labels)
}

/// 1-based rank of gallery item `m` for distances `d`, counting every item
/// closer than it and every equally close item with a lower index.
pub fn rank_of(d: &[f64], m: usize) -> usize {
    1 + (0..d.len()).filter(|&g| d[g] < d[m] || (d[g] == d[m] && g < m)).count()
}

pub fn cosine_distance(q: &[f32], g: &[f32]) -> f64 {
    let q: Vec<f64> = q.iter().map(|&v| v as f64).collect();
    let g: Vec<f64> = g.iter().map(|&v| v as f64).collect();
    1.0 - cosine(&q, &g)
}

/// Populations for CMC and mAP: gallery position of the single match per
/// query, from a pairwise distance table.
pub struct MetricCase {
    pub distances: Vec<Vec<f64>>,
    pub matches: Vec<usize>,
    pub distractor: Vec<bool>,
}

pub fn cmc(case: &MetricCase, k_max: usize) -> Vec<f64> {
    let ranks: Vec<usize> = case.matches.iter().enumerate().map(|(q, &m)| rank_of(&case.distances[q], m)).collect();
    (1..=k_max).map(|k| ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64).collect()
}

/// Precision summed at every relevant position of the sorted list.
pub fn mean_ap(case: &MetricCase) -> f64 {
    let mut total = 0.0;
    for (q, &m) in case.matches.iter().enumerate() {
        let d = &case.distances[q];
        let mut order: Vec<usize> = (0..d.len()).collect();
        // insertion sort keeps ties in index order
        for i in 1..order.len() {
            let mut j = i;
            while j > 0 && d[order[j - 1]] > d[order[j]] {
                order.swap(j - 1, j);
                j -= 1;
            }
        }
        let relevant = 1.0;
        let mut hits = 0.0;
        let mut ap = 0.0;
        for (pos, &g) in order.iter().enumerate() {
            if g == m && !case.distractor[g] {
                hits += 1.0;
                ap += hits / (pos + 1) as f64;
            }
        }
        total += ap / relevant;
    }
    total / case.matches.len() as f64
}
