#![allow(dead_code)]

use candle_core::{Device, Tensor};
use handid::evaluation::{rank_gallery, RankingResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::MetricCase;

pub struct LossCase {
    pub logits: Vec<Vec<f64>>,
    pub image: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

/// B in 1..=8, d in 4..=16, 1 to 4 identities.
pub fn loss_case(seed: u64) -> LossCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(1..=8);
    let d = rng.random_range(4..=16);
    let ids = rng.random_range(1..=4);
    let classes = (ids + rng.random_range(0..3)).max(2);
    LossCase {
        logits: matrix(&mut rng, b, classes, 3.0),
        image: matrix(&mut rng, b, d, 1.0),
        text: matrix(&mut rng, b, d, 1.0),
        labels: (0..b).map(|_| rng.random_range(0..ids)).collect(),
        classes,
    }
}

pub fn tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::new(rows.to_vec(), &Device::Cpu).unwrap()
}

/// A query/gallery configuration with one true match per query and
/// optional distractors; features are random so distances vary.
pub struct RetrievalCase {
    pub queries: Vec<Vec<f32>>,
    pub gallery: Vec<Vec<f32>>,
    pub query_labels: Vec<String>,
    pub gallery_labels: Vec<String>,
    pub distractor: Vec<bool>,
}

pub fn retrieval_case(seed: u64, with_distractors: bool) -> RetrievalCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = rng.random_range(1..=12);
    let n_q = rng.random_range(1..=30);
    let n_distractors = if with_distractors { rng.random_range(1..=10) } else { 0 };
    let d = rng.random_range(2..=8);
    // coarse integer features make exact distance ties likely
    let coarse = rng.random_bool(0.3);
    let feature = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        loop {
            let v: Vec<f32> = (0..d)
                .map(|_| if coarse { rng.random_range(-2i32..=2) as f32 } else { rng.random_range(-1.0f32..1.0) })
                .collect();
            if v.iter().any(|&x| x != 0.0) {
                return v;
            }
        }
    };
    let mut gallery: Vec<Vec<f32>> = (0..ids).map(|_| feature(&mut rng)).collect();
    let mut gallery_labels: Vec<String> = (0..ids).map(|i| format!("id{i}")).collect();
    for k in 0..n_distractors {
        gallery.push(feature(&mut rng));
        // some distractors share a test identity's label
        gallery_labels.push(if rng.random_bool(0.3) {
            format!("id{}", rng.random_range(0..ids))
        } else {
            format!("lq{k}")
        });
    }
    let distractor = (0..gallery.len()).map(|g| g >= ids).collect();
    let query_labels: Vec<String> = (0..n_q).map(|_| format!("id{}", rng.random_range(0..ids))).collect();
    let queries = (0..n_q).map(|_| feature(&mut rng)).collect();
    RetrievalCase { queries, gallery, query_labels, gallery_labels, distractor }
}

impl RetrievalCase {
    pub fn rank(&self) -> RankingResult {
        rank_gallery(
            &self.queries,
            &self.gallery,
            self.query_labels.clone(),
            self.gallery_labels.clone(),
            self.distractor.clone(),
        )
        .unwrap()
    }

    pub fn oracle_case(&self) -> MetricCase {
        let distances = self
            .queries
            .iter()
            .map(|q| self.gallery.iter().map(|g| super::oracle::cosine_distance(q, g)).collect())
            .collect();
        let matches = self
            .query_labels
            .iter()
            .map(|l| (0..self.gallery.len()).find(|&g| !self.distractor[g] && &self.gallery_labels[g] == l).unwrap())
            .collect();
        MetricCase { distances, matches, distractor: self.distractor.clone() }
    }
}
