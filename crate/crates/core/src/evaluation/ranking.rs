use crate::error::{Error, Result};

/// Per-query gallery orderings by ascending cosine distance.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    /// `order[q]` is a permutation of gallery indices, nearest first.
    pub order: Vec<Vec<usize>>,
    pub query_labels: Vec<String>,
    pub gallery_labels: Vec<String>,
    pub distractor: Vec<bool>,
}

impl RankingResult {
    pub fn num_queries(&self) -> usize {
        self.order.len()
    }

    pub fn gallery_size(&self) -> usize {
        self.gallery_labels.len()
    }

    /// Whether gallery entry `g` carries query `q`'s identity and is not a
    /// distractor.
    pub fn is_match(&self, q: usize, g: usize) -> bool {
        !self.distractor[g] && self.gallery_labels[g] == self.query_labels[q]
    }

    /// 0-based position of each query's single true match.
    pub fn match_positions(&self) -> Result<Vec<usize>> {
        (0..self.num_queries())
            .map(|q| {
                let relevant = (0..self.gallery_size()).filter(|&g| self.is_match(q, g)).count();
                if relevant != 1 {
                    let problem = if relevant == 0 {
                        "absent from the gallery".to_string()
                    } else {
                        format!("present {relevant} times in the gallery")
                    };
                    return Err(Error::Protocol { identity: self.query_labels[q].clone(), problem });
                }
                Ok(self.order[q].iter().position(|&g| self.is_match(q, g)).expect("match counted above"))
            })
            .collect()
    }
}

fn norms(rows: &[Vec<f32>], which: &'static str) -> Result<Vec<f64>> {
    rows.iter()
        .enumerate()
        .map(|(row, r)| {
            let n = r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                Err(Error::ZeroNorm { which, row })
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Cosine distance matrix, `queries.len()` × `gallery.len()`.
pub fn cosine_distances(queries: &[Vec<f32>], gallery: &[Vec<f32>]) -> Result<Vec<Vec<f64>>> {
    let qn = norms(queries, "query")?;
    let gn = norms(gallery, "gallery")?;
    let dim = queries.first().or(gallery.first()).map_or(0, Vec::len);
    if queries.iter().chain(gallery).any(|r| r.len() != dim) {
        return Err(Error::Shape("query and gallery features differ in dimension".into()));
    }
    Ok(queries
        .iter()
        .zip(&qn)
        .map(|(q, &qn)| {
            gallery
                .iter()
                .zip(&gn)
                .map(|(g, &gn)| {
                    let dot: f64 = q.iter().zip(g).map(|(&a, &b)| a as f64 * b as f64).sum();
                    1.0 - dot / (qn * gn)
                })
                .collect()
        })
        .collect())
}

/// Ranks the gallery for every query. Equal distances keep gallery order.
pub fn rank_gallery(
    queries: &[Vec<f32>],
    gallery: &[Vec<f32>],
    query_labels: Vec<String>,
    gallery_labels: Vec<String>,
    distractor: Vec<bool>,
) -> Result<RankingResult> {
    if query_labels.len() != queries.len() || gallery_labels.len() != gallery.len() || distractor.len() != gallery.len()
    {
        return Err(Error::Shape("labels do not match feature rows".into()));
    }
    let order = cosine_distances(queries, gallery)?
        .into_iter()
        .map(|d| {
            let mut idx: Vec<usize> = (0..d.len()).collect();
            idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
            idx
        })
        .collect();
    Ok(RankingResult { order, query_labels, gallery_labels, distractor })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, p: &str) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    #[test]
    fn duplicate_ranks_first_then_index_order() {
        let q = vec![vec![0.0, 0.0, 1.0, 0.0]];
        let g = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let r = rank_gallery(&q, &g, vec!["x".into()], labels(4, "g"), vec![false; 4]).unwrap();
        assert_eq!(r.order[0], vec![2, 0, 1, 3]);
    }

    #[test]
    fn zero_gallery_row_is_rejected() {
        let err = rank_gallery(&[vec![1.0, 0.0]], &[vec![0.0, 0.0]], vec!["a".into()], vec!["a".into()], vec![false]);
        assert!(matches!(err, Err(Error::ZeroNorm { which: "gallery", row: 0 })));
    }

    #[test]
    fn missing_identity_is_named() {
        let r =
            rank_gallery(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]], vec!["who".into()], vec!["else".into()], vec![false])
                .unwrap();
        match r.match_positions() {
            Err(Error::Protocol { identity, .. }) => assert_eq!(identity, "who"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distractor_with_same_label_does_not_count() {
        let r = rank_gallery(
            &[vec![1.0, 0.0]],
            &[vec![1.0, 0.0], vec![0.5, 0.5]],
            vec!["a".into()],
            vec!["a".into(), "a".into()],
            vec![true, false],
        )
        .unwrap();
        assert_eq!(r.match_positions().unwrap(), vec![1]);
    }
}
