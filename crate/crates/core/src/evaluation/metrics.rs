use super::ranking::RankingResult;
use crate::error::Result;

/// Cumulative matching characteristic for ranks `1..=k_max`.
pub fn cmc_curve(r: &RankingResult, k_max: usize) -> Result<Vec<f64>> {
    let positions = r.match_positions()?;
    let n = positions.len().max(1) as f64;
    Ok((1..=k_max).map(|k| positions.iter().filter(|&&p| p < k).count() as f64 / n).collect())
}

/// Average precision of one ranked list: the mean, over relevant positions,
/// of the precision at that position.
pub fn average_precision(relevant_in_order: impl IntoIterator<Item = bool>) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, rel) in relevant_in_order.into_iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Mean over queries of [`average_precision`]. Distractors count as
/// negatives; each query must have exactly one relevant gallery entry.
pub fn mean_average_precision(r: &RankingResult) -> Result<f64> {
    r.match_positions()?;
    let n = r.num_queries();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..n).map(|q| average_precision(r.order[q].iter().map(|&g| r.is_match(q, g)))).sum();
    Ok(total / n as f64)
}
