use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{Rgb, RgbImage};
use log::warn;

use super::ranking::RankingResult;
use crate::error::{Error, Result};
use crate::training::load_rgb;

pub const MATCH_COLOR: Rgb<u8> = Rgb([0, 170, 0]);
pub const MISMATCH_COLOR: Rgb<u8> = Rgb([210, 0, 0]);
const QUERY_COLOR: Rgb<u8> = Rgb([40, 40, 40]);
const PLACEHOLDER_COLOR: Rgb<u8> = Rgb([128, 128, 128]);
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub tile: u32,
    pub border: u32,
    pub gap: u32,
}

impl Default for GridLayout {
    fn default() -> Self {
        GridLayout { tile: 112, border: 4, gap: 6 }
    }
}

/// A rendered grid plus, per row, whether each shown gallery entry matched.
pub struct RankedGrid {
    pub image: RgbImage,
    pub matches: Vec<Vec<bool>>,
}

fn tile(path: &Path, size: u32) -> RgbImage {
    match load_rgb(path) {
        Ok(img) => image::imageops::resize(&img, size, size, FilterType::Triangle),
        Err(e) => {
            warn!("{e}; using a placeholder tile");
            RgbImage::from_pixel(size, size, PLACEHOLDER_COLOR)
        }
    }
}

fn framed(inner: &RgbImage, color: Rgb<u8>, border: u32) -> RgbImage {
    let (w, h) = inner.dimensions();
    let mut out = RgbImage::from_pixel(w + 2 * border, h + 2 * border, color);
    image::imageops::replace(&mut out, inner, border as i64, border as i64);
    out
}

/// One row per selected query: the query image, then its `top_n` nearest
/// gallery images framed by match (green) or mismatch (red). Rows are
/// truncated to the gallery size.
pub fn render_ranked_grid(
    ranking: &RankingResult,
    query_paths: &[PathBuf],
    gallery_paths: &[PathBuf],
    queries: &[usize],
    top_n: usize,
    layout: GridLayout,
) -> Result<RankedGrid> {
    if query_paths.len() != ranking.num_queries() || gallery_paths.len() != ranking.gallery_size() {
        return Err(Error::Shape("image paths do not match the ranking".into()));
    }
    let shown = top_n.min(ranking.gallery_size());
    let cell = layout.tile + 2 * layout.border;
    let width = layout.gap + (shown as u32 + 1) * (cell + layout.gap) + layout.gap;
    let height = layout.gap + queries.len() as u32 * (cell + layout.gap);
    let mut image = RgbImage::from_pixel(width, height, BACKGROUND);
    let mut matches = Vec::with_capacity(queries.len());
    for (row, &q) in queries.iter().enumerate() {
        if q >= ranking.num_queries() {
            return Err(Error::Shape(format!("query {q} out of range")));
        }
        let y = layout.gap + row as u32 * (cell + layout.gap);
        let query_tile = framed(&tile(&query_paths[q], layout.tile), QUERY_COLOR, layout.border);
        image::imageops::replace(&mut image, &query_tile, layout.gap as i64, y as i64);
        let mut row_matches = Vec::with_capacity(shown);
        for (col, &g) in ranking.order[q].iter().take(shown).enumerate() {
            let hit = ranking.is_match(q, g);
            let color = if hit { MATCH_COLOR } else { MISMATCH_COLOR };
            let t = framed(&tile(&gallery_paths[g], layout.tile), color, layout.border);
            let x = 2 * layout.gap + (col as u32 + 1) * (cell + layout.gap);
            image::imageops::replace(&mut image, &t, x as i64, y as i64);
            row_matches.push(hit);
        }
        matches.push(row_matches);
    }
    Ok(RankedGrid { image, matches })
}

/// Writes an RGB PNG carrying `text` as tEXt chunks.
pub fn write_png(image: &RgbImage, path: &Path, text: &[(&str, &str)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width(), image.height());
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    for (k, v) in text {
        encoder
            .add_text_chunk(k.to_string(), v.to_string())
            .map_err(|e| Error::Serialization(format!("png text chunk: {e}")))?;
    }
    let mut writer = encoder.write_header().map_err(|e| Error::Serialization(format!("png header: {e}")))?;
    writer.write_image_data(image.as_raw()).map_err(|e| Error::Serialization(format!("png data: {e}")))?;
    writer.finish().map_err(|e| Error::Serialization(format!("png finish: {e}")))?;
    Ok(())
}

/// Frame color at the top-left corner of gallery cell `col` in `row`.
pub fn frame_color(grid: &RgbImage, layout: GridLayout, row: usize, col: usize) -> Rgb<u8> {
    let cell = layout.tile + 2 * layout.border;
    let x = 2 * layout.gap + (col as u32 + 1) * (cell + layout.gap);
    let y = layout.gap + row as u32 * (cell + layout.gap);
    *grid.get_pixel(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking() -> RankingResult {
        RankingResult {
            order: vec![vec![0, 1, 2], vec![0, 1, 2]],
            query_labels: vec!["a".into(), "b".into()],
            gallery_labels: vec!["a".into(), "b".into(), "c".into()],
            distractor: vec![false; 3],
        }
    }

    #[test]
    fn truncates_and_colors() {
        let r = ranking();
        let q = vec![PathBuf::from("/nonexistent/q0.png"), PathBuf::from("/nonexistent/q1.png")];
        let g: Vec<PathBuf> = (0..3).map(|i| PathBuf::from(format!("/nonexistent/g{i}.png"))).collect();
        let layout = GridLayout { tile: 8, border: 2, gap: 2 };
        let grid = render_ranked_grid(&r, &q, &g, &[0, 1], 10, layout).unwrap();
        assert_eq!(grid.matches, vec![vec![true, false, false], vec![false, true, false]]);
        assert_eq!(frame_color(&grid.image, layout, 0, 0), MATCH_COLOR);
        assert_eq!(frame_color(&grid.image, layout, 0, 1), MISMATCH_COLOR);
        assert_eq!(frame_color(&grid.image, layout, 1, 1), MATCH_COLOR);
    }
}
