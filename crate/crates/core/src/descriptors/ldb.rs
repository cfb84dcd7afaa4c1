//! Local difference binary descriptor: pairwise comparisons of per-cell
//! intensity and gradient means over a pyramid of grid partitions.

use image::GrayImage;

use super::{resized_gray, BitString, Channel, DescriptorError, DescriptorVector, Payload};

/// Working image side in pixels.
pub const LDB_SIZE: u32 = 64;

/// Default grid sides; together they produce 1386 bits.
pub const LDB_DEFAULT_LEVELS: [u32; 4] = [2, 3, 4, 5];

/// Total bits produced by a set of grid levels: three comparisons for each
/// unordered cell pair at each level.
pub fn ldb_bit_count(levels: &[u32]) -> usize {
    let mut sorted: Vec<u32> = levels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted
        .iter()
        .map(|&g| {
            let cells = (g * g) as usize;
            3 * cells * (cells - 1) / 2
        })
        .sum()
}

/// Per-cell means of intensity and of forward differences along x and y.
struct CellStats {
    intensity: f64,
    dx: f64,
    dy: f64,
}

pub fn extract_ldb(
    img: &GrayImage,
    levels: &[u32],
    channel: Channel,
) -> Result<DescriptorVector, DescriptorError> {
    if img.width() == 0 || img.height() == 0 {
        return Err(DescriptorError::EmptyImage);
    }
    assert!(!levels.is_empty(), "at least one grid level is required");
    assert!(
        levels.iter().all(|&g| g >= 1 && g <= LDB_SIZE),
        "grid sides must lie in [1, {LDB_SIZE}]"
    );
    let mut grids: Vec<u32> = levels.to_vec();
    grids.sort_unstable();
    grids.dedup();

    let n = LDB_SIZE as usize;
    let work = resized_gray(img, LDB_SIZE, LDB_SIZE);
    let plane: Vec<f64> = work.as_raw().iter().map(|&v| f64::from(v)).collect();

    // Forward differences; the last column and row are zero.
    let mut dx = vec![0f64; n * n];
    let mut dy = vec![0f64; n * n];
    for y in 0..n {
        for x in 0..n {
            if x + 1 < n {
                dx[y * n + x] = plane[y * n + x + 1] - plane[y * n + x];
            }
            if y + 1 < n {
                dy[y * n + x] = plane[(y + 1) * n + x] - plane[y * n + x];
            }
        }
    }

    let mut bits = BitString::with_capacity(ldb_bit_count(&grids));
    for &g in &grids {
        let g = g as usize;
        let mut cells = Vec::with_capacity(g * g);
        for cy in 0..g {
            let y0 = cy * n / g;
            let y1 = (cy + 1) * n / g;
            for cx in 0..g {
                let x0 = cx * n / g;
                let x1 = (cx + 1) * n / g;
                let mut si = 0f64;
                let mut sx = 0f64;
                let mut sy = 0f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        si += plane[y * n + x];
                        sx += dx[y * n + x];
                        sy += dy[y * n + x];
                    }
                }
                let count = ((y1 - y0) * (x1 - x0)) as f64;
                cells.push(CellStats {
                    intensity: si / count,
                    dx: sx / count,
                    dy: sy / count,
                });
            }
        }
        // Unordered pairs in lexicographic order; strict comparisons, so
        // ties produce zeros.
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                bits.push(cells[i].intensity > cells[j].intensity);
                bits.push(cells[i].dx > cells[j].dx);
                bits.push(cells[i].dy > cells[j].dy);
            }
        }
    }
    Ok(DescriptorVector::new(channel, Payload::Bits(bits)))
}
