use crate::grid::BitMask;

/// `r` rounds of 8-neighbourhood dilation, clipped at the borders.
pub fn dilate_mask(mask: &BitMask, r: usize) -> BitMask {
    let (h, w) = (mask.height(), mask.width());
    let mut cur = mask.bits().to_vec();
    let mut tmp = vec![false; cur.len()];
    for _ in 0..r {
        if cur.iter().all(|&b| b) {
            break;
        }
        // The 3x3 square is separable: rows, then columns.
        for y in 0..h {
            let row = &cur[y * w..(y + 1) * w];
            for x in 0..w {
                let lo = x.saturating_sub(1);
                let hi = (x + 1).min(w - 1);
                tmp[y * w + x] = row[lo..=hi].iter().any(|&b| b);
            }
        }
        for y in 0..h {
            let lo = y.saturating_sub(1);
            let hi = (y + 1).min(h - 1);
            for x in 0..w {
                cur[y * w + x] = (lo..=hi).any(|yy| tmp[yy * w + x]);
            }
        }
    }
    BitMask::from_bits(h, w, cur).expect("dimensions preserved")
}
