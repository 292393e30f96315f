use std::collections::VecDeque;

use super::BinaryMask;

/// Keeps only the largest 8-connected foreground component. Ties go to the
/// component whose first pixel in row-major order comes earliest.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let bits = mask.bits();
    let mut label = vec![0u32; w * h];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !bits[start] || label[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        label[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if bits[q] && label[q] == 0 {
                        label[q] = id;
                        queue.push_back(q);
                    }
                }
            }
        }
        sizes.push(size);
    }
    let mut best = 0u32;
    for (id, &s) in sizes.iter().enumerate().skip(1) {
        if s > sizes[best as usize] {
            best = id as u32;
        }
    }
    let bits = label.iter().map(|&l| best != 0 && l == best).collect();
    BinaryMask::new(w, h, bits).expect("same dimensions")
}
