//! Small generated datasets for smoke tests and examples.

use super::Sample;

/// `count` black images with one white stripe each, alternating between
/// horizontal and vertical and shifting position; the mask marks the stripe.
pub fn stripes(count: usize, size: usize, thickness: usize) -> Vec<Sample> {
    (0..count)
        .map(|i| {
            let offset = (size / 4 + i * size / (2 * count.max(1))).min(size - thickness);
            let vertical = i % 2 == 1;
            let mut mask = vec![0u8; size * size];
            for y in 0..size {
                for x in 0..size {
                    let c = if vertical { x } else { y };
                    if (offset..offset + thickness).contains(&c) {
                        mask[y * size + x] = 1;
                    }
                }
            }
            let plane: Vec<f32> = mask.iter().map(|&m| f32::from(m)).collect();
            let image = plane.repeat(3);
            Sample::new(format!("stripe{i}"), size, size, image, mask).expect("consistent buffers")
        })
        .collect()
}
