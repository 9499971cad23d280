use super::GrayFrame;

/// Summed-area table of size `(width + 1) x (height + 1)` with a zero first
/// row and column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Integral {
    width: u32,
    height: u32,
    data: Vec<u64>,
}

impl Integral {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Sum of the pixels with `i < row` and `j < col`.
    pub fn at(&self, col: u32, row: u32) -> u64 {
        self.data[row as usize * (self.width as usize + 1) + col as usize]
    }

    /// Sum over columns `x..x + w` and rows `y..y + h`.
    #[inline]
    pub fn rect_sum(&self, x: u32, y: u32, w: u32, h: u32) -> u64 {
        let stride = self.width as usize + 1;
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + w as usize, y0 + h as usize);
        self.data[y1 * stride + x1] + self.data[y0 * stride + x0]
            - self.data[y0 * stride + x1]
            - self.data[y1 * stride + x0]
    }
}

/// Integral images of the pixels and of their squares.
pub fn integral_images(gray: &GrayFrame) -> (Integral, Integral) {
    let (w, h) = (gray.width as usize, gray.height as usize);
    let stride = w + 1;
    let mut sum = vec![0u64; stride * (h + 1)];
    let mut sq = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0u64;
        let mut row_sq = 0u64;
        for x in 0..w {
            let p = gray.pixels[y * w + x] as u64;
            row_sum += p;
            row_sq += p * p;
            sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row_sum;
            sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
        }
    }
    let make = |data| Integral {
        width: gray.width,
        height: gray.height,
        data,
    };
    (make(sum), make(sq))
}
