/// Row-major `(h, w, c)` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * channels, "image buffer length");
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Replicates a single channel `n` times; other images are returned as is.
    pub fn expand_channels(self, n: usize) -> Self {
        if self.channels != 1 || n == 1 {
            return self;
        }
        let data = self
            .data
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, n))
            .collect();
        Image::new(self.height, self.width, n, data)
    }
}
