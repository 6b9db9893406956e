use crate::error::{Error, Result};

pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    (2..).take_while(|i| i * i <= n).all(|i| n % i != 0)
}

/// Record length after padding: `d + 1` when `d` is prime, else `d`.
///
/// A prime length has no rectangular factorization other than `1 × d`, so a
/// single zero is appended to make one.
pub fn pad_to_composite(d: usize) -> usize {
    if is_prime(d) {
        d + 1
    } else {
        d
    }
}

/// Appends zeros up to `len`.
pub fn pad_record(record: &[f64], len: usize) -> Vec<f64> {
    let mut out = record.to_vec();
    out.resize(len.max(record.len()), 0.0);
    out
}

/// One record laid out as an `rows × cols × 1` image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageInstance {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
}

impl ImageInstance {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pixels[i * self.cols + j]
    }

    /// Row-major pixel values; inverse of [`reshape_to_image`].
    pub fn flatten(&self) -> &[f64] {
        &self.pixels
    }
}

/// `pixels[i][j] = record[i * cols + j]`.
pub fn reshape_to_image(record: &[f64], rows: usize, cols: usize) -> Result<ImageInstance> {
    if rows == 0 || cols == 0 || rows * cols != record.len() {
        return Err(Error::shape(
            "reshape_to_image",
            format!("{rows} x {cols} image from {} values", record.len()),
        ));
    }
    Ok(ImageInstance {
        rows,
        cols,
        pixels: record.to_vec(),
    })
}

/// Non-overlapping `patch_rows × patch_cols` blocks of an image, in row-major
/// order over the patch grid. Each block is itself flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    patch_rows: usize,
    patch_cols: usize,
    grid_rows: usize,
    grid_cols: usize,
    patches: Vec<Vec<f64>>,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_dims(&self) -> (usize, usize) {
        (self.patch_rows, self.patch_cols)
    }

    pub fn patches(&self) -> &[Vec<f64>] {
        &self.patches
    }

    /// Reorders patches; `order[i]` is the source index of output patch `i`.
    pub fn permuted(&self, order: &[usize]) -> PatchSequence {
        PatchSequence {
            patches: order.iter().map(|&i| self.patches[i].clone()).collect(),
            ..self.clone()
        }
    }

    /// Puts the blocks back into the image they came from.
    pub fn reassemble(&self) -> ImageInstance {
        let cols = self.grid_cols * self.patch_cols;
        let rows = self.grid_rows * self.patch_rows;
        let mut pixels = vec![0.0; rows * cols];
        for (p, patch) in self.patches.iter().enumerate() {
            let (gr, gc) = (p / self.grid_cols, p % self.grid_cols);
            for i in 0..self.patch_rows {
                for j in 0..self.patch_cols {
                    let (r, c) = (gr * self.patch_rows + i, gc * self.patch_cols + j);
                    pixels[r * cols + c] = patch[i * self.patch_cols + j];
                }
            }
        }
        ImageInstance { rows, cols, pixels }
    }
}

pub fn extract_patches(img: &ImageInstance, patch_rows: usize, patch_cols: usize) -> Result<PatchSequence> {
    if patch_rows == 0 || patch_cols == 0 || img.rows % patch_rows != 0 || img.cols % patch_cols != 0 {
        return Err(Error::shape(
            "extract_patches",
            format!(
                "{patch_rows} x {patch_cols} patches do not tile a {} x {} image",
                img.rows, img.cols
            ),
        ));
    }
    let (grid_rows, grid_cols) = (img.rows / patch_rows, img.cols / patch_cols);
    let mut patches = Vec::with_capacity(grid_rows * grid_cols);
    for gr in 0..grid_rows {
        for gc in 0..grid_cols {
            let mut patch = Vec::with_capacity(patch_rows * patch_cols);
            for i in 0..patch_rows {
                for j in 0..patch_cols {
                    patch.push(img.get(gr * patch_rows + i, gc * patch_cols + j));
                }
            }
            patches.push(patch);
        }
    }
    Ok(PatchSequence {
        patch_rows,
        patch_cols,
        grid_rows,
        grid_cols,
        patches,
    })
}

/// How records of a given width become images and patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageLayout {
    pub input_dim: usize,
    pub rows: usize,
    pub cols: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
}

impl ImageLayout {
    /// Explicit layout. `rows × cols` must equal the record width, or the
    /// padded width when that width is prime.
    pub fn new(input_dim: usize, rows: usize, cols: usize, patch_rows: usize, patch_cols: usize) -> Result<Self> {
        let area = rows * cols;
        if input_dim < 2 || (area != input_dim && area != pad_to_composite(input_dim)) {
            return Err(Error::Invalid(format!(
                "{rows} x {cols} image cannot hold {input_dim} features"
            )));
        }
        if patch_rows == 0 || patch_cols == 0 || rows % patch_rows != 0 || cols % patch_cols != 0 {
            return Err(Error::Invalid(format!(
                "{patch_rows} x {patch_cols} patches do not tile a {rows} x {cols} image"
            )));
        }
        Ok(ImageLayout {
            input_dim,
            rows,
            cols,
            patch_rows,
            patch_cols,
        })
    }

    /// Default layout: 115 → 5×23 with 5×1 patches, 84 → 6×14 with 2×2
    /// patches; otherwise the most square `rows ≤ cols` factorization of the
    /// padded width with full-height single-column patches.
    pub fn for_dim(input_dim: usize) -> Result<Self> {
        match input_dim {
            115 => Self::new(115, 5, 23, 5, 1),
            84 => Self::new(84, 6, 14, 2, 2),
            d => {
                let (rows, cols) = default_factorization(d)?;
                Self::new(d, rows, cols, rows, 1)
            }
        }
    }

    pub fn padded_dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn num_patches(&self) -> usize {
        (self.rows / self.patch_rows) * (self.cols / self.patch_cols)
    }

    pub fn patch_len(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    /// Pads, reshapes and cuts one record.
    pub fn patches(&self, record: &[f64]) -> Result<PatchSequence> {
        if record.len() != self.input_dim {
            return Err(Error::shape(
                "image layout",
                format!("expected {} features, got {}", self.input_dim, record.len()),
            ));
        }
        let img = reshape_to_image(&pad_record(record, self.padded_dim()), self.rows, self.cols)?;
        extract_patches(&img, self.patch_rows, self.patch_cols)
    }

    /// For every position of the concatenated patch sequence, the record
    /// index it reads, or `None` for padding.
    pub fn gather_index(&self) -> Vec<Option<usize>> {
        let positions: Vec<f64> = (0..self.padded_dim()).map(|i| i as f64).collect();
        let img = reshape_to_image(&positions, self.rows, self.cols).expect("layout validated");
        extract_patches(&img, self.patch_rows, self.patch_cols)
            .expect("layout validated")
            .patches
            .concat()
            .into_iter()
            .map(|p| Some(p as usize).filter(|&i| i < self.input_dim))
            .collect()
    }
}

/// Most square `(rows, cols)` with `rows ≤ cols` for the padded width of `d`.
pub fn default_factorization(d: usize) -> Result<(usize, usize)> {
    if d < 2 {
        return Err(Error::Invalid(format!("cannot lay out {d} features as an image")));
    }
    let area = pad_to_composite(d);
    let rows = (1..)
        .take_while(|r| r * r <= area)
        .filter(|r| area % r == 0)
        .last()
        .unwrap_or(1);
    Ok((rows, area / rows))
}
