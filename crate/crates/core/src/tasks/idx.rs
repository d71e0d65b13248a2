//! IDX files (the MNIST distribution format).
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for 3-D unsigned-byte image
//! arrays, `0x00000801` for 1-D label arrays), one big-endian `u32` per
//! dimension, then the unsigned-byte payload in row-major order.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::IdxFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| format_error(path, "truncated header"))
    };
    let magic = word(0)?;
    let ndims = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        other => return Err(format_error(path, format!("bad magic 0x{other:08x}"))),
    };
    let dims: Vec<usize> = (0..ndims)
        .map(|i| word(4 + 4 * i).map(|d| d as usize))
        .collect::<Result<_>>()?;
    let header = 4 + 4 * ndims;
    let expected = dims.iter().product::<usize>();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(format_error(
            path,
            format!(
                "truncated payload: expected {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(format_error(
            path,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    Ok(IdxArray {
        magic,
        dims,
        data: payload.to_vec(),
    })
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

/// Serializes `array` in IDX layout.
pub fn write_idx(path: impl AsRef<Path>, array: &IdxArray) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&array.magic.to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Paired images and labels with raw pixel values in `[0, 255]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub source: String,
}

impl Dataset {
    pub fn new(
        rows: usize,
        cols: usize,
        images: Vec<u8>,
        labels: Vec<u8>,
        source: String,
    ) -> Result<Self> {
        if images.len() != labels.len() * rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{} pixels do not form {} images of {rows}x{cols}",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            images,
            labels,
            source,
        })
    }

    pub fn load(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        let (ipath, lpath) = (images.as_ref(), labels.as_ref());
        let img = load_idx(ipath)?;
        let lab = load_idx(lpath)?;
        if img.magic != IDX_IMAGES_MAGIC {
            return Err(format_error(ipath, "expected a 3-D image file"));
        }
        if lab.magic != IDX_LABELS_MAGIC {
            return Err(format_error(lpath, "expected a 1-D label file"));
        }
        if img.dims[0] != lab.dims[0] {
            return Err(format_error(
                lpath,
                format!("{} labels for {} images", lab.dims[0], img.dims[0]),
            ));
        }
        Self::new(
            img.dims[1],
            img.dims[2],
            img.data,
            lab.data,
            format!("{} + {}", ipath.display(), lpath.display()),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let p = self.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    /// Box-averages every image down to `side x side`. Source pixel `r`
    /// falls into bin `floor(r * side / rows)`.
    pub fn downsample(&self, side: usize) -> Result<Dataset> {
        if side == 0 || side > self.rows || side > self.cols {
            return Err(Error::InvalidArgument(format!(
                "cannot downsample {}x{} to {side}x{side}",
                self.rows, self.cols
            )));
        }
        let mut out = Vec::with_capacity(self.len() * side * side);
        for i in 0..self.len() {
            let img = self.image(i);
            let mut sums = vec![0.0f64; side * side];
            let mut counts = vec![0u32; side * side];
            for r in 0..self.rows {
                let br = r * side / self.rows;
                for c in 0..self.cols {
                    let bin = br * side + c * side / self.cols;
                    sums[bin] += f64::from(img[r * self.cols + c]);
                    counts[bin] += 1;
                }
            }
            out.extend(
                sums.iter()
                    .zip(&counts)
                    .map(|(s, &n)| (s / f64::from(n)).round() as u8),
            );
        }
        Dataset::new(
            side,
            side,
            out,
            self.labels.clone(),
            format!("{} @{side}x{side}", self.source),
        )
    }

    /// Writes the dataset as an IDX image/label pair.
    pub fn save(&self, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
        write_idx(
            images,
            &IdxArray {
                magic: IDX_IMAGES_MAGIC,
                dims: vec![self.len(), self.rows, self.cols],
                data: self.images.clone(),
            },
        )?;
        write_idx(
            labels,
            &IdxArray {
                magic: IDX_LABELS_MAGIC,
                dims: vec![self.len()],
                data: self.labels.clone(),
            },
        )
    }
}

/// Conventional MNIST file names inside `dir`.
pub fn mnist_paths(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_bytes(n: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [n, rows, cols] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn parses_four_2x2_images() {
        let payload: Vec<u8> = (0..16).collect();
        let arr = parse_idx(&image_bytes(4, 2, 2, &payload), Path::new("fixture")).unwrap();
        assert_eq!(arr.dims, vec![4, 2, 2]);
        assert_eq!(arr.data.chunks(4).count(), 4);
        assert_eq!(&arr.data[4..8], &[4, 5, 6, 7]);
    }

    #[test]
    fn bad_magic() {
        let mut b = image_bytes(1, 1, 1, &[0]);
        b[2..4].copy_from_slice(&[0x08, 0x99]);
        let err = parse_idx(&b, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("bad magic 0x00000899"), "{err}");
    }

    #[test]
    fn truncated_payload() {
        let b = image_bytes(10, 1, 1, &[0; 9]);
        let err = parse_idx(&b, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
        assert!(parse_idx(&b[..6], Path::new("x")).is_err());
    }

    #[test]
    fn paired_files_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(2, 2, (0..16).collect(), vec![1, 2, 3, 4], "mem".into()).unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        ds.save(&ip, &lp).unwrap();
        let back = Dataset::load(&ip, &lp).unwrap();
        assert_eq!(back.images, ds.images);
        assert_eq!(back.labels, ds.labels);

        write_idx(
            &lp,
            &IdxArray {
                magic: IDX_LABELS_MAGIC,
                dims: vec![3],
                data: vec![1, 2, 3],
            },
        )
        .unwrap();
        assert!(Dataset::load(&ip, &lp).is_err());
        // swapped roles
        assert!(Dataset::load(&lp, &ip).is_err());
    }

    #[test]
    fn downsample_averages_bins() {
        let img: Vec<u8> = vec![
            0, 10, 20, 30, //
            40, 50, 60, 70, //
            80, 90, 100, 110, //
            120, 130, 140, 150,
        ];
        let ds = Dataset::new(4, 4, img, vec![0], "m".into()).unwrap();
        let small = ds.downsample(2).unwrap();
        assert_eq!(small.images, vec![25, 45, 105, 125]);
        let mnist_like = Dataset::new(28, 28, vec![255; 784], vec![3], "m".into()).unwrap();
        assert_eq!(mnist_like.downsample(8).unwrap().images, vec![255; 64]);
    }
}
