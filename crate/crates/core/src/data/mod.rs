//! Dataset types and ingestion: IDX ubyte files, PNG class directories,
//! and the deterministic synthetic corpora used at desk scale.

pub mod synthetic;

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// Images in [0,1] with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Images at the given indices as a fresh (N,C,H,W) batch.
    pub fn select(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let s = self.images.shape();
        let plane = s[1] * s[2] * s[3];
        let mut data = Vec::with_capacity(indices.len() * plane);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * plane..(i + 1) * plane]);
            labels.push(self.labels[i]);
        }
        (
            Tensor::new(data, vec![indices.len(), s[1], s[2], s[3]]).unwrap(),
            labels,
        )
    }

    pub fn take(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        let (images, labels) = self.select(&idx);
        LabeledDataset {
            images,
            labels,
            split: self.split,
            num_classes: self.num_classes,
        }
    }
}

/// Compression-aware training data: append JPEG-compressed copies of
/// the first `fraction` of the dataset (labels unchanged).
pub fn augment_jpeg(
    dataset: &LabeledDataset,
    quality: f64,
    fraction: f64,
) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CoreError::invalid("augment_jpeg: fraction must be in [0,1]"));
    }
    let n_aug = ((dataset.len() as f64) * fraction).round() as usize;
    if n_aug == 0 {
        return Ok(dataset.clone());
    }
    let idx: Vec<usize> = (0..n_aug).collect();
    let (subset, subset_labels) = dataset.select(&idx);
    let cfg = crate::jpeg::JpegConfig::new(quality, crate::jpeg::JpegMode::BitExact)?;
    let compressed = crate::jpeg::jpeg_forward(&subset, &cfg)?;
    let s = dataset.images.shape();
    let mut data = dataset.images.data().to_vec();
    data.extend_from_slice(compressed.data());
    let mut labels = dataset.labels.clone();
    labels.extend_from_slice(&subset_labels);
    Ok(LabeledDataset {
        images: Tensor::new(data, vec![labels.len(), s[1], s[2], s[3]])?,
        labels,
        split: dataset.split,
        num_classes: dataset.num_classes,
    })
}

fn io_err(path: &Path, source: std::io::Error) -> CoreError {
    CoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_u32_be(buf: &[u8], off: usize, path: &Path) -> Result<u32> {
    buf.get(off..off + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| CoreError::Format(format!("{}: truncated header", path.display())))
}

/// Load an IDX image/label file pair (big-endian magic 0x803 / 0x801,
/// ubyte payload). Pixels map byte/255 so 255 becomes exactly 1.0.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<LabeledDataset> {
    let mut ibuf = Vec::new();
    fs::File::open(images_path)
        .and_then(|mut f| f.read_to_end(&mut ibuf))
        .map_err(|e| io_err(images_path, e))?;
    let magic = read_u32_be(&ibuf, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CoreError::Format(format!(
            "{}: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let n = read_u32_be(&ibuf, 4, images_path)? as usize;
    let h = read_u32_be(&ibuf, 8, images_path)? as usize;
    let w = read_u32_be(&ibuf, 12, images_path)? as usize;
    let need = 16 + n * h * w;
    if ibuf.len() < need {
        return Err(CoreError::Format(format!(
            "{}: truncated payload ({} of {need} bytes)",
            images_path.display(),
            ibuf.len()
        )));
    }
    let images: Vec<f64> = ibuf[16..need].iter().map(|&b| b as f64 / 255.0).collect();

    let mut lbuf = Vec::new();
    fs::File::open(labels_path)
        .and_then(|mut f| f.read_to_end(&mut lbuf))
        .map_err(|e| io_err(labels_path, e))?;
    let magic = read_u32_be(&lbuf, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CoreError::Format(format!(
            "{}: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let ln = read_u32_be(&lbuf, 4, labels_path)? as usize;
    if ln != n || lbuf.len() < 8 + n {
        return Err(CoreError::Format(format!(
            "{}: {ln} labels for {n} images",
            labels_path.display()
        )));
    }
    let labels: Vec<usize> = lbuf[8..8 + n].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    Ok(LabeledDataset {
        images: Tensor::new(images, vec![n, 1, h, w])?,
        labels,
        split,
        num_classes,
    })
}

/// Write a grayscale dataset as an IDX image/label file pair.
pub fn write_idx(dataset: &LabeledDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (c, h, w) = dataset.image_shape();
    if c != 1 {
        return Err(CoreError::invalid("write_idx: only single-channel datasets"));
    }
    let n = dataset.len();
    let mut ibuf = Vec::with_capacity(16 + n * h * w);
    ibuf.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    ibuf.extend_from_slice(&(n as u32).to_be_bytes());
    ibuf.extend_from_slice(&(h as u32).to_be_bytes());
    ibuf.extend_from_slice(&(w as u32).to_be_bytes());
    ibuf.extend(
        dataset
            .images
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    fs::write(images_path, ibuf).map_err(|e| io_err(images_path, e))?;

    let mut lbuf = Vec::with_capacity(8 + n);
    lbuf.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbuf.extend_from_slice(&(n as u32).to_be_bytes());
    lbuf.extend(dataset.labels.iter().map(|&l| l as u8));
    fs::write(labels_path, lbuf).map_err(|e| io_err(labels_path, e))
}

/// Load a directory of class subfolders holding PNG images. Class ids
/// follow lexicographic subfolder order; files are name-sorted so the
/// ordering is deterministic.
pub fn load_png_dirs(root: &Path, split: Split) -> Result<LabeledDataset> {
    let mut class_dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(CoreError::Format(format!(
            "{}: no class subdirectories",
            root.display()
        )));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut count = 0usize;
    for (class, dir) in class_dirs.iter().enumerate() {
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map_or(false, |e| e == "png"))
            .collect();
        files.sort();
        for file in files {
            let img = image::open(&file)
                .map_err(|e| CoreError::Format(format!("{}: {e}", file.display())))?;
            let rgb = img.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let c = 3usize;
            match dims {
                None => dims = Some((c, h, w)),
                Some(d) if d != (c, h, w) => {
                    return Err(CoreError::Format(format!(
                        "{}: size {h}x{w} differs from first image {}x{}",
                        file.display(),
                        d.1,
                        d.2
                    )))
                }
                _ => {}
            }
            // planar channel layout
            for ch in 0..3 {
                data.extend(rgb.pixels().map(|p| p.0[ch] as f64 / 255.0));
            }
            labels.push(class);
            count += 1;
        }
    }
    let (c, h, w) = dims.ok_or_else(|| {
        CoreError::Format(format!("{}: no png files found", root.display()))
    })?;
    Ok(LabeledDataset {
        images: Tensor::new(data, vec![count, c, h, w])?,
        labels,
        split,
        num_classes: class_dirs.len(),
    })
}

/// Save a (C,H,W) image in [0,1] as a PNG file.
pub fn save_png(image_chw: &Tensor, path: &Path) -> Result<()> {
    let s = image_chw.shape();
    let (c, h, w) = match s {
        [c, h, w] => (*c, *h, *w),
        _ => {
            return Err(CoreError::BadShape {
                op: "save_png",
                expected: "(channels, height, width)".into(),
                got: s.to_vec(),
            })
        }
    };
    let to_byte = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    let buf: Vec<u8> = match c {
        1 => image_chw.data().iter().map(|&v| to_byte(v)).collect(),
        3 => {
            let plane = h * w;
            (0..plane)
                .flat_map(|p| {
                    (0..3).map(move |ch| ch * plane + p)
                })
                .map(|i| to_byte(image_chw.data()[i]))
                .collect()
        }
        _ => {
            return Err(CoreError::BadShape {
                op: "save_png",
                expected: "1 or 3 channels".into(),
                got: s.to_vec(),
            })
        }
    };
    let color = if c == 1 {
        image::ColorType::L8
    } else {
        image::ColorType::Rgb8
    };
    image::save_buffer(path, &buf, w as u32, h as u32, color)
        .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))
}
