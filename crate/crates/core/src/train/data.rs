use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DataError {
    #[error("{images} image values do not fill {labels} items of {item} values")]
    Length { images: usize, labels: usize, item: usize },
    #[error("label {label} at index {index} is not below {classes}")]
    Label { index: usize, label: u32, classes: usize },
    #[error("dataset is empty")]
    Empty,
}

/// Normalized images `(C, H, W)` with integer labels, held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    item: [usize; 3],
    images: Vec<f32>,
    labels: Vec<u32>,
    classes: usize,
}

/// Random crop from a zero-padded image plus horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augment {
    pub pad: usize,
    pub flip: bool,
}

impl Augment {
    pub const STANDARD: Augment = Augment { pad: 4, flip: true };
}

impl ImageSet {
    pub fn new(item: [usize; 3], images: Vec<f32>, labels: Vec<u32>, classes: usize) -> Result<Self, DataError> {
        let len = item[0] * item[1] * item[2];
        if images.len() != len * labels.len() {
            return Err(DataError::Length { images: images.len(), labels: labels.len(), item: len });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
            return Err(DataError::Label { index, label, classes });
        }
        Ok(ImageSet { item, images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn item_shape(&self) -> [usize; 3] {
        self.item
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.item_len();
        &self.images[i * len..(i + 1) * len]
    }

    fn item_len(&self) -> usize {
        self.item[0] * self.item[1] * self.item[2]
    }

    /// First `n` items (or all of them).
    pub fn take(&self, n: usize) -> ImageSet {
        let n = n.min(self.len());
        ImageSet {
            item: self.item,
            images: self.images[..n * self.item_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// Splits off the last `n` items.
    pub fn split_tail(&self, n: usize) -> (ImageSet, ImageSet) {
        let cut = self.len() - n.min(self.len());
        let l = self.item_len();
        let head = ImageSet {
            item: self.item,
            images: self.images[..cut * l].to_vec(),
            labels: self.labels[..cut].to_vec(),
            classes: self.classes,
        };
        let tail = ImageSet {
            item: self.item,
            images: self.images[cut * l..].to_vec(),
            labels: self.labels[cut..].to_vec(),
            classes: self.classes,
        };
        (head, tail)
    }

    /// Gathers a batch `(images, labels-as-floats)`.
    pub fn batch<R: Rng>(&self, indices: &[usize], augment: Option<(Augment, &mut R)>) -> (Tensor, Tensor) {
        let [c, h, w] = self.item;
        let n = indices.len();
        let mut x = Tensor::zeros(Shape::new(n, c, h, w));
        let mut aug = augment;
        for (b, &i) in indices.iter().enumerate() {
            let src = self.image(i);
            let dst = x.item_mut(b);
            match aug.as_mut() {
                None => dst.copy_from_slice(src),
                Some((a, rng)) => {
                    let dy = rng.gen_range(0..=2 * a.pad) as isize - a.pad as isize;
                    let dx = rng.gen_range(0..=2 * a.pad) as isize - a.pad as isize;
                    let flip = a.flip && rng.gen_bool(0.5);
                    for ch in 0..c {
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for xx in 0..w {
                                let col = if flip { w - 1 - xx } else { xx };
                                let sx = col as isize + dx;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                dst[(ch * h + y) * w + xx] = src[(ch * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                }
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i] as f32).collect();
        (x, Tensor::from_vec(Shape::new(n, 1, 1, 1), labels).expect("one label per item"))
    }
}

/// Shuffled index order for one epoch.
pub fn epoch_order<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn construction_checks() {
        assert!(ImageSet::new([1, 2, 2], vec![0.0; 7], vec![0, 1], 2).is_err());
        assert_eq!(
            ImageSet::new([1, 1, 1], vec![0.0; 2], vec![0, 5], 3),
            Err(DataError::Label { index: 1, label: 5, classes: 3 })
        );
    }

    #[test]
    fn zero_shift_without_flip_is_identity() {
        let set = ImageSet::new([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], vec![0], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, y) = set.batch(&[0], Some((Augment { pad: 0, flip: false }, &mut rng)));
        assert_eq!(x.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(y.data(), &[0.0]);
    }
}
