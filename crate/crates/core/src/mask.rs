//! Raster label maps.

use crate::taxonomy::{Class, NUM_CLASSES};
use crate::DataError;

/// Per-pixel class ids in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    labels: Vec<u8>,
}

impl Mask {
    /// All-background mask.
    pub fn new(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            labels: vec![0; width as usize * height as usize],
        }
    }

    pub fn filled(width: u32, height: u32, class: Class) -> Self {
        Mask {
            width,
            height,
            labels: vec![class.id(); width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, labels: Vec<u8>) -> Result<Self, DataError> {
        if labels.len() != width as usize * height as usize {
            return Err(DataError::ShapeMismatch {
                expected: (width, height),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(DataError::InvalidClassId(bad));
        }
        Ok(Mask {
            width,
            height,
            labels,
        })
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, class: Class) {
        self.labels[y as usize * self.width as usize + x as usize] = class.id();
    }

    #[inline]
    pub fn class_at(&self, x: u32, y: u32) -> Class {
        Class::ALL[self.get(x, y) as usize]
    }

    /// Pixel count per class id. Always sums to width * height.
    pub fn histogram(&self) -> [u64; NUM_CLASSES] {
        let mut h = [0u64; NUM_CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    pub fn count(&self, class: Class) -> u64 {
        self.labels.iter().filter(|&&l| l == class.id()).count() as u64
    }

    pub fn classes_present(&self) -> Vec<Class> {
        let h = self.histogram();
        Class::ALL.iter().copied().filter(|c| h[c.index()] > 0).collect()
    }

    pub fn resize_nearest(&self, width: u32, height: u32) -> Mask {
        let labels = crate::imageops::resize_nearest_u8(
            &self.labels,
            self.width as usize,
            self.height as usize,
            width as usize,
            height as usize,
        );
        Mask {
            width,
            height,
            labels,
        }
    }

    /// Copies the `w`×`h` window at (`x`, `y`).
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Mask {
        let mut labels = Vec::with_capacity(w as usize * h as usize);
        for row in y..y + h {
            let start = row as usize * self.width as usize + x as usize;
            labels.extend_from_slice(&self.labels[start..start + w as usize]);
        }
        Mask {
            width: w,
            height: h,
            labels,
        }
    }

    /// Writes `src` into this mask with its top-left corner at (`x`, `y`).
    pub fn paste(&mut self, src: &Mask, x: u32, y: u32) {
        for row in 0..src.height {
            let dst = (y + row) as usize * self.width as usize + x as usize;
            let s = row as usize * src.width as usize;
            self.labels[dst..dst + src.width as usize]
                .copy_from_slice(&src.labels[s..s + src.width as usize]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_ids() {
        assert!(matches!(
            Mask::from_vec(2, 1, vec![0, 7]),
            Err(DataError::InvalidClassId(7))
        ));
        assert!(Mask::from_vec(2, 2, vec![0, 1, 2]).is_err());
    }

    #[test]
    fn histogram_sums_to_area() {
        let mut m = Mask::new(5, 3);
        m.set(1, 1, Class::Other);
        m.set(4, 2, Class::SideGroove);
        let h = m.histogram();
        assert_eq!(h.iter().sum::<u64>(), 15);
        assert_eq!(h[6], 1);
        assert_eq!(m.classes_present(), vec![Class::Background, Class::SideGroove, Class::Other]);
    }

    #[test]
    fn crop_paste_round_trip() {
        let labels: Vec<u8> = (0..48).map(|i| (i % 7) as u8).collect();
        let m = Mask::from_vec(8, 6, labels).unwrap();
        let c = m.crop(3, 2, 4, 3);
        let mut out = Mask::new(8, 6);
        out.paste(&c, 3, 2);
        for y in 2..5 {
            for x in 3..7 {
                assert_eq!(out.get(x, y), m.get(x, y));
            }
        }
    }
}
