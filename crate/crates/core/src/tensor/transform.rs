use serde::{Deserialize, Serialize};

use super::{Image, Tensor};
use crate::real::Real;

/// The eight symmetries of the square acting on the spatial axes of a
/// `[C, H, W]` tensor.
///
/// Rotations are counter-clockwise as seen on screen (y pointing down).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dihedral {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
    /// Mirror across the main diagonal.
    Transpose,
    /// Mirror across the anti-diagonal.
    AntiTranspose,
}

/// Maps centered destination coordinates `(u, v)` to source coordinates:
/// `src = M * dst`, rows `[[m00, m01], [m10, m11]]`.
type Matrix = [[i8; 2]; 2];

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::FlipH,
        Dihedral::FlipV,
        Dihedral::Transpose,
        Dihedral::AntiTranspose,
    ];

    fn matrix(self) -> Matrix {
        match self {
            Dihedral::Identity => [[1, 0], [0, 1]],
            Dihedral::Rot90 => [[0, -1], [1, 0]],
            Dihedral::Rot180 => [[-1, 0], [0, -1]],
            Dihedral::Rot270 => [[0, 1], [-1, 0]],
            Dihedral::FlipH => [[-1, 0], [0, 1]],
            Dihedral::FlipV => [[1, 0], [0, -1]],
            Dihedral::Transpose => [[0, 1], [1, 0]],
            Dihedral::AntiTranspose => [[0, -1], [-1, 0]],
        }
    }

    fn from_matrix(m: Matrix) -> Self {
        *Self::ALL
            .iter()
            .find(|d| d.matrix() == m)
            .expect("signed permutation matrices form the dihedral group")
    }

    /// True when the transform exchanges the height and width axes.
    pub fn swaps_axes(self) -> bool {
        self.matrix()[0][0] == 0
    }

    pub fn inverse(self) -> Self {
        let m = self.matrix();
        Self::from_matrix([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    /// The transform equivalent to applying `self` first and `then` second.
    pub fn then(self, then: Dihedral) -> Self {
        let (a, b) = (self.matrix(), then.matrix());
        let mut m = [[0i8; 2]; 2];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        Self::from_matrix(m)
    }
}

/// Applies a dihedral transform to the spatial axes of a `[C, H, W]` tensor.
/// The result is an exact permutation of the input samples.
pub fn spatial_transform<T: Real>(t: &Tensor<T>, d: Dihedral) -> Tensor<T> {
    if d == Dihedral::Identity {
        return t.clone();
    }
    let (c, h, w) = t.chw();
    let (oh, ow) = if d.swaps_axes() { (w, h) } else { (h, w) };
    let m = d.matrix();
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            let v = 2 * y as isize - (oh as isize - 1);
            for x in 0..ow {
                let u = 2 * x as isize - (ow as isize - 1);
                let su = m[0][0] as isize * u + m[0][1] as isize * v;
                let sv = m[1][0] as isize * u + m[1][1] as isize * v;
                let sx = ((su + w as isize - 1) / 2) as usize;
                let sy = ((sv + h as isize - 1) / 2) as usize;
                out.push(plane[sy * w + sx]);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("permuted extent")
}

impl<T: Real> Image<T> {
    pub fn transform(&self, d: Dihedral) -> Image<T> {
        Image {
            tensor: spatial_transform(self.tensor(), d),
        }
    }
}
