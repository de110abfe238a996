//! Spatial transforms applied identically to image and mask.
//!
//! Continuous maps are inverse maps in pixel-index coordinates: each output
//! pixel `(x, y)` samples the input at `map(x, y)`. Images are resampled
//! bilinearly and masks by nearest neighbour, both with reflect padding.

use super::AugmentedPair;
use crate::tensor::Tensor4;

/// Mirror index into `[0, n)` without repeating the edge sample.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn warp_image(t: &Tensor4, map: &dyn Fn(f64, f64) -> (f64, f64)) -> Tensor4 {
    let s = t.shape();
    let mut out = Tensor4::zeros(s);
    for y in 0..s.h {
        for x in 0..s.w {
            let (sx, sy) = map(x as f64, y as f64);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let xs = [reflect(x0, s.w), reflect(x0 + 1, s.w)];
            let ys = [reflect(y0, s.h), reflect(y0 + 1, s.h)];
            for n in 0..s.n {
                for c in 0..s.c {
                    let p = t.plane(n, c);
                    let v = (1.0 - fy)
                        * ((1.0 - fx) * p[ys[0] * s.w + xs[0]] + fx * p[ys[0] * s.w + xs[1]])
                        + fy * ((1.0 - fx) * p[ys[1] * s.w + xs[0]] + fx * p[ys[1] * s.w + xs[1]]);
                    out.set(n, c, y, x, v);
                }
            }
        }
    }
    out
}

fn warp_mask(t: &Tensor4, map: &dyn Fn(f64, f64) -> (f64, f64)) -> Tensor4 {
    let s = t.shape();
    let mut out = Tensor4::zeros(s);
    for y in 0..s.h {
        for x in 0..s.w {
            let (sx, sy) = map(x as f64, y as f64);
            let xi = reflect(sx.round() as isize, s.w);
            let yi = reflect(sy.round() as isize, s.h);
            for n in 0..s.n {
                for c in 0..s.c {
                    let v = t.at(n, c, yi, xi);
                    out.set(n, c, y, x, if v >= 0.5 { 1.0 } else { 0.0 });
                }
            }
        }
    }
    out
}

/// Applies the inverse map `map` to both image and mask.
pub fn warp(pair: &AugmentedPair, map: &dyn Fn(f64, f64) -> (f64, f64)) -> AugmentedPair {
    AugmentedPair {
        image: warp_image(&pair.image, map),
        mask: warp_mask(&pair.mask, map),
        log: pair.log.clone(),
    }
}

fn center(t: &Tensor4) -> (f64, f64) {
    let s = t.shape();
    ((s.w as f64 - 1.0) / 2.0, (s.h as f64 - 1.0) / 2.0)
}

fn rot90_tensor(t: &Tensor4) -> Tensor4 {
    let s = t.shape();
    let mut out = Tensor4::zeros([s.n, s.c, s.w, s.h]);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.w {
                for x in 0..s.h {
                    out.set(n, c, y, x, t.at(n, c, x, s.w - 1 - y));
                }
            }
        }
    }
    out
}

/// Counter-clockwise rotation by `k` quarter turns: `[[a,b],[c,d]]` becomes
/// `[[b,d],[a,c]]` for `k = 1`.
pub fn rotate90(pair: &AugmentedPair, k: usize) -> AugmentedPair {
    let mut out = pair.clone();
    for _ in 0..k % 4 {
        out.image = rot90_tensor(&out.image);
        out.mask = rot90_tensor(&out.mask);
    }
    out
}

fn flip_tensor(t: &Tensor4, axis: usize) -> Tensor4 {
    let s = t.shape();
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let (sy, sx) = if axis == 0 {
                        (s.h - 1 - y, x)
                    } else {
                        (y, s.w - 1 - x)
                    };
                    out.set(n, c, y, x, t.at(n, c, sy, sx));
                }
            }
        }
    }
    out
}

/// Axis 0 reverses rows, axis 1 reverses columns.
pub fn axis_flip(pair: &AugmentedPair, axis: usize) -> AugmentedPair {
    AugmentedPair {
        image: flip_tensor(&pair.image, axis),
        mask: flip_tensor(&pair.mask, axis),
        log: pair.log.clone(),
    }
}

/// Zoom about the center; `factor > 1` enlarges the content.
pub fn zoom(pair: &AugmentedPair, factor: f64) -> AugmentedPair {
    let (cx, cy) = center(&pair.image);
    warp(pair, &|x, y| {
        (cx + (x - cx) / factor, cy + (y - cy) / factor)
    })
}

/// Forward map `R(rotate) * Shear(shear) * diag(1 + sx, 1 + sy)` about the
/// center; angles in radians.
pub fn affine(pair: &AugmentedPair, rotate: f64, shear: f64, scale: (f64, f64)) -> AugmentedPair {
    let (c, s) = (rotate.cos(), rotate.sin());
    let (sx, sy) = (1.0 + scale.0, 1.0 + scale.1);
    // R * [[1, shear], [0, 1]] * diag(sx, sy)
    let a = [
        [c * sx, (c * shear - s) * sy],
        [s * sx, (s * shear + c) * sy],
    ];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ];
    let (cx, cy) = center(&pair.image);
    warp(pair, &|x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (
            cx + inv[0][0] * dx + inv[0][1] * dy,
            cy + inv[1][0] * dx + inv[1][1] * dy,
        )
    })
}

/// Displacement lattice for grid distortion: `(cells + 1)^2` nodes, each
/// holding an `(dx, dy)` offset in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortionGrid {
    pub cells: usize,
    pub offsets: Vec<(f64, f64)>,
}

/// Bilinearly interpolated lattice displacement.
pub fn grid_distortion(pair: &AugmentedPair, grid: &DistortionGrid) -> AugmentedPair {
    let s = pair.image.shape();
    let nodes = grid.cells + 1;
    let (cw, ch) = (
        (s.w as f64 - 1.0).max(1.0) / grid.cells as f64,
        (s.h as f64 - 1.0).max(1.0) / grid.cells as f64,
    );
    warp(pair, &|x, y| {
        let gx = (x / cw).min(grid.cells as f64 - 1e-9);
        let gy = (y / ch).min(grid.cells as f64 - 1e-9);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - ix as f64, gy - iy as f64);
        let node = |i: usize, j: usize| grid.offsets[j * nodes + i];
        let lerp =
            |a: (f64, f64), b: (f64, f64), t: f64| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
        let top = lerp(node(ix, iy), node(ix + 1, iy), fx);
        let bottom = lerp(node(ix, iy + 1), node(ix + 1, iy + 1), fx);
        let d = lerp(top, bottom, fy);
        (x + d.0, y + d.1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_from(rows: &[&[f64]]) -> AugmentedPair {
        let t = Tensor4::from_rows(rows);
        AugmentedPair::new(t.clone(), t.map(|v| if v > 0.5 { 1.0 } else { 0.0 }))
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..6).map(|i| reflect(i, 3)).collect();
        assert_eq!(got, vec![1, 2, 1, 0, 1, 2, 1, 0, 1]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn rotate_ccw_oracle() {
        let p = pair_from(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let r = rotate90(&p, 1);
        assert_eq!(r.image.data(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn rotate_non_square_swaps_extent() {
        let p = pair_from(&[&[1.0, 2.0, 3.0]]);
        let r = rotate90(&p, 1);
        assert_eq!((r.image.shape().h, r.image.shape().w), (3, 1));
        assert_eq!(r.image.data(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn identity_maps() {
        let p = pair_from(&[&[0.1, 0.9, 0.3], &[0.7, 0.2, 0.8]]);
        assert!(zoom(&p, 1.0).image.max_abs_diff(&p.image) < 1e-12);
        assert!(
            affine(&p, 0.0, 0.0, (0.0, 0.0))
                .image
                .max_abs_diff(&p.image)
                < 1e-12
        );
        let grid = DistortionGrid {
            cells: 5,
            offsets: vec![(0.0, 0.0); 36],
        };
        assert!(grid_distortion(&p, &grid).image.max_abs_diff(&p.image) < 1e-12);
        assert_eq!(zoom(&p, 1.0).mask, p.mask);
    }
}
