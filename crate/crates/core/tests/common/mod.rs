//! Brute-force references shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Surface by direct neighbour lookup, independent of the library's routine.
pub fn oracle_surface(m: &Array3<u8>) -> Vec<[usize; 3]> {
    let (d, h, w) = m.dim();
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if m[[z, y, x]] == 0 {
                    continue;
                }
                let nbrs: [(isize, isize, isize); 6] = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)];
                let boundary = nbrs.iter().any(|&(dz, dy, dx)| {
                    let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    nz < 0
                        || ny < 0
                        || nx < 0
                        || nz >= d as isize
                        || ny >= h as isize
                        || nx >= w as isize
                        || m[[nz as usize, ny as usize, nx as usize]] == 0
                });
                if boundary {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

pub fn pair_dist(a: &[usize; 3], b: &[usize; 3], s: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for k in 0..3 {
        let d = (a[k] as f64 - b[k] as f64) * s[k];
        acc += d * d;
    }
    acc.sqrt()
}

pub fn oracle_directed(from: &[[usize; 3]], to: &[[usize; 3]], s: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|p| to.iter().map(|q| pair_dist(p, q, s)).fold(f64::INFINITY, f64::min))
        .collect()
}

pub fn oracle_hd_asd(pred: &Array3<u8>, gt: &Array3<u8>, s: [f64; 3]) -> (f64, f64) {
    let a = oracle_directed(&oracle_surface(pred), &oracle_surface(gt), s);
    let b = oracle_directed(&oracle_surface(gt), &oracle_surface(pred), s);
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (max(&a).max(max(&b)), (mean(&a) + mean(&b)) / 2.0)
}

pub fn random_mask(rng: &mut ChaCha8Rng, dims: (usize, usize, usize)) -> Array3<u8> {
    // A blob plus sprinkled noise, so surfaces have both smooth and ragged parts.
    let c = [rng.random_range(0..dims.0), rng.random_range(0..dims.1), rng.random_range(0..dims.2)];
    let r = rng.random_range(1.0..6.0f64);
    let noise = rng.random_range(0.0..0.3);
    loop {
        let m = Array3::from_shape_fn(dims, |(z, y, x)| {
            let d2 = (z as f64 - c[0] as f64).powi(2) + (y as f64 - c[1] as f64).powi(2) + (x as f64 - c[2] as f64).powi(2);
            u8::from(d2 <= r * r || rng.random_bool(noise))
        });
        if m.iter().any(|&v| v != 0) {
            return m;
        }
    }
}
