//! Seeded toy datasets. Each returns `([n, 2], labels)` in shuffled order.

use std::f64::consts::PI;

use crate::rng::{self, Rng, Stream};
use crate::tensor::Tensor;

fn finish(rng: &mut Rng, mut points: Vec<([f64; 2], usize)>) -> (Tensor<f64>, Vec<usize>) {
    rng::shuffle(rng, &mut points);
    let n = points.len();
    let labels = points.iter().map(|p| p.1).collect();
    let data = points.into_iter().flat_map(|p| p.0).collect();
    (Tensor::new(vec![n, 2], data).expect("2-d points"), labels)
}

/// Two interleaving half circles with isotropic Gaussian noise.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut rng = rng::stream(seed, Stream::Data);
    let outer = n - n / 2;
    let inner = n / 2;
    let angle = |i: usize, m: usize| if m > 1 { PI * i as f64 / (m - 1) as f64 } else { 0.0 };
    let mut points = Vec::with_capacity(n);
    for i in 0..outer {
        let t = angle(i, outer);
        points.push(([t.cos(), t.sin()], 0));
    }
    for i in 0..inner {
        let t = angle(i, inner);
        points.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    for (p, _) in &mut points {
        p[0] += noise * rng::standard_normal::<f64>(&mut rng);
        p[1] += noise * rng::standard_normal::<f64>(&mut rng);
    }
    finish(&mut rng, points)
}

/// `centers` unit-variance Gaussian clusters with centres drawn uniformly
/// from `[-5, 5]^2`.
pub fn blobs(n: usize, centers: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut rng = rng::stream(seed, Stream::Data);
    let c: Vec<[f64; 2]> = (0..centers.max(1)).map(|_| [rng::uniform(&mut rng, -5.0, 5.0), rng::uniform(&mut rng, -5.0, 5.0)]).collect();
    let points = (0..n)
        .map(|i| {
            let k = i % c.len();
            let p = [c[k][0] + rng::standard_normal::<f64>(&mut rng), c[k][1] + rng::standard_normal::<f64>(&mut rng)];
            (p, k)
        })
        .collect();
    finish(&mut rng, points)
}

/// Points uniform on `[-1, 1]^2`, labelled by the sign of `x * y`, then
/// jittered by Gaussian noise.
pub fn xor_grid(n: usize, noise: f64, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut rng = rng::stream(seed, Stream::Data);
    let points = (0..n)
        .map(|_| {
            let x: f64 = rng::uniform(&mut rng, -1.0, 1.0);
            let y: f64 = rng::uniform(&mut rng, -1.0, 1.0);
            let label = usize::from((x > 0.0) != (y > 0.0));
            let jx = noise * rng::standard_normal::<f64>(&mut rng);
            let jy = noise * rng::standard_normal::<f64>(&mut rng);
            ([x + jx, y + jy], label)
        })
        .collect();
    finish(&mut rng, points)
}
