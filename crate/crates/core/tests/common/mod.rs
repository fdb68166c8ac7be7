#![allow(dead_code)]

use flowuq::toytrain::{Prediction, SyntheticScene, ToyModel};
use rand_chacha::ChaCha8Rng;

/// Ranks starting at 0; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            ranks[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of the average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

/// Predicted mean scale `(b_u + b_v) / 2` and injected noise scale for
/// every pixel of every scene.
pub fn scale_vs_noise(model: &ToyModel, scenes: &[SyntheticScene]) -> (Vec<f64>, Vec<f64>) {
    let mut b = Vec::new();
    let mut noise = Vec::new();
    for s in scenes {
        let Prediction::Laplace { uncertainty, .. } = model
            .predict::<ChaCha8Rng>(&s.features, s.width, s.height, None)
            .unwrap()
        else {
            panic!("expected a Laplace head");
        };
        for i in 0..s.len() {
            b.push(0.5 * (uncertainty.b_u()[i] + uncertainty.b_v()[i]));
            noise.push(s.noise_scale[i]);
        }
    }
    (b, noise)
}
