#![allow(dead_code)]

pub mod oracle;

use coffee_core::ingest::{build_table, RatingScale, RawRating, RatingTable};
use rand::seq::index::sample_weighted;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// MovieLens-like ratings: skewed item popularity, a few latent tastes,
/// per-item quality and 1..5 stars.
pub fn synthetic_ratings(n_users: usize, n_items: usize, seed: u64) -> Vec<RawRating> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let dim = 3;
    let items: Vec<Vec<f64>> = (0..n_items)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let quality: Vec<f64> = (0..n_items).map(|_| 0.6 * normal.sample(&mut rng)).collect();
    let popularity: Vec<f64> = (0..n_items)
        .map(|j| 1.0 / ((j + 5) as f64).powf(0.9) * (1.0 + quality[j].max(-0.9)))
        .collect();
    let mut out = Vec::new();
    for u in 0..n_users {
        let taste: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let bias = 0.4 * normal.sample(&mut rng);
        let count = rng.random_range(20..=(60.min(n_items)));
        let picked = sample_weighted(&mut rng, n_items, |j| popularity[j], count).unwrap();
        for (t, j) in picked.into_iter().enumerate() {
            let affinity: f64 = taste.iter().zip(&items[j]).map(|(a, b)| a * b).sum::<f64>() / (dim as f64).sqrt();
            let raw = 3.6 + 0.9 * affinity + quality[j] + bias + 0.5 * normal.sample(&mut rng);
            out.push(RawRating {
                user_id: u as u64 + 1,
                item_id: j as u64 + 1,
                rating: raw.round().clamp(1.0, 5.0),
                timestamp: 1_000_000 + (u * 1000 + t) as i64,
            });
        }
    }
    out
}

pub fn synthetic_table(n_users: usize, n_items: usize, seed: u64) -> RatingTable {
    build_table(&synthetic_ratings(n_users, n_items, seed), 20, RatingScale::stars()).unwrap()
}

pub fn max_abs_diff(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
