//! Acceptance checks, one status line per criterion.
//!
//! Criteria that need the MovieLens 1M ratings read them from
//! `$COFFEE_ML1M_RATINGS` or `data/ml-1m/ratings.dat` under the workspace
//! root. Without the file those criteria print `BLOCKED` and do not count
//! as passed.

mod common;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use coffee_core::harness::{run_experiment, run_rating_cv, ExperimentConfig, Scenario, SplitPlan};
use coffee_core::ingest::{build_table, parse_movielens, FileFormat, RatingScale, RawRating};
use coffee_core::linalg::orthonormalize;
use coffee_core::metrics::{evaluate_user, Holdout, Metric};
use coffee_core::models::{
    fit_coffee, fit_puresvd, fold_in_coffee, fold_in_svd, predict_knn, rank_items_shades, top_n,
    ModelConfig, ModelKind, PreferenceMatrix,
};
use coffee_core::tensor::{hooi, reconstruct_slice, DenseTensor3, HooiOptions, SparseTensor};
use coffee_core::RatingTable;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{max_abs_diff, oracle, synthetic_table};

enum Status {
    Pass,
    Fail,
    Blocked,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn blocked(detail: String) -> Outcome {
    Outcome {
        status: Status::Blocked,
        detail,
    }
}

fn ml1m_path() -> PathBuf {
    std::env::var_os("COFFEE_ML1M_RATINGS")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            let root = Path::new(env!("CARGO_MANIFEST_DIR")).ancestors().nth(2).expect("workspace root");
            root.join("data/ml-1m/ratings.dat")
        })
}

fn load_ml1m() -> Result<RatingTable, String> {
    let path = ml1m_path();
    if !path.exists() {
        return Err(format!("dataset not found at {}", path.display()));
    }
    let raw = parse_movielens(&path, FileFormat::Dat).map_err(|e| e.to_string())?;
    build_table(&raw, 20, RatingScale::stars()).map_err(|e| e.to_string())
}

fn knn_worked_example() -> Outcome {
    let start = Instant::now();
    let raw = |u, i, r| RawRating {
        user_id: u,
        item_id: i,
        rating: r,
        timestamp: 0,
    };
    // Scarface 1, Toy Story 2, Godfather 3; Alice 1, Bob 2, Carol 3
    let table = build_table(
        &[
            raw(1, 1, 2.0),
            raw(1, 2, 5.0),
            raw(1, 3, 3.0),
            raw(2, 1, 4.0),
            raw(2, 3, 5.0),
            raw(3, 1, 2.0),
            raw(3, 2, 5.0),
        ],
        1,
        RatingScale::stars(),
    )
    .unwrap();
    let tom = [(0, 2.0)];
    let toy = predict_knn(&table, &tom, 1).unwrap();
    let godfather = predict_knn(&table, &tom, 2).unwrap();
    let elapsed = start.elapsed();
    let ok = (toy - 2.63).abs() <= 0.05
        && (godfather - 3.10).abs() <= 0.05
        && godfather > toy
        && elapsed.as_secs_f64() < 1.0;
    verdict(
        ok,
        format!(
            "toy_story={toy:.3} (2.63±0.05) godfather={godfather:.3} (3.10±0.05) in {:.2} ms (<1 s)",
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn rating_experiment(ml: &Result<RatingTable, String>) -> Outcome {
    let table = match ml {
        Ok(t) => t,
        Err(e) => return blocked(e.clone()),
    };
    let start = Instant::now();
    let mut config = ModelConfig::new(ModelKind::Coffee);
    config.mlrank = [13, 10, 2];
    let r = run_rating_cv(table, &SplitPlan::default(), &config, &HooiOptions::default()).unwrap();
    let ok = (r.exact - 0.47).abs() <= 0.04 && (r.positivity - 0.95).abs() <= 0.02 && (r.rmse - 0.77).abs() <= 0.05;
    verdict(
        ok,
        format!(
            "exact={:.1}% (47±4) positivity={:.1}% (95±2) rmse={:.3} (0.77±0.05) in {:.0} s",
            100.0 * r.exact,
            100.0 * r.positivity,
            r.rmse,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn negative_one_trends(ml: &Result<RatingTable, String>) -> Outcome {
    let table = match ml {
        Ok(t) => t,
        Err(e) => return blocked(e.clone()),
    };
    let models = [ModelKind::Coffee, ModelKind::PureSvd, ModelKind::Popular]
        .map(|k| {
            let mut c = ModelConfig::new(k);
            c.mlrank = [13, 10, 2];
            c.rank = 10;
            c
        })
        .to_vec();
    let config = ExperimentConfig {
        plan: SplitPlan::default(),
        scenarios: vec![Scenario::Negative(1)],
        models,
        max_n: 100,
        hooi: HooiOptions::default(),
        imported: Vec::new(),
    };
    let report = run_experiment(table, &config).unwrap();
    let at10 = |model: &str, m: Metric| {
        report
            .entry(model, Scenario::Negative(1))
            .unwrap()
            .curves
            .mean_at(m, 10)
    };
    let (c_ndcl, s_ndcl, p_ndcl) = (at10("coffee", Metric::Ndcl), at10("puresvd", Metric::Ndcl), at10("popular", Metric::Ndcl));
    let (c_ndcg, p_ndcg) = (at10("coffee", Metric::Ndcg), at10("popular", Metric::Ndcg));
    let ok = c_ndcl < s_ndcl && c_ndcl < p_ndcl && p_ndcg >= c_ndcg;
    verdict(
        ok,
        format!(
            "nDCL@10 coffee={c_ndcl:.4} puresvd={s_ndcl:.4} popular={p_ndcl:.4}; nDCG@10 popular={p_ndcg:.4} coffee={c_ndcg:.4}"
        ),
    )
}

fn fold_in_exactness(ml: &Result<RatingTable, String>) -> Outcome {
    let (table, source) = match ml {
        Ok(t) => (t.clone(), "ml-1m"),
        Err(_) => (synthetic_table(1500, 600, 99), "synthetic 1500x600"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut users: Vec<usize> = (0..table.n_users()).collect();
    users.shuffle(&mut rng);
    users.truncate(100);

    let coffee_dev = |ranks: [usize; 3]| {
        let model = fit_coffee(&table, ranks, &HooiOptions::default()).unwrap();
        users
            .iter()
            .map(|&i| {
                let shades = fold_in_coffee(&model, &PreferenceMatrix::from_user(&table, i)).unwrap();
                max_abs_diff(shades.as_matrix(), &reconstruct_slice(&model, i).unwrap())
            })
            .fold(0.0, f64::max)
    };
    // exact whenever U spans every projected user row, i.e. r1 ≥ r2·r3
    let full = coffee_dev([20, 10, 2]);
    let truncated = coffee_dev([13, 10, 2]);

    let svd = fit_puresvd(&table, 10).unwrap();
    let svd_dev = users
        .iter()
        .map(|&i| {
            let p: Vec<(usize, f64)> = table.user_ratings(i).iter().map(|r| (r.item, table.value(r))).collect();
            (fold_in_svd(&svd.v, &p).unwrap() - svd.reconstruct_row(i)).amax()
        })
        .fold(0.0, f64::max);
    verdict(
        full <= 1e-8 && svd_dev <= 1e-8,
        format!(
            "{source}, 100 users: coffee (20,10,2) max dev {full:.2e}, puresvd r=10 max dev {svd_dev:.2e} (≤1e-8); \
             coffee (13,10,2) max dev {truncated:.2e} (r1 < r2·r3, not an identity)"
        ),
    )
}

fn scaling_blindness(ml: &Result<RatingTable, String>) -> Outcome {
    let synthetic = synthetic_table(1500, 600, 98);
    let table = ml.as_ref().unwrap_or(&synthetic);
    let none = HashSet::new();
    let svd = fit_puresvd(table, 10).unwrap();
    let probes: Vec<usize> = (0..table.n_items()).step_by(37).collect();
    let mut svd_stable = true;
    for &item in &probes {
        let base = top_n(fold_in_svd(&svd.v, &[(item, 1.0)]).unwrap().as_slice(), table.n_items(), &none).items;
        for value in [2.0, 3.0, 4.0, 5.0] {
            let other = top_n(fold_in_svd(&svd.v, &[(item, value)]).unwrap().as_slice(), table.n_items(), &none).items;
            svd_stable &= other == base;
        }
    }
    let model = fit_coffee(table, [13, 10, 2], &HooiOptions::default()).unwrap();
    let positive = table.scale().positive_levels();
    let top10 = |item, level| {
        let prefs = PreferenceMatrix::new(table.n_items(), table.n_levels(), vec![(item, level)]).unwrap();
        rank_items_shades(&fold_in_coffee(&model, &prefs).unwrap(), &positive, 10, &none)
            .unwrap()
            .items
    };
    let changed = probes.iter().filter(|&&j| top10(j, 0) != top10(j, 4)).count();
    let detail = format!(
        "{} probe items: puresvd order unchanged under value change = {svd_stable}; coffee top-10 changed (1 vs 5 stars) for {changed}",
        probes.len()
    );
    match ml {
        Ok(_) => verdict(svd_stable && changed > 0, format!("ml-1m, {detail}")),
        Err(e) => blocked(format!("{e}; synthetic stand-in: {detail}")),
    }
}

fn hooi_properties() -> Outcome {
    let table = synthetic_table(800, 400, 97);
    let entries = table.ratings().iter().map(|r| [r.user, r.item, r.level]).collect();
    let x = SparseTensor::binary([table.n_users(), table.n_items(), 5], entries).unwrap();
    let model = hooi(&x, [13, 10, 2], &HooiOptions { tol: 0.0, ..HooiOptions::default() }).unwrap();
    let worst_step = model
        .fit_history
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let ortho = [&model.u, &model.v, &model.w]
        .iter()
        .map(|f| max_abs_diff(&(f.transpose() * *f), &DMatrix::identity(f.ncols(), f.ncols())))
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_recovery: f64 = 0.0;
    for shape in [[12, 10, 6], [30, 20, 5], [8, 9, 4]] {
        let factor = |rows: usize, rng: &mut ChaCha8Rng| {
            orthonormalize(&DMatrix::from_fn(rows, 2, |_, _| rng.random::<f64>() - 0.5)).unwrap().0
        };
        let (a, b, c) = (factor(shape[0], &mut rng), factor(shape[1], &mut rng), factor(shape[2], &mut rng));
        let core = DenseTensor3::from_fn([2, 2, 2], |_, _, _| rng.random::<f64>() * 2.0 - 1.0);
        let truth = core.mode_multiply(&a, 1).unwrap().mode_multiply(&b, 2).unwrap().mode_multiply(&c, 3).unwrap();
        let mut entries = Vec::new();
        let mut values = Vec::new();
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    entries.push([i, j, k]);
                    values.push(truth[[i, j, k]]);
                }
            }
        }
        let t = SparseTensor::with_values(shape, entries, values).unwrap();
        let rec = hooi(&t, [2, 2, 2], &HooiOptions::default()).unwrap().reconstruct().unwrap();
        let err: f64 = rec.as_slice().iter().zip(truth.as_slice()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        worst_recovery = worst_recovery.max(err / truth.norm());
    }
    verdict(
        worst_step >= -1e-9 && ortho <= 1e-8 && worst_recovery <= 1e-8,
        format!(
            "{} sweeps, min fit step {worst_step:.2e} (≥-1e-9), orthonormality {ortho:.2e} (≤1e-8), rank-(2,2,2) recovery {worst_recovery:.2e} (≤1e-8)",
            model.fit_history.len()
        ),
    )
}

fn metrics_oracle() -> Outcome {
    match oracle::exhaustive_check() {
        Ok(n) => verdict(true, format!("{n} instance/cutoff pairs identical to the brute-force reference")),
        Err(e) => verdict(false, e),
    }
}

fn ignore_unrated() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let trials = 5000;
    let mut mismatches = 0;
    for _ in 0..trials {
        let mut pool: Vec<usize> = (0..60).collect();
        pool.shuffle(&mut rng);
        let holdout_len = rng.random_range(1..=10);
        let holdout: Vec<(usize, f64)> = pool[..holdout_len]
            .iter()
            .map(|&i| (i, rng.random_range(1..=5) as f64))
            .collect();
        pool.shuffle(&mut rng);
        let list: Vec<usize> = pool[..rng.random_range(0..=40)].to_vec();
        let h = Holdout::new(holdout, 3.0).unwrap();
        let mut longer = list.clone();
        longer.extend(1000..1050);
        let max_n = longer.len();
        if evaluate_user(&list, &h, max_n) != evaluate_user(&longer, &h, max_n) {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("{trials} random lists with 50 unrated items appended, {mismatches} differing metric values"),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let ml = load_ml1m();
    let criteria: [Criterion; 8] = [
        ("knn_worked_example", Box::new(knn_worked_example)),
        ("ml1m_rating_prediction", Box::new(|| rating_experiment(&ml))),
        ("ml1m_negative_1_trends", Box::new(|| negative_one_trends(&ml))),
        ("fold_in_exactness", Box::new(|| fold_in_exactness(&ml))),
        ("scaling_blindness_vs_sensitivity", Box::new(|| scaling_blindness(&ml))),
        ("hooi_properties", Box::new(hooi_properties)),
        ("metrics_exhaustive_oracle", Box::new(metrics_oracle)),
        ("ignore_unrated_rule", Box::new(ignore_unrated)),
    ];
    let (mut passed, mut failed, mut blocked_count) = (0, 0, 0);
    for (name, check) in criteria.iter() {
        let outcome = check();
        let tag = match outcome.status {
            Status::Pass => {
                passed += 1;
                "PASS"
            }
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Blocked => {
                blocked_count += 1;
                "BLOCKED"
            }
        };
        println!("{tag:<8}{name:<34}{}", outcome.detail);
    }
    println!("acceptance: {passed} passed, {failed} failed, {blocked_count} blocked (not passed, input data unavailable)");
    if failed > 0 {
        std::process::exit(1);
    }
}
