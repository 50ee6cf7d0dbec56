//! CoFFee (the tensor model) and the matrix baselines behind one
//! recommendation interface, plus folding-in for users unseen at fit time.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RatingTable;
use crate::linalg::{self, CsrMatrix, TruncatedSvd};
use crate::tensor::{self, HooiOptions, SparseTensor, TuckerModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Coffee,
    PureSvd,
    Knn,
    Popular,
    Random,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Coffee => "coffee",
            Self::PureSvd => "puresvd",
            Self::Knn => "knn",
            Self::Popular => "popular",
            Self::Random => "random",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coffee" => Ok(Self::Coffee),
            "puresvd" | "svd" => Ok(Self::PureSvd),
            "knn" => Ok(Self::Knn),
            "popular" | "mostpopular" => Ok(Self::Popular),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidInput(format!("unknown model `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which rating levels are summed when ranking from shades.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LevelSelection {
    /// Every level strictly above the negativity threshold.
    #[default]
    Sum,
    /// Only the top level.
    Highest,
    /// Explicit zero-based level indices.
    Levels(Vec<usize>),
}

impl LevelSelection {
    pub fn resolve(&self, scale: &crate::RatingScale) -> Result<Vec<usize>> {
        let levels = match self {
            Self::Sum => scale.positive_levels(),
            Self::Highest => vec![scale.len() - 1],
            Self::Levels(levels) => levels.clone(),
        };
        if levels.is_empty() {
            return Err(Error::InvalidInput("no positive levels selected".into()));
        }
        if let Some(&bad) = levels.iter().find(|&&k| k >= scale.len()) {
            return Err(Error::OutOfRange {
                what: "rating level",
                index: bad,
                size: scale.len(),
            });
        }
        Ok(levels)
    }
}

impl std::str::FromStr for LevelSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "highest" => Ok(Self::Highest),
            list => list
                .split(',')
                .map(|t| {
                    t.trim().parse::<usize>().map_err(|_| {
                        Error::InvalidInput(format!(
                            "positive levels must be `sum`, `highest` or level indices, got `{s}`"
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Self::Levels),
        }
    }
}

/// Hyper-parameters of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Matrix rank for PureSVD.
    pub rank: usize,
    /// Multilinear rank for CoFFee.
    pub mlrank: [usize; 3],
    /// kNN neighbourhood size; `None` keeps every user with nonzero similarity.
    pub neighbors: Option<usize>,
    pub positive_levels: LevelSelection,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            rank: 10,
            mlrank: [13, 10, 2],
            neighbors: None,
            positive_levels: LevelSelection::Sum,
            seed: 0,
        }
    }
}

/// One user's binary N×K preferences: `(item, level)` pairs, at most one per item.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceMatrix {
    n_items: usize,
    n_levels: usize,
    entries: Vec<(usize, usize)>,
}

impl PreferenceMatrix {
    pub fn new(n_items: usize, n_levels: usize, entries: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for &(item, level) in &entries {
            if item >= n_items {
                return Err(Error::OutOfRange {
                    what: "item",
                    index: item,
                    size: n_items,
                });
            }
            if level >= n_levels {
                return Err(Error::OutOfRange {
                    what: "rating level",
                    index: level,
                    size: n_levels,
                });
            }
            if !seen.insert(item) {
                return Err(Error::InvalidInput(format!("item {item} rated twice")));
            }
        }
        Ok(Self {
            n_items,
            n_levels,
            entries,
        })
    }

    /// A training user's row of the rating tensor.
    pub fn from_user(table: &RatingTable, user: usize) -> Self {
        Self {
            n_items: table.n_items(),
            n_levels: table.n_levels(),
            entries: table.user_ratings(user).iter().map(|r| (r.item, r.level)).collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_items, self.n_levels)
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Relevance score of every (item, rating level) pair for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadesMatrix(DMatrix<f64>);

impl ShadesMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn n_items(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_levels(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, item: usize, level: usize) -> f64 {
        self.0[(item, level)]
    }

    /// All K scores of one item, ascending rating level.
    pub fn item_shades(&self, item: usize) -> Vec<f64> {
        self.0.row(item).iter().copied().collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Top-n items, best first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub items: Vec<usize>,
    pub scores: Option<Vec<f64>>,
}

impl RankedList {
    pub fn unscored(items: Vec<usize>) -> Self {
        Self {
            items,
            scores: None,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Indices of the `n` largest scores, skipping `exclude`; ties go to the
/// smaller index.
pub fn top_n(scores: &[f64], n: usize, exclude: &HashSet<usize>) -> RankedList {
    if n == 0 {
        return RankedList {
            items: Vec::new(),
            scores: Some(Vec::new()),
        };
    }
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|j| !exclude.contains(j)).collect();
    let by_score = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if candidates.len() > n {
        candidates.select_nth_unstable_by(n - 1, by_score);
        candidates.truncate(n);
    }
    candidates.sort_unstable_by(by_score);
    let picked = candidates.iter().map(|&j| scores[j]).collect();
    RankedList {
        items: candidates,
        scores: Some(picked),
    }
}

/// Binary `user × item × level` tensor of a rating table.
pub fn rating_tensor(table: &RatingTable) -> Result<SparseTensor> {
    let entries = table
        .ratings()
        .iter()
        .map(|r| [r.user, r.item, r.level])
        .collect();
    SparseTensor::binary([table.n_users(), table.n_items(), table.n_levels()], entries)
}

/// Fit the tensor model to a table with multilinear rank `ranks`.
pub fn fit_coffee(table: &RatingTable, ranks: [usize; 3], opts: &HooiOptions) -> Result<TuckerModel> {
    if table.is_empty() {
        return Err(Error::ZeroTensor);
    }
    tensor::hooi(&rating_tensor(table)?, ranks, opts)
}

/// Higher-order folding-in, `V Vᵀ P W Wᵀ`.
pub fn fold_in_coffee(model: &TuckerModel, prefs: &PreferenceMatrix) -> Result<ShadesMatrix> {
    let (n, k) = (model.v.nrows(), model.w.nrows());
    if prefs.shape() != (n, k) {
        return Err(Error::DimensionMismatch(format!(
            "preferences are {:?} but the model expects ({n}, {k})",
            prefs.shape()
        )));
    }
    let (r2, r3) = (model.v.ncols(), model.w.ncols());
    // Vᵀ P W as a sum of rank-one terms, one per rated item
    let mut latent = DMatrix::<f64>::zeros(r2, r3);
    for &(item, level) in prefs.entries() {
        for c in 0..r3 {
            let wc = model.w[(level, c)];
            for b in 0..r2 {
                latent[(b, c)] += model.v[(item, b)] * wc;
            }
        }
    }
    Ok(ShadesMatrix(&model.v * latent * model.w.transpose()))
}

/// Rank items by the summed shades over `positive_levels`.
pub fn rank_items_shades(
    shades: &ShadesMatrix,
    positive_levels: &[usize],
    n: usize,
    exclude: &HashSet<usize>,
) -> Result<RankedList> {
    if positive_levels.is_empty() {
        return Err(Error::InvalidInput("no positive levels selected".into()));
    }
    if let Some(&bad) = positive_levels.iter().find(|&&k| k >= shades.n_levels()) {
        return Err(Error::OutOfRange {
            what: "rating level",
            index: bad,
            size: shades.n_levels(),
        });
    }
    let scores: Vec<f64> = (0..shades.n_items())
        .map(|j| positive_levels.iter().map(|&k| shades.get(j, k)).sum())
        .collect();
    Ok(top_n(&scores, n, exclude))
}

/// Most relevant rating level for an item; ties resolve to the higher level.
pub fn predict_rating(shades: &ShadesMatrix, item: usize) -> Result<usize> {
    if item >= shades.n_items() {
        return Err(Error::OutOfRange {
            what: "item",
            index: item,
            size: shades.n_items(),
        });
    }
    let mut best = 0;
    for k in 1..shades.n_levels() {
        if shades.get(item, k) >= shades.get(item, best) {
            best = k;
        }
    }
    Ok(best)
}

/// User × item matrix of raw rating values, zeros elsewhere.
pub fn rating_matrix(table: &RatingTable) -> Result<CsrMatrix> {
    let triplets = table
        .ratings()
        .iter()
        .map(|r| (r.user, r.item, table.value(r)))
        .collect();
    CsrMatrix::from_triplets(table.n_users(), table.n_items(), triplets)
}

pub fn fit_puresvd(table: &RatingTable, rank: usize) -> Result<TruncatedSvd> {
    linalg::truncated_svd(&rating_matrix(table)?, rank)
}

/// Matrix folding-in, `V Vᵀ p`, for a sparse vector of `(item, value)`.
pub fn fold_in_svd(v: &DMatrix<f64>, p: &[(usize, f64)]) -> Result<DVector<f64>> {
    let n = v.nrows();
    let mut latent = DVector::<f64>::zeros(v.ncols());
    for &(item, value) in p {
        if item >= n {
            return Err(Error::DimensionMismatch(format!(
                "item {item} outside a basis with {n} rows"
            )));
        }
        latent.axpy(value, &v.row(item).transpose(), 1.0);
    }
    Ok(v * latent)
}

/// Orthonormal item basis for folding-in with factors that are not
/// orthogonal to begin with (e.g. `Q = V Σ^½` or factors from other
/// matrix factorization tools).
pub fn orthonormal_item_basis(factors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(linalg::orthonormalize(factors)?.0)
}

/// User-based kNN with cosine similarity over zero-imputed rating vectors.
#[derive(Debug, Clone)]
pub struct UserKnn {
    /// user × item rating values
    ratings: CsrMatrix,
    /// item × user, for finding co-raters
    by_item: CsrMatrix,
    norms: Vec<f64>,
    neighbors: Option<usize>,
}

impl UserKnn {
    pub fn new(table: &RatingTable, neighbors: Option<usize>) -> Result<Self> {
        let ratings = rating_matrix(table)?;
        let by_item = ratings.transpose();
        let norms = (0..ratings.nrows())
            .map(|u| ratings.row(u).map(|(_, v)| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(Self {
            ratings,
            by_item,
            norms,
            neighbors,
        })
    }

    pub fn n_items(&self) -> usize {
        self.ratings.ncols()
    }

    /// Cosine similarity of `target` with every training user.
    fn similarities(&self, target: &[(usize, f64)]) -> Result<Vec<f64>> {
        let mut dots = vec![0.0; self.ratings.nrows()];
        let mut norm2 = 0.0;
        for &(item, value) in target {
            if item >= self.n_items() {
                return Err(Error::OutOfRange {
                    what: "item",
                    index: item,
                    size: self.n_items(),
                });
            }
            norm2 += value * value;
            for (user, r) in self.by_item.row(item) {
                dots[user] += value * r;
            }
        }
        let norm = norm2.sqrt();
        Ok(dots
            .iter()
            .zip(&self.norms)
            .map(|(&d, &n)| if d == 0.0 { 0.0 } else { d / (norm * n) })
            .collect())
    }

    fn neighbourhood(&self, target: &[(usize, f64)]) -> Result<Vec<(usize, f64)>> {
        if target.is_empty() {
            return Err(Error::InvalidInput("kNN target has no ratings".into()));
        }
        let mut hood: Vec<(usize, f64)> = self
            .similarities(target)?
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| s != 0.0)
            .collect();
        if let Some(k) = self.neighbors {
            hood.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
            hood.truncate(k);
            hood.sort_by_key(|&(u, _)| u);
        }
        if hood.is_empty() {
            return Err(Error::NoNeighbors);
        }
        Ok(hood)
    }

    /// Scores of every item: `Σ_k r_kj sim(i,k) / Σ_k |sim(i,k)|`.
    pub fn scores(&self, target: &[(usize, f64)]) -> Result<Vec<f64>> {
        let hood = self.neighbourhood(target)?;
        let normaliser: f64 = hood.iter().map(|(_, s)| s.abs()).sum();
        let mut scores = vec![0.0; self.n_items()];
        for &(user, sim) in &hood {
            for (item, r) in self.ratings.row(user) {
                scores[item] += r * sim;
            }
        }
        scores.iter_mut().for_each(|s| *s /= normaliser);
        Ok(scores)
    }

    pub fn predict(&self, target: &[(usize, f64)], item: usize) -> Result<f64> {
        if item >= self.n_items() {
            return Err(Error::OutOfRange {
                what: "item",
                index: item,
                size: self.n_items(),
            });
        }
        let hood = self.neighbourhood(target)?;
        let normaliser: f64 = hood.iter().map(|(_, s)| s.abs()).sum();
        let numerator: f64 = hood
            .iter()
            .map(|&(user, sim)| self.ratings.get(user, item) * sim)
            .sum();
        Ok(numerator / normaliser)
    }
}

/// kNN rating prediction for `item` using every training user as a
/// potential neighbour.
pub fn predict_knn(table: &RatingTable, target: &[(usize, f64)], item: usize) -> Result<f64> {
    UserKnn::new(table, None)?.predict(target, item)
}

/// Items ordered by number of ratings.
pub fn recommend_popularity(table: &RatingTable, n: usize, exclude: &HashSet<usize>) -> RankedList {
    popularity_from_counts(&table.item_counts(), n, exclude)
}

pub fn popularity_from_counts(counts: &[usize], n: usize, exclude: &HashSet<usize>) -> RankedList {
    let scores: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    top_n(&scores, n, exclude)
}

/// Uniform sample without replacement, deterministic per seed.
pub fn recommend_random(n_items: usize, n: usize, seed: u64, exclude: &HashSet<usize>) -> RankedList {
    let mut pool: Vec<usize> = (0..n_items).filter(|j| !exclude.contains(j)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(n);
    RankedList::unscored(pool)
}

/// One rating revealed by a test user, in training index space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub item: usize,
    pub level: usize,
    pub value: f64,
}

/// What a recommender gets to see about a user.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    /// External user id (used by imported lists).
    pub user_id: u64,
    pub observed: &'a [Observation],
    /// Per-user seed for stochastic models.
    pub seed: u64,
}

impl Query<'_> {
    pub fn observed_items(&self) -> HashSet<usize> {
        self.observed.iter().map(|o| o.item).collect()
    }

    fn values(&self) -> Vec<(usize, f64)> {
        self.observed.iter().map(|o| (o.item, o.value)).collect()
    }
}

/// Produces a top-n list for a user described only by observed ratings.
/// Observed items are never returned.
pub trait Recommender: Send + Sync {
    fn name(&self) -> &str;

    fn recommend(&self, query: &Query<'_>, n: usize) -> Result<RankedList>;
}

/// Predicts a rating level for a single item.
pub trait RatingPredictor: Send + Sync {
    fn predict_level(&self, observed: &[Observation], item: usize) -> Result<usize>;
}

/// Fitted tensor model ready for folding-in.
#[derive(Debug, Clone)]
pub struct Coffee {
    pub model: TuckerModel,
    pub positive_levels: Vec<usize>,
}

impl Coffee {
    pub fn fit(table: &RatingTable, config: &ModelConfig, opts: &HooiOptions) -> Result<Self> {
        let positive_levels = config.positive_levels.resolve(table.scale())?;
        let model = fit_coffee(table, config.mlrank, opts)?;
        Ok(Self {
            model,
            positive_levels,
        })
    }

    pub fn shades(&self, observed: &[Observation]) -> Result<ShadesMatrix> {
        let prefs = PreferenceMatrix::new(
            self.model.v.nrows(),
            self.model.w.nrows(),
            observed.iter().map(|o| (o.item, o.level)).collect(),
        )?;
        fold_in_coffee(&self.model, &prefs)
    }
}

impl Recommender for Coffee {
    fn name(&self) -> &str {
        "coffee"
    }

    fn recommend(&self, query: &Query<'_>, n: usize) -> Result<RankedList> {
        let shades = self.shades(query.observed)?;
        rank_items_shades(&shades, &self.positive_levels, n, &query.observed_items())
    }
}

impl RatingPredictor for Coffee {
    fn predict_level(&self, observed: &[Observation], item: usize) -> Result<usize> {
        predict_rating(&self.shades(observed)?, item)
    }
}

/// PureSVD with matrix folding-in.
#[derive(Debug, Clone)]
pub struct PureSvd {
    /// Orthonormal item factors, N×r.
    pub v: DMatrix<f64>,
    pub singular_values: Option<DVector<f64>>,
}

impl PureSvd {
    pub fn fit(table: &RatingTable, rank: usize) -> Result<Self> {
        let svd = fit_puresvd(table, rank)?;
        Ok(Self {
            v: svd.v,
            singular_values: Some(svd.s),
        })
    }

    /// Folding-in over arbitrary item factors, orthonormalized first.
    pub fn from_item_factors(factors: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            v: orthonormal_item_basis(factors)?,
            singular_values: None,
        })
    }
}

impl Recommender for PureSvd {
    fn name(&self) -> &str {
        "puresvd"
    }

    fn recommend(&self, query: &Query<'_>, n: usize) -> Result<RankedList> {
        let scores = fold_in_svd(&self.v, &query.values())?;
        Ok(top_n(scores.as_slice(), n, &query.observed_items()))
    }
}

impl Recommender for UserKnn {
    fn name(&self) -> &str {
        "knn"
    }

    fn recommend(&self, query: &Query<'_>, n: usize) -> Result<RankedList> {
        let scores = self.scores(&query.values())?;
        Ok(top_n(&scores, n, &query.observed_items()))
    }
}

#[derive(Debug, Clone)]
pub struct MostPopular {
    pub counts: Vec<usize>,
}

impl MostPopular {
    pub fn fit(table: &RatingTable) -> Self {
        Self {
            counts: table.item_counts(),
        }
    }
}

impl Recommender for MostPopular {
    fn name(&self) -> &str {
        "popular"
    }

    fn recommend(&self, query: &Query<'_>, n: usize) -> Result<RankedList> {
        Ok(popularity_from_counts(&self.counts, n, &query.observed_items()))
    }
}

#[derive(Debug, Clone)]
pub struct RandomGuess {
    pub n_items: usize,
    pub seed: u64,
}

impl Recommender for RandomGuess {
    fn name(&self) -> &str {
        "random"
    }

    fn recommend(&self, query: &Query<'_>, n: usize) -> Result<RankedList> {
        let seed = self.seed ^ query.seed.rotate_left(17);
        Ok(recommend_random(self.n_items, n, seed, &query.observed_items()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_table, RatingScale, RawRating};

    fn shades(rows: &[&[f64]]) -> ShadesMatrix {
        let k = rows[0].len();
        ShadesMatrix(DMatrix::from_row_iterator(
            rows.len(),
            k,
            rows.iter().flat_map(|r| r.iter().copied()),
        ))
    }

    fn set(items: &[usize]) -> HashSet<usize> {
        items.iter().copied().collect()
    }

    #[test]
    fn shades_ranking() {
        let s = shades(&[&[0.1, 0.9], &[0.2, 0.3]]);
        let top = rank_items_shades(&s, &[1], 2, &set(&[])).unwrap();
        assert_eq!(top.items, vec![0, 1]);
        let top = rank_items_shades(&s, &[0, 1], 2, &set(&[])).unwrap();
        assert_eq!(top.items, vec![0, 1]);
        let scores = top.scores.unwrap();
        assert!((scores[0] - 1.0).abs() < 1e-15 && (scores[1] - 0.5).abs() < 1e-15);
        let top = rank_items_shades(&s, &[1], 2, &set(&[0])).unwrap();
        assert_eq!(top.items, vec![1]);
        assert!(rank_items_shades(&s, &[1], 0, &set(&[])).unwrap().is_empty());
        assert!(rank_items_shades(&s, &[], 2, &set(&[])).is_err());
        assert!(rank_items_shades(&s, &[2], 2, &set(&[])).is_err());
    }

    #[test]
    fn ranking_ties_by_index() {
        let s = shades(&[&[0.5], &[0.7], &[0.5], &[0.7]]);
        let top = rank_items_shades(&s, &[0], 4, &set(&[])).unwrap();
        assert_eq!(top.items, vec![1, 3, 0, 2]);
    }

    #[test]
    fn rating_prediction() {
        let s = shades(&[&[0.1, 0.2, 0.05, 0.9, 0.3], &[0.4, 0.4, 0.4, 0.4, 0.4]]);
        assert_eq!(predict_rating(&s, 0).unwrap(), 3);
        assert_eq!(predict_rating(&s, 1).unwrap(), 4);
        assert!(predict_rating(&s, 2).is_err());
    }

    fn raw(user_id: u64, item_id: u64, rating: f64) -> RawRating {
        RawRating {
            user_id,
            item_id,
            rating,
            timestamp: 0,
        }
    }

    /// Scarface, Toy Story, Godfather rated by Alice, Bob and Carol.
    fn three_movies() -> RatingTable {
        let ratings = [
            raw(1, 1, 2.0),
            raw(1, 2, 5.0),
            raw(1, 3, 3.0),
            raw(2, 1, 4.0),
            raw(2, 3, 5.0),
            raw(3, 1, 2.0),
            raw(3, 2, 5.0),
        ];
        build_table(&ratings, 1, RatingScale::stars()).unwrap()
    }

    #[test]
    fn knn_three_movies() {
        let table = three_movies();
        let tom = [(0, 2.0)];
        let toy_story = predict_knn(&table, &tom, 1).unwrap();
        let godfather = predict_knn(&table, &tom, 2).unwrap();
        // cosines: Alice 2/√38, Bob 4/√41, Carol 2/√29
        let (a, b, c) = (2.0 / 38f64.sqrt(), 4.0 / 41f64.sqrt(), 2.0 / 29f64.sqrt());
        assert!((toy_story - 5.0 * (a + c) / (a + b + c)).abs() < 1e-12);
        assert!((godfather - (3.0 * a + 5.0 * b) / (a + b + c)).abs() < 1e-12);
        assert!((toy_story - 2.6).abs() < 0.05, "{toy_story}");
        assert!((godfather - 3.1).abs() < 0.05, "{godfather}");
        assert!(godfather > toy_story);
    }

    #[test]
    fn knn_identical_and_orthogonal_users() {
        let table = build_table(
            &[raw(1, 1, 4.0), raw(1, 2, 2.0), raw(2, 3, 5.0)],
            1,
            RatingScale::stars(),
        )
        .unwrap();
        let knn = UserKnn::new(&table, None).unwrap();
        // identical to user 1 and orthogonal to user 2
        let target = [(0, 4.0), (1, 2.0)];
        assert!((knn.predict(&target, 0).unwrap() - 4.0).abs() < 1e-12);
        assert!((knn.predict(&target, 1).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(knn.predict(&target, 2).unwrap(), 0.0);
        assert!(knn.predict(&target, 3).is_err());
    }

    #[test]
    fn knn_degenerate_targets() {
        let knn = UserKnn::new(&three_movies(), None).unwrap();
        assert!(matches!(knn.predict(&[], 0), Err(Error::InvalidInput(_))));
        assert!(matches!(knn.predict(&[(0, 0.0)], 1), Err(Error::NoNeighbors)));
        let nearest = UserKnn::new(&three_movies(), Some(1)).unwrap();
        // Bob is the closest to a Scarface-only user
        assert!((nearest.predict(&[(0, 2.0)], 2).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn popularity() {
        // counts A:3, B:5, C:1
        let counts = [3, 5, 1];
        assert_eq!(popularity_from_counts(&counts, 2, &set(&[])).items, vec![1, 0]);
        assert_eq!(popularity_from_counts(&[2, 2], 2, &set(&[])).items, vec![0, 1]);
        assert_eq!(popularity_from_counts(&counts, 2, &set(&[1])).items, vec![0, 2]);
    }

    #[test]
    fn random_guess() {
        let a = recommend_random(50, 10, 42, &set(&[]));
        assert_eq!(a, recommend_random(50, 10, 42, &set(&[])));
        let mut all = recommend_random(20, 20, 1, &set(&[])).items;
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert!(recommend_random(3, 5, 1, &set(&[0, 1, 2])).is_empty());
        assert_eq!(recommend_random(3, 5, 1, &set(&[1])).len(), 2);
    }

    #[test]
    fn coffee_single_triplet() {
        let table = build_table(&[raw(1, 1, 4.0)], 1, RatingScale::stars()).unwrap();
        let model = fit_coffee(&table, [1, 1, 1], &HooiOptions::default()).unwrap();
        let rec = model.reconstruct().unwrap();
        assert!((rec[[0, 0, 3]] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn coffee_empty_and_mismatched_prefs() {
        let table = three_movies();
        let model = fit_coffee(&table, [2, 2, 2], &HooiOptions::default()).unwrap();
        let empty = PreferenceMatrix::new(3, 5, vec![]).unwrap();
        let shades = fold_in_coffee(&model, &empty).unwrap();
        assert!(shades.as_matrix().iter().all(|&x| x == 0.0));
        let wrong = PreferenceMatrix::new(4, 5, vec![]).unwrap();
        assert!(matches!(fold_in_coffee(&model, &wrong), Err(Error::DimensionMismatch(_))));
        assert!(PreferenceMatrix::new(3, 5, vec![(0, 1), (0, 2)]).is_err());
        assert!(PreferenceMatrix::new(3, 5, vec![(3, 1)]).is_err());
    }

    #[test]
    fn puresvd_single_entry() {
        let table = build_table(&[raw(1, 1, 5.0)], 1, RatingScale::stars()).unwrap();
        let svd = fit_puresvd(&table, 1).unwrap();
        assert!((svd.s[0] - 5.0).abs() < 1e-12);
        assert!(fold_in_svd(&svd.v, &[(1, 1.0)]).is_err());
        assert_eq!(fold_in_svd(&svd.v, &[]).unwrap()[0], 0.0);
    }

    #[test]
    fn level_selection_parsing() {
        let scale = RatingScale::stars();
        assert_eq!("sum".parse::<LevelSelection>().unwrap().resolve(&scale).unwrap(), vec![3, 4]);
        assert_eq!("highest".parse::<LevelSelection>().unwrap().resolve(&scale).unwrap(), vec![4]);
        assert_eq!("2,4".parse::<LevelSelection>().unwrap().resolve(&scale).unwrap(), vec![2, 4]);
        assert!("7".parse::<LevelSelection>().unwrap().resolve(&scale).is_err());
        assert!("x".parse::<LevelSelection>().is_err());
    }
}
