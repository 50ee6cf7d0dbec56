//! Cross-validation by users, cold-start scenarios and the two experiments
//! (top-n ranking and single-rating prediction).

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{IdMap, RatingTable};
use crate::metrics::{self, Holdout, Metric, MetricCurves, MetricValues};
use crate::models::{
    Coffee, ModelConfig, ModelKind, MostPopular, Observation, PureSvd, Query, RandomGuess,
    RankedList, RatingPredictor, Recommender, UserKnn,
};
use crate::tensor::HooiOptions;

/// What a test user reveals before recommendations are made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// The `k` lowest-rated remaining items, all of them negative.
    Negative(usize),
    /// `k` remaining items drawn uniformly.
    Random(usize),
    /// Every remaining item.
    All,
}

impl Scenario {
    pub fn standard() -> Vec<Scenario> {
        vec![
            Scenario::Negative(1),
            Scenario::Negative(3),
            Scenario::Random(1),
            Scenario::Random(3),
            Scenario::Random(5),
            Scenario::All,
        ]
    }

    fn min_observed(self) -> usize {
        match self {
            Scenario::Negative(k) | Scenario::Random(k) => k,
            Scenario::All => 1,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Negative(k) => write!(f, "negative_{k}"),
            Scenario::Random(k) => write!(f, "random_{k}"),
            Scenario::All => f.write_str("all"),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Scenario::All);
        }
        let bad = || Error::InvalidInput(format!("unknown scenario `{s}`"));
        let (kind, k) = s.split_once('_').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match kind {
            "negative" => Ok(Scenario::Negative(k)),
            "random" => Ok(Scenario::Random(k)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: usize,
    pub holdout_size: usize,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            folds: 5,
            holdout_size: 10,
            seed: 0,
        }
    }
}

/// One rating of a test user, keyed by external item id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserRating {
    pub item_id: u64,
    pub level: usize,
    pub value: f64,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestUser {
    pub user_id: u64,
    pub ratings: Vec<UserRating>,
}

#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: RatingTable,
    pub test: Vec<TestUser>,
}

/// Observation and holdout of one test user, in training index space.
#[derive(Debug, Clone, PartialEq)]
pub struct TestUserCase {
    pub user_id: u64,
    pub observation: Vec<Observation>,
    /// `(item, rating value)`
    pub holdout: Vec<(usize, f64)>,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-user seed, independent of scenario and model.
pub fn user_seed(seed: u64, user_id: u64) -> u64 {
    mix(seed ^ mix(user_id))
}

/// Partition of user indices into `plan.folds` groups after a seeded shuffle.
pub fn fold_assignment(n_users: usize, plan: &SplitPlan) -> Result<Vec<Vec<usize>>> {
    if plan.folds < 2 {
        return Err(Error::InvalidInput("need at least two folds".into()));
    }
    if n_users < plan.folds {
        return Err(Error::InvalidInput(format!(
            "{n_users} users cannot fill {} folds",
            plan.folds
        )));
    }
    let mut order: Vec<usize> = (0..n_users).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed));
    let mut out = Vec::with_capacity(plan.folds);
    for f in 0..plan.folds {
        let (lo, hi) = (f * n_users / plan.folds, (f + 1) * n_users / plan.folds);
        let mut chunk = order[lo..hi].to_vec();
        chunk.sort_unstable();
        out.push(chunk);
    }
    Ok(out)
}

/// Training table without the fold's test users, plus those users' ratings.
pub fn split_users(table: &RatingTable, plan: &SplitPlan, fold: usize) -> Result<FoldSplit> {
    if fold >= plan.folds {
        return Err(Error::OutOfRange {
            what: "fold",
            index: fold,
            size: plan.folds,
        });
    }
    let assignment = fold_assignment(table.n_users(), plan)?;
    let mut is_test = vec![false; table.n_users()];
    for &u in &assignment[fold] {
        is_test[u] = true;
    }
    let train = table.select_users(|u| !is_test[u])?;
    let test = assignment[fold]
        .iter()
        .map(|&u| TestUser {
            user_id: table.users().id_of(u),
            ratings: table
                .user_ratings(u)
                .iter()
                .map(|r| UserRating {
                    item_id: table.items().id_of(r.item),
                    level: r.level,
                    value: table.value(r),
                    timestamp: r.timestamp,
                })
                .collect(),
        })
        .collect();
    Ok(FoldSplit { fold, train, test })
}

struct Known {
    item: usize,
    level: usize,
    value: f64,
    timestamp: i64,
}

fn known_ratings(user: &TestUser, items: &IdMap) -> Vec<Known> {
    user.ratings
        .iter()
        .filter_map(|r| {
            items.index_of(r.item_id).map(|item| Known {
                item,
                level: r.level,
                value: r.value,
                timestamp: r.timestamp,
            })
        })
        .collect()
}

/// Build a user's observation/holdout pair, or `None` when the user has too
/// few usable ratings for the scenario.
///
/// Items unknown to the training table are dropped first. The holdout is a
/// uniform sample; `negative_k` additionally needs its `k` lowest remaining
/// ratings to be at or below the threshold.
pub fn make_case(
    user: &TestUser,
    scenario: Scenario,
    holdout_size: usize,
    train_items: &IdMap,
    threshold: f64,
    seed: u64,
) -> Option<TestUserCase> {
    let mut known = known_ratings(user, train_items);
    if known.len() < holdout_size + scenario.min_observed() {
        return None;
    }
    // sort by item first so the sample only depends on the seed
    known.sort_by_key(|k| k.item);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    known.shuffle(&mut rng);
    let rest = known.split_off(holdout_size);
    let holdout = known.iter().map(|k| (k.item, k.value)).collect();

    let observed: Vec<&Known> = match scenario {
        Scenario::All => rest.iter().collect(),
        Scenario::Random(k) => {
            let mut rest: Vec<&Known> = rest.iter().collect();
            rest.sort_by_key(|k| k.item);
            rest.shuffle(&mut rng);
            rest.truncate(k);
            rest
        }
        Scenario::Negative(k) => {
            let mut rest: Vec<&Known> = rest.iter().collect();
            rest.sort_by(|a, b| {
                a.value
                    .total_cmp(&b.value)
                    .then(a.timestamp.cmp(&b.timestamp))
                    .then(a.item.cmp(&b.item))
            });
            rest.truncate(k);
            if rest.iter().any(|r| r.value > threshold) {
                return None;
            }
            rest
        }
    };
    let mut observation: Vec<Observation> = observed
        .iter()
        .map(|k| Observation {
            item: k.item,
            level: k.level,
            value: k.value,
        })
        .collect();
    observation.sort_by_key(|o| o.item);
    Some(TestUserCase {
        user_id: user.user_id,
        observation,
        holdout,
    })
}

/// Cases for every test user; the second value counts skipped users.
pub fn make_cases(
    split: &FoldSplit,
    scenario: Scenario,
    plan: &SplitPlan,
) -> (Vec<TestUserCase>, usize) {
    let threshold = split.train.scale().threshold();
    let mut skipped = 0;
    let mut cases = Vec::with_capacity(split.test.len());
    for user in &split.test {
        let seed = user_seed(plan.seed, user.user_id);
        match make_case(user, scenario, plan.holdout_size, split.train.items(), threshold, seed) {
            Some(case) => cases.push(case),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::info!("fold {}: {skipped} users skipped for {scenario}", split.fold);
    }
    (cases, skipped)
}

/// Per-user curves of one model on one set of cases, plus the number of
/// users the model failed on.
pub fn evaluate_cases(
    model: &dyn Recommender,
    cases: &[TestUserCase],
    threshold: f64,
    max_n: usize,
    seed: u64,
) -> Result<(Vec<Vec<MetricValues>>, usize)> {
    let results: Vec<Result<Vec<MetricValues>>> = cases
        .par_iter()
        .map(|case| {
            let query = Query {
                user_id: case.user_id,
                observed: &case.observation,
                seed: user_seed(seed, case.user_id),
            };
            let list = model.recommend(&query, max_n)?;
            let holdout = Holdout::new(case.holdout.iter().copied(), threshold)?;
            Ok(metrics::evaluate_user(&list.items, &holdout, max_n))
        })
        .collect();
    let mut users = Vec::with_capacity(results.len());
    let mut failures = 0;
    for (case, r) in cases.iter().zip(results) {
        match r {
            Ok(curve) => users.push(curve),
            Err(Error::NoNeighbors | Error::InvalidInput(_)) => {
                log::debug!("{} failed on user {}", model.name(), case.user_id);
                failures += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((users, failures))
}

/// Curves of one model in one scenario across folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportEntry {
    pub model: String,
    pub scenario: String,
    pub curves: MetricCurves,
    /// users without enough ratings for the scenario, per fold
    pub skipped: Vec<usize>,
    /// users the model could not score, per fold
    pub failures: Vec<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<ReportEntry>,
}

pub const REPORT_HEADER: &str = "model\tscenario\tfold\tn\tprecision\trecall\tfpr\tndcg\tndcl";

impl EvalReport {
    pub fn entry(&self, model: &str, scenario: Scenario) -> Option<&ReportEntry> {
        let scenario = scenario.to_string();
        self.entries
            .iter()
            .find(|e| e.model == model && e.scenario == scenario)
    }

    /// Tab-separated rows: one per fold and cutoff, then `mean` and `std`
    /// rows across folds.
    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{REPORT_HEADER}")?;
        for e in &self.entries {
            let c = &e.curves;
            let mut row = |fold: &str, n: usize, values: [f64; 5]| -> std::io::Result<()> {
                write!(out, "{}\t{}\t{fold}\t{n}", e.model, e.scenario)?;
                for v in values {
                    write!(out, "\t{v:.6}")?;
                }
                writeln!(out)
            };
            for (f, fm) in c.fold_means.iter().enumerate() {
                for n in 1..=c.max_n {
                    row(&f.to_string(), n, Metric::ALL.map(|m| fm[m as usize][n - 1]))?;
                }
            }
            for n in 1..=c.max_n {
                row("mean", n, Metric::ALL.map(|m| c.mean_at(m, n)))?;
            }
            for n in 1..=c.max_n {
                row("std", n, Metric::ALL.map(|m| c.std_at(m, n)))?;
            }
        }
        Ok(())
    }

    pub fn write_json(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Fit a ranking model on a training table.
pub fn fit_recommender(
    train: &RatingTable,
    config: &ModelConfig,
    hooi: &HooiOptions,
) -> Result<Box<dyn Recommender>> {
    Ok(match config.kind {
        ModelKind::Coffee => Box::new(Coffee::fit(train, config, hooi)?),
        ModelKind::PureSvd => Box::new(PureSvd::fit(train, config.rank)?),
        ModelKind::Knn => Box::new(UserKnn::new(train, config.neighbors)?),
        ModelKind::Popular => Box::new(MostPopular::fit(train)),
        ModelKind::Random => Box::new(RandomGuess {
            n_items: train.n_items(),
            seed: config.seed,
        }),
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub plan: SplitPlan,
    pub scenarios: Vec<Scenario>,
    pub models: Vec<ModelConfig>,
    pub max_n: usize,
    pub hooi: HooiOptions,
    /// Externally produced lists scored on the same cases, keyed by name.
    pub imported: Vec<(String, HashMap<u64, Vec<u64>>)>,
}

/// Full cross-validated top-n experiment.
///
/// Every model of a fold is fitted on that fold's training users only and
/// sees the same cases.
pub fn run_experiment(table: &RatingTable, config: &ExperimentConfig) -> Result<EvalReport> {
    let plan = &config.plan;
    let names: Vec<String> = config
        .models
        .iter()
        .map(|m| m.kind.to_string())
        .chain(config.imported.iter().map(|(n, _)| n.clone()))
        .collect();
    let n_pairs = names.len() * config.scenarios.len();
    let mut folds_of: Vec<Vec<Vec<Vec<MetricValues>>>> = vec![Vec::new(); n_pairs];
    let mut skipped = vec![Vec::new(); n_pairs];
    let mut failures = vec![Vec::new(); n_pairs];
    for fold in 0..plan.folds {
        let split = split_users(table, plan, fold)?;
        let threshold = split.train.scale().threshold();
        let cases: Vec<(Vec<TestUserCase>, usize)> = config
            .scenarios
            .iter()
            .map(|&s| make_cases(&split, s, plan))
            .collect();
        for mi in 0..names.len() {
            let model: Box<dyn Recommender> = match config.models.get(mi) {
                Some(mc) => {
                    log::info!("fold {fold}: fitting {}", mc.kind);
                    fit_recommender(&split.train, mc, &config.hooi)?
                }
                None => {
                    let (name, lists) = &config.imported[mi - config.models.len()];
                    Box::new(ImportedLists::new(name.clone(), lists, split.train.items()))
                }
            };
            for (si, (cs, skip)) in cases.iter().enumerate() {
                let idx = mi * config.scenarios.len() + si;
                let (users, failed) = evaluate_cases(model.as_ref(), cs, threshold, config.max_n, plan.seed)?;
                folds_of[idx].push(users);
                skipped[idx].push(*skip);
                failures[idx].push(failed);
            }
        }
    }
    let mut entries = Vec::with_capacity(n_pairs);
    for (mi, name) in names.iter().enumerate() {
        for (si, s) in config.scenarios.iter().enumerate() {
            let idx = mi * config.scenarios.len() + si;
            entries.push(ReportEntry {
                model: name.clone(),
                scenario: s.to_string(),
                curves: metrics::aggregate_curves(&folds_of[idx])?,
                skipped: skipped[idx].clone(),
                failures: failures[idx].clone(),
            });
        }
    }
    Ok(EvalReport { entries })
}

/// Outcome of predicting each test user's single top-rated item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingReport {
    pub users: usize,
    pub skipped: usize,
    /// share of exactly predicted ratings
    pub exact: f64,
    /// share of predictions on the same side of the threshold
    pub positivity: f64,
    pub rmse: f64,
}

/// Hold out each user's top-rated item (ties: latest timestamp) and
/// predict its rating from the rest.
pub fn run_rating_experiment(
    train: &RatingTable,
    test: &[TestUser],
    model: &dyn RatingPredictor,
) -> Result<RatingReport> {
    let scale = train.scale();
    let cases: Vec<(Vec<Observation>, usize, f64)> = test
        .iter()
        .filter_map(|user| {
            let known = known_ratings(user, train.items());
            if known.len() < 2 {
                return None;
            }
            let top = known
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| {
                    a.value
                        .total_cmp(&b.value)
                        .then(a.timestamp.cmp(&b.timestamp))
                        .then(b.item.cmp(&a.item))
                })
                .map(|(i, _)| i)
                .expect("nonempty");
            let observed = known
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != top)
                .map(|(_, k)| Observation {
                    item: k.item,
                    level: k.level,
                    value: k.value,
                })
                .collect();
            Some((observed, known[top].item, known[top].value))
        })
        .collect();
    let skipped = test.len() - cases.len();
    if cases.is_empty() {
        return Err(Error::InvalidInput("no test user has two known ratings".into()));
    }
    let predicted: Vec<f64> = cases
        .par_iter()
        .map(|(obs, item, _)| model.predict_level(obs, *item).map(|l| scale.value(l)))
        .collect::<Result<_>>()?;
    let actual: Vec<f64> = cases.iter().map(|c| c.2).collect();
    let n = cases.len() as f64;
    let exact = predicted
        .iter()
        .zip(&actual)
        .filter(|(p, a)| scale.level(**p).ok() == scale.level(**a).ok())
        .count() as f64
        / n;
    let positivity = predicted
        .iter()
        .zip(&actual)
        .filter(|(p, a)| scale.is_positive(**p) == scale.is_positive(**a))
        .count() as f64
        / n;
    Ok(RatingReport {
        users: cases.len(),
        skipped,
        exact,
        positivity,
        rmse: metrics::rmse(&predicted, &actual)?,
    })
}

/// Per-fold rating experiment with CoFFee and the fold averages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingCvReport {
    pub folds: Vec<RatingReport>,
    pub exact: f64,
    pub positivity: f64,
    pub rmse: f64,
}

pub fn run_rating_cv(
    table: &RatingTable,
    plan: &SplitPlan,
    config: &ModelConfig,
    hooi: &HooiOptions,
) -> Result<RatingCvReport> {
    let mut folds = Vec::with_capacity(plan.folds);
    for fold in 0..plan.folds {
        let split = split_users(table, plan, fold)?;
        let model = Coffee::fit(&split.train, config, hooi)?;
        let report = run_rating_experiment(&split.train, &split.test, &model)?;
        log::info!(
            "fold {fold}: exact {:.3} positivity {:.3} rmse {:.3}",
            report.exact,
            report.positivity,
            report.rmse
        );
        folds.push(report);
    }
    let avg = |f: fn(&RatingReport) -> f64| folds.iter().map(f).sum::<f64>() / folds.len() as f64;
    Ok(RatingCvReport {
        exact: avg(|r| r.exact),
        positivity: avg(|r| r.positivity),
        rmse: avg(|r| r.rmse),
        folds,
    })
}

/// Ranked lists produced elsewhere, one line per user:
/// `user_id<TAB>item_id,item_id,...`.
pub fn parse_ranked_lists(reader: impl BufRead) -> Result<HashMap<u64, Vec<u64>>> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: "<ranked lists>".into(),
            line: i + 1,
            message,
        };
        let (user, items) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `user<TAB>items`".into()))?;
        let user: u64 = user.trim().parse().map_err(|_| err(format!("bad user id `{user}`")))?;
        let items = items
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse::<u64>().map_err(|_| err(format!("bad item id `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if out.insert(user, items).is_some() {
            return Err(err(format!("user {user} listed twice")));
        }
    }
    Ok(out)
}

/// Serves imported lists as if they came from a model; items unknown to the
/// training table or already observed are dropped.
#[derive(Debug, Clone)]
pub struct ImportedLists {
    pub name: String,
    lists: HashMap<u64, Vec<usize>>,
}

impl ImportedLists {
    pub fn new(name: impl Into<String>, lists: &HashMap<u64, Vec<u64>>, items: &IdMap) -> Self {
        let lists = lists
            .iter()
            .map(|(&u, l)| (u, l.iter().filter_map(|&id| items.index_of(id)).collect()))
            .collect();
        Self {
            name: name.into(),
            lists,
        }
    }
}

impl Recommender for ImportedLists {
    fn name(&self) -> &str {
        &self.name
    }

    fn recommend(&self, query: &Query<'_>, n: usize) -> Result<RankedList> {
        let list = self
            .lists
            .get(&query.user_id)
            .ok_or_else(|| Error::InvalidInput(format!("no list for user {}", query.user_id)))?;
        let observed = query.observed_items();
        let mut seen = std::collections::HashSet::new();
        let items = list
            .iter()
            .copied()
            .filter(|j| !observed.contains(j) && seen.insert(*j))
            .take(n)
            .collect();
        Ok(RankedList::unscored(items))
    }
}
