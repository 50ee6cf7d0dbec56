//! Movielens-style rating files, user filtering and dense re-indexing.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equality slack when matching a parsed decimal against a scale value.
const SCALE_EPS: f64 = 1e-9;

/// One line of a ratings file, with the dataset's own identifiers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRating {
    pub user_id: u64,
    pub item_id: u64,
    pub rating: f64,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    /// `UserID::MovieID::Rating::Timestamp`
    Dat,
    /// Header `userId,movieId,rating,timestamp`
    Csv,
}

impl FileFormat {
    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "dat" => Some(Self::Dat),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dat" => Ok(Self::Dat),
            "csv" => Ok(Self::Csv),
            other => Err(Error::InvalidInput(format!(
                "unknown format `{other}` (expected dat or csv)"
            ))),
        }
    }
}

/// Ordered set of admissible rating values plus the negativity threshold.
///
/// Values strictly above the threshold count as positive feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    values: Vec<f64>,
    negativity_threshold: f64,
}

impl RatingScale {
    pub fn new(values: Vec<f64>, negativity_threshold: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidScale("no rating values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScale("rating values must be finite".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidScale(format!(
                "values must be strictly increasing, got {values:?}"
            )));
        }
        let (lo, hi) = (values[0], values[values.len() - 1]);
        if !(lo..=hi).contains(&negativity_threshold) {
            return Err(Error::InvalidScale(format!(
                "threshold {negativity_threshold} outside [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            values,
            negativity_threshold,
        })
    }

    /// Whole stars 1..=5, threshold 3 (Movielens 1M).
    pub fn stars() -> Self {
        Self::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 3.0).expect("valid preset")
    }

    /// Half stars 0.5..=5, threshold 3.5 (Movielens 10M and later).
    pub fn half_stars() -> Self {
        let values = (1..=10).map(|i| i as f64 * 0.5).collect();
        Self::new(values, 3.5).expect("valid preset")
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        Self::new(self.values.clone(), threshold)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn threshold(&self) -> f64 {
        self.negativity_threshold
    }

    /// Number of rating levels (size of the third tensor mode).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn level(&self, value: f64) -> Result<usize> {
        self.values
            .iter()
            .position(|&v| (v - value).abs() <= SCALE_EPS)
            .ok_or_else(|| Error::RatingOutOfScale {
                value,
                scale: self.values.clone(),
            })
    }

    pub fn value(&self, level: usize) -> f64 {
        self.values[level]
    }

    pub fn is_positive(&self, value: f64) -> bool {
        value > self.negativity_threshold
    }

    /// Levels whose value lies strictly above the threshold.
    pub fn positive_levels(&self) -> Vec<usize> {
        (0..self.values.len())
            .filter(|&k| self.is_positive(self.values[k]))
            .collect()
    }
}

/// Zero-based position of `value` on `scale`.
pub fn rating_level(scale: &RatingScale, value: f64) -> Result<usize> {
    scale.level(value)
}

/// Bijection between external identifiers and dense indices `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl IdMap {
    pub fn from_ids(ids: Vec<u64>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate id {id} in id map")));
            }
        }
        Ok(Self { ids, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn id_of(&self, index: usize) -> u64 {
        self.ids[index]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }
}

impl Serialize for IdMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.ids.serialize(s)
    }
}

impl<'de> Deserialize<'de> for IdMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ids = Vec::<u64>::deserialize(d)?;
        IdMap::from_ids(ids).map_err(serde::de::Error::custom)
    }
}

/// A single (user, item, level) interaction in dense index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub level: usize,
    pub timestamp: i64,
}

/// Interactions with dense user/item indices.
///
/// Ratings are stored sorted by `(user, item)`, with at most one entry per pair.
#[derive(Debug, Clone)]
pub struct RatingTable {
    ratings: Vec<Rating>,
    user_offsets: Vec<usize>,
    users: IdMap,
    items: IdMap,
    scale: RatingScale,
}

/// Interaction keyed by external ids, used when (re)building tables.
#[derive(Debug, Clone, Copy)]
pub struct ExternalRating {
    pub user_id: u64,
    pub item_id: u64,
    pub level: usize,
    pub timestamp: i64,
}

impl RatingTable {
    /// Index a set of unique (user, item) interactions. Users and items are
    /// numbered in ascending external-id order.
    pub fn from_external(entries: &[ExternalRating], scale: RatingScale) -> Result<Self> {
        let mut user_ids: Vec<u64> = entries.iter().map(|e| e.user_id).collect();
        user_ids.sort_unstable();
        user_ids.dedup();
        let mut item_ids: Vec<u64> = entries.iter().map(|e| e.item_id).collect();
        item_ids.sort_unstable();
        item_ids.dedup();
        let users = IdMap::from_ids(user_ids)?;
        let items = IdMap::from_ids(item_ids)?;

        let mut ratings: Vec<Rating> = entries
            .iter()
            .map(|e| {
                if e.level >= scale.len() {
                    return Err(Error::OutOfRange {
                        what: "rating level",
                        index: e.level,
                        size: scale.len(),
                    });
                }
                Ok(Rating {
                    user: users.index_of(e.user_id).expect("user indexed"),
                    item: items.index_of(e.item_id).expect("item indexed"),
                    level: e.level,
                    timestamp: e.timestamp,
                })
            })
            .collect::<Result<_>>()?;
        ratings.sort_unstable_by_key(|r| (r.user, r.item));
        if let Some(w) = ratings
            .windows(2)
            .find(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item))
        {
            return Err(Error::InvalidInput(format!(
                "duplicate rating for user {} item {}",
                users.id_of(w[0].user),
                items.id_of(w[0].item)
            )));
        }

        let mut user_offsets = vec![0; users.len() + 1];
        for r in &ratings {
            user_offsets[r.user + 1] += 1;
        }
        for u in 0..users.len() {
            user_offsets[u + 1] += user_offsets[u];
        }

        Ok(Self {
            ratings,
            user_offsets,
            users,
            items,
            scale,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_levels(&self) -> usize {
        self.scale.len()
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn scale(&self) -> &RatingScale {
        &self.scale
    }

    pub fn users(&self) -> &IdMap {
        &self.users
    }

    pub fn items(&self) -> &IdMap {
        &self.items
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    /// Ratings of one user, sorted by item index.
    pub fn user_ratings(&self, user: usize) -> &[Rating] {
        &self.ratings[self.user_offsets[user]..self.user_offsets[user + 1]]
    }

    pub fn value(&self, rating: &Rating) -> f64 {
        self.scale.value(rating.level)
    }

    /// Number of ratings per item, regardless of value.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_items()];
        for r in &self.ratings {
            counts[r.item] += 1;
        }
        counts
    }

    /// Table restricted to the users accepted by `keep`, re-indexed densely.
    /// Items that lose all their ratings disappear from the item map.
    pub fn select_users(&self, mut keep: impl FnMut(usize) -> bool) -> Result<Self> {
        let entries: Vec<ExternalRating> = (0..self.n_users())
            .filter(|&u| keep(u))
            .flat_map(|u| self.user_ratings(u))
            .map(|r| self.to_external(r))
            .collect();
        if entries.is_empty() {
            return Err(Error::InvalidInput("user selection is empty".into()));
        }
        Self::from_external(&entries, self.scale.clone())
    }

    pub fn to_external(&self, r: &Rating) -> ExternalRating {
        ExternalRating {
            user_id: self.users.id_of(r.user),
            item_id: self.items.id_of(r.item),
            level: r.level,
            timestamp: r.timestamp,
        }
    }
}

/// Drop users with fewer than `min_ratings` interactions and index the rest.
///
/// Duplicate (user, item) pairs keep the rating with the latest timestamp
/// (the later line wins on equal timestamps).
pub fn build_table(
    ratings: &[RawRating],
    min_ratings: usize,
    scale: RatingScale,
) -> Result<RatingTable> {
    if min_ratings == 0 {
        return Err(Error::InvalidInput("min_ratings must be at least 1".into()));
    }

    let mut latest: HashMap<(u64, u64), (i64, usize)> = HashMap::with_capacity(ratings.len());
    for r in ratings {
        let level = scale.level(r.rating)?;
        latest
            .entry((r.user_id, r.item_id))
            .and_modify(|slot| {
                if r.timestamp >= slot.0 {
                    *slot = (r.timestamp, level);
                }
            })
            .or_insert((r.timestamp, level));
    }

    let mut degree: HashMap<u64, usize> = HashMap::new();
    for &(user, _) in latest.keys() {
        *degree.entry(user).or_default() += 1;
    }

    let entries: Vec<ExternalRating> = latest
        .into_iter()
        .filter(|((user, _), _)| degree[user] >= min_ratings)
        .map(|((user_id, item_id), (timestamp, level))| ExternalRating {
            user_id,
            item_id,
            level,
            timestamp,
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyTable { min_ratings });
    }
    RatingTable::from_external(&entries, scale)
}

/// Read a ratings file from disk.
pub fn parse_movielens(path: &Path, format: FileFormat) -> Result<Vec<RawRating>> {
    let file = File::open(path)?;
    parse_movielens_reader(BufReader::new(file), format, path)
}

/// Parse ratings from any reader; `origin` is only used in error messages.
pub fn parse_movielens_reader<R: Read>(
    reader: R,
    format: FileFormat,
    origin: &Path,
) -> Result<Vec<RawRating>> {
    match format {
        FileFormat::Dat => parse_dat(BufReader::new(reader), origin),
        FileFormat::Csv => parse_csv(reader, origin),
    }
}

fn parse_dat<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<RawRating>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 4 {
            return Err(parse_error(
                origin,
                line_no,
                format!("expected 4 `::`-separated fields, found {}", fields.len()),
            ));
        }
        out.push(raw_from_fields(&fields, origin, line_no)?);
    }
    Ok(out)
}

fn parse_csv<R: Read>(reader: R, origin: &Path) -> Result<Vec<RawRating>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_error(origin, 1, e.to_string()))?
        .clone();
    // An empty file has no header at all.
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let expected = ["userId", "movieId", "rating", "timestamp"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(parse_error(
            origin,
            1,
            format!("expected header `userId,movieId,rating,timestamp`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(origin, line, e.to_string())
        })?;
        let line_no = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 4 {
            return Err(parse_error(
                origin,
                line_no,
                format!("expected 4 fields, found {}", record.len()),
            ));
        }
        let fields: Vec<&str> = record.iter().collect();
        out.push(raw_from_fields(&fields, origin, line_no)?);
    }
    Ok(out)
}

fn raw_from_fields(fields: &[&str], origin: &Path, line: usize) -> Result<RawRating> {
    fn field<T: FromStr>(s: &str, name: &str, origin: &Path, line: usize) -> Result<T> {
        s.trim()
            .parse()
            .map_err(|_| parse_error(origin, line, format!("invalid {name} `{s}`")))
    }
    let user_id: u64 = field(fields[0], "user id", origin, line)?;
    let item_id: u64 = field(fields[1], "item id", origin, line)?;
    let rating: f64 = field(fields[2], "rating", origin, line)?;
    let timestamp: i64 = field(fields[3], "timestamp", origin, line)?;
    if user_id == 0 || item_id == 0 {
        return Err(parse_error(origin, line, "ids must be >= 1".into()));
    }
    if !rating.is_finite() || rating <= 0.0 {
        return Err(parse_error(origin, line, format!("invalid rating `{}`", fields[2])));
    }
    Ok(RawRating {
        user_id,
        item_id,
        rating,
        timestamp,
    })
}

fn parse_error(origin: &Path, line: usize, message: String) -> Error {
    Error::Parse {
        path: PathBuf::from(origin),
        line,
        message,
    }
}

/// Read an `id -> title` sidecar (`movies.dat` or `movies.csv`).
///
/// `movies.dat` from Movielens 1M is Latin-1, so invalid UTF-8 is decoded
/// lossily instead of failing.
pub fn read_titles(path: &Path, format: FileFormat) -> Result<Vec<(u64, String)>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let text = String::from_utf8_lossy(&bytes);
    match format {
        FileFormat::Dat => {
            let mut out = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let mut parts = line.splitn(3, "::");
                let id = parts.next().unwrap_or_default();
                let title = parts
                    .next()
                    .ok_or_else(|| parse_error(path, idx + 1, "missing title".into()))?;
                let id = id
                    .trim()
                    .parse()
                    .map_err(|_| parse_error(path, idx + 1, format!("invalid movie id `{id}`")))?;
                out.push((id, title.to_string()));
            }
            Ok(out)
        }
        FileFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(true)
                .from_reader(text.as_bytes());
            let mut out = Vec::new();
            for record in rdr.records() {
                let record = record.map_err(|e| {
                    let line = e.position().map_or(0, |p| p.line() as usize);
                    parse_error(path, line, e.to_string())
                })?;
                let line = record.position().map_or(0, |p| p.line() as usize);
                let (Some(id), Some(title)) = (record.get(0), record.get(1)) else {
                    return Err(parse_error(path, line, "expected movieId,title".into()));
                };
                let id = id
                    .trim()
                    .parse()
                    .map_err(|_| parse_error(path, line, format!("invalid movie id `{id}`")))?;
                out.push((id, title.to_string()));
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, format: FileFormat) -> Result<Vec<RawRating>> {
        parse_movielens_reader(text.as_bytes(), format, Path::new("mem"))
    }

    fn raw(user_id: u64, item_id: u64, rating: f64, timestamp: i64) -> RawRating {
        RawRating {
            user_id,
            item_id,
            rating,
            timestamp,
        }
    }

    #[test]
    fn dat_line() {
        let out = parse("1::1193::5::978300760\n", FileFormat::Dat).unwrap();
        assert_eq!(out, vec![raw(1, 1193, 5.0, 978300760)]);
    }

    #[test]
    fn empty_files() {
        assert!(parse("", FileFormat::Dat).unwrap().is_empty());
        assert!(parse("", FileFormat::Csv).unwrap().is_empty());
        assert!(parse("userId,movieId,rating,timestamp\n", FileFormat::Csv)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse("1::X::5::0\n", FileFormat::Dat) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse("1::2::5::0\n\n3::4::5\n", FileFormat::Dat) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_ratings() {
        let text = "userId,movieId,rating,timestamp\n1,31,2.5,1260759144\n1,1029,3.0,1260759179\n";
        let out = parse(text, FileFormat::Csv).unwrap();
        assert_eq!(
            out,
            vec![raw(1, 31, 2.5, 1260759144), raw(1, 1029, 3.0, 1260759179)]
        );
        match parse("userId,movieId,rating,timestamp\n1,31,2.5,1\n2,x,1,1\n", FileFormat::Csv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse("user,item,rating,ts\n1,2,3,4\n", FileFormat::Csv).is_err());
    }

    #[test]
    fn levels() {
        let stars = RatingScale::stars();
        assert_eq!(rating_level(&stars, 5.0).unwrap(), 4);
        assert_eq!(rating_level(&RatingScale::half_stars(), 3.5).unwrap(), 6);
        assert!(matches!(
            rating_level(&stars, 4.25),
            Err(Error::RatingOutOfScale { .. })
        ));
        for k in 0..stars.len() {
            assert_eq!(stars.level(stars.value(k)).unwrap(), k);
        }
    }

    #[test]
    fn scale_validation() {
        assert!(RatingScale::new(vec![1.0, 1.0, 2.0], 1.0).is_err());
        assert!(RatingScale::new(vec![1.0, 2.0], 3.0).is_err());
        assert!(RatingScale::new(vec![], 0.0).is_err());
        let half = RatingScale::half_stars();
        let positives: Vec<f64> = half.positive_levels().iter().map(|&k| half.value(k)).collect();
        assert_eq!(positives, vec![4.0, 4.5, 5.0]);
        assert_eq!(RatingScale::stars().positive_levels(), vec![3, 4]);
    }

    #[test]
    fn filters_users_below_min_ratings() {
        let mut ratings: Vec<RawRating> = (0..19).map(|i| raw(1, 100 + i, 3.0, 0)).collect();
        ratings.extend((0..20).map(|i| raw(2, 100 + i, 4.0, 0)));
        let table = build_table(&ratings, 20, RatingScale::stars()).unwrap();
        assert_eq!(table.n_users(), 1);
        assert_eq!(table.users().index_of(1), None);
        assert_eq!(table.users().index_of(2), Some(0));
        assert_eq!(table.len(), 20);
    }

    #[test]
    fn single_rating_table() {
        let table = build_table(&[raw(7, 9, 4.0, 0)], 1, RatingScale::stars()).unwrap();
        assert_eq!((table.n_users(), table.n_items()), (1, 1));
        let r = table.ratings()[0];
        assert_eq!((r.user, r.item, r.level), (0, 0, 3));
    }

    #[test]
    fn duplicates_keep_latest() {
        let table = build_table(
            &[raw(1, 1, 3.0, 10), raw(1, 1, 5.0, 20)],
            1,
            RatingScale::stars(),
        )
        .unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.ratings()[0].level, 4);

        // order in the file does not matter
        let table = build_table(
            &[raw(1, 1, 5.0, 20), raw(1, 1, 3.0, 10)],
            1,
            RatingScale::stars(),
        )
        .unwrap();
        assert_eq!(table.ratings()[0].level, 4);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            build_table(&[raw(1, 1, 3.0, 0)], 2, RatingScale::stars()),
            Err(Error::EmptyTable { .. })
        ));
        assert!(matches!(
            build_table(&[raw(1, 1, 6.0, 0)], 1, RatingScale::stars()),
            Err(Error::RatingOutOfScale { .. })
        ));
        assert!(build_table(&[raw(1, 1, 3.0, 0)], 0, RatingScale::stars()).is_err());
    }

    #[test]
    fn select_users_reindexes_items() {
        let ratings = [
            raw(1, 10, 1.0, 0),
            raw(1, 20, 2.0, 0),
            raw(2, 30, 3.0, 0),
            raw(3, 20, 4.0, 0),
        ];
        let table = build_table(&ratings, 1, RatingScale::stars()).unwrap();
        let sub = table.select_users(|u| u != 0).unwrap();
        assert_eq!(sub.users().ids(), &[2, 3]);
        assert_eq!(sub.items().ids(), &[20, 30]);
        assert_eq!(sub.user_ratings(1)[0].level, 3);
    }
}
