//! Rating ingestion, cross-domain user alignment, splitting and relevance labels.
//!
//! Domain files are UTF-8 text with one `user<TAB>item<TAB>rating` triple per
//! line. Blank lines and lines starting with `#` are ignored.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::{stream, Purpose};

/// Fraction of every domain's ratings used for training.
pub const TRAIN_FRACTION: (usize, usize) = (1, 2);
/// Fraction of the target domain's ratings used for validation.
pub const VALIDATION_FRACTION: (usize, usize) = (1, 10);
/// Fraction of the target domain's ratings used for testing.
pub const TEST_FRACTION: (usize, usize) = (2, 5);
/// Smallest target domain that can be split.
pub const MIN_TARGET_RATINGS: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("domain `{0}` contains no ratings")]
    EmptyDomain(String),
    #[error("no domains given")]
    NoDomains,
    #[error("domain index {index} out of range for {count} domains")]
    UnknownDomain { index: usize, count: usize },
    #[error("target domain `{domain}` has {count} ratings, at least {min} required to split", min = MIN_TARGET_RATINGS)]
    TooFewRatings { domain: String, count: usize },
    #[error("split manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("invalid rating triple: {0}")]
    InvalidTriple(String),
}

impl DataError {
    fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingTriple {
    pub user: String,
    pub item: String,
    pub value: f64,
}

impl RatingTriple {
    pub fn new(user: impl Into<String>, item: impl Into<String>, value: f64) -> Self {
        RatingTriple {
            user: user.into(),
            item: item.into(),
            value,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.user.is_empty() {
            return Err("empty user id".into());
        }
        if self.item.is_empty() {
            return Err("empty item id".into());
        }
        if !self.value.is_finite() {
            return Err(format!("non-finite rating {}", self.value));
        }
        Ok(())
    }
}

/// A rating addressed by dense local indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// One domain's rating matrix with dense local user and item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain_id: usize,
    pub name: String,
    users: Vec<String>,
    items: Vec<String>,
    user_map: HashMap<String, usize>,
    item_map: HashMap<String, usize>,
    ratings: Vec<Rating>,
}

impl DomainDataset {
    /// Builds a domain from external triples. A repeated `(user, item)` pair
    /// keeps the value of its last occurrence.
    pub fn from_triples<I>(domain_id: usize, name: impl Into<String>, triples: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = RatingTriple>,
    {
        let mut ds = DomainDataset {
            domain_id,
            name: name.into(),
            users: Vec::new(),
            items: Vec::new(),
            user_map: HashMap::new(),
            item_map: HashMap::new(),
            ratings: Vec::new(),
        };
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for t in triples {
            t.validate().map_err(DataError::InvalidTriple)?;
            ds.push(t, &mut seen);
        }
        if ds.ratings.is_empty() {
            return Err(DataError::EmptyDomain(ds.name));
        }
        Ok(ds)
    }

    fn push(&mut self, t: RatingTriple, seen: &mut HashMap<(usize, usize), usize>) {
        let user = intern(&mut self.user_map, &mut self.users, t.user);
        let item = intern(&mut self.item_map, &mut self.items, t.item);
        match seen.get(&(user, item)) {
            Some(&pos) => self.ratings[pos].value = t.value,
            None => {
                seen.insert((user, item), self.ratings.len());
                self.ratings.push(Rating {
                    user,
                    item,
                    value: t.value,
                });
            }
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn user_id(&self, local: usize) -> &str {
        &self.users[local]
    }

    pub fn item_id(&self, local: usize) -> &str {
        &self.items[local]
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_map.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_map.get(id).copied()
    }

    /// Fraction of observed entries, `|ratings| / (n_users * n_items)`.
    pub fn density(&self) -> f64 {
        self.ratings.len() as f64 / (self.n_users() as f64 * self.n_items() as f64)
    }

    pub fn stats(&self) -> DomainStats {
        DomainStats {
            name: self.name.clone(),
            users: self.n_users(),
            items: self.n_items(),
            ratings: self.ratings.len(),
            density_percent: 100.0 * self.density(),
        }
    }
}

fn intern(map: &mut HashMap<String, usize>, ids: &mut Vec<String>, id: String) -> usize {
    if let Some(&idx) = map.get(&id) {
        return idx;
    }
    let idx = ids.len();
    ids.push(id.clone());
    map.insert(id, idx);
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainStats {
    pub name: String,
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub density_percent: f64,
}

/// Renders a per-domain summary table (users, items, ratings, density).
pub fn stats_table(stats: &[DomainStats]) -> String {
    let mut out = format!(
        "{:<16} {:>10} {:>10} {:>10} {:>12}\n",
        "domain", "users", "items", "ratings", "density(%)"
    );
    for s in stats {
        out.push_str(&format!(
            "{:<16} {:>10} {:>10} {:>10} {:>12.3}\n",
            s.name, s.users, s.items, s.ratings, s.density_percent
        ));
    }
    out
}

/// Parses a domain from a reader. `name` labels the domain in errors and reports.
pub fn parse_domain<R: BufRead>(reader: R, domain_id: usize, name: &str) -> Result<DomainDataset, DataError> {
    let mut triples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let value = f64::from_str(fields[2].trim()).map_err(|e| DataError::Parse {
            line: line_no,
            message: format!("bad rating `{}`: {e}", fields[2]),
        })?;
        let t = RatingTriple::new(fields[0].trim(), fields[1].trim(), value);
        t.validate().map_err(|message| DataError::Parse {
            line: line_no,
            message,
        })?;
        triples.push(t);
    }
    DomainDataset::from_triples(domain_id, name, triples)
}

/// Loads one domain file; the domain is named after the file stem.
pub fn load_domain(path: &Path, domain_id: usize) -> Result<DomainDataset, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("domain{domain_id}"));
    parse_domain(BufReader::new(file), domain_id, &name)
}

/// Loads several domain files concurrently, preserving the given order.
pub fn load_domains(paths: &[PathBuf]) -> Result<Vec<DomainDataset>, DataError> {
    if paths.is_empty() {
        return Err(DataError::NoDomains);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = paths
            .iter()
            .enumerate()
            .map(|(k, p)| scope.spawn(move || load_domain(p, k)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("domain loader panicked"))
            .collect()
    })
}

/// Writes a domain back out in the tab-separated input format.
pub fn write_domain<W: Write>(ds: &DomainDataset, mut out: W) -> io::Result<()> {
    for r in ds.ratings() {
        writeln!(out, "{}\t{}\t{}", ds.user_id(r.user), ds.item_id(r.item), r.value)?;
    }
    Ok(())
}

/// Maps external user ids to one global index across all domains.
#[derive(Debug, Clone)]
pub struct GlobalUserIndex {
    ids: Vec<String>,
    map: HashMap<String, usize>,
    presence: Vec<Vec<usize>>,
    /// `[global][domain]` -> local index in that domain.
    locals: Vec<Vec<Option<usize>>>,
    /// `[domain][local]` -> global index.
    globals: Vec<Vec<usize>>,
}

/// Assigns global indices in order of first appearance (domain order, then
/// local order) and records which domains each user appears in.
pub fn align_users(datasets: &[DomainDataset]) -> Result<GlobalUserIndex, DataError> {
    if datasets.is_empty() {
        return Err(DataError::NoDomains);
    }
    let p = datasets.len();
    let mut index = GlobalUserIndex {
        ids: Vec::new(),
        map: HashMap::new(),
        presence: Vec::new(),
        locals: Vec::new(),
        globals: Vec::with_capacity(p),
    };
    for (k, ds) in datasets.iter().enumerate() {
        let mut to_global = Vec::with_capacity(ds.n_users());
        for local in 0..ds.n_users() {
            let id = ds.user_id(local);
            let g = match index.map.get(id) {
                Some(&g) => g,
                None => {
                    let g = index.ids.len();
                    index.ids.push(id.to_string());
                    index.map.insert(id.to_string(), g);
                    index.presence.push(Vec::new());
                    index.locals.push(vec![None; p]);
                    g
                }
            };
            index.presence[g].push(k);
            index.locals[g][k] = Some(local);
            to_global.push(g);
        }
        index.globals.push(to_global);
    }
    Ok(index)
}

impl GlobalUserIndex {
    pub fn n_users(&self) -> usize {
        self.ids.len()
    }

    pub fn n_domains(&self) -> usize {
        self.globals.len()
    }

    pub fn global(&self, id: &str) -> Option<usize> {
        self.map.get(id).copied()
    }

    pub fn user_id(&self, global: usize) -> &str {
        &self.ids[global]
    }

    /// Domains containing the user, ascending.
    pub fn presence(&self, global: usize) -> &[usize] {
        &self.presence[global]
    }

    pub fn local(&self, global: usize, domain: usize) -> Option<usize> {
        self.locals[global][domain]
    }

    pub fn to_global(&self, domain: usize, local: usize) -> usize {
        self.globals[domain][local]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Validation,
    Test,
    /// Held-out share of a non-target domain; never used.
    Unused,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
            SplitTag::Unused => "unused",
        })
    }
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitTag::Train),
            "validation" => Ok(SplitTag::Validation),
            "test" => Ok(SplitTag::Test),
            "unused" => Ok(SplitTag::Unused),
            other => Err(format!("unknown split tag `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub unused: usize,
}

impl SplitCounts {
    /// Bucket sizes: each held-out bucket gets `floor(ratio * n)`, train takes the rest.
    pub fn planned(n: usize, is_target: bool) -> Self {
        if is_target {
            let validation = n * VALIDATION_FRACTION.0 / VALIDATION_FRACTION.1;
            let test = n * TEST_FRACTION.0 / TEST_FRACTION.1;
            SplitCounts {
                train: n - validation - test,
                validation,
                test,
                unused: 0,
            }
        } else {
            let unused = n * (TRAIN_FRACTION.1 - TRAIN_FRACTION.0) / TRAIN_FRACTION.1;
            SplitCounts {
                train: n - unused,
                unused,
                ..Default::default()
            }
        }
    }
}

/// A tag for every rating of every domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub target_domain: usize,
    pub seed: u64,
    tags: Vec<Vec<SplitTag>>,
}

/// Randomly assigns ratings to train/validation/test buckets. Each domain is
/// shuffled with its own stream; the leading share becomes train, and for the
/// target domain the validation bucket is drawn next from the remainder.
pub fn split(datasets: &[DomainDataset], target_domain: usize, seed: u64) -> Result<SplitAssignment, DataError> {
    if datasets.is_empty() {
        return Err(DataError::NoDomains);
    }
    if target_domain >= datasets.len() {
        return Err(DataError::UnknownDomain {
            index: target_domain,
            count: datasets.len(),
        });
    }
    let target = &datasets[target_domain];
    if target.ratings().len() < MIN_TARGET_RATINGS {
        return Err(DataError::TooFewRatings {
            domain: target.name.clone(),
            count: target.ratings().len(),
        });
    }
    let tags = datasets
        .iter()
        .enumerate()
        .map(|(k, ds)| {
            let n = ds.ratings().len();
            let counts = SplitCounts::planned(n, k == target_domain);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream(seed, Purpose::Split, k as u64, 0));
            let mut tags = vec![SplitTag::Unused; n];
            for (rank, &idx) in order.iter().enumerate() {
                tags[idx] = if rank < counts.train {
                    SplitTag::Train
                } else if rank < counts.train + counts.validation {
                    SplitTag::Validation
                } else if k == target_domain {
                    SplitTag::Test
                } else {
                    SplitTag::Unused
                };
            }
            tags
        })
        .collect();
    Ok(SplitAssignment {
        target_domain,
        seed,
        tags,
    })
}

impl SplitAssignment {
    pub fn n_domains(&self) -> usize {
        self.tags.len()
    }

    pub fn tags(&self, domain: usize) -> &[SplitTag] {
        &self.tags[domain]
    }

    pub fn counts(&self, domain: usize) -> SplitCounts {
        let mut c = SplitCounts::default();
        for t in &self.tags[domain] {
            match t {
                SplitTag::Train => c.train += 1,
                SplitTag::Validation => c.validation += 1,
                SplitTag::Test => c.test += 1,
                SplitTag::Unused => c.unused += 1,
            }
        }
        c
    }

    /// Ratings of `ds` carrying `tag`.
    pub fn ratings_with<'a>(&'a self, ds: &'a DomainDataset, tag: SplitTag) -> impl Iterator<Item = &'a Rating> + 'a {
        ds.ratings()
            .iter()
            .zip(&self.tags[ds.domain_id])
            .filter(move |(_, t)| **t == tag)
            .map(|(r, _)| r)
    }

    pub fn train_ratings(&self, ds: &DomainDataset) -> Vec<Rating> {
        self.ratings_with(ds, SplitTag::Train).copied().collect()
    }

    /// Writes one `domain<TAB>user<TAB>item<TAB>tag` row per rating.
    pub fn write_manifest<W: Write>(&self, datasets: &[DomainDataset], mut out: W) -> io::Result<()> {
        writeln!(out, "# target={} seed={}", self.target_domain, self.seed)?;
        for ds in datasets {
            for (r, tag) in ds.ratings().iter().zip(&self.tags[ds.domain_id]) {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    ds.name,
                    ds.user_id(r.user),
                    ds.item_id(r.item),
                    tag
                )?;
            }
        }
        Ok(())
    }

    /// Reads a manifest written by [`write_manifest`](Self::write_manifest).
    /// Every rating of every domain must be tagged exactly once.
    pub fn read_manifest<R: BufRead>(reader: R, datasets: &[DomainDataset]) -> Result<Self, DataError> {
        let bad = |line: usize, message: String| DataError::Manifest { line, message };
        let mut target = None;
        let mut seed = None;
        let by_name: HashMap<&str, &DomainDataset> = datasets.iter().map(|d| (d.name.as_str(), d)).collect();
        let positions: Vec<HashMap<(usize, usize), usize>> = datasets
            .iter()
            .map(|d| d.ratings().iter().enumerate().map(|(i, r)| ((r.user, r.item), i)).collect())
            .collect();
        let mut tags: Vec<Vec<Option<SplitTag>>> = datasets.iter().map(|d| vec![None; d.ratings().len()]).collect();
        for (i, line) in reader.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| bad(n, e.to_string()))?;
            if let Some(header) = line.strip_prefix('#') {
                for kv in header.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("target", v)) => target = Some(v.parse().map_err(|_| bad(n, format!("bad target `{v}`")))?),
                        Some(("seed", v)) => seed = Some(v.parse().map_err(|_| bad(n, format!("bad seed `{v}`")))?),
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(n, format!("expected 4 fields, found {}", f.len())));
            }
            let ds = by_name.get(f[0]).ok_or_else(|| bad(n, format!("unknown domain `{}`", f[0])))?;
            let u = ds.user_index(f[1]).ok_or_else(|| bad(n, format!("unknown user `{}`", f[1])))?;
            let it = ds.item_index(f[2]).ok_or_else(|| bad(n, format!("unknown item `{}`", f[2])))?;
            let tag: SplitTag = f[3].parse().map_err(|e| bad(n, e))?;
            let pos = positions[ds.domain_id]
                .get(&(u, it))
                .ok_or_else(|| bad(n, format!("no rating for ({}, {})", f[1], f[2])))?;
            let slot = &mut tags[ds.domain_id][*pos];
            if slot.is_some() {
                return Err(bad(n, format!("duplicate row for ({}, {})", f[1], f[2])));
            }
            *slot = Some(tag);
        }
        let target_domain = target.ok_or_else(|| bad(0, "missing `# target=` header".into()))?;
        if target_domain >= datasets.len() {
            return Err(DataError::UnknownDomain {
                index: target_domain,
                count: datasets.len(),
            });
        }
        let tags = tags
            .into_iter()
            .zip(datasets)
            .map(|(t, ds)| {
                t.into_iter()
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad(0, format!("domain `{}` has untagged ratings", ds.name)))
            })
            .collect::<Result<_, _>>()?;
        Ok(SplitAssignment {
            target_domain,
            seed: seed.unwrap_or(0),
            tags,
        })
    }
}

/// A user evaluated on held-out ratings of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalUser {
    /// Local user index in the evaluated domain.
    pub user: usize,
    pub mean_train: f64,
    /// Held-out items, ascending.
    pub held_out: Vec<usize>,
    /// Held-out items rated strictly above `mean_train`, ascending.
    pub relevant: Vec<usize>,
}

/// Relevance labels for one held-out bucket of the target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceSet {
    pub domain: usize,
    pub tag: SplitTag,
    /// Users with at least one train rating and one held-out rating, by local index.
    pub users: Vec<EvalUser>,
}

impl RelevanceSet {
    /// Users that enter metric averages: at least one relevant item.
    pub fn evaluable(&self) -> impl Iterator<Item = &EvalUser> {
        self.users.iter().filter(|u| !u.relevant.is_empty())
    }

    pub fn n_evaluable(&self) -> usize {
        self.evaluable().count()
    }
}

/// Labels the target domain's test ratings.
pub fn label_relevance(split: &SplitAssignment, datasets: &[DomainDataset]) -> RelevanceSet {
    label_relevance_for(split, datasets, SplitTag::Test)
}

/// Labels held-out ratings carrying `tag` in the target domain: an item is
/// relevant when its rating is strictly greater than the user's mean train
/// rating in that domain. Users without train ratings are dropped.
pub fn label_relevance_for(split: &SplitAssignment, datasets: &[DomainDataset], tag: SplitTag) -> RelevanceSet {
    let domain = split.target_domain;
    let ds = &datasets[domain];
    let n = ds.n_users();
    let mut sum = vec![0.0; n];
    let mut cnt = vec![0usize; n];
    for r in split.ratings_with(ds, SplitTag::Train) {
        sum[r.user] += r.value;
        cnt[r.user] += 1;
    }
    let mut held: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for r in split.ratings_with(ds, tag) {
        held[r.user].push((r.item, r.value));
    }
    let users = held
        .into_iter()
        .enumerate()
        .filter(|(u, items)| cnt[*u] > 0 && !items.is_empty())
        .map(|(u, mut items)| {
            let mean_train = sum[u] / cnt[u] as f64;
            items.sort_by_key(|&(i, _)| i);
            EvalUser {
                user: u,
                mean_train,
                held_out: items.iter().map(|&(i, _)| i).collect(),
                relevant: items.iter().filter(|&&(_, v)| v > mean_train).map(|&(i, _)| i).collect(),
            }
        })
        .collect();
    RelevanceSet { domain, tag, users }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(k: usize, name: &str, rows: &[(&str, &str, f64)]) -> DomainDataset {
        DomainDataset::from_triples(k, name, rows.iter().map(|&(u, i, v)| RatingTriple::new(u, i, v))).unwrap()
    }

    fn synthetic_domain(k: usize, n: usize) -> DomainDataset {
        let rows: Vec<RatingTriple> = (0..n)
            .map(|j| RatingTriple::new(format!("u{}", j % 7), format!("i{j}"), (j % 5 + 1) as f64))
            .collect();
        DomainDataset::from_triples(k, format!("d{k}"), rows).unwrap()
    }

    #[test]
    fn parses_singleton() {
        let d = parse_domain("u1\ti1\t4.0\n".as_bytes(), 0, "x").unwrap();
        assert_eq!((d.n_users(), d.n_items(), d.ratings().len()), (1, 1, 1));
        assert_eq!(d.ratings()[0].value, 4.0);
    }

    #[test]
    fn duplicate_pair_keeps_last_value() {
        let d = parse_domain("u1\ti1\t5\nu1\ti1\t3\n".as_bytes(), 0, "x").unwrap();
        assert_eq!(d.ratings().len(), 1);
        assert_eq!(d.ratings()[0].value, 3.0);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_domain("u1\ti1\t5\n# note\nu2 i2\n".as_bytes(), 0, "x").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err}");
        let err = parse_domain("u1\ti1\tfive\n".as_bytes(), 0, "x").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
        let err = parse_domain("u1\ti1\tNaN\n".as_bytes(), 0, "x").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_file_is_an_error() {
        let err = parse_domain("\n# only comments\n".as_bytes(), 0, "empty").unwrap_err();
        assert!(matches!(err, DataError::EmptyDomain(_)));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_domain(Path::new("/nonexistent/domain.tsv"), 0).unwrap_err();
        assert!(matches!(err, DataError::Io { .. }));
    }

    #[test]
    fn align_partial_overlap() {
        let a = ds(0, "a", &[("u1", "x", 1.0), ("u2", "x", 1.0)]);
        let b = ds(1, "b", &[("u2", "y", 1.0), ("u3", "y", 1.0)]);
        let g = align_users(&[a, b]).unwrap();
        assert_eq!(g.n_users(), 3);
        let u2 = g.global("u2").unwrap();
        assert_eq!(g.presence(u2), &[0, 1]);
        assert_eq!(g.local(u2, 1), Some(0));
        assert_eq!(g.to_global(1, 0), u2);
    }

    #[test]
    fn align_disjoint_and_identical() {
        let a = ds(0, "a", &[("u1", "x", 1.0)]);
        let b = ds(1, "b", &[("u2", "x", 1.0)]);
        let g = align_users(&[a.clone(), b]).unwrap();
        assert_eq!(g.n_users(), 2);
        assert!((0..2).all(|u| g.presence(u).len() == 1));
        let mut a2 = a.clone();
        a2.domain_id = 1;
        let g = align_users(&[a, a2]).unwrap();
        assert_eq!(g.n_users(), 1);
        assert_eq!(g.presence(0), &[0, 1]);
        assert!(matches!(align_users(&[]), Err(DataError::NoDomains)));
    }

    #[test]
    fn split_counts_follow_floor_rule() {
        let data = vec![synthetic_domain(0, 100), synthetic_domain(1, 33)];
        let s = split(&data, 0, 11).unwrap();
        assert_eq!(
            s.counts(0),
            SplitCounts {
                train: 50,
                validation: 10,
                test: 40,
                unused: 0
            }
        );
        assert_eq!(
            s.counts(1),
            SplitCounts {
                train: 17,
                unused: 16,
                ..Default::default()
            }
        );
        let c = SplitCounts::planned(20, true);
        assert_eq!((c.train, c.validation, c.test), (10, 2, 8));
    }

    #[test]
    fn split_rejects_small_target() {
        let data = vec![synthetic_domain(0, 9), synthetic_domain(1, 50)];
        assert!(matches!(split(&data, 0, 1), Err(DataError::TooFewRatings { count: 9, .. })));
        assert!(matches!(split(&data, 2, 1), Err(DataError::UnknownDomain { .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let data = vec![synthetic_domain(0, 40), synthetic_domain(1, 25)];
        let s = split(&data, 1, 5).unwrap();
        let mut buf = Vec::new();
        s.write_manifest(&data, &mut buf).unwrap();
        let back = SplitAssignment::read_manifest(&buf[..], &data).unwrap();
        assert_eq!(back, s);
        let truncated: Vec<u8> = buf.iter().copied().take(buf.len() / 2).collect();
        let cut = String::from_utf8_lossy(&truncated);
        let cut = &cut[..cut.rfind('\n').unwrap() + 1];
        assert!(SplitAssignment::read_manifest(cut.as_bytes(), &data).is_err());
    }

    fn relevance_case(train: &[f64], test: &[f64]) -> RelevanceSet {
        let mut rows = Vec::new();
        for (j, v) in train.iter().chain(test).enumerate() {
            rows.push(RatingTriple::new("u", format!("i{j}"), *v));
        }
        let d = DomainDataset::from_triples(0, "t", rows).unwrap();
        let mut tags = vec![SplitTag::Train; train.len()];
        tags.extend(std::iter::repeat_n(SplitTag::Test, test.len()));
        let s = SplitAssignment {
            target_domain: 0,
            seed: 0,
            tags: vec![tags],
        };
        label_relevance(&s, &[d])
    }

    #[test]
    fn relevance_is_strictly_above_mean() {
        let r = relevance_case(&[5.0, 3.0, 4.0], &[5.0, 4.0]);
        assert_eq!(r.users.len(), 1);
        assert_eq!(r.users[0].mean_train, 4.0);
        assert_eq!(r.users[0].held_out, vec![3, 4]);
        assert_eq!(r.users[0].relevant, vec![3]);
        let r = relevance_case(&[3.0, 3.0], &[3.0]);
        assert!(r.users[0].relevant.is_empty());
        assert_eq!(r.n_evaluable(), 0);
    }

    #[test]
    fn users_without_train_ratings_are_dropped() {
        let r = relevance_case(&[], &[5.0]);
        assert!(r.users.is_empty());
    }

    proptest! {
        #[test]
        fn split_is_a_deterministic_partition(n in 10usize..300, m in 1usize..200, seed in any::<u64>()) {
            let data = vec![synthetic_domain(0, n), synthetic_domain(1, m)];
            let a = split(&data, 0, seed).unwrap();
            let b = split(&data, 0, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let c = a.counts(0);
            prop_assert_eq!(c, SplitCounts::planned(n, true));
            prop_assert_eq!(c.train + c.validation + c.test, n);
            prop_assert_eq!(a.counts(1), SplitCounts::planned(m, false));
        }

        #[test]
        fn raising_a_test_rating_never_removes_relevance(
            train in proptest::collection::vec(1.0f64..5.0, 1..6),
            test in 1.0f64..5.0,
            bump in 0.0f64..3.0,
        ) {
            let before = relevance_case(&train, &[test]);
            let after = relevance_case(&train, &[test + bump]);
            if !before.users[0].relevant.is_empty() {
                prop_assert!(!after.users[0].relevant.is_empty());
            }
        }

        #[test]
        fn index_maps_are_dense_bijections(pairs in proptest::collection::vec((0u8..20, 0u8..20), 1..80)) {
            let rows = pairs.iter().map(|(u, i)| RatingTriple::new(format!("u{u}"), format!("i{i}"), 1.0));
            let d = DomainDataset::from_triples(0, "p", rows).unwrap();
            for u in 0..d.n_users() {
                prop_assert_eq!(d.user_index(d.user_id(u)), Some(u));
            }
            for i in 0..d.n_items() {
                prop_assert_eq!(d.item_index(d.item_id(i)), Some(i));
            }
            let mut seen = std::collections::HashSet::new();
            for r in d.ratings() {
                prop_assert!(seen.insert((r.user, r.item)));
            }
        }
    }
}
