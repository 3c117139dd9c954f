//! Implicit-feedback interaction data.
//!
//! Files use the one-user-per-line layout: the first whitespace-separated
//! integer is a user ID and the remaining integers are the item IDs that
//! user interacted with. A line with only a user ID yields an empty list.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{DgcfError, Result};

/// Users, items and their train/test interactions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    /// Sorted, duplicate-free item IDs per user.
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
    pub num_train_edges: usize,
    /// Number of repeated `(user, item)` pairs dropped while loading.
    pub duplicates_removed: usize,
}

/// Summary line used to compare against published dataset statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
}

impl DatasetStats {
    pub const CSV_HEADER: &'static str = "users,items,interactions,density";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.5}",
            self.users, self.items, self.interactions, self.density
        )
    }
}

type UserItems = BTreeMap<usize, Vec<usize>>;

fn parse_file(path: &Path) -> Result<(UserItems, usize)> {
    let text = fs::read_to_string(path).map_err(|e| DgcfError::io(path, e))?;
    parse_str(&text, path)
}

fn parse_str(text: &str, path: &Path) -> Result<(UserItems, usize)> {
    let mut rows: UserItems = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let Some(first) = tokens.next() else {
            continue;
        };
        let parse = |tok: &str| -> Result<usize> {
            tok.parse::<usize>().map_err(|_| DgcfError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected a non-negative integer, found `{tok}`"),
            })
        };
        let user = parse(first)?;
        let items = rows.entry(user).or_default();
        for tok in tokens {
            items.push(parse(tok)?);
        }
    }

    let mut duplicates = 0;
    for items in rows.values_mut() {
        let before = items.len();
        items.sort_unstable();
        items.dedup();
        duplicates += before - items.len();
    }
    Ok((rows, duplicates))
}

impl InteractionDataset {
    /// Load a train/test pair of interaction files.
    pub fn load(train_path: impl AsRef<Path>, test_path: impl AsRef<Path>) -> Result<Self> {
        let (train, dup_train) = parse_file(train_path.as_ref())?;
        let (test, dup_test) = parse_file(test_path.as_ref())?;
        let ds = Self::from_maps(train, test, dup_train + dup_test);
        if ds.duplicates_removed > 0 {
            log::warn!(
                "dropped {} duplicate user-item pairs while loading",
                ds.duplicates_removed
            );
        }
        Ok(ds)
    }

    /// Parse both splits from in-memory text.
    pub fn parse(train: &str, test: &str) -> Result<Self> {
        let (train, dup_train) = parse_str(train, Path::new("<train>"))?;
        let (test, dup_test) = parse_str(test, Path::new("<test>"))?;
        Ok(Self::from_maps(train, test, dup_train + dup_test))
    }

    fn from_maps(train: UserItems, test: UserItems, duplicates_removed: usize) -> Self {
        let num_users = train
            .keys()
            .chain(test.keys())
            .max()
            .map_or(0, |&u| u + 1);
        let num_items = train
            .values()
            .chain(test.values())
            .filter_map(|items| items.last())
            .max()
            .map_or(0, |&i| i + 1);
        let spread = |map: UserItems| {
            let mut lists = vec![Vec::new(); num_users];
            for (u, items) in map {
                lists[u] = items;
            }
            lists
        };
        let train = spread(train);
        let test = spread(test);
        let num_train_edges = train.iter().map(Vec::len).sum();
        InteractionDataset {
            num_users,
            num_items,
            train,
            test,
            num_train_edges,
            duplicates_removed,
        }
    }

    /// Build a dataset from explicit per-user lists; lists are sorted and
    /// deduplicated, and the ID spaces are taken as given.
    pub fn from_lists(
        num_users: usize,
        num_items: usize,
        mut train: Vec<Vec<usize>>,
        mut test: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if train.len() != num_users || test.len() != num_users {
            return Err(DgcfError::Contract(format!(
                "expected {num_users} user lists, got train={} test={}",
                train.len(),
                test.len()
            )));
        }
        let mut duplicates_removed = 0;
        for items in train.iter_mut().chain(test.iter_mut()) {
            let before = items.len();
            items.sort_unstable();
            items.dedup();
            duplicates_removed += before - items.len();
            if let Some(&last) = items.last() {
                if last >= num_items {
                    return Err(DgcfError::Contract(format!(
                        "item {last} out of range for {num_items} items"
                    )));
                }
            }
        }
        let num_train_edges = train.iter().map(Vec::len).sum();
        Ok(InteractionDataset {
            num_users,
            num_items,
            train,
            test,
            num_train_edges,
            duplicates_removed,
        })
    }

    pub fn num_test_edges(&self) -> usize {
        self.test.iter().map(Vec::len).sum()
    }

    pub fn stats(&self) -> DatasetStats {
        let interactions = self.num_train_edges + self.num_test_edges();
        let cells = (self.num_users as f64) * (self.num_items as f64);
        DatasetStats {
            users: self.num_users,
            items: self.num_items,
            interactions,
            density: if cells > 0.0 {
                interactions as f64 / cells
            } else {
                0.0
            },
        }
    }

    pub fn is_train_item(&self, user: usize, item: usize) -> bool {
        self.train[user].binary_search(&item).is_ok()
    }

    /// Write one split back out in the input layout. Users with empty lists
    /// are written as a bare user ID so the user count survives a round trip.
    pub fn write_split<W: Write>(lists: &[Vec<usize>], mut out: W) -> std::io::Result<()> {
        for (u, items) in lists.iter().enumerate() {
            write!(out, "{u}")?;
            for i in items {
                write!(out, " {i}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Write `train.txt` and `test.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| DgcfError::io(dir, e))?;
        for (name, lists) in [("train.txt", &self.train), ("test.txt", &self.test)] {
            let path = dir.join(name);
            let mut buf = Vec::new();
            Self::write_split(lists, &mut buf).map_err(|e| DgcfError::io(&path, e))?;
            fs::write(&path, buf).map_err(|e| DgcfError::io(&path, e))?;
        }
        Ok(())
    }
}

/// One BPR training example: `user` interacted with `pos` but not `neg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Uniform negative sampler over the users that have training items.
#[derive(Debug, Clone)]
pub struct TripletSampler<'a> {
    ds: &'a InteractionDataset,
    users: Vec<usize>,
}

impl<'a> TripletSampler<'a> {
    pub fn new(ds: &'a InteractionDataset) -> Result<Self> {
        let users: Vec<usize> = (0..ds.num_users)
            .filter(|&u| !ds.train[u].is_empty())
            .collect();
        if users.is_empty() {
            return Err(DgcfError::Sampling("no user has training items".into()));
        }
        if let Some(&u) = users
            .iter()
            .find(|&&u| ds.train[u].len() >= ds.num_items)
        {
            return Err(DgcfError::Sampling(format!(
                "user {u} interacted with all {} items; no negative exists",
                ds.num_items
            )));
        }
        Ok(TripletSampler { ds, users })
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> TripletBatch {
        let ds = self.ds;
        let triplets = (0..batch_size)
            .map(|_| {
                let user = self.users[rng.gen_range(0..self.users.len())];
                let items = &ds.train[user];
                let pos = items[rng.gen_range(0..items.len())];
                let neg = loop {
                    let j = rng.gen_range(0..ds.num_items);
                    if items.binary_search(&j).is_err() {
                        break j;
                    }
                };
                Triplet { user, pos, neg }
            })
            .collect();
        TripletBatch { triplets }
    }
}

/// Draw `batch_size` triplets. Negatives exclude train items only.
pub fn sample_triplets<R: Rng + ?Sized>(
    ds: &InteractionDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<TripletBatch> {
    if batch_size == 0 {
        return Err(DgcfError::config("batch_size", "must be at least 1"));
    }
    Ok(TripletSampler::new(ds)?.sample(batch_size, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_line_file_counts() {
        let ds = InteractionDataset::parse("0 5 7\n1 5\n", "").unwrap();
        assert_eq!(ds.num_users, 2);
        assert_eq!(ds.num_items, 8);
        assert_eq!(ds.num_train_edges, 3);
        assert_eq!(ds.train[0], vec![5, 7]);
    }

    #[test]
    fn malformed_token_names_line() {
        let err = InteractionDataset::parse("0 abc\n", "").unwrap_err();
        match err {
            DgcfError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
        let err = InteractionDataset::parse("0 1\n\n2 -3\n", "").unwrap_err();
        assert!(matches!(err, DgcfError::Parse { line: 3, .. }));
    }

    #[test]
    fn duplicates_and_empty_lines() {
        let ds = InteractionDataset::parse("0 3 3 1\n\n2\n", "3 0\n").unwrap();
        assert_eq!(ds.train[0], vec![1, 3]);
        assert_eq!(ds.duplicates_removed, 1);
        assert!(ds.train[2].is_empty());
        assert_eq!(ds.num_users, 4);
        assert!(ds.train[3].is_empty());
        assert_eq!(ds.test[3], vec![0]);
        assert_eq!(ds.num_items, 4);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = InteractionDataset::load("/nonexistent/train.txt", "/nonexistent/test.txt")
            .unwrap_err();
        assert!(matches!(err, DgcfError::Io { .. }));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn rejection_never_returns_train_item() {
        let ds = InteractionDataset::parse("0 5 7\n1 5\n", "").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_triplets(&ds, 2000, &mut rng).unwrap();
        for t in &batch.triplets {
            assert!(ds.is_train_item(t.user, t.pos));
            assert!(!ds.is_train_item(t.user, t.neg));
            if t.user == 0 {
                assert!(t.neg != 5 && t.neg != 7);
            }
        }
    }

    #[test]
    fn same_seed_same_batch() {
        let ds = InteractionDataset::parse("0 5 7\n1 5\n2 1 2 3\n", "").unwrap();
        let a = sample_triplets(&ds, 64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_triplets(&ds, 64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn saturated_user_is_sampling_error() {
        let ds = InteractionDataset::parse("0 0 1 2\n1 0\n", "").unwrap();
        let err = sample_triplets(&ds, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, DgcfError::Sampling(_)));
    }

    #[test]
    fn negatives_are_uniform_chi_square() {
        // Two users over four items; user 0 owns {0}, user 1 owns {1, 2}.
        // Exact probabilities: user drawn with 1/2, then uniform over the
        // complement. P(neg=0)=1/4, P(1)=1/6, P(2)=1/6, P(3)=1/6+1/4.
        let ds = InteractionDataset::parse("0 0\n1 1 2\n", "0 3\n").unwrap();
        let n = 100_000usize;
        let batch = sample_triplets(&ds, n, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let mut counts = [0usize; 4];
        for t in &batch.triplets {
            counts[t.neg] += 1;
        }
        let probs = [0.25, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0 + 0.25];
        for (c, p) in counts.iter().zip(probs) {
            let mean = p * n as f64;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - mean).abs() < 3.0 * sd, "{counts:?}");
        }
        let chi2: f64 = counts
            .iter()
            .zip(probs)
            .map(|(c, p)| {
                let e = p * n as f64;
                (*c as f64 - e).powi(2) / e
            })
            .sum();
        // 3 degrees of freedom, 0.999 quantile.
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn write_split_round_trip() {
        let ds = InteractionDataset::parse("0 5 7\n2 1\n", "1 3\n").unwrap();
        let mut buf = Vec::new();
        InteractionDataset::write_split(&ds.train, &mut buf).unwrap();
        let mut tbuf = Vec::new();
        InteractionDataset::write_split(&ds.test, &mut tbuf).unwrap();
        let again = InteractionDataset::parse(
            std::str::from_utf8(&buf).unwrap(),
            std::str::from_utf8(&tbuf).unwrap(),
        )
        .unwrap();
        assert_eq!(again.train, ds.train);
        assert_eq!(again.test, ds.test);
    }

    #[test]
    fn stats_line() {
        let ds = InteractionDataset::parse("0 5 7\n1 5\n", "1 7\n").unwrap();
        let s = ds.stats();
        assert_eq!(s.interactions, 4);
        assert_eq!(s.to_csv(), "2,8,4,0.25000");
    }
}
