//! Implicit-feedback interaction data: loading, k-core filtering, per-user
//! splitting, popularity counting and popular/long-tail grouping.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw-ID tables. Index `k` of `users` is the raw ID of dense user `k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
    user_lookup: HashMap<String, usize>,
    item_lookup: HashMap<String, usize>,
}

impl IdMaps {
    pub fn new(users: Vec<String>, items: Vec<String>) -> Self {
        let user_lookup = users.iter().cloned().zip(0..).collect();
        let item_lookup = items.iter().cloned().zip(0..).collect();
        IdMaps {
            users,
            items,
            user_lookup,
            item_lookup,
        }
    }

    /// Identity tables whose raw IDs are the decimal dense indices.
    pub fn dense(num_users: usize, num_items: usize) -> Self {
        IdMaps::new(
            (0..num_users).map(|u| u.to_string()).collect(),
            (0..num_items).map(|i| i.to_string()).collect(),
        )
    }

    pub fn user_index(&self, raw: &str) -> Option<usize> {
        self.user_lookup.get(raw).copied()
    }

    pub fn item_index(&self, raw: &str) -> Option<usize> {
        self.item_lookup.get(raw).copied()
    }
}

/// Implicit interactions over dense user/item index spaces, stored as
/// duplicate-free, ascending per-user item lists.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    num_users: usize,
    num_items: usize,
    user_items: Vec<Vec<usize>>,
    ids: Arc<IdMaps>,
}

impl InteractionSet {
    /// Builds a set from `(user, item)` pairs; duplicates collapse.
    pub fn from_pairs(
        num_users: usize,
        num_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        Self::with_ids(
            num_users,
            num_items,
            pairs,
            Arc::new(IdMaps::dense(num_users, num_items)),
        )
    }

    fn with_ids(
        num_users: usize,
        num_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
        ids: Arc<IdMaps>,
    ) -> Result<Self> {
        let mut user_items = vec![Vec::new(); num_users];
        for (u, i) in pairs {
            if u >= num_users || i >= num_items {
                return Err(Error::Shape(format!(
                    "pair ({u}, {i}) outside {num_users} users x {num_items} items"
                )));
            }
            user_items[u].push(i);
        }
        for items in &mut user_items {
            items.sort_unstable();
            items.dedup();
        }
        Ok(InteractionSet {
            num_users,
            num_items,
            user_items,
            ids,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn len(&self) -> usize {
        self.user_items.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.user_items.iter().all(Vec::is_empty)
    }

    /// Ascending item indices of user `u`.
    pub fn items_of(&self, u: usize) -> &[usize] {
        &self.user_items[u]
    }

    pub fn user_items(&self) -> &[Vec<usize>] {
        &self.user_items
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.user_items[u].binary_search(&i).is_ok()
    }

    /// All pairs in user-major, item-ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.user_items
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
    }

    pub fn ids(&self) -> &IdMaps {
        &self.ids
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        self.user_items.iter().map(Vec::len).collect()
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_items];
        for items in &self.user_items {
            for &i in items {
                deg[i] += 1;
            }
        }
        deg
    }

    /// Writes one `user<TAB>item` line per pair using dense indices.
    pub fn write_dense(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.len() * 12);
        for (u, i) in self.pairs() {
            out.push_str(&u.to_string());
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        crate::io::write_atomic(path, out.as_bytes())
    }

    /// Reads a file written by [`InteractionSet::write_dense`] into a known index space.
    pub fn load_dense(path: &Path, num_users: usize, num_items: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let Some((u, i)) = split_fields(line) else {
                continue;
            };
            let parse = |field: &str, bound: usize, what: &str| -> Result<usize> {
                let v: usize = field.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("{what} index `{field}` is not a non-negative integer"),
                })?;
                if v >= bound {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        message: format!("{what} index {v} out of range (< {bound})"),
                    });
                }
                Ok(v)
            };
            let u = parse(u, num_users, "user")?;
            let i = parse(i, num_items, "item")?;
            pairs.push((u, i));
        }
        Self::from_pairs(num_users, num_items, pairs)
    }
}

/// Splits a data line into its first two fields. Comment and blank lines yield `None`,
/// as do lines with a single field (reported by the caller).
fn split_fields(line: &str) -> Option<(&str, &str)> {
    let line = line.trim_end_matches('\r');
    if line.trim().is_empty() || line.starts_with('#') {
        return None;
    }
    let mut fields: Box<dyn Iterator<Item = &str>> = if line.contains('\t') {
        Box::new(line.split('\t').map(str::trim))
    } else {
        Box::new(line.split_whitespace())
    };
    let a = fields.next()?;
    let b = fields.next()?;
    Some((a, b))
}

/// Loads `raw_user<TAB>raw_item[<TAB>...]` lines, assigning dense indices in
/// order of first appearance. Extra columns (ratings, timestamps) are ignored.
pub fn load_interactions(path: &Path) -> Result<InteractionSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, path)
}

pub fn parse_interactions(text: &str, path: &Path) -> Result<InteractionSet> {
    let mut users: Vec<String> = Vec::new();
    let mut items: Vec<String> = Vec::new();
    let mut user_lookup: HashMap<String, usize> = HashMap::new();
    let mut item_lookup: HashMap<String, usize> = HashMap::new();
    let mut pairs = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (raw_user, raw_item) = match split_fields(line) {
            Some((u, i)) if !u.is_empty() && !i.is_empty() => (u, i),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: "expected `user<TAB>item`".into(),
                })
            }
        };
        let u = *user_lookup.entry(raw_user.to_string()).or_insert_with(|| {
            users.push(raw_user.to_string());
            users.len() - 1
        });
        let i = *item_lookup.entry(raw_item.to_string()).or_insert_with(|| {
            items.push(raw_item.to_string());
            items.len() - 1
        });
        pairs.push((u, i));
    }

    if pairs.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    let ids = Arc::new(IdMaps::new(users, items));
    InteractionSet::with_ids(ids.users.len(), ids.items.len(), pairs, ids)
}

/// Repeatedly drops users and items with fewer than `k` interactions until every
/// survivor has at least `k`, then re-densifies both index spaces preserving order.
pub fn filter_k_core(set: &InteractionSet, k: usize) -> InteractionSet {
    assert!(k >= 1, "k-core requires k >= 1");
    let mut user_alive = vec![true; set.num_users];
    let mut item_alive = vec![true; set.num_items];

    loop {
        let mut user_deg = vec![0usize; set.num_users];
        let mut item_deg = vec![0usize; set.num_items];
        for (u, i) in set.pairs() {
            if user_alive[u] && item_alive[i] {
                user_deg[u] += 1;
                item_deg[i] += 1;
            }
        }
        let mut changed = false;
        for (alive, &deg) in user_alive.iter_mut().zip(&user_deg) {
            if *alive && deg < k {
                *alive = false;
                changed = true;
            }
        }
        for (alive, &deg) in item_alive.iter_mut().zip(&item_deg) {
            if *alive && deg < k {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let remap = |alive: &[bool]| -> Vec<Option<usize>> {
        let mut next = 0;
        alive
            .iter()
            .map(|&a| {
                a.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let user_map = remap(&user_alive);
    let item_map = remap(&item_alive);

    let users: Vec<String> = set
        .ids
        .users
        .iter()
        .zip(&user_alive)
        .filter(|(_, &a)| a)
        .map(|(id, _)| id.clone())
        .collect();
    let items: Vec<String> = set
        .ids
        .items
        .iter()
        .zip(&item_alive)
        .filter(|(_, &a)| a)
        .map(|(id, _)| id.clone())
        .collect();

    let pairs: Vec<(usize, usize)> = set
        .pairs()
        .filter_map(|(u, i)| Some((user_map[u]?, item_map[i]?)))
        .collect();
    let ids = Arc::new(IdMaps::new(users, items));
    InteractionSet::with_ids(ids.users.len(), ids.items.len(), pairs, ids)
        .expect("re-densified indices are in range")
}

/// Fractions of each user's interactions assigned to (train, validation, test).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: InteractionSet,
    pub valid: InteractionSet,
    pub test: InteractionSet,
    pub seed: u64,
}

impl Split {
    pub fn num_users(&self) -> usize {
        self.train.num_users
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items
    }
}

/// Shuffles each user's interactions with a seeded RNG and cuts them into
/// `floor(valid·n)` validation, `floor(test·n)` test and the remainder for training.
pub fn split_per_user(set: &InteractionSet, ratios: SplitRatios, seed: u64) -> Result<Split> {
    let total = ratios.train + ratios.valid + ratios.test;
    if (total - 1.0).abs() > 1e-9 || ratios.train < 0.0 || ratios.valid < 0.0 || ratios.test < 0.0
    {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(set.len());
    let mut valid = Vec::new();
    let mut test = Vec::new();

    for (u, items) in set.user_items.iter().enumerate() {
        if items.is_empty() {
            return Err(Error::ZeroDegree(format!("user {u}")));
        }
        let n = items.len();
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut rng);
        let mut n_valid = (ratios.valid * n as f64).floor() as usize;
        let mut n_test = (ratios.test * n as f64).floor() as usize;
        while n_valid + n_test >= n {
            // keep at least one training interaction
            if n_test >= n_valid && n_test > 0 {
                n_test -= 1;
            } else {
                n_valid -= 1;
            }
        }
        let (v, rest) = shuffled.split_at(n_valid);
        let (t, tr) = rest.split_at(n_test);
        valid.extend(v.iter().map(|&i| (u, i)));
        test.extend(t.iter().map(|&i| (u, i)));
        train.extend(tr.iter().map(|&i| (u, i)));
    }

    let build = |pairs: Vec<(usize, usize)>| {
        InteractionSet::with_ids(set.num_users, set.num_items, pairs, set.ids.clone())
    };
    Ok(Split {
        train: build(train)?,
        valid: build(valid)?,
        test: build(test)?,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityTable {
    pub item_pop: Vec<usize>,
    pub user_pop: Vec<usize>,
}

pub fn compute_popularity(train: &InteractionSet) -> PopularityTable {
    PopularityTable {
        item_pop: train.item_degrees(),
        user_pop: train.user_degrees(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Popular,
    Tail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub user_group: Vec<Group>,
    pub item_group: Vec<Group>,
    pub top_fraction: f64,
}

impl GroupAssignment {
    pub fn popular_users(&self) -> Vec<usize> {
        members(&self.user_group, Group::Popular)
    }

    pub fn tail_users(&self) -> Vec<usize> {
        members(&self.user_group, Group::Tail)
    }

    pub fn popular_items(&self) -> Vec<usize> {
        members(&self.item_group, Group::Popular)
    }

    pub fn tail_items(&self) -> Vec<usize> {
        members(&self.item_group, Group::Tail)
    }

    pub fn is_popular_user(&self, u: usize) -> bool {
        self.user_group[u] == Group::Popular
    }

    pub fn is_popular_item(&self, i: usize) -> bool {
        self.item_group[i] == Group::Popular
    }
}

fn members(groups: &[Group], which: Group) -> Vec<usize> {
    groups
        .iter()
        .enumerate()
        .filter(|(_, &g)| g == which)
        .map(|(k, _)| k)
        .collect()
}

/// Flags the `round(f·count)` most frequent entities on each side as popular.
/// Ties are broken by ascending index.
pub fn assign_groups(pop: &PopularityTable, top_fraction: f64) -> Result<GroupAssignment> {
    if !(top_fraction > 0.0 && top_fraction < 1.0) {
        return Err(Error::Config(format!(
            "top_fraction must lie in (0, 1), got {top_fraction}"
        )));
    }
    Ok(GroupAssignment {
        user_group: top_by_count(&pop.user_pop, top_fraction),
        item_group: top_by_count(&pop.item_pop, top_fraction),
        top_fraction,
    })
}

fn top_by_count(counts: &[usize], fraction: f64) -> Vec<Group> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let n_popular = (fraction * counts.len() as f64).round() as usize;
    let mut groups = vec![Group::Tail; counts.len()];
    for &k in &order[..n_popular.min(counts.len())] {
        groups[k] = Group::Popular;
    }
    groups
}

/// Everything `prepare` records next to the split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(rename = "M")]
    pub num_users: usize,
    #[serde(rename = "N")]
    pub num_items: usize,
    pub seed: u64,
    pub top_fraction: f64,
    pub num_train: usize,
    pub num_valid: usize,
    pub num_test: usize,
    pub user_group: Vec<Group>,
    pub item_group: Vec<Group>,
    pub user_pop: Vec<usize>,
    pub item_pop: Vec<usize>,
}

impl Manifest {
    pub fn new(split: &Split, pop: &PopularityTable, groups: &GroupAssignment) -> Self {
        Manifest {
            num_users: split.num_users(),
            num_items: split.num_items(),
            seed: split.seed,
            top_fraction: groups.top_fraction,
            num_train: split.train.len(),
            num_valid: split.valid.len(),
            num_test: split.test.len(),
            user_group: groups.user_group.clone(),
            item_group: groups.item_group.clone(),
            user_pop: pop.user_pop.clone(),
            item_pop: pop.item_pop.clone(),
        }
    }

    pub fn groups(&self) -> GroupAssignment {
        GroupAssignment {
            user_group: self.user_group.clone(),
            item_group: self.item_group.clone(),
            top_fraction: self.top_fraction,
        }
    }

    pub fn popularity(&self) -> PopularityTable {
        PopularityTable {
            item_pop: self.item_pop.clone(),
            user_pop: self.user_pop.clone(),
        }
    }
}
