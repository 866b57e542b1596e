//! Train / validation / test splitting and positive-class rebalancing.
//!
//! Splits are made at participant level: every sample of a participant goes
//! to the same split. Rebalancing moves positives from validation into
//! training and never touches the test split.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("class {label} has {count} samples, fewer than the {splits} splits")]
    EmptyClass { label: u8, count: usize, splits: usize },
    #[error("need {needed} positives from validation, only {available} available")]
    InsufficientPositives { needed: usize, available: usize },
    #[error("target {target} is below the {current} positives already in training")]
    TargetBelowCurrent { target: usize, current: usize },
    #[error("empty input set")]
    Empty,
    #[error("sample '{0}' appears more than once")]
    DuplicateSample(String),
    #[error("split manifest: {0}")]
    Manifest(String),
}

/// One sample: its id (also the key of its feature files), the participant
/// it came from, and its label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub group_id: String,
    pub label: u8,
}

impl Sample {
    pub fn new(sample_id: impl Into<String>, group_id: impl Into<String>, label: u8) -> Self {
        Self {
            sample_id: sample_id.into(),
            group_id: group_id.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSet {
    items: Vec<Sample>,
}

impl LabeledSet {
    pub fn new(items: Vec<Sample>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for s in &items {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(DatasetError::DuplicateSample(s.sample_id.clone()));
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[Sample] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `(n_negative, n_positive)`
    pub fn counts(&self) -> (usize, usize) {
        let pos = self.items.iter().filter(|s| s.label == 1).count();
        (self.items.len() - pos, pos)
    }

    pub fn n_positive(&self) -> usize {
        self.counts().1
    }

    pub fn n_negative(&self) -> usize {
        self.counts().0
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|s| s.sample_id.as_str())
    }

    /// Synthetic set of anonymous samples with the given class counts; each
    /// sample is its own participant.
    pub fn with_counts(prefix: &str, n_negative: usize, n_positive: usize) -> Self {
        let items = (0..n_negative)
            .map(|i| (format!("{prefix}-neg-{i}"), 0u8))
            .chain((0..n_positive).map(|i| (format!("{prefix}-pos-{i}"), 1u8)))
            .map(|(id, label)| Sample::new(id.clone(), id, label))
            .collect();
        Self { items }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64, seed: u64, stratified: bool) -> Self {
        Self {
            train_frac,
            val_frac,
            test_frac,
            seed,
            stratified,
        }
    }

    /// Train and test fractions must lie in (0, 1). Validation may be 0 for a
    /// two-way split.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let open = |f: f64| f > 0.0 && f < 1.0;
        if !open(self.train_frac) || !open(self.test_frac) {
            return Err(DatasetError::InvalidSpec(
                "train and test fractions must be in (0, 1)".into(),
            ));
        }
        if !(self.val_frac == 0.0 || open(self.val_frac)) {
            return Err(DatasetError::InvalidSpec(
                "validation fraction must be 0 or in (0, 1)".into(),
            ));
        }
        let sum = self.train_frac + self.val_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(DatasetError::InvalidSpec(format!("fractions sum to {sum}")));
        }
        Ok(())
    }

    fn fractions(&self) -> [f64; 3] {
        [self.train_frac, self.val_frac, self.test_frac]
    }

    fn active_splits(&self) -> usize {
        self.fractions().iter().filter(|&&f| f > 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(DatasetError::Manifest(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &LabeledSet {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    /// `(sample_id, split)` rows in train, val, test order.
    pub fn assignments(&self) -> Vec<(String, SplitName)> {
        SplitName::ALL
            .iter()
            .flat_map(|&name| self.get(name).ids().map(move |id| (id.to_string(), name)))
            .collect()
    }

    pub fn write_manifest<W: Write>(&self, writer: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["sample_id", "split"])?;
        for (id, name) in self.assignments() {
            w.write_record([id.as_str(), name.as_str()])?;
        }
        w.flush().map_err(|e| crate::Error::io("split manifest", e))?;
        Ok(())
    }

    /// Rebuilds splits from a persisted manifest, taking labels and groups
    /// from `all`. Samples missing from the manifest are ignored; manifest
    /// rows missing from `all` are an error.
    pub fn from_manifest<R: Read>(reader: R, all: &LabeledSet) -> crate::Result<Self> {
        let by_id: BTreeMap<&str, &Sample> = all.items.iter().map(|s| (s.sample_id.as_str(), s)).collect();
        let mut parts: [Vec<Sample>; 3] = Default::default();
        let mut rdr = csv::Reader::from_reader(reader);
        for row in rdr.records() {
            let row = row?;
            let (id, split) = match (row.get(0), row.get(1)) {
                (Some(id), Some(split)) => (id, split.parse::<SplitName>()?),
                _ => return Err(DatasetError::Manifest("expected sample_id,split".into()).into()),
            };
            let sample = by_id
                .get(id)
                .ok_or_else(|| DatasetError::Manifest(format!("unknown sample '{id}'")))?;
            parts[split as usize].push((*sample).clone());
        }
        let [train, val, test] = parts;
        let splits = Splits {
            train: LabeledSet::new(train)?,
            val: LabeledSet::new(val)?,
            test: LabeledSet::new(test)?,
        };
        let total = splits.train.len() + splits.val.len() + splits.test.len();
        let unique: HashSet<&str> = SplitName::ALL.iter().flat_map(|&n| splits.get(n).ids()).collect();
        if unique.len() != total {
            return Err(DatasetError::Manifest("a sample is assigned to two splits".into()).into());
        }
        Ok(splits)
    }
}

struct Group {
    samples: Vec<Sample>,
    label: u8,
}

fn groups_of(items: &[Sample]) -> Vec<Group> {
    let mut by_group: BTreeMap<&str, Vec<Sample>> = BTreeMap::new();
    for s in items {
        by_group.entry(s.group_id.as_str()).or_default().push(s.clone());
    }
    by_group
        .into_values()
        .map(|mut samples| {
            samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
            let pos = samples.iter().filter(|s| s.label == 1).count();
            // Mixed-label participants are stratified with the majority class.
            let label = u8::from(2 * pos >= samples.len());
            Group { samples, label }
        })
        .collect()
}

/// Assigns groups to splits so each split's sample count tracks its target.
fn allocate(groups: Vec<Group>, fractions: [f64; 3], out: &mut [Vec<Sample>; 3]) {
    let n: usize = groups.iter().map(|g| g.samples.len()).sum();
    let train_t = (n as f64 * fractions[0]).round() as usize;
    let val_t = ((n as f64 * fractions[1]).round() as usize).min(n - train_t.min(n));
    let targets = [train_t.min(n), val_t, n - train_t.min(n) - val_t];
    let mut filled = [0usize; 3];
    for g in groups {
        // Largest remaining deficit wins; ties go to the earlier split.
        let mut best = 0;
        let mut best_deficit = i64::MIN;
        for k in 0..3 {
            if fractions[k] == 0.0 {
                continue;
            }
            let deficit = targets[k] as i64 - filled[k] as i64;
            if deficit > best_deficit {
                best = k;
                best_deficit = deficit;
            }
        }
        filled[best] += g.samples.len();
        out[best].extend(g.samples);
    }
}

/// Seeded, participant-grouped split into train / validation / test.
pub fn split(all: &LabeledSet, spec: &SplitSpec) -> Result<Splits, DatasetError> {
    spec.validate()?;
    if all.is_empty() {
        return Err(DatasetError::Empty);
    }
    let splits = spec.active_splits();
    let (neg, pos) = all.counts();
    for (label, count) in [(0u8, neg), (1u8, pos)] {
        if count < splits {
            return Err(DatasetError::EmptyClass {
                label,
                count,
                splits,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut groups = groups_of(&all.items);
    groups.shuffle(&mut rng);

    let mut parts: [Vec<Sample>; 3] = Default::default();
    if spec.stratified {
        let (pos_groups, neg_groups): (Vec<Group>, Vec<Group>) =
            groups.into_iter().partition(|g| g.label == 1);
        allocate(neg_groups, spec.fractions(), &mut parts);
        allocate(pos_groups, spec.fractions(), &mut parts);
    } else {
        allocate(groups, spec.fractions(), &mut parts);
    }
    let [train, val, test] = parts;
    Ok(Splits {
        train: LabeledSet { items: train },
        val: LabeledSet { items: val },
        test: LabeledSet { items: test },
    })
}

/// Moves positives from `val` into `train` until training holds
/// `target_train_pos` positives. Which positives move is fixed by `seed`;
/// whole participants are moved together where the count allows.
pub fn rebalance(
    train: &LabeledSet,
    val: &LabeledSet,
    target_train_pos: usize,
    seed: u64,
) -> Result<(LabeledSet, LabeledSet), DatasetError> {
    let current = train.n_positive();
    if target_train_pos < current {
        return Err(DatasetError::TargetBelowCurrent {
            target: target_train_pos,
            current,
        });
    }
    let needed = target_train_pos - current;
    let available = val.n_positive();
    if needed > available {
        return Err(DatasetError::InsufficientPositives { needed, available });
    }
    if needed == 0 {
        return Ok((train.clone(), val.clone()));
    }

    let positives: Vec<Sample> = val.items.iter().filter(|s| s.label == 1).cloned().collect();
    let mut groups = groups_of(&positives);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);

    let moved: HashSet<String> = groups
        .into_iter()
        .flat_map(|g| g.samples)
        .take(needed)
        .map(|s| s.sample_id)
        .collect();

    let mut new_train = train.items.clone();
    new_train.extend(val.items.iter().filter(|s| moved.contains(&s.sample_id)).cloned());
    let new_val = val
        .items
        .iter()
        .filter(|s| !moved.contains(&s.sample_id))
        .cloned()
        .collect();
    Ok((LabeledSet { items: new_train }, LabeledSet { items: new_val }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced(n_each: usize) -> LabeledSet {
        LabeledSet::with_counts("s", n_each, n_each)
    }

    #[test]
    fn stratified_counts() {
        let spec = SplitSpec::new(0.7, 0.15, 0.15, 42, true);
        let s = split(&balanced(50), &spec).unwrap();
        let (n, p) = s.train.counts();
        assert!((34..=36).contains(&n) && (34..=36).contains(&p), "{n} {p}");
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 100);
        for part in [&s.val, &s.test] {
            let (n, p) = part.counts();
            assert!(n.abs_diff(p) <= 1);
        }
    }

    #[test]
    fn same_seed_same_split() {
        let spec = SplitSpec::new(0.7, 0.15, 0.15, 9, false);
        let a = split(&balanced(30), &spec).unwrap();
        let b = split(&balanced(30), &spec).unwrap();
        assert_eq!(a, b);
        let c = split(&balanced(30), &SplitSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn participants_stay_together() {
        let mut items = Vec::new();
        for p in 0..40 {
            for r in 0..3 {
                items.push(Sample::new(format!("p{p}-r{r}"), format!("p{p}"), (p % 2) as u8));
            }
        }
        let all = LabeledSet::new(items).unwrap();
        for seed in 0..10 {
            let s = split(&all, &SplitSpec::new(0.6, 0.2, 0.2, seed, true)).unwrap();
            for name in SplitName::ALL {
                for item in s.get(name).items() {
                    for other in SplitName::ALL.iter().filter(|&&o| o != name) {
                        assert!(s.get(*other).items().iter().all(|x| x.group_id != item.group_id));
                    }
                }
            }
        }
    }

    #[test]
    fn too_few_in_a_class() {
        let all = LabeledSet::with_counts("s", 10, 2);
        assert!(matches!(
            split(&all, &SplitSpec::new(0.7, 0.15, 0.15, 1, true)),
            Err(DatasetError::EmptyClass { label: 1, count: 2, splits: 3 })
        ));
        // Two-way split only needs two of each.
        assert!(split(&all, &SplitSpec::new(0.7, 0.0, 0.3, 1, true)).is_ok());
    }

    #[test]
    fn spec_validation() {
        assert!(SplitSpec::new(0.7, 0.2, 0.2, 0, true).validate().is_err());
        assert!(SplitSpec::new(1.0, 0.0, 0.0, 0, true).validate().is_err());
        assert!(SplitSpec::new(0.7, 0.0, 0.3, 0, true).validate().is_ok());
    }

    #[test]
    fn rebalance_reaches_target_exactly() {
        let train = LabeledSet::with_counts("train", 243, 72);
        let val = LabeledSet::with_counts("val", 152, 142);
        let (t, v) = rebalance(&train, &val, 214, 7).unwrap();
        assert_eq!(t.counts(), (243, 214));
        assert_eq!(v.counts(), (152, 0));
    }

    #[test]
    fn rebalance_identity_and_errors() {
        let train = LabeledSet::with_counts("t", 10, 4);
        let val = LabeledSet::with_counts("v", 5, 3);
        let (t, v) = rebalance(&train, &val, 4, 1).unwrap();
        assert_eq!((t, v), (train.clone(), val.clone()));
        assert_eq!(
            rebalance(&train, &val, 8, 1),
            Err(DatasetError::InsufficientPositives { needed: 4, available: 3 })
        );
        assert!(matches!(
            rebalance(&train, &val, 3, 1),
            Err(DatasetError::TargetBelowCurrent { .. })
        ));
    }

    #[test]
    fn manifest_roundtrip() {
        let all = balanced(20);
        let s = split(&all, &SplitSpec::new(0.7, 0.15, 0.15, 3, true)).unwrap();
        let mut buf = Vec::new();
        s.write_manifest(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sample_id,split\n"));
        let back = Splits::from_manifest(buf.as_slice(), &all).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn manifest_rejects_double_assignment() {
        let all = balanced(2);
        let csv = "sample_id,split\ns-neg-0,train\ns-neg-0,test\n";
        assert!(Splits::from_manifest(csv.as_bytes(), &all).is_err());
    }

    proptest! {
        #[test]
        fn rebalance_conserves_samples(
            tn in 0usize..30, tp in 0usize..30, vn in 0usize..30, vp in 0usize..30,
            extra in 0usize..40, seed in any::<u64>()
        ) {
            let train = LabeledSet::with_counts("t", tn, tp);
            let val = LabeledSet::with_counts("v", vn, vp);
            let test = LabeledSet::with_counts("x", 5, 5);
            let target = tp + extra;
            match rebalance(&train, &val, target, seed) {
                Ok((t, v)) => {
                    prop_assert_eq!(t.n_positive(), target);
                    prop_assert_eq!(t.n_negative(), tn);
                    prop_assert_eq!(v.n_negative(), vn);
                    let mut before: Vec<&str> = train.ids().chain(val.ids()).chain(test.ids()).collect();
                    let mut after: Vec<&str> = t.ids().chain(v.ids()).chain(test.ids()).collect();
                    before.sort();
                    after.sort();
                    prop_assert_eq!(before, after);
                }
                Err(DatasetError::InsufficientPositives { needed, available }) => {
                    prop_assert!(needed > available);
                    prop_assert_eq!(available, vp);
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn split_partitions_input(n in 3usize..60, p in 3usize..60, seed in any::<u64>(), strat in any::<bool>()) {
            let all = LabeledSet::with_counts("s", n, p);
            let s = split(&all, &SplitSpec::new(0.7, 0.15, 0.15, seed, strat)).unwrap();
            let mut ids: Vec<&str> = SplitName::ALL.iter().flat_map(|&k| s.get(k).ids()).collect();
            ids.sort();
            let mut orig: Vec<&str> = all.ids().collect();
            orig.sort();
            prop_assert_eq!(ids, orig);
            if strat {
                let expect_pos = p as f64 * 0.7;
                prop_assert!((s.train.n_positive() as f64 - expect_pos).abs() <= 1.0);
            }
        }
    }
}
