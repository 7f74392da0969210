//! Decision-tree advisor from counter features to an SMT multiplier class.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::counters::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SmtClass {
    Smt1,
    Smt2,
    Smt4,
}

impl SmtClass {
    pub const ALL: [SmtClass; 3] = [SmtClass::Smt1, SmtClass::Smt2, SmtClass::Smt4];

    pub fn multiplier(self) -> u32 {
        match self {
            SmtClass::Smt1 => 1,
            SmtClass::Smt2 => 2,
            SmtClass::Smt4 => 4,
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// Class of a thread count relative to the core count: up to `cores` is
    /// SMT1, up to `2·cores` SMT2, anything above SMT4.
    pub fn from_threads(threads: u32, cores: u32) -> SmtClass {
        if threads <= cores {
            SmtClass::Smt1
        } else if threads <= 2 * cores {
            SmtClass::Smt2
        } else {
            SmtClass::Smt4
        }
    }
}

impl fmt::Display for SmtClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SMT{}", self.multiplier())
    }
}

impl FromStr for SmtClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "SMT1" => Ok(SmtClass::Smt1),
            "SMT2" => Ok(SmtClass::Smt2),
            "SMT4" => Ok(SmtClass::Smt4),
            _ => Err(format!("unknown class `{s}` (expected SMT1, SMT2 or SMT4)")),
        }
    }
}

/// Threads to request for a class on a machine with `cores` cores.
pub fn recommend_threads(class: SmtClass, cores: u32) -> u32 {
    class.multiplier() * cores
}

#[derive(Debug, Error, PartialEq)]
pub enum AdvisorError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {index}: {message}")]
    InvalidSample { index: usize, message: String },
    #[error("tree line {line}: {message}")]
    TreeSyntax { line: usize, message: String },
    #[error("dataset line {line}: {message}")]
    DatasetSyntax { line: usize, message: String },
    #[error("feature `{0}` is required but missing")]
    MissingFeature(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    /// Values in the dataset's feature order.
    pub values: Vec<f64>,
    pub label: SmtClass,
    pub weight: f64,
}

impl LabeledSample {
    pub fn new(values: Vec<f64>, label: SmtClass) -> Self {
        LabeledSample {
            values,
            label,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<String>,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(features: Vec<String>, samples: Vec<LabeledSample>) -> Self {
        Dataset { features, samples }
    }

    /// Dataset over the canonical feature vector fields.
    pub fn from_vectors(samples: impl IntoIterator<Item = (FeatureVector, SmtClass)>) -> Self {
        Dataset {
            features: FeatureVector::NAMES.iter().map(|s| s.to_string()).collect(),
            samples: samples
                .into_iter()
                .map(|(fv, label)| LabeledSample::new(fv.to_array().to_vec(), label))
                .collect(),
        }
    }

    fn validate(&self) -> Result<(), AdvisorError> {
        if self.samples.is_empty() {
            return Err(AdvisorError::EmptyDataset);
        }
        for (index, s) in self.samples.iter().enumerate() {
            let bad = |message: String| AdvisorError::InvalidSample { index, message };
            if s.values.len() != self.features.len() {
                return Err(bad(format!(
                    "{} values for {} features",
                    s.values.len(),
                    self.features.len()
                )));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite feature value".into()));
            }
            if !(s.weight > 0.0 && s.weight.is_finite()) {
                return Err(bad(format!("weight must be positive, got {}", s.weight)));
            }
        }
        Ok(())
    }

    /// Splits off the last `ceil(n · fraction)` samples for evaluation,
    /// keeping at least one training sample.
    pub fn holdout(&self, fraction: f64) -> (Dataset, Dataset) {
        let n = self.samples.len();
        let k = ((n as f64 * fraction.clamp(0.0, 1.0)).ceil() as usize).min(n.saturating_sub(1));
        let (train, test) = self.samples.split_at(n - k);
        (
            Dataset::new(self.features.clone(), train.to_vec()),
            Dataset::new(self.features.clone(), test.to_vec()),
        )
    }

    /// `pdtdataset v1` header, optionally followed by feature names; then one
    /// sample per line: values in feature order, then the label.
    pub fn parse(text: &str) -> Result<Self, AdvisorError> {
        let err = |line: usize, message: String| AdvisorError::DatasetSyntax { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hl, header) = lines.next().ok_or(AdvisorError::EmptyDataset)?;
        let mut head = header.split_whitespace();
        if head.next() != Some("pdtdataset") || head.next() != Some("v1") {
            return Err(err(hl, format!("bad dataset header `{header}`")));
        }
        let mut features: Vec<String> = head.map(str::to_string).collect();
        if features.is_empty() {
            features = FeatureVector::NAMES.iter().map(|s| s.to_string()).collect();
        }
        let mut samples = Vec::new();
        for (ln, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != features.len() + 1 {
                return Err(err(
                    ln,
                    format!(
                        "expected {} values and a label, found {} fields",
                        features.len(),
                        fields.len()
                    ),
                ));
            }
            let values = fields[..features.len()]
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(ln, format!("bad value `{s}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let label = fields[features.len()].parse().map_err(|m| err(ln, m))?;
            samples.push(LabeledSample::new(values, label));
        }
        if samples.is_empty() {
            return Err(AdvisorError::EmptyDataset);
        }
        Ok(Dataset { features, samples })
    }

    pub fn emit(&self) -> String {
        let mut out = format!("pdtdataset v1 {}\n", self.features.join(" "));
        for s in &self.samples {
            for v in &s.values {
                let _ = write!(out, "{v} ");
            }
            let _ = writeln!(out, "{}", s.label);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            max_depth: Some(4),
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// `value <= threshold` goes left.
    Split {
        feature: String,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        class: SmtClass,
        /// Weight per class, in SMT1, SMT2, SMT4 order.
        counts: [f64; 3],
    },
}

impl Node {
    fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub root: Node,
}

/// Weighted Gini impurity of a class-weight vector.
pub fn gini(counts: &[f64; 3]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

/// Weighted impurity of a two-way partition.
pub fn split_impurity(left: &[f64; 3], right: &[f64; 3]) -> f64 {
    let wl: f64 = left.iter().sum();
    let wr: f64 = right.iter().sum();
    (wl * gini(left) + wr * gini(right)) / (wl + wr)
}

/// Threshold strictly between `a < b`, as close to the midpoint as floats allow.
pub fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

fn class_counts(samples: &[&LabeledSample]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for s in samples {
        c[s.label.index()] += s.weight;
    }
    c
}

/// Heaviest class; ties go to the lower class.
fn majority(counts: &[f64; 3]) -> SmtClass {
    let mut best = 0;
    for k in 1..3 {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    SmtClass::ALL[best]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    pub impurity: f64,
}

/// Lowest-impurity split over all features and midpoints that leaves at
/// least `min_leaf` samples on each side. Ties keep the earlier feature,
/// then the lower threshold.
pub fn best_split(samples: &[&LabeledSample], n_features: usize, min_leaf: usize) -> Option<BestSplit> {
    let min_leaf = min_leaf.max(1);
    let total = class_counts(samples);
    let mut best: Option<BestSplit> = None;
    for f in 0..n_features {
        let mut order: Vec<&LabeledSample> = samples.to_vec();
        order.sort_by(|a, b| a.values[f].total_cmp(&b.values[f]));
        let mut left = [0.0; 3];
        for i in 0..order.len() - 1 {
            left[order[i].label.index()] += order[i].weight;
            let (a, b) = (order[i].values[f], order[i + 1].values[f]);
            if a == b || i + 1 < min_leaf || order.len() - (i + 1) < min_leaf {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1], total[2] - left[2]];
            let impurity = split_impurity(&left, &right);
            if best.is_none_or(|b| impurity < b.impurity) {
                best = Some(BestSplit {
                    feature: f,
                    threshold: midpoint(a, b),
                    impurity,
                });
            }
        }
    }
    best
}

fn grow(samples: &[&LabeledSample], features: &[String], params: &TrainParams, depth: usize) -> Node {
    let counts = class_counts(samples);
    let leaf = || Node::Leaf {
        class: majority(&counts),
        counts,
    };
    let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
    if pure || params.max_depth.is_some_and(|d| depth >= d) {
        return leaf();
    }
    let Some(split) = best_split(samples, features.len(), params.min_samples_leaf) else {
        return leaf();
    };
    let (l, r): (Vec<&LabeledSample>, Vec<&LabeledSample>) =
        samples.iter().partition(|s| s.values[split.feature] <= split.threshold);
    Node::Split {
        feature: features[split.feature].clone(),
        threshold: split.threshold,
        left: Box::new(grow(&l, features, params, depth + 1)),
        right: Box::new(grow(&r, features, params, depth + 1)),
    }
}

/// Greedy top-down induction with weighted Gini impurity.
pub fn train(data: &Dataset, params: &TrainParams) -> Result<DecisionTree, AdvisorError> {
    data.validate()?;
    let refs: Vec<&LabeledSample> = data.samples.iter().collect();
    Ok(DecisionTree {
        root: grow(&refs, &data.features, params, 0),
    })
}

impl DecisionTree {
    pub fn leaf(class: SmtClass) -> Self {
        let mut counts = [0.0; 3];
        counts[class.index()] = 1.0;
        DecisionTree {
            root: Node::Leaf { class, counts },
        }
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Routes using `lookup` for feature values.
    pub fn predict_with(&self, lookup: impl Fn(&str) -> Option<f64>) -> Result<SmtClass, AdvisorError> {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { class, .. } => return Ok(*class),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = lookup(feature).ok_or_else(|| AdvisorError::MissingFeature(feature.clone()))?;
                    node = if v <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, features: &FeatureVector) -> Result<SmtClass, AdvisorError> {
        self.predict_with(|name| features.get(name))
    }

    pub fn predict_row(&self, names: &[String], values: &[f64]) -> Result<SmtClass, AdvisorError> {
        self.predict_with(|name| {
            names
                .iter()
                .position(|n| n == name)
                .and_then(|i| values.get(i).copied())
        })
    }

    /// Fraction of samples whose predicted class equals the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64, AdvisorError> {
        if data.samples.is_empty() {
            return Err(AdvisorError::EmptyDataset);
        }
        let mut hits = 0;
        for s in &data.samples {
            if self.predict_row(&data.features, &s.values)? == s.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.samples.len() as f64)
    }

    /// Preorder lines: `node <feature> <threshold>` or
    /// `leaf <class> <smt1> <smt2> <smt4>`.
    pub fn export(&self) -> String {
        fn walk(n: &Node, out: &mut String) {
            match n {
                Node::Leaf { class, counts } => {
                    let _ = writeln!(out, "leaf {class} {} {} {}", counts[0], counts[1], counts[2]);
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let _ = writeln!(out, "node {feature} {threshold}");
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        let mut out = String::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn import(text: &str) -> Result<Self, AdvisorError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let mut pos = 0;
        let root = read_node(&lines, &mut pos, text.lines().count() + 1)?;
        if let Some((line, _)) = lines.get(pos) {
            return Err(AdvisorError::TreeSyntax {
                line: *line,
                message: "trailing lines after a complete tree".into(),
            });
        }
        Ok(DecisionTree { root })
    }
}

fn read_node(lines: &[(usize, &str)], pos: &mut usize, eof_line: usize) -> Result<Node, AdvisorError> {
    let Some(&(line, text)) = lines.get(*pos) else {
        return Err(AdvisorError::TreeSyntax {
            line: eof_line,
            message: "unexpected end of tree".into(),
        });
    };
    *pos += 1;
    let err = |message: String| AdvisorError::TreeSyntax { line, message };
    let num = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(format!("bad number `{s}`")))
    };
    let fields: Vec<&str> = text.split_whitespace().collect();
    match fields.as_slice() {
        ["node", feature, threshold] => {
            let threshold = num(threshold)?;
            let left = read_node(lines, pos, eof_line)?;
            let right = read_node(lines, pos, eof_line)?;
            Ok(Node::Split {
                feature: feature.to_string(),
                threshold,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
        ["leaf", class, c1, c2, c4] => {
            let counts = [num(c1)?, num(c2)?, num(c4)?];
            if counts.iter().any(|&c| c < 0.0) {
                return Err(err("negative class count".into()));
            }
            Ok(Node::Leaf {
                class: class.parse().map_err(err)?,
                counts,
            })
        }
        _ => Err(err(format!(
            "expected `node <feature> <threshold>` or `leaf <class> <counts>`, found `{text}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[(&[f64], SmtClass)]) -> Dataset {
        let n = rows[0].0.len();
        Dataset::new(
            (0..n).map(|i| format!("f{i}")).collect(),
            rows.iter().map(|(v, c)| LabeledSample::new(v.to_vec(), *c)).collect(),
        )
    }

    fn ipc_tree() -> DecisionTree {
        let data = Dataset::new(
            vec!["ipc".into()],
            vec![
                LabeledSample::new(vec![0.5], SmtClass::Smt1),
                LabeledSample::new(vec![2.0], SmtClass::Smt4),
            ],
        );
        train(
            &data,
            &TrainParams {
                max_depth: Some(1),
                min_samples_leaf: 1,
            },
        )
        .unwrap()
    }

    #[test]
    fn depth_one_ipc_split() {
        let t = ipc_tree();
        match &t.root {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                assert_eq!(feature, "ipc");
                assert_eq!(*threshold, 1.25);
                assert!(matches!(
                    **left,
                    Node::Leaf {
                        class: SmtClass::Smt1,
                        ..
                    }
                ));
                assert!(matches!(
                    **right,
                    Node::Leaf {
                        class: SmtClass::Smt4,
                        ..
                    }
                ));
            }
            other => panic!("expected a split, got {other:?}"),
        }
        let fv = |ipc| FeatureVector::from_array([ipc, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.predict(&fv(0.4)).unwrap(), SmtClass::Smt1);
        assert_eq!(t.predict(&fv(1.25)).unwrap(), SmtClass::Smt1);
        assert_eq!(t.predict(&fv(1.2500001)).unwrap(), SmtClass::Smt4);
    }

    #[test]
    fn single_label_gives_single_leaf() {
        let d = ds(&[(&[1.0], SmtClass::Smt2), (&[3.0], SmtClass::Smt2)]);
        let t = train(&d, &TrainParams::default()).unwrap();
        assert_eq!(
            t.root,
            Node::Leaf {
                class: SmtClass::Smt2,
                counts: [0.0, 2.0, 0.0]
            }
        );
        assert_eq!(t.export().lines().count(), 1);
        assert_eq!(
            DecisionTree::leaf(SmtClass::Smt2)
                .predict(&FeatureVector::from_array([9.0; 5]))
                .unwrap(),
            SmtClass::Smt2
        );
    }

    #[test]
    fn majority_ties_go_to_lower_class() {
        let d = ds(&[(&[1.0], SmtClass::Smt4), (&[1.0], SmtClass::Smt2)]);
        let t = train(&d, &TrainParams::default()).unwrap();
        assert!(matches!(
            t.root,
            Node::Leaf {
                class: SmtClass::Smt2,
                ..
            }
        ));
    }

    #[test]
    fn empty_dataset_errors() {
        assert_eq!(
            train(&Dataset::new(vec!["a".into()], vec![]), &TrainParams::default()),
            Err(AdvisorError::EmptyDataset)
        );
    }

    #[test]
    fn min_samples_leaf_blocks_small_splits() {
        let d = ds(&[
            (&[1.0], SmtClass::Smt1),
            (&[2.0], SmtClass::Smt4),
            (&[3.0], SmtClass::Smt4),
        ]);
        let p = TrainParams {
            max_depth: None,
            min_samples_leaf: 2,
        };
        assert!(matches!(
            train(&d, &p).unwrap().root,
            Node::Leaf {
                class: SmtClass::Smt4,
                ..
            }
        ));
    }

    #[test]
    fn recommend() {
        assert_eq!(recommend_threads(SmtClass::Smt2, 32), 64);
        assert_eq!(recommend_threads(SmtClass::Smt1, 1), 1);
        assert_eq!(recommend_threads(SmtClass::Smt4, 32), 128);
        assert_eq!(SmtClass::from_threads(64, 32), SmtClass::Smt2);
        assert!(SmtClass::Smt1 < SmtClass::Smt2 && SmtClass::Smt2 < SmtClass::Smt4);
    }

    #[test]
    fn tree_text_round_trip_and_errors() {
        let d = ds(&[
            (&[0.1, 5.0], SmtClass::Smt1),
            (&[0.7, 1.0], SmtClass::Smt2),
            (&[0.3, 2.0], SmtClass::Smt4),
            (&[0.9, 9.0], SmtClass::Smt1),
        ]);
        let t = train(
            &d,
            &TrainParams {
                max_depth: None,
                min_samples_leaf: 1,
            },
        )
        .unwrap();
        assert_eq!(DecisionTree::import(&t.export()).unwrap(), t);
        assert_eq!(t.accuracy(&d).unwrap(), 1.0);
        let e = DecisionTree::import("node ipc 1.0\nleaf SMT1 1 0 0\nbogus\n").unwrap_err();
        assert!(matches!(e, AdvisorError::TreeSyntax { line: 3, .. }));
        assert!(matches!(
            DecisionTree::import("node ipc 1.0\n"),
            Err(AdvisorError::TreeSyntax { .. })
        ));
        assert!(matches!(
            DecisionTree::import("leaf SMT3 1 0 0\n"),
            Err(AdvisorError::TreeSyntax { line: 1, .. })
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let text = "pdtdataset v1 ipc l2_mpki\n# comment\n0.5 1.0 SMT1\n2.0 0.1 SMT4\n";
        let d = Dataset::parse(text).unwrap();
        assert_eq!(d.features, vec!["ipc", "l2_mpki"]);
        assert_eq!(Dataset::parse(&d.emit()).unwrap(), d);
        let canon = Dataset::parse("pdtdataset v1\n1 2 3 4 5 SMT2\n").unwrap();
        assert_eq!(canon.features.len(), 5);
        assert!(matches!(
            Dataset::parse("pdtdataset v1 a\n1 2 SMT1\n"),
            Err(AdvisorError::DatasetSyntax { line: 2, .. })
        ));
        assert!(matches!(
            Dataset::parse("pdtdataset v1 a\n"),
            Err(AdvisorError::EmptyDataset)
        ));
    }

    #[test]
    fn holdout_keeps_a_training_sample() {
        let d = ds(&[
            (&[1.0], SmtClass::Smt1),
            (&[2.0], SmtClass::Smt2),
            (&[3.0], SmtClass::Smt4),
        ]);
        let (tr, te) = d.holdout(0.3);
        assert_eq!((tr.samples.len(), te.samples.len()), (2, 1));
        let (tr, te) = d.holdout(1.0);
        assert_eq!((tr.samples.len(), te.samples.len()), (1, 2));
    }

    #[test]
    fn midpoint_stays_below_upper_value() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a <= m && m < b);
    }
}
