//! Model documents:
//!
//! ```text
//! { "kind": "pt", "m": int, "d": int, "root": node, "config": {...}? }
//! node = { "split": { "feature": int, "threshold": float }, "left": node, "right": node }
//!      | { "leaf": { "treatment": int, "counts": [int], "means": [float|null] } }
//! ```
//!
//! Floats are written as shortest round-trip decimals, so documents
//! reproduce thresholds bit for bit.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Leaf, PersonalizationTree, PtConfig, PtError, TreeNode};

#[derive(Debug, Serialize, Deserialize)]
struct RawSplit {
    feature: usize,
    threshold: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLeaf {
    treatment: usize,
    counts: Vec<usize>,
    means: Vec<Option<f64>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawNode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<RawSplit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<Box<RawNode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<Box<RawNode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leaf: Option<RawLeaf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct RawTree {
    kind: String,
    m: usize,
    d: usize,
    root: RawNode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<PtConfig>,
}

/// Parses `text` into `T`, reporting the JSON path of the first error.
pub(crate) fn parse_doc<T: DeserializeOwned>(text: &str) -> Result<T, PtError> {
    let mut de = serde_json::Deserializer::from_str(text);
    de.disable_recursion_limit();
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| PtError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| PtError::Parse {
        path: ".".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn invalid(path: &str, message: impl Into<String>) -> PtError {
    PtError::Validation {
        path: path.to_string(),
        message: message.into(),
    }
}

fn node_to_raw(node: &TreeNode) -> RawNode {
    match node {
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => RawNode {
            split: Some(RawSplit {
                feature: *feature,
                threshold: *threshold,
            }),
            left: Some(Box::new(node_to_raw(left))),
            right: Some(Box::new(node_to_raw(right))),
            leaf: None,
        },
        TreeNode::Leaf(leaf) => RawNode {
            leaf: Some(RawLeaf {
                treatment: leaf.treatment,
                counts: leaf.counts.clone(),
                means: leaf.means.clone(),
            }),
            ..RawNode::default()
        },
    }
}

fn node_from_raw(raw: RawNode, m: usize, d: usize, path: &str) -> Result<TreeNode, PtError> {
    match raw {
        RawNode {
            split: Some(split),
            left: Some(left),
            right: Some(right),
            leaf: None,
        } => {
            if split.feature >= d {
                return Err(invalid(
                    &format!("{path}.split.feature"),
                    format!("feature {} >= d = {d}", split.feature),
                ));
            }
            if !split.threshold.is_finite() {
                return Err(invalid(
                    &format!("{path}.split.threshold"),
                    "threshold must be finite",
                ));
            }
            Ok(TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: Box::new(node_from_raw(*left, m, d, &format!("{path}.left"))?),
                right: Box::new(node_from_raw(*right, m, d, &format!("{path}.right"))?),
            })
        }
        RawNode {
            split: None,
            left: None,
            right: None,
            leaf: Some(leaf),
        } => {
            let lpath = format!("{path}.leaf");
            if leaf.treatment < 1 || leaf.treatment > m {
                return Err(invalid(
                    &format!("{lpath}.treatment"),
                    format!("treatment {} outside 1..={m}", leaf.treatment),
                ));
            }
            if leaf.counts.len() != m || leaf.means.len() != m {
                return Err(invalid(&lpath, format!("counts and means must have length {m}")));
            }
            Ok(TreeNode::Leaf(Leaf {
                treatment: leaf.treatment,
                counts: leaf.counts,
                means: leaf.means,
            }))
        }
        _ => Err(invalid(
            path,
            "node needs either `split` with `left` and `right`, or `leaf`",
        )),
    }
}

impl RawTree {
    pub(crate) fn from_tree(tree: &PersonalizationTree) -> Self {
        RawTree {
            kind: "pt".into(),
            m: tree.m,
            d: tree.d,
            root: node_to_raw(&tree.root),
            config: Some(tree.config),
        }
    }

    pub(crate) fn into_tree(self, path: &str) -> Result<PersonalizationTree, PtError> {
        if self.kind != "pt" {
            return Err(invalid(
                &join(path, "kind"),
                format!("expected \"pt\", got \"{}\"", self.kind),
            ));
        }
        if self.m < 1 {
            return Err(invalid(&join(path, "m"), "m must be >= 1"));
        }
        let root = node_from_raw(self.root, self.m, self.d, &join(path, "root"))?;
        Ok(PersonalizationTree {
            root,
            m: self.m,
            d: self.d,
            config: self.config.unwrap_or_default(),
        })
    }
}

impl PersonalizationTree {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&RawTree::from_tree(self)).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PtError> {
        parse_doc::<RawTree>(text)?.into_tree("")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::pt::fit;

    fn fitted() -> PersonalizationTree {
        let ds = Dataset::new(
            vec![vec![1.0, 0.3], vec![2.0, 0.1], vec![3.0, 0.7], vec![4.0, 0.2]],
            vec![1, 2, 1, 2],
            vec![0.0, 5.0, 5.0, 0.0],
            2,
        )
        .unwrap();
        fit(
            &ds,
            &PtConfig {
                n_min_leaf: 1,
                ..PtConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let tree = fitted();
        let text = tree.to_json();
        assert!(text.starts_with(r#"{"kind":"pt","m":2,"d":2,"root":{"split":"#));
        assert_eq!(PersonalizationTree::from_json(&text).unwrap(), tree);
    }

    #[test]
    fn missing_threshold_is_parse_error() {
        let text = r#"{"kind":"pt","m":2,"d":1,"root":{"split":{"feature":0},
            "left":{"leaf":{"treatment":1,"counts":[1,1],"means":[0.0,1.0]}},
            "right":{"leaf":{"treatment":2,"counts":[1,1],"means":[1.0,0.0]}}}}"#;
        match PersonalizationTree::from_json(text) {
            Err(PtError::Parse { path, message }) => {
                assert_eq!(path, "root.split");
                assert!(message.contains("threshold"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_treatment_is_validation_error() {
        let text = r#"{"kind":"pt","m":2,"d":1,
            "root":{"leaf":{"treatment":0,"counts":[1,1],"means":[0.0,1.0]}}}"#;
        match PersonalizationTree::from_json(text) {
            Err(PtError::Validation { path, .. }) => assert_eq!(path, "root.leaf.treatment"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_kind_rejected() {
        let text = r#"{"kind":"pf","m":2,"d":1,
            "root":{"leaf":{"treatment":1,"counts":[1,1],"means":[0.0,null]}}}"#;
        assert!(matches!(
            PersonalizationTree::from_json(text),
            Err(PtError::Validation { .. })
        ));
    }
}
