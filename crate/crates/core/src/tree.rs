//! Hard CSG parse trees: extraction from a converged model, exact Boolean
//! evaluation, and the JSON document format.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{ForwardOutput, SelectionRecord};
use crate::sdf::{Primitive, PrimitiveKind};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsgOp {
    Union,
    Intersection,
    /// Ordered: left minus right.
    Difference,
}

impl CsgOp {
    pub fn name(self) -> &'static str {
        match self {
            CsgOp::Union => "union",
            CsgOp::Intersection => "intersection",
            CsgOp::Difference => "difference",
        }
    }

    fn from_name(s: &str) -> Option<CsgOp> {
        match s {
            "union" => Some(CsgOp::Union),
            "intersection" => Some(CsgOp::Intersection),
            "difference" => Some(CsgOp::Difference),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CsgNode {
    Leaf(Primitive),
    Op {
        op: CsgOp,
        left: Box<CsgNode>,
        right: Box<CsgNode>,
    },
}

/// A pruned binary operator tree over primitives. The root of an
/// extracted tree is always the forced final union.
#[derive(Debug, Clone, PartialEq)]
pub struct CsgTree {
    pub root: CsgNode,
}

impl CsgTree {
    pub fn dim(&self) -> usize {
        fn walk(n: &CsgNode) -> usize {
            match n {
                CsgNode::Leaf(p) => p.dim(),
                CsgNode::Op { left, .. } => walk(left),
            }
        }
        walk(&self.root)
    }

    pub fn leaf_count(&self) -> usize {
        fn walk(n: &CsgNode) -> usize {
            match n {
                CsgNode::Leaf(_) => 1,
                CsgNode::Op { left, right, .. } => walk(left) + walk(right),
            }
        }
        walk(&self.root)
    }

    pub fn depth(&self) -> usize {
        fn walk(n: &CsgNode) -> usize {
            match n {
                CsgNode::Leaf(_) => 0,
                CsgNode::Op { left, right, .. } => 1 + walk(left).max(walk(right)),
            }
        }
        walk(&self.root)
    }

    /// Node count at each depth below the root (depth 0 = root).
    pub fn nodes_per_depth(&self) -> Vec<usize> {
        fn walk(n: &CsgNode, d: usize, counts: &mut Vec<usize>) {
            if counts.len() <= d {
                counts.resize(d + 1, 0);
            }
            counts[d] += 1;
            if let CsgNode::Op { left, right, .. } = n {
                walk(left, d + 1, counts);
                walk(right, d + 1, counts);
            }
        }
        let mut counts = Vec::new();
        walk(&self.root, 0, &mut counts);
        counts
    }

    /// Hard membership at a point.
    pub fn evaluate(&self, x: &[f64]) -> Result<bool> {
        fn walk(n: &CsgNode, x: &[f64]) -> Result<bool> {
            match n {
                CsgNode::Leaf(p) => p.contains(x),
                CsgNode::Op { op, left, right } => {
                    let l = walk(left, x)?;
                    let r = walk(right, x)?;
                    Ok(match op {
                        CsgOp::Union => l || r,
                        CsgOp::Intersection => l && r,
                        CsgOp::Difference => l && !r,
                    })
                }
            }
        }
        walk(&self.root, x)
    }

    /// Membership over every cell center of a `res^dim` grid, row-major
    /// (x fastest).
    pub fn evaluate_grid(&self, res: usize) -> Result<Vec<bool>> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(res.pow(dim as u32));
        let step = 1.0 / res as f64;
        let coord = |i: usize| (i as f64 + 0.5) * step;
        if dim == 2 {
            for y in 0..res {
                for x in 0..res {
                    out.push(self.evaluate(&[coord(x), coord(y)])?);
                }
            }
        } else {
            for z in 0..res {
                for y in 0..res {
                    for x in 0..res {
                        out.push(self.evaluate(&[coord(x), coord(y), coord(z)])?);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Value {
        fn emit(n: &CsgNode) -> Value {
            match n {
                CsgNode::Leaf(p) => json!({
                    "primitive": p.kind.name(),
                    "params": p.params,
                    "translation": p.translation,
                    "rotation": p.rotation,
                }),
                CsgNode::Op { op, left, right } => json!({
                    "op": op.name(),
                    "left": emit(left),
                    "right": emit(right),
                }),
            }
        }
        emit(&self.root)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("tree serializes")
    }

    pub fn from_json(value: &Value) -> Result<CsgTree> {
        let root = parse_node(value, "$")?;
        let tree = CsgTree { root };
        check_uniform_dim(&tree)?;
        Ok(tree)
    }

    pub fn from_json_str(text: &str) -> Result<CsgTree> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::TreeFormat {
                path: "$".into(),
                reason: format!("invalid JSON: {e}"),
            })?;
        Self::from_json(&value)
    }
}

fn check_uniform_dim(tree: &CsgTree) -> Result<()> {
    fn walk(n: &CsgNode, dim: usize, path: String) -> Result<()> {
        match n {
            CsgNode::Leaf(p) => {
                if p.dim() != dim {
                    return Err(Error::TreeFormat {
                        path,
                        reason: format!(
                            "primitive dimensionality {} conflicts with tree dimensionality {}",
                            p.dim(),
                            dim
                        ),
                    });
                }
                Ok(())
            }
            CsgNode::Op { left, right, .. } => {
                walk(left, dim, format!("{path}.left"))?;
                walk(right, dim, format!("{path}.right"))
            }
        }
    }
    walk(&tree.root, tree.dim(), "$".into())
}

fn field<'v>(map: &'v Map<String, Value>, key: &str, path: &str) -> Result<&'v Value> {
    map.get(key).ok_or_else(|| Error::TreeFormat {
        path: path.into(),
        reason: format!("missing field `{key}`"),
    })
}

fn number_array(v: &Value, path: &str) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| Error::TreeFormat {
        path: path.into(),
        reason: "expected an array of numbers".into(),
    })?;
    let mut out = Vec::with_capacity(arr.len());
    for (i, item) in arr.iter().enumerate() {
        let n = item.as_f64().ok_or_else(|| Error::TreeFormat {
            path: format!("{path}[{i}]"),
            reason: "expected a finite number".into(),
        })?;
        if !n.is_finite() {
            return Err(Error::TreeFormat {
                path: format!("{path}[{i}]"),
                reason: "expected a finite number".into(),
            });
        }
        out.push(n);
    }
    Ok(out)
}

fn parse_node(v: &Value, path: &str) -> Result<CsgNode> {
    let map = v.as_object().ok_or_else(|| Error::TreeFormat {
        path: path.into(),
        reason: "expected an object".into(),
    })?;
    if map.contains_key("op") {
        let op_name = field(map, "op", path)?;
        let op_str = op_name.as_str().ok_or_else(|| Error::TreeFormat {
            path: format!("{path}.op"),
            reason: "expected a string".into(),
        })?;
        let op = CsgOp::from_name(op_str).ok_or_else(|| Error::TreeFormat {
            path: format!("{path}.op"),
            reason: format!("unknown operator `{op_str}`"),
        })?;
        let left = parse_node(field(map, "left", path)?, &format!("{path}.left"))?;
        let right = parse_node(field(map, "right", path)?, &format!("{path}.right"))?;
        Ok(CsgNode::Op {
            op,
            left: Box::new(left),
            right: Box::new(right),
        })
    } else if map.contains_key("primitive") {
        let kind_str = field(map, "primitive", path)?
            .as_str()
            .ok_or_else(|| Error::TreeFormat {
                path: format!("{path}.primitive"),
                reason: "expected a string".into(),
            })?;
        let kind = match kind_str {
            "rectangle" => PrimitiveKind::Rectangle,
            "circle" => PrimitiveKind::Circle,
            "box" => PrimitiveKind::Box,
            "sphere" => PrimitiveKind::Sphere,
            other => {
                return Err(Error::TreeFormat {
                    path: format!("{path}.primitive"),
                    reason: format!("unknown primitive kind `{other}`"),
                })
            }
        };
        let params = number_array(field(map, "params", path)?, &format!("{path}.params"))?;
        let translation = number_array(
            field(map, "translation", path)?,
            &format!("{path}.translation"),
        )?;
        let rotation = number_array(field(map, "rotation", path)?, &format!("{path}.rotation"))?;
        if params.len() != kind.param_count() {
            return Err(Error::TreeFormat {
                path: format!("{path}.params"),
                reason: format!(
                    "`{kind_str}` takes {} parameters, got {}",
                    kind.param_count(),
                    params.len()
                ),
            });
        }
        if translation.len() != kind.dim() {
            return Err(Error::TreeFormat {
                path: format!("{path}.translation"),
                reason: format!("expected {} components, got {}", kind.dim(), translation.len()),
            });
        }
        if rotation.len() != kind.rotation_count() {
            return Err(Error::TreeFormat {
                path: format!("{path}.rotation"),
                reason: format!(
                    "expected {} components, got {}",
                    kind.rotation_count(),
                    rotation.len()
                ),
            });
        }
        Ok(CsgNode::Leaf(Primitive {
            kind,
            params,
            translation,
            rotation,
        }))
    } else {
        Err(Error::TreeFormat {
            path: path.into(),
            reason: "node must have either `op` or `primitive`".into(),
        })
    }
}

// ── Extraction ──────────────────────────────────────────────────────────

/// Read the hard tree out of an eval-mode forward pass: per layer and node
/// the argmax selections become child wires, and only channels reachable
/// from the final union survive. Shapes selected twice appear as repeated
/// subtrees, which keeps the per-depth node count within the binary-tree
/// bound.
pub fn extract_tree(cfg: &ModelConfig, output: &ForwardOutput) -> CsgTree {
    let records = &output.records;
    let num_layers = records.len();

    fn resolve(
        cfg: &ModelConfig,
        records: &[Vec<SelectionRecord>],
        prims: &[Primitive],
        layer: usize,
        channel: usize,
    ) -> CsgNode {
        // Channel space of layer `layer`'s input: previous outputs first,
        // then the M initial primitives.
        let prim_base = if layer == 0 {
            0
        } else {
            cfg.layer_outputs(layer - 1)
        };
        if channel >= prim_base {
            return CsgNode::Leaf(prims[channel - prim_base].clone());
        }
        let node_idx = channel / 4;
        let op_idx = channel % 4;
        let rec = &records[layer - 1][node_idx];
        let left = resolve(cfg, records, prims, layer - 1, rec.argmax_left);
        let right = resolve(cfg, records, prims, layer - 1, rec.argmax_right);
        let (op, left, right) = match op_idx {
            0 => (CsgOp::Union, left, right),
            1 => (CsgOp::Intersection, left, right),
            2 => (CsgOp::Difference, left, right),
            _ => (CsgOp::Difference, right, left),
        };
        CsgNode::Op {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    let final_rec = &records[num_layers - 1][0];
    let left = resolve(
        cfg,
        records,
        &output.primitives,
        num_layers - 1,
        final_rec.argmax_left,
    );
    let right = resolve(
        cfg,
        records,
        &output.primitives,
        num_layers - 1,
        final_rec.argmax_right,
    );
    CsgTree {
        root: CsgNode::Op {
            op: CsgOp::Union,
            left: Box::new(left),
            right: Box::new(right),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(r: f64, cx: f64, cy: f64) -> CsgNode {
        CsgNode::Leaf(Primitive {
            kind: PrimitiveKind::Circle,
            params: vec![r],
            translation: vec![cx, cy],
            rotation: vec![0.0],
        })
    }

    fn rectangle(px: f64, py: f64, cx: f64, cy: f64) -> CsgNode {
        CsgNode::Leaf(Primitive {
            kind: PrimitiveKind::Rectangle,
            params: vec![px, py],
            translation: vec![cx, cy],
            rotation: vec![0.0],
        })
    }

    #[test]
    fn single_leaf_membership_matches_sdf() {
        let tree = CsgTree {
            root: circle(0.25, 0.5, 0.5),
        };
        assert!(tree.evaluate(&[0.5, 0.5]).unwrap());
        assert!(tree.evaluate(&[0.5, 0.75]).unwrap()); // on boundary counts as inside
        assert!(!tree.evaluate(&[0.9, 0.5]).unwrap());
    }

    #[test]
    fn union_is_pointwise_or() {
        let tree = CsgTree {
            root: CsgNode::Op {
                op: CsgOp::Union,
                left: Box::new(circle(0.2, 0.3, 0.5)),
                right: Box::new(rectangle(0.1, 0.1, 0.7, 0.5)),
            },
        };
        assert!(tree.evaluate(&[0.3, 0.5]).unwrap());
        assert!(tree.evaluate(&[0.7, 0.5]).unwrap());
        assert!(!tree.evaluate(&[0.5, 0.1]).unwrap());
    }

    #[test]
    fn difference_is_ordered() {
        let a_minus_b = CsgTree {
            root: CsgNode::Op {
                op: CsgOp::Difference,
                left: Box::new(circle(0.3, 0.5, 0.5)),
                right: Box::new(circle(0.1, 0.5, 0.5)),
            },
        };
        assert!(!a_minus_b.evaluate(&[0.5, 0.5]).unwrap());
        assert!(a_minus_b.evaluate(&[0.5, 0.75]).unwrap());
    }

    #[test]
    fn json_round_trip_single_leaf_bitwise() {
        let tree = CsgTree {
            root: circle(0.123456789012345, 0.5000000000001, 0.25),
        };
        let text = tree.to_json_string();
        let back = CsgTree::from_json_str(&text).unwrap();
        assert_eq!(back, tree);
    }

    #[test]
    fn json_round_trip_three_levels() {
        let tree = CsgTree {
            root: CsgNode::Op {
                op: CsgOp::Union,
                left: Box::new(CsgNode::Op {
                    op: CsgOp::Difference,
                    left: Box::new(rectangle(0.3, 0.2, 0.4, 0.4)),
                    right: Box::new(circle(0.15, 0.4, 0.4)),
                }),
                right: Box::new(CsgNode::Op {
                    op: CsgOp::Intersection,
                    left: Box::new(circle(0.2, 0.6, 0.6)),
                    right: Box::new(rectangle(0.25, 0.25, 0.6, 0.6)),
                }),
            },
        };
        let back = CsgTree::from_json_str(&tree.to_json_string()).unwrap();
        assert_eq!(back, tree);
    }

    #[test]
    fn malformed_documents_report_paths() {
        let err = CsgTree::from_json_str(r#"{"op": "union", "left": {"primitive": "circle", "params": [0.1, 0.2], "translation": [0.0, 0.0], "rotation": [0.0]}, "right": {"primitive": "circle", "params": [0.1], "translation": [0.0, 0.0], "rotation": [0.0]}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("$.left.params"), "{err}");

        let err = CsgTree::from_json_str(r#"{"op": "xor", "left": 1, "right": 2}"#).unwrap_err();
        assert!(err.to_string().contains("$.op"), "{err}");

        let err = CsgTree::from_json_str(r#"{"left": 1}"#).unwrap_err();
        assert!(err.to_string().contains("`op` or `primitive`"), "{err}");

        let err = CsgTree::from_json_str("not json").unwrap_err();
        assert!(err.to_string().contains("invalid JSON"), "{err}");
    }

    #[test]
    fn depth_counts_respect_binary_bound() {
        let tree = CsgTree {
            root: CsgNode::Op {
                op: CsgOp::Union,
                left: Box::new(CsgNode::Op {
                    op: CsgOp::Intersection,
                    left: Box::new(circle(0.1, 0.2, 0.2)),
                    right: Box::new(circle(0.1, 0.8, 0.8)),
                }),
                right: Box::new(circle(0.2, 0.5, 0.5)),
            },
        };
        let counts = tree.nodes_per_depth();
        for (d, &c) in counts.iter().enumerate() {
            assert!(c <= 1 << d);
        }
        assert_eq!(tree.leaf_count(), 3);
    }
}
