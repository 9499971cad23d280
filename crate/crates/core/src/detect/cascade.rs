use std::fmt::Write as _;

use roxmltree::{Document, Node};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaarFeature {
    pub rects: Vec<HaarRect>,
}

/// Decision stump: `left_value` when the normalized feature response is
/// below `threshold * var_norm`, else `right_value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakClassifier {
    pub feature_index: usize,
    pub threshold: f64,
    pub left_value: f64,
    pub right_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub stage_threshold: f64,
    pub weak_classifiers: Vec<WeakClassifier>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub base_width: u32,
    pub base_height: u32,
    pub stages: Vec<Stage>,
    pub features: Vec<HaarFeature>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CascadeCounts {
    pub stages: usize,
    pub stumps: usize,
    pub features: usize,
}

impl Cascade {
    pub fn counts(&self) -> CascadeCounts {
        CascadeCounts {
            stages: self.stages.len(),
            stumps: self.stages.iter().map(|s| s.weak_classifiers.len()).sum(),
            features: self.features.len(),
        }
    }
}

const KIND: &str = "cascade XML";

struct Ctx<'a> {
    doc: &'a Document<'a>,
}

impl Ctx<'_> {
    fn err(&self, node: Node, msg: impl std::fmt::Display) -> Error {
        let pos = self.doc.text_pos_at(node.range().start);
        Error::parse(KIND, format!("line {}, column {}: {msg}", pos.row, pos.col))
    }

    fn child<'a>(&self, node: Node<'a, 'a>, name: &str) -> Result<Node<'a, 'a>> {
        node.children()
            .find(|c| c.has_tag_name(name))
            .ok_or_else(|| self.err(node, format!("missing <{name}>")))
    }

    fn text<'a>(&self, node: Node<'a, 'a>) -> &'a str {
        node.text().unwrap_or("").trim()
    }

    fn child_text<'a>(&self, node: Node<'a, 'a>, name: &str) -> Result<(Node<'a, 'a>, &'a str)> {
        let c = self.child(node, name)?;
        Ok((c, self.text(c)))
    }

    fn number<T: std::str::FromStr>(&self, node: Node, token: &str, what: &str) -> Result<T> {
        token
            .parse()
            .map_err(|_| self.err(node, format!("{what}: cannot parse `{token}`")))
    }

    fn numbers(&self, node: Node, what: &str) -> Result<Vec<f64>> {
        self.text(node)
            .split_ascii_whitespace()
            .map(|t| self.number::<f64>(node, t, what))
            .collect()
    }
}

fn items<'a>(node: Node<'a, 'a>) -> impl Iterator<Item = Node<'a, 'a>> {
    node.children().filter(|c| c.has_tag_name("_"))
}

/// Parses an OpenCV cascade file in the stage-based format (BOOST stages of
/// HAAR stumps). Tilted features and multi-node trees are rejected.
pub fn parse_cascade(text: &str) -> Result<Cascade> {
    let doc = Document::parse(text).map_err(|e| Error::parse(KIND, e.to_string()))?;
    let ctx = Ctx { doc: &doc };
    let root = doc.root_element();
    let cascade = if root.has_tag_name("cascade") {
        root
    } else {
        ctx.child(root, "cascade")?
    };

    let (node, stage_type) = ctx.child_text(cascade, "stageType")?;
    if stage_type != "BOOST" {
        return Err(ctx.err(node, format!("stageType `{stage_type}` is not BOOST")));
    }
    let (node, feature_type) = ctx.child_text(cascade, "featureType")?;
    if feature_type != "HAAR" {
        return Err(Error::Unsupported(format!("featureType `{feature_type}`")));
    }
    let (wn, w) = ctx.child_text(cascade, "width")?;
    let (hn, h) = ctx.child_text(cascade, "height")?;
    let base_width: u32 = ctx.number(wn, w, "width")?;
    let base_height: u32 = ctx.number(hn, h, "height")?;
    if base_width == 0 || base_height == 0 {
        return Err(ctx.err(node, "base window must be non-empty"));
    }

    let mut features = Vec::new();
    for f in items(ctx.child(cascade, "features")?) {
        if let Some(t) = f.children().find(|c| c.has_tag_name("tilted")) {
            if ctx.text(t) != "0" {
                return Err(Error::Unsupported(format!(
                    "tilted Haar feature {} (line {})",
                    features.len(),
                    doc.text_pos_at(t.range().start).row
                )));
            }
        }
        let mut rects = Vec::new();
        for r in items(ctx.child(f, "rects")?) {
            let v = ctx.numbers(r, "feature rect")?;
            if v.len() != 5 {
                return Err(ctx.err(
                    r,
                    format!("feature rect needs 5 numbers, found {}", v.len()),
                ));
            }
            let int = |x: f64| -> Result<u32> {
                if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                    Ok(x as u32)
                } else {
                    Err(ctx.err(
                        r,
                        format!("rect coordinate {x} is not a non-negative integer"),
                    ))
                }
            };
            let rect = HaarRect {
                x: int(v[0])?,
                y: int(v[1])?,
                w: int(v[2])?,
                h: int(v[3])?,
                weight: v[4],
            };
            if rect.x + rect.w > base_width || rect.y + rect.h > base_height {
                return Err(ctx.err(r, "feature rect extends past the base window"));
            }
            if !rect.weight.is_finite() {
                return Err(ctx.err(r, "feature weight is not finite"));
            }
            rects.push(rect);
        }
        if !(2..=3).contains(&rects.len()) {
            return Err(ctx.err(
                f,
                format!("feature needs 2 or 3 rects, found {}", rects.len()),
            ));
        }
        features.push(HaarFeature { rects });
    }

    let mut stages = Vec::new();
    for s in items(ctx.child(cascade, "stages")?) {
        let (tn, t) = ctx.child_text(s, "stageThreshold")?;
        let stage_threshold: f64 = ctx.number(tn, t, "stageThreshold")?;
        let mut weak_classifiers = Vec::new();
        for wc in items(ctx.child(s, "weakClassifiers")?) {
            let nodes_el = ctx.child(wc, "internalNodes")?;
            let leaves_el = ctx.child(wc, "leafValues")?;
            let nodes = ctx.numbers(nodes_el, "internalNodes")?;
            let leaves = ctx.numbers(leaves_el, "leafValues")?;
            if nodes.len() != 4 || leaves.len() != 2 {
                return Err(Error::Unsupported(format!(
                    "tree weak classifier with {} internal nodes in stage {} (line {})",
                    nodes.len() / 4,
                    stages.len(),
                    doc.text_pos_at(nodes_el.range().start).row
                )));
            }
            if nodes[0] > 0.0 || nodes[1] > 0.0 {
                return Err(Error::Unsupported(format!(
                    "weak classifier with non-leaf children in stage {} (line {})",
                    stages.len(),
                    doc.text_pos_at(nodes_el.range().start).row
                )));
            }
            let leaf = |v: f64| leaves[(-v) as usize];
            let feature_index = nodes[2];
            if feature_index < 0.0
                || feature_index.fract() != 0.0
                || feature_index as usize >= features.len()
            {
                return Err(ctx.err(
                    nodes_el,
                    format!(
                        "feature index {feature_index} out of range (have {})",
                        features.len()
                    ),
                ));
            }
            weak_classifiers.push(WeakClassifier {
                feature_index: feature_index as usize,
                threshold: nodes[3],
                left_value: leaf(nodes[0]),
                right_value: leaf(nodes[1]),
            });
        }
        if weak_classifiers.is_empty() {
            return Err(ctx.err(s, "stage without weak classifiers"));
        }
        stages.push(Stage {
            stage_threshold,
            weak_classifiers,
        });
    }
    if stages.is_empty() {
        return Err(ctx.err(cascade, "cascade without stages"));
    }
    Ok(Cascade {
        base_width,
        base_height,
        stages,
        features,
    })
}

/// Serializes to the same XML layout [`parse_cascade`] reads.
pub fn write_cascade(c: &Cascade) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\"?>\n<opencv_storage>\n");
    out.push_str("<cascade type_id=\"opencv-cascade-classifier\">\n");
    out.push_str("  <stageType>BOOST</stageType>\n  <featureType>HAAR</featureType>\n");
    writeln!(
        out,
        "  <height>{}</height>\n  <width>{}</width>",
        c.base_height, c.base_width
    )
    .unwrap();
    writeln!(out, "  <stageNum>{}</stageNum>\n  <stages>", c.stages.len()).unwrap();
    for s in &c.stages {
        writeln!(
            out,
            "    <_>\n      <maxWeakCount>{}</maxWeakCount>\n      <stageThreshold>{:e}</stageThreshold>\n      <weakClassifiers>",
            s.weak_classifiers.len(),
            s.stage_threshold
        )
        .unwrap();
        for w in &s.weak_classifiers {
            writeln!(
                out,
                "        <_>\n          <internalNodes>0 -1 {} {:e}</internalNodes>\n          <leafValues>{:e} {:e}</leafValues></_>",
                w.feature_index, w.threshold, w.left_value, w.right_value
            )
            .unwrap();
        }
        out.push_str("      </weakClassifiers></_>\n");
    }
    out.push_str("  </stages>\n  <features>\n");
    for f in &c.features {
        out.push_str("    <_>\n      <rects>\n");
        for r in &f.rects {
            writeln!(
                out,
                "        <_>{} {} {} {} {:e}</_>",
                r.x, r.y, r.w, r.h, r.weight
            )
            .unwrap();
        }
        out.push_str("      </rects></_>\n");
    }
    out.push_str("  </features>\n</cascade>\n</opencv_storage>\n");
    out
}
