//! Detection on the bundled portraits with the reference frontal-face cascade.

use std::path::PathBuf;

use densiface::detect::{
    detect_faces, face_region, parse_cascade, to_grayscale, DetectConfig, PixelRect,
};
use densiface::io::read_color_ppm;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn annotations() -> Vec<(String, PixelRect)> {
    let text = std::fs::read_to_string(fixtures().join("portraits/annotations.json")).unwrap();
    let doc: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text).unwrap();
    doc.into_iter()
        .map(|(name, v)| {
            let get = |k: &str| v[k].as_u64().unwrap() as u32;
            (name, PixelRect::new(get("x"), get("y"), get("w"), get("h")))
        })
        .collect()
}

#[test]
fn reference_cascade_parses() {
    let text =
        std::fs::read_to_string(fixtures().join("haarcascade_frontalface_default.xml")).unwrap();
    let c = parse_cascade(&text).unwrap();
    assert_eq!((c.base_width, c.base_height), (24, 24));
    let counts = c.counts();
    assert_eq!(counts.stages, 25);
    assert_eq!(counts.stumps, 2913);
    assert_eq!(counts.features, 2913);
}

#[test]
fn portraits_match_annotations() {
    let text =
        std::fs::read_to_string(fixtures().join("haarcascade_frontalface_default.xml")).unwrap();
    let cascade = parse_cascade(&text).unwrap();
    for (name, truth) in annotations() {
        let bytes = std::fs::read(fixtures().join(format!("portraits/{name}.ppm"))).unwrap();
        let gray = to_grayscale(&read_color_ppm(&bytes).unwrap());
        let found = detect_faces(&cascade, &gray, &DetectConfig::default()).unwrap();
        let iou = face_region(&found, None)
            .map(|r| r.iou(&truth))
            .unwrap_or(0.0);
        assert!(
            iou >= 0.5,
            "{name}: detections {found:?}, IoU {iou:.3} against {truth:?}"
        );
    }
}
