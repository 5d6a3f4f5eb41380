//! Polygon annotations (Labelme-compatible JSON) and their rasterization.

use serde::{Deserialize, Serialize};

use crate::mask::Mask;
use crate::taxonomy::{Class, ClassTaxonomy};
use crate::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub label: String,
    pub points: Vec<[f64; 2]>,
    /// Labelme writes `"polygon"` or `"rectangle"`; rectangles carry two corner points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_type: Option<String>,
}

/// One final annotation per image. Extra Labelme keys (`version`, `imagePath`, ...)
/// are ignored on input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonAnnotation {
    pub shapes: Vec<Shape>,
    #[serde(rename = "imageHeight")]
    pub image_height: u32,
    #[serde(rename = "imageWidth")]
    pub image_width: u32,
}

impl PolygonAnnotation {
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String, DataError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn polygon_points(shape: &Shape) -> Vec<[f64; 2]> {
    if shape.shape_type.as_deref() == Some("rectangle") && shape.points.len() == 2 {
        let [x0, y0] = shape.points[0];
        let [x1, y1] = shape.points[1];
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    } else {
        shape.points.clone()
    }
}

/// Rasterizes the annotation into a class-id mask.
///
/// Pixel (x, y) is sampled at its center (x + 0.5, y + 0.5) with the even-odd rule;
/// centers lying exactly on an edge count as inside. Shapes are painted in list order,
/// so later shapes overwrite earlier ones. Uncovered pixels stay background.
pub fn rasterize(annotation: &PolygonAnnotation, taxonomy: &ClassTaxonomy) -> Result<Mask, DataError> {
    let (w, h) = (annotation.image_width, annotation.image_height);
    let mut resolved = Vec::with_capacity(annotation.shapes.len());
    for shape in &annotation.shapes {
        let class = taxonomy
            .resolve(&shape.label)
            .ok_or_else(|| DataError::UnknownLabel(shape.label.clone()))?;
        let pts = polygon_points(shape);
        if pts.len() < 3 {
            return Err(DataError::DegeneratePolygon {
                label: shape.label.clone(),
                points: pts.len(),
            });
        }
        let pts: Vec<[f64; 2]> = pts
            .into_iter()
            .map(|[x, y]| [x.clamp(0.0, w as f64), y.clamp(0.0, h as f64)])
            .collect();
        resolved.push((class, pts));
    }

    let mut mask = Mask::new(w, h);
    for (class, pts) in &resolved {
        fill_polygon(&mut mask, pts, *class);
    }
    Ok(mask)
}

fn fill_polygon(mask: &mut Mask, pts: &[[f64; 2]], class: Class) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let ymin = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let ymax = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let row_lo = ((ymin - 0.5).ceil() as i64).max(0);
    let row_hi = ((ymax - 0.5).floor() as i64).min(h - 1);

    let mut crossings: Vec<f64> = Vec::new();
    let mut spans: Vec<(f64, f64)> = Vec::new();
    for row in row_lo..=row_hi {
        let yc = row as f64 + 0.5;
        crossings.clear();
        spans.clear();
        for i in 0..pts.len() {
            let [x0, y0] = pts[i];
            let [x1, y1] = pts[(i + 1) % pts.len()];
            if y0 == y1 {
                if y0 == yc {
                    spans.push((x0.min(x1), x0.max(x1)));
                }
                continue;
            }
            let (lo, hi) = if y0 < y1 { (y0, y1) } else { (y1, y0) };
            if yc < lo || yc > hi {
                continue;
            }
            let x = x0 + (yc - y0) * (x1 - x0) / (y1 - y0);
            // half-open rule decides parity; the closed range still yields boundary points
            if yc < hi {
                crossings.push(x);
            }
            spans.push((x, x));
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            spans.push((pair[0], pair[1]));
        }
        for &(a, b) in &spans {
            let c0 = ((a - 0.5).ceil() as i64).max(0);
            let c1 = ((b - 0.5).floor() as i64).min(w - 1);
            for col in c0..=c1 {
                mask.set(col as u32, row as u32, class);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(label: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Shape {
        Shape {
            label: label.into(),
            points: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
            shape_type: None,
        }
    }

    fn ann(shapes: Vec<Shape>, w: u32, h: u32) -> PolygonAnnotation {
        PolygonAnnotation {
            shapes,
            image_height: h,
            image_width: w,
        }
    }

    #[test]
    fn empty_is_background() {
        let m = rasterize(&ann(vec![], 8, 8), &ClassTaxonomy).unwrap();
        assert_eq!(m.histogram()[0], 64);
    }

    #[test]
    fn rectangle_matches_brute_force() {
        // cols 2..=5, rows 1..=3
        let a = ann(vec![rect("brittle fracture", 2.0, 1.0, 6.0, 4.0)], 8, 8);
        let m = rasterize(&a, &ClassTaxonomy).unwrap();
        let mut expected = 0;
        for y in 0..8u32 {
            for x in 0..8u32 {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = (2.0..=6.0).contains(&cx) && (1.0..=4.0).contains(&cy);
                assert_eq!(m.get(x, y) == 5, inside, "pixel ({x},{y})");
                expected += inside as u32;
            }
        }
        assert_eq!(expected, 12);
        assert_eq!(m.count(Class::BrittleFracture), 12);
    }

    #[test]
    fn boundary_centers_are_inside() {
        // edges pass exactly through pixel centers
        let a = ann(vec![rect("other", 2.5, 1.5, 5.5, 3.5)], 8, 8);
        let m = rasterize(&a, &ClassTaxonomy).unwrap();
        assert_eq!(m.count(Class::Other), 12);
    }

    #[test]
    fn later_shapes_win() {
        let a = ann(
            vec![
                rect("ductile fracture", 0.0, 0.0, 6.0, 6.0),
                rect("other", 4.0, 4.0, 8.0, 8.0),
            ],
            8,
            8,
        );
        let m = rasterize(&a, &ClassTaxonomy).unwrap();
        assert_eq!(m.class_at(5, 5), Class::Other);
        assert_eq!(m.class_at(1, 1), Class::DuctileFracture);
        assert_eq!(m.count(Class::Other), 16);
    }

    #[test]
    fn triangle_even_odd() {
        let a = ann(
            vec![Shape {
                label: "erosion notch".into(),
                points: vec![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]],
                shape_type: None,
            }],
            10,
            10,
        );
        let m = rasterize(&a, &ClassTaxonomy).unwrap();
        for y in 0..10u32 {
            for x in 0..10u32 {
                let inside = (x as f64 + 0.5) + (y as f64 + 0.5) <= 10.0;
                assert_eq!(m.get(x, y) == 2, inside);
            }
        }
    }

    #[test]
    fn errors() {
        let a = ann(vec![rect("rust", 0.0, 0.0, 2.0, 2.0)], 4, 4);
        assert!(matches!(rasterize(&a, &ClassTaxonomy), Err(DataError::UnknownLabel(_))));
        let a = ann(
            vec![Shape {
                label: "other".into(),
                points: vec![[0.0, 0.0], [1.0, 1.0]],
                shape_type: None,
            }],
            4,
            4,
        );
        assert!(matches!(
            rasterize(&a, &ClassTaxonomy),
            Err(DataError::DegeneratePolygon { .. })
        ));
    }

    #[test]
    fn parses_labelme_json() {
        let text = r#"{
            "version": "5.2.1", "flags": {}, "imagePath": "x.png", "imageData": null,
            "shapes": [
              {"label": "fatigue precrack", "points": [[1,1],[3,1],[3,3],[1,3]],
               "group_id": null, "shape_type": "polygon", "flags": {}},
              {"label": "side groove", "points": [[0,0],[1,4]], "shape_type": "rectangle"}
            ],
            "imageHeight": 4, "imageWidth": 4
        }"#;
        let a = PolygonAnnotation::from_json(text).unwrap();
        let m = rasterize(&a, &ClassTaxonomy).unwrap();
        assert_eq!(m.count(Class::FatiguePrecrack), 4);
        assert_eq!(m.count(Class::SideGroove), 4);
    }

    #[test]
    fn deterministic() {
        let a = ann(
            vec![Shape {
                label: "other".into(),
                points: vec![[0.3, 0.7], [7.1, 1.2], [5.5, 6.9], [1.2, 4.4], [3.3, 3.3]],
                shape_type: None,
            }],
            8,
            8,
        );
        assert_eq!(rasterize(&a, &ClassTaxonomy).unwrap(), rasterize(&a, &ClassTaxonomy).unwrap());
    }
}
