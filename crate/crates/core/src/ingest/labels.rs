//! Quad label files: one detection per line,
//! `class x1 y1 x2 y2 x3 y3 x4 y4 [confidence]`, corners normalized to the
//! crop size. A missing confidence marks ground truth (1.0).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::obb::{CropGeoref, Detection, Frame, KilnClass, OrientedBox};

pub fn parse_quad_labels(text: &str, georef: &CropGeoref) -> Result<Vec<Detection>> {
    let size = georef.size_px as f64;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |message: String| Error::Line { line, message };
        let tokens: Vec<&str> = body.split_whitespace().collect();
        if tokens.len() != 9 && tokens.len() != 10 {
            return Err(err(format!("expected 9 or 10 fields, found {}", tokens.len())));
        }
        let class_index: usize = tokens[0]
            .parse()
            .map_err(|_| err(format!("class index {:?} is not an integer", tokens[0])))?;
        let class = KilnClass::from_index(class_index).ok_or_else(|| err(format!("unknown class index {class_index}")))?;
        let mut vals = [0.0f64; 8];
        for (k, tok) in tokens[1..9].iter().enumerate() {
            let v: f64 = tok.parse().map_err(|_| err(format!("coordinate {tok:?} is not a number")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(err(format!("coordinate {v} outside [0, 1]")));
            }
            vals[k] = v * size;
        }
        let confidence = match tokens.get(9) {
            Some(tok) => {
                let c: f64 = tok.parse().map_err(|_| err(format!("confidence {tok:?} is not a number")))?;
                if !(0.0..=1.0).contains(&c) {
                    return Err(err(format!("confidence {c} outside [0, 1]")));
                }
                c
            }
            None => 1.0,
        };
        let quad = [(vals[0], vals[1]), (vals[2], vals[3]), (vals[4], vals[5]), (vals[6], vals[7])];
        let bbox = OrientedBox::from_quad(quad, Frame::Pixel).map_err(|e| err(e.to_string()))?;
        out.push(Detection::new(
            format!("{}:{}", georef.crop_id, line),
            class,
            confidence,
            bbox,
            georef.crop_id.clone(),
        )?);
    }
    Ok(out)
}

/// Inverse of [`parse_quad_labels`]; boxes must be in the pixel frame.
pub fn write_quad_labels(dets: &[Detection], georef: &CropGeoref) -> Result<String> {
    let size = georef.size_px as f64;
    let mut out = String::new();
    for d in dets {
        if d.bbox.frame != Frame::Pixel {
            return Err(Error::FrameMismatch(format!("detection {} is not in the pixel frame", d.id)));
        }
        write!(out, "{}", d.class.index()).unwrap();
        for (x, y) in d.bbox.corners() {
            write!(out, " {} {}", snap_unit(x / size), snap_unit(y / size)).unwrap();
        }
        writeln!(out, " {}", d.confidence).unwrap();
    }
    Ok(out)
}

/// Absorbs rounding noise that would push an edge-touching corner just
/// outside the unit range.
fn snap_unit(v: f64) -> f64 {
    const EPS: f64 = 1e-9;
    if (-EPS..0.0).contains(&v) {
        0.0
    } else if v > 1.0 && v <= 1.0 + EPS {
        1.0
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn crop() -> CropGeoref {
        CropGeoref::unreferenced("c7", 640)
    }

    #[test]
    fn axis_aligned_zigzag() {
        let d = parse_quad_labels("2 0.4 0.4 0.6 0.4 0.6 0.6 0.4 0.6\n", &crop()).unwrap();
        assert_eq!(d.len(), 1);
        let d = &d[0];
        assert_eq!(d.class, KilnClass::Zigzag);
        assert_eq!(d.confidence, 1.0);
        assert!((d.bbox.cx - 320.0).abs() < 1e-9 && (d.bbox.cy - 320.0).abs() < 1e-9);
        assert!((d.bbox.w - 128.0).abs() < 1e-9 && (d.bbox.h - 128.0).abs() < 1e-9);
        assert!(d.bbox.theta.abs() < 1e-12);
        assert_eq!(d.id, "c7:1");
    }

    #[test]
    fn rotated_square() {
        let d = parse_quad_labels("1 0.5 0.3 0.7 0.5 0.5 0.7 0.3 0.5 0.8", &crop()).unwrap();
        assert!((d[0].bbox.theta - FRAC_PI_4).abs() < 1e-9);
        assert_eq!(d[0].confidence, 0.8);
    }

    #[test]
    fn located_errors() {
        let bad = "2 0.4 0.4 0.6 0.4 0.6 0.6 0.4 0.6\n\n1 0.1 0.1 0.2\n";
        assert!(matches!(parse_quad_labels(bad, &crop()), Err(Error::Line { line: 3, .. })));
        assert!(matches!(
            parse_quad_labels("7 0.4 0.4 0.6 0.4 0.6 0.6 0.4 0.6", &crop()),
            Err(Error::Line { line: 1, .. })
        ));
        assert!(matches!(
            parse_quad_labels("0 1.4 0.4 0.6 0.4 0.6 0.6 0.4 0.6", &crop()),
            Err(Error::Line { line: 1, .. })
        ));
    }

    #[test]
    fn write_parse_round_trip() {
        let text = "0 0.1 0.1 0.2 0.1 0.2 0.15 0.1 0.15 0.9\n1 0.5 0.3 0.7 0.5 0.5 0.7 0.3 0.5 0.4\n";
        let dets = parse_quad_labels(text, &crop()).unwrap();
        let again = parse_quad_labels(&write_quad_labels(&dets, &crop()).unwrap(), &crop()).unwrap();
        for (a, b) in dets.iter().zip(&again) {
            assert_eq!(a.class, b.class);
            assert_eq!(a.confidence, b.confidence);
            assert!((a.bbox.cx - b.bbox.cx).abs() < 1e-6);
            assert!((a.bbox.cy - b.bbox.cy).abs() < 1e-6);
            assert!((a.bbox.w - b.bbox.w).abs() < 1e-6);
            assert!((a.bbox.h - b.bbox.h).abs() < 1e-6);
            assert!((a.bbox.theta - b.bbox.theta).abs() < 1e-6);
        }
    }
}
