//! VOC-style XML annotation parsing and writing.
//!
//! Document layout: annotation/filename, size/{width,height,depth},
//! object/{name, bndbox/{xmin,ymin,xmax,ymax}}. Integer coordinates are kept
//! exactly.

use super::{class_id_of, class_name_of, Annotation, DataError, ObjectLabel, Result};
use crate::geometry::BBox;

fn child_text<'a>(node: roxmltree::Node<'a, 'a>, name: &str, path: &str) -> Result<&'a str> {
    node.children()
        .find(|c| c.has_tag_name(name))
        .and_then(|c| c.text())
        .map(str::trim)
        .ok_or_else(|| DataError::Parse(format!("missing element {path}/{name}")))
}

fn parse_number(text: &str, path: &str) -> Result<f64> {
    text.parse::<f64>()
        .map_err(|_| DataError::Parse(format!("{path}: `{text}` is not a number")))
}

pub fn parse_voc_xml(document: &str) -> Result<Annotation> {
    let doc = roxmltree::Document::parse(document)
        .map_err(|e| DataError::Parse(format!("malformed XML: {e}")))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(DataError::Parse(format!(
            "root element is <{}>, expected <annotation>",
            root.tag_name().name()
        )));
    }

    let filename = child_text(root, "filename", "annotation")?;
    let image_id = filename
        .rsplit_once('.')
        .map(|(stem, _)| stem)
        .unwrap_or(filename)
        .to_string();

    let size = root
        .children()
        .find(|c| c.has_tag_name("size"))
        .ok_or_else(|| DataError::Parse("missing element annotation/size".into()))?;
    let width = parse_number(child_text(size, "width", "annotation/size")?, "annotation/size/width")?;
    let height = parse_number(
        child_text(size, "height", "annotation/size")?,
        "annotation/size/height",
    )?;
    if width < 1.0 || height < 1.0 {
        return Err(DataError::Parse("annotation/size must be positive".into()));
    }

    let mut objects = Vec::new();
    for (i, obj) in root
        .children()
        .filter(|c| c.has_tag_name("object"))
        .enumerate()
    {
        let path = format!("annotation/object[{i}]");
        let name = child_text(obj, "name", &path)?;
        let class_id = class_id_of(name).ok_or_else(|| {
            DataError::Parse(format!("{path}/name: unknown class `{name}`"))
        })?;
        let bndbox = obj
            .children()
            .find(|c| c.has_tag_name("bndbox"))
            .ok_or_else(|| DataError::Parse(format!("missing element {path}/bndbox")))?;
        let bpath = format!("{path}/bndbox");
        let xmin = parse_number(child_text(bndbox, "xmin", &bpath)?, &format!("{bpath}/xmin"))?;
        let ymin = parse_number(child_text(bndbox, "ymin", &bpath)?, &format!("{bpath}/ymin"))?;
        let xmax = parse_number(child_text(bndbox, "xmax", &bpath)?, &format!("{bpath}/xmax"))?;
        let ymax = parse_number(child_text(bndbox, "ymax", &bpath)?, &format!("{bpath}/ymax"))?;
        if xmin > xmax || ymin > ymax {
            return Err(DataError::Parse(format!(
                "{bpath}: inverted box ({xmin}, {ymin}, {xmax}, {ymax})"
            )));
        }
        objects.push(ObjectLabel {
            class_id,
            bbox: BBox::new(xmin, ymin, xmax, ymax),
        });
    }

    Ok(Annotation {
        image_id,
        width: width as u32,
        height: height as u32,
        objects,
    })
}

fn format_coord(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn write_voc_xml(annotation: &Annotation) -> String {
    let mut out = String::new();
    out.push_str("<annotation>\n");
    out.push_str(&format!(
        "  <filename>{}.png</filename>\n",
        annotation.image_id
    ));
    out.push_str("  <size>\n");
    out.push_str(&format!("    <width>{}</width>\n", annotation.width));
    out.push_str(&format!("    <height>{}</height>\n", annotation.height));
    out.push_str("    <depth>3</depth>\n");
    out.push_str("  </size>\n");
    for obj in &annotation.objects {
        let name = class_name_of(obj.class_id).expect("object class ids are validated on entry");
        out.push_str("  <object>\n");
        out.push_str(&format!("    <name>{name}</name>\n"));
        out.push_str("    <bndbox>\n");
        out.push_str(&format!("      <xmin>{}</xmin>\n", format_coord(obj.bbox.xmin)));
        out.push_str(&format!("      <ymin>{}</ymin>\n", format_coord(obj.bbox.ymin)));
        out.push_str(&format!("      <xmax>{}</xmax>\n", format_coord(obj.bbox.xmax)));
        out.push_str(&format!("      <ymax>{}</ymax>\n", format_coord(obj.bbox.ymax)));
        out.push_str("    </bndbox>\n");
        out.push_str("  </object>\n");
    }
    out.push_str("</annotation>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const MINIMAL: &str = r#"
<annotation>
  <filename>smear_7.png</filename>
  <size><width>300</width><height>300</height><depth>3</depth></size>
  <object>
    <name>erythrocyte</name>
    <bndbox><xmin>10</xmin><ymin>10</ymin><xmax>50</xmax><ymax>50</ymax></bndbox>
  </object>
</annotation>"#;

    #[test]
    fn parses_minimal_document() {
        let ann = parse_voc_xml(MINIMAL).unwrap();
        assert_eq!(ann.image_id, "smear_7");
        assert_eq!((ann.width, ann.height), (300, 300));
        assert_eq!(ann.objects.len(), 1);
        assert_eq!(ann.objects[0].class_id, 3);
        assert_eq!(ann.objects[0].bbox, BBox::new(10.0, 10.0, 50.0, 50.0));
    }

    #[test]
    fn zero_objects_is_valid() {
        let doc = r#"<annotation><filename>bg.png</filename>
            <size><width>300</width><height>300</height><depth>3</depth></size></annotation>"#;
        let ann = parse_voc_xml(doc).unwrap();
        assert!(ann.objects.is_empty());
    }

    #[test]
    fn diagnostics_carry_element_path() {
        let unknown_class = MINIMAL.replace("erythrocyte", "heinz_body");
        let err = parse_voc_xml(&unknown_class).unwrap_err().to_string();
        assert!(err.contains("annotation/object[0]/name"), "{err}");

        let missing_box = MINIMAL.replace("bndbox>", "nobox>");
        let err = parse_voc_xml(&missing_box).unwrap_err().to_string();
        assert!(err.contains("bndbox"), "{err}");

        let inverted = MINIMAL.replace("<xmax>50</xmax>", "<xmax>5</xmax>");
        let err = parse_voc_xml(&inverted).unwrap_err().to_string();
        assert!(err.contains("inverted"), "{err}");

        assert!(parse_voc_xml("<annotation><fil").is_err());
    }

    #[test]
    fn write_parse_round_trip_on_generated_fixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for i in 0..50 {
            let n_objects = rng.gen_range(0..8);
            let objects = (0..n_objects)
                .map(|_| {
                    let xmin = rng.gen_range(0..250) as f64;
                    let ymin = rng.gen_range(0..250) as f64;
                    let w = rng.gen_range(5..50) as f64;
                    let h = rng.gen_range(5..50) as f64;
                    ObjectLabel {
                        class_id: rng.gen_range(1..=3),
                        bbox: BBox::new(xmin, ymin, xmin + w, ymin + h),
                    }
                })
                .collect();
            let ann = Annotation {
                image_id: format!("fixture_{i}"),
                width: 300,
                height: 300,
                objects,
            };
            let reparsed = parse_voc_xml(&write_voc_xml(&ann)).unwrap();
            assert_eq!(reparsed, ann);
        }
    }
}
