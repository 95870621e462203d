use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::Detection;
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// One row of the `class_id,score,xc,yc,w,h` schema.
#[derive(Debug, Serialize, Deserialize)]
struct Row {
    class_id: u32,
    score: f64,
    xc: f64,
    yc: f64,
    w: f64,
    h: f64,
}

/// Reads detections; a header row is required and `#` lines are comments.
///
/// Errors carry the 1-based line number of the offending row.
pub fn read_detections<R: Read>(reader: R) -> Result<Vec<Detection<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let parse_err = |e: csv::Error| {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        Error::Parse { line, reason: e.to_string() }
    };
    let headers = rdr.headers().map_err(parse_err)?.clone();
    let mut record = csv::StringRecord::new();
    let mut out = Vec::new();
    while rdr.read_record(&mut record).map_err(parse_err)? {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: Row = record.deserialize(Some(&headers)).map_err(|e| Error::Parse { line, reason: e.to_string() })?;
        let bbox = BBox { xc: row.xc, yc: row.yc, w: row.w, h: row.h };
        let det =
            Detection::new(bbox, row.class_id, row.score).map_err(|e| Error::Parse { line, reason: e.to_string() })?;
        out.push(det);
    }
    Ok(out)
}

/// Writes detections with a header row, after optional `#` comment lines.
pub fn write_detections<W: Write>(mut writer: W, comments: &[String], dets: &[Detection<f64>]) -> Result<()> {
    for c in comments {
        writeln!(writer, "# {c}")?;
    }
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(["class_id", "score", "xc", "yc", "w", "h"]).map_err(csv_to_io)?;
    for d in dets {
        let row = Row { class_id: d.class_id, score: d.score, xc: d.bbox.xc, yc: d.bbox.yc, w: d.bbox.w, h: d.bbox.h };
        wtr.serialize(row).map_err(csv_to_io)?;
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn csv_to_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_comments() {
        let d = vec![
            Detection::new(BBox::new(0.25, 0.5, 0.1, 0.2).unwrap(), 3, 0.875).unwrap(),
            Detection::new(BBox::new(0.1, 0.3, 0.05, 0.05).unwrap(), 0, 0.1).unwrap(),
        ];
        let mut buf = Vec::new();
        write_detections(&mut buf, &["seed=1".into()], &d).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed=1\nclass_id,score,xc,yc,w,h\n"));
        assert_eq!(read_detections(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "class_id,score,xc,yc,w,h\n0,0.5,0.1,0.1,0.1,0.1\n1,oops,0.1,0.1,0.1,0.1\n";
        match read_detections(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "class_id,score,xc,yc,w,h\n0,1.5,0.1,0.1,0.1,0.1\n";
        assert!(matches!(read_detections(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(read_detections("class_id,score,xc,yc,w,h\n".as_bytes()).unwrap().is_empty());
        assert!(read_detections("".as_bytes()).unwrap().is_empty());
    }
}
