//! Line-oriented segmentation records: `video_id<TAB>start-end,start-end,...`

use std::fs;
use std::path::Path;

use super::{EventSegmentation, Span};
use crate::error::{Error, Result};

pub fn segmentation_line(video_id: &str, spans: &[Span]) -> String {
    let body: Vec<String> = spans.iter().map(Span::to_string).collect();
    format!("{video_id}\t{}", body.join(","))
}

pub fn parse_segmentation_line(line: &str) -> Result<(String, Vec<Span>)> {
    let bad = |why: &str| Error::SegmentationFormat(format!("{why}: {line:?}"));
    let (id, body) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
    if id.is_empty() {
        return Err(bad("empty video id"));
    }
    let mut spans = Vec::new();
    for part in body.split(',') {
        let (a, b) = part.split_once('-').ok_or_else(|| bad("span without '-'"))?;
        let start: usize = a.trim().parse().map_err(|_| bad("bad span start"))?;
        let end: usize = b.trim().parse().map_err(|_| bad("bad span end"))?;
        if end < start {
            return Err(bad("span end before start"));
        }
        spans.push(Span::new(start, end));
    }
    super::validate_spans(&spans, spans.last().map_or(0, |s| s.end + 1))?;
    Ok((id.to_string(), spans))
}

pub fn write_segmentations(path: &Path, segs: &[EventSegmentation]) -> Result<()> {
    let mut out = String::new();
    for s in segs {
        out.push_str(&segmentation_line(&s.video_id, &s.spans));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads every record of a segmentation file, in file order.
pub fn read_segmentations(path: &Path) -> Result<Vec<(String, Vec<Span>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_segmentation_line)
        .collect()
}
