use std::io::{BufRead, Write};
use std::path::Path;

use super::Proposal;
use crate::bbox::BBox;
use crate::error::{Error, Result};

pub const PROPOSAL_CSV_HEADER: &str = "image_id,x,y,w,h,score,template,scale";

/// A proposal tagged with the image it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalRecord {
    pub image_id: String,
    pub proposal: Proposal,
}

/// Writes the header and one row per proposal. Templates are written 1-based.
pub fn write_proposals_csv(mut w: impl Write, records: &[ProposalRecord]) -> std::io::Result<()> {
    writeln!(w, "{PROPOSAL_CSV_HEADER}")?;
    for r in records {
        let p = &r.proposal;
        writeln!(
            w,
            "{},{:.2},{:.2},{:.2},{:.2},{:.6},{},{:.6}",
            r.image_id,
            p.bbox.x,
            p.bbox.y,
            p.bbox.w,
            p.bbox.h,
            p.score,
            p.template + 1,
            p.scale
        )?;
    }
    Ok(())
}

/// Reads proposal rows. The header is optional, and the `template` and
/// `scale` columns may be omitted (as in third-party proposal dumps).
pub fn read_proposals_csv(path: impl AsRef<Path>) -> Result<Vec<ProposalRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_proposals(std::io::BufReader::new(file), &path.display().to_string())
}

pub(crate) fn parse_proposals(reader: impl BufRead, source: &str) -> Result<Vec<ProposalRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("image_id")) {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(6..=8).contains(&fields.len()) {
            return Err(err(format!("expected 6 to 8 fields, found {}", fields.len())));
        }
        let num = |idx: usize| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .map_err(|_| err(format!("field {} ('{}') is not a number", idx + 1, fields[idx])))
        };
        let bbox = BBox::new(num(1)?, num(2)?, num(3)?, num(4)?);
        let template = match fields.get(6) {
            Some(t) => {
                t.parse::<usize>()
                    .ok()
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| err(format!("template '{t}' is not a 1-based index")))?
                    - 1
            }
            None => 0,
        };
        let scale = if fields.len() > 7 { num(7)? } else { 1.0 };
        out.push(ProposalRecord {
            image_id: fields[0].to_string(),
            proposal: Proposal {
                bbox,
                score: num(5)?,
                template,
                scale,
            },
        });
    }
    Ok(out)
}
