use std::path::Path;

use super::{ClassDetector, DetectorBank};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::textdoc::{read_file, restore_err, write_file, DocReader, DocWriter};

const FORMAT: &str = "weldwatch-detector-bank";
const VERSION: u32 = 1;

pub fn render_bank(bank: &DetectorBank) -> String {
    let mut w = DocWriter::new(FORMAT, VERSION);
    w.int("embed_layer", bank.embed_layer);
    w.int("classes", bank.detectors.len());
    w.int("embedding_dim", bank.embedding_dim());
    for d in &bank.detectors {
        w.ints("class", &[d.class_id, d.components()]);
        w.text("label", &d.label);
        w.reals("mean", &d.mean);
        w.reals("std", &d.std);
        for r in 0..d.projection.rows() {
            w.reals("p", d.projection.row(r));
        }
        w.reals("thresholds", &d.thresholds);
    }
    w.finish()
}

pub fn parse_bank(text: &str) -> Result<DetectorBank> {
    let mut r = DocReader::open(text, FORMAT, VERSION)?;
    let embed_layer: usize = r.int("embed_layer")?;
    let classes: usize = r.int("classes")?;
    let q: usize = r.int("embedding_dim")?;
    let mut detectors = Vec::with_capacity(classes);
    for c in 0..classes {
        let (line, hdr) = r.expect("class")?;
        let parsed: Vec<usize> = hdr.iter().filter_map(|v| v.parse().ok()).collect();
        let [id, comps] = parsed[..] else {
            return Err(Error::Parse {
                line,
                reason: "class header needs `id components`".into(),
            });
        };
        if id != c || comps == 0 || comps > q {
            return Err(Error::Parse {
                line,
                reason: format!("bad class header {hdr:?}"),
            });
        }
        let label = r.text("label")?;
        let mean = r.reals("mean", q)?;
        let std = r.reals("std", q)?;
        let mut data = Vec::with_capacity(q * comps);
        for _ in 0..q {
            data.extend(r.reals("p", comps)?);
        }
        let thresholds = r.reals("thresholds", comps)?;
        detectors.push(ClassDetector {
            class_id: id,
            label,
            mean,
            std,
            projection: Matrix::from_vec(q, comps, data),
            thresholds,
        });
    }
    r.finish()?;
    Ok(DetectorBank {
        embed_layer,
        detectors,
    })
}

pub fn save_bank(bank: &DetectorBank, path: &Path) -> Result<()> {
    write_file(path, &render_bank(bank))
}

pub fn load_bank(path: &Path) -> Result<DetectorBank> {
    parse_bank(&read_file(path)?).map_err(|e| restore_err(path, e))
}
