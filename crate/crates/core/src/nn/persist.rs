use std::path::Path;

use super::{DenseLayer, MlpModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::textdoc::{read_file, restore_err, write_file, DocReader, DocWriter};

const FORMAT: &str = "weldwatch-mlp";
const VERSION: u32 = 1;

/// Renders a model as a self-describing text document.
pub fn render_model(model: &MlpModel) -> String {
    let mut w = DocWriter::new(FORMAT, VERSION);
    w.ints("layer_sizes", model.layer_sizes());
    w.int("seed", model.seed());
    w.line("activation", &["relu"]);
    for label in model.labels() {
        w.text("label", label);
    }
    for (i, layer) in model.layers().iter().enumerate() {
        w.ints("layer", &[i, layer.fan_out(), layer.fan_in()]);
        for r in 0..layer.fan_out() {
            w.reals("w", layer.weights.row(r));
        }
        w.reals("b", &layer.biases);
    }
    w.finish()
}

pub fn parse_model(text: &str) -> Result<MlpModel> {
    let mut r = DocReader::open(text, FORMAT, VERSION)?;
    let sizes = r.ints("layer_sizes")?;
    let seed: u64 = r.int("seed")?;
    let (line, act) = r.expect("activation")?;
    if act != ["relu"] {
        return Err(Error::Parse {
            line,
            reason: format!("unsupported activation {act:?}"),
        });
    }
    if sizes.len() < 2 {
        return Err(Error::Parse {
            line: 2,
            reason: "layer_sizes needs at least two entries".into(),
        });
    }
    let classes = *sizes.last().unwrap();
    let labels = (0..classes).map(|_| r.text("label")).collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for (i, w) in sizes.windows(2).enumerate() {
        let (line, hdr) = r.expect("layer")?;
        let expected = [i.to_string(), w[1].to_string(), w[0].to_string()];
        if hdr != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Parse {
                line,
                reason: format!("layer header {hdr:?} does not match layer_sizes"),
            });
        }
        let mut data = Vec::with_capacity(w[0] * w[1]);
        for _ in 0..w[1] {
            data.extend(r.reals("w", w[0])?);
        }
        let biases = r.reals("b", w[1])?;
        layers.push(DenseLayer {
            weights: Matrix::from_vec(w[1], w[0], data),
            biases,
        });
    }
    r.finish()?;
    MlpModel::from_layers(layers, seed, labels)
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    write_file(path, &render_model(model))
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    parse_model(&read_file(path)?).map_err(|e| restore_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_mlp;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = init_mlp(&[5, 7, 4, 3], 42)
            .unwrap()
            .with_labels(vec!["new clean".into(), "worn".into(), "x".into()])
            .unwrap();
        let back = parse_model(&render_model(&m)).unwrap();
        assert_eq!(back, m);
        let x = [0.1, -0.2, 0.3, 1.5, -2.0];
        assert_eq!(m.predict_proba(&x).unwrap(), back.predict_proba(&x).unwrap());
    }

    #[test]
    fn truncated_file_fails_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        let text = render_model(&init_mlp(&[3, 4, 2], 1).unwrap());
        std::fs::write(&path, &text[..text.len() - 90]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Restore { .. })));
    }
}
