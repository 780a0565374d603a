//! Plain-text model files.
//!
//! The format is line oriented and self-describing: a magic header, scalar
//! fields, then the layer stack with one row of weights per line. Floats are
//! written with Rust's shortest-roundtrip formatting, so save → load → save
//! reproduces the file byte for byte.

use super::{ConvLayer, ConvSpec, FcLayer, Layer, UtilityModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &str = "SHAPMKT-MODEL 1";

fn float_row(out: &mut String, row: &[f64]) {
    let mut first = true;
    for v in row {
        if !first {
            out.push(' ');
        }
        let _ = write!(out, "{v:?}");
        first = false;
    }
    out.push('\n');
}

fn fc_record(out: &mut String, fc: &FcLayer) {
    let (o, i) = (fc.out_dim(), fc.in_dim());
    let _ = writeln!(out, "fc {o} {i}");
    for r in 0..o {
        float_row(out, &fc.w.data()[r * i..(r + 1) * i]);
    }
    float_row(out, &fc.b);
}

fn conv_record(out: &mut String, cv: &ConvLayer) {
    let s = &cv.spec;
    let _ = writeln!(
        out,
        "conv {} {} {} {} {} {} {}",
        s.in_ch, s.in_h, s.in_w, s.out_ch, s.kernel, s.stride, s.pad
    );
    let cols = s.patch_len();
    for r in 0..s.out_ch {
        float_row(out, &cv.w.data()[r * cols..(r + 1) * cols]);
    }
    float_row(out, &cv.b);
}

/// Render a model in the text format.
pub fn model_to_text(m: &UtilityModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "preset {}", m.preset);
    let dims: Vec<String> = m.input_shape.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(out, "input {}", dims.join(" "));
    let _ = writeln!(out, "classes {}", m.classes);
    let _ = writeln!(out, "label_aware {}", u8::from(m.label_aware));
    let _ = writeln!(out, "frac_bits {}", m.frac_bits);
    let _ = writeln!(out, "empty_utility {:?}", m.empty_utility);
    let _ = writeln!(out, "extractor {}", m.extractor.len());
    for layer in &m.extractor {
        match layer {
            Layer::Fc(fc) => fc_record(&mut out, fc),
            Layer::Conv(cv) => conv_record(&mut out, cv),
            Layer::Square => out.push_str("square\n"),
        }
    }
    out.push_str("trans\n");
    fc_record(&mut out, &m.trans);
    let _ = writeln!(out, "network {}", m.network.len());
    for fc in &m.network {
        fc_record(&mut out, fc);
    }
    out
}

pub fn save_model(m: &UtilityModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_text(m))?;
    Ok(())
}

/// Reader over numbered lines; every message carries the 1-based line it
/// refers to.
struct Cursor<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor { lines: text.lines().enumerate(), line: 0 }
    }

    fn bad(&self, msg: impl std::fmt::Display) -> Error {
        Error::ModelFormat(format!("line {}: {msg}", self.line))
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.trim_end())
            }
            None => {
                self.line += 1;
                Err(self.bad("unexpected end of file"))
            }
        }
    }

    /// Next line split on whitespace, whose first token must be `key`.
    fn record(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first() {
            Some(&k) if k == key => Ok(fields[1..].to_vec()),
            _ => Err(self.bad(format!("expected a {key:?} record, found {line:?}"))),
        }
    }

    fn usizes(&self, fields: &[&str], want: usize, what: &str) -> Result<Vec<usize>> {
        if fields.len() != want {
            return Err(self.bad(format!("{what} needs {want} fields, found {}", fields.len())));
        }
        fields
            .iter()
            .map(|f| f.parse().map_err(|_| self.bad(format!("bad integer {f:?} in {what}"))))
            .collect()
    }

    fn float_row(&mut self, want: usize, what: &str) -> Result<Vec<f64>> {
        let line = self.next()?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse().map_err(|_| self.bad(format!("bad float {f:?} in {what}"))))
            .collect::<Result<_>>()?;
        if row.len() != want {
            return Err(self.bad(format!("{what} row has {} values, expected {want}", row.len())));
        }
        Ok(row)
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<(Tensor<f64>, Vec<f64>)> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.float_row(cols, what)?);
        }
        let bias = self.float_row(rows, what)?;
        Ok((Tensor::new(vec![rows, cols], data)?, bias))
    }

    fn fc_body(&mut self, fields: &[&str]) -> Result<FcLayer> {
        let d = self.usizes(fields, 2, "fc header")?;
        if d[0] == 0 || d[1] == 0 {
            return Err(self.bad("fc layer with a zero dimension"));
        }
        let (w, b) = self.matrix(d[0], d[1], "fc layer")?;
        Ok(FcLayer { w, b })
    }
}

/// Parse a model from the text format.
pub fn model_from_text(text: &str) -> Result<UtilityModel> {
    let mut cur = Cursor::new(text);
    if cur.next()? != MAGIC {
        return Err(cur.bad(format!("not a model file (expected {MAGIC:?} header)")));
    }
    let preset = match cur.record("preset")?.as_slice() {
        [name] => name.to_string(),
        _ => return Err(cur.bad("preset record needs exactly one name")),
    };
    let shape_fields = cur.record("input")?;
    let input_shape = cur.usizes(&shape_fields, shape_fields.len(), "input shape")?;
    if !matches!(input_shape.len(), 1 | 3) {
        return Err(cur.bad("input shape must be one (flat) or three (image) dimensions"));
    }
    let f = cur.record("classes")?;
    let classes = cur.usizes(&f, 1, "classes")?[0];
    let label_aware = match cur.record("label_aware")?.as_slice() {
        ["0"] => false,
        ["1"] => true,
        other => return Err(cur.bad(format!("label_aware must be 0 or 1, found {other:?}"))),
    };
    let f = cur.record("frac_bits")?;
    let frac_bits = cur.usizes(&f, 1, "frac_bits")?[0] as u32;
    let empty_utility = match cur.record("empty_utility")?.as_slice() {
        [v] => v
            .parse()
            .map_err(|_| cur.bad(format!("bad float {v:?} in empty_utility")))?,
        _ => return Err(cur.bad("empty_utility needs exactly one value")),
    };

    let f = cur.record("extractor")?;
    let n_layers = cur.usizes(&f, 1, "extractor count")?[0];
    let mut extractor = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let line = cur.next()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        extractor.push(match fields.split_first() {
            Some((&"square", [])) => Layer::Square,
            Some((&"fc", rest)) => Layer::Fc(cur.fc_body(rest)?),
            Some((&"conv", rest)) => {
                let d = cur.usizes(rest, 7, "conv header")?;
                let spec = ConvSpec {
                    in_ch: d[0],
                    in_h: d[1],
                    in_w: d[2],
                    out_ch: d[3],
                    kernel: d[4],
                    stride: d[5],
                    pad: d[6],
                };
                if spec.out_ch == 0 || spec.kernel == 0 || spec.stride == 0 {
                    return Err(cur.bad("conv layer with a zero dimension"));
                }
                let (w, b) = cur.matrix(spec.out_ch, spec.patch_len(), "conv layer")?;
                Layer::Conv(ConvLayer { spec, w, b })
            }
            _ => return Err(cur.bad(format!("unknown extractor layer {line:?}"))),
        });
    }

    let trans_line = cur.next()?;
    if trans_line != "trans" {
        return Err(cur.bad(format!("expected \"trans\", found {trans_line:?}")));
    }
    let fields = cur.record("fc")?;
    let trans = cur.fc_body(&fields)?;

    let f = cur.record("network")?;
    let n_net = cur.usizes(&f, 1, "network count")?[0];
    let mut network = Vec::with_capacity(n_net);
    for _ in 0..n_net {
        let fields = cur.record("fc")?;
        network.push(cur.fc_body(&fields)?);
    }
    if let Ok(extra) = cur.next() {
        if !extra.trim().is_empty() {
            return Err(cur.bad(format!("trailing content {extra:?} after the model")));
        }
    }

    let m = UtilityModel {
        preset,
        input_shape,
        classes,
        label_aware,
        extractor,
        trans,
        network,
        frac_bits,
        empty_utility,
    };
    m.validate()?;
    Ok(m)
}

pub fn read_model(path: &Path) -> Result<UtilityModel> {
    model_from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::super::build_preset;
    use super::*;

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut m = build_preset("mlp-synthetic", 7, 3, 91).unwrap();
        m.enable_label_awareness(92).unwrap();
        let text = model_to_text(&m);
        let back = model_from_text(&text).unwrap();
        assert_eq!(text, model_to_text(&back));
        assert_eq!(back.preset, "mlp-synthetic");
        assert!(back.label_aware);
        assert_eq!(back.trans.in_dim(), m.trans.in_dim());
    }

    #[test]
    fn conv_preset_roundtrips_through_a_file() {
        let m = build_preset("mnist-like", 0, 10, 93).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&m, &path).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(model_to_text(&m), model_to_text(&back));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let err = model_from_text("SHAPMKT-MODEL 2\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{msg}");
        assert!(msg.contains("not a model file"), "{msg}");
    }

    #[test]
    fn corrupted_dimension_chain_names_the_layer() {
        let m = build_preset("mlp-synthetic", 5, 2, 94).unwrap();
        // Shrink the trans layer header so the dimension chain breaks.
        let text = model_to_text(&m).replace("fc 32 32", "fc 32 31");
        let err = model_from_text(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row has"), "want a row-width complaint, got {msg}");

        // A consistent file whose trans width simply mismatches the extractor
        // fails validation and names the trans layer.
        let mut m2 = build_preset("mlp-synthetic", 5, 2, 95).unwrap();
        m2.trans = super::super::FcLayer {
            w: Tensor::new(vec![4, 31], vec![0.0; 124]).unwrap(),
            b: vec![0.0; 4],
        };
        let err = model_from_text(&model_to_text(&m2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("trans layer expects 31"), "{msg}");
    }

    #[test]
    fn truncated_file_reports_the_line() {
        let m = build_preset("mlp-synthetic", 4, 2, 96).unwrap();
        let text = model_to_text(&m);
        let cut: String = text.lines().take(12).map(|l| format!("{l}\n")).collect();
        let err = model_from_text(&cut).unwrap_err();
        assert!(err.to_string().contains("line 13"), "{err}");
    }
}
