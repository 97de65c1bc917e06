use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::space::{Bounds, OutputSpace};
use crate::error::{invalid, Error, Result};
use crate::rows::Rows;

/// Samples (x, y) with x in a declared box X and y in a convex compact Y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    inputs: Rows,
    outputs: Rows,
    input_bounds: Bounds,
    output_space: OutputSpace,
}

impl LabeledDataset {
    pub fn new(
        inputs: Rows,
        outputs: Rows,
        input_bounds: Bounds,
        output_space: OutputSpace,
    ) -> Result<Self> {
        output_space.validate()?;
        if inputs.is_empty() {
            return Err(Error::DegenerateDataset("dataset has no samples".into()));
        }
        if inputs.len() != outputs.len() {
            return invalid(format!(
                "{} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            ));
        }
        if inputs.dim() != input_bounds.dim() {
            return invalid("input dimension does not match the input bounds");
        }
        if outputs.dim() != output_space.dim() {
            return invalid("output dimension does not match the output space");
        }
        for (i, x) in inputs.iter().enumerate() {
            if !input_bounds.contains(x) {
                return invalid(format!("sample {i} input lies outside the input bounds"));
            }
        }
        for (i, y) in outputs.iter().enumerate() {
            if !output_space.contains(y) {
                return invalid(format!("sample {i} output lies outside the output space"));
            }
        }
        Ok(Self {
            inputs,
            outputs,
            input_bounds,
            output_space,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim_x(&self) -> usize {
        self.inputs.dim()
    }

    pub fn dim_y(&self) -> usize {
        self.outputs.dim()
    }

    pub fn inputs(&self) -> &Rows {
        &self.inputs
    }

    pub fn outputs(&self) -> &Rows {
        &self.outputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn output(&self, i: usize) -> &[f64] {
        self.outputs.row(i)
    }

    pub fn input_bounds(&self) -> &Bounds {
        &self.input_bounds
    }

    pub fn output_space(&self) -> &OutputSpace {
        &self.output_space
    }

    /// Subset of samples in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::DegenerateDataset("empty subset".into()));
        }
        Ok(Self {
            inputs: self.inputs.select(indices),
            outputs: self.outputs.select(indices),
            input_bounds: self.input_bounds.clone(),
            output_space: self.output_space.clone(),
        })
    }

    /// Mean of all labels.
    pub fn label_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim_y()];
        for y in self.outputs.iter() {
            for (m, v) in mean.iter_mut().zip(y) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Writes `x0,..,y0,..` CSV, one row per sample.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (0..self.dim_x())
            .map(|i| format!("x{i}"))
            .chain((0..self.dim_y()).map(|i| format!("y{i}")))
            .collect();
        w.write_record(&header)?;
        for (x, y) in self.inputs.iter().zip(self.outputs.iter()) {
            let rec: Vec<String> = x.iter().chain(y).map(|v| format!("{v:?}")).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout produced by [`write_csv`](Self::write_csv).
    ///
    /// Input bounds are the coordinate-wise data range. Outputs that all lie
    /// on the simplex (dim >= 2) declare a simplex output space; otherwise the
    /// output range becomes a box.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let dim_x = header.iter().filter(|h| h.starts_with('x')).count();
        let dim_y = header.iter().filter(|h| h.starts_with('y')).count();
        let expected: Vec<String> = (0..dim_x)
            .map(|i| format!("x{i}"))
            .chain((0..dim_y).map(|i| format!("y{i}")))
            .collect();
        if dim_x == 0 || dim_y == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
            return invalid("dataset CSV header must be x0,..,x{d-1},y0,..,y{m-1}");
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!("non-numeric CSV field `{field}`"))
                })?;
                if c < dim_x {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
        }
        let inputs = Rows::from_flat(dim_x, xs)?;
        let outputs = Rows::from_flat(dim_y, ys)?;
        if inputs.is_empty() {
            return Err(Error::DegenerateDataset("dataset CSV has no rows".into()));
        }
        let input_bounds = range_box(&inputs);
        let simplex = OutputSpace::simplex(dim_y);
        let output_space = if dim_y >= 2 && outputs.iter().all(|y| simplex.contains(y)) {
            simplex
        } else {
            let b = range_box(&outputs);
            OutputSpace::Box {
                lower: b.lower,
                upper: b.upper,
            }
        };
        Self::new(inputs, outputs, input_bounds, output_space)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }
}

fn range_box(rows: &Rows) -> Bounds {
    let mut lower = vec![f64::INFINITY; rows.dim()];
    let mut upper = vec![f64::NEG_INFINITY; rows.dim()];
    for r in rows.iter() {
        for (k, &v) in r.iter().enumerate() {
            lower[k] = lower[k].min(v);
            upper[k] = upper[k].max(v);
        }
    }
    Bounds { lower, upper }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        LabeledDataset::new(
            Rows::from_rows(&[[0.1, 0.2], [0.9, 0.4]]).unwrap(),
            Rows::from_rows(&[[1.0, 0.0], [0.25, 0.75]]).unwrap(),
            Bounds::unit(2),
            OutputSpace::simplex(2),
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = tiny();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,y0,y1\n"));
        let back = LabeledDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.inputs(), d.inputs());
        assert_eq!(back.outputs(), d.outputs());
        assert!(back.output_space().is_simplex());
    }

    #[test]
    fn rejects_labels_off_the_simplex() {
        let err = LabeledDataset::new(
            Rows::from_rows(&[[0.5]]).unwrap(),
            Rows::from_rows(&[[0.6, 0.6]]).unwrap(),
            Bounds::unit(1),
            OutputSpace::simplex(2),
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_inputs_outside_box() {
        let err = LabeledDataset::new(
            Rows::from_rows(&[[1.5]]).unwrap(),
            Rows::from_rows(&[[0.0]]).unwrap(),
            Bounds::unit(1),
            OutputSpace::unit_box(1),
        );
        assert!(err.is_err());
    }
}
