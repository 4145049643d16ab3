//! Versioned text format for networks.
//!
//! ```text
//! wasslip-model v1
//! norm l2
//! dims 2,8,3
//! activations relu
//! bias 1,1
//! W 0
//! <8 CSV rows of 2 entries>
//! b 0
//! <1 CSV row of 8 entries>
//! W 1
//! <3 CSV rows of 8 entries>
//! b 1
//! <1 CSV row of 3 entries>
//! ```
//!
//! Floats carry 17 significant digits so a write/read cycle is bit-exact.
//! `activations` lists one tag per hidden layer (empty for a linear model),
//! `bias` one flag per linear layer.

use super::{Activation, Layer, LinearSoftmax, Mlp};
use crate::error::{Error, Result};
use crate::numerics::{fmt_f64, parse_csv_floats, write_matrix_csv, Matrix, NormTag};

const MAGIC: &str = "wasslip-model v1";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub norm: NormTag,
    pub model: Mlp,
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_model(file: &ModelFile) -> String {
    let model = &file.model;
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("norm {}\n", file.norm));
    out.push_str(&format!("dims {}\n", join(model.dims())));
    out.push_str(&format!(
        "activations {}\n",
        join(model.hidden().iter().map(|l| l.activation.as_str()))
    ));
    let biases: Vec<Option<&[f64]>> = model
        .hidden()
        .iter()
        .map(|l| l.bias.as_deref())
        .chain(std::iter::once(model.head().bias()))
        .collect();
    out.push_str(&format!(
        "bias {}\n",
        join(biases.iter().map(|b| if b.is_some() { 1 } else { 0 }))
    ));
    for (i, (w, b)) in model.weights().into_iter().zip(&biases).enumerate() {
        out.push_str(&format!("W {i}\n"));
        write_matrix_csv(w, &mut out);
        if let Some(b) = b {
            out.push_str(&format!("b {i}\n"));
            out.push_str(&join(b.iter().map(|v| fmt_f64(*v))));
            out.push('\n');
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l.trim())
            }
            None => Err(Error::parse(self.last + 1, "unexpected end of model file")),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.trim()),
            _ if line == key => Ok(""),
            _ => Err(Error::parse(
                self.last,
                format!("expected '{key} …', found '{line}'"),
            )),
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, line: usize) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|e| Error::parse(line, format!("'{t}': {e}")))
        })
        .collect()
}

pub fn read_model(text: &str) -> Result<ModelFile> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    if lines.next()? != MAGIC {
        return Err(Error::parse(1, format!("expected header '{MAGIC}'")));
    }
    let norm: NormTag = lines.keyed("norm")?.parse()?;
    let dims: Vec<usize> = parse_list(lines.keyed("dims")?, lines.last)?;
    let activations: Vec<Activation> = {
        let raw = lines.keyed("activations")?;
        let line = lines.last;
        parse_list::<String>(raw, line)?
            .iter()
            .map(|a| {
                a.parse()
                    .map_err(|e: Error| Error::parse(line, e.to_string()))
            })
            .collect::<Result<_>>()?
    };
    let bias: Vec<u8> = parse_list(lines.keyed("bias")?, lines.last)?;
    if dims.len() < 2 || activations.len() != dims.len() - 2 || bias.len() != dims.len() - 1 {
        return Err(Error::parse(
            lines.last,
            "inconsistent dims/activations/bias header",
        ));
    }

    let mut mats = Vec::new();
    for i in 0..dims.len() - 1 {
        let tag: usize = lines
            .keyed("W")?
            .parse()
            .map_err(|_| Error::parse(lines.last, "bad layer index"))?;
        if tag != i {
            return Err(Error::parse(lines.last, format!("expected block W {i}")));
        }
        let (rows, cols) = (dims[i + 1], dims[i]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = parse_csv_floats(lines.next()?, lines.last)?;
            if row.len() != cols {
                return Err(Error::parse(lines.last, format!("expected {cols} entries")));
            }
            data.extend(row);
        }
        let w = Matrix::new(rows, cols, data)?;
        let b = if bias[i] != 0 {
            lines.keyed("b")?;
            let row = parse_csv_floats(lines.next()?, lines.last)?;
            if row.len() != rows {
                return Err(Error::parse(
                    lines.last,
                    format!("expected {rows} bias entries"),
                ));
            }
            Some(row)
        } else {
            None
        };
        mats.push((w, b));
    }
    let (head_w, head_b) = mats.pop().expect("at least one layer");
    let hidden = mats
        .into_iter()
        .zip(activations)
        .map(|((w, b), a)| Layer::new(w, b, a))
        .collect::<Result<Vec<_>>>()?;
    let model = Mlp::new(hidden, LinearSoftmax::new(head_w, head_b)?)?;
    Ok(ModelFile { norm, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dims in [vec![2, 3], vec![4, 5, 3], vec![3, 6, 6, 2]] {
            let model =
                Mlp::random(&dims, Activation::Relu, dims.len() % 2 == 1, &mut rng).unwrap();
            let file = ModelFile {
                norm: NormTag::Linf,
                model,
            };
            let back = read_model(&write_model(&file)).unwrap();
            assert_eq!(back, file);
        }
    }

    #[test]
    fn rejects_truncated_and_bad_headers() {
        assert!(read_model("not a model").is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let file = ModelFile {
            norm: NormTag::L2,
            model: Mlp::random(&[2, 3, 2], Activation::Tanh, true, &mut rng).unwrap(),
        };
        let text = write_model(&file);
        let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_model(&truncated), Err(Error::Parse { .. })));
    }
}
