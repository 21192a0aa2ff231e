use std::path::Path;

use super::MlpModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sections::{write_section, write_vector, SectionReader};

const HEADER: &str = "# mlp checkpoint v1 activation=relu";

/// Sections W1, b1, W2, b2 in that order.
pub fn model_to_text<T: Scalar>(model: &MlpModel<T>) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    write_section(&mut out, "W1", &model.w1);
    write_vector(&mut out, "b1", &model.b1);
    write_section(&mut out, "W2", &model.w2);
    write_vector(&mut out, "b2", &model.b2);
    out
}

pub fn model_from_text<T: Scalar>(text: &str) -> Result<MlpModel<T>> {
    let mut r = SectionReader::new(text);
    let w1 = r.read("W1")?;
    let b1 = r.read_vector("b1")?;
    let w2 = r.read("W2")?;
    let b2 = r.read_vector("b2")?;
    if !r.is_done() {
        return Err(Error::Format { line: 0, message: "trailing data after b2".into() });
    }
    MlpModel::from_parts(w1, b1, w2, b2)
}

pub fn save_checkpoint<T: Scalar>(model: &MlpModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_text(model))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<MlpModel<T>> {
    model_from_text(&std::fs::read_to_string(path)?)
}
