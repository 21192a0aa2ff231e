use crate::error::Result;
use crate::gmm::{data_probability, fit_gmm, GmmConfig};
use crate::linalg::Matrix;
use crate::model::MlpModel;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassEstimate {
    pub classes: Vec<usize>,
    /// Active class set entering each round.
    pub history: Vec<Vec<usize>>,
}

/// Iteratively drops classes whose mixture responsibility mass is below
/// `tau · n / |C|` until the active set is stable.
pub fn estimate_classes<T: Scalar>(
    model: &MlpModel<T>,
    x: &Matrix<T>,
    tau: f64,
    gmm_cfg: &GmmConfig,
) -> Result<ClassEstimate> {
    let out = model.forward(x)?;
    let probs = crate::model::model_probability(&out.logits);
    let n = x.rows();
    let mut classes: Vec<usize> = (0..model.class_count()).collect();
    let mut history = Vec::new();
    loop {
        history.push(classes.clone());
        let feats = gmm_cfg.layer.select(&out);
        let fit = fit_gmm(feats, &probs, &classes, gmm_cfg)?;
        let dp = data_probability(&fit.params, feats)?;
        let masses = dp.class_masses();
        let threshold = T::of(tau * n as f64 / classes.len() as f64);
        let kept: Vec<usize> = fit
            .params
            .classes()
            .iter()
            .zip(&masses)
            .filter(|(_, &m)| m >= threshold)
            .map(|(&c, _)| c)
            .collect();
        if kept.is_empty() {
            let best = crate::scalar::argmax(&masses);
            log::warn!("class estimation would drop every class; keeping the heaviest");
            classes = vec![fit.params.classes()[best]];
            break;
        }
        if kept == classes {
            break;
        }
        classes = kept;
    }
    Ok(ClassEstimate { classes, history })
}
