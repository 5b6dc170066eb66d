use std::collections::BTreeMap;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::LanternParams;

/// First and second moment estimates for every parameter, plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &LanternParams) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params
            .iter()
            .map(|(name, t)| (name.clone(), vec![0.0; t.len()]))
            .collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

fn check_len(what: &str, name: &str, got: Option<usize>, want: usize) -> Result<()> {
    match got {
        Some(n) if n == want => Ok(()),
        Some(n) => Err(Error::shape("adam_step", &[n], &[want])),
        None => Err(Error::InvalidArgument(format!("{what} missing for parameter `{name}`"))),
    }
}

/// One bias-corrected Adam update of every parameter in place.
///
/// The step counter is incremented first, so the first call uses `t = 1`.
pub fn adam_step(
    params: &mut LanternParams,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, t) in params.iter() {
        check_len("gradient", name, grads.get(name).map(Vec::len), t.len())?;
        check_len("first moment", name, state.first.get(name).map(Vec::len), t.len())?;
        check_len("second moment", name, state.second.get(name).map(Vec::len), t.len())?;
    }
    if let Some(extra) = grads.keys().find(|k| params.get(k).is_none()) {
        return Err(Error::InvalidArgument(format!("gradient for unknown parameter `{extra}`")));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, w) in params.iter_mut() {
        let g = &grads[name];
        let m = state.first.get_mut(name).expect("checked");
        let v = state.second.get_mut(name).expect("checked");
        for (((wi, &gi), mi), vi) in w.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *wi -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
