use crate::error::{Error, Result};

/// Generalized advantage estimation over one trajectory.
///
/// `values` carries one bootstrap entry past the last reward. `dones[t]`
/// marks that the episode ended after step `t`, cutting both the bootstrap
/// and the advantage recursion.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let t_len = rewards.len();
    if values.len() != t_len + 1 || dones.len() != t_len {
        return Err(Error::Numerical {
            msg: format!(
                "gae length mismatch: {} rewards, {} values (need T+1), {} dones",
                t_len,
                values.len(),
                dones.len()
            ),
            dump: None,
        });
    }
    let mut adv = vec![0.0; t_len];
    let mut next = 0.0;
    for t in (0..t_len).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
