use crate::error::{Error, Result};
use crate::tensor::window_mean;

/// Trend/seasonal split used by the DLinear baseline.
///
/// The trend is a centered moving average over `ma_kernel` values with the
/// series edges replicated `(ma_kernel - 1) / 2` times on each side; the
/// seasonal part is the residual.
pub fn moving_average_decompose(x: &[f64], ma_kernel: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if ma_kernel == 0 || ma_kernel % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "moving-average kernel must be odd and >= 1, got {ma_kernel}"
        )));
    }
    let Some((&first, &last)) = x.first().zip(x.last()) else {
        return Err(Error::Shape("cannot decompose an empty series".into()));
    };
    let half = (ma_kernel - 1) / 2;
    let mut padded = Vec::with_capacity(x.len() + 2 * half);
    padded.resize(half, first);
    padded.extend_from_slice(x);
    padded.resize(x.len() + 2 * half, last);

    let trend: Vec<f64> = padded.windows(ma_kernel).map(window_mean).collect();
    let seasonal = x.iter().zip(&trend).map(|(v, t)| v - t).collect();
    Ok((trend, seasonal))
}
