use crate::error::{Error, Result};
use crate::nn::{self, Tensor};
use crate::probgen::DatasetRecord;

/// Size of the symmetry group of the square.
pub const D4_ORDER: usize = 8;

/// Applies D4 element `id` to a row-major `h × w` grid and returns the new
/// `(h, w, data)`.
///
/// Ids `4..8` mirror left-right first; then the grid is rotated a quarter
/// turn clockwise `id % 4` times.
pub fn transform_grid<T: Copy>(h: usize, w: usize, data: &[T], id: usize) -> Result<(usize, usize, Vec<T>)> {
    if id >= D4_ORDER {
        return Err(Error::InvalidParameter(format!("transform id {id} outside 0..8")));
    }
    if data.len() != h * w {
        return Err(Error::shape(format!("{h}x{w} grid needs {} values, got {}", h * w, data.len())));
    }
    let mut cur = data.to_vec();
    if id >= 4 {
        for row in cur.chunks_exact_mut(w) {
            row.reverse();
        }
    }
    let (mut h, mut w) = (h, w);
    for _ in 0..id % 4 {
        let mut out = cur.clone();
        for y in 0..h {
            for x in 0..w {
                out[x * h + (h - 1 - y)] = cur[y * w + x];
            }
        }
        cur = out;
        (h, w) = (w, h);
    }
    Ok((h, w, cur))
}

/// One network input with its target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub x_n: Tensor,
    pub delta_x: Tensor,
    pub target: Tensor,
}

impl TrainingSample {
    pub fn input(&self) -> Result<Tensor> {
        nn::concat_channels(&self.x_n, &self.delta_x)
    }
}

/// The design after `k` updates, its last update and the binarized final
/// design, all under D4 element `transform_id`.
pub fn make_sample(record: &DatasetRecord, k: usize, transform_id: usize) -> Result<TrainingSample> {
    let count = record.frame_count();
    if k == 0 || k >= count {
        return Err(Error::InvalidParameter(format!(
            "stop iteration {k} outside [1, {}]",
            count.saturating_sub(1)
        )));
    }
    let (h, w) = (record.problem().nely(), record.problem().nelx());
    let x = record.design(k)?;
    let prev = record.design(k - 1)?;
    let delta: Vec<f64> = x.iter().zip(&prev).map(|(a, b)| a - b).collect();
    let target: Vec<f64> = record
        .final_design()
        .into_iter()
        .map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    let tensor = |d: Vec<f64>| -> Result<Tensor> {
        let (th, tw, d) = transform_grid(h, w, &d, transform_id)?;
        Tensor::new([1, th, tw], d)
    };
    Ok(TrainingSample {
        x_n: tensor(x)?,
        delta_x: tensor(delta)?,
        target: tensor(target)?,
    })
}
