use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::projection::ConstraintSpec;

/// A slice of one trajectory used as an independent training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub trajectory: usize,
    pub start: usize,
    pub len: usize,
}

/// Borrowed view of a window's samples and its trajectory's constraint.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub times: &'a [f64],
    pub states: &'a [Vector],
    pub constraint: &'a ConstraintSpec,
}

/// Start indices `0, S, 2S, ...` of length-`W` windows over `L` samples.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window < 2 {
        return Err(Error::InvalidArgument(format!(
            "window length must be at least 2, got {window}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument(
            "window stride must be positive".into(),
        ));
    }
    if window > len {
        return Err(Error::InvalidArgument(format!(
            "window length {window} exceeds trajectory length {len}"
        )));
    }
    Ok((0..=len - window).step_by(stride).collect())
}

/// Overlapping windows over every trajectory of `dataset`.
pub fn make_windows(dataset: &Dataset, window: usize, stride: usize) -> Result<Vec<WindowRef>> {
    let mut out = Vec::new();
    for (trajectory, tr) in dataset.trajectories.iter().enumerate() {
        for start in window_starts(tr.len(), window, stride)? {
            out.push(WindowRef {
                trajectory,
                start,
                len: window,
            });
        }
    }
    Ok(out)
}

/// One window per trajectory covering all of it.
pub fn full_windows(dataset: &Dataset) -> Vec<WindowRef> {
    dataset
        .trajectories
        .iter()
        .enumerate()
        .map(|(trajectory, tr)| WindowRef {
            trajectory,
            start: 0,
            len: tr.len(),
        })
        .collect()
}

impl WindowRef {
    pub fn view<'a>(&self, dataset: &'a Dataset, constraints: &'a [ConstraintSpec]) -> Window<'a> {
        let tr = &dataset.trajectories[self.trajectory];
        let range = self.start..self.start + self.len;
        Window {
            times: &tr.times[range.clone()],
            states: &tr.states[range],
            constraint: &constraints[self.trajectory],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_examples() {
        assert_eq!(window_starts(10, 4, 2).unwrap(), vec![0, 2, 4, 6]);
        assert_eq!(window_starts(10, 10, 1).unwrap(), vec![0]);
        assert!(window_starts(5, 6, 1).is_err());
        assert!(window_starts(5, 1, 1).is_err());
        assert!(window_starts(5, 2, 0).is_err());
    }
}
