//! Non-learned spatial estimators.

use crate::error::{contract_err, Error, Result};
use crate::mission::MeasurementSet;
use crate::rf_env::SnrMap;

fn require_observations(ms: &MeasurementSet) -> Result<()> {
    if ms.is_empty() {
        return Err(Error::UndefinedEstimate(
            "no measurements to interpolate".into(),
        ));
    }
    Ok(())
}

/// Inverse-distance-weighted interpolation with weights `1 / d^power`,
/// distances in cells. Observed cells keep their measured values.
pub fn idw_interpolate(ms: &MeasurementSet, cell_size_m: f64, power: f64) -> Result<SnrMap> {
    require_observations(ms)?;
    if !(power > 0.0) {
        return Err(contract_err("IDW power must be > 0"));
    }
    let pts: Vec<(f64, f64, f64)> = ms
        .observations()
        .map(|(c, v)| ((c % ms.width) as f64, (c / ms.width) as f64, v))
        .collect();
    let half_power = power / 2.0;
    let values = ms
        .values
        .iter()
        .enumerate()
        .map(|(cell, observed)| {
            if let Some(v) = observed {
                return *v;
            }
            let (x, y) = ((cell % ms.width) as f64, (cell / ms.width) as f64);
            let (mut num, mut den) = (0.0, 0.0);
            for &(px, py, v) in &pts {
                let w = ((px - x).powi(2) + (py - y).powi(2)).powf(-half_power);
                num += w * v;
                den += w;
            }
            num / den
        })
        .collect();
    SnrMap::new(ms.width, ms.height, cell_size_m, values)
}

/// Fills unobserved cells with the mean of the observed values.
pub fn mean_fill(ms: &MeasurementSet, cell_size_m: f64) -> Result<SnrMap> {
    require_observations(ms)?;
    let mean = ms.observations().map(|(_, v)| v).sum::<f64>() / ms.len() as f64;
    let values = ms.values.iter().map(|v| v.unwrap_or(mean)).collect();
    SnrMap::new(ms.width, ms.height, cell_size_m, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_measurement_gives_constant_map() {
        let mut ms = MeasurementSet::empty(5, 4);
        ms.record(7, 12.5);
        let m = idw_interpolate(&ms, 10.0, 2.0).unwrap();
        assert!(m.values.iter().all(|&v| (v - 12.5).abs() < 1e-12));
    }

    #[test]
    fn equidistant_cell_takes_midpoint() {
        let mut ms = MeasurementSet::empty(3, 1);
        ms.record(0, 10.0);
        ms.record(2, 30.0);
        let m = idw_interpolate(&ms, 10.0, 2.0).unwrap();
        assert!((m.values[1] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn empty_set_is_undefined() {
        let ms = MeasurementSet::empty(3, 3);
        assert!(matches!(
            idw_interpolate(&ms, 1.0, 2.0),
            Err(Error::UndefinedEstimate(_))
        ));
        assert!(matches!(
            mean_fill(&ms, 1.0),
            Err(Error::UndefinedEstimate(_))
        ));
    }

    #[test]
    fn mean_fill_values() {
        let mut ms = MeasurementSet::empty(2, 2);
        ms.record(0, 10.0);
        ms.record(3, 20.0);
        let m = mean_fill(&ms, 1.0).unwrap();
        assert_eq!(m.values, vec![10.0, 15.0, 15.0, 20.0]);
    }

    #[test]
    fn mean_fill_counts_revisited_cells_once() {
        let mut ms = MeasurementSet::empty(2, 2);
        ms.record(0, 10.0);
        ms.record(0, 10.0);
        ms.record(1, 40.0);
        let m = mean_fill(&ms, 1.0).unwrap();
        assert_eq!(m.values[2], 25.0);
    }

    #[test]
    fn full_observation_is_returned_verbatim() {
        let mut ms = MeasurementSet::empty(2, 2);
        for (i, v) in [1.0, 2.0, 3.0, 4.0].into_iter().enumerate() {
            ms.record(i, v);
        }
        assert_eq!(
            mean_fill(&ms, 1.0).unwrap().values,
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            idw_interpolate(&ms, 1.0, 2.0).unwrap().values,
            vec![1.0, 2.0, 3.0, 4.0]
        );
    }
}
