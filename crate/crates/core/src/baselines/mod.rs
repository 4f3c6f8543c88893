//! Comparison estimators: spatial interpolators and a recurrent sequence-to-map model.

mod interp;
mod recurrent;

pub use interp::{idw_interpolate, mean_fill};
pub use recurrent::{
    measurement_sequence, recurrent_fit_predict, train_recurrent, CellKind, RecurrentConfig,
    RecurrentModel, RecurrentSpec, RECURRENT_INPUT,
};
