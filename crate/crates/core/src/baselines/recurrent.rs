//! Gated recurrent sequence-to-map baseline.
//!
//! The cell reads visit-ordered `(x, y, value)` triples; a dense readout maps
//! the final hidden state to a unit-scale map. Batches are processed
//! time-major with rows sorted by sequence length, so the rows still active at
//! step `s` are always a prefix of the batch.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::TrainingData;
use crate::error::{config_err, contract_err, Error, Result};
use crate::mission::MeasurementSet;
use crate::nn::{self, sigmoid, Activation, AdamState, Checkpoint, NetParams, NetSpec};
use crate::rf_env::{db_to_unit, from_unit, EnvConfig, SnrClamp, SnrMap, UnitMap};
use crate::rng::{stream_rng, Stream};

pub const RECURRENT_INPUT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// Update and reset gates.
    Gru,
    /// One forget gate serving as both update and reset gate.
    Mgu,
}

impl CellKind {
    fn n_gates(self) -> usize {
        match self {
            CellKind::Gru => 2,
            CellKind::Mgu => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecurrentConfig {
    pub hidden: usize,
    pub cell: CellKind,
    /// Hidden widths of the readout between the state and the map.
    pub readout_hidden: Vec<usize>,
    pub batch_size: usize,
    pub train_steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            cell: CellKind::Mgu,
            readout_hidden: vec![256],
            batch_size: 16,
            train_steps: 5000,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Shapes of the recurrent estimator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentSpec {
    pub input: usize,
    pub hidden: usize,
    pub cell: CellKind,
    pub readout: NetSpec,
}

impl RecurrentSpec {
    pub fn new(
        hidden: usize,
        cell: CellKind,
        readout_hidden: &[usize],
        n_cells: usize,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(config_err("recurrent hidden size must be positive"));
        }
        let mut sizes = vec![hidden];
        sizes.extend(readout_hidden);
        sizes.push(n_cells);
        Ok(Self {
            input: RECURRENT_INPUT,
            hidden,
            cell,
            readout: NetSpec::new(sizes, Activation::Silu)?,
        })
    }

    /// `[input weights, gate recurrent weights, candidate recurrent weights, biases]`.
    pub fn cell_shapes(&self) -> Vec<Vec<usize>> {
        let (i, h, g) = (self.input, self.hidden, self.cell.n_gates());
        vec![
            vec![i, (g + 1) * h],
            vec![h, g * h],
            vec![h, h],
            vec![(g + 1) * h],
        ]
    }

    pub fn cell_param_count(&self) -> usize {
        self.cell_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentModel {
    pub spec: RecurrentSpec,
    pub cell: NetParams,
    pub readout: NetParams,
    pub width: usize,
    pub height: usize,
}

/// Views into the flat cell parameters.
struct CellViews<'a> {
    wx: ArrayView2<'a, f64>,
    wh_gates: ArrayView2<'a, f64>,
    wh_cand: ArrayView2<'a, f64>,
    bias: &'a [f64],
}

fn cell_views<'a>(spec: &RecurrentSpec, values: &'a [f64]) -> CellViews<'a> {
    let shapes = spec.cell_shapes();
    let mut rest = values;
    let mut take = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let (head, tail) = rest.split_at(n);
        rest = tail;
        head
    };
    let wx = ArrayView2::from_shape((shapes[0][0], shapes[0][1]), take(&shapes[0])).unwrap();
    let wh_gates = ArrayView2::from_shape((shapes[1][0], shapes[1][1]), take(&shapes[1])).unwrap();
    let wh_cand = ArrayView2::from_shape((shapes[2][0], shapes[2][1]), take(&shapes[2])).unwrap();
    let bias = take(&shapes[3]);
    CellViews {
        wx,
        wh_gates,
        wh_cand,
        bias,
    }
}

/// Normalised `(x, y, value)` triples in visit order.
pub fn measurement_sequence(ms: &MeasurementSet, clamp: &SnrClamp) -> Vec<[f64; RECURRENT_INPUT]> {
    let sx = (ms.width.max(2) - 1) as f64;
    let sy = (ms.height.max(2) - 1) as f64;
    ms.observations()
        .map(|(c, v)| {
            let (x, y) = ((c % ms.width) as f64, (c / ms.width) as f64);
            [
                2.0 * x / sx - 1.0,
                2.0 * y / sy - 1.0,
                db_to_unit(v, clamp).clamp(-1.0, 1.0),
            ]
        })
        .collect()
}

/// Per-step activations kept for the backward pass. Row counts shrink with `s`.
struct StepCache {
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    c: Array2<f64>,
}

struct SeqForward {
    /// Batch rows sorted by decreasing length: `order[k]` is the original row.
    order: Vec<usize>,
    inputs: Vec<Array2<f64>>,
    steps: Vec<StepCache>,
    /// Final hidden states in original row order.
    h_final: Array2<f64>,
}

impl RecurrentModel {
    pub fn new(config: &RecurrentConfig, width: usize, height: usize) -> Result<Self> {
        if config.batch_size == 0 || !(config.learning_rate > 0.0) {
            return Err(config_err(
                "recurrent batch_size and learning_rate must be positive",
            ));
        }
        let spec = RecurrentSpec::new(
            config.hidden,
            config.cell,
            &config.readout_hidden,
            width * height,
        )?;
        let mut rng = stream_rng(config.seed, Stream::Init, 1);
        let fan_in = (spec.input + spec.hidden) as f64;
        let mut values = Vec::with_capacity(spec.cell_param_count());
        let shapes = spec.cell_shapes();
        for shape in &shapes[..3] {
            let n: usize = shape.iter().product();
            values.extend((0..n).map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z / fan_in.sqrt()
            }));
        }
        values.extend(std::iter::repeat_n(0.0, shapes[3][0]));
        let cell = NetParams::from_values(shapes, values, config.seed)?;
        let readout = NetParams::init(&spec.readout, config.seed);
        Ok(Self {
            spec,
            cell,
            readout,
            width,
            height,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    fn run_sequences(&self, seqs: &[&[[f64; RECURRENT_INPUT]]]) -> SeqForward {
        let h = self.spec.hidden;
        let g = self.spec.cell.n_gates();
        let v = cell_views(&self.spec, self.cell.values());
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(seqs[i].len()));
        let max_len = order.first().map_or(0, |&i| seqs[i].len());
        let mut state = Array2::<f64>::zeros((seqs.len(), h));
        let mut inputs = Vec::with_capacity(max_len);
        let mut steps = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let k = order.iter().take_while(|&&i| seqs[i].len() > t).count();
            let x = Array2::from_shape_fn((k, self.spec.input), |(row, j)| seqs[order[row]][t][j]);
            let h_prev = state.slice(s![..k, ..]).to_owned();
            let mut pre = x.dot(&v.wx);
            pre += &ArrayView1::from(v.bias);
            let mut gates = pre.slice(s![.., ..g * h]).to_owned();
            gates += &h_prev.dot(&v.wh_gates);
            gates.mapv_inplace(sigmoid);
            let z = gates.slice(s![.., ..h]).to_owned();
            let r = if g == 2 {
                gates.slice(s![.., h..]).to_owned()
            } else {
                z.clone()
            };
            let mut c = pre.slice(s![.., g * h..]).to_owned();
            c += &(&r * &h_prev).dot(&v.wh_cand);
            c.mapv_inplace(f64::tanh);
            let h_new = &h_prev + &(&z * &(&c - &h_prev));
            state.slice_mut(s![..k, ..]).assign(&h_new);
            inputs.push(x);
            steps.push(StepCache { h_prev, z, r, c });
        }
        let mut h_final = Array2::zeros((seqs.len(), h));
        for (sorted, &orig) in order.iter().enumerate() {
            h_final.row_mut(orig).assign(&state.row(sorted));
        }
        SeqForward {
            order,
            inputs,
            steps,
            h_final,
        }
    }

    /// Unit-scale maps, one row per sequence, clamped to `[-1, 1]`.
    pub fn predict_units(&self, seqs: &[&[[f64; RECURRENT_INPUT]]]) -> Result<Array2<f64>> {
        let fwd = self.run_sequences(seqs);
        let mut out = nn::infer(&self.spec.readout, &self.readout, fwd.h_final.view())?;
        out.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        Ok(out)
    }

    pub fn predict(&self, ms: &MeasurementSet, env: &EnvConfig) -> Result<SnrMap> {
        if ms.n_cells() != self.n_cells() {
            return Err(contract_err("measurement grid does not match the model"));
        }
        let seq = measurement_sequence(ms, &env.snr_clamp);
        let out = self.predict_units(&[&seq])?;
        Ok(from_unit(
            &UnitMap {
                width: self.width,
                height: self.height,
                values: out.row(0).to_vec(),
            },
            env,
        ))
    }

    /// Mean squared error against `targets` and its gradient with respect to
    /// the cell and readout parameters.
    pub fn loss_and_gradients(
        &self,
        seqs: &[&[[f64; RECURRENT_INPUT]]],
        targets: ArrayView2<f64>,
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        if targets.dim() != (seqs.len(), self.n_cells()) {
            return Err(contract_err("targets do not match the batch"));
        }
        let fwd = self.run_sequences(seqs);
        let (out, cache) =
            nn::forward_batch(&self.spec.readout, &self.readout, fwd.h_final.view())?;
        let count = out.len() as f64;
        let diff = &out - &targets;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
        let grad_out = diff.mapv(|d| 2.0 * d / count);
        let readout_grads =
            nn::backward(&self.spec.readout, &self.readout, &cache, grad_out.view())?;
        let cell_grads = self.cell_backward(&fwd, readout_grads.input.view());
        Ok((loss, cell_grads, readout_grads.params))
    }

    fn cell_backward(&self, fwd: &SeqForward, d_final: ArrayView2<f64>) -> Vec<f64> {
        let h = self.spec.hidden;
        let g = self.spec.cell.n_gates();
        let v = cell_views(&self.spec, self.cell.values());
        let mut d_wx = Array2::<f64>::zeros(v.wx.dim());
        let mut d_whg = Array2::<f64>::zeros(v.wh_gates.dim());
        let mut d_whc = Array2::<f64>::zeros(v.wh_cand.dim());
        let mut d_b = vec![0.0; v.bias.len()];

        let mut dh = Array2::<f64>::zeros((fwd.order.len(), h));
        for (sorted, &orig) in fwd.order.iter().enumerate() {
            dh.row_mut(sorted).assign(&d_final.row(orig));
        }
        for (x, st) in fwd.inputs.iter().zip(&fwd.steps).rev() {
            let k = x.nrows();
            let dh_k = dh.slice(s![..k, ..]).to_owned();
            // h' = h + z (c - h)
            let dz = &dh_k * &(&st.c - &st.h_prev);
            let dc = &dh_k * &st.z;
            let mut dh_prev = &dh_k - &(&dh_k * &st.z);
            let da_c = &dc * &st.c.mapv(|c| 1.0 - c * c);
            let rh = &st.r * &st.h_prev;
            d_whc += &rh.t().dot(&da_c);
            let d_rh = da_c.dot(&v.wh_cand.t());
            let dr = &d_rh * &st.h_prev;
            dh_prev += &(&d_rh * &st.r);

            let mut da_gates = Array2::<f64>::zeros((k, g * h));
            if g == 2 {
                da_gates
                    .slice_mut(s![.., ..h])
                    .assign(&(&dz * &st.z.mapv(|z| z * (1.0 - z))));
                da_gates
                    .slice_mut(s![.., h..])
                    .assign(&(&dr * &st.r.mapv(|r| r * (1.0 - r))));
            } else {
                da_gates.assign(&((&dz + &dr) * &st.z.mapv(|z| z * (1.0 - z))));
            }
            d_whg += &st.h_prev.t().dot(&da_gates);
            dh_prev += &da_gates.dot(&v.wh_gates.t());

            let mut da = Array2::<f64>::zeros((k, (g + 1) * h));
            da.slice_mut(s![.., ..g * h]).assign(&da_gates);
            da.slice_mut(s![.., g * h..]).assign(&da_c);
            d_wx += &x.t().dot(&da);
            for (b, s) in d_b.iter_mut().zip(da.sum_axis(Axis(0))) {
                *b += s;
            }
            dh.slice_mut(s![..k, ..]).assign(&dh_prev);
        }
        let mut grads = Vec::with_capacity(self.spec.cell_param_count());
        grads.extend(d_wx.iter());
        grads.extend(d_whg.iter());
        grads.extend(d_whc.iter());
        grads.extend(d_b);
        grads
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut values = self.cell.values().to_vec();
        values.extend_from_slice(self.readout.values());
        let mut shapes = self.spec.cell_shapes();
        shapes.extend(self.spec.readout.shapes());
        Checkpoint {
            kind: "recurrent".into(),
            spec: None,
            params: NetParams::from_values(shapes, values, self.cell.seed())
                .expect("shapes match values"),
            meta: json!({
                "width": self.width,
                "height": self.height,
                "hidden": self.spec.hidden,
                "cell": self.spec.cell,
                "readout": self.spec.readout,
            }),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != "recurrent" {
            return Err(Error::Checkpoint(format!(
                "expected a recurrent checkpoint, found {:?}",
                ckpt.kind
            )));
        }
        let bad = |what: &str| Error::Checkpoint(format!("recurrent checkpoint: bad {what}"));
        let get = |k: &str| {
            ckpt.meta
                .get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| bad(k))
        };
        let (width, height, hidden) = (get("width")?, get("height")?, get("hidden")?);
        let cell: CellKind = ckpt
            .meta
            .get("cell")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| bad("cell"))?;
        let readout: NetSpec = ckpt
            .meta
            .get("readout")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| bad("readout spec"))?;
        if readout.input_size() != hidden || readout.output_size() != width * height {
            return Err(bad("readout shape"));
        }
        let spec = RecurrentSpec {
            input: RECURRENT_INPUT,
            hidden,
            cell,
            readout,
        };
        let mut shapes = spec.cell_shapes();
        shapes.extend(spec.readout.shapes());
        if ckpt.params.shapes() != shapes.as_slice() {
            return Err(bad("parameter shapes"));
        }
        let (c, r) = ckpt.params.values().split_at(spec.cell_param_count());
        Ok(Self {
            cell: NetParams::from_values(spec.cell_shapes(), c.to_vec(), ckpt.params.seed())?,
            readout: NetParams::from_values(spec.readout.shapes(), r.to_vec(), ckpt.params.seed())?,
            spec,
            width,
            height,
        })
    }
}

/// Trains the recurrent estimator on the same mini-batches the diffusion
/// estimator sees. `on_step(step, loss)` runs after every step.
pub fn train_recurrent<F>(
    config: &RecurrentConfig,
    data: &TrainingData,
    mut on_step: F,
) -> Result<RecurrentModel>
where
    F: FnMut(usize, f64) -> Result<()>,
{
    let env = &data.pool.env_config;
    let mut model = RecurrentModel::new(config, env.width_cells, env.height_cells)?;
    let mut adam_cell = AdamState::new(model.cell.len(), config.learning_rate);
    let mut adam_readout = AdamState::new(model.readout.len(), config.learning_rate);
    let n = model.n_cells();
    for step in 1..=config.train_steps {
        let batch = data.batch(step as u64, config.batch_size)?;
        let seqs: Vec<Vec<[f64; RECURRENT_INPUT]>> = batch
            .iter()
            .map(|ex| measurement_sequence(&ex.measurements, &env.snr_clamp))
            .collect();
        let seq_refs: Vec<&[[f64; RECURRENT_INPUT]]> = seqs.iter().map(Vec::as_slice).collect();
        let mut targets = Array2::zeros((batch.len(), n));
        for (mut row, ex) in targets.rows_mut().into_iter().zip(&batch) {
            for (t, v) in row.iter_mut().zip(&data.pool.truths[ex.env_index].values) {
                *t = db_to_unit(*v, &env.snr_clamp);
            }
        }
        let (loss, g_cell, g_readout) = model.loss_and_gradients(&seq_refs, targets.view())?;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite recurrent loss at step {step}"
            )));
        }
        nn::adam_step(&mut model.cell, &g_cell, &mut adam_cell)?;
        nn::adam_step(&mut model.readout, &g_readout, &mut adam_readout)?;
        on_step(step, loss)?;
    }
    Ok(model)
}

/// Trains on `data` and predicts the map for `measurements`.
pub fn recurrent_fit_predict(
    config: &RecurrentConfig,
    data: &TrainingData,
    measurements: &MeasurementSet,
) -> Result<SnrMap> {
    let model = train_recurrent(config, data, |_, _| Ok(()))?;
    model.predict(measurements, &data.pool.env_config)
}
