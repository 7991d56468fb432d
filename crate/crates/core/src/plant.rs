//! Synthetic linear plants with known dynamics, used as ground truth.
//!
//! A [`PlantSpec`] holds `A` and `B` of `y[t+1] = A y[t] + B u[t]` together
//! with per-observable Gaussian measurement noise and optional sentinel
//! dropout. The DED scenario drives a three-observable first-order plant with
//! randomized serpentine G-code programs so every stage of the pipeline has a
//! realistic, fully known input.

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ChannelSpec, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::gcode;
use crate::linalg::spectral_radius;
use crate::model_io::MatrixJson;

/// Radius a spec is rescaled to when its `A` is not stable.
pub const STABILITY_MARGIN: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub channel: String,
    pub probability: f64,
    pub sentinel: f64,
    /// Dropout only hits rows where this channel is positive.
    #[serde(default)]
    pub gate_channel: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlantSpecFile", into = "PlantSpecFile")]
pub struct PlantSpec {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    inputs: Vec<ChannelSpec>,
    observables: Vec<ChannelSpec>,
    noise_sd: Vec<f64>,
    dropout: Option<DropoutSpec>,
}

#[derive(Clone, Serialize, Deserialize)]
struct PlantSpecFile {
    a: MatrixJson,
    b: MatrixJson,
    inputs: Vec<ChannelSpec>,
    observables: Vec<ChannelSpec>,
    noise_sd: Vec<f64>,
    #[serde(default)]
    dropout: Option<DropoutSpec>,
}

impl TryFrom<PlantSpecFile> for PlantSpec {
    type Error = Error;

    fn try_from(f: PlantSpecFile) -> Result<Self> {
        PlantSpec::new(
            DMatrix::try_from(&f.a)?,
            DMatrix::try_from(&f.b)?,
            f.inputs,
            f.observables,
            f.noise_sd,
            f.dropout,
        )
    }
}

impl From<PlantSpec> for PlantSpecFile {
    fn from(s: PlantSpec) -> Self {
        Self {
            a: (&s.a).into(),
            b: (&s.b).into(),
            inputs: s.inputs,
            observables: s.observables,
            noise_sd: s.noise_sd,
            dropout: s.dropout,
        }
    }
}

impl PlantSpec {
    /// Validates dimensions and rescales `A` to radius [`STABILITY_MARGIN`]
    /// if it is not strictly stable.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        inputs: Vec<ChannelSpec>,
        observables: Vec<ChannelSpec>,
        noise_sd: Vec<f64>,
        dropout: Option<DropoutSpec>,
    ) -> Result<Self> {
        let q = observables.len();
        let p = inputs.len();
        if a.shape() != (q, q) || b.shape() != (q, p) || noise_sd.len() != q {
            return Err(Error::DimensionMismatch(format!(
                "A {:?}, B {:?}, noise {} for q={q}, p={p}",
                a.shape(),
                b.shape(),
                noise_sd.len()
            )));
        }
        if noise_sd.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("noise standard deviations must be non-negative".into()));
        }
        if let Some(d) = &dropout {
            if !observables.iter().any(|c| c.name == d.channel) {
                return Err(Error::UnknownChannel(d.channel.clone()));
            }
            if !(0.0..=1.0).contains(&d.probability) {
                return Err(Error::Config(format!("dropout probability {} outside [0, 1]", d.probability)));
            }
        }
        let mut a = a;
        let rho = spectral_radius(&a);
        if rho >= 1.0 {
            warn!("plant A has spectral radius {rho}; rescaling to {STABILITY_MARGIN}");
            a *= STABILITY_MARGIN / rho;
        }
        Ok(Self { a, b, inputs, observables, noise_sd, dropout })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn inputs(&self) -> &[ChannelSpec] {
        &self.inputs
    }

    pub fn observables(&self) -> &[ChannelSpec] {
        &self.observables
    }

    pub fn input_names(&self) -> Vec<String> {
        self.inputs.iter().map(|c| c.name.clone()).collect()
    }

    pub fn observable_names(&self) -> Vec<String> {
        self.observables.iter().map(|c| c.name.clone()).collect()
    }

    pub fn noise_sd(&self) -> &[f64] {
        &self.noise_sd
    }

    pub fn dropout(&self) -> Option<&DropoutSpec> {
        self.dropout.as_ref()
    }

    pub fn with_noise(mut self, noise_sd: Vec<f64>) -> Result<Self> {
        if noise_sd.len() != self.observables.len() || noise_sd.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("noise vector must be non-negative, one entry per observable".into()));
        }
        self.noise_sd = noise_sd;
        Ok(self)
    }

    pub fn with_dropout(self, dropout: Option<DropoutSpec>) -> Result<Self> {
        Self::new(self.a, self.b, self.inputs, self.observables, self.noise_sd, dropout)
    }

    /// Same plant observed through `y' = diag(scale) y`.
    pub fn rescaled_observables(&self, scale: &[f64]) -> Result<Self> {
        if scale.len() != self.observables.len() || scale.contains(&0.0) {
            return Err(Error::DimensionMismatch("observable scale".into()));
        }
        let q = scale.len();
        let a = DMatrix::from_fn(q, q, |i, j| scale[i] * self.a[(i, j)] / scale[j]);
        let b = DMatrix::from_fn(q, self.b.ncols(), |i, j| scale[i] * self.b[(i, j)]);
        Self::new(a, b, self.inputs.clone(), self.observables.clone(), self.noise_sd.clone(), self.dropout.clone())
    }
}

/// Zero-order-hold discretization of `dy/dt = A_c y + B_c u` via the
/// exponential of the augmented matrix `[[A_c, B_c], [0, 0]] dt`.
pub fn zoh(a_c: &DMatrix<f64>, b_c: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = a_c.nrows();
    let p = b_c.ncols();
    let mut m = DMatrix::zeros(q + p, q + p);
    m.view_mut((0, 0), (q, q)).copy_from(&(a_c * dt));
    m.view_mut((0, q), (q, p)).copy_from(&(b_c * dt));
    let e = m.exp();
    (e.view((0, 0), (q, q)).into_owned(), e.view((0, q), (q, p)).into_owned())
}

/// Gaussian matrix rescaled to the given spectral radius.
pub fn random_stable_matrix<R: Rng + ?Sized>(q: usize, radius: f64, rng: &mut R) -> DMatrix<f64> {
    loop {
        let a = DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rho = spectral_radius(&a);
        if rho > 1e-6 {
            return a * (radius / rho);
        }
    }
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Random plant with observables `y0..` and inputs `u0..`.
pub fn random_plant<R: Rng + ?Sized>(q: usize, p: usize, radius: f64, rng: &mut R) -> Result<PlantSpec> {
    let a = random_stable_matrix(q, radius, rng);
    let b = DMatrix::from_fn(q, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    PlantSpec::new(
        a,
        b,
        numbered("u", p).iter().map(|n| ChannelSpec::input(n, "")).collect(),
        numbered("y", q).iter().map(|n| ChannelSpec::observable(n, "")).collect(),
        vec![0.0; q],
        None,
    )
}

/// Independent standard-normal inputs, a persistently exciting design.
pub fn gaussian_inputs<R: Rng + ?Sized>(
    id: &str,
    names: &[String],
    steps: usize,
    sample_rate_hz: f64,
    rng: &mut R,
) -> Result<TimeSeriesDataset> {
    let mut cols = Vec::with_capacity(names.len());
    for n in names {
        let v: Vec<f64> = (0..steps).map(|_| rng.sample(StandardNormal)).collect();
        cols.push((ChannelSpec::input(n, ""), v));
    }
    TimeSeriesDataset::from_columns(id, sample_rate_hz, cols)
}

/// Noisy measurements plus the noiseless trajectory that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub dataset: TimeSeriesDataset,
    /// T x q, before noise and dropout.
    pub truth: DMatrix<f64>,
}

/// Runs the plant over the input channels of `inputs` from `y0`. The result
/// keeps every column of `inputs` and appends the observables.
pub fn simulate(spec: &PlantSpec, inputs: &TimeSeriesDataset, y0: &[f64], seed: u64) -> Result<Simulation> {
    let q = spec.observables.len();
    if y0.len() != q {
        return Err(Error::DimensionMismatch(format!("y0 has {} entries, plant has {q} observables", y0.len())));
    }
    let u = inputs
        .matrix_of(&spec.input_names())
        .map_err(|e| Error::DimensionMismatch(format!("plant inputs: {e}")))?;
    let steps = inputs.row_count();
    let mut truth = DMatrix::zeros(steps, q);
    if steps > 0 {
        truth.row_mut(0).copy_from_slice(y0);
    }
    let mut next = nalgebra::DVector::zeros(q);
    for t in 0..steps.saturating_sub(1) {
        let y = truth.row(t).transpose();
        next.gemv(1.0, &spec.a, &y, 0.0);
        next.gemv(1.0, &spec.b, &u.row(t).transpose(), 1.0);
        truth.set_row(t + 1, &next.transpose());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut measured = truth.clone();
    for (k, &sd) in spec.noise_sd.iter().enumerate() {
        if sd > 0.0 {
            let normal = Normal::new(0.0, sd).expect("validated sd");
            for t in 0..steps {
                measured[(t, k)] += normal.sample(&mut rng);
            }
        }
    }
    if let Some(d) = &spec.dropout {
        let k = spec.observables.iter().position(|c| c.name == d.channel).expect("validated channel");
        let gate = match &d.gate_channel {
            Some(g) => Some(inputs.column(g)?),
            None => None,
        };
        for t in 0..steps {
            let open = gate.is_none_or(|g| g[t] > 0.0);
            if open && rng.random::<f64>() < d.probability {
                measured[(t, k)] = d.sentinel;
            }
        }
    }
    let cols = spec
        .observables
        .iter()
        .enumerate()
        .map(|(k, c)| (c.clone(), measured.column(k).iter().copied().collect()))
        .collect();
    Ok(Simulation { dataset: inputs.with_appended(cols)?, truth })
}

/// Observable names of the DED scenario.
pub const MELT_POOL_SIZE: &str = "melt_pool_size";
pub const MELT_POOL_TEMP: &str = "melt_pool_temp";
pub const WORKING_DISTANCE: &str = "working_distance";
/// Extra input channels added on top of the G-code channels.
pub const POWDER_FEED: &str = "powder_feed";
pub const INFILL_FLAG: &str = "infill_flag";
pub const CONTOUR_FLAG: &str = "contour_flag";
/// Camera-off value of the working-distance sensor.
pub const WORKING_DISTANCE_SENTINEL: f64 = -1.0;

/// Knobs of the synthetic directed-energy-deposition scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedScenario {
    pub experiments: usize,
    pub tracks_per_experiment: usize,
    pub sample_rate_hz: f64,
    pub tau_s: f64,
    /// Per observable, in physical units.
    pub noise_sd: Vec<f64>,
    /// Probability of a camera-off sample while the laser fires.
    pub dropout_probability: f64,
    pub seed: u64,
}

impl Default for DedScenario {
    fn default() -> Self {
        Self {
            experiments: 12,
            tracks_per_experiment: 16,
            sample_rate_hz: 100.0,
            tau_s: 0.1,
            noise_sd: vec![0.0; 3],
            dropout_probability: 0.0,
            seed: 0,
        }
    }
}

/// Input channels of the DED scenario in dataset order.
pub fn ded_input_channels() -> Vec<ChannelSpec> {
    vec![
        ChannelSpec::input(gcode::X, "mm"),
        ChannelSpec::input(gcode::Y, "mm"),
        ChannelSpec::input(gcode::Z, "mm"),
        ChannelSpec::input(gcode::SCAN_RATE, "mm/min"),
        ChannelSpec::input(gcode::HEADING, "deg"),
        ChannelSpec::input(gcode::DISTANCE, "mm"),
        ChannelSpec::input(gcode::LASER_POWER, "W"),
        ChannelSpec::input(POWDER_FEED, "g/min"),
        ChannelSpec::input(INFILL_FLAG, ""),
        ChannelSpec::input(CONTOUR_FLAG, ""),
    ]
}

pub fn ded_observable_channels() -> Vec<ChannelSpec> {
    vec![
        ChannelSpec::observable(MELT_POOL_SIZE, "mm"),
        ChannelSpec::observable(MELT_POOL_TEMP, "C"),
        ChannelSpec::observable(WORKING_DISTANCE, "mm"),
    ]
}

/// Coupled first-order plant with time constant `tau_s` driven by laser
/// power, scan rate and powder feed.
pub fn ded_plant(scenario: &DedScenario) -> Result<PlantSpec> {
    if !(scenario.tau_s > 0.0 && scenario.sample_rate_hz > 0.0) {
        return Err(Error::Config("time constant and sample rate must be positive".into()));
    }
    let rate = 1.0 / scenario.tau_s;
    let coupling = nalgebra::dmatrix![
        1.0, 0.1, 0.0;
        0.0, 1.0, 0.15;
        0.1, 0.0, 1.0
    ];
    // steady-state gains per unit of (W, mm/min, g/min)
    let gains = nalgebra::dmatrix![
        3.0e-3, -6.0e-4, 5.0e-2;
        2.5, -0.4, 20.0;
        8.0e-3, 0.0, 0.4
    ];
    let a_c = -rate * &coupling;
    let b_c = rate * &coupling * gains;
    let (a, b) = zoh(&a_c, &b_c, 1.0 / scenario.sample_rate_hz);
    let dropout = (scenario.dropout_probability > 0.0).then(|| DropoutSpec {
        channel: WORKING_DISTANCE.into(),
        probability: scenario.dropout_probability,
        sentinel: WORKING_DISTANCE_SENTINEL,
        gate_channel: Some(gcode::LASER_POWER.into()),
    });
    PlantSpec::new(
        a,
        b,
        vec![
            ChannelSpec::input(gcode::LASER_POWER, "W"),
            ChannelSpec::input(gcode::SCAN_RATE, "mm/min"),
            ChannelSpec::input(POWDER_FEED, "g/min"),
        ],
        ded_observable_channels(),
        scenario.noise_sd.clone(),
        dropout,
    )
}

fn round_to(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

/// Randomized serpentine build: tracks of random length, feed and power,
/// separated by laser-off dwells. Returns the G-code text and, per track,
/// the powder feed and whether it is an infill (vs contour) track.
pub fn ded_program<R: Rng + ?Sized>(tracks: usize, rng: &mut R) -> (String, Vec<(f64, bool)>) {
    let mut g = String::from("; synthetic serpentine build\nG21\nG90\n");
    let mut meta = Vec::with_capacity(tracks);
    let per_layer = 4;
    let mut layer = 0;
    for t in 0..tracks {
        if t % per_layer == 0 {
            layer += 1;
            g += &format!("G0 Z{} F1500\n", round_to(layer as f64 * 0.4, 0.01));
        }
        let length = round_to(rng.random_range(4.0..40.0), 0.1);
        let feed = round_to(rng.random_range(500.0..1400.0), 10.0);
        let power = round_to(rng.random_range(250.0..800.0), 5.0);
        let dwell = round_to(rng.random_range(0.15..1.2), 0.01);
        let powder = round_to(rng.random_range(2.0..8.0), 0.1);
        let infill = rng.random_bool(0.6);
        let y = (t % per_layer) as f64 * 0.8;
        let (x0, x1) = if t % 2 == 0 { (0.0, length) } else { (length, 0.0) };
        g += &format!("G0 X{x0} Y{y} F1500\nM3 S{power}\nG1 X{x1} F{feed}\nM5\nG4 P{dwell}\n");
        meta.push((powder, infill));
    }
    (g, meta)
}

/// Input channels for one experiment: the sampled program plus powder feed
/// and the complementary infill/contour flags, each held per track.
pub fn ded_inputs<R: Rng + ?Sized>(id: &str, scenario: &DedScenario, rng: &mut R) -> Result<TimeSeriesDataset> {
    let (text, meta) = ded_program(scenario.tracks_per_experiment, rng);
    let program = gcode::parse_gcode_subset(&text)?;
    let base = gcode::program_to_timeseries(&program, scenario.sample_rate_hz)?;
    let power = base.column(gcode::LASER_POWER)?;
    let rows = base.row_count();
    let mut powder = vec![0.0; rows];
    let mut infill = vec![0.0; rows];
    // track index advances on every rising edge; values hold until the next
    let mut track: Option<usize> = None;
    for t in 0..rows {
        if power[t] > 0.0 && (t == 0 || power[t - 1] <= 0.0) {
            track = Some(track.map_or(0, |k| k + 1));
        }
        if let Some(k) = track {
            let (pf, inf) = meta[k.min(meta.len() - 1)];
            powder[t] = pf;
            infill[t] = if inf { 1.0 } else { 0.0 };
        }
    }
    let contour: Vec<f64> = infill.iter().map(|f| 1.0 - f).collect();
    let mut ds = base.with_appended(vec![
        (ChannelSpec::input(POWDER_FEED, "g/min"), powder),
        (ChannelSpec::input(INFILL_FLAG, ""), infill),
        (ChannelSpec::input(CONTOUR_FLAG, ""), contour),
    ])?;
    ds.experiment_id = id.to_string();
    Ok(ds)
}

/// Simulated experiments of the DED scenario with their noiseless truth.
pub fn generate_ded(scenario: &DedScenario) -> Result<Vec<Simulation>> {
    if scenario.experiments == 0 || scenario.tracks_per_experiment == 0 {
        return Err(Error::Config("scenario needs at least one experiment and one track".into()));
    }
    let spec = ded_plant(scenario)?;
    (0..scenario.experiments)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
            rng.set_stream(i as u64 + 1);
            let inputs = ded_inputs(&format!("exp_{i:02}"), scenario, &mut rng)?;
            simulate(&spec, &inputs, &[0.0; 3], rng.next_u64())
        })
        .collect()
}
