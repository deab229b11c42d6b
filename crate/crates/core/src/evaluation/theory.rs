//! Monte-Carlo checks of the sketch's analytical properties.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::baselines::ExactCounter;
use crate::encoders::LayerEncoders;
use crate::error::{CraneError, Result};
use crate::numerics::{AdamWConfig, BnMode};
use crate::rng::{derive_seed, seeded};
use crate::sketch::{CraneSketch, Decoder, SketchConfig, CELLS};
use crate::training::{generate_task, optimize, run_task, zipf_stream, Task, TaskConfig, TrainConfig};

/// Outcome of one property check.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryCheck {
    pub name: String,
    pub measured: f64,
    /// Reference value the measurement is compared with.
    pub reference: f64,
    pub passed: bool,
    pub detail: String,
}

/// Cosine similarity of the bases `e_o ⊗ e_d + ε` of two edges, from their
/// embeddings alone.
pub fn basis_cosine(u: (&[f64], &[f64]), v: (&[f64], &[f64]), eps: f64) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let sum = |a: &[f64]| a.iter().sum::<f64>();
    let cells = CELLS as f64;
    let cross = |a: (&[f64], &[f64]), b: (&[f64], &[f64])| {
        dot(a.0, b.0) * dot(a.1, b.1) + eps * (sum(a.0) * sum(a.1) + sum(b.0) * sum(b.1)) + eps * eps * cells
    };
    cross(u, v) / (cross(u, u) * cross(v, v)).sqrt()
}

fn layer_cosine<C: crate::sketch::Cell>(model: &CraneSketch<C>, layer: usize, u: (u32, u32), v: (u32, u32)) -> f64 {
    let (uo, ud) = model.embeddings(layer, u.0, u.1);
    let (vo, vd) = model.embeddings(layer, v.0, v.1);
    basis_cosine((&uo, &ud), (&vo, &vd), model.config().epsilon)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionConfig {
    /// Target per-layer collision rate.
    pub p: f64,
    pub layers: usize,
    /// Independent edge pairs used to place each layer's threshold.
    pub calibration_pairs: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        CollisionConfig { p: 0.1, layers: 3, calibration_pairs: 20_000, trials: 100_000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollisionDecay {
    /// `(k, measured joint rate over layers 1..=k, p^k)`.
    pub rates: Vec<(usize, f64, f64)>,
    pub thresholds: Vec<f64>,
}

fn random_pair(rng: &mut crate::rng::Rng) -> ((u32, u32), (u32, u32)) {
    ((rng.random(), rng.random()), (rng.random(), rng.random()))
}

/// Two distinct edges collide at a layer when the cosine of their bases
/// exceeds that layer's threshold. Thresholds are set on calibration pairs so
/// each layer alone collides at rate `p`, with freshly initialized encoders.
/// The joint rate over the first `k` layers is then measured on fresh pairs.
pub fn collision_decay(cfg: &CollisionConfig) -> Result<CollisionDecay> {
    if !(cfg.p > 0.0 && cfg.p < 1.0) || cfg.layers == 0 || cfg.calibration_pairs == 0 || cfg.trials == 0 {
        return Err(CraneError::Parameter("collision study needs 0 < p < 1 and positive sizes".into()));
    }
    let sketch = SketchConfig { n_max: cfg.layers, ..SketchConfig::default() };
    let model: CraneSketch<f64> = CraneSketch::new(sketch, derive_seed(cfg.seed, 0))?;
    let mut rng = seeded(derive_seed(cfg.seed, 1));
    let mut thresholds = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers {
        let mut sims: Vec<f64> = (0..cfg.calibration_pairs)
            .map(|_| {
                let (u, v) = random_pair(&mut rng);
                layer_cosine(&model, layer, u, v)
            })
            .collect();
        sims.sort_by(f64::total_cmp);
        let at = (((1.0 - cfg.p) * sims.len() as f64) as usize).min(sims.len() - 1);
        thresholds.push(sims[at]);
    }
    let mut joint = vec![0usize; cfg.layers];
    for _ in 0..cfg.trials {
        let (u, v) = random_pair(&mut rng);
        for (layer, count) in joint.iter_mut().enumerate() {
            if layer_cosine(&model, layer, u, v) > thresholds[layer] {
                *count += 1;
            } else {
                break;
            }
        }
    }
    let rates = joint
        .iter()
        .enumerate()
        .map(|(i, &c)| (i + 1, c as f64 / cfg.trials as f64, cfg.p.powi(i as i32 + 1)))
        .collect();
    Ok(CollisionDecay { rates, thresholds })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsolationConfig {
    pub theta: f64,
    pub n_max: usize,
    pub updates: usize,
    pub universe: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for IsolationConfig {
    fn default() -> Self {
        IsolationConfig { theta: 4.0, n_max: 4, updates: 100_000, universe: 100_000, alpha: 1.1, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Isolation {
    /// Mean bottom-layer error `|q₁ − f|` of low-frequency edges (`f < θ`).
    pub hierarchical_noise: f64,
    /// The same with a single layer and hence no carry.
    pub flat_noise: f64,
    /// Mean positional contribution `Σ_{i≥2} θ^(i−1) q_i` of the upper layers
    /// to the same edges, whose true upper digits are all zero.
    pub upper_noise: f64,
    /// `Σ_e (f(e) mod θ)` from the exact counts.
    pub residual_weight: f64,
    pub total_weight: f64,
    /// Weight units left in the hierarchical sketch's bottom layer.
    pub bottom_mass: f64,
    pub low_edges: usize,
}

impl Isolation {
    pub fn noise_ratio(&self) -> f64 {
        self.hierarchical_noise / self.flat_noise
    }

    pub fn residual_ratio(&self) -> f64 {
        self.residual_weight / self.total_weight
    }

    /// Bottom layer's share of the low-frequency error.
    pub fn bottom_share(&self) -> f64 {
        self.hierarchical_noise / (self.hierarchical_noise + self.upper_noise)
    }
}

fn model_or_init<C: crate::sketch::Cell>(
    model: Option<&CraneSketch<f32>>,
    cfg: SketchConfig,
    seed: u64,
) -> Result<CraneSketch<C>> {
    match model {
        Some(m) => {
            let mut m: CraneSketch<C> = m.convert();
            m.reset(1)?;
            Ok(m)
        }
        None => CraneSketch::new(cfg, seed),
    }
}

/// Stores one unit-weight Zipf stream in a hierarchical sketch and in a
/// single-layer sketch sharing its bottom encoders, and compares the errors
/// on low-frequency edges. Uses `model`'s encoders when given, fresh ones
/// otherwise.
pub fn isolation(cfg: &IsolationConfig, model: Option<&CraneSketch<f32>>) -> Result<Isolation> {
    let sketch = SketchConfig { theta: cfg.theta, tau: cfg.theta, n_max: cfg.n_max, ..SketchConfig::default() };
    let mut hier: CraneSketch<f64> = model_or_init(model, sketch, derive_seed(cfg.seed, 0))?;
    let flat_encoders = LayerEncoders { layers: vec![hier.encoders().layers[0].clone()] };
    let flat_cfg = SketchConfig { n_max: 1, ..*hier.config() };
    let mut flat: CraneSketch<f64> =
        CraneSketch::from_parts(flat_cfg, flat_encoders, Decoder::geometric(flat_cfg.theta, 1))?;

    let stream = zipf_stream(cfg.alpha, cfg.universe, cfg.updates, 1 << 32, derive_seed(cfg.seed, 1))?;
    let mut oracle = ExactCounter::new();
    stream.iter().for_each(|e| oracle.insert(e));
    hier.ingest(&stream)?;
    flat.ingest(&stream)?;

    let c = *hier.config();
    let mut residual = 0.0;
    let (mut hn, mut fl, mut up, mut low) = (0.0, 0.0, 0.0, 0usize);
    for &(o, d) in oracle.distinct_edges() {
        let f = oracle.query(o, d);
        residual += f.rem_euclid(c.theta);
        if f < c.theta {
            let q = hier.query_vector(o, d);
            hn += (q[0] - f).abs();
            up += q.iter().enumerate().skip(1).map(|(i, q)| c.place_value(i) * q).sum::<f64>();
            fl += (flat.query_vector(o, d)[0] - f).abs();
            low += 1;
        }
    }
    if low == 0 {
        return Err(CraneError::Domain("stream has no low-frequency edges".into()));
    }
    Ok(Isolation {
        hierarchical_noise: hn / low as f64,
        flat_noise: fl / low as f64,
        upper_noise: up / low as f64,
        residual_weight: residual,
        total_weight: oracle.total_weight(),
        bottom_mass: hier.memories()[0].sum() / CELLS as f64,
        low_edges: low,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderConfig {
    pub fit_tasks: usize,
    pub eval_tasks: usize,
    pub task: TaskConfig,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        let task = TaskConfig { gamma: 2_000, min_len: 200, ..TaskConfig::default() };
        DecoderConfig { fit_tasks: 50, eval_tasks: 50, task, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderComparison {
    pub fitted: Decoder,
    /// Held-out tasks on which the fitted decoder's MSE is at most the
    /// geometric decoder's.
    pub wins: usize,
    pub tasks: usize,
    pub fitted_mse: f64,
    pub geometric_mse: f64,
}

impl DecoderComparison {
    pub fn win_rate(&self) -> f64 {
        self.wins as f64 / self.tasks as f64
    }
}

fn task_layers(model: &mut CraneSketch<f64>, task: &Task) -> Result<Vec<Vec<f64>>> {
    Ok(run_task(model, task, BnMode::Infer, false)?.q)
}

fn mse(decoder: &Decoder, q: &[Vec<f64>], truths: &[f64], n: usize) -> f64 {
    q.iter().zip(truths).map(|(q, t)| (decoder.apply(q, n) - t).powi(2)).sum::<f64>() / truths.len() as f64
}

/// Compares a learned decoder with the fixed positional decoder
/// `w_i = θ^(i−1)` on held-out tasks, by per-task MSE. With `model` the
/// learned decoder is the model's own trained one; without, encoders stay at
/// initialization and the decoder is fitted by least squares on `fit_tasks`
/// tasks.
pub fn decoder_variance(cfg: &DecoderConfig, model: Option<&CraneSketch<f32>>) -> Result<DecoderComparison> {
    if cfg.fit_tasks == 0 || cfg.eval_tasks == 0 {
        return Err(CraneError::Parameter("decoder study needs fit and held-out tasks".into()));
    }
    let mut sketch: CraneSketch<f64> = model_or_init(model, SketchConfig::default(), derive_seed(cfg.seed, 0))?;
    let n = sketch.config().n_max;
    let fitted = match model {
        Some(m) => m.decoder().clone(),
        None => {
            let mut rows: Vec<f64> = Vec::new();
            let mut ys: Vec<f64> = Vec::new();
            for t in 0..cfg.fit_tasks {
                let task = generate_task(&cfg.task, derive_seed(cfg.seed, 100 + t as u64))?;
                for (q, y) in task_layers(&mut sketch, &task)?.iter().zip(&task.truths) {
                    rows.extend_from_slice(q);
                    rows.push(1.0);
                    ys.push(*y);
                }
            }
            let x = DMatrix::from_row_slice(ys.len(), n + 1, &rows);
            let y = DVector::from_vec(ys);
            let beta = x
                .svd(true, true)
                .solve(&y, 1e-12)
                .map_err(|e| CraneError::Domain(format!("least-squares decoder fit failed: {e}")))?;
            Decoder { w: beta.iter().take(n).copied().collect(), b: beta[n] }
        }
    };
    let geometric = Decoder::geometric(sketch.config().theta, n);

    let (mut wins, mut fm, mut gm) = (0, 0.0, 0.0);
    for t in 0..cfg.eval_tasks {
        let task = generate_task(&cfg.task, derive_seed(cfg.seed, 1_000_000 + t as u64))?;
        let q = task_layers(&mut sketch, &task)?;
        let (a, b) = (mse(&fitted, &q, &task.truths, n), mse(&geometric, &q, &task.truths, n));
        wins += usize::from(a <= b);
        fm += a / cfg.eval_tasks as f64;
        gm += b / cfg.eval_tasks as f64;
    }
    Ok(DecoderComparison { fitted, wins, tasks: cfg.eval_tasks, fitted_mse: fm, geometric_mse: gm })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrthogonalityConfig {
    pub task: TaskConfig,
    /// Heaviest edges of the task whose pairwise overlap is tracked.
    pub heavy: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for OrthogonalityConfig {
    fn default() -> Self {
        let task = TaskConfig { gamma: 2_000, min_len: 1_000, ..TaskConfig::default() };
        OrthogonalityConfig { task, heavy: 16, steps: 30, lr: 5e-3, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrthogonalityDrift {
    /// Mean basis cosine over heavy-edge pairs and layers, before training.
    pub before: f64,
    pub after: f64,
}

fn heavy_overlap<C: crate::sketch::Cell>(model: &CraneSketch<C>, edges: &[(u32, u32)]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for layer in 0..model.config().n_max {
        for (i, &u) in edges.iter().enumerate() {
            for &v in &edges[i + 1..] {
                total += layer_cosine(model, layer, u, v);
                pairs += 1;
            }
        }
    }
    total / pairs.max(1) as f64
}

/// Mean basis overlap among a task's heaviest edges before and after
/// optimizing the model on that task.
pub fn orthogonality_drift(cfg: &OrthogonalityConfig) -> Result<OrthogonalityDrift> {
    if cfg.heavy < 2 || cfg.steps == 0 {
        return Err(CraneError::Parameter("orthogonality study needs two heavy edges and a step".into()));
    }
    let task = generate_task(&cfg.task, derive_seed(cfg.seed, 1))?;
    let mut order: Vec<usize> = (0..task.queries.len()).collect();
    order.sort_by(|&a, &b| task.truths[b].total_cmp(&task.truths[a]));
    let heavy: Vec<(u32, u32)> = order.iter().take(cfg.heavy).map(|&k| task.queries[k]).collect();

    let mut model: CraneSketch<f64> = CraneSketch::new(SketchConfig::default(), derive_seed(cfg.seed, 0))?;
    let before = heavy_overlap(&model, &heavy);
    let train = TrainConfig {
        tasks: cfg.steps,
        steps_per_task: 1,
        adam: AdamWConfig { lr: cfg.lr, ..AdamWConfig::default() },
        ..TrainConfig::default()
    };
    optimize(&mut model, &train, |_| Ok(task.clone()), |_| {})?;
    let after = heavy_overlap(&model, &heavy);
    Ok(OrthogonalityDrift { before, after })
}

/// Tolerance band of the collision-decay check, as a multiple of `p^k`.
pub const COLLISION_BAND: (f64, f64) = (0.3, 3.0);
/// Allowed slack on the isolation ratio relative to `W_res / W_total`.
pub const ISOLATION_SLACK: f64 = 3.0;
/// Minimum share of the low-frequency error that must come from the bottom
/// layer.
pub const BOTTOM_SHARE: f64 = 0.5;
/// Minimum held-out win rate of the fitted decoder.
pub const DECODER_WIN_RATE: f64 = 0.6;

pub fn collision_checks(d: &CollisionDecay) -> Vec<TheoryCheck> {
    d.rates
        .iter()
        .map(|&(k, measured, predicted)| {
            let r = measured / predicted;
            TheoryCheck {
                name: format!("collision_decay_k{k}"),
                measured,
                reference: predicted,
                passed: (COLLISION_BAND.0..=COLLISION_BAND.1).contains(&r),
                detail: format!("joint rate {measured:.3e} vs p^{k} = {predicted:.3e} (x{r:.2})"),
            }
        })
        .collect()
}

pub fn isolation_checks(iso: &Isolation) -> Vec<TheoryCheck> {
    let ratio = iso.noise_ratio();
    let bound = ISOLATION_SLACK * iso.residual_ratio();
    vec![
        TheoryCheck {
            name: "interference_isolation".into(),
            measured: ratio,
            reference: iso.residual_ratio(),
            passed: ratio <= bound,
            detail: format!(
                "low-frequency noise {:.4} hierarchical vs {:.4} flat over {} edges; W_res/W_total = {:.4}",
                iso.hierarchical_noise,
                iso.flat_noise,
                iso.low_edges,
                iso.residual_ratio()
            ),
        },
        TheoryCheck {
            name: "residual_dominance".into(),
            measured: iso.bottom_share(),
            reference: BOTTOM_SHARE,
            passed: iso.bottom_share() >= BOTTOM_SHARE,
            detail: format!(
                "low-frequency error {:.4} from the bottom layer vs {:.4} from upper layers; \
                 bottom layer holds {:.1} of W_res {:.1}",
                iso.hierarchical_noise, iso.upper_noise, iso.bottom_mass, iso.residual_weight
            ),
        },
    ]
}

pub fn decoder_check(d: &DecoderComparison) -> TheoryCheck {
    TheoryCheck {
        name: "decoder_variance".into(),
        measured: d.win_rate(),
        reference: DECODER_WIN_RATE,
        passed: d.win_rate() >= DECODER_WIN_RATE,
        detail: format!(
            "learned decoder wins {}/{} held-out tasks; mean MSE {:.4e} vs geometric {:.4e}",
            d.wins, d.tasks, d.fitted_mse, d.geometric_mse
        ),
    }
}

pub fn orthogonality_check(o: &OrthogonalityDrift) -> TheoryCheck {
    TheoryCheck {
        name: "orthogonality_drift".into(),
        measured: o.after,
        reference: o.before,
        passed: o.after < o.before,
        detail: format!("heavy-edge basis cosine {:.4} -> {:.4}", o.before, o.after),
    }
}

/// Runs every property experiment at its default size. A trained `model`,
/// when given, supplies the encoders of the isolation experiments and the
/// decoder under comparison; collision decay and orthogonality drift always
/// start from fresh encoders.
pub fn theory_suite(seed: u64, model: Option<&CraneSketch<f32>>) -> Result<Vec<TheoryCheck>> {
    let mut checks = collision_checks(&collision_decay(&CollisionConfig { seed, ..Default::default() })?);
    checks.extend(isolation_checks(&isolation(&IsolationConfig { seed, ..Default::default() }, model)?));
    checks.push(decoder_check(&decoder_variance(&DecoderConfig { seed, ..Default::default() }, model)?));
    checks.push(orthogonality_check(&orthogonality_drift(&OrthogonalityConfig { seed, ..Default::default() })?));
    Ok(checks)
}
