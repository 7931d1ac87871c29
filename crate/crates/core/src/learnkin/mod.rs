//! Learned inverse kinematics: dataset, network training and comparison
//! against the rigid model.

mod mlp;

pub use mlp::{Adam, Gradients, Mlp, Normalizer};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_to_joints, JointVector, Pose6, STRUT_COUNT};
use crate::plant::Plant;
use crate::sysid::WorkspaceSample;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Split {
    Train,
    Test,
}

/// One settled pose (m, degrees) and the servo angles that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkPair {
    pub pose: [f64; 6],
    pub joints: [f64; STRUT_COUNT],
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkDataset {
    pub pairs: Vec<IkPair>,
    /// Scan samples dropped because the load limit held a strut back.
    pub excluded_buckled: usize,
}

impl IkDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &IkPair> {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub const DEFAULT_RANDOM_POSES: usize = 5904;
pub const TRAIN_FRACTION: f64 = 0.9;

/// Scan samples plus `n_random` uniformly random joint vectors settled
/// through the plant, split 90/10 by a seeded shuffle.
pub fn build_dataset(plant: &Plant, scan: &[WorkspaceSample], n_random: usize, seed: u64) -> Result<IkDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = plant.config().geometry.joint_limits;
    let mut raw: Vec<([f64; 6], [f64; STRUT_COUNT])> = Vec::with_capacity(scan.len() + n_random);
    let mut excluded_buckled = 0;
    for s in scan {
        if s.buckled {
            excluded_buckled += 1;
        } else {
            raw.push((s.pose.to_external(), s.joints.angles));
        }
    }
    for _ in 0..n_random {
        let angles: [f64; STRUT_COUNT] = std::array::from_fn(|_| rng.random_range(lo..=hi));
        let pose = plant.settle_static(&JointVector::new(angles), 0.0);
        raw.push((pose.to_external(), angles));
    }
    if raw.is_empty() {
        return Err(Error::TooFewSamples { have: 0, need: 1 });
    }
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((raw.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, raw.len());
    let mut pairs: Vec<IkPair> = raw
        .into_iter()
        .map(|(pose, joints)| IkPair {
            pose,
            joints,
            split: Split::Test,
        })
        .collect();
    for &i in &order[..n_train] {
        pairs[i].split = Split::Train;
    }
    // The same pose cannot sit on both sides of the split.
    let train: Vec<[f64; 6]> = pairs.iter().filter(|p| p.split == Split::Train).map(|p| p.pose).collect();
    for p in pairs.iter_mut().filter(|p| p.split == Split::Test) {
        if train.contains(&p.pose) {
            p.split = Split::Train;
        }
    }
    Ok(IkDataset {
        pairs,
        excluded_buckled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplier applied when validation loss plateaus.
    pub lr_decay: f64,
    /// Epochs without improvement before decaying.
    pub plateau_patience: usize,
    pub min_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            batch_size: 64,
            epochs: 500,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            plateau_patience: 20,
            min_learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        let ok = !self.hidden.is_empty()
            && !self.hidden.contains(&0)
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid training parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch (normalized units).
    pub train_loss: Vec<f64>,
    /// Validation loss per epoch; the TEST split, or TRAIN when TEST is empty.
    pub validation_loss: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

/// Trained network plus the normalization taken from the TRAIN split.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub network: Mlp,
    pub input: Normalizer,
    pub output: Normalizer,
    /// Bounds of the training poses, external units.
    pub input_min: [f64; 6],
    pub input_max: [f64; 6],
    pub joint_limits: [f64; 2],
}

fn rows(pairs: &[&IkPair]) -> (Vec<[f64; 6]>, Vec<[f64; 6]>) {
    (pairs.iter().map(|p| p.pose).collect(), pairs.iter().map(|p| p.joints).collect())
}

/// Mini-batch adaptive-moment training on normalized joint targets. Returns
/// the weights with the lowest validation loss.
pub fn train(dataset: &IkDataset, joint_limits: [f64; 2], params: &TrainParams) -> Result<(MlpModel, TrainReport)> {
    params.validate()?;
    let train_pairs: Vec<&IkPair> = dataset.split(Split::Train).collect();
    if train_pairs.is_empty() {
        return Err(Error::TooFewSamples { have: 0, need: 1 });
    }
    let mut val_pairs: Vec<&IkPair> = dataset.split(Split::Test).collect();
    if val_pairs.is_empty() {
        val_pairs = train_pairs.clone();
    }
    let (tx, ty) = rows(&train_pairs);
    let (vx, vy) = rows(&val_pairs);
    let input = Normalizer::fit(&tx)?;
    let output = Normalizer::fit(&ty)?;
    let x = input.matrix(&tx);
    let y = output.matrix(&ty);
    let xv = input.matrix(&vx);
    let yv = output.matrix(&vy);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut sizes = vec![6];
    sizes.extend(&params.hidden);
    sizes.push(6);
    let mut net = Mlp::new(&sizes, &mut rng)?;
    let mut opt = Adam::new(&net, params.beta1, params.beta2, params.epsilon);
    let mut lr = params.learning_rate;
    let mut best = (f64::INFINITY, 0usize, net.clone());
    let mut since_best = 0;
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(params.epochs),
        validation_loss: Vec::with_capacity(params.epochs),
        learning_rate: Vec::with_capacity(params.epochs),
        best_epoch: 0,
        best_validation_loss: f64::INFINITY,
    };
    let mut order: Vec<usize> = (0..tx.len()).collect();
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(params.batch_size) {
            let bx = x.select(Axis(0), chunk);
            let by = y.select(Axis(0), chunk);
            let (loss, grads) = net.loss_and_gradients(bx.view(), by.view());
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    learning_rate: lr,
                });
            }
            total += loss * chunk.len() as f64;
            opt.step(&mut net, &grads, lr);
        }
        let train_loss = total / tx.len() as f64;
        let val = net.loss(xv.view(), yv.view());
        if !val.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                learning_rate: lr,
            });
        }
        report.train_loss.push(train_loss);
        report.validation_loss.push(val);
        report.learning_rate.push(lr);
        if val < best.0 {
            best = (val, epoch, net.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= params.plateau_patience {
                lr = (lr * params.lr_decay).max(params.min_learning_rate);
                since_best = 0;
            }
        }
    }
    report.best_epoch = best.1;
    report.best_validation_loss = best.0;
    let bounds = |f: fn(f64, f64) -> f64, init: f64| -> [f64; 6] {
        std::array::from_fn(|i| tx.iter().map(|r| r[i]).fold(init, f))
    };
    Ok((
        MlpModel {
            network: best.2,
            input,
            output,
            input_min: bounds(f64::min, f64::INFINITY),
            input_max: bounds(f64::max, f64::NEG_INFINITY),
            joint_limits,
        },
        report,
    ))
}

impl MlpModel {
    /// Whether `pose` lies inside the per-axis bounds of the training poses.
    pub fn in_distribution(&self, pose: &Pose6) -> bool {
        let p = pose.to_external();
        (0..6).all(|i| p[i] >= self.input_min[i] && p[i] <= self.input_max[i])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(text)?.try_into()
    }
}

/// Forward pass with normalization; joints clamped to the limits with
/// saturation flags.
pub fn predict(model: &MlpModel, pose: &Pose6) -> JointVector {
    let z = model.input.normalize(&pose.to_external());
    let x = Array2::from_shape_vec((1, 6), z.to_vec()).expect("1x6");
    let out = model.network.forward(x.view());
    let y: [f64; 6] = std::array::from_fn(|i| out[(0, i)]);
    JointVector::clamped(model.output.denormalize(&y), model.joint_limits)
}

/// Serialized model. Weight blocks are row-major `(inputs, outputs)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_normalization: Normalizer,
    pub output_normalization: Normalizer,
    pub input_min: [f64; 6],
    pub input_max: [f64; 6],
    pub joint_limits: [f64; 2],
}

impl From<&MlpModel> for ModelFile {
    fn from(m: &MlpModel) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            layer_sizes: m.network.sizes.clone(),
            activation: "relu".into(),
            weights: m.network.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: m.network.biases.iter().map(|b| b.to_vec()).collect(),
            input_normalization: m.input.clone(),
            output_normalization: m.output.clone(),
            input_min: m.input_min,
            input_max: m.input_max,
            joint_limits: m.joint_limits,
        }
    }
}

impl TryFrom<ModelFile> for MlpModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let bad = |msg: String| Err(Error::ModelFormat(msg));
        if f.format_version != MODEL_FORMAT_VERSION {
            return bad(format!("unsupported format version {}", f.format_version));
        }
        if f.activation != "relu" {
            return bad(format!("unsupported activation {:?}", f.activation));
        }
        let s = &f.layer_sizes;
        if s.len() < 2 || s[0] != 6 || s[s.len() - 1] != 6 {
            return bad(format!("layer sizes {s:?} must run 6 -> ... -> 6"));
        }
        if f.weights.len() != s.len() - 1 || f.biases.len() != s.len() - 1 {
            return bad("layer count does not match layer sizes".into());
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, w) in s.windows(2).enumerate() {
            let Ok(m) = Array2::from_shape_vec((w[0], w[1]), f.weights[l].clone()) else {
                return bad(format!("layer {l} weights need {} values", w[0] * w[1]));
            };
            if f.biases[l].len() != w[1] {
                return bad(format!("layer {l} biases need {} values", w[1]));
            }
            weights.push(m);
            biases.push(ndarray::Array1::from(f.biases[l].clone()));
        }
        for n in [&f.input_normalization, &f.output_normalization] {
            if n.mean.len() != 6 || n.std.len() != 6 || n.std.iter().any(|v| !(*v > 0.0)) {
                return bad("normalization needs six means and six positive deviations".into());
            }
        }
        Ok(Self {
            network: Mlp {
                sizes: f.layer_sizes,
                weights,
                biases,
            },
            input: f.input_normalization,
            output: f.output_normalization,
            input_min: f.input_min,
            input_max: f.input_max,
            joint_limits: f.joint_limits,
        })
    }
}

/// Reachable target poses: random joint vectors settled through the plant.
/// Poses that coincide with any `exclude` pose are redrawn.
pub fn random_reachable_poses(plant: &Plant, n: usize, seed: u64, exclude: &[[f64; 6]]) -> Vec<Pose6> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = plant.config().geometry.joint_limits;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let angles: [f64; STRUT_COUNT] = std::array::from_fn(|_| rng.random_range(lo..=hi));
        let pose = plant.settle_static(&JointVector::new(angles), 0.0);
        if !exclude.contains(&pose.to_external()) {
            out.push(pose);
        }
    }
    out
}

/// Per-axis mean absolute error (m, degrees) of both models; improvement is
/// `1 - learned / rigid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkErrorReport {
    pub axes: [String; 6],
    pub rigid: [f64; 6],
    pub learned: [f64; 6],
    pub improvement: [f64; 6],
    pub rigid_translation: f64,
    pub learned_translation: f64,
    pub rigid_rotation: f64,
    pub learned_rotation: f64,
    pub evaluated: usize,
    /// Poses dropped because either model commanded a saturated joint.
    pub excluded: usize,
}

fn accumulate(
    model: &MlpModel,
    plant: &Plant,
    targets: impl Iterator<Item = Pose6>,
    limit: usize,
) -> Result<IkErrorReport> {
    let geometry = &plant.config().geometry;
    let mut rigid_sum = [0.0; 6];
    let mut learned_sum = [0.0; 6];
    let mut evaluated = 0;
    let mut excluded = 0;
    for target in targets {
        if evaluated == limit {
            break;
        }
        let rigid_cmd = pose_to_joints(&target, geometry);
        let learned_cmd = predict(model, &target);
        if rigid_cmd.saturated.iter().chain(&learned_cmd.saturated).any(|&s| s) {
            excluded += 1;
            continue;
        }
        let t = target.to_external();
        let r = plant.settle_static(&rigid_cmd, 0.0).to_external();
        let l = plant.settle_static(&learned_cmd, 0.0).to_external();
        for i in 0..6 {
            rigid_sum[i] += (r[i] - t[i]).abs();
            learned_sum[i] += (l[i] - t[i]).abs();
        }
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::TooFewSamples { have: 0, need: 1 });
    }
    let n = evaluated as f64;
    let rigid = rigid_sum.map(|v| v / n);
    let learned = learned_sum.map(|v| v / n);
    let improvement = std::array::from_fn(|i| 1.0 - learned[i] / rigid[i]);
    let mean3 = |v: &[f64; 6], o: usize| (v[o] + v[o + 1] + v[o + 2]) / 3.0;
    Ok(IkErrorReport {
        axes: ["x", "y", "z", "roll", "pitch", "yaw"].map(String::from),
        rigid,
        learned,
        improvement,
        rigid_translation: mean3(&rigid, 0),
        learned_translation: mean3(&learned, 0),
        rigid_rotation: mean3(&rigid, 3),
        learned_rotation: mean3(&learned, 3),
        evaluated,
        excluded,
    })
}

/// Command every target through both models, settle the plant and compare.
/// Targets where either model saturates a joint are excluded from both.
pub fn evaluate(model: &MlpModel, plant: &Plant, targets: &[Pose6]) -> Result<IkErrorReport> {
    accumulate(model, plant, targets.iter().copied(), usize::MAX)
}

/// [`evaluate`] on fresh reachable poses, drawn until `n` are feasible for
/// both models. Poses equal to any `exclude` pose are skipped.
pub fn evaluate_held_out(
    model: &MlpModel,
    plant: &Plant,
    n: usize,
    seed: u64,
    exclude: &[[f64; 6]],
) -> Result<IkErrorReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = plant.config().geometry.joint_limits;
    let draws = std::iter::repeat_with(move || {
        let angles: [f64; STRUT_COUNT] = std::array::from_fn(|_| rng.random_range(lo..=hi));
        plant.settle_static(&JointVector::new(angles), 0.0)
    })
    .filter(|p| !exclude.contains(&p.to_external()))
    .take(1000 * n.max(1));
    let report = accumulate(model, plant, draws, n)?;
    if report.evaluated < n {
        return Err(Error::TooFewSamples {
            have: report.evaluated,
            need: n,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::PlantConfig;
    use crate::sysid::{workspace_scan, ScanOptions};

    fn plant() -> Plant {
        Plant::new(PlantConfig::default()).unwrap()
    }

    fn coarse_scan(p: &Plant) -> Vec<WorkspaceSample> {
        let opts = ScanOptions {
            increment: 270.0,
            ..Default::default()
        };
        workspace_scan(p, &opts, 1).unwrap()
    }

    #[test]
    fn dataset_counts_and_split() {
        let p = plant();
        let scan = coarse_scan(&p);
        let d = build_dataset(&p, &scan, 136, 5).unwrap();
        assert_eq!(d.len(), 200);
        assert_eq!(d.excluded_buckled, 0);
        let train = d.split(Split::Train).count();
        assert_eq!(train, 180);
        let test: Vec<_> = d.split(Split::Test).map(|p| p.pose).collect();
        assert!(d.split(Split::Train).all(|p| !test.contains(&p.pose)));
        assert!(d.pairs.iter().all(|p| p.joints.iter().all(|a| (0.0..=270.0).contains(a))));
        assert_eq!(build_dataset(&p, &scan, 136, 5).unwrap(), d);
    }

    #[test]
    fn zero_random_poses_gives_the_scan() {
        let p = plant();
        let scan = coarse_scan(&p);
        let d = build_dataset(&p, &scan, 0, 5).unwrap();
        assert_eq!(d.len(), scan.len());
        for (pair, s) in d.pairs.iter().zip(&scan) {
            assert_eq!(pair.pose, s.pose.to_external());
            assert_eq!(pair.joints, s.joints.angles);
        }
    }

    #[test]
    fn repeated_joints_settle_identically() {
        let p = plant();
        let j = JointVector::new([10.0, 200.0, 35.0, 90.0, 270.0, 0.0]);
        assert_eq!(p.settle_static(&j, 0.0), p.settle_static(&j, 0.0));
    }

    fn single_pair_dataset() -> IkDataset {
        let pair = IkPair {
            pose: [0.01, -0.02, 0.27, 3.0, -2.0, 1.0],
            joints: [100.0, 120.0, 80.0, 140.0, 60.0, 90.0],
            split: Split::Train,
        };
        IkDataset {
            pairs: vec![pair; 8],
            excluded_buckled: 0,
        }
    }

    #[test]
    fn memorizes_a_single_pair() {
        let d = single_pair_dataset();
        let params = TrainParams {
            hidden: vec![16, 16],
            epochs: 400,
            ..Default::default()
        };
        let (m, report) = train(&d, [0.0, 270.0], &params).unwrap();
        assert!(report.best_validation_loss < 1e-12, "{}", report.best_validation_loss);
        let j = predict(&m, &Pose6::from_external(d.pairs[0].pose));
        for (a, b) in j.angles.iter().zip(d.pairs[0].joints) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn training_is_deterministic_and_serializes() {
        let p = plant();
        let d = build_dataset(&p, &[], 300, 2).unwrap();
        let params = TrainParams {
            hidden: vec![32, 32, 32],
            epochs: 60,
            seed: 4,
            ..Default::default()
        };
        let (a, ra) = train(&d, [0.0, 270.0], &params).unwrap();
        let (b, rb) = train(&d, [0.0, 270.0], &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.train_loss[59] < ra.train_loss[0] / 10.0);
        let back = MlpModel::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        let pose = Pose6::from_external(d.pairs[0].pose);
        assert_eq!(predict(&a, &pose), predict(&back, &pose));
        assert!(a.in_distribution(&pose));
        assert!(!a.in_distribution(&Pose6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0)));
    }

    #[test]
    fn rejects_malformed_model_files() {
        let d = single_pair_dataset();
        let params = TrainParams {
            hidden: vec![4],
            epochs: 1,
            ..Default::default()
        };
        let (m, _) = train(&d, [0.0, 270.0], &params).unwrap();
        let mut f = ModelFile::from(&m);
        f.format_version = 99;
        assert!(matches!(MlpModel::try_from(f), Err(Error::ModelFormat(_))));
        let mut f = ModelFile::from(&m);
        f.weights[0].pop();
        assert!(matches!(MlpModel::try_from(f), Err(Error::ModelFormat(_))));
        assert!(MlpModel::from_json("{}").is_err());
    }

    #[test]
    fn rigid_plant_makes_rigid_ik_exact() {
        let p = Plant::new(PlantConfig::rigid(PlantConfig::default().geometry)).unwrap();
        let targets = random_reachable_poses(&p, 20, 3, &[]);
        let d = build_dataset(&p, &[], 200, 1).unwrap();
        let params = TrainParams {
            hidden: vec![16],
            epochs: 5,
            ..Default::default()
        };
        let (m, _) = train(&d, [0.0, 270.0], &params).unwrap();
        let r = evaluate(&m, &p, &targets).unwrap();
        for i in 0..6 {
            assert!(r.rigid[i] < 1e-6, "axis {i}: {}", r.rigid[i]);
        }
        let h = evaluate_held_out(&m, &p, 10, 4, &[]).unwrap();
        assert_eq!(h.evaluated, 10);
        assert!(h.rigid_translation < 1e-6);
    }
}
