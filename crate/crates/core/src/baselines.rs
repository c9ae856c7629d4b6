//! Comparison methods and the sensitive-information ablations: sensitive
//! classifiers, adversarial training with gradient reversal, correlation
//! based latent-dimension removal, and retrained / fixed classifier sweeps
//! over perturbed codes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Graph;
use crate::debias::{perturb, PerturbationConfig};
use crate::error::{Error, Result};
use crate::explain::focus;
use crate::nn::{
    classification_accuracy, cross_entropy, fit_classifier, Activation, AdamState, Identity, Mlp,
    MlpSpec, TrainConfig,
};
use crate::rng::{derive_seed, permutation, rng_from_seed, Rng};
use crate::tensor::Tensor;

/// Frozen classifier `z -> s` plus how it was selected.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SensitiveClassifier {
    pub model: Mlp,
    /// Epoch whose parameters were kept (highest held-out accuracy, first wins).
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub epochs: usize,
}

/// Classifier architecture shared by sensitive and task models.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassifierSpec {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
}

impl ClassifierSpec {
    pub fn mlp(&self, input_width: usize) -> MlpSpec {
        MlpSpec::new(input_width, self.hidden_widths.clone(), self.activation, 2)
    }
}

fn check_two_classes(labels: &[usize], what: &str) -> Result<()> {
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid(format!("{} labels must be 0 or 1", what)));
    }
    if ones == 0 || ones == labels.len() {
        return Err(Error::invalid(format!(
            "{} labels contain a single class",
            what
        )));
    }
    Ok(())
}

/// Trains a fresh classifier on `(train, s_train)` and keeps the epoch with
/// the best accuracy on `(held_out, s_held_out)`.
pub fn train_sensitive_classifier(
    train: &Tensor,
    s_train: &[usize],
    held_out: &Tensor,
    s_held_out: &[usize],
    spec: &ClassifierSpec,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<SensitiveClassifier> {
    check_two_classes(s_train, "sensitive")?;
    let mut model = Mlp::new(spec.mlp(train.cols()), rng)?;
    let mut best: Option<(f64, usize, Mlp)> = None;
    let mut eval_err = None;
    fit_classifier(
        &mut model,
        train,
        s_train,
        config,
        rng,
        &mut Identity,
        |epoch, m, _| match classification_accuracy(m, held_out, s_held_out) {
            Ok(acc) => {
                if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                    best = Some((acc, epoch, m.clone()));
                }
            }
            Err(e) => eval_err = Some(e),
        },
    )?;
    if let Some(e) = eval_err {
        return Err(e);
    }
    let (best_accuracy, best_epoch, model) = best.expect("at least one epoch");
    Ok(SensitiveClassifier {
        model,
        best_epoch,
        best_accuracy,
        epochs: config.epochs,
    })
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / libm::sqrt(saa * sbb)
}

/// `|corr(z_j, s)|` for every latent dimension.
pub fn dim_correlations(codes: &Tensor, s: &[usize]) -> Vec<f64> {
    let sf: Vec<f64> = s.iter().map(|&v| v as f64).collect();
    (0..codes.cols())
        .map(|j| pearson(&codes.column(j), &sf).abs())
        .collect()
}

/// The `k` dimensions most correlated with `s`, strongest first; ties go to
/// the lower index.
pub fn select_sensitive_dims(codes: &Tensor, s: &[usize], k: usize) -> Result<Vec<usize>> {
    if k >= codes.cols() {
        return Err(Error::invalid(format!(
            "cannot select {} of {} latent dimensions",
            k,
            codes.cols()
        )));
    }
    if s.len() != codes.rows() {
        return Err(Error::invalid(format!(
            "{} labels for {} codes",
            s.len(),
            codes.rows()
        )));
    }
    let corr = dim_correlations(codes, s);
    let mut order: Vec<usize> = (0..corr.len()).collect();
    order.sort_by(|&a, &b| corr[b].total_cmp(&corr[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Drops the listed columns, keeping the remaining order.
pub fn remove_dims(codes: &Tensor, dims: &[usize]) -> Result<Tensor> {
    let w = codes.cols();
    if let Some(d) = dims.iter().find(|&&d| d >= w) {
        return Err(Error::invalid(format!(
            "dimension {} out of range for width {}",
            d, w
        )));
    }
    let keep: Vec<usize> = (0..w).filter(|j| !dims.contains(j)).collect();
    if keep.is_empty() {
        return Err(Error::invalid("removing every latent dimension"));
    }
    let mut data = Vec::with_capacity(codes.rows() * keep.len());
    for i in 0..codes.rows() {
        let row = codes.row(i);
        data.extend(keep.iter().map(|&j| row[j]));
    }
    Tensor::matrix(codes.rows(), keep.len(), data)
}

/// Inverse of [`remove_dims`] with zeros in the removed columns.
pub fn reinsert_zeros(reduced: &Tensor, dims: &[usize], width: usize) -> Result<Tensor> {
    let keep: Vec<usize> = (0..width).filter(|j| !dims.contains(j)).collect();
    if keep.len() != reduced.cols() {
        return Err(Error::invalid(format!(
            "{} columns cannot fill width {} with {} removed",
            reduced.cols(),
            width,
            dims.len()
        )));
    }
    let mut out = Tensor::zeros(&[reduced.rows(), width]);
    for i in 0..reduced.rows() {
        let src = reduced.row(i).to_vec();
        let dst = out.row_mut(i);
        for (&j, v) in keep.iter().zip(src) {
            dst[j] = v;
        }
    }
    Ok(out)
}

/// Adversarial baseline: shared encoder, sensitive branch and task branch.
/// The encoder receives the task gradient minus `lambda` times the sensitive
/// gradient.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdtModel {
    pub encoder: Mlp,
    pub sensitive_branch: Mlp,
    pub task_branch: Mlp,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdtConfig {
    pub encoder_hidden: Vec<usize>,
    pub feature_width: usize,
    pub branch_hidden: Vec<usize>,
    pub activation: Activation,
    pub lambda: f64,
}

/// Loss value and gradients of one ADT step.
#[derive(Debug, Clone)]
pub struct AdtGrads {
    pub loss: f64,
    pub encoder: Vec<Tensor>,
    pub sensitive: Vec<Tensor>,
    pub task: Vec<Tensor>,
}

impl AdtModel {
    pub fn new(input_width: usize, config: &AdtConfig, rng: &mut Rng) -> Result<Self> {
        if !(config.lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda must be >= 0, got {}",
                config.lambda
            )));
        }
        let f = config.feature_width;
        let encoder = Mlp::new(
            MlpSpec::new(
                input_width,
                config.encoder_hidden.clone(),
                config.activation,
                f,
            ),
            rng,
        )?;
        let branch = |rng: &mut Rng| {
            Mlp::new(
                MlpSpec::new(f, config.branch_hidden.clone(), config.activation, 2),
                rng,
            )
        };
        let sensitive_branch = branch(rng)?;
        let task_branch = branch(rng)?;
        Ok(AdtModel {
            encoder,
            sensitive_branch,
            task_branch,
            lambda: config.lambda,
        })
    }

    fn activation(&self) -> Activation {
        self.encoder.spec().activation
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.encoder.logits(x)?;
        Ok(match self.activation() {
            Activation::Relu => h.map(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::LeakyRelu(s) => h.map(|v| if v > 0.0 { v } else { s * v }),
            Activation::None => h,
        })
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.task_branch.predict(&self.features(x)?)
    }

    pub fn predict_sensitive(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.sensitive_branch.predict(&self.features(x)?)
    }

    /// `CE(task) + CE(sensitive)` with the sensitive gradient reversed and
    /// scaled by `lambda` on its way into the encoder.
    pub fn gradients(&self, x: &Tensor, y: &[usize], s: &[usize]) -> Result<AdtGrads> {
        let mut g = Graph::new();
        let enc = self.encoder.bind(&mut g, true);
        let sen = self.sensitive_branch.bind(&mut g, true);
        let tsk = self.task_branch.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let h = self.encoder.forward(&mut g, &enc, xv)?;
        let h = match self.activation() {
            Activation::Relu => g.relu(h),
            Activation::LeakyRelu(sl) => g.leaky_relu(h, sl),
            Activation::None => h,
        };
        let task_logits = self.task_branch.forward(&mut g, &tsk, h)?;
        let reversed = g.grad_scale(h, -self.lambda);
        let sens_logits = self.sensitive_branch.forward(&mut g, &sen, reversed)?;
        let lt = cross_entropy(&mut g, task_logits, y)?;
        let ls = cross_entropy(&mut g, sens_logits, s)?;
        let loss = g.add(lt, ls)?;
        let mut wrt = enc.params.clone();
        wrt.extend_from_slice(&sen.params);
        wrt.extend_from_slice(&tsk.params);
        let mut grads = g.backward(loss, &wrt)?;
        let task = grads.split_off(enc.params.len() + sen.params.len());
        let sensitive = grads.split_off(enc.params.len());
        Ok(AdtGrads {
            loss: g.value(loss).item(),
            encoder: grads,
            sensitive,
            task,
        })
    }
}

/// Optimiser state for the three parts of an [`AdtModel`].
pub struct AdtOptimizer {
    encoder: AdamState,
    sensitive: AdamState,
    task: AdamState,
}

impl AdtOptimizer {
    pub fn new(model: &AdtModel, config: &TrainConfig) -> Self {
        AdtOptimizer {
            encoder: AdamState::new(config.adam, model.encoder.params()),
            sensitive: AdamState::new(config.adam, model.sensitive_branch.params()),
            task: AdamState::new(config.adam, model.task_branch.params()),
        }
    }

    pub fn step(&mut self, model: &mut AdtModel, grads: &AdtGrads) -> Result<()> {
        self.encoder
            .step(model.encoder.params_mut(), &grads.encoder)?;
        self.sensitive
            .step(model.sensitive_branch.params_mut(), &grads.sensitive)?;
        self.task.step(model.task_branch.params_mut(), &grads.task)
    }
}

pub fn train_adt(
    x: &Tensor,
    y: &[usize],
    s: &[usize],
    config: &AdtConfig,
    train: &TrainConfig,
    rng: &mut Rng,
) -> Result<AdtModel> {
    train.validate()?;
    let n = x.rows();
    if n == 0 || y.len() != n || s.len() != n {
        return Err(Error::invalid(format!(
            "{} inputs, {} labels, {} groups",
            n,
            y.len(),
            s.len()
        )));
    }
    let mut model = AdtModel::new(x.cols(), config, rng)?;
    let mut opt = AdtOptimizer::new(&model, train);
    for epoch in 0..train.epochs {
        let order = permutation(rng, n);
        for (step, idx) in order.chunks(train.batch_size).enumerate() {
            let xb = x.select_rows(idx);
            let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let sb: Vec<usize> = idx.iter().map(|&i| s[i]).collect();
            let diverged = |detail| Error::Diverged {
                stage: "adt",
                epoch,
                step,
                detail,
            };
            let grads = model.gradients(&xb, &yb, &sb)?;
            if !grads.loss.is_finite() {
                return Err(diverged(format!("loss = {}", grads.loss)));
            }
            opt.step(&mut model, &grads)
                .map_err(|e| diverged(format!("{}", e)))?;
        }
    }
    Ok(model)
}

/// One row of an ablation table: reference columns then one accuracy per η1.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationRow {
    pub no_removal: f64,
    pub removed: f64,
    pub eta1: Vec<f64>,
    pub accuracy: Vec<f64>,
}

/// Inputs shared by both ablations.
pub struct AblationInput<'a> {
    pub train_codes: &'a Tensor,
    pub train_s: &'a [usize],
    pub test_codes: &'a Tensor,
    pub test_s: &'a [usize],
    pub sensitive: &'a Mlp,
    pub eta1_grid: &'a [f64],
    pub eps_ratio: f64,
    /// Dimensions dropped for the removal reference column.
    pub removed_dims: &'a [usize],
}

fn perturb_sensitive(codes: &Tensor, d: &Mlp, eta1: f64, eps_ratio: f64) -> Result<Tensor> {
    let cfg = PerturbationConfig {
        eta1,
        eta2: 0.0,
        eps_ratio,
    };
    if cfg.is_identity() {
        cfg.validate()?;
        return Ok(codes.clone());
    }
    let fs = focus(d, codes)?;
    perturb(codes, &fs, &Tensor::zeros(codes.shape()), &cfg)
}

/// Retrains a fresh sensitive classifier on codes perturbed with the frozen
/// classifier's focus (`η2 = 0`) and records its best held-out accuracy.
/// Every cell uses the same classifier seed, so `η1 = 0` reproduces the
/// no-removal column.
pub fn ablation_retrained(
    input: &AblationInput,
    spec: &ClassifierSpec,
    config: &TrainConfig,
    seed: u64,
) -> Result<AblationRow> {
    let cell_seed = derive_seed(seed, "ablation_retrained");
    let fit = |train: &Tensor, test: &Tensor| -> Result<f64> {
        let mut rng = rng_from_seed(cell_seed);
        Ok(train_sensitive_classifier(
            train,
            input.train_s,
            test,
            input.test_s,
            spec,
            config,
            &mut rng,
        )?
        .best_accuracy)
    };
    let no_removal = fit(input.train_codes, input.test_codes)?;
    let removed = fit(
        &remove_dims(input.train_codes, input.removed_dims)?,
        &remove_dims(input.test_codes, input.removed_dims)?,
    )?;
    let mut accuracy = Vec::with_capacity(input.eta1_grid.len());
    for &eta in input.eta1_grid {
        let tr = perturb_sensitive(input.train_codes, input.sensitive, eta, input.eps_ratio)?;
        let te = perturb_sensitive(input.test_codes, input.sensitive, eta, input.eps_ratio)?;
        accuracy.push(fit(&tr, &te)?);
    }
    Ok(AblationRow {
        no_removal,
        removed,
        eta1: input.eta1_grid.to_vec(),
        accuracy,
    })
}

/// Accuracy of the frozen classifier itself on perturbed held-out codes.
/// The removal column zeroes the removed dimensions.
pub fn ablation_fixed(input: &AblationInput) -> Result<AblationRow> {
    let d = input.sensitive;
    let acc = |codes: &Tensor| classification_accuracy(d, codes, input.test_s);
    let no_removal = acc(input.test_codes)?;
    let reduced = remove_dims(input.test_codes, input.removed_dims)?;
    let removed = acc(&reinsert_zeros(
        &reduced,
        input.removed_dims,
        input.test_codes.cols(),
    )?)?;
    let mut accuracy = Vec::with_capacity(input.eta1_grid.len());
    for &eta in input.eta1_grid {
        accuracy.push(acc(&perturb_sensitive(
            input.test_codes,
            d,
            eta,
            input.eps_ratio,
        )?)?);
    }
    Ok(AblationRow {
        no_removal,
        removed,
        eta1: input.eta1_grid.to_vec(),
        accuracy,
    })
}

/// `0.1, 0.2, …, 1.0`.
pub fn default_eta1_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}
