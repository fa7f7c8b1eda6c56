//! One-epoch drivers for every strategy, dispatched by [`run_epoch`].

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::cdr::{cdr_partition, mask_gradients};
use super::config::{MethodConfig, MethodKind};
use super::gmm::gmm2_fit;
use super::primitives::{class_thresholds, keep_schedule, sharpen, small_loss_select, sym_kl};
use super::state::{EpochReport, SelectionRecord, TrainData, TrainState};
use super::transition::{project_row_stochastic, trevision_estimate, volmin_transition_grad};
use crate::dataset::class_histogram;
use crate::error::{LnmError, Result};
use crate::nn::{
    cross_entropy, loss_and_grad, sgd_step, GradientSet, LossKind, LossTerms, MlpModel, OptimState, Targets,
};
use crate::noise::estimation_error;
use crate::rng::RngState;

#[derive(Default)]
struct EpochOutcome {
    loss_sum: f64,
    rows: usize,
    selection: Option<SelectionRecord>,
    collapsed: bool,
    est_error: Option<f64>,
}

impl EpochOutcome {
    fn add(&mut self, mean_loss: f64, rows: usize) {
        self.loss_sum += mean_loss * rows as f64;
        self.rows += rows;
    }
}

enum Supervision {
    Hard(Vec<usize>),
    Soft(Array2<f64>),
}

/// A slice of a mini-batch with its own loss; gradients are combined as
/// `Σ weight · mean-gradient`.
struct Part {
    x: Array2<f64>,
    targets: Supervision,
    kind: LossKind,
    weight: f64,
}

fn combined_step(model: &mut MlpModel, opt: &mut OptimState, parts: &[Part]) -> Result<f64> {
    let mut total = GradientSet::zeros_like(model);
    let mut loss = 0.0;
    for part in parts {
        if part.x.nrows() == 0 {
            continue;
        }
        let targets = match &part.targets {
            Supervision::Hard(y) => Targets::Hard(y),
            Supervision::Soft(q) => Targets::Soft(q.view()),
        };
        let lg = loss_and_grad(model, part.x.view(), &targets, &part.kind)?;
        total.add_scaled(&lg.grads, part.weight);
        loss += part.weight * lg.mean_loss;
    }
    sgd_step(model, &total, opt)?;
    Ok(loss)
}

fn hard_step(model: &mut MlpModel, opt: &mut OptimState, x: Array2<f64>, y: Vec<usize>, kind: LossKind) -> Result<f64> {
    combined_step(
        model,
        opt,
        &[Part {
            x,
            targets: Supervision::Hard(y),
            kind,
            weight: 1.0,
        }],
    )
}

fn shuffled_batches(idx: &[usize], batch_size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let mut order = idx.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn pick<T: Copy>(values: &[T], positions: &[usize]) -> Vec<T> {
    positions.iter().map(|&p| values[p]).collect()
}

fn jitter(x: &Array2<f64>, data: &TrainData, scale: f64, rng: &mut RngState) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for (v, &s) in row.iter_mut().zip(&data.feature_std) {
            let z: f64 = normal.sample(rng);
            *v += scale * s * z;
        }
    }
    out
}

fn argmax_rows(p: &Array2<f64>) -> Vec<usize> {
    p.rows()
        .into_iter()
        .map(|r| crate::nn::argmax_index(r.iter()))
        .collect()
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

/// Clean-set objective of the semi-supervised methods.
fn clean_set_kind(cfg: &MethodConfig) -> LossKind {
    if cfg.medssl.rce_clean {
        LossKind::Custom {
            terms: LossTerms {
                ce: 1.0,
                rce: 1.0,
                rce_log_floor: cfg.hyper.rce_log_floor,
                ..LossTerms::default()
            },
            row_weights: None,
            peer: None,
        }
    } else {
        LossKind::CrossEntropy
    }
}

/// Loss used while warming up a semi-supervised method.
fn warm_up_kind(cfg: &MethodConfig) -> LossKind {
    match (cfg.kind, cfg.medssl.ls_warmup) {
        (_, true) => LossKind::Smoothed {
            epsilon: cfg.hyper.ls_epsilon,
        },
        (MethodKind::DivideMix, false) => LossKind::Custom {
            terms: LossTerms {
                ce: 1.0,
                neg_entropy: 1.0,
                ..LossTerms::default()
            },
            row_weights: None,
            peer: None,
        },
        _ => LossKind::CrossEntropy,
    }
}

/// Runs one full pass over the training split and evaluates afterwards.
///
/// A strategy that selects nothing for a whole epoch falls back to plain
/// cross-entropy on all training samples; the report marks it `collapsed`.
pub fn run_epoch(
    state: &mut TrainState,
    data: &TrainData,
    cfg: &MethodConfig,
    rng: &mut RngState,
) -> Result<EpochReport> {
    if state.kind != cfg.kind {
        return Err(LnmError::config(format!(
            "state built for {} driven with {}",
            state.kind.as_str(),
            cfg.kind.as_str()
        )));
    }
    if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
        return Err(LnmError::precondition("train, val and test splits must be nonempty"));
    }
    let h = &cfg.hyper;
    let outcome = match cfg.kind {
        MethodKind::Ce => single_loss_epoch(state, data, rng, LossKind::CrossEntropy)?,
        MethodKind::LabelSmoothing => {
            single_loss_epoch(state, data, rng, LossKind::Smoothed { epsilon: h.ls_epsilon })?
        }
        MethodKind::Sce => single_loss_epoch(
            state,
            data,
            rng,
            LossKind::Symmetric {
                alpha: h.sce_alpha,
                beta: h.sce_beta,
                log_floor: h.rce_log_floor,
            },
        )?,
        MethodKind::Cdr => cdr_epoch(state, data, cfg, rng)?,
        MethodKind::VolMinNet => volmin_epoch(state, data, cfg, rng)?,
        MethodKind::TRevision => trevision_epoch(state, data, cfg, rng)?,
        MethodKind::CoTeaching => coteaching_epoch(state, data, cfg, rng, false)?,
        MethodKind::CoTeachingPlus => coteaching_epoch(state, data, cfg, rng, true)?,
        MethodKind::CoDis => codis_epoch(state, data, cfg, rng)?,
        MethodKind::JoCoR => jocor_epoch(state, data, cfg, rng)?,
        MethodKind::DivideMix => dividemix_epoch(state, data, cfg, rng)?,
        MethodKind::Disc => disc_epoch(state, data, cfg, rng)?,
    };
    let epoch = state.epoch;
    state.epoch += 1;
    evaluate(state, data, epoch, outcome)
}

impl TrainState {
    /// Class probabilities used for evaluation. DivideMix averages its two
    /// networks; every other strategy uses its first model.
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let pa = self.model_a.predict_proba(x.view())?;
        match (&self.model_b, self.kind) {
            (Some(b), MethodKind::DivideMix) => Ok((pa + b.predict_proba(x.view())?) * 0.5),
            _ => Ok(pa),
        }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(x)?))
    }
}

fn evaluate(state: &mut TrainState, data: &TrainData, epoch: usize, outcome: EpochOutcome) -> Result<EpochReport> {
    let acc =
        |idx: &[usize], truth: Vec<usize>| -> Result<f64> { Ok(accuracy(&state.predict(&data.rows(idx))?, &truth)) };
    let train_acc = acc(&data.train, data.observed_at(&data.train))?;
    let val_acc = acc(&data.val, data.observed_at(&data.val))?;
    let test_acc = acc(&data.test, data.truth_at(&data.test))?;

    let x = data.rows(&data.train);
    let y = data.observed_at(&data.train);
    let probs = state.model_a.predict_proba(x.view())?;
    let losses = cross_entropy(probs.view(), &Targets::Hard(&y))?;
    let (mut noisy, mut clean) = ((0.0, 0usize), (0.0, 0usize));
    for (pos, &i) in data.train.iter().enumerate() {
        state.loss_history[i] = losses[pos];
        match data.is_clean(i) {
            Some(true) => {
                clean.0 += losses[pos];
                clean.1 += 1;
            }
            Some(false) => {
                noisy.0 += losses[pos];
                noisy.1 += 1;
            }
            None => {}
        }
    }
    let mean = |(s, c): (f64, usize)| (c > 0).then(|| s / c as f64);
    Ok(EpochReport {
        epoch,
        train_loss: if outcome.rows > 0 {
            outcome.loss_sum / outcome.rows as f64
        } else {
            0.0
        },
        train_acc,
        val_acc,
        test_acc,
        selection: outcome.selection,
        est_error: outcome.est_error,
        collapsed: outcome.collapsed,
        noisy_loss: mean(noisy),
        clean_loss: mean(clean),
    })
}

fn single_loss_epoch(
    state: &mut TrainState,
    data: &TrainData,
    rng: &mut RngState,
    kind: LossKind,
) -> Result<EpochOutcome> {
    let mut out = EpochOutcome::default();
    for batch in shuffled_batches(&data.train, state.settings.batch_size, rng) {
        let loss = hard_step(
            &mut state.model_a,
            &mut state.opt_a,
            data.rows(&batch),
            data.observed_at(&batch),
            kind.clone(),
        )?;
        out.add(loss, batch.len());
    }
    Ok(out)
}

fn cdr_epoch(state: &mut TrainState, data: &TrainData, cfg: &MethodConfig, rng: &mut RngState) -> Result<EpochOutcome> {
    let rho = cfg.cdr_rho();
    let mut out = EpochOutcome::default();
    for batch in shuffled_batches(&data.train, state.settings.batch_size, rng) {
        let x = data.rows(&batch);
        let y = data.observed_at(&batch);
        let mut lg = loss_and_grad(&state.model_a, x.view(), &Targets::Hard(&y), &LossKind::CrossEntropy)?;
        let mask = cdr_partition(&lg.grads, &state.model_a, rho);
        mask_gradients(&mut lg.grads, &mask);
        sgd_step(&mut state.model_a, &lg.grads, &mut state.opt_a)?;
        out.add(lg.mean_loss, batch.len());
    }
    Ok(out)
}

fn volmin_epoch(
    state: &mut TrainState,
    data: &TrainData,
    cfg: &MethodConfig,
    rng: &mut RngState,
) -> Result<EpochOutcome> {
    let h = &cfg.hyper;
    let mut out = EpochOutcome::default();
    let batches = shuffled_batches(&data.train, state.settings.batch_size, rng);
    let param = state
        .transition
        .as_mut()
        .ok_or_else(|| LnmError::config("VolMinNet state lacks a transition parameter"))?;
    for batch in batches {
        let x = data.rows(&batch);
        let y = data.observed_at(&batch);
        let t = param.matrix();
        let kind = LossKind::VolMin {
            transition: t.clone(),
            volume_weight: h.volmin_lambda,
        };
        let lg = loss_and_grad(&state.model_a, x.view(), &Targets::Hard(&y), &kind)?;
        sgd_step(&mut state.model_a, &lg.grads, &mut state.opt_a)?;
        let gt = volmin_transition_grad(lg.probs.view(), &t, &Targets::Hard(&y), h.volmin_lambda)?;
        param.step(&gt, h.transition_lr, h.transition_momentum)?;
        out.add(lg.mean_loss, batch.len());
    }
    if let Some(truth) = &data.true_transition {
        out.est_error = Some(estimation_error(&param.matrix(), truth)?);
    }
    Ok(out)
}

fn trevision_epoch(
    state: &mut TrainState,
    data: &TrainData,
    cfg: &MethodConfig,
    rng: &mut RngState,
) -> Result<EpochOutcome> {
    let h = &cfg.hyper;
    if state.epoch < cfg.warm_up_epochs {
        return single_loss_epoch(state, data, rng, LossKind::CrossEntropy);
    }
    if state.revision_base.is_none() {
        let probs = state.model_a.predict_proba(data.rows(&data.train).view())?;
        let base = trevision_estimate(probs.view(), h.trevision_percentile)?;
        state.revision_slack = Some(Array2::zeros((data.k, data.k)));
        state.revision_base = Some(base.entries().clone());
    }
    let base = state.revision_base.clone().expect("set above");
    let mut out = EpochOutcome::default();
    for batch in shuffled_batches(&data.train, state.settings.batch_size, rng) {
        let slack = state.revision_slack.as_mut().expect("set with base");
        let x = data.rows(&batch);
        let y = data.observed_at(&batch);
        let t = &base + &*slack;
        let kind = LossKind::VolMin {
            transition: t.clone(),
            volume_weight: 0.0,
        };
        let lg = loss_and_grad(&state.model_a, x.view(), &Targets::Hard(&y), &kind)?;
        sgd_step(&mut state.model_a, &lg.grads, &mut state.opt_a)?;
        let gt = volmin_transition_grad(lg.probs.view(), &t, &Targets::Hard(&y), 0.0)?;
        slack.scaled_add(-h.transition_lr, &gt);
        out.add(lg.mean_loss, batch.len());
    }
    if let Some(truth) = &data.true_transition {
        let slack = state.revision_slack.as_ref().expect("set with base");
        out.est_error = Some(estimation_error(&project_row_stochastic(&(&base + slack)), truth)?);
    }
    Ok(out)
}

type DualParts<'a> = (
    &'a mut MlpModel,
    &'a mut OptimState,
    &'a mut MlpModel,
    &'a mut OptimState,
);

fn dual(state: &mut TrainState) -> Result<DualParts<'_>> {
    match (&mut state.model_b, &mut state.opt_b) {
        (Some(mb), Some(ob)) => Ok((&mut state.model_a, &mut state.opt_a, mb, ob)),
        _ => Err(LnmError::config("dual-network strategy without a second model")),
    }
}

fn coteaching_epoch(
    state: &mut TrainState,
    data: &TrainData,
    cfg: &MethodConfig,
    rng: &mut RngState,
    disagreement: bool,
) -> Result<EpochOutcome> {
    let keep = keep_schedule(state.epoch as f64, cfg.noise_rate(), cfg.hyper.keep_ramp_epochs);
    let use_disagreement = disagreement && state.epoch >= cfg.warm_up_epochs;
    let batches = shuffled_batches(&data.train, state.settings.batch_size, rng);
    let (ma, oa, mb, ob) = dual(state)?;
    let mut out = EpochOutcome::default();
    let mut selected = Vec::new();
    for batch in batches {
        let x = data.rows(&batch);
        let y = data.observed_at(&batch);
        let pa = ma.predict_proba(x.view())?;
        let pb = mb.predict_proba(x.view())?;
        let la = cross_entropy(pa.view(), &Targets::Hard(&y))?;
        let lb = cross_entropy(pb.view(), &Targets::Hard(&y))?;
        let pool: Vec<usize> = if use_disagreement {
            let (aa, ab) = (argmax_rows(&pa), argmax_rows(&pb));
            (0..batch.len()).filter(|&i| aa[i] != ab[i]).collect()
        } else {
            Vec::new()
        };
        let (sel_a, sel_b) = if pool.is_empty() {
            (small_loss_select(&la, keep)?, small_loss_select(&lb, keep)?)
        } else {
            let sa = small_loss_select(&pick(&la, &pool), keep)?;
            let sb = small_loss_select(&pick(&lb, &pool), keep)?;
            (pick(&pool, &sa), pick(&pool, &sb))
        };
        // each network learns from the samples its peer considers clean
        let loss = hard_step(
            ma,
            oa,
            x.select(Axis(0), &sel_b),
            pick(&y, &sel_b),
            LossKind::CrossEntropy,
        )?;
        hard_step(
            mb,
            ob,
            x.select(Axis(0), &sel_a),
            pick(&y, &sel_a),
            LossKind::CrossEntropy,
        )?;
        out.add(loss, sel_b.len());
        selected.extend(sel_a.iter().map(|&p| batch[p]));
    }
    out.selection = Some(SelectionRecord::new(state.epoch, selected, Vec::new(), data));
    Ok(out)
}

fn codis_epoch(
    state: &mut TrainState,
    data: &TrainData,
    cfg: &MethodConfig,
    rng: &mut RngState,
) -> Result<EpochOutcome> {
    let keep = keep_schedule(state.epoch as f64, cfg.noise_rate(), cfg.hyper.keep_ramp_epochs);
    let lambda = cfg.hyper.codis_lambda;
    let batches = shuffled_batches(&data.train, state.settings.batch_size, rng);
    let (ma, oa, mb, ob) = dual(state)?;
    let mut out = EpochOutcome::default();
    let mut selected = Vec::new();
    for batch in batches {
        let x = data.rows(&batch);
        let y = data.observed_at(&batch);
        let pa = ma.predict_proba(x.view())?;
        let pb = mb.predict_proba(x.view())?;
        let la = cross_entropy(pa.view(), &Targets::Hard(&y))?;
        let lb = cross_entropy(pb.view(), &Targets::Hard(&y))?;
        let div = sym_kl(pa.view(), pb.view())?;
        let score: Vec<f64> = (0..batch.len()).map(|i| la[i] + lb[i] - lambda * div[i]).collect();
        let sel = small_loss_select(&score, keep)?;
        let xs = x.select(Axis(0), &sel);
        let ys = pick(&y, &sel);
        let loss = hard_step(ma, oa, xs.clone(), ys.clone(), LossKind::CrossEntropy)?;
        hard_step(mb, ob, xs, ys, LossKind::CrossEntropy)?;
        out.add(loss, sel.len());
        selected.extend(sel.iter().map(|&p| batch[p]));
    }
    out.selection = Some(SelectionRecord::new(state.epoch, selected, Vec::new(), data));
    Ok(out)
}

fn jocor_epoch(
    state: &mut TrainState,
    data: &TrainData,
    cfg: &MethodConfig,
    rng: &mut RngState,
) -> Result<EpochOutcome> {
    let keep = keep_schedule(state.epoch as f64, cfg.noise_rate(), cfg.hyper.keep_ramp_epochs);
    let lambda = cfg.hyper.jocor_lambda;
    let batches = shuffled_batches(&data.train, state.settings.batch_size, rng);
    let (ma, oa, mb, ob) = dual(state)?;
    let mut out = EpochOutcome::default();
    let mut selected = Vec::new();
    let joint_kind = |peer: Array2<f64>| LossKind::Custom {
        terms: LossTerms {
            ce: 1.0 - lambda,
            sym_kl: lambda,
            ..LossTerms::default()
        },
        row_weights: None,
        peer: Some(peer),
    };
    for batch in batches {
        let x = data.rows(&batch);
        let y = data.observed_at(&batch);
        let pa = ma.predict_proba(x.view())?;
        let pb = mb.predict_proba(x.view())?;
        let la = cross_entropy(pa.view(), &Targets::Hard(&y))?;
        let lb = cross_entropy(pb.view(), &Targets::Hard(&y))?;
        let div = sym_kl(pa.view(), pb.view())?;
        let joint: Vec<f64> = (0..batch.len())
            .map(|i| (1.0 - lambda) * (la[i] + lb[i]) + lambda * div[i])
            .collect();
        let sel = small_loss_select(&joint, keep)?;
        let xs = x.select(Axis(0), &sel);
        let ys = pick(&y, &sel);
        let peer_b = pb.select(Axis(0), &sel);
        let peer_a = pa.select(Axis(0), &sel);
        hard_step(ma, oa, xs.clone(), ys.clone(), joint_kind(peer_b))?;
        hard_step(mb, ob, xs, ys, joint_kind(peer_a))?;
        out.add(pick(&joint, &sel).iter().sum::<f64>() / sel.len() as f64, sel.len());
        selected.extend(sel.iter().map(|&p| batch[p]));
    }
    out.selection = Some(SelectionRecord::new(state.epoch, selected, Vec::new(), data));
    Ok(out)
}

/// Clean posteriors over the training split for one network.
fn mixture_posteriors(model: &MlpModel, x: &Array2<f64>, y: &[usize]) -> Result<Vec<f64>> {
    let probs = model.predict_proba(x.view())?;
    let losses = cross_entropy(probs.view(), &Targets::Hard(y))?;
    match gmm2_fit(&losses) {
        Ok(fit) => Ok(fit.clean_posterior),
        Err(LnmError::DegenerateFit) => Ok(vec![1.0; y.len()]),
        Err(e) => Err(e),
    }
}

fn one_hot(labels: &[usize], k: usize) -> Array2<f64> {
    let mut q = Array2::zeros((labels.len(), k));
    for (i, &y) in labels.iter().enumerate() {
        q[[i, y]] = 1.0;
    }
    q
}

fn dividemix_epoch(
    state: &mut TrainState,
    data: &TrainData,
    cfg: &MethodConfig,
    rng: &mut RngState,
) -> Result<EpochOutcome> {
    let epoch = state.epoch;
    let bs = state.settings.batch_size;
    let mut out = EpochOutcome::default();
    if epoch < cfg.warm_up_epochs {
        let kind = warm_up_kind(cfg);
        let batches = shuffled_batches(&data.train, bs, rng);
        let (ma, oa, mb, ob) = dual(state)?;
        for batch in batches {
            let x = data.rows(&batch);
            let y = data.observed_at(&batch);
            let loss = hard_step(ma, oa, x.clone(), y.clone(), kind.clone())?;
            hard_step(mb, ob, x, y, kind.clone())?;
            out.add(loss, batch.len());
        }
        return Ok(out);
    }

    let x_all = data.rows(&data.train);
    let y_all = data.observed_at(&data.train);
    let w_a = mixture_posteriors(&state.model_a, &x_all, &y_all)?;
    let w_b = {
        let mb = state
            .model_b
            .as_ref()
            .ok_or_else(|| LnmError::config("DivideMix needs two models"))?;
        mixture_posteriors(mb, &x_all, &y_all)?
    };
    let thr = cfg.hyper.gmm_clean_threshold;
    let clean_a: Vec<usize> = (0..w_a.len())
        .filter(|&p| w_a[p] >= thr)
        .map(|p| data.train[p])
        .collect();
    for (pos, &i) in data.train.iter().enumerate() {
        state.clean_prob[i] = w_a[pos];
    }

    let (ma, oa, mb, ob) = dual(state)?;
    // co-divide: each network trains on the partition its peer produced
    let (loss_a, rows_a, collapsed_a) = dividemix_train(ma, oa, mb, &w_b, data, cfg, epoch, bs, rng)?;
    let (_, _, collapsed_b) = dividemix_train(mb, ob, ma, &w_a, data, cfg, epoch, bs, rng)?;
    out.add(loss_a, rows_a);
    out.collapsed = collapsed_a || collapsed_b;
    out.selection = Some(SelectionRecord::new(epoch, clean_a, Vec::new(), data));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn dividemix_train(
    net: &mut MlpModel,
    opt: &mut OptimState,
    peer: &MlpModel,
    w: &[f64],
    data: &TrainData,
    cfg: &MethodConfig,
    epoch: usize,
    bs: usize,
    rng: &mut RngState,
) -> Result<(f64, usize, bool)> {
    let h = &cfg.hyper;
    let k = data.k;
    let labeled: Vec<usize> = (0..w.len()).filter(|&p| w[p] >= h.gmm_clean_threshold).collect();
    let unlabeled: Vec<usize> = (0..w.len()).filter(|&p| w[p] < h.gmm_clean_threshold).collect();
    if labeled.is_empty() {
        let mut loss_sum = 0.0;
        for batch in shuffled_batches(&data.train, bs, rng) {
            let l = hard_step(
                net,
                opt,
                data.rows(&batch),
                data.observed_at(&batch),
                LossKind::CrossEntropy,
            )?;
            loss_sum += l * batch.len() as f64;
        }
        return Ok((loss_sum / data.train.len() as f64, data.train.len(), true));
    }
    let ramp = ((epoch as f64 - cfg.warm_up_epochs as f64) / h.lambda_u_ramp_epochs).clamp(0.0, 1.0);
    let lambda_u = h.lambda_u * ramp;
    let mut unl_order = unlabeled.clone();
    unl_order.shuffle(rng);
    let mut cursor = 0;
    let (mut loss_sum, mut rows) = (0.0, 0);
    for lb in shuffled_batches(&labeled, bs, rng) {
        let ids: Vec<usize> = lb.iter().map(|&p| data.train[p]).collect();
        let xl = data.rows(&ids);
        let yl = data.observed_at(&ids);
        let wl: Vec<f64> = lb.iter().map(|&p| w[p]).collect();
        let xl1 = jitter(&xl, data, h.jitter_scale, rng);
        let xl2 = jitter(&xl, data, h.jitter_scale, rng);
        let px = (net.predict_proba(xl1.view())? + net.predict_proba(xl2.view())?) * 0.5;
        let mut refined = one_hot(&yl, k);
        for (mut row, (&wi, prow)) in refined.rows_mut().into_iter().zip(wl.iter().zip(px.rows())) {
            row.zip_mut_with(&prow, |t, &p| *t = wi * *t + (1.0 - wi) * p);
        }
        let tl = sharpen(refined.view(), h.sharpen_temperature)?;

        let ub: Vec<usize> = if unl_order.is_empty() {
            Vec::new()
        } else {
            (0..bs.min(unl_order.len()))
                .map(|_| {
                    let p = unl_order[cursor % unl_order.len()];
                    cursor += 1;
                    data.train[p]
                })
                .collect()
        };
        let (all_x, all_t) = if ub.is_empty() {
            (xl1, tl)
        } else {
            let xu = data.rows(&ub);
            let xu1 = jitter(&xu, data, h.jitter_scale, rng);
            let xu2 = jitter(&xu, data, h.jitter_scale, rng);
            let pu = (net.predict_proba(xu1.view())?
                + net.predict_proba(xu2.view())?
                + peer.predict_proba(xu1.view())?
                + peer.predict_proba(xu2.view())?)
                * 0.25;
            let tu = sharpen(pu.view(), h.sharpen_temperature)?;
            (
                concatenate(Axis(0), &[xl1.view(), xu1.view()]).expect("same width"),
                concatenate(Axis(0), &[tl.view(), tu.view()]).expect("same width"),
            )
        };
        let mut perm: Vec<usize> = (0..all_x.nrows()).collect();
        perm.shuffle(rng);
        let (mx, mt, _) = super::primitives::mixup(
            all_x.view(),
            all_t.view(),
            all_x.select(Axis(0), &perm).view(),
            all_t.select(Axis(0), &perm).view(),
            rng,
            h.mixup_alpha,
        )?;
        let nl = ids.len();
        let mut parts = vec![Part {
            x: mx.slice(ndarray::s![..nl, ..]).to_owned(),
            targets: Supervision::Soft(mt.slice(ndarray::s![..nl, ..]).to_owned()),
            kind: clean_set_kind(cfg),
            weight: 1.0,
        }];
        if mx.nrows() > nl && lambda_u > 0.0 {
            parts.push(Part {
                x: mx.slice(ndarray::s![nl.., ..]).to_owned(),
                targets: Supervision::Soft(mt.slice(ndarray::s![nl.., ..]).to_owned()),
                kind: LossKind::Custom {
                    terms: LossTerms {
                        sq_err: 1.0,
                        ..LossTerms::default()
                    },
                    row_weights: None,
                    peer: None,
                },
                weight: lambda_u,
            });
        }
        let loss = combined_step(net, opt, &parts)?;
        loss_sum += loss * nl as f64;
        rows += nl;
    }
    Ok((loss_sum / rows.max(1) as f64, rows, false))
}

fn disc_epoch(
    state: &mut TrainState,
    data: &TrainData,
    cfg: &MethodConfig,
    rng: &mut RngState,
) -> Result<EpochOutcome> {
    let h = &cfg.hyper;
    let epoch = state.epoch;
    let bs = state.settings.batch_size;
    let x_all = data.rows(&data.train);
    let y_all = data.observed_at(&data.train);
    let v1 = jitter(&x_all, data, h.jitter_scale, rng);
    let v2 = jitter(&x_all, data, h.jitter_scale, rng);
    let p1 = state.model_a.predict_proba(v1.view())?;
    let p2 = state.model_a.predict_proba(v2.view())?;
    let n = state.loss_history.len();
    let first = state.confidence.is_none();
    let conf = state.confidence.get_or_insert_with(|| vec![0.0; n]);
    for (pos, &i) in data.train.iter().enumerate() {
        let y = y_all[pos];
        let m = 0.5 * (p1[[pos, y]] + p2[[pos, y]]);
        conf[i] = if first {
            m
        } else {
            h.disc_momentum * conf[i] + (1.0 - h.disc_momentum) * m
        };
    }

    if epoch < cfg.warm_up_epochs {
        return single_loss_epoch(state, data, rng, warm_up_kind(cfg));
    }

    let conf = state.confidence.as_ref().expect("initialized above");
    let per_class: Option<Vec<f64>> = if cfg.medssl.class_thresholds {
        let hist = class_histogram(&y_all, data.k)?;
        if hist.counts.contains(&0) {
            // a class absent from the observed labels cannot be thresholded by frequency
            None
        } else {
            Some(class_thresholds(
                &hist,
                h.lambda_head,
                h.lambda_tail,
                h.threshold_epsilon,
            )?)
        }
    } else {
        None
    };
    let global = data.train.iter().map(|&i| conf[i]).sum::<f64>() / data.train.len() as f64;
    let threshold = |class: usize| per_class.as_ref().map_or(global, |t| t[class]);

    let agree_1 = argmax_rows(&p1);
    let agree_2 = argmax_rows(&p2);
    let mut clean = Vec::new();
    let mut purified = Vec::new();
    // role per training position: 0 clean, 1 purified, 2 hard
    let mut role = vec![2u8; data.train.len()];
    let mut assigned = y_all.clone();
    for (pos, &i) in data.train.iter().enumerate() {
        if conf[i] >= threshold(y_all[pos]) {
            clean.push(i);
            role[pos] = 0;
        } else if agree_1[pos] == agree_2[pos] {
            let a = agree_1[pos];
            if 0.5 * (p1[[pos, a]] + p2[[pos, a]]) >= threshold(a) {
                purified.push((i, a));
                role[pos] = 1;
                assigned[pos] = a;
            }
        }
    }

    let mut out = EpochOutcome::default();
    if clean.is_empty() {
        let mut fallback = single_loss_epoch(state, data, rng, LossKind::CrossEntropy)?;
        fallback.collapsed = true;
        fallback.selection = Some(SelectionRecord::new(epoch, clean, purified, data));
        return Ok(fallback);
    }
    let position: std::collections::HashMap<usize, usize> =
        data.train.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    for batch in shuffled_batches(&data.train, bs, rng) {
        let xb = jitter(&data.rows(&batch), data, h.jitter_scale, rng);
        let b = batch.len() as f64;
        let mut groups: [Vec<usize>; 3] = Default::default();
        for (r, i) in batch.iter().enumerate() {
            groups[role[position[i]] as usize].push(r);
        }
        let labels = |rows: &[usize]| -> Vec<usize> { rows.iter().map(|&r| assigned[position[&batch[r]]]).collect() };
        let kinds = [
            clean_set_kind(cfg),
            LossKind::CrossEntropy,
            LossKind::Smoothed {
                epsilon: h.disc_hard_epsilon,
            },
        ];
        let parts: Vec<Part> = groups
            .iter()
            .zip(kinds)
            .filter(|(g, _)| !g.is_empty())
            .map(|(g, kind)| Part {
                x: xb.select(Axis(0), g),
                targets: Supervision::Hard(labels(g)),
                kind,
                weight: g.len() as f64 / b,
            })
            .collect();
        let loss = combined_step(&mut state.model_a, &mut state.opt_a, &parts)?;
        out.add(loss, batch.len());
    }
    out.selection = Some(SelectionRecord::new(epoch, clean, purified, data));
    Ok(out)
}
