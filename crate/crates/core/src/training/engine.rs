use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{params_hash, Checkpoint, CheckpointMeta, HeadMeta};
use super::config::{Seeds, TrainConfig};
use super::data::PreparedData;
use super::metrics::{EpochRecord, FormEval, ImportanceRecord, RunMetrics};
use super::optim::OptimizerState;
use crate::acfl::{
    attention, head_loss, update_beta, AcflConfig, AcflMode, Channel, HeadVars, MimicHead,
};
use crate::error::{Error, Result};
use crate::gcn::{
    batch_input, classification_loss, classify, forward, infer_batch, running_stats,
    update_running_stats, AdjacencyMatrix, BackboneConfig, Mode, ModelParams, ParamVars,
};
use crate::numerics::{Tape, Tensor};
use crate::skeleton::{Dataset, Form, SkeletonTopology, Standardizer};

const EVAL_CHUNK: usize = 64;

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub checkpoints: BTreeMap<Form, Checkpoint>,
    pub metrics: RunMetrics,
    pub importance: Vec<ImportanceRecord>,
    /// Off-line runs: source parameter hash, identical before and after.
    pub source_hashes: BTreeMap<Form, String>,
    /// Final categorical maps on the test split, `[n, N]` per form.
    pub test_maps: BTreeMap<Form, Tensor>,
}

/// Evaluation of one checkpoint on one dataset.
#[derive(Clone, Debug)]
pub struct EvalResult {
    pub eval: FormEval,
    pub predictions: Vec<usize>,
    /// `[n, d]`.
    pub features: Tensor,
    /// `[n, N]`.
    pub maps: Tensor,
}

/// Per-form `(f, k)` rows for a set of samples.
#[derive(Clone, Debug)]
struct Reps {
    feature: Tensor,
    catmap: Tensor,
}

impl Reps {
    fn get(&self, ch: Channel) -> &Tensor {
        match ch {
            Channel::Feature => &self.feature,
            Channel::CategoricalMap => &self.catmap,
        }
    }
}

enum Sources {
    None,
    /// Frozen representations indexed by sample.
    Fixed {
        train: BTreeMap<Form, Reps>,
        test: BTreeMap<Form, Reps>,
    },
    /// Detached peers from the current batch.
    Peers,
}

struct Model {
    form: Form,
    cfg: BackboneConfig,
    params: ModelParams,
    heads: Vec<MimicHead>,
    opt: OptimizerState,
    adj: AdjacencyMatrix,
    standardizer: Standardizer,
}

fn head_name(ch: Channel, part: &str) -> String {
    format!("head.{}.{part}", ch.name())
}

impl Model {
    fn new(
        form: Form,
        cfg: &TrainConfig,
        data: &PreparedData,
        seeds: &Seeds,
        acfl: Option<&AcflConfig>,
    ) -> Result<Self> {
        let bcfg = cfg.backbone.with_form(form);
        let mut rng = ChaCha8Rng::seed_from_u64(seeds.init_for(form));
        let params = ModelParams::init(&bcfg, &mut rng)?;
        let mut heads = Vec::new();
        if let Some(a) = acfl {
            for (ci, ch) in Channel::ALL.into_iter().enumerate() {
                if !a.has_channel(ch) {
                    continue;
                }
                let d_r = match ch {
                    Channel::Feature => bcfg.feature_dim(),
                    Channel::CategoricalMap => bcfg.class_count,
                };
                let seed = seeds
                    .heads
                    .wrapping_add(form.index() as u64 * 31 + ci as u64);
                let mut hr = ChaCha8Rng::seed_from_u64(seed);
                let mut h = MimicHead::init(ch, d_r, Form::ALL.len(), &mut hr);
                h.beta_enabled = a.beta_enabled;
                heads.push(h);
            }
        }
        let mut shapes: Vec<(String, Vec<usize>)> = params
            .iter()
            .filter(|(n, _)| !ModelParams::is_buffer(n))
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        for h in &heads {
            for (p, t) in h.projections() {
                shapes.push((head_name(h.channel, p), t.shape().to_vec()));
            }
        }
        let opt = OptimizerState::new(
            shapes.iter().map(|(n, s)| (n.as_str(), s.as_slice())),
            cfg.lr,
            cfg.momentum,
            cfg.weight_decay,
        );
        Ok(Self {
            form,
            adj: AdjacencyMatrix::from_topology(&cfg.topology),
            cfg: bcfg,
            params,
            heads,
            opt,
            standardizer: data.form(form).standardizer.clone(),
        })
    }

    fn round_to_f32(&mut self) {
        self.params.round_to_f32();
        for h in &mut self.heads {
            h.w_q.round_to_f32();
            h.w_k.round_to_f32();
            h.w_v.round_to_f32();
            h.beta.round_to_f32();
        }
        self.opt.round_to_f32();
    }

    fn checkpoint(&self, epoch: usize, seed: u64, topology: &SkeletonTopology) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                form: self.form,
                backbone: self.cfg.clone(),
                topology: topology.clone(),
                standardizer: self.standardizer.clone(),
                epoch,
                seed,
                optimizer: Some(self.opt.settings()),
                heads: self
                    .heads
                    .iter()
                    .map(|h| HeadMeta {
                        channel: h.channel,
                        beta_enabled: h.beta_enabled,
                        beta_updates: h.beta_updates,
                    })
                    .collect(),
            },
            params: self.params.clone(),
            heads: self.heads.clone(),
            optimizer: Some(self.opt.clone()),
        }
    }
}

/// Eval-mode `(f, k)` for every sample, in chunks.
fn infer_all_with(
    params: &ModelParams,
    cfg: &BackboneConfig,
    adj: &AdjacencyMatrix,
    ds: &Dataset,
) -> Result<Reps> {
    let mut f = Vec::new();
    let mut k = Vec::new();
    for chunk in ds.samples.chunks(EVAL_CHUNK) {
        let xs: Vec<&Tensor> = chunk.iter().map(|s| &s.data).collect();
        let (fc, kc) = infer_batch(&xs, params, cfg, adj)?;
        f.extend_from_slice(fc.data());
        k.extend_from_slice(kc.data());
    }
    let n = ds.samples.len();
    Ok(Reps {
        feature: Tensor::new(&[n, cfg.feature_dim()], f)?,
        catmap: Tensor::new(&[n, cfg.class_count], k)?,
    })
}

fn predictions(maps: &Tensor) -> Vec<usize> {
    let (n, _) = maps.dims2().expect("rank 2");
    (0..n).map(|i| classify(maps.row(i))).collect()
}

/// Check a checkpoint against a dataset it is about to consume.
fn check_compat(ck: &Checkpoint, ds: &Dataset) -> Result<()> {
    if ds.form() != ck.form() {
        return Err(Error::Config(format!(
            "dataset is in {} form, checkpoint is {}",
            ds.form(),
            ck.form()
        )));
    }
    let cfg = ck.meta.backbone.with_form(ck.form());
    let [_, _, v, c] = ds.dims();
    if v != cfg.points || c != cfg.in_channels() || ds.class_count != cfg.class_count {
        return Err(Error::Config(format!(
            "checkpoint expects {} points × {} channels, {} classes; dataset has {v} × {c}, {}",
            cfg.points,
            cfg.in_channels(),
            cfg.class_count,
            ds.class_count
        )));
    }
    ck.params.check(&cfg)
}

/// Accuracy of a checkpoint on an unstandardized dataset in its form, using
/// the checkpoint's own input statistics and running normalization.
pub fn evaluate(ck: &Checkpoint, ds: &Dataset) -> Result<EvalResult> {
    check_compat(ck, ds)?;
    let st = ck.meta.standardizer.apply(ds)?;
    let cfg = ck.meta.backbone.with_form(ck.form());
    let adj = AdjacencyMatrix::from_topology(&ck.meta.topology);
    let reps = infer_all_with(&ck.params, &cfg, &adj, &st)?;
    finish_eval(ck.form(), reps, ds)
}

fn finish_eval(form: Form, reps: Reps, ds: &Dataset) -> Result<EvalResult> {
    let preds = predictions(&reps.catmap);
    let eval = FormEval::from_predictions(form, &preds, &ds.labels(), ds.class_count)?;
    Ok(EvalResult {
        eval,
        predictions: preds,
        features: reps.feature,
        maps: reps.catmap,
    })
}

/// A freshly initialized, untrained model for `form`.
pub fn init_checkpoint(
    backbone: &BackboneConfig,
    topology: &SkeletonTopology,
    form: Form,
    standardizer: Standardizer,
    seed: u64,
) -> Result<Checkpoint> {
    let cfg = backbone.with_form(form);
    let mut rng = ChaCha8Rng::seed_from_u64(Seeds::derive(seed).init_for(form));
    let mut params = ModelParams::init(&cfg, &mut rng)?;
    params.round_to_f32();
    Ok(Checkpoint {
        meta: CheckpointMeta {
            form,
            backbone: cfg,
            topology: topology.clone(),
            standardizer,
            epoch: 0,
            seed,
            optimizer: None,
            heads: Vec::new(),
        },
        params,
        heads: Vec::new(),
        optimizer: None,
    })
}

/// Single-form baseline trained with the classification loss only.
pub fn train_sfrl(cfg: &TrainConfig, form: Form) -> Result<RunOutput> {
    let data = PreparedData::load(&cfg.dataset, &cfg.topology)?;
    train_sfrl_on(cfg, &data, &[form])
}

/// Independent baselines for several forms in one run directory. Each model
/// sees the same batches in the same order.
pub fn train_sfrl_on(cfg: &TrainConfig, data: &PreparedData, forms: &[Form]) -> Result<RunOutput> {
    if cfg.acfl.is_some() {
        return Err(Error::Config("single-form training needs `acfl` to be absent".into()));
    }
    if forms.is_empty() {
        return Err(Error::Config("no forms to train".into()));
    }
    Trainer::new(cfg, data)?.run(forms, Sources::None, None)
}

/// Targets mimic frozen, pretrained single-form sources.
pub fn train_acfl_offline(
    cfg: &TrainConfig,
    sources: &BTreeMap<Form, Checkpoint>,
) -> Result<RunOutput> {
    let data = PreparedData::load(&cfg.dataset, &cfg.topology)?;
    train_acfl_offline_on(cfg, &data, sources)
}

pub fn train_acfl_offline_on(
    cfg: &TrainConfig,
    data: &PreparedData,
    sources: &BTreeMap<Form, Checkpoint>,
) -> Result<RunOutput> {
    let acfl = acfl_config(cfg, AcflMode::Offline)?;
    let trainer = Trainer::new(cfg, data)?;
    let mut hashes = BTreeMap::new();
    let mut train_reps = BTreeMap::new();
    let mut test_reps = BTreeMap::new();
    let mut beta = vec![0.0; Form::ALL.len()];
    for form in acfl.source_forms() {
        let ck = sources.get(&form).ok_or_else(|| {
            Error::Config(format!("missing source checkpoint for form `{form}`"))
        })?;
        let (tr, te) = data.restandardize(form, &ck.meta.standardizer)?;
        check_compat(ck, &tr)?;
        let bcfg = ck.meta.backbone.with_form(form);
        hashes.insert(form, params_hash(&ck.params));
        let adj = AdjacencyMatrix::from_topology(&cfg.topology);
        train_reps.insert(form, infer_all_with(&ck.params, &bcfg, &adj, &tr)?);
        let te_reps = infer_all_with(&ck.params, &bcfg, &adj, &te)?;
        let eval =
            FormEval::from_predictions(form, &predictions(&te_reps.catmap), &te.labels(), te.class_count)?;
        beta[form.index()] = eval.accuracy;
        test_reps.insert(form, te_reps);
    }
    let targets = acfl.targets.clone();
    let mut out = trainer.run(
        &targets,
        Sources::Fixed {
            train: train_reps,
            test: test_reps,
        },
        Some((acfl, beta)),
    )?;
    for (form, before) in &hashes {
        let after = params_hash(&sources[form].params);
        if &after != before {
            return Err(Error::Contract(format!("source `{form}` changed during training")));
        }
    }
    out.source_hashes = hashes;
    Ok(out)
}

/// Every form is a target; sources are the detached current peers.
pub fn train_acfl_online(cfg: &TrainConfig) -> Result<RunOutput> {
    let data = PreparedData::load(&cfg.dataset, &cfg.topology)?;
    train_acfl_online_on(cfg, &data)
}

pub fn train_acfl_online_on(cfg: &TrainConfig, data: &PreparedData) -> Result<RunOutput> {
    let acfl = acfl_config(cfg, AcflMode::Online)?;
    let beta = vec![1.0; Form::ALL.len()];
    Trainer::new(cfg, data)?.run(&Form::ALL, Sources::Peers, Some((acfl, beta)))
}

fn acfl_config(cfg: &TrainConfig, mode: AcflMode) -> Result<AcflConfig> {
    match &cfg.acfl {
        Some(a) if a.mode == mode => Ok(a.clone()),
        Some(a) => Err(Error::Config(format!("acfl mode is {:?}, expected {mode:?}", a.mode))),
        None => Err(Error::Config("cross-form training needs an `acfl` section".into())),
    }
}

/// Run `job` for every seed, in parallel when the `parallel` feature is on.
pub fn map_seeds<T, F>(seeds: &[u64], job: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.par_iter().map(|&s| job(s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(|&s| job(s)).collect()
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    data: &'a PreparedData,
    seeds: Seeds,
}

/// Loss and accuracy sums over one epoch for one model.
#[derive(Default)]
struct Tally {
    ce: f64,
    ld: [f64; 2],
    correct: usize,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a TrainConfig, data: &'a PreparedData) -> Result<Self> {
        cfg.validate()?;
        data.check_backbone(&cfg.backbone)?;
        Ok(Self {
            cfg,
            data,
            seeds: cfg.seeds(),
        })
    }

    fn run(
        &self,
        forms: &[Form],
        sources: Sources,
        acfl: Option<(AcflConfig, Vec<f64>)>,
    ) -> Result<RunOutput> {
        let started = Instant::now();
        let cfg = self.cfg;
        let acfl_cfg = acfl.as_ref().map(|(a, _)| a);
        let mut models = forms
            .iter()
            .map(|&f| Model::new(f, cfg, self.data, &self.seeds, acfl_cfg))
            .collect::<Result<Vec<_>>>()?;
        if let Some((a, beta)) = &acfl {
            if a.mode == AcflMode::Offline {
                for m in &mut models {
                    for h in &mut m.heads {
                        update_beta(h, beta, AcflMode::Offline)?;
                    }
                }
            }
        }
        let mask: Option<Vec<bool>> = acfl_cfg
            .map(|a| a.source_mask.clone())
            .filter(|m| m.iter().any(|&k| !k));
        let routing = acfl_cfg.map(|a| a.routing).unwrap_or_default();
        let weight = acfl_cfg.map_or(1.0, |a| a.mimic_weight);

        let train_labels = self.data.train_labels();
        let test_labels = self.data.test_labels();
        let n = train_labels.len();
        let persons = self.data.joint_dims()[0];
        let mut shuffle = ChaCha8Rng::seed_from_u64(self.seeds.shuffle);
        let mut order: Vec<usize> = (0..n).collect();

        let mut epochs = Vec::with_capacity(cfg.epochs);
        let mut importance = Vec::new();
        let mut last_eval: Vec<(Reps, FormEval)> = Vec::new();

        for epoch in 1..=cfg.epochs {
            let lr = cfg.lr_at(epoch);
            for m in &mut models {
                m.opt.lr = lr;
            }
            order.shuffle(&mut shuffle);
            let mut tallies: Vec<Tally> = models.iter().map(|_| Tally::default()).collect();
            let mut total = 0.0;

            for batch in order.chunks(cfg.batch_size) {
                let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
                let b = batch.len() as f64;
                let tapes: Vec<Tape> = models.iter().map(|_| Tape::new()).collect();
                let mut fwd = Vec::with_capacity(models.len());
                for (m, tape) in models.iter().zip(&tapes) {
                    let split = &self.data.form(m.form).train;
                    let xs: Vec<&Tensor> = batch.iter().map(|&i| &split.samples[i].data).collect();
                    let input = tape.constant(batch_input(&xs)?);
                    let vars = ParamVars::register(&m.params, tape, true);
                    let out = forward(
                        input,
                        persons,
                        &vars,
                        running_stats(&m.params)?,
                        &m.cfg,
                        &m.adj,
                        Mode::Train,
                    )?;
                    fwd.push((vars, out));
                }
                let peers: BTreeMap<Form, Reps> = match sources {
                    Sources::Peers => models
                        .iter()
                        .zip(&fwd)
                        .map(|(m, (_, o))| {
                            (
                                m.form,
                                Reps {
                                    feature: o.feature.value().as_ref().clone(),
                                    catmap: o.k.value().as_ref().clone(),
                                },
                            )
                        })
                        .collect(),
                    _ => BTreeMap::new(),
                };

                let mut updates = Vec::with_capacity(models.len());
                let mut batch_total = 0.0;
                for (mi, ((m, tape), (vars, out))) in models.iter().zip(&tapes).zip(&fwd).enumerate() {
                    let ce = classification_loss(out, &labels, &m.cfg)?;
                    let mut loss = ce;
                    let mut ld = [0.0; 2];
                    let head_vars: Vec<HeadVars> =
                        m.heads.iter().map(|h| h.register(tape, true)).collect();
                    for (h, hv) in m.heads.iter().zip(&head_vars) {
                        let e_t = match h.channel {
                            Channel::Feature => out.feature,
                            Channel::CategoricalMap => out.k,
                        };
                        let mut sum = None;
                        for (bi, &idx) in batch.iter().enumerate() {
                            let e_s = match &sources {
                                Sources::Peers => source_matrix(&peers, h.channel, bi)?,
                                Sources::Fixed { train, .. } => source_matrix(train, h.channel, idx)?,
                                Sources::None => unreachable!("heads imply sources"),
                            };
                            let (l, _) =
                                head_loss(hv, e_t.row(bi)?, tape.constant(e_s), mask.as_deref(), routing)?;
                            sum = Some(match sum {
                                Some(s) => l.add(&s)?,
                                None => l,
                            });
                        }
                        let mean = sum.expect("non-empty batch").scale(1.0 / b);
                        ld[channel_slot(h.channel)] = mean.item();
                        loss = loss.add(&mean.scale(weight))?;
                    }
                    let grads = tape.backward(loss)?;
                    let mut param_grads: Vec<(String, Tensor)> = vars
                        .iter()
                        .filter(|(n, _)| !ModelParams::is_buffer(n))
                        .map(|(n, v)| (n.clone(), grads.get(*v)))
                        .collect();
                    let mut head_grads: Vec<[Tensor; 3]> = head_vars
                        .iter()
                        .map(|hv| [grads.get(hv.w_q), grads.get(hv.w_k), grads.get(hv.w_v)])
                        .collect();
                    if let Some(max) = cfg.grad_clip {
                        clip_global_norm(
                            param_grads
                                .iter_mut()
                                .map(|(_, g)| g)
                                .chain(head_grads.iter_mut().flatten()),
                            max,
                        );
                    }
                    let k = out.k.value();
                    let correct = labels
                        .iter()
                        .enumerate()
                        .filter(|(i, &y)| classify(k.row(*i)) == y)
                        .count();
                    let t = &mut tallies[mi];
                    t.ce += ce.item() * b;
                    t.ld[0] += ld[0] * b;
                    t.ld[1] += ld[1] * b;
                    t.correct += correct;
                    batch_total += ce.item() + weight * (ld[0] + ld[1]);
                    updates.push((param_grads, head_grads, out.stem_stats.clone()));
                }
                total += batch_total / models.len() as f64 * b;
                drop(fwd);

                for (m, (param_grads, head_grads, stats)) in models.iter_mut().zip(updates) {
                    for (name, g) in &param_grads {
                        let p = m
                            .params
                            .get_mut(name)
                            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
                        m.opt.step(name, p, g)?;
                    }
                    for (h, [gq, gk, gv]) in m.heads.iter_mut().zip(&head_grads) {
                        let ch = h.channel;
                        m.opt.step(&head_name(ch, "w_q"), &mut h.w_q, gq)?;
                        m.opt.step(&head_name(ch, "w_k"), &mut h.w_k, gk)?;
                        m.opt.step(&head_name(ch, "w_v"), &mut h.w_v, gv)?;
                    }
                    if let Some(s) = &stats {
                        update_running_stats(&mut m.params, s);
                    }
                }
            }

            let nf = n as f64;
            let acc_train: BTreeMap<Form, f64> = models
                .iter()
                .zip(&tallies)
                .map(|(m, t)| (m.form, t.correct as f64 / nf))
                .collect();
            if let Some((a, _)) = &acfl {
                if a.mode == AcflMode::Online {
                    let acc: Vec<f64> = Form::ALL.iter().map(|f| acc_train[f]).collect();
                    for m in &mut models {
                        for h in &mut m.heads {
                            update_beta(h, &acc, AcflMode::Online)?;
                        }
                    }
                }
            }
            if epoch == cfg.epochs {
                for m in &mut models {
                    m.round_to_f32();
                }
            }

            last_eval.clear();
            for m in &models {
                let ds = &self.data.form(m.form).test;
                let reps = infer_all_with(&m.params, &m.cfg, &m.adj, ds)?;
                let eval = FormEval::from_predictions(
                    m.form,
                    &predictions(&reps.catmap),
                    &test_labels,
                    self.data.class_count,
                )?;
                last_eval.push((reps, eval));
            }
            if acfl.is_some() {
                let peer_test: BTreeMap<Form, Reps> = models
                    .iter()
                    .zip(&last_eval)
                    .map(|(m, (r, _))| (m.form, r.clone()))
                    .collect();
                let test_sources = match &sources {
                    Sources::Fixed { test, .. } => test,
                    _ => &peer_test,
                };
                for (m, (reps, _)) in models.iter().zip(&last_eval) {
                    for h in &m.heads {
                        importance.push(ImportanceRecord {
                            epoch,
                            target_form: m.form,
                            channel: h.channel,
                            a_row: mean_attention(h, reps.get(h.channel), test_sources, mask.as_deref())?,
                            beta: h.beta.data().to_vec(),
                        });
                    }
                }
            }

            let lt = models.len() as f64;
            let mean_over = |f: &dyn Fn(&Tally) -> f64| tallies.iter().map(f).sum::<f64>() / lt / nf;
            epochs.push(EpochRecord {
                epoch,
                lr,
                loss_s: mean_over(&|t| t.ce),
                loss_d_feature: mean_over(&|t| t.ld[0]),
                loss_d_catmap: mean_over(&|t| t.ld[1]),
                loss_total: total / nf,
                acc_train,
                acc_test: models
                    .iter()
                    .zip(&last_eval)
                    .map(|(m, (_, e))| (m.form, e.accuracy))
                    .collect(),
            });
        }

        let mut checkpoints = BTreeMap::new();
        let mut evaluations = BTreeMap::new();
        let mut test_maps = BTreeMap::new();
        for (m, (reps, eval)) in models.iter().zip(last_eval) {
            checkpoints.insert(m.form, m.checkpoint(cfg.epochs, cfg.seed, &cfg.topology));
            evaluations.insert(m.form, eval);
            test_maps.insert(m.form, reps.catmap);
        }
        Ok(RunOutput {
            checkpoints,
            metrics: RunMetrics {
                epochs,
                evaluations,
                wall_clock_secs: started.elapsed().as_secs_f64(),
            },
            importance,
            source_hashes: BTreeMap::new(),
            test_maps,
        })
    }
}

/// Rescale a gradient set so its joint L2 norm is at most `max`.
fn clip_global_norm<'g>(grads: impl Iterator<Item = &'g mut Tensor>, max: f64) {
    let grads: Vec<&mut Tensor> = grads.collect();
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let s = max / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
}

fn channel_slot(ch: Channel) -> usize {
    match ch {
        Channel::Feature => 0,
        Channel::CategoricalMap => 1,
    }
}

/// `[L, d_r]` source rows of sample `i`; forms without a source are zero.
fn source_matrix(reps: &BTreeMap<Form, Reps>, ch: Channel, i: usize) -> Result<Tensor> {
    let d = reps
        .values()
        .next()
        .map(|r| r.get(ch).shape()[1])
        .ok_or_else(|| Error::Config("no source representations".into()))?;
    let mut data = vec![0.0; Form::ALL.len() * d];
    for (f, r) in reps {
        data[f.index() * d..(f.index() + 1) * d].copy_from_slice(r.get(ch).row(i));
    }
    Tensor::new(&[Form::ALL.len(), d], data)
}

/// Attention row of one head averaged over every sample.
fn mean_attention(
    head: &MimicHead,
    targets: &Tensor,
    sources: &BTreeMap<Form, Reps>,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let (n, _) = targets.dims2()?;
    let tape = Tape::new();
    let w_q = tape.constant(head.w_q.clone());
    let w_k = tape.constant(head.w_k.clone());
    let mut acc = vec![0.0; Form::ALL.len()];
    for i in 0..n {
        let e_t = tape.constant(Tensor::new(&[1, targets.shape()[1]], targets.row(i).to_vec())?);
        let e_s = tape.constant(source_matrix(sources, head.channel, i)?);
        let a = attention(e_t, e_s, w_q, w_k, mask)?.value();
        for (s, x) in acc.iter_mut().zip(a.data()) {
            *s += x;
        }
    }
    Ok(acc.into_iter().map(|s| s / n as f64).collect())
}
