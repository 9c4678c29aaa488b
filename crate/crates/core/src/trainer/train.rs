use thiserror::Error;

use super::env::{EnvError, EnvStep, Environment};
use super::policy::{td_target, GreedyPolicy, Policy};
use super::replay::{ReplayBuffer, SampledSequence, StoredEpisode};
use super::TrainConfig;
use crate::eval::{evaluate, EvalReport};
use crate::qnet::optim::{OptimizerConfig, RmsProp};
use crate::qnet::{DropoutMask, NetworkShape, QNetError, QNetwork, TrainingSequence};
use crate::rng::{derive_seed, stream_rng, StreamRng};
use crate::scalar::Scalar;
use crate::sim::Status;

/// Hard cap on episode length; every shipped environment terminates far sooner.
const MAX_EPISODE_STEPS: usize = 100_000;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("network dimensions do not fit the environment: {0}")]
    Shape(String),
    #[error("training diverged at episode {episode}, update {update}: {reason}")]
    Diverged { episode: usize, update: u64, reason: String },
    #[error(transparent)]
    Net(#[from] QNetError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub valid: Vec<bool>,
    pub status: Status,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// What a step hook sees: the environment after the step, the chosen action,
/// the step result and the policy's Q-values.
pub struct StepView<'a, E> {
    pub env: &'a E,
    pub action: usize,
    pub step: &'a EnvStep,
    pub q_values: Option<&'a [f64]>,
}

/// Play one episode from `seed` until a terminal status.
pub fn run_episode<E: Environment, P: Policy>(
    env: &mut E,
    policy: &mut P,
    seed: u64,
    mut hook: Option<&mut dyn FnMut(StepView<'_, E>)>,
) -> Result<EpisodeRecord, EnvError> {
    policy.reset();
    let mut obs = env.reset(seed)?;
    let mut rec = EpisodeRecord {
        seed,
        observations: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        valid: Vec::new(),
        status: Status::Running,
    };
    for _ in 0..MAX_EPISODE_STEPS {
        let action = policy.act(&obs);
        let step = env.step(action)?;
        if let Some(h) = hook.as_deref_mut() {
            h(StepView { env, action, step: &step, q_values: policy.last_q() });
        }
        rec.observations.push(std::mem::replace(&mut obs, step.input.clone()));
        rec.actions.push(action);
        rec.rewards.push(step.reward);
        rec.valid.push(step.valid);
        if step.terminal() {
            rec.status = step.status;
            break;
        }
    }
    rec.observations.push(obs);
    Ok(rec)
}

/// `Σ_t γ^t r_t`, accumulated backwards.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub seed: u64,
    pub steps: usize,
    pub status: Status,
    pub total_reward: f64,
    pub discounted_return: f64,
    pub epsilon: f64,
}

/// One row of the training log, written at every evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    /// Training episodes completed.
    pub episode: usize,
    pub report: EvalReport,
    pub epsilon: f64,
    /// Mean loss over the updates since the previous evaluation point.
    pub loss_moving_avg: f64,
}

pub enum TrainEvent<'a, T: Scalar> {
    Episode(&'a EpisodeSummary),
    Eval { row: &'a EvalRow, network: &'a QNetwork<T> },
    /// Emitted once, with the last finite parameters, before a divergence abort.
    Diverged { episode: usize, network: &'a QNetwork<T> },
}

pub struct TrainOutput<T> {
    pub network: QNetwork<T>,
    pub log: Vec<EvalRow>,
    pub updates: u64,
}

/// Everything `train` needs besides the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSetup {
    pub trainer: TrainConfig,
    pub optimizer: OptimizerConfig,
    pub shape: NetworkShape,
    pub dropout_keep: f64,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

struct Learner<T: Scalar> {
    online: QNetwork<T>,
    target: Option<QNetwork<T>>,
    opt: RmsProp<T>,
    grad: Vec<T>,
    updates: u64,
    sample_rng: StreamRng,
    dropout_rng: StreamRng,
}

impl<T: Scalar> Learner<T> {
    /// One gradient step on `batch`; returns the batch loss.
    fn update<'e>(
        &mut self,
        batch: &[SampledSequence],
        episode_of: &dyn Fn(usize) -> &'e StoredEpisode,
        cfg: &TrainConfig,
        dropout_keep: f64,
    ) -> Result<f64, String> {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
        let scale = T::lit(1.0 / batch.len() as f64);
        let gamma = T::lit(cfg.gamma);
        let shape = *self.online.shape();
        let mut loss = 0.0;
        let target_net = self.target.as_ref().unwrap_or(&self.online);
        for seq in batch {
            let ep = episode_of(seq.slot);
            let to_t = |o: &Vec<f64>| o.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
            let inputs: Vec<Vec<T>> = ep.observations[seq.start..=seq.end].iter().map(to_t).collect();
            let next: Vec<Vec<T>> = ep.observations[seq.start + 1..=seq.end + 1].iter().map(to_t).collect();

            let mut state = target_net.initial_state();
            let mut targets = Vec::with_capacity(seq.len() - seq.burn_in);
            for (k, x) in next.iter().enumerate() {
                let (q, s) = target_net.forward(x, &state, None).map_err(|e| e.to_string())?;
                state = s;
                if k >= seq.burn_in {
                    let t = seq.start + k;
                    targets.push(td_target(T::lit(ep.rewards[t]), &q, ep.is_terminal_step(t), gamma));
                }
            }
            let masks = cfg.use_dropout.then(|| {
                let m = DropoutMask::sample(&shape, dropout_keep, &mut self.dropout_rng);
                vec![m; seq.len()]
            });
            let training = TrainingSequence {
                inputs: &inputs,
                actions: &ep.actions[seq.start..=seq.end],
                targets: &targets,
                burn_in: seq.burn_in,
            };
            let l = self
                .online
                .accumulate_gradients(&training, &self.online.initial_state(), masks.as_deref(), &mut self.grad, scale)
                .map_err(|e| e.to_string())?;
            loss += l.to_f64().unwrap_or(f64::NAN) / batch.len() as f64;
        }
        if !loss.is_finite() {
            return Err(format!("non-finite loss {loss}"));
        }
        let layout = self.online.layout().clone();
        self.opt.apply(&layout, self.online.params_mut(), &mut self.grad).map_err(|e| e.to_string())?;
        if self.online.params().iter().any(|p| !p.is_finite()) {
            return Err("non-finite parameters after update".into());
        }
        self.updates += 1;
        if let Some(t) = self.target.as_mut() {
            if self.updates % cfg.target_sync_interval as u64 == 0 {
                t.params_mut().copy_from_slice(self.online.params());
            }
        }
        Ok(loss)
    }
}

/// Train a Q-network on `env`. The observer sees every finished episode and
/// every evaluation point (when checkpoints and logs are written).
pub fn train<T: Scalar, E: Environment>(
    env: &mut E,
    setup: &TrainSetup,
    observer: &mut dyn FnMut(TrainEvent<'_, T>),
) -> Result<TrainOutput<T>, TrainError> {
    let cfg = &setup.trainer;
    cfg.validate().map_err(|(k, m)| TrainError::Shape(format!("trainer.{k}: {m}")))?;
    let (slots, features, actions) = env.dims();
    let s = setup.shape;
    if (s.n_slots, s.vehicle_features, s.n_actions) != (slots, features, actions) {
        return Err(TrainError::Shape(format!(
            "network expects ({}, {}, {}), environment provides ({slots}, {features}, {actions})",
            s.n_slots, s.vehicle_features, s.n_actions
        )));
    }
    let root = setup.seed;
    let online = QNetwork::<T>::new(s, &mut stream_rng(root, "init"));
    let n_params = online.params().len();
    let mut learner = Learner {
        target: cfg.use_target_network.then(|| online.clone()),
        online,
        opt: RmsProp::new(setup.optimizer.clone(), n_params),
        grad: vec![T::zero(); n_params],
        updates: 0,
        sample_rng: stream_rng(root, "replay"),
        dropout_rng: stream_rng(root, "dropout"),
    };
    let mut explore_rng = stream_rng(root, "explore");
    let eval_seed = derive_seed(root, "eval", 0);
    let (seq_len, burn_in) = cfg.effective_sequence();
    let schedule = cfg.epsilon_schedule();
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut log = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);

    for episode in 0..cfg.episodes {
        let epsilon = schedule.value(episode);
        let seed = derive_seed(root, "train-episode", episode as u64);
        let rec = {
            let mut policy = GreedyPolicy::exploring(&learner.online, epsilon, &mut explore_rng);
            run_episode(env, &mut policy, seed, None)?
        };
        let summary = EpisodeSummary {
            episode,
            seed,
            steps: rec.len(),
            status: rec.status,
            total_reward: rec.rewards.iter().sum(),
            discounted_return: discounted_return(&rec.rewards, cfg.gamma),
            epsilon,
        };
        observer(TrainEvent::Episode(&summary));
        let stored = StoredEpisode {
            id: episode as u64,
            terminal: rec.status.is_terminal(),
            observations: rec.observations,
            actions: rec.actions,
            rewards: rec.rewards,
        };

        let mut diverged = None;
        if cfg.use_replay {
            buffer.push(stored);
            if buffer.len() >= cfg.warmup_transitions.max(1) {
                for _ in 0..cfg.updates_per_episode {
                    let batch = buffer
                        .sample_sequences(cfg.batch_size, seq_len, burn_in, &mut learner.sample_rng)
                        .expect("buffer is non-empty");
                    let episodes = buffer.episodes();
                    match learner.update(&batch, &|slot| &episodes[slot], cfg, setup.dropout_keep) {
                        Ok(l) => {
                            loss_sum += l;
                            loss_count += 1;
                        }
                        Err(reason) => {
                            diverged = Some(reason);
                            break;
                        }
                    }
                }
            }
        } else {
            // Most recent episode only, swept in order.
            let windows: Vec<SampledSequence> = (0..stored.len())
                .map(|end| SampledSequence::ending_at(0, stored.id, end, seq_len, burn_in))
                .collect();
            for batch in windows.chunks(cfg.batch_size) {
                match learner.update(batch, &|_| &stored, cfg, setup.dropout_keep) {
                    Ok(l) => {
                        loss_sum += l;
                        loss_count += 1;
                    }
                    Err(reason) => {
                        diverged = Some(reason);
                        break;
                    }
                }
            }
        }
        if let Some(reason) = diverged {
            observer(TrainEvent::Diverged { episode, network: &learner.online });
            return Err(TrainError::Diverged { episode, update: learner.updates, reason });
        }

        let done = episode + 1;
        if setup.eval_episodes > 0 && done % setup.eval_interval.max(1) == 0 {
            let report = evaluate(&learner.online, env, setup.eval_episodes, eval_seed)?;
            let row = EvalRow {
                episode: done,
                report,
                epsilon,
                loss_moving_avg: if loss_count == 0 { 0.0 } else { loss_sum / loss_count as f64 },
            };
            (loss_sum, loss_count) = (0.0, 0);
            observer(TrainEvent::Eval { row: &row, network: &learner.online });
            log.push(row);
        }
    }
    Ok(TrainOutput { network: learner.online, log, updates: learner.updates })
}
