use super::values::{exact_state_values, NetPolicy};
use super::AnalysisError;
use crate::dvehead::dve_forward_tape;
use crate::envkit::{Action, EnvState, SceneDescriptor, StateKey};
use crate::netcore::{forward, Adam, CriticSpec, NetSpec, ParamVector, Tape, Var};
use crate::rng;
use crate::trainer::{run_episode, ActionSelection};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    /// Episodes collected under the frozen policy.
    pub episodes: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { episodes: 32, learning_rate: 1e-2, gamma: 0.99, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    /// Input snapshot with only the critic blocks changed.
    pub params: ParamVector,
    /// Critic MSE against the empirical returns, before and after.
    pub fit_mse_before: f64,
    pub fit_mse_after: f64,
    /// Prediction RMSE against exact values at the visited states.
    pub rmse_before: f64,
    pub rmse_after: f64,
}

struct Sample {
    features: Vec<f64>,
    target: f64,
    key: StateKey,
}

fn collect(
    params: &ParamVector,
    spec: &NetSpec,
    scene: &SceneDescriptor,
    cfg: &FinetuneConfig,
) -> Result<Vec<Sample>, AnalysisError> {
    let mut r = rng::stream(cfg.seed, &format!("finetune/scene{}", scene.scene_id));
    let mut out = Vec::new();
    for _ in 0..cfg.episodes {
        let traj = run_episode(params, spec, scene, ActionSelection::Sample, &mut r)?;
        let mut g = 0.0;
        let mut returns = vec![0.0; traj.len()];
        for t in (0..traj.len()).rev() {
            g = traj.rewards[t] + cfg.gamma * g;
            returns[t] = g;
        }
        let (mut env, _) = EnvState::reset(scene);
        for t in 0..traj.len() {
            let key = env.key();
            env.step(Action::from_index(traj.actions[t]))?;
            let mut tape = Tape::new();
            let rs = traj.recurrent_states[t].on_tape(&mut tape);
            let (o, _) = forward(params, spec, &traj.observations[t], rs, &mut tape)?;
            out.push(Sample { features: tape.value(o.features).to_vec(), target: returns[t], key });
        }
    }
    Ok(out)
}

fn critic_value(tape: &mut Tape, params: &ParamVector, spec: &NetSpec, features: &[f64]) -> Result<Var, AnalysisError> {
    let x = tape.leaf(features);
    let pv = &params.values;
    Ok(match spec.critic {
        CriticSpec::Baseline => tape.dense(pv, params.offset("value.w"), params.offset("value.b"), 1, x),
        CriticSpec::Dynamic { n_b } => {
            let mu = tape.dense(pv, params.offset("mu.w"), params.offset("mu.b"), n_b, x);
            let logits = tape.dense(pv, params.offset("attn.w"), params.offset("attn.b"), n_b, x);
            dve_forward_tape(tape, mu, logits)?.v_hat
        }
    })
}

fn predictions(params: &ParamVector, spec: &NetSpec, samples: &[Sample]) -> Result<Vec<f64>, AnalysisError> {
    samples
        .iter()
        .map(|s| {
            let mut tape = Tape::new();
            let v = critic_value(&mut tape, params, spec, &s.features)?;
            Ok(tape.scalar(v))
        })
        .collect()
}

fn mse(a: &[f64], b: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for (x, y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
        n += 1;
    }
    s / n as f64
}

/// Fits the critic head of a frozen snapshot to one scene.
///
/// Features are the LSTM outputs along episodes sampled from the frozen
/// policy; every other block keeps its value bit for bit.
pub fn finetune_scene_critic(
    params: &ParamVector,
    spec: &NetSpec,
    scene: &SceneDescriptor,
    n_steps: usize,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult, AnalysisError> {
    let samples = collect(params, spec, scene, cfg)?;
    let exact = exact_state_values(scene, &NetPolicy { params, spec }, cfg.gamma)?;
    let oracle: Vec<f64> = samples
        .iter()
        .map(|s| exact.value(&s.key).ok_or(AnalysisError::MissingOracle))
        .collect::<Result<_, _>>()?;
    let before = predictions(params, spec, &samples)?;
    let mut p = params.clone();
    p.zero_grads();
    let mut opt = Adam::new(p.len(), cfg.learning_rate);
    let n = samples.len() as f64;
    for _ in 0..n_steps {
        let mut tape = Tape::new();
        let mut errs = Vec::with_capacity(samples.len());
        for s in &samples {
            let v = critic_value(&mut tape, &p, spec, &s.features)?;
            let e = tape.add_const(v, -s.target);
            errs.push(tape.square(e));
        }
        let sum = tape.sum_all(&errs);
        let loss = tape.scale(sum, 1.0 / n);
        tape.backward(&[(loss, &[1.0])], &p.values, &mut p.grads)?;
        opt.step(&mut p)?;
    }
    let after = predictions(&p, spec, &samples)?;
    Ok(FinetuneResult {
        fit_mse_before: mse(&before, samples.iter().map(|s| s.target)),
        fit_mse_after: mse(&after, samples.iter().map(|s| s.target)),
        rmse_before: mse(&before, oracle.iter().copied()).sqrt(),
        rmse_after: mse(&after, oracle.iter().copied()).sqrt(),
        params: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envkit::{generate_scene, EnvConfig, Family};

    fn setup(critic: CriticSpec) -> (NetSpec, ParamVector, SceneDescriptor) {
        let cfg = EnvConfig { width: 5, height: 3, t_max: 10, obs_window: 3, ..EnvConfig::default() };
        let scene = generate_scene(1, Family::Corridor, &cfg).unwrap();
        let spec = NetSpec { input_dim: cfg.obs_dim(), trunk: vec![8], hidden: 6, n_actions: 4, critic };
        let mut p = spec.init_params(2);
        // Lean the policy towards the goal so returns vary across states.
        let b = p.offset("policy.b");
        p.values[b + Action::Right.index()] = 1.5;
        (spec, p, scene)
    }

    #[test]
    fn zero_steps_leave_head_unchanged() {
        let (spec, p, scene) = setup(CriticSpec::Baseline);
        let r = finetune_scene_critic(&p, &spec, &scene, 0, &FinetuneConfig { episodes: 4, ..Default::default() }).unwrap();
        assert_eq!(r.params.values, p.values);
        assert_eq!(r.rmse_before, r.rmse_after);
    }

    #[test]
    fn only_critic_blocks_move_and_error_drops() {
        for critic in [CriticSpec::Baseline, CriticSpec::Dynamic { n_b: 2 }] {
            let (spec, p, scene) = setup(critic);
            let r = finetune_scene_critic(&p, &spec, &scene, 300, &FinetuneConfig::default()).unwrap();
            for s in p.shapes() {
                let same = r.params.block(&s.name) == p.block(&s.name);
                assert_eq!(same, !spec.critic_blocks().contains(&s.name.as_str()), "{}", s.name);
            }
            assert!(r.fit_mse_after < r.fit_mse_before);
            assert!(r.rmse_after < r.rmse_before, "{} -> {}", r.rmse_before, r.rmse_after);
        }
    }

    #[test]
    fn constant_value_scene_drives_head_to_constant() {
        // Goal out of reach within the step budget: V is 0 everywhere.
        let cfg = EnvConfig { width: 8, height: 8, obs_window: 3, ..EnvConfig::default() };
        let mut scene = generate_scene(5, Family::Maze, &cfg).unwrap();
        scene.rules.t_max = 6;
        scene.subgoals.clear();
        assert!(scene.path_len(scene.start, scene.goal).unwrap() > 6);
        let spec = NetSpec { input_dim: cfg.obs_dim(), trunk: vec![8], hidden: 4, n_actions: 4, critic: CriticSpec::Baseline };
        let mut p = spec.init_params(2);
        p.block_mut("value.b")[0] = 2.0;
        p.block_mut("value.w").iter_mut().enumerate().for_each(|(i, w)| *w = 0.3 - 0.1 * i as f64);
        let r = finetune_scene_critic(&p, &spec, &scene, 20000, &FinetuneConfig::default()).unwrap();
        assert!(r.params.block("value.b")[0].abs() < 0.05, "{}", r.params.block("value.b")[0]);
        assert!(r.params.block("value.w").iter().all(|w| w.abs() < 0.1), "{:?}", r.params.block("value.w"));
        assert!(r.rmse_after < 0.01);
    }
}
