use std::fmt::Write as _;
use std::path::Path;

use super::plateau::plateau_detector;
use super::ppo::ppo_update;
use super::rollout::{collect_rollouts, ActionSelection, RolloutBatch};
use super::{CriticMode, TrainConfig, TrainError};
use crate::dvehead::{contribution, CcMode};
use crate::envkit::SceneDescriptor;
use crate::netcore::{Adam, NetSpec, ParamVector};

/// One row of `train_log.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub update: usize,
    pub env_steps: u64,
    pub mean_reward: f64,
    pub mean_ep_len: f64,
    pub nav_efficiency: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub cc_term1: f64,
    pub cc_term2: f64,
    pub mean_delta: f64,
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<LogRow>,
    pub spec: NetSpec,
    pub params: ParamVector,
    /// First update at which the sparsity loss had non-zero weight.
    pub cc_activation_update: Option<usize>,
}

/// Weight on the sparsity loss at `update`.
///
/// CLASS2 ramps linearly from `1/ramp` at the activation update to 1.
pub fn cc_weight_at(cfg: &TrainConfig, activation: Option<usize>, update: usize) -> f64 {
    if cfg.critic_mode != CriticMode::SparseDve {
        return 0.0;
    }
    match cfg.cc.mode {
        CcMode::Class1 => 1.0,
        CcMode::Class2 => match activation {
            Some(a) if update >= a => ((update - a + 1) as f64 / cfg.cc_ramp_updates.max(1) as f64).min(1.0),
            _ => 0.0,
        },
    }
}

/// Mean confusion over all steps and mean per-trajectory contribution.
fn sparsity_telemetry(batch: &RolloutBatch, n_b: usize) -> Result<(f64, Vec<f64>), TrainError> {
    let mut rho = vec![0.0; n_b];
    if batch.trajectories.iter().any(|t| t.attention.is_none()) {
        // Single-value critic: one cluster, fully confident.
        rho[0] = 1.0;
        return Ok((1.0, rho));
    }
    let (mut dsum, mut steps, mut n) = (0.0, 0usize, 0usize);
    for t in &batch.trajectories {
        let tr = t.attention.as_ref().expect("checked above");
        dsum += tr.deltas.iter().sum::<f64>();
        steps += tr.len();
        for (a, b) in rho.iter_mut().zip(contribution(tr)?) {
            *a += b;
        }
        n += 1;
    }
    rho.iter_mut().for_each(|r| *r /= n as f64);
    Ok((dsum / steps as f64, rho))
}

pub fn train(cfg: &TrainConfig, pool: &[SceneDescriptor]) -> Result<TrainReport, TrainError> {
    train_with(cfg, pool, None, &mut |_| {})
}

/// Full training loop. `init` overrides the seeded initialization;
/// `on_update` sees every row as it is produced.
pub fn train_with(
    cfg: &TrainConfig,
    pool: &[SceneDescriptor],
    init: Option<ParamVector>,
    on_update: &mut dyn FnMut(&LogRow),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let spec = cfg.net_spec();
    spec.validate()?;
    let mut params = match init {
        Some(p) if p.len() == spec.shapes().iter().map(|s| s.numel()).sum::<usize>() => p,
        Some(p) => return Err(TrainError::Config(format!("initial parameters have {} values", p.len()))),
        None => spec.init_params(cfg.seed),
    };
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    let mut rows = Vec::new();
    let mut ep_lens = Vec::new();
    let mut activation = match (cfg.critic_mode, cfg.cc.mode) {
        (CriticMode::SparseDve, CcMode::Class1) => Some(0),
        _ => None,
    };
    let mut env_steps = 0u64;
    let mut update = 0;
    while env_steps < cfg.total_env_steps {
        let w = cc_weight_at(cfg, activation, update);
        let batch = collect_rollouts(&params, &spec, pool, cfg, update, ActionSelection::Sample)?;
        env_steps += batch.env_steps() as u64;
        let (mean_delta, rho) = sparsity_telemetry(&batch, spec.critic.n_b())?;
        let loss = ppo_update(&mut params, &mut opt, &spec, &batch, cfg, update, w)?;
        let mean_reward = batch.mean_reward();
        let mean_ep_len = batch.mean_len();
        let row = LogRow {
            update,
            env_steps,
            mean_reward,
            mean_ep_len,
            nav_efficiency: mean_reward / mean_ep_len,
            policy_loss: loss.policy_loss,
            value_loss: loss.value_loss,
            entropy: loss.entropy,
            cc_term1: loss.cc_term1,
            cc_term2: loss.cc_term2,
            mean_delta,
            rho,
        };
        on_update(&row);
        rows.push(row);
        ep_lens.push(mean_ep_len);
        if activation.is_none()
            && cfg.critic_mode == CriticMode::SparseDve
            && env_steps >= cfg.cc.pretrain_steps
            && ep_lens.len() >= cfg.plateau_window
            && plateau_detector(&ep_lens, cfg.plateau_window, cfg.plateau_slope)?
        {
            activation = Some(update + 1);
        }
        update += 1;
    }
    Ok(TrainReport { rows, spec, params, cc_activation_update: activation.filter(|&a| a < update) })
}

/// Scientific notation with 17 significant digits.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// RFC-4180 CSV with the fixed column set; `n_b` fixes the rho columns.
pub fn log_csv(rows: &[LogRow], n_b: usize) -> String {
    let mut s = String::from(
        "update,env_steps,mean_reward,mean_ep_len,nav_efficiency,policy_loss,value_loss,entropy,cc_term1,cc_term2,mean_delta",
    );
    for i in 1..=n_b {
        let _ = write!(s, ",rho_{i}");
    }
    s.push_str("\r\n");
    for r in rows {
        let _ = write!(s, "{},{}", r.update, r.env_steps);
        for v in [
            r.mean_reward,
            r.mean_ep_len,
            r.nav_efficiency,
            r.policy_loss,
            r.value_loss,
            r.entropy,
            r.cc_term1,
            r.cc_term2,
            r.mean_delta,
        ]
        .iter()
        .chain(&r.rho)
        {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push_str("\r\n");
    }
    s
}

pub fn write_log_csv(path: &Path, rows: &[LogRow], n_b: usize) -> Result<(), TrainError> {
    std::fs::write(path, log_csv(rows, n_b))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envkit::{generate_scene, EnvConfig, Family};

    fn tiny(mode: CriticMode) -> (TrainConfig, Vec<SceneDescriptor>) {
        let mut cfg = TrainConfig { critic_mode: mode, ..TrainConfig::default() };
        cfg.trunk = vec![8];
        cfg.hidden = 8;
        cfg.n_workers = 1;
        cfg.steps_per_worker_per_update = 40;
        cfg.total_env_steps = 200;
        cfg.env = EnvConfig { width: 5, height: 5, t_max: 20, ..EnvConfig::default() };
        let mut s = generate_scene(3, Family::Maze, &cfg.env).unwrap();
        s.scene_id = 0;
        (cfg, vec![s])
    }

    #[test]
    fn class2_weight_ramps() {
        let mut cfg = TrainConfig { critic_mode: CriticMode::SparseDve, ..TrainConfig::default() };
        cfg.cc.mode = CcMode::Class2;
        assert_eq!(cc_weight_at(&cfg, None, 50), 0.0);
        assert_eq!(cc_weight_at(&cfg, Some(5), 4), 0.0);
        assert!((cc_weight_at(&cfg, Some(5), 5) - 0.1).abs() < 1e-15);
        assert_eq!(cc_weight_at(&cfg, Some(5), 14), 1.0);
        assert_eq!(cc_weight_at(&cfg, Some(5), 100), 1.0);
        cfg.critic_mode = CriticMode::Dve;
        assert_eq!(cc_weight_at(&cfg, Some(0), 3), 0.0);
    }

    #[test]
    fn runs_and_is_deterministic() {
        let (cfg, pool) = tiny(CriticMode::SparseDve);
        let a = train(&cfg, &pool).unwrap();
        let b = train(&cfg, &pool).unwrap();
        assert!(a.rows.last().unwrap().env_steps >= 200);
        assert_eq!(log_csv(&a.rows, 3), log_csv(&b.rows, 3));
        assert_eq!(a.cc_activation_update, Some(0));
        for r in &a.rows {
            assert!(r.mean_delta >= 1.0 / 3.0 - 1e-12 && r.mean_delta <= 1.0 + 1e-12);
            assert!(r.cc_term1.is_finite() && r.cc_term1 != 0.0);
        }
    }

    #[test]
    fn csv_layout() {
        let row = LogRow {
            update: 0,
            env_steps: 5,
            mean_reward: 1.0,
            mean_ep_len: 5.0,
            nav_efficiency: 0.2,
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            cc_term1: 0.0,
            cc_term2: 0.0,
            mean_delta: 1.0,
            rho: vec![1.0],
        };
        let csv = log_csv(&[row], 1);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().ends_with("mean_delta,rho_1"));
        assert!(lines.next().unwrap().starts_with("0,5,1.0000000000000000e0,5.0000000000000000e0,2.0000000000000001e-1"));
    }
}
