use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;

use super::AnalysisError;
use crate::envkit::{Family, SceneDescriptor};
use crate::netcore::{NetSpec, ParamVector};
use crate::rng;
use crate::trainer::{run_episode, ActionSelection};

pub const DELTA_AMBIGUOUS: f64 = 0.9;

/// Dominant attention hypothesis at one visited state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRow {
    pub scene_id: usize,
    pub family: Family,
    pub step: usize,
    pub x: usize,
    pub y: usize,
    pub argmax_cluster: usize,
    pub alpha_max: f64,
    pub delta: f64,
    pub ambiguous: bool,
}

/// Rolls out `n_episodes` sampled episodes, cycling through the pool, and
/// records the argmax attention at every visited state.
pub fn export_cluster_assignments(
    params: &ParamVector,
    spec: &NetSpec,
    pool: &[SceneDescriptor],
    n_episodes: usize,
    delta_ambiguous: f64,
    seed: u64,
) -> Result<Vec<ClusterRow>, AnalysisError> {
    if !matches!(spec.critic, crate::netcore::CriticSpec::Dynamic { .. }) {
        return Err(AnalysisError::InvalidInput("snapshot has no dynamic value head".into()));
    }
    if pool.is_empty() {
        return Err(AnalysisError::InvalidInput("empty pool".into()));
    }
    let mut r = rng::stream(seed, "cluster-export");
    let mut rows = Vec::new();
    for e in 0..n_episodes {
        let scene = &pool[e % pool.len()];
        let mut er = rng::stream(r.gen(), "episode");
        let traj = run_episode(params, spec, scene, ActionSelection::Sample, &mut er)?;
        let trace = traj.attention.as_ref().expect("dynamic head records attention");
        for (t, (alpha, &delta)) in trace.alphas.iter().zip(&trace.deltas).enumerate() {
            let mut best = 0;
            for (i, &a) in alpha.iter().enumerate() {
                if a > alpha[best] {
                    best = i;
                }
            }
            rows.push(ClusterRow {
                scene_id: scene.scene_id,
                family: scene.family,
                step: t,
                x: traj.positions[t].x,
                y: traj.positions[t].y,
                argmax_cluster: best,
                alpha_max: alpha[best],
                delta,
                ambiguous: delta > delta_ambiguous,
            });
        }
    }
    Ok(rows)
}

pub fn cluster_csv(rows: &[ClusterRow]) -> String {
    let mut s = String::from("scene_id,family,step,agent_x,agent_y,argmax_cluster,alpha_max,delta,ambiguous\r\n");
    for r in rows {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{:.16e},{:.16e},{}\r\n",
            r.scene_id,
            r.family.name(),
            r.step,
            r.x,
            r.y,
            r.argmax_cluster,
            r.alpha_max,
            r.delta,
            r.ambiguous
        );
    }
    s
}

/// Fraction of rows on which each cluster is the argmax.
pub fn cluster_shares(rows: &[ClusterRow], n_b: usize) -> Vec<f64> {
    let mut c = vec![0.0; n_b];
    for r in rows {
        c[r.argmax_cluster] += 1.0;
    }
    c.iter().map(|x| x / rows.len().max(1) as f64).collect()
}

/// Most frequent argmax cluster per family (lowest index on ties).
pub fn family_majority(rows: &[ClusterRow], n_b: usize) -> BTreeMap<Family, usize> {
    let mut counts: BTreeMap<Family, Vec<usize>> = BTreeMap::new();
    for r in rows {
        counts.entry(r.family).or_insert_with(|| vec![0; n_b])[r.argmax_cluster] += 1;
    }
    counts
        .into_iter()
        .map(|(f, c)| {
            let mut best = 0;
            for (i, &n) in c.iter().enumerate() {
                if n > c[best] {
                    best = i;
                }
            }
            (f, best)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envkit::{build_pool, EnvConfig};
    use crate::netcore::CriticSpec;

    fn pool() -> (EnvConfig, Vec<SceneDescriptor>) {
        let cfg = EnvConfig { n_levels: 4, width: 5, height: 5, t_max: 12, obs_window: 3, ..EnvConfig::default() };
        let p = build_pool(&cfg).unwrap();
        (cfg, p)
    }

    #[test]
    fn single_hypothesis_rows() {
        let (cfg, pool) = pool();
        let spec = NetSpec { input_dim: cfg.obs_dim(), trunk: vec![8], hidden: 4, n_actions: 4, critic: CriticSpec::Dynamic { n_b: 1 } };
        let p = spec.init_params(0);
        let rows = export_cluster_assignments(&p, &spec, &pool, 6, DELTA_AMBIGUOUS, 0).unwrap();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.argmax_cluster == 0 && r.alpha_max == 1.0));
        assert_eq!(cluster_shares(&rows, 1), vec![1.0]);
        let csv = cluster_csv(&rows);
        assert_eq!(csv.lines().count(), rows.len() + 1);
    }

    #[test]
    fn sparse_head_has_no_ambiguous_rows() {
        let (cfg, pool) = pool();
        let spec = NetSpec { input_dim: cfg.obs_dim(), trunk: vec![8], hidden: 4, n_actions: 4, critic: CriticSpec::Dynamic { n_b: 2 } };
        let mut p = spec.init_params(0);
        // A large bias on one attention logit makes the head one-hot everywhere.
        p.block_mut("attn.b")[1] = 40.0;
        let rows = export_cluster_assignments(&p, &spec, &pool, 6, DELTA_AMBIGUOUS, 1).unwrap();
        assert!(rows.iter().all(|r| r.delta <= 0.51 && !r.ambiguous && r.argmax_cluster == 1));
        let m = family_majority(&rows, 2);
        assert!(m.values().all(|&c| c == 1));
    }

    #[test]
    fn baseline_snapshot_is_rejected() {
        let (cfg, pool) = pool();
        let spec = NetSpec::new(cfg.obs_dim(), CriticSpec::Baseline);
        let p = spec.init_params(0);
        assert!(export_cluster_assignments(&p, &spec, &pool, 1, DELTA_AMBIGUOUS, 0).is_err());
    }
}
