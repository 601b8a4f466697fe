//! Benchmark configuration: a self-describing JSON document naming the
//! system, the learning settings, and the reference-measure settings for one
//! end-to-end study.
//!
//! Three built-in configurations cover the standard benchmark systems:
//! [`ExperimentConfig::opinion`] (1-d consensus dynamics with a single agent
//! type), [`ExperimentConfig::predator_swarm`] (2-d preys plus one predator),
//! and [`ExperimentConfig::lennard_jones`] (2-d two-species particle system).
//! Copies of these are shipped as JSON under `configs/` at the workspace
//! root; a test pins the files to the constructors so the two never drift.

use serde::{Deserialize, Serialize};

use crate::dynamics::{equispaced_times, SystemSpec};
use crate::error::{Error, Result};
use crate::evaluation::NoiseKind;
use crate::kernels::{InitialSampler, KernelSpec};

/// One agent type: population size and initial-condition law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeBlock {
    pub size: usize,
    pub sampler: InitialSampler,
}

/// The system under study and its observation layout.
///
/// `kernels` lists the `K x K` interaction grid in observer-major order:
/// entry `k * K + k'` is the kernel with which type `k'` agents act on type
/// `k` agents. Observations are taken at `l_nodes` equidistant instants on
/// `[t_start, t_split]`; `[t_split, t_end]` is the prediction window used
/// only for trajectory-error studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemBlock {
    pub d: usize,
    pub types: Vec<TypeBlock>,
    pub kernels: Vec<KernelSpec>,
    pub t_start: f64,
    pub t_split: f64,
    pub t_end: f64,
    pub l_nodes: usize,
}

impl SystemBlock {
    /// Number of agent types.
    pub fn k_count(&self) -> usize {
        self.types.len()
    }

    /// Population size per type.
    pub fn type_sizes(&self) -> Vec<usize> {
        self.types.iter().map(|t| t.size).collect()
    }

    /// Initial-condition law per type.
    pub fn samplers(&self) -> Vec<InitialSampler> {
        self.types.iter().map(|t| t.sampler.clone()).collect()
    }

    /// Total number of agents.
    pub fn n_agents(&self) -> usize {
        self.types.iter().map(|t| t.size).sum()
    }

    /// Materialize the true system: build every kernel and wire the grid.
    pub fn build_system(&self) -> Result<SystemSpec> {
        let kernels = self
            .kernels
            .iter()
            .map(|spec| spec.build())
            .collect::<Result<Vec<_>>>()?;
        SystemSpec::new(self.d, self.type_sizes(), kernels)
    }

    /// The observation instants: `l_nodes` equidistant times on
    /// `[t_start, t_split]`.
    pub fn training_times(&self) -> Vec<f64> {
        equispaced_times(self.t_start, self.t_split, self.l_nodes)
    }
}

/// How training velocities are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityConfig {
    /// Evaluate the true right-hand side at each observation instant.
    Exact,
    /// Observe positions only, on a grid extended by one extra node, and
    /// take backward differences.
    FiniteDifference,
}

/// Observation-noise switch: both positions and velocities are perturbed
/// component-wise by `Unif[-sigma, sigma]` draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBlock {
    pub kind: NoiseKind,
    pub sigma: f64,
}

/// Estimation settings.
///
/// The hypothesis dimension per kernel pair follows
/// `n = multiplier * (M / ln M)^(1 / (2 smoothness + 1))`, rounded; see
/// [`crate::hypothesis::choose_dimension`]. `r_max` fixes the support
/// `[0, r_max]` of the hypothesis space; `None` resolves it at run time to
/// the largest pairwise distance observed in the reference-measure batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningBlock {
    pub degree: usize,
    pub smoothness: usize,
    pub multiplier: f64,
    pub r_max: Option<f64>,
    pub m_values: Vec<usize>,
    pub trials: usize,
    pub velocity: VelocityConfig,
    pub noise: Option<NoiseBlock>,
}

/// Reference-measure settings: how many trajectories feed the empirical
/// distance distribution and how many histogram bins resolve it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureBlock {
    pub m_rho: usize,
    pub bins: usize,
}

/// Runtime scale of a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Shrunk for continuous integration: the reference-measure batch is
    /// capped at 10^4 trajectories and the sample grid at M = 256.
    Ci,
    /// The configuration as written.
    Full,
}

/// Cap applied to `m_rho` under [`Profile::Ci`].
pub const CI_M_RHO_CAP: usize = 10_000;
/// Largest training sample size retained under [`Profile::Ci`].
pub const CI_M_CAP: usize = 256;

/// A complete benchmark definition, echoed verbatim into every results
/// bundle so a run can be reproduced from its outputs alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemBlock,
    pub learning: LearningBlock,
    pub measure: MeasureBlock,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Check internal consistency; every run entry point calls this first.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.name.is_empty() {
            return bad("empty experiment name".into());
        }
        let sys = &self.system;
        if sys.d == 0 {
            return bad("state dimension must be positive".into());
        }
        if sys.types.is_empty() {
            return bad("at least one agent type is required".into());
        }
        if sys.types.iter().any(|t| t.size == 0) {
            return bad("every type needs at least one agent".into());
        }
        let k = sys.k_count();
        if sys.kernels.len() != k * k {
            return bad(format!(
                "{} types need {} kernels, got {}",
                k,
                k * k,
                sys.kernels.len()
            ));
        }
        if !(sys.t_start < sys.t_split && sys.t_split < sys.t_end) {
            return bad(format!(
                "time layout must satisfy t_start < t_split < t_end, got [{}; {}; {}]",
                sys.t_start, sys.t_split, sys.t_end
            ));
        }
        if sys.l_nodes < 2 {
            return bad("need at least two observation instants".into());
        }
        let learn = &self.learning;
        if learn.degree > 1 {
            return bad(format!(
                "piecewise degree {} unsupported (0 or 1)",
                learn.degree
            ));
        }
        if learn.smoothness == 0 {
            return bad("smoothness index must be at least 1".into());
        }
        if !(learn.multiplier.is_finite() && learn.multiplier > 0.0) {
            return bad(format!("dimension multiplier {} invalid", learn.multiplier));
        }
        if let Some(r) = learn.r_max {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("hypothesis radius {r} invalid"));
            }
        }
        if learn.m_values.is_empty() {
            return bad("empty sample-size grid".into());
        }
        if learn.m_values[0] == 0 {
            return bad("sample sizes must be positive".into());
        }
        if learn.m_values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sample-size grid must be strictly increasing".into());
        }
        if learn.trials == 0 {
            return bad("at least one trial is required".into());
        }
        if let Some(noise) = &learn.noise {
            if !(noise.sigma.is_finite() && noise.sigma >= 0.0) {
                return bad(format!("noise level {} invalid", noise.sigma));
            }
        }
        if self.measure.m_rho == 0 {
            return bad("reference measure needs at least one trajectory".into());
        }
        if self.measure.bins == 0 {
            return bad("reference measure needs at least one bin".into());
        }
        // Building the system surfaces kernel-parameter problems early.
        sys.build_system()?;
        Ok(())
    }

    /// Apply a runtime profile, returning the (possibly) shrunk config.
    ///
    /// Under [`Profile::Ci`] the reference batch shrinks to at most
    /// [`CI_M_RHO_CAP`] trajectories and sample sizes above [`CI_M_CAP`] are
    /// dropped (the smallest entry is always kept so the grid stays
    /// nonempty). [`Profile::Full`] returns the config unchanged.
    pub fn with_profile(mut self, profile: Profile) -> Self {
        match profile {
            Profile::Full => self,
            Profile::Ci => {
                self.measure.m_rho = self.measure.m_rho.min(CI_M_RHO_CAP);
                let mut kept: Vec<usize> = self
                    .learning
                    .m_values
                    .iter()
                    .copied()
                    .filter(|&m| m <= CI_M_CAP)
                    .collect();
                if kept.is_empty() {
                    kept.push(self.learning.m_values[0]);
                }
                self.learning.m_values = kept;
                self
            }
        }
    }

    /// Read a config from a JSON file and validate it.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let cfg: ExperimentConfig = crate::io::read_json(path.as_ref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Write the config as pretty-printed JSON.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::io::write_json(path.as_ref(), self)
    }

    /// 1-d consensus ("opinion") dynamics: ten agents of one type on the
    /// line, piecewise-constant hypothesis spaces on [0, 10], exact
    /// velocities, ten trials over M = 2^4 .. 2^13.
    pub fn opinion() -> Self {
        ExperimentConfig {
            name: "opinion".into(),
            system: SystemBlock {
                d: 1,
                types: vec![TypeBlock {
                    size: 10,
                    sampler: InitialSampler::UniformInterval { lo: 0.0, hi: 8.0 },
                }],
                kernels: vec![KernelSpec::Opinion],
                t_start: 0.0,
                t_split: 0.5,
                t_end: 20.0,
                l_nodes: 51,
            },
            learning: LearningBlock {
                degree: 0,
                smoothness: 1,
                multiplier: 60.0,
                r_max: Some(10.0),
                m_values: (4..=13).map(|p| 1usize << p).collect(),
                trials: 10,
                velocity: VelocityConfig::Exact,
                noise: None,
            },
            measure: MeasureBlock {
                m_rho: 100_000,
                bins: 2000,
            },
            seed: 20_240_001,
        }
    }

    /// 2-d predator-swarm dynamics: nine preys drawn from a disk, one
    /// predator from a ring, singular power-law kernels truncated near zero,
    /// piecewise-linear hypothesis spaces on [0, 10], exactly observed
    /// velocities, ten trials over M = 2^4 .. 2^10.
    pub fn predator_swarm() -> Self {
        ExperimentConfig {
            name: "predator_swarm".into(),
            system: SystemBlock {
                d: 2,
                types: vec![
                    TypeBlock {
                        size: 9,
                        sampler: InitialSampler::UniformDisk { radius: 0.5 },
                    },
                    TypeBlock {
                        size: 1,
                        sampler: InitialSampler::UniformAnnulus {
                            r_in: 0.8,
                            r_out: 1.0,
                        },
                    },
                ],
                kernels: vec![
                    // prey <- prey: 1 - r^-2
                    KernelSpec::Power {
                        c0: 1.0,
                        c1: -1.0,
                        exp: -2.0,
                        r_trunc: 0.4,
                    },
                    // prey <- predator: -2 r^-2
                    KernelSpec::Power {
                        c0: 0.0,
                        c1: -2.0,
                        exp: -2.0,
                        r_trunc: 1.0,
                    },
                    // predator <- prey: 3.5 r^-3
                    KernelSpec::Power {
                        c0: 0.0,
                        c1: 3.5,
                        exp: -3.0,
                        r_trunc: 0.4,
                    },
                    // predator <- predator: none
                    KernelSpec::Zero,
                ],
                t_start: 0.0,
                t_split: 1.0,
                t_end: 20.0,
                l_nodes: 100,
            },
            learning: LearningBlock {
                degree: 1,
                smoothness: 2,
                multiplier: 100.0,
                r_max: Some(10.0),
                m_values: (4..=10).map(|p| 1usize << p).collect(),
                trials: 10,
                velocity: VelocityConfig::Exact,
                noise: None,
            },
            measure: MeasureBlock {
                m_rho: 100_000,
                bins: 2000,
            },
            seed: 20_240_002,
        }
    }

    /// 2-d two-species particle dynamics with Lennard-Jones-type kernels:
    /// five particles of each species from a standard Gaussian,
    /// piecewise-linear hypothesis spaces on the observed distance range
    /// (radius resolved from data), exactly observed velocities, ten
    /// trials over M = 2^4 .. 2^9.
    pub fn lennard_jones() -> Self {
        let cross = KernelSpec::Lj {
            p: 8.0,
            q: 2.0,
            eps: 1.5,
            r_m: 0.5,
            r_trunc: 0.4,
        };
        ExperimentConfig {
            name: "lennard_jones".into(),
            system: SystemBlock {
                d: 2,
                types: vec![
                    TypeBlock {
                        size: 5,
                        sampler: InitialSampler::StandardGaussian,
                    },
                    TypeBlock {
                        size: 5,
                        sampler: InitialSampler::StandardGaussian,
                    },
                ],
                kernels: vec![
                    KernelSpec::Lj {
                        p: 4.0,
                        q: 1.0,
                        eps: 10.0,
                        r_m: 0.8,
                        r_trunc: 0.68,
                    },
                    cross.clone(),
                    cross,
                    KernelSpec::Lj {
                        p: 5.0,
                        q: 2.0,
                        eps: 5.0,
                        r_m: 1.0,
                        r_trunc: 0.8,
                    },
                ],
                t_start: 0.0,
                t_split: 0.05,
                t_end: 2.0,
                l_nodes: 100,
            },
            learning: LearningBlock {
                degree: 1,
                smoothness: 2,
                multiplier: 300.0,
                r_max: None,
                m_values: (4..=9).map(|p| 1usize << p).collect(),
                trials: 10,
                velocity: VelocityConfig::Exact,
                noise: None,
            },
            measure: MeasureBlock {
                m_rho: 100_000,
                bins: 2000,
            },
            seed: 20_240_003,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_configs_validate_and_build() {
        for cfg in [
            ExperimentConfig::opinion(),
            ExperimentConfig::predator_swarm(),
            ExperimentConfig::lennard_jones(),
        ] {
            cfg.validate().unwrap();
            let sys = cfg.system.build_system().unwrap();
            assert_eq!(sys.n_agents(), cfg.system.n_agents());
            assert_eq!(sys.n_types(), cfg.system.k_count());
            let times = cfg.system.training_times();
            assert_eq!(times.len(), cfg.system.l_nodes);
            assert_eq!(times[0], cfg.system.t_start);
            assert_eq!(*times.last().unwrap(), cfg.system.t_split);
        }

        let od = ExperimentConfig::opinion();
        assert_eq!(od.system.n_agents(), 10);
        assert_eq!(od.learning.m_values, vec![16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192]);

        let ps = ExperimentConfig::predator_swarm();
        assert_eq!(ps.system.type_sizes(), vec![9, 1]);
        assert_eq!(ps.learning.m_values.last(), Some(&1024));

        let lj = ExperimentConfig::lennard_jones();
        assert_eq!(lj.system.type_sizes(), vec![5, 5]);
        assert_eq!(lj.learning.r_max, None);
        assert_eq!(lj.learning.m_values.last(), Some(&512));
    }

    #[test]
    fn ci_profile_caps_measure_and_sample_sizes() {
        let cfg = ExperimentConfig::opinion().with_profile(Profile::Ci);
        assert_eq!(cfg.measure.m_rho, CI_M_RHO_CAP);
        assert_eq!(cfg.learning.m_values, vec![16, 32, 64, 128, 256]);
        cfg.validate().unwrap();

        let unchanged = ExperimentConfig::opinion().with_profile(Profile::Full);
        assert_eq!(unchanged, ExperimentConfig::opinion());

        // A grid entirely above the cap keeps its smallest entry.
        let mut big = ExperimentConfig::opinion();
        big.learning.m_values = vec![512, 1024];
        let big = big.with_profile(Profile::Ci);
        assert_eq!(big.learning.m_values, vec![512]);
    }

    #[test]
    fn json_round_trips_preserve_configs() {
        for cfg in [
            ExperimentConfig::opinion(),
            ExperimentConfig::predator_swarm(),
            ExperimentConfig::lennard_jones(),
        ] {
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn bundled_files_match_the_constructors() {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../..")
            .join("configs");
        for (file, cfg) in [
            ("opinion.json", ExperimentConfig::opinion()),
            ("predator_swarm.json", ExperimentConfig::predator_swarm()),
            ("lennard_jones.json", ExperimentConfig::lennard_jones()),
        ] {
            let loaded = ExperimentConfig::load(root.join(file)).unwrap();
            assert_eq!(loaded, cfg, "configs/{file} drifted from the built-in");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let reject = |mutate: &dyn Fn(&mut ExperimentConfig)| {
            let mut cfg = ExperimentConfig::opinion();
            mutate(&mut cfg);
            assert!(
                matches!(cfg.validate(), Err(Error::InvalidConfig(_))),
                "expected rejection"
            );
        };
        reject(&|c| c.name.clear());
        reject(&|c| c.system.d = 0);
        reject(&|c| c.system.types.clear());
        reject(&|c| c.system.types[0].size = 0);
        reject(&|c| c.system.kernels.push(KernelSpec::Zero));
        reject(&|c| c.system.t_split = c.system.t_end + 1.0);
        reject(&|c| c.system.l_nodes = 1);
        reject(&|c| c.learning.degree = 2);
        reject(&|c| c.learning.smoothness = 0);
        reject(&|c| c.learning.multiplier = -3.0);
        reject(&|c| c.learning.r_max = Some(0.0));
        reject(&|c| c.learning.m_values.clear());
        reject(&|c| c.learning.m_values = vec![16, 16]);
        reject(&|c| c.learning.m_values = vec![0, 16]);
        reject(&|c| c.learning.trials = 0);
        reject(&|c| {
            c.learning.noise = Some(NoiseBlock {
                kind: NoiseKind::Additive,
                sigma: f64::NAN,
            })
        });
        reject(&|c| c.measure.m_rho = 0);
        reject(&|c| c.measure.bins = 0);
    }
}
