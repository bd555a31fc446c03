//! Everything that stays fixed for one `(config, seed)` run: vehicle specs,
//! data shards, the RSU's trusted shard and the test set. Episodes are
//! spawned from it with freshly seeded worlds and global models.

use crate::afl::{
    run_afl_slot, Aggregation, GlobalModel, RsuState, SlotInputs, SlotOutcome, SlotSettings,
};
use crate::config::SimConfig;
use crate::data::{load_csv, partition, AttackKind, DataShard, SyntheticDigits};
use crate::error::{invalid, Result, SimError};
use crate::model::{
    evaluate, Evaluation, LabeledBatch, ModelParams, OutputActivation, NUM_CLASSES,
};
use crate::rng::{derive, stream, tag};
use crate::world::{VehicleProfile, VehicleSpec, World, WorldParams};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Train,
    Test,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Train => "train",
            Stage::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Stage::Train => tag::STAGE_TRAIN,
            Stage::Test => tag::STAGE_TEST,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: SimConfig,
    specs: Vec<VehicleSpec>,
    world_params: WorldParams,
    clean_shards: Vec<DataShard>,
    attacked_shards: Vec<DataShard>,
    rsu_shard: DataShard,
    test_set: LabeledBatch,
    classifier: Vec<usize>,
}

impl Scenario {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let sizes = cfg.shard_sizes();
        let needed = sizes.iter().sum::<usize>() + cfg.rsu_shard_size + cfg.test_set_size;
        let dataset = if cfg.dataset == "synthetic" {
            SyntheticDigits {
                num_features: cfg.dataset_features,
                noise: cfg.data_noise,
            }
            .generate(needed, derive(seed, &[tag::DATASET]))?
        } else {
            load_csv(std::path::Path::new(&cfg.dataset))?
        };
        if dataset.len() < needed {
            return Err(SimError::InsufficientData {
                needed,
                available: dataset.len(),
            });
        }
        let part = partition(
            &dataset,
            &sizes,
            cfg.rsu_shard_size,
            derive(seed, &[tag::PARTITION]),
        )?;
        let test_set = part
            .rest
            .select(&(0..cfg.test_set_size).collect::<Vec<_>>());
        let specs = VehicleSpec::from_config(cfg)?;
        let clean_shards = part
            .vehicles
            .iter()
            .zip(&specs)
            .map(|(b, s)| DataShard::vehicle(s.id, b.clone(), AttackKind::None, s.bad_node))
            .collect::<Result<Vec<_>>>()?;
        let attacked_shards = part
            .vehicles
            .iter()
            .zip(&specs)
            .map(|(b, s)| DataShard::vehicle(s.id, b.clone(), cfg.attack_of(s.id), s.bad_node))
            .collect::<Result<Vec<_>>>()?;
        let classifier = std::iter::once(dataset.num_features())
            .chain(cfg.classifier_hidden.iter().copied())
            .chain(std::iter::once(NUM_CLASSES))
            .collect();
        Ok(Self {
            world_params: WorldParams::from_config(cfg)?,
            cfg: cfg.clone(),
            specs,
            clean_shards,
            attacked_shards,
            rsu_shard: DataShard::rsu(part.rsu),
            test_set,
            classifier,
        })
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seed
    }

    pub fn num_vehicles(&self) -> usize {
        self.specs.len()
    }

    pub fn specs(&self) -> &[VehicleSpec] {
        &self.specs
    }

    pub fn clean_shards(&self) -> &[DataShard] {
        &self.clean_shards
    }

    pub fn rsu_shard(&self) -> &DataShard {
        &self.rsu_shard
    }

    pub fn test_set(&self) -> &LabeledBatch {
        &self.test_set
    }

    pub fn classifier_architecture(&self) -> &[usize] {
        &self.classifier
    }

    /// Fraction of vehicles configured as attacked (zero without an attack).
    pub fn attacked_fraction(&self) -> f64 {
        if self.cfg.attack == AttackKind::None {
            return 0.0;
        }
        let n = (0..self.num_vehicles())
            .filter(|&i| self.cfg.attack_of(i) != AttackKind::None)
            .count();
        n as f64 / self.num_vehicles() as f64
    }

    /// Starts episode `episode` of `stage`; attacks apply only when
    /// `attacks_on` holds.
    pub fn episode(&self, stage: Stage, episode: usize, attacks_on: bool) -> Result<Episode<'_>> {
        let seed = self.seed();
        let world = World::new(
            self.world_params,
            &self.specs,
            seed,
            stage.tag(),
            episode as u64,
        )?;
        let init = derive(seed, &[tag::GLOBAL_INIT, stage.tag(), episode as u64]);
        let global = GlobalModel::new(ModelParams::init(
            &self.classifier,
            OutputActivation::Softmax,
            init,
        )?);
        Ok(Episode {
            scenario: self,
            world,
            global,
            rsu: RsuState::default(),
            stage,
            episode,
            attacks_on,
        })
    }
}

/// One episode in progress.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    scenario: &'a Scenario,
    world: World,
    pub global: GlobalModel,
    rsu: RsuState,
    stage: Stage,
    episode: usize,
    attacks_on: bool,
}

impl Episode<'_> {
    pub fn slot(&self) -> usize {
        self.world.slot()
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn profiles(&self) -> Vec<VehicleProfile> {
        self.world.profiles()
    }

    fn slot_seed(&self) -> u64 {
        derive(
            self.scenario.seed(),
            &[
                tag::SLOT,
                self.stage.tag(),
                self.episode as u64,
                self.world.slot() as u64,
            ],
        )
    }

    /// Shards as seen this slot, with transient attacks resolved.
    fn shards(&self) -> Vec<DataShard> {
        let sc = self.scenario;
        if !self.attacks_on {
            return sc.clean_shards.clone();
        }
        if sc.cfg.attack_persistent {
            return sc.attacked_shards.clone();
        }
        (0..sc.num_vehicles())
            .map(|id| {
                let key = [
                    tag::ATTACK_SCHEDULE,
                    self.stage.tag(),
                    self.episode as u64,
                    self.world.slot() as u64,
                    id as u64,
                ];
                let hit = stream(sc.seed(), &key).random_bool(0.5);
                if hit {
                    sc.attacked_shards[id].clone()
                } else {
                    sc.clean_shards[id].clone()
                }
            })
            .collect()
    }

    /// Runs one slot with `selected` vehicles and moves the world forward.
    pub fn step(&mut self, selected: &[usize], settings: &SlotSettings) -> Result<SlotOutcome> {
        let profiles = self.world.profiles();
        let shards = self.shards();
        let inputs = SlotInputs {
            profiles: &profiles,
            shards: &shards,
            rsu_shard: &self.scenario.rsu_shard,
            slot_seed: self.slot_seed(),
        };
        let outcome = match settings.aggregation {
            Aggregation::Weighted => {
                run_afl_slot(&mut self.global, selected, &inputs, settings, &mut self.rsu)?
            }
            Aggregation::PlainAsync => {
                crate::afl::run_plain_afl_round(&mut self.global, &inputs, settings)?
            }
            Aggregation::Synchronous => {
                crate::afl::run_sync_fl_round(&mut self.global, &inputs, settings)?
            }
        };
        if !self.global.params.is_finite() {
            return Err(invalid(
                "global_model",
                "aggregation produced non-finite parameters",
            ));
        }
        self.world.advance()?;
        Ok(outcome)
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        evaluate(&self.global.params, &self.scenario.test_set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        SimConfig {
            shard_size: 60,
            rsu_shard_size: 60,
            test_set_size: 100,
            ..SimConfig::default()
        }
    }

    #[test]
    fn episodes_are_paired_across_calls() {
        let sc = Scenario::new(&small_cfg()).unwrap();
        let a = sc.episode(Stage::Test, 2, false).unwrap();
        let b = sc.episode(Stage::Test, 2, true).unwrap();
        assert_eq!(a.profiles(), b.profiles());
        assert_eq!(a.global, b.global);
        let c = sc.episode(Stage::Train, 2, false).unwrap();
        assert_ne!(a.profiles(), c.profiles());
    }

    #[test]
    fn attacks_only_when_enabled() {
        let cfg = SimConfig {
            attack: AttackKind::ClassFlip,
            attacked_vehicles: vec![1],
            ..small_cfg()
        };
        let sc = Scenario::new(&cfg).unwrap();
        assert_eq!(sc.attacked_fraction(), 0.2);
        let on = sc.episode(Stage::Test, 0, true).unwrap().shards();
        let off = sc.episode(Stage::Test, 0, false).unwrap().shards();
        assert_eq!(on[1].attack(), AttackKind::ClassFlip);
        assert_eq!(off[1].attack(), AttackKind::None);
        assert_eq!(on[0].attack(), AttackKind::None);
        assert_eq!(sc.rsu_shard().attack(), AttackKind::None);
    }

    #[test]
    fn step_advances_world() {
        let sc = Scenario::new(&small_cfg()).unwrap();
        let mut ep = sc.episode(Stage::Train, 0, false).unwrap();
        let settings = SlotSettings::from_config(&sc.cfg);
        let out = ep.step(&[0, 2], &settings).unwrap();
        assert_eq!(ep.slot(), 1);
        assert_eq!(out.records.len(), 2);
        assert!(ep.evaluate().unwrap().accuracy >= 0.0);
    }

    #[test]
    fn too_little_data_is_reported() {
        let cfg = SimConfig {
            dataset: "/nonexistent/data.csv".into(),
            ..small_cfg()
        };
        assert!(Scenario::new(&cfg).is_err());
    }
}
