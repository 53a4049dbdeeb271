use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::net::{BlockKind, HeadSource, LossSpec, NetworkConfig};

use super::run::TrainConfig;
use super::sweep::{log_spaced, SweepConfig};

/// Named experiment grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Untied teachers, KL over 16 temperatures.
    Exp9,
    /// Tied teachers, KL over 16 temperatures.
    Exp9_1,
    /// Tied teachers, frozen teacher head, 80000 steps.
    Exp9_3,
    /// Second-order students, MSE on the last hidden state.
    Exp9_4,
    /// First-order students, MSE on the last hidden state.
    Exp9_6,
}

pub const PRESET_NAMES: [&str; 5] = ["exp9", "exp9-1", "exp9-3", "exp9-4", "exp9-6"];

pub const PRESET_DEPTHS: [usize; 6] = [6, 12, 16, 24, 32, 48];
pub const PRESET_WIDTH: usize = 32;
pub const PRESET_LOGITS: usize = 128;
pub const PRESET_TEACHER_DEPTH: usize = 128;
pub const PRESET_LR: f64 = 6e-4;

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Exp9 => "exp9",
            Preset::Exp9_1 => "exp9-1",
            Preset::Exp9_3 => "exp9-3",
            Preset::Exp9_4 => "exp9-4",
            Preset::Exp9_6 => "exp9-6",
        }
    }

    /// Teacher weight correlation used when no override is given.
    pub fn default_rho(self) -> u8 {
        match self {
            Preset::Exp9 | Preset::Exp9_6 => 0,
            Preset::Exp9_1 | Preset::Exp9_3 | Preset::Exp9_4 => 1,
        }
    }

    pub fn sweep(self, seed: u64) -> SweepConfig {
        let kl = LossSpec::KlToTeacher { temperature: 1.0 };
        let (temperatures, loss, steps, block, head) = match self {
            Preset::Exp9 | Preset::Exp9_1 => {
                (log_spaced(1e-2, 1.0, 16), kl, 40_000, BlockKind::FirstOrder, HeadSource::Own)
            }
            Preset::Exp9_3 => (
                log_spaced(1e-2, 1.0, 16),
                kl,
                80_000,
                BlockKind::FirstOrder,
                HeadSource::CopiedFromTeacher,
            ),
            Preset::Exp9_4 => (
                vec![1.0],
                LossSpec::MseLastHidden,
                40_000,
                BlockKind::SecondOrder,
                HeadSource::Own,
            ),
            Preset::Exp9_6 => (
                vec![1.0],
                LossSpec::MseLastHidden,
                40_000,
                BlockKind::FirstOrder,
                HeadSource::Own,
            ),
        };
        SweepConfig {
            temperatures,
            n_teachers: 3,
            student_depths: PRESET_DEPTHS.to_vec(),
            teacher: NetworkConfig::new(PRESET_WIDTH, PRESET_LOGITS, PRESET_TEACHER_DEPTH),
            train: TrainConfig {
                steps,
                lr: PRESET_LR,
                loss,
                seed,
                ..TrainConfig::default()
            },
            student_block: block,
            student_head: head,
        }
        .with_rho(self.default_rho())
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s {
            "exp9" => Preset::Exp9,
            "exp9-1" => Preset::Exp9_1,
            "exp9-3" => Preset::Exp9_3,
            "exp9-4" => Preset::Exp9_4,
            "exp9-6" => Preset::Exp9_6,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESET_NAMES.join(", ")
                )))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp9_plans_288_runs() {
        let s = Preset::Exp9.sweep(0);
        assert_eq!(s.plan().len(), 288);
        assert_eq!(s.teacher.rho(), 0);
        assert_eq!(s.temperatures.len(), 16);
        assert_eq!((s.teacher.width, s.teacher.logit_dim, s.teacher.depth), (32, 128, 128));
    }

    #[test]
    fn presets_round_trip_names() {
        for name in PRESET_NAMES {
            let p: Preset = name.parse().unwrap();
            assert_eq!(p.to_string(), name);
            p.sweep(1).validate().unwrap();
        }
        assert!("exp7".parse::<Preset>().is_err());
    }

    #[test]
    fn preset_specifics() {
        assert_eq!(Preset::Exp9_1.sweep(0).teacher.rho(), 1);
        let s = Preset::Exp9_3.sweep(0);
        assert_eq!(s.train.steps, 80_000);
        assert_eq!(s.student_head, HeadSource::CopiedFromTeacher);
        assert_eq!(Preset::Exp9_4.sweep(0).student_block, BlockKind::SecondOrder);
        assert_eq!(Preset::Exp9_6.sweep(0).train.loss, LossSpec::MseLastHidden);
        assert_eq!(Preset::Exp9_6.sweep(0).with_rho(1).teacher.rho(), 1);
    }
}
