//! Agent container: header, hyperparameter block and the four networks
//! (actor, critic, actor target, critic target) in the network checkpoint
//! encoding. The replay buffer is not persisted.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Agent, DdpgHyperparams};
use crate::error::{Error, Result};
use crate::nn::{read_exact, read_f64, read_u32, read_u64, read_u8, Mlp};
use crate::optim::OptimizerKind;

pub const AGENT_MAGIC: &[u8; 8] = b"UAMAGENT";
pub const AGENT_FORMAT_VERSION: u32 = 2;

fn put<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes).map_err(|e| Error::io("writing checkpoint", e))
}

impl Agent {
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        let h = &self.hyper;
        put(w, AGENT_MAGIC)?;
        put(w, &AGENT_FORMAT_VERSION.to_le_bytes())?;
        for v in [h.discount, h.tau, h.lr_critic, h.lr_actor] {
            put(w, &v.to_le_bytes())?;
        }
        put(w, &(h.batch_size as u64).to_le_bytes())?;
        for v in [h.epsilon_start, h.epsilon_end, h.epsilon_decay_fraction] {
            put(w, &v.to_le_bytes())?;
        }
        put(w, &(h.learn_start as u64).to_le_bytes())?;
        put(w, &(h.buffer_capacity as u64).to_le_bytes())?;
        put(w, &(h.hidden_layers.len() as u32).to_le_bytes())?;
        for &n in &h.hidden_layers {
            put(w, &(n as u32).to_le_bytes())?;
        }
        put(
            w,
            &[match h.optimizer {
                OptimizerKind::Sgd => 0,
                OptimizerKind::Adam => 1,
            }],
        )?;
        for net in [&self.actor, &self.critic, &self.actor_target, &self.critic_target] {
            net.write_checkpoint(w)?;
        }
        Ok(())
    }

    /// Restore networks and hyperparameters; the replay buffer comes back
    /// empty.
    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic, "agent magic")?;
        if &magic != AGENT_MAGIC {
            return Err(Error::CheckpointMagic(
                String::from_utf8_lossy(&magic).into_owned(),
            ));
        }
        let version = read_u32(r, "agent version")?;
        if version != AGENT_FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: AGENT_FORMAT_VERSION,
            });
        }
        let discount = read_f64(r, "hyperparameters")?;
        let tau = read_f64(r, "hyperparameters")?;
        let lr_critic = read_f64(r, "hyperparameters")?;
        let lr_actor = read_f64(r, "hyperparameters")?;
        let batch_size = read_u64(r, "hyperparameters")? as usize;
        let epsilon_start = read_f64(r, "hyperparameters")?;
        let epsilon_end = read_f64(r, "hyperparameters")?;
        let epsilon_decay_fraction = read_f64(r, "hyperparameters")?;
        let learn_start = read_u64(r, "hyperparameters")? as usize;
        let buffer_capacity = read_u64(r, "hyperparameters")? as usize;
        let n_hidden = read_u32(r, "hyperparameters")? as usize;
        if n_hidden > 64 {
            return Err(Error::CheckpointShape(format!("{n_hidden} hidden layers")));
        }
        let mut hidden_layers = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden_layers.push(read_u32(r, "hyperparameters")? as usize);
        }
        let optimizer = match read_u8(r, "hyperparameters")? {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::Adam,
            t => return Err(Error::CheckpointShape(format!("optimizer tag {t}"))),
        };
        let hyper = DdpgHyperparams {
            discount,
            tau,
            lr_critic,
            lr_actor,
            batch_size,
            epsilon_start,
            epsilon_end,
            epsilon_decay_fraction,
            learn_start,
            buffer_capacity,
            hidden_layers,
            optimizer,
        };
        let actor = Mlp::read_checkpoint(r)?;
        let critic = Mlp::read_checkpoint(r)?;
        let actor_target = Mlp::read_checkpoint(r)?;
        let critic_target = Mlp::read_checkpoint(r)?;
        let hidden = &actor.layer_sizes()[1..actor.layer_sizes().len() - 1];
        if hidden != hyper.hidden_layers.as_slice() {
            return Err(Error::CheckpointShape(format!(
                "hyperparameters list hidden layers {:?}, actor has {hidden:?}",
                hyper.hidden_layers
            )));
        }
        Agent::from_parts(hyper, actor, critic, actor_target, critic_target).map_err(|e| match e {
            Error::ArchitectureMismatch(m) => Error::CheckpointShape(m),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(file);
        self.write_checkpoint(&mut w)?;
        w.flush()
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file =
            File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Self::read_checkpoint(&mut BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airspace::OBSERVATION_DIM;
    use crate::ddpg::Transition;
    use crate::geometry::Vec2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn agent() -> Agent {
        let hyper = DdpgHyperparams {
            hidden_layers: vec![16, 12],
            optimizer: OptimizerKind::Adam,
            ..DdpgHyperparams::default()
        };
        let mut a = Agent::new(hyper, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        // make targets differ from sources
        a.actor_target.soft_update(
            &Agent::new(a.hyper.clone(), &mut ChaCha8Rng::seed_from_u64(22))
                .unwrap()
                .actor,
            0.5,
        )
        .unwrap();
        a
    }

    #[test]
    fn filled_buffer_does_not_leak_into_the_file() {
        let mut a = agent();
        let mut empty = Vec::new();
        a.write_checkpoint(&mut empty).unwrap();
        let s = [0.5; OBSERVATION_DIM];
        for _ in 0..10 {
            a.buffer.push(Transition {
                state: s,
                action: Vec2::new(1.0, 0.0),
                reward: -1.0,
                next_state: s,
                terminal: false,
            });
        }
        let mut filled = Vec::new();
        a.write_checkpoint(&mut filled).unwrap();
        assert_eq!(empty, filled);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let a = agent();
        let mut first = Vec::new();
        a.write_checkpoint(&mut first).unwrap();
        let b = Agent::read_checkpoint(&mut first.as_slice()).unwrap();
        let mut second = Vec::new();
        b.write_checkpoint(&mut second).unwrap();
        assert_eq!(first, second);
        assert_eq!(b.actor, a.actor);
        assert_eq!(b.actor_target, a.actor_target);
        assert_eq!(b.hyper, a.hyper);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let s: [f64; OBSERVATION_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            assert_eq!(a.act(&s).unwrap(), b.act(&s).unwrap());
        }
    }

    #[test]
    fn corrupt_files_give_distinct_errors() {
        let mut bytes = Vec::new();
        agent().write_checkpoint(&mut bytes).unwrap();

        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(
            Agent::read_checkpoint(&mut v.as_slice()),
            Err(Error::CheckpointVersion { found: 9, .. })
        ));

        let mut m = bytes.clone();
        m[0] = b'X';
        assert!(matches!(
            Agent::read_checkpoint(&mut m.as_slice()),
            Err(Error::CheckpointMagic(_))
        ));

        let t = &bytes[..bytes.len() / 2];
        assert!(matches!(
            Agent::read_checkpoint(&mut &t[..]),
            Err(Error::CheckpointTruncated(_))
        ));
    }
}
