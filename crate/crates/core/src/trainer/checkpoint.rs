//! Binary snapshot of the full training state.

use std::io::{self, Read, Write};

use crate::balancer::BalancerState;
use crate::network::NetworkParams;
use crate::persist;

use super::{EpochRecord, Phase, TrainHistory};

const CHECKPOINT_MAGIC: &[u8; 8] = b"ADCCKPT1";
const MAX_COUNT: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct BestSnapshot {
    pub params: NetworkParams,
    pub balancer: BalancerState,
    pub epoch: usize,
    pub validation_ndcg: f64,
}

/// Everything needed to continue a run: parameters, balancer, optimizer
/// velocity, early-stopping bookkeeping and the history so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Configuration text the run was started with.
    pub config: String,
    pub seed: u64,
    pub phase: Phase,
    /// Completed epochs in `phase`.
    pub epoch: usize,
    /// Optimizer steps taken across both phases.
    pub step: u64,
    pub finished: bool,
    pub params: NetworkParams,
    pub balancer: BalancerState,
    pub velocity: Vec<Vec<f64>>,
    pub best: Option<BestSnapshot>,
    pub since_best: usize,
    pub history: TrainHistory,
    pub telemetry: Vec<String>,
}

fn write_record<W: Write>(w: &mut W, r: &EpochRecord) -> io::Result<()> {
    persist::write_u64(w, r.phase as u64)?;
    persist::write_u64(w, r.epoch as u64)?;
    persist::write_f64s(w, &r.losses)?;
    persist::write_f64(w, r.cross)?;
    persist::write_f64(w, r.validation_ndcg)?;
    persist::write_f64s(w, &r.weights)?;
    for v in [r.batches, r.skipped_batches, r.skipped_users] {
        persist::write_u64(w, v as u64)?;
    }
    Ok(())
}

fn read_phase<R: Read>(r: &mut R) -> io::Result<Phase> {
    match persist::read_u64(r)? {
        0 => Ok(Phase::Pretrain),
        1 => Ok(Phase::Train),
        v => Err(persist::invalid(format!("unknown phase {v}"))),
    }
}

fn read_record<R: Read>(r: &mut R) -> io::Result<EpochRecord> {
    Ok(EpochRecord {
        phase: read_phase(r)?,
        epoch: persist::read_u64(r)? as usize,
        losses: persist::read_f64s(r)?,
        cross: persist::read_f64(r)?,
        validation_ndcg: persist::read_f64(r)?,
        weights: persist::read_f64s(r)?,
        batches: persist::read_u64(r)? as usize,
        skipped_batches: persist::read_u64(r)? as usize,
        skipped_users: persist::read_u64(r)? as usize,
    })
}

fn write_records<W: Write>(w: &mut W, records: &[EpochRecord]) -> io::Result<()> {
    persist::write_u64(w, records.len() as u64)?;
    records.iter().try_for_each(|r| write_record(w, r))
}

fn read_records<R: Read>(r: &mut R) -> io::Result<Vec<EpochRecord>> {
    let n = persist::read_len(r, MAX_COUNT)?;
    (0..n).map(|_| read_record(r)).collect()
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let w = &mut w;
        w.write_all(CHECKPOINT_MAGIC)?;
        persist::write_str(w, &self.config)?;
        persist::write_u64(w, self.seed)?;
        persist::write_u64(w, self.phase as u64)?;
        persist::write_u64(w, self.epoch as u64)?;
        persist::write_u64(w, self.step)?;
        persist::write_u64(w, self.finished as u64)?;
        persist::write_u64(w, self.since_best as u64)?;
        self.params.write_to(&mut *w)?;
        self.balancer.write_to(&mut *w)?;
        persist::write_u64(w, self.velocity.len() as u64)?;
        self.velocity.iter().try_for_each(|v| persist::write_f64s(w, v))?;
        match &self.best {
            Some(b) => {
                persist::write_u64(w, 1)?;
                b.params.write_to(&mut *w)?;
                b.balancer.write_to(&mut *w)?;
                persist::write_u64(w, b.epoch as u64)?;
                persist::write_f64(w, b.validation_ndcg)?;
            }
            None => persist::write_u64(w, 0)?,
        }
        write_records(w, &self.history.pretrain)?;
        write_records(w, &self.history.epochs)?;
        persist::write_f64s(w, &self.history.wall_clock)?;
        persist::write_u64(w, self.history.best_epoch.map_or(0, |e| e as u64 + 1))?;
        persist::write_u64(w, self.history.stopped_early as u64)?;
        persist::write_u64(w, self.telemetry.len() as u64)?;
        self.telemetry.iter().try_for_each(|t| persist::write_str(w, t))
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        let r = &mut r;
        persist::expect_magic(r, CHECKPOINT_MAGIC)?;
        let config = persist::read_str(r)?;
        let seed = persist::read_u64(r)?;
        let phase = read_phase(r)?;
        let epoch = persist::read_u64(r)? as usize;
        let step = persist::read_u64(r)?;
        let finished = persist::read_u64(r)? != 0;
        let since_best = persist::read_u64(r)? as usize;
        let params = NetworkParams::read_from(&mut *r)?;
        let balancer = BalancerState::read_from(&mut *r)?;
        let n = persist::read_len(r, MAX_COUNT)?;
        let velocity = (0..n).map(|_| persist::read_f64s(r)).collect::<io::Result<Vec<_>>>()?;
        let best = match persist::read_u64(r)? {
            0 => None,
            _ => Some(BestSnapshot {
                params: NetworkParams::read_from(&mut *r)?,
                balancer: BalancerState::read_from(&mut *r)?,
                epoch: persist::read_u64(r)? as usize,
                validation_ndcg: persist::read_f64(r)?,
            }),
        };
        let pretrain = read_records(r)?;
        let epochs = read_records(r)?;
        let wall_clock = persist::read_f64s(r)?;
        let best_epoch = match persist::read_u64(r)? {
            0 => None,
            e => Some(e as usize - 1),
        };
        let stopped_early = persist::read_u64(r)? != 0;
        let n = persist::read_len(r, MAX_COUNT)?;
        let telemetry = (0..n).map(|_| persist::read_str(r)).collect::<io::Result<Vec<_>>>()?;
        let shapes_match = velocity.len() == params.tensors().len()
            && velocity.iter().zip(params.tensors()).all(|(v, t)| v.len() == t.len());
        if !shapes_match {
            return Err(persist::invalid("optimizer state does not match the parameters"));
        }
        Ok(Checkpoint {
            config,
            seed,
            phase,
            epoch,
            step,
            finished,
            params,
            balancer,
            velocity,
            best,
            since_best,
            history: TrainHistory {
                pretrain,
                epochs,
                wall_clock,
                best_epoch,
                stopped_early,
            },
            telemetry,
        })
    }

    /// Depth, widths, γ, weights and balancer iteration, for display.
    pub fn header(&self) -> String {
        format!(
            "p={} d={} h={} widths={:?} gamma={} weights={:?} iteration={} phase={} epoch={}",
            self.params.n_domains(),
            self.params.dim(),
            self.params.depth(),
            self.params.widths(),
            self.balancer.gamma(),
            self.balancer.weights(),
            self.balancer.iteration(),
            self.phase,
            self.epoch
        )
    }
}
