//! Compound learning-rate schedules: base 1e-3, divide-by-10 events, a
//! per-epoch decay, and a per-batch decay whose factor can switch phase
//! partway through training.
//!
//! Two computations of the same quantity exist on purpose. [`current_lr`] is
//! the closed-form product over the counters; [`ScheduleState`] is the
//! event-driven machine the training loop drives. They must agree to 1e-12
//! relative, so the machine keeps its running product in compensated
//! (hi, lo) form rather than letting tens of thousands of sequential
//! multiplications drift.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    /// Fixed divide-by-10 milestones at epochs 100 and 300, per-batch decay
    /// 0.9995 switching to 0.99995 from epoch 100.
    Mnist,
    /// Plateau-triggered divide-by-10 (patience 20 epochs, minimum
    /// improvement 1e-4, at most 2 triggers), per-batch decay 0.99994
    /// throughout.
    Cifar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub mode: ScheduleMode,
    pub base_lr: f64,
    /// Epochs whose start divides the lr by 10 (Mnist mode only).
    pub milestones: Vec<u64>,
    pub per_epoch_decay: f64,
    /// Per-batch factor for epochs before `phase_split`.
    pub batch_decay_early: f64,
    /// Per-batch factor from `phase_split` onward.
    pub batch_decay_late: f64,
    pub phase_split: u64,
    pub plateau_patience: u64,
    pub plateau_min_delta: f64,
    pub plateau_max_divisions: u32,
}

impl ScheduleSpec {
    pub fn mnist() -> Self {
        ScheduleSpec {
            mode: ScheduleMode::Mnist,
            base_lr: 1e-3,
            milestones: vec![100, 300],
            per_epoch_decay: 0.9995,
            batch_decay_early: 0.9995,
            batch_decay_late: 0.99995,
            phase_split: 100,
            plateau_patience: 20,
            plateau_min_delta: 1e-4,
            plateau_max_divisions: 0,
        }
    }

    pub fn cifar() -> Self {
        ScheduleSpec {
            mode: ScheduleMode::Cifar,
            base_lr: 1e-3,
            milestones: Vec::new(),
            per_epoch_decay: 0.9995,
            batch_decay_early: 0.99994,
            batch_decay_late: 0.99994,
            phase_split: 0,
            plateau_patience: 20,
            plateau_min_delta: 1e-4,
            plateau_max_divisions: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::config(format!(
                "base learning rate {} must be positive",
                self.base_lr
            )));
        }
        for (name, f) in [
            ("per_epoch_decay", self.per_epoch_decay),
            ("batch_decay_early", self.batch_decay_early),
            ("batch_decay_late", self.batch_decay_late),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config(format!("{name} {f} outside (0, 1]")));
            }
        }
        Ok(())
    }

    fn batch_factor(&self, epoch: u64) -> f64 {
        if epoch >= self.phase_split {
            self.batch_decay_late
        } else {
            self.batch_decay_early
        }
    }

    fn milestone_divisions(&self, epoch: u64) -> u32 {
        self.milestones.iter().filter(|&&m| epoch >= m).count() as u32
    }
}

/// Closed-form lr for batch `batch_in_epoch` of `epoch`:
/// base · 0.1^divisions · per_epoch^epoch · early^n1 · late^n2, where n1/n2
/// count elapsed batches in the two phases. A milestone at epoch m is in
/// effect for every epoch ≥ m ("divided by 10 after the m-th epoch", with
/// epochs counted from 0). `plateau_divisions` is the number of plateau
/// triggers already in effect and is only consulted in Cifar mode; Mnist
/// divisions are derived from the milestone list.
pub fn current_lr(
    spec: &ScheduleSpec,
    epoch: u64,
    batch_in_epoch: u64,
    batches_per_epoch: u64,
    plateau_divisions: u32,
) -> f64 {
    let divisions = match spec.mode {
        ScheduleMode::Mnist => spec.milestone_divisions(epoch),
        ScheduleMode::Cifar => plateau_divisions.min(spec.plateau_max_divisions),
    };
    let b = batches_per_epoch;
    let (early, late) = if epoch < spec.phase_split {
        (epoch * b + batch_in_epoch, 0)
    } else {
        (
            spec.phase_split * b,
            (epoch - spec.phase_split) * b + batch_in_epoch,
        )
    };
    spec.base_lr
        * 0.1f64.powf(divisions as f64)
        * spec.per_epoch_decay.powf(epoch as f64)
        * spec.batch_decay_early.powf(early as f64)
        * spec.batch_decay_late.powf(late as f64)
}

/// Event-driven schedule state. Drive it with [`ScheduleState::epoch_started`]
/// at every epoch boundary, [`ScheduleState::batch_finished`] after every
/// batch, and [`ScheduleState::validation_measured`] after each epoch's
/// validation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub spec: ScheduleSpec,
    pub(crate) lr_hi: f64,
    pub(crate) lr_lo: f64,
    pub plateau_divisions: u32,
    pub(crate) plateau_best: f64,
    pub(crate) plateau_wait: u64,
    pub(crate) pending_division: bool,
}

impl ScheduleState {
    pub fn new(spec: ScheduleSpec) -> Self {
        ScheduleState {
            lr_hi: spec.base_lr,
            lr_lo: 0.0,
            spec,
            plateau_divisions: 0,
            plateau_best: f64::INFINITY,
            plateau_wait: 0,
            pending_division: false,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr_hi
    }

    /// Multiplies the running lr by `d`, carrying the rounding error of each
    /// step in `lr_lo` (two-product with fused multiply-add, then a fast
    /// two-sum renormalization).
    fn scale(&mut self, d: f64) {
        let p = self.lr_hi * d;
        let e = self.lr_hi.mul_add(d, -p);
        let t = self.lr_lo * d + e;
        self.lr_hi = p + t;
        self.lr_lo = t - (self.lr_hi - p);
    }

    /// Boundary events entering `epoch`: any divide-by-10 first (Mnist
    /// milestone, or a plateau trigger armed by the previous epoch's
    /// validation), then the per-epoch decay. Entering epoch 0 is a no-op.
    pub fn epoch_started(&mut self, epoch: u64) {
        if epoch == 0 {
            return;
        }
        match self.spec.mode {
            ScheduleMode::Mnist => {
                if self.spec.milestones.contains(&epoch) {
                    self.scale(0.1);
                }
            }
            ScheduleMode::Cifar => {
                if self.pending_division {
                    self.scale(0.1);
                    self.pending_division = false;
                }
            }
        }
        self.scale(self.spec.per_epoch_decay);
    }

    pub fn batch_finished(&mut self, epoch: u64) {
        self.scale(self.spec.batch_factor(epoch));
    }

    /// Plateau bookkeeping (Cifar mode; a no-op otherwise). An improvement is
    /// a drop of at least `plateau_min_delta` below the best error seen; after
    /// `plateau_patience` consecutive non-improvements a division is armed for
    /// the next epoch boundary, at most `plateau_max_divisions` times.
    pub fn validation_measured(&mut self, val_error: f64) {
        if self.spec.mode != ScheduleMode::Cifar {
            return;
        }
        if self.plateau_best - val_error >= self.spec.plateau_min_delta {
            self.plateau_best = val_error;
            self.plateau_wait = 0;
        } else {
            self.plateau_wait += 1;
            if self.plateau_wait >= self.spec.plateau_patience
                && self.plateau_divisions < self.spec.plateau_max_divisions
            {
                self.pending_division = true;
                self.plateau_divisions += 1;
                self.plateau_wait = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn epoch_zero_batch_zero_is_exactly_base() {
        for spec in [ScheduleSpec::mnist(), ScheduleSpec::cifar()] {
            assert_eq!(current_lr(&spec, 0, 0, 98, 0), 1e-3);
            assert_eq!(ScheduleState::new(spec).lr(), 1e-3);
        }
    }

    #[test]
    fn epoch_101_includes_one_division() {
        let spec = ScheduleSpec::mnist();
        let b = 98u64;
        let want = 1e-3
            * 0.1
            * 0.9995f64.powf(101.0)
            * 0.9995f64.powf((100 * b) as f64)
            * 0.99995f64.powf(b as f64);
        assert!(rel(current_lr(&spec, 101, 0, b, 0), want) < 1e-12);
    }

    #[test]
    fn division_is_in_effect_from_the_milestone_epoch_itself() {
        let spec = ScheduleSpec::mnist();
        let b = 98u64;
        let at_99 = 1e-3 * 0.9995f64.powf(99.0) * 0.9995f64.powf((99 * b) as f64);
        let at_100 = 1e-3 * 0.1 * 0.9995f64.powf(100.0) * 0.9995f64.powf((100 * b) as f64);
        assert!(rel(current_lr(&spec, 99, 0, b, 0), at_99) < 1e-12);
        assert!(rel(current_lr(&spec, 100, 0, b, 0), at_100) < 1e-12);
    }

    #[test]
    fn epoch_one_batch_zero_is_the_pinned_product() {
        let spec = ScheduleSpec::mnist();
        let want = 1e-3 * 0.9995 * 0.9995f64.powf(98.0);
        assert!(rel(current_lr(&spec, 1, 0, 98, 0), want) < 1e-12);
    }

    #[test]
    fn iterative_matches_closed_form_in_mnist_mode() {
        let spec = ScheduleSpec::mnist();
        let b = 98u64;
        let mut st = ScheduleState::new(spec.clone());
        let mut prev = f64::INFINITY;
        for epoch in 0..=400 {
            st.epoch_started(epoch);
            for batch in 0..b {
                let want = current_lr(&spec, epoch, batch, b, 0);
                assert!(
                    rel(st.lr(), want) < 1e-12,
                    "epoch {epoch} batch {batch}: {} vs {want}",
                    st.lr()
                );
                assert!(st.lr() <= prev, "lr increased at epoch {epoch}");
                prev = st.lr();
                st.batch_finished(epoch);
            }
        }
    }

    #[test]
    fn iterative_matches_closed_form_in_cifar_mode_with_plateaus() {
        // A constant validation error never improves, so divisions are armed
        // when the wait counter first reaches 20 (end of epoch 20, applied
        // entering 21) and again twenty epochs later; the cap stops a third.
        let spec = ScheduleSpec::cifar();
        let b = 79u64;
        let mut st = ScheduleState::new(spec.clone());
        let mut prev = f64::INFINITY;
        for epoch in 0..=400 {
            st.epoch_started(epoch);
            let divisions = if epoch <= 20 {
                0
            } else if epoch <= 40 {
                1
            } else {
                2
            };
            for batch in 0..b {
                let want = current_lr(&spec, epoch, batch, b, divisions);
                assert!(
                    rel(st.lr(), want) < 1e-12,
                    "epoch {epoch} batch {batch}: {} vs {want}",
                    st.lr()
                );
                assert!(st.lr() <= prev, "lr increased at epoch {epoch}");
                prev = st.lr();
                st.batch_finished(epoch);
            }
            st.validation_measured(0.5);
        }
        assert_eq!(st.plateau_divisions, 2);
    }

    #[test]
    fn improvements_hold_the_plateau_off() {
        let mut st = ScheduleState::new(ScheduleSpec::cifar());
        let mut err = 0.9;
        for epoch in 0..200 {
            st.epoch_started(epoch);
            if epoch % 10 == 0 {
                err -= 2e-3;
            }
            st.validation_measured(err);
        }
        assert_eq!(st.plateau_divisions, 0);
    }

    #[test]
    fn sub_threshold_improvements_still_count_as_a_plateau() {
        let mut st = ScheduleState::new(ScheduleSpec::cifar());
        st.validation_measured(0.5);
        for k in 1..=20 {
            st.validation_measured(0.5 - k as f64 * 5e-5 / 20.0);
        }
        assert_eq!(st.plateau_divisions, 1);
    }

    #[test]
    fn mnist_mode_never_divides_on_plateau() {
        let mut st = ScheduleState::new(ScheduleSpec::mnist());
        for epoch in 0..50 {
            st.epoch_started(epoch);
            st.validation_measured(0.5);
        }
        assert_eq!(st.plateau_divisions, 0);
    }

    #[test]
    fn bad_factors_are_rejected() {
        let mut spec = ScheduleSpec::mnist();
        spec.per_epoch_decay = 1.5;
        assert!(spec.validate().is_err());
        spec.per_epoch_decay = 0.9995;
        spec.base_lr = 0.0;
        assert!(spec.validate().is_err());
    }
}
