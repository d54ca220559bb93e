//! Measurement-error corrections for scalar-on-function regression.

mod cls;
mod errcov;
mod ivgmm;
mod mem;
mod simex;

pub use cls::{
    corrected_loss, corrected_loss_dr, corrected_loss_ds2, fit_qr_cls, smoothed_check_loss, ClsCandidate, ClsConfig,
    ClsResult,
};
pub use errcov::{estimate_error_cov_iv, estimate_sigma_u_replicates, ErrorCov, IvCovOptions};
pub use ivgmm::{fit_lr_ivgmm, BootstrapBand, IvGmmOptions, IvGmmResult};
pub use mem::{gauss_hermite, me_glm_mem, mem_substitute, MemFamily, MemMethod, MemOptions, MemResult};
pub use simex::{extrapolate, fit_qr_simex, Extrapolant, SimexConfig, SimexResult};

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::fda::{Domain, FunctionalSample};

/// `J` replicate curves per subject on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicatedSurrogate {
    reps: Vec<FunctionalSample>,
}

impl ReplicatedSurrogate {
    pub fn new(reps: Vec<FunctionalSample>) -> Result<Self> {
        let Some(first) = reps.first() else {
            return invalid("at least one replicate is required");
        };
        for r in &reps[1..] {
            if r.dim() != first.dim() || !r.same_grid(first) {
                return invalid("replicates must share the sample size, grid and domain");
            }
        }
        Ok(Self { reps })
    }

    pub fn n(&self) -> usize {
        self.reps[0].dim().0
    }

    pub fn m(&self) -> usize {
        self.reps[0].dim().1
    }

    pub fn j(&self) -> usize {
        self.reps.len()
    }

    pub fn domain(&self) -> Domain {
        self.reps[0].domain()
    }

    pub fn t_points(&self) -> &[f64] {
        self.reps[0].t_points()
    }

    pub fn replicate(&self, j: usize) -> &FunctionalSample {
        &self.reps[j]
    }

    pub fn replicates(&self) -> &[FunctionalSample] {
        &self.reps
    }

    /// Per-subject replicate means, computed as `W_1 + sum_j (W_j - W_1) / J`
    /// so identical replicates average to themselves exactly.
    pub fn mean(&self) -> FunctionalSample {
        let base = self.reps[0].x();
        let jf = self.j() as f64;
        let mut acc = DMatrix::<f64>::zeros(self.n(), self.m());
        for r in &self.reps[1..] {
            acc += r.x() - base;
        }
        let x = base + acc / jf;
        self.reps[0].with_values(x).expect("same shape")
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            reps: self.reps.iter().map(|r| r.select_rows(rows)).collect(),
        }
    }

    pub(crate) fn require_replicates(&self, what: &str) -> Result<()> {
        if self.j() < 2 {
            return invalid(format!("{what} needs at least two replicates per subject, got {}", self.j()));
        }
        Ok(())
    }
}
