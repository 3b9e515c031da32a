//! Which alternatives are tested at each step of a sequential procedure.

use crate::design::RankIndex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanMode {
    /// Linearly independent family: `t_max = ⌊log₂(p−k)⌋`, `1 ≤ k < p`.
    LowDim,
    /// Dependent family: `t_max = ⌊log₂(a_p−k−1)⌋`, `1 ≤ k < a_p−1`.
    HighDim,
}

/// One alternative `S_{k,t}` with `D = 2ᵗ` and residual dimension `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TStep {
    pub t: u32,
    pub d: usize,
    pub n_res: usize,
    /// Ordered columns after `s_k` needed to span `S_{k,t}`.
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    n: usize,
    p: usize,
    mode: PlanMode,
    rank: usize,
    s: Vec<usize>,
}

fn floor_log2(x: usize) -> u32 {
    usize::BITS - 1 - x.leading_zeros()
}

impl StepPlan {
    pub fn lowdim(n: usize, p: usize) -> Self {
        StepPlan { n, p, mode: PlanMode::LowDim, rank: p, s: (0..=p).collect() }
    }

    pub fn highdim(n: usize, p: usize, ranks: &RankIndex) -> Self {
        let rank = ranks.rank();
        let s = (0..=rank).map(|k| ranks.s(k).expect("k within rank")).collect();
        StepPlan { n, p, mode: PlanMode::HighDim, rank, s }
    }

    /// Low-dimensional plan when the family is independent, high-dimensional otherwise.
    pub fn for_family(n: usize, p: usize, ranks: &RankIndex) -> Self {
        if ranks.rank() == p && p < n {
            Self::lowdim(n, p)
        } else {
            Self::highdim(n, p, ranks)
        }
    }

    pub fn mode(&self) -> PlanMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Exclusive upper end of the tested `k`.
    pub fn k_end(&self) -> usize {
        match self.mode {
            PlanMode::LowDim => self.p,
            PlanMode::HighDim => self.rank.saturating_sub(1),
        }
    }

    pub fn ks(&self) -> std::ops::Range<usize> {
        1..self.k_end().max(1)
    }

    /// Number of leading ordered columns spanning `V_k`.
    pub fn s(&self, k: usize) -> usize {
        self.s[k]
    }

    /// Width of the candidate pool `p − k` or `a_p − k − 1` used for `t_max`.
    pub fn pool(&self, k: usize) -> usize {
        match self.mode {
            PlanMode::LowDim => self.p - k,
            PlanMode::HighDim => self.rank - k - 1,
        }
    }

    pub fn t_max(&self, k: usize) -> u32 {
        floor_log2(self.pool(k))
    }

    /// The alternatives of step `k` that leave a positive residual dimension.
    pub fn steps(&self, k: usize) -> Result<Vec<TStep>> {
        if k == 0 || k >= self.k_end() {
            return Err(Error::InvalidInput(format!("step k={k} outside 1..{}", self.k_end())));
        }
        let steps: Vec<TStep> = (0..=self.t_max(k))
            .filter_map(|t| {
                let d = 1usize << t;
                let used = k + d;
                if used >= self.n {
                    return None;
                }
                Some(TStep { t, d, n_res: self.n - used, q: self.s[k + d] - self.s[k] })
            })
            .collect();
        if steps.is_empty() {
            return Err(Error::DegenerateStep { k });
        }
        Ok(steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowdim_ranges() {
        let plan = StepPlan::lowdim(30, 9);
        assert_eq!(plan.ks(), 1..9);
        let st = plan.steps(1).unwrap();
        assert_eq!(st.iter().map(|s| s.d).collect::<Vec<_>>(), vec![1, 2, 4, 8]);
        assert_eq!(st[3].n_res, 30 - 9);
        assert_eq!(plan.steps(8).unwrap().len(), 1);
    }

    #[test]
    fn independent_family_highdim_equals_lowdim_steps() {
        let ri = RankIndex::from_profile((1..=6).collect());
        let hd = StepPlan::highdim(20, 6, &ri);
        assert_eq!(hd.rank(), 6);
        assert_eq!(hd.steps(1).unwrap()[0].q, 1);
        assert_eq!(hd.ks(), 1..5);
    }

    #[test]
    fn duplicated_column_skipped_by_q() {
        let ri = RankIndex::from_profile(vec![1, 2, 2, 3, 4, 5]);
        let hd = StepPlan::highdim(20, 6, &ri);
        let st = hd.steps(2).unwrap();
        assert_eq!(st[0].q, 2);
        assert_eq!(hd.s(2), 2);
        assert_eq!(hd.s(3), 4);
    }

    #[test]
    fn square_rank_caps_k() {
        let ri = RankIndex::from_profile((1..=10).chain(std::iter::repeat(10).take(5)).collect());
        let hd = StepPlan::highdim(10, 15, &ri);
        assert_eq!(hd.ks().last(), Some(8));
        for k in hd.ks() {
            assert!(hd.steps(k).unwrap().iter().all(|s| s.n_res >= 1));
        }
    }

    #[test]
    fn tiny_n_is_degenerate() {
        let plan = StepPlan::lowdim(2, 3);
        assert!(matches!(plan.steps(1), Err(Error::DegenerateStep { k: 1 })));
    }
}
