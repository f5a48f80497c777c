//! Component-wise gradient analytics.
//!
//! Each parameter index is assigned to a group from the ratio
//! `r_i = g_sam[i] / g_sgd[i]`:
//!
//! | group | condition       | meaning                       |
//! |-------|-----------------|-------------------------------|
//! | A     | `r >= 1`        | SAM enlarges the component    |
//! | B     | `0 <= r < 1`    | SAM shrinks the component     |
//! | C     | `r < 0`         | SAM reverses the component    |
//!
//! Components with `g_sgd[i] == 0` have no ratio and sit in `undefined`.
//!
//! The dominance statistics look at indices where the clean and noisy
//! sub-batch gradients disagree in sign and ask which of the two the full
//! gradient follows.

use crate::error::{Error, Result};
use crate::model::{self, Batch, ModelSpec, ParamVector};
use crate::optim;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupPartition {
    pub set_a: Vec<usize>,
    pub set_b: Vec<usize>,
    pub set_c: Vec<usize>,
    pub undefined: Vec<usize>,
}

impl GroupPartition {
    pub fn len(&self) -> usize {
        self.set_a.len() + self.set_b.len() + self.set_c.len() + self.undefined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    A,
    B,
    C,
}

/// Group of a single defined ratio.
pub fn classify(ratio: f64) -> Group {
    if ratio >= 1.0 {
        Group::A
    } else if ratio >= 0.0 {
        Group::B
    } else {
        Group::C
    }
}

pub fn partition_groups(ratio: &[Option<f64>]) -> GroupPartition {
    let mut p = GroupPartition::default();
    for (i, r) in ratio.iter().enumerate() {
        match r.map(classify) {
            Some(Group::A) => p.set_a.push(i),
            Some(Group::B) => p.set_b.push(i),
            Some(Group::C) => p.set_c.push(i),
            None => p.undefined.push(i),
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupFractions {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub undefined: f64,
}

pub fn group_fractions(partition: &GroupPartition, d: usize) -> Result<GroupFractions> {
    if d == 0 {
        return Err(Error::InvalidSpec("group fractions over zero parameters".into()));
    }
    if partition.len() != d {
        return Err(Error::Shape {
            what: "partition",
            expected: d,
            found: partition.len(),
        });
    }
    let d = d as f64;
    Ok(GroupFractions {
        a: partition.set_a.len() as f64 / d,
        b: partition.set_b.len() as f64 / d,
        c: partition.set_c.len() as f64 / d,
        undefined: partition.undefined.len() as f64 / d,
    })
}

/// Which group gets its SAM values replaced by SGD values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HybridKind {
    SgdGrA,
    SgdGrB,
}

/// SAM gradient with the SGD values substituted on group A or group B.
pub fn hybrid_gradient(g_sgd: &[f64], g_sam: &[f64], partition: &GroupPartition, kind: HybridKind) -> ParamVector {
    let mut out = g_sam.to_vec();
    let target = match kind {
        HybridKind::SgdGrA => &partition.set_a,
        HybridKind::SgdGrB => &partition.set_b,
    };
    for &i in target {
        out[i] = g_sgd[i];
    }
    ParamVector::from(out)
}

/// Opposing set `s_o` and its clean-/noise-dominated subsets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DominanceSets {
    pub s_o: Vec<usize>,
    pub s_c: Vec<usize>,
    pub s_n: Vec<usize>,
}

const ADDITIVITY_TOLERANCE: f64 = 1e-9;

pub fn dominance_sets(g_clean: &[f64], g_noise: &[f64], g_sgd: &[f64]) -> Result<DominanceSets> {
    if g_clean.len() != g_noise.len() {
        return Err(Error::LengthMismatch {
            left: g_clean.len(),
            right: g_noise.len(),
        });
    }
    if g_clean.len() != g_sgd.len() {
        return Err(Error::LengthMismatch {
            left: g_clean.len(),
            right: g_sgd.len(),
        });
    }
    let mut sets = DominanceSets::default();
    for (i, ((&c, &n), &g)) in g_clean.iter().zip(g_noise).zip(g_sgd).enumerate() {
        let residual = (g - (c + n)).abs();
        if residual.is_nan() || residual > ADDITIVITY_TOLERANCE * g.abs().max(1.0) {
            return Err(Error::Additivity { index: i, residual });
        }
        if c * n < 0.0 {
            sets.s_o.push(i);
            if c * g > 0.0 {
                sets.s_c.push(i);
            } else if n * g > 0.0 {
                sets.s_n.push(i);
            }
        }
    }
    Ok(sets)
}

/// Group-B prevalence among clean- versus noise-dominated components.
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub s_o: Vec<usize>,
    pub s_c: Vec<usize>,
    pub s_n: Vec<usize>,
    /// `|s_c ∩ B| / |s_c|`, undefined when `s_c` is empty.
    pub p_clean: Option<f64>,
    /// `|s_n ∩ B| / |s_n|`, undefined when `s_n` is empty.
    pub p_noise: Option<f64>,
    /// `p_noise / p_clean`, undefined unless both exist and `p_clean > 0`.
    pub pr: Option<f64>,
}

pub fn pr_ratio(sets: DominanceSets, set_b: &[usize]) -> DominanceReport {
    let in_b = |i: &usize| set_b.binary_search(i).is_ok();
    let proportion = |s: &[usize]| {
        (!s.is_empty()).then(|| s.iter().filter(|i| in_b(i)).count() as f64 / s.len() as f64)
    };
    let p_clean = proportion(&sets.s_c);
    let p_noise = proportion(&sets.s_n);
    let pr = match (p_clean, p_noise) {
        (Some(c), Some(n)) if c > 0.0 => Some(n / c),
        _ => None,
    };
    DominanceReport {
        s_o: sets.s_o,
        s_c: sets.s_c,
        s_n: sets.s_n,
        p_clean,
        p_noise,
        pr,
    }
}

/// Group and dominance statistics at one parameter snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDiagnostics {
    pub fractions: GroupFractions,
    /// `None` when the probe carries no ground-truth noise flags.
    pub dominance: Option<DominanceReport>,
}

/// Evaluates the group split and, when `truth_known`, the dominance report on
/// a probe batch.
pub fn probe(params: &ParamVector, batch: &Batch, spec: &ModelSpec, rho: f64, truth_known: bool) -> Result<ProbeDiagnostics> {
    let (g_sgd, g_sam) = optim::sam_gradient(params, batch, spec, rho)?;
    let partition = partition_groups(&optim::component_ratio(&g_sam, &g_sgd)?);
    let fractions = group_fractions(&partition, params.len())?;
    let dominance = if truth_known {
        let (g_clean, g_noise) = model::split_gradient(params, batch, spec)?;
        Some(pr_ratio(dominance_sets(&g_clean, &g_noise, &g_sgd)?, &partition.set_b))
    } else {
        None
    };
    Ok(ProbeDiagnostics { fractions, dominance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_applies_boundaries() {
        let p = partition_groups(&[Some(1.5), Some(0.5), Some(-0.4), Some(1.0)]);
        assert_eq!(p.set_a, vec![0, 3]);
        assert_eq!(p.set_b, vec![1]);
        assert_eq!(p.set_c, vec![2]);
        assert!(p.undefined.is_empty());
        let f = group_fractions(&p, 4).unwrap();
        assert_eq!((f.a, f.b, f.c, f.undefined), (0.5, 0.25, 0.25, 0.0));
    }

    #[test]
    fn ratio_zero_is_group_b_and_one_is_group_a() {
        assert_eq!(classify(0.0), Group::B);
        assert_eq!(classify(-0.0), Group::B);
        assert_eq!(classify(1.0), Group::A);
        assert_eq!(classify(f64::INFINITY), Group::A);
        assert_eq!(classify(f64::NEG_INFINITY), Group::C);
    }

    #[test]
    fn unit_ratios_fill_group_a() {
        let p = partition_groups(&[Some(1.0); 5]);
        assert_eq!(p.set_a.len(), 5);
        assert_eq!(group_fractions(&p, 5).unwrap().c, 0.0);
    }

    #[test]
    fn fractions_need_parameters() {
        assert!(group_fractions(&GroupPartition::default(), 0).is_err());
    }

    #[test]
    fn hybrid_substitutes_on_target_group() {
        let g_sgd = [2.0, -1.0, 0.5, 1.0];
        let g_sam = [3.0, -0.5, -0.2, 1.0];
        let p = partition_groups(&[Some(1.5), Some(0.5), Some(-0.4), Some(1.0)]);
        assert_eq!(hybrid_gradient(&g_sgd, &g_sam, &p, HybridKind::SgdGrB).as_slice(), &[3.0, -1.0, -0.2, 1.0]);
        assert_eq!(hybrid_gradient(&g_sgd, &g_sam, &p, HybridKind::SgdGrA).as_slice(), &[2.0, -0.5, -0.2, 1.0]);
        let empty = GroupPartition::default();
        assert_eq!(hybrid_gradient(&g_sgd, &g_sam, &empty, HybridKind::SgdGrB).as_slice(), &g_sam);
    }

    #[test]
    fn dominance_sign_arithmetic() {
        let s = dominance_sets(&[1.0, -2.0], &[-0.4, 1.0], &[0.6, -1.0]).unwrap();
        assert_eq!(s.s_o, vec![0, 1]);
        assert_eq!(s.s_c, vec![0, 1]);
        assert!(s.s_n.is_empty());

        let s = dominance_sets(&[1.0], &[-3.0], &[-2.0]).unwrap();
        assert_eq!(s.s_n, vec![0]);
        assert!(s.s_c.is_empty());
    }

    #[test]
    fn zero_aggregate_belongs_to_neither_side() {
        let s = dominance_sets(&[1.0], &[-1.0], &[0.0]).unwrap();
        assert_eq!(s.s_o, vec![0]);
        assert!(s.s_c.is_empty() && s.s_n.is_empty());
    }

    #[test]
    fn dominance_rejects_non_additive_inputs() {
        assert!(matches!(
            dominance_sets(&[1.0, 2.0], &[1.0, 2.0], &[2.0, 5.0]),
            Err(Error::Additivity { index: 1, .. })
        ));
        assert!(dominance_sets(&[1.0], &[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn pr_counts_group_b_shares() {
        let sets = DominanceSets {
            s_o: (0..6).collect(),
            s_c: vec![0, 1, 2, 3],
            s_n: vec![4, 5],
        };
        let r = pr_ratio(sets, &[1, 4, 5]);
        assert_eq!(r.p_clean, Some(0.25));
        assert_eq!(r.p_noise, Some(1.0));
        assert_eq!(r.pr, Some(4.0));
    }

    #[test]
    fn pr_undefined_cases() {
        let no_noise = DominanceSets {
            s_o: vec![0, 1],
            s_c: vec![0, 1],
            s_n: vec![],
        };
        let r = pr_ratio(no_noise, &[0]);
        assert_eq!(r.p_noise, None);
        assert_eq!(r.pr, None);

        let both = DominanceSets {
            s_o: vec![0, 1],
            s_c: vec![0],
            s_n: vec![1],
        };
        let r = pr_ratio(both, &[]);
        assert_eq!((r.p_clean, r.p_noise, r.pr), (Some(0.0), Some(0.0), None));
    }
}
