//! Uplink compression: per-layer top-S sparsification with an error-feedback
//! memory.
//!
//! For a client with memory `m` and accumulated local update `a`,
//! `g = top_S(m + a)` is transmitted and `m ← m + a − g` is retained. Kept
//! entries are moved out of the working vector rather than recomputed, so
//! `m_next + densify(g) == m + a` holds exactly, element by element.

use std::cmp::Ordering;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Kept entries of one layer, indices relative to the layer slice and
/// strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseLayer {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseLayer {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// Sparse local update `g_k` as sent by a client.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseUpdate {
    pub layers: Vec<SparseLayer>,
    pub origin_round: u64,
}

impl SparseUpdate {
    pub fn empty(layer_count: usize, origin_round: u64) -> Self {
        Self {
            layers: vec![SparseLayer::default(); layer_count],
            origin_round,
        }
    }

    pub fn total_nnz(&self) -> usize {
        self.layers.iter().map(SparseLayer::nnz).sum()
    }

    /// Wire cost in value-count units: one index plus one value per entry.
    pub fn wire_entries(&self) -> usize {
        2 * self.total_nnz()
    }

    /// Visits `(flat index, value)` in ascending flat order.
    pub fn for_each_entry<F: FnMut(usize, f64)>(&self, boundaries: &[(usize, usize)], mut f: F) {
        for (layer, &(offset, _)) in self.layers.iter().zip(boundaries) {
            for (&i, &v) in layer.indices.iter().zip(&layer.values) {
                f(offset + i as usize, v);
            }
        }
    }

    /// Binary form: `u32` layer count, then per layer `u32` nnz,
    /// `u32` indices, `f64` values, all little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            w.write_all(&(layer.nnz() as u32).to_le_bytes())?;
            for i in &layer.indices {
                w.write_all(&i.to_le_bytes())?;
            }
            for v in &layer.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, origin_round: u64) -> Result<Self> {
        let truncated = |_| Error::format("sparse update", "truncated");
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(truncated)?;
        let count = u32::from_le_bytes(b4) as usize;
        let mut layers = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            r.read_exact(&mut b4).map_err(truncated)?;
            let nnz = u32::from_le_bytes(b4) as usize;
            let mut layer = SparseLayer {
                indices: Vec::with_capacity(nnz.min(1 << 20)),
                values: Vec::with_capacity(nnz.min(1 << 20)),
            };
            for _ in 0..nnz {
                r.read_exact(&mut b4).map_err(truncated)?;
                let idx = u32::from_le_bytes(b4);
                if layer.indices.last().is_some_and(|&last| last >= idx) {
                    return Err(Error::format("sparse update", "indices not strictly increasing"));
                }
                layer.indices.push(idx);
            }
            for _ in 0..nnz {
                r.read_exact(&mut b8).map_err(truncated)?;
                layer.values.push(f64::from_le_bytes(b8));
            }
            layers.push(layer);
        }
        Ok(Self {
            layers,
            origin_round,
        })
    }
}

/// Dense residual `m_k` held by client `owner`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMemory {
    pub owner: usize,
    pub residual: Vec<f64>,
}

impl ErrorMemory {
    pub fn new(owner: usize, len: usize) -> Self {
        Self {
            owner,
            residual: vec![0.0; len],
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.residual.iter().map(|v| v * v).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.residual.iter().all(|&v| v == 0.0)
    }
}

/// Splits a total budget `s` across layers in proportion to their length,
/// rounding by largest remainder (ties to the lower layer index).
pub fn allocate_budget(s: usize, layer_lengths: &[usize]) -> Result<Vec<usize>> {
    let n: usize = layer_lengths.iter().sum();
    if s > n {
        return Err(Error::InvalidArgument(format!(
            "budget {s} exceeds parameter count {n}"
        )));
    }
    if n == 0 {
        return Ok(vec![0; layer_lengths.len()]);
    }
    let (s, n128) = (s as u128, n as u128);
    let mut alloc: Vec<usize> = Vec::with_capacity(layer_lengths.len());
    let mut remainders: Vec<(u128, usize)> = Vec::with_capacity(layer_lengths.len());
    for (i, &len) in layer_lengths.iter().enumerate() {
        let q = s * len as u128;
        alloc.push((q / n128) as usize);
        remainders.push((q % n128, i));
    }
    let mut left = s as usize - alloc.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &remainders {
        if left == 0 {
            break;
        }
        if alloc[i] < layer_lengths[i] {
            alloc[i] += 1;
            left -= 1;
        }
    }
    Ok(alloc)
}

/// Magnitude ranking: larger `|v|` first, then lower index.
#[inline]
fn rank(v: &[f64], a: usize, b: usize) -> Ordering {
    v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b))
}

/// Per-layer top-S selection. Returns the kept entries and the residual
/// (the input with kept entries zeroed). Exact zeros are never transmitted.
pub fn top_s_sparsify(
    v: &[f64],
    boundaries: &[(usize, usize)],
    budget: &[usize],
    origin_round: u64,
) -> Result<(SparseUpdate, Vec<f64>)> {
    if budget.len() != boundaries.len() {
        return Err(Error::Length {
            expected: boundaries.len(),
            actual: budget.len(),
        });
    }
    let n: usize = boundaries.iter().map(|&(_, l)| l).sum();
    if v.len() != n {
        return Err(Error::Length {
            expected: n,
            actual: v.len(),
        });
    }
    let mut residual = v.to_vec();
    let mut layers = Vec::with_capacity(boundaries.len());
    for (layer, (&(offset, len), &s)) in boundaries.iter().zip(budget).enumerate() {
        if s > len {
            return Err(Error::Budget { layer, budget: s, len });
        }
        let slice = &v[offset..offset + len];
        let mut candidates: Vec<usize> = (0..len).filter(|&i| slice[i] != 0.0).collect();
        if s < candidates.len() {
            if s == 0 {
                candidates.clear();
            } else {
                candidates.select_nth_unstable_by(s - 1, |&a, &b| rank(slice, a, b));
                candidates.truncate(s);
            }
        }
        candidates.sort_unstable();
        let mut kept = SparseLayer {
            indices: Vec::with_capacity(candidates.len()),
            values: Vec::with_capacity(candidates.len()),
        };
        for i in candidates {
            kept.indices.push(i as u32);
            kept.values.push(slice[i]);
            residual[offset + i] = 0.0;
        }
        layers.push(kept);
    }
    Ok((
        SparseUpdate {
            layers,
            origin_round,
        },
        residual,
    ))
}

/// Scatter of a sparse update into a dense length-`N` vector.
pub fn densify(sparse: &SparseUpdate, boundaries: &[(usize, usize)]) -> Result<Vec<f64>> {
    if sparse.layers.len() != boundaries.len() {
        return Err(Error::Length {
            expected: boundaries.len(),
            actual: sparse.layers.len(),
        });
    }
    let n: usize = boundaries.iter().map(|&(_, l)| l).sum();
    let mut out = vec![0.0; n];
    for (layer, (kept, &(offset, len))) in sparse.layers.iter().zip(boundaries).enumerate() {
        for (&i, &val) in kept.indices.iter().zip(&kept.values) {
            let i = i as usize;
            if i >= len {
                return Err(Error::IndexOutOfRange { layer, index: i, len });
            }
            out[offset + i] = val;
        }
    }
    Ok(out)
}

/// `g = top_S(m + a)`, `m' = m + a − g`.
pub fn build_local_update(
    accum: &[f64],
    memory: &ErrorMemory,
    boundaries: &[(usize, usize)],
    budget: &[usize],
    origin_round: u64,
) -> Result<(SparseUpdate, ErrorMemory)> {
    if accum.len() != memory.residual.len() {
        return Err(Error::Length {
            expected: memory.residual.len(),
            actual: accum.len(),
        });
    }
    let corrected: Vec<f64> = memory.residual.iter().zip(accum).map(|(m, a)| m + a).collect();
    let (g, residual) = top_s_sparsify(&corrected, boundaries, budget, origin_round)?;
    Ok((
        g,
        ErrorMemory {
            owner: memory.owner,
            residual,
        },
    ))
}

pub fn reset_memory(memory: &ErrorMemory) -> ErrorMemory {
    ErrorMemory::new(memory.owner, memory.residual.len())
}

/// Upper bound on `E‖m_k‖²`: `4(1−δ)/δ² · η₀² E_c² G_k²` for `δ = S/N ∈ (0, 1]`.
pub fn memory_bound(eta0: f64, local_steps: usize, grad_bound: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sparsity ratio {delta} outside (0, 1]"
        )));
    }
    let e = local_steps as f64;
    Ok(4.0 * (1.0 - delta) / (delta * delta) * eta0 * eta0 * e * e * grad_bound * grad_bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_layer(n: usize) -> Vec<(usize, usize)> {
        vec![(0, n)]
    }

    fn kept(u: &SparseUpdate) -> Vec<(u32, f64)> {
        u.layers[0].indices.iter().copied().zip(u.layers[0].values.iter().copied()).collect()
    }

    #[test]
    fn magnitude_ranking_example() {
        let v = [0.5, -2.0, 0.1, 1.5];
        let (g, r) = top_s_sparsify(&v, &one_layer(4), &[2], 0).unwrap();
        assert_eq!(kept(&g), vec![(1, -2.0), (3, 1.5)]);
        assert_eq!(r, vec![0.5, 0.0, 0.1, 0.0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let (g, _) = top_s_sparsify(&[1.0, -1.0, 1.0], &one_layer(3), &[2], 0).unwrap();
        assert_eq!(g.layers[0].indices, vec![0, 1]);
    }

    #[test]
    fn budget_larger_than_layer_is_rejected() {
        let r = top_s_sparsify(&[1.0, 2.0], &one_layer(2), &[3], 0);
        assert!(matches!(r, Err(Error::Budget { layer: 0, budget: 3, len: 2 })));
    }

    #[test]
    fn build_update_examples() {
        let mem = ErrorMemory::new(4, 4);
        let (g, m) = build_local_update(&[0.5, -2.0, 0.1, 1.5], &mem, &one_layer(4), &[2], 3).unwrap();
        assert_eq!(kept(&g), vec![(1, -2.0), (3, 1.5)]);
        assert_eq!(g.origin_round, 3);
        assert_eq!(m.residual, vec![0.5, 0.0, 0.1, 0.0]);
        assert_eq!(m.owner, 4);

        let (g, m) = build_local_update(&[0.5, -2.0, 0.1, 1.5], &mem, &one_layer(4), &[4], 0).unwrap();
        assert_eq!(densify(&g, &one_layer(4)).unwrap(), vec![0.5, -2.0, 0.1, 1.5]);
        assert!(m.is_zero());

        assert!(build_local_update(&[1.0], &mem, &one_layer(4), &[1], 0).is_err());
    }

    #[test]
    fn reset_then_update_behaves_like_fresh_client() {
        let mut mem = ErrorMemory::new(0, 3);
        mem.residual = vec![9.0, -9.0, 1.0];
        let fresh = reset_memory(&mem);
        assert!(fresh.is_zero());
        let a = [0.3, -0.1, 0.2];
        let from_reset = build_local_update(&a, &fresh, &one_layer(3), &[1], 0).unwrap();
        let from_new = build_local_update(&a, &ErrorMemory::new(0, 3), &one_layer(3), &[1], 0).unwrap();
        assert_eq!(from_reset, from_new);
    }

    #[test]
    fn densify_examples() {
        let b = [(0, 3), (3, 2)];
        assert_eq!(densify(&SparseUpdate::empty(2, 0), &b).unwrap(), vec![0.0; 5]);
        let mut u = SparseUpdate::empty(2, 0);
        u.layers[1] = SparseLayer {
            indices: vec![1],
            values: vec![7.0],
        };
        assert_eq!(densify(&u, &b).unwrap(), vec![0.0, 0.0, 0.0, 0.0, 7.0]);
        u.layers[1].indices = vec![2];
        assert!(matches!(densify(&u, &b), Err(Error::IndexOutOfRange { layer: 1, index: 2, len: 2 })));
    }

    #[test]
    fn budget_allocation() {
        assert_eq!(allocate_budget(4, &[5, 5]).unwrap(), vec![2, 2]);
        assert_eq!(allocate_budget(3, &[5, 5]).unwrap(), vec![2, 1]);
        assert_eq!(allocate_budget(10, &[3, 7]).unwrap(), vec![3, 7]);
        assert_eq!(allocate_budget(0, &[3, 7]).unwrap(), vec![0, 0]);
        // quotas 54.4, 825.7, 1644.9
        let a = allocate_budget(2525, &[136, 2064, 4112]).unwrap();
        assert_eq!(a.iter().sum::<usize>(), 2525);
        assert_eq!(a, vec![54, 826, 1645]);
        assert!(allocate_budget(11, &[3, 7]).is_err());
    }

    #[test]
    fn memory_bound_examples() {
        assert_eq!(memory_bound(0.01, 3, 1.0, 1.0).unwrap(), 0.0);
        let b = memory_bound(0.01, 3, 1.0, 0.5).unwrap();
        assert!((b - 7.2e-3).abs() < 1e-15);
        assert!(memory_bound(0.01, 3, 1.0, 0.0).is_err());
        assert!(memory_bound(0.01, 3, 1.0, 1.5).is_err());
    }

    #[test]
    fn binary_form() {
        let (g, _) = top_s_sparsify(&[0.0, 3.0, -1.0, 2.0, 0.5], &[(0, 2), (2, 3)], &[1, 2], 9).unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        // 4 + (4 + 4 + 8) + (4 + 8 + 16)
        assert_eq!(buf.len(), 48);
        assert_eq!(SparseUpdate::read_from(buf.as_slice(), 9).unwrap(), g);
        assert!(SparseUpdate::read_from(&buf[..20], 9).is_err());
    }

    fn oracle_top_s(v: &[f64], s: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[b].abs().partial_cmp(&v[a].abs()).unwrap().then(a.cmp(&b)));
        let mut top: Vec<usize> = order.into_iter().take(s).filter(|&i| v[i] != 0.0).collect();
        top.sort();
        top
    }

    proptest! {
        #[test]
        fn matches_sort_oracle_and_is_exact(
            v in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), Just(-1.0), -5.0f64..5.0], 1..200),
            frac in 0.0f64..=1.0,
        ) {
            let s = ((v.len() as f64) * frac).floor() as usize;
            let (g, r) = top_s_sparsify(&v, &one_layer(v.len()), &[s], 0).unwrap();
            let picked: Vec<usize> = g.layers[0].indices.iter().map(|&i| i as usize).collect();
            prop_assert_eq!(picked, oracle_top_s(&v, s));
            prop_assert!(g.total_nnz() <= s);
            let d = densify(&g, &one_layer(v.len())).unwrap();
            prop_assert_eq!(d.iter().filter(|&&x| x != 0.0).count(), g.total_nnz());
            for i in 0..v.len() {
                prop_assert!(d[i] + r[i] == v[i]);
            }
            let rn: f64 = r.iter().map(|x| x * x).sum();
            let vn: f64 = v.iter().map(|x| x * x).sum();
            prop_assert!(rn <= vn);
        }

        #[test]
        fn full_budget_never_leaves_memory(
            rounds in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 1..20),
        ) {
            let b = [(0, 2), (2, 4)];
            let mut mem = ErrorMemory::new(0, 6);
            for a in rounds {
                let (_, m) = build_local_update(&a, &mem, &b, &[2, 4], 0).unwrap();
                prop_assert!(m.is_zero());
                mem = m;
            }
        }
    }
}
