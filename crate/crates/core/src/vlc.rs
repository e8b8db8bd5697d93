//! Entropy-ranked variable-length coding: the keep/drop mask under an explicit
//! bandwidth budget, symbol extraction and zero-filling, and the payload wire
//! format.
//!
//! Units are always ordered individuals `0..N` first and the common map last.

use std::cmp::Ordering;

use rand::Rng;

use crate::codec::FeatureMap;
use crate::division::FeatureSet;
use crate::entropy::EntropySet;
use crate::error::{Error, Result};
use crate::video::SymbolStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BudgetMode {
    /// Keep the `floor(target_cbr · source_dim)` best elements over all maps.
    #[default]
    GlobalTopK,
    /// Per-map drop ratios for the common and individual maps.
    Split,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Budget {
    pub target_cbr: f64,
    pub mode: BudgetMode,
    pub drop_common: f64,
    pub drop_individual: f64,
    /// Accumulated trade weight applied through [`trade_budget`].
    pub trade_t: f64,
    /// When false the common map is never transmitted.
    pub send_common: bool,
}

impl Budget {
    pub fn global(target_cbr: f64) -> Self {
        Budget {
            target_cbr,
            mode: BudgetMode::GlobalTopK,
            drop_common: 0.0,
            drop_individual: 0.0,
            trade_t: 0.0,
            send_common: true,
        }
    }

    /// Split-mode budget without a bandwidth cap.
    pub fn split(drop_common: f64, drop_individual: f64) -> Self {
        Budget {
            target_cbr: 1.0,
            mode: BudgetMode::Split,
            drop_common,
            drop_individual,
            trade_t: 0.0,
            send_common: true,
        }
    }

    /// Nothing dropped.
    pub fn keep_all() -> Self {
        Budget::split(0.0, 0.0)
    }

    /// Equal drop ratio on every map so that the total matches `target_cbr`.
    pub fn split_for_cbr(target_cbr: f64, gop_size: usize, map_len: usize, source_dim: u64) -> Result<Self> {
        let keep = (target_cbr * source_dim as f64).floor() / ((gop_size + 1) * map_len) as f64;
        if !(0.0..=1.0).contains(&keep) {
            return Err(Error::Config(format!("cbr {target_cbr} needs more symbols than the GOP carries")));
        }
        Ok(Budget {
            target_cbr,
            ..Budget::split(1.0 - keep, 1.0 - keep)
        })
    }

    fn validate(&self) -> Result<()> {
        if self.target_cbr < 0.0 || self.drop_common < 0.0 || self.drop_individual < 0.0 {
            return Err(Error::NegativeBudget(self.target_cbr.min(self.drop_common).min(self.drop_individual)));
        }
        if !self.target_cbr.is_finite() || self.target_cbr > 1.0 {
            return Err(Error::Config(format!("target_cbr {} outside (0, 1]", self.target_cbr)));
        }
        if self.drop_common > 1.0 || self.drop_individual > 1.0 {
            return Err(Error::Config("drop ratios must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Snaps values within 1e-6 of an integer before flooring, so that algebraically
/// equal budgets give equal counts despite rounding.
fn stable_floor(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-6 {
        r.max(0.0) as usize
    } else {
        x.floor().max(0.0) as usize
    }
}

/// Count-preserving trade between individual and common drop ratios:
/// `dr(i) += δ`, `dr(c) -= N·δ`.
pub fn trade_budget(budget: &Budget, delta_individual: f64, gop_size: usize) -> Result<Budget> {
    let dr_i = budget.drop_individual + delta_individual;
    let dr_c = budget.drop_common - gop_size as f64 * delta_individual;
    const TOL: f64 = 1e-12;
    if !(-TOL..=1.0 + TOL).contains(&dr_i) || !(-TOL..=1.0 + TOL).contains(&dr_c) {
        return Err(Error::InfeasibleTrade(format!("dr(c) = {dr_c:.4}, dr(i) = {dr_i:.4}")));
    }
    Ok(Budget {
        drop_individual: dr_i.clamp(0.0, 1.0),
        drop_common: dr_c.clamp(0.0, 1.0),
        trade_t: budget.trade_t + delta_individual,
        mode: BudgetMode::Split,
        ..*budget
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DropPolicy {
    #[default]
    Entropy,
    Power,
    Random,
    InvEntropy,
    InvPower,
}

impl DropPolicy {
    pub const ALL: [DropPolicy; 5] = [
        DropPolicy::Entropy,
        DropPolicy::Power,
        DropPolicy::Random,
        DropPolicy::InvEntropy,
        DropPolicy::InvPower,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DropPolicy::Entropy => "entropy",
            DropPolicy::Power => "power",
            DropPolicy::Random => "random",
            DropPolicy::InvEntropy => "inv_entropy",
            DropPolicy::InvPower => "inv_power",
        }
    }
}

impl std::str::FromStr for DropPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DropPolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

/// Kept element indices for every unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    /// Sorted flat indices, one list per unit (individuals, then common).
    pub kept: Vec<Vec<usize>>,
    pub total_kept: usize,
    /// Symbols the budget asked for; exceeds `total_kept` only when the
    /// request was larger than the GOP's symbol supply.
    pub requested: usize,
}

impl MaskPlan {
    pub fn from_kept(mut kept: Vec<Vec<usize>>) -> Self {
        kept.iter_mut().for_each(|k| {
            k.sort_unstable();
            k.dedup();
        });
        let total_kept = kept.iter().map(Vec::len).sum();
        MaskPlan {
            kept,
            total_kept,
            requested: total_kept,
        }
    }

    pub fn keep_all(units: usize, map_len: usize) -> Self {
        Self::from_kept(vec![(0..map_len).collect(); units])
    }

    pub fn empty(units: usize) -> Self {
        Self::from_kept(vec![Vec::new(); units])
    }

    pub fn saturated(&self) -> bool {
        self.requested > self.total_kept
    }

    pub fn per_unit_counts(&self) -> Vec<usize> {
        self.kept.iter().map(Vec::len).collect()
    }

    pub fn validate(&self, units: usize, map_len: usize) -> Result<()> {
        if self.kept.len() != units {
            return Err(Error::Shape(format!("plan has {} units, set has {units}", self.kept.len())));
        }
        for k in &self.kept {
            if let Some(&bad) = k.iter().find(|&&i| i >= map_len) {
                return Err(Error::IndexOutOfRange { index: bad, len: map_len });
            }
            if k.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Shape("plan indices must be sorted and unique".into()));
            }
        }
        Ok(())
    }
}

/// Ranking score of every element, per unit.
fn scores<R: Rng + ?Sized>(entropies: &EntropySet, values: &FeatureSet, policy: DropPolicy, rng: &mut R) -> Vec<Vec<f64>> {
    match policy {
        DropPolicy::Entropy | DropPolicy::InvEntropy => entropies
            .units()
            .map(|m| m.bits.data.iter().map(|&b| b as f64).collect())
            .collect::<Vec<Vec<f64>>>(),
        DropPolicy::Power | DropPolicy::InvPower => values
            .units()
            .map(|m| m.data.iter().map(|&v| (v as f64) * (v as f64)).collect())
            .collect(),
        DropPolicy::Random => values
            .units()
            .map(|m| (0..m.len()).map(|_| rng.random::<f64>()).collect())
            .collect(),
    }
    .into_iter()
    .map(|s: Vec<f64>| {
        if matches!(policy, DropPolicy::InvEntropy | DropPolicy::InvPower) {
            s.into_iter().map(|v| -v).collect()
        } else {
            s
        }
    })
    .collect()
}

/// Higher score first, then lower index.
fn rank(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Indices of one unit sorted best-first.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| rank((scores[a], a), (scores[b], b)));
    idx
}

/// Builds the norm mask. `source_dim` is the GOP's real source dimension.
pub fn build_mask<R: Rng + ?Sized>(
    entropies: &EntropySet,
    budget: &Budget,
    policy: DropPolicy,
    values: &FeatureSet,
    source_dim: u64,
    rng: &mut R,
) -> Result<MaskPlan> {
    budget.validate()?;
    let units = values.gop_size() + 1;
    let map_len = values.map_len();
    if entropies.individuals.len() != values.gop_size() || entropies.units().any(|e| e.bits.len() != map_len) {
        return Err(Error::Shape("entropy maps are not aligned with the feature set".into()));
    }
    let common_unit = units - 1;
    let score = scores(entropies, values, policy, rng);
    let cap = stable_floor(budget.target_cbr * source_dim as f64);

    let kept = match budget.mode {
        BudgetMode::GlobalTopK => {
            let mut pool: Vec<(f64, usize)> = score
                .iter()
                .enumerate()
                .filter(|(u, _)| budget.send_common || *u != common_unit)
                .flat_map(|(u, s)| s.iter().enumerate().map(move |(i, &v)| (v, u * map_len + i)))
                .collect();
            pool.sort_by(|a, b| rank(*a, *b));
            let mut kept = vec![Vec::new(); units];
            for &(_, flat) in pool.iter().take(cap) {
                kept[flat / map_len].push(flat % map_len);
            }
            let mut plan = MaskPlan::from_kept(kept);
            plan.requested = cap;
            return Ok(plan);
        }
        BudgetMode::Split => {
            let n = values.gop_size() as f64;
            let keep_c = if budget.send_common { (1.0 - budget.drop_common) * map_len as f64 } else { 0.0 };
            let keep_i = (1.0 - budget.drop_individual) * map_len as f64;
            let total = stable_floor(keep_c + n * keep_i);
            if total > cap {
                return Err(Error::Config(format!(
                    "split budget keeps {total} symbols but target_cbr allows {cap}"
                )));
            }
            let mut quota: Vec<usize> = (0..units)
                .map(|u| if u == common_unit { stable_floor(keep_c) } else { stable_floor(keep_i) })
                .map(|q| q.min(map_len))
                .collect();
            let orders: Vec<Vec<usize>> = score.iter().map(|s| ranked(s)).collect();
            // Hand out the flooring remainder one symbol at a time to the unit
            // whose next-ranked element scores highest.
            let mut remainder = total.saturating_sub(quota.iter().sum());
            while remainder > 0 {
                let best = (0..units)
                    .filter(|&u| quota[u] < map_len && (budget.send_common || u != common_unit))
                    .map(|u| (score[u][orders[u][quota[u]]], u))
                    .min_by(|a, b| rank(*a, *b));
                match best {
                    Some((_, u)) => quota[u] += 1,
                    None => break,
                }
                remainder -= 1;
            }
            orders.iter().zip(&quota).map(|(o, &q)| o[..q].to_vec()).collect()
        }
    };
    Ok(MaskPlan::from_kept(kept))
}

/// Extracts the kept values as the channel-input stream.
pub fn apply_mask(set: &FeatureSet, plan: &MaskPlan) -> Result<SymbolStream> {
    plan.validate(set.gop_size() + 1, set.map_len())?;
    let mut symbols = Vec::with_capacity(plan.total_kept);
    for (map, kept) in set.units().zip(&plan.kept) {
        symbols.extend(kept.iter().map(|&i| map.data[i]));
    }
    SymbolStream::new(symbols, plan.per_unit_counts())
}

/// Receiver inverse of [`apply_mask`]: dropped positions become 0.
pub fn zero_fill(symbols: &[f32], plan: &MaskPlan, gop_size: usize, shape: (usize, usize, usize)) -> Result<FeatureSet> {
    let map_len = shape.0 * shape.1 * shape.2;
    plan.validate(gop_size + 1, map_len)?;
    if symbols.len() != plan.total_kept {
        return Err(Error::LengthMismatch {
            expected: plan.total_kept,
            got: symbols.len(),
        });
    }
    let mut set = FeatureSet::zeros(gop_size, shape);
    let mut cursor = 0;
    for (map, kept) in set.units_mut().zip(&plan.kept) {
        for &i in kept {
            map.data[i] = symbols[cursor];
            cursor += 1;
        }
    }
    Ok(set)
}

/// Header side information carried over the error-free control channel.
#[derive(Clone, Debug, PartialEq)]
pub struct PayloadHeader {
    pub gop_id: u32,
    pub gop_size: u8,
    /// `(channels, height, width)` of every feature map.
    pub feature_shape: (u16, u16, u16),
    /// Power-normalisation factor the receiver multiplies the body by.
    pub scale: f32,
    pub plan: MaskPlan,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Payload {
    pub header: PayloadHeader,
    pub body: Vec<f32>,
}

pub const MAGIC: &[u8; 4] = b"MDVS";
pub const WIRE_VERSION: u8 = 1;
/// Bytes before the mask bitmap.
pub const FIXED_HEADER_LEN: usize = 4 + 1 + 4 + 1 + 6 + 4;

/// Bytes of the mask bitmap for `units` maps of `map_len` elements.
pub fn bitmap_len(units: usize, map_len: usize) -> usize {
    (units * map_len).div_ceil(8)
}

impl Payload {
    pub fn map_shape(&self) -> (usize, usize, usize) {
        let (c, h, w) = self.header.feature_shape;
        (c as usize, h as usize, w as usize)
    }

    pub fn map_len(&self) -> usize {
        let (c, h, w) = self.map_shape();
        c * h * w
    }
}

/// Little-endian wire encoding:
/// `"MDVS" | version u8 | gop_id u32 | N u8 | C,H,W u16 | scale f32 | bitmap | body f32[]`.
///
/// The bitmap has one bit per element over all units in transmission order,
/// least significant bit first.
pub fn serialize(payload: &Payload) -> Result<Vec<u8>> {
    let h = &payload.header;
    let units = h.gop_size as usize + 1;
    let map_len = payload.map_len();
    h.plan.validate(units, map_len)?;
    if payload.body.len() != h.plan.total_kept {
        return Err(Error::LengthMismatch {
            expected: h.plan.total_kept,
            got: payload.body.len(),
        });
    }
    let mut out = Vec::with_capacity(FIXED_HEADER_LEN + bitmap_len(units, map_len) + 4 * payload.body.len());
    out.extend_from_slice(MAGIC);
    out.push(WIRE_VERSION);
    out.extend_from_slice(&h.gop_id.to_le_bytes());
    out.push(h.gop_size);
    for d in [h.feature_shape.0, h.feature_shape.1, h.feature_shape.2] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&h.scale.to_le_bytes());
    let mut bitmap = vec![0u8; bitmap_len(units, map_len)];
    for (u, kept) in h.plan.kept.iter().enumerate() {
        for &i in kept {
            let bit = u * map_len + i;
            bitmap[bit / 8] |= 1 << (bit % 8);
        }
    }
    out.extend_from_slice(&bitmap);
    for v in &payload.body {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Payload {
                offset: self.pos,
                reason: format!("truncated {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<Payload> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Payload { offset: 0, reason: "bad magic".into() });
    }
    let version = r.u8("version")?;
    if version != WIRE_VERSION {
        return Err(Error::Payload {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let gop_id = r.u32("gop id")?;
    let gop_size = r.u8("gop size")?;
    let feature_shape = (r.u16("channels")?, r.u16("height")?, r.u16("width")?);
    let scale = r.f32("scale")?;
    let units = gop_size as usize + 1;
    let map_len = feature_shape.0 as usize * feature_shape.1 as usize * feature_shape.2 as usize;
    let bitmap_at = r.pos;
    let bitmap = r.take(bitmap_len(units, map_len), "mask bitmap")?;
    let mut kept = vec![Vec::new(); units];
    for (byte_idx, &byte) in bitmap.iter().enumerate() {
        for b in 0..8 {
            if byte & (1 << b) == 0 {
                continue;
            }
            let bit = byte_idx * 8 + b;
            if bit >= units * map_len {
                return Err(Error::Payload {
                    offset: bitmap_at + byte_idx,
                    reason: "padding bits set in mask bitmap".into(),
                });
            }
            kept[bit / map_len].push(bit % map_len);
        }
    }
    let plan = MaskPlan::from_kept(kept);
    let body_bytes = r.take(4 * plan.total_kept, "body")?;
    let body = body_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if r.pos != bytes.len() {
        return Err(Error::Payload {
            offset: r.pos,
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(Payload {
        header: PayloadHeader {
            gop_id,
            gop_size,
            feature_shape,
            scale,
            plan,
        },
        body,
    })
}

/// Channel-symbol equivalent of sending the mask bitmap at `bits_per_symbol`.
pub fn mask_overhead_symbols(units: usize, map_len: usize, bits_per_symbol: f64) -> f64 {
    (units * map_len) as f64 / bits_per_symbol
}

/// Unit feature shape as wire dimensions.
pub fn wire_shape(map: &FeatureMap) -> Result<(u16, u16, u16)> {
    let conv = |v: usize| u16::try_from(v).map_err(|_| Error::Shape(format!("dimension {v} exceeds u16")));
    Ok((conv(map.channels)?, conv(map.height)?, conv(map.width)?))
}
