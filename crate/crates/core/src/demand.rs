//! Demands: the unit of work every tier exchanges.
//!
//! A demand is identified by a content digest of its type, context and
//! payload, so two requests for the same computation share one signature
//! and therefore one cached result.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Millis;
use crate::codec::{DecodeError, Decoder, Encoder};

/// First byte of every canonical demand encoding.
pub const DEMAND_VERSION: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DemandError {
    #[error("destination tier must be supplied for system demands only (type {0:?})")]
    InvalidDestination(DemandType),
    #[error("illegal demand transition {from:?} -> {to:?}")]
    IllegalState { from: DemandState, to: DemandState },
    #[error("timeline point at {now} precedes last point at {last}")]
    ClockSkew { last: Millis, now: Millis },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DemandType {
    Procedural,
    Intensional,
    System,
    Resource,
}

impl DemandType {
    pub const ALL: [DemandType; 4] = [
        DemandType::Procedural,
        DemandType::Intensional,
        DemandType::System,
        DemandType::Resource,
    ];

    fn code(self) -> u8 {
        match self {
            DemandType::Procedural => 0,
            DemandType::Intensional => 1,
            DemandType::System => 2,
            DemandType::Resource => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DemandState {
    Pending,
    InProcess,
    Computed,
}

impl DemandState {
    pub const ALL: [DemandState; 3] = [
        DemandState::Pending,
        DemandState::InProcess,
        DemandState::Computed,
    ];

    fn code(self) -> u8 {
        match self {
            DemandState::Pending => 0,
            DemandState::InProcess => 1,
            DemandState::Computed => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn can_transition_to(self, next: DemandState) -> bool {
        use DemandState::*;
        matches!(
            (self, next),
            (Pending, InProcess) | (InProcess, Computed) | (InProcess, Pending)
        )
    }
}

/// Where a pending demand waits in the store.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Destination {
    Dwt,
    Dgt,
    AnyDest,
    TierId(String),
}

impl Destination {
    pub fn tier(id: impl Into<String>) -> Option<Self> {
        let id = id.into();
        (!id.is_empty()).then_some(Destination::TierId(id))
    }

    pub fn encode(&self, e: &mut Encoder) {
        match self {
            Destination::Dwt => e.u8(0),
            Destination::Dgt => e.u8(1),
            Destination::AnyDest => e.u8(2),
            Destination::TierId(id) => e.u8(3).str(id),
        };
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match d.u8()? {
            0 => Destination::Dwt,
            1 => Destination::Dgt,
            2 => Destination::AnyDest,
            3 => Destination::tier(d.string()?)
                .ok_or_else(|| DecodeError::Invalid("empty destination tier id".into()))?,
            other => {
                return Err(DecodeError::BadTag {
                    found: other,
                    expected: "destination",
                })
            }
        })
    }
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Destination::Dwt => f.write_str("DWT"),
            Destination::Dgt => f.write_str("DGT"),
            Destination::AnyDest => f.write_str("ANY_DEST"),
            Destination::TierId(id) => write!(f, "TIER_ID({id})"),
        }
    }
}

/// Routing behaviour of a kind of demand. A kind that does not override
/// `destination` is handled like a procedural demand and goes to the workers.
pub trait DemandKind {
    fn destination(&self, _destination_tier: Option<&str>) -> Destination {
        Destination::Dwt
    }
}

impl DemandKind for DemandType {
    fn destination(&self, destination_tier: Option<&str>) -> Destination {
        match self {
            DemandType::System => destination_tier
                .and_then(Destination::tier)
                .unwrap_or(Destination::Dwt),
            DemandType::Procedural => Destination::Dwt,
            DemandType::Intensional => Destination::Dgt,
            DemandType::Resource => Destination::AnyDest,
        }
    }
}

/// Destination a pending demand is staged under.
pub fn route_destination(d: &Demand) -> Destination {
    d.dtype.destination(d.destination_tier.as_deref())
}

/// Dimension-name to tag map. Iteration and serialization are ordered by
/// dimension name, so equal maps always encode to the same bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Context {
    dims: BTreeMap<String, String>,
}

impl Context {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, dim: impl Into<String>, tag: impl Into<String>) -> Self {
        self.insert(dim, tag);
        self
    }

    /// Numeric tags are stored as plain decimal text.
    pub fn with_num(self, dim: impl Into<String>, tag: u64) -> Self {
        self.with(dim, tag.to_string())
    }

    pub fn insert(&mut self, dim: impl Into<String>, tag: impl Into<String>) {
        self.dims.insert(dim.into(), tag.into());
    }

    pub fn get(&self, dim: &str) -> Option<&str> {
        self.dims.get(dim).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.dims.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn encode(&self, e: &mut Encoder) {
        e.u32(self.dims.len() as u32);
        for (k, v) in &self.dims {
            e.str(k).str(v);
        }
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let n = d.u32()?;
        let mut dims = BTreeMap::new();
        let mut last: Option<String> = None;
        for _ in 0..n {
            let k = d.string()?;
            let v = d.string()?;
            if last.as_ref().is_some_and(|prev| prev >= &k) {
                return Err(DecodeError::Invalid(format!(
                    "context dimension {k:?} out of order"
                )));
            }
            last = Some(k.clone());
            dims.insert(k, v);
        }
        Ok(Self { dims })
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Context {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Self {
            dims: iter
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DemandSignature(pub u64);

impl DemandSignature {
    pub fn of(dtype: DemandType, context: &Context, payload: &[u8]) -> Self {
        let mut e = Encoder::new();
        e.u8(dtype.code());
        context.encode(&mut e);
        e.bytes(payload);
        DemandSignature(fnv1a64(&e.finish()))
    }
}

impl fmt::Display for DemandSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimePoint {
    pub tier_id: String,
    pub at: Millis,
}

/// Per-tier access history, oldest first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TimeLine {
    points: Vec<TimePoint>,
}

impl TimeLine {
    pub fn points(&self) -> &[TimePoint] {
        &self.points
    }

    pub fn last(&self) -> Option<&TimePoint> {
        self.points.last()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Demand {
    signature: DemandSignature,
    dtype: DemandType,
    state: DemandState,
    context: Context,
    destination_tier: Option<String>,
    payload: Vec<u8>,
    result: Option<Vec<u8>>,
    access_count: u64,
    timeline: TimeLine,
}

impl Demand {
    pub fn new(
        dtype: DemandType,
        context: Context,
        payload: Vec<u8>,
        destination_tier: Option<String>,
    ) -> Result<Self, DemandError> {
        let system = dtype == DemandType::System;
        let has_dest = destination_tier.as_ref().is_some_and(|t| !t.is_empty());
        if system != has_dest || (destination_tier.is_some() && !has_dest) {
            return Err(DemandError::InvalidDestination(dtype));
        }
        Ok(Self {
            signature: DemandSignature::of(dtype, &context, &payload),
            dtype,
            state: DemandState::Pending,
            context,
            destination_tier,
            payload,
            result: None,
            access_count: 0,
            timeline: TimeLine::default(),
        })
    }

    /// A procedural demand, the default kind.
    pub fn procedural(context: Context, payload: Vec<u8>) -> Self {
        Self::new(DemandType::Procedural, context, payload, None)
            .expect("procedural demands carry no destination tier")
    }

    pub fn signature(&self) -> DemandSignature {
        self.signature
    }

    pub fn dtype(&self) -> DemandType {
        self.dtype
    }

    pub fn state(&self) -> DemandState {
        self.state
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn destination_tier(&self) -> Option<&str> {
        self.destination_tier.as_deref()
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn result(&self) -> Option<&[u8]> {
        self.result.as_deref()
    }

    pub fn access_count(&self) -> u64 {
        self.access_count
    }

    pub fn timeline(&self) -> &TimeLine {
        &self.timeline
    }

    fn transition(&mut self, to: DemandState) -> Result<(), DemandError> {
        if !self.state.can_transition_to(to) {
            return Err(DemandError::IllegalState {
                from: self.state,
                to,
            });
        }
        self.state = to;
        Ok(())
    }

    /// PENDING -> IN_PROCESS.
    pub fn claim(&mut self) -> Result<(), DemandError> {
        self.transition(DemandState::InProcess)
    }

    /// IN_PROCESS -> PENDING, used when a claim lapses.
    pub fn release(&mut self) -> Result<(), DemandError> {
        self.transition(DemandState::Pending)
    }

    /// Attach the result and mark the demand computed. When the result is
    /// itself an encoded demand, that demand's signature is returned instead.
    pub fn store_result(&mut self, result: Vec<u8>) -> Result<DemandSignature, DemandError> {
        self.transition(DemandState::Computed)?;
        let sig = match Demand::from_bytes(&result) {
            Ok(embedded) => embedded.signature,
            Err(_) => self.signature,
        };
        self.result = Some(result);
        Ok(sig)
    }

    pub fn record_access(
        &mut self,
        tier_id: impl Into<String>,
        now: Millis,
    ) -> Result<(), DemandError> {
        if let Some(last) = self.timeline.last() {
            if now < last.at {
                return Err(DemandError::ClockSkew { last: last.at, now });
            }
        }
        self.timeline.points.push(TimePoint {
            tier_id: tier_id.into(),
            at: now,
        });
        self.access_count += 1;
        Ok(())
    }

    /// Every field equal, including payload, result and timeline.
    pub fn is_identical(&self, other: &Demand) -> bool {
        self.signature == other.signature
            && self.dtype == other.dtype
            && self.state == other.state
            && self.context == other.context
            && self.destination_tier == other.destination_tier
            && self.payload == other.payload
            && self.result == other.result
            && self.access_count == other.access_count
            && self.timeline == other.timeline
    }

    pub fn encode(&self, e: &mut Encoder) {
        e.u8(DEMAND_VERSION)
            .u8(self.dtype.code())
            .u8(self.state.code())
            .opt_str(self.destination_tier.as_deref());
        self.context.encode(e);
        e.bytes(&self.payload)
            .opt_bytes(self.result.as_deref())
            .u64(self.access_count)
            .u32(self.timeline.points.len() as u32);
        for p in &self.timeline.points {
            e.str(&p.tier_id).u64(p.at);
        }
    }

    /// Canonical byte form used on the wire.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode(&mut e);
        e.finish()
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        d.expect_tag(DEMAND_VERSION, "demand version 0x01")?;
        let code = d.u8()?;
        let dtype = DemandType::from_code(code).ok_or(DecodeError::BadTag {
            found: code,
            expected: "demand type",
        })?;
        let code = d.u8()?;
        let state = DemandState::from_code(code).ok_or(DecodeError::BadTag {
            found: code,
            expected: "demand state",
        })?;
        let destination_tier = d.opt_string()?;
        let context = Context::decode(d)?;
        let payload = d.bytes()?.to_vec();
        let result = d.opt_bytes()?.map(<[u8]>::to_vec);
        let access_count = d.u64()?;
        let n = d.u32()?;
        let mut points = Vec::new();
        for _ in 0..n {
            let tier_id = d.string()?;
            let at = d.u64()?;
            if points.last().is_some_and(|p: &TimePoint| p.at > at) {
                return Err(DecodeError::Invalid("timeline timestamps decrease".into()));
            }
            points.push(TimePoint { tier_id, at });
        }

        if (dtype == DemandType::System) != destination_tier.as_ref().is_some_and(|t| !t.is_empty())
        {
            return Err(DecodeError::Invalid(
                "destination tier present iff system demand".into(),
            ));
        }
        if result.is_some() != (state == DemandState::Computed) {
            return Err(DecodeError::Invalid("result present iff computed".into()));
        }
        if access_count != points.len() as u64 {
            return Err(DecodeError::Invalid(
                "access count differs from timeline length".into(),
            ));
        }

        Ok(Self {
            signature: DemandSignature::of(dtype, &context, &payload),
            dtype,
            state,
            context,
            destination_tier,
            payload,
            result,
            access_count,
            timeline: TimeLine { points },
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        let demand = Self::decode(&mut d)?;
        d.finish()?;
        Ok(demand)
    }
}

/// Equal when signature, context, type and state all match. An absent
/// operand is never equal to anything.
pub fn demands_equal(a: Option<&Demand>, b: Option<&Demand>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => {
            a.signature == b.signature
                && a.context == b.context
                && a.dtype == b.dtype
                && a.state == b.state
        }
        _ => false,
    }
}

impl PartialEq for Demand {
    fn eq(&self, other: &Self) -> bool {
        demands_equal(Some(self), Some(other))
    }
}

impl Eq for Demand {}
