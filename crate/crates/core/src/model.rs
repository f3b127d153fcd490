//! Domain types shared by every other module.
//!
//! Everything here is an immutable value once constructed: descriptors,
//! chunks, markers and manifests can be cloned and sent between threads
//! freely.

use std::collections::BTreeMap;
use std::fmt;
use std::marker::PhantomData;
use std::ops::{Add, Sub};
use std::str::FromStr;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Class of sensed signal carried by a stream.
///
/// `Marker` is the framework's own event channel; the rest mirror the
/// channel groups exposed by the Galea Beta headset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    #[serde(rename = "EEG")]
    Eeg,
    #[serde(rename = "ExG")]
    Exg,
    #[serde(rename = "EMG")]
    Emg,
    #[serde(rename = "EOG")]
    Eog,
    #[serde(rename = "PPG")]
    Ppg,
    #[serde(rename = "IMU")]
    Imu,
    #[serde(rename = "MAG")]
    Mag,
    #[serde(rename = "MARKER")]
    Marker,
}

impl Modality {
    pub const ALL: [Modality; 8] = [
        Modality::Eeg,
        Modality::Exg,
        Modality::Emg,
        Modality::Eog,
        Modality::Ppg,
        Modality::Imu,
        Modality::Mag,
        Modality::Marker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Eeg => "EEG",
            Modality::Exg => "ExG",
            Modality::Emg => "EMG",
            Modality::Eog => "EOG",
            Modality::Ppg => "PPG",
            Modality::Imu => "IMU",
            Modality::Mag => "MAG",
            Modality::Marker => "MARKER",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// On-the-wire and on-disk encoding of sample values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueEncoding {
    #[default]
    Float32,
    Float64,
    Int32,
}

impl ValueEncoding {
    pub fn width(self) -> usize {
        match self {
            ValueEncoding::Float32 | ValueEncoding::Int32 => 4,
            ValueEncoding::Float64 => 8,
        }
    }
}

/// Identity and physics of one sensor stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamDescriptor {
    pub stream_id: String,
    pub modality: Modality,
    pub channel_labels: Vec<String>,
    /// Samples per second. `None` for marker streams.
    pub nominal_rate_hz: Option<f64>,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub value_encoding: ValueEncoding,
}

impl StreamDescriptor {
    pub fn new(
        stream_id: impl Into<String>,
        modality: Modality,
        channel_labels: &[&str],
        nominal_rate_hz: f64,
        unit: impl Into<String>,
    ) -> Self {
        Self {
            stream_id: stream_id.into(),
            modality,
            channel_labels: channel_labels.iter().map(|s| s.to_string()).collect(),
            nominal_rate_hz: Some(nominal_rate_hz),
            unit: unit.into(),
            value_encoding: ValueEncoding::Float32,
        }
    }

    /// A structured-payload stream with no channels and no nominal rate.
    pub fn marker(stream_id: impl Into<String>) -> Self {
        Self {
            stream_id: stream_id.into(),
            modality: Modality::Marker,
            channel_labels: Vec::new(),
            nominal_rate_hz: None,
            unit: "dimensionless".into(),
            value_encoding: ValueEncoding::Float32,
        }
    }

    pub fn with_encoding(mut self, encoding: ValueEncoding) -> Self {
        self.value_encoding = encoding;
        self
    }

    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn is_marker(&self) -> bool {
        self.modality == Modality::Marker
    }

    /// Nominal sample period rounded to whole nanoseconds.
    pub fn sample_period_ns(&self) -> Option<u64> {
        self.nominal_rate_hz.filter(|r| r.is_finite() && *r > 0.0).map(|r| (1e9 / r).round() as u64)
    }
}

/// Named constraint set a descriptor can be checked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Profile {
    GaleaBeta,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::GaleaBeta => "galea-beta",
        }
    }
}

impl FromStr for Profile {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "galea-beta" => Ok(Profile::GaleaBeta),
            other => Err(ModelError::UnknownProfile(other.to_string())),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const GALEA_EEG_LABELS: [&str; 10] = ["F1", "F2", "C3", "Cz", "C4", "P3", "Pz", "P4", "O1", "O2"];

/// The six sample streams served by a Galea Beta headset.
///
/// ExG is optional on the hardware and left out of the default set.
pub fn galea_beta_descriptors() -> Vec<StreamDescriptor> {
    vec![
        StreamDescriptor::new("eeg", Modality::Eeg, &GALEA_EEG_LABELS, 250.0, "microvolts"),
        StreamDescriptor::new("emg", Modality::Emg, &["EMG1", "EMG2", "EMG3", "EMG4"], 250.0, "microvolts"),
        StreamDescriptor::new("eog", Modality::Eog, &["EOG1", "EOG2"], 250.0, "microvolts"),
        StreamDescriptor::new("ppg", Modality::Ppg, &["Red", "IR"], 250.0, "dimensionless"),
        StreamDescriptor::new(
            "imu",
            Modality::Imu,
            &["AccX", "AccY", "AccZ", "GyroX", "GyroY", "GyroZ"],
            250.0,
            "g | degrees/second",
        ),
        StreamDescriptor::new("mag", Modality::Mag, &["MagX", "MagY", "MagZ"], 25.0, "microtesla"),
    ]
}

/// Outcome of [`validate_descriptor`]. Violations are data, not failures.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks descriptor invariants, plus profile constraints when one is named.
pub fn validate_descriptor(desc: &StreamDescriptor, profile: Option<Profile>) -> ValidationReport {
    let mut v = Vec::new();

    if desc.stream_id.trim().is_empty() {
        v.push("stream_id is empty".to_string());
    }
    let mut seen = std::collections::HashSet::new();
    for label in &desc.channel_labels {
        if label.is_empty() {
            v.push("empty channel label".to_string());
        }
        if !seen.insert(label.as_str()) {
            v.push(format!("duplicate channel label {label:?}"));
        }
    }

    if desc.is_marker() {
        if !desc.channel_labels.is_empty() {
            v.push("marker streams carry no channels".to_string());
        }
        if desc.nominal_rate_hz.is_some() {
            v.push("marker streams have no nominal rate".to_string());
        }
    } else {
        if desc.channel_labels.is_empty() {
            v.push("sample streams need at least one channel".to_string());
        }
        match desc.nominal_rate_hz {
            Some(r) if r.is_finite() && r > 0.0 => {}
            Some(r) => v.push(format!("nominal_rate_hz must be positive, got {r}")),
            None => v.push("sample streams need a nominal rate".to_string()),
        }
    }

    if let Some(Profile::GaleaBeta) = profile {
        check_galea_beta(desc, &mut v);
    }

    ValidationReport { violations: v }
}

fn check_galea_beta(desc: &StreamDescriptor, v: &mut Vec<String>) {
    const P: &str = "galea-beta";
    let n = desc.n_channels();
    let (channels, rate): (std::ops::RangeInclusive<usize>, f64) = match desc.modality {
        Modality::Eeg => (10..=10, 250.0),
        Modality::Exg => (0..=2, 250.0),
        Modality::Emg => (4..=6, 250.0),
        Modality::Eog => (2..=2, 250.0),
        Modality::Ppg => (2..=2, 250.0),
        Modality::Imu => (6..=6, 250.0),
        Modality::Mag => (3..=3, 25.0),
        Modality::Marker => return,
    };
    if !channels.contains(&n) {
        v.push(format!(
            "channel count {n} outside {}..={} for {} in profile {P}",
            channels.start(),
            channels.end(),
            desc.modality
        ));
    }
    if desc.nominal_rate_hz != Some(rate) {
        v.push(format!(
            "nominal rate {:?} Hz differs from {rate} Hz for {} in profile {P}",
            desc.nominal_rate_hz, desc.modality
        ));
    }
    if desc.modality == Modality::Eeg && desc.channel_labels.iter().map(String::as_str).ne(GALEA_EEG_LABELS) {
        v.push(format!("channel labels mismatch for profile {P}"));
    }
}

// ---------------------------------------------------------------------------
// Timestamps

/// Marker trait for a clock domain.
pub trait ClockDomain:
    Copy + Clone + fmt::Debug + Default + PartialEq + Eq + PartialOrd + Ord + std::hash::Hash + Send + Sync + 'static
{
    const TAG: DomainTag;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DomainTag {
    Device,
    Host,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Device;
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Host;

impl ClockDomain for Device {
    const TAG: DomainTag = DomainTag::Device;
}
impl ClockDomain for Host {
    const TAG: DomainTag = DomainTag::Host;
}

/// Integer nanoseconds in one clock domain.
///
/// Differences and comparisons only typecheck within a domain; crossing
/// from device to host time requires a [`ClockMapping`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp<D: ClockDomain> {
    ticks: i64,
    _domain: PhantomData<D>,
}

pub type DeviceTs = Timestamp<Device>;
pub type HostTs = Timestamp<Host>;

impl<D: ClockDomain> Timestamp<D> {
    pub const fn from_nanos(ticks: i64) -> Self {
        Self { ticks, _domain: PhantomData }
    }

    pub const fn nanos(self) -> i64 {
        self.ticks
    }

    pub fn domain(self) -> DomainTag {
        D::TAG
    }

    pub fn as_secs_f64(self) -> f64 {
        self.ticks as f64 * 1e-9
    }
}

impl<D: ClockDomain> fmt::Debug for Timestamp<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}({}ns)", D::TAG, self.ticks)
    }
}

impl<D: ClockDomain> Sub for Timestamp<D> {
    type Output = i64;

    fn sub(self, rhs: Self) -> i64 {
        self.ticks - rhs.ticks
    }
}

impl<D: ClockDomain> Add<i64> for Timestamp<D> {
    type Output = Self;

    fn add(self, rhs: i64) -> Self {
        Self::from_nanos(self.ticks + rhs)
    }
}

impl<D: ClockDomain> Serialize for Timestamp<D> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(self.ticks)
    }
}

impl<'de, D: ClockDomain> Deserialize<'de> for Timestamp<D> {
    fn deserialize<De: Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        i64::deserialize(d).map(Self::from_nanos)
    }
}

// ---------------------------------------------------------------------------
// Chunks

/// Row-major `[n_samples x n_channels]` sample block in its declared encoding.
#[derive(Clone, Debug, PartialEq)]
pub enum Samples {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
}

impl Samples {
    pub fn encoding(&self) -> ValueEncoding {
        match self {
            Samples::F32(_) => ValueEncoding::Float32,
            Samples::F64(_) => ValueEncoding::Float64,
            Samples::I32(_) => ValueEncoding::Int32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Samples::F32(v) => v.len(),
            Samples::F64(v) => v.len(),
            Samples::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            Samples::F32(v) => v[i] as f64,
            Samples::F64(v) => v[i],
            Samples::I32(v) => v[i] as f64,
        }
    }

    /// Converts `f64` values into the requested encoding.
    pub fn from_f64(encoding: ValueEncoding, values: Vec<f64>) -> Self {
        match encoding {
            ValueEncoding::Float32 => Samples::F32(values.into_iter().map(|x| x as f32).collect()),
            ValueEncoding::Float64 => Samples::F64(values),
            ValueEncoding::Int32 => Samples::I32(values.into_iter().map(|x| x.round() as i32).collect()),
        }
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.encoding().width()
    }

    pub fn write_le(&self, out: &mut Vec<u8>) {
        out.reserve(self.byte_len());
        match self {
            Samples::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Samples::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Samples::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_le(&mut out);
        out
    }

    pub fn from_le_bytes(encoding: ValueEncoding, bytes: &[u8]) -> Result<Self, ModelError> {
        let w = encoding.width();
        if !bytes.len().is_multiple_of(w) {
            return Err(ModelError::SampleBytes { len: bytes.len(), width: w });
        }
        Ok(match encoding {
            ValueEncoding::Float32 => {
                Samples::F32(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
            }
            ValueEncoding::Float64 => {
                Samples::F64(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
            }
            ValueEncoding::Int32 => {
                Samples::I32(bytes.chunks_exact(4).map(|b| i32::from_le_bytes(b.try_into().unwrap())).collect())
            }
        })
    }
}

/// A contiguous block of samples from one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub stream_id: String,
    pub sequence_number: u64,
    pub first_device_ts: DeviceTs,
    pub sample_period_ns: u64,
    pub per_sample_device_ts: Option<Vec<DeviceTs>>,
    pub host_receipt_ts: HostTs,
    pub n_channels: usize,
    pub samples: Samples,
}

impl Chunk {
    pub fn n_samples(&self) -> usize {
        self.samples.len().checked_div(self.n_channels).unwrap_or(0)
    }

    /// Device timestamp of sample `k` within this chunk.
    pub fn device_ts(&self, k: usize) -> DeviceTs {
        match &self.per_sample_device_ts {
            Some(ts) => ts[k],
            None => self.first_device_ts + (k as i64) * self.sample_period_ns as i64,
        }
    }

    pub fn last_device_ts(&self) -> DeviceTs {
        self.device_ts(self.n_samples().saturating_sub(1))
    }

    pub fn value(&self, sample: usize, channel: usize) -> f64 {
        self.samples.get_f64(sample * self.n_channels + channel)
    }

    /// Checks the chunk against its stream descriptor.
    pub fn check(&self, desc: &StreamDescriptor) -> Result<(), ModelError> {
        let bad = |why: String| Err(ModelError::InvalidChunk { stream_id: self.stream_id.clone(), why });
        if self.stream_id != desc.stream_id {
            return bad(format!("belongs to stream {}", desc.stream_id));
        }
        if self.n_channels != desc.n_channels() || self.n_channels == 0 {
            return bad(format!("{} channels, descriptor has {}", self.n_channels, desc.n_channels()));
        }
        if !self.samples.len().is_multiple_of(self.n_channels) {
            return bad("sample matrix is ragged".into());
        }
        if self.samples.encoding() != desc.value_encoding {
            return bad("value encoding differs from descriptor".into());
        }
        if self.sample_period_ns == 0 {
            return bad("sample period is zero".into());
        }
        if let Some(ts) = &self.per_sample_device_ts {
            if ts.len() != self.n_samples() {
                return bad("per-sample timestamp count differs from sample count".into());
            }
            if ts.windows(2).any(|w| w[1] <= w[0]) {
                return bad("per-sample timestamps not strictly increasing".into());
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Clock mapping

/// Affine device-to-host clock model: `host = slope * device + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockMapping {
    /// Host nanoseconds per device nanosecond.
    pub slope: f64,
    pub intercept_ns: i64,
    pub rms_residual_ns: f64,
    pub n_points: usize,
}

impl ClockMapping {
    pub const IDENTITY: ClockMapping = ClockMapping { slope: 1.0, intercept_ns: 0, rms_residual_ns: 0.0, n_points: 0 };

    pub fn new(slope: f64, intercept_ns: i64) -> Result<Self, ModelError> {
        if !(slope.is_finite() && slope > 0.0) {
            return Err(ModelError::InvalidSlope(slope));
        }
        Ok(Self { slope, intercept_ns, rms_residual_ns: 0.0, n_points: 0 })
    }

    /// Maps a device timestamp onto the host timebase.
    ///
    /// Evaluated as `t + b + round((a - 1) * t)` so the large terms stay in
    /// exact integer arithmetic. Non-decreasing for every positive slope,
    /// strictly increasing for slope >= 1.
    pub fn map_to_host(&self, device: DeviceTs) -> HostTs {
        let t = device.nanos();
        let correction = ((self.slope - 1.0) * t as f64).round() as i64;
        HostTs::from_nanos(t + self.intercept_ns + correction)
    }

    /// Clock rate difference of the device relative to the host, in ppm.
    pub fn device_skew_ppm(&self) -> f64 {
        (1.0 / self.slope - 1.0) * 1e6
    }
}

// ---------------------------------------------------------------------------
// Interaction primitives and markers

/// Closed taxonomy of interaction primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PrimitiveKind {
    MovementSequence,
    TimingEvent,
    TaskProgression,
    ErrorRecovery,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 4] = [
        PrimitiveKind::MovementSequence,
        PrimitiveKind::TimingEvent,
        PrimitiveKind::TaskProgression,
        PrimitiveKind::ErrorRecovery,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveKind::MovementSequence => "MOVEMENT_SEQUENCE",
            PrimitiveKind::TimingEvent => "TIMING_EVENT",
            PrimitiveKind::TaskProgression => "TASK_PROGRESSION",
            PrimitiveKind::ErrorRecovery => "ERROR_RECOVERY",
        }
    }
}

/// Scalar or string payload value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PayloadValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<&str> for PayloadValue {
    fn from(s: &str) -> Self {
        PayloadValue::Text(s.to_string())
    }
}
impl From<i64> for PayloadValue {
    fn from(v: i64) -> Self {
        PayloadValue::Int(v)
    }
}
impl From<f64> for PayloadValue {
    fn from(v: f64) -> Self {
        PayloadValue::Float(v)
    }
}
impl From<bool> for PayloadValue {
    fn from(v: bool) -> Self {
        PayloadValue::Bool(v)
    }
}

/// Flat key to scalar map. Duplicate keys are rejected on deserialization.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Payload(pub BTreeMap<String, PayloadValue>);

impl Payload {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<PayloadValue>) -> Self {
        self.0.insert(key.into(), value.into());
        self
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<'de> Deserialize<'de> for Payload {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct PayloadVisitor;

        impl<'de> Visitor<'de> for PayloadVisitor {
            type Value = Payload;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a flat map of scalar values")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Payload, A::Error> {
                let mut out = BTreeMap::new();
                while let Some((k, v)) = map.next_entry::<String, PayloadValue>()? {
                    if out.contains_key(&k) {
                        return Err(serde::de::Error::custom(format!("duplicate payload key {k:?}")));
                    }
                    out.insert(k, v);
                }
                Ok(Payload(out))
            }
        }

        d.deserialize_map(PayloadVisitor)
    }
}

/// A neutral, game-agnostic task event descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionPrimitive {
    pub kind: PrimitiveKind,
    pub label: String,
    #[serde(default)]
    pub payload: Payload,
}

impl InteractionPrimitive {
    pub fn new(kind: PrimitiveKind, label: impl Into<String>) -> Self {
        Self { kind, label: label.into(), payload: Payload::new() }
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = payload;
        self
    }

    /// Rejects payloads carrying interpretative keys.
    pub fn check_policy(&self, deny: &DenyList) -> Result<(), ModelError> {
        match self.payload.keys().find(|k| deny.matches(k)) {
            Some(k) => Err(ModelError::PolicyViolation(format!("payload key {k:?} is an interpretative term"))),
            None => Ok(()),
        }
    }
}

/// How a [`DenyList`] compares keys against its terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchMode {
    /// Key contains the term anywhere.
    Substring,
    /// Key equals the term.
    Exact,
}

/// Case-insensitive, never-empty list of forbidden keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenyList {
    terms: Vec<String>,
    mode: MatchMode,
}

impl DenyList {
    pub const INTERPRETATIVE_TERMS: [&'static str; 7] =
        ["affect", "emotion", "stress", "engagement", "performance_score", "cognitive", "diagnosis"];
    pub const IDENTIFYING_METADATA: [&'static str; 3] = ["name", "dob", "id_number"];

    pub fn new<I, S>(terms: I, mode: MatchMode) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let terms: Vec<String> =
            terms.into_iter().map(|t| t.as_ref().trim().to_lowercase()).filter(|t| !t.is_empty()).collect();
        if terms.is_empty() {
            return Err(ModelError::EmptyDenyList);
        }
        Ok(Self { terms, mode })
    }

    /// Default list applied to marker payloads.
    pub fn interpretative() -> Self {
        Self::new(Self::INTERPRETATIVE_TERMS, MatchMode::Substring).unwrap()
    }

    /// Default list applied to session metadata keys.
    pub fn identifying_metadata() -> Self {
        Self::new(Self::IDENTIFYING_METADATA, MatchMode::Exact).unwrap()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn matches(&self, key: &str) -> bool {
        let key = key.to_lowercase();
        self.terms.iter().any(|t| match self.mode {
            MatchMode::Substring => key.contains(t.as_str()),
            MatchMode::Exact => key == *t,
        })
    }
}

impl Default for DenyList {
    fn default() -> Self {
        Self::interpretative()
    }
}

/// One interaction primitive occurrence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventMarker {
    pub marker_id: u64,
    pub primitive: InteractionPrimitive,
    /// Present only when the source shares the device clock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_ts: Option<DeviceTs>,
    pub host_ts: HostTs,
    pub source: String,
}

// ---------------------------------------------------------------------------
// Session manifest

/// Location and identity of one stored chunk record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkIndexEntry {
    pub offset: u64,
    pub record_len: u32,
    pub sequence_number: u64,
    pub first_device_ts: DeviceTs,
    pub n_samples: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionDigests {
    /// CRC32C rollup over each stream's chunk payloads, hex.
    pub streams: BTreeMap<String, String>,
    /// SHA-256 of every byte before the manifest record, hex.
    pub file_sha256: String,
}

/// Durable description of a recorded session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub created_host_ts: HostTs,
    pub descriptors: Vec<StreamDescriptor>,
    pub marker_sources: Vec<String>,
    pub chunk_index: BTreeMap<String, Vec<ChunkIndexEntry>>,
    pub marker_offsets: Vec<u64>,
    pub digests: SessionDigests,
    pub metadata: BTreeMap<String, String>,
}

impl SessionManifest {
    pub fn descriptor(&self, stream_id: &str) -> Option<&StreamDescriptor> {
        self.descriptors.iter().find(|d| d.stream_id == stream_id)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown profile {0:?}")]
    UnknownProfile(String),
    #[error("clock mapping slope must be positive and finite, got {0}")]
    InvalidSlope(f64),
    #[error("sample byte length {len} is not a multiple of {width}")]
    SampleBytes { len: usize, width: usize },
    #[error("invalid chunk for stream {stream_id}: {why}")]
    InvalidChunk { stream_id: String, why: String },
    #[error("policy violation: {0}")]
    PolicyViolation(String),
    #[error("deny-list must not be empty")]
    EmptyDenyList,
}
