//! Token ledger for conversational prefix-cache reuse.
//!
//! Nothing here touches tensors. Each call records how many prompt tokens a
//! cache-less engine would prefill (`baseline`) and how many the cached
//! engine actually processes, so efficiency figures are pure token counts.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("session `{0}` is already primed")]
    AlreadyPrimed(String),
    #[error("session `{0}` is not primed")]
    NotPrimed(String),
    #[error("prompt length must be positive")]
    EmptyPrompt,
    #[error("injected segment lengths must be positive")]
    EmptySegment,
    #[error("recompute fraction {0} is outside [0,1]")]
    InvalidFraction(f64),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    SystemPrompt,
    History,
    Retrieved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: u32,
    pub len: u64,
    pub kind: SegmentKind,
    /// Source cache for retrieved segments.
    pub origin: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefillStats {
    pub reused_tokens: u64,
    pub new_tokens_processed: u64,
    pub recomputed_tokens: u64,
    pub baseline_tokens: u64,
}

impl PrefillStats {
    pub fn processed(&self) -> u64 {
        self.new_tokens_processed + self.recomputed_tokens
    }

    fn add(&mut self, other: &PrefillStats) {
        self.reused_tokens += other.reused_tokens;
        self.new_tokens_processed += other.new_tokens_processed;
        self.recomputed_tokens += other.recomputed_tokens;
        self.baseline_tokens += other.baseline_tokens;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tier {
    Lossless,
    High,
    Medium,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingTier {
    pub tier: Tier,
    pub bytes_per_token: f64,
    pub quality_penalty: f64,
}

impl EncodingTier {
    pub const LADDER: [EncodingTier; 4] = [
        EncodingTier { tier: Tier::Lossless, bytes_per_token: 64.0, quality_penalty: 0.0 },
        EncodingTier { tier: Tier::High, bytes_per_token: 16.0, quality_penalty: 0.01 },
        EncodingTier { tier: Tier::Medium, bytes_per_token: 8.0, quality_penalty: 0.03 },
        EncodingTier { tier: Tier::Low, bytes_per_token: 4.0, quality_penalty: 0.08 },
    ];

    pub fn standard(tier: Tier) -> EncodingTier {
        Self::LADDER[tier as usize]
    }
}

/// Encoded size of a cached segment in bytes.
pub fn encode_size(segment_len: u64, tier: &EncodingTier) -> u64 {
    (segment_len as f64 * tier.bytes_per_token).ceil() as u64
}

/// Linear time-to-first-token model over processed tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self { alpha: 50.0, beta: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheMetrics {
    pub redundancy_avoided: u64,
    /// Σ baseline / Σ processed over the whole session.
    pub speedup_factor: f64,
    pub last_call_speedup: f64,
    pub ttft_model: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCacheState {
    pub session_id: String,
    pub cached_prefix_len: u64,
    pub segments: Vec<Segment>,
    pub stats: PrefillStats,
    pub calls: Vec<PrefillStats>,
}

impl SessionCacheState {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            cached_prefix_len: 0,
            segments: Vec::new(),
            stats: PrefillStats::default(),
            calls: Vec::new(),
        }
    }

    pub fn is_primed(&self) -> bool {
        !self.segments.is_empty()
    }

    fn push_segment(&mut self, len: u64, kind: SegmentKind, origin: Option<String>) {
        self.segments.push(Segment {
            id: self.segments.len() as u32,
            len,
            kind,
            origin,
        });
        self.cached_prefix_len += len;
    }

    fn record(&mut self, s: PrefillStats) -> PrefillStats {
        self.stats.add(&s);
        self.calls.push(s);
        s
    }

    fn require_primed(&self) -> Result<(), CacheError> {
        if self.is_primed() {
            Ok(())
        } else {
            Err(CacheError::NotPrimed(self.session_id.clone()))
        }
    }

    /// Cold start: the whole prompt is processed.
    pub fn prime(&mut self, prompt_len: u64, kind: SegmentKind) -> Result<PrefillStats, CacheError> {
        if self.is_primed() {
            return Err(CacheError::AlreadyPrimed(self.session_id.clone()));
        }
        if prompt_len == 0 {
            return Err(CacheError::EmptyPrompt);
        }
        self.push_segment(prompt_len, kind, None);
        Ok(self.record(PrefillStats {
            reused_tokens: 0,
            new_tokens_processed: prompt_len,
            recomputed_tokens: 0,
            baseline_tokens: prompt_len,
        }))
    }

    /// Appends `new_tokens` of history; the cached prefix is reused as is.
    /// Extending by zero records nothing.
    pub fn extend(&mut self, new_tokens: u64) -> Result<PrefillStats, CacheError> {
        self.require_primed()?;
        if new_tokens == 0 {
            return Ok(PrefillStats::default());
        }
        let reused = self.cached_prefix_len;
        self.push_segment(new_tokens, SegmentKind::History, None);
        Ok(self.record(PrefillStats {
            reused_tokens: reused,
            new_tokens_processed: new_tokens,
            recomputed_tokens: 0,
            baseline_tokens: reused + new_tokens,
        }))
    }

    /// Splices precomputed segments from other caches after the current
    /// prefix, then `new_tokens` fresh tokens. A `recompute_fraction` of all
    /// reused tokens (prefix and injected) is recomputed to repair
    /// cross-attention.
    pub fn blend(
        &mut self,
        injected: &[(u64, String)],
        new_tokens: u64,
        recompute_fraction: f64,
    ) -> Result<PrefillStats, CacheError> {
        self.require_primed()?;
        if !(0.0..=1.0).contains(&recompute_fraction) {
            return Err(CacheError::InvalidFraction(recompute_fraction));
        }
        if injected.iter().any(|(len, _)| *len == 0) {
            return Err(CacheError::EmptySegment);
        }
        let reused = self.cached_prefix_len + injected.iter().map(|(l, _)| l).sum::<u64>();
        let recomputed = ((recompute_fraction * reused as f64).ceil() as u64).min(reused);
        for (len, origin) in injected {
            self.push_segment(*len, SegmentKind::Retrieved, Some(origin.clone()));
        }
        if new_tokens > 0 {
            self.push_segment(new_tokens, SegmentKind::History, None);
        }
        Ok(self.record(PrefillStats {
            reused_tokens: reused,
            new_tokens_processed: new_tokens,
            recomputed_tokens: recomputed,
            baseline_tokens: reused + new_tokens,
        }))
    }

    /// Σ baseline and Σ processed, i.e. the speedup as an exact fraction.
    pub fn speedup_ratio(&self) -> (u64, u64) {
        (self.stats.baseline_tokens, self.stats.processed())
    }

    pub fn metrics(&self, latency: &LatencyModel) -> Result<CacheMetrics, CacheError> {
        self.require_primed()?;
        let ratio = |baseline: u64, processed: u64| {
            if processed == 0 {
                1.0
            } else {
                baseline as f64 / processed as f64
            }
        };
        let last = self.calls.last().copied().unwrap_or_default();
        Ok(CacheMetrics {
            redundancy_avoided: self.stats.baseline_tokens - self.stats.processed(),
            speedup_factor: ratio(self.stats.baseline_tokens, self.stats.processed()),
            last_call_speedup: ratio(last.baseline_tokens, last.processed()),
            ttft_model: latency.alpha + latency.beta * last.processed() as f64,
        })
    }

    /// `session_id,call_index,reused,processed,baseline,speedup` rows, the
    /// speedup being cumulative up to that call.
    pub fn metrics_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["session_id", "call_index", "reused", "processed", "baseline", "speedup"])
            .expect("in-memory write");
        let mut cum = PrefillStats::default();
        for (i, c) in self.calls.iter().enumerate() {
            cum.add(c);
            w.write_record([
                self.session_id.clone(),
                i.to_string(),
                c.reused_tokens.to_string(),
                c.processed().to_string(),
                c.baseline_tokens.to_string(),
                format!("{:.4}", cum.baseline_tokens as f64 / cum.processed().max(1) as f64),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Holds every session ledger under one global token budget. When the
/// budget is exceeded the least recently extended sessions are evicted.
#[derive(Debug, Clone, Default)]
pub struct CacheBudget {
    budget_tokens: u64,
    clock: u64,
    sessions: HashMap<String, (u64, SessionCacheState)>,
}

impl CacheBudget {
    pub fn new(budget_tokens: u64) -> Self {
        Self {
            budget_tokens,
            clock: 0,
            sessions: HashMap::new(),
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.sessions.values().map(|(_, s)| s.cached_prefix_len).sum()
    }

    pub fn get(&self, session_id: &str) -> Option<&SessionCacheState> {
        self.sessions.get(session_id).map(|(_, s)| s)
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Runs `f` on the session's ledger (creating it if needed), marks it
    /// most recently used and evicts others until the budget holds. Returns
    /// `f`'s result and the evicted session ids.
    pub fn touch<T>(
        &mut self,
        session_id: &str,
        f: impl FnOnce(&mut SessionCacheState) -> T,
    ) -> (T, Vec<String>) {
        self.clock += 1;
        let entry = self
            .sessions
            .entry(session_id.to_string())
            .or_insert_with(|| (0, SessionCacheState::new(session_id)));
        entry.0 = self.clock;
        let out = f(&mut entry.1);
        let mut evicted = Vec::new();
        while self.total_tokens() > self.budget_tokens {
            let victim = self
                .sessions
                .iter()
                .filter(|(id, _)| id.as_str() != session_id)
                .min_by_key(|(id, (stamp, _))| (*stamp, (*id).clone()))
                .map(|(id, _)| id.clone());
            match victim {
                Some(id) => {
                    self.sessions.remove(&id);
                    evicted.push(id);
                }
                None => break,
            }
        }
        (out, evicted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prime_rules() {
        let mut s = SessionCacheState::new("s");
        let st = s.prime(100, SegmentKind::SystemPrompt).unwrap();
        assert_eq!((s.cached_prefix_len, st.processed()), (100, 100));
        assert_eq!(s.prime(10, SegmentKind::SystemPrompt), Err(CacheError::AlreadyPrimed("s".into())));
        assert_eq!(SessionCacheState::new("t").prime(0, SegmentKind::SystemPrompt), Err(CacheError::EmptyPrompt));
        assert_eq!(s.metrics(&LatencyModel::default()).unwrap().speedup_factor, 1.0);
    }

    #[test]
    fn extend_rules() {
        let mut s = SessionCacheState::new("s");
        assert!(s.extend(5).is_err());
        s.prime(100, SegmentKind::SystemPrompt).unwrap();
        let st = s.extend(20).unwrap();
        assert_eq!((st.reused_tokens, st.processed(), st.baseline_tokens), (100, 20, 120));
        let before = s.clone();
        assert_eq!(s.extend(0).unwrap(), PrefillStats::default());
        assert_eq!(s, before);
    }

    #[test]
    fn five_turn_scenario() {
        // Baseline 200+250+300+350+400 = 1500, processed 200 + 4*50 = 400.
        let mut s = SessionCacheState::new("s");
        s.prime(200, SegmentKind::SystemPrompt).unwrap();
        for _ in 0..4 {
            s.extend(50).unwrap();
        }
        assert_eq!(s.speedup_ratio(), (1500, 400));
        let m = s.metrics(&LatencyModel::default()).unwrap();
        assert_eq!(m.speedup_factor, 3.75);
        assert_eq!(m.redundancy_avoided, 1100);
        assert_eq!(m.ttft_model, 50.0 + 0.5 * 50.0);
    }

    #[test]
    fn blend_rules() {
        let mut s = SessionCacheState::new("s");
        s.prime(60, SegmentKind::SystemPrompt).unwrap();
        let st = s.blend(&[(40, "kb".into())], 20, 0.15).unwrap();
        assert_eq!((st.reused_tokens, st.recomputed_tokens, st.processed()), (100, 15, 35));
        assert_eq!(s.cached_prefix_len, 120);
        assert_eq!(s.segments[1].kind, SegmentKind::Retrieved);

        let mut z = SessionCacheState::new("z");
        z.prime(60, SegmentKind::SystemPrompt).unwrap();
        assert_eq!(z.blend(&[(40, "kb".into())], 20, 0.0).unwrap().processed(), 20);

        let mut one = SessionCacheState::new("o");
        one.prime(60, SegmentKind::SystemPrompt).unwrap();
        let st = one.blend(&[(40, "kb".into())], 20, 1.0).unwrap();
        assert_eq!(st.processed(), st.baseline_tokens);
        assert_eq!(one.metrics(&LatencyModel::default()).unwrap().last_call_speedup, 1.0);
        assert!(matches!(one.blend(&[], 1, 1.5), Err(CacheError::InvalidFraction(_))));
    }

    #[test]
    fn tier_sizes() {
        assert_eq!(encode_size(1000, &EncodingTier::standard(Tier::Lossless)), 64_000);
        assert_eq!(encode_size(0, &EncodingTier::standard(Tier::Low)), 0);
        let sizes: Vec<u64> = EncodingTier::LADDER.iter().map(|t| encode_size(37, t)).collect();
        assert!(sizes.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn lru_eviction() {
        let mut b = CacheBudget::new(250);
        b.touch("a", |s| s.prime(100, SegmentKind::SystemPrompt).unwrap());
        b.touch("b", |s| s.prime(100, SegmentKind::SystemPrompt).unwrap());
        b.touch("a", |s| s.extend(10).unwrap());
        let (_, evicted) = b.touch("c", |s| s.prime(100, SegmentKind::SystemPrompt).unwrap());
        assert_eq!(evicted, ["b"]);
        assert!(b.get("a").is_some() && b.get("b").is_none());
    }

    #[test]
    fn metrics_export() {
        let mut s = SessionCacheState::new("s");
        s.prime(10, SegmentKind::SystemPrompt).unwrap();
        s.extend(10).unwrap();
        let csv = s.metrics_csv();
        assert_eq!(csv.lines().nth(2).unwrap(), "s,1,10,10,20,1.5000");
    }
}
