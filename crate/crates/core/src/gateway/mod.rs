//! Prompt rendering, chat-completion calls and reply parsing.

mod cache;
mod llm;
mod parse;
mod provider;
mod templates;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::ResponseCache;
pub use llm::{generate_ontologies, ontology_dimensions, GenerationError, LlmMapper};
pub use parse::{extract_object, parse_judgment, parse_mapping, MappingReply, ParseError};
pub use provider::{
    sha256_hex, ChatProvider, LiveConfig, LiveProvider, PromptMatcher, ProviderError,
    ScriptFixture, ScriptRule, ScriptedProvider,
};
pub use templates::{
    format_icl_examples, format_privacy_preferences, format_request, format_template, placeholders,
    render_prompt, template_source, PromptKind, PromptSpec, Slots, TemplateError, COT_INSTRUCTION,
    TEMPLATE_VERSION,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("gave up after {attempts} attempt(s): {last}")]
    ExhaustedRetries {
        attempts: usize,
        last: ProviderError,
    },
    #[error("retry budget must be at least 1")]
    InvalidBudget,
}

/// One prompt/response round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub rendered_prompt: String,
    pub raw_response: String,
    pub model_id: String,
    pub latency: Duration,
    /// 1-based; the attempt that succeeded.
    pub attempt: usize,
    pub from_cache: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub requests: usize,
    pub provider_calls: usize,
    pub cache_hits: usize,
    pub failures: usize,
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicUsize,
    provider_calls: AtomicUsize,
    cache_hits: AtomicUsize,
    failures: AtomicUsize,
}

struct InFlight {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl InFlight {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut n = self.in_flight.lock().expect("in-flight lock poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("in-flight lock poisoned");
        }
        *n += 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a InFlight);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("in-flight lock poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// A provider plus retry, caching and an in-flight limit.
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    cache: Option<ResponseCache>,
    base_backoff: Duration,
    slots: InFlight,
    counters: Counters,
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Gateway {
            provider,
            cache: None,
            base_backoff: Duration::from_millis(500),
            slots: InFlight {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                limit: 4,
            },
            counters: Counters::default(),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// First retry waits `base`, then `2 * base`, `4 * base`, ...
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.base_backoff = base;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.slots.limit = limit.max(1);
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.slots.limit
    }

    pub fn model_id(&self) -> &str {
        self.provider.model_id()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.counters.requests.load(Ordering::Relaxed),
            provider_calls: self.counters.provider_calls.load(Ordering::Relaxed),
            cache_hits: self.counters.cache_hits.load(Ordering::Relaxed),
            failures: self.counters.failures.load(Ordering::Relaxed),
        }
    }

    /// Sends `prompt`, retrying transport errors and empty replies up to
    /// `retry_budget` attempts in total.
    pub fn complete(
        &self,
        prompt: &str,
        retry_budget: usize,
    ) -> Result<ChatExchange, GatewayError> {
        if retry_budget == 0 {
            return Err(GatewayError::InvalidBudget);
        }
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        let model_id = self.provider.model_id().to_string();
        let started = Instant::now();

        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&model_id, prompt)) {
            self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(ChatExchange {
                rendered_prompt: prompt.to_string(),
                raw_response: hit,
                model_id,
                latency: started.elapsed(),
                attempt: 1,
                from_cache: true,
            });
        }

        let mut last = ProviderError::Empty;
        for attempt in 1..=retry_budget {
            if attempt > 1 && !self.base_backoff.is_zero() {
                std::thread::sleep(self.base_backoff * 2u32.saturating_pow(attempt as u32 - 2));
            }
            let result = {
                let _slot = self.slots.acquire();
                self.counters.provider_calls.fetch_add(1, Ordering::Relaxed);
                self.provider.send(prompt)
            };
            match result {
                Ok(text) if !text.trim().is_empty() => {
                    if let Some(cache) = &self.cache {
                        if let Err(e) = cache.put(&model_id, prompt, &text) {
                            log::warn!("response cache write failed: {e}");
                        }
                    }
                    return Ok(ChatExchange {
                        rendered_prompt: prompt.to_string(),
                        raw_response: text,
                        model_id,
                        latency: started.elapsed(),
                        attempt,
                        from_cache: false,
                    });
                }
                Ok(_) => last = ProviderError::Empty,
                Err(e) => last = e,
            }
            log::debug!("attempt {attempt}/{retry_budget} failed: {last}");
        }
        self.counters.failures.fetch_add(1, Ordering::Relaxed);
        Err(GatewayError::ExhaustedRetries {
            attempts: retry_budget,
            last,
        })
    }
}
