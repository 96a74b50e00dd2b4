#pragma once

// Decode orchestrator. Runs P·K parallel sequences for T steps against a
// backbone, with an online-trained distiller whose prediction error biases
// sampling. Each step has two phases:
//
//   phase 1 (generate): shallow forward → launch distiller predict → deep
//     forward → rendezvous → fuse → sample.
//   phase 2 (train): one clipped Adam update per distiller on the step's
//     batch of (h1, hL) rows.
//
// The async pipeline runs predict/train on a single worker lane (FIFO), so
// predict for step t+1 always observes the update from step t (single-writer
// ordering), predict overlaps the deep layers, and training overlaps
// sampling and bookkeeping. A rendezvous barrier with a configurable timeout
// guards fusion; on timeout the step is recorded as a fallback and simply
// waits (completing synchronously). Sampling uniforms and ablation noise are
// counter-based functions of (seed, prompt, sample, step), so the schedule
// can never perturb the draws: async output is byte-identical to sync.
//
// Prefill positions never touch the distiller; only decode rows are
// predicted on and trained on. Rows whose hidden states go non-finite are
// excluded from the distiller and sampled through the plain reference path;
// the skip is recorded and the session continues. Rows that hit the context
// limit truncate individually.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "esamp/backbone.hpp"
#include "esamp/distiller.hpp"
#include "esamp/sampler.hpp"
#include "esamp/trace.hpp"

namespace esamp {

enum class Pipeline { sync, async };

struct SessionConfig {
    std::size_t prompts = 1;            // P
    std::size_t samples_per_prompt = 1; // K
    // one token list per prompt; every prompt must be non-empty
    std::vector<std::vector<int>> prompt_tokens{};
    std::size_t steps = 0;              // T, new tokens per sequence
    uint64_t seed = 1;

    FusionConfig fusion{};
    DistillerScope scope = DistillerScope::shared;
    DistillerConfig distiller{};        // d must equal the backbone's d_model
    bool distiller_enabled = true;      // false → pure reference decoding
    bool train = true;                  // online updates on/off

    Pipeline pipeline = Pipeline::sync;
    double rendezvous_timeout_ms = 10000.0;
    std::size_t ring_capacity = 0;      // 0 → 2·P·K (the minimum)

    bool capture_audit = false;         // keep per-step fusion inputs in memory
    uint64_t config_hash = 0;           // carried into the trace meta

    void validate() const;              // ConfigError on bad values
};

// test-only knobs; not reachable from configs
struct EngineHooks {
    double predict_delay_ms = 0.0;      // stall the predict lane (timeout path)
};

// everything the offline fusion audit needs to replay one decision
struct AuditStep {
    uint32_t step = 0;
    uint32_t row = 0;
    int token = -1;
    double beta = 0.0;
    FusionForm form = FusionForm::amplified;
    Vector logits_ref;    // head · hL
    Vector logits_dist;   // head · (hL − e_used)
    Vector e_used;        // prediction error (or matched noise) in play
    Vector logits_fused;  // what sampling actually saw (−inf outside filter)
};

struct SequenceResult {
    std::vector<int> generated;
    bool truncated = false;
};

struct SessionCounters {
    long long distiller_updates = 0;   // train_step calls across scopes
    long long rows_trained = 0;        // rows summed over those updates
    long long decode_steps = 0;        // (row, step) pairs actually decoded
    long long fallbacks = 0;           // rendezvous timeouts
    long long skipped_rows = 0;        // rows excluded for non-finite states
    long long failed_updates = 0;      // train_step rejected a batch
    long long truncated_sequences = 0;
    long long ring_violations = 0;
    std::size_t ring_max_in_flight = 0;
    long long overlap_steps = 0;       // async: predict began before deep end
    long long overlap_eligible = 0;    // async steps with distiller work
};

struct SessionResult {
    std::vector<SequenceResult> sequences;   // P·K rows, prompt-major
    Trace trace;
    SessionCounters counters;
    // mean final-layer state over each row's generated tokens, unit norm
    // (zero vector for rows that generated nothing usable)
    std::vector<Vector> embeddings;
    // per-step mean pairwise cosine of the running prefix embeddings
    // (empty when fewer than two rows)
    std::vector<double> divergence;
    std::vector<AuditStep> audit;            // when capture_audit
    std::vector<long long> scope_updates;    // train_step calls per scope
    double wall_ms = 0.0;
};

SessionResult run_session(const Backbone& backbone, const SessionConfig& cfg,
                          const EngineHooks& hooks = {});

// tokens plus all determinism-relevant trace values match (wall times,
// pipeline labels and fallback flags ignored)
bool session_outputs_identical(const SessionResult& a, const SessionResult& b);

} // namespace esamp
