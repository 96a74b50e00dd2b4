#pragma once

// Decode traces: one record per (step, row) capturing everything needed to
// re-derive and audit the sampling decision offline. Serialized as JSONL —
// first line is a meta object ("kind":"meta") with session parameters, every
// following line is a step record ("kind":"step").
//
// Wall-time fields (t1_ms, t2_ms) are the only nondeterministic values; by
// default save_trace zeroes them so identical sessions produce byte-identical
// files. Pass include_timings=true to keep the measured values.

#include <cstdint>
#include <string>
#include <vector>

namespace esamp {

struct TraceMeta {
    std::string schema = "esamp.trace.v1";
    uint64_t seed = 0;
    uint32_t rows = 0;
    uint32_t steps = 0;
    double beta = 0.0;
    double temperature = 1.0;
    std::string mode;      // "sync" | "async"
    std::string placement; // "latent_mix" | "post_filter"
    std::string fusion;    // "amplified" | "subtraction"
    std::string filter;    // "none" | "top_k" | "top_p" | "min_p"
    double filter_value = 0.0;
    std::string scope;     // "shared" | "per_prompt"
    std::string ablation;  // "off" | "matched_noise"
    uint64_t config_hash = 0;
};

struct TraceRecord {
    uint32_t step = 0;
    uint32_t row = 0;
    int token = -1;
    double u = 0.0;           // uniform draw used by inverse-CDF sampling
    double logp_ref = 0.0;    // log prob of the chosen token under the raw
                              // reference distribution (temperature 1)
    double logp_new = 0.0;    // log prob under the distribution actually
                              // sampled from (fused, filtered, tempered)
    double delta = 0.0;       // fused minus reference logit of the token
    double norm_e = 0.0;      // norm of the prediction-error vector in play
    double cos_align = 0.0;   // cos(head row of token, error vector)
    double loss = 0.0;        // distiller batch loss trained this step
    double t1_ms = 0.0;       // generation phase wall time for the step
    double t2_ms = 0.0;       // training phase wall time for the step
    bool fallback = false;    // rendezvous timed out; step completed sync
    bool trained = true;      // this row entered the training batch
    bool ablated = false;     // error vector replaced by matched noise
};

struct Trace {
    TraceMeta meta;
    std::vector<TraceRecord> records;
};

void save_trace(const std::string& path, const Trace& trace,
                bool include_timings = false);
Trace load_trace(const std::string& path);

// equality over everything except wall-time fields; doubles compared exactly
bool trace_equal_excluding_times(const Trace& a, const Trace& b);

// the async-vs-sync comparison: additionally ignores the pipeline label and
// the rendezvous fallback flags, which describe scheduling rather than output
bool trace_equal_cross_pipeline(const Trace& a, const Trace& b);

} // namespace esamp
