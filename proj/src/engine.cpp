#include "esamp/engine.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <limits>
#include <mutex>
#include <thread>

#include "esamp/errors.hpp"
#include "esamp/metrics.hpp"
#include "esamp/ring_buffer.hpp"
#include "esamp/rng.hpp"

namespace esamp {

namespace {

bool all_finite(const Vector& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

const char* pipeline_name(Pipeline p) {
    return p == Pipeline::sync ? "sync" : "async";
}

const char* placement_name(FusionPlacement p) {
    return p == FusionPlacement::latent_mix ? "latent_mix" : "post_filter";
}

const char* form_name(FusionForm f) {
    return f == FusionForm::amplified ? "amplified" : "subtraction";
}

const char* filter_name(FilterKind k) {
    switch (k) {
        case FilterKind::none: return "none";
        case FilterKind::top_k: return "top_k";
        case FilterKind::top_p: return "top_p";
        case FilterKind::min_p: return "min_p";
    }
    return "none";
}

const char* scope_name(DistillerScope s) {
    return s == DistillerScope::shared ? "shared" : "per_prompt";
}

const char* ablation_name(AblationMode a) {
    return a == AblationMode::off ? "off" : "matched_noise";
}

constexpr std::size_t kNoSlot = std::size_t(-1);

// Single worker lane running distiller jobs in FIFO order. The queue order
// (predict t, train t, predict t+1, ...) is what enforces single-writer
// ordering: the update for step t always lands before the predict for t+1.
class Session {
public:
    Session(const Backbone& bb, const SessionConfig& cfg, const EngineHooks& hooks)
        : bb_(bb), cfg_(cfg), hooks_(hooks) {}

    SessionResult run();

private:
    struct Bank {
        std::vector<std::size_t> slot;     // ring slot per row (kNoSlot if none)
        std::vector<char> h1_ok, hl_ok;
        std::vector<Vector> hl_hat;        // worker-written predictions
        std::vector<uint32_t> pushed;      // rows pushed this step
        std::vector<uint32_t> predict_rows;
        std::vector<uint32_t> train_rows;
    };

    struct Job {
        enum Kind { predict, train, stop } kind = stop;
        uint64_t step = 0;
    };

    const Backbone& bb_;
    const SessionConfig& cfg_;
    const EngineHooks& hooks_;

    std::size_t W_ = 0, P_ = 0, K_ = 0, S_ = 0, d_ = 0, ctx_ = 0, T_ = 0;
    bool async_ = false, distill_ = false;

    std::vector<Distiller> dists_;
    std::vector<std::unique_ptr<SequenceState>> states_;
    std::vector<int> prev_;
    std::vector<char> live_;
    std::vector<SequenceResult> seqs_;
    std::unique_ptr<HiddenRing> ring_;
    Bank banks_[2];
    std::vector<StepOutput> so_;

    // per-step bookkeeping (worker writes loss/trained/t2/predict_start)
    std::vector<char> step_fallback_, step_had_predict_;
    std::vector<double> t1_ms_, t2_ms_, predict_start_ms_, deep_end_ms_;
    std::vector<std::vector<double>> scope_loss_;
    std::vector<std::vector<char>> scope_trained_;
    long long failed_updates_ = 0;   // only the training lane writes this
    long long skipped_rows_ = 0;

    std::vector<Vector> emb_sum_;
    std::vector<long long> emb_n_;

    SessionResult res_;
    std::chrono::steady_clock::time_point t0_;

    // worker lane
    std::thread worker_;
    std::mutex m_;
    std::condition_variable cv_jobs_, cv_done_;
    std::deque<Job> jobs_;
    long long predict_done_ = -1;
    std::exception_ptr lane_err_;

    double now_ms() const {
        return std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now() - t0_)
            .count();
    }

    std::size_t scope_of(std::size_t row) const {
        return cfg_.scope == DistillerScope::shared ? 0 : row / K_;
    }

    void init();
    void step(uint64_t t);
    void finalize();

    void enqueue(Job j);
    void worker_loop();
    void join_worker();
    void rethrow_lane_error();

    void do_predict(uint64_t t);
    void do_train(uint64_t t);
    void sample_row(uint64_t t, uint32_t r, const Bank& bank, bool step_fb);
    void push_divergence();
};

void Session::init() {
    cfg_.validate();
    const BackboneSpec& spec = bb_.spec();
    P_ = cfg_.prompts;
    K_ = cfg_.samples_per_prompt;
    W_ = P_ * K_;
    T_ = cfg_.steps;
    d_ = spec.d_model;
    ctx_ = spec.ctx;
    async_ = cfg_.pipeline == Pipeline::async;
    distill_ = cfg_.distiller_enabled;

    if (distill_ && cfg_.distiller.d != d_)
        throw ConfigError("distiller width " + std::to_string(cfg_.distiller.d) +
                          " does not match backbone d_model " + std::to_string(d_));
    for (const auto& p : cfg_.prompt_tokens)
        if (p.size() > ctx_)
            throw ConfigError("prompt longer than backbone context");

    S_ = cfg_.scope == DistillerScope::shared ? 1 : P_;
    if (distill_) {
        dists_.reserve(S_);
        for (std::size_t s = 0; s < S_; ++s) {
            DistillerConfig dc = cfg_.distiller;
            if (cfg_.scope == DistillerScope::per_prompt)
                dc.seed = derive_stream(cfg_.distiller.seed, s);
            dists_.push_back(Distiller::make(dc));
        }
        std::size_t cap = cfg_.ring_capacity == 0 ? 2 * W_ : cfg_.ring_capacity;
        ring_ = std::make_unique<HiddenRing>(cap, d_);
    }

    states_.resize(W_);
    prev_.assign(W_, -1);
    live_.assign(W_, 1);
    seqs_.assign(W_, {});
    so_.resize(W_);
    for (std::size_t r = 0; r < W_; ++r) {
        const std::vector<int>& prompt = cfg_.prompt_tokens[r / K_];
        std::vector<int> head(prompt.begin(), prompt.end() - 1);
        states_[r] = bb_.prefill(head);
        states_[r]->phase = Phase::decode;
        prev_[r] = prompt.back();
        seqs_[r].generated.reserve(T_);
    }

    for (Bank& b : banks_) {
        b.slot.assign(W_, kNoSlot);
        b.h1_ok.assign(W_, 0);
        b.hl_ok.assign(W_, 0);
        b.hl_hat.assign(W_, Vector(d_, 0.0));
        b.pushed.reserve(W_);
        b.predict_rows.reserve(W_);
        b.train_rows.reserve(W_);
    }

    step_fallback_.assign(T_, 0);
    step_had_predict_.assign(T_, 0);
    t1_ms_.assign(T_, 0.0);
    t2_ms_.assign(T_, 0.0);
    predict_start_ms_.assign(T_, -1.0);
    deep_end_ms_.assign(T_, 0.0);
    scope_loss_.assign(S_ == 0 ? 1 : S_, std::vector<double>(T_, 0.0));
    scope_trained_.assign(S_ == 0 ? 1 : S_, std::vector<char>(T_, 0));

    emb_sum_.assign(W_, Vector(d_, 0.0));
    emb_n_.assign(W_, 0);

    res_.trace.records.reserve(W_ * T_);
    if (cfg_.capture_audit) res_.audit.reserve(W_ * T_);

    if (async_ && distill_)
        worker_ = std::thread([this] { worker_loop(); });
}

void Session::enqueue(Job j) {
    {
        std::lock_guard<std::mutex> lk(m_);
        jobs_.push_back(j);
    }
    cv_jobs_.notify_one();
}

void Session::worker_loop() {
    for (;;) {
        Job j;
        {
            std::unique_lock<std::mutex> lk(m_);
            cv_jobs_.wait(lk, [&] { return !jobs_.empty(); });
            j = jobs_.front();
            jobs_.pop_front();
        }
        if (j.kind == Job::stop) break;
        try {
            if (j.kind == Job::predict)
                do_predict(j.step);
            else
                do_train(j.step);
        } catch (...) {
            std::lock_guard<std::mutex> lk(m_);
            if (!lane_err_) lane_err_ = std::current_exception();
        }
        if (j.kind == Job::predict) {
            std::lock_guard<std::mutex> lk(m_);
            predict_done_ = (long long)j.step;
            cv_done_.notify_all();
        }
    }
}

void Session::join_worker() {
    if (!worker_.joinable()) return;
    enqueue({Job::stop, 0});
    worker_.join();
}

void Session::rethrow_lane_error() {
    std::exception_ptr e;
    {
        std::lock_guard<std::mutex> lk(m_);
        e = lane_err_;
    }
    if (e) {
        join_worker();
        std::rethrow_exception(e);
    }
}

void Session::do_predict(uint64_t t) {
    if (hooks_.predict_delay_ms > 0.0)
        std::this_thread::sleep_for(
            std::chrono::duration<double, std::milli>(hooks_.predict_delay_ms));
    predict_start_ms_[t] = now_ms();
    Bank& bank = banks_[t & 1];
    for (std::size_t s = 0; s < S_; ++s) {
        std::size_t n = 0;
        for (uint32_t r : bank.predict_rows)
            if (scope_of(r) == s) ++n;
        if (n == 0) continue;
        Matrix h1m(n, d_);
        std::size_t i = 0;
        for (uint32_t r : bank.predict_rows) {
            if (scope_of(r) != s) continue;
            const Vector& h1 = ring_->slot(bank.slot[r]).h1;
            std::copy(h1.begin(), h1.end(), h1m.row(i));
            ++i;
        }
        Matrix out = dists_[s].predict(h1m);
        i = 0;
        for (uint32_t r : bank.predict_rows) {
            if (scope_of(r) != s) continue;
            std::copy(out.row(i), out.row(i) + d_, bank.hl_hat[r].begin());
            ++i;
        }
    }
}

void Session::do_train(uint64_t t) {
    const double start = now_ms();
    Bank& bank = banks_[t & 1];
    for (std::size_t s = 0; s < S_; ++s) {
        std::size_t n = 0;
        for (uint32_t r : bank.train_rows)
            if (scope_of(r) == s) ++n;
        if (n == 0 || !cfg_.train) continue;
        Matrix h1m(n, d_), hlm(n, d_);
        std::size_t i = 0;
        for (uint32_t r : bank.train_rows) {
            if (scope_of(r) != s) continue;
            const auto& slot = ring_->slot(bank.slot[r]);
            std::copy(slot.h1.begin(), slot.h1.end(), h1m.row(i));
            std::copy(slot.hl.begin(), slot.hl.end(), hlm.row(i));
            ++i;
        }
        try {
            scope_loss_[s][t] = dists_[s].train_step(h1m, hlm);
            scope_trained_[s][t] = 1;
        } catch (const NumericError&) {
            ++failed_updates_;
        }
    }
    for (uint32_t r : bank.pushed) ring_->consume(bank.slot[r]);
    t2_ms_[t] = now_ms() - start;
}

void Session::sample_row(uint64_t t, uint32_t r, const Bank& bank, bool step_fb) {
    const StepOutput& o = so_[r];
    const Vector& ref = o.logits;
    const FusionConfig& fc = cfg_.fusion;
    const bool active = distill_ && bank.h1_ok[r] && bank.hl_ok[r];
    const uint64_t p_idx = r / K_, s_idx = r % K_;
    const double u = stream_uniform(cfg_.seed, p_idx, s_idx, 2 * t);

    TraceRecord rec;
    rec.step = (uint32_t)t;
    rec.row = r;
    rec.u = u;
    rec.fallback = step_fb;
    rec.trained = active;   // finalized against the update outcome later
    rec.ablated = active && fc.ablation == AblationMode::matched_noise;

    Vector final_logits;
    int z = -1;
    if (!active) {
        final_logits = apply_filter(ref, fc.filter);
        z = sample_index(final_logits, fc.temperature, u);
    } else {
        Vector e(d_);
        for (std::size_t i = 0; i < d_; ++i) e[i] = o.hl[i] - bank.hl_hat[r][i];
        if (rec.ablated) {
            Rng noise_rng(derive_stream(cfg_.seed, p_idx, s_idx, 2 * t + 1));
            e = matched_noise(e, noise_rng);
        }
        rec.norm_e = norm2(e);
        Vector hhat(d_);
        for (std::size_t i = 0; i < d_; ++i) hhat[i] = o.hl[i] - e[i];

        if (fc.placement == FusionPlacement::latent_mix) {
            Vector fused;
            if (fc.beta == 0.0) {
                fused = ref;
            } else if (fc.form == FusionForm::amplified) {
                Vector hmix = fuse_latent(o.hl, hhat, fc.beta);
                fused = bb_.apply_head(hmix);
            } else {
                // the subtraction variant has no latent equivalent; fuse in
                // logit space, still ahead of the filter
                fused = fuse_logits(ref, bb_.apply_head(hhat), fc.beta, fc.form);
            }
            final_logits = apply_filter(fused, fc.filter);
        } else {
            std::vector<int> cands = filter_candidates(ref, fc.filter);
            Vector dist = bb_.apply_head(hhat);
            final_logits = post_filter_fuse(ref, dist, cands, fc.beta, fc.form);
        }
        z = sample_index(final_logits, fc.temperature, u);
        rec.delta = final_logits[z] - ref[z];
        double wn = 0.0, we = 0.0, dot_we = 0.0;
        for (std::size_t i = 0; i < d_; ++i) {
            const double w = bb_.head().at(z, i);
            wn += w * w;
            dot_we += w * e[i];
        }
        we = rec.norm_e;
        rec.cos_align = (wn > 0.0 && we > 0.0) ? dot_we / (std::sqrt(wn) * we) : 0.0;

        if (cfg_.capture_audit) {
            AuditStep a;
            a.step = (uint32_t)t;
            a.row = r;
            a.token = z;
            a.beta = fc.beta;
            a.form = fc.form;
            a.logits_ref = ref;
            a.logits_dist = bb_.apply_head(hhat);
            a.e_used = e;
            a.logits_fused = final_logits;
            res_.audit.push_back(std::move(a));
        }
    }

    rec.token = z;
    rec.logp_ref = log_softmax(ref)[z];
    rec.logp_new = masked_log_softmax(final_logits, fc.temperature)[z];
    res_.trace.records.push_back(rec);

    seqs_[r].generated.push_back(z);
    prev_[r] = z;
    if (all_finite(o.hl)) {
        for (std::size_t i = 0; i < d_; ++i) emb_sum_[r][i] += o.hl[i];
        ++emb_n_[r];
    }
    ++res_.counters.decode_steps;
}

void Session::push_divergence() {
    if (W_ < 2) return;
    std::vector<Vector> embs;
    embs.reserve(W_);
    for (std::size_t r = 0; r < W_; ++r) {
        if (emb_n_[r] == 0) continue;
        Vector v(d_);
        for (std::size_t i = 0; i < d_; ++i)
            v[i] = emb_sum_[r][i] / double(emb_n_[r]);
        const double n = norm2(v);
        if (n == 0.0) continue;
        for (double& x : v) x /= n;
        embs.push_back(std::move(v));
    }
    if (embs.size() < 2) {
        res_.divergence.push_back(std::numeric_limits<double>::quiet_NaN());
        return;
    }
    res_.divergence.push_back(pairwise_cosine_mean(embs));
}

void Session::step(uint64_t t) {
    const double start = now_ms();
    Bank& bank = banks_[t & 1];
    bank.pushed.clear();
    bank.predict_rows.clear();
    bank.train_rows.clear();

    // phase 1a: shallow forward, hand h1 to the ring
    for (std::size_t r = 0; r < W_; ++r) {
        if (!live_[r]) continue;
        if (states_[r]->tokens.size() + 1 > ctx_) {
            live_[r] = 0;
            seqs_[r].truncated = true;
            ++res_.counters.truncated_sequences;
            continue;
        }
        const Vector& h1 = bb_.decode_shallow(*states_[r], prev_[r]);
        if (distill_) {
            bank.slot[r] = ring_->push_h1(t, (uint32_t)r, h1);
            bank.pushed.push_back((uint32_t)r);
            bank.h1_ok[r] = all_finite(h1) ? 1 : 0;
            if (bank.h1_ok[r]) bank.predict_rows.push_back((uint32_t)r);
        }
    }

    bool any_live = false;
    for (std::size_t r = 0; r < W_; ++r) any_live |= (live_[r] != 0);
    if (!any_live) return;

    // the predict job is queued even when no row qualifies: the rendezvous
    // below doubles as the ring-safety barrier (train t-1 precedes predict t
    // in lane order), so every async step must tick the lane
    step_had_predict_[t] = (distill_ && !bank.predict_rows.empty()) ? 1 : 0;
    if (async_ && distill_) enqueue({Job::predict, t});

    // phase 1b: deep layers (concurrent with predict under async)
    for (std::size_t r = 0; r < W_; ++r) {
        if (!live_[r]) continue;
        so_[r] = bb_.decode_deep(*states_[r]);
        if (distill_) {
            ring_->fill_hl(bank.slot[r], so_[r].hl);
            bank.hl_ok[r] =
                (all_finite(so_[r].hl) && all_finite(so_[r].logits)) ? 1 : 0;
        }
    }
    deep_end_ms_[t] = now_ms();

    if (distill_) {
        for (uint32_t r : bank.predict_rows)
            if (bank.hl_ok[r]) bank.train_rows.push_back(r);
        skipped_rows_ += (long long)(bank.pushed.size() - bank.train_rows.size());
    }

    if (async_ && distill_) {
        // training queues behind predict and overlaps sampling/bookkeeping
        enqueue({Job::train, t});
    } else if (distill_) {
        do_predict(t);
    }

    // rendezvous: fused logits need the predictions
    if (async_ && distill_) {
        std::unique_lock<std::mutex> lk(m_);
        const auto ready = [&] {
            return predict_done_ >= (long long)t || lane_err_ != nullptr;
        };
        if (!cv_done_.wait_for(
                lk, std::chrono::duration<double, std::milli>(cfg_.rendezvous_timeout_ms),
                ready)) {
            step_fallback_[t] = 1;
            ++res_.counters.fallbacks;
            cv_done_.wait(lk, ready);
        }
        lk.unlock();
        rethrow_lane_error();
    }

    // phase 1c: fuse and sample
    for (std::size_t r = 0; r < W_; ++r) {
        if (!live_[r]) continue;
        sample_row(t, (uint32_t)r, bank, step_fallback_[t] != 0);
    }
    push_divergence();
    t1_ms_[t] = now_ms() - start;

    // phase 2 (sync runs it inline; async queued it already)
    if (!async_ && distill_) do_train(t);
}

void Session::finalize() {
    join_worker();
    rethrow_lane_error();

    SessionCounters& c = res_.counters;
    for (auto& rec : res_.trace.records) {
        const std::size_t s = distill_ ? scope_of(rec.row) : 0;
        rec.loss = distill_ ? scope_loss_[s][rec.step] : 0.0;
        rec.trained = rec.trained && cfg_.train && scope_trained_[s][rec.step] != 0;
        rec.t1_ms = t1_ms_[rec.step];
        rec.t2_ms = t2_ms_[rec.step];
    }
    for (auto& dst : dists_) {
        c.distiller_updates += dst.updates();
        c.rows_trained += dst.rows_trained();
        res_.scope_updates.push_back(dst.updates());
    }
    c.skipped_rows = skipped_rows_;
    c.failed_updates = failed_updates_;
    if (ring_) {
        c.ring_violations = ring_->violations();
        c.ring_max_in_flight = ring_->max_in_flight();
    }
    for (uint64_t t = 0; t < T_; ++t) {
        if (!async_ || !step_had_predict_[t]) continue;
        ++c.overlap_eligible;
        if (predict_start_ms_[t] >= 0.0 && predict_start_ms_[t] < deep_end_ms_[t])
            ++c.overlap_steps;
    }

    res_.embeddings.assign(W_, Vector(d_, 0.0));
    for (std::size_t r = 0; r < W_; ++r) {
        if (emb_n_[r] == 0) continue;
        Vector v(d_);
        for (std::size_t i = 0; i < d_; ++i)
            v[i] = emb_sum_[r][i] / double(emb_n_[r]);
        const double n = norm2(v);
        if (n == 0.0) continue;
        for (double& x : v) x /= n;
        res_.embeddings[r] = std::move(v);
    }

    TraceMeta& m = res_.trace.meta;
    m.seed = cfg_.seed;
    m.rows = (uint32_t)W_;
    m.steps = (uint32_t)T_;
    m.beta = cfg_.fusion.beta;
    m.temperature = cfg_.fusion.temperature;
    m.mode = pipeline_name(cfg_.pipeline);
    m.placement = placement_name(cfg_.fusion.placement);
    m.fusion = form_name(cfg_.fusion.form);
    m.filter = filter_name(cfg_.fusion.filter.kind);
    m.filter_value = cfg_.fusion.filter.kind == FilterKind::top_k
                         ? double(cfg_.fusion.filter.k)
                         : cfg_.fusion.filter.p;
    m.scope = scope_name(cfg_.scope);
    m.ablation = ablation_name(cfg_.fusion.ablation);
    m.config_hash = cfg_.config_hash;

    res_.sequences = std::move(seqs_);
    res_.wall_ms = now_ms();
}

SessionResult Session::run() {
    t0_ = std::chrono::steady_clock::now();
    init();
    try {
        for (uint64_t t = 0; t < T_; ++t) step(t);
    } catch (...) {
        join_worker();
        throw;
    }
    finalize();
    return std::move(res_);
}

} // namespace

void SessionConfig::validate() const {
    if (prompts == 0) throw ConfigError("prompts must be >= 1");
    if (samples_per_prompt == 0) throw ConfigError("samples_per_prompt must be >= 1");
    if (prompt_tokens.size() != prompts)
        throw ConfigError("expected " + std::to_string(prompts) +
                          " prompt token lists, got " +
                          std::to_string(prompt_tokens.size()));
    for (const auto& p : prompt_tokens)
        if (p.empty()) throw ConfigError("prompts must contain at least one token");
    fusion.validate();
    if (!(rendezvous_timeout_ms > 0.0))
        throw ConfigError("rendezvous timeout must be positive");
    const std::size_t min_cap = 2 * prompts * samples_per_prompt;
    if (ring_capacity != 0 && ring_capacity < min_cap)
        throw ConfigError("ring capacity below the double-banked minimum of " +
                          std::to_string(min_cap));
}

SessionResult run_session(const Backbone& backbone, const SessionConfig& cfg,
                          const EngineHooks& hooks) {
    Session s(backbone, cfg, hooks);
    return s.run();
}

bool session_outputs_identical(const SessionResult& a, const SessionResult& b) {
    if (a.sequences.size() != b.sequences.size()) return false;
    for (std::size_t r = 0; r < a.sequences.size(); ++r) {
        if (a.sequences[r].generated != b.sequences[r].generated) return false;
        if (a.sequences[r].truncated != b.sequences[r].truncated) return false;
    }
    return trace_equal_cross_pipeline(a.trace, b.trace);
}

} // namespace esamp
