#include "esamp/synthetic_branch.hpp"

#include <algorithm>
#include <cmath>

#include "esamp/errors.hpp"
#include "esamp/rng.hpp"

namespace esamp {

namespace {

struct SynthState final : SequenceState {
    Vector h1;
    bool pending = false;
};

} // namespace

SyntheticBranchModel::SyntheticBranchModel(const SyntheticBranchConfig& cfg) : cfg_(cfg) {
    if (cfg_.modes < 2 || cfg_.modes > 8)
        throw ConfigError("synthetic branch: modes must be in [2, 8]");
    if (cfg_.branch_tokens.empty()) {
        for (std::size_t k = 0; k < cfg_.modes; ++k)
            cfg_.branch_tokens.push_back(int(2 + k));
    }
    if (cfg_.branch_tokens.size() != cfg_.modes)
        throw ConfigError("synthetic branch: need exactly one branch token per mode");

    const int body_base = int(2 + cfg_.modes);
    const int body_end = body_base + int(cfg_.modes * cfg_.body_width);
    if (std::size_t(body_end) > cfg_.vocab)
        throw ConfigError("synthetic branch: vocab too small for mode bodies");

    std::vector<int> seen;
    for (int b : cfg_.branch_tokens) {
        if (b < 0 || std::size_t(b) >= cfg_.vocab)
            throw ConfigError("synthetic branch: branch token out of range");
        if (b == kSynthWaitToken || b == kSynthGoToken)
            throw ConfigError("synthetic branch: branch token collides with wait/go");
        if (b >= body_base && b < body_end)
            throw ConfigError("synthetic branch: branch token collides with a mode body");
        if (std::find(seen.begin(), seen.end(), b) != seen.end())
            throw ConfigError("synthetic branch: duplicate branch token");
        seen.push_back(b);
    }
    if (cfg_.p_wait <= 0.0 || cfg_.p_wait >= 1.0)
        throw ConfigError("synthetic branch: p_wait must be in (0, 1)");
    if (cfg_.window == 0)
        throw ConfigError("synthetic branch: window must be >= 1");

    const std::size_t d = cfg_.vocab + cfg_.scratch;
    spec_.vocab = cfg_.vocab;
    spec_.d_model = d;
    spec_.layers = 2;
    spec_.heads = 1;
    spec_.ctx = cfg_.ctx_limit;
    spec_.seed = cfg_.seed;

    head_ = Matrix(cfg_.vocab, d);
    for (std::size_t i = 0; i < cfg_.vocab; ++i) head_.at(i, i) = 1.0;

    tok_emb_ = Matrix(cfg_.vocab, d);
    {
        Rng rng(derive_stream(cfg_.seed, 1));
        const double s = 1.0 / std::sqrt(double(d));
        for (double& v : tok_emb_.a) v = rng.normal() * s;
    }
    base_dir_.assign(d, 0.0);
    {
        Rng rng(derive_stream(cfg_.seed, 2));
        for (double& v : base_dir_) v = rng.normal();
        const double n = norm2(base_dir_);
        for (double& v : base_dir_) v /= n;
    }
    const std::size_t psi_hidden = 32;
    psi_w1_ = Matrix(psi_hidden, d);
    psi_w2_ = Matrix(cfg_.scratch, psi_hidden);
    {
        Rng rng(derive_stream(cfg_.seed, 3));
        const double s1 = 1.0 / std::sqrt(double(d));
        for (double& v : psi_w1_.a) v = rng.normal() * s1;
        const double s2 = 1.0 / std::sqrt(double(psi_hidden));
        for (double& v : psi_w2_.a) v = rng.normal() * s2;
    }
    body_jitter_.assign(cfg_.vocab, 0.0);
    {
        Rng rng(derive_stream(cfg_.seed, 4));
        for (double& v : body_jitter_) v = rng.uniform(-cfg_.body_jitter, cfg_.body_jitter);
    }
}

int SyntheticBranchModel::body_begin(int mode) const {
    return int(2 + cfg_.modes + std::size_t(mode) * cfg_.body_width);
}

std::optional<int> SyntheticBranchModel::mode_of_token(int token) const {
    for (std::size_t k = 0; k < cfg_.branch_tokens.size(); ++k)
        if (cfg_.branch_tokens[k] == token) return int(k);
    return std::nullopt;
}

SyntheticBranchModel::Scan SyntheticBranchModel::scan_phase(const std::vector<int>& tokens) const {
    std::size_t go_at = tokens.size();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == kSynthGoToken) {
            go_at = i;
            break;
        }
    }
    Scan sc;
    if (go_at == tokens.size()) {
        sc.kind = (tokens.size() >= cfg_.wait_cap) ? Scan::forced_go : Scan::wait;
        return sc;
    }
    if (go_at + 1 == tokens.size()) {
        sc.kind = Scan::menu;
        return sc;
    }
    if (auto m = mode_of_token(tokens[go_at + 1])) {
        sc.kind = Scan::committed;
        sc.mode = *m;
        return sc;
    }
    sc.kind = Scan::dead;
    return sc;
}

Vector SyntheticBranchModel::phase_logits(const Scan& sc) const {
    Vector logits(cfg_.vocab, cfg_.off_logit);
    switch (sc.kind) {
        case Scan::wait:
            logits[kSynthGoToken] = 0.0;
            logits[kSynthWaitToken] = std::log(cfg_.p_wait / (1.0 - cfg_.p_wait));
            break;
        case Scan::forced_go:
            logits[kSynthGoToken] = cfg_.menu_logit;
            break;
        case Scan::menu:
            for (int b : cfg_.branch_tokens) logits[std::size_t(b)] = cfg_.menu_logit;
            break;
        case Scan::committed: {
            const int begin = body_begin(sc.mode);
            for (std::size_t j = 0; j < cfg_.body_width; ++j) {
                const std::size_t z = std::size_t(begin) + j;
                logits[z] = cfg_.body_logit + body_jitter_[z];
            }
            // a committed trajectory marks branch re-entry as dead; the deep
            // dip below off_logit is the signature a shared predictor learns
            for (int b : cfg_.branch_tokens) logits[std::size_t(b)] = cfg_.branch_repulsion;
            logits[std::size_t(cfg_.branch_tokens[std::size_t(sc.mode)])] = cfg_.branch_affinity;
            break;
        }
        case Scan::dead:
            logits[kSynthWaitToken] = cfg_.menu_logit;
            break;
    }
    return logits;
}

Vector SyntheticBranchModel::make_h1(const std::vector<int>& tokens) const {
    const std::size_t d = spec_.d_model;
    Vector h1(d);
    for (std::size_t i = 0; i < d; ++i) h1[i] = cfg_.base_scale * base_dir_[i];
    double decay = 1.0;
    const std::size_t win = std::min(cfg_.window, tokens.size());
    for (std::size_t j = 0; j < win; ++j) {
        const double* e = tok_emb_.row(std::size_t(tokens[tokens.size() - 1 - j]));
        const double c = cfg_.ctx_scale * decay;
        for (std::size_t i = 0; i < d; ++i) h1[i] += c * e[i];
        decay *= cfg_.ctx_decay;
    }
    return h1;
}

std::unique_ptr<SequenceState> SyntheticBranchModel::prefill(const std::vector<int>& prompt) const {
    auto st = std::make_unique<SynthState>();
    st->phase = Phase::prefill;
    for (int t : prompt) {
        check_token(t);
        if (st->tokens.size() >= cfg_.ctx_limit)
            throw CapacityError("synthetic branch: context limit exhausted");
        st->tokens.push_back(t);
    }
    st->prompt_len = st->tokens.size();
    st->phase = Phase::decode;
    return st;
}

const Vector& SyntheticBranchModel::decode_shallow(SequenceState& s, int token) const {
    auto& st = dynamic_cast<SynthState&>(s);
    if (st.pending)
        throw ContractError("synthetic branch: decode_deep not called for previous token");
    check_token(token);
    if (st.tokens.size() >= cfg_.ctx_limit)
        throw CapacityError("synthetic branch: context limit exhausted");
    st.tokens.push_back(token);
    st.h1 = make_h1(st.tokens);
    st.pending = true;
    return st.h1;
}

StepOutput SyntheticBranchModel::decode_deep(SequenceState& s) const {
    auto& st = dynamic_cast<SynthState&>(s);
    if (!st.pending)
        throw ContractError("synthetic branch: no pending shallow step");
    st.pending = false;

    const Scan sc = scan_phase(st.tokens);
    const Vector logits = phase_logits(sc);

    const std::size_t d = spec_.d_model;
    StepOutput out;
    out.h1 = st.h1;
    out.hl.assign(d, 0.0);
    for (std::size_t i = 0; i < cfg_.vocab; ++i) out.hl[i] = logits[i];

    // fixed nonlinear map of h1 into the scratch coordinates
    Vector hmid(psi_w1_.rows);
    for (std::size_t i = 0; i < psi_w1_.rows; ++i) {
        const double* row = psi_w1_.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += row[j] * st.h1[j];
        hmid[i] = std::tanh(acc);
    }
    for (std::size_t i = 0; i < cfg_.scratch; ++i) {
        const double* row = psi_w2_.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < hmid.size(); ++j) acc += row[j] * hmid[j];
        out.hl[cfg_.vocab + i] = cfg_.psi_scale * std::tanh(acc);
    }

    if (st.phase == Phase::decode) out.logits = matvec(head_, out.hl);
    return out;
}

std::optional<int> SyntheticBranchModel::trajectory_mode(const std::vector<int>& consumed) const {
    for (std::size_t i = 0; i + 1 < consumed.size(); ++i)
        if (consumed[i] == kSynthGoToken) return mode_of_token(consumed[i + 1]);
    return std::nullopt;
}

} // namespace esamp
