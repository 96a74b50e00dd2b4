#pragma once

// Synthetic branching backbone with queryable ground truth.
//
// Timeline (driven entirely by the consumed token stream):
//   wait phase:  emits wait (id 0) or go (id 1); after `wait_cap` pre-go
//                tokens the distribution forces go, bounding the session.
//   menu step:   the step right after go was consumed. The reference
//                distribution puts exactly equal logits on the M branch
//                tokens, so each mode is equally likely under vanilla
//                sampling — that makes vanilla coverage analytically
//                M·(1−((M−1)/M)^K).
//   mode phase:  the token emitted at the menu commits the trajectory to
//                that mode; logits then concentrate on the mode's body
//                tokens (plus an affinity for the mode's own branch token,
//                which is what a shared distiller learns to recognize).
//
// The hidden layout makes head consistency exact: hL's first `vocab`
// coordinates are the logits (head = [I | 0]), the remaining `scratch`
// coordinates carry a fixed nonlinear map of h1 so the distiller always has
// a context-dependent regression target. h1 is a decayed embedding of the
// recent token window. Ground-truth mode of any trajectory is recoverable
// from its tokens alone.

#include <optional>

#include "esamp/backbone.hpp"

namespace esamp {

inline constexpr int kSynthWaitToken = 0;
inline constexpr int kSynthGoToken = 1;

struct SyntheticBranchConfig {
    std::size_t modes = 4;                  // M >= 2
    std::vector<int> branch_tokens{};       // default: 2 .. 2+M-1
    uint64_t seed = 1234;

    std::size_t vocab = 64;
    std::size_t scratch = 16;               // d = vocab + scratch
    std::size_t body_width = 1;

    // timeline shape. The slow go-rate spreads the rows' branch decisions
    // apart in time, which is what lets a shared online predictor trained on
    // early committers inform the later rows' decisions; it also keeps the
    // commit times insensitive to small logit perturbations.
    double p_wait = 0.95;
    std::size_t wait_cap = 40;

    // logit construction constants. A single high-logit body token per mode
    // makes committed rows near-deterministic, so run-to-run similarity
    // reflects the mode composition rather than body sampling noise.
    double menu_logit = 10.0;
    double off_logit = -10.0;
    double body_logit = 12.0;
    double branch_affinity = 3.0;
    double branch_repulsion = -10.0;   // == off_logit: branch re-entry reads as dead
    double body_jitter = 0.5;

    // h1 embedding shape
    double base_scale = 4.0;
    double ctx_scale = 0.6;
    double ctx_decay = 0.5;
    std::size_t window = 4;

    double psi_scale = 0.5;
    std::size_t ctx_limit = 4096;
};

class SyntheticBranchModel final : public Backbone {
public:
    explicit SyntheticBranchModel(const SyntheticBranchConfig& cfg);

    const BackboneSpec& spec() const override { return spec_; }
    const Matrix& head() const override { return head_; }

    std::unique_ptr<SequenceState> prefill(const std::vector<int>& prompt) const override;
    const Vector& decode_shallow(SequenceState& s, int token) const override;
    StepOutput decode_deep(SequenceState& s) const override;

    // ground truth: mode committed by the first token emitted after go,
    // nullopt while unbranched (or if that token is not a branch token)
    std::optional<int> trajectory_mode(const std::vector<int>& consumed_tokens) const;
    std::optional<int> mode_of_token(int token) const;

    const SyntheticBranchConfig& config() const { return cfg_; }
    int body_begin(int mode) const;

private:
    SyntheticBranchConfig cfg_;
    BackboneSpec spec_;
    Matrix head_;                 // [vocab × d] = [I | 0]
    Matrix tok_emb_;              // [vocab × d] context embeddings for h1
    Vector base_dir_;             // shared phase direction
    Matrix psi_w1_, psi_w2_;      // fixed nonlinear map into the scratch coords
    Vector body_jitter_;          // per-token seeded jitter on body logits

    struct Scan {
        enum Kind { wait, forced_go, menu, committed, dead } kind = wait;
        int mode = -1;
    };
    Scan scan_phase(const std::vector<int>& tokens) const;
    Vector phase_logits(const Scan& sc) const;
    Vector make_h1(const std::vector<int>& tokens) const;
};

} // namespace esamp
