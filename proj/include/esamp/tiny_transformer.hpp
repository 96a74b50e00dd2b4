#pragma once

// Deterministic pre-norm decoder-only transformer small enough for exhaustive
// testing: multi-head attention + gated-SwiGLU FFN, learned absolute
// positions, RMSNorm, no dropout, no biases. Weights come from a seeded
// generator, so the same seed always builds the same model bit for bit.
//
// Checkpoint tensor order (kind = kKindTinyTransformer):
//   tok_emb [V×d], pos_emb [ctx×d],
//   per layer: attn_norm [1×d], wq, wk, wv, wo [d×d],
//              ffn_norm [1×d], w_gate [ffn×d], w_up [ffn×d], w_down [d×ffn],
//   final_norm [1×d], head [V×d]
// fields: vocab, d_model, layers, heads, ctx, ffn_inner, tap, seed

#include <optional>
#include <string>

#include "esamp/backbone.hpp"

namespace esamp {

struct TinyTransformerConfig {
    BackboneSpec spec{};           // defaults: |V|=64, d=64, L=4, 2 heads, ctx 256
    std::size_t ffn_inner = 256;   // 4·d
    bool capture_streams = false;  // stash per-layer residual streams in the state (tests)
};

struct LayerWeights {
    Matrix attn_norm, wq, wk, wv, wo;
    Matrix ffn_norm, w_gate, w_up, w_down;
};

class TinyTransformer final : public Backbone {
public:
    explicit TinyTransformer(const TinyTransformerConfig& cfg);

    const BackboneSpec& spec() const override { return cfg_.spec; }
    const Matrix& head() const override { return head_; }

    std::unique_ptr<SequenceState> prefill(const std::vector<int>& prompt) const override;
    const Vector& decode_shallow(SequenceState& s, int token) const override;
    StepOutput decode_deep(SequenceState& s) const override;

    std::size_t param_count() const;
    static std::size_t param_count(const TinyTransformerConfig& cfg);

    // per-layer post-block residual streams of the last completed step
    // (populated only when capture_streams is set)
    static const std::vector<Vector>& captured_streams(const SequenceState& s);

    void save(const std::string& path) const;
    static TinyTransformer load(const std::string& path);

    const TinyTransformerConfig& config() const { return cfg_; }

private:
    TinyTransformerConfig cfg_;
    Matrix tok_emb_, pos_emb_;
    std::vector<LayerWeights> layers_;
    Matrix final_norm_, head_;

    struct State;
    void run_block(std::size_t layer, Vector& x, State& st, std::size_t pos) const;
    Vector rmsnorm(const Vector& x, const Matrix& gain) const;
    void init_weights();
};

} // namespace esamp
