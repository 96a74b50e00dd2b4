#pragma once

// Online latent distiller: a residual two-block gated-SwiGLU MLP trained on
// the fly to map the backbone's shallow hidden state h1 to its final hidden
// state hL. Its prediction error is the novelty signal that drives sampling.
//
//   block(x) = x + W_down(silu(W_gate x) ⊙ (W_up x))
//   f(x)     = block2(block1(x))
//   loss     = (1/B) Σ_i ‖hL_i − f(h1_i)‖²
//
// Optimizer: Adam (lr 4e-4, eps 1e-4) with global-norm gradient clipping at
// 0.5, per-token update cadence. With all parameters zero the blocks pass
// h1 through unchanged.
//
// Checkpoint tensor order (kind = kKindDistiller):
//   b1.gate, b1.up, b1.down, b2.gate, b2.up, b2.down,
//   then the Adam moments in the same order (m then v)
// fields: d, hidden, seed, update count, rows trained, adam step t

#include <string>
#include <utility>

#include "esamp/numerics.hpp"

namespace esamp {

struct DistillerConfig {
    std::size_t d = 64;
    std::size_t hidden = 384;
    uint64_t seed = 7;
    double init_scale = 1.0;   // weights ~ U(±init_scale/√fan_in)
    AdamConfig adam{};
};

enum class DistillerScope { shared, per_prompt };

class Distiller {
public:
    static Distiller make(const DistillerConfig& cfg);

    // pure forward pass, batched rows; usable concurrently with anything that
    // does not mutate the parameters
    Matrix predict(const Matrix& h1) const;
    Vector predict_one(const Vector& h1) const;

    // e = hL − f(h1) and its norm
    std::pair<Vector, double> novelty(const Vector& h1, const Vector& hl) const;

    double loss(const Matrix& h1, const Matrix& hl) const;

    // exact analytic gradients of the batch loss, parameter order
    // b1.gate, b1.up, b1.down, b2.gate, b2.up, b2.down
    std::vector<Matrix> gradients(const Matrix& h1, const Matrix& hl, double* loss_out) const;

    // one clipped Adam update; returns the pre-update batch loss.
    // NumericError on non-finite inputs/gradients (parameters untouched).
    double train_step(const Matrix& h1, const Matrix& hl);

    std::size_t param_count() const;
    long long updates() const { return updates_; }
    long long rows_trained() const { return rows_trained_; }
    const DistillerConfig& config() const { return cfg_; }

    void save(const std::string& path) const;
    static Distiller load(const std::string& path);

    // mutable parameter access in checkpoint order (tests, zeroing)
    std::vector<Matrix*> params();

private:
    DistillerConfig cfg_;
    SwiGluParams b1_, b2_;
    AdamState opt_;
    long long updates_ = 0;
    long long rows_trained_ = 0;

    Matrix forward(const Matrix& x, SwiGluCache* c1, SwiGluCache* c2, Matrix* y1_out) const;
};

} // namespace esamp
