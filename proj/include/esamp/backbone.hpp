#pragma once

// Pluggable autoregressive backbone abstraction. The decode step is split so
// a pipeline can start distiller work as soon as the shallow (layer-1) hidden
// state exists, while the remaining layers still run:
//
//   decode_shallow(state, token) -> h1        (consumes the token)
//   decode_deep(state)           -> {h1, hL, logits}
//
// `logits` is always head()·hL for the same hL returned in the StepOutput, so
// latent-space interventions commute with the head exactly.

#include <memory>
#include <vector>

#include "esamp/numerics.hpp"

namespace esamp {

enum class Phase { prefill, decode };

// which tensor counts as the layer-1 tap
enum class ShallowTap {
    post_block,   // residual stream right after block 1 (the final layer's input when L=2)
    post_norm,    // the normalized tensor block 2's attention actually reads
};

struct BackboneSpec {
    std::size_t vocab = 64;
    std::size_t d_model = 64;
    std::size_t layers = 4;     // >= 2
    std::size_t heads = 2;
    std::size_t ctx = 256;
    ShallowTap tap = ShallowTap::post_block;
    uint64_t seed = 0x5eedULL;
};

struct StepOutput {
    Vector h1;       // shallow tap
    Vector hl;       // final hidden state, the exact head input
    Vector logits;   // head()·hl
};

// Opaque per-sequence cache handle. Single-owner: movable across threads but
// never shared. Backbones derive their own cache layout from this.
struct SequenceState {
    virtual ~SequenceState() = default;
    Phase phase = Phase::prefill;
    std::vector<int> tokens;     // every token consumed so far (prefill + decode)
    std::size_t prompt_len = 0;  // how many of those were prefilled
};

class Backbone {
public:
    virtual ~Backbone() = default;

    virtual const BackboneSpec& spec() const = 0;
    virtual const Matrix& head() const = 0;   // [vocab × d_model]

    // Consumes the prompt; returns a decode-phase state positioned after it.
    // The prompt may be empty (position-0 state).
    virtual std::unique_ptr<SequenceState> prefill(const std::vector<int>& prompt) const = 0;

    // Feeds one token, runs through layer 1, leaves the rest pending.
    // Throws InputError for out-of-range tokens, CapacityError past ctx,
    // ContractError when a previous shallow call is still pending.
    virtual const Vector& decode_shallow(SequenceState& s, int token) const = 0;

    // Completes the pending step. ContractError when nothing is pending.
    virtual StepOutput decode_deep(SequenceState& s) const = 0;

    StepOutput decode_step(SequenceState& s, int token) const {
        decode_shallow(s, token);
        return decode_deep(s);
    }

    Vector apply_head(const Vector& h) const { return matvec(head(), h); }

protected:
    void check_token(int token) const;
};

} // namespace esamp
