#pragma once

// Logit fusion and sampling.
//
// The exploratory rule amplifies the reference distribution against the
// distilled one:
//
//   logits_new = (1+β)·logits_ref − β·logits_dist
//
// which is exactly the normalized ratio π_ref^(1+β) / q_dist^β. The per-token
// shift decomposes as β·⟨w_z, e⟩ = β·‖w_z‖·‖e‖·cos(w_z, e) where w_z is the
// lm-head row and e the latent prediction error, so the direction of e, not
// just its size, decides which tokens get boosted.
//
// Filters: none / top-k / top-p (smallest prefix reaching mass p) / min-p
// (keep probs ≥ p·max-prob). Ties at a filter boundary keep the lower token
// id. Temperature applies after fusion; the distilled distribution is never
// temperature-scaled.
//
// Two fusion placements:
//   latent_mix:  h_mix = (1+β)·hL − β·ĥL projected once through the head;
//                fusion happens before any filtering.
//   post_filter: the reference logits are filtered first and only surviving
//                candidates are fused (restricted renormalized ratio).

#include <vector>

#include "esamp/numerics.hpp"
#include "esamp/rng.hpp"

namespace esamp {

enum class FilterKind { none, top_k, top_p, min_p };

struct FilterPolicy {
    FilterKind kind = FilterKind::none;
    int k = 0;        // top_k
    double p = 0.0;   // top_p / min_p
};

enum class FusionPlacement { latent_mix, post_filter };
enum class AblationMode { off, matched_noise };

// amplified is the engine default; subtraction is the naive
// logits_ref − β·logits_dist variant, kept for comparison runs
enum class FusionForm { amplified, subtraction };

struct FusionConfig {
    double beta = 0.25;
    double temperature = 1.0;
    FilterPolicy filter{};
    FusionPlacement placement = FusionPlacement::latent_mix;
    AblationMode ablation = AblationMode::off;
    FusionForm form = FusionForm::amplified;

    void validate() const;   // ConfigError on bad values
};

// (1+β)·ref − β·dist elementwise; β=0 returns ref bit-exactly
Vector fuse_logits(const Vector& logits_ref, const Vector& logits_dist, double beta,
                   FusionForm form = FusionForm::amplified);

// same combination in latent space: (1+β)·hl − β·hl_hat
Vector fuse_latent(const Vector& hl, const Vector& hl_hat, double beta);

// r(z) = log π_ref(z) − log q_dist(z); ContractError on non-positive probs
double intrinsic_reward(const Vector& pi_ref, const Vector& q_dist, std::size_t z);

// same reward for every token, computed in log space from raw logits
Vector intrinsic_reward_from_logits(const Vector& logits_ref, const Vector& logits_dist);

// masked copy: filtered-out entries become -inf
Vector apply_filter(const Vector& logits, const FilterPolicy& policy);

// ids surviving the filter, ascending
std::vector<int> filter_candidates(const Vector& logits, const FilterPolicy& policy);

// fuse only `candidates`; everything else is -inf. ContractError when empty.
Vector post_filter_fuse(const Vector& logits_ref, const Vector& logits_dist,
                        const std::vector<int>& candidates, double beta,
                        FusionForm form = FusionForm::amplified);

// iid standard normal rescaled to exactly ‖e‖ (zero in → zero out)
Vector matched_noise(const Vector& e, Rng& rng);

// inverse-CDF draw from softmax(logits/T) given one uniform; deterministic
int sample_index(const Vector& logits, double temperature, double u);

// draws exactly one uniform from rng
int sample_token(const Vector& logits, double temperature, Rng& rng);

struct NoveltySignal {
    double e_norm = 0.0;
    std::vector<int> tokens;
    Vector delta_logit;   // β·⟨w_z, e⟩ per candidate
    Vector cosine;        // cos(w_z, e) per candidate (0 when a norm is 0)
};

// per-candidate novelty decomposition against the lm-head rows; reuses the
// buffers inside `out`, so the hot path does not allocate once warmed up
void novelty_decomposition(const Vector& e, const Matrix& head,
                           const std::vector<int>& candidates, double beta,
                           NoveltySignal& out);

} // namespace esamp
