#pragma once

// Numerical verification of the math the sampler is built on:
//
//  1. The KL-regularized reward-maximization problem over a simplex has the
//     closed-form optimum π*(z) ∝ π_ref(z)·exp(r(z)/α). Checked against an
//     independent projected-gradient solver and, for m ≤ 3, an exhaustive
//     grid, plus the Lagrangian stationarity condition.
//  2. On reward structures where a region yields reward only on first entry
//     and trajectories commit to one region (vanishing redundancy), the
//     optimal Q equals the instantaneous reward exactly; a re-arming reward
//     breaks the equality. Checked by exact backward induction on the
//     registry-augmented state.
//  3. Session fusion audit: replays every recorded decision three ways
//     (logit combination, probability-ratio form, error-vector
//     decomposition) against the logits the sampler actually used.

#include <cstdint>
#include <vector>

#include "esamp/engine.hpp"
#include "esamp/numerics.hpp"

namespace esamp {

struct SimplexProblem {
    Vector r;        // reward per action
    Vector pi_ref;   // strictly positive reference distribution
    double alpha;    // regularization strength, > 0

    void validate() const;   // ConfigError on bad values
    std::size_t size() const { return r.size(); }
};

// objective J(π) = Σ π(z) r(z) − α KL(π ‖ π_ref), with 0·ln 0 := 0
double kl_objective(const SimplexProblem& p, const Vector& pi);

// π*(z) ∝ π_ref(z)·exp(r(z)/α), normalized in log space
Vector closed_form_policy(const SimplexProblem& p);

struct SolveReport {
    bool converged = false;
    int iterations = 0;
    double objective = 0.0;
    double move_residual = 0.0;   // L1 gradient-mapping residual at exit
};

// curvature-scaled projected gradient ascent with Armijo backtracking,
// 10k iteration budget
Vector solve_kl_numeric(const SimplexProblem& p, SolveReport* report = nullptr);

// exhaustive simplex grid search, m <= 3 only
Vector solve_kl_grid(const SimplexProblem& p, double resolution = 1e-3);

double total_variation(const Vector& a, const Vector& b);

// max-minus-min of r(z) − α(ln π(z) + 1) + α ln π_ref(z) across z;
// ~0 iff π satisfies the stationarity condition with some multiplier λ
double stationarity_spread(const SimplexProblem& p, const Vector& pi);

// Tiny episodic decision process over semantic regions. A trajectory starts
// uncommitted; entering a region pays that region's reward only if the
// region is not yet in the visited registry. In the vanishing-redundancy
// form, entry commits the trajectory (all actions stay put), so no further
// reward is reachable and Q*(s,z) = r(s,z) exactly. The re-arming form lets
// trajectories hop between regions and clears the registry every
// rearm_period steps, which re-creates future reward and breaks the
// equality.
struct ToyMdp {
    int regions = 2;       // |R| <= 8
    int actions = 2;       // <= min(regions, 4); action a enters region a
    int horizon = 3;       // H <= 10
    double gamma = 1.0;    // (0, 1]
    std::vector<double> base_reward;   // per region, integer-valued
    uint32_t visited0 = 0; // registry seeded by earlier trajectories
    bool rearming = false;
    int rearm_period = 0;  // used when rearming

    void validate() const;
};

struct MdpCheck {
    bool equality_holds = false;
    double max_gap = 0.0;          // max |Q*(s,z) − r(s,z)| over reachable pairs
    long long pairs_checked = 0;
    int bad_t = -1, bad_loc = -2, bad_action = -1;   // first violation if any
    uint32_t bad_mask = 0;
};

// exact backward induction on (t, location, registry); asserts nothing,
// reports whether Q* == r everywhere reachable
MdpCheck check_q_equals_r(const ToyMdp& mdp);

std::vector<ToyMdp> make_vanishing_mdps(std::size_t count, uint64_t seed);
std::vector<ToyMdp> make_rearming_mdps(std::size_t count, uint64_t seed);

struct AuditReport {
    bool ok = false;
    double tol = 0.0;
    long long steps_checked = 0;
    double max_logit_dev = 0.0;    // recombined logits vs logits used
    double max_ratio_dev = 0.0;    // ratio-form probabilities vs probabilities used
    double max_recon_dev = 0.0;    // decomposition reconstruction vs logits used
    long long first_bad_index = -1;
    uint32_t first_bad_step = 0;
    uint32_t first_bad_row = 0;
};

// Replays each audit record's fusion three ways against the stored fused
// logits. inject_sign_fault flips the combination sign (a deliberate bug)
// so failure detection itself can be tested.
AuditReport session_identity_audit(const std::vector<AuditStep>& audit,
                                   const Matrix& head, double tol = 1e-9,
                                   bool inject_sign_fault = false);

} // namespace esamp
