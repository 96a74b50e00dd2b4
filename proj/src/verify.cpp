#include "esamp/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "esamp/errors.hpp"
#include "esamp/rng.hpp"

namespace esamp {

namespace {

constexpr int kSolverBudget = 10000;
constexpr double kArmijoSigma = 1e-4;
// Iterates stay at least this far inside the simplex: the objective's slope
// into the interior is infinite at the boundary, so a coordinate at exactly
// zero would poison the next gradient. Optima below the floor get pinned at
// it with a negative ascent margin and simply stay put; the distortion is at
// most m·floor in total variation, far inside the agreement tolerance.
constexpr double kInteriorFloor = 1e-9;

// Euclidean projection onto the probability simplex
Vector project_simplex(const Vector& v) {
    const std::size_t m = v.size();
    Vector u = v;
    std::sort(u.begin(), u.end(), std::greater<double>());
    double css = 0.0, theta = 0.0;
    std::size_t rho = 0;
    for (std::size_t j = 0; j < m; ++j) {
        css += u[j];
        const double t = (css - 1.0) / double(j + 1);
        if (u[j] - t > 0.0) {
            rho = j;
            theta = t;
        }
    }
    (void)rho;
    Vector out(m);
    for (std::size_t i = 0; i < m; ++i) out[i] = std::max(v[i] - theta, 0.0);
    return out;
}

// projection followed by the interior floor; the clamped excess comes out of
// the largest coordinate so the result still sums to one exactly
Vector project_interior(const Vector& v) {
    Vector out = project_simplex(v);
    double excess = 0.0;
    std::size_t top = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i] < kInteriorFloor) {
            excess += kInteriorFloor - out[i];
            out[i] = kInteriorFloor;
        }
        if (out[i] > out[top]) top = i;
    }
    out[top] -= excess;
    return out;
}

// minimize ½ Σ (x_z − v_z)²/D_z subject to Σ x = 1, x ≥ floor. KKT gives
// x_z = max(v_z − ν·D_z, floor); the multiplier ν is found exactly by walking
// the sorted breakpoints ν_z = (v_z − floor)/D_z of the piecewise-linear
// total-mass function.
Vector project_weighted(const Vector& v, const Vector& D) {
    const std::size_t m = v.size();
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return (v[a] - kInteriorFloor) / D[a] > (v[b] - kInteriorFloor) / D[b];
    });
    double sv = 0.0, sd = 0.0, nu = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const std::size_t z = order[j];
        sv += v[z];
        sd += D[z];
        const double cand = (sv + kInteriorFloor * double(m - j - 1) - 1.0) / sd;
        const double hi = (v[z] - kInteriorFloor) / D[z];
        const double lo = (j + 1 < m)
                              ? (v[order[j + 1]] - kInteriorFloor) / D[order[j + 1]]
                              : -std::numeric_limits<double>::infinity();
        nu = cand;
        if (cand <= hi && cand >= lo) break;
    }
    Vector out(m);
    double sum = 0.0;
    std::size_t top = 0;
    for (std::size_t z = 0; z < m; ++z) {
        out[z] = std::max(v[z] - nu * D[z], kInteriorFloor);
        sum += out[z];
        if (out[z] > out[top]) top = z;
    }
    out[top] += 1.0 - sum;   // absorb rounding drift so the mass is exact
    return out;
}

} // namespace

void SimplexProblem::validate() const {
    if (r.size() < 2) throw ConfigError("simplex problem needs m >= 2 actions");
    if (pi_ref.size() != r.size())
        throw DimensionError("reward and reference lengths differ");
    if (!(alpha > 0.0) || !std::isfinite(alpha))
        throw ConfigError("alpha must be positive and finite");
    double sum = 0.0;
    for (double p : pi_ref) {
        if (!(p > 0.0)) throw ConfigError("reference distribution must be strictly positive");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("reference distribution must sum to 1");
    for (double x : r)
        if (!std::isfinite(x)) throw NumericError("non-finite reward");
}

double kl_objective(const SimplexProblem& p, const Vector& pi) {
    if (pi.size() != p.size()) throw DimensionError("policy length mismatch");
    double j = 0.0;
    for (std::size_t z = 0; z < pi.size(); ++z) {
        j += pi[z] * p.r[z];
        if (pi[z] > 0.0)
            j -= p.alpha * pi[z] * (std::log(pi[z]) - std::log(p.pi_ref[z]));
    }
    return j;
}

Vector closed_form_policy(const SimplexProblem& p) {
    p.validate();
    Vector scores(p.size());
    for (std::size_t z = 0; z < p.size(); ++z)
        scores[z] = std::log(p.pi_ref[z]) + p.r[z] / p.alpha;
    return softmax(scores);
}

Vector solve_kl_numeric(const SimplexProblem& p, SolveReport* report) {
    p.validate();
    const std::size_t m = p.size();
    Vector pi = project_interior(p.pi_ref);
    double J = kl_objective(p, pi);

    // Projected gradient ascent with Armijo backtracking. The trial point is
    // scaled per coordinate by the inverse diagonal curvature D_z = π_z/α
    // (the Hessian of J is exactly −α/π on the diagonal), with the matching
    // D-weighted projection back onto the simplex. The scaling matters: the
    // plain Euclidean step is throttled by the stiffest coordinate, and for
    // small α the curvature ratio across coordinates reaches ~1e7, which no
    // single step length can serve within the iteration budget.
    bool converged = false;
    double residual = 0.0;
    int it = 0;
    Vector g(m), probe(m), v(m), D(m), d(m), trial(m);

    const auto gradient = [&](const Vector& x, Vector& out) {
        for (std::size_t z = 0; z < m; ++z)
            out[z] = p.r[z] -
                     p.alpha * (std::log(x[z]) - std::log(p.pi_ref[z]) + 1.0);
    };

    for (; it < kSolverBudget; ++it) {
        gradient(pi, g);

        // gradient-mapping stationarity: a unit probe step projects back to
        // the iterate only when no feasible ascent direction is left. Floor
        // pinning costs ~2·floor per pinned coordinate in this residual, so
        // the threshold carries a matching allowance.
        residual = 0.0;
        for (std::size_t z = 0; z < m; ++z) probe[z] = pi[z] + g[z];
        const Vector mapped = project_interior(probe);
        for (std::size_t z = 0; z < m; ++z) residual += std::abs(mapped[z] - pi[z]);
        if (residual < 1e-11 + 4.0 * double(m) * kInteriorFloor) {
            converged = true;
            break;
        }

        for (std::size_t z = 0; z < m; ++z) {
            D[z] = pi[z] / p.alpha;
            v[z] = pi[z] + D[z] * g[z];
        }
        const Vector target = project_weighted(v, D);
        double lin = 0.0, dnorm = 0.0;
        for (std::size_t z = 0; z < m; ++z) {
            d[z] = target[z] - pi[z];
            lin += g[z] * d[z];
            dnorm += std::abs(d[z]);
        }
        if (lin <= 0.0 || dnorm < 1e-15) {
            // fixed point of the scaled projection: stationary to precision
            converged = true;
            break;
        }

        double lambda = 1.0;
        bool accepted = false;
        double Jt = J;
        for (int bt = 0; bt < 60 && !accepted; ++bt) {
            for (std::size_t z = 0; z < m; ++z) trial[z] = pi[z] + lambda * d[z];
            Jt = kl_objective(p, trial);
            if (Jt >= J + kArmijoSigma * lambda * lin)
                accepted = true;
            else
                lambda *= 0.5;
        }
        if (!accepted) break;   // line search exhausted
        pi = trial;
        J = Jt;
    }
    if (report) {
        report->converged = converged;
        report->iterations = it;
        report->objective = J;
        report->move_residual = residual;
    }
    return pi;
}

Vector solve_kl_grid(const SimplexProblem& p, double resolution) {
    p.validate();
    if (!(resolution > 0.0) || resolution > 0.5)
        throw ConfigError("grid resolution out of range");
    const std::size_t m = p.size();
    if (m > 3) throw ContractError("grid search supports m <= 3 only");
    const long long n = std::llround(1.0 / resolution);
    Vector best;
    double bestJ = -std::numeric_limits<double>::infinity();
    if (m == 2) {
        for (long long i = 0; i <= n; ++i) {
            Vector pi{double(i) / double(n), double(n - i) / double(n)};
            const double J = kl_objective(p, pi);
            if (J > bestJ) {
                bestJ = J;
                best = std::move(pi);
            }
        }
    } else {
        for (long long i = 0; i <= n; ++i)
            for (long long j = 0; i + j <= n; ++j) {
                Vector pi{double(i) / double(n), double(j) / double(n),
                          double(n - i - j) / double(n)};
                const double J = kl_objective(p, pi);
                if (J > bestJ) {
                    bestJ = J;
                    best = std::move(pi);
                }
            }
    }
    return best;
}

double total_variation(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw DimensionError("length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s;
}

double stationarity_spread(const SimplexProblem& p, const Vector& pi) {
    if (pi.size() != p.size()) throw DimensionError("policy length mismatch");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t z = 0; z < pi.size(); ++z) {
        const double resid = p.r[z] -
                             p.alpha * (std::log(std::max(pi[z], 1e-300)) + 1.0) +
                             p.alpha * std::log(p.pi_ref[z]);
        lo = std::min(lo, resid);
        hi = std::max(hi, resid);
    }
    return hi - lo;
}

void ToyMdp::validate() const {
    if (regions < 1 || regions > 8) throw ConfigError("regions must be in [1, 8]");
    if (actions < 1 || actions > std::min(regions, 4))
        throw ConfigError("actions must be in [1, min(regions, 4)]");
    if (horizon < 1 || horizon > 10) throw ConfigError("horizon must be in [1, 10]");
    if (!(gamma > 0.0) || gamma > 1.0) throw ConfigError("gamma must be in (0, 1]");
    if ((int)base_reward.size() != regions)
        throw ConfigError("need one base reward per region");
    for (double r : base_reward)
        if (!std::isfinite(r)) throw NumericError("non-finite reward");
    if (visited0 >= (1u << regions)) throw ConfigError("registry mask out of range");
    if (rearming && rearm_period < 1)
        throw ConfigError("re-arming period must be >= 1");
}

MdpCheck check_q_equals_r(const ToyMdp& mdp) {
    mdp.validate();
    const int R = mdp.regions, A = mdp.actions, H = mdp.horizon;
    const uint32_t masks = 1u << R;
    const int locs = R + 1;   // index 0 = uncommitted, 1+r = region r

    const auto transition = [&](int t, int loc, uint32_t mask, int a, int& nloc,
                                uint32_t& nmask, double& reward) {
        if (mdp.rearming) {
            nloc = a;                       // hopping allowed
        } else {
            nloc = (loc == 0) ? a : loc - 1;   // committed: stay put
        }
        reward = ((mask >> nloc) & 1u) ? 0.0 : mdp.base_reward[nloc];
        nmask = mask | (1u << nloc);
        if (mdp.rearming && ((t + 1) % mdp.rearm_period == 0)) nmask = 0;
        nloc += 1;   // to location index
    };

    // V[t][loc][mask] by backward induction; V[H] = 0
    std::vector<std::vector<Vector>> V(
        H + 1, std::vector<Vector>(locs, Vector(masks, 0.0)));
    for (int t = H - 1; t >= 0; --t)
        for (int loc = 0; loc < locs; ++loc)
            for (uint32_t mask = 0; mask < masks; ++mask) {
                double best = -std::numeric_limits<double>::infinity();
                for (int a = 0; a < A; ++a) {
                    int nloc;
                    uint32_t nmask;
                    double r;
                    transition(t, loc, mask, a, nloc, nmask, r);
                    best = std::max(best, r + mdp.gamma * V[t + 1][nloc][nmask]);
                }
                V[t][loc][mask] = best;
            }

    // forward reachability from (t=0, uncommitted, visited0)
    std::vector<std::vector<std::vector<char>>> reach(
        H, std::vector<std::vector<char>>(locs, std::vector<char>(masks, 0)));
    reach[0][0][mdp.visited0] = 1;
    for (int t = 0; t + 1 < H; ++t)
        for (int loc = 0; loc < locs; ++loc)
            for (uint32_t mask = 0; mask < masks; ++mask) {
                if (!reach[t][loc][mask]) continue;
                for (int a = 0; a < A; ++a) {
                    int nloc;
                    uint32_t nmask;
                    double r;
                    transition(t, loc, mask, a, nloc, nmask, r);
                    reach[t + 1][nloc][nmask] = 1;
                }
            }

    MdpCheck out;
    for (int t = 0; t < H; ++t)
        for (int loc = 0; loc < locs; ++loc)
            for (uint32_t mask = 0; mask < masks; ++mask) {
                if (!reach[t][loc][mask]) continue;
                for (int a = 0; a < A; ++a) {
                    int nloc;
                    uint32_t nmask;
                    double r;
                    transition(t, loc, mask, a, nloc, nmask, r);
                    const double q = r + mdp.gamma * V[t + 1][nloc][nmask];
                    const double gap = std::abs(q - r);
                    ++out.pairs_checked;
                    if (gap > out.max_gap) {
                        out.max_gap = gap;
                        out.bad_t = t;
                        out.bad_loc = loc - 1;
                        out.bad_action = a;
                        out.bad_mask = mask;
                    }
                }
            }
    out.equality_holds = out.max_gap == 0.0;
    return out;
}

std::vector<ToyMdp> make_vanishing_mdps(std::size_t count, uint64_t seed) {
    Rng rng(derive_stream(seed, 0x7d9));
    std::vector<ToyMdp> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        ToyMdp m;
        m.regions = 2 + int(rng.next_u64() % 7);            // 2..8
        m.actions = std::min(m.regions, 2 + int(rng.next_u64() % 3));
        m.horizon = 2 + int(rng.next_u64() % 9);            // 2..10
        m.gamma = (i % 2 == 0) ? 1.0 : 0.9;
        m.base_reward.resize(m.regions);
        for (auto& r : m.base_reward) r = double(rng.next_u64() % 8);
        m.base_reward[rng.next_u64() % m.regions] = 1.0 + double(rng.next_u64() % 7);
        m.visited0 = (rng.next_u64() % 2 == 0)
                         ? 0u
                         : uint32_t(rng.next_u64() % (1u << m.regions));
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<ToyMdp> make_rearming_mdps(std::size_t count, uint64_t seed) {
    Rng rng(derive_stream(seed, 0x4ea));
    std::vector<ToyMdp> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        ToyMdp m;
        m.rearming = true;
        m.rearm_period = 1 + int(rng.next_u64() % 3);
        m.regions = 2 + int(rng.next_u64() % 7);
        m.actions = std::min(m.regions, 2 + int(rng.next_u64() % 3));
        // leave room for the registry to clear and a rewarded re-entry
        m.horizon = std::min(10, m.rearm_period + 2 + int(rng.next_u64() % 7));
        m.gamma = (i % 2 == 0) ? 1.0 : 0.9;
        m.base_reward.resize(m.regions);
        for (auto& r : m.base_reward) r = double(rng.next_u64() % 8);
        // a reachable positive reward (action-enterable region)
        m.base_reward[rng.next_u64() % m.actions] = 1.0 + double(rng.next_u64() % 7);
        m.visited0 = 0;
        out.push_back(std::move(m));
    }
    return out;
}

AuditReport session_identity_audit(const std::vector<AuditStep>& audit,
                                   const Matrix& head, double tol,
                                   bool inject_sign_fault) {
    AuditReport rep;
    rep.tol = tol;
    const std::size_t V = head.rows, d = head.cols;
    for (std::size_t idx = 0; idx < audit.size(); ++idx) {
        const AuditStep& a = audit[idx];
        if (a.logits_ref.size() != V || a.logits_dist.size() != V ||
            a.logits_fused.size() != V || a.e_used.size() != d)
            throw ContractError("audit record shape does not match the head");

        std::vector<int> cands;
        for (std::size_t z = 0; z < V; ++z)
            if (std::isfinite(a.logits_fused[z])) cands.push_back((int)z);
        if (cands.empty()) throw ContractError("audit record has no candidates");

        const double beta = a.beta;
        double dev7 = 0.0, dev6 = 0.0, dev9 = 0.0;

        // path 1: recombine the logits (the sign fault lives here)
        for (int z : cands) {
            double f7;
            if (beta == 0.0) {
                f7 = a.logits_ref[z];
            } else {
                const double bd = inject_sign_fault ? beta : -beta;
                f7 = (a.form == FusionForm::amplified)
                         ? (1.0 + beta) * a.logits_ref[z] + bd * a.logits_dist[z]
                         : a.logits_ref[z] + bd * a.logits_dist[z];
            }
            dev7 = std::max(dev7, std::abs(f7 - a.logits_fused[z]));
        }

        if (a.form == FusionForm::amplified) {
            // path 2: probability-ratio form against the probabilities used
            const Vector p_used = masked_softmax(a.logits_fused);
            if (beta == 0.0) {
                Vector masked(V, -std::numeric_limits<double>::infinity());
                for (int z : cands) masked[z] = a.logits_ref[z];
                const Vector p6 = masked_softmax(masked);
                for (int z : cands)
                    dev6 = std::max(dev6, std::abs(p6[z] - p_used[z]));
            } else {
                const Vector lr = log_softmax(a.logits_ref);
                const Vector ld = log_softmax(a.logits_dist);
                Vector scores(V, -std::numeric_limits<double>::infinity());
                for (int z : cands)
                    scores[z] = (1.0 + beta) * lr[z] - beta * ld[z];
                const Vector p6 = masked_softmax(scores);
                for (int z : cands)
                    dev6 = std::max(dev6, std::abs(p6[z] - p_used[z]));
            }

            // path 3: error-vector decomposition, with the three-factor split
            const double en = norm2(a.e_used);
            for (int z : cands) {
                double wn = 0.0, d_we = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const double w = head.at(z, i);
                    wn += w * w;
                    d_we += w * a.e_used[i];
                }
                wn = std::sqrt(wn);
                const double f9 = a.logits_ref[z] + beta * d_we;
                dev9 = std::max(dev9, std::abs(f9 - a.logits_fused[z]));
                const double cosv = (wn > 0.0 && en > 0.0) ? d_we / (wn * en) : 0.0;
                const double three = beta * wn * en * cosv;
                dev9 = std::max(dev9, std::abs(three - beta * d_we));
            }
        }

        rep.max_logit_dev = std::max(rep.max_logit_dev, dev7);
        rep.max_ratio_dev = std::max(rep.max_ratio_dev, dev6);
        rep.max_recon_dev = std::max(rep.max_recon_dev, dev9);
        ++rep.steps_checked;
        if (rep.first_bad_index < 0 &&
            (dev7 > tol || dev6 > tol || dev9 > tol)) {
            rep.first_bad_index = (long long)idx;
            rep.first_bad_step = a.step;
            rep.first_bad_row = a.row;
        }
    }
    rep.ok = rep.first_bad_index < 0;
    return rep;
}

} // namespace esamp
