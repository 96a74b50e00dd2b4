#include "esamp/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace esamp {

namespace {

bool all_finite(const Matrix& m) {
    for (double v : m.a)
        if (!std::isfinite(v)) return false;
    return true;
}

void check_finite_strict(const Vector& v, const char* who) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError(std::string(who) + ": non-finite input");
}

} // namespace

Matrix matmul(const Matrix& A, const Matrix& B) {
    Matrix C;
    matmul_nn(A, B, C);
    return C;
}

Vector matvec(const Matrix& A, const Vector& x) {
    if (A.cols != x.size())
        throw DimensionError("matvec: dimension mismatch");
    Vector y(A.rows);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const double* row = A.row(i);
        double acc = 0.0;
        for (std::size_t k = 0; k < A.cols; ++k) acc += row[k] * x[k];
        y[i] = acc;
    }
    return y;
}

double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        throw DimensionError("dot: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm2(const Vector& a) {
    double acc = 0.0;
    for (double x : a) acc += x * x;
    return std::sqrt(acc);
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

Vector softmax(const Vector& logits, double temperature) {
    if (temperature <= 0.0)
        throw ContractError("softmax: temperature must be > 0");
    if (logits.empty())
        throw ContractError("softmax: empty input");
    check_finite_strict(logits, "softmax");
    Vector out(logits.size());
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - mx) / temperature);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

Vector masked_softmax(const Vector& logits, double temperature) {
    if (temperature <= 0.0)
        throw ContractError("masked_softmax: temperature must be > 0");
    if (logits.empty())
        throw ContractError("masked_softmax: empty input");
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) {
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            throw NumericError("masked_softmax: NaN/+inf input");
        mx = std::max(mx, v);
    }
    if (mx == -std::numeric_limits<double>::infinity())
        throw ContractError("masked_softmax: no finite entry");
    Vector out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double v = logits[i];
        out[i] = (v == -std::numeric_limits<double>::infinity())
                     ? 0.0
                     : std::exp((v - mx) / temperature);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

double logsumexp(const Vector& v) {
    if (v.empty())
        throw ContractError("logsumexp: empty input");
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) {
        if (std::isnan(x) || x == std::numeric_limits<double>::infinity())
            throw NumericError("logsumexp: NaN/+inf input");
        mx = std::max(mx, x);
    }
    if (mx == -std::numeric_limits<double>::infinity())
        throw ContractError("logsumexp: no finite entry");
    double sum = 0.0;
    for (double x : v)
        if (x != -std::numeric_limits<double>::infinity()) sum += std::exp(x - mx);
    return mx + std::log(sum);
}

Vector log_softmax(const Vector& logits) {
    check_finite_strict(logits, "log_softmax");
    const double lse = logsumexp(logits);
    Vector out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

Vector masked_log_softmax(const Vector& logits, double temperature) {
    if (temperature <= 0.0)
        throw ContractError("masked_log_softmax: temperature must be > 0");
    Vector scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double v = logits[i];
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            throw NumericError("masked_log_softmax: NaN/+inf input");
        scaled[i] = (v == -std::numeric_limits<double>::infinity()) ? v : v / temperature;
    }
    const double lse = logsumexp(scaled);
    Vector out(scaled.size());
    for (std::size_t i = 0; i < scaled.size(); ++i) out[i] = scaled[i] - lse;
    return out;
}

// ---------------------------------------------------------------------------
// gated SwiGLU
// ---------------------------------------------------------------------------

Matrix swiglu_forward(const SwiGluParams& p, const Matrix& X, SwiGluCache* cache) {
    const std::size_t w = p.gate.rows, d = p.gate.cols;
    if (p.up.rows != w || p.up.cols != d || p.down.cols != w)
        throw DimensionError("swiglu_forward: inconsistent parameter shapes");
    if (X.cols != d)
        throw DimensionError("swiglu_forward: input width mismatch");

    Matrix G, U;
    matmul_nt(X, p.gate, G);   // [B × w]
    matmul_nt(X, p.up, U);     // [B × w]
    Matrix H(G.rows, G.cols);
    for (std::size_t i = 0; i < H.size(); ++i) H.a[i] = silu(G.a[i]) * U.a[i];
    Matrix Y;
    matmul_nt(H, p.down, Y);   // [B × out]

    if (cache) {
        cache->x = X;
        cache->g = std::move(G);
        cache->u = std::move(U);
        cache->h = std::move(H);
        cache->valid = true;
    }
    return Y;
}

Matrix swiglu_backward(const SwiGluParams& p, const SwiGluCache& cache, const Matrix& dY,
                       SwiGluGrads& grads) {
    if (!cache.valid)
        throw ContractError("swiglu_backward: cache not populated by a forward pass");
    const std::size_t w = p.gate.rows, d = p.gate.cols, out = p.down.rows;
    if (cache.x.cols != d || cache.g.cols != w || cache.u.cols != w || cache.h.cols != w ||
        cache.x.rows != cache.g.rows)
        throw ContractError("swiglu_backward: cache shapes stale for these parameters");
    if (dY.rows != cache.x.rows || dY.cols != out)
        throw DimensionError("swiglu_backward: upstream gradient shape mismatch");

    Matrix dH;
    matmul_nn(dY, p.down, dH);             // [B × w]
    matmul_tn(dY, cache.h, grads.down);    // [out × w]

    Matrix dG(dH.rows, dH.cols), dU(dH.rows, dH.cols);
    for (std::size_t i = 0; i < dH.size(); ++i) {
        const double g = cache.g.a[i];
        dG.a[i] = dH.a[i] * cache.u.a[i] * dsilu(g);
        dU.a[i] = dH.a[i] * silu(g);
    }
    matmul_tn(dG, cache.x, grads.gate);    // [w × d]
    matmul_tn(dU, cache.x, grads.up);      // [w × d]

    Matrix dX1, dX2;
    matmul_nn(dG, p.gate, dX1);            // [B × d]
    matmul_nn(dU, p.up, dX2);
    for (std::size_t i = 0; i < dX1.size(); ++i) dX1.a[i] += dX2.a[i];
    return dX1;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState AdamState::make(const std::vector<Matrix>& params, AdamConfig cfg) {
    AdamState st;
    st.cfg = cfg;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const Matrix& p : params) {
        st.m.emplace_back(p.rows, p.cols);
        st.v.emplace_back(p.rows, p.cols);
    }
    return st;
}

double global_grad_norm(const std::vector<Matrix>& grads) {
    double acc = 0.0;
    for (const Matrix& g : grads)
        for (double x : g.a) acc += x * x;
    return std::sqrt(acc);
}

void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, AdamState& st) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw DimensionError("adam_step: tensor list size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].same_shape(grads[i]) || !params[i].same_shape(st.m[i]))
            throw DimensionError("adam_step: tensor shape mismatch");
        if (!all_finite(grads[i]))
            throw NumericError("adam_step: non-finite gradient, update skipped");
    }

    const double gn = global_grad_norm(grads);
    const double scale = (gn > st.cfg.clip && gn > 0.0) ? st.cfg.clip / gn : 1.0;

    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.cfg.beta1, double(st.t));
    const double bc2 = 1.0 - std::pow(st.cfg.beta2, double(st.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = params[i];
        const Matrix& g = grads[i];
        Matrix& m = st.m[i];
        Matrix& v = st.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gc = g.a[j] * scale;
            m.a[j] = st.cfg.beta1 * m.a[j] + (1.0 - st.cfg.beta1) * gc;
            v.a[j] = st.cfg.beta2 * v.a[j] + (1.0 - st.cfg.beta2) * gc * gc;
            const double mhat = m.a[j] / bc1;
            const double vhat = v.a[j] / bc2;
            p.a[j] -= st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// cyclic Jacobi eigenvalues
// ---------------------------------------------------------------------------

Vector sym_eigenvalues(const Matrix& K) {
    if (K.rows != K.cols)
        throw DimensionError("sym_eigenvalues: matrix not square");
    const std::size_t n = K.rows;
    if (n == 0)
        throw ContractError("sym_eigenvalues: empty matrix");
    if (n > kJacobiMaxN)
        throw ContractError("sym_eigenvalues: n exceeds supported size");
    double asym = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            asym = std::max(asym, std::fabs(K.at(i, j) - K.at(j, i)));
    if (asym > kSymmetryTol)
        throw ContractError("sym_eigenvalues: input is not symmetric");

    Matrix A = K;
    double fro = 0.0;
    for (double x : A.a) fro += x * x;
    fro = std::sqrt(fro);
    if (fro == 0.0)
        return Vector(n, 0.0);

    auto off_norm = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += A.at(i, j) * A.at(i, j);
        return std::sqrt(2.0 * s);
    };

    const double target = kJacobiTol * fro;
    const int max_sweeps = 64;
    int sweep = 0;
    while (off_norm() > target) {
        if (++sweep > max_sweeps)
            throw NumericError("sym_eigenvalues: Jacobi failed to converge");
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = A.at(p, q);
                if (apq == 0.0) continue;
                const double app = A.at(p, p), aqq = A.at(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0)
                                     ? 1.0 / (theta + std::sqrt(1.0 + theta * theta))
                                     : 1.0 / (theta - std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = A.at(k, p), akq = A.at(k, q);
                    A.at(k, p) = c * akp - s * akq;
                    A.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = A.at(p, k), aqk = A.at(q, k);
                    A.at(p, k) = c * apk - s * aqk;
                    A.at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }

    Vector ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = A.at(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

} // namespace esamp
