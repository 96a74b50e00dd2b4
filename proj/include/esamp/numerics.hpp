#pragma once

// Deterministic dense linear algebra and the differentiable kernels everything
// else builds on. Row-major storage, fixed summation order (k ascending per
// output element), reductions accumulate in double regardless of the storage
// scalar, so repeated runs are bit-identical.

#include <cmath>
#include <cstddef>
#include <vector>

#include "esamp/errors.hpp"

namespace esamp {

template <typename T>
struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<T> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, T(0)) {}

    T* row(std::size_t i) { return a.data() + i * cols; }
    const T* row(std::size_t i) const { return a.data() + i * cols; }
    T& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    T at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
    std::size_t size() const { return a.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

using Matrix  = Mat<double>;
using MatrixF = Mat<float>;   // throughput-bench storage mode; math still sums in double
using Vector  = std::vector<double>;

// ---------------------------------------------------------------------------
// basic ops
// ---------------------------------------------------------------------------

// C = A·B, loop order i,k,j; per-element accumulation order is k ascending.
template <typename T>
void matmul_nn(const Mat<T>& A, const Mat<T>& B, Mat<T>& C) {
    if (A.cols != B.rows)
        throw DimensionError("matmul_nn: inner dimensions differ");
    C = Mat<T>(A.rows, B.cols);
    std::vector<double> acc(B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        for (double& v : acc) v = 0.0;
        const T* arow = A.row(i);
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double aik = double(arow[k]);
            const T* brow = B.row(k);
            for (std::size_t j = 0; j < B.cols; ++j) acc[j] += aik * double(brow[j]);
        }
        T* crow = C.row(i);
        for (std::size_t j = 0; j < B.cols; ++j) crow[j] = T(acc[j]);
    }
}

// C = A·Bᵀ (rows of A against rows of B)
template <typename T>
void matmul_nt(const Mat<T>& A, const Mat<T>& B, Mat<T>& C) {
    if (A.cols != B.cols)
        throw DimensionError("matmul_nt: inner dimensions differ");
    C = Mat<T>(A.rows, B.rows);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const T* arow = A.row(i);
        T* crow = C.row(i);
        for (std::size_t j = 0; j < B.rows; ++j) {
            const T* brow = B.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < A.cols; ++k) acc += double(arow[k]) * double(brow[k]);
            crow[j] = T(acc);
        }
    }
}

// C = Aᵀ·B; accumulation order is the batch index ascending.
template <typename T>
void matmul_tn(const Mat<T>& A, const Mat<T>& B, Mat<T>& C) {
    if (A.rows != B.rows)
        throw DimensionError("matmul_tn: batch dimensions differ");
    Mat<double> acc(A.cols, B.cols);
    for (std::size_t b = 0; b < A.rows; ++b) {
        const T* arow = A.row(b);
        const T* brow = B.row(b);
        for (std::size_t i = 0; i < A.cols; ++i) {
            const double aib = double(arow[i]);
            double* crow = acc.row(i);
            for (std::size_t j = 0; j < B.cols; ++j) crow[j] += aib * double(brow[j]);
        }
    }
    C = Mat<T>(A.cols, B.cols);
    for (std::size_t i = 0; i < C.size(); ++i) C.a[i] = T(acc.a[i]);
}

Matrix matmul(const Matrix& A, const Matrix& B);
Vector matvec(const Matrix& A, const Vector& x);

double dot(const Vector& a, const Vector& b);
double norm2(const Vector& a);

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

// max-subtracted softmax; rejects any non-finite entry (NumericError) and
// non-positive temperature (ContractError).
Vector softmax(const Vector& logits, double temperature = 1.0);

// tolerates -inf entries (filtered-out tokens); rejects NaN/+inf; all -inf is
// a ContractError.
Vector masked_softmax(const Vector& logits, double temperature = 1.0);

Vector log_softmax(const Vector& logits);
Vector masked_log_softmax(const Vector& logits, double temperature = 1.0);
double logsumexp(const Vector& v);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double dsilu(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

// ---------------------------------------------------------------------------
// gated SwiGLU block kernel: y = down · (silu(gate·x) ⊙ (up·x))
// gate, up: [w × d]; down: [out × w]; batched row-wise over X [B × d].
// ---------------------------------------------------------------------------

struct SwiGluParams {
    Matrix gate, up, down;
};

struct SwiGluCache {
    Matrix x, g, u, h;   // inputs, pre-activations and gated intermediate
    bool valid = false;
};

struct SwiGluGrads {
    Matrix gate, up, down;
};

// forward; fills `cache` when non-null (required later by the backward pass)
Matrix swiglu_forward(const SwiGluParams& p, const Matrix& X, SwiGluCache* cache = nullptr);

// exact analytic backward; returns dX and writes parameter grads.
// Throws ContractError when the cache is missing/stale for these shapes.
Matrix swiglu_backward(const SwiGluParams& p, const SwiGluCache& cache, const Matrix& dY,
                       SwiGluGrads& grads);

// ---------------------------------------------------------------------------
// Adam with global-norm clipping
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 4e-4;
    double eps = 1e-4;
    double clip = 0.5;     // global grad-norm ceiling, applied before moments
    double beta1 = 0.9;
    double beta2 = 0.999;
};

struct AdamState {
    AdamConfig cfg;
    long long t = 0;
    std::vector<Matrix> m, v;

    static AdamState make(const std::vector<Matrix>& params, AdamConfig cfg = {});
};

double global_grad_norm(const std::vector<Matrix>& grads);

// clip -> m/v update -> bias-corrected step p -= lr·m̂/(√v̂+eps).
// Non-finite gradients raise NumericError before any state is touched.
void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, AdamState& st);

// ---------------------------------------------------------------------------
// symmetric eigenvalues (cyclic Jacobi), ascending. n ≤ 1024.
// Asymmetry beyond 1e-9 is a ContractError; convergence target is
// off-diagonal norm ≤ 1e-12·‖K‖_F.
// ---------------------------------------------------------------------------

Vector sym_eigenvalues(const Matrix& K);

inline constexpr double kSymmetryTol  = 1e-9;
inline constexpr double kJacobiTol    = 1e-12;
inline constexpr std::size_t kJacobiMaxN = 1024;

} // namespace esamp
