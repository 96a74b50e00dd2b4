#include "esamp/distiller.hpp"

#include <cmath>

#include "esamp/checkpoint.hpp"
#include "esamp/errors.hpp"
#include "esamp/rng.hpp"

namespace esamp {

namespace {

void fill_uniform(Matrix& m, uint64_t seed, uint64_t idx, double scale) {
    Rng rng(derive_stream(seed, idx));
    const double a = scale / std::sqrt(double(m.cols));
    for (double& v : m.a) v = rng.uniform(-a, a);
}

void check_rows_finite(const Matrix& m, const char* who) {
    for (double v : m.a)
        if (!std::isfinite(v)) throw NumericError(std::string(who) + ": non-finite hidden state");
}

} // namespace

Distiller Distiller::make(const DistillerConfig& cfg) {
    if (cfg.d == 0 || cfg.hidden == 0)
        throw ConfigError("distiller: zero-sized dimension");
    Distiller dist;
    dist.cfg_ = cfg;
    dist.b1_.gate = Matrix(cfg.hidden, cfg.d);
    dist.b1_.up   = Matrix(cfg.hidden, cfg.d);
    dist.b1_.down = Matrix(cfg.d, cfg.hidden);
    dist.b2_ = dist.b1_;
    fill_uniform(dist.b1_.gate, cfg.seed, 0, cfg.init_scale);
    fill_uniform(dist.b1_.up,   cfg.seed, 1, cfg.init_scale);
    fill_uniform(dist.b1_.down, cfg.seed, 2, cfg.init_scale);
    fill_uniform(dist.b2_.gate, cfg.seed, 3, cfg.init_scale);
    fill_uniform(dist.b2_.up,   cfg.seed, 4, cfg.init_scale);
    fill_uniform(dist.b2_.down, cfg.seed, 5, cfg.init_scale);

    std::vector<Matrix> ps = {dist.b1_.gate, dist.b1_.up, dist.b1_.down,
                              dist.b2_.gate, dist.b2_.up, dist.b2_.down};
    dist.opt_ = AdamState::make(ps, cfg.adam);
    return dist;
}

Matrix Distiller::forward(const Matrix& x, SwiGluCache* c1, SwiGluCache* c2, Matrix* y1_out) const {
    Matrix y1 = swiglu_forward(b1_, x, c1);
    for (std::size_t i = 0; i < y1.size(); ++i) y1.a[i] += x.a[i];
    Matrix y2 = swiglu_forward(b2_, y1, c2);
    for (std::size_t i = 0; i < y2.size(); ++i) y2.a[i] += y1.a[i];
    if (y1_out) *y1_out = std::move(y1);
    return y2;
}

Matrix Distiller::predict(const Matrix& h1) const {
    if (h1.cols != cfg_.d)
        throw DimensionError("distiller: input width mismatch");
    return forward(h1, nullptr, nullptr, nullptr);
}

Vector Distiller::predict_one(const Vector& h1) const {
    Matrix x(1, cfg_.d);
    if (h1.size() != cfg_.d)
        throw DimensionError("distiller: input width mismatch");
    for (std::size_t i = 0; i < cfg_.d; ++i) x.a[i] = h1[i];
    Matrix y = predict(x);
    return Vector(y.a.begin(), y.a.end());
}

std::pair<Vector, double> Distiller::novelty(const Vector& h1, const Vector& hl) const {
    if (hl.size() != cfg_.d)
        throw DimensionError("distiller: target width mismatch");
    Vector pred = predict_one(h1);
    Vector e(cfg_.d);
    for (std::size_t i = 0; i < cfg_.d; ++i) e[i] = hl[i] - pred[i];
    const double n = norm2(e);
    return {std::move(e), n};
}

double Distiller::loss(const Matrix& h1, const Matrix& hl) const {
    if (!h1.same_shape(hl) || h1.cols != cfg_.d)
        throw DimensionError("distiller: batch shape mismatch");
    if (h1.rows == 0)
        throw ContractError("distiller: empty batch");
    Matrix y = forward(h1, nullptr, nullptr, nullptr);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = hl.a[i] - y.a[i];
        acc += d * d;
    }
    return acc / double(h1.rows);
}

std::vector<Matrix> Distiller::gradients(const Matrix& h1, const Matrix& hl,
                                         double* loss_out) const {
    if (!h1.same_shape(hl) || h1.cols != cfg_.d)
        throw DimensionError("distiller: batch shape mismatch");
    if (h1.rows == 0)
        throw ContractError("distiller: empty batch");

    SwiGluCache c1, c2;
    Matrix y1;
    Matrix y2 = forward(h1, &c1, &c2, &y1);

    const double inv_b = 1.0 / double(h1.rows);
    double l = 0.0;
    Matrix dy2(y2.rows, y2.cols);
    for (std::size_t i = 0; i < y2.size(); ++i) {
        const double diff = y2.a[i] - hl.a[i];
        l += diff * diff;
        dy2.a[i] = 2.0 * inv_b * diff;
    }
    if (loss_out) *loss_out = l * inv_b;

    SwiGluGrads g2, g1;
    Matrix dy1 = swiglu_backward(b2_, c2, dy2, g2);
    for (std::size_t i = 0; i < dy1.size(); ++i) dy1.a[i] += dy2.a[i];   // residual
    swiglu_backward(b1_, c1, dy1, g1);

    std::vector<Matrix> grads;
    grads.reserve(6);
    grads.push_back(std::move(g1.gate));
    grads.push_back(std::move(g1.up));
    grads.push_back(std::move(g1.down));
    grads.push_back(std::move(g2.gate));
    grads.push_back(std::move(g2.up));
    grads.push_back(std::move(g2.down));
    return grads;
}

double Distiller::train_step(const Matrix& h1, const Matrix& hl) {
    check_rows_finite(h1, "distiller");
    check_rows_finite(hl, "distiller");
    double l = 0.0;
    std::vector<Matrix> grads = gradients(h1, hl, &l);

    std::vector<Matrix> ps;
    ps.reserve(6);
    ps.push_back(std::move(b1_.gate));
    ps.push_back(std::move(b1_.up));
    ps.push_back(std::move(b1_.down));
    ps.push_back(std::move(b2_.gate));
    ps.push_back(std::move(b2_.up));
    ps.push_back(std::move(b2_.down));
    try {
        adam_step(ps, grads, opt_);
    } catch (...) {
        b1_.gate = std::move(ps[0]); b1_.up = std::move(ps[1]); b1_.down = std::move(ps[2]);
        b2_.gate = std::move(ps[3]); b2_.up = std::move(ps[4]); b2_.down = std::move(ps[5]);
        throw;
    }
    b1_.gate = std::move(ps[0]); b1_.up = std::move(ps[1]); b1_.down = std::move(ps[2]);
    b2_.gate = std::move(ps[3]); b2_.up = std::move(ps[4]); b2_.down = std::move(ps[5]);

    updates_ += 1;
    rows_trained_ += (long long)h1.rows;
    return l;
}

std::size_t Distiller::param_count() const {
    return 2 * 3 * cfg_.d * cfg_.hidden;
}

std::vector<Matrix*> Distiller::params() {
    return {&b1_.gate, &b1_.up, &b1_.down, &b2_.gate, &b2_.up, &b2_.down};
}

void Distiller::save(const std::string& path) const {
    Checkpoint c;
    c.kind = kKindDistiller;
    c.fields = {cfg_.d, cfg_.hidden, cfg_.seed,
                uint64_t(updates_), uint64_t(rows_trained_), uint64_t(opt_.t)};
    c.tensors = {b1_.gate, b1_.up, b1_.down, b2_.gate, b2_.up, b2_.down};
    for (const Matrix& m : opt_.m) c.tensors.push_back(m);
    for (const Matrix& v : opt_.v) c.tensors.push_back(v);
    save_checkpoint(path, c);
}

Distiller Distiller::load(const std::string& path) {
    Checkpoint c = load_checkpoint(path);
    if (c.kind != kKindDistiller)
        throw InputError("distiller: checkpoint kind mismatch");
    if (c.fields.size() != 6 || c.tensors.size() != 18)
        throw InputError("distiller: unexpected checkpoint layout");

    DistillerConfig cfg;
    cfg.d = c.fields[0];
    cfg.hidden = c.fields[1];
    cfg.seed = c.fields[2];
    Distiller dist = make(cfg);
    dist.updates_ = (long long)(c.fields[3]);
    dist.rows_trained_ = (long long)(c.fields[4]);
    dist.opt_.t = (long long)(c.fields[5]);

    auto take = [&](Matrix& dst, std::size_t i) {
        if (!dst.same_shape(c.tensors[i]))
            throw InputError("distiller: tensor shape mismatch in checkpoint");
        dst = std::move(c.tensors[i]);
    };
    take(dist.b1_.gate, 0); take(dist.b1_.up, 1); take(dist.b1_.down, 2);
    take(dist.b2_.gate, 3); take(dist.b2_.up, 4); take(dist.b2_.down, 5);
    for (int i = 0; i < 6; ++i) take(dist.opt_.m[std::size_t(i)], std::size_t(6 + i));
    for (int i = 0; i < 6; ++i) take(dist.opt_.v[std::size_t(i)], std::size_t(12 + i));
    return dist;
}

} // namespace esamp
