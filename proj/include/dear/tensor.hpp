#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dear/rng.hpp"

namespace dear {

// Dense row-major double tensor. Rank 0 (scalar), 1 or 2 is all the model needs.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)), v_(checked_numel(shape_), fill) {}

    static Tensor scalar(double x) {
        Tensor t(std::vector<int>{});
        t.v_ = {x};
        return t;
    }

    static Tensor row(std::vector<double> values) {
        Tensor t;
        t.shape_ = {static_cast<int>(values.size())};
        t.v_ = std::move(values);
        return t;
    }

    static Tensor matrix(int rows, int cols, std::vector<double> values) {
        if (static_cast<size_t>(rows) * static_cast<size_t>(cols) != values.size())
            throw std::invalid_argument("Tensor::matrix: size mismatch");
        Tensor t;
        t.shape_ = {rows, cols};
        t.v_ = std::move(values);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(v_.size()); }

    int rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 1); }
    int cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1); }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }

    double& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

    double& at(int r, int c) { return v_[static_cast<size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return v_[static_cast<size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

    const std::vector<double>& values() const { return v_; }
    std::vector<double>& values() { return v_; }

private:
    static size_t checked_numel(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<double> v_;
};

inline double dot_all(const Tensor& a, const Tensor& b) {
    assert(a.numel() == b.numel());
    double s = 0.0;
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) s += pa[i] * pb[i];
    return s;
}

inline double frob_norm(const Tensor& a) { return std::sqrt(dot_all(a, a)); }

// y += alpha * x
inline void axpy(double alpha, const Tensor& x, Tensor& y) {
    assert(x.numel() == y.numel());
    const double* px = x.data();
    double* py = y.data();
    for (int64_t i = 0; i < x.numel(); ++i) py[i] += alpha * px[i];
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    assert(a.numel() == b.numel());
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// y[r,:] = W x[r,:] (+ b). W is row-major out x in; x and y are row batches.
// Shared by the tape op and the scratch fast path so both produce identical
// floating-point results.
//
// Runs against a transposed weight copy in saxpy form: each y[o] still
// accumulates its terms in ascending k order (same association as the naive
// dot product), but the compiler can vectorize across outputs because no
// floating-point reduction is reordered.
inline void linear_rows(const Tensor& x, const Tensor& W, const Tensor* b, Tensor& y) {
    const int in = W.dim(1);
    const int out = W.dim(0);
    const int rows = x.rank() == 1 ? 1 : x.rows();
    thread_local std::vector<double> wt;
    wt.resize(static_cast<size_t>(in) * static_cast<size_t>(out));
    for (int o = 0; o < out; ++o) {
        const double* wrow = W.data() + static_cast<size_t>(o) * in;
        for (int k = 0; k < in; ++k) wt[static_cast<size_t>(k) * out + o] = wrow[k];
    }
    for (int r = 0; r < rows; ++r) {
        const double* xr = x.data() + static_cast<size_t>(r) * in;
        double* yr = y.data() + static_cast<size_t>(r) * out;
        if (b) {
            const double* bp = b->data();
            for (int o = 0; o < out; ++o) yr[o] = bp[o];
        } else {
            for (int o = 0; o < out; ++o) yr[o] = 0.0;
        }
        for (int k = 0; k < in; ++k) {
            const double xk = xr[k];
            const double* wk = wt.data() + static_cast<size_t>(k) * out;
            for (int o = 0; o < out; ++o) yr[o] += xk * wk[o];
        }
    }
}

// ---------------------------------------------------------------------------
// Parameters and layers
// ---------------------------------------------------------------------------

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape()) {}

    void zero_grad() {
        if (!grad.same_shape(value)) grad = Tensor(value.shape());
        else grad.fill(0.0);
    }
};

// Row-major weight (out x in) plus bias (out).
struct LinearLayer {
    Parameter weight;
    Parameter bias;

    LinearLayer() = default;
    LinearLayer(int in_dim, int out_dim)
        : weight(Tensor({out_dim, in_dim})), bias(Tensor({out_dim})) {}

    int in_dim() const { return weight.value.dim(1); }
    int out_dim() const { return weight.value.dim(0); }

    void init_xavier(Rng& rng) {
        const double bound = std::sqrt(6.0 / (in_dim() + out_dim()));
        for (int64_t i = 0; i < weight.value.numel(); ++i)
            weight.value[i] = rng.uniform(-bound, bound);
        bias.value.fill(0.0);
    }
};

// Stack of linear layers with rectifier activations between them (linear output).
struct Mlp {
    std::vector<LinearLayer> layers;

    Mlp() = default;
    // hidden_layers hidden blocks of width hidden_dim between in_dim and out_dim.
    Mlp(int in_dim, int hidden_dim, int hidden_layers, int out_dim) {
        int prev = in_dim;
        for (int l = 0; l < hidden_layers; ++l) {
            layers.emplace_back(prev, hidden_dim);
            prev = hidden_dim;
        }
        layers.emplace_back(prev, out_dim);
    }

    void init_xavier(Rng& rng) {
        for (auto& l : layers) l.init_xavier(rng);
    }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam with bias correction. Moments are kept per parameter in
// registry order; the step counter is shared and strictly increasing.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    int64_t steps() const { return step_; }

    void step(const std::vector<Parameter*>& params) {
        if (m_.empty()) {
            for (const Parameter* p : params) {
                m_.emplace_back(p->value.shape());
                v_.emplace_back(p->value.shape());
            }
        }
        if (m_.size() != params.size())
            throw std::logic_error("Adam: parameter registry changed size");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (size_t i = 0; i < params.size(); ++i) {
            Parameter& p = *params[i];
            double* m = m_[i].data();
            double* v = v_[i].data();
            const double* g = p.grad.data();
            double* w = p.value.data();
            for (int64_t k = 0; k < p.value.numel(); ++k) {
                m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
                v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
                const double mhat = m[k] / bc1;
                const double vhat = v[k] / bc2;
                w[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    int64_t step_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace dear
