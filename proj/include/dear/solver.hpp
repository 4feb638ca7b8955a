#pragma once

#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dear/tensor.hpp"

namespace dear {

enum class SolveMethod { picard, anderson };
enum class StopMode { absolute, relative };

inline const char* to_string(SolveMethod m) {
    return m == SolveMethod::picard ? "picard" : "anderson";
}
inline const char* to_string(StopMode m) {
    return m == StopMode::absolute ? "absolute" : "relative";
}

struct SolverConfig {
    SolveMethod method = SolveMethod::anderson;
    int max_iters = 32;
    StopMode stop_mode = StopMode::absolute;
    double epsilon = 1e-3;  // conventional defaults: 1e-3 absolute, 0.1 relative
    int anderson_m = 5;
    double anderson_ridge = 1e-4;
    double damping = 1.0;

    void validate() const {
        if (epsilon <= 0.0) throw std::invalid_argument("SolverConfig: epsilon must be > 0");
        if (max_iters < 1) throw std::invalid_argument("SolverConfig: max_iters must be >= 1");
        if (anderson_m < 1) throw std::invalid_argument("SolverConfig: anderson_m must be >= 1");
    }

    static double default_epsilon(StopMode mode) {
        return mode == StopMode::absolute ? 1e-3 : 0.1;
    }
};

struct SolveResult {
    Tensor state;
    int iterations = 0;    // number of applications of f
    double residual = 0.0; // Frobenius norm of f(H)-H at the last check
    bool converged = false;
};

// Dense Gaussian elimination with partial pivoting for the small Anderson
// mixing system. A is row-major k x k; returns x with A x = b.
inline std::vector<double> solve_dense(std::vector<double> a, std::vector<double> b) {
    const int k = static_cast<int>(b.size());
    for (int col = 0; col < k; ++col) {
        int piv = col;
        for (int r = col + 1; r < k; ++r)
            if (std::abs(a[static_cast<size_t>(r) * k + col]) >
                std::abs(a[static_cast<size_t>(piv) * k + col]))
                piv = r;
        if (std::abs(a[static_cast<size_t>(piv) * k + col]) < 1e-300)
            throw std::runtime_error("solve_dense: singular system");
        if (piv != col) {
            for (int c = 0; c < k; ++c)
                std::swap(a[static_cast<size_t>(piv) * k + c], a[static_cast<size_t>(col) * k + c]);
            std::swap(b[static_cast<size_t>(piv)], b[static_cast<size_t>(col)]);
        }
        for (int r = col + 1; r < k; ++r) {
            const double fac = a[static_cast<size_t>(r) * k + col] / a[static_cast<size_t>(col) * k + col];
            if (fac == 0.0) continue;
            for (int c = col; c < k; ++c)
                a[static_cast<size_t>(r) * k + c] -= fac * a[static_cast<size_t>(col) * k + c];
            b[static_cast<size_t>(r)] -= fac * b[static_cast<size_t>(col)];
        }
    }
    std::vector<double> x(static_cast<size_t>(k), 0.0);
    for (int r = k - 1; r >= 0; --r) {
        double s = b[static_cast<size_t>(r)];
        for (int c = r + 1; c < k; ++c) s -= a[static_cast<size_t>(r) * k + c] * x[static_cast<size_t>(c)];
        x[static_cast<size_t>(r)] = s / a[static_cast<size_t>(r) * k + r];
    }
    return x;
}

// Black-box fixed-point search. Each iteration evaluates f once, checks the
// stopping rule on the Frobenius residual, then (picard) damps toward f(x) or
// (anderson) mixes the last m iterates by a ridge-regularized least-squares
// fit over the residual history. Convergence returns the iterate that passed
// the check; exhaustion returns the final f output with the last residual.
inline SolveResult solve_fixed_point(const std::function<Tensor(const Tensor&)>& f, Tensor x0,
                                     const SolverConfig& cfg) {
    cfg.validate();
    SolveResult res;
    Tensor x = std::move(x0);
    std::deque<Tensor> hist_x, hist_f;

    while (true) {
        Tensor fx = f(x);
        ++res.iterations;
        if (!fx.all_finite())
            throw std::runtime_error("solve_fixed_point: non-finite iterate at iteration " +
                                     std::to_string(res.iterations) + " (divergence)");
        Tensor g = fx;
        axpy(-1.0, x, g);
        res.residual = frob_norm(g);
        const double threshold = cfg.stop_mode == StopMode::absolute
                                     ? cfg.epsilon
                                     : cfg.epsilon * (frob_norm(fx) + 1e-12);
        if (res.residual <= threshold) {
            res.state = std::move(x);
            res.converged = true;
            return res;
        }
        if (res.iterations >= cfg.max_iters) {
            res.state = std::move(fx);
            res.converged = false;
            return res;
        }

        if (cfg.method == SolveMethod::picard) {
            // x <- x + damping (f(x) - x)
            axpy(cfg.damping, g, x);
        } else {
            hist_x.push_back(x);
            hist_f.push_back(fx);
            if (static_cast<int>(hist_x.size()) > cfg.anderson_m) {
                hist_x.pop_front();
                hist_f.pop_front();
            }
            const int k = static_cast<int>(hist_x.size());
            std::vector<Tensor> resid;
            resid.reserve(static_cast<size_t>(k));
            for (int i = 0; i < k; ++i) {
                Tensor r = hist_f[static_cast<size_t>(i)];
                axpy(-1.0, hist_x[static_cast<size_t>(i)], r);
                resid.push_back(std::move(r));
            }
            std::vector<double> gram(static_cast<size_t>(k) * k, 0.0);
            for (int i = 0; i < k; ++i)
                for (int j = i; j < k; ++j) {
                    const double d = dot_all(resid[static_cast<size_t>(i)], resid[static_cast<size_t>(j)]);
                    gram[static_cast<size_t>(i) * k + j] = d;
                    gram[static_cast<size_t>(j) * k + i] = d;
                }
            // ridge scaled by the smallest Gram diagonal (the newest residual):
            // keeps the mixing solve well posed on rank-deficient histories while
            // staying subordinate to the achievable least-squares optimum
            double min_diag = gram[0];
            for (int i = 1; i < k; ++i)
                min_diag = std::min(min_diag, gram[static_cast<size_t>(i) * k + i]);
            const double ridge = cfg.anderson_ridge * std::max(min_diag, 1e-300);
            for (int i = 0; i < k; ++i) gram[static_cast<size_t>(i) * k + i] += ridge;
            std::vector<double> alpha;
            double alpha_sum = 0.0;
            bool ok = true;
            try {
                alpha = solve_dense(gram, std::vector<double>(static_cast<size_t>(k), 1.0));
                for (double a : alpha) alpha_sum += a;
                ok = std::abs(alpha_sum) > 1e-12;
            } catch (const std::runtime_error&) {
                ok = false;
            }
            if (!ok) {
                axpy(cfg.damping, g, x);  // degenerate history: damped picard step
                continue;
            }
            Tensor next(x.shape());
            for (int i = 0; i < k; ++i) {
                const double a = alpha[static_cast<size_t>(i)] / alpha_sum;
                axpy(a * (1.0 - cfg.damping), hist_x[static_cast<size_t>(i)], next);
                axpy(a * cfg.damping, hist_f[static_cast<size_t>(i)], next);
            }
            x = std::move(next);
        }
    }
}

}  // namespace dear
