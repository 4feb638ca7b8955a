#pragma once

#include <functional>
#include <limits>
#include <stdexcept>

#include "dear/model.hpp"
#include "dear/solver.hpp"

namespace dear {

struct BackwardConfig {
    int max_iters = 32;
    double tolerance = 1e-6;

    void validate() const {
        if (max_iters < 1 || tolerance <= 0.0)
            throw std::invalid_argument("BackwardConfig: positive fields required");
    }
};

struct JacRegConfig {
    double weight = 1.0;
    int probes = 1;
    bool enabled = true;

    void validate() const {
        if (weight < 0.0) throw std::invalid_argument("JacRegConfig: weight must be >= 0");
        if (probes < 1) throw std::invalid_argument("JacRegConfig: probes must be >= 1");
    }

    bool active() const { return enabled && weight > 0.0; }
};

struct AdjointStats {
    int iterations = 0;
    double residual = 0.0;
    bool converged = false;
};

// Implicit-function-theorem backward through a fixed point. The tape holds one
// recorded application out = f(in_leaf) at the equilibrium; the adjoint
// a = grad_out + J^T a is iterated with repeated vector-Jacobian sweeps over
// that single record, then parameters receive the f-VJP with the converged
// cotangent. Memory use is one application, independent of how many forward
// iterations the solver spent.
//
// Slow non-convergence keeps the last iterate. A locally expansive Jacobian
// makes the iteration diverge geometrically, and a blown-up cotangent would
// poison the optimizer state for many steps, so clear divergence falls back to
// the lowest-residual iterate instead.
inline AdjointStats implicit_backward_tape(Tape& tape, NodeId out, NodeId in_leaf,
                                           const Tensor& grad_out, const BackwardConfig& cfg) {
    cfg.validate();
    AdjointStats st;
    Tensor a = grad_out;
    Tensor best = a;
    double best_residual = std::numeric_limits<double>::infinity();
    for (int k = 0; k < cfg.max_iters; ++k) {
        Tensor next = tape.vjp(out, a, in_leaf);  // J^T a
        axpy(1.0, grad_out, next);
        st.iterations = k + 1;
        Tensor delta = next;
        axpy(-1.0, a, delta);
        st.residual = frob_norm(delta);
        const bool finite = next.all_finite() && std::isfinite(st.residual);
        if (!finite) break;
        a = std::move(next);
        if (st.residual <= best_residual) {
            best_residual = st.residual;
            best = a;
        } else if (st.residual > 100.0 * best_residual) {
            break;  // diverging
        }
        if (st.residual <= cfg.tolerance) {
            st.converged = true;
            break;
        }
    }
    tape.backward(out, st.converged ? a : best);
    return st;
}

// Hutchinson estimate of ||J||_F^2 / numel at the linearization point of
// build_jvp, built from tape ops so the estimate stays differentiable in the
// parameters. Probes are unit Gaussians; E||Jv||^2 = ||J||_F^2.
template <typename JvpBuilder>
inline NodeId jacobian_sq_norm_estimate(Tape& tape, JvpBuilder&& build_jvp,
                                        const std::vector<int>& state_shape, int probes,
                                        Rng& rng) {
    int64_t dim = 1;
    for (int d : state_shape) dim *= d;
    NodeId acc = -1;
    for (int p = 0; p < probes; ++p) {
        Tensor v(state_shape);
        for (int64_t i = 0; i < v.numel(); ++i) v[i] = rng.gauss();
        NodeId ss = tape.sum_squares(build_jvp(v));
        acc = p == 0 ? ss : tape.add(acc, ss);
    }
    return tape.scale(acc, 1.0 / (static_cast<double>(probes) * static_cast<double>(dim)));
}

struct DeqForwardResult {
    Logits logits;
    SolveResult solve;
};

// Equilibrium forward pass: solve H = P(H; U, E) from H0 = 0 with the
// requested black-box method (one solver step calls the processor exactly
// once), then decode pointers from the equilibrium.
inline DeqForwardResult deq_forward(const EncodedInstance& inst, Model& model,
                                    const SolverConfig& scfg) {
    Tensor h0({inst.n, model.cfg.latent_dim});
    auto f = [&](const Tensor& h) { return processor_step(h, inst, model); };
    DeqForwardResult res;
    res.solve = solve_fixed_point(f, std::move(h0), scfg);
    res.logits = decode_pointers(res.solve.state, inst, model);
    return res;
}

}  // namespace dear
