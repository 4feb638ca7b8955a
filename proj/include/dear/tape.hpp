#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dear/tensor.hpp"

namespace dear {

using NodeId = int32_t;

// Reverse-mode tape. A tape is rebuilt per forward call: ops append nodes whose
// pull closures scatter cotangents to their parents. Nothing persists across
// calls, which keeps the fixed-point forward pass free of per-iteration state.
//
// A tape supports repeated backward sweeps (the adjoint solve re-sweeps one
// recorded application many times with different cotangents); parameter
// gradients are only accumulated into Parameter::grad when a sweep is run
// through backward() rather than vjp().
class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}

    bool recording() const { return record_; }
    int size() const { return static_cast<int>(nodes_.size()); }

    void reset() {
        nodes_.clear();
        grads_.clear();
        needed_.clear();
        param_ids_.clear();
        param_leaves_.clear();
    }

    const Tensor& val(NodeId id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        return n.external ? *n.external : n.value;
    }

    // -- leaves ---------------------------------------------------------------

    NodeId leaf(Tensor t) {
        Node n;
        n.value = std::move(t);
        return push(std::move(n));
    }

    // Parameter leaf, memoized per tape so repeated uses share one node and its
    // gradient accumulates once. References the parameter's storage (parameters
    // are read-only while a tape is alive).
    NodeId param(Parameter& p) {
        auto it = param_ids_.find(&p);
        if (it != param_ids_.end()) return it->second;
        Node n;
        n.external = &p.value;
        NodeId id = push(std::move(n));
        param_ids_.emplace(&p, id);
        param_leaves_.push_back({&p, id});
        return id;
    }

    // -- elementwise ----------------------------------------------------------

    NodeId add(NodeId a, NodeId b) {
        require_same_shape(a, b, "add");
        Tensor out = val(a);
        axpy(1.0, val(b), out);
        return unary_binary(std::move(out), {a, b}, [this, a, b](const Tensor& g) {
            axpy(1.0, g, grad_buf(a));
            axpy(1.0, g, grad_buf(b));
        });
    }

    NodeId sub(NodeId a, NodeId b) {
        require_same_shape(a, b, "sub");
        Tensor out = val(a);
        axpy(-1.0, val(b), out);
        return unary_binary(std::move(out), {a, b}, [this, a, b](const Tensor& g) {
            axpy(1.0, g, grad_buf(a));
            axpy(-1.0, g, grad_buf(b));
        });
    }

    NodeId mul(NodeId a, NodeId b) {
        require_same_shape(a, b, "mul");
        Tensor out = val(a);
        {
            const double* pb = val(b).data();
            double* po = out.data();
            for (int64_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
        }
        return unary_binary(std::move(out), {a, b}, [this, a, b](const Tensor& g) {
            const Tensor& va = val(a);
            const Tensor& vb = val(b);
            Tensor& ga = grad_buf(a);
            Tensor& gb = grad_buf(b);
            for (int64_t i = 0; i < g.numel(); ++i) {
                ga[i] += g[i] * vb[i];
                gb[i] += g[i] * va[i];
            }
        });
    }

    NodeId scale(NodeId a, double c) {
        Tensor out = val(a);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
        return unary_binary(std::move(out), {a}, [this, a, c](const Tensor& g) {
            axpy(c, g, grad_buf(a));
        });
    }

    NodeId one_minus(NodeId a) {
        Tensor out = val(a);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 - out[i];
        return unary_binary(std::move(out), {a}, [this, a](const Tensor& g) {
            axpy(-1.0, g, grad_buf(a));
        });
    }

    NodeId relu(NodeId a) {
        Tensor out = val(a);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
        return unary_binary(std::move(out), {a}, [this, a](const Tensor& g) {
            const Tensor& x = val(a);
            Tensor& ga = grad_buf(a);
            for (int64_t i = 0; i < g.numel(); ++i)
                if (x[i] > 0.0) ga[i] += g[i];
        });
    }

    NodeId sigmoid(NodeId a) {
        Tensor out = val(a);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = sigmoid_scalar(out[i]);
        NodeId id = unary_binary(std::move(out), {a}, nullptr);
        if (record_) {
            nodes_[static_cast<size_t>(id)].pull = [this, a, id](const Tensor& g) {
                const Tensor& y = val(id);
                Tensor& ga = grad_buf(a);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
            };
        }
        return id;
    }

    static double sigmoid_scalar(double x) {
        if (x >= 0.0) {
            return 1.0 / (1.0 + std::exp(-x));
        }
        const double e = std::exp(x);
        return e / (1.0 + e);
    }

    // -- linear algebra --------------------------------------------------------

    // y[r,:] = W x[r,:] + b for every row r. Rank-1 input is treated as one row.
    NodeId linear(LinearLayer& layer, NodeId x) { return linear_impl(layer, x, true); }

    // Same contraction without the bias. Used by directional-derivative traces,
    // where d(Wx+b) = W dx but the weight must stay a tracked parameter.
    NodeId linear_nobias(LinearLayer& layer, NodeId x) { return linear_impl(layer, x, false); }

    NodeId mlp(Mlp& net, NodeId x) {
        NodeId h = x;
        for (size_t l = 0; l < net.layers.size(); ++l) {
            h = linear(net.layers[l], h);
            if (l + 1 < net.layers.size()) h = relu(h);
        }
        return h;
    }

    // -- structure ops ---------------------------------------------------------

    NodeId concat_cols(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
        const int rows = val(parts[0]).rows();
        int cols = 0;
        for (NodeId p : parts) {
            if (val(p).rank() != 2 || val(p).rows() != rows)
                throw std::invalid_argument("concat_cols: row mismatch");
            cols += val(p).cols();
        }
        Tensor out({rows, cols});
        int off = 0;
        for (NodeId p : parts) {
            const Tensor& t = val(p);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < t.cols(); ++c) out.at(r, off + c) = t.at(r, c);
            off += t.cols();
        }
        auto parts_copy = std::make_shared<std::vector<NodeId>>(parts);
        return unary_binary(std::move(out), parts, [this, parts_copy](const Tensor& g) {
            int off2 = 0;
            for (NodeId p : *parts_copy) {
                Tensor& gp = grad_buf(p);
                const int pc = gp.cols();
                for (int r = 0; r < gp.rows(); ++r)
                    for (int c = 0; c < pc; ++c) gp.at(r, c) += g.at(r, off2 + c);
                off2 += pc;
            }
        });
    }

    // out[r,:] = x[idx[r],:]
    NodeId gather_rows(NodeId x, std::shared_ptr<const std::vector<int>> idx) {
        const Tensor& t = val(x);
        const int cols = t.cols();
        Tensor out({static_cast<int>(idx->size()), cols});
        for (size_t r = 0; r < idx->size(); ++r)
            for (int c = 0; c < cols; ++c) out.at(static_cast<int>(r), c) = t.at((*idx)[r], c);
        return unary_binary(std::move(out), {x}, [this, x, idx](const Tensor& g) {
            Tensor& gx = grad_buf(x);
            for (size_t r = 0; r < idx->size(); ++r)
                for (int c = 0; c < gx.cols(); ++c)
                    gx.at((*idx)[r], c) += g.at(static_cast<int>(r), c);
        });
    }

    struct SegMax {
        NodeId id;
        std::shared_ptr<std::vector<int>> argwin;  // n_groups x cols, winning row per entry
    };

    // Per-group elementwise max over rows; group_of_row maps each row to its
    // group. Ties go to the lowest row index so the backward routing (one-hot
    // per output coordinate) is deterministic. Every group must be non-empty.
    SegMax segment_max(NodeId x, std::shared_ptr<const std::vector<int>> group_of_row,
                       int n_groups) {
        const Tensor& t = val(x);
        const int cols = t.cols();
        Tensor out({n_groups, cols});
        auto argwin = std::make_shared<std::vector<int>>(
            static_cast<size_t>(n_groups) * static_cast<size_t>(cols), -1);
        std::vector<char> seen(static_cast<size_t>(n_groups), 0);
        for (int r = 0; r < t.rows(); ++r) {
            const int g = (*group_of_row)[static_cast<size_t>(r)];
            if (!seen[static_cast<size_t>(g)]) {
                seen[static_cast<size_t>(g)] = 1;
                for (int c = 0; c < cols; ++c) {
                    out.at(g, c) = t.at(r, c);
                    (*argwin)[static_cast<size_t>(g) * cols + c] = r;
                }
            } else {
                for (int c = 0; c < cols; ++c) {
                    if (t.at(r, c) > out.at(g, c)) {
                        out.at(g, c) = t.at(r, c);
                        (*argwin)[static_cast<size_t>(g) * cols + c] = r;
                    }
                }
            }
        }
        for (int g = 0; g < n_groups; ++g)
            if (!seen[static_cast<size_t>(g)])
                throw std::runtime_error("segment_max: empty aggregation group " +
                                         std::to_string(g));
        NodeId id = unary_binary(std::move(out), {x}, nullptr);
        if (record_) {
            nodes_[static_cast<size_t>(id)].pull = [this, x, argwin, cols](const Tensor& g) {
                Tensor& gx = grad_buf(x);
                for (int gr = 0; gr < g.rows(); ++gr)
                    for (int c = 0; c < cols; ++c)
                        gx.at((*argwin)[static_cast<size_t>(gr) * cols + c], c) += g.at(gr, c);
            };
        }
        return {id, argwin};
    }

    // out[g,c] = x[win[g,c], c] — the tangent companion of segment_max.
    NodeId gather_winners(NodeId x, std::shared_ptr<const std::vector<int>> win, int n_groups) {
        const Tensor& t = val(x);
        const int cols = t.cols();
        Tensor out({n_groups, cols});
        for (int g = 0; g < n_groups; ++g)
            for (int c = 0; c < cols; ++c)
                out.at(g, c) = t.at((*win)[static_cast<size_t>(g) * cols + c], c);
        return unary_binary(std::move(out), {x}, [this, x, win, cols](const Tensor& g) {
            Tensor& gx = grad_buf(x);
            for (int gr = 0; gr < g.rows(); ++gr)
                for (int c = 0; c < cols; ++c)
                    gx.at((*win)[static_cast<size_t>(gr) * cols + c], c) += g.at(gr, c);
        });
    }

    // out[p] = <a[pairs[p].first,:], b[pairs[p].second,:]>
    NodeId pair_dot(NodeId a, NodeId b,
                    std::shared_ptr<const std::vector<std::pair<int, int>>> pairs) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.cols() != tb.cols()) throw std::invalid_argument("pair_dot: col mismatch");
        const int cols = ta.cols();
        Tensor out({static_cast<int>(pairs->size())});
        for (size_t p = 0; p < pairs->size(); ++p) {
            const double* ra = ta.data() + static_cast<size_t>((*pairs)[p].first) * cols;
            const double* rb = tb.data() + static_cast<size_t>((*pairs)[p].second) * cols;
            double s = 0.0;
            for (int c = 0; c < cols; ++c) s += ra[c] * rb[c];
            out[static_cast<int64_t>(p)] = s;
        }
        return unary_binary(std::move(out), {a, b}, [this, a, b, pairs, cols](const Tensor& g) {
            const Tensor& ta2 = val(a);
            const Tensor& tb2 = val(b);
            Tensor& ga = grad_buf(a);
            Tensor& gb = grad_buf(b);
            for (size_t p = 0; p < pairs->size(); ++p) {
                const double gp = g[static_cast<int64_t>(p)];
                if (gp == 0.0) continue;
                const int i = (*pairs)[p].first;
                const int j = (*pairs)[p].second;
                const double* ra = ta2.data() + static_cast<size_t>(i) * cols;
                const double* rb = tb2.data() + static_cast<size_t>(j) * cols;
                double* gra = ga.data() + static_cast<size_t>(i) * cols;
                double* grb = gb.data() + static_cast<size_t>(j) * cols;
                for (int c = 0; c < cols; ++c) {
                    gra[c] += gp * rb[c];
                    grb[c] += gp * ra[c];
                }
            }
        });
    }

    // Sum over groups of (logsumexp(group) - score[target]). scores is rank-1 and
    // laid out group-contiguously: group g spans [offsets[g], offsets[g+1]).
    // target[g] is an absolute index into scores inside group g.
    NodeId nll_sum(NodeId scores, std::shared_ptr<const std::vector<int>> offsets,
                   std::shared_ptr<const std::vector<int>> target) {
        const Tensor& s = val(scores);
        const size_t groups = offsets->size() - 1;
        double loss = 0.0;
        for (size_t g = 0; g < groups; ++g) {
            const int lo = (*offsets)[g], hi = (*offsets)[g + 1];
            const int tgt = (*target)[g];
            if (tgt < lo || tgt >= hi)
                throw std::runtime_error("nll_sum: target outside its candidate group");
            loss += logsumexp(s, lo, hi) - s[tgt];
        }
        Tensor out = Tensor::scalar(loss);
        return unary_binary(std::move(out), {scores},
                            [this, scores, offsets, target](const Tensor& g) {
            const double gs = g[0];
            const Tensor& s2 = val(scores);
            Tensor& gsc = grad_buf(scores);
            for (size_t gr = 0; gr + 1 < offsets->size(); ++gr) {
                const int lo = (*offsets)[gr], hi = (*offsets)[gr + 1];
                const double lse = logsumexp(s2, lo, hi);
                for (int i = lo; i < hi; ++i)
                    gsc[i] += gs * std::exp(s2[i] - lse);
                gsc[(*target)[gr]] -= gs;
            }
        });
    }

    NodeId sum_squares(NodeId a) {
        const Tensor& t = val(a);
        Tensor out = Tensor::scalar(dot_all(t, t));
        return unary_binary(std::move(out), {a}, [this, a](const Tensor& g) {
            axpy(2.0 * g[0], val(a), grad_buf(a));
        });
    }

    NodeId sum_all(NodeId a) {
        const Tensor& t = val(a);
        double s = 0.0;
        for (int64_t i = 0; i < t.numel(); ++i) s += t[i];
        Tensor out = Tensor::scalar(s);
        return unary_binary(std::move(out), {a}, [this, a](const Tensor& g) {
            Tensor& ga = grad_buf(a);
            for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
        });
    }

    // -- backward -------------------------------------------------------------

    // Run one reverse sweep seeding d(out) = cotangent, filling per-node grads.
    void sweep(NodeId out, const Tensor& cotangent) {
        if (!record_) throw std::logic_error("Tape::sweep on a non-recording tape");
        if (!cotangent.same_shape(val(out)))
            throw std::invalid_argument("sweep: cotangent shape mismatch");
        const size_t n = nodes_.size();
        needed_.assign(n, 0);
        needed_[static_cast<size_t>(out)] = 1;
        for (int id = out; id >= 0; --id) {
            if (!needed_[static_cast<size_t>(id)]) continue;
            for (NodeId p : nodes_[static_cast<size_t>(id)].parents)
                needed_[static_cast<size_t>(p)] = 1;
        }
        grads_.resize(n);
        for (size_t id = 0; id <= static_cast<size_t>(out); ++id) {
            if (!needed_[id]) continue;
            const Tensor& v = val(static_cast<NodeId>(id));
            // numel check matters: a default Tensor and a rank-0 scalar share
            // the empty shape but only the scalar owns storage
            if (!grads_[id].same_shape(v) || grads_[id].numel() != v.numel())
                grads_[id] = Tensor(v.shape());
            else
                grads_[id].fill(0.0);
        }
        grads_[static_cast<size_t>(out)] = cotangent;
        for (int id = out; id >= 0; --id) {
            if (!needed_[static_cast<size_t>(id)]) continue;
            const Node& node = nodes_[static_cast<size_t>(id)];
            if (node.pull) node.pull(grads_[static_cast<size_t>(id)]);
        }
    }

    // Gradient at a node after a sweep. Zero tensor if the node was unreachable.
    Tensor grad(NodeId id) const {
        const size_t i = static_cast<size_t>(id);
        if (i < needed_.size() && needed_[i]) return grads_[i];
        return Tensor(val(id).shape());
    }

    // Vector-Jacobian product d<cot, out>/d val(wrt). No parameter accumulation.
    Tensor vjp(NodeId out, const Tensor& cotangent, NodeId wrt) {
        sweep(out, cotangent);
        return grad(wrt);
    }

    // Sweep and accumulate gradients into every reachable Parameter.
    void backward(NodeId out, const Tensor& cotangent) {
        sweep(out, cotangent);
        flush_params();
    }

    void backward_scalar(NodeId out, double seed = 1.0) {
        if (val(out).numel() != 1) throw std::invalid_argument("backward_scalar: not a scalar");
        backward(out, Tensor::scalar(seed));
    }

    // Accumulate the current sweep's leaf gradients into Parameter::grad.
    void flush_params() {
        for (const auto& [p, id] : param_leaves_) {
            const size_t i = static_cast<size_t>(id);
            if (i < needed_.size() && needed_[i]) axpy(1.0, grads_[i], p->grad);
        }
    }

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;  // parameter leaves alias their storage
        std::vector<NodeId> parents;
        std::function<void(const Tensor&)> pull;
    };

    static double logsumexp(const Tensor& s, int lo, int hi) {
        double m = s[lo];
        for (int i = lo + 1; i < hi; ++i) m = std::max(m, s[i]);
        double acc = 0.0;
        for (int i = lo; i < hi; ++i) acc += std::exp(s[i] - m);
        return m + std::log(acc);
    }

    Tensor& grad_buf(NodeId id) { return grads_[static_cast<size_t>(id)]; }

    void require_same_shape(NodeId a, NodeId b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    NodeId unary_binary(Tensor out, std::vector<NodeId> parents,
                        std::function<void(const Tensor&)> pull) {
        Node n;
        n.value = std::move(out);
        if (record_) {
            n.parents = std::move(parents);
            n.pull = std::move(pull);
        }
        return push(std::move(n));
    }

    NodeId linear_impl(LinearLayer& layer, NodeId x, bool with_bias) {
        // create leaves first: pushing nodes may reallocate, so references into
        // the node store must only be taken once the tape stops growing
        NodeId wid = param(layer.weight);
        NodeId bid = with_bias ? param(layer.bias) : -1;
        const Tensor& tx = val(x);
        const int in = layer.in_dim();
        const int out_dim = layer.out_dim();
        const bool vec_in = tx.rank() == 1;
        const int rows = vec_in ? 1 : tx.rows();
        if ((vec_in ? tx.dim(0) : tx.cols()) != in)
            throw std::invalid_argument("linear: input dim " +
                                        std::to_string(vec_in ? tx.dim(0) : tx.cols()) +
                                        " != layer in dim " + std::to_string(in));
        const Tensor& W = val(wid);
        Tensor y(vec_in ? std::vector<int>{out_dim} : std::vector<int>{rows, out_dim});
        linear_rows(tx, W, with_bias ? &layer.bias.value : nullptr, y);
        std::vector<NodeId> parents = {x, wid};
        if (with_bias) parents.push_back(bid);
        return unary_binary(std::move(y), std::move(parents),
                            [this, x, wid, bid, rows, in, out_dim](const Tensor& g) {
            const Tensor& tx2 = val(x);
            const Tensor& W2 = val(wid);
            Tensor& gx = grad_buf(x);
            Tensor& gw = grad_buf(wid);
            for (int r = 0; r < rows; ++r) {
                const double* gr = g.data() + static_cast<size_t>(r) * out_dim;
                const double* xr = tx2.data() + static_cast<size_t>(r) * in;
                double* gxr = gx.data() + static_cast<size_t>(r) * in;
                for (int o = 0; o < out_dim; ++o) {
                    const double go = gr[o];
                    if (go == 0.0) continue;
                    const double* wrow = W2.data() + static_cast<size_t>(o) * in;
                    double* gwrow = gw.data() + static_cast<size_t>(o) * in;
                    for (int k = 0; k < in; ++k) {
                        gxr[k] += go * wrow[k];
                        gwrow[k] += go * xr[k];
                    }
                }
            }
            if (bid >= 0) {
                Tensor& gb = grad_buf(bid);
                for (int r = 0; r < rows; ++r) {
                    const double* gr = g.data() + static_cast<size_t>(r) * out_dim;
                    for (int o = 0; o < out_dim; ++o) gb[o] += gr[o];
                }
            }
        });
    }

    bool record_;
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<char> needed_;
    std::unordered_map<Parameter*, NodeId> param_ids_;
    std::vector<std::pair<Parameter*, NodeId>> param_leaves_;
};

}  // namespace dear
