#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "zia/tensor.hpp"

namespace zia::ad {

// Eager reverse-mode tape over Tensor-valued nodes. Each op computes its
// value immediately and records a pull-back that scatters the node's gradient
// into its parents. Fan-out accumulates, so shared subgraphs (e.g. one
// embedding feeding many windows) are handled.
class Tape;

struct Value {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

class Tape {
public:
    const Tensor& val(Value v) const { return nodes_[check(v)].val; }
    const Tensor& grad(Value v) const { return nodes_[check(v)].grad; }
    std::size_t size() const { return nodes_.size(); }

    Value constant(Tensor t) { return push(std::move(t), {}, nullptr); }

    // Leaf whose gradient is read back after backward().
    Value param(const Tensor& t) { return push(t, {}, nullptr); }

    Value matmul(Value a, Value b) {
        Tensor out = zia::matmul(val(a), val(b));
        return push(std::move(out), {a, b}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            Node& pb = tp.nodes_[static_cast<std::size_t>(n.parents[1])];
            // dA += dC B^T ; dB += A^T dC
            accumulate(pa.grad, zia::matmul_nt(n.grad, pb.val));
            accumulate(pb.grad, zia::matmul_tn(pa.val, n.grad));
        });
    }

    Value add(Value a, Value b) {
        Tensor out = val(a);
        axpy(1.0, val(b), out);
        return push(std::move(out), {a, b}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            accumulate(tp.nodes_[static_cast<std::size_t>(n.parents[0])].grad, n.grad);
            accumulate(tp.nodes_[static_cast<std::size_t>(n.parents[1])].grad, n.grad);
        });
    }

    Value sub(Value a, Value b) {
        Tensor out = val(a);
        axpy(-1.0, val(b), out);
        return push(std::move(out), {a, b}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            accumulate(tp.nodes_[static_cast<std::size_t>(n.parents[0])].grad, n.grad);
            Node& pb = tp.nodes_[static_cast<std::size_t>(n.parents[1])];
            for (int i = 0; i < n.grad.size(); ++i)
                pb.grad.v[static_cast<std::size_t>(i)] -= n.grad.v[static_cast<std::size_t>(i)];
        });
    }

    Value mul(Value a, Value b) {  // elementwise
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (!ta.same_shape(tb)) throw std::invalid_argument("mul: shape mismatch");
        Tensor out = ta;
        for (int i = 0; i < out.size(); ++i)
            out.v[static_cast<std::size_t>(i)] *= tb.v[static_cast<std::size_t>(i)];
        return push(std::move(out), {a, b}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            Node& pb = tp.nodes_[static_cast<std::size_t>(n.parents[1])];
            for (int i = 0; i < n.grad.size(); ++i) {
                const auto u = static_cast<std::size_t>(i);
                pa.grad.v[u] += n.grad.v[u] * pb.val.v[u];
                pb.grad.v[u] += n.grad.v[u] * pa.val.v[u];
            }
        });
    }

    Value scale(Value a, double s) {
        Tensor out = val(a);
        for (auto& x : out.v) x *= s;
        return push(std::move(out), {a}, [s](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < n.grad.size(); ++i)
                pa.grad.v[static_cast<std::size_t>(i)] += s * n.grad.v[static_cast<std::size_t>(i)];
        });
    }

    Value add_scalar(Value a, double s) {
        Tensor out = val(a);
        for (auto& x : out.v) x += s;
        return push(std::move(out), {a}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            accumulate(tp.nodes_[static_cast<std::size_t>(n.parents[0])].grad, n.grad);
        });
    }

    // Broadcast a 1 x C row vector over the rows of a.
    Value add_rowvec(Value a, Value r) {
        const Tensor& ta = val(a);
        const Tensor& tr = val(r);
        if (tr.rows != 1 || tr.cols != ta.cols)
            throw std::invalid_argument("add_rowvec: need 1 x cols vector");
        Tensor out = ta;
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j) out(i, j) += tr(0, j);
        return push(std::move(out), {a, r}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            accumulate(tp.nodes_[static_cast<std::size_t>(n.parents[0])].grad, n.grad);
            Node& pr = tp.nodes_[static_cast<std::size_t>(n.parents[1])];
            for (int i = 0; i < n.grad.rows; ++i)
                for (int j = 0; j < n.grad.cols; ++j) pr.grad(0, j) += n.grad(i, j);
        });
    }

    Value mul_rowvec(Value a, Value r) {
        const Tensor& ta = val(a);
        const Tensor& tr = val(r);
        if (tr.rows != 1 || tr.cols != ta.cols)
            throw std::invalid_argument("mul_rowvec: need 1 x cols vector");
        Tensor out = ta;
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j) out(i, j) *= tr(0, j);
        return push(std::move(out), {a, r}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            Node& pr = tp.nodes_[static_cast<std::size_t>(n.parents[1])];
            for (int i = 0; i < n.grad.rows; ++i)
                for (int j = 0; j < n.grad.cols; ++j) {
                    pa.grad(i, j) += n.grad(i, j) * pr.val(0, j);
                    pr.grad(0, j) += n.grad(i, j) * pa.val(i, j);
                }
        });
    }

    // Broadcast an R x 1 column vector over the columns of a (scales rows).
    Value mul_colvec(Value a, Value c) {
        const Tensor& ta = val(a);
        const Tensor& tc = val(c);
        if (tc.cols != 1 || tc.rows != ta.rows)
            throw std::invalid_argument("mul_colvec: need rows x 1 vector");
        Tensor out = ta;
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j) out(i, j) *= tc(i, 0);
        return push(std::move(out), {a, c}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            Node& pc = tp.nodes_[static_cast<std::size_t>(n.parents[1])];
            for (int i = 0; i < n.grad.rows; ++i)
                for (int j = 0; j < n.grad.cols; ++j) {
                    pa.grad(i, j) += n.grad(i, j) * pc.val(i, 0);
                    pc.grad(i, 0) += n.grad(i, j) * pa.val(i, j);
                }
        });
    }

    // a / c with c an R x 1 column vector. Rows where |c| <= eps are emitted
    // as zeros with zero gradient (guard for degenerate normalizers); rows
    // with c <= eps set the flag. Negative denominators divide normally.
    Value div_colvec(Value a, Value c, double eps = 1e-12, bool* flagged = nullptr) {
        const Tensor& ta = val(a);
        const Tensor& tc = val(c);
        if (tc.cols != 1 || tc.rows != ta.rows)
            throw std::invalid_argument("div_colvec: need rows x 1 vector");
        auto dead = std::make_shared<std::vector<bool>>(static_cast<std::size_t>(ta.rows), false);
        Tensor out = ta;
        for (int i = 0; i < out.rows; ++i) {
            const double ci = tc(i, 0);
            if (ci <= eps && flagged != nullptr) *flagged = true;
            if (std::abs(ci) <= eps) {
                (*dead)[static_cast<std::size_t>(i)] = true;
                for (int j = 0; j < out.cols; ++j) out(i, j) = 0.0;
            } else {
                for (int j = 0; j < out.cols; ++j) out(i, j) /= ci;
            }
        }
        return push(std::move(out), {a, c}, [dead](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            Node& pc = tp.nodes_[static_cast<std::size_t>(n.parents[1])];
            for (int i = 0; i < n.grad.rows; ++i) {
                if ((*dead)[static_cast<std::size_t>(i)]) continue;
                const double ci = pc.val(i, 0);
                for (int j = 0; j < n.grad.cols; ++j) {
                    pa.grad(i, j) += n.grad(i, j) / ci;
                    pc.grad(i, 0) -= n.grad(i, j) * pa.val(i, j) / (ci * ci);
                }
            }
        });
    }

    Value transpose(Value a) {
        return push(zia::transpose(val(a)), {a}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            accumulate(tp.nodes_[static_cast<std::size_t>(n.parents[0])].grad,
                       zia::transpose(n.grad));
        });
    }

    Value slice_cols(Value a, int c0, int c1) {
        const Tensor& ta = val(a);
        if (!(c0 >= 0 && c0 < c1 && c1 <= ta.cols))
            throw std::invalid_argument("slice_cols: bad range");
        Tensor out(ta.rows, c1 - c0);
        for (int i = 0; i < ta.rows; ++i)
            for (int j = c0; j < c1; ++j) out(i, j - c0) = ta(i, j);
        return push(std::move(out), {a}, [c0](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < n.grad.rows; ++i)
                for (int j = 0; j < n.grad.cols; ++j) pa.grad(i, j + c0) += n.grad(i, j);
        });
    }

    Value concat_cols(const std::vector<Value>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
        int cols = 0;
        const int rows = val(parts[0]).rows;
        for (Value p : parts) {
            if (val(p).rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
            cols += val(p).cols;
        }
        Tensor out(rows, cols);
        int off = 0;
        for (Value p : parts) {
            const Tensor& tp_ = val(p);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < tp_.cols; ++j) out(i, off + j) = tp_(i, j);
            off += tp_.cols;
        }
        return push(std::move(out), parts, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            int off = 0;
            for (int parent : n.parents) {
                Node& pp = tp.nodes_[static_cast<std::size_t>(parent)];
                for (int i = 0; i < pp.grad.rows; ++i)
                    for (int j = 0; j < pp.grad.cols; ++j) pp.grad(i, j) += n.grad(i, off + j);
                off += pp.grad.cols;
            }
        });
    }

    Value concat_rows(const std::vector<Value>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
        int rows = 0;
        const int cols = val(parts[0]).cols;
        for (Value p : parts) {
            if (val(p).cols != cols) throw std::invalid_argument("concat_rows: col mismatch");
            rows += val(p).rows;
        }
        Tensor out(rows, cols);
        int off = 0;
        for (Value p : parts) {
            const Tensor& tp_ = val(p);
            for (int i = 0; i < tp_.rows; ++i)
                for (int j = 0; j < cols; ++j) out(off + i, j) = tp_(i, j);
            off += tp_.rows;
        }
        return push(std::move(out), parts, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            int off = 0;
            for (int parent : n.parents) {
                Node& pp = tp.nodes_[static_cast<std::size_t>(parent)];
                for (int i = 0; i < pp.grad.rows; ++i)
                    for (int j = 0; j < pp.grad.cols; ++j) pp.grad(i, j) += n.grad(off + i, j);
                off += pp.grad.rows;
            }
        });
    }

    Value relu(Value a) {
        Tensor out = val(a);
        for (auto& x : out.v) x = std::max(x, 0.0);
        return push(std::move(out), {a}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < n.grad.size(); ++i) {
                const auto u = static_cast<std::size_t>(i);
                if (pa.val.v[u] > 0.0) pa.grad.v[u] += n.grad.v[u];
            }
        });
    }

    Value tanh_(Value a) {
        Tensor out = val(a);
        for (auto& x : out.v) x = std::tanh(x);
        return push(std::move(out), {a}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < n.grad.size(); ++i) {
                const auto u = static_cast<std::size_t>(i);
                pa.grad.v[u] += n.grad.v[u] * (1.0 - n.val.v[u] * n.val.v[u]);
            }
        });
    }

    Value exp_(Value a) {
        Tensor out = val(a);
        for (auto& x : out.v) x = std::exp(x);
        return push(std::move(out), {a}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < n.grad.size(); ++i) {
                const auto u = static_cast<std::size_t>(i);
                pa.grad.v[u] += n.grad.v[u] * n.val.v[u];
            }
        });
    }

    Value log_(Value a) {
        Tensor out = val(a);
        for (auto& x : out.v) x = std::log(x);
        return push(std::move(out), {a}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < n.grad.size(); ++i) {
                const auto u = static_cast<std::size_t>(i);
                pa.grad.v[u] += n.grad.v[u] / pa.val.v[u];
            }
        });
    }

    Value softplus(Value a) {
        Tensor out = val(a);
        for (auto& x : out.v) x = (x > 30.0) ? x : std::log1p(std::exp(x));
        return push(std::move(out), {a}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < n.grad.size(); ++i) {
                const auto u = static_cast<std::size_t>(i);
                const double sig = 1.0 / (1.0 + std::exp(-pa.val.v[u]));
                pa.grad.v[u] += n.grad.v[u] * sig;
            }
        });
    }

    Value row_softmax(Value a) {
        Tensor out = val(a);
        for (int i = 0; i < out.rows; ++i) {
            double mx = -1e300;
            for (int j = 0; j < out.cols; ++j) mx = std::max(mx, out(i, j));
            double s = 0.0;
            for (int j = 0; j < out.cols; ++j) {
                out(i, j) = std::exp(out(i, j) - mx);
                s += out(i, j);
            }
            for (int j = 0; j < out.cols; ++j) out(i, j) /= s;
        }
        return push(std::move(out), {a}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < n.grad.rows; ++i) {
                double dot = 0.0;
                for (int j = 0; j < n.grad.cols; ++j) dot += n.grad(i, j) * n.val(i, j);
                for (int j = 0; j < n.grad.cols; ++j)
                    pa.grad(i, j) += n.val(i, j) * (n.grad(i, j) - dot);
            }
        });
    }

    Value row_log_softmax(Value a) {
        Tensor out = val(a);
        for (int i = 0; i < out.rows; ++i) {
            double mx = -1e300;
            for (int j = 0; j < out.cols; ++j) mx = std::max(mx, out(i, j));
            double s = 0.0;
            for (int j = 0; j < out.cols; ++j) s += std::exp(out(i, j) - mx);
            const double lse = mx + std::log(s);
            for (int j = 0; j < out.cols; ++j) out(i, j) -= lse;
        }
        return push(std::move(out), {a}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < n.grad.rows; ++i) {
                double gsum = 0.0;
                for (int j = 0; j < n.grad.cols; ++j) gsum += n.grad(i, j);
                for (int j = 0; j < n.grad.cols; ++j)
                    pa.grad(i, j) += n.grad(i, j) - std::exp(n.val(i, j)) * gsum;
            }
        });
    }

    Value row_sum(Value a) {  // R x 1
        const Tensor& ta = val(a);
        Tensor out(ta.rows, 1);
        for (int i = 0; i < ta.rows; ++i) {
            double s = 0.0;
            for (int j = 0; j < ta.cols; ++j) s += ta(i, j);
            out(i, 0) = s;
        }
        return push(std::move(out), {a}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < pa.grad.rows; ++i)
                for (int j = 0; j < pa.grad.cols; ++j) pa.grad(i, j) += n.grad(i, 0);
        });
    }

    Value sum_all(Value a) {  // 1 x 1
        const Tensor& ta = val(a);
        Tensor out(1, 1);
        for (double x : ta.v) out(0, 0) += x;
        return push(std::move(out), {a}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (auto& g : pa.grad.v) g += n.grad(0, 0);
        });
    }

    Value mean_rows(Value a) {  // 1 x C
        const Tensor& ta = val(a);
        Tensor out(1, ta.cols);
        for (int i = 0; i < ta.rows; ++i)
            for (int j = 0; j < ta.cols; ++j) out(0, j) += ta(i, j) / ta.rows;
        return push(std::move(out), {a}, [](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < pa.grad.rows; ++i)
                for (int j = 0; j < pa.grad.cols; ++j)
                    pa.grad(i, j) += n.grad(0, j) / pa.grad.rows;
        });
    }

    // Row-wise standardization (zero mean, unit variance); affine gain/bias
    // are applied separately via mul_rowvec/add_rowvec.
    Value layer_norm(Value a, double eps = 1e-6) {
        const Tensor& ta = val(a);
        Tensor out = ta;
        auto stds = std::make_shared<std::vector<double>>(static_cast<std::size_t>(ta.rows));
        for (int i = 0; i < ta.rows; ++i) {
            double m = 0.0;
            for (int j = 0; j < ta.cols; ++j) m += ta(i, j);
            m /= ta.cols;
            double var = 0.0;
            for (int j = 0; j < ta.cols; ++j) var += (ta(i, j) - m) * (ta(i, j) - m);
            var /= ta.cols;
            const double sd = std::sqrt(var + eps);
            (*stds)[static_cast<std::size_t>(i)] = sd;
            for (int j = 0; j < ta.cols; ++j) out(i, j) = (ta(i, j) - m) / sd;
        }
        return push(std::move(out), {a}, [stds](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            const int C = n.grad.cols;
            for (int i = 0; i < n.grad.rows; ++i) {
                double gmean = 0.0, gydot = 0.0;
                for (int j = 0; j < C; ++j) {
                    gmean += n.grad(i, j);
                    gydot += n.grad(i, j) * n.val(i, j);
                }
                gmean /= C;
                gydot /= C;
                const double sd = (*stds)[static_cast<std::size_t>(i)];
                for (int j = 0; j < C; ++j)
                    pa.grad(i, j) += (n.grad(i, j) - gmean - n.val(i, j) * gydot) / sd;
            }
        });
    }

    // Rows scaled to unit L2 norm; rows with norm < eps are scaled by 1/eps.
    Value row_l2_normalize(Value a, double eps = 1e-12) {
        const Tensor& ta = val(a);
        Tensor out = ta;
        auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(ta.rows));
        for (int i = 0; i < ta.rows; ++i) {
            double s = 0.0;
            for (int j = 0; j < ta.cols; ++j) s += ta(i, j) * ta(i, j);
            const double nrm = std::max(std::sqrt(s), eps);
            (*norms)[static_cast<std::size_t>(i)] = nrm;
            for (int j = 0; j < ta.cols; ++j) out(i, j) /= nrm;
        }
        return push(std::move(out), {a}, [norms](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < n.grad.rows; ++i) {
                const double nrm = (*norms)[static_cast<std::size_t>(i)];
                double dot = 0.0;
                for (int j = 0; j < n.grad.cols; ++j) dot += n.grad(i, j) * n.val(i, j);
                for (int j = 0; j < n.grad.cols; ++j)
                    pa.grad(i, j) += (n.grad(i, j) - n.val(i, j) * dot) / nrm;
            }
        });
    }

    // Mean negative picked log-probability: -1/R * sum_r ls(r, target[r]).
    Value pick_nll(Value log_softmax, std::vector<int> targets) {
        const Tensor& ls = val(log_softmax);
        if (static_cast<int>(targets.size()) != ls.rows)
            throw std::invalid_argument("pick_nll: one target per row required");
        Tensor out(1, 1);
        for (int i = 0; i < ls.rows; ++i) {
            const int t = targets[static_cast<std::size_t>(i)];
            if (t < 0 || t >= ls.cols) throw std::invalid_argument("pick_nll: target out of range");
            out(0, 0) -= ls(i, t) / ls.rows;
        }
        auto tg = std::make_shared<std::vector<int>>(std::move(targets));
        return push(std::move(out), {log_softmax}, [tg](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < pa.grad.rows; ++i)
                pa.grad(i, (*tg)[static_cast<std::size_t>(i)]) -=
                    n.grad(0, 0) / pa.grad.rows;
        });
    }

    // Picked entries as an R x 1 column (e.g. per-sample log prob of the
    // taken action).
    Value pick_cols(Value a, std::vector<int> picks) {
        const Tensor& ta = val(a);
        if (static_cast<int>(picks.size()) != ta.rows)
            throw std::invalid_argument("pick_cols: one pick per row required");
        Tensor out(ta.rows, 1);
        for (int i = 0; i < ta.rows; ++i) out(i, 0) = ta(i, picks[static_cast<std::size_t>(i)]);
        auto pk = std::make_shared<std::vector<int>>(std::move(picks));
        return push(std::move(out), {a}, [pk](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < pa.grad.rows; ++i)
                pa.grad(i, (*pk)[static_cast<std::size_t>(i)]) += n.grad(i, 0);
        });
    }

    // Rows of a selected (with repetition allowed); backward scatters.
    Value gather_rows(Value a, std::vector<int> rows) {
        const Tensor& ta = val(a);
        Tensor out(static_cast<int>(rows.size()), ta.cols);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const int r = rows[i];
            if (r < 0 || r >= ta.rows) throw std::invalid_argument("gather_rows: out of range");
            for (int j = 0; j < ta.cols; ++j) out(static_cast<int>(i), j) = ta(r, j);
        }
        auto rw = std::make_shared<std::vector<int>>(std::move(rows));
        return push(std::move(out), {a}, [rw](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (std::size_t i = 0; i < rw->size(); ++i)
                for (int j = 0; j < n.grad.cols; ++j)
                    pa.grad((*rw)[i], j) += n.grad(static_cast<int>(i), j);
        });
    }

    // Elementwise min; gradient routed to the smaller operand (ties -> a).
    Value min_(Value a, Value b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (!ta.same_shape(tb)) throw std::invalid_argument("min_: shape mismatch");
        Tensor out = ta;
        auto pick_b = std::make_shared<std::vector<bool>>(static_cast<std::size_t>(ta.size()));
        for (int i = 0; i < ta.size(); ++i) {
            const auto u = static_cast<std::size_t>(i);
            if (tb.v[u] < ta.v[u]) {
                out.v[u] = tb.v[u];
                (*pick_b)[u] = true;
            }
        }
        return push(std::move(out), {a, b}, [pick_b](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            Node& pb = tp.nodes_[static_cast<std::size_t>(n.parents[1])];
            for (int i = 0; i < n.grad.size(); ++i) {
                const auto u = static_cast<std::size_t>(i);
                if ((*pick_b)[u]) pb.grad.v[u] += n.grad.v[u];
                else pa.grad.v[u] += n.grad.v[u];
            }
        });
    }

    // Clamp with zero gradient outside [lo, hi].
    Value clamp_(Value a, double lo, double hi) {
        Tensor out = val(a);
        for (auto& x : out.v) x = std::clamp(x, lo, hi);
        return push(std::move(out), {a}, [lo, hi](Tape& tp, int self) {
            const Node& n = tp.nodes_[static_cast<std::size_t>(self)];
            Node& pa = tp.nodes_[static_cast<std::size_t>(n.parents[0])];
            for (int i = 0; i < n.grad.size(); ++i) {
                const auto u = static_cast<std::size_t>(i);
                if (pa.val.v[u] > lo && pa.val.v[u] < hi) pa.grad.v[u] += n.grad.v[u];
            }
        });
    }

    // Backpropagate from a 1x1 scalar node.
    void backward(Value loss) {
        Node& ln = nodes_[check(loss)];
        if (ln.val.size() != 1)
            throw std::invalid_argument("backward: loss must be a 1x1 tensor");
        for (auto& n : nodes_) {
            n.grad = Tensor::zeros(n.val.rows, n.val.cols);
        }
        ln.grad(0, 0) = 1.0;
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.back) n.back(*this, i);
        }
    }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        std::vector<int> parents;
        std::function<void(Tape&, int)> back;
    };

    static void accumulate(Tensor& dst, const Tensor& src) {
        for (int i = 0; i < dst.size(); ++i)
            dst.v[static_cast<std::size_t>(i)] += src.v[static_cast<std::size_t>(i)];
    }

    std::size_t check(Value v) const {
        if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
            throw std::invalid_argument("Tape: invalid value handle");
        return static_cast<std::size_t>(v.idx);
    }

    Value push(Tensor val, std::vector<Value> parents, std::function<void(Tape&, int)> back) {
        Node n;
        n.val = std::move(val);
        for (Value p : parents) n.parents.push_back(static_cast<int>(check(p)));
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Value{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
};

}  // namespace zia::ad
