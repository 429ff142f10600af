#include "intermix/tensor.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace intermix {

void mm_acc(Mat &c, const Mat &a, const Mat &b) {
    assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double *ar = a.row(i);
        double *cr = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ar[k];
            if (aik == 0.0) continue;
            const double *br = b.row(k);
            for (int j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
        }
    }
}

void mm_nt_acc(Mat &c, const Mat &a, const Mat &b) {
    assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double *ar = a.row(i);
        double *cr = c.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const double *br = b.row(j);
            double sum = 0.0;
            for (int k = 0; k < a.cols; ++k) sum += ar[k] * br[k];
            cr[j] += sum;
        }
    }
}

void mm_tn_acc(Mat &c, const Mat &a, const Mat &b) {
    assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const double *ar = a.row(k);
        const double *br = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            const double aki = ar[i];
            if (aki == 0.0) continue;
            double *cr = c.row(i);
            for (int j = 0; j < b.cols; ++j) cr[j] += aki * br[j];
        }
    }
}

Tape::NodeId Tape::push(Mat value, std::function<void()> back) {
    Node n;
    n.grad = Mat(value.rows, value.cols);
    n.val = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

Tape::NodeId Tape::leaf(Mat value) { return push(std::move(value), {}); }

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
    const Mat &av = value(a);
    const Mat &bv = value(b);
    if (av.cols != bv.rows) throw std::invalid_argument("matmul shape mismatch");
    Mat out(av.rows, bv.cols);
    mm_acc(out, av, bv);
    NodeId id = static_cast<NodeId>(nodes_.size());
    return push(std::move(out), [this, a, b, id] {
        mm_nt_acc(grad_mut(a), gradient(id), value(b));
        mm_tn_acc(grad_mut(b), value(a), gradient(id));
    });
}

Tape::NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    const Mat &av = value(a);
    const Mat &bv = value(b);
    if (av.cols != bv.cols) throw std::invalid_argument("matmul_nt shape mismatch");
    Mat out(av.rows, bv.rows);
    mm_nt_acc(out, av, bv);
    NodeId id = static_cast<NodeId>(nodes_.size());
    return push(std::move(out), [this, a, b, id] {
        mm_acc(grad_mut(a), gradient(id), value(b));
        mm_tn_acc(grad_mut(b), gradient(id), value(a));
    });
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    const Mat &av = value(a);
    const Mat &bv = value(b);
    if (av.rows != bv.rows || av.cols != bv.cols) throw std::invalid_argument("add shape mismatch");
    Mat out = av;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] += bv.v[i];
    NodeId id = static_cast<NodeId>(nodes_.size());
    return push(std::move(out), [this, a, b, id] {
        const Mat &g = gradient(id);
        Mat &ga = grad_mut(a);
        Mat &gb = grad_mut(b);
        for (size_t i = 0; i < g.size(); ++i) {
            ga.v[i] += g.v[i];
            gb.v[i] += g.v[i];
        }
    });
}

Tape::NodeId Tape::add_row_broadcast(NodeId a, NodeId row_vector) {
    const Mat &av = value(a);
    const Mat &rv = value(row_vector);
    if (rv.rows != 1 || rv.cols != av.cols) throw std::invalid_argument("bias shape mismatch");
    Mat out = av;
    for (int i = 0; i < out.rows; ++i) {
        double *r = out.row(i);
        for (int j = 0; j < out.cols; ++j) r[j] += rv.v[j];
    }
    NodeId id = static_cast<NodeId>(nodes_.size());
    return push(std::move(out), [this, a, row_vector, id] {
        const Mat &g = gradient(id);
        Mat &ga = grad_mut(a);
        Mat &gb = grad_mut(row_vector);
        for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
        for (int i = 0; i < g.rows; ++i) {
            const double *r = g.row(i);
            for (int j = 0; j < g.cols; ++j) gb.v[j] += r[j];
        }
    });
}

Tape::NodeId Tape::scale(NodeId a, double s) {
    Mat out = value(a);
    for (double &x : out.v) x *= s;
    NodeId id = static_cast<NodeId>(nodes_.size());
    return push(std::move(out), [this, a, s, id] {
        const Mat &g = gradient(id);
        Mat &ga = grad_mut(a);
        for (size_t i = 0; i < g.size(); ++i) ga.v[i] += s * g.v[i];
    });
}

Tape::NodeId Tape::rmsnorm(NodeId a, NodeId gain) {
    constexpr double kEps = 1e-8;
    const Mat &av = value(a);
    const Mat &gv = value(gain);
    if (gv.rows != 1 || gv.cols != av.cols) throw std::invalid_argument("gain shape mismatch");
    Mat out(av.rows, av.cols);
    std::vector<double> inv_rms(av.rows);
    for (int i = 0; i < av.rows; ++i) {
        const double *x = av.row(i);
        double ss = 0.0;
        for (int j = 0; j < av.cols; ++j) ss += x[j] * x[j];
        inv_rms[i] = 1.0 / std::sqrt(ss / av.cols + kEps);
        double *o = out.row(i);
        for (int j = 0; j < av.cols; ++j) o[j] = x[j] * inv_rms[i] * gv.v[j];
    }
    NodeId id = static_cast<NodeId>(nodes_.size());
    return push(std::move(out), [this, a, gain, id, inv_rms = std::move(inv_rms)] {
        const Mat &g = gradient(id);
        const Mat &av2 = value(a);
        const Mat &gv2 = value(gain);
        Mat &ga = grad_mut(a);
        Mat &gg = grad_mut(gain);
        const int n = av2.cols;
        for (int i = 0; i < av2.rows; ++i) {
            const double *x = av2.row(i);
            const double *gr = g.row(i);
            double *gar = ga.row(i);
            const double r = inv_rms[i];
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += gr[j] * gv2.v[j] * x[j];
            for (int j = 0; j < n; ++j) {
                gar[j] += gr[j] * gv2.v[j] * r - x[j] * dot * r * r * r / n;
                gg.v[j] += gr[j] * x[j] * r;
            }
        }
    });
}

Tape::NodeId Tape::gelu(NodeId a) {
    constexpr double kC = 0.7978845608028654; // sqrt(2/pi)
    const Mat &av = value(a);
    Mat out(av.rows, av.cols);
    for (size_t i = 0; i < av.size(); ++i) {
        double x = av.v[i];
        double t = std::tanh(kC * (x + 0.044715 * x * x * x));
        out.v[i] = 0.5 * x * (1.0 + t);
    }
    NodeId id = static_cast<NodeId>(nodes_.size());
    return push(std::move(out), [this, a, id] {
        const Mat &g = gradient(id);
        const Mat &av2 = value(a);
        Mat &ga = grad_mut(a);
        for (size_t i = 0; i < g.size(); ++i) {
            double x = av2.v[i];
            double u = kC * (x + 0.044715 * x * x * x);
            double t = std::tanh(u);
            double du = kC * (1.0 + 3.0 * 0.044715 * x * x);
            double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
            ga.v[i] += g.v[i] * d;
        }
    });
}

Tape::NodeId Tape::masked_softmax_rows(NodeId a, Mat additive_mask) {
    const Mat &av = value(a);
    if (additive_mask.rows != av.rows || additive_mask.cols != av.cols) {
        throw std::invalid_argument("mask shape mismatch");
    }
    Mat out(av.rows, av.cols);
    for (int i = 0; i < av.rows; ++i) {
        const double *x = av.row(i);
        const double *m = additive_mask.row(i);
        double *o = out.row(i);
        double max = -1e300;
        for (int j = 0; j < av.cols; ++j) max = std::max(max, x[j] + m[j]);
        double sum = 0.0;
        for (int j = 0; j < av.cols; ++j) {
            o[j] = std::exp(x[j] + m[j] - max);
            sum += o[j];
        }
        for (int j = 0; j < av.cols; ++j) o[j] /= sum;
    }
    NodeId id = static_cast<NodeId>(nodes_.size());
    return push(std::move(out), [this, a, id] {
        const Mat &g = gradient(id);
        const Mat &p = value(id);
        Mat &ga = grad_mut(a);
        for (int i = 0; i < p.rows; ++i) {
            const double *gr = g.row(i);
            const double *pr = p.row(i);
            double *gar = ga.row(i);
            double dot = 0.0;
            for (int j = 0; j < p.cols; ++j) dot += gr[j] * pr[j];
            for (int j = 0; j < p.cols; ++j) gar[j] += pr[j] * (gr[j] - dot);
        }
    });
}

Tape::NodeId Tape::gather_rows(NodeId table, std::vector<int> indices) {
    const Mat &tv = value(table);
    Mat out(static_cast<int>(indices.size()), tv.cols);
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= tv.rows) throw std::out_of_range("gather index");
        const double *src = tv.row(indices[i]);
        double *dst = out.row(static_cast<int>(i));
        for (int j = 0; j < tv.cols; ++j) dst[j] = src[j];
    }
    NodeId id = static_cast<NodeId>(nodes_.size());
    return push(std::move(out), [this, table, id, indices = std::move(indices)] {
        const Mat &g = gradient(id);
        Mat &gt = grad_mut(table);
        for (size_t i = 0; i < indices.size(); ++i) {
            const double *gr = g.row(static_cast<int>(i));
            double *dst = gt.row(indices[i]);
            for (int j = 0; j < g.cols; ++j) dst[j] += gr[j];
        }
    });
}

Tape::NodeId Tape::assemble_rows(std::vector<std::pair<NodeId, int>> sources) {
    if (sources.empty()) throw std::invalid_argument("empty assembly");
    const int cols = value(sources[0].first).cols;
    Mat out(static_cast<int>(sources.size()), cols);
    for (size_t i = 0; i < sources.size(); ++i) {
        const Mat &src = value(sources[i].first);
        if (src.cols != cols || sources[i].second < 0 || sources[i].second >= src.rows) {
            throw std::out_of_range("assemble source row");
        }
        const double *s = src.row(sources[i].second);
        double *d = out.row(static_cast<int>(i));
        for (int j = 0; j < cols; ++j) d[j] = s[j];
    }
    NodeId id = static_cast<NodeId>(nodes_.size());
    return push(std::move(out), [this, id, sources = std::move(sources)] {
        const Mat &g = gradient(id);
        for (size_t i = 0; i < sources.size(); ++i) {
            const double *gr = g.row(static_cast<int>(i));
            double *dst = grad_mut(sources[i].first).row(sources[i].second);
            for (int j = 0; j < g.cols; ++j) dst[j] += gr[j];
        }
    });
}

Tape::NodeId Tape::concat_cols(const std::vector<NodeId> &parts) {
    if (parts.empty()) throw std::invalid_argument("empty concat");
    const int rows = value(parts[0]).rows;
    int cols = 0;
    for (NodeId p : parts) {
        if (value(p).rows != rows) throw std::invalid_argument("concat row mismatch");
        cols += value(p).cols;
    }
    Mat out(rows, cols);
    int offset = 0;
    for (NodeId p : parts) {
        const Mat &pv = value(p);
        for (int i = 0; i < rows; ++i) {
            const double *s = pv.row(i);
            double *d = out.row(i) + offset;
            for (int j = 0; j < pv.cols; ++j) d[j] = s[j];
        }
        offset += pv.cols;
    }
    NodeId id = static_cast<NodeId>(nodes_.size());
    std::vector<NodeId> parts_copy = parts;
    return push(std::move(out), [this, id, parts_copy = std::move(parts_copy)] {
        const Mat &g = gradient(id);
        int offset2 = 0;
        for (NodeId p : parts_copy) {
            Mat &gp = grad_mut(p);
            for (int i = 0; i < g.rows; ++i) {
                const double *s = g.row(i) + offset2;
                double *d = gp.row(i);
                for (int j = 0; j < gp.cols; ++j) d[j] += s[j];
            }
            offset2 += gp.cols;
        }
    });
}

Tape::NodeId Tape::cross_entropy(NodeId logits, std::vector<std::pair<int, int>> targets,
                                 double label_smoothing) {
    const Mat &lv = value(logits);
    double loss = 0.0;
    for (const auto &[row, target] : targets) {
        if (row < 0 || row >= lv.rows || target < 0 || target >= lv.cols) {
            throw std::out_of_range("cross entropy target");
        }
        const double *x = lv.row(row);
        double max = x[0];
        for (int j = 1; j < lv.cols; ++j) max = std::max(max, x[j]);
        double sum = 0.0, mean = 0.0;
        for (int j = 0; j < lv.cols; ++j) {
            sum += std::exp(x[j] - max);
            mean += x[j];
        }
        mean /= lv.cols;
        double lse = max + std::log(sum);
        loss += lse - (1.0 - label_smoothing) * x[target] - label_smoothing * mean;
    }
    Mat out(1, 1);
    out.v[0] = loss;
    NodeId id = static_cast<NodeId>(nodes_.size());
    return push(std::move(out), [this, logits, id, label_smoothing, targets = std::move(targets)] {
        const double g = gradient(id).v[0];
        const Mat &lv2 = value(logits);
        Mat &gl = grad_mut(logits);
        for (const auto &[row, target] : targets) {
            const double *x = lv2.row(row);
            double *gr = gl.row(row);
            double max = x[0];
            for (int j = 1; j < lv2.cols; ++j) max = std::max(max, x[j]);
            double sum = 0.0;
            for (int j = 0; j < lv2.cols; ++j) sum += std::exp(x[j] - max);
            for (int j = 0; j < lv2.cols; ++j) {
                double p = std::exp(x[j] - max) / sum;
                double soft = label_smoothing / lv2.cols;
                double hard = (j == target) ? (1.0 - label_smoothing) : 0.0;
                gr[j] += g * (p - hard - soft);
            }
        }
    });
}

void Tape::backward(NodeId loss) {
    Mat &g = grad_mut(loss);
    if (g.rows != 1 || g.cols != 1) throw std::invalid_argument("loss must be a scalar node");
    g.v[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        if (nodes_[i].back) nodes_[i].back();
    }
}

} // namespace intermix
