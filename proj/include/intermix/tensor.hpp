#pragma once

#include <functional>
#include <utility>
#include <vector>

namespace intermix {

// Dense row-major matrix of doubles. Double precision keeps the finite
// difference gradient checks meaningful.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

    double &at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    double *row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const double *row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
    size_t size() const { return v.size(); }
};

// c += a * b
void mm_acc(Mat &c, const Mat &a, const Mat &b);
// c += a * b^T
void mm_nt_acc(Mat &c, const Mat &a, const Mat &b);
// c += a^T * b
void mm_tn_acc(Mat &c, const Mat &a, const Mat &b);

// Reverse-mode tape over matrix-level operations. One tape per forward
// pass; nodes are identified by dense ids.
class Tape {
  public:
    using NodeId = int;

    NodeId leaf(Mat value);

    const Mat &value(NodeId id) const { return nodes_[id].val; }
    const Mat &gradient(NodeId id) const { return nodes_[id].grad; }

    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_nt(NodeId a, NodeId b); // a * b^T
    NodeId add(NodeId a, NodeId b);
    NodeId add_row_broadcast(NodeId a, NodeId row_vector);
    NodeId scale(NodeId a, double s);
    NodeId rmsnorm(NodeId a, NodeId gain);
    NodeId gelu(NodeId a);
    // Row-wise softmax of (a + additive_mask); use large negative mask
    // entries to exclude positions.
    NodeId masked_softmax_rows(NodeId a, Mat additive_mask);
    NodeId gather_rows(NodeId table, std::vector<int> indices);
    // Output row r is row `sources[r].second` of node `sources[r].first`.
    NodeId assemble_rows(std::vector<std::pair<NodeId, int>> sources);
    NodeId concat_cols(const std::vector<NodeId> &parts);
    // Summed cross entropy of the listed (row, target class) pairs, as a
    // 1x1 node. label_smoothing spreads that much mass uniformly.
    NodeId cross_entropy(NodeId logits, std::vector<std::pair<int, int>> targets,
                         double label_smoothing = 0.0);

    void backward(NodeId loss);

  private:
    struct Node {
        Mat val;
        Mat grad;
        std::function<void()> back; // empty for leaves
    };

    NodeId push(Mat value, std::function<void()> back);
    Mat &grad_mut(NodeId id) { return nodes_[id].grad; }

    std::vector<Node> nodes_;
};

} // namespace intermix
