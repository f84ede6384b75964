#ifndef MIPL_TAPE_HPP
#define MIPL_TAPE_HPP

#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "mipl/matrix.hpp"

namespace mipl::ad {

class Tape;

// One recorded operation result. Nodes are created through Tape factory
// methods only; values are computed eagerly at creation, gradients are filled
// by Tape::backward.
struct Node {
    Matrix value;
    Matrix grad;                                // same shape, zero until backward
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Node&)> backward_fn; // pulls grad, pushes into parents
    const char* op = "leaf";
};

using NodePtr = std::shared_ptr<Node>;

// Dynamic single-use tape. Records every node in creation order (a valid
// topological order for an eager graph) and replays it in reverse on
// backward. A tape that has run backward refuses to run it again; build a
// fresh tape per forward pass.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Inputs. Both are recorded identically; "constant" is for values whose
    // gradient is never read (bag data, frozen weights).
    NodePtr leaf(Matrix value);
    NodePtr constant(Matrix value);

    NodePtr matmul(const NodePtr& a, const NodePtr& b);
    NodePtr transpose(const NodePtr& x);

    // Elementwise, same-shape unless stated otherwise.
    NodePtr add(const NodePtr& a, const NodePtr& b);
    NodePtr sub(const NodePtr& a, const NodePtr& b);
    NodePtr mul(const NodePtr& a, const NodePtr& b);
    NodePtr tanh(const NodePtr& x);
    NodePtr sigmoid(const NodePtr& x);
    NodePtr relu(const NodePtr& x);
    NodePtr log(const NodePtr& x);   // domain: strictly positive entries
    NodePtr sqrt(const NodePtr& x);  // domain: non-negative entries
    NodePtr scale(const NodePtr& x, double c);
    NodePtr add_const(const NodePtr& x, double c);
    // max(x, c) entrywise; gradient passes only where x > c.
    NodePtr clamp_min(const NodePtr& x, double c);

    // Broadcasts: column vector b (r x 1) added to every column of m (r x n);
    // scalar node s (1 x 1) combined with every entry of x.
    NodePtr add_colvec(const NodePtr& m, const NodePtr& b);
    NodePtr sub_scalar(const NodePtr& x, const NodePtr& s);
    NodePtr div_scalar(const NodePtr& x, const NodePtr& s); // domain: s != 0

    // Tempered softmax over a 1 x n row of scores: softmax(scores / tau).
    // Max-subtraction keeps exp in range; the Jacobian includes the 1/tau
    // factor. tau must be positive.
    NodePtr softmax_t(const NodePtr& scores, double tau);

    // Reductions to 1 x 1.
    NodePtr sum(const NodePtr& x);
    NodePtr mean(const NodePtr& x);
    // Max over the listed flat indices; ties resolve to the lowest index and
    // the subgradient routes there. Records the winner/runner-up gap for tie
    // detection by the gradient checker.
    NodePtr max_over(const NodePtr& x, const std::vector<int>& idx);

    // Row vector 1 x n from n scalar nodes.
    NodePtr concat_scalars(const std::vector<NodePtr>& xs);

    // Reverse sweep from a 1 x 1 root: seeds d(root)/d(root) = 1 and
    // accumulates exact partials into every recorded node. Single use.
    void backward(const NodePtr& root);

    bool backward_done() const { return backward_done_; }
    std::size_t num_nodes() const { return order_.size(); }

    // Smallest winner-minus-runner-up gap seen by any max_over on this tape;
    // +inf if no max had a competitor. Used to flag near-tie evaluations.
    double min_max_margin() const { return min_max_margin_; }

  private:
    NodePtr record(Matrix value, std::vector<NodePtr> parents,
                   std::function<void(const Node&)> back, const char* op);

    std::vector<NodePtr> order_;
    bool backward_done_ = false;
    double min_max_margin_ = std::numeric_limits<double>::infinity();
};

} // namespace mipl::ad

#endif
