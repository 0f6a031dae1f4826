#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ftnet/tensor.hpp"

namespace ftnet {

using NodeId = int;

// Reverse-mode tape over a fixed op set. A graph is built once (shapes are
// validated and fixed at build time), then forward/backward may be run any
// number of times with rebound inputs. Single-threaded per instance; distinct
// instances over shared read-only parameter tensors may run concurrently.
class Graph {
public:
    explicit Graph(std::uint64_t seed = 0);
    ~Graph();
    Graph(Graph&&) noexcept;
    Graph& operator=(Graph&&) noexcept;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaves.
    NodeId input(const std::string& name, std::vector<int> shape);
    NodeId param(const Tensor* storage);  // external storage, read at each forward
    NodeId constant(Tensor value);        // re-settable via set_constant

    // Ops. Shapes are checked here; a mismatch throws ShapeError naming the node.
    NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
    NodeId dense(NodeId x, NodeId w, NodeId b);
    NodeId relu(NodeId x);
    NodeId maxpool2(NodeId x);
    NodeId dropout(NodeId x, float p);  // identity unless train mode
    NodeId sigmoid(NodeId x);
    NodeId bce(NodeId p);                     // scalar probability vs settable target
    NodeId softmax(NodeId logits);
    NodeId softmax_xent(NodeId logits);       // scalar loss vs settable label
    NodeId xent_probs(NodeId probs);          // -log p[label], settable label
    NodeId mean_vectors(const std::vector<NodeId>& xs);
    NodeId relative_l2(NodeId a, NodeId b);   // ||a-b||_2 / ||b||_2
    NodeId weighted_sum(const std::vector<NodeId>& xs, const std::vector<float>& w);
    NodeId residual_add(NodeId skip, NodeId branch);  // branch grad scalable
    NodeId sum(NodeId x);
    NodeId half_sum_squares(NodeId x);

    void set_loss(NodeId leaf);
    void set_train(bool train);
    void set_seed(std::uint64_t seed);

    // Mutable op parameters (per attack / per sample).
    void set_constant(NodeId node, const Tensor& value);
    void set_label(NodeId node, int label);
    void set_bce_target(NodeId node, float target);
    void set_branch_scale(NodeId node, float scale);

    // Persistent input binding; the pointee must outlive the next forward.
    void bind(const std::string& name, const Tensor* value);

    float run_forward();  // all inputs must be bound; returns the loss value
    Tensor forward(const std::map<std::string, const Tensor*>& bindings);

    // Reverse pass from the scalar loss. Zeroes and refills every node grad.
    void backward();

    Tensor value_of(NodeId node) const;
    Tensor grad_of(NodeId node) const;
    Tensor input_grad(const std::string& name) const;
    void add_grad_to(NodeId node, float* dst) const;  // dst += grad, size numel(node)

    const std::vector<int>& shape_of(NodeId node) const;
    std::size_t node_count() const;

    struct Impl;  // public so free op-node types in the .cpp can use it

private:
    std::unique_ptr<Impl> impl_;
};

// Central finite difference of the graph loss w.r.t. one input coordinate.
// Test oracle; independent of the backward pass.
float finite_difference_gradient(Graph& g, const std::string& input_name,
                                 const Tensor& at, std::size_t coordinate, float h);

}  // namespace ftnet
