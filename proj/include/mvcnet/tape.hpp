#pragma once

// Reverse-mode differentiation over dense real matrices.
//
// Every node stores its forward value, computed eagerly when the node is
// recorded. backward() walks the tape once in reverse and returns the
// gradient of a scalar node with respect to every registered parameter.
//
// Frechet-mean nodes are stop-gradient: their value is used by later nodes
// (as the anchor of a normal chart) but no adjoint flows back through the
// mean iteration. Anchors in general enter the tape as constants.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvcnet/manifold.hpp"
#include "mvcnet/matrix_kernels.hpp"

namespace mvcnet {

using NodeId = int;

enum class Primitive {
  Constant,
  Parameter,
  Add,
  Scale,
  MatMul,
  Trace,
  EigFunction,
  Congruence,
  LinComb,
  Relu,
  Affine,
  Softmax,
  SoftmaxCrossEntropy,
  SquaredError,
  Distance,
  FrechetMean,
  SphereLog,
  SphereExp,
  Concat,
};

std::string_view to_string(Primitive p);

/// Per-primitive attributes; only the fields a primitive uses are read.
struct PrimitiveAttrs {
  double scalar = 0.0;            // Scale factor, SquaredError target
  int label = -1;                 // SoftmaxCrossEntropy class
  ScalarFn fn = ScalarFn::Identity;  // EigFunction
  Matrix matrix;                  // Congruence left factor, sphere chart anchor
  std::vector<int> indices;       // LinComb weight index per term
  ManifoldId manifold;            // Distance, FrechetMean
  FrechetOptions frechet;         // FrechetMean
};

/// Gradients keyed by parameter id, flattened column-major.
struct GradBundle {
  std::map<std::string, Vector> grads;

  void accumulate(const GradBundle& other);
  void scale(double factor);
  double global_norm() const;
  /// Rescales so the global norm is at most max_norm; returns the pre-clip norm.
  double clip(double max_norm);
  bool all_finite() const;
};

class Tape {
 public:
  NodeId constant(Matrix value);
  NodeId parameter(std::string id, Matrix value);

  /// Generic entry point; the typed helpers below forward here.
  NodeId record(Primitive primitive, std::span<const NodeId> inputs, PrimitiveAttrs attrs = {});

  NodeId add(NodeId a, NodeId b);
  NodeId scale(double factor, NodeId a);
  NodeId matmul(NodeId a, NodeId b);
  NodeId trace(NodeId a);
  NodeId eig_function(ScalarFn f, NodeId a);
  /// left * A * left^T with a constant left factor.
  NodeId congruence(const Matrix& left, NodeId a);
  /// sum_k weights[index[k]] * terms[k]; weights is a column-vector node.
  NodeId lincomb(NodeId weights, std::vector<int> index, std::span<const NodeId> terms);
  /// Entrywise max(a, t). Without a threshold node t = 0.
  NodeId relu(NodeId a, std::optional<NodeId> threshold = std::nullopt);
  /// W x + b.
  NodeId affine(NodeId w, NodeId x, NodeId b);
  NodeId softmax(NodeId logits);
  NodeId softmax_cross_entropy(NodeId logits, int label);
  NodeId squared_error(NodeId prediction, double target);
  /// Geodesic distance between two point nodes (flat coordinates as column vectors).
  NodeId distance(const ManifoldId& manifold, NodeId x, NodeId y);
  /// Stop-gradient Frechet mean of point nodes, uniform weights.
  NodeId frechet_mean(const ManifoldId& manifold, std::span<const NodeId> points,
                      const FrechetOptions& options = {});
  /// Sphere Log at a constant anchor.
  NodeId sphere_log(const Vector& anchor, NodeId x);
  /// Sphere Exp at a constant anchor.
  NodeId sphere_exp(const Vector& anchor, NodeId v);
  /// Stacks column vectors (or scalars) vertically.
  NodeId concat(std::span<const NodeId> parts);

  const Matrix& value(NodeId id) const;
  Primitive primitive(NodeId id) const;
  bool requires_grad(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  GradBundle backward(NodeId loss) const;

 private:
  struct Node {
    Primitive op = Primitive::Constant;
    std::vector<NodeId> inputs;
    Matrix value;
    bool requires_grad = false;
    PrimitiveAttrs attrs;
    EigDecomp decomp;  // EigFunction, Distance
    Matrix saved;      // softmax probabilities, distance adjoint factor
    std::string param_id;
  };

  NodeId push(Node node);
  void check_id(NodeId id) const;

  std::vector<Node> nodes_;
};

}  // namespace mvcnet
