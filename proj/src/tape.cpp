#include "mvcnet/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "mvcnet/errors.hpp"

namespace mvcnet {

namespace {

constexpr double kTinyDistance = 1e-12;

std::vector<ManifoldPoint> to_points(const ManifoldId& m, const std::vector<Matrix>& values) {
  std::vector<ManifoldPoint> out;
  out.reserve(values.size());
  for (const Matrix& v : values) {
    if (m.kind == ManifoldKind::Spd) {
      out.push_back(ManifoldPoint::from_matrix(v));
    } else {
      out.push_back({m, v.col(0)});
    }
  }
  return out;
}

// Euclidean gradient of d(X, Y) with respect to Y, given X^{-1/2} and the
// spectrum of W = X^{-1/2} Y X^{-1/2}: X^{-1/2} U diag(log(l)/l) U^T X^{-1/2} / d.
Matrix spd_distance_gradient(const Matrix& invsqrt_base, const EigDecomp& w, double d) {
  Vector f(w.values.size());
  for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = std::log(w.values(i)) / w.values(i);
  const Matrix inner = w.vectors * f.asDiagonal() * w.vectors.transpose();
  return symmetrize(invsqrt_base * inner * invsqrt_base) / d;
}

}  // namespace

std::string_view to_string(Primitive p) {
  switch (p) {
    case Primitive::Constant: return "constant";
    case Primitive::Parameter: return "parameter";
    case Primitive::Add: return "add";
    case Primitive::Scale: return "scale";
    case Primitive::MatMul: return "matmul";
    case Primitive::Trace: return "trace";
    case Primitive::EigFunction: return "eig_function";
    case Primitive::Congruence: return "congruence";
    case Primitive::LinComb: return "lincomb";
    case Primitive::Relu: return "relu";
    case Primitive::Affine: return "affine";
    case Primitive::Softmax: return "softmax";
    case Primitive::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Primitive::SquaredError: return "squared_error";
    case Primitive::Distance: return "distance";
    case Primitive::FrechetMean: return "frechet_mean";
    case Primitive::SphereLog: return "sphere_log";
    case Primitive::SphereExp: return "sphere_exp";
    case Primitive::Concat: return "concat";
  }
  return "unregistered";
}

// ---------------------------------------------------------------------------
// GradBundle

void GradBundle::accumulate(const GradBundle& other) {
  for (const auto& [id, g] : other.grads) {
    auto it = grads.find(id);
    if (it == grads.end()) {
      grads.emplace(id, g);
    } else {
      if (it->second.size() != g.size()) {
        throw ContractError("GradBundle: gradient length mismatch for '" + id + "'");
      }
      it->second += g;
    }
  }
}

void GradBundle::scale(double factor) {
  for (auto& [id, g] : grads) g *= factor;
}

double GradBundle::global_norm() const {
  double sq = 0.0;
  for (const auto& [id, g] : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

double GradBundle::clip(double max_norm) {
  const double norm = global_norm();
  if (norm > max_norm && norm > 0.0) scale(max_norm / norm);
  return norm;
}

bool GradBundle::all_finite() const {
  for (const auto& [id, g] : grads) {
    if (!g.allFinite()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Recording

NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_id(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw ContractError("tape: node id " + std::to_string(id) + " out of range");
  }
}

NodeId Tape::constant(Matrix value) {
  Node n;
  n.op = Primitive::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::parameter(std::string id, Matrix value) {
  Node n;
  n.op = Primitive::Parameter;
  n.value = std::move(value);
  n.requires_grad = true;
  n.param_id = std::move(id);
  return push(std::move(n));
}

const Matrix& Tape::value(NodeId id) const {
  check_id(id);
  return nodes_[id].value;
}

Primitive Tape::primitive(NodeId id) const {
  check_id(id);
  return nodes_[id].op;
}

bool Tape::requires_grad(NodeId id) const {
  check_id(id);
  return nodes_[id].requires_grad;
}

NodeId Tape::record(Primitive primitive, std::span<const NodeId> inputs, PrimitiveAttrs attrs) {
  for (NodeId id : inputs) check_id(id);
  Node n;
  n.op = primitive;
  n.inputs.assign(inputs.begin(), inputs.end());
  n.attrs = std::move(attrs);
  for (NodeId id : inputs) n.requires_grad = n.requires_grad || nodes_[id].requires_grad;

  auto arity = [&](std::size_t expected) {
    if (inputs.size() != expected) {
      std::ostringstream os;
      os << "tape: " << to_string(primitive) << " expects " << expected << " inputs, got "
         << inputs.size();
      throw ContractError(os.str());
    }
  };
  auto in = [&](std::size_t k) -> const Matrix& { return nodes_[inputs[k]].value; };

  switch (primitive) {
    case Primitive::Constant:
    case Primitive::Parameter:
      throw ContractError("tape: leaves are created with constant() or parameter()");

    case Primitive::Add:
      arity(2);
      if (in(0).rows() != in(1).rows() || in(0).cols() != in(1).cols()) {
        throw ContractError("tape: add shape mismatch");
      }
      n.value = in(0) + in(1);
      break;

    case Primitive::Scale:
      arity(1);
      n.value = n.attrs.scalar * in(0);
      break;

    case Primitive::MatMul:
      arity(2);
      if (in(0).cols() != in(1).rows()) throw ContractError("tape: matmul shape mismatch");
      n.value = in(0) * in(1);
      break;

    case Primitive::Trace:
      arity(1);
      if (in(0).rows() != in(0).cols()) throw ContractError("tape: trace of non-square matrix");
      n.value = Matrix::Constant(1, 1, in(0).trace());
      break;

    case Primitive::EigFunction:
      arity(1);
      n.decomp = sym_eig(in(0));
      n.value = apply_function(n.decomp, n.attrs.fn);
      break;

    case Primitive::Congruence:
      arity(1);
      if (n.attrs.matrix.cols() != in(0).rows() || in(0).rows() != in(0).cols()) {
        throw ContractError("tape: congruence shape mismatch");
      }
      n.value = symmetrize(n.attrs.matrix * in(0) * n.attrs.matrix.transpose());
      break;

    case Primitive::LinComb: {
      if (inputs.size() < 2) throw ContractError("tape: lincomb needs weights and >= 1 term");
      if (n.attrs.indices.size() != inputs.size() - 1) {
        throw ContractError("tape: lincomb index count does not match term count");
      }
      const Matrix& w = in(0);
      if (w.cols() != 1) throw ContractError("tape: lincomb weights must be a column vector");
      n.value = Matrix::Zero(in(1).rows(), in(1).cols());
      for (std::size_t k = 1; k < inputs.size(); ++k) {
        const int idx = n.attrs.indices[k - 1];
        if (idx < 0 || idx >= w.rows()) throw ContractError("tape: lincomb weight index out of range");
        if (in(k).rows() != n.value.rows() || in(k).cols() != n.value.cols()) {
          throw ContractError("tape: lincomb term shape mismatch");
        }
        n.value += w(idx, 0) * in(k);
      }
      break;
    }

    case Primitive::Relu: {
      if (inputs.empty() || inputs.size() > 2) throw ContractError("tape: relu takes 1 or 2 inputs");
      const double t = inputs.size() == 2 ? in(1)(0, 0) : 0.0;
      if (inputs.size() == 2 && in(1).size() != 1) throw ContractError("tape: relu threshold must be scalar");
      n.value = in(0).cwiseMax(t);
      break;
    }

    case Primitive::Affine:
      arity(3);
      if (in(0).cols() != in(1).rows() || in(1).cols() != 1 || in(2).rows() != in(0).rows() ||
          in(2).cols() != 1) {
        throw ContractError("tape: affine shape mismatch");
      }
      n.value = in(0) * in(1) + in(2);
      break;

    case Primitive::Softmax:
    case Primitive::SoftmaxCrossEntropy: {
      arity(1);
      if (in(0).cols() != 1) throw ContractError("tape: softmax input must be a column vector");
      const Matrix& x = in(0);
      const double top = x.maxCoeff();
      Matrix e = (x.array() - top).exp().matrix();
      const double total = e.sum();
      n.saved = e / total;
      if (primitive == Primitive::Softmax) {
        n.value = n.saved;
      } else {
        const int label = n.attrs.label;
        if (label < 0 || label >= x.rows()) throw ContractError("tape: label out of range");
        n.value = Matrix::Constant(1, 1, top + std::log(total) - x(label, 0));
      }
      break;
    }

    case Primitive::SquaredError:
      arity(1);
      if (in(0).size() != 1) throw ContractError("tape: squared_error expects a scalar prediction");
      n.value = Matrix::Constant(1, 1, std::pow(in(0)(0, 0) - n.attrs.scalar, 2));
      break;

    case Primitive::Distance: {
      arity(2);
      if (n.attrs.manifold.kind == ManifoldKind::Spd) {
        const EigDecomp base = sym_eig(in(0));
        n.saved = apply_function(base, ScalarFn::InvSqrt);
        n.decomp = sym_eig(n.saved * in(1) * n.saved);
        n.value = Matrix::Constant(1, 1, apply_function(n.decomp, ScalarFn::Log).norm());
      } else {
        const double c = std::clamp(in(0).col(0).dot(in(1).col(0)), -1.0, 1.0);
        if (c <= -1.0 + 1e-10) throw ChartError("tape: distance between antipodal sphere points");
        const double s = (in(1).col(0) - c * in(0).col(0)).norm();
        n.value = Matrix::Constant(1, 1, std::atan2(s, c));
      }
      break;
    }

    case Primitive::FrechetMean: {
      if (inputs.empty()) throw ContractError("tape: frechet_mean of no points");
      std::vector<Matrix> values;
      values.reserve(inputs.size());
      for (std::size_t k = 0; k < inputs.size(); ++k) values.push_back(in(k));
      const auto points = to_points(n.attrs.manifold, values);
      const ManifoldPoint m = mvcnet::frechet_mean(points, n.attrs.frechet);
      n.value = n.attrs.manifold.kind == ManifoldKind::Spd ? m.matrix() : Matrix(m.coords);
      n.requires_grad = false;
      break;
    }

    case Primitive::SphereLog: {
      arity(1);
      const ManifoldPoint anchor = ManifoldPoint::on_sphere(n.attrs.matrix.col(0));
      n.value = NormalChart(anchor).log(in(0).col(0));
      break;
    }

    case Primitive::SphereExp: {
      arity(1);
      const ManifoldPoint anchor = ManifoldPoint::on_sphere(n.attrs.matrix.col(0));
      n.value = NormalChart(anchor).exp(in(0).col(0));
      break;
    }

    case Primitive::Concat: {
      if (inputs.empty()) throw ContractError("tape: concat of nothing");
      Eigen::Index rows = 0;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (in(k).cols() != 1) throw ContractError("tape: concat parts must be column vectors");
        rows += in(k).rows();
      }
      n.value.resize(rows, 1);
      Eigen::Index at = 0;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        n.value.block(at, 0, in(k).rows(), 1) = in(k);
        at += in(k).rows();
      }
      break;
    }

    default:
      throw ContractError("tape: unregistered primitive " +
                          std::to_string(static_cast<int>(primitive)));
  }
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) { return record(Primitive::Add, std::array{a, b}); }

NodeId Tape::scale(double factor, NodeId a) {
  PrimitiveAttrs attrs;
  attrs.scalar = factor;
  return record(Primitive::Scale, std::array{a}, std::move(attrs));
}

NodeId Tape::matmul(NodeId a, NodeId b) { return record(Primitive::MatMul, std::array{a, b}); }

NodeId Tape::trace(NodeId a) { return record(Primitive::Trace, std::array{a}); }

NodeId Tape::eig_function(ScalarFn f, NodeId a) {
  PrimitiveAttrs attrs;
  attrs.fn = f;
  return record(Primitive::EigFunction, std::array{a}, std::move(attrs));
}

NodeId Tape::congruence(const Matrix& left, NodeId a) {
  PrimitiveAttrs attrs;
  attrs.matrix = left;
  return record(Primitive::Congruence, std::array{a}, std::move(attrs));
}

NodeId Tape::lincomb(NodeId weights, std::vector<int> index, std::span<const NodeId> terms) {
  std::vector<NodeId> inputs;
  inputs.reserve(terms.size() + 1);
  inputs.push_back(weights);
  inputs.insert(inputs.end(), terms.begin(), terms.end());
  PrimitiveAttrs attrs;
  attrs.indices = std::move(index);
  return record(Primitive::LinComb, inputs, std::move(attrs));
}

NodeId Tape::relu(NodeId a, std::optional<NodeId> threshold) {
  if (threshold) return record(Primitive::Relu, std::array{a, *threshold});
  return record(Primitive::Relu, std::array{a});
}

NodeId Tape::affine(NodeId w, NodeId x, NodeId b) {
  return record(Primitive::Affine, std::array{w, x, b});
}

NodeId Tape::softmax(NodeId logits) { return record(Primitive::Softmax, std::array{logits}); }

NodeId Tape::softmax_cross_entropy(NodeId logits, int label) {
  PrimitiveAttrs attrs;
  attrs.label = label;
  return record(Primitive::SoftmaxCrossEntropy, std::array{logits}, std::move(attrs));
}

NodeId Tape::squared_error(NodeId prediction, double target) {
  PrimitiveAttrs attrs;
  attrs.scalar = target;
  return record(Primitive::SquaredError, std::array{prediction}, std::move(attrs));
}

NodeId Tape::distance(const ManifoldId& manifold, NodeId x, NodeId y) {
  PrimitiveAttrs attrs;
  attrs.manifold = manifold;
  return record(Primitive::Distance, std::array{x, y}, std::move(attrs));
}

NodeId Tape::frechet_mean(const ManifoldId& manifold, std::span<const NodeId> points,
                          const FrechetOptions& options) {
  PrimitiveAttrs attrs;
  attrs.manifold = manifold;
  attrs.frechet = options;
  return record(Primitive::FrechetMean, points, std::move(attrs));
}

NodeId Tape::sphere_log(const Vector& anchor, NodeId x) {
  PrimitiveAttrs attrs;
  attrs.matrix = anchor;
  return record(Primitive::SphereLog, std::array{x}, std::move(attrs));
}

NodeId Tape::sphere_exp(const Vector& anchor, NodeId v) {
  PrimitiveAttrs attrs;
  attrs.matrix = anchor;
  return record(Primitive::SphereExp, std::array{v}, std::move(attrs));
}

NodeId Tape::concat(std::span<const NodeId> parts) { return record(Primitive::Concat, parts); }

// ---------------------------------------------------------------------------
// Backward

GradBundle Tape::backward(NodeId loss) const {
  check_id(loss);
  if (nodes_[loss].value.size() != 1) {
    std::ostringstream os;
    os << "backward: loss node " << loss << " is " << nodes_[loss].value.rows() << "x"
       << nodes_[loss].value.cols() << ", expected a scalar";
    throw ContractError(os.str());
  }

  std::vector<Matrix> adj(nodes_.size());
  adj[loss] = Matrix::Ones(1, 1);
  GradBundle out;

  auto send = [&](NodeId target, const Matrix& g) {
    if (!nodes_[target].requires_grad) return;
    if (adj[target].size() == 0) {
      adj[target] = g;
    } else {
      adj[target] += g;
    }
  };

  for (NodeId i = loss; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || adj[i].size() == 0) continue;
    const Matrix& g = adj[i];
    if (!g.allFinite()) {
      std::ostringstream os;
      os << "backward: poisoned gradient at node " << i << " (" << to_string(n.op) << ")";
      throw NumericalAbort(os.str());
    }
    auto in = [&](std::size_t k) -> const Matrix& { return nodes_[n.inputs[k]].value; };

    switch (n.op) {
      case Primitive::Constant:
        break;

      case Primitive::Parameter: {
        const Vector flat = Eigen::Map<const Vector>(g.data(), g.size());
        auto it = out.grads.find(n.param_id);
        if (it == out.grads.end()) {
          out.grads.emplace(n.param_id, flat);
        } else {
          it->second += flat;
        }
        break;
      }

      case Primitive::Add:
        send(n.inputs[0], g);
        send(n.inputs[1], g);
        break;

      case Primitive::Scale:
        send(n.inputs[0], n.attrs.scalar * g);
        break;

      case Primitive::MatMul:
        send(n.inputs[0], g * in(1).transpose());
        send(n.inputs[1], in(0).transpose() * g);
        break;

      case Primitive::Trace:
        send(n.inputs[0], g(0, 0) * Matrix::Identity(in(0).rows(), in(0).cols()));
        break;

      case Primitive::EigFunction:
        send(n.inputs[0], dsym_apply(n.decomp, n.attrs.fn, symmetrize(g)));
        break;

      case Primitive::Congruence:
        send(n.inputs[0], n.attrs.matrix.transpose() * g * n.attrs.matrix);
        break;

      case Primitive::LinComb: {
        const NodeId wid = n.inputs[0];
        const Matrix& w = in(0);
        Matrix wbar;
        if (nodes_[wid].requires_grad) wbar = Matrix::Zero(w.rows(), 1);
        for (std::size_t k = 1; k < n.inputs.size(); ++k) {
          const int idx = n.attrs.indices[k - 1];
          if (wbar.size() != 0) wbar(idx, 0) += (g.array() * in(k).array()).sum();
          if (nodes_[n.inputs[k]].requires_grad) send(n.inputs[k], w(idx, 0) * g);
        }
        if (wbar.size() != 0) send(wid, wbar);
        break;
      }

      case Primitive::Relu: {
        const double t = n.inputs.size() == 2 ? in(1)(0, 0) : 0.0;
        const auto active = (in(0).array() > t);
        send(n.inputs[0], active.select(g.array(), 0.0).matrix());
        if (n.inputs.size() == 2) {
          send(n.inputs[1], Matrix::Constant(1, 1, active.select(0.0, g.array()).sum()));
        }
        break;
      }

      case Primitive::Affine:
        send(n.inputs[0], g * in(1).transpose());
        send(n.inputs[1], in(0).transpose() * g);
        send(n.inputs[2], g);
        break;

      case Primitive::Softmax: {
        const Matrix& p = n.saved;
        const double dot = (p.array() * g.array()).sum();
        send(n.inputs[0], (p.array() * (g.array() - dot)).matrix());
        break;
      }

      case Primitive::SoftmaxCrossEntropy: {
        Matrix d = n.saved;
        d(n.attrs.label, 0) -= 1.0;
        send(n.inputs[0], g(0, 0) * d);
        break;
      }

      case Primitive::SquaredError:
        send(n.inputs[0], Matrix::Constant(1, 1, 2.0 * (in(0)(0, 0) - n.attrs.scalar) * g(0, 0)));
        break;

      case Primitive::Distance: {
        const double d = n.value(0, 0);
        if (d < kTinyDistance) break;
        if (n.attrs.manifold.kind == ManifoldKind::Spd) {
          if (nodes_[n.inputs[1]].requires_grad) {
            send(n.inputs[1], g(0, 0) * spd_distance_gradient(n.saved, n.decomp, d));
          }
          if (nodes_[n.inputs[0]].requires_grad) {
            const Matrix inv_y = apply_function(sym_eig(in(1)), ScalarFn::InvSqrt);
            const EigDecomp w = sym_eig(inv_y * in(0) * inv_y);
            send(n.inputs[0], g(0, 0) * spd_distance_gradient(inv_y, w, d));
          }
        } else {
          const double c = std::clamp(in(0).col(0).dot(in(1).col(0)), -1.0, 1.0);
          const double s = (in(1).col(0) - c * in(0).col(0)).norm();
          if (s < kTinyDistance) break;
          send(n.inputs[0], (-g(0, 0) / s) * in(1));
          send(n.inputs[1], (-g(0, 0) / s) * in(0));
        }
        break;
      }

      case Primitive::FrechetMean:
        // Stop-gradient.
        break;

      case Primitive::SphereLog: {
        // v = theta(c) u / |u|, c = <p, x>, u = x - c p.
        const Vector p = n.attrs.matrix.col(0);
        const Vector x = in(0).col(0);
        const double c = std::clamp(p.dot(x), -1.0, 1.0);
        const double theta = std::atan2((x - c * p).norm(), c);
        if (theta < kTinyDistance) {
          // Near the anchor Log is the tangent projection.
          const Vector gv = g.col(0);
          send(n.inputs[0], gv - p.dot(gv) * p);
          break;
        }
        const Vector u = x - c * p;
        const double s = u.norm();
        const Vector gv = g.col(0);
        const double theta_bar = gv.dot(u) / s;
        const Vector u_bar = (theta / s) * (gv - (u.dot(gv) / (s * s)) * u);
        const double c_bar = -theta_bar / std::max(1e-300, s) - p.dot(u_bar);
        send(n.inputs[0], u_bar + c_bar * p);
        break;
      }

      case Primitive::SphereExp: {
        // y = cos(t) p + sin(t) v / t, t = |v|.
        const Vector p = n.attrs.matrix.col(0);
        const Vector v = in(0).col(0);
        const Vector gy = g.col(0);
        const double t = v.norm();
        if (t < kTinyDistance) {
          send(n.inputs[0], gy);
          break;
        }
        const double st = std::sin(t);
        const double ct = std::cos(t);
        const double vg = v.dot(gy);
        const double t_bar = -st * p.dot(gy) + ct * vg / t - st * vg / (t * t);
        send(n.inputs[0], (st / t) * gy + (t_bar / t) * v);
        break;
      }

      case Primitive::Concat: {
        Eigen::Index at = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Eigen::Index rows = in(k).rows();
          send(n.inputs[k], g.block(at, 0, rows, 1));
          at += rows;
        }
        break;
      }
    }
  }
  // Parameters the loss does not reach get an explicit zero gradient.
  for (NodeId i = 0; i <= loss; ++i) {
    const Node& n = nodes_[i];
    if (n.op == Primitive::Parameter) out.grads.try_emplace(n.param_id, Vector::Zero(n.value.size()));
  }
  if (!out.all_finite()) throw NumericalAbort("backward: non-finite parameter gradient");
  return out;
}

}  // namespace mvcnet
