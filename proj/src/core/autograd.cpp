// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "eihi/error.hpp"

namespace eihi {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

CMapMat as_mat(const Tensor& t) {
  return CMapMat(t.data(), static_cast<Eigen::Index>(t.dim(0)),
                 static_cast<Eigen::Index>(t.dim(1)));
}
MapMat as_mat(Tensor& t) {
  return MapMat(t.data(), static_cast<Eigen::Index>(t.dim(0)),
                static_cast<Eigen::Index>(t.dim(1)));
}
CMapMat as_mat(const double* p, std::size_t r, std::size_t c) {
  return CMapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MapMat as_mat(double* p, std::size_t r, std::size_t c) {
  return MapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_string(t.shape()));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  auto d = dst->values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), true, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite())
    throw NumericError(std::string("non-finite value produced by ") + op);
  Node node;
  node.value = std::move(value);
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw ContractError(std::string(op) + ": input from another tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss from another tape");
  if (loss.value().size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(loss.shape()));
  grads_.assign(nodes_.size(), Tensor());
  std::vector<bool> live(nodes_.size(), false);
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].requires_grad) grads_[i] = Tensor(nodes_[i].value.shape(), 0.0);
  if (!nodes_[loss.id()].requires_grad) return;
  grads_[loss.id()].fill(1.0);
  live[loss.id()] = true;

  std::vector<Tensor*> in_grads;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!live[i] || !node.backward) continue;
    in_grads.clear();
    for (auto in : node.inputs) {
      if (nodes_[in].requires_grad) {
        in_grads.push_back(&grads_[in]);
        live[in] = true;
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(grads_[i], in_grads);
  }
}

const Tensor& Tape::grad(Var v) const {
  if (!nodes_.at(v.id()).requires_grad) throw ContractError("grad() of a constant");
  if (v.id() >= grads_.size()) throw ContractError("grad() before backward()");
  return grads_[v.id()];
}

// ---------------------------------------------------------------------------
// elementwise

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  accumulate(&out, b.value());
  return a.tape().record("add", std::move(out), {a, b},
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           accumulate(gi[0], g);
                           accumulate(gi[1], g);
                         });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record("sub", std::move(out), {a, b},
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           accumulate(gi[0], g);
                           if (gi[1])
                             for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
                         });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  Tape* tape = &a.tape();
  const auto ia = a.id(), ib = b.id();
  return tape->record("mul", std::move(out), {a, b},
                      [tape, ia, ib](const Tensor& g, std::span<Tensor* const> gi) {
                        const Tensor& va = tape->value(ia);
                        const Tensor& vb = tape->value(ib);
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          if (gi[0]) (*gi[0])[i] += g[i] * vb[i];
                          if (gi[1]) (*gi[1])[i] += g[i] * va[i];
                        }
                      });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  return a.tape().record("scale", std::move(out), {a},
                         [factor](const Tensor& g, std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += factor * g[i];
                         });
}

Var square(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= v;
  Tape* tape = &a.tape();
  const auto ia = a.id();
  return tape->record("square", std::move(out), {a},
                      [tape, ia](const Tensor& g, std::span<Tensor* const> gi) {
                        const Tensor& va = tape->value(ia);
                        for (std::size_t i = 0; i < g.size(); ++i)
                          (*gi[0])[i] += 2.0 * va[i] * g[i];
                      });
}

Var log(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) {
    if (v <= 0.0) throw NumericError("log of non-positive value");
    v = std::log(v);
  }
  Tape* tape = &a.tape();
  const auto ia = a.id();
  return tape->record("log", std::move(out), {a},
                      [tape, ia](const Tensor& g, std::span<Tensor* const> gi) {
                        const Tensor& va = tape->value(ia);
                        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] / va[i];
                      });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  Tape* tape = &a.tape();
  const auto ia = a.id();
  return tape->record("relu", std::move(out), {a},
                      [tape, ia](const Tensor& g, std::span<Tensor* const> gi) {
                        const Tensor& va = tape->value(ia);
                        for (std::size_t i = 0; i < g.size(); ++i)
                          if (va[i] > 0.0) (*gi[0])[i] += g[i];
                      });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().record("sum", Tensor::scalar(s), {a},
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           for (auto& v : gi[0]->values()) v += g[0];
                         });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// ---------------------------------------------------------------------------
// matrices

Var matmul(Var a, Var b, bool transpose_a, bool transpose_b) {
  require_same_tape(a, b);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  require_rank("matmul", va, 2);
  require_rank("matmul", vb, 2);
  const std::size_t m = transpose_a ? va.dim(1) : va.dim(0);
  const std::size_t k = transpose_a ? va.dim(0) : va.dim(1);
  const std::size_t kb = transpose_b ? vb.dim(1) : vb.dim(0);
  const std::size_t n = transpose_b ? vb.dim(0) : vb.dim(1);
  if (k != kb)
    throw ShapeError("matmul: inner extents differ, " + shape_string(va.shape()) + " and " +
                     shape_string(vb.shape()));
  Tensor out({m, n});
  {
    auto A = as_mat(va);
    auto B = as_mat(vb);
    auto C = as_mat(out);
    if (transpose_a && transpose_b) C.noalias() = A.transpose() * B.transpose();
    else if (transpose_a) C.noalias() = A.transpose() * B;
    else if (transpose_b) C.noalias() = A * B.transpose();
    else C.noalias() = A * B;
  }
  Tape* tape = &a.tape();
  const auto ia = a.id(), ib = b.id();
  return tape->record(
      "matmul", std::move(out), {a, b},
      [tape, ia, ib, transpose_a, transpose_b](const Tensor& g, std::span<Tensor* const> gi) {
        auto A = as_mat(tape->value(ia));
        auto B = as_mat(tape->value(ib));
        auto G = as_mat(g);
        // C = op(A) op(B); dop(A) = G op(B)^T, dop(B) = op(A)^T G
        if (gi[0]) {
          auto GA = as_mat(*gi[0]);
          if (!transpose_a && !transpose_b) GA.noalias() += G * B.transpose();
          else if (!transpose_a && transpose_b) GA.noalias() += G * B;
          else if (transpose_a && !transpose_b) GA.noalias() += B * G.transpose();
          else GA.noalias() += B.transpose() * G.transpose();
        }
        if (gi[1]) {
          auto GB = as_mat(*gi[1]);
          if (!transpose_a && !transpose_b) GB.noalias() += A.transpose() * G;
          else if (!transpose_a && transpose_b) GB.noalias() += G.transpose() * A;
          else if (transpose_a && !transpose_b) GB.noalias() += A * G;
          else GB.noalias() += G.transpose() * A.transpose();
        }
      });
}

Var dense(Var x, Var weight, Var bias) {
  require_same_tape(x, weight);
  require_same_tape(x, bias);
  const Tensor& vx = x.value();
  const Tensor& vw = weight.value();
  const Tensor& vb = bias.value();
  require_rank("dense", vx, 2);
  require_rank("dense", vw, 2);
  require_rank("dense", vb, 1);
  if (vw.dim(1) != vx.dim(1) || vb.dim(0) != vw.dim(0))
    throw ShapeError("dense: input " + shape_string(vx.shape()) + ", weight " +
                     shape_string(vw.shape()) + ", bias " + shape_string(vb.shape()));
  Tensor out({vx.dim(0), vw.dim(0)});
  {
    auto Y = as_mat(out);
    Y.noalias() = as_mat(vx) * as_mat(vw).transpose();
    Y.rowwise() += CMapVec(vb.data(), static_cast<Eigen::Index>(vb.size())).transpose();
  }
  Tape* tape = &x.tape();
  const auto ix = x.id(), iw = weight.id();
  return tape->record("dense", std::move(out), {x, weight, bias},
                      [tape, ix, iw](const Tensor& g, std::span<Tensor* const> gi) {
                        auto G = as_mat(g);
                        if (gi[0]) as_mat(*gi[0]).noalias() += G * as_mat(tape->value(iw));
                        if (gi[1])
                          as_mat(*gi[1]).noalias() += G.transpose() * as_mat(tape->value(ix));
                        if (gi[2])
                          MapVec(gi[2]->data(), static_cast<Eigen::Index>(gi[2]->size())) +=
                              G.colwise().sum().transpose();
                      });
}

Var center_columns(Var x) {
  const Tensor& vx = x.value();
  require_rank("center_columns", vx, 2);
  Tensor out = vx;
  {
    auto X = as_mat(out);
    const Eigen::RowVectorXd mu = X.colwise().mean();
    X.rowwise() -= mu;
  }
  return x.tape().record("center_columns", std::move(out), {x},
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           auto G = as_mat(g);
                           const Eigen::RowVectorXd mu = G.colwise().mean();
                           auto GX = as_mat(*gi[0]);
                           GX += G;
                           GX.rowwise() -= mu;
                         });
}

Var zero_diagonal(Var m) {
  const Tensor& vm = m.value();
  require_rank("zero_diagonal", vm, 2);
  if (vm.dim(0) != vm.dim(1))
    throw ShapeError("zero_diagonal: square matrix required, got " + shape_string(vm.shape()));
  Tensor out = vm;
  for (std::size_t i = 0; i < vm.dim(0); ++i) out.at(i, i) = 0.0;
  return m.tape().record("zero_diagonal", std::move(out), {m},
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           const std::size_t d = g.dim(0);
                           for (std::size_t r = 0; r < d; ++r)
                             for (std::size_t c = 0; c < d; ++c)
                               if (r != c) gi[0]->at(r, c) += g.at(r, c);
                         });
}

Var l2_normalize_rows(Var x) {
  const Tensor& vx = x.value();
  require_rank("l2_normalize_rows", vx, 2);
  const std::size_t n = vx.dim(0), d = vx.dim(1);
  Tensor out = vx;
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += vx.at(i, j) * vx.at(i, j);
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0)
      throw NumericError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) /= norms[i];
  }
  Tape* tape = &x.tape();
  const auto self = tape->size();  // id this node will receive
  return tape->record(
      "l2_normalize_rows", std::move(out), {x},
      [tape, self, norms = std::move(norms)](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& y = tape->value(self);
        const std::size_t n = y.dim(0), d = y.dim(1);
        // dx = (g - y (y . g)) / |x|
        for (std::size_t i = 0; i < n; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += y.at(i, j) * g.at(i, j);
          for (std::size_t j = 0; j < d; ++j)
            gi[0]->at(i, j) += (g.at(i, j) - y.at(i, j) * dot) / norms[i];
        }
      });
}

Var row_dot(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  require_rank("row_dot", va, 2);
  require_same_shape("row_dot", va, vb);
  const std::size_t n = va.dim(0), d = va.dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += va.at(i, j) * vb.at(i, j);
    out[i] = s;
  }
  Tape* tape = &a.tape();
  const auto ia = a.id(), ib = b.id();
  return tape->record("row_dot", std::move(out), {a, b},
                      [tape, ia, ib](const Tensor& g, std::span<Tensor* const> gi) {
                        const Tensor& va = tape->value(ia);
                        const Tensor& vb = tape->value(ib);
                        const std::size_t n = va.dim(0), d = va.dim(1);
                        for (std::size_t i = 0; i < n; ++i)
                          for (std::size_t j = 0; j < d; ++j) {
                            if (gi[0]) gi[0]->at(i, j) += g[i] * vb.at(i, j);
                            if (gi[1]) gi[1]->at(i, j) += g[i] * va.at(i, j);
                          }
                      });
}

Var stack_columns(std::span<const Var> columns) {
  if (columns.empty()) throw ContractError("stack_columns of zero columns");
  const std::size_t n = columns[0].value().size();
  const std::size_t k = columns.size();
  Tensor out({n, k});
  std::vector<Var> inputs(columns.begin(), columns.end());
  for (std::size_t c = 0; c < k; ++c) {
    require_same_tape(columns[0], columns[c]);
    const Tensor& v = columns[c].value();
    require_rank("stack_columns", v, 1);
    if (v.size() != n) throw ShapeError("stack_columns: column lengths differ");
    for (std::size_t i = 0; i < n; ++i) out.at(i, c) = v[i];
  }
  return columns[0].tape().record("stack_columns", std::move(out), std::move(inputs),
                                  [](const Tensor& g, std::span<Tensor* const> gi) {
                                    const std::size_t n = g.dim(0), k = g.dim(1);
                                    for (std::size_t c = 0; c < k; ++c)
                                      if (gi[c])
                                        for (std::size_t i = 0; i < n; ++i)
                                          (*gi[c])[i] += g.at(i, c);
                                  });
}

Var concat_rows(std::span<const Var> blocks) {
  if (blocks.empty()) throw ContractError("concat_rows of zero blocks");
  const std::size_t d = blocks[0].value().rank() == 2 ? blocks[0].value().dim(1) : 0;
  std::size_t rows = 0;
  for (const auto& b : blocks) {
    require_same_tape(blocks[0], b);
    require_rank("concat_rows", b.value(), 2);
    if (b.value().dim(1) != d) throw ShapeError("concat_rows: column counts differ");
    rows += b.value().dim(0);
  }
  std::vector<double> v;
  v.reserve(rows * d);
  std::vector<std::size_t> offsets;
  for (const auto& b : blocks) {
    offsets.push_back(v.size());
    v.insert(v.end(), b.value().values().begin(), b.value().values().end());
  }
  std::vector<Var> inputs(blocks.begin(), blocks.end());
  return blocks[0].tape().record(
      "concat_rows", Tensor({rows, d}, std::move(v)), std::move(inputs),
      [offsets = std::move(offsets)](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t b = 0; b < gi.size(); ++b) {
          if (!gi[b]) continue;
          for (std::size_t i = 0; i < gi[b]->size(); ++i) (*gi[b])[i] += g[offsets[b] + i];
        }
      });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& vx = x.value();
  require_rank("slice_rows", vx, 2);
  if (begin >= end || end > vx.dim(0))
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + std::to_string(vx.dim(0)) + " rows");
  const std::size_t d = vx.dim(1);
  return x.tape().record("slice_rows", vx.slice_rows(begin, end), {x},
                         [begin, d](const Tensor& g, std::span<Tensor* const> gi) {
                           if (!gi[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[begin * d + i] += g[i];
                         });
}

Var select_columns(Var x, std::span<const std::size_t> columns) {
  const Tensor& vx = x.value();
  require_rank("select_columns", vx, 2);
  if (columns.empty()) throw ContractError("select_columns: no columns selected");
  const std::size_t n = vx.dim(0), d = vx.dim(1), k = columns.size();
  for (auto c : columns)
    if (c >= d) throw ShapeError("select_columns: column " + std::to_string(c) + " out of range");
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = vx.at(i, columns[j]);
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  return x.tape().record("select_columns", std::move(out), {x},
                         [cols = std::move(cols)](const Tensor& g, std::span<Tensor* const> gi) {
                           const std::size_t n = g.dim(0), k = g.dim(1);
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < k; ++j)
                               gi[0]->at(i, cols[j]) += g.at(i, j);
                         });
}

Var select_column(Var x, std::size_t column) {
  const Tensor& vx = x.value();
  require_rank("select_column", vx, 2);
  if (column >= vx.dim(1)) throw ShapeError("select_column: column out of range");
  const std::size_t n = vx.dim(0);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = vx.at(i, column);
  return x.tape().record("select_column", std::move(out), {x},
                         [column](const Tensor& g, std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gi[0]->at(i, column) += g[i];
                         });
}

Var log_softmax_rows(Var x) {
  const Tensor& vx = x.value();
  require_rank("log_softmax_rows", vx, 2);
  const std::size_t n = vx.dim(0), k = vx.dim(1);
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, vx.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(vx.at(i, j) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = vx.at(i, j) - lse;
  }
  Tape* tape = &x.tape();
  const auto self = tape->size();
  return tape->record("log_softmax_rows", std::move(out), {x},
                      [tape, self](const Tensor& g, std::span<Tensor* const> gi) {
                        const Tensor& y = tape->value(self);
                        const std::size_t n = y.dim(0), k = y.dim(1);
                        for (std::size_t i = 0; i < n; ++i) {
                          double gs = 0.0;
                          for (std::size_t j = 0; j < k; ++j) gs += g.at(i, j);
                          for (std::size_t j = 0; j < k; ++j)
                            gi[0]->at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * gs;
                        }
                      });
}

Var pick(Var x, std::size_t row, std::size_t column) {
  const Tensor& vx = x.value();
  require_rank("pick", vx, 2);
  if (row >= vx.dim(0) || column >= vx.dim(1)) throw ShapeError("pick: index out of range");
  return x.tape().record("pick", Tensor::scalar(vx.at(row, column)), {x},
                         [row, column](const Tensor& g, std::span<Tensor* const> gi) {
                           gi[0]->at(row, column) += g[0];
                         });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& vx = logits.value();
  require_rank("softmax_cross_entropy", vx, 2);
  const std::size_t n = vx.dim(0), k = vx.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_cross_entropy: label count mismatch");
  Tensor probs({n, k});
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw ContractError("softmax_cross_entropy: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, vx.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(vx.at(i, j) - mx);
    for (std::size_t j = 0; j < k; ++j) probs.at(i, j) = std::exp(vx.at(i, j) - mx) / s;
    loss -= vx.at(i, static_cast<std::size_t>(y)) - mx - std::log(s);
  }
  loss /= static_cast<double>(n);
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.tape().record(
      "softmax_cross_entropy", Tensor::scalar(loss), {logits},
      [probs = std::move(probs), ys = std::move(ys)](const Tensor& g,
                                                     std::span<Tensor* const> gi) {
        const std::size_t n = probs.dim(0), k = probs.dim(1);
        const double w = g[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j)
            gi[0]->at(i, j) +=
                w * (probs.at(i, j) - (static_cast<int>(j) == ys[i] ? 1.0 : 0.0));
      });
}

// ---------------------------------------------------------------------------
// images

namespace {

struct ConvGeom {
  std::size_t n, c, h, w, oc, k, stride, pad, oh, ow;
  std::size_t patch() const { return c * k * k; }
  std::size_t out_pixels() const { return oh * ow; }
};

void im2col(const double* img, const ConvGeom& g, double* cols) {
  const std::size_t ohw = g.out_pixels();
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((ch * g.k + ky) * g.k + kx) * ohw;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.ow + ox] =
                inside ? img[(ch * g.h + static_cast<std::size_t>(iy)) * g.w +
                             static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, const ConvGeom& g, double* img) {
  const std::size_t ohw = g.out_pixels();
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((ch * g.k + ky) * g.k + kx) * ohw;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            img[(ch * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  require_same_tape(x, weight);
  require_same_tape(x, bias);
  const Tensor& vx = x.value();
  const Tensor& vw = weight.value();
  const Tensor& vb = bias.value();
  require_rank("conv2d input", vx, 4);
  require_rank("conv2d weight", vw, 4);
  require_rank("conv2d bias", vb, 1);
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  if (vw.dim(1) != vx.dim(1) || vw.dim(2) != vw.dim(3) || vb.dim(0) != vw.dim(0))
    throw ShapeError("conv2d: input " + shape_string(vx.shape()) + ", weight " +
                     shape_string(vw.shape()) + ", bias " + shape_string(vb.shape()));
  ConvGeom g{vx.dim(0), vx.dim(1), vx.dim(2), vx.dim(3), vw.dim(0), vw.dim(2), stride, pad, 0, 0};
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k)
    throw ShapeError("conv2d: kernel " + std::to_string(g.k) + " larger than padded input " +
                     shape_string(vx.shape()));
  g.oh = (g.h + 2 * pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * pad - g.k) / stride + 1;

  Tensor out({g.n, g.oc, g.oh, g.ow});
  std::vector<double> cols(g.patch() * g.out_pixels());
  const auto W = as_mat(vw.data(), g.oc, g.patch());
  const CMapVec b(vb.data(), static_cast<Eigen::Index>(g.oc));
  const std::size_t in_stride = g.c * g.h * g.w;
  const std::size_t out_stride = g.oc * g.out_pixels();
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(vx.data() + s * in_stride, g, cols.data());
    auto Y = as_mat(out.data() + s * out_stride, g.oc, g.out_pixels());
    Y.noalias() = W * as_mat(cols.data(), g.patch(), g.out_pixels());
    Y.colwise() += b;
  }

  Tape* tape = &x.tape();
  const auto ix = x.id(), iw = weight.id();
  return tape->record(
      "conv2d", std::move(out), {x, weight, bias},
      [tape, ix, iw, g](const Tensor& gout, std::span<Tensor* const> gi) {
        const Tensor& vx = tape->value(ix);
        const auto W = as_mat(tape->value(iw).data(), g.oc, g.patch());
        const std::size_t in_stride = g.c * g.h * g.w;
        const std::size_t out_stride = g.oc * g.out_pixels();
        std::vector<double> cols(g.patch() * g.out_pixels());
        std::vector<double> dcols(gi[0] ? cols.size() : 0);
        for (std::size_t s = 0; s < g.n; ++s) {
          const auto G = as_mat(gout.data() + s * out_stride, g.oc, g.out_pixels());
          if (gi[1]) {
            im2col(vx.data() + s * in_stride, g, cols.data());
            as_mat(gi[1]->data(), g.oc, g.patch()).noalias() +=
                G * as_mat(cols.data(), g.patch(), g.out_pixels()).transpose();
          }
          if (gi[2])
            MapVec(gi[2]->data(), static_cast<Eigen::Index>(g.oc)) += G.rowwise().sum();
          if (gi[0]) {
            as_mat(dcols.data(), g.patch(), g.out_pixels()).noalias() = W.transpose() * G;
            col2im_add(dcols.data(), g, gi[0]->data() + s * in_stride);
          }
        }
      });
}

Var max_pool2d(Var x, std::size_t size) {
  const Tensor& vx = x.value();
  require_rank("max_pool2d", vx, 4);
  if (size == 0 || vx.dim(2) < size || vx.dim(3) < size)
    throw ShapeError("max_pool2d: window " + std::to_string(size) + " does not fit " +
                     shape_string(vx.shape()));
  const std::size_t n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
  const std::size_t oh = h / size, ow = w / size;
  Tensor out({n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* plane = vx.data() + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * size) * w + ox * size;
        for (std::size_t dy = 0; dy < size; ++dy)
          for (std::size_t dx = 0; dx < size; ++dx) {
            const std::size_t idx = (oy * size + dy) * w + ox * size + dx;
            if (plane[idx] > plane[best]) best = idx;
          }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = plane[best];
        argmax[o] = p * h * w + best;
      }
  }
  return x.tape().record("max_pool2d", std::move(out), {x},
                         [argmax = std::move(argmax)](const Tensor& g,
                                                      std::span<Tensor* const> gi) {
                           for (std::size_t o = 0; o < g.size(); ++o) (*gi[0])[argmax[o]] += g[o];
                         });
}

Var avg_pool2d(Var x, std::size_t size) {
  const Tensor& vx = x.value();
  require_rank("avg_pool2d", vx, 4);
  if (size == 0 || vx.dim(2) < size || vx.dim(3) < size)
    throw ShapeError("avg_pool2d: window " + std::to_string(size) + " does not fit " +
                     shape_string(vx.shape()));
  const std::size_t n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
  const std::size_t oh = h / size, ow = w / size;
  const double inv = 1.0 / static_cast<double>(size * size);
  Tensor out({n, c, oh, ow});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < size; ++dy)
          for (std::size_t dx = 0; dx < size; ++dx)
            s += vx[(p * h + oy * size + dy) * w + ox * size + dx];
        out[(p * oh + oy) * ow + ox] = s * inv;
      }
  return x.tape().record("avg_pool2d", std::move(out), {x},
                         [size, h, w, inv](const Tensor& g, std::span<Tensor* const> gi) {
                           const std::size_t planes = g.dim(0) * g.dim(1);
                           const std::size_t oh = g.dim(2), ow = g.dim(3);
                           for (std::size_t p = 0; p < planes; ++p)
                             for (std::size_t oy = 0; oy < oh; ++oy)
                               for (std::size_t ox = 0; ox < ow; ++ox) {
                                 const double v = g[(p * oh + oy) * ow + ox] * inv;
                                 for (std::size_t dy = 0; dy < size; ++dy)
                                   for (std::size_t dx = 0; dx < size; ++dx)
                                     (*gi[0])[(p * h + oy * size + dy) * w + ox * size + dx] += v;
                               }
                         });
}

Var global_mean(Var x) {
  const Tensor& vx = x.value();
  require_rank("global_mean", vx, 4);
  const std::size_t n = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
  Tensor out({n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += vx[p * hw + i];
    out[p] = s / static_cast<double>(hw);
  }
  return x.tape().record("global_mean", std::move(out), {x},
                         [hw](const Tensor& g, std::span<Tensor* const> gi) {
                           const double inv = 1.0 / static_cast<double>(hw);
                           for (std::size_t p = 0; p < g.size(); ++p)
                             for (std::size_t i = 0; i < hw; ++i) (*gi[0])[p * hw + i] += g[p] * inv;
                         });
}

Var flatten(Var x) {
  const Tensor& vx = x.value();
  if (vx.rank() < 2) throw ShapeError("flatten: need a leading batch axis");
  const std::size_t n = vx.dim(0);
  Tensor out = vx.reshaped({n, vx.size() / n});
  return x.tape().record("flatten", std::move(out), {x},
                         [](const Tensor& g, std::span<Tensor* const> gi) { accumulate(gi[0], g); });
}

}  // namespace eihi
