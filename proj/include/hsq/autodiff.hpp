#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hsq/matrix.hpp"

namespace hsq {

template <typename T>
class Tape;

// A value in a forward computation. Either recorded on a tape (participates
// in backward) or free (plain value, owned or aliased). Every layer in the
// library is written once against Var and runs in both modes: tests record
// tapes for gradient checks, inference runs tape-free and releases
// intermediates as soon as the last Var referencing them goes out of scope.
template <typename T>
class Var {
public:
  Var() = default;

  static Var owned(Matrix<T> m) {
    Var v;
    v.free_ = std::make_shared<Matrix<T>>(std::move(m));
    return v;
  }

  // Aliases an existing matrix without copying. The referent must outlive
  // every Var and closure that sees it; model parameters qualify.
  static Var borrowed(const Matrix<T>& m) {
    Var v;
    v.free_ = std::shared_ptr<const Matrix<T>>(std::shared_ptr<void>(), &m);
    return v;
  }

  bool taped() const noexcept { return tape_ != nullptr; }
  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

  const Matrix<T>& value() const;

  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
  std::shared_ptr<const Matrix<T>> free_;
};

template <typename T>
Var<T> constant(Matrix<T> m) {
  return Var<T>::owned(std::move(m));
}

template <typename T>
Var<T> constant_ref(const Matrix<T>& m) {
  return Var<T>::borrowed(m);
}

// Record of one forward pass. Nodes are appended in execution order, so
// walking them in reverse is a topological order of the data flow; each
// node's backward runs exactly once, after all of its consumers.
template <typename T>
class Tape {
public:
  using BackwardFn = std::function<void(Tape&, const Matrix<T>&)>;

  Var<T> leaf(Matrix<T> value) {
    nodes_.push_back(Node{std::move(value), nullptr});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> record(Matrix<T> value, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), std::move(backward)});
    return Var<T>(this, nodes_.size() - 1);
  }

  const Matrix<T>& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Accumulates into the stored gradient for a node, taking the matrix by
  // value so a sole contribution is moved rather than copied.
  void accum(std::size_t id, Matrix<T> g) {
    Matrix<T>& slot = grads_[id];
    if (slot.empty() && !g.empty()) {
      slot = std::move(g);
    } else {
      if (!slot.same_shape(g)) {
        throw ContractViolation("tape: gradient shape mismatch (" + slot.shape_str() +
                                " vs " + g.shape_str() + ")");
      }
      for (std::size_t i = 0; i < slot.size(); ++i) slot.data()[i] += g.data()[i];
    }
  }

  // Reverse sweep from a scalar loss. Gradients from any previous sweep are
  // discarded. Nodes that did not influence the loss are skipped.
  void backward(const Var<T>& loss) {
    if (!loss.taped() || loss.tape() != this) {
      throw ContractViolation("tape: backward target is not recorded on this tape");
    }
    const Matrix<T>& lv = value(loss.id());
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractViolation("tape: backward target must be 1x1, got " + lv.shape_str());
    }
    grads_.assign(nodes_.size(), Matrix<T>());
    grads_[loss.id()] = Matrix<T>(1, 1, T{1});
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (grads_[i].empty() || !nodes_[i].backward) continue;
      if (on_visit) on_visit(i);
      nodes_[i].backward(*this, grads_[i]);
    }
  }

  // Gradient of the last backward target with respect to v. Zero matrix of
  // the node's shape when nothing flowed back.
  Matrix<T> grad(const Var<T>& v) const {
    if (!v.taped() || v.tape() != this) {
      throw ContractViolation("tape: grad request for a value not on this tape");
    }
    if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
    const Matrix<T>& val = value(v.id());
    return Matrix<T>(val.rows(), val.cols());
  }

  // Test hook: observes which nodes the reverse sweep visits, in order.
  std::function<void(std::size_t)> on_visit;

private:
  struct Node {
    Matrix<T> value;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<Matrix<T>> grads_;
};

template <typename T>
const Matrix<T>& Var<T>::value() const {
  if (tape_) return tape_->value(id_);
  if (!free_) throw ContractViolation("var: reading an empty value");
  return *free_;
}

namespace detail {

// Picks the tape shared by the operands, rejecting mixed tapes. Free
// operands are compatible with everything.
template <typename T>
Tape<T>* common_tape(std::initializer_list<const Var<T>*> vars) {
  Tape<T>* t = nullptr;
  for (const Var<T>* v : vars) {
    if (!v->taped()) continue;
    if (t && t != v->tape()) {
      throw ContractViolation("var: operands recorded on different tapes");
    }
    t = v->tape();
  }
  return t;
}

template <typename T>
Var<T> emit(Tape<T>* t, Matrix<T> value, typename Tape<T>::BackwardFn backward) {
  if (!t) return Var<T>::owned(std::move(value));
  return t->record(std::move(value), std::move(backward));
}

}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = detail::common_tape<T>({&a, &b});
  Matrix<T> out = matmul(a.value(), b.value());
  return detail::emit(t, std::move(out), [a, b](Tape<T>& tp, const Matrix<T>& dc) {
    if (a.taped()) tp.accum(a.id(), matmul_nt(dc, b.value()));
    if (b.taped()) tp.accum(b.id(), matmul_tn(a.value(), dc));
  });
}

// c = a * b^T.
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = detail::common_tape<T>({&a, &b});
  Matrix<T> out = matmul_nt(a.value(), b.value());
  return detail::emit(t, std::move(out), [a, b](Tape<T>& tp, const Matrix<T>& dc) {
    if (a.taped()) tp.accum(a.id(), matmul(dc, b.value()));
    if (b.taped()) tp.accum(b.id(), matmul_tn(dc, a.value()));
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = detail::common_tape<T>({&a, &b});
  Matrix<T> out = add(a.value(), b.value());
  return detail::emit(t, std::move(out), [a, b](Tape<T>& tp, const Matrix<T>& dc) {
    if (a.taped()) tp.accum(a.id(), dc);
    if (b.taped()) tp.accum(b.id(), dc);
  });
}

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& r) {
  Tape<T>* t = detail::common_tape<T>({&a, &r});
  Matrix<T> out = add_row(a.value(), r.value());
  return detail::emit(t, std::move(out), [a, r](Tape<T>& tp, const Matrix<T>& dc) {
    if (a.taped()) tp.accum(a.id(), dc);
    if (r.taped()) tp.accum(r.id(), col_sums(dc));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tape<T>* t = detail::common_tape<T>({&a});
  Matrix<T> out = scale(a.value(), s);
  return detail::emit(t, std::move(out), [a, s](Tape<T>& tp, const Matrix<T>& dc) {
    if (a.taped()) tp.accum(a.id(), scale(dc, s));
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  Tape<T>* t = detail::common_tape<T>({&x});
  Matrix<T> out = softmax_rows(x.value());
  return detail::emit(t, std::move(out), [x](Tape<T>& tp, const Matrix<T>& dc) {
    if (!x.taped()) return;
    // Recover y; dX_i = y_i * (dY_i - <dY_i, y_i>).
    const Matrix<T> y = softmax_rows(x.value());
    Matrix<T> dx(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const T* py = y.row(i);
      const T* pd = dc.row(i);
      T dot = 0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += pd[j] * py[j];
      T* px = dx.row(i);
      for (std::size_t j = 0; j < y.cols(); ++j) px[j] = py[j] * (pd[j] - dot);
    }
    tp.accum(x.id(), std::move(dx));
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  Tape<T>* t = detail::common_tape<T>({&x, &gain, &bias});
  Matrix<T> out = layer_norm(x.value(), gain.value(), bias.value(), eps);
  return detail::emit(
      t, std::move(out), [x, gain, bias, eps](Tape<T>& tp, const Matrix<T>& dc) {
        const Matrix<T>& xv = x.value();
        const RowMoments<T> m = row_moments(xv, eps);
        const std::size_t n = xv.cols();
        const T invn = T{1} / static_cast<T>(n);
        const T* pg = gain.value().row(0);
        Matrix<T> dx(xv.rows(), n);
        Matrix<T> dgain(1, n);
        Matrix<T> dbias(1, n);
        for (std::size_t i = 0; i < xv.rows(); ++i) {
          const T* px = xv.row(i);
          const T* pd = dc.row(i);
          const T mu = m.mean[i];
          const T is = m.inv_std[i];
          T sum_dxh = 0, sum_dxh_xh = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const T xh = (px[j] - mu) * is;
            const T dxh = pd[j] * pg[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
            dgain(0, j) += pd[j] * xh;
            dbias(0, j) += pd[j];
          }
          if (x.taped()) {
            T* pdx = dx.row(i);
            for (std::size_t j = 0; j < n; ++j) {
              const T xh = (px[j] - mu) * is;
              const T dxh = pd[j] * pg[j];
              pdx[j] = is * (dxh - invn * sum_dxh - xh * invn * sum_dxh_xh);
            }
          }
        }
        if (x.taped()) tp.accum(x.id(), std::move(dx));
        if (gain.taped()) tp.accum(gain.id(), std::move(dgain));
        if (bias.taped()) tp.accum(bias.id(), std::move(dbias));
      });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tape<T>* t = detail::common_tape<T>({&x});
  Matrix<T> out = gelu(x.value());
  return detail::emit(t, std::move(out), [x](Tape<T>& tp, const Matrix<T>& dc) {
    if (!x.taped()) return;
    tp.accum(x.id(), hadamard(dc, gelu_grad(x.value())));
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t len) {
  Tape<T>* t = detail::common_tape<T>({&x});
  Matrix<T> out = slice_cols(x.value(), begin, len);
  return detail::emit(t, std::move(out),
                      [x, begin, len](Tape<T>& tp, const Matrix<T>& dc) {
                        if (!x.taped()) return;
                        Matrix<T> dx(x.value().rows(), x.value().cols());
                        for (std::size_t i = 0; i < dc.rows(); ++i) {
                          std::copy(dc.row(i), dc.row(i) + len, dx.row(i) + begin);
                        }
                        tp.accum(x.id(), std::move(dx));
                      });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
  std::vector<const Var<T>*> ptrs;
  std::vector<const Matrix<T>*> vals;
  Tape<T>* t = nullptr;
  for (const auto& p : parts) {
    if (p.taped()) {
      if (t && t != p.tape()) {
        throw ContractViolation("var: operands recorded on different tapes");
      }
      t = p.tape();
    }
    vals.push_back(&p.value());
  }
  Matrix<T> out = concat_cols(vals);
  return detail::emit(t, std::move(out), [parts](Tape<T>& tp, const Matrix<T>& dc) {
    std::size_t at = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.value().cols();
      if (p.taped()) tp.accum(p.id(), slice_cols(dc, at, w));
      at += w;
    }
  });
}

// Indices are shared with the backward closure; callers must not mutate them
// after recording.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::shared_ptr<const std::vector<std::size_t>> idx) {
  Tape<T>* t = detail::common_tape<T>({&x});
  Matrix<T> out = gather_rows(x.value(), *idx);
  return detail::emit(t, std::move(out), [x, idx](Tape<T>& tp, const Matrix<T>& dc) {
    if (!x.taped()) return;
    tp.accum(x.id(), scatter_rows(dc, *idx, x.value().rows()));
  });
}

template <typename T>
Var<T> scatter_rows(const Var<T>& x, std::shared_ptr<const std::vector<std::size_t>> idx,
                    std::size_t total_rows) {
  Tape<T>* t = detail::common_tape<T>({&x});
  Matrix<T> out = scatter_rows(x.value(), *idx, total_rows);
  return detail::emit(t, std::move(out), [x, idx](Tape<T>& tp, const Matrix<T>& dc) {
    if (!x.taped()) return;
    tp.accum(x.id(), gather_rows(dc, *idx));
  });
}

template <typename T>
Var<T> scale_rows(const Var<T>& x, const Var<T>& w) {
  Tape<T>* t = detail::common_tape<T>({&x, &w});
  Matrix<T> out = scale_rows(x.value(), w.value());
  return detail::emit(t, std::move(out), [x, w](Tape<T>& tp, const Matrix<T>& dc) {
    if (x.taped()) tp.accum(x.id(), scale_rows(dc, w.value()));
    if (w.taped()) {
      const Matrix<T>& xv = x.value();
      Matrix<T> dw(xv.rows(), 1);
      for (std::size_t i = 0; i < xv.rows(); ++i) {
        T s = 0;
        for (std::size_t j = 0; j < xv.cols(); ++j) s += dc(i, j) * xv(i, j);
        dw(i, 0) = s;
      }
      tp.accum(w.id(), std::move(dw));
    }
  });
}

// Reads entries (row, col) of x into a rows x cols output, row-major over the
// index list. Duplicate positions accumulate in backward.
template <typename T>
Var<T> gather_entries(const Var<T>& x,
                      std::shared_ptr<const std::vector<std::pair<std::size_t, std::size_t>>> idx,
                      std::size_t rows, std::size_t cols) {
  if (idx->size() != rows * cols) {
    throw ContractViolation("gather_entries: index count does not match output shape");
  }
  Tape<T>* t = detail::common_tape<T>({&x});
  const Matrix<T>& xv = x.value();
  Matrix<T> out(rows, cols);
  for (std::size_t i = 0; i < idx->size(); ++i) {
    const auto [r, c] = (*idx)[i];
    if (r >= xv.rows() || c >= xv.cols()) {
      throw ContractViolation("gather_entries: index out of range for " + xv.shape_str());
    }
    out.data()[i] = xv(r, c);
  }
  return detail::emit(t, std::move(out), [x, idx](Tape<T>& tp, const Matrix<T>& dc) {
    if (!x.taped()) return;
    Matrix<T> dx(x.value().rows(), x.value().cols());
    for (std::size_t i = 0; i < idx->size(); ++i) {
      const auto [r, c] = (*idx)[i];
      dx(r, c) += dc.data()[i];
    }
    tp.accum(x.id(), std::move(dx));
  });
}

template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  Tape<T>* t = detail::common_tape<T>({&x});
  Matrix<T> out = mean_rows(x.value());
  return detail::emit(t, std::move(out), [x](Tape<T>& tp, const Matrix<T>& dc) {
    if (!x.taped()) return;
    const std::size_t m = x.value().rows();
    const T inv = T{1} / static_cast<T>(m);
    Matrix<T> dx(m, x.value().cols());
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < dx.cols(); ++j) dx(i, j) = dc(0, j) * inv;
    }
    tp.accum(x.id(), std::move(dx));
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  Tape<T>* t = detail::common_tape<T>({&x});
  Matrix<T> out(1, 1, sum_all(x.value()));
  return detail::emit(t, std::move(out), [x](Tape<T>& tp, const Matrix<T>& dc) {
    if (!x.taped()) return;
    tp.accum(x.id(), Matrix<T>(x.value().rows(), x.value().cols(), dc(0, 0)));
  });
}

// Binds named parameters to Vars. In recording mode each name becomes a tape
// leaf exactly once and is remembered so tests can ask for its gradient; in
// eval mode parameters are aliased without copies.
template <typename T>
class Binder {
public:
  Binder() = default;
  explicit Binder(Tape<T>& tape) : tape_(&tape) {}

  bool recording() const noexcept { return tape_ != nullptr; }
  Tape<T>* tape() const noexcept { return tape_; }

  Var<T> param(const std::string& name, const Matrix<T>& m) {
    if (!tape_) return Var<T>::borrowed(m);
    auto it = bound_.find(name);
    if (it != bound_.end()) {
      if (sources_.at(name) != &m) {
        throw ContractViolation("binder: name '" + name +
                                "' bound to two different parameters");
      }
      return it->second;
    }
    Var<T> v = tape_->leaf(m);
    bound_.emplace(name, v);
    sources_.emplace(name, &m);
    return v;
  }

  const std::map<std::string, Var<T>>& bound() const noexcept { return bound_; }

private:
  Tape<T>* tape_ = nullptr;
  std::map<std::string, Var<T>> bound_;
  std::map<std::string, const Matrix<T>*> sources_;
};

}  // namespace hsq
