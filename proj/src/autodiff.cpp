#include "probact/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace probact {

Var Tape::leaf(Tensor value) {
  values_.push_back(std::move(value));
  nodes_.push_back({});
  bound_.push_back(nullptr);
  return {static_cast<int>(values_.size()) - 1};
}

Var Tape::leaf(Parameter& p) {
  Var v = leaf(p.value);
  bound_.back() = &p;
  return v;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, GradFn grad_fn) {
  values_.push_back(std::move(value));
  bound_.push_back(nullptr);
  if (recording_) {
    Node node;
    node.inputs.reserve(inputs.size());
    for (Var v : inputs) {
      check(v);
      node.inputs.push_back(v.id);
    }
    node.grad_fn = std::move(grad_fn);
    nodes_.push_back(std::move(node));
  } else {
    nodes_.push_back({});
  }
  return {static_cast<int>(values_.size()) - 1};
}

void Tape::check(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(values_.size())) {
    throw UsageError("Var does not belong to this tape");
  }
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return values_[static_cast<std::size_t>(v.id)];
}

void Tape::backward(Var output, Tensor seed) {
  check(output);
  if (!recording_) {
    throw UsageError("backward on a non-recording tape");
  }
  if (consumed_) {
    throw UsageError("tape already consumed by a previous backward pass");
  }
  consumed_ = true;
  const auto& out_val = values_[static_cast<std::size_t>(output.id)];
  if (!seed.same_shape(out_val)) {
    throw ShapeError("backward: seed gradient shape " + shape_str(seed.shape()) +
                     " does not match output shape " +
                     shape_str(out_val.shape()));
  }
  grads_.assign(values_.size(), Tensor());
  grads_[static_cast<std::size_t>(output.id)] = std::move(seed);

  for (int id = output.id; id >= 0; --id) {
    const auto uid = static_cast<std::size_t>(id);
    if (!grads_[uid].defined()) continue;
    const Node& node = nodes_[uid];
    if (node.grad_fn) {
      std::vector<Tensor> input_grads = node.grad_fn(grads_[uid]);
      if (input_grads.size() != node.inputs.size()) {
        throw UsageError("grad_fn returned wrong number of gradients");
      }
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        if (!input_grads[k].defined()) continue;
        const auto in_id = static_cast<std::size_t>(node.inputs[k]);
        if (!input_grads[k].same_shape(values_[in_id])) {
          throw ShapeError("grad shape mismatch for input " +
                           std::to_string(k));
        }
        if (grads_[in_id].defined()) {
          grads_[in_id] = add(grads_[in_id], input_grads[k]);
        } else {
          grads_[in_id] = std::move(input_grads[k]);
        }
      }
    }
    if (bound_[uid] != nullptr && bound_[uid]->trainable) {
      bound_[uid]->grad = add(bound_[uid]->grad, grads_[uid]);
    }
  }
}

Tensor Tape::grad(Var v) const {
  check(v);
  if (!consumed_) {
    throw UsageError("grad requested before backward");
  }
  const auto& g = grads_[static_cast<std::size_t>(v.id)];
  if (g.defined()) return g;
  return Tensor::zeros(values_[static_cast<std::size_t>(v.id)].shape());
}

// --- generic ops -----------------------------------------------------------

Var t_add(Tape& tape, Var a, Var b) {
  Tensor out = add(tape.value(a), tape.value(b));
  if (!tape.recording()) return tape.record(std::move(out), {}, nullptr);
  const Shape sa = tape.value(a).shape();
  const Shape sb = tape.value(b).shape();
  return tape.record(std::move(out), {a, b}, [sa, sb](const Tensor& up) {
    return std::vector<Tensor>{reduce_to_shape(up, sa), reduce_to_shape(up, sb)};
  });
}

Var t_sub(Tape& tape, Var a, Var b) {
  Tensor out = sub(tape.value(a), tape.value(b));
  if (!tape.recording()) return tape.record(std::move(out), {}, nullptr);
  const Shape sa = tape.value(a).shape();
  const Shape sb = tape.value(b).shape();
  return tape.record(std::move(out), {a, b}, [sa, sb](const Tensor& up) {
    return std::vector<Tensor>{reduce_to_shape(up, sa),
                               reduce_to_shape(neg(up), sb)};
  });
}

Var t_mul(Tape& tape, Var a, Var b) {
  Tensor out = mul(tape.value(a), tape.value(b));
  if (!tape.recording()) return tape.record(std::move(out), {}, nullptr);
  const Tensor va = tape.value(a);
  const Tensor vb = tape.value(b);
  return tape.record(std::move(out), {a, b}, [va, vb](const Tensor& up) {
    return std::vector<Tensor>{reduce_to_shape(mul(up, vb), va.shape()),
                               reduce_to_shape(mul(up, va), vb.shape())};
  });
}

Var t_scale(Tape& tape, Var a, real s) {
  Tensor out = scale(tape.value(a), s);
  if (!tape.recording()) return tape.record(std::move(out), {}, nullptr);
  return tape.record(std::move(out), {a}, [s](const Tensor& up) {
    return std::vector<Tensor>{scale(up, s)};
  });
}

Var t_sigmoid(Tape& tape, Var a) {
  Tensor out = sigmoid(tape.value(a));
  if (!tape.recording()) return tape.record(std::move(out), {}, nullptr);
  const Tensor s = out;
  return tape.record(std::move(out), {a}, [s](const Tensor& up) {
    // d sigmoid = s(1-s)
    Tensor one_minus = add_scalar(neg(s), real(1));
    return std::vector<Tensor>{mul(up, mul(s, one_minus))};
  });
}

namespace {

Tensor transpose2(const Tensor& t) {
  const std::size_t r = t.extent(0), c = t.extent(1);
  Tensor out = Tensor::zeros({c, r});
  real* o = out.mutable_data();
  const real* p = t.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      o[j * r + i] = p[i * c + j];
    }
  }
  return out;
}

}  // namespace

Var t_matmul(Tape& tape, Var a, Var b) {
  Tensor out = matmul(tape.value(a), tape.value(b));
  if (!tape.recording()) return tape.record(std::move(out), {}, nullptr);
  const Tensor va = tape.value(a);
  const Tensor vb = tape.value(b);
  return tape.record(std::move(out), {a, b}, [va, vb](const Tensor& up) {
    return std::vector<Tensor>{matmul(up, transpose2(vb)),
                               matmul(transpose2(va), up)};
  });
}

Var t_reshape(Tape& tape, Var a, Shape shape) {
  Tensor out = tape.value(a).reshaped(shape);
  if (!tape.recording()) return tape.record(std::move(out), {}, nullptr);
  const Shape original = tape.value(a).shape();
  return tape.record(std::move(out), {a}, [original](const Tensor& up) {
    return std::vector<Tensor>{up.reshaped(original)};
  });
}

Var t_sum_all(Tape& tape, Var a) {
  Tensor out = Tensor::scalar(sum_all(tape.value(a)));
  if (!tape.recording()) return tape.record(std::move(out), {}, nullptr);
  const Shape sa = tape.value(a).shape();
  return tape.record(std::move(out), {a}, [sa](const Tensor& up) {
    return std::vector<Tensor>{Tensor::full(sa, up.item())};
  });
}

Var t_mean_all(Tape& tape, Var a) {
  const auto n = static_cast<real>(tape.value(a).numel());
  Var s = t_sum_all(tape, a);
  return t_scale(tape, s, real(1) / n);
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t n = logits.extent(0), c = logits.extent(1);
  Tensor out = Tensor::zeros({n, c});
  real* o = out.mutable_data();
  const real* p = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const real* row = p + i * c;
    real mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0;
    for (std::size_t j = 0; j < c; ++j) {
      denom += std::exp(static_cast<double>(row[j] - mx));
    }
    for (std::size_t j = 0; j < c; ++j) {
      o[i * c + j] = static_cast<real>(
          std::exp(static_cast<double>(row[j] - mx)) / denom);
    }
  }
  return out;
}

Var softmax_cross_entropy(Tape& tape, Var logits, const std::vector<int>& labels) {
  const Tensor& z = tape.value(logits);
  if (z.rank() != 2) {
    throw ShapeError("softmax_cross_entropy: logits must be rank-2");
  }
  const std::size_t n = z.extent(0), c = z.extent(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: batch/label count mismatch");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ArgumentError("softmax_cross_entropy: label out of range");
    }
  }
  const real* p = z.data();
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const real* row = p + i * c;
    real mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0;
    for (std::size_t j = 0; j < c; ++j) {
      denom += std::exp(static_cast<double>(row[j] - mx));
    }
    loss += std::log(denom) -
            static_cast<double>(row[static_cast<std::size_t>(labels[i])] - mx);
  }
  Tensor out = Tensor::scalar(static_cast<real>(loss / static_cast<double>(n)));
  if (!tape.recording()) return tape.record(std::move(out), {}, nullptr);
  const Tensor zv = z;
  return tape.record(std::move(out), {logits}, [zv, labels](const Tensor& up) {
    const std::size_t n = zv.extent(0), c = zv.extent(1);
    Tensor g = softmax_rows(zv);
    real* pg = g.mutable_data();
    const real inv_n = real(1) / static_cast<real>(n);
    const real u = up.item();
    for (std::size_t i = 0; i < n; ++i) {
      pg[i * c + static_cast<std::size_t>(labels[i])] -= real(1);
      for (std::size_t j = 0; j < c; ++j) pg[i * c + j] *= inv_n * u;
    }
    return std::vector<Tensor>{std::move(g)};
  });
}

// --- finite differences ----------------------------------------------------

FiniteDiffReport finite_diff_check(std::span<Parameter* const> params,
                                   const std::function<double(bool)>& fn,
                                   const FiniteDiffOptions& opt) {
  for (Parameter* p : params) p->zero_grad();
  const double base = fn(true);
  if (!std::isfinite(base)) {
    throw NumericError("finite_diff_check: base evaluation is non-finite");
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad.clone());

  FiniteDiffReport report;
  report.pass = true;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    const std::size_t n = p.value.numel();
    // deterministic subsample of element indices
    std::vector<std::size_t> indices;
    if (n <= opt.max_elements_per_param) {
      indices.resize(n);
      for (std::size_t i = 0; i < n; ++i) indices[i] = i;
    } else {
      for (std::size_t k = 0; k < opt.max_elements_per_param; ++k) {
        const NoiseKey key{static_cast<std::uint32_t>(pi), 0xF1D0,
                           static_cast<std::uint32_t>(k)};
        indices.push_back(rng::bits_at(key, opt.sample_seed, k) % n);
      }
      std::sort(indices.begin(), indices.end());
      indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    }
    for (std::size_t idx : indices) {
      const double a = static_cast<double>(analytic[pi].at(idx));
      double best_err = std::numeric_limits<double>::infinity();
      double best_numeric = 0;
      const real saved = p.value.at(idx);
      for (double h : opt.steps) {
        p.value.mutable_data()[idx] = static_cast<real>(saved + h);
        const double f_plus = fn(false);
        p.value.mutable_data()[idx] = static_cast<real>(saved - h);
        const double f_minus = fn(false);
        p.value.mutable_data()[idx] = saved;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
          throw NumericError("finite_diff_check: non-finite evaluation at " +
                             p.name + "[" + std::to_string(idx) + "]");
        }
        const double numeric = (f_plus - f_minus) / (2.0 * h);
        const double err = std::fabs(a - numeric) /
                           std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        if (err < best_err) {
          best_err = err;
          best_numeric = numeric;
        }
      }
      ++report.elements_checked;
      if (best_err > report.max_rel_err) {
        report.max_rel_err = best_err;
        report.worst = {p.name, idx, a, best_numeric, best_err};
      }
      if (best_err > opt.tolerance) {
        report.pass = false;
        report.failures.push_back({p.name, idx, a, best_numeric, best_err});
      }
    }
  }
  return report;
}

}  // namespace probact
