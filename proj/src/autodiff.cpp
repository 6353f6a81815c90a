#include "timnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

namespace timnet::diff {

Tensor& Node::ensure_grad() {
  if (!grad_ready) {
    grad = Tensor(value.shape());
    grad_ready = true;
  }
  return grad;
}

namespace detail {

void check_finite(const Tensor& t, const char* op_name) {
  for (double v : t.flat()) {
    if (!std::isfinite(v))
      throw RuntimeFailure(std::string("non-finite value produced by ") + op_name);
  }
}

DiffValue make_node(Tensor value, std::vector<DiffValue> parents,
                    std::function<void(Node&)> backprop, const char* op_name) {
  check_finite(value, op_name);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (auto& p : parents) {
    if (p.requires_grad()) node->requires_grad = true;
    node->parents.push_back(p.shared());
  }
  if (node->requires_grad) node->backprop = std::move(backprop);
  return DiffValue(std::move(node));
}

}  // namespace detail

using detail::make_node;

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

// Accumulate src into the parent's gradient if it participates in the sweep.
bool wants_grad(const std::shared_ptr<Node>& p) { return p->requires_grad; }

}  // namespace

DiffValue constant(Tensor v) {
  auto node = std::make_shared<Node>();
  node->value = std::move(v);
  return DiffValue(std::move(node));
}

DiffValue parameter(Tensor v, std::string name) {
  auto node = std::make_shared<Node>();
  node->value = std::move(v);
  node->requires_grad = true;
  node->name = std::move(name);
  node->ensure_grad();
  return DiffValue(std::move(node));
}

BatchNormState make_batch_norm(std::size_t channels, const std::string& name_prefix) {
  BatchNormState s;
  s.gamma = parameter(Tensor({channels}, 1.0), name_prefix + ".gamma");
  s.beta = parameter(Tensor({channels}, 0.0), name_prefix + ".beta");
  s.running_mean = Tensor({channels}, 0.0);
  s.running_var = Tensor({channels}, 1.0);
  return s;
}

DiffValue add(const DiffValue& a, const DiffValue& b) {
  require(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor out(a.value().shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Tensor& g = self.grad;
    for (int s = 0; s < 2; ++s) {
      auto& p = self.parents[s];
      if (!wants_grad(p)) continue;
      Tensor& pg = p->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
    }
  }, "add");
}

DiffValue mul(const DiffValue& a, const DiffValue& b) {
  require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor out(a.value().shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Tensor& g = self.grad;
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(pa)) {
      Tensor& ga = pa->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * pb->value[i];
    }
    if (wants_grad(pb)) {
      Tensor& gb = pb->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * pa->value[i];
    }
  }, "mul");
}

DiffValue relu(const DiffValue& x) {
  Tensor out(x.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, x.value()[i]);
  return make_node(std::move(out), {x}, [](Node& self) {
    auto& p = self.parents[0];
    if (!wants_grad(p)) return;
    Tensor& pg = p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      if (p->value[i] > 0.0) pg[i] += self.grad[i];
    }
  }, "relu");
}

DiffValue sigmoid(const DiffValue& x) {
  Tensor out(x.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = x.value()[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return make_node(std::move(out), {x}, [](Node& self) {
    auto& p = self.parents[0];
    if (!wants_grad(p)) return;
    Tensor& pg = p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      const double y = self.value[i];
      pg[i] += self.grad[i] * y * (1.0 - y);
    }
  }, "sigmoid");
}

DiffValue softmax(const DiffValue& x) {
  require(x.value().rank() >= 1, "softmax: rank must be >= 1");
  const std::size_t k = x.value().dim(x.value().rank() - 1);
  const std::size_t outer = x.value().numel() / k;
  Tensor out(x.value().shape());
  for (std::size_t r = 0; r < outer; ++r) {
    const double* in = x.value().data() + r * k;
    double* o = out.data() + r * k;
    double mx = in[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, in[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      o[j] = std::exp(in[j] - mx);
      denom += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] /= denom;
  }
  return make_node(std::move(out), {x}, [k, outer](Node& self) {
    auto& p = self.parents[0];
    if (!wants_grad(p)) return;
    Tensor& pg = p->ensure_grad();
    for (std::size_t r = 0; r < outer; ++r) {
      const double* y = self.value.data() + r * k;
      const double* g = self.grad.data() + r * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < k; ++j) pg[r * k + j] += y[j] * (g[j] - dot);
    }
  }, "softmax");
}

DiffValue dilated_causal_conv1d(const DiffValue& x, const DiffValue& w, const DiffValue& bias,
                                std::size_t dilation) {
  require(x.value().rank() == 3, "conv: input must be [B,T,Cin]");
  require(w.value().rank() == 3, "conv: weights must be [k,Cin,Cout]");
  require(bias.value().rank() == 1, "conv: bias must be [Cout]");
  require(dilation >= 1, "conv: dilation must be >= 1");
  const std::size_t batch = x.value().dim(0), t_len = x.value().dim(1), c_in = x.value().dim(2);
  const std::size_t k = w.value().dim(0), c_out = w.value().dim(2);
  require(w.value().dim(1) == c_in, "conv: weight Cin does not match input channels");
  require(bias.value().dim(0) == c_out, "conv: bias length does not match Cout");
  require(k >= 1, "conv: kernel size must be >= 1");

  Tensor out({batch, t_len, c_out});
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < t_len; ++t) {
      double* yrow = out.data() + (b * t_len + t) * c_out;
      for (std::size_t o = 0; o < c_out; ++o) yrow[o] = bv[o];
      for (std::size_t i = 0; i < k; ++i) {
        const std::ptrdiff_t tau = static_cast<std::ptrdiff_t>(t) -
                                   static_cast<std::ptrdiff_t>((k - 1 - i) * dilation);
        if (tau < 0) continue;  // left zero padding
        const double* xrow = xv.data() + (b * t_len + static_cast<std::size_t>(tau)) * c_in;
        const double* wslab = wv.data() + i * c_in * c_out;
        for (std::size_t c = 0; c < c_in; ++c) {
          const double xval = xrow[c];
          const double* wrow = wslab + c * c_out;
          for (std::size_t o = 0; o < c_out; ++o) yrow[o] += xval * wrow[o];
        }
      }
    }
  }

  return make_node(std::move(out), {x, w, bias},
                   [batch, t_len, c_in, k, c_out, dilation](Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    const Tensor& g = self.grad;
    const Tensor& xv = px->value;
    const Tensor& wv = pw->value;
    if (wants_grad(pb)) {
      Tensor& gb = pb->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < t_len; ++t) {
          const double* grow = g.data() + (b * t_len + t) * c_out;
          for (std::size_t o = 0; o < c_out; ++o) gb[o] += grow[o];
        }
    }
    const bool need_x = wants_grad(px);
    const bool need_w = wants_grad(pw);
    if (!need_x && !need_w) return;
    Tensor* gx = need_x ? &px->ensure_grad() : nullptr;
    Tensor* gw = need_w ? &pw->ensure_grad() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < t_len; ++t) {
        const double* grow = g.data() + (b * t_len + t) * c_out;
        for (std::size_t i = 0; i < k; ++i) {
          const std::ptrdiff_t tau = static_cast<std::ptrdiff_t>(t) -
                                     static_cast<std::ptrdiff_t>((k - 1 - i) * dilation);
          if (tau < 0) continue;
          const std::size_t xoff = (b * t_len + static_cast<std::size_t>(tau)) * c_in;
          for (std::size_t c = 0; c < c_in; ++c) {
            const double* wrow = wv.data() + (i * c_in + c) * c_out;
            if (need_x) {
              double acc = 0.0;
              for (std::size_t o = 0; o < c_out; ++o) acc += wrow[o] * grow[o];
              (*gx)[xoff + c] += acc;
            }
            if (need_w) {
              const double xval = xv[xoff + c];
              double* gwrow = gw->data() + (i * c_in + c) * c_out;
              for (std::size_t o = 0; o < c_out; ++o) gwrow[o] += xval * grow[o];
            }
          }
        }
      }
    }
  }, "dilated_causal_conv1d");
}

DiffValue batch_norm(const DiffValue& x, BatchNormState& state, Mode mode, bool update_running) {
  require(x.value().rank() == 3, "batch_norm: input must be [B,T,C]");
  const std::size_t batch = x.value().dim(0), t_len = x.value().dim(1), ch = x.value().dim(2);
  require(state.gamma.value().numel() == ch, "batch_norm: channel count mismatch");
  const double eps = state.epsilon;
  const std::size_t m = batch * t_len;
  const Tensor& xv = x.value();
  const Tensor& gam = state.gamma.value();
  const Tensor& bet = state.beta.value();

  Tensor mean({ch});
  Tensor inv_std({ch});
  if (mode == Mode::Train) {
    Tensor var({ch});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < t_len; ++t) {
        const double* row = xv.data() + (b * t_len + t) * ch;
        for (std::size_t c = 0; c < ch; ++c) mean[c] += row[c];
      }
    for (std::size_t c = 0; c < ch; ++c) mean[c] /= static_cast<double>(m);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < t_len; ++t) {
        const double* row = xv.data() + (b * t_len + t) * ch;
        for (std::size_t c = 0; c < ch; ++c) {
          const double d = row[c] - mean[c];
          var[c] += d * d;
        }
      }
    for (std::size_t c = 0; c < ch; ++c) var[c] /= static_cast<double>(m);
    for (std::size_t c = 0; c < ch; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    if (update_running) {
      for (std::size_t c = 0; c < ch; ++c) {
        state.running_mean[c] = state.momentum * state.running_mean[c] +
                                (1.0 - state.momentum) * mean[c];
        state.running_var[c] = state.momentum * state.running_var[c] +
                               (1.0 - state.momentum) * var[c];
      }
    }
  } else {
    mean = state.running_mean;
    for (std::size_t c = 0; c < ch; ++c) inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
  }

  Tensor out(xv.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < t_len; ++t) {
      const double* row = xv.data() + (b * t_len + t) * ch;
      double* orow = out.data() + (b * t_len + t) * ch;
      for (std::size_t c = 0; c < ch; ++c)
        orow[c] = gam[c] * (row[c] - mean[c]) * inv_std[c] + bet[c];
    }

  return make_node(std::move(out), {x, state.gamma, state.beta},
                   [batch, t_len, ch, m, mode, mean, inv_std](Node& self) {
    auto& px = self.parents[0];
    auto& pgam = self.parents[1];
    auto& pbet = self.parents[2];
    const Tensor& g = self.grad;
    const Tensor& xv = px->value;
    const Tensor& gam = pgam->value;

    // per-channel sums of g and g*xhat
    Tensor sg({ch});
    Tensor sgx({ch});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < t_len; ++t) {
        const std::size_t off = (b * t_len + t) * ch;
        for (std::size_t c = 0; c < ch; ++c) {
          const double xhat = (xv[off + c] - mean[c]) * inv_std[c];
          sg[c] += g[off + c];
          sgx[c] += g[off + c] * xhat;
        }
      }
    if (wants_grad(pgam)) {
      Tensor& gg = pgam->ensure_grad();
      for (std::size_t c = 0; c < ch; ++c) gg[c] += sgx[c];
    }
    if (wants_grad(pbet)) {
      Tensor& gb = pbet->ensure_grad();
      for (std::size_t c = 0; c < ch; ++c) gb[c] += sg[c];
    }
    if (!wants_grad(px)) return;
    Tensor& gx = px->ensure_grad();
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < t_len; ++t) {
        const std::size_t off = (b * t_len + t) * ch;
        for (std::size_t c = 0; c < ch; ++c) {
          if (mode == Mode::Train) {
            const double xhat = (xv[off + c] - mean[c]) * inv_std[c];
            gx[off + c] += gam[c] * inv_std[c] *
                           (g[off + c] - sg[c] * inv_m - xhat * sgx[c] * inv_m);
          } else {
            gx[off + c] += gam[c] * inv_std[c] * g[off + c];
          }
        }
      }
  }, "batch_norm");
}

DiffValue spatial_dropout(const DiffValue& x, double rate, RngStream& rng, Mode mode) {
  require(rate >= 0.0 && rate < 1.0, "spatial_dropout: rate must be in [0, 1)");
  if (mode == Mode::Infer || rate == 0.0) return x;
  require(x.value().rank() == 3, "spatial_dropout: input must be [B,T,C]");
  const std::size_t batch = x.value().dim(0), t_len = x.value().dim(1), ch = x.value().dim(2);
  // one draw per (b, c); all time steps of a channel share it
  const double scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(batch * ch);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      mask[b * ch + c] = rng.next_double() >= rate ? scale : 0.0;

  Tensor out(x.value().shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < t_len; ++t) {
      const std::size_t off = (b * t_len + t) * ch;
      for (std::size_t c = 0; c < ch; ++c) out[off + c] = x.value()[off + c] * mask[b * ch + c];
    }
  return make_node(std::move(out), {x}, [batch, t_len, ch, mask = std::move(mask)](Node& self) {
    auto& p = self.parents[0];
    if (!wants_grad(p)) return;
    Tensor& pg = p->ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < t_len; ++t) {
        const std::size_t off = (b * t_len + t) * ch;
        for (std::size_t c = 0; c < ch; ++c) pg[off + c] += self.grad[off + c] * mask[b * ch + c];
      }
  }, "spatial_dropout");
}

DiffValue temporal_mean(const DiffValue& x) {
  require(x.value().rank() == 3, "temporal_mean: input must be [B,T,C]");
  const std::size_t batch = x.value().dim(0), t_len = x.value().dim(1), ch = x.value().dim(2);
  require(t_len >= 1, "temporal_mean: T must be >= 1");
  Tensor out({batch, ch});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < t_len; ++t) {
      const double* row = x.value().data() + (b * t_len + t) * ch;
      for (std::size_t c = 0; c < ch; ++c) out[b * ch + c] += row[c];
    }
    for (std::size_t c = 0; c < ch; ++c) out[b * ch + c] /= static_cast<double>(t_len);
  }
  return make_node(std::move(out), {x}, [batch, t_len, ch](Node& self) {
    auto& p = self.parents[0];
    if (!wants_grad(p)) return;
    Tensor& pg = p->ensure_grad();
    const double inv_t = 1.0 / static_cast<double>(t_len);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < t_len; ++t) {
        const std::size_t off = (b * t_len + t) * ch;
        for (std::size_t c = 0; c < ch; ++c) pg[off + c] += self.grad[b * ch + c] * inv_t;
      }
  }, "temporal_mean");
}

DiffValue time_reverse(const DiffValue& x) {
  require(x.value().rank() == 3, "time_reverse: input must be [B,T,C]");
  const std::size_t batch = x.value().dim(0), t_len = x.value().dim(1), ch = x.value().dim(2);
  Tensor out(x.value().shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < t_len; ++t) {
      const double* src = x.value().data() + (b * t_len + (t_len - 1 - t)) * ch;
      double* dst = out.data() + (b * t_len + t) * ch;
      std::copy(src, src + ch, dst);
    }
  return make_node(std::move(out), {x}, [batch, t_len, ch](Node& self) {
    auto& p = self.parents[0];
    if (!wants_grad(p)) return;
    Tensor& pg = p->ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < t_len; ++t) {
        const double* src = self.grad.data() + (b * t_len + t) * ch;
        double* dst = pg.data() + (b * t_len + (t_len - 1 - t)) * ch;
        for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c];
      }
  }, "time_reverse");
}

DiffValue dense(const DiffValue& x, const DiffValue& w, const DiffValue& b) {
  require(x.value().rank() == 2, "dense: input must be [B,C]");
  require(w.value().rank() == 2, "dense: weights must be [C,K]");
  const std::size_t batch = x.value().dim(0), ch = x.value().dim(1), k = w.value().dim(1);
  require(w.value().dim(0) == ch, "dense: weight rows do not match input channels");
  require(b.value().numel() == k, "dense: bias length does not match K");
  Tensor out({batch, k});
  for (std::size_t r = 0; r < batch; ++r) {
    double* orow = out.data() + r * k;
    for (std::size_t j = 0; j < k; ++j) orow[j] = b.value()[j];
    for (std::size_t c = 0; c < ch; ++c) {
      const double xv = x.value()[r * ch + c];
      const double* wrow = w.value().data() + c * k;
      for (std::size_t j = 0; j < k; ++j) orow[j] += xv * wrow[j];
    }
  }
  return make_node(std::move(out), {x, w, b}, [batch, ch, k](Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    const Tensor& g = self.grad;
    if (wants_grad(pb)) {
      Tensor& gb = pb->ensure_grad();
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t j = 0; j < k; ++j) gb[j] += g[r * k + j];
    }
    const bool need_x = wants_grad(px);
    const bool need_w = wants_grad(pw);
    if (!need_x && !need_w) return;
    for (std::size_t r = 0; r < batch; ++r) {
      const double* grow = g.data() + r * k;
      for (std::size_t c = 0; c < ch; ++c) {
        const double* wrow = pw->value.data() + c * k;
        if (need_x) {
          double acc = 0.0;
          for (std::size_t j = 0; j < k; ++j) acc += wrow[j] * grow[j];
          px->ensure_grad()[r * ch + c] += acc;
        }
        if (need_w) {
          const double xv = px->value[r * ch + c];
          double* gwrow = pw->ensure_grad().data() + c * k;
          for (std::size_t j = 0; j < k; ++j) gwrow[j] += xv * grow[j];
        }
      }
    }
  }, "dense");
}

DiffValue weighted_sum(std::span<const DiffValue> gs, const DiffValue& w) {
  require(!gs.empty(), "weighted_sum: need at least one input");
  require(w.value().numel() == gs.size(), "weighted_sum: weight count does not match inputs");
  const auto& shape = gs[0].value().shape();
  for (const auto& g : gs)
    require(g.value().shape() == shape, "weighted_sum: input shape mismatch");
  const std::size_t n = gs.size();
  const std::size_t numel = gs[0].value().numel();
  Tensor out(shape);
  for (std::size_t j = 0; j < n; ++j) {
    const double wj = w.value()[j];
    const Tensor& gv = gs[j].value();
    for (std::size_t i = 0; i < numel; ++i) out[i] += wj * gv[i];
  }
  std::vector<DiffValue> parents(gs.begin(), gs.end());
  parents.push_back(w);
  return make_node(std::move(out), std::move(parents), [n, numel](Node& self) {
    const Tensor& g = self.grad;
    auto& pw = self.parents[n];
    for (std::size_t j = 0; j < n; ++j) {
      auto& pj = self.parents[j];
      const double wj = pw->value[j];
      if (wants_grad(pj)) {
        Tensor& pg = pj->ensure_grad();
        for (std::size_t i = 0; i < numel; ++i) pg[i] += wj * g[i];
      }
      if (wants_grad(pw)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < numel; ++i) acc += g[i] * pj->value[i];
        pw->ensure_grad()[j] += acc;
      }
    }
  }, "weighted_sum");
}

void backward(const DiffValue& loss) {
  if (!loss.valid() || loss.value().numel() != 1)
    throw ValidationError("backward requires a scalar loss");
  Node* root = loss.node();
  if (!root->requires_grad) return;  // nothing trainable upstream

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* parent = node->parents[idx++].get();
      if (parent->requires_grad && !visited.contains(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->grad_ready && node->backprop) node->backprop(*node);
  }
}

void zero_grad(std::span<DiffValue> params) {
  for (auto& p : params) p.grad().fill(0.0);
}

}  // namespace timnet::diff
