#include "tonguerx/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tonguerx/tensor.hpp"

namespace tonguerx {

namespace {

void check_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r)
    throw std::invalid_argument(std::string(op) + ": expected rank " +
                                std::to_string(r) + " tensor, got shape " +
                                shape_str(t.shape));
}

// ---- raw forward kernels ------------------------------------------------

Tensor conv_forward(const Tensor& in, const Tensor& k, const Tensor& b) {
  const std::size_t n = in.shape[0], h = in.shape[1], w = in.shape[2],
                    cin = in.shape[3];
  const std::size_t kh = k.shape[0], kw = k.shape[1], cout = k.shape[3];
  const std::size_t ph = kh / 2, pw = kw / 2;
  Tensor out({n, h, w, cout});
  for (std::size_t ni = 0; ni < n; ++ni) {
    for (std::size_t oy = 0; oy < h; ++oy) {
      for (std::size_t ox = 0; ox < w; ++ox) {
        double* acc = &out.at4(ni, oy, ox, 0);
        for (std::size_t c = 0; c < cout; ++c) acc[c] = b[c];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(ph);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pw);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const double* px = &in.at4(ni, static_cast<std::size_t>(iy),
                                       static_cast<std::size_t>(ix), 0);
            const double* ks = &k.data[((ky * kw) + kx) * cin * cout];
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double v = px[ci];
              const double* krow = ks + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) acc[co] += v * krow[co];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor maxpool_forward(const Tensor& in, std::vector<std::size_t>* argmax) {
  const std::size_t n = in.shape[0], h = in.shape[1], w = in.shape[2],
                    c = in.shape[3];
  const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  Tensor out({n, ho, wo, c});
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t ni = 0; ni < n; ++ni) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        for (std::size_t ci = 0; ci < c; ++ci) {
          double best = 0.0;
          std::size_t best_idx = 0;
          bool first = true;
          // Row-major window scan; odd edges replicate the last row/column.
          for (std::size_t dy = 0; dy < 2; ++dy) {
            const std::size_t iy = std::min(2 * oy + dy, h - 1);
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t ix = std::min(2 * ox + dx, w - 1);
              const std::size_t idx = ((ni * h + iy) * w + ix) * c + ci;
              const double v = in.data[idx];
              if (first || v > best) {
                best = v;
                best_idx = idx;
                first = false;
              }
            }
          }
          const std::size_t oidx = ((ni * ho + oy) * wo + ox) * c + ci;
          out.data[oidx] = best;
          if (argmax) (*argmax)[oidx] = best_idx;
        }
      }
    }
  }
  return out;
}

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = x.shape[0], din = x.shape[1], dout = w.shape[1];
  Tensor out({n, dout});
  for (std::size_t ni = 0; ni < n; ++ni) {
    double* orow = &out.data[ni * dout];
    for (std::size_t o = 0; o < dout; ++o) orow[o] = b[o];
    const double* xrow = &x.data[ni * din];
    for (std::size_t d = 0; d < din; ++d) {
      const double v = xrow[d];
      const double* wrow = &w.data[d * dout];
      for (std::size_t o = 0; o < dout; ++o) orow[o] += v * wrow[o];
    }
  }
  return out;
}

Tensor softmax_forward(const Tensor& x) {
  const std::size_t m = x.shape.back();
  const std::size_t rows = x.size() / m;
  Tensor out(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x.data[r * m];
    double* orow = &out.data[r * m];
    double mx = xr[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, xr[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      total += orow[j];
    }
    for (std::size_t j = 0; j < m; ++j) orow[j] /= total;
  }
  return out;
}

// mean/var per channel over N*H*W; stats laid out as [mean(C), var(C)].
void bn_batch_stats(const Tensor& x, std::vector<double>& stats) {
  const std::size_t c = x.shape[3];
  const std::size_t m = x.shape[0] * x.shape[1] * x.shape[2];
  stats.assign(2 * c, 0.0);
  for (std::size_t i = 0; i < x.size(); i += c)
    for (std::size_t ci = 0; ci < c; ++ci) stats[ci] += x.data[i + ci];
  for (std::size_t ci = 0; ci < c; ++ci) stats[ci] /= static_cast<double>(m);
  for (std::size_t i = 0; i < x.size(); i += c)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double d = x.data[i + ci] - stats[ci];
      stats[c + ci] += d * d;
    }
  for (std::size_t ci = 0; ci < c; ++ci) stats[c + ci] /= static_cast<double>(m);
}

Tensor bn_apply(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                const double* mean, const double* var, double eps) {
  const std::size_t c = x.shape[3];
  Tensor out(x.shape);
  std::vector<double> istd(c), shift(c), scale(c);
  for (std::size_t ci = 0; ci < c; ++ci) {
    istd[ci] = 1.0 / std::sqrt(var[ci] + eps);
    scale[ci] = gamma[ci] * istd[ci];
    shift[ci] = beta[ci] - mean[ci] * scale[ci];
  }
  for (std::size_t i = 0; i < x.size(); i += c)
    for (std::size_t ci = 0; ci < c; ++ci)
      out.data[i + ci] = x.data[i + ci] * scale[ci] + shift[ci];
  return out;
}

Tensor concat_forward(const Tensor& a, const Tensor& b) {
  const std::size_t da = a.shape.back(), db = b.shape.back();
  const std::size_t rows = a.size() / da;
  std::vector<std::size_t> shape = a.shape;
  shape.back() = da + db;
  Tensor out(std::move(shape));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(&a.data[r * da], da, &out.data[r * (da + db)]);
    std::copy_n(&b.data[r * db], db, &out.data[r * (da + db) + da]);
  }
  return out;
}

double bce_mean_forward(const Tensor& p, const Tensor& g) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double ph = clamp_prob(p[i]);
    total += -g[i] * std::log(ph) - (1.0 - g[i]) * std::log(1.0 - ph);
  }
  return total / static_cast<double>(p.size());
}

double kl_mean_forward(const Tensor& p, const Tensor& g) {
  const std::size_t m = p.shape.back();
  const std::size_t rows = p.size() / m;
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total += p[i] * std::log(p[i] / g[i]);
  }
  return total / static_cast<double>(rows * m);
}

}  // namespace

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

void require_finite(const Tensor& t, const char* what) {
  for (double v : t.data)
    if (!std::isfinite(v))
      throw std::invalid_argument(std::string(what) + ": non-finite value");
}

const Tensor& GradientSet::at(NodeId leaf) const {
  for (std::size_t i = 0; i < leaves.size(); ++i)
    if (leaves[i] == leaf) return grads[i];
  throw std::invalid_argument("GradientSet: unknown leaf node");
}

NodeId Tape::push(TapeNode node) {
  for (int i = 0; i < node.arity; ++i)
    if (nodes_[node.in[i]].requires_grad) node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
  TapeNode n;
  n.op = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Tape::conv2d(NodeId input, NodeId kernels, NodeId bias) {
  const Tensor& in = nodes_[input].value;
  const Tensor& k = nodes_[kernels].value;
  const Tensor& b = nodes_[bias].value;
  check_rank(in, 4, "conv2d input");
  check_rank(k, 4, "conv2d kernels");
  check_rank(b, 1, "conv2d bias");
  if (k.shape[0] % 2 == 0 || k.shape[1] % 2 == 0)
    throw std::invalid_argument("conv2d: kernel extents must be odd, got " +
                                shape_str(k.shape));
  if (k.shape[2] != in.shape[3])
    throw std::invalid_argument(
        "conv2d: input channels " + std::to_string(in.shape[3]) +
        " do not match kernel input channels " + std::to_string(k.shape[2]));
  if (b.shape[0] != k.shape[3])
    throw std::invalid_argument("conv2d: bias extent " +
                                std::to_string(b.shape[0]) +
                                " does not match kernel count " +
                                std::to_string(k.shape[3]));
  TapeNode n;
  n.op = OpKind::Conv2d;
  n.in = {input, kernels, bias};
  n.arity = 3;
  n.value = conv_forward(in, k, b);
  return push(std::move(n));
}

NodeId Tape::maxpool2(NodeId input) {
  const Tensor& in = nodes_[input].value;
  check_rank(in, 4, "maxpool2 input");
  TapeNode n;
  n.op = OpKind::MaxPool2;
  n.in = {input, 0, 0};
  n.arity = 1;
  n.value = maxpool_forward(in, &n.indices);
  return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
  TapeNode n;
  n.op = OpKind::Relu;
  n.in = {x, 0, 0};
  n.arity = 1;
  n.value = nodes_[x].value;
  for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId x) {
  TapeNode n;
  n.op = OpKind::Sigmoid;
  n.in = {x, 0, 0};
  n.arity = 1;
  n.value = nodes_[x].value;
  for (double& v : n.value.data) v = 1.0 / (1.0 + std::exp(-v));
  return push(std::move(n));
}

NodeId Tape::softmax(NodeId x) {
  TapeNode n;
  n.op = OpKind::Softmax;
  n.in = {x, 0, 0};
  n.arity = 1;
  n.value = softmax_forward(nodes_[x].value);
  return push(std::move(n));
}

NodeId Tape::dense(NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = nodes_[x].value;
  const Tensor& wv = nodes_[w].value;
  const Tensor& bv = nodes_[b].value;
  check_rank(xv, 2, "dense input");
  check_rank(wv, 2, "dense weight");
  check_rank(bv, 1, "dense bias");
  if (xv.shape[1] != wv.shape[0])
    throw std::invalid_argument("dense: input width " +
                                std::to_string(xv.shape[1]) +
                                " does not match weight rows " +
                                std::to_string(wv.shape[0]));
  if (bv.shape[0] != wv.shape[1])
    throw std::invalid_argument("dense: bias extent does not match weight columns");
  TapeNode n;
  n.op = OpKind::Dense;
  n.in = {x, w, b};
  n.arity = 3;
  n.value = dense_forward(xv, wv, bv);
  return push(std::move(n));
}

NodeId Tape::batchnorm2d(NodeId x, NodeId gamma, NodeId beta,
                         BatchNormState& state, Mode mode) {
  const Tensor& xv = nodes_[x].value;
  check_rank(xv, 4, "batchnorm2d input");
  const std::size_t c = xv.shape[3];
  if (nodes_[gamma].value.size() != c || nodes_[beta].value.size() != c)
    throw std::invalid_argument("batchnorm2d: gamma/beta extent must equal channels");
  if (state.running_mean.size() != c || state.running_var.size() != c)
    throw std::invalid_argument("batchnorm2d: state channel count mismatch");
  TapeNode n;
  n.op = OpKind::BatchNorm;
  n.in = {x, gamma, beta};
  n.arity = 3;
  n.mode = mode;
  n.p0 = state.epsilon;
  std::vector<double> stats;
  if (mode == Mode::Train) {
    const std::size_t m = xv.shape[0] * xv.shape[1] * xv.shape[2];
    if (m < 2)
      throw std::invalid_argument(
          "batchnorm2d: train mode needs at least 2 spatial-batch elements");
    bn_batch_stats(xv, stats);
    for (std::size_t ci = 0; ci < c; ++ci) {
      state.running_mean[ci] =
          state.momentum * state.running_mean[ci] + (1.0 - state.momentum) * stats[ci];
      state.running_var[ci] =
          state.momentum * state.running_var[ci] + (1.0 - state.momentum) * stats[c + ci];
    }
  } else {
    stats.resize(2 * c);
    std::copy_n(state.running_mean.data.data(), c, stats.data());
    std::copy_n(state.running_var.data.data(), c, stats.data() + c);
  }
  n.aux = Tensor({2 * c}, std::vector<double>(stats));
  n.value = bn_apply(xv, nodes_[gamma].value, nodes_[beta].value, stats.data(),
                     stats.data() + c, state.epsilon);
  return push(std::move(n));
}

NodeId Tape::dropout(NodeId x, double rate, Rng& rng, Mode mode) {
  if (rate < 0.0 || rate > 1.0)
    throw std::invalid_argument("dropout: rate must be in [0,1]");
  const Tensor& xv = nodes_[x].value;
  TapeNode n;
  n.op = OpKind::Dropout;
  n.in = {x, 0, 0};
  n.arity = 1;
  n.mode = mode;
  n.p0 = rate;
  if (mode == Mode::Infer) {
    n.value = xv;
    return push(std::move(n));
  }
  if (rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be < 1 in train mode");
  const double keep_scale = 1.0 / (1.0 - rate);
  n.aux = Tensor(xv.shape);
  n.value = Tensor(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double m = rng.uniform() >= rate ? keep_scale : 0.0;
    n.aux[i] = m;
    n.value[i] = xv[i] * m;
  }
  return push(std::move(n));
}

NodeId Tape::concat(NodeId a, NodeId b) {
  const Tensor& av = nodes_[a].value;
  const Tensor& bv = nodes_[b].value;
  if (av.rank() != bv.rank() || av.rank() == 0)
    throw std::invalid_argument("concat: rank mismatch");
  for (std::size_t i = 0; i + 1 < av.rank(); ++i)
    if (av.shape[i] != bv.shape[i])
      throw std::invalid_argument("concat: leading extents differ, " +
                                  shape_str(av.shape) + " vs " + shape_str(bv.shape));
  TapeNode n;
  n.op = OpKind::Concat;
  n.in = {a, b, 0};
  n.arity = 2;
  n.value = concat_forward(av, bv);
  return push(std::move(n));
}

NodeId Tape::flatten(NodeId x) {
  const Tensor& xv = nodes_[x].value;
  if (xv.rank() < 2) throw std::invalid_argument("flatten: rank must be >= 2");
  TapeNode n;
  n.op = OpKind::Flatten;
  n.in = {x, 0, 0};
  n.arity = 1;
  n.value = Tensor({xv.shape[0], xv.size() / xv.shape[0]},
                   std::vector<double>(xv.data));
  return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
  TapeNode n;
  n.op = OpKind::Sum;
  n.in = {x, 0, 0};
  n.arity = 1;
  double total = 0.0;
  for (double v : nodes_[x].value.data) total += v;
  n.value = Tensor::scalar(total);
  return push(std::move(n));
}

NodeId Tape::bce_mean(NodeId probs, const Tensor& labels) {
  const Tensor& p = nodes_[probs].value;
  if (!p.same_shape(labels))
    throw std::invalid_argument("bce_mean: probs shape " + shape_str(p.shape) +
                                " does not match labels shape " +
                                shape_str(labels.shape));
  for (double g : labels.data)
    if (g != 0.0 && g != 1.0)
      throw std::invalid_argument("bce_mean: labels must be 0/1");
  TapeNode n;
  n.op = OpKind::BceMean;
  n.in = {probs, 0, 0};
  n.arity = 1;
  n.aux = labels;
  n.value = Tensor::scalar(bce_mean_forward(p, labels));
  return push(std::move(n));
}

NodeId Tape::kl_mean(NodeId probs, const Tensor& target) {
  const Tensor& p = nodes_[probs].value;
  if (!p.same_shape(target))
    throw std::invalid_argument("kl_mean: probs shape does not match target shape");
  for (double g : target.data)
    if (!(g > 0.0))
      throw std::invalid_argument(
          "kl_mean: target distribution entries must be strictly positive");
  TapeNode n;
  n.op = OpKind::KlMean;
  n.in = {probs, 0, 0};
  n.arity = 1;
  n.aux = target;
  n.value = Tensor::scalar(kl_mean_forward(p, target));
  return push(std::move(n));
}

NodeId Tape::add_scaled(NodeId a, NodeId b, double lambda) {
  if (nodes_[a].value.size() != 1 || nodes_[b].value.size() != 1)
    throw std::invalid_argument("add_scaled: operands must be scalar");
  TapeNode n;
  n.op = OpKind::AddScaled;
  n.in = {a, b, 0};
  n.arity = 2;
  n.p0 = lambda;
  n.value = Tensor::scalar(nodes_[a].value[0] + lambda * nodes_[b].value[0]);
  return push(std::move(n));
}

double Tape::scalar_value(NodeId id) const {
  const Tensor& v = nodes_[id].value;
  if (v.size() != 1) throw std::invalid_argument("scalar_value: not a scalar node");
  return v[0];
}

Tensor Tape::forward_of(const TapeNode& node, const std::vector<Tensor>& values) const {
  const auto& v0 = values[node.in[0]];
  switch (node.op) {
    case OpKind::Conv2d:
      return conv_forward(v0, values[node.in[1]], values[node.in[2]]);
    case OpKind::MaxPool2:
      return maxpool_forward(v0, nullptr);
    case OpKind::Relu: {
      Tensor out = v0;
      for (double& v : out.data) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case OpKind::Sigmoid: {
      Tensor out = v0;
      for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
      return out;
    }
    case OpKind::Softmax:
      return softmax_forward(v0);
    case OpKind::Dense:
      return dense_forward(v0, values[node.in[1]], values[node.in[2]]);
    case OpKind::BatchNorm: {
      const std::size_t c = v0.shape[3];
      if (node.mode == Mode::Train) {
        std::vector<double> stats;
        bn_batch_stats(v0, stats);
        return bn_apply(v0, values[node.in[1]], values[node.in[2]], stats.data(),
                        stats.data() + c, node.p0);
      }
      return bn_apply(v0, values[node.in[1]], values[node.in[2]],
                      node.aux.data.data(), node.aux.data.data() + c, node.p0);
    }
    case OpKind::Dropout: {
      if (node.mode == Mode::Infer) return v0;
      Tensor out = v0;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= node.aux[i];
      return out;
    }
    case OpKind::Concat:
      return concat_forward(v0, values[node.in[1]]);
    case OpKind::Flatten:
      return Tensor({v0.shape[0], v0.size() / v0.shape[0]},
                    std::vector<double>(v0.data));
    case OpKind::Sum: {
      double total = 0.0;
      for (double v : v0.data) total += v;
      return Tensor::scalar(total);
    }
    case OpKind::BceMean:
      return Tensor::scalar(bce_mean_forward(v0, node.aux));
    case OpKind::KlMean:
      return Tensor::scalar(kl_mean_forward(v0, node.aux));
    case OpKind::AddScaled:
      return Tensor::scalar(v0[0] + node.p0 * values[node.in[1]][0]);
    case OpKind::Leaf:
      break;
  }
  throw std::logic_error("forward_of: unhandled op");
}

Tensor Tape::replay(NodeId output) const {
  std::vector<Tensor> values(output + 1);
  for (NodeId id = 0; id <= output; ++id) {
    const TapeNode& node = nodes_[id];
    values[id] = node.op == OpKind::Leaf ? node.value : forward_of(node, values);
  }
  return values[output];
}

GradientSet Tape::backward(NodeId loss) const {
  if (nodes_[loss].value.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar node");
  std::vector<Tensor> grad(nodes_.size());
  grad[loss] = Tensor::scalar(1.0);

  auto accum = [&](NodeId id) -> Tensor& {
    if (grad[id].data.empty()) grad[id] = Tensor::zeros(nodes_[id].value.shape);
    return grad[id];
  };

  for (NodeId id = loss + 1; id-- > 0;) {
    const TapeNode& node = nodes_[id];
    if (!node.requires_grad || grad[id].data.empty()) continue;
    const Tensor& g = grad[id];
    switch (node.op) {
      case OpKind::Leaf:
        break;
      case OpKind::Conv2d: {
        const Tensor& in = nodes_[node.in[0]].value;
        const Tensor& k = nodes_[node.in[1]].value;
        const std::size_t n = in.shape[0], h = in.shape[1], w = in.shape[2],
                          cin = in.shape[3];
        const std::size_t kh = k.shape[0], kw = k.shape[1], cout = k.shape[3];
        const std::size_t ph = kh / 2, pw = kw / 2;
        const bool want_in = nodes_[node.in[0]].requires_grad;
        const bool want_k = nodes_[node.in[1]].requires_grad;
        const bool want_b = nodes_[node.in[2]].requires_grad;
        Tensor* din = want_in ? &accum(node.in[0]) : nullptr;
        Tensor* dk = want_k ? &accum(node.in[1]) : nullptr;
        Tensor* db = want_b ? &accum(node.in[2]) : nullptr;
        for (std::size_t ni = 0; ni < n; ++ni) {
          for (std::size_t oy = 0; oy < h; ++oy) {
            for (std::size_t ox = 0; ox < w; ++ox) {
              const double* gpx = &g.at4(ni, oy, ox, 0);
              if (db)
                for (std::size_t co = 0; co < cout; ++co) db->data[co] += gpx[co];
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) -
                                          static_cast<std::ptrdiff_t>(ph);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) -
                                            static_cast<std::ptrdiff_t>(pw);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  const std::size_t base = ((ky * kw) + kx) * cin * cout;
                  const double* px = &in.at4(ni, static_cast<std::size_t>(iy),
                                             static_cast<std::size_t>(ix), 0);
                  double* dpx = din ? &din->at4(ni, static_cast<std::size_t>(iy),
                                                static_cast<std::size_t>(ix), 0)
                                    : nullptr;
                  for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double* krow = &k.data[base + ci * cout];
                    double acc = 0.0;
                    if (dk) {
                      double* dkrow = &dk->data[base + ci * cout];
                      const double v = px[ci];
                      for (std::size_t co = 0; co < cout; ++co) {
                        const double gv = gpx[co];
                        dkrow[co] += v * gv;
                        acc += krow[co] * gv;
                      }
                    } else {
                      for (std::size_t co = 0; co < cout; ++co)
                        acc += krow[co] * gpx[co];
                    }
                    if (dpx) dpx[ci] += acc;
                  }
                }
              }
            }
          }
        }
        break;
      }
      case OpKind::MaxPool2: {
        Tensor& din = accum(node.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i)
          din.data[node.indices[i]] += g[i];
        break;
      }
      case OpKind::Relu: {
        Tensor& din = accum(node.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (node.value[i] > 0.0) din[i] += g[i];
        break;
      }
      case OpKind::Sigmoid: {
        Tensor& din = accum(node.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = node.value[i];
          din[i] += g[i] * s * (1.0 - s);
        }
        break;
      }
      case OpKind::Softmax: {
        Tensor& din = accum(node.in[0]);
        const std::size_t m = node.value.shape.back();
        const std::size_t rows = node.value.size() / m;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* p = &node.value.data[r * m];
          const double* gr = &g.data[r * m];
          double dot = 0.0;
          for (std::size_t j = 0; j < m; ++j) dot += gr[j] * p[j];
          for (std::size_t j = 0; j < m; ++j)
            din.data[r * m + j] += p[j] * (gr[j] - dot);
        }
        break;
      }
      case OpKind::Dense: {
        const Tensor& x = nodes_[node.in[0]].value;
        const Tensor& w = nodes_[node.in[1]].value;
        const std::size_t n = x.shape[0], din_w = x.shape[1], dout = w.shape[1];
        const bool want_x = nodes_[node.in[0]].requires_grad;
        const bool want_w = nodes_[node.in[1]].requires_grad;
        const bool want_b = nodes_[node.in[2]].requires_grad;
        Tensor* dx = want_x ? &accum(node.in[0]) : nullptr;
        Tensor* dw = want_w ? &accum(node.in[1]) : nullptr;
        Tensor* db = want_b ? &accum(node.in[2]) : nullptr;
        for (std::size_t ni = 0; ni < n; ++ni) {
          const double* grow = &g.data[ni * dout];
          if (db)
            for (std::size_t o = 0; o < dout; ++o) db->data[o] += grow[o];
          const double* xrow = &x.data[ni * din_w];
          for (std::size_t d = 0; d < din_w; ++d) {
            const double* wrow = &w.data[d * dout];
            double acc = 0.0;
            if (dw) {
              double* dwrow = &dw->data[d * dout];
              const double v = xrow[d];
              for (std::size_t o = 0; o < dout; ++o) {
                const double gv = grow[o];
                dwrow[o] += v * gv;
                acc += wrow[o] * gv;
              }
            } else {
              for (std::size_t o = 0; o < dout; ++o) acc += wrow[o] * grow[o];
            }
            if (dx) dx->data[ni * din_w + d] += acc;
          }
        }
        break;
      }
      case OpKind::BatchNorm: {
        const Tensor& x = nodes_[node.in[0]].value;
        const Tensor& gamma = nodes_[node.in[1]].value;
        const std::size_t c = x.shape[3];
        const std::size_t m = x.shape[0] * x.shape[1] * x.shape[2];
        const double* mean = node.aux.data.data();
        const double* var = node.aux.data.data() + c;
        std::vector<double> istd(c);
        for (std::size_t ci = 0; ci < c; ++ci)
          istd[ci] = 1.0 / std::sqrt(var[ci] + node.p0);
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t i = 0; i < x.size(); i += c)
          for (std::size_t ci = 0; ci < c; ++ci) {
            const double xhat = (x.data[i + ci] - mean[ci]) * istd[ci];
            sum_g[ci] += g.data[i + ci];
            sum_gx[ci] += g.data[i + ci] * xhat;
          }
        if (nodes_[node.in[1]].requires_grad) {
          Tensor& dgamma = accum(node.in[1]);
          for (std::size_t ci = 0; ci < c; ++ci) dgamma[ci] += sum_gx[ci];
        }
        if (nodes_[node.in[2]].requires_grad) {
          Tensor& dbeta = accum(node.in[2]);
          for (std::size_t ci = 0; ci < c; ++ci) dbeta[ci] += sum_g[ci];
        }
        if (nodes_[node.in[0]].requires_grad) {
          Tensor& dx = accum(node.in[0]);
          if (node.mode == Mode::Train) {
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < x.size(); i += c)
              for (std::size_t ci = 0; ci < c; ++ci) {
                const double xhat = (x.data[i + ci] - mean[ci]) * istd[ci];
                dx.data[i + ci] +=
                    gamma[ci] * istd[ci] *
                    (g.data[i + ci] - inv_m * (sum_g[ci] + xhat * sum_gx[ci]));
              }
          } else {
            for (std::size_t i = 0; i < x.size(); i += c)
              for (std::size_t ci = 0; ci < c; ++ci)
                dx.data[i + ci] += g.data[i + ci] * gamma[ci] * istd[ci];
          }
        }
        break;
      }
      case OpKind::Dropout: {
        Tensor& din = accum(node.in[0]);
        if (node.mode == Mode::Infer) {
          for (std::size_t i = 0; i < g.size(); ++i) din[i] += g[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) din[i] += g[i] * node.aux[i];
        }
        break;
      }
      case OpKind::Concat: {
        const Tensor& a = nodes_[node.in[0]].value;
        const Tensor& b = nodes_[node.in[1]].value;
        const std::size_t da = a.shape.back(), db_w = b.shape.back();
        const std::size_t rows = a.size() / da;
        if (nodes_[node.in[0]].requires_grad) {
          Tensor& dA = accum(node.in[0]);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < da; ++j)
              dA.data[r * da + j] += g.data[r * (da + db_w) + j];
        }
        if (nodes_[node.in[1]].requires_grad) {
          Tensor& dB = accum(node.in[1]);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < db_w; ++j)
              dB.data[r * db_w + j] += g.data[r * (da + db_w) + da + j];
        }
        break;
      }
      case OpKind::Flatten: {
        Tensor& din = accum(node.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) din.data[i] += g.data[i];
        break;
      }
      case OpKind::Sum: {
        Tensor& din = accum(node.in[0]);
        for (double& v : din.data) v += g[0];
        break;
      }
      case OpKind::BceMean: {
        Tensor& dp = accum(node.in[0]);
        const Tensor& p = nodes_[node.in[0]].value;
        const Tensor& labels = node.aux;
        const double scale = g[0] / static_cast<double>(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (p[i] < 1e-7 || p[i] > 1.0 - 1e-7) continue;  // clamp region
          dp[i] += scale * (-labels[i] / p[i] + (1.0 - labels[i]) / (1.0 - p[i]));
        }
        break;
      }
      case OpKind::KlMean: {
        Tensor& dp = accum(node.in[0]);
        const Tensor& p = nodes_[node.in[0]].value;
        const Tensor& target = node.aux;
        const std::size_t m = p.shape.back();
        const std::size_t rows = p.size() / m;
        const double scale = g[0] / static_cast<double>(rows * m);
        for (std::size_t i = 0; i < p.size(); ++i)
          if (p[i] > 0.0) dp[i] += scale * (std::log(p[i] / target[i]) + 1.0);
        break;
      }
      case OpKind::AddScaled: {
        accum(node.in[0])[0] += g[0];
        accum(node.in[1])[0] += node.p0 * g[0];
        break;
      }
    }
  }

  GradientSet out;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].op == OpKind::Leaf && nodes_[id].requires_grad) {
      out.leaves.push_back(id);
      out.grads.push_back(grad[id].data.empty()
                              ? Tensor::zeros(nodes_[id].value.shape)
                              : std::move(grad[id]));
    }
  }
  return out;
}

}  // namespace tonguerx
