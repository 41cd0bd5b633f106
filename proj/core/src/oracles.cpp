#include "scinet/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "scinet/errors.hpp"

namespace scinet::oracle {

std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous().cpu();
  const double* p = c.data_ptr<double>();
  return std::vector<double>(p, p + c.numel());
}

Moments instance_moments(const torch::Tensor& x, double epsilon) {
  const auto data = to_vector(x);
  const int64_t planes = x.size(0) * x.size(1);
  const int64_t hw = x.size(2) * x.size(3);
  Moments m;
  m.mean.resize(static_cast<size_t>(planes));
  m.stddev.resize(static_cast<size_t>(planes));
  for (int64_t p = 0; p < planes; ++p) {
    double sum = 0.0;
    for (int64_t i = 0; i < hw; ++i) sum += data[static_cast<size_t>(p * hw + i)];
    const double mean = sum / static_cast<double>(hw);
    double sq = 0.0;
    for (int64_t i = 0; i < hw; ++i) {
      const double d = data[static_cast<size_t>(p * hw + i)] - mean;
      sq += d * d;
    }
    m.mean[static_cast<size_t>(p)] = mean;
    m.stddev[static_cast<size_t>(p)] = std::sqrt(sq / static_cast<double>(hw) + epsilon);
  }
  return m;
}

namespace {

// y[r][o] = sum_i x[r][i] * w[o][i] (+ b[o])
std::vector<double> linear_rows(const std::vector<double>& x, int64_t rows, int64_t in,
                                const std::vector<double>& w, int64_t out,
                                const std::vector<double>* bias = nullptr) {
  std::vector<double> y(static_cast<size_t>(rows * out), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t o = 0; o < out; ++o) {
      double acc = bias ? (*bias)[static_cast<size_t>(o)] : 0.0;
      for (int64_t i = 0; i < in; ++i) {
        acc += x[static_cast<size_t>(r * in + i)] * w[static_cast<size_t>(o * in + i)];
      }
      y[static_cast<size_t>(r * out + o)] = acc;
    }
  }
  return y;
}

void softmax_inplace(std::vector<double>& v, size_t begin, size_t count) {
  double mx = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < count; ++i) mx = std::max(mx, v[begin + i]);
  double total = 0.0;
  for (size_t i = 0; i < count; ++i) {
    v[begin + i] = std::exp(v[begin + i] - mx);
    total += v[begin + i];
  }
  for (size_t i = 0; i < count; ++i) v[begin + i] /= total;
}

// 1x1 conv on a single (C, P) plane stack: y[o][p] = sum_i w[o][i] x[i][p] + b[o]
std::vector<double> conv1x1(const std::vector<double>& x, int64_t in, int64_t positions,
                            const Conv1x1& conv) {
  const auto w = to_vector(conv.weight);
  const auto b = to_vector(conv.bias);
  const int64_t out = conv.weight.size(0);
  std::vector<double> y(static_cast<size_t>(out * positions));
  for (int64_t o = 0; o < out; ++o) {
    for (int64_t p = 0; p < positions; ++p) {
      double acc = b[static_cast<size_t>(o)];
      for (int64_t i = 0; i < in; ++i) {
        acc += w[static_cast<size_t>(o * in + i)] * x[static_cast<size_t>(i * positions + p)];
      }
      y[static_cast<size_t>(o * positions + p)] = acc;
    }
  }
  return y;
}

}  // namespace

AttentionResult naive_self_attention(const torch::Tensor& tokens, const torch::Tensor& w_q,
                                     const torch::Tensor& w_k, const torch::Tensor& w_v,
                                     const torch::Tensor& w_o, int64_t heads) {
  const int64_t n = tokens.size(0);
  const int64_t len = tokens.size(1);
  const int64_t c = tokens.size(2);
  const int64_t dh = c / heads;
  const auto z = to_vector(tokens);
  const auto wq = to_vector(w_q);
  const auto wk = to_vector(w_k);
  const auto wv = to_vector(w_v);
  const auto wo = to_vector(w_o);

  AttentionResult r;
  r.output.assign(static_cast<size_t>(n * len * c), 0.0);
  r.weights.assign(static_cast<size_t>(n * heads * len * len), 0.0);
  r.query.assign(static_cast<size_t>(n * len * c), 0.0);

  for (int64_t b = 0; b < n; ++b) {
    std::vector<double> zb(z.begin() + b * len * c, z.begin() + (b + 1) * len * c);
    const auto q = linear_rows(zb, len, c, wq, c);
    const auto k = linear_rows(zb, len, c, wk, c);
    const auto v = linear_rows(zb, len, c, wv, c);
    std::copy(q.begin(), q.end(), r.query.begin() + b * len * c);

    std::vector<double> concat(static_cast<size_t>(len * c), 0.0);
    for (int64_t h = 0; h < heads; ++h) {
      const size_t wbase = static_cast<size_t>(((b * heads + h) * len) * len);
      for (int64_t l = 0; l < len; ++l) {
        for (int64_t m = 0; m < len; ++m) {
          double s = 0.0;
          for (int64_t d = 0; d < dh; ++d) {
            s += q[static_cast<size_t>(l * c + h * dh + d)] * k[static_cast<size_t>(m * c + h * dh + d)];
          }
          r.weights[wbase + static_cast<size_t>(l * len + m)] = s / std::sqrt(static_cast<double>(dh));
        }
        softmax_inplace(r.weights, wbase + static_cast<size_t>(l * len), static_cast<size_t>(len));
        for (int64_t d = 0; d < dh; ++d) {
          double acc = 0.0;
          for (int64_t m = 0; m < len; ++m) {
            acc += r.weights[wbase + static_cast<size_t>(l * len + m)] *
                   v[static_cast<size_t>(m * c + h * dh + d)];
          }
          concat[static_cast<size_t>(l * c + h * dh + d)] = acc;
        }
      }
    }
    const auto out = linear_rows(concat, len, c, wo, c);
    std::copy(out.begin(), out.end(), r.output.begin() + b * len * c);
  }
  return r;
}

std::vector<double> naive_layer_norm(const std::vector<double>& x, int64_t rows, int64_t cols,
                                     const torch::Tensor& weight, const torch::Tensor& bias,
                                     double epsilon) {
  const auto w = to_vector(weight);
  const auto b = to_vector(bias);
  std::vector<double> y(x.size());
  for (int64_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (int64_t i = 0; i < cols; ++i) mean += x[static_cast<size_t>(r * cols + i)];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t i = 0; i < cols; ++i) {
      const double d = x[static_cast<size_t>(r * cols + i)] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    for (int64_t i = 0; i < cols; ++i) {
      const size_t k = static_cast<size_t>(r * cols + i);
      y[k] = (x[k] - mean) / std::sqrt(var + epsilon) * w[static_cast<size_t>(i)] +
             b[static_cast<size_t>(i)];
    }
  }
  return y;
}

CrossAttentionResult naive_cross_attention(const torch::Tensor& content, const torch::Tensor& style,
                                           const Conv1x1& query, const Conv1x1& key,
                                           const Conv1x1& value, const Conv1x1& out,
                                           double epsilon) {
  const int64_t n = content.size(0);
  const int64_t c = content.size(1);
  const int64_t pc = content.size(2) * content.size(3);
  const int64_t ps = style.size(2) * style.size(3);
  const auto xc = to_vector(content);
  const auto xs = to_vector(style);
  const auto mc = instance_moments(content, epsilon);
  const auto ms = instance_moments(style, epsilon);

  CrossAttentionResult r;
  r.fused.assign(static_cast<size_t>(n * c * pc), 0.0);
  r.attention.assign(static_cast<size_t>(n * pc * ps), 0.0);
  for (int64_t b = 0; b < n; ++b) {
    std::vector<double> nc(static_cast<size_t>(c * pc)), ns(static_cast<size_t>(c * ps)),
        raw_s(static_cast<size_t>(c * ps));
    for (int64_t ch = 0; ch < c; ++ch) {
      const size_t plane = static_cast<size_t>(b * c + ch);
      for (int64_t p = 0; p < pc; ++p) {
        const size_t k = static_cast<size_t>(ch * pc + p);
        nc[k] = (xc[plane * static_cast<size_t>(pc) + static_cast<size_t>(p)] - mc.mean[plane]) /
                mc.stddev[plane];
      }
      for (int64_t p = 0; p < ps; ++p) {
        const size_t k = static_cast<size_t>(ch * ps + p);
        raw_s[k] = xs[plane * static_cast<size_t>(ps) + static_cast<size_t>(p)];
        ns[k] = (raw_s[k] - ms.mean[plane]) / ms.stddev[plane];
      }
    }
    const auto q = conv1x1(nc, c, pc, query);
    const auto k = conv1x1(ns, c, ps, key);
    const auto v = conv1x1(raw_s, c, ps, value);

    std::vector<double> attended(static_cast<size_t>(c * pc), 0.0);
    const size_t abase = static_cast<size_t>(b * pc * ps);
    for (int64_t p = 0; p < pc; ++p) {
      for (int64_t s = 0; s < ps; ++s) {
        double dot = 0.0;
        for (int64_t ch = 0; ch < c; ++ch) {
          dot += q[static_cast<size_t>(ch * pc + p)] * k[static_cast<size_t>(ch * ps + s)];
        }
        r.attention[abase + static_cast<size_t>(p * ps + s)] = dot / std::sqrt(static_cast<double>(c));
      }
      softmax_inplace(r.attention, abase + static_cast<size_t>(p * ps), static_cast<size_t>(ps));
      for (int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int64_t s = 0; s < ps; ++s) {
          acc += r.attention[abase + static_cast<size_t>(p * ps + s)] * v[static_cast<size_t>(ch * ps + s)];
        }
        attended[static_cast<size_t>(ch * pc + p)] = acc;
      }
    }
    const auto o = conv1x1(attended, c, pc, out);
    for (int64_t ch = 0; ch < c; ++ch) {
      for (int64_t p = 0; p < pc; ++p) {
        const size_t k2 = static_cast<size_t>((b * c + ch) * pc + p);
        r.fused[k2] = xc[k2] + o[static_cast<size_t>(ch * pc + p)];
      }
    }
  }
  return r;
}

double brute_force_icl(const torch::Tensor& style_codes, const torch::Tensor& content_codes,
                       int64_t n, double tau) {
  const int64_t m = n * n;
  auto unit_rows = [&](const torch::Tensor& t) {
    auto v = to_vector(t);
    const int64_t d = t.size(1);
    for (int64_t r = 0; r < m; ++r) {
      double norm = 0.0;
      for (int64_t i = 0; i < d; ++i) norm += v[static_cast<size_t>(r * d + i)] * v[static_cast<size_t>(r * d + i)];
      norm = std::max(std::sqrt(norm), 1e-12);
      for (int64_t i = 0; i < d; ++i) v[static_cast<size_t>(r * d + i)] /= norm;
    }
    return std::make_pair(v, d);
  };
  auto view = [&](const torch::Tensor& codes, bool style_view) {
    const auto [v, d] = unit_rows(codes);
    auto sim = [&](int64_t a, int64_t b) {
      double s = 0.0;
      for (int64_t i = 0; i < d; ++i) s += v[static_cast<size_t>(a * d + i)] * v[static_cast<size_t>(b * d + i)];
      return s / tau;
    };
    double total = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        const int64_t anchor = i * n + j;
        double negatives = 0.0;
        for (int64_t i2 = 0; i2 < n; ++i2) {
          for (int64_t j2 = 0; j2 < n; ++j2) {
            if (i2 != i && j2 != j) negatives += std::exp(sim(anchor, i2 * n + j2));
          }
        }
        for (int64_t i2 = 0; i2 < n; ++i2) {
          for (int64_t j2 = 0; j2 < n; ++j2) {
            const bool positive = style_view ? (i2 == i && j2 != j) : (j2 == j && i2 != i);
            if (!positive) continue;
            const double p = std::exp(sim(anchor, i2 * n + j2));
            total += -std::log(p / (p + negatives));
            ++count;
          }
        }
      }
    }
    return total / static_cast<double>(count);
  };
  return view(style_codes, true) + view(content_codes, false);
}

GradientCheckReport check_gradients(const ScalarFn& fn, std::vector<torch::Tensor> inputs,
                                    double step, double tolerance) {
  for (auto& t : inputs) t = t.detach().to(torch::kFloat64).contiguous().clone().set_requires_grad(true);

  auto value = fn(inputs);
  if (value.numel() != 1) throw DimensionError("check_gradients: function must return a scalar");
  value.backward();
  std::vector<double> analytic;
  for (auto& t : inputs) {
    if (t.grad().defined()) {
      const auto g = to_vector(t.grad());
      analytic.insert(analytic.end(), g.begin(), g.end());
    } else {
      analytic.insert(analytic.end(), static_cast<size_t>(t.numel()), 0.0);
    }
  }

  std::vector<double> numeric;
  {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> probe;
    for (auto& t : inputs) probe.push_back(t.detach().clone());
    for (auto& t : probe) {
      double* data = t.data_ptr<double>();
      for (int64_t e = 0; e < t.numel(); ++e) {
        const double orig = data[e];
        data[e] = orig + step;
        const double plus = fn(probe).item<double>();
        data[e] = orig - step;
        const double minus = fn(probe).item<double>();
        data[e] = orig;
        numeric.push_back((plus - minus) / (2.0 * step));
      }
    }
  }

  GradientCheckReport r;
  r.tolerance = tolerance;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff2 += d * d;
    a2 += analytic[i] * analytic[i];
    n2 += numeric[i] * numeric[i];
    r.max_abs_error = std::max(r.max_abs_error, std::abs(d));
  }
  r.analytic_norm = std::sqrt(a2);
  r.numeric_norm = std::sqrt(n2);
  r.relative_error = std::sqrt(diff2) / std::max({r.analytic_norm, r.numeric_norm, 1e-12});
  r.passed = std::isfinite(r.relative_error) && r.relative_error < tolerance;
  return r;
}

std::vector<double> naive_linear(const std::vector<double>& x, int64_t rows,
                                 const torch::Tensor& weight, const torch::Tensor& bias) {
  const auto w = to_vector(weight);
  const int64_t out = weight.size(0);
  const int64_t in = weight.size(1);
  if (!bias.defined()) return linear_rows(x, rows, in, w, out);
  const auto b = to_vector(bias);
  return linear_rows(x, rows, in, w, out, &b);
}

}  // namespace scinet::oracle
