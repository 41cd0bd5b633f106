#include "scinet/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "scinet/contrastive.hpp"
#include "scinet/errors.hpp"
#include "scinet/extractors.hpp"
#include "scinet/generator.hpp"
#include "scinet/imaging.hpp"
#include "scinet/losses.hpp"
#include "scinet/oracles.hpp"

namespace scinet {

namespace {

CheckResult result(std::string name, double tolerance, double measured, bool passed,
                   std::string detail = {}) {
  return {std::move(name), tolerance, measured, passed, std::move(detail)};
}

double max_abs_diff(const std::vector<double>& a, const torch::Tensor& b) {
  const auto bv = oracle::to_vector(b);
  if (a.size() != bv.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - bv[i]));
  return m;
}

double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

void randomize(torch::nn::Module& module, double scale) {
  torch::NoGradGuard no_grad;
  for (auto& p : module.parameters()) p.normal_(0.0, scale);
}

// Gradient checks only count when the gradient is not identically zero.
CheckResult gradient_result(const std::string& name, const oracle::GradientCheckReport& r) {
  std::ostringstream os;
  os << "|g|=" << r.analytic_norm << " max_abs=" << r.max_abs_error;
  const bool nontrivial = r.analytic_norm > 1e-8;
  if (!nontrivial) os << " (gradient vanished)";
  return result(name, r.tolerance, r.relative_error, r.passed && nontrivial, os.str());
}

torch::Tensor permute_grid(const torch::Tensor& codes, int64_t n, const std::vector<int64_t>& ps,
                           const std::vector<int64_t>& pc) {
  std::vector<int64_t> rows;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) rows.push_back(ps[static_cast<size_t>(i)] * n + pc[static_cast<size_t>(j)]);
  }
  return codes.index_select(0, torch::tensor(rows, torch::kLong));
}

torch::Tensor unit_codes(int64_t rows, int64_t dim, torch::Dtype dtype) {
  auto x = torch::randn({rows, dim}, torch::TensorOptions().dtype(dtype));
  return x / x.norm(2, 1, true);
}

}  // namespace

CheckResult check_adain_moments(const VerifyOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  ScopedSeed seed(mix_seed(opts.seed, 1));
  std::mt19937_64 rng(mix_seed(opts.seed, 1));
  auto uniform_int = [&](int64_t lo, int64_t hi) {
    return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
  };
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t n = uniform_int(1, 3);
    const int64_t c = uniform_int(1, 8);
    auto fc = torch::randn({n, c, uniform_int(4, 12), uniform_int(4, 12)}) * uniform(1.0, 3.0) +
              uniform(-2.0, 2.0);
    auto fs = torch::randn({n, c, uniform_int(4, 12), uniform_int(4, 12)}) * uniform(0.2, 2.0) +
              uniform(-3.0, 3.0);
    auto out = adain(fc, fs, opts.epsilon);
    const auto got = oracle::instance_moments(out, opts.epsilon);
    const auto want = oracle::instance_moments(fs, opts.epsilon);
    for (size_t i = 0; i < got.mean.size(); ++i) {
      worst = std::max({worst, std::abs(got.mean[i] - want.mean[i]),
                        std::abs(got.stddev[i] - want.stddev[i])});
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream os;
  os << "100 random pairs in " << secs << " s";
  return result("adain_moments", 1e-4, worst, worst <= 1e-4 && secs < 10.0, os.str());
}

CheckResult check_sigma_positive(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 2));
  // Spatially constant planes have zero variance: only epsilon keeps sigma > 0.
  auto x = torch::randn({2, 3, 1, 1}).expand({2, 3, 4, 4}).contiguous();
  auto stats = instance_stats(x, opts.epsilon);
  const double min_sigma = stats.sigma.min().item<double>();
  const bool finite = torch::isfinite(instance_norm(x, opts.epsilon)).all().item<bool>();
  std::ostringstream os;
  os << "epsilon=" << opts.epsilon << (finite ? "" : ", normalized output not finite");
  return result("sigma_positive", 0.0, min_sigma, min_sigma > 0.0 && finite, os.str());
}

CheckResult check_scin_neutrality(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 3));
  auto f = torch::randn({2, 4, 5, 6}) * 2.0 + 0.5;
  AffineParams neutral{torch::ones({2, 4, 1, 1}), torch::zeros({2, 4, 1, 1})};
  auto a = scin_apply(f, neutral, opts.epsilon);
  auto b = instance_norm(f, opts.epsilon);
  return result("scin_neutrality", 0.0, max_abs(a - b), torch::equal(a, b), "exact equality");
}

CheckResult check_scin_adain_equivalence(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 4));
  auto f = torch::randn({3, 5, 6, 4}) * 1.5 - 0.3;
  auto fs = torch::randn({3, 5, 7, 9}) * 0.7 + 1.2;
  auto s = instance_stats(fs, opts.epsilon);
  const double err = max_abs(scin_apply(f, {s.sigma, s.mu}, opts.epsilon) - adain(f, fs, opts.epsilon));
  return result("scin_adain_equivalence", 1e-6, err, err <= 1e-6);
}

CheckResult check_style_encoder_oracle(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 5));
  const int64_t n = 2, l = 4, c = 8, heads = 2;
  StyleEncoder enc(c, heads, EncoderResidual::query);
  randomize(*enc, 0.4);
  enc->to(torch::kFloat64);
  auto tokens = torch::randn({n, l, c}, torch::kFloat64);
  auto got = enc->forward({tokens});

  auto& mha = enc->attention;
  auto ref = oracle::naive_self_attention(tokens, mha->w_q->weight, mha->w_k->weight,
                                          mha->w_v->weight, mha->w_o->weight, heads);
  std::vector<double> attended(ref.output.size());
  for (size_t i = 0; i < attended.size(); ++i) attended[i] = ref.output[i] + ref.query[i];
  const int64_t rows = n * l;
  auto y1 = oracle::naive_layer_norm(attended, rows, c, enc->norm_attended->weight,
                                     enc->norm_attended->bias, enc->norm_attended->options.eps());
  auto h = oracle::naive_linear(y1, rows, enc->ffn_in->weight, enc->ffn_in->bias);
  for (auto& v : h) v = std::max(v, 0.0);
  auto f = oracle::naive_linear(h, rows, enc->ffn_out->weight, enc->ffn_out->bias);
  for (size_t i = 0; i < f.size(); ++i) f[i] += y1[i];
  auto y = oracle::naive_layer_norm(f, rows, c, enc->norm_out->weight, enc->norm_out->bias,
                                    enc->norm_out->options.eps());

  const double err = std::max({max_abs_diff(ref.weights, got.attention),
                               max_abs_diff(attended, got.attended),
                               max_abs_diff(y, got.sequence.tokens)});
  return result("style_encode_oracle", 1e-5, err, err <= 1e-5, "4 tokens, 2 heads");
}

CheckResult check_cross_attention_oracle(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 6));
  const int64_t c = 4;
  CrossAttentionFusion fusion(c, kDefaultEpsilon);
  randomize(*fusion, 0.5);
  fusion->to(torch::kFloat64);
  auto content = torch::randn({2, c, 2, 2}, torch::kFloat64);
  auto style = torch::randn({2, c, 2, 2}, torch::kFloat64);
  auto got = fusion->forward(content, style);
  auto conv = [](const torch::nn::Conv2d& m) { return oracle::Conv1x1{m->weight, m->bias}; };
  auto ref = oracle::naive_cross_attention(content, style, conv(fusion->query), conv(fusion->key),
                                           conv(fusion->value), conv(fusion->out), kDefaultEpsilon);
  const double err =
      std::max(max_abs_diff(ref.fused, got.fused), max_abs_diff(ref.attention, got.attention));
  return result("cross_attention_oracle", 1e-5, err, err <= 1e-5, "2x2 content and style grids");
}

CheckResult check_attention_rows(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 7));
  double worst = 0.0;
  auto rows_error = [&](const torch::Tensor& w) {
    worst = std::max(worst, max_abs(w.sum(-1) - 1.0));
  };
  StyleEncoder enc(16, 4);
  rows_error(enc->forward({torch::randn({3, 10, 16}) * 3.0}).attention);
  MultiHeadAttention mha(32, 8);
  rows_error(mha->forward(torch::randn({2, 17, 32}) * 5.0).weights);
  CrossAttentionFusion fusion(8);
  rows_error(fusion->forward(torch::randn({2, 8, 4, 5}), torch::randn({2, 8, 3, 6})).attention);
  return result("attention_rows_sum_to_one", 1e-6, worst, worst <= 1e-6);
}

CheckResult check_pe_shapes(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 8));
  torch::NoGradGuard no_grad;
  PerceptionEncoder pe(512, 8);
  auto out = pe->forward(torch::rand({1, 3, 256, 256}));
  const bool ok = out.stage1.sizes() == torch::IntArrayRef({1, 512, 64, 64}) &&
                  out.stage2.sizes() == torch::IntArrayRef({1, 512, 32, 32});
  std::ostringstream os;
  os << "256x256 -> " << out.stage1.sizes() << " -> " << out.stage2.sizes();
  return result("pe_shapes", 0.0, ok ? 0.0 : 1.0, ok, os.str());
}

CheckResult check_pe_branch_isolation(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 9));
  torch::NoGradGuard no_grad;
  const int64_t c = 16;
  PerceptionStage stage(c, 2);
  auto x = torch::randn({1, c, 8, 8});
  auto base = stage->forward(x);
  // Input slices [F_h1 | F_h2 | F_l]; output slices [Y_l | Y_h1 | Y_h2].
  struct Branch {
    int64_t in_begin, in_len, out_begin, out_len;
  };
  const Branch branches[] = {{0, c / 4, c / 2, c / 4}, {c / 4, c / 4, 3 * c / 4, c / 4},
                             {c / 2, c / 2, 0, c / 2}};
  double leak = 0.0;
  bool all_respond = true;
  for (const auto& b : branches) {
    auto xp = x.clone();
    xp.narrow(1, b.in_begin, b.in_len).add_(torch::randn({1, b.in_len, 8, 8}));
    auto delta = (stage->forward(xp) - base).abs();
    auto own = delta.narrow(1, b.out_begin, b.out_len).max().item<double>();
    all_respond = all_respond && own > 0.0;
    delta.narrow(1, b.out_begin, b.out_len).zero_();
    leak = std::max(leak, delta.max().item<double>());
  }
  return result("pe_branch_isolation", 0.0, leak, leak == 0.0 && all_respond,
                all_respond ? "each branch moves only its own output slice"
                            : "a perturbed branch left its output unchanged");
}

CheckResult check_icl_oracle(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 10));
  double worst = 0.0;
  for (int64_t n : {2, 3}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto s = unit_codes(n * n, 6, torch::kFloat64);
      auto c = unit_codes(n * n, 6, torch::kFloat64);
      const double got = icl_loss(s, c, n, kDefaultTau).item<double>();
      worst = std::max(worst, std::abs(got - oracle::brute_force_icl(s, c, n, kDefaultTau)));
    }
  }
  return result("icl_oracle", 1e-6, worst, worst <= 1e-6, "n in {2,3}, 5 draws each");
}

CheckResult check_icl_permutation(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 11));
  std::mt19937_64 rng(mix_seed(opts.seed, 11));
  double worst = 0.0;
  bool exact = true;
  for (int64_t n : {2, 3, 4}) {
    auto s = unit_codes(n * n, 8, torch::kFloat32);
    auto c = unit_codes(n * n, 8, torch::kFloat32);
    auto base = icl_loss(s, c, n);
    for (int trial = 0; trial < 6; ++trial) {
      std::vector<int64_t> ps(static_cast<size_t>(n)), pc(static_cast<size_t>(n));
      std::iota(ps.begin(), ps.end(), 0);
      std::iota(pc.begin(), pc.end(), 0);
      std::shuffle(ps.begin(), ps.end(), rng);
      std::shuffle(pc.begin(), pc.end(), rng);
      auto permuted = icl_loss(permute_grid(s, n, ps, pc), permute_grid(c, n, ps, pc), n);
      exact = exact && torch::equal(permuted, base);
      worst = std::max(worst, std::abs(permuted.item<double>() - base.item<double>()));
    }
  }
  return result("icl_permutation_invariance", 0.0, worst, exact, "bitwise, n in {2,3,4}");
}

CheckResult check_icl_default_tau(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 12));
  auto s = unit_codes(9, 6, torch::kFloat64);
  auto c = unit_codes(9, 6, torch::kFloat64);
  auto dflt = icl_loss(s, c, 3);
  const bool ok = kDefaultTau == 0.3 && torch::equal(dflt, icl_loss(s, c, 3, 0.3)) &&
                  !torch::equal(dflt, icl_loss(s, c, 3, 1.0));
  return result("icl_default_tau", 0.0, std::abs(kDefaultTau - 0.3), ok, "tau = 0.3");
}

CheckResult check_gradient_scin(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 13));
  auto weights = torch::randn({1, 2, 3, 3}, torch::kFloat64);
  auto fn = [&](const std::vector<torch::Tensor>& in) {
    return (scin_apply(in[0], {in[1], in[2]}, opts.epsilon) * weights).sum();
  };
  auto r = oracle::check_gradients(
      fn, {torch::randn({1, 2, 3, 3}), torch::randn({1, 2, 1, 1}), torch::randn({1, 2, 1, 1})});
  return gradient_result("gradient_scin_apply", r);
}

CheckResult check_gradient_realign(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 14));
  StyleRealigner realigner(int64_t{4}, int64_t{2}, std::array<int64_t, kDecoderScales>{2, 2, 2, 2},
                           EncoderResidual::query, kDefaultEpsilon);
  randomize(*realigner, 0.5);
  realigner->to(torch::kFloat64);
  auto weights = torch::randn({1, 2, 2, 2}, torch::kFloat64);
  auto fn = [&](const std::vector<torch::Tensor>& in) {
    return (realigner->forward(in[0], in[1], 1) * weights).sum();
  };
  // 8 feature entries + 48 style pixels.
  auto r = oracle::check_gradients(fn, {torch::randn({1, 2, 2, 2}), torch::rand({1, 3, 4, 4})});
  return gradient_result("gradient_realign", r);
}

CheckResult check_gradient_icl(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 15));
  auto r = icl_gradient_check(torch::randn({4, 4}), torch::randn({4, 4}), 2);
  return gradient_result("gradient_icl_loss", r);
}

CheckResult check_gradient_style_loss(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 16));
  PerceptualFeatures target;
  std::vector<torch::Tensor> inputs;
  for (VggLayer l : kAllVggLayers) {
    target.layers[l] = torch::randn({1, 2, 2, 2}, torch::kFloat64) * 2.0;
    inputs.push_back(torch::randn({1, 2, 2, 2}));
  }
  auto fn = [&](const std::vector<torch::Tensor>& in) {
    PerceptualFeatures f;
    for (size_t i = 0; i < kAllVggLayers.size(); ++i) f.layers[kAllVggLayers[i]] = in[i];
    return style_loss(f, target, opts.epsilon);
  };
  // Five layers of 8 entries each.
  auto r = oracle::check_gradients(fn, inputs);
  return gradient_result("gradient_style_loss", r);
}

CheckResult check_gradient_style_encoder(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 17));
  StyleEncoder enc(4, 2);
  randomize(*enc, 0.5);
  enc->to(torch::kFloat64);
  auto weights = torch::randn({1, 3, 4}, torch::kFloat64);
  auto fn = [&](const std::vector<torch::Tensor>& in) {
    return (enc->forward({in[0]}).sequence.tokens * weights).sum();
  };
  auto r = oracle::check_gradients(fn, {torch::randn({1, 3, 4})});
  return gradient_result("gradient_style_encode", r);
}

CheckResult check_loss_zero_at_identity(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 18));
  torch::NoGradGuard no_grad;
  VggEncoder vgg(16);
  auto x = torch::rand({2, 3, 32, 32});
  auto y = torch::rand({2, 3, 32, 32});
  Stylizer identity = [](const torch::Tensor& c, const torch::Tensor&) { return c; };
  const double worst = std::max({content_loss(x, x, vgg).item<double>(),
                                 style_loss(x, x, vgg).item<double>(),
                                 identity_loss(identity, x, y, vgg).item<double>()});
  return result("losses_zero_at_identity", 0.0, worst, worst == 0.0,
                "content, style and identity losses");
}

CheckResult check_total_loss_weights(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 19));
  const LossWeights w;
  bool ok = w.style == 1.0 && w.content == 1.0 && w.identity == 5.0 && w.adversarial == 1.0 &&
            w.contrastive == 0.3;
  auto one = [] { return torch::ones({}, torch::kFloat64); };
  LossComponents unit{one(), one(), one(), one(), one(), one()};
  auto obj = total_loss(unit, w);
  double err = std::max(std::abs(obj.bundle.total - 8.3), std::abs(obj.total.item<double>() - 8.3));

  LossComponents random;
  for (auto* t : {&random.style, &random.content, &random.identity, &random.adversarial_g,
                  &random.adversarial_d, &random.contrastive}) {
    *t = torch::rand({}, torch::kFloat64);
  }
  auto r = total_loss(random, w);
  const auto& b = r.bundle;
  double manual = w.style * b.style;
  manual += w.content * b.content;
  manual += w.identity * b.identity;
  manual += w.adversarial * b.adversarial_g;
  manual += w.contrastive * b.contrastive;
  ok = ok && manual == b.total;
  LossWeights zero{0, 0, 0, 0, 0, 50, 1};
  ok = ok && total_loss(random, zero).bundle.total == 0.0;
  return result("total_loss_weights", 1e-12, err, ok && err <= 1e-12,
                "unit components -> 8.3 with weights (1, 1, 5, 1, 0.3)");
}

CheckResult check_identity_weights(const VerifyOptions& opts) {
  ScopedSeed seed(mix_seed(opts.seed, 20));
  torch::NoGradGuard no_grad;
  const LossWeights w;
  VggEncoder vgg(16);
  auto c = torch::rand({2, 3, 32, 32});
  auto s = torch::rand({2, 3, 32, 32});
  Stylizer shrink = [](const torch::Tensor& a, const torch::Tensor&) { return a * 0.8 + 0.1; };
  const double got = identity_loss(shrink, c, s, vgg).item<double>();

  auto cc = shrink(c, c);
  auto ss = shrink(s, s);
  const double pixel = torch::mse_loss(cc, c).item<double>() + torch::mse_loss(ss, s).item<double>();
  double feature = 0.0;
  for (VggLayer l : kAllVggLayers) {
    feature += torch::mse_loss(vgg->extract(cc, {l}).at(l), vgg->extract(c, {l}).at(l)).item<double>();
    feature += torch::mse_loss(vgg->extract(ss, {l}).at(l), vgg->extract(s, {l}).at(l)).item<double>();
  }
  const double want = 50.0 * pixel + 1.0 * feature;
  const double rel = std::abs(got - want) / std::max(std::abs(want), 1e-12);
  const bool ok = w.identity_pixel == 50.0 && w.identity_feature == 1.0 && rel <= 1e-6;
  return result("identity_weights", 1e-6, rel, ok, "lambda_id = (50, 1)");
}

std::vector<CheckResult> run_verification(const VerifyOptions& opts) {
  using Check = CheckResult (*)(const VerifyOptions&);
  const std::pair<const char*, Check> checks[] = {
      {"adain_moments", check_adain_moments},
      {"sigma_positive", check_sigma_positive},
      {"scin_neutrality", check_scin_neutrality},
      {"scin_adain_equivalence", check_scin_adain_equivalence},
      {"style_encode_oracle", check_style_encoder_oracle},
      {"cross_attention_oracle", check_cross_attention_oracle},
      {"attention_rows_sum_to_one", check_attention_rows},
      {"pe_shapes", check_pe_shapes},
      {"pe_branch_isolation", check_pe_branch_isolation},
      {"icl_oracle", check_icl_oracle},
      {"icl_permutation_invariance", check_icl_permutation},
      {"icl_default_tau", check_icl_default_tau},
      {"gradient_scin_apply", check_gradient_scin},
      {"gradient_realign", check_gradient_realign},
      {"gradient_icl_loss", check_gradient_icl},
      {"gradient_style_loss", check_gradient_style_loss},
      {"gradient_style_encode", check_gradient_style_encoder},
      {"losses_zero_at_identity", check_loss_zero_at_identity},
      {"total_loss_weights", check_total_loss_weights},
      {"identity_weights", check_identity_weights},
  };
  std::vector<CheckResult> out;
  for (const auto& [name, check] : checks) {
    try {
      out.push_back(check(opts));
    } catch (const std::exception& e) {
      out.push_back(result(name, 0.0, std::numeric_limits<double>::infinity(), false,
                           std::string("threw: ") + e.what()));
    }
  }
  return out;
}

std::string format_report(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %10s %12s  %s\n", "check", "tolerance", "measured", "result");
  os << line;
  int failed = 0;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-28s %10.1e %12.4e  %s", r.name.c_str(), r.tolerance,
                  r.measured, r.passed ? "PASS" : "FAIL");
    os << line;
    if (!r.detail.empty()) os << "  " << r.detail;
    os << '\n';
    failed += r.passed ? 0 : 1;
  }
  os << results.size() - static_cast<size_t>(failed) << "/" << results.size() << " checks passed\n";
  return os.str();
}

}  // namespace scinet
