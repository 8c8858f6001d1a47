#include "hallu/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

#include "hallu/backbone.hpp"
#include "hallu/fewshot.hpp"
#include "hallu/nn/gradcheck.hpp"
#include "hallu/rng.hpp"

namespace hallu {

using nn::Mode;
using nn::Shape;
using nn::Tensor;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.storage()) v = scale * rng.normal();
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  return std::inner_product(a.values().begin(), a.values().end(), b.values().begin(), 0.0);
}

class Checker {
 public:
  Checker(const GradcheckOptions& opt, GradcheckReport& report) : opt_(opt), report_(report) {}

  // Each coordinate is differenced at two step sizes and the closer one
  // counts: the large step loses to ReLU/pool kinks, the small one to
  // round-off where the true gradient is exactly zero.
  void check(GradcheckComponent& c, const Tensor<double>& analytic, const std::function<double()>& loss,
             Tensor<double>& param) const {
    const Tensor<double> coarse = nn::finite_diff_grad(loss, param, opt_.epsilon);
    const Tensor<double> fine = nn::finite_diff_grad(loss, param, opt_.epsilon * 0.1);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const Tensor<double> a({1}, {analytic[i]});
      const double e = std::min(nn::max_relative_error(a, Tensor<double>({1}, {coarse[i]})),
                                nn::max_relative_error(a, Tensor<double>({1}, {fine[i]})));
      c.max_rel_error = std::max(c.max_rel_error, e);
    }
    c.coordinates += analytic.size();
  }

  void finish(GradcheckComponent c) {
    c.passed = c.max_rel_error < opt_.tolerance;
    report_.components.push_back(std::move(c));
  }

 private:
  const GradcheckOptions& opt_;
  GradcheckReport& report_;
};

void check_conv(Checker& ck, Rng& rng, const ConvBackwardFn& backward) {
  Tensor<double> x = random_tensor({2, 3, 5, 5}, rng);
  Tensor<double> w = random_tensor({4, 3, 3, 3}, rng, 0.5);
  Tensor<double> b = random_tensor({4}, rng, 0.5);
  const Tensor<double> probe = random_tensor({2, 4, 5, 5}, rng);
  auto loss = [&] { return dot(nn::conv2d_forward(x, w, b), probe); };
  const nn::Conv2dGrads<double> g = backward(x, w, probe);
  GradcheckComponent c{"conv2d"};
  ck.check(c, g.input, loss, x);
  ck.check(c, g.weight, loss, w);
  ck.check(c, g.bias, loss, b);
  ck.finish(c);
}

void check_batchnorm(Checker& ck, Rng& rng) {
  nn::BatchNorm2d<double> bn("bn", 4);
  for (double& v : bn.gamma.value.storage()) v = 1.0 + 0.3 * rng.normal();
  for (double& v : bn.beta.value.storage()) v = 0.3 * rng.normal();
  Tensor<double> x = random_tensor({2, 4, 6, 6}, rng, 2.0);
  const Tensor<double> probe = random_tensor({2, 4, 6, 6}, rng);
  auto loss = [&] { return dot(bn.forward(x, Mode::kTrain), probe); };
  loss();
  const Tensor<double> gx = bn.backward(probe);
  const Tensor<double> gg = bn.gamma.grad, gb = bn.beta.grad;
  GradcheckComponent c{"batchnorm2d"};
  ck.check(c, gx, loss, x);
  ck.check(c, gg, loss, bn.gamma.value);
  ck.check(c, gb, loss, bn.beta.value);
  ck.finish(c);
}

void check_relu(Checker& ck, Rng& rng) {
  Tensor<double> x = random_tensor({2, 3, 4, 4}, rng);
  for (double& v : x.storage()) v += v >= 0 ? 0.1 : -0.1;  // stay clear of the kink
  const Tensor<double> probe = random_tensor(x.shape(), rng);
  auto loss = [&] { return dot(nn::relu_forward(x), probe); };
  GradcheckComponent c{"relu"};
  ck.check(c, nn::relu_backward(x, probe), loss, x);
  ck.finish(c);
}

void check_maxpool(Checker& ck, Rng& rng) {
  // Distinct values spaced far beyond epsilon so no window changes its winner.
  Tensor<double> x({2, 2, 8, 9});
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.01 * static_cast<double>(order[i]);
  std::vector<std::size_t> argmax;
  const Tensor<double> y = nn::maxpool_forward(x, &argmax);
  const Tensor<double> probe = random_tensor(y.shape(), rng);
  auto loss = [&] { return dot(nn::maxpool_forward(x), probe); };
  GradcheckComponent c{"maxpool4"};
  ck.check(c, nn::maxpool_backward(x.shape(), argmax, probe), loss, x);
  ck.finish(c);
}

void check_backbone(Checker& ck, Rng& rng, std::uint64_t seed) {
  BackboneSpec spec;
  spec.channels = {3, 3, 3};
  spec.height = 64;
  spec.width = 64;
  Backbone<double> net = init_backbone<double>(spec, derive_seed(seed, 11));
  Tensor<double> x = random_tensor({3, 1, 64, 64}, rng);
  const Tensor<double> probe = random_tensor({3, spec.embedding_dim()}, rng);
  auto loss = [&] { return dot(net.forward(x, Mode::kTrain), probe); };
  net.zero_grad();
  loss();
  net.backward(probe);
  GradcheckComponent c{"backbone"};
  for (nn::Parameter<double>* p : net.parameters()) {
    const Tensor<double> analytic = p->grad;
    ck.check(c, analytic, loss, p->value);
  }
  ck.finish(c);
}

void check_episode_loss(Checker& ck, Rng& rng, std::uint64_t seed, Distance kind, const char* name) {
  BackboneSpec spec;
  spec.channels = {2, 3, 2};
  spec.height = 64;
  spec.width = 64;
  const MaskSet masks = make_frequency_masks(64, 32);
  ExtractorBank<double> bank = make_extractor_bank<double>(spec, masks.size(), derive_seed(seed, 12));
  EpisodeBatch<double> ep;
  ep.n_way = 2;
  ep.support = random_tensor({2, 1, 64, 64}, rng);
  ep.support_labels = {0, 1};
  ep.query = random_tensor({2, 1, 64, 64}, rng);
  ep.query_labels = {1, 0};
  auto loss = [&] { return episode_loss(bank, masks, ep, kind, Mode::kTrain, false).loss; };
  bank.zero_grad();
  episode_loss(bank, masks, ep, kind, Mode::kTrain, true);
  GradcheckComponent c{name};
  for (nn::Parameter<double>* p : bank.parameters()) {
    const Tensor<double> analytic = p->grad;
    ck.check(c, analytic, loss, p->value);
  }
  ck.finish(c);
}

}  // namespace

bool GradcheckReport::passed() const {
  return !components.empty() &&
         std::all_of(components.begin(), components.end(), [](const GradcheckComponent& c) { return c.passed; });
}

std::string GradcheckReport::failures() const {
  std::string out;
  for (const GradcheckComponent& c : components) {
    if (c.passed) continue;
    if (!out.empty()) out += ", ";
    out += c.name;
  }
  return out;
}

std::string GradcheckReport::format() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "gradcheck seed=%llu tolerance=%.1e\n", static_cast<unsigned long long>(seed),
                tolerance);
  out << line;
  for (const GradcheckComponent& c : components) {
    std::snprintf(line, sizeof(line), "  %-22s max_rel_err=%.3e coords=%-6zu %s\n", c.name.c_str(), c.max_rel_error,
                  c.coordinates, c.passed ? "ok" : "FAIL");
    out << line;
  }
  std::snprintf(line, sizeof(line), "%s in %.1f s\n", passed() ? "PASS" : "FAIL", seconds);
  out << line;
  return out.str();
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  report.seed = options.seed;
  report.tolerance = options.tolerance;
  Checker ck(options, report);
  Rng rng(options.seed);
  const ConvBackwardFn conv_backward =
      options.conv_backward ? options.conv_backward : ConvBackwardFn(nn::conv2d_backward<double>);
  check_conv(ck, rng, conv_backward);
  check_batchnorm(ck, rng);
  check_relu(ck, rng);
  check_maxpool(ck, rng);
  check_backbone(ck, rng, options.seed);
  check_episode_loss(ck, rng, options.seed, Distance::kEuclidean, "episode_loss");
  check_episode_loss(ck, rng, options.seed, Distance::kSquaredEuclidean, "episode_loss_squared");
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace hallu
