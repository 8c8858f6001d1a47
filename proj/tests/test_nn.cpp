#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "hallu/nn/checkpoint.hpp"
#include "hallu/nn/gradcheck.hpp"
#include "hallu/nn/layers.hpp"
#include "hallu/nn/optim.hpp"
#include "hallu/nn/tensor.hpp"
#include "hallu/rng.hpp"
#include "support/synthetic.hpp"

namespace {

using namespace hallu;
using namespace hallu::nn;

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), std::invalid_argument);
  const Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.row(1).size(), 3u);
  EXPECT_EQ(shape_string(t.shape()), "[2,3]");
}

TEST(Tensor, ConcatRows) {
  const Tensor<float> a({1, 2}, std::vector<float>{1, 2});
  const Tensor<float> b({2, 2}, std::vector<float>{3, 4, 5, 6});
  const Tensor<float>* parts[] = {&a, &b};
  const Tensor<float> c = concat_rows<float>(parts);
  EXPECT_EQ(c.shape(), (Shape{3, 2}));
  EXPECT_EQ(c.storage(), (std::vector<float>{1, 2, 3, 4, 5, 6}));
  const Tensor<float> bad({1, 3});
  const Tensor<float>* mismatched[] = {&a, &bad};
  EXPECT_THROW(concat_rows<float>(mismatched), std::invalid_argument);
}

TEST(Conv2d, OnesKernelCountsNeighbours) {
  const Tensor<double> x({1, 1, 3, 3}, 1.0);
  const Tensor<double> w({1, 1, 3, 3}, 1.0);
  const Tensor<double> b({1}, 0.5);
  const Tensor<double> y = conv2d_forward(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_DOUBLE_EQ(y.at(0, 0, 1, 1), 9.5);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), 4.5);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 1), 6.5);
}

TEST(Conv2d, ShapeErrorsNameBothSides) {
  const Tensor<double> x({1, 2, 5, 5});
  const Tensor<double> w({4, 3, 3, 3});
  const Tensor<double> b({4});
  try {
    conv2d_forward(x, w, b);
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('2'), std::string::npos);
    EXPECT_NE(msg.find('3'), std::string::npos);
  }
  EXPECT_THROW(conv2d_forward(Tensor<double>({2, 5, 5}), w, b), std::invalid_argument);
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  Tensor<double> x = random_tensor({2, 2, 5, 4}, 1);
  Tensor<double> w = random_tensor({3, 2, 3, 3}, 2);
  Tensor<double> b = random_tensor({3}, 3);
  const Tensor<double> r = random_tensor({2, 3, 5, 4}, 4);
  auto loss = [&] {
    const Tensor<double> y = conv2d_forward(x, w, b);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  const Conv2dGrads<double> g = conv2d_backward(x, w, r);
  EXPECT_LT(max_relative_error(g.input, finite_diff_grad(loss, x)), 1e-6);
  EXPECT_LT(max_relative_error(g.weight, finite_diff_grad(loss, w)), 1e-6);
  EXPECT_LT(max_relative_error(g.bias, finite_diff_grad(loss, b)), 1e-6);
}

TEST(Relu, ForwardBackward) {
  const Tensor<double> x({4}, std::vector<double>{-1, 0, 2, -0.5});
  EXPECT_EQ(relu_forward(x).storage(), (std::vector<double>{0, 0, 2, 0}));
  const Tensor<double> g({4}, std::vector<double>{1, 1, 1, 1});
  EXPECT_EQ(relu_backward(x, g).storage(), (std::vector<double>{0, 0, 1, 0}));
}

TEST(MaxPool, DropsRemainderAndRoutesGradient) {
  Tensor<double> x({1, 1, 4, 6});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  x[23] = 1000;  // in the dropped columns
  std::vector<std::size_t> arg;
  const Tensor<double> y = maxpool_forward(x, &arg);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 21.0);
  ASSERT_EQ(arg.size(), 1u);
  EXPECT_EQ(arg[0], 21u);
  const Tensor<double> g = maxpool_backward(x.shape(), arg, Tensor<double>({1, 1, 1, 1}, 2.0));
  EXPECT_DOUBLE_EQ(g[21], 2.0);
  EXPECT_DOUBLE_EQ(std::accumulate(g.values().begin(), g.values().end(), 0.0), 2.0);
}

TEST(MaxPool, TiesPickFirstOccurrence) {
  const Tensor<double> x({1, 1, 4, 4}, 3.0);
  std::vector<std::size_t> arg;
  maxpool_forward(x, &arg);
  EXPECT_EQ(arg[0], 0u);
}

TEST(MaxPool, TooSmallThrows) { EXPECT_THROW(maxpool_forward(Tensor<double>({1, 1, 3, 8})), std::invalid_argument); }

TEST(BatchNorm, TrainModeNormalizesAndTracksStatistics) {
  BatchNorm2d<double> bn("bn", 2);
  Tensor<double> x = random_tensor({3, 2, 4, 4}, 7, 2.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += 5.0;
  const Tensor<double> y = bn.forward(x, Mode::kTrain);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double mean = 0, var = 0, in_mean = 0, in_var = 0;
    std::vector<double> vals, ins;
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t i = 0; i < 16; ++i) {
        vals.push_back(y[(b * 2 + ch) * 16 + i]);
        ins.push_back(x[(b * 2 + ch) * 16 + i]);
      }
    }
    for (std::size_t i = 0; i < vals.size(); ++i) {
      mean += vals[i];
      in_mean += ins[i];
    }
    mean /= vals.size();
    in_mean /= ins.size();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      var += (vals[i] - mean) * (vals[i] - mean);
      in_var += (ins[i] - in_mean) * (ins[i] - in_mean);
    }
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var / vals.size(), 1.0, 1e-3);
    EXPECT_NEAR(bn.running_mean[ch], 0.1 * in_mean, 1e-12);
    EXPECT_NEAR(bn.running_var[ch], 0.9 + 0.1 * in_var / (ins.size() - 1), 1e-12);
  }
}

TEST(BatchNorm, EvalModeUsesRunningStatistics) {
  BatchNorm2d<double> bn("bn", 1);
  bn.running_mean[0] = 2.0;
  bn.running_var[0] = 4.0;
  bn.gamma.value[0] = 3.0;
  bn.beta.value[0] = 1.0;
  const Tensor<double> x({1, 1, 1, 1}, 6.0);
  const double want = 3.0 * (6.0 - 2.0) / std::sqrt(4.0 + bn.eps) + 1.0;
  EXPECT_NEAR(bn.forward(x, Mode::kEval)[0], want, 1e-12);
  EXPECT_NEAR(bn.infer(x)[0], want, 1e-12);
  EXPECT_EQ(bn.running_mean[0], 2.0);
}

TEST(BatchNorm, TrainModeNeedsTwoValues) {
  BatchNorm2d<double> bn("bn", 1);
  EXPECT_THROW(bn.forward(Tensor<double>({1, 1, 1, 1}), Mode::kTrain), std::invalid_argument);
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  BatchNorm2d<double> bn("bn", 3);
  Tensor<double> x = random_tensor({2, 3, 3, 4}, 11);
  bn.gamma.value = random_tensor({3}, 12);
  bn.beta.value = random_tensor({3}, 13);
  const Tensor<double> r = random_tensor({2, 3, 3, 4}, 14);
  auto loss = [&] {
    BatchNorm2d<double> probe = bn;
    const Tensor<double> y = probe.forward(x, Mode::kTrain);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  BatchNorm2d<double> live = bn;
  live.forward(x, Mode::kTrain);
  const Tensor<double> gx = live.backward(r);
  EXPECT_LT(max_relative_error(gx, finite_diff_grad(loss, x, 1e-5)), 1e-5);
  EXPECT_LT(max_relative_error(live.gamma.grad, finite_diff_grad(loss, bn.gamma.value, 1e-5)), 1e-5);
  EXPECT_LT(max_relative_error(live.beta.grad, finite_diff_grad(loss, bn.beta.value, 1e-5)), 1e-5);
}

TEST(Gradcheck, FiniteDiffRestoresParameterBitExactly) {
  Tensor<double> p = random_tensor({7}, 21);
  const Tensor<double> before = p;
  const Tensor<double> g = finite_diff_grad([&] { return std::sin(p[0]) + p[3] * p[3]; }, p);
  EXPECT_EQ(p, before);
  EXPECT_NEAR(g[0], std::cos(before[0]), 1e-8);
  EXPECT_NEAR(g[3], 2 * before[3], 1e-8);
  EXPECT_NEAR(g[1], 0.0, 1e-12);
}

TEST(Gradcheck, RelativeErrorFloor) {
  const Tensor<double> a({2}, std::vector<double>{1e-9, 1.0});
  const Tensor<double> n({2}, std::vector<double>{0.0, 1.0});
  EXPECT_LT(max_relative_error(a, n), 1e-3);
  const Tensor<double> off({2}, std::vector<double>{0.0, 1.1});
  EXPECT_NEAR(max_relative_error(a, off), 0.1 / 1.1, 1e-9);
}

TEST(Sgd, PlainStepWithDecay) {
  Parameter<double> p("p", Tensor<double>({2}, std::vector<double>{1.0, -2.0}));
  p.grad[0] = 0.5;
  p.grad[1] = 0.0;
  Parameter<double>* ps[] = {&p};
  sgd_step<double>(ps, 0.1, 0.01);
  EXPECT_DOUBLE_EQ(p.value[0], 1.0 - 0.1 * (0.5 + 0.01));
  EXPECT_DOUBLE_EQ(p.value[1], -2.0 - 0.1 * (-0.02));
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(Sgd, ZeroMomentumEqualsPlainStep) {
  Parameter<float> a("a", Tensor<float>({3}, std::vector<float>{1, 2, 3}));
  Parameter<float> b = a;
  Sgd<float> opt(SgdConfig{0.05, 1e-4, 0.0});
  for (int it = 0; it < 3; ++it) {
    for (std::size_t i = 0; i < 3; ++i) a.grad[i] = b.grad[i] = static_cast<float>(0.3 * i - it);
    Parameter<float>* pa[] = {&a};
    Parameter<float>* pb[] = {&b};
    opt.step(pa, 0.05);
    sgd_step<float>(pb, 0.05, 1e-4);
  }
  EXPECT_EQ(a.value, b.value);
}

TEST(Sgd, MomentumAccumulatesVelocity) {
  Parameter<double> p("p", Tensor<double>({1}, 0.0));
  Sgd<double> opt(SgdConfig{0.1, 0.0, 0.9});
  Parameter<double>* ps[] = {&p};
  p.grad[0] = 1.0;
  opt.step(ps, 0.1);
  EXPECT_DOUBLE_EQ(p.value[0], -0.1);
  p.grad[0] = 1.0;
  opt.step(ps, 0.1);
  EXPECT_DOUBLE_EQ(p.value[0], -0.1 - 0.1 * 1.9);
  EXPECT_THROW(Sgd<double>(SgdConfig{0.1, 0.0, 1.0}), std::invalid_argument);
}

TEST(Sgd, LrScheduleStepsByTenfold) {
  EXPECT_DOUBLE_EQ(lr_schedule(0, 0.01, 20), 0.01);
  EXPECT_DOUBLE_EQ(lr_schedule(19, 0.01, 20), 0.01);
  EXPECT_NEAR(lr_schedule(20, 0.01, 20), 0.001, 1e-15);
  EXPECT_NEAR(lr_schedule(45, 0.01, 20), 0.0001, 1e-16);
  EXPECT_DOUBLE_EQ(lr_schedule(45, 0.01, 0), 0.01);
}

TEST(Checkpoint, RoundTrip) {
  const auto dir = synth::fresh_dir("ckpt");
  Checkpoint c;
  c.spec_hash = 0xdeadbeefcafef00dULL;
  c.mask_mode = "frequency";
  c.epoch = 12;
  c.seed = 99;
  c.tensors.push_back({"a.weight", CheckpointTensor::Kind::kParameter, {2, 3}, {1, 2, 3, 4, 5, 6}});
  c.tensors.push_back({"a.running_mean", CheckpointTensor::Kind::kBuffer, {2}, {-0.5f, 1e-30f}});
  write_checkpoint(c, dir / "c.bin");
  const Checkpoint r = read_checkpoint(dir / "c.bin");
  EXPECT_EQ(r.spec_hash, c.spec_hash);
  EXPECT_EQ(r.mask_mode, "frequency");
  EXPECT_EQ(r.epoch, 12u);
  EXPECT_EQ(r.seed, 99u);
  ASSERT_EQ(r.tensors.size(), 2u);
  ASSERT_NE(r.find("a.running_mean"), nullptr);
  EXPECT_EQ(r.find("a.running_mean")->kind, CheckpointTensor::Kind::kBuffer);
  EXPECT_EQ(r.find("a.running_mean")->values, c.tensors[1].values);
  EXPECT_EQ(r.find("a.weight")->shape, (Shape{2, 3}));
  EXPECT_EQ(r.find("missing"), nullptr);
  write_checkpoint(r, dir / "d.bin");
  EXPECT_TRUE(synth::same_bytes(dir / "c.bin", dir / "d.bin"));
}

TEST(Checkpoint, CorruptFilesRejected) {
  const auto dir = synth::fresh_dir("ckpt-bad");
  EXPECT_THROW(read_checkpoint(dir / "absent.bin"), std::runtime_error);
  std::ofstream(dir / "junk.bin", std::ios::binary) << "not a checkpoint at all";
  EXPECT_THROW(read_checkpoint(dir / "junk.bin"), std::runtime_error);
  Checkpoint c;
  c.tensors.push_back({"w", CheckpointTensor::Kind::kParameter, {4}, {1, 2, 3, 4}});
  write_checkpoint(c, dir / "ok.bin");
  std::filesystem::resize_file(dir / "ok.bin", std::filesystem::file_size(dir / "ok.bin") - 3);
  EXPECT_THROW(read_checkpoint(dir / "ok.bin"), std::runtime_error);
}

}  // namespace
