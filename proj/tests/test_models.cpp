#include <gtest/gtest.h>

#include <cmath>

#include "cle/checkpoint.hpp"
#include "cle/network.hpp"
#include "test_util.hpp"

using namespace cle;
using cle::testing::random_tensor;
using cle::testing::temp_dir;

namespace {

std::size_t lstm(std::size_t k, std::size_t ci, std::size_t c) { return 4 * (k * k * ci * c + k * k * c * c + c); }
std::size_t conv(std::size_t k, std::size_t ci, std::size_t co) { return k * k * ci * co + co; }
std::size_t bn(std::size_t c) { return 2 * c; }

std::size_t stateless_closed_form(std::size_t K) {
  return lstm(3, 1, 32) + bn(32) + lstm(3, 32, 32) + bn(32) + lstm(3, 32, 128) + bn(128) + lstm(3, 128, 256) +
         bn(256) + conv(3, 256, 128) + lstm(7, 1, 8) + bn(8) + lstm(5, 8, 16) + bn(16) + conv(1, 16, 128) +
         conv(3, 128, 128) + bn(128) + conv(1, 128, K);
}

std::size_t stateful_closed_form(std::size_t K) {
  return lstm(3, 1, 32) + bn(32) + lstm(3, 32, 64) + bn(64) + lstm(3, 64, 128) + bn(128) + lstm(3, 128, 256) +
         bn(256) + conv(3, 256, 128) + bn(128) + conv(3, 128, 128) + bn(128) + conv(1, 128, K);
}

Shape spatial(const ShapeRow& r) { return r.output; }

const ShapeRow& row(const std::vector<ShapeRow>& rows, const std::string& name) {
  for (const auto& r : rows) {
    if (r.layer == name) return r;
  }
  throw std::runtime_error("no row " + name);
}

}  // namespace

TEST(Architecture, StatelessTrace) {
  const auto rows = trace_shapes(build_spec(ModelConfig::stateless(60)));
  EXPECT_EQ(row(rows, "convlstm1").output, (Shape{30, 64, 64, 32}));
  EXPECT_EQ(row(rows, "convlstm2").output, (Shape{30, 31, 31, 32}));
  EXPECT_EQ(row(rows, "convlstm3").output, (Shape{30, 31, 31, 128}));
  EXPECT_EQ(row(rows, "convlstm4").output, (Shape{1, 15, 15, 256}));
  EXPECT_EQ(row(rows, "conv_main").output, (Shape{13, 13, 128}));
  EXPECT_EQ(row(rows, "support_convlstm1").output, (Shape{30, 29, 29, 8}));
  EXPECT_EQ(row(rows, "support_convlstm2").output, (Shape{1, 13, 13, 16}));
  EXPECT_EQ(row(rows, "support_conv").output, (Shape{13, 13, 128}));
  EXPECT_EQ(row(rows, "add").output, (Shape{13, 13, 128}));
  EXPECT_EQ(row(rows, "conv_decision").output, (Shape{6, 6, 128}));
  EXPECT_EQ(row(rows, "classifier").output, (Shape{6, 6, 60}));
  EXPECT_EQ(row(rows, "gap").output, (Shape{1, 1, 60}));
}

TEST(Architecture, StatefulTrace) {
  const auto rows = trace_shapes(build_spec(ModelConfig::stateful(60)));
  std::vector<std::size_t> trace{64};
  for (const auto& r : rows) {
    if (r.kind == LayerKind::ConvLstm || r.kind == LayerKind::Conv2d) trace.push_back(spatial(r)[r.output.size() - 3]);
  }
  EXPECT_EQ(trace, (std::vector<std::size_t>{64, 64, 31, 31, 15, 7, 3, 3}));
  EXPECT_EQ(row(rows, "gap").output, (Shape{1, 1, 60}));
  EXPECT_EQ(row(rows, "dropout").output, (Shape{15, 15, 256}));
}

TEST(Architecture, ParameterCounts) {
  EXPECT_EQ(conv(3, 256, 128), 295040u);
  NetworkSpec empty;
  empty.input = {1, 4, 4, 1};
  EXPECT_EQ(count_parameters(empty), 0u);
  const std::size_t sl = count_parameters(build_spec(ModelConfig::stateless(60)));
  const std::size_t sf = count_parameters(build_spec(ModelConfig::stateful(60)));
  EXPECT_EQ(sl, stateless_closed_form(60));
  EXPECT_EQ(sf, stateful_closed_form(60));
  EXPECT_EQ(sl, 4896108u);
  EXPECT_EQ(sf, 5136636u);
  EXPECT_GT(sf, sl);
}

TEST(Architecture, BuiltNetworkMatchesCount) {
  for (auto mc : {ModelConfig::scaled_stateless(4), ModelConfig::scaled_stateful(4), ModelConfig::stateless(60)}) {
    Model net(mc, 1);
    EXPECT_EQ(net.parameter_count(), count_parameters(build_spec(mc)));
  }
}

TEST(Architecture, ScaledBudgetsAreMatched) {
  const double a = static_cast<double>(count_parameters(build_spec(ModelConfig::scaled_stateless(4))));
  const double b = static_cast<double>(count_parameters(build_spec(ModelConfig::scaled_stateful(4))));
  EXPECT_LT(std::abs(a - b) / a, 0.01);
}

TEST(Architecture, RejectsTooFewClasses) {
  EXPECT_THROW(build_spec(ModelConfig::stateless(1)), std::invalid_argument);
}

TEST(Network, ZeroWeightsGiveUniformOutput) {
  auto mc = ModelConfig::scaled_stateless(5);
  Model net(mc, 3);
  for (auto& p : net.parameters()) p.tensor->fill(0.0f);
  const Tensor y = net.forward(Tensor(mc.input_shape(2), 0.0f), Mode::Infer);
  ASSERT_EQ(y.shape(), (Shape{2, 5}));
  for (float v : y.values()) EXPECT_NEAR(v, 0.2f, 1e-6f);
}

TEST(Network, FreshNetworkIsUniform) {
  Rng rng(2);
  auto mc = ModelConfig::scaled_stateful(6);
  Model net(mc, 3);
  const Tensor y = net.forward(random_tensor<float>(mc.input_shape(3), rng), Mode::Train);
  for (float v : y.values()) EXPECT_NEAR(v, 1.0f / 6.0f, 1e-6f);
}

TEST(Network, RowsSumToOne) {
  Rng rng(4);
  for (auto mc : {ModelConfig::scaled_stateless(4), ModelConfig::scaled_stateful(4)}) {
    Model net(mc, 5);
    for (auto& p : net.parameters()) {
      for (auto& v : p.tensor->values()) v += static_cast<float>(0.05 * normal(rng));
    }
    const Tensor y = net.forward(random_tensor<float>(mc.input_shape(3), rng), Mode::Infer);
    ASSERT_EQ(y.shape(), (Shape{3, 4}));
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += y.at({r, c});
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Network, PublishedStatefulBatchShape) {
  Rng rng(5);
  auto mc = ModelConfig::stateful(60);
  Model net(mc, 5);
  EXPECT_EQ(net.forward(random_tensor<float>(mc.input_shape(6), rng), Mode::Infer).shape(), (Shape{6, 60}));
}

TEST(Network, WrongInputShape) {
  Model net(ModelConfig::scaled_stateless(4), 1);
  EXPECT_THROW(net.forward(Tensor({1, 30, 17, 16, 1}), Mode::Infer), ShapeError);
}

TEST(Network, NonFiniteActivationNamesLayer) {
  auto mc = ModelConfig::scaled_stateless(4);
  Model net(mc, 1);
  Tensor x(mc.input_shape(1), 0.1f);
  x[17] = NAN;
  try {
    net.forward(x, Mode::Infer);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("convlstm1"), std::string::npos) << e.what();
  }
}

TEST(Network, StateCarryChangesOutput) {
  Rng rng(6);
  auto mc = ModelConfig::scaled_stateful(4);
  Model net(mc, 7);
  for (auto& p : net.parameters()) {
    for (auto& v : p.tensor->values()) v += static_cast<float>(0.1 * normal(rng));
  }
  const Tensor x = random_tensor<float>(mc.input_shape(2), rng);
  net.reset_state();
  net.forward(x, Mode::Infer);
  const Tensor carried = net.forward(x, Mode::Infer);
  net.reset_state();
  net.forward(x, Mode::Infer);
  net.reset_state();
  const Tensor reset = net.forward(x, Mode::Infer);
  EXPECT_GT(max_abs_diff(carried, reset), 0.0f);
}

TEST(Network, SeededConstructionIsDeterministic) {
  Rng rng(8);
  auto mc = ModelConfig::scaled_stateless(4);
  Model a(mc, 11), b(mc, 11);
  const Tensor x = random_tensor<float>(mc.input_shape(2), rng);
  EXPECT_TRUE(a.forward_logits(x, Mode::Infer).same_values(b.forward_logits(x, Mode::Infer)));
}

TEST(Checkpoint, RoundTripIsBitwise) {
  Rng rng(9);
  const auto dir = temp_dir("ckpt");
  for (auto mc : {ModelConfig::scaled_stateless(4), ModelConfig::scaled_stateful(4)}) {
    Model net(mc, 12);
    for (auto& p : net.parameters()) {
      for (auto& v : p.tensor->values()) v += static_cast<float>(0.1 * normal(rng));
    }
    const Tensor x = random_tensor<float>(mc.input_shape(2), rng);
    net.forward(x, Mode::Train);  // move the BN running stats
    net.reset_state();
    const Tensor before = net.forward(x, Mode::Infer);
    net.reset_state();
    save_checkpoint(snapshot(net, {{"train.epoch", "7"}, {"train.val_accuracy", "0.625"}}), dir / "m.ckpt");
    Checkpoint meta;
    auto loaded = load_model(dir / "m.ckpt", &meta);
    EXPECT_TRUE(loaded->forward(x, Mode::Infer).same_values(before));
    EXPECT_EQ(meta.meta("train.epoch"), "7");
    EXPECT_EQ(meta.meta("train.val_accuracy"), "0.625");
  }
}

TEST(Checkpoint, ArchitectureMismatch) {
  const auto dir = temp_dir("ckpt_mismatch");
  Model sl(ModelConfig::scaled_stateless(4), 1);
  save_checkpoint(snapshot(sl), dir / "sl.ckpt");
  Model sf(ModelConfig::scaled_stateful(4), 1);
  EXPECT_THROW(restore(sf, load_checkpoint(dir / "sl.ckpt")), ArchitectureMismatch);
}

TEST(Checkpoint, CorruptFilesRejected) {
  Model net(ModelConfig::scaled_stateful(4), 1);
  std::string bytes = encode_checkpoint(snapshot(net));
  EXPECT_EQ(bytes.substr(0, 4), "CLCK");
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  std::string version = bytes;
  version[4] = 9;
  EXPECT_THROW(decode_checkpoint(version), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), FormatError);
}

TEST(Checkpoint, MetadataDescribesModel) {
  const auto mc = ModelConfig::scaled_stateful(9);
  EXPECT_EQ(ModelConfig::from_metadata(mc.to_metadata()), mc);
}
