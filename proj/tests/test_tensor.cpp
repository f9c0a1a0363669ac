#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "pathmamba/checkpoint.hpp"
#include "pathmamba/gradcheck.hpp"
#include "pathmamba/gradcheck_suite.hpp"
#include "pathmamba/ops.hpp"
#include "pathmamba/rng.hpp"
#include "pathmamba/tensor.hpp"

using namespace pathmamba;
using Td = Tensor<double>;

namespace {

Td random_tensor(Shape s, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  SplitMix64 rng(seed);
  Td t(std::move(s));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(Tensor, ShapeAndStorage) {
  Td t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(shape_str(t.shape()), "[2,3]");
  EXPECT_THROW(Td({2, 0}), DimensionError);
  EXPECT_THROW(Td({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Td alias = t;
  alias[0] = 7;
  EXPECT_EQ(t[0], 7);
  Td copy = t.clone();
  copy[0] = 1;
  EXPECT_EQ(t[0], 7);
}

TEST(Tensor, Matmul) {
  Td id({2, 2}, {1, 0, 0, 1});
  Td m({2, 2}, {0.3, -1.2, 4.5, 2.0});
  EXPECT_EQ(matmul(id, m).vec(), m.vec());
  Td a({2, 2}, {1, 2, 3, 4});
  Td ones({2, 1}, {1, 1});
  EXPECT_EQ(matmul(a, ones).vec(), (std::vector<double>{3, 7}));
  EXPECT_THROW(matmul(Td({2, 3}), Td({4, 2})), DimensionError);
}

TEST(Tensor, Elementwise) {
  EXPECT_NEAR(softplus(Td::scalar(0)).item(), std::log(2.0), 1e-15);
  EXPECT_EQ(sigmoid(Td::scalar(0)).item(), 0.5);
  EXPECT_EQ(add(Td({2}, {1, 2}), Td({2}, {3, 4})).vec(), (std::vector<double>{4, 6}));
  EXPECT_EQ(mul(Td({2}, {1, 2}), Td::scalar(3)).vec(), (std::vector<double>{3, 6}));
  EXPECT_THROW(add(Td({2}), Td({3})), DimensionError);
  EXPECT_THROW(add(Td({2, 3}), Td({3, 2})), DimensionError);
}

TEST(Tensor, LayerNorm) {
  Td g({2}, 1.0), b({2}, 0.0);
  for (double v : layer_norm(Td({3, 2}, 5.0), g, b).vec()) EXPECT_EQ(v, 0.0);
  const Td y = layer_norm(Td({1, 2}, {1, 3}), g, b, 0.0);
  EXPECT_NEAR(y[0], -1.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0, 1e-15);
  Td beta({2}, {0.25, -3.0});
  const Td z = layer_norm(random_tensor({4, 2}, 1), Td({2}, 0.0), beta);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(z[2 * i], 0.25);
    EXPECT_EQ(z[2 * i + 1], -3.0);
  }
  EXPECT_THROW(layer_norm(Td({2, 3}), g, b), DimensionError);
}

TEST(Tensor, Softmax) {
  for (double v : softmax(Td({3}, 0.0)).vec()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const Td big = softmax(Td({2}, {1000, 0}));
  EXPECT_NEAR(big[0], 1.0, 1e-15);
  EXPECT_GE(big[1], 0.0);
  EXPECT_LT(big[1], 1e-300);
  const Td logs = softmax(Td({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
  EXPECT_NEAR(logs[0], 1.0 / 6, 1e-15);
  EXPECT_NEAR(logs[1], 2.0 / 6, 1e-15);
  EXPECT_NEAR(logs[2], 3.0 / 6, 1e-15);
  const Td r = softmax(random_tensor({50, 7}, 2, -300, 300));
  for (std::size_t i = 0; i < 50; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) s += r[i * 7 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Tape, BackwardPopulatesLeafGradients) {
  Td x = random_tensor({3}, 3);
  x.set_requires_grad();
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(sum(mul(x, x)));
  }
  ASSERT_TRUE(x.has_grad());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x[i]);
}

TEST(Tape, Errors) {
  Td x = random_tensor({3}, 4);
  x.set_requires_grad();
  EXPECT_THROW(backward(sum(x)), StateError);  // no tape
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const Td y = mul(x, x);
  EXPECT_THROW(tape.backward(y), DimensionError);
  const Td s = sum(y);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), StateError);
  tape.reset();
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, NoGradScopeSuspendsRecording) {
  Td x = random_tensor({3}, 5);
  x.set_requires_grad();
  Tape<double> tape;
  TapeScope<double> scope(tape);
  {
    NoGradScope<double> off;
    (void)sum(mul(x, x));
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, DeterministicForwardBackward) {
  auto run = [] {
    Td w = random_tensor({4, 3}, 6), x = random_tensor({5, 4}, 7);
    w.set_requires_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const Td y = sum(gelu(layer_norm(matmul(x, w), Td({3}, 1.0), Td({3}, 0.0))));
    tape.backward(y);
    return std::make_pair(y.item(), std::vector<double>(w.grad().begin(), w.grad().end()));
  };
  EXPECT_EQ(run(), run());
}

TEST(GradCheck, QuadraticIsExact) {
  const double err = grad_check([](const Td& x) { return sum(mul(x, x)); }, random_tensor({6}, 8), 1e-6);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, DetectsWrongGradient) {
  // a function whose recorded rule is deliberately wrong
  auto bad = [](const Td& x) {
    Td y = Td::scalar(x[0] * x[0]);
    if (needs_record<double>(x))
      record_op(y, [x](std::span<const double> g) {
        if (double* gx = grad_sink(x)) gx[0] += g[0] * 3 * x[0];
      });
    return y;
  };
  EXPECT_GT(grad_check(bad, Td({1}, {1.5})), 0.1);
}

TEST(GradCheck, EveryOperation) {
  for (const auto& r : run_gradcheck("ops")) {
    SCOPED_TRACE(r.name);
    EXPECT_LT(r.error, 1e-6);
  }
}

TEST(Ops, ShapeOps) {
  Td x({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(transpose(x).vec(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(slice_last(x, 1, 2).vec(), (std::vector<double>{2, 3, 5, 6}));
  EXPECT_EQ(concat_last<double>({x, x}).shape(), (Shape{2, 6}));
  EXPECT_EQ(gather_rows(x, {1, 0}, {2, 3}).vec(), (std::vector<double>{4, 5, 6, 1, 2, 3}));
  EXPECT_EQ(mean(x).item(), 3.5);
  // patchify of a 2x2 single-channel map with p=2 -> one token (dy, dx) order
  EXPECT_EQ(patchify(Td({2, 2, 1}, {1, 2, 3, 4}), 2).vec(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Ops, Resampling) {
  Td x({2, 2, 1}, {1, 2, 3, 4});
  EXPECT_EQ(adaptive_avg_pool(x, 1, 1).item(), 2.5);
  EXPECT_EQ(upsample_nearest(x, 4, 4).vec(),
            (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
  // half-pixel centres: output pixel 0 of a 2->4 upsample sits at source -0.25 (clamped to 0)
  const Td up = upsample_bilinear(Td({1, 2, 1}, {0, 4}), 1, 4);
  EXPECT_EQ(up.vec(), (std::vector<double>{0, 1, 3, 4}));
  EXPECT_EQ(upsample_bilinear(x, 2, 2).vec(), x.vec());
}

TEST(Checkpoint, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "pm_ckpt_roundtrip.pmck";
  Tensor<float> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Td b = random_tensor({4}, 9);
  write_checkpoint(path.string(), {CheckpointEntry::from_tensor("a", a), CheckpointEntry::from_tensor("b", b),
                                   CheckpointEntry::from_bytes("cfg", "{\"x\":1}")});
  const auto entries = read_checkpoint(path.string());
  ASSERT_EQ(entries.size(), 3u);
  EXPECT_EQ(entries[0].name, "a");
  EXPECT_EQ(entries[0].width, 4);
  EXPECT_EQ(entries[0].to_tensor<float>().vec(), a.vec());
  EXPECT_EQ(entries[1].to_tensor<double>().vec(), b.vec());
  EXPECT_EQ(entries[2].to_string(), "{\"x\":1}");
  EXPECT_THROW(entries[0].to_tensor<double>(), DimensionError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, ByteLayout) {
  const auto path = std::filesystem::temp_directory_path() / "pm_ckpt_layout.pmck";
  write_checkpoint(path.string(), {CheckpointEntry::from_tensor("w", Tensor<float>({1}, {1.0f}))});
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  // magic, version 1, count 1, name len 1, "w", rank 1, dim 1 (u64), width 4, 1.0f
  const std::vector<unsigned char> expect{'P', 'M', 'C', 'K', 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 'w', 1, 0, 0, 0,
                                          1,   0,   0,   0,   0, 0, 0, 0, 4, 0, 0, 0x80, 0x3f};
  EXPECT_EQ(bytes, expect);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "pm_ckpt_bad.pmck";
  std::ofstream(path) << "not a checkpoint";
  EXPECT_ANY_THROW(read_checkpoint(path.string()));
  EXPECT_THROW(read_checkpoint("/nonexistent/dir/x.pmck"), IoError);
  std::filesystem::remove(path);
}

TEST(Rng, KnownSplitMix64Sequence) {
  // reference outputs of SplitMix64 seeded with 0
  SplitMix64 g(0);
  EXPECT_EQ(g.next(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(g.next(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(g.next(), 0x06C45D188009454FULL);
}

TEST(Rng, KeyedStreamsDiffer) {
  EXPECT_NE(SplitMix64::keyed(1, 2).next(), SplitMix64::keyed(1, 3).next());
  EXPECT_EQ(SplitMix64::keyed(1, 2, 3).next(), SplitMix64::keyed(1, 2, 3).next());
  SplitMix64 g(42);
  for (int i = 0; i < 1000; ++i) {
    const auto k = g.integer(-3, 5);
    EXPECT_GE(k, -3);
    EXPECT_LE(k, 5);
    const double u = g.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}
