// Parallel kernels against the serial reference versions, plus whole-model passes.

#include <benchmark/benchmark.h>

#include <random>

#include "rainshield/attacks.hpp"
#include "rainshield/kernels.hpp"
#include "rainshield/models.hpp"

using namespace rainshield;

namespace {

Tensor<float> random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor<float> t(n, c, h, w);
  for (auto& v : t.data) v = u(rng);
  return t;
}

struct ConvCase {
  ConvGeometry g;
  Tensor<float> in, dout;
  std::vector<float> weight, bias, dweight, dbias;

  explicit ConvCase(const benchmark::State& s) {
    const int ch = static_cast<int>(s.range(0));
    g = ConvGeometry{ch, ch, 3, 1, 1};
    in = random_tensor(8, ch, 64, 64, 1);
    dout = random_tensor(8, ch, 64, 64, 2);
    weight.assign(g.weight_count(), 0.01f);
    bias.assign(static_cast<std::size_t>(ch), 0.0f);
    dweight.assign(weight.size(), 0.0f);
    dbias.assign(bias.size(), 0.0f);
  }
};

template <bool Parallel>
void conv_forward(benchmark::State& s) {
  ConvCase c(s);
  Tensor<float> out;
  for (auto _ : s) {
    if constexpr (Parallel)
      kernels::conv2d_forward<float>(c.in, c.weight, c.bias, c.g, out);
    else
      reference::conv2d_forward<float>(c.in, c.weight, c.bias, c.g, out);
    benchmark::DoNotOptimize(out.data.data());
  }
}

template <bool Parallel>
void conv_backward(benchmark::State& s) {
  ConvCase c(s);
  Tensor<float> din;
  for (auto _ : s) {
    if constexpr (Parallel)
      kernels::conv2d_backward<float>(c.in, c.weight, c.g, c.dout, &din, c.dweight, c.dbias);
    else
      reference::conv2d_backward<float>(c.in, c.weight, c.g, c.dout, &din, c.dweight, c.dbias);
    benchmark::DoNotOptimize(din.data.data());
  }
}

template <bool Parallel>
void gaussian(benchmark::State& s) {
  const auto in = random_tensor(8, 3, 64, 64, 3);
  const auto taps = gaussian_taps(11, 1.5);
  Tensor<float> out;
  for (auto _ : s) {
    if constexpr (Parallel)
      kernels::gaussian_filter_valid<float>(in, taps, out);
    else
      reference::gaussian_filter_valid<float>(in, taps, out);
    benchmark::DoNotOptimize(out.data.data());
  }
}

void seg_forward(benchmark::State& s) {
  const SegNet<float> net(SegDescriptor{}, 1);
  const auto x = random_tensor(static_cast<int>(s.range(0)), 3, 64, 64, 4);
  for (auto _ : s) benchmark::DoNotOptimize(net.forward(x).data.data());
  s.SetItemsProcessed(s.iterations() * s.range(0));
}

void derain_forward(benchmark::State& s) {
  const DerainNet<float> net(DerainDescriptor{}, 1);
  const auto x = random_tensor(static_cast<int>(s.range(0)), 3, 64, 64, 5);
  for (auto _ : s) benchmark::DoNotOptimize(net.forward(x).data.data());
  s.SetItemsProcessed(s.iterations() * s.range(0));
}

void bim10_attack(benchmark::State& s) {
  const SegNet<float> net(SegDescriptor{}, 1);
  const SegTarget target(net);
  const auto x = random_tensor(8, 3, 64, 64, 6);
  std::vector<LabelMap> y(8, LabelMap(64, 64));
  const auto spec = AttackSpec::bim(8.0f / 255, 10);
  for (auto _ : s) benchmark::DoNotOptimize(naa_generate(target, x, y, spec).data.data());
  s.SetItemsProcessed(s.iterations() * 8);
}

}  // namespace

BENCHMARK(conv_forward<true>)->Name("conv_forward/parallel")->Arg(12)->Arg(24)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_forward<false>)->Name("conv_forward/reference")->Arg(12)->Arg(24)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<true>)->Name("conv_backward/parallel")->Arg(12)->Arg(24)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<false>)->Name("conv_backward/reference")->Arg(12)->Arg(24)->Unit(benchmark::kMillisecond);
BENCHMARK(gaussian<true>)->Name("gaussian_filter/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(gaussian<false>)->Name("gaussian_filter/reference")->Unit(benchmark::kMillisecond);
BENCHMARK(seg_forward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(derain_forward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(bim10_attack)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
