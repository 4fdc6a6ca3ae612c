// Convolution throughput: naive reference loops, the production kernels forced
// sequential, and the production kernels with OpenMP.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "crowd/kernels.hpp"
#include "crowd/parallel.hpp"

using namespace crowd;

namespace {

enum class Impl { reference, serial, parallel };

struct Problem {
    ConvGeometry g;
    std::vector<float> in, weight, bias, out, grad_in, grad_weight, grad_bias;

    Problem(std::size_t batch, std::size_t channels, std::size_t side, std::size_t kernel)
        : g{{batch, channels, side, side}, channels, kernel} {
        std::mt19937 rng(3);
        std::normal_distribution<float> d(0.0f, 1.0f);
        auto fill = [&](std::vector<float>& v, std::size_t n) {
            v.resize(n);
            for (auto& x : v) x = d(rng);
        };
        fill(in, g.input.size());
        fill(weight, g.weight().size());
        fill(bias, channels);
        fill(out, g.output().size());
        grad_in.resize(in.size());
        grad_weight.resize(weight.size());
        grad_bias.resize(bias.size());
    }
};

void run(benchmark::State& state, Impl impl, bool backward) {
    Problem p(static_cast<std::size_t>(state.range(0)), 16, static_cast<std::size_t>(state.range(1)), 3);
    parallel::set_deterministic(impl != Impl::parallel);
    for (auto _ : state) {
        if (!backward) {
            if (impl == Impl::reference) {
                reference::conv2d_forward<float>(p.g, p.in, p.weight, p.bias, p.out);
            } else {
                kernels::conv2d_forward<float>(p.g, p.in, p.weight, p.bias, p.out);
            }
        } else if (impl == Impl::reference) {
            reference::conv2d_backward_input<float>(p.g, p.out, p.weight, p.grad_in);
            reference::conv2d_backward_params<float>(p.g, p.in, p.out, p.grad_weight, p.grad_bias);
        } else {
            kernels::conv2d_backward_input<float>(p.g, p.out, p.weight, p.grad_in);
            kernels::conv2d_backward_params<float>(p.g, p.in, p.out, p.grad_weight, p.grad_bias);
        }
        benchmark::ClobberMemory();
    }
    parallel::set_deterministic(false);
    // Multiply-adds per pass.
    const double macs = static_cast<double>(p.g.output().size() * p.g.input.c * 9) * (backward ? 2 : 1);
    state.counters["GMAC/s"] = benchmark::Counter(macs * static_cast<double>(state.iterations()) / 1e9,
                                                 benchmark::Counter::kIsRate);
    state.counters["threads"] = impl == Impl::parallel ? parallel::max_threads() : 1;
}

void args(benchmark::internal::Benchmark* b) {
    b->Args({4, 32})->Args({4, 64})->Args({1, 128})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK_CAPTURE(run, forward_reference, Impl::reference, false)->Apply(args);
BENCHMARK_CAPTURE(run, forward_serial, Impl::serial, false)->Apply(args);
BENCHMARK_CAPTURE(run, forward_openmp, Impl::parallel, false)->Apply(args);
BENCHMARK_CAPTURE(run, backward_reference, Impl::reference, true)->Apply(args);
BENCHMARK_CAPTURE(run, backward_serial, Impl::serial, true)->Apply(args);
BENCHMARK_CAPTURE(run, backward_openmp, Impl::parallel, true)->Apply(args);

BENCHMARK_MAIN();
